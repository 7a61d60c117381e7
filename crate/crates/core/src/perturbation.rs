//! Perturbed reduced systems `dy/dt = y·A(t) + f(t, y)`, persistence
//! searches, the full-system counterexample and the moving-frame standard
//! system of a perturbing field.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, JacobianWork, OdeSystem, SharedField, SolverConfig, VectorField};
use crate::error::{Error, Result};
use crate::frame::{cgs2_in_place, FrameRun};
use crate::linalg::{gemm, gemm_tn, Matrix};
use crate::scalar::{fmt_real, norm2, Real};
use crate::standard::{solve_rows, Record, ReducedSolution, ReducedSystemTape, TapeSource};

/// Reduced perturbation built from a second vector field along a frame run.
pub struct FieldDifference<T: Real> {
    base: SharedField<T>,
    perturbed: SharedField<T>,
    times: Vec<T>,
    xs: Vec<T>,
    qs: Vec<T>,
    n: usize,
    selected: Vec<usize>,
}

impl<T: Real> std::fmt::Debug for FieldDifference<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldDifference")
            .field("base", &self.base.name())
            .field("perturbed", &self.perturbed.name())
            .field("samples", &self.times.len())
            .field("selected", &self.selected)
            .finish()
    }
}

impl<T: Real> FieldDifference<T> {
    /// `f_i(t, y) = f̄_{s_i}(t, z)` where `z` carries `y` in the selected slots
    /// and zeros elsewhere, and `f̄(t, z) = Qᵀ(X(x + Qz) − S(x)) − QᵀDS(x)Q z`.
    /// The run must be a full frame with stored frames.
    pub fn from_run(base: SharedField<T>, perturbed: SharedField<T>, run: &FrameRun<T>, selected: &[usize]) -> Result<Self> {
        let n = base.dim();
        if perturbed.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: perturbed.dim() });
        }
        if run.ell() != n || run.dim() != n {
            return Err(Error::InvalidConfig("field difference needs a full frame run".into()));
        }
        if !run.has_frames() {
            return Err(Error::InvalidConfig("frame run must keep frames".into()));
        }
        check_selection(selected, n)?;
        let mut times = Vec::with_capacity(run.tape.len());
        let mut xs = Vec::with_capacity(run.tape.len() * n);
        let mut qs = Vec::with_capacity(run.tape.len() * n * n);
        for i in 0..run.tape.len() {
            let s = run.state(i).expect("frames kept");
            times.push(s.t);
            xs.extend_from_slice(&s.x);
            qs.extend_from_slice(s.q.as_slice());
        }
        Ok(Self { base, perturbed, times, xs, qs, n, selected: selected.to_vec() })
    }

    fn frame_at(&self, t: T, x: &mut [T], q: &mut [T]) {
        let n = self.n;
        let len = self.times.len();
        let i = self.times.partition_point(|s| *s <= t).saturating_sub(1).min(len.saturating_sub(2));
        let (t0, t1) = (self.times[i], self.times[(i + 1).min(len - 1)]);
        let s = if t1 > t0 { ((t - t0) / (t1 - t0)).max(T::zero()).min(T::one()) } else { T::zero() };
        let j = (i + 1).min(len - 1);
        for k in 0..n {
            x[k] = self.xs[i * n + k] + s * (self.xs[j * n + k] - self.xs[i * n + k]);
        }
        for k in 0..n * n {
            q[k] = self.qs[i * n * n + k] + s * (self.qs[j * n * n + k] - self.qs[i * n * n + k]);
        }
    }

    /// Full `f̄(t, z)` in `Rⁿ`.
    pub fn fbar(&self, t: T, z: &[T], out: &mut [T]) {
        let n = self.n;
        let mut x = vec![T::zero(); n];
        let mut q = vec![T::zero(); n * n];
        self.frame_at(t, &mut x, &mut q);
        let mut p = vec![T::zero(); n];
        gemm(n, n, 1, &q, z, &mut p);
        for k in 0..n {
            p[k] += x[k];
        }
        let mut xp = vec![T::zero(); n];
        let mut sx = vec![T::zero(); n];
        self.perturbed.eval_into(&p, &mut xp);
        self.base.eval_into(&x, &mut sx);
        let mut jac = vec![T::zero(); n * n];
        JacobianWork::new(n).eval(self.base.as_ref(), &x, &mut jac);
        let mut qz = vec![T::zero(); n];
        gemm(n, n, 1, &q, z, &mut qz);
        let mut jqz = vec![T::zero(); n];
        gemm(n, n, 1, &jac, &qz, &mut jqz);
        let diff: Vec<T> = (0..n).map(|k| xp[k] - sx[k] - jqz[k]).collect();
        gemm_tn(n, n, 1, &q, &diff, out);
    }

    fn eval(&self, t: T, y: &[T], out: &mut [T]) {
        let mut z = vec![T::zero(); self.n];
        for (i, &s) in self.selected.iter().enumerate() {
            z[s] = y[i];
        }
        let mut full = vec![T::zero(); self.n];
        self.fbar(t, &z, &mut full);
        for (i, &s) in self.selected.iter().enumerate() {
            out[i] = full[s];
        }
    }

    /// `sup ‖X − S‖` plus `sup ‖S(x+Qz) − S(x) − DS(x)Qz‖` over sampled tape
    /// times and points of the ball `‖z‖ ≤ radius` in the selected slots.
    pub fn bound_estimate(&self, radius: T, samples: usize, seed: u64) -> T {
        let n = self.n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut diff_sup = T::zero();
        let mut curv_sup = T::zero();
        let (mut x, mut q) = (vec![T::zero(); n], vec![T::zero(); n * n]);
        let (mut p, mut a, mut b, mut sx) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
        let mut jac = vec![T::zero(); n * n];
        let mut work = JacobianWork::new(n);
        let stride = (self.times.len() / samples.max(1)).max(1);
        for i in (0..self.times.len()).step_by(stride) {
            self.frame_at(self.times[i], &mut x, &mut q);
            self.base.eval_into(&x, &mut sx);
            work.eval(self.base.as_ref(), &x, &mut jac);
            for trial in 0..8 {
                let y = ball_point(&mut rng, self.selected.len(), radius, trial == 0);
                let mut z = vec![T::zero(); n];
                for (c, &s) in self.selected.iter().enumerate() {
                    z[s] = y[c];
                }
                let mut qz = vec![T::zero(); n];
                gemm(n, n, 1, &q, &z, &mut qz);
                for k in 0..n {
                    p[k] = x[k] + qz[k];
                }
                self.perturbed.eval_into(&p, &mut a);
                self.base.eval_into(&p, &mut b);
                let d: Vec<T> = (0..n).map(|k| a[k] - b[k]).collect();
                diff_sup = diff_sup.max(norm2(&d));
                let mut jqz = vec![T::zero(); n];
                gemm(n, n, 1, &jac, &qz, &mut jqz);
                let r: Vec<T> = (0..n).map(|k| b[k] - sx[k] - jqz[k]).collect();
                curv_sup = curv_sup.max(norm2(&r));
            }
        }
        diff_sup + curv_sup
    }
}

fn ball_point<T: Real>(rng: &mut ChaCha8Rng, l: usize, radius: T, boundary: bool) -> Vec<T> {
    let g: Vec<f64> = (0..l).map(|_| StandardNormal.sample(rng)).collect();
    let nrm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let u: f64 = if boundary { 1.0 } else { rand::Rng::random::<f64>(rng).powf(1.0 / l as f64) };
    g.iter().map(|v| T::lit(v / nrm * u) * radius).collect()
}

fn check_selection(selected: &[usize], n: usize) -> Result<()> {
    if selected.is_empty() {
        return Err(Error::InvalidIndices("no indices selected".into()));
    }
    let mut s = selected.to_vec();
    s.sort_unstable();
    if s.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidIndices(format!("duplicate index in {selected:?}")));
    }
    if let Some(bad) = s.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidIndices(format!("index {} exceeds dimension {n}", bad + 1)));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum PerturbationKind<T: Real> {
    /// `f ≡ a`.
    ConstantVector { a: Vec<T> },
    /// `f_i(t) = amplitude_i · sin(frequency_i · t + phase_i)`.
    Sinusoid { amplitude: Vec<T>, frequency: Vec<T>, phase: Vec<T> },
    /// `f_i(y) = b_i · tanh(gain · y_i)`.
    Saturating { b: Vec<T>, gain: T },
    FieldDifference(Arc<FieldDifference<T>>),
}

/// A bounded, Lipschitz-in-`y` perturbation with its declared constants.
#[derive(Debug, Clone)]
pub struct PerturbationSpec<T: Real> {
    pub kind: PerturbationKind<T>,
    /// Declared `sup ‖f‖`.
    pub bound: T,
    /// Declared Lipschitz constant in `y`.
    pub lipschitz: T,
    ell: usize,
}

fn max_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

impl<T: Real> PerturbationSpec<T> {
    pub fn constant(a: Vec<T>) -> Self {
        let ell = a.len();
        Self { bound: norm2(&a), lipschitz: T::zero(), kind: PerturbationKind::ConstantVector { a }, ell }
    }

    pub fn sinusoid(amplitude: Vec<T>, frequency: Vec<T>, phase: Vec<T>) -> Result<Self> {
        let ell = amplitude.len();
        if frequency.len() != ell || phase.len() != ell {
            return Err(Error::DimensionMismatch { expected: ell, got: frequency.len().min(phase.len()) });
        }
        Ok(Self { bound: norm2(&amplitude), lipschitz: T::zero(), kind: PerturbationKind::Sinusoid { amplitude, frequency, phase }, ell })
    }

    pub fn saturating(b: Vec<T>, gain: T) -> Self {
        let ell = b.len();
        Self { bound: norm2(&b), lipschitz: gain.abs() * max_abs(&b), kind: PerturbationKind::Saturating { b, gain }, ell }
    }

    /// Bound and Lipschitz constant are supplied by the caller (usually from
    /// [`FieldDifference::bound_estimate`] and [`probe_bounds`]).
    pub fn field_difference(fd: FieldDifference<T>, bound: T, lipschitz: T) -> Self {
        let ell = fd.selected.len();
        Self { kind: PerturbationKind::FieldDifference(Arc::new(fd)), bound, lipschitz, ell }
    }

    /// Each component `L/√ℓ`, so the declared bound is exactly `L`.
    pub fn with_bound(kind: &str, bound: T, ell: usize) -> Result<Self> {
        let c = bound / T::from_usize_lossy(ell).sqrt();
        let comp = vec![c; ell];
        match kind {
            "constant" | "constant_vector" => Ok(Self::constant(comp)),
            "sinusoid" => {
                let freq = (0..ell).map(|i| T::one() + T::lit(0.5) * T::from_usize_lossy(i)).collect();
                Self::sinusoid(comp, freq, vec![T::zero(); ell])
            }
            "saturating" | "tanh" => Ok(Self::saturating(comp, T::one())),
            other => Err(Error::InvalidConfig(format!("unknown perturbation kind '{other}'"))),
        }
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            PerturbationKind::ConstantVector { .. } => "constant_vector",
            PerturbationKind::Sinusoid { .. } => "sinusoid",
            PerturbationKind::Saturating { .. } => "saturating",
            PerturbationKind::FieldDifference(_) => "field_difference",
        }
    }

    pub fn eval(&self, t: T, y: &[T], out: &mut [T]) {
        match &self.kind {
            PerturbationKind::ConstantVector { a } => out.copy_from_slice(a),
            PerturbationKind::Sinusoid { amplitude, frequency, phase } => {
                for i in 0..out.len() {
                    out[i] = amplitude[i] * (frequency[i] * t + phase[i]).sin();
                }
            }
            PerturbationKind::Saturating { b, gain } => {
                for i in 0..out.len() {
                    out[i] = b[i] * (*gain * y[i]).tanh();
                }
            }
            PerturbationKind::FieldDifference(fd) => fd.eval(t, y, out),
        }
    }

    pub fn describe(&self) -> serde_json::Value {
        let v = |x: &[T]| x.iter().map(|a| a.as_f64()).collect::<Vec<_>>();
        let params = match &self.kind {
            PerturbationKind::ConstantVector { a } => serde_json::json!({ "a": v(a) }),
            PerturbationKind::Sinusoid { amplitude, frequency, phase } => {
                serde_json::json!({ "amplitude": v(amplitude), "frequency": v(frequency), "phase": v(phase) })
            }
            PerturbationKind::Saturating { b, gain } => serde_json::json!({ "b": v(b), "gain": gain.as_f64() }),
            PerturbationKind::FieldDifference(fd) => serde_json::json!({
                "base": fd.base.name(),
                "perturbed": fd.perturbed.name(),
                "selected": fd.selected.iter().map(|i| i + 1).collect::<Vec<_>>(),
            }),
        };
        serde_json::json!({
            "kind": self.kind_name(),
            "bound": self.bound.as_f64(),
            "lipschitz": self.lipschitz.as_f64(),
            "params": params,
        })
    }
}

/// Reduced perturbation of `perturbed` relative to `base` along a full frame
/// run with kept frames. The declared bound is the sampled
/// `sup ‖X − S‖ + curvature` on the ball of `radius`, the Lipschitz constant
/// the largest probed difference quotient.
pub fn build_reduced_perturbation<T: Real>(
    base: SharedField<T>,
    perturbed: SharedField<T>,
    run: &FrameRun<T>,
    selected: &[usize],
    radius: T,
    seed: u64,
) -> Result<PerturbationSpec<T>> {
    let (t0, t1) = (run.tape.start(), run.tape.end());
    let fd = FieldDifference::from_run(base, perturbed, run, selected)?;
    let bound = fd.bound_estimate(radius, 200, seed);
    let mut spec = PerturbationSpec::field_difference(fd, bound, T::max_value());
    let probe = probe_bounds(&spec, (t0.min(t1), t0.max(t1)), radius, 2000, seed ^ 0x9e37);
    spec.lipschitz = T::lit(probe.max_lipschitz_quotient);
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub sup_norm: f64,
    pub max_lipschitz_quotient: f64,
    pub bound_ok: bool,
    pub lipschitz_ok: bool,
    pub samples: usize,
}

/// Empirical `sup ‖f‖` and Lipschitz quotients on a seeded grid of times in
/// `[t0, t1]` and points of the ball `‖y‖ ≤ radius`.
pub fn probe_bounds<T: Real>(f: &PerturbationSpec<T>, t_range: (T, T), radius: T, samples: usize, seed: u64) -> ProbeReport {
    let l = f.ell();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut a, mut b) = (vec![T::zero(); l], vec![T::zero(); l]);
    let mut sup = T::zero();
    let mut lip = T::zero();
    for s in 0..samples {
        let frac = if samples > 1 { T::from_usize_lossy(s) / T::from_usize_lossy(samples - 1) } else { T::zero() };
        let t = t_range.0 + frac * (t_range.1 - t_range.0);
        let y1 = ball_point::<T>(&mut rng, l, radius, s % 4 == 0);
        let y2 = ball_point::<T>(&mut rng, l, radius, false);
        f.eval(t, &y1, &mut a);
        f.eval(t, &y2, &mut b);
        sup = sup.max(norm2(&a)).max(norm2(&b));
        let dy: Vec<T> = y1.iter().zip(&y2).map(|(p, q)| *p - *q).collect();
        let dn = norm2(&dy);
        if dn > T::zero() {
            let df: Vec<T> = a.iter().zip(&b).map(|(p, q)| *p - *q).collect();
            lip = lip.max(norm2(&df) / dn);
        }
    }
    ProbeReport {
        sup_norm: sup.as_f64(),
        max_lipschitz_quotient: lip.as_f64(),
        bound_ok: sup <= f.bound * T::lit(1.0 + 1e-9),
        lipschitz_ok: lip <= f.lipschitz * T::lit(1.0 + 1e-6),
        samples,
    }
}

/// Integrates `dy/dt = y·A(t) + f(t, y)` over `[start, start + duration]`.
pub fn solve_perturbed<T: Real>(
    sys: &ReducedSystemTape<T>,
    f: &PerturbationSpec<T>,
    v: &[T],
    duration: T,
    cfg: &SolverConfig<T>,
) -> Result<ReducedSolution<T>> {
    perturbed_impl(sys, f, v, duration, cfg, Record::All)
}

fn perturbed_impl<T: Real>(
    sys: &ReducedSystemTape<T>,
    f: &PerturbationSpec<T>,
    v: &[T],
    duration: T,
    cfg: &SolverConfig<T>,
    rec: Record,
) -> Result<ReducedSolution<T>> {
    if f.ell() != sys.ell() {
        return Err(Error::DimensionMismatch { expected: sys.ell(), got: f.ell() });
    }
    let forcing = |t: T, y: &[T], out: &mut [T]| f.eval(t, y, out);
    solve_rows(sys, v, duration, cfg, Some(&forcing), rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Accepted exponent residual.
    pub tol: f64,
    /// Bisection iterations per coefficient.
    pub max_iter: usize,
    /// Coarse scan points used to bracket a sign change.
    pub grid_points: usize,
    /// Half-width of the coefficient scan; default `10·(1 + L)`.
    pub radius: Option<f64>,
    /// Horizon used inside the search; defaults to the report horizon.
    pub search_horizon: Option<f64>,
    pub seed: u64,
    pub solver: SolverConfig<f64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { tol: 0.05, max_iter: 20, grid_points: 41, radius: None, search_horizon: None, seed: 0, solver: SolverConfig::fixed(1e-3) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceRecord {
    pub index: usize,
    pub target: f64,
    pub initial_vector: Vec<f64>,
    pub achieved: f64,
    pub residual: f64,
    pub method: String,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceReport {
    pub records: Vec<PersistenceRecord>,
    pub t: f64,
    pub search_horizon: f64,
    pub tol: f64,
    pub perturbation: serde_json::Value,
    pub tape_source: TapeSource,
    pub heuristic: bool,
    pub notes: Vec<String>,
    /// Proof-level constants recorded as metadata only.
    pub proof_constants: serde_json::Value,
}

fn solver_t<T: Real>(cfg: &SolverConfig<f64>) -> SolverConfig<T> {
    SolverConfig {
        method: cfg.method,
        step: T::lit(cfg.step),
        abs_tol: T::lit(cfg.abs_tol),
        rel_tol: T::lit(cfg.rel_tol),
        max_step: T::lit(cfg.max_step),
        sample_stride: T::lit(cfg.sample_stride),
        blowup_bound: T::lit(cfg.blowup_bound),
    }
}

/// Seeded standard-normal vector used as the generic initial condition.
pub fn generic_vector<T: Real>(l: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..l).map(|_| T::lit(StandardNormal.sample(&mut rng))).collect()
}

/// `(1/T) log ‖y(T, v)‖` of the perturbed system from [`generic_vector`].
pub fn generic_exponent<T: Real>(sys: &ReducedSystemTape<T>, f: &PerturbationSpec<T>, t: T, seed: u64, cfg: &SolverConfig<T>) -> Result<T> {
    let v = generic_vector(sys.ell(), seed);
    Ok(perturbed_impl(sys, f, &v, t, cfg, Record::Final)?.final_exponent())
}

/// Searches initial vectors whose perturbed solutions grow at each target
/// rate. `targets[k]` is the unperturbed exponent of direction `k`, ascending.
///
/// The top positive target uses a seeded generic vector (the coordinate
/// vector when `f ≡ 0`). Each lower target
/// `λ_k` starts from `e_k`; if that misses, the coefficients of
/// `e_k + Σ_{i>k} c_i e_i` are fixed from the top index down by bracketing a
/// sign change of `y_i(T_s)` on a coarse scan and bisecting it. The search
/// is a heuristic and failures are reported, not raised.
pub fn persistence_experiment<T: Real>(
    sys: &ReducedSystemTape<T>,
    f: &PerturbationSpec<T>,
    targets: &[T],
    t: T,
    search: &SearchConfig,
) -> Result<PersistenceReport> {
    let l = sys.ell();
    if targets.len() != l {
        return Err(Error::DimensionMismatch { expected: l, got: targets.len() });
    }
    if !targets.windows(2).all(|w| w[0] <= w[1]) {
        return Err(Error::InvalidConfig("targets must be sorted ascending".into()));
    }
    sys.check_coverage(t)?;
    let cfg = solver_t::<T>(&search.solver);
    let t_search = search.search_horizon.map(T::lit).unwrap_or(t).min(t);
    let radius = T::lit(search.radius.unwrap_or(10.0 * (1.0 + f.bound.as_f64())));
    let exponent = |v: &[T], horizon: T| -> Result<(T, Vec<T>)> {
        let sol = perturbed_impl(sys, f, v, horizon, &cfg, Record::Final)?;
        Ok((sol.final_exponent(), sol.scaled_at(sol.len() - 1).to_vec()))
    };
    let mut records = Vec::with_capacity(l);
    let mut notes = Vec::new();
    for k in 0..l {
        let target = targets[k];
        let (v, method) = if k == l - 1 && target > T::zero() && f.bound > T::zero() {
            (generic_vector(l, search.seed), "generic_seeded_vector".to_string())
        } else {
            let mut v = vec![T::zero(); l];
            v[k] = T::one();
            let (e0, _) = exponent(&v, t_search)?;
            if (e0 - target).abs() <= T::lit(search.tol) || k == l - 1 {
                (v, "coordinate_vector".to_string())
            } else {
                for i in (k + 1..l).rev() {
                    let sign_at = |c: T, v: &mut Vec<T>| -> Result<T> {
                        v[i] = c;
                        Ok(exponent(v, t_search)?.1[i].signum())
                    };
                    let pts = search.grid_points.max(3);
                    let mut bracket = None;
                    let mut prev = (-radius, sign_at(-radius, &mut v)?);
                    for p in 1..pts {
                        let c = -radius + (radius + radius) * T::from_usize_lossy(p) / T::from_usize_lossy(pts - 1);
                        let s = sign_at(c, &mut v)?;
                        if s != prev.1 {
                            bracket = Some((prev.0, c, prev.1));
                            break;
                        }
                        prev = (c, s);
                    }
                    match bracket {
                        Some((mut lo, mut hi, s_lo)) => {
                            for _ in 0..search.max_iter {
                                let mid = (lo + hi) * T::lit(0.5);
                                if sign_at(mid, &mut v)? == s_lo {
                                    lo = mid;
                                } else {
                                    hi = mid;
                                }
                            }
                            v[i] = (lo + hi) * T::lit(0.5);
                        }
                        None => {
                            v[i] = T::zero();
                            notes.push(format!("target {}: no sign change of component {} on [-R, R]", k + 1, i + 1));
                        }
                    }
                }
                (v, "coordinate_bisection_heuristic".to_string())
            }
        };
        let (achieved, _) = exponent(&v, t)?;
        let residual = (achieved - target).abs();
        if target < T::zero() && residual.as_f64() > search.tol {
            notes.push(format!(
                "target {} is negative ({}); bounded non-decaying perturbations keep solutions away from zero, so exponent {} is observed",
                k + 1,
                target.as_f64(),
                achieved.as_f64()
            ));
        }
        records.push(PersistenceRecord {
            index: k + 1,
            target: target.as_f64(),
            initial_vector: v.iter().map(|x| x.as_f64()).collect(),
            achieved: achieved.as_f64(),
            residual: residual.as_f64(),
            method,
            success: residual.as_f64() <= search.tol,
        });
    }
    let lambda = targets.iter().map(|v| v.abs().as_f64()).fold(f64::INFINITY, f64::min);
    let c = lambda.min(1.0) / 16.0;
    Ok(PersistenceReport {
        records,
        t: t.as_f64(),
        search_horizon: t_search.as_f64(),
        tol: search.tol,
        perturbation: f.describe(),
        tape_source: sys.source.clone(),
        heuristic: true,
        notes,
        proof_constants: serde_json::json!({
            "lambda": lambda,
            "c": c,
            "eta": c / 2.0,
            "unhoused": ["T_d", "d(eta)", "rho", "psi_i", "xi", "xi_bar", "E(eta,psi,delta)", "F(eta,psi_i)", "Y", "Y'", "Z", "m(k)", "C*", "d"],
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub lambda_neg: f64,
    pub a: f64,
    pub t: f64,
    /// `(1/T) log ‖y(T)‖` of the perturbed two-dimensional system from `(1, 0)`.
    pub full_exponent: f64,
    pub y_final: Vec<f64>,
    /// Unperturbed exponents of `e_1`, `e_2`.
    pub unperturbed_exponents: Vec<f64>,
    /// One-dimensional reduced variant `y' = λ y + a`, `y(0) = 1`.
    pub reduced_exponent: f64,
    pub reduced_unperturbed_exponent: f64,
    /// Full exponent pulled at least 90% of the way from `λ` to 0.
    pub contradiction: bool,
    #[serde(skip)]
    pub series: Vec<[f64; 4]>,
}

impl CounterexampleReport {
    /// `t, y1, y2, log_norm_over_t` for `t > 0`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "y1", "y2", "log_norm_over_t"])?;
        for row in &self.series {
            wr.write_record(row.iter().map(|v| fmt_real(*v)))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// The two-dimensional full standard system with `ω_1 ≡ λ_neg`, `ω_2 ≡ 0`
/// and constant perturbation `(a, a)`, solved from `v = (1, 0)`.
pub fn counterexample_run(lambda_neg: f64, a: f64, t: f64) -> Result<CounterexampleReport> {
    counterexample_with(lambda_neg, a, t, &SolverConfig::fixed(1e-3).with_stride(0.1))
}

pub fn counterexample_with(lambda_neg: f64, a: f64, t: f64, cfg: &SolverConfig<f64>) -> Result<CounterexampleReport> {
    if !(lambda_neg < 0.0) || !(a >= 0.0) || !(t > 0.0) {
        return Err(Error::InvalidConfig("counterexample needs lambda_neg < 0, a >= 0, T > 0".into()));
    }
    let a_mat = Matrix::from_rows(&[vec![lambda_neg, 0.0], vec![0.0, 0.0]]);
    let sys = ReducedSystemTape::constant(&a_mat, t, cfg.sample_stride.max(cfg.step))?;
    let f = PerturbationSpec::constant(vec![a, a]);
    let sol = solve_perturbed(&sys, &f, &[1.0, 0.0], t, cfg)?;
    let last = sol.len() - 1;
    let zero = PerturbationSpec::constant(vec![0.0, 0.0]);
    let unperturbed = [[1.0, 0.0], [0.0, 1.0]]
        .iter()
        .map(|v| Ok(perturbed_impl(&sys, &zero, v, t, cfg, Record::Final)?.final_exponent()))
        .collect::<Result<Vec<f64>>>()?;
    let one = ReducedSystemTape::constant(&Matrix::from_rows(&[vec![lambda_neg]]), t, cfg.sample_stride.max(cfg.step))?;
    let reduced_exponent = perturbed_impl(&one, &PerturbationSpec::constant(vec![a]), &[1.0], t, cfg, Record::Final)?.final_exponent();
    let reduced_unperturbed_exponent = perturbed_impl(&one, &PerturbationSpec::constant(vec![0.0]), &[1.0], t, cfg, Record::Final)?.final_exponent();
    let series = (1..sol.len())
        .map(|i| {
            let y = sol.y_at(i);
            let ti = sol.times[i];
            [ti, y[0], y[1], sol.log_norm_at(i) / ti]
        })
        .collect();
    let full_exponent = sol.final_exponent();
    Ok(CounterexampleReport {
        lambda_neg,
        a,
        t,
        full_exponent,
        y_final: sol.y_at(last),
        unperturbed_exponents: unperturbed,
        reduced_exponent,
        reduced_unperturbed_exponent,
        contradiction: full_exponent >= lambda_neg + 0.9 * lambda_neg.abs(),
        series,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullStandardRun<T> {
    pub times: Vec<T>,
    /// `z(t)` per sample, `n` entries each.
    pub z: Vec<T>,
    /// `‖x + Qz − φ^X_t(x₀ + Q₀z₀)‖` per sample.
    pub residual: Vec<T>,
    pub max_residual: T,
    pub dim: usize,
}

impl<T: Real> FullStandardRun<T> {
    pub fn z_at(&self, i: usize) -> &[T] {
        &self.z[i * self.dim..(i + 1) * self.dim]
    }
}

struct FullStandardOde<'a, T: Real> {
    base: &'a dyn VectorField<T>,
    perturbed: &'a dyn VectorField<T>,
    n: usize,
    jac: Vec<T>,
    m: Vec<T>,
    c: Vec<T>,
    p: Vec<T>,
    xp: Vec<T>,
    sx: Vec<T>,
    work: JacobianWork<T>,
}

impl<T: Real> OdeSystem<T> for FullStandardOde<'_, T> {
    fn dim(&self) -> usize {
        3 * self.n + self.n * self.n
    }

    fn rhs(&mut self, _t: T, y: &[T], dy: &mut [T]) {
        let n = self.n;
        let (x, rest) = y.split_at(n);
        let (q, rest) = rest.split_at(n * n);
        let (z, w) = rest.split_at(n);
        let (dx, drest) = dy.split_at_mut(n);
        let (dq, drest) = drest.split_at_mut(n * n);
        let (dz, dw) = drest.split_at_mut(n);
        self.base.eval_into(x, dx);
        self.sx.copy_from_slice(dx);
        self.work.eval(self.base, x, &mut self.jac);
        gemm(n, n, n, &self.jac, q, &mut self.m);
        gemm_tn(n, n, n, q, &self.m, &mut self.c);
        let c = &self.c;
        for i in 0..n {
            for j in 0..n {
                let mut s = q[i * n + j] * c[j * n + j];
                for p in 0..j {
                    s += q[i * n + p] * (c[p * n + j] + c[j * n + p]);
                }
                dq[i * n + j] = self.m[i * n + j] - s;
            }
        }
        // ż = U z + f̄, f̄ = Qᵀ(X(x + Qz) − S(x)) − C z
        gemm(n, n, 1, q, z, &mut self.p);
        for k in 0..n {
            self.p[k] += x[k];
        }
        self.perturbed.eval_into(&self.p, &mut self.xp);
        for k in 0..n {
            self.xp[k] -= self.sx[k];
        }
        gemm_tn(n, n, 1, q, &self.xp, dz);
        for i in 0..n {
            let mut uz = c[i * n + i] * z[i];
            for j in i + 1..n {
                uz += (c[i * n + j] + c[j * n + i]) * z[j];
            }
            let mut cz = T::zero();
            for j in 0..n {
                cz += c[i * n + j] * z[j];
            }
            dz[i] += uz - cz;
        }
        self.perturbed.eval_into(w, dw);
    }

    fn monitored_norm(&self, y: &[T]) -> T {
        let n = self.n;
        norm2(&y[..n]).max(norm2(&y[2 * n + n * n..]))
    }
}

/// Integrates the moving-frame coordinates `z` of the flow of `X` around the
/// `S`-orbit of `x0` with full orthonormal frame `q0`, together with the
/// direct `X`-flow of `x0 + Q0 z0` for the conjugacy residual.
#[allow(clippy::too_many_arguments)]
pub fn liao_full_standard_system<T: Real>(
    base: &dyn VectorField<T>,
    perturbed: &dyn VectorField<T>,
    x0: &[T],
    q0: &Matrix<T>,
    z0: &[T],
    t: T,
    cfg: &SolverConfig<T>,
    radius: T,
) -> Result<FullStandardRun<T>> {
    let n = base.dim();
    if perturbed.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: perturbed.dim() });
    }
    if x0.len() != n || z0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len().min(z0.len()) });
    }
    if q0.rows() != n || q0.cols() != n {
        return Err(Error::InvalidConfig("the standard system needs a full frame".into()));
    }
    let dev = q0.orthonormality_deviation();
    if !(dev <= crate::scalar::precision_tol::<T>(1e-8, 1e3)) {
        return Err(Error::NotOrthonormal { deviation: dev.as_f64() });
    }
    let mut ode = FullStandardOde {
        base,
        perturbed,
        n,
        jac: vec![T::zero(); n * n],
        m: vec![T::zero(); n * n],
        c: vec![T::zero(); n * n],
        p: vec![T::zero(); n],
        xp: vec![T::zero(); n],
        sx: vec![T::zero(); n],
        work: JacobianWork::new(n),
    };
    let mut y0 = x0.to_vec();
    y0.extend_from_slice(q0.as_slice());
    y0.extend_from_slice(z0);
    let w0 = {
        let mut p = vec![T::zero(); n];
        gemm(n, n, 1, q0.as_slice(), z0, &mut p);
        p.iter().zip(x0).map(|(a, b)| *a + *b).collect::<Vec<T>>()
    };
    y0.extend_from_slice(&w0);
    let mut run = FullStandardRun { times: Vec::new(), z: Vec::new(), residual: Vec::new(), max_residual: T::zero(), dim: n };
    let mut r = vec![T::zero(); n * n];
    let mut p = vec![T::zero(); n];
    integrate(&mut ode, T::zero(), &y0, t, cfg, |ev| {
        let (x, rest) = ev.y.split_at_mut(n);
        let (q, rest) = rest.split_at_mut(n * n);
        let (z, w) = rest.split_at_mut(n);
        if ev.step_index > 0 && ev.step_index % 10 == 0 {
            cgs2_in_place(n, n, q, &mut r, T::one())?;
        }
        let zn = norm2(z);
        if zn > radius {
            return Err(Error::ValidityBall { t: ev.t.as_f64(), norm: zn.as_f64(), radius: radius.as_f64() });
        }
        if ev.is_sample {
            gemm(n, n, 1, q, z, &mut p);
            let d: Vec<T> = (0..n).map(|k| x[k] + p[k] - w[k]).collect();
            let res = norm2(&d);
            run.max_residual = run.max_residual.max(res);
            run.times.push(ev.t);
            run.z.extend_from_slice(z);
            run.residual.push(res);
        }
        Ok(())
    })?;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_tape(diag: &[f64], t: f64) -> ReducedSystemTape<f64> {
        ReducedSystemTape::constant(&Matrix::from_diagonal(diag), t, 0.01).unwrap()
    }

    #[test]
    fn zero_perturbation_matches_generic() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 2.0]]);
        let sys = ReducedSystemTape::constant(&a, 5.0, 1e-3).unwrap();
        let cfg = SolverConfig::fixed(1e-3);
        let p = solve_perturbed(&sys, &PerturbationSpec::constant(vec![0.0, 0.0]), &[0.3, 1.0], 5.0, &cfg).unwrap();
        let g = crate::standard::solve_generic(&sys, &[0.3, 1.0], 5.0, &cfg).unwrap();
        assert_eq!(p.len(), g.len());
        for i in 0..p.len() {
            for (x, y) in p.y_at(i).iter().zip(g.y_at(i)) {
                let (x, y): (f64, f64) = (*x, y);
                assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
            }
        }
        let tri = crate::standard::solve_triangular(&sys, &[0.3, 1.0], 5.0).unwrap();
        let (yp, yt): (Vec<f64>, Vec<f64>) = (p.y_at(p.len() - 1), tri.y_at(tri.len() - 1));
        for k in 0..2 {
            assert!((yp[k] - yt[k]).abs() <= 1e-5 * yt[k].abs());
        }
    }

    #[test]
    fn scalar_examples() {
        let cfg = SolverConfig::fixed(1e-3);
        let sys = const_tape(&[1.0], 50.0);
        let f = PerturbationSpec::sinusoid(vec![0.5], vec![1.0], vec![0.0]).unwrap();
        let e = solve_perturbed(&sys, &f, &[1.0], 50.0, &cfg).unwrap().final_exponent();
        assert!((e - 1.0).abs() < 0.01, "{e}");
        let sys = const_tape(&[-1.0], 200.0);
        let sol = solve_perturbed(&sys, &PerturbationSpec::constant(vec![0.1]), &[1.0], 200.0, &cfg).unwrap();
        assert!((sol.y_at(sol.len() - 1)[0] - 0.1).abs() < 1e-9);
        assert!(sol.final_exponent().abs() < 0.02);
    }

    #[test]
    fn declared_bounds_hold_on_probes() {
        for kind in ["constant", "sinusoid", "saturating"] {
            for l in [0.1, 1.0, 10.0] {
                let f = PerturbationSpec::<f64>::with_bound(kind, l, 3).unwrap();
                assert!((f.bound - l).abs() < 1e-12);
                let rep = probe_bounds(&f, (0.0, 100.0), 5.0, 2000, 1);
                assert!(rep.bound_ok && rep.lipschitz_ok, "{kind} {l}: {rep:?}");
            }
        }
    }

    #[test]
    fn persistence_examples() {
        let sys = const_tape(&[1.0, 2.0], 500.0);
        let f = PerturbationSpec::with_bound("saturating", 0.5, 2).unwrap();
        let rep = persistence_experiment(&sys, &f, &[1.0, 2.0], 500.0, &SearchConfig::default()).unwrap();
        let top = &rep.records[1];
        assert_eq!(top.method, "generic_seeded_vector");
        assert!(top.residual < 0.02, "{rep:?}");
        let zero = PerturbationSpec::constant(vec![0.0, 0.0]);
        let rep = persistence_experiment(&sys, &zero, &[1.0, 2.0], 500.0, &SearchConfig::default()).unwrap();
        for r in &rep.records {
            assert!(r.residual < 1e-6 && r.method == "coordinate_vector", "{r:?}");
        }
        let one = const_tape(&[1.0], 100.0);
        for v in [0.5, -2.0, 1.0, 2.0] {
            let sol = solve_perturbed(&one, &PerturbationSpec::constant(vec![0.3]), &[v], 100.0, &SolverConfig::fixed(1e-3)).unwrap();
            assert!((sol.final_exponent() - 1.0).abs() < 0.01, "{v}: {}", sol.final_exponent());
        }
    }

    #[test]
    fn counterexample_numbers() {
        let r = counterexample_run(-0.5, 0.1, 200.0).unwrap();
        assert!((r.y_final[1] - 20.0).abs() < 1e-8);
        assert!(r.full_exponent.abs() < 0.05 && r.full_exponent > 0.0);
        assert!(r.contradiction);
        assert!((r.unperturbed_exponents[0] + 0.5).abs() < 1e-6 && r.unperturbed_exponents[1].abs() < 1e-6);
        assert!(r.reduced_exponent.abs() < 0.05);
        assert!((r.reduced_unperturbed_exponent + 0.5).abs() < 1e-6);
        let z = counterexample_run(-0.5, 0.0, 200.0).unwrap();
        assert!((z.full_exponent + 0.5).abs() < 1e-6);
        let r = counterexample_run(-1.0, 1.0, 500.0).unwrap();
        assert!(r.full_exponent.abs() < 0.02);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,y1,y2,log_norm_over_t\n"));
    }
}
