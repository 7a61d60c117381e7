//! The orthonormal frame flow `χ_t^#` with its `log ζ_k` ledger.

use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, JacobianWork, OdeSystem, SolverConfig, TrajectoryTape, VectorField};
use crate::error::{Error, Result};
use crate::linalg::{gemm, gemm_tn, Matrix};
use crate::scalar::{norm2, precision_tol, Real};

use super::cgs2_in_place;
use super::tape::QualTape;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameOptions {
    /// Gram–Schmidt cleanup interval in integrator steps.
    pub reorth_every: usize,
    /// Store `Q` at every tape sample.
    pub keep_frames: bool,
    /// Largest `‖QᵀQ − I‖_max` tolerated between cleanups.
    pub drift_tol: f64,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self { reorth_every: 10, keep_frames: false, drift_tol: 1e-6 }
    }
}

/// A point of the orthonormal frame bundle plus its growth ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoFrameState<T> {
    pub t: T,
    pub x: Vec<T>,
    pub q: Matrix<T>,
    pub log_zeta: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct FrameRun<T> {
    /// `ω` and couplings on the sample grid (times increasing).
    pub tape: QualTape<T>,
    log_zeta: Vec<T>,
    frames: Option<Vec<T>>,
    pub initial: OrthoFrameState<T>,
    pub final_state: OrthoFrameState<T>,
    pub reorth_count: usize,
    pub max_drift: T,
}

impl<T: Real> FrameRun<T> {
    pub fn dim(&self) -> usize {
        self.initial.x.len()
    }

    pub fn ell(&self) -> usize {
        self.tape.ell()
    }

    /// Signed duration (negative for backward runs).
    pub fn duration(&self) -> T {
        self.final_state.t - self.initial.t
    }

    /// Ledger at tape sample `i` (relative to the run's start time).
    pub fn log_zeta_at(&self, i: usize) -> &[T] {
        let l = self.ell();
        &self.log_zeta[i * l..(i + 1) * l]
    }

    /// Ledger at an arbitrary covered time, linearly interpolated.
    pub fn log_zeta_interp(&self, t: T) -> Result<Vec<T>> {
        let i = self.tape.locate(t)?;
        let (t0, t1) = (self.tape.times()[i], self.tape.times()[i + 1]);
        let s = (t - t0) / (t1 - t0);
        let (a, b) = (self.log_zeta_at(i), self.log_zeta_at(i + 1));
        Ok(a.iter().zip(b).map(|(a, b)| *a + s * (*b - *a)).collect())
    }

    /// Full state at sample `i`, available when frames were kept.
    pub fn state(&self, i: usize) -> Option<OrthoFrameState<T>> {
        let frames = self.frames.as_ref()?;
        let (n, l) = (self.dim(), self.ell());
        Some(OrthoFrameState {
            t: self.tape.times()[i],
            x: self.tape.base()?.point(i).to_vec(),
            q: Matrix::from_row_slice(n, l, &frames[i * n * l..(i + 1) * n * l]),
            log_zeta: self.log_zeta_at(i).to_vec(),
        })
    }

    pub fn has_frames(&self) -> bool {
        self.frames.is_some()
    }
}

/// Computes `C = QᵀDS(x)Q` and `M = DS(x)Q` into scratch buffers.
struct Projector<T> {
    n: usize,
    l: usize,
    jac: Vec<T>,
    m: Vec<T>,
    c: Vec<T>,
    work: JacobianWork<T>,
}

impl<T: Real> Projector<T> {
    fn new(n: usize, l: usize) -> Self {
        Self {
            n,
            l,
            jac: vec![T::zero(); n * n],
            m: vec![T::zero(); n * l],
            c: vec![T::zero(); l * l],
            work: JacobianWork::new(n),
        }
    }

    fn project<F: VectorField<T> + ?Sized>(&mut self, field: &F, x: &[T], q: &[T]) {
        self.work.eval(field, x, &mut self.jac);
        gemm(self.n, self.n, self.l, &self.jac, q, &mut self.m);
        gemm_tn(self.n, self.l, self.l, q, &self.m, &mut self.c);
    }

    fn omega_into(&self, out: &mut Vec<T>) {
        out.clear();
        out.extend((0..self.l).map(|k| self.c[k * self.l + k]));
    }

    fn coupling_into(&self, out: &mut Vec<T>) {
        out.clear();
        let l = self.l;
        for j in 1..l {
            for k in 0..j {
                out.push(self.c[k * l + j] + self.c[j * l + k]);
            }
        }
    }
}

/// Cubic Hermite interpolation of a stored orbit, using `S` at the nodes.
struct OrbitInterp<'a, T> {
    orbit: &'a TrajectoryTape<T>,
    f0: Vec<T>,
    f1: Vec<T>,
}

impl<'a, T: Real> OrbitInterp<'a, T> {
    fn new(orbit: &'a TrajectoryTape<T>) -> Self {
        let n = orbit.dim();
        Self { orbit, f0: vec![T::zero(); n], f1: vec![T::zero(); n] }
    }

    fn eval<F: VectorField<T> + ?Sized>(&mut self, field: &F, t: T, out: &mut [T]) {
        let times = self.orbit.times();
        let len = times.len();
        let i = times.partition_point(|s| *s <= t).saturating_sub(1).min(len - 2);
        let (t0, t1) = (times[i], times[i + 1]);
        let h = t1 - t0;
        let snap = T::lit(1e-9) * h.abs();
        if (t - t0).abs() <= snap {
            out.copy_from_slice(self.orbit.point(i));
            return;
        }
        if (t - t1).abs() <= snap {
            out.copy_from_slice(self.orbit.point(i + 1));
            return;
        }
        let (x0, x1) = (self.orbit.point(i), self.orbit.point(i + 1));
        field.eval_into(x0, &mut self.f0);
        field.eval_into(x1, &mut self.f1);
        let s = (t - t0) / h;
        let (s2, s3) = (s * s, s * s * s);
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let h00 = two * s3 - three * s2 + T::one();
        let h10 = s3 - two * s2 + s;
        let h01 = three * s2 - two * s3;
        let h11 = s3 - s2;
        for k in 0..out.len() {
            out[k] = h00 * x0[k] + h10 * h * self.f0[k] + h01 * x1[k] + h11 * h * self.f1[k];
        }
    }
}

/// `Q' = DS·Q − Q·U(C)` and `(log ζ_k)' = C_kk`, with `x` either carried in
/// the state or read from a stored orbit.
struct FrameOde<'a, T: Real, F: ?Sized> {
    field: &'a F,
    n: usize,
    l: usize,
    orbit: Option<OrbitInterp<'a, T>>,
    proj: Projector<T>,
    x: Vec<T>,
}

impl<T: Real, F: VectorField<T> + ?Sized> FrameOde<'_, T, F> {
    fn offset(&self) -> usize {
        if self.orbit.is_some() {
            0
        } else {
            self.n
        }
    }

    fn base_point(&mut self, t: T, y: &[T]) {
        match self.orbit.as_mut() {
            Some(o) => o.eval(self.field, t, &mut self.x),
            None => self.x.copy_from_slice(&y[..self.n]),
        }
    }
}

impl<T: Real, F: VectorField<T> + ?Sized> OdeSystem<T> for FrameOde<'_, T, F> {
    fn dim(&self) -> usize {
        self.offset() + self.n * self.l + self.l
    }

    fn rhs(&mut self, t: T, y: &[T], dy: &mut [T]) {
        let (n, l, off) = (self.n, self.l, self.offset());
        self.base_point(t, y);
        if off > 0 {
            self.field.eval_into(&self.x, &mut dy[..n]);
        }
        let q = &y[off..off + n * l];
        self.proj.project(self.field, &self.x, q);
        let c = &self.proj.c;
        let m = &self.proj.m;
        let dq = &mut dy[off..off + n * l];
        for i in 0..n {
            for j in 0..l {
                let mut s = q[i * l + j] * c[j * l + j];
                for p in 0..j {
                    s += q[i * l + p] * (c[p * l + j] + c[j * l + p]);
                }
                dq[i * l + j] = m[i * l + j] - s;
            }
        }
        for k in 0..l {
            dy[off + n * l + k] = c[k * l + k];
        }
    }

    fn monitored_norm(&self, y: &[T]) -> T {
        if self.orbit.is_some() {
            T::zero()
        } else {
            norm2(&y[..self.n])
        }
    }
}

fn validate_frame<T: Real>(n: usize, q0: &Matrix<T>) -> Result<()> {
    if q0.rows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: q0.rows() });
    }
    if q0.cols() == 0 || q0.cols() > n {
        return Err(Error::InvalidConfig(format!("frame of {} vectors in dimension {n}", q0.cols())));
    }
    let dev = q0.orthonormality_deviation();
    if !(dev <= precision_tol::<T>(1e-8, 1e3)) {
        return Err(Error::NotOrthonormal { deviation: dev.as_f64() });
    }
    Ok(())
}

fn run_frames<T, F>(
    mut sys: FrameOde<'_, T, F>,
    x0: &[T],
    q0: &Matrix<T>,
    t0: T,
    t1: T,
    cfg: &SolverConfig<T>,
    opts: &FrameOptions,
) -> Result<FrameRun<T>>
where
    T: Real,
    F: VectorField<T> + ?Sized,
{
    if opts.reorth_every == 0 {
        return Err(Error::InvalidConfig("reorth_every must be at least 1".into()));
    }
    let (n, l, off) = (sys.n, sys.l, sys.offset());
    let field = sys.field;
    let mut y0 = Vec::with_capacity(sys.dim());
    if off > 0 {
        y0.extend_from_slice(x0);
    }
    y0.extend_from_slice(q0.as_slice());
    y0.extend(std::iter::repeat_n(T::zero(), l));

    let drift_tol = precision_tol::<T>(opts.drift_tol, 1e3);
    let mut tape = QualTape::with_base(l, n, field.name());
    let mut log_zeta = Vec::new();
    let mut frames = opts.keep_frames.then(Vec::new);
    let mut reorth_count = 0usize;
    let mut max_drift = T::zero();
    let mut r = vec![T::zero(); l * l];
    let mut omega = Vec::with_capacity(l);
    let mut coupling = Vec::with_capacity(l * l);
    let mut x = vec![T::zero(); n];
    // the observer needs its own projector and interpolator; the ODE system owns the others
    let mut proj = Projector::new(n, l);
    let mut interp = sys.orbit.as_ref().map(|o| OrbitInterp::new(o.orbit));

    let y_end = integrate(&mut sys, t0, &y0, t1, cfg, |ev| {
        let (qs, rest) = ev.y[off..].split_at_mut(n * l);
        if ev.step_index > 0 && (ev.step_index % opts.reorth_every == 0 || ev.is_final) {
            let dev = crate::frame::deviation_flat(n, l, qs);
            if !(dev <= drift_tol) {
                return Err(Error::OrthonormalityDrift { t: ev.t.as_f64(), deviation: dev.as_f64() });
            }
            max_drift = max_drift.max(dev);
            cgs2_in_place(n, l, qs, &mut r, T::one())?;
            // decayed components would otherwise sink into subnormal arithmetic
            let floor = T::min_positive_value().sqrt();
            qs.iter_mut().filter(|v| v.abs() < floor).for_each(|v| *v = T::zero());
            for k in 0..l {
                rest[k] += r[k * l + k].ln();
            }
            reorth_count += 1;
        }
        if ev.is_sample {
            match interp.as_mut() {
                Some(o) => o.eval(field, ev.t, &mut x),
                None => x.copy_from_slice(&ev.y[..n]),
            }
            let qs = &ev.y[off..off + n * l];
            proj.project(field, &x, qs);
            proj.omega_into(&mut omega);
            proj.coupling_into(&mut coupling);
            tape.push(ev.t, &omega, &coupling, Some(&x))?;
            log_zeta.extend_from_slice(&ev.y[off + n * l..]);
            if let Some(fr) = frames.as_mut() {
                fr.extend_from_slice(qs);
            }
        }
        Ok(())
    })?;

    let last = tape.len() - 1;
    let final_state = OrthoFrameState {
        t: t1,
        x: tape.base().map(|b| b.point(last).to_vec()).unwrap_or_default(),
        q: Matrix::from_row_slice(n, l, &y_end[off..off + n * l]),
        log_zeta: y_end[off + n * l..].to_vec(),
    };
    let initial = OrthoFrameState { t: t0, x: x0.to_vec(), q: q0.clone(), log_zeta: vec![T::zero(); l] };
    if t1 < t0 {
        tape.reverse();
        reverse_blocks(&mut log_zeta, l);
        if let Some(fr) = frames.as_mut() {
            reverse_blocks(fr, n * l);
        }
    }
    Ok(FrameRun { tape, log_zeta, frames, initial, final_state, reorth_count, max_drift })
}

fn reverse_blocks<T: Copy>(v: &mut Vec<T>, block: usize) {
    let out: Vec<T> = v.chunks_exact(block).rev().flatten().copied().collect();
    *v = out;
}

/// Evolves `(x₀, Q₀)` for signed duration `t` (co-integrating the base point).
pub fn evolve_frame<T, F>(
    field: &F,
    x0: &[T],
    q0: &Matrix<T>,
    t: T,
    cfg: &SolverConfig<T>,
    opts: &FrameOptions,
) -> Result<FrameRun<T>>
where
    T: Real,
    F: VectorField<T> + ?Sized,
{
    let n = field.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
    }
    validate_frame(n, q0)?;
    let l = q0.cols();
    let sys = FrameOde { field, n, l, orbit: None, proj: Projector::new(n, l), x: vec![T::zero(); n] };
    run_frames(sys, x0, q0, T::zero(), t, cfg, opts)
}

/// Evolves a frame from `t_start` to `t_end` along a stored base orbit
/// instead of re-integrating the base point. This is how frames are carried
/// backward in time along attractors whose reversed flow is unstable.
pub fn evolve_frame_on_orbit<T, F>(
    field: &F,
    orbit: &TrajectoryTape<T>,
    q0: &Matrix<T>,
    t_start: T,
    t_end: T,
    cfg: &SolverConfig<T>,
    opts: &FrameOptions,
) -> Result<FrameRun<T>>
where
    T: Real,
    F: VectorField<T> + ?Sized,
{
    let n = field.dim();
    if orbit.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: orbit.dim() });
    }
    validate_frame(n, q0)?;
    let times = orbit.times();
    if orbit.len() < 2 || !times.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::InvalidConfig("orbit must have increasing times".into()));
    }
    let (a, b) = (times[0], times[times.len() - 1]);
    let slack = T::lit(1e-9) * T::one().max(a.abs()).max(b.abs());
    for req in [t_start, t_end] {
        if req < a - slack || req > b + slack {
            return Err(Error::Coverage { requested: req.as_f64(), start: a.as_f64(), end: b.as_f64() });
        }
    }
    let l = q0.cols();
    let mut x0 = vec![T::zero(); n];
    OrbitInterp::new(orbit).eval(field, t_start, &mut x0);
    let sys = FrameOde {
        field,
        n,
        l,
        orbit: Some(OrbitInterp::new(orbit)),
        proj: Projector::new(n, l),
        x: vec![T::zero(); n],
    };
    run_frames(sys, &x0, q0, t_start, t_end, cfg, opts)
}
