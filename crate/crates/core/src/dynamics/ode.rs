//! Fixed-step RK4 and adaptive Dormand–Prince 5(4) integrators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, norm2, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FixedRk4,
    AdaptiveRk45,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig<T> {
    pub method: Method,
    /// Step for fixed mode; initial guess for adaptive mode.
    pub step: T,
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_step: T,
    /// Output sampling interval.
    pub sample_stride: T,
    /// `|x|` above this aborts integration.
    pub blowup_bound: T,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self::fixed(T::lit(1e-3))
    }
}

impl<T: Real> SolverConfig<T> {
    /// Fixed-step RK4, sampling every step.
    pub fn fixed(step: T) -> Self {
        Self {
            method: Method::FixedRk4,
            step,
            abs_tol: T::lit(1e-9),
            rel_tol: T::lit(1e-9),
            max_step: step.max(T::lit(0.1)),
            sample_stride: step,
            blowup_bound: T::lit(1e6),
        }
    }

    /// Adaptive Dormand–Prince with `abs_tol = rel_tol = tol`.
    pub fn adaptive(tol: T) -> Self {
        Self {
            method: Method::AdaptiveRk45,
            step: T::lit(1e-3),
            abs_tol: tol,
            rel_tol: tol,
            max_step: T::lit(0.1),
            sample_stride: T::lit(0.01),
            blowup_bound: T::lit(1e6),
        }
    }

    pub fn with_stride(mut self, stride: T) -> Self {
        self.sample_stride = stride;
        self
    }

    pub fn with_blowup_bound(mut self, bound: T) -> Self {
        self.blowup_bound = bound;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: T, what: &str| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{what} must be a positive finite number")))
            }
        };
        pos(self.step, "step")?;
        pos(self.max_step, "max_step")?;
        pos(self.abs_tol, "abs_tol")?;
        pos(self.rel_tol, "rel_tol")?;
        pos(self.sample_stride, "sample_stride")?;
        pos(self.blowup_bound, "blowup_bound")?;
        if self.step > self.max_step {
            return Err(Error::InvalidConfig("step must not exceed max_step".into()));
        }
        Ok(())
    }

    /// Number of fixed steps between samples.
    pub(crate) fn stride_steps(&self) -> usize {
        (self.sample_stride / self.step).round().to_usize().unwrap_or(1).max(1)
    }
}

/// A first-order system `y' = F(t, y)`.
pub trait OdeSystem<T: Real> {
    fn dim(&self) -> usize;

    fn rhs(&mut self, t: T, y: &[T], dy: &mut [T]);

    /// Quantity compared against the blow-up bound (defaults to `|y|`).
    fn monitored_norm(&self, y: &[T]) -> T {
        norm2(y)
    }
}

/// What the integrator reports after every accepted step.
pub struct StepEvent<'a, T> {
    pub t: T,
    pub y: &'a mut [T],
    /// Count of accepted steps so far.
    pub step_index: usize,
    /// True at sample times and at the final time.
    pub is_sample: bool,
    pub is_final: bool,
}

/// Integrates from `t0` to `t1` (either direction). `on_step` runs once at
/// `t0` (as a sample with `step_index = 0`) and after every accepted step; it
/// may modify the state in place.
pub fn integrate<T, S, C>(sys: &mut S, t0: T, y0: &[T], t1: T, cfg: &SolverConfig<T>, mut on_step: C) -> Result<Vec<T>>
where
    T: Real,
    S: OdeSystem<T>,
    C: FnMut(StepEvent<'_, T>) -> Result<()>,
{
    cfg.validate()?;
    if y0.len() != sys.dim() {
        return Err(Error::DimensionMismatch { expected: sys.dim(), got: y0.len() });
    }
    let mut y = y0.to_vec();
    on_step(StepEvent { t: t0, y: &mut y, step_index: 0, is_sample: true, is_final: t0 == t1 })?;
    if t0 == t1 {
        return Ok(y);
    }
    match cfg.method {
        Method::FixedRk4 => fixed_rk4(sys, t0, y, t1, cfg, &mut on_step),
        Method::AdaptiveRk45 => dopri5(sys, t0, y, t1, cfg, &mut on_step),
    }
}

fn check_state<T: Real, S: OdeSystem<T>>(sys: &S, t: T, y: &[T], cfg: &SolverConfig<T>) -> Result<()> {
    if !all_finite(y) {
        return Err(Error::NonFinite { context: format!("in state at t = {}", t.as_f64()) });
    }
    let norm = sys.monitored_norm(y);
    if norm > cfg.blowup_bound {
        return Err(Error::BlowUp { t: t.as_f64(), norm: norm.as_f64(), bound: cfg.blowup_bound.as_f64() });
    }
    Ok(())
}

/// Reusable RK4 stage buffers.
pub(crate) struct Rk4<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    tmp: Vec<T>,
}

impl<T: Real> Rk4<T> {
    pub(crate) fn new(n: usize) -> Self {
        let z = vec![T::zero(); n];
        Self { k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z }
    }

    /// One classical RK4 step of size `h` (may be negative), in place.
    pub(crate) fn step<S: OdeSystem<T>>(&mut self, sys: &mut S, t: T, y: &mut [T], h: T) {
        let half = h * T::lit(0.5);
        let sixth = h / T::lit(6.0);
        sys.rhs(t, y, &mut self.k1);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + half * self.k1[i];
        }
        sys.rhs(t + half, &self.tmp, &mut self.k2);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + half * self.k2[i];
        }
        sys.rhs(t + half, &self.tmp, &mut self.k3);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        sys.rhs(t + h, &self.tmp, &mut self.k4);
        let two = T::lit(2.0);
        for i in 0..y.len() {
            y[i] += sixth * (self.k1[i] + two * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
    }
}

fn fixed_rk4<T, S, C>(sys: &mut S, t0: T, mut y: Vec<T>, t1: T, cfg: &SolverConfig<T>, on_step: &mut C) -> Result<Vec<T>>
where
    T: Real,
    S: OdeSystem<T>,
    C: FnMut(StepEvent<'_, T>) -> Result<()>,
{
    let span = t1 - t0;
    let dir = span.signum();
    let h = cfg.step * dir;
    // a final step shorter than 1e-9·h is folded into the previous one
    let nsteps = ((span.abs() / cfg.step) - T::lit(1e-9)).ceil().to_usize().unwrap_or(1).max(1);
    let stride = cfg.stride_steps();
    let mut rk = Rk4::new(y.len());
    for k in 1..=nsteps {
        let t = t0 + h * T::from_usize_lossy(k - 1);
        let is_final = k == nsteps;
        let t_next = if is_final { t1 } else { t0 + h * T::from_usize_lossy(k) };
        rk.step(sys, t, &mut y, t_next - t);
        check_state(sys, t_next, &y, cfg)?;
        on_step(StepEvent { t: t_next, y: &mut y, step_index: k, is_sample: is_final || k % stride == 0, is_final })?;
    }
    Ok(y)
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn dopri5<T, S, C>(sys: &mut S, t0: T, mut y: Vec<T>, t1: T, cfg: &SolverConfig<T>, on_step: &mut C) -> Result<Vec<T>>
where
    T: Real,
    S: OdeSystem<T>,
    C: FnMut(StepEvent<'_, T>) -> Result<()>,
{
    let n = y.len();
    let lit = T::lit;
    let dir = (t1 - t0).signum();
    let mut k: Vec<Vec<T>> = (0..7).map(|_| vec![T::zero(); n]).collect();
    let mut tmp = vec![T::zero(); n];
    let mut ynew = vec![T::zero(); n];
    let mut t = t0;
    let mut h = cfg.step.min(cfg.max_step).min(cfg.sample_stride);
    let mut sample_index = 1usize;
    let mut accepted = 0usize;
    sys.rhs(t, &y, &mut k[0]);
    loop {
        let next_sample = t0 + dir * cfg.sample_stride * T::from_usize_lossy(sample_index);
        let target = if dir * (next_sample - t1) >= T::zero() { t1 } else { next_sample };
        let remaining = (target - t).abs();
        let mut hits_target = false;
        if h >= remaining * (T::one() - lit(1e-12)) {
            h = remaining;
            hits_target = true;
        }
        if h <= lit(1e-14) * T::one().max(t.abs()) {
            return Err(Error::StepSizeUnderflow { t: t.as_f64() });
        }
        let hs = h * dir;
        let a = [
            [lit(A21), T::zero(), T::zero(), T::zero(), T::zero()],
            [lit(A31), lit(A32), T::zero(), T::zero(), T::zero()],
            [lit(A41), lit(A42), lit(A43), T::zero(), T::zero()],
            [lit(A51), lit(A52), lit(A53), lit(A54), T::zero()],
            [lit(A61), lit(A62), lit(A63), lit(A64), lit(A65)],
        ];
        let c = [lit(C2), lit(C3), lit(C4), lit(C5), T::one()];
        for s in 0..5 {
            for i in 0..n {
                let mut acc = T::zero();
                for (j, aj) in a[s].iter().enumerate().take(s + 1) {
                    acc += *aj * k[j][i];
                }
                tmp[i] = y[i] + hs * acc;
            }
            let (head, tail) = k.split_at_mut(s + 1);
            let _ = head;
            sys.rhs(t + c[s] * hs, &tmp, &mut tail[0]);
        }
        for i in 0..n {
            ynew[i] = y[i]
                + hs * (lit(B1) * k[0][i] + lit(B3) * k[2][i] + lit(B4) * k[3][i] + lit(B5) * k[4][i] + lit(B6) * k[5][i]);
        }
        let (head, tail) = k.split_at_mut(6);
        sys.rhs(t + hs, &ynew, &mut tail[0]);
        let mut err_sq = T::zero();
        for i in 0..n {
            let e = hs
                * (lit(E1) * head[0][i] + lit(E3) * head[2][i] + lit(E4) * head[3][i] + lit(E5) * head[4][i]
                    + lit(E6) * head[5][i]
                    + lit(E7) * tail[0][i]);
            let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(ynew[i].abs());
            err_sq += (e / sc) * (e / sc);
        }
        let err = (err_sq / T::from_usize_lossy(n.max(1))).sqrt();
        if !err.is_finite() {
            h *= lit(0.2);
            continue;
        }
        let factor = if err == T::zero() { lit(5.0) } else { (lit(0.9) * err.powf(lit(-0.2))).min(lit(5.0)).max(lit(0.2)) };
        if err <= T::one() {
            t = if hits_target { target } else { t + hs };
            std::mem::swap(&mut y, &mut ynew);
            k.swap(0, 6);
            accepted += 1;
            check_state(sys, t, &y, cfg)?;
            let is_final = hits_target && target == t1;
            let is_sample = hits_target;
            if hits_target && target != t1 {
                sample_index += 1;
            }
            let before = y.clone();
            on_step(StepEvent { t, y: &mut y, step_index: accepted, is_sample, is_final })?;
            if y != before {
                // state was modified by the observer: FSAL derivative is stale
                sys.rhs(t, &y, &mut k[0]);
            }
            if is_final {
                return Ok(y);
            }
            h = (h * factor).min(cfg.max_step);
        } else {
            h *= factor.min(T::one());
        }
    }
}

/// Sampled base trajectory `φ_t(x₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTape<T> {
    dim: usize,
    times: Vec<T>,
    points: Vec<T>,
}

impl<T: Real> TrajectoryTape<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, times: Vec::new(), points: Vec::new() }
    }

    pub fn with_capacity(dim: usize, cap: usize) -> Self {
        Self { dim, times: Vec::with_capacity(cap), points: Vec::with_capacity(cap * dim) }
    }

    /// Appends a sample; times must keep moving in one direction.
    pub fn push(&mut self, t: T, x: &[T]) {
        debug_assert_eq!(x.len(), self.dim);
        self.times.push(t);
        self.points.extend_from_slice(x);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn time(&self, i: usize) -> T {
        self.times[i]
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_point(&self) -> &[T] {
        self.point(self.len() - 1)
    }

    pub fn points(&self) -> impl Iterator<Item = &[T]> {
        self.points.chunks_exact(self.dim)
    }

    /// Times strictly monotone (increasing for forward runs) and points finite.
    pub fn check_invariants(&self) -> bool {
        let monotone = self.times.windows(2).all(|w| w[1] > w[0]) || self.times.windows(2).all(|w| w[1] < w[0]);
        monotone && all_finite(&self.points)
    }
}

struct FlowSystem<'a, T: Real, F: ?Sized> {
    field: &'a F,
    _t: std::marker::PhantomData<T>,
}

impl<T: Real, F: super::VectorField<T> + ?Sized> OdeSystem<T> for FlowSystem<'_, T, F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn rhs(&mut self, _t: T, y: &[T], dy: &mut [T]) {
        self.field.eval_into(y, dy);
    }
}

/// Integrates the base flow `x' = S(x)` over `t_span` (reversal allowed).
pub fn integrate_flow<T, F>(field: &F, x0: &[T], t_span: (T, T), cfg: &SolverConfig<T>) -> Result<TrajectoryTape<T>>
where
    T: Real,
    F: super::VectorField<T> + ?Sized,
{
    if x0.len() != field.dim() {
        return Err(Error::DimensionMismatch { expected: field.dim(), got: x0.len() });
    }
    let mut sys = FlowSystem { field, _t: std::marker::PhantomData };
    let mut tape = TrajectoryTape::new(field.dim());
    integrate(&mut sys, t_span.0, x0, t_span.1, cfg, |ev| {
        if ev.is_sample {
            tape.push(ev.t, ev.y);
        }
        Ok(())
    })?;
    Ok(tape)
}
