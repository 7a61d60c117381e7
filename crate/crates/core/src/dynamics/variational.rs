//! Tangent flow `V' = DS(x(t))·V` co-integrated with `x' = S(x)`.

use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix};
use crate::scalar::{norm2, Real};

use super::fields::{JacobianWork, VectorField};
use super::ode::{integrate, OdeSystem, SolverConfig, TrajectoryTape};

#[derive(Debug, Clone)]
pub struct VariationalRun<T> {
    pub tape: TrajectoryTape<T>,
    /// `V(t)` at each tape time.
    pub matrices: Vec<Matrix<T>>,
    /// Rank-collapse notices (smallest/largest singular value below threshold).
    pub warnings: Vec<String>,
}

struct Tangent<'a, T: Real, F: ?Sized> {
    field: &'a F,
    n: usize,
    k: usize,
    jac: Vec<T>,
    work: JacobianWork<T>,
}

impl<T: Real, F: VectorField<T> + ?Sized> OdeSystem<T> for Tangent<'_, T, F> {
    fn dim(&self) -> usize {
        self.n + self.n * self.k
    }

    fn rhs(&mut self, _t: T, y: &[T], dy: &mut [T]) {
        let (x, v) = y.split_at(self.n);
        let (dx, dv) = dy.split_at_mut(self.n);
        self.field.eval_into(x, dx);
        self.work.eval(self.field, x, &mut self.jac);
        gemm(self.n, self.n, self.k, &self.jac, v, dv);
    }

    fn monitored_norm(&self, y: &[T]) -> T {
        norm2(&y[..self.n])
    }
}

/// Integrates the base point together with `V(t) = Φ_t V₀`.
///
/// Tangent growth is not checked against the blow-up bound; only the base
/// point is. A warning is recorded the first time the columns of `V` become
/// numerically dependent (`σ_min ≤ 1e-12·σ_max`).
pub fn integrate_variational<T, F>(
    field: &F,
    x0: &[T],
    v0: &Matrix<T>,
    t_span: (T, T),
    cfg: &SolverConfig<T>,
) -> Result<VariationalRun<T>>
where
    T: Real,
    F: VectorField<T> + ?Sized,
{
    let n = field.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
    }
    if v0.rows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: v0.rows() });
    }
    let k = v0.cols();
    let sv = v0.singular_values();
    if k == 0 || sv[k - 1] <= T::lit(1e-12) * sv[0] {
        return Err(Error::DegenerateFrame { column: k.saturating_sub(1) });
    }
    let mut sys = Tangent { field, n, k, jac: vec![T::zero(); n * n], work: JacobianWork::new(n) };
    let mut y0 = x0.to_vec();
    y0.extend_from_slice(v0.as_slice());
    let mut tape = TrajectoryTape::new(n);
    let mut matrices = Vec::new();
    let mut warnings = Vec::new();
    let threshold = T::lit(1e-12);
    integrate(&mut sys, t_span.0, &y0, t_span.1, cfg, |ev| {
        if ev.is_sample {
            tape.push(ev.t, &ev.y[..n]);
            let v = Matrix::from_row_slice(n, k, &ev.y[n..]);
            if warnings.is_empty() {
                let s = v.singular_values();
                if !(s[k - 1] > threshold * s[0]) {
                    warnings.push(format!(
                        "tangent columns numerically dependent at t = {} (sigma_min/sigma_max = {:e}); use the frame method",
                        ev.t.as_f64(),
                        (s[k - 1] / s[0]).as_f64()
                    ));
                }
            }
            matrices.push(v);
        }
        Ok(())
    })?;
    Ok(VariationalRun { tape, matrices, warnings })
}
