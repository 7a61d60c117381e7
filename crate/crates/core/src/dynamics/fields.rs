//! Vector fields `S: Rⁿ → Rⁿ` and their Jacobians.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{all_finite, norm2, Real};

/// A smooth autonomous vector field on `Rⁿ`.
///
/// `jacobian_into` returns `false` when no closed form exists; callers then
/// fall back to central differences (see [`eval_jacobian`]).
pub trait VectorField<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Writes `S(x)` into `out`. Both slices have length `dim()`.
    fn eval_into(&self, x: &[T], out: &mut [T]);

    /// Writes the row-major Jacobian `DS(x)` into `out` (length `dim()²`).
    fn jacobian_into(&self, _x: &[T], _out: &mut [T]) -> bool {
        false
    }

    fn has_analytic_jacobian(&self) -> bool;

    /// Closed-form divergence `trace DS(x)`, when the field provides one.
    fn divergence(&self, _x: &[T]) -> Option<T> {
        None
    }
}

pub type SharedField<T> = Arc<dyn VectorField<T>>;

/// Base central-difference step, scaled by `max(1, |x|)` at use.
pub fn fd_step<T: Real>() -> T {
    if T::epsilon() < T::lit(1e-12) {
        T::lit(1e-6)
    } else {
        T::epsilon().cbrt()
    }
}

fn check_dim<T: Real, F: VectorField<T> + ?Sized>(field: &F, x: &[T]) -> Result<()> {
    if x.len() != field.dim() {
        return Err(Error::DimensionMismatch { expected: field.dim(), got: x.len() });
    }
    Ok(())
}

pub fn eval_field<T: Real, F: VectorField<T> + ?Sized>(field: &F, x: &[T]) -> Result<Vec<T>> {
    check_dim(field, x)?;
    let mut out = vec![T::zero(); field.dim()];
    field.eval_into(x, &mut out);
    if !all_finite(&out) {
        return Err(Error::NonFinite { context: format!("evaluating field '{}'", field.name()) });
    }
    Ok(out)
}

/// `DS(x)`: analytic when available, otherwise central differences.
pub fn eval_jacobian<T: Real, F: VectorField<T> + ?Sized>(field: &F, x: &[T]) -> Result<Matrix<T>> {
    check_dim(field, x)?;
    let n = field.dim();
    let mut out = vec![T::zero(); n * n];
    JacobianWork::new(n).eval(field, x, &mut out);
    Ok(Matrix::from_row_slice(n, n, &out))
}

/// Central-difference Jacobian regardless of whether a closed form exists.
pub fn jacobian_fd<T: Real, F: VectorField<T> + ?Sized>(field: &F, x: &[T]) -> Result<Matrix<T>> {
    check_dim(field, x)?;
    let n = field.dim();
    let mut out = vec![T::zero(); n * n];
    JacobianWork::new(n).finite_difference(field, x, &mut out);
    Ok(Matrix::from_row_slice(n, n, &out))
}

/// Scratch buffers for Jacobian evaluation inside integrator loops.
#[derive(Debug, Clone)]
pub(crate) struct JacobianWork<T> {
    xp: Vec<T>,
    fp: Vec<T>,
    fm: Vec<T>,
}

impl<T: Real> JacobianWork<T> {
    pub(crate) fn new(n: usize) -> Self {
        Self { xp: vec![T::zero(); n], fp: vec![T::zero(); n], fm: vec![T::zero(); n] }
    }

    #[inline]
    pub(crate) fn eval<F: VectorField<T> + ?Sized>(&mut self, field: &F, x: &[T], out: &mut [T]) {
        if !field.jacobian_into(x, out) {
            self.finite_difference(field, x, out);
        }
    }

    pub(crate) fn finite_difference<F: VectorField<T> + ?Sized>(&mut self, field: &F, x: &[T], out: &mut [T]) {
        let n = x.len();
        let h = fd_step::<T>() * T::one().max(norm2(x));
        let two_h = h + h;
        for j in 0..n {
            self.xp.copy_from_slice(x);
            self.xp[j] = x[j] + h;
            field.eval_into(&self.xp, &mut self.fp);
            self.xp[j] = x[j] - h;
            field.eval_into(&self.xp, &mut self.fm);
            for i in 0..n {
                out[i * n + j] = (self.fp[i] - self.fm[i]) / two_h;
            }
        }
    }
}

/// `S(x) = A x` for a constant matrix.
#[derive(Debug, Clone)]
pub struct LinearField<T> {
    name: String,
    matrix: Matrix<T>,
}

impl<T: Real> LinearField<T> {
    pub fn new(name: impl Into<String>, matrix: Matrix<T>) -> Self {
        assert_eq!(matrix.rows(), matrix.cols(), "linear field needs a square matrix");
        Self { name: name.into(), matrix }
    }

    pub fn diag(diag: &[T]) -> Self {
        let label = diag.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
        Self::new(format!("linear_diag:{label}"), Matrix::from_diagonal(diag))
    }

    /// `[[1, 3], [0, -1]]`.
    pub fn nonnormal() -> Self {
        Self::new(
            "linear_nonnormal",
            Matrix::from_rows(&[vec![T::one(), T::lit(3.0)], vec![T::zero(), -T::one()]]),
        )
    }

    /// `S(x₁, x₂) = (−x₂, x₁)`.
    pub fn rotation() -> Self {
        Self::new(
            "rotation",
            Matrix::from_rows(&[vec![T::zero(), -T::one()], vec![T::one(), T::zero()]]),
        )
    }

    /// `x'' = −ω² x` as a first-order system in `(x, v)`.
    pub fn harmonic(omega: T) -> Self {
        Self::new(
            format!("harmonic:{omega}"),
            Matrix::from_rows(&[vec![T::zero(), T::one()], vec![-omega * omega, T::zero()]]),
        )
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }
}

impl<T: Real> VectorField<T> for LinearField<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.matrix.rows()
    }

    fn eval_into(&self, x: &[T], out: &mut [T]) {
        let n = self.dim();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = self.matrix.row(i).iter().zip(x).map(|(a, b)| *a * *b).sum();
        }
    }

    fn jacobian_into(&self, _x: &[T], out: &mut [T]) -> bool {
        out.copy_from_slice(self.matrix.as_slice());
        true
    }

    fn has_analytic_jacobian(&self) -> bool {
        true
    }

    fn divergence(&self, _x: &[T]) -> Option<T> {
        Some(self.matrix.trace())
    }
}

#[derive(Debug, Clone)]
pub struct Lorenz<T> {
    pub sigma: T,
    pub rho: T,
    pub beta: T,
    name: String,
}

impl<T: Real> Lorenz<T> {
    pub fn new(sigma: T, rho: T, beta: T) -> Self {
        Self { sigma, rho, beta, name: "lorenz".into() }
    }

    /// σ = 10, ρ = 28, β = 8/3.
    pub fn classic() -> Self {
        Self::new(T::lit(10.0), T::lit(28.0), T::lit(8.0) / T::lit(3.0))
    }
}

impl<T: Real> VectorField<T> for Lorenz<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        3
    }

    fn eval_into(&self, x: &[T], out: &mut [T]) {
        out[0] = self.sigma * (x[1] - x[0]);
        out[1] = x[0] * (self.rho - x[2]) - x[1];
        out[2] = x[0] * x[1] - self.beta * x[2];
    }

    fn jacobian_into(&self, x: &[T], out: &mut [T]) -> bool {
        let (o, one) = (T::zero(), T::one());
        out.copy_from_slice(&[
            -self.sigma, self.sigma, o,
            self.rho - x[2], -one, -x[0],
            x[1], x[0], -self.beta,
        ]);
        true
    }

    fn has_analytic_jacobian(&self) -> bool {
        true
    }

    fn divergence(&self, _x: &[T]) -> Option<T> {
        Some(-(self.sigma + T::one() + self.beta))
    }
}

/// `x' = y, y' = μ(1 − x²) y − x`.
#[derive(Debug, Clone)]
pub struct VanDerPol<T> {
    pub mu: T,
    name: String,
}

impl<T: Real> VanDerPol<T> {
    pub fn new(mu: T) -> Self {
        Self { mu, name: format!("vanderpol:{mu}") }
    }
}

impl<T: Real> VectorField<T> for VanDerPol<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        2
    }

    fn eval_into(&self, x: &[T], out: &mut [T]) {
        out[0] = x[1];
        out[1] = self.mu * (T::one() - x[0] * x[0]) * x[1] - x[0];
    }

    fn jacobian_into(&self, x: &[T], out: &mut [T]) -> bool {
        let two = T::lit(2.0);
        out[0] = T::zero();
        out[1] = T::one();
        out[2] = -two * self.mu * x[0] * x[1] - T::one();
        out[3] = self.mu * (T::one() - x[0] * x[0]);
        true
    }

    fn has_analytic_jacobian(&self) -> bool {
        true
    }

    fn divergence(&self, x: &[T]) -> Option<T> {
        Some(self.mu * (T::one() - x[0] * x[0]))
    }
}

/// One term `coef · Π x_j^{e_j}` contributing to component `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialTerm {
    pub target: usize,
    pub coef: f64,
    pub monomial: Vec<u32>,
}

/// JSON schema for custom fields: `{"dim": n, "terms": [{"target", "coef", "monomial"}]}`.
/// `target` is a zero-based component index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialSpec {
    pub dim: usize,
    pub terms: Vec<PolynomialTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PolynomialField<T> {
    name: String,
    dim: usize,
    terms: Vec<(usize, T, Vec<u32>)>,
}

impl<T: Real> PolynomialField<T> {
    pub fn from_spec(spec: &PolynomialSpec) -> Result<Self> {
        if spec.dim == 0 {
            return Err(Error::Parse("polynomial field needs dim >= 1".into()));
        }
        let mut terms = Vec::with_capacity(spec.terms.len());
        for (k, term) in spec.terms.iter().enumerate() {
            if term.target >= spec.dim {
                return Err(Error::Parse(format!(
                    "term {k}: target {} out of range for dim {}",
                    term.target, spec.dim
                )));
            }
            if term.monomial.len() != spec.dim {
                return Err(Error::Parse(format!(
                    "term {k}: monomial has {} exponents, expected {}",
                    term.monomial.len(),
                    spec.dim
                )));
            }
            if !term.coef.is_finite() {
                return Err(Error::Parse(format!("term {k}: non-finite coefficient")));
            }
            terms.push((term.target, T::lit(term.coef), term.monomial.clone()));
        }
        Ok(Self { name: spec.name.clone().unwrap_or_else(|| "polynomial".into()), dim: spec.dim, terms })
    }

    fn monomial_value(x: &[T], exps: &[u32]) -> T {
        exps.iter().zip(x).fold(T::one(), |acc, (e, xi)| acc * xi.powi(*e as i32))
    }
}

impl<T: Real> VectorField<T> for PolynomialField<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (target, coef, exps) in &self.terms {
            out[*target] += *coef * Self::monomial_value(x, exps);
        }
    }

    fn jacobian_into(&self, x: &[T], out: &mut [T]) -> bool {
        let n = self.dim;
        out.iter_mut().for_each(|o| *o = T::zero());
        for (target, coef, exps) in &self.terms {
            for j in 0..n {
                if exps[j] == 0 {
                    continue;
                }
                let mut d = *coef * T::from_u32(exps[j]).unwrap();
                for (k, (e, xk)) in exps.iter().zip(x).enumerate() {
                    let p = if k == j { *e - 1 } else { *e };
                    d *= xk.powi(p as i32);
                }
                out[target * n + j] += d;
            }
        }
        true
    }

    fn has_analytic_jacobian(&self) -> bool {
        true
    }

    fn divergence(&self, x: &[T]) -> Option<T> {
        let n = self.dim;
        let mut jac = vec![T::zero(); n * n];
        self.jacobian_into(x, &mut jac);
        Some((0..n).map(|i| jac[i * n + i]).sum())
    }
}

type EvalFn<T> = dyn Fn(&[T], &mut [T]) + Send + Sync;

/// A field defined by closures; the Jacobian is optional.
pub struct ClosureField<T> {
    name: String,
    dim: usize,
    eval: Box<EvalFn<T>>,
    jacobian: Option<Box<EvalFn<T>>>,
}

impl<T: Real> ClosureField<T> {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        eval: impl Fn(&[T], &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), dim, eval: Box::new(eval), jacobian: None }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&[T], &mut [T]) + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Box::new(jac));
        self
    }
}

impl<T: Real> VectorField<T> for ClosureField<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[T], out: &mut [T]) {
        (self.eval)(x, out)
    }

    fn jacobian_into(&self, x: &[T], out: &mut [T]) -> bool {
        match &self.jacobian {
            Some(j) => {
                j(x, out);
                true
            }
            None => false,
        }
    }

    fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }
}

/// `X = S + P`: pointwise sum of two fields of equal dimension.
pub struct SumField<T> {
    name: String,
    first: SharedField<T>,
    second: SharedField<T>,
}

impl<T: Real> SumField<T> {
    pub fn new(first: SharedField<T>, second: SharedField<T>) -> Self {
        assert_eq!(first.dim(), second.dim(), "summed fields must share a dimension");
        Self { name: format!("{}+{}", first.name(), second.name()), first, second }
    }
}

impl<T: Real> VectorField<T> for SumField<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.first.dim()
    }

    fn eval_into(&self, x: &[T], out: &mut [T]) {
        let mut tmp = vec![T::zero(); out.len()];
        self.first.eval_into(x, out);
        self.second.eval_into(x, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += *t);
    }

    fn jacobian_into(&self, x: &[T], out: &mut [T]) -> bool {
        let n = self.dim();
        let mut tmp = vec![T::zero(); n * n];
        let mut work = JacobianWork::new(n);
        work.eval(self.first.as_ref(), x, out);
        work.eval(self.second.as_ref(), x, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += *t);
        true
    }

    fn has_analytic_jacobian(&self) -> bool {
        self.first.has_analytic_jacobian() && self.second.has_analytic_jacobian()
    }

    fn divergence(&self, x: &[T]) -> Option<T> {
        Some(self.first.divergence(x)? + self.second.divergence(x)?)
    }
}

/// Constant field `c` (useful as a perturbation `X = S + c`).
#[derive(Debug, Clone)]
pub struct ConstantField<T> {
    name: String,
    value: Vec<T>,
}

impl<T: Real> ConstantField<T> {
    pub fn new(value: Vec<T>) -> Self {
        Self { name: "constant".into(), value }
    }
}

impl<T: Real> VectorField<T> for ConstantField<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.value.len()
    }

    fn eval_into(&self, _x: &[T], out: &mut [T]) {
        out.copy_from_slice(&self.value);
    }

    fn jacobian_into(&self, _x: &[T], out: &mut [T]) -> bool {
        out.iter_mut().for_each(|o| *o = T::zero());
        true
    }

    fn has_analytic_jacobian(&self) -> bool {
        true
    }

    fn divergence(&self, _x: &[T]) -> Option<T> {
        Some(T::zero())
    }
}

fn parse_list<T: Real>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map(T::lit)
                .map_err(|e| Error::Parse(format!("bad number '{p}': {e}")))
        })
        .collect()
}

/// Resolves a built-in field from its name string.
///
/// Accepted forms: `linear_diag:2,0,-1`, `linear_nonnormal`,
/// `linear:a11,a12;a21,a22`, `rotation`, `harmonic[:omega]`,
/// `vanderpol[:mu]`, `lorenz[:sigma,rho,beta]`.
pub fn builtin_field<T: Real>(name: &str) -> Result<SharedField<T>> {
    let (head, args) = match name.split_once(':') {
        Some((h, a)) => (h.trim(), Some(a.trim())),
        None => (name.trim(), None),
    };
    let field: SharedField<T> = match (head, args) {
        ("linear_diag", Some(a)) => {
            let d = parse_list::<T>(a)?;
            if d.is_empty() {
                return Err(Error::Parse("linear_diag needs at least one entry".into()));
            }
            Arc::new(LinearField::diag(&d))
        }
        ("linear_nonnormal", None) => Arc::new(LinearField::nonnormal()),
        ("linear", Some(a)) => {
            let rows = a.split(';').map(parse_list::<T>).collect::<Result<Vec<_>>>()?;
            let n = rows.len();
            if n == 0 || rows.iter().any(|r| r.len() != n) {
                return Err(Error::Parse(format!("linear:{a} is not a square matrix")));
            }
            Arc::new(LinearField::new(name, Matrix::from_rows(&rows)))
        }
        ("rotation", None) => Arc::new(LinearField::rotation()),
        ("harmonic", a) => {
            let omega = match a {
                Some(a) => single(parse_list::<T>(a)?, name)?,
                None => T::one(),
            };
            Arc::new(LinearField::harmonic(omega))
        }
        ("vanderpol", a) => {
            let mu = match a {
                Some(a) => single(parse_list::<T>(a)?, name)?,
                None => T::one(),
            };
            Arc::new(VanDerPol::new(mu))
        }
        ("lorenz", None) => Arc::new(Lorenz::classic()),
        ("lorenz", Some(a)) => {
            let p = parse_list::<T>(a)?;
            if p.len() != 3 {
                return Err(Error::Parse("lorenz takes sigma,rho,beta".into()));
            }
            Arc::new(Lorenz::new(p[0], p[1], p[2]))
        }
        _ => return Err(Error::Parse(format!("unknown field '{name}'"))),
    };
    Ok(field)
}

fn single<T: Real>(v: Vec<T>, name: &str) -> Result<T> {
    match v.as_slice() {
        [x] => Ok(*x),
        _ => Err(Error::Parse(format!("'{name}' takes exactly one parameter"))),
    }
}

/// Starting point used when an experiment does not supply one.
pub fn default_initial_point(name: &str) -> Option<Vec<f64>> {
    let head = name.split(':').next().unwrap_or("").trim();
    match head {
        "lorenz" => Some(vec![1.0, 1.0, 1.0]),
        "vanderpol" => Some(vec![2.0, 0.0]),
        "rotation" | "harmonic" => Some(vec![1.0, 0.0]),
        // the equilibrium: linear spectra do not depend on the base orbit
        "linear_nonnormal" => Some(vec![0.0, 0.0]),
        "linear_diag" => {
            let n = name.split_once(':')?.1.split(',').count();
            Some(vec![0.0; n])
        }
        "linear" => {
            let n = name.split_once(':')?.1.split(';').count();
            Some(vec![0.0; n])
        }
        _ => None,
    }
}

/// Names of the built-in library with default parameters.
pub const BUILTIN_NAMES: &[&str] = &[
    "linear_diag:2,0,-1",
    "linear_nonnormal",
    "rotation",
    "harmonic:1",
    "vanderpol:1",
    "lorenz",
];
