//! Frames, Gram–Schmidt, the qualitative functions `ω_k` and the orthonormal
//! frame flow.

mod flow;
mod tape;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{eval_jacobian, VectorField};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{precision_tol, Real};

pub use flow::{evolve_frame, evolve_frame_on_orbit, FrameOptions, FrameRun, OrthoFrameState};
pub use tape::{coupling_index, QualTape};

/// `ℓ` tangent vectors at a point of `Rⁿ`, stored as the columns of an `n×ℓ` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame<T> {
    vectors: Matrix<T>,
}

impl<T: Real> Frame<T> {
    pub fn new(vectors: Matrix<T>) -> Result<Self> {
        if vectors.cols() == 0 || vectors.cols() > vectors.rows() {
            return Err(Error::InvalidConfig(format!(
                "frame of {} vectors in dimension {}",
                vectors.cols(),
                vectors.rows()
            )));
        }
        Ok(Self { vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.rows()
    }

    pub fn count(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &Matrix<T> {
        &self.vectors
    }

    /// Smallest singular value above `1e-12` times the largest.
    pub fn is_independent(&self) -> bool {
        let s = self.vectors.singular_values();
        s[s.len() - 1] > T::lit(1e-12) * s[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramSchmidtResult<T> {
    pub q: Matrix<T>,
    /// Unit upper-triangular; `input·Γ` has orthogonal columns.
    pub gamma: Matrix<T>,
    pub zeta: Vec<T>,
}

/// Classical Gram–Schmidt with one re-orthogonalization pass, in place on
/// the columns of a row-major `n×l` buffer. Returns the upper-triangular
/// factor `R` (`input = Q·R`, `R_kk = ζ_k`) or the first dependent column.
pub(crate) fn cgs2_in_place<T: Real>(n: usize, l: usize, a: &mut [T], r: &mut [T], scale: T) -> Result<()> {
    r.iter_mut().for_each(|v| *v = T::zero());
    let tiny = T::lit(1e-12) * scale;
    for k in 0..l {
        for _pass in 0..2 {
            for j in 0..k {
                let mut c = T::zero();
                for i in 0..n {
                    c += a[i * l + j] * a[i * l + k];
                }
                for i in 0..n {
                    let qj = a[i * l + j];
                    a[i * l + k] -= c * qj;
                }
                r[j * l + k] += c;
            }
        }
        let mut norm = T::zero();
        for i in 0..n {
            norm += a[i * l + k] * a[i * l + k];
        }
        let norm = norm.sqrt();
        if !(norm > tiny) {
            return Err(Error::DegenerateFrame { column: k });
        }
        r[k * l + k] = norm;
        for i in 0..n {
            a[i * l + k] /= norm;
        }
    }
    Ok(())
}

/// Orthonormalizes a frame: `Q = input·Γ·diag(ζ)⁻¹`.
pub fn gram_schmidt<T: Real>(frame: &Frame<T>) -> Result<GramSchmidtResult<T>> {
    let (n, l) = (frame.dim(), frame.count());
    let mut q = frame.vectors().clone();
    let scale = (0..l)
        .map(|j| crate::scalar::norm2(&q.column(j)))
        .fold(T::zero(), T::max);
    let mut r = vec![T::zero(); l * l];
    cgs2_in_place(n, l, q.as_mut_slice(), &mut r, scale)?;
    let zeta: Vec<T> = (0..l).map(|k| r[k * l + k]).collect();
    // Γ = R⁻¹·diag(ζ), column by column back-substitution
    let mut gamma = Matrix::zeros(l, l);
    for c in 0..l {
        gamma[(c, c)] = T::one();
        for i in (0..c).rev() {
            let mut s = T::zero();
            for j in i + 1..=c {
                s += r[i * l + j] * gamma[(j, c)];
            }
            gamma[(i, c)] = -s / r[i * l + i];
        }
    }
    Ok(GramSchmidtResult { q, gamma, zeta })
}

/// Orthonormalized standard-normal `n×l` matrix from a ChaCha8 stream.
pub fn random_orthonormal_frame<T: Real>(n: usize, l: usize, seed: u64) -> Result<Matrix<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Matrix::from_fn(n, l, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        T::lit(v)
    });
    Ok(gram_schmidt(&Frame::new(m)?)?.q)
}

/// `max |QᵀQ − I|` for a row-major `n×l` buffer.
pub(crate) fn deviation_flat<T: Real>(n: usize, l: usize, q: &[T]) -> T {
    let mut dev = T::zero();
    for a in 0..l {
        for b in a..l {
            let mut g = T::zero();
            for i in 0..n {
                g += q[i * l + a] * q[i * l + b];
            }
            let target = if a == b { T::one() } else { T::zero() };
            dev = dev.max((g - target).abs());
        }
    }
    dev
}

fn check_orthonormal<T: Real>(q: &Matrix<T>) -> Result<()> {
    let dev = q.orthonormality_deviation();
    if !(dev <= precision_tol::<T>(1e-8, 1e3)) {
        return Err(Error::NotOrthonormal { deviation: dev.as_f64() });
    }
    Ok(())
}

fn projected_jacobian<T: Real, F: VectorField<T> + ?Sized>(field: &F, x: &[T], q: &Matrix<T>) -> Result<Matrix<T>> {
    if q.rows() != field.dim() {
        return Err(Error::DimensionMismatch { expected: field.dim(), got: q.rows() });
    }
    check_orthonormal(q)?;
    let j = eval_jacobian(field, x)?;
    Ok(q.tr_matmul(&j.matmul(q)))
}

/// `ω_k = ⟨q_k, DS(x) q_k⟩`.
pub fn omega_values<T: Real, F: VectorField<T> + ?Sized>(field: &F, x: &[T], q: &Matrix<T>) -> Result<Vec<T>> {
    Ok(projected_jacobian(field, x, q)?.diagonal())
}

/// Strict-lower couplings `r_jk = C_kj + C_jk` (`j > k`, `C = QᵀDS Q`),
/// packed row-major: `r_21, r_31, r_32, …`.
pub fn coupling_values<T: Real, F: VectorField<T> + ?Sized>(field: &F, x: &[T], q: &Matrix<T>) -> Result<Vec<T>> {
    let c = projected_jacobian(field, x, q)?;
    let l = c.rows();
    let mut out = Vec::with_capacity(l * (l - 1) / 2);
    for j in 1..l {
        for k in 0..j {
            out.push(c[(k, j)] + c[(j, k)]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::builtin_field;

    fn rot45() -> Matrix<f64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Matrix::from_rows(&[vec![s, -s], vec![s, s]])
    }

    #[test]
    fn orthonormal_input_is_fixed() {
        let q = rot45();
        let gs = gram_schmidt(&Frame::new(q.clone()).unwrap()).unwrap();
        assert!(gs.gamma.sub(&Matrix::identity(2)).max_abs() < 1e-15);
        assert!(gs.zeta.iter().all(|z| (z - 1.0).abs() < 1e-15));
        assert!(gs.q.sub(&q).max_abs() < 1e-15);
    }

    #[test]
    fn hand_example() {
        let u = Matrix::from_columns(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        let gs = gram_schmidt(&Frame::new(u).unwrap()).unwrap();
        assert_eq!(gs.q.as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(gs.gamma.as_slice(), &[1.0, -1.0, 0.0, 1.0]);
        assert_eq!(gs.zeta, vec![1.0, 1.0]);
    }

    #[test]
    fn random_frame_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m: Matrix<f64> = Matrix::from_fn(5, 3, |_, _| StandardNormal.sample(&mut rng));
        let gs = gram_schmidt(&Frame::new(m.clone()).unwrap()).unwrap();
        let w = m.matmul(&gs.gamma);
        let q = Matrix::from_fn(5, 3, |i, j| w[(i, j)] / gs.zeta[j]);
        assert!(q.orthonormality_deviation() <= 1e-12);
        assert!(q.sub(&gs.q).max_abs() < 1e-12);
        for i in 0..3 {
            assert_eq!(gs.gamma[(i, i)], 1.0);
            for j in 0..i {
                assert_eq!(gs.gamma[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn dependent_column_named() {
        let u = Matrix::from_columns(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![2.0, -3.0, 0.0]]);
        assert_eq!(gram_schmidt(&Frame::new(u).unwrap()).unwrap_err(), Error::DegenerateFrame { column: 2 });
    }

    #[test]
    fn omega_and_coupling_examples() {
        let f = builtin_field::<f64>("linear_diag:2,-1").unwrap();
        assert_eq!(omega_values(f.as_ref(), &[0.3, 0.1], &Matrix::identity(2)).unwrap(), vec![2.0, -1.0]);
        assert_eq!(coupling_values(f.as_ref(), &[0.3, 0.1], &Matrix::identity(2)).unwrap(), vec![0.0]);
        let w = omega_values(f.as_ref(), &[0.0, 0.0], &rot45()).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-14 && (w[1] - 0.5).abs() < 1e-14);
        let r = coupling_values(f.as_ref(), &[0.0, 0.0], &rot45()).unwrap();
        assert!((r[0] + 3.0).abs() < 1e-14);
        let rot = builtin_field::<f64>("rotation").unwrap();
        let w = omega_values(rot.as_ref(), &[1.0, 2.0], &rot45()).unwrap();
        assert!(w.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn non_orthonormal_rejected() {
        let f = builtin_field::<f64>("rotation").unwrap();
        let q = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
        assert!(matches!(omega_values(f.as_ref(), &[0.0, 0.0], &q), Err(Error::NotOrthonormal { .. })));
    }

    #[test]
    fn seeded_frames_reproducible() {
        let a: Matrix<f64> = random_orthonormal_frame(4, 2, 11).unwrap();
        let b: Matrix<f64> = random_orthonormal_frame(4, 2, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.orthonormality_deviation() < 1e-14);
    }
}
