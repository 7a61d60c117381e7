#![allow(dead_code)]
//! Test-only oracles, written independently of the library kernels.

use lyapunov_frames::dynamics::{eval_jacobian, VectorField};

pub fn matvec(a: &[f64], n: usize, m: usize, v: &[f64]) -> Vec<f64> {
    (0..n).map(|i| (0..m).map(|j| a[i * m + j] * v[j]).sum()).collect()
}

/// One RK4 step of `x' = S(x)`, `V' = DS(x) V` for `V` stored column-wise.
pub fn tangent_rk4(field: &dyn VectorField<f64>, x: &mut [f64], cols: &mut [Vec<f64>], h: f64) {
    let n = x.len();
    let rhs = |x: &[f64], cols: &[Vec<f64>]| -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut fx = vec![0.0; n];
        field.eval_into(x, &mut fx);
        let j = eval_jacobian(field, x).unwrap();
        let dv = cols.iter().map(|c| matvec(j.as_slice(), n, n, c)).collect();
        (fx, dv)
    };
    let axpy = |x: &[f64], d: &[f64], s: f64| -> Vec<f64> { x.iter().zip(d).map(|(a, b)| a + s * b).collect() };
    let (k1x, k1v) = rhs(x, cols);
    let c2: Vec<Vec<f64>> = cols.iter().zip(&k1v).map(|(c, d)| axpy(c, d, h / 2.0)).collect();
    let (k2x, k2v) = rhs(&axpy(x, &k1x, h / 2.0), &c2);
    let c3: Vec<Vec<f64>> = cols.iter().zip(&k2v).map(|(c, d)| axpy(c, d, h / 2.0)).collect();
    let (k3x, k3v) = rhs(&axpy(x, &k2x, h / 2.0), &c3);
    let c4: Vec<Vec<f64>> = cols.iter().zip(&k3v).map(|(c, d)| axpy(c, d, h)).collect();
    let (k4x, k4v) = rhs(&axpy(x, &k3x, h), &c4);
    for i in 0..n {
        x[i] += h / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
    }
    for (c, idx) in cols.iter_mut().zip(0..) {
        for i in 0..n {
            c[i] += h / 6.0 * (k1v[idx][i] + 2.0 * k2v[idx][i] + 2.0 * k3v[idx][i] + k4v[idx][i]);
        }
    }
}

/// Modified Gram–Schmidt; returns the norms and leaves `cols` orthonormal.
/// Also returns the full `R` (column-major upper factor) for coupling checks.
pub fn mgs(cols: &mut [Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let l = cols.len();
    let mut r = vec![vec![0.0; l]; l];
    for k in 0..l {
        for j in 0..k {
            let d: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
            r[j][k] = d;
            let qj = cols[j].clone();
            for (v, q) in cols[k].iter_mut().zip(&qj) {
                *v -= d * q;
            }
        }
        let nrm = cols[k].iter().map(|v| v * v).sum::<f64>().sqrt();
        r[k][k] = nrm;
        cols[k].iter_mut().for_each(|v| *v /= nrm);
    }
    ((0..l).map(|k| r[k][k]).collect(), r)
}

/// Discrete QR (Benettin) run: plain tangent integration with Gram–Schmidt
/// after every step. Returns final columns and accumulated log norms.
pub fn benettin(field: &dyn VectorField<f64>, x0: &[f64], cols0: Vec<Vec<f64>>, t: f64, h: f64) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let steps = (t / h).round() as usize;
    let mut x = x0.to_vec();
    let mut cols = cols0;
    let mut acc = vec![0.0; cols.len()];
    for _ in 0..steps {
        tangent_rk4(field, &mut x, &mut cols, h);
        let (z, _) = mgs(&mut cols);
        for (a, zk) in acc.iter_mut().zip(z) {
            *a += zk.ln();
        }
    }
    (x, cols, acc)
}

/// Splitmix-style deterministic numbers in `[-1, 1)` for test inputs.
pub fn pseudo_random(seed: u64, count: usize) -> Vec<f64> {
    let mut s = seed.wrapping_add(0x9E3779B97F4A7C15);
    (0..count)
        .map(|_| {
            s = s.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = s;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}
