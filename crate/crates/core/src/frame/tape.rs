//! Time-sampled `ω_k` and coupling record along one orbit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{eval_jacobian, TrajectoryTape, VectorField};
use crate::error::{Error, Result};
use crate::scalar::{all_finite, fmt_real, Real};

/// Packed position of `r_jk` (`j > k`, zero-based) in row-major lower order.
#[inline]
pub fn coupling_index(j: usize, k: usize) -> usize {
    debug_assert!(j > k);
    j * (j - 1) / 2 + k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualTape<T> {
    ell: usize,
    times: Vec<T>,
    omega: Vec<T>,
    coupling: Vec<T>,
    base: Option<TrajectoryTape<T>>,
    field_name: Option<String>,
}

impl<T: Real> QualTape<T> {
    pub fn new(ell: usize) -> Self {
        Self { ell, times: Vec::new(), omega: Vec::new(), coupling: Vec::new(), base: None, field_name: None }
    }

    pub(crate) fn with_base(ell: usize, dim: usize, field_name: &str) -> Self {
        Self { base: Some(TrajectoryTape::new(dim)), field_name: Some(field_name.to_string()), ..Self::new(ell) }
    }

    /// Synthetic tape: `f(t)` returns `(ω, packed couplings)` at each grid time.
    pub fn from_fn(times: &[T], ell: usize, mut f: impl FnMut(T) -> (Vec<T>, Vec<T>)) -> Result<Self> {
        let mut tape = Self::new(ell);
        for &t in times {
            let (w, r) = f(t);
            tape.push(t, &w, &r, None)?;
        }
        if !tape.times.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidConfig("tape times must be strictly increasing".into()));
        }
        Ok(tape)
    }

    pub fn push(&mut self, t: T, omega: &[T], coupling: &[T], x: Option<&[T]>) -> Result<()> {
        let nc = self.ell * (self.ell.saturating_sub(1)) / 2;
        if omega.len() != self.ell {
            return Err(Error::DimensionMismatch { expected: self.ell, got: omega.len() });
        }
        if coupling.len() != nc {
            return Err(Error::DimensionMismatch { expected: nc, got: coupling.len() });
        }
        if !(t.is_finite() && all_finite(omega) && all_finite(coupling)) {
            return Err(Error::NonFinite { context: format!("in tape sample at t = {}", t.as_f64()) });
        }
        self.times.push(t);
        self.omega.extend_from_slice(omega);
        self.coupling.extend_from_slice(coupling);
        if let (Some(base), Some(x)) = (self.base.as_mut(), x) {
            base.push(t, x);
        }
        Ok(())
    }

    pub fn ell(&self) -> usize {
        self.ell
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

    pub fn start(&self) -> T {
        self.times[0]
    }

    pub fn end(&self) -> T {
        self.times[self.times.len() - 1]
    }

    pub fn omega_at(&self, i: usize) -> &[T] {
        &self.omega[i * self.ell..(i + 1) * self.ell]
    }

    pub fn couplings_at(&self, i: usize) -> &[T] {
        let nc = self.ell * (self.ell - 1) / 2;
        &self.coupling[i * nc..(i + 1) * nc]
    }

    /// `ω_k` over the whole grid.
    pub fn omega_series(&self, k: usize) -> Vec<T> {
        self.omega.iter().skip(k).step_by(self.ell).copied().collect()
    }

    pub fn base(&self) -> Option<&TrajectoryTape<T>> {
        self.base.as_ref()
    }

    pub fn field_name(&self) -> Option<&str> {
        self.field_name.as_deref()
    }

    /// Largest `|ω|` or `|r|` on the tape.
    pub fn max_abs_entry(&self) -> T {
        self.omega.iter().chain(&self.coupling).fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// `max_t ‖DS(x(t))‖₂` over the recorded base points.
    pub fn jacobian_norm_max<F: VectorField<T> + ?Sized>(&self, field: &F) -> Result<T> {
        let base = self
            .base
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("tape has no base trajectory".into()))?;
        let mut m = T::zero();
        for x in base.points() {
            m = m.max(eval_jacobian(field, x)?.spectral_norm());
        }
        Ok(m)
    }

    /// Copy restricted to samples with `t ≤ end` (the base trajectory too).
    pub fn truncated(&self, end: T) -> Self {
        let keep = self.times.partition_point(|t| *t <= end);
        let nc = self.ell * (self.ell.saturating_sub(1)) / 2;
        let base = self.base.as_ref().map(|b| {
            let mut nb = TrajectoryTape::with_capacity(b.dim(), keep);
            for i in 0..keep {
                nb.push(b.time(i), b.point(i));
            }
            nb
        });
        Self {
            ell: self.ell,
            times: self.times[..keep].to_vec(),
            omega: self.omega[..keep * self.ell].to_vec(),
            coupling: self.coupling[..keep * nc].to_vec(),
            base,
            field_name: self.field_name.clone(),
        }
    }

    pub(crate) fn reverse(&mut self) {
        let nc = self.ell * (self.ell.saturating_sub(1)) / 2;
        self.times.reverse();
        reverse_chunks(&mut self.omega, self.ell);
        reverse_chunks(&mut self.coupling, nc);
        if let Some(b) = self.base.as_mut() {
            let dim = b.dim();
            let mut nb = TrajectoryTape::with_capacity(dim, b.len());
            for i in (0..b.len()).rev() {
                nb.push(b.time(i), b.point(i));
            }
            *b = nb;
        }
    }

    /// Index `i` with `times[i] ≤ t ≤ times[i+1]`, or a coverage error.
    pub fn locate(&self, t: T) -> Result<usize> {
        let (a, b) = (self.start(), self.end());
        let slack = T::lit(1e-9) * T::one().max(a.abs()).max(b.abs());
        if !(t >= a - slack && t <= b + slack) || self.len() < 2 {
            return Err(Error::Coverage { requested: t.as_f64(), start: a.as_f64(), end: b.as_f64() });
        }
        let i = self.times.partition_point(|s| *s <= t);
        Ok(i.saturating_sub(1).min(self.len() - 2))
    }

    /// Running trapezoid integral of `ω_k` at every grid point.
    pub fn cumulative(&self, k: usize) -> Vec<T> {
        self.cumulative_shifted(k, T::zero())
    }

    /// Running trapezoid integral of `ω_k − shift`. Centering on a
    /// reference value makes averages of constant series exact.
    pub fn cumulative_shifted(&self, k: usize, shift: T) -> Vec<T> {
        let half = T::lit(0.5);
        let mut out = Vec::with_capacity(self.len());
        let mut acc = T::zero();
        out.push(acc);
        for i in 1..self.len() {
            let h = self.times[i] - self.times[i - 1];
            let (a, b) = (self.omega[(i - 1) * self.ell + k] - shift, self.omega[i * self.ell + k] - shift);
            acc += h * half * (a + b);
            out.push(acc);
        }
        out
    }

    /// `∫_{times[0]}^t ω_k` for the piecewise-linear interpolant, given `cumulative(k)`.
    pub fn cumulative_at(&self, k: usize, prefix: &[T], t: T) -> Result<T> {
        self.cumulative_shifted_at(k, prefix, t, T::zero())
    }

    /// Companion of [`Self::cumulative_shifted`] at an arbitrary covered time.
    pub fn cumulative_shifted_at(&self, k: usize, prefix: &[T], t: T, shift: T) -> Result<T> {
        let i = self.locate(t)?;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let (w0, w1) = (self.omega[i * self.ell + k] - shift, self.omega[(i + 1) * self.ell + k] - shift);
        let s = (t - t0) / (t1 - t0);
        let wt = w0 + s * (w1 - w0);
        Ok(prefix[i] + (t - t0) * T::lit(0.5) * (w0 + wt))
    }

    /// Signed trapezoid integral `∫_a^b ω_k dt`.
    pub fn integral(&self, k: usize, a: T, b: T) -> Result<T> {
        let prefix = self.cumulative(k);
        Ok(self.cumulative_at(k, &prefix, b)? - self.cumulative_at(k, &prefix, a)?)
    }

    /// Writes `t, omega_1..omega_l, r_21, r_31, r_32, …` with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.csv_header())?;
        let mut row = Vec::with_capacity(1 + self.ell * (self.ell + 1) / 2);
        for i in 0..self.len() {
            row.clear();
            row.push(fmt_real(self.times[i]));
            row.extend(self.omega_at(i).iter().map(|v| fmt_real(*v)));
            row.extend(self.couplings_at(i).iter().map(|v| fmt_real(*v)));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((1..=self.ell).map(|k| format!("omega_{k}")));
        for j in 1..self.ell {
            for k in 0..j {
                h.push(format!("r_{}{}", j + 1, k + 1));
            }
        }
        h
    }

    /// Reads a tape written by [`QualTape::write_csv`] (no base trajectory).
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        let ell = headers.iter().filter(|h| h.starts_with("omega_")).count();
        if headers.len() != 1 + ell + ell * ell.saturating_sub(1) / 2 {
            return Err(Error::Parse(format!("unexpected QualTape header with {} columns", headers.len())));
        }
        let mut tape = Self::new(ell);
        for rec in rd.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>().map(T::lit).map_err(|e| Error::Parse(format!("'{s}': {e}"))))
                .collect::<Result<Vec<T>>>()?;
            tape.push(vals[0], &vals[1..1 + ell], &vals[1 + ell..], None)?;
        }
        Ok(tape)
    }
}

fn reverse_chunks<T>(v: &mut [T], chunk: usize) {
    if chunk == 0 {
        return;
    }
    let n = v.len() / chunk;
    for i in 0..n / 2 {
        for c in 0..chunk {
            v.swap(i * chunk + c, (n - 1 - i) * chunk + c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_tape() -> QualTape<f64> {
        let two_pi = 2.0 * std::f64::consts::PI;
        let times: Vec<f64> = (0..=2000).map(|i| two_pi * i as f64 / 2000.0).collect();
        QualTape::from_fn(&times, 2, |t| (vec![t.sin(), 1.5], vec![t.cos()])).unwrap()
    }

    #[test]
    fn integrals() {
        let tape = sine_tape();
        let end = tape.end();
        assert!(tape.integral(0, 0.0, end).unwrap().abs() < 1e-10);
        assert!((tape.integral(1, 0.0, end).unwrap() - 1.5 * end).abs() < 1e-12);
        let part = tape.integral(0, 0.0, std::f64::consts::PI).unwrap();
        assert!((part - 2.0).abs() < 1e-5);
        assert!((tape.integral(1, 1.0, 0.25).unwrap() + 1.125).abs() < 1e-12);
        assert!(matches!(tape.integral(0, 0.0, 7.0), Err(Error::Coverage { .. })));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let tape = sine_tape();
        let mut buf = Vec::new();
        tape.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,omega_1,omega_2,r_21\n"));
        let back = QualTape::<f64>::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.times(), tape.times());
        for i in 0..tape.len() {
            assert_eq!(back.omega_at(i), tape.omega_at(i));
            assert_eq!(back.couplings_at(i), tape.couplings_at(i));
        }
    }

    #[test]
    fn header_for_three() {
        let t = QualTape::<f64>::new(3);
        assert_eq!(t.csv_header(), ["t", "omega_1", "omega_2", "omega_3", "r_21", "r_31", "r_32"]);
        assert_eq!(coupling_index(2, 1), 2);
    }

    #[test]
    fn rejects_bad_rows() {
        let mut t = QualTape::<f64>::new(2);
        assert!(t.push(0.0, &[1.0], &[0.0], None).is_err());
        assert!(t.push(0.0, &[1.0, f64::NAN], &[0.0], None).is_err());
        assert!(QualTape::from_fn(&[0.0, 0.0], 1, |_| (vec![0.0], vec![])).is_err());
    }
}
