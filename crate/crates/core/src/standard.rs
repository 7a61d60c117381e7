//! The reduced standard linear system `dy/dt = y·A(t)` with lower-triangular
//! `A`, its explicit back-substitution solver and a generic RK solver.

use std::cell::Cell;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, OdeSystem, SolverConfig};
use crate::error::{Error, Result};
use crate::frame::{coupling_index, QualTape};
use crate::linalg::Matrix;
use crate::scalar::{all_finite, fmt_real, norm2, Real};

/// Packed position of `a_ij` (`i ≥ j`, zero-based): `a_11, a_21, a_22, a_31, …`.
#[inline]
pub fn lower_index(i: usize, j: usize) -> usize {
    debug_assert!(i >= j);
    i * (i + 1) / 2 + j
}

/// Where a reduced tape came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TapeSource {
    pub field: Option<String>,
    pub x0: Option<Vec<f64>>,
    pub frame_seed: Option<u64>,
    /// One-based frame indices kept, increasing.
    pub selected: Vec<usize>,
    /// Couplings are read from the frame that was actually integrated.
    pub coupling_source: String,
    /// Order of the frame directions the tape was built from.
    pub frame_order: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedSystemTape<T> {
    ell: usize,
    times: Vec<T>,
    entries: Vec<T>,
    pub source: TapeSource,
}

impl<T: Real> ReducedSystemTape<T> {
    /// `entries` holds the packed lower triangle per sample.
    pub fn new(ell: usize, times: Vec<T>, entries: Vec<T>, source: TapeSource) -> Result<Self> {
        let per = ell * (ell + 1) / 2;
        if ell == 0 {
            return Err(Error::InvalidIndices("reduced system needs at least one direction".into()));
        }
        if times.len() < 2 {
            return Err(Error::InvalidConfig("reduced tape needs at least two samples".into()));
        }
        if entries.len() != per * times.len() {
            return Err(Error::DimensionMismatch { expected: per * times.len(), got: entries.len() });
        }
        if !times.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidConfig("reduced tape times must be strictly increasing".into()));
        }
        if !all_finite(&times) || !all_finite(&entries) {
            return Err(Error::NonFinite { context: "in reduced tape".into() });
        }
        Ok(Self { ell, times, entries, source })
    }

    /// Samples `A(t)` (lower triangle of the returned matrix) on a grid.
    pub fn from_fn(times: &[T], ell: usize, mut a: impl FnMut(T) -> Matrix<T>) -> Result<Self> {
        let mut entries = Vec::with_capacity(times.len() * ell * (ell + 1) / 2);
        for &t in times {
            let m = a(t);
            if m.rows() != ell || m.cols() != ell {
                return Err(Error::DimensionMismatch { expected: ell, got: m.rows() });
            }
            for i in 0..ell {
                for j in 0..=i {
                    entries.push(m[(i, j)]);
                }
            }
        }
        Self::new(ell, times.to_vec(), entries, TapeSource::default())
    }

    /// Constant `A` sampled on `[0, duration]` with the given stride.
    pub fn constant(a: &Matrix<T>, duration: T, stride: T) -> Result<Self> {
        let n = (duration / stride).round().to_usize().unwrap_or(1).max(1);
        let times: Vec<T> = (0..=n).map(|i| duration * T::from_usize_lossy(i) / T::from_usize_lossy(n)).collect();
        Self::from_fn(&times, a.rows(), |_| a.clone())
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

    fn per(&self) -> usize {
        self.ell * (self.ell + 1) / 2
    }

    pub fn packed_at(&self, s: usize) -> &[T] {
        let p = self.per();
        &self.entries[s * p..(s + 1) * p]
    }

    /// `a_ij` at sample `s`; zero above the diagonal.
    pub fn entry(&self, s: usize, i: usize, j: usize) -> T {
        if j > i {
            T::zero()
        } else {
            self.packed_at(s)[lower_index(i, j)]
        }
    }

    pub fn matrix_at(&self, s: usize) -> Matrix<T> {
        Matrix::from_fn(self.ell, self.ell, |i, j| self.entry(s, i, j))
    }

    /// Diagonal series `a_kk` over the grid.
    pub fn diagonal_series(&self, k: usize) -> Vec<T> {
        (0..self.len()).map(|s| self.packed_at(s)[lower_index(k, k)]).collect()
    }

    /// Time average of `a_kk` over `[start, start + duration]` by trapezoid.
    pub fn diagonal_average(&self, k: usize, duration: T) -> Result<T> {
        let end = self.check_coverage(duration)?;
        let d = self.diagonal_series(k);
        let mut acc = T::zero();
        let half = T::lit(0.5);
        for s in 1..self.len() {
            let (t0, t1) = (self.times[s - 1], self.times[s]);
            if t0 >= end {
                break;
            }
            let (b, db) = if t1 > end { (end, d[s - 1] + (d[s] - d[s - 1]) * (end - t0) / (t1 - t0)) } else { (t1, d[s]) };
            acc += (b - t0) * half * (d[s - 1] + db);
        }
        Ok(acc / duration)
    }

    pub fn max_abs_entry(&self) -> T {
        self.entries.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Linear interpolation of the packed triangle at `t`; `hint` caches the interval.
    pub fn interp_into(&self, t: T, out: &mut [T], hint: &mut usize) {
        let last = self.len() - 2;
        let mut i = (*hint).min(last);
        while i > 0 && t < self.times[i] {
            i -= 1;
        }
        while i < last && t > self.times[i + 1] {
            i += 1;
        }
        *hint = i;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let s = ((t - t0) / (t1 - t0)).max(T::zero()).min(T::one());
        let p = self.per();
        let (a, b) = (&self.entries[i * p..(i + 1) * p], &self.entries[(i + 1) * p..(i + 2) * p]);
        for k in 0..p {
            out[k] = a[k] + s * (b[k] - a[k]);
        }
    }

    /// End time of a solve of length `duration`, or a coverage error.
    pub fn check_coverage(&self, duration: T) -> Result<T> {
        let end = self.start() + duration;
        let slack = T::lit(1e-9) * T::one().max(self.end().abs());
        if !(duration >= T::zero()) || end > self.end() + slack {
            return Err(Error::Coverage { requested: end.as_f64(), start: self.start().as_f64(), end: self.end().as_f64() });
        }
        Ok(end.min(self.end()))
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        for i in 0..self.ell {
            for j in 0..=i {
                h.push(format!("a_{}{}", i + 1, j + 1));
            }
        }
        h
    }

    /// `t, a_11, a_21, a_22, …` with a header row, round-trip formatting.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.write_csv_strided(w, 1)
    }

    /// As [`Self::write_csv`], keeping every `stride`-th sample and the last.
    pub fn write_csv_strided<W: Write>(&self, w: W, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.csv_header())?;
        let mut row = Vec::with_capacity(1 + self.per());
        for s in 0..self.len() {
            if s % stride != 0 && s + 1 != self.len() {
                continue;
            }
            row.clear();
            row.push(fmt_real(self.times[s]));
            row.extend(self.packed_at(s).iter().map(|v| fmt_real(*v)));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, source: TapeSource) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let cols = rd.headers()?.len();
        let ell = (1..=64).find(|l| 1 + l * (l + 1) / 2 == cols).ok_or_else(|| Error::Parse(format!("{cols} columns is not a lower triangle")))?;
        let mut times = Vec::new();
        let mut entries = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            for (c, s) in rec.iter().enumerate() {
                let v = T::lit(s.parse::<f64>().map_err(|e| Error::Parse(format!("'{s}': {e}")))?);
                if c == 0 {
                    times.push(v);
                } else {
                    entries.push(v);
                }
            }
        }
        Self::new(ell, times, entries, source)
    }

    /// JSON header: provenance, `ℓ` and grid information.
    pub fn header_json(&self) -> serde_json::Value {
        serde_json::json!({
            "ell": self.ell,
            "samples": self.len(),
            "t_start": self.start().as_f64(),
            "t_end": self.end().as_f64(),
            "interp": "linear",
            "source": self.source,
        })
    }
}

/// Assembles `A(t)` from a tape: diagonal `ω̃_k`, below-diagonal couplings
/// restricted to the selected (zero-based, distinct) frame indices.
pub fn build_reduced_system<T: Real>(tape: &QualTape<T>, selected: &[usize]) -> Result<ReducedSystemTape<T>> {
    let mut sel = selected.to_vec();
    sel.sort_unstable();
    if sel.is_empty() {
        return Err(Error::InvalidIndices("no indices selected".into()));
    }
    if sel.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidIndices(format!("duplicate index in {selected:?}")));
    }
    if let Some(bad) = sel.iter().find(|&&i| i >= tape.ell()) {
        return Err(Error::InvalidIndices(format!("index {} exceeds frame count {}", bad + 1, tape.ell())));
    }
    let ell = sel.len();
    let mut entries = Vec::with_capacity(tape.len() * ell * (ell + 1) / 2);
    for s in 0..tape.len() {
        let w = tape.omega_at(s);
        let r = tape.couplings_at(s);
        for i in 0..ell {
            for j in 0..i {
                entries.push(r[coupling_index(sel[i], sel[j])]);
            }
            entries.push(w[sel[i]]);
        }
    }
    let source = TapeSource {
        field: tape.field_name().map(str::to_string),
        selected: sel.iter().map(|i| i + 1).collect(),
        coupling_source: "evolved_frame".into(),
        ..TapeSource::default()
    };
    ReducedSystemTape::new(ell, tape.times().to_vec(), entries, source)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    TriangularExplicit,
    GenericOde,
    Perturbed,
}

/// Row solution `y(t) = e^{m(t)}·ŷ(t)`; `m` is the overflow-rescaling ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedSolution<T> {
    pub times: Vec<T>,
    scaled: Vec<T>,
    log_scale: Vec<T>,
    pub v0: Vec<T>,
    pub method: SolveMethod,
}

const RESCALE_HIGH: f64 = 1e100;
const RESCALE_LOW: f64 = 1e-100;

impl<T: Real> ReducedSolution<T> {
    fn new(ell: usize, v0: &[T], method: SolveMethod) -> Self {
        let _ = ell;
        Self { times: Vec::new(), scaled: Vec::new(), log_scale: Vec::new(), v0: v0.to_vec(), method }
    }

    fn record(&mut self, t: T, y: &[T], m: T) {
        self.times.push(t);
        self.scaled.extend_from_slice(y);
        self.log_scale.push(m);
    }

    pub fn ell(&self) -> usize {
        self.v0.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Stored mantissa `ŷ` at sample `i`.
    pub fn scaled_at(&self, i: usize) -> &[T] {
        let l = self.ell();
        &self.scaled[i * l..(i + 1) * l]
    }

    /// Log-scale ledger `m` at sample `i`.
    pub fn log_scale_at(&self, i: usize) -> T {
        self.log_scale[i]
    }

    /// `y` at sample `i` (overflows to infinity if the true value does).
    pub fn y_at(&self, i: usize) -> Vec<T> {
        let s = self.log_scale[i].exp();
        self.scaled_at(i).iter().map(|v| *v * s).collect()
    }

    /// `log ‖y‖` at sample `i`, finite even when `y` is not representable.
    pub fn log_norm_at(&self, i: usize) -> T {
        self.log_scale[i] + norm2(self.scaled_at(i)).ln()
    }

    pub fn final_time(&self) -> T {
        self.times[self.times.len() - 1]
    }

    /// `(1/T)·log‖y(T)‖` with `T` the elapsed solve time.
    pub fn final_exponent(&self) -> T {
        let last = self.len() - 1;
        self.log_norm_at(last) / (self.times[last] - self.times[0])
    }

    /// True when the rescaling ledger was used.
    pub fn was_rescaled(&self) -> bool {
        self.log_scale.iter().any(|m| *m != T::zero())
    }
}

pub(crate) fn rescale<T: Real>(y: &mut [T], m: &mut T) {
    let nrm = norm2(y);
    if nrm > T::lit(RESCALE_HIGH) || (nrm < T::lit(RESCALE_LOW) && nrm > T::zero()) {
        for v in y.iter_mut() {
            *v /= nrm;
        }
        *m += nrm.ln();
    }
}

/// Which samples a solver keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Record {
    All,
    Final,
}

/// Back-substitution solve of `dy/dt = y·A(t)` over `[start, start + duration]`.
///
/// Each step treats `y_j' = a_jj y_j + g_j`, `g_j = Σ_{i>j} a_ij y_i`, from
/// the last index down. The integrating factor is exact for linear `a_jj`;
/// the forcing integral uses Simpson's rule with midpoint values from the
/// same back-substitution.
pub fn solve_triangular<T: Real>(sys: &ReducedSystemTape<T>, v: &[T], duration: T) -> Result<ReducedSolution<T>> {
    solve_triangular_impl(sys, v, duration, Record::All)
}

pub(crate) fn solve_triangular_impl<T: Real>(
    sys: &ReducedSystemTape<T>,
    v: &[T],
    duration: T,
    rec: Record,
) -> Result<ReducedSolution<T>> {
    let l = sys.ell();
    if v.len() != l {
        return Err(Error::DimensionMismatch { expected: l, got: v.len() });
    }
    let end = sys.check_coverage(duration)?;
    let start = sys.start();
    let p = sys.per();
    let mut sol = ReducedSolution::new(l, v, SolveMethod::TriangularExplicit);
    let mut y = v.to_vec();
    let mut m = T::zero();
    sol.record(start, &y, m);
    if duration == T::zero() {
        return Ok(sol);
    }
    let (half, two) = (T::lit(0.5), T::lit(2.0));
    let mut a_beg = sys.packed_at(0).to_vec();
    let mut a_mid = vec![T::zero(); p];
    let mut a_end = vec![T::zero(); p];
    let mut y_mid = vec![T::zero(); l];
    let mut y_end = vec![T::zero(); l];
    let mut hint = 0usize;
    let mut ta = start;
    let mut s = 0usize;
    while ta < end {
        let tb = if s + 1 < sys.len() && sys.times[s + 1] < end { sys.times[s + 1] } else { end };
        let h = tb - ta;
        if tb == sys.times[(s + 1).min(sys.len() - 1)] {
            a_end.copy_from_slice(sys.packed_at(s + 1));
        } else {
            sys.interp_into(tb, &mut a_end, &mut hint);
        }
        for k in 0..p {
            a_mid[k] = half * (a_beg[k] + a_end[k]);
        }
        for j in (0..l).rev() {
            let d = lower_index(j, j);
            let (d0, dm, d1) = (a_beg[d], a_mid[d], a_end[d]);
            // exact ∫ of the linear diagonal over the half and full step
            let l_mid = h * half * half * (d0 + dm);
            let l_end = h * half * (d0 + d1);
            let (mut g0, mut gm, mut g1) = (T::zero(), T::zero(), T::zero());
            for i in j + 1..l {
                let c = lower_index(i, j);
                g0 += a_beg[c] * y[i];
                gm += a_mid[c] * y_mid[i];
                g1 += a_end[c] * y_end[i];
            }
            let (phi0, phim, phi1) = (g0, gm * (-l_mid).exp(), g1 * (-l_end).exp());
            let int_half = h / T::lit(24.0) * (T::lit(5.0) * phi0 + T::lit(8.0) * phim - phi1);
            let int_full = h / T::lit(6.0) * (phi0 + two * two * phim + phi1);
            y_mid[j] = l_mid.exp() * (y[j] + int_half);
            y_end[j] = l_end.exp() * (y[j] + int_full);
        }
        y.copy_from_slice(&y_end);
        if !all_finite(&y) {
            return Err(Error::NonFinite { context: format!("in triangular solve at t = {}", tb.as_f64()) });
        }
        rescale(&mut y, &mut m);
        let last = tb >= end;
        if rec == Record::All || last {
            sol.record(tb, &y, m);
        }
        std::mem::swap(&mut a_beg, &mut a_end);
        ta = tb;
        s += 1;
    }
    Ok(sol)
}

/// Perturbation term in row form, `f(t, y)` written into the last argument.
pub type RowForcing<'a, T> = &'a (dyn Fn(T, &[T], &mut [T]) + Send + Sync);

struct RowSystem<'a, T: Real> {
    sys: &'a ReducedSystemTape<T>,
    a: Vec<T>,
    hint: usize,
    forcing: Option<RowForcing<'a, T>>,
    log_scale: &'a Cell<T>,
    ybuf: Vec<T>,
    fbuf: Vec<T>,
}

impl<T: Real> OdeSystem<T> for RowSystem<'_, T> {
    fn dim(&self) -> usize {
        self.sys.ell()
    }

    fn rhs(&mut self, t: T, y: &[T], dy: &mut [T]) {
        let l = y.len();
        self.sys.interp_into(t, &mut self.a, &mut self.hint);
        for j in 0..l {
            let mut acc = y[j] * self.a[lower_index(j, j)];
            for i in j + 1..l {
                acc += y[i] * self.a[lower_index(i, j)];
            }
            dy[j] = acc;
        }
        if let Some(f) = self.forcing {
            // y = e^m ŷ, so ŷ' = ŷA + e^{-m} f(t, e^m ŷ)
            let m = self.log_scale.get();
            let inv = (-m).exp();
            if inv == T::zero() {
                return;
            }
            let s = m.exp();
            for k in 0..l {
                self.ybuf[k] = y[k] * s;
            }
            f(t, &self.ybuf, &mut self.fbuf);
            for k in 0..l {
                dy[k] += inv * self.fbuf[k];
            }
        }
    }

    fn monitored_norm(&self, _y: &[T]) -> T {
        T::zero()
    }
}

pub(crate) fn solve_rows<T: Real>(
    sys: &ReducedSystemTape<T>,
    v: &[T],
    duration: T,
    cfg: &SolverConfig<T>,
    forcing: Option<RowForcing<'_, T>>,
    rec: Record,
) -> Result<ReducedSolution<T>> {
    let l = sys.ell();
    if v.len() != l {
        return Err(Error::DimensionMismatch { expected: l, got: v.len() });
    }
    let end = sys.check_coverage(duration)?;
    let start = sys.start();
    let method = if forcing.is_some() { SolveMethod::Perturbed } else { SolveMethod::GenericOde };
    let mut sol = ReducedSolution::new(l, v, method);
    if duration == T::zero() {
        sol.record(start, v, T::zero());
        return Ok(sol);
    }
    let log_scale = Cell::new(T::zero());
    let mut row = RowSystem {
        sys,
        a: vec![T::zero(); sys.per()],
        hint: 0,
        forcing,
        log_scale: &log_scale,
        ybuf: vec![T::zero(); l],
        fbuf: vec![T::zero(); l],
    };
    let mut cfg = cfg.clone();
    cfg.blowup_bound = T::max_value();
    integrate(&mut row, start, v, end, &cfg, |ev| {
        if ev.step_index > 0 {
            let mut m = log_scale.get();
            rescale(ev.y, &mut m);
            log_scale.set(m);
        }
        if ev.step_index == 0 || (rec == Record::All && ev.is_sample) || ev.is_final {
            sol.record(ev.t, ev.y, log_scale.get());
        }
        Ok(())
    })?;
    Ok(sol)
}

/// Runge–Kutta solve of `dy/dt = y·A(t)` with `A` linearly interpolated.
pub fn solve_generic<T: Real>(
    sys: &ReducedSystemTape<T>,
    v: &[T],
    duration: T,
    cfg: &SolverConfig<T>,
) -> Result<ReducedSolution<T>> {
    solve_rows(sys, v, duration, cfg, None, Record::All)
}

/// `(1/T)·log‖y(T, v)‖` by the triangular solver.
pub fn exponent_of<T: Real>(sys: &ReducedSystemTape<T>, v: &[T], duration: T) -> Result<T> {
    Ok(solve_triangular_impl(sys, v, duration, Record::Final)?.final_exponent())
}

/// Finite-time exponents of the coordinate vectors `e_1 … e_ℓ`.
pub fn exponents_of_reduced<T: Real>(sys: &ReducedSystemTape<T>, duration: T) -> Result<Vec<T>> {
    (0..sys.ell())
        .map(|k| {
            let mut e = vec![T::zero(); sys.ell()];
            e[k] = T::one();
            exponent_of(sys, &e, duration)
        })
        .collect()
}
