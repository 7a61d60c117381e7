//! Finite-time spectra from frame runs, zero/nonzero classification and
//! windowed ergodic-convergence diagnostics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{SolverConfig, VectorField};
use crate::error::{Error, Result};
use crate::frame::{evolve_frame, random_orthonormal_frame, FrameOptions, FrameRun, QualTape};
use crate::scalar::{fmt_real, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentClass {
    Nonzero,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate<T> {
    /// Sorted descending.
    pub values: Vec<T>,
    /// Per frame direction, in frame order.
    pub per_direction: Vec<T>,
    /// `values[i] = per_direction[order[i]]`.
    pub order: Vec<usize>,
    /// `(T_j, sorted estimate)` at doubling checkpoints, `T_j` increasing in `|T_j|`.
    pub history: Vec<(T, Vec<T>)>,
    pub burn_in: T,
    pub duration: T,
    pub epsilon_zero: T,
    pub classification: Vec<ExponentClass>,
}

/// `max(0.05·spread, 1e-3)`.
pub fn default_epsilon_zero<T: Real>(values: &[T]) -> T {
    let hi = values.iter().copied().fold(T::neg_infinity(), T::max);
    let lo = values.iter().copied().fold(T::infinity(), T::min);
    let spread = if values.is_empty() { T::zero() } else { hi - lo };
    (T::lit(0.05) * spread).max(T::lit(1e-3))
}

fn sort_desc<T: Real>(v: &[T]) -> (Vec<T>, Vec<usize>) {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap_or(std::cmp::Ordering::Equal));
    (order.iter().map(|&i| v[i]).collect(), order)
}

fn classify<T: Real>(values: &[T], eps: T) -> Vec<ExponentClass> {
    values.iter().map(|v| if v.abs() <= eps { ExponentClass::Zero } else { ExponentClass::Nonzero }).collect()
}

impl<T: Real> ExponentEstimate<T> {
    /// Ascending order.
    pub fn ascending(&self) -> Vec<T> {
        self.values.iter().rev().copied().collect()
    }

    /// Re-classifies with a new threshold.
    pub fn with_epsilon_zero(mut self, eps: T) -> Self {
        self.epsilon_zero = eps;
        self.classification = classify(&self.values, eps);
        self
    }

    /// Successive checkpoint differences `max_k |est(T_{j+1}) − est(T_j)|`.
    pub fn history_differences(&self) -> Vec<T> {
        self.history
            .windows(2)
            .map(|w| w[0].1.iter().zip(&w[1].1).map(|(a, b)| (*a - *b).abs()).fold(T::zero(), T::max))
            .collect()
    }

    /// Whether the last `count` checkpoint differences are non-increasing.
    pub fn differences_nonincreasing(&self, count: usize) -> bool {
        let d = self.history_differences();
        if d.len() < count {
            return false;
        }
        d[d.len() - count..].windows(2).all(|w| w[1] <= w[0])
    }

    pub fn to_json(&self) -> serde_json::Value {
        let history: Vec<Vec<f64>> = self
            .history
            .iter()
            .map(|(t, v)| std::iter::once(t.as_f64()).chain(v.iter().map(|x| x.as_f64())).collect())
            .collect();
        serde_json::json!({
            "values": self.values.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
            "ascending": self.ascending().iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
            "history": history,
            "burn_in": self.burn_in.as_f64(),
            "duration": self.duration.as_f64(),
            "epsilon_zero": self.epsilon_zero.as_f64(),
            "classification": self.classification,
        })
    }
}

/// Estimate from an existing frame run: `(log ζ(T) − log ζ(b)) / (T − b)`.
/// Backward runs use signed times, so `burn_in` is measured from the start
/// in the run's direction.
pub fn estimate_from_run<T: Real>(run: &FrameRun<T>, burn_in: T) -> Result<ExponentEstimate<T>> {
    let t0 = run.initial.t;
    let dur = run.duration();
    let dir = dur.signum();
    if !(burn_in >= T::zero() && burn_in < dur.abs()) {
        return Err(Error::InvalidConfig(format!(
            "burn_in {} must lie in [0, {})",
            burn_in.as_f64(),
            dur.abs().as_f64()
        )));
    }
    let tb = t0 + dir * burn_in;
    let lz_b = run.log_zeta_interp(tb)?;
    let rate = |t: T| -> Result<Vec<T>> {
        let lz = if t == run.final_state.t { run.final_state.log_zeta.clone() } else { run.log_zeta_interp(t)? };
        Ok(lz.iter().zip(&lz_b).map(|(a, b)| (*a - *b) / (t - tb)).collect())
    };
    let per_direction = rate(run.final_state.t)?;
    let (values, order) = sort_desc(&per_direction);
    let base = if burn_in > T::zero() { burn_in } else { dur.abs() / T::lit(1024.0) };
    let mut history = Vec::new();
    let mut span = if burn_in > T::zero() { base + base } else { base };
    while span < dur.abs() * (T::one() - T::lit(1e-12)) {
        let t = t0 + dir * span;
        history.push((t - t0, sort_desc(&rate(t)?).0));
        span = span + span;
    }
    history.push((dur, values.clone()));
    let eps = default_epsilon_zero(&values);
    Ok(ExponentEstimate {
        classification: classify(&values, eps),
        values,
        per_direction,
        order,
        history,
        burn_in,
        duration: dur,
        epsilon_zero: eps,
    })
}

/// Evolves a seeded random `ℓ`-frame from `x0` for signed duration `t` and
/// estimates its finite-time exponents.
#[allow(clippy::too_many_arguments)]
pub fn estimate_spectrum<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    x0: &[T],
    ell: usize,
    t: T,
    burn_in: T,
    cfg: &SolverConfig<T>,
    seed: u64,
) -> Result<ExponentEstimate<T>> {
    let q0 = random_orthonormal_frame(field.dim(), ell, seed)?;
    let run = evolve_frame(field, x0, &q0, t, cfg, &FrameOptions::default())?;
    estimate_from_run(&run, burn_in)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroClassification {
    /// Count of nonzero exponents.
    pub ell: usize,
    /// Zero-based positions in the descending `values`.
    pub selected: Vec<usize>,
    pub epsilon_zero: f64,
    pub warnings: Vec<String>,
}

/// Keeps the exponents with `|λ| > ε_zero` after checking convergence of the
/// last two checkpoints.
pub fn classify_zero<T: Real>(est: &ExponentEstimate<T>, eps: T) -> Result<ZeroClassification> {
    if est.history.len() >= 2 {
        let h = &est.history;
        let (a, b) = (&h[h.len() - 2].1, &h[h.len() - 1].1);
        let diff = a.iter().zip(b).map(|(x, y)| (*x - *y).abs()).fold(T::zero(), T::max);
        let limit = eps * T::lit(0.5);
        if !(diff < limit) {
            return Err(Error::NotConverged { difference: diff.as_f64(), limit: limit.as_f64() });
        }
    }
    Ok(classify_values(&est.values, eps))
}

/// Threshold logic alone (values assumed descending).
pub fn classify_values<T: Real>(values: &[T], eps: T) -> ZeroClassification {
    let selected: Vec<usize> = (0..values.len()).filter(|&i| values[i].abs() > eps).collect();
    let mut warnings = Vec::new();
    for w in selected.windows(2) {
        let (a, b) = (values[w[0]], values[w[1]]);
        if (a - b).abs() <= eps {
            warnings.push(format!(
                "exponents {} and {} ({} and {}) are within epsilon_zero; spectrum may not be simple",
                w[0] + 1,
                w[1] + 1,
                a.as_f64(),
                b.as_f64()
            ));
        }
    }
    ZeroClassification { ell: selected.len(), selected, epsilon_zero: eps.as_f64(), warnings }
}

/// `(1/T)∫₀ᵀ f dt` by trapezoid over samples starting at `times[0]`.
pub fn birkhoff_average<T: Real>(times: &[T], samples: &[T], t: T) -> Result<T> {
    if times.len() != samples.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), got: samples.len() });
    }
    if times.len() < 2 || !(t > T::zero()) {
        return Err(Error::InvalidConfig("need at least two samples and T > 0".into()));
    }
    let end = times[0] + t;
    let last = times[times.len() - 1];
    if end > last + T::lit(1e-9) * T::one().max(last.abs()) {
        return Err(Error::Coverage { requested: end.as_f64(), start: times[0].as_f64(), end: last.as_f64() });
    }
    let half = T::lit(0.5);
    // centered on the first sample so constant series average exactly
    let f0 = samples[0];
    let mut acc = T::zero();
    for i in 1..times.len() {
        let (t0, t1) = (times[i - 1], times[i]);
        if t0 >= end {
            break;
        }
        let (a, c) = (samples[i - 1] - f0, samples[i] - f0);
        let (b, fb) = if t1 > end { (end, a + (c - a) * (end - t0) / (t1 - t0)) } else { (t1, c) };
        acc += (b - t0) * half * (a + fb);
    }
    Ok(f0 + acc / t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowParams<T> {
    /// Reference values `ϑ_k`, one per tape direction.
    pub targets: Vec<T>,
    pub t_window: T,
    /// `+1` forward windows, `−1` backward windows.
    pub delta: i8,
    /// Window offsets `s(j)` in units of `t_window` (signed).
    pub offsets: Vec<i64>,
    pub l_max: usize,
    pub eta: T,
    /// Time the offsets are measured from; defaults to the tape start for
    /// `δ = +1` and the tape end for `δ = −1`.
    pub origin: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord<T> {
    pub offset: i64,
    pub tau: usize,
    pub h: Vec<T>,
    pub h_max: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDeviationStats<T> {
    pub targets: Vec<T>,
    pub t_window: T,
    pub delta: i8,
    pub offsets: Vec<i64>,
    pub per_window: Vec<WindowRecord<T>>,
    /// `aggregate[j][l−1]`: mean of the first `l` window maxima for offset `j`.
    pub aggregate: Vec<Vec<T>>,
    pub eta: T,
    /// `below_eta[l−1]`: every offset's aggregate at `l` is below `η`.
    pub below_eta: Vec<bool>,
}

impl<T: Real> WindowDeviationStats<T> {
    /// Largest aggregate over offsets at `l`.
    pub fn worst_aggregate(&self, l: usize) -> T {
        self.aggregate.iter().map(|a| a[l - 1]).fold(T::zero(), T::max)
    }

    /// `window_index, h_1..h_l, h_max`; windows numbered offset-major.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let ell = self.targets.len();
        let mut header = vec!["window_index".to_string()];
        header.extend((1..=ell).map(|k| format!("h_{k}")));
        header.push("h_max".into());
        wr.write_record(&header)?;
        for (i, rec) in self.per_window.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(rec.h.iter().map(|v| fmt_real(*v)));
            row.push(fmt_real(rec.h_max));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// The averaged window deviations of Definition-style ergodic diagnostics:
/// for offset `s` and window `τ`, `h_k = |ϑ_k − (1/δT)∫_{τδT}^{(τ+1)δT} ω_k(t + sT) dt|`.
pub fn window_deviation_stats<T: Real>(tape: &QualTape<T>, params: &WindowParams<T>) -> Result<WindowDeviationStats<T>> {
    let ell = tape.ell();
    if params.targets.len() != ell {
        return Err(Error::DimensionMismatch { expected: ell, got: params.targets.len() });
    }
    if params.delta != 1 && params.delta != -1 {
        return Err(Error::InvalidConfig("delta must be +1 or -1".into()));
    }
    if !(params.t_window > T::zero()) || params.l_max == 0 || params.offsets.is_empty() {
        return Err(Error::InvalidConfig("t_window > 0, l_max ≥ 1 and at least one offset are required".into()));
    }
    let delta = T::lit(params.delta as f64);
    let tw = params.t_window;
    let origin = params.origin.unwrap_or(if params.delta > 0 { tape.start() } else { tape.end() });
    let shifts: Vec<T> = params.targets.clone();
    let prefixes: Vec<Vec<T>> = (0..ell).map(|k| tape.cumulative_shifted(k, shifts[k])).collect();
    let mut per_window = Vec::new();
    let mut aggregate = Vec::new();
    for &s in &params.offsets {
        let shift = origin + T::lit(s as f64) * tw;
        let mut running = T::zero();
        let mut means = Vec::with_capacity(params.l_max);
        for tau in 0..params.l_max {
            let a = shift + T::from_usize_lossy(tau) * delta * tw;
            let b = shift + T::from_usize_lossy(tau + 1) * delta * tw;
            let mut h = Vec::with_capacity(ell);
            for k in 0..ell {
                // integrals of ω_k − ϑ_k, so h_k is the absolute window mean
                let ia = tape.cumulative_shifted_at(k, &prefixes[k], a, shifts[k])?;
                let ib = tape.cumulative_shifted_at(k, &prefixes[k], b, shifts[k])?;
                h.push(((ib - ia) / (delta * tw)).abs());
            }
            let h_max = h.iter().copied().fold(T::zero(), T::max);
            running += h_max;
            means.push(running / T::from_usize_lossy(tau + 1));
            per_window.push(WindowRecord { offset: s, tau, h, h_max });
        }
        aggregate.push(means);
    }
    let below_eta = (0..params.l_max).map(|l| aggregate.iter().all(|a: &Vec<T>| a[l] < params.eta)).collect();
    Ok(WindowDeviationStats {
        targets: params.targets.clone(),
        t_window: tw,
        delta: params.delta,
        offsets: params.offsets.clone(),
        per_window,
        aggregate,
        eta: params.eta,
        below_eta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TStarReport<T> {
    /// Smallest tried window length meeting the criterion.
    pub t_star: Option<T>,
    /// `(T_window, worst aggregate at l)` for each tried length.
    pub tried: Vec<(T, T)>,
    pub l: usize,
    pub eta: T,
    /// Doubling stopped because the next window length no longer fit the tape.
    pub coverage_limited: bool,
}

/// Doubles `T_window` from 1 up to `2^max_power` until the aggregate mean at
/// `l = params.l_max` is below `η` for every offset.
pub fn find_t_star<T: Real>(tape: &QualTape<T>, params: &WindowParams<T>, max_power: u32) -> Result<TStarReport<T>> {
    let mut tried = Vec::new();
    let l = params.l_max;
    let reach = params.offsets.iter().map(|s| s.unsigned_abs()).max().unwrap_or(0) as f64 + l as f64;
    let span = tape.end() - tape.start();
    for p in 0..=max_power {
        let tw = T::lit(2f64.powi(p as i32));
        if p > 0 && T::lit(reach) * tw > span {
            return Ok(TStarReport { t_star: None, tried, l, eta: params.eta, coverage_limited: true });
        }
        let stats = window_deviation_stats(tape, &WindowParams { t_window: tw, ..params.clone() })?;
        let worst = stats.worst_aggregate(l);
        tried.push((tw, worst));
        if stats.below_eta[l - 1] {
            return Ok(TStarReport { t_star: Some(tw), tried, l, eta: params.eta, coverage_limited: false });
        }
    }
    Ok(TStarReport { t_star: None, tried, l, eta: params.eta, coverage_limited: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(end: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| end * i as f64 / n as f64).collect()
    }

    #[test]
    fn birkhoff_examples() {
        let t = grid(10.0, 100);
        assert_eq!(birkhoff_average(&t, &vec![3.25; t.len()], 10.0).unwrap(), 3.25);
        let two_pi = 2.0 * std::f64::consts::PI;
        let t = grid(two_pi, 4000);
        let s: Vec<f64> = t.iter().map(|x| x.sin()).collect();
        assert!(birkhoff_average(&t, &s, two_pi).unwrap().abs() < 1e-10);
        assert!(birkhoff_average(&t, &s, 7.0).is_err());
    }

    #[test]
    fn classification_examples() {
        let c = classify_values(&[2.0, 0.0, -1.0], 0.05);
        assert_eq!((c.ell, c.selected.clone()), (2, vec![0, 2]));
        let c = classify_values(&[0.9056, 0.0003, -14.57], 0.05);
        assert_eq!(c.ell, 2);
        let c = classify_values(&[1.0, 0.96], 0.05);
        assert_eq!(c.ell, 2);
        assert_eq!(c.warnings.len(), 1);
    }

    #[test]
    fn not_converged_rejected() {
        let est = ExponentEstimate {
            values: vec![1.0],
            per_direction: vec![1.0],
            order: vec![0],
            history: vec![(50.0, vec![1.2]), (100.0, vec![1.0])],
            burn_in: 0.0,
            duration: 100.0,
            epsilon_zero: 0.05,
            classification: vec![ExponentClass::Nonzero],
        };
        assert!(matches!(classify_zero(&est, 0.05), Err(Error::NotConverged { .. })));
        assert!(classify_zero(&est, 1.0).is_ok());
    }

    #[test]
    fn window_examples() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let times = grid(40.0 * two_pi, 40 * 2000);
        let lam = 0.7;
        let constant = QualTape::from_fn(&times, 1, |_| (vec![lam], vec![])).unwrap();
        let params = WindowParams { targets: vec![lam], t_window: 3.0, delta: 1, offsets: vec![0, 1, 2, 4, 8], l_max: 4, eta: 0.05, origin: None };
        let s = window_deviation_stats(&constant, &params).unwrap();
        assert!(s.per_window.iter().all(|r| r.h_max == 0.0));
        let shifted = window_deviation_stats(&constant, &WindowParams { targets: vec![lam + 0.3], ..params.clone() }).unwrap();
        assert!(shifted.per_window.iter().all(|r| (r.h_max - 0.3).abs() < 1e-12));
        let sine = QualTape::from_fn(&times, 1, |t| (vec![lam + t.sin()], vec![])).unwrap();
        let p = WindowParams { t_window: two_pi, offsets: vec![0], ..params.clone() };
        let s = window_deviation_stats(&sine, &p).unwrap();
        assert!(s.per_window.iter().all(|r| r.h_max < 1e-10));
        let back = WindowParams { delta: -1, offsets: vec![0, -1, -2], ..p };
        let s = window_deviation_stats(&sine, &back).unwrap();
        assert!(s.per_window.iter().all(|r| r.h_max < 1e-10));
        let far = WindowParams { offsets: vec![1000], ..params };
        assert!(matches!(window_deviation_stats(&constant, &far), Err(Error::Coverage { .. })));
    }

    #[test]
    fn t_star_for_decaying_transient() {
        let times = grid(4000.0, 40000);
        let tape = QualTape::from_fn(&times, 1, |t| (vec![1.0 + 2.0 * (-t).exp()], vec![])).unwrap();
        let params = WindowParams { targets: vec![1.0], t_window: 1.0, delta: 1, offsets: vec![0, 1, 2], l_max: 3, eta: 0.05, origin: None };
        let rep = find_t_star(&tape, &params, 10).unwrap();
        let ts = rep.t_star.unwrap();
        assert!(ts > 1.0 && ts <= 64.0, "{rep:?}");
        let short = QualTape::from_fn(&grid(20.0, 2000), 1, |_| (vec![3.0], vec![])).unwrap();
        let rep = find_t_star(&short, &params, 10).unwrap();
        assert!(rep.t_star.is_none() && rep.coverage_limited);
        assert_eq!(rep.tried.len(), 3);
    }
}
