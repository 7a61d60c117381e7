//! End-to-end construction of the reduced standard system along one orbit.
//!
//! The forward frame run gives the spectrum in descending order. For the
//! reduced system the diagonal must be ascending, so a second full frame is
//! carried backward along the stored orbit: its leading columns then span the
//! most contracting directions, which is the ordering the triangular system
//! needs for `y(t, e_k)` to grow at the `k`-th rate.

use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_flow, SolverConfig, VectorField};
use crate::error::{Error, Result};
use crate::frame::{evolve_frame, evolve_frame_on_orbit, random_orthonormal_frame, FrameOptions, FrameRun, QualTape};
use crate::scalar::Real;
use crate::spectrum::{classify_zero, estimate_from_run, ExponentEstimate, ZeroClassification};
use crate::standard::{build_reduced_system, exponents_of_reduced, ReducedSystemTape};

/// How the nonzero directions are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection<T> {
    /// `|λ| > ε_zero`; `None` uses the estimate's default threshold.
    Auto(Option<T>),
    /// Zero-based positions in the descending spectrum.
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig<T> {
    /// Total forward time; the reduced horizon is `t − burn_in`.
    pub t: T,
    pub burn_in: T,
    /// Extra forward time the backward frame uses to converge.
    pub backward_pad: T,
    pub seed: u64,
    pub solver: SolverConfig<T>,
    pub frames: FrameOptions,
    pub selection: Selection<T>,
}

impl<T: Real> PipelineConfig<T> {
    pub fn new(t: T, burn_in: T, seed: u64) -> Self {
        Self {
            t,
            burn_in,
            backward_pad: T::lit(50.0),
            seed,
            solver: SolverConfig::fixed(T::lit(1e-3)),
            frames: FrameOptions::default(),
            selection: Selection::Auto(None),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardStage<T> {
    pub run: FrameRun<T>,
    pub estimate: ExponentEstimate<T>,
}

#[derive(Debug, Clone)]
pub struct ReducedPipeline<T> {
    pub forward: ForwardStage<T>,
    pub classification: ZeroClassification,
    /// Zero-based positions in the descending spectrum.
    pub selected_descending: Vec<usize>,
    /// Zero-based indices into the ascending backward frame.
    pub selected_frame: Vec<usize>,
    /// Base point at reduced time 0 (the forward orbit at `burn_in`).
    pub x_start: Vec<T>,
    /// Ascending-frame tape over `[0, horizon]`.
    pub tape: QualTape<T>,
    pub backward: FrameRun<T>,
    pub reduced: ReducedSystemTape<T>,
    pub horizon: T,
    /// `(1/T) log ‖y(T, e_k)‖`, ascending frame order.
    pub reduced_exponents: Vec<T>,
    /// Spectrum values at the selected positions, ascending.
    pub spectrum_selected: Vec<T>,
}

impl<T: Real> ReducedPipeline<T> {
    /// `max |reduced − spectrum|` over the selected directions.
    pub fn max_mismatch(&self) -> T {
        self.reduced_exponents
            .iter()
            .zip(&self.spectrum_selected)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }
}

/// Forward frame run from `x0` over `[0, t]` with a seeded full frame.
pub fn forward_stage<T: Real, F: VectorField<T> + ?Sized>(field: &F, x0: &[T], cfg: &PipelineConfig<T>) -> Result<ForwardStage<T>> {
    let n = field.dim();
    let q0 = random_orthonormal_frame(n, n, cfg.seed)?;
    let run = evolve_frame(field, x0, &q0, cfg.t, &cfg.solver, &cfg.frames)?;
    let estimate = estimate_from_run(&run, cfg.burn_in)?;
    Ok(ForwardStage { run, estimate })
}

/// Runs the whole construction, reusing `forward` when given.
pub fn reduced_pipeline<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    x0: &[T],
    cfg: &PipelineConfig<T>,
    forward: Option<ForwardStage<T>>,
) -> Result<ReducedPipeline<T>> {
    let n = field.dim();
    if !(cfg.backward_pad >= T::zero()) {
        return Err(Error::InvalidConfig("backward_pad must be non-negative".into()));
    }
    let forward = match forward {
        Some(f) => f,
        None => forward_stage(field, x0, cfg)?,
    };
    let est = &forward.estimate;
    let classification = match &cfg.selection {
        Selection::Auto(eps) => classify_zero(est, eps.unwrap_or(est.epsilon_zero))?,
        Selection::Explicit(idx) => {
            let mut c = crate::spectrum::classify_values(&est.values, est.epsilon_zero);
            c.selected = idx.clone();
            c.ell = idx.len();
            c
        }
    };
    let mut desc = classification.selected.clone();
    desc.sort_unstable();
    if desc.is_empty() {
        return Err(Error::InvalidIndices("no nonzero exponents to build a reduced system from".into()));
    }
    if desc.windows(2).any(|w| w[0] == w[1]) || desc.iter().any(|&d| d >= n) {
        return Err(Error::InvalidIndices(format!("bad selection {:?} for dimension {n}", classification.selected)));
    }
    let selected_frame: Vec<usize> = desc.iter().rev().map(|&d| n - 1 - d).collect();

    let x_start = if cfg.burn_in > T::zero() {
        integrate_flow(field, x0, (T::zero(), cfg.burn_in), &cfg.solver)?.last_point().to_vec()
    } else {
        x0.to_vec()
    };
    let horizon = cfg.t - cfg.burn_in;
    let orbit_cfg = cfg.solver.clone().with_stride(cfg.solver.step);
    let orbit = integrate_flow(field, &x_start, (T::zero(), horizon + cfg.backward_pad), &orbit_cfg)?;
    let q_end = random_orthonormal_frame(n, n, cfg.seed.wrapping_add(0x5eed))?;
    let backward = evolve_frame_on_orbit(field, &orbit, &q_end, horizon + cfg.backward_pad, T::zero(), &cfg.solver, &cfg.frames)?;
    let tape = backward.tape.truncated(horizon + T::lit(1e-9) * T::one().max(horizon));
    let mut reduced = build_reduced_system(&tape, &selected_frame)?;
    reduced.source.x0 = Some(x_start.iter().map(|v| v.as_f64()).collect());
    reduced.source.frame_seed = Some(cfg.seed);
    reduced.source.frame_order = Some("ascending (backward-evolved frame)".into());
    let reduced_exponents = exponents_of_reduced(&reduced, horizon)?;
    let spectrum_selected = desc.iter().rev().map(|&d| est.values[d]).collect();
    Ok(ReducedPipeline {
        forward,
        classification,
        selected_descending: desc,
        selected_frame,
        x_start,
        tape,
        backward,
        reduced,
        horizon,
        reduced_exponents,
        spectrum_selected,
    })
}
