//! Moving orthonormal frames, reduced triangular standard systems and
//! Lyapunov spectra of smooth flows on `Rⁿ`.
//!
//! Everything numeric is generic over [`Real`] (`f64` or `f32`); the aliases
//! below fix the scalar for the common cases.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dynamics;
pub mod error;
pub mod frame;
pub mod linalg;
pub mod perturbation;
pub mod pipeline;
pub mod scalar;
pub mod spectrum;
pub mod standard;

pub use dynamics::{
    builtin_field, default_initial_point, integrate_flow, integrate_variational, Method, SharedField, SolverConfig,
    TrajectoryTape, VectorField,
};
pub use error::{Error, Result};
pub use frame::{evolve_frame, evolve_frame_on_orbit, gram_schmidt, random_orthonormal_frame, FrameOptions, FrameRun, QualTape};
pub use linalg::Matrix;
pub use perturbation::{
    build_reduced_perturbation, counterexample_run, liao_full_standard_system, persistence_experiment, probe_bounds,
    solve_perturbed, PerturbationSpec, SearchConfig,
};
pub use pipeline::{reduced_pipeline, PipelineConfig, ReducedPipeline, Selection};
pub use scalar::Real;
pub use spectrum::{classify_zero, estimate_spectrum, find_t_star, window_deviation_stats, ExponentEstimate};
pub use standard::{build_reduced_system, solve_generic, solve_triangular, ReducedSolution, ReducedSystemTape};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type FrameRun64 = FrameRun<f64>;
pub type FrameRun32 = FrameRun<f32>;
pub type QualTape64 = QualTape<f64>;
pub type QualTape32 = QualTape<f32>;
pub type ReducedSystemTape64 = ReducedSystemTape<f64>;
pub type ReducedSystemTape32 = ReducedSystemTape<f32>;
pub type ReducedSolution64 = ReducedSolution<f64>;
pub type ExponentEstimate64 = ExponentEstimate<f64>;
pub type ExponentEstimate32 = ExponentEstimate<f32>;
pub type PerturbationSpec64 = PerturbationSpec<f64>;
pub type SolverConfig64 = SolverConfig<f64>;
pub type SolverConfig32 = SolverConfig<f32>;
pub type PipelineConfig64 = PipelineConfig<f64>;
pub type ReducedPipeline64 = ReducedPipeline<f64>;
