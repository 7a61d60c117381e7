//! Vector fields, the base flow and the tangent flow.

mod fields;
mod ode;
mod variational;

pub use fields::*;
pub use ode::{integrate, integrate_flow, Method, OdeSystem, SolverConfig, StepEvent, TrajectoryTape};
pub(crate) use fields::JacobianWork;
#[allow(unused_imports)]
pub(crate) use ode::Rk4;
pub use variational::{integrate_variational, VariationalRun};
