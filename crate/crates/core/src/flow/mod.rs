//! Synthetic 2D data, the closed-form mixture velocity field, learned
//! velocity fields and the Euler ODE solver.
//!
//! Paths follow `z_σ = (1 − σ)·x + σ·ε` with σ = 1 pure noise and σ = 0 data,
//! so a velocity field is integrated from σ = 1 downward.

mod field;
pub(crate) mod mixture;
pub(crate) mod ode;
mod train;

pub use field::{
    embed, AnalyticField, Field, FnField, LearnedField, ShiftedField, VelocityField, EMBED_DIM,
    SIGMA_FLOOR,
};
pub use mixture::{
    analytic_velocity, interpolate, sample_data, sample_noise, DataSource, FlowSample, MixtureSpec,
};
pub use ode::{ode_solve, solve_endpoint, solve_on_sigmas, Trajectory};
pub use train::{flow_matching_loss, train_flow_matching, FlowMatchingRun};
