//! Diagnostics for trajectory and distribution mismatch.

mod energy;
mod mismatch;
mod w2;

pub use energy::{energy_distance, energy_test, EnergyTest};
pub use mismatch::{
    expected_velocity_residual, interstage_distance, teacher_trajectory_divergence,
    BoundaryDivergence, InterstageConfig, InterstageEntry, MismatchReport, MismatchRow, Residual,
    StartKind,
};
pub use w2::{w2_exact_small, W2_MAX_POINTS};
