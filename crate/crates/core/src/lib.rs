//! Piecewise rectified-flow distillation on 2D synthetic distributions.
//!
//! The crate is organised bottom-up:
//!
//! * [`sched`]: training schedules, the two few-step sigma samplers and the
//!   Euler step.
//! * [`netcore`]: MLPs with reverse-mode gradients and Adam.
//! * [`flow`]: data distributions, the analytic mixture teacher, learned
//!   fields and the ODE solver.
//! * [`distill`]: stage grids, off- and on-trajectory distillation pairs,
//!   student training and few-step inference.
//! * [`adv`]: discriminator, GAN and feature-matching losses and the
//!   adversarial student trainer.
//! * [`diag`]: trajectory divergence, inter-stage distribution distances,
//!   first-moment residuals, energy distance and exact small-n W2.
//! * [`experiment`]: configs, seeded end-to-end runs and reports.
//!
//! Batch work goes through [`exec::ExecMode`]; with the default `parallel`
//! feature it runs on rayon, otherwise sequentially, with identical results.

pub mod adv;
pub mod diag;
pub mod distill;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod flow;
pub mod netcore;
pub mod sched;
pub mod training;

pub use error::{Error, Result};

/// A point (or velocity) in the plane.
pub type Point = [f64; 2];
