//! Noise schedules for flow-matching samplers.
//!
//! A training schedule is a descending list of `num_train_timesteps` noise
//! levels ending just above zero. Few-step inference draws `N + 1` levels
//! from it in one of two ways:
//!
//! * [`SamplerKind::Original`] resamples `N` levels in timestep space, shifts
//!   them a second time and appends `0.0`. The final jump to zero is far
//!   shorter or longer than the others.
//! * [`SamplerKind::Improved`] appends `0.0` to the training schedule first
//!   and gathers `N + 1` evenly spaced indices from the augmented list, so
//!   every interval scales the same way.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::Point;

pub const DEFAULT_TRAIN_TIMESTEPS: usize = 1000;

/// Time-shift map `s·σ / (1 + (s − 1)·σ)`. Fixes 0 and 1, monotone in σ.
pub fn shift_sigma(sigma: f64, shift: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&sigma) {
        return domain(format!("sigma {sigma} outside [0, 1]"));
    }
    if !(shift > 0.0 && shift.is_finite()) {
        return domain(format!("shift must be positive and finite, got {shift}"));
    }
    Ok(shift_unchecked(sigma, shift))
}

fn shift_unchecked(sigma: f64, shift: f64) -> f64 {
    if sigma == 0.0 || sigma == 1.0 {
        return sigma;
    }
    shift * sigma / (1.0 + (shift - 1.0) * sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Original,
    Improved,
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::Original => "original",
            SamplerKind::Improved => "improved",
        })
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(SamplerKind::Original),
            "improved" => Ok(SamplerKind::Improved),
            other => Err(Error::Config(format!("unknown scheduler '{other}'"))),
        }
    }
}

/// The full training-time schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSchedule {
    train_sigmas: Vec<f64>,
    shift: f64,
}

impl SigmaSchedule {
    pub fn sigmas(&self) -> &[f64] {
        &self.train_sigmas
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn num_train_timesteps(&self) -> usize {
        self.train_sigmas.len()
    }

    /// Draws `n_steps + 1` inference sigmas with the given method.
    pub fn sample(&self, kind: SamplerKind, n_steps: usize) -> Result<InferenceSigmas> {
        match kind {
            SamplerKind::Original => sample_original(self, n_steps),
            SamplerKind::Improved => sample_improved(self, n_steps),
        }
    }
}

/// `N + 1` strictly decreasing noise levels from 1 down to exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceSigmas {
    pub sigmas: Vec<f64>,
    pub method: SamplerKind,
}

impl InferenceSigmas {
    pub fn n_steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    /// One sigma per line with nine significant digits.
    pub fn to_column_text(&self) -> String {
        let mut out = String::new();
        for &s in &self.sigmas {
            out.push_str(&format_sig9(s));
            out.push('\n');
        }
        out
    }
}

/// Parses the column format written by [`InferenceSigmas::to_column_text`].
pub fn parse_column_text(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f64>()
                .map_err(|e| Error::Domain(format!("bad sigma line '{l}': {e}")))
        })
        .collect()
}

pub(crate) fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Evenly spaced `1.0 … 1/num_train_timesteps`, shifted elementwise.
pub fn build_base_schedule(num_train_timesteps: usize, shift: f64) -> Result<SigmaSchedule> {
    if num_train_timesteps < 2 {
        return domain("num_train_timesteps must be at least 2");
    }
    shift_sigma(0.5, shift)?;
    let t = num_train_timesteps as f64;
    let last = 1.0 / t;
    let step = (1.0 - last) / (t - 1.0);
    let train_sigmas = (0..num_train_timesteps)
        .map(|i| {
            let raw = if i + 1 == num_train_timesteps {
                last
            } else {
                1.0 - i as f64 * step
            };
            shift_unchecked(raw, shift)
        })
        .collect();
    Ok(SigmaSchedule {
        train_sigmas,
        shift,
    })
}

fn check_steps(schedule: &SigmaSchedule, n_steps: usize) -> Result<()> {
    if n_steps == 0 || n_steps > schedule.num_train_timesteps() {
        return domain(format!(
            "n_steps {n_steps} outside 1..={}",
            schedule.num_train_timesteps()
        ));
    }
    Ok(())
}

/// Resamples in timestep space between the (already shifted) end points,
/// shifts again and appends zero afterwards.
pub fn sample_original(schedule: &SigmaSchedule, n_steps: usize) -> Result<InferenceSigmas> {
    check_steps(schedule, n_steps)?;
    let t = schedule.num_train_timesteps() as f64;
    let sig = schedule.sigmas();
    let t_max = sig[0] * t;
    let t_min = sig[sig.len() - 1] * t;
    let mut sigmas: Vec<f64> = (0..n_steps)
        .map(|i| {
            let ts = if n_steps == 1 {
                t_max
            } else if i + 1 == n_steps {
                t_min
            } else {
                t_max + (t_min - t_max) * i as f64 / (n_steps - 1) as f64
            };
            shift_unchecked(ts / t, schedule.shift)
        })
        .collect();
    sigmas.push(0.0);
    Ok(InferenceSigmas {
        sigmas,
        method: SamplerKind::Original,
    })
}

/// Gathers `n_steps + 1` evenly spaced indices from the zero-augmented
/// schedule. Indices round to nearest, ties away from zero.
pub fn sample_improved(schedule: &SigmaSchedule, n_steps: usize) -> Result<InferenceSigmas> {
    check_steps(schedule, n_steps)?;
    let total = schedule.num_train_timesteps();
    let sig = schedule.sigmas();
    let sigmas = (0..=n_steps)
        .map(|i| {
            let idx = (i as f64 * total as f64 / n_steps as f64).round() as usize;
            if idx >= total {
                0.0
            } else {
                sig[idx]
            }
        })
        .collect();
    Ok(InferenceSigmas {
        sigmas,
        method: SamplerKind::Improved,
    })
}

/// One explicit Euler step of `dz/dσ = v` from `sigma_from` down to `sigma_to`.
pub fn step_euler(z: Point, v: Point, sigma_from: f64, sigma_to: f64) -> Result<Point> {
    if !(sigma_to < sigma_from) {
        return domain(format!(
            "Euler step needs sigma_to < sigma_from, got {sigma_from} -> {sigma_to}"
        ));
    }
    Ok(euler(z, v, sigma_to - sigma_from))
}

#[inline]
pub(crate) fn euler(z: Point, v: Point, dsigma: f64) -> Point {
    [z[0] + dsigma * v[0], z[1] + dsigma * v[1]]
}
