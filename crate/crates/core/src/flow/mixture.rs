use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::training::{normal_point, rng};
use crate::Point;

use super::SIGMA_FLOOR;

/// Isotropic Gaussian mixture in the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Point>,
    pub stds: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(weights: Vec<f64>, means: Vec<Point>, stds: Vec<f64>) -> Result<Self> {
        let spec = MixtureSpec {
            weights,
            means,
            stds,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn point_mass(mu: Point) -> Self {
        MixtureSpec {
            weights: vec![1.0],
            means: vec![mu],
            stds: vec![0.0],
        }
    }

    pub fn gaussian(mu: Point, std: f64) -> Self {
        MixtureSpec {
            weights: vec![1.0],
            means: vec![mu],
            stds: vec![std],
        }
    }

    /// Equal-weight components at (±2, 0) with standard deviation 0.3.
    pub fn benchmark() -> Self {
        MixtureSpec {
            weights: vec![0.5, 0.5],
            means: vec![[-2.0, 0.0], [2.0, 0.0]],
            stds: vec![0.3, 0.3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.stds.len() != k {
            return domain("mixture needs matching, nonempty weights/means/stds");
        }
        if self.weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return domain("mixture weights must be positive");
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return domain("mixture weights must sum to 1");
        }
        if self.stds.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return domain("component standard deviations must be >= 0");
        }
        if self.means.iter().flatten().any(|m| !m.is_finite()) {
            return domain("component means must be finite");
        }
        Ok(())
    }

    pub fn mean(&self) -> Point {
        let mut m = [0.0; 2];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            m[0] += w * mu[0];
            m[1] += w * mu[1];
        }
        m
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let n = normal_point(rng);
        let (mu, s) = (self.means[k], self.stds[k]);
        [mu[0] + s * n[0], mu[1] + s * n[1]]
    }
}

/// A named data distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Mixture(MixtureSpec),
    TwoMoons,
    Checkerboard,
}

impl DataSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            DataSource::Mixture(m) => m.validate(),
            _ => Ok(()),
        }
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match self {
            DataSource::Mixture(m) => m.sample_one(rng),
            DataSource::TwoMoons => {
                let t: f64 = rng.random_range(0.0..PI);
                let upper: bool = rng.random();
                let n = normal_point(rng);
                let (x, y) = if upper {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                [2.0 * (x - 0.5) + 0.1 * n[0], 2.0 * (y - 0.25) + 0.1 * n[1]]
            }
            DataSource::Checkerboard => {
                let x: f64 = rng.random_range(-2.0..2.0);
                let row: f64 = rng.random_range(0.0..1.0);
                let band = if rng.random::<bool>() { 0.0 } else { -2.0 };
                let y = row + band + (x.floor().rem_euclid(2.0));
                [x, y]
            }
        }
    }
}

/// `n` i.i.d. draws, reproducible for a fixed seed.
pub fn sample_data(source: &DataSource, n: usize, seed: u64) -> Result<Vec<Point>> {
    if n == 0 {
        return domain("sample_data needs n >= 1");
    }
    source.validate()?;
    let mut r = rng(seed, 0);
    Ok((0..n).map(|_| source.sample_one(&mut r)).collect())
}

/// `n` standard normal points, reproducible for a fixed seed.
pub fn sample_noise(n: usize, seed: u64) -> Vec<Point> {
    let mut r = rng(seed, NOISE_STREAM);
    (0..n).map(|_| normal_point(&mut r)).collect()
}

const NOISE_STREAM: u64 = 6;

/// `(1 − σ)·z0 + σ·ε`.
pub fn interpolate(z0: Point, eps: Point, sigma: f64) -> Result<Point> {
    if !(0.0..=1.0).contains(&sigma) {
        return domain(format!("sigma {sigma} outside [0, 1]"));
    }
    Ok(lerp(z0, eps, sigma))
}

#[inline]
pub(crate) fn lerp(z0: Point, eps: Point, sigma: f64) -> Point {
    [
        (1.0 - sigma) * z0[0] + sigma * eps[0],
        (1.0 - sigma) * z0[1] + sigma * eps[1],
    ]
}

/// A data point, a noise point and their interpolant at one noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSample {
    pub z0: Point,
    pub eps: Point,
    pub sigma: f64,
    pub z_t: Point,
}

impl FlowSample {
    pub fn new(z0: Point, eps: Point, sigma: f64) -> Result<Self> {
        Ok(FlowSample {
            z0,
            eps,
            sigma,
            z_t: interpolate(z0, eps, sigma)?,
        })
    }

    /// Conditional velocity `ε − z0` of the straight path through this sample.
    pub fn target(&self) -> Point {
        [self.eps[0] - self.z0[0], self.eps[1] - self.z0[1]]
    }
}

/// Exact marginal velocity `(z − E[x | z_σ = z]) / σ` of a Gaussian mixture.
pub fn analytic_velocity(spec: &MixtureSpec, z: Point, sigma: f64) -> Result<Point> {
    if !(SIGMA_FLOOR..=1.0).contains(&sigma) {
        return domain(format!("sigma {sigma} outside [{SIGMA_FLOOR}, 1]"));
    }
    Ok(mixture_velocity(spec, z, sigma))
}

pub(crate) fn mixture_velocity(spec: &MixtureSpec, z: Point, sigma: f64) -> Point {
    let a = 1.0 - sigma;
    let s2 = sigma * sigma;
    let k = spec.weights.len();
    let mut log_r = Vec::with_capacity(k);
    let mut post = Vec::with_capacity(k);
    for i in 0..k {
        let mu = spec.means[i];
        let prior_var = spec.stds[i] * spec.stds[i];
        let var = a * a * prior_var + s2;
        let d = [z[0] - a * mu[0], z[1] - a * mu[1]];
        log_r.push(spec.weights[i].ln() - 0.5 * (d[0] * d[0] + d[1] * d[1]) / var - var.ln());
        let gain = a * prior_var / var;
        post.push([mu[0] + gain * d[0], mu[1] + gain * d[1]]);
    }
    let max = log_r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut norm = 0.0;
    let mut mean = [0.0; 2];
    for (lr, m) in log_r.iter().zip(&post) {
        let r = (lr - max).exp();
        norm += r;
        mean[0] += r * m[0];
        mean[1] += r * m[1];
    }
    [
        (z[0] - mean[0] / norm) / sigma,
        (z[1] - mean[1] / norm) / sigma,
    ]
}
