use rand::Rng;

use crate::error::{Error, Result};
use crate::netcore::{AdamState, MlpSpec};
use crate::training::{accumulate, normal_point, rng, scale, LossRecord, TrainConfig};
use crate::Point;

use super::mixture::lerp;
use super::{DataSource, Field, FlowSample, LearnedField, SIGMA_FLOOR};

pub struct FlowMatchingRun {
    pub field: LearnedField,
    pub losses: Vec<LossRecord>,
}

fn draw<R: Rng + ?Sized>(data: &DataSource, r: &mut R) -> FlowSample {
    let z0 = data.sample_one(r);
    let eps = normal_point(r);
    let sigma = r.random_range(SIGMA_FLOOR..=1.0);
    FlowSample {
        z0,
        eps,
        sigma,
        z_t: lerp(z0, eps, sigma),
    }
}

/// Conditional flow matching: regress `v(z_σ, σ)` onto `ε − z0` with
/// σ ~ U[σ_floor, 1].
pub fn train_flow_matching(
    data: &DataSource,
    net: &MlpSpec,
    cfg: &TrainConfig,
) -> Result<FlowMatchingRun> {
    data.validate()?;
    let mut field = LearnedField::init(net)?;
    let mut opt = AdamState::new(field.params().len(), cfg.adam);
    let mut r = rng(cfg.seed, 1);
    let mut losses = Vec::with_capacity(cfg.iters);
    for iter in 0..cfg.iters {
        let batch: Vec<FlowSample> = (0..cfg.batch).map(|_| draw(data, &mut r)).collect();
        let f = &field;
        let (loss, mut grads) = accumulate(cfg.exec, field.params(), &batch, |s, g| {
            let (v, trace) = f.trace(s.z_t, s.sigma);
            let t = s.target();
            let d = [v[0] - t[0], v[1] - t[1]];
            f.backprop(&trace, [2.0 * d[0], 2.0 * d[1]], g);
            Ok(d[0] * d[0] + d[1] * d[1])
        })?;
        let n = cfg.batch as f64;
        let loss = loss / n;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "flow-matching loss became non-finite at iteration {iter}"
            )));
        }
        scale(&mut grads, 1.0 / n);
        crate::netcore::adam_step(field.params_mut(), &grads, &mut opt)?;
        losses.push(LossRecord { iter, loss });
    }
    Ok(FlowMatchingRun { field, losses })
}

/// Monte-Carlo estimate of `E‖v(z_σ, σ) − (ε − z0)‖²` on fresh draws.
pub fn flow_matching_loss<F: Field + ?Sized>(
    field: &F,
    data: &DataSource,
    n: usize,
    seed: u64,
) -> Result<f64> {
    data.validate()?;
    let mut r = rng(seed, 2);
    let total: f64 = (0..n)
        .map(|_| {
            let s = draw(data, &mut r);
            let v = field.velocity(s.z_t, s.sigma);
            let t: Point = s.target();
            (v[0] - t[0]).powi(2) + (v[1] - t[1]).powi(2)
        })
        .sum();
    Ok(total / n as f64)
}
