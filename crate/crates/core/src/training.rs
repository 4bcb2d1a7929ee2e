//! Shared pieces of the gradient-descent loops.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::exec::ExecMode;
use crate::netcore::{AdamConfig, MlpParams};
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    #[serde(skip)]
    pub exec: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 2000,
            batch: 256,
            adam: AdamConfig::default(),
            seed: 0,
            exec: ExecMode::auto(),
        }
    }
}

/// One row of a loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub iter: usize,
    pub loss: f64,
}

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub(crate) fn normal_point<R: Rng + ?Sized>(rng: &mut R) -> Point {
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

/// Runs `per_item` over `items` in fixed chunks, each adding its parameter
/// gradient into a chunk-local buffer and returning `N` scalar contributions
/// (losses, diagnostics). Chunk results are summed in chunk order, so the
/// totals do not depend on the execution mode.
pub(crate) fn accumulate_n<T, F, const N: usize>(
    exec: ExecMode,
    params: &MlpParams,
    items: &[T],
    per_item: F,
) -> crate::Result<([f64; N], Vec<f64>)>
where
    T: Sync,
    F: Fn(&T, &mut [f64]) -> crate::Result<[f64; N]> + Sync + Send,
{
    let parts = exec.map_chunks(items, |_, chunk| -> crate::Result<([f64; N], Vec<f64>)> {
        let mut grads = params.zero_grads();
        let mut sums = [0.0; N];
        for item in chunk {
            let vals = per_item(item, &mut grads)?;
            for (s, v) in sums.iter_mut().zip(vals) {
                *s += v;
            }
        }
        Ok((sums, grads))
    });
    let mut totals = [0.0; N];
    let mut grads = params.zero_grads();
    for part in parts {
        let (sums, g) = part?;
        for (t, s) in totals.iter_mut().zip(sums) {
            *t += s;
        }
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((totals, grads))
}

/// [`accumulate_n`] with a single scalar per item.
pub(crate) fn accumulate<T, F>(
    exec: ExecMode,
    params: &MlpParams,
    items: &[T],
    per_item: F,
) -> crate::Result<(f64, Vec<f64>)>
where
    T: Sync,
    F: Fn(&T, &mut [f64]) -> crate::Result<f64> + Sync + Send,
{
    let ([total], grads) = accumulate_n(exec, params, items, |t, g| Ok([per_item(t, g)?]))?;
    Ok((total, grads))
}

pub(crate) fn scale(grads: &mut [f64], factor: f64) {
    for g in grads {
        *g *= factor;
    }
}
