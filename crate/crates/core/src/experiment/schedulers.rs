use serde::Serialize;

use crate::diag::w2_exact_small;
use crate::error::{domain, Result};
use crate::exec::ExecMode;
use crate::flow::ode::solve_unchecked;
use crate::flow::{solve_on_sigmas, AnalyticField, Field, MixtureSpec};
use crate::sched::{build_base_schedule, SamplerKind, DEFAULT_TRAIN_TIMESTEPS};
use crate::training::{normal_point, rng};
use crate::Point;

use super::REFERENCE_SUBSTEPS;

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerComparisonConfig {
    pub data: MixtureSpec,
    pub shift: f64,
    pub steps: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Points per seed; at most 256 so W2 stays exact.
    pub n: usize,
    pub exec: ExecMode,
}

impl Default for SchedulerComparisonConfig {
    fn default() -> Self {
        SchedulerComparisonConfig {
            data: MixtureSpec::benchmark(),
            shift: 3.0,
            steps: vec![4, 10, 32],
            seeds: (0..5).collect(),
            n: 256,
            exec: ExecMode::auto(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchedulerRow {
    pub scheduler: SamplerKind,
    pub steps: usize,
    pub seed: u64,
    pub w2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchedulerComparison {
    pub shift: f64,
    pub n: usize,
    pub rows: Vec<SchedulerRow>,
}

impl SchedulerComparison {
    fn w2s(&self, kind: SamplerKind, steps: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.scheduler == kind && r.steps == steps)
            .map(|r| r.w2)
            .collect()
    }

    /// Paired per-seed `(original, improved)` W2 values.
    pub fn paired(&self, steps: usize) -> Vec<(f64, f64)> {
        self.w2s(SamplerKind::Original, steps)
            .into_iter()
            .zip(self.w2s(SamplerKind::Improved, steps))
            .collect()
    }

    /// Seeds on which the improved sampler has strictly lower W2.
    pub fn improved_wins(&self, steps: usize) -> usize {
        self.paired(steps).iter().filter(|(o, i)| i < o).count()
    }

    /// Mean over seeds of `|W2_original − W2_improved|`.
    pub fn mean_abs_difference(&self, steps: usize) -> f64 {
        let p = self.paired(steps);
        p.iter().map(|(o, i)| (o - i).abs()).sum::<f64>() / p.len() as f64
    }

    /// 1.96 times the across-seed standard deviation of the improved
    /// sampler's W2: the spread of the metric itself between noise draws.
    pub fn noise_band(&self, steps: usize) -> f64 {
        let w = self.w2s(SamplerKind::Improved, steps);
        if w.len() < 2 {
            return 0.0;
        }
        let m = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        1.96 * var.sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scheduler,steps,seed,w2\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:?}\n",
                r.scheduler, r.steps, r.seed, r.w2
            ));
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut steps: Vec<usize> = self.rows.iter().map(|r| r.steps).collect();
        steps.dedup();
        let mut s = String::from(
            "steps  mean_w2_original  mean_w2_improved  improved_wins  mean_abs_diff  noise_band\n",
        );
        for n in steps {
            let p = self.paired(n);
            let mean = |f: fn(&(f64, f64)) -> f64| p.iter().map(f).sum::<f64>() / p.len() as f64;
            s.push_str(&format!(
                "{n:>5}  {:>16.5}  {:>16.5}  {:>8}/{:<4}  {:>13.5}  {:>10.5}\n",
                mean(|x| x.0),
                mean(|x| x.1),
                self.improved_wins(n),
                p.len(),
                self.mean_abs_difference(n),
                self.noise_band(n)
            ));
        }
        s
    }
}

/// N-step Euler inference of `field` under both samplers from identical
/// noise, scored by exact W2 against the same noise pushed through the exact
/// mixture field with a fine uniform solve.
pub fn compare_schedulers<F: Field + ?Sized>(
    field: &F,
    cfg: &SchedulerComparisonConfig,
) -> Result<SchedulerComparison> {
    if cfg.n == 0 || cfg.n > 256 || cfg.seeds.is_empty() || cfg.steps.contains(&0) {
        return domain(
            "compare_schedulers needs 1..=256 points, some seeds and positive step counts",
        );
    }
    let exact = AnalyticField::new(cfg.data.clone())?;
    let sched = build_base_schedule(DEFAULT_TRAIN_TIMESTEPS, cfg.shift)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let mut r = rng(seed, super::SCHEDULER_STREAM);
        let eps: Vec<Point> = (0..cfg.n).map(|_| normal_point(&mut r)).collect();
        let reference: Vec<Point> = cfg.exec.map(&eps, |&e| {
            solve_unchecked(&exact, e, 1.0, 0.0, REFERENCE_SUBSTEPS)
        });
        for &steps in &cfg.steps {
            for kind in [SamplerKind::Original, SamplerKind::Improved] {
                let sigmas = sched.sample(kind, steps)?.sigmas;
                let out: Vec<Point> = cfg
                    .exec
                    .map(&eps, |&e| solve_on_sigmas(field, e, &sigmas))
                    .into_iter()
                    .collect::<Result<_>>()?;
                rows.push(SchedulerRow {
                    scheduler: kind,
                    steps,
                    seed,
                    w2: w2_exact_small(&out, &reference)?,
                });
            }
        }
    }
    Ok(SchedulerComparison {
        shift: cfg.shift,
        n: cfg.n,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_samplers_coincide() {
        let cfg = SchedulerComparisonConfig {
            steps: vec![1],
            seeds: vec![0, 1],
            n: 64,
            ..Default::default()
        };
        let field = AnalyticField::new(cfg.data.clone()).unwrap();
        let c = compare_schedulers(&field, &cfg).unwrap();
        for (o, i) in c.paired(1) {
            assert_eq!(o, i);
        }
        assert_eq!(c.improved_wins(1), 0);
        assert_eq!(c.to_csv().lines().count(), 5);
    }

    #[test]
    fn rejects_oversized_sets() {
        let cfg = SchedulerComparisonConfig {
            n: 257,
            ..Default::default()
        };
        let field = AnalyticField::new(cfg.data.clone()).unwrap();
        assert!(compare_schedulers(&field, &cfg).is_err());
    }
}
