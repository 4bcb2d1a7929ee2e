use serde::Serialize;

use super::energy::energy_test;
use super::w2::{w2_exact_small, W2_MAX_POINTS};
use crate::distill::{infer_states, StageGrid};
use crate::error::{domain, Result};
use crate::exec::ExecMode;
use crate::flow::mixture::lerp;
use crate::flow::ode::solve_unchecked;
use crate::flow::{DataSource, Field, MixtureSpec, SIGMA_FLOOR};
use crate::training::{normal_point, rng};
use crate::Point;

const DIVERGENCE_STREAM: u64 = 3;
const INTERSTAGE_STREAM: u64 = 4;
const RESIDUAL_STREAM: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryDivergence {
    pub boundary: f64,
    pub mean: f64,
    pub se: f64,
}

/// Mean L2 gap between the continuous teacher trajectory and a piecewise run
/// that is re-initialized by interpolation at every interior boundary it
/// passes, reported at each interior boundary from high to low σ.
///
/// The interpolation anchor is the continuous run's own σ = 0 endpoint.
pub fn teacher_trajectory_divergence<F: Field + ?Sized>(
    teacher: &F,
    grid: &StageGrid,
    n: usize,
    seed: u64,
    exec: ExecMode,
) -> Result<Vec<BoundaryDivergence>> {
    if n == 0 {
        return domain("teacher_trajectory_divergence needs n >= 1");
    }
    let stages = grid.stages();
    let mut r = rng(seed, DIVERGENCE_STREAM);
    let eps: Vec<Point> = (0..n).map(|_| normal_point(&mut r)).collect();
    let gaps: Vec<Vec<f64>> = exec
        .map(&eps, |&e| {
            let continuous = infer_states(teacher, grid, e, grid.teacher_substeps)?;
            let z0 = continuous[stages - 1];
            let mut z = e;
            let mut out = Vec::with_capacity(stages - 1);
            for k in (2..=stages).rev() {
                z = solve_unchecked(teacher, z, grid.t(k), grid.t(k - 1), grid.teacher_substeps);
                let c = continuous[stages - k];
                out.push(((z[0] - c[0]).powi(2) + (z[1] - c[1]).powi(2)).sqrt());
                z = lerp(z0, e, grid.t(k - 1));
            }
            Ok(out)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    Ok((0..stages - 1)
        .map(|j| {
            let (mean, se) = mean_se(gaps.iter().map(|g| g[j]));
            BoundaryDivergence {
                boundary: grid.t(stages - 1 - j),
                mean,
                se,
            }
        })
        .collect())
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Where the training-time stage inputs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    /// `interpolate(z0, ε, t_k)` with `z0` drawn from the data.
    Interpolated,
    /// The teacher's own state at `t_k`, solved stage by stage from `ε`.
    OnTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterstageEntry {
    pub boundary: f64,
    pub energy_distance: f64,
    pub p_value: f64,
    pub w2: f64,
}

/// Settings for [`interstage_distance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterstageConfig {
    pub n: usize,
    pub seed: u64,
    pub permutations: usize,
    pub start: StartKind,
    /// Euler steps per stage when running the student.
    pub student_substeps: usize,
    pub exec: ExecMode,
}

impl Default for InterstageConfig {
    fn default() -> Self {
        InterstageConfig {
            n: 2048,
            seed: 0,
            permutations: 1000,
            start: StartKind::Interpolated,
            student_substeps: 1,
            exec: ExecMode::auto(),
        }
    }
}

/// Compares, at every interior boundary, the stage inputs seen in training
/// (set A) with the student's own outputs of the previous stage (set B).
/// The two sets use independent noise.
pub fn interstage_distance<T: Field + ?Sized, S: Field + ?Sized>(
    teacher: &T,
    student: &S,
    grid: &StageGrid,
    data: &DataSource,
    cfg: &InterstageConfig,
) -> Result<Vec<InterstageEntry>> {
    if cfg.n == 0 || cfg.student_substeps == 0 {
        return domain("interstage_distance needs n >= 1 and student_substeps >= 1");
    }
    data.validate()?;
    let stages = grid.stages();
    let mut r = rng(cfg.seed, INTERSTAGE_STREAM);
    let draws: Vec<(Point, Point, Point)> = (0..cfg.n)
        .map(|_| {
            let z0 = data.sample_one(&mut r);
            let ea = normal_point(&mut r);
            let eb = normal_point(&mut r);
            (z0, ea, eb)
        })
        .collect();
    let per_sample: Vec<(Vec<Point>, Vec<Point>)> = cfg
        .exec
        .map(&draws, |&(z0, ea, eb)| {
            let a = match cfg.start {
                StartKind::Interpolated => {
                    (1..stages).rev().map(|k| lerp(z0, ea, grid.t(k))).collect()
                }
                StartKind::OnTrajectory => {
                    let mut s = infer_states(teacher, grid, ea, grid.teacher_substeps)?;
                    s.pop();
                    s
                }
            };
            let mut b = infer_states(student, grid, eb, cfg.student_substeps)?;
            b.pop();
            Ok((a, b))
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(stages.saturating_sub(1));
    for j in 0..stages - 1 {
        let a: Vec<Point> = per_sample.iter().map(|s| s.0[j]).collect();
        let b: Vec<Point> = per_sample.iter().map(|s| s.1[j]).collect();
        let test = energy_test(
            &a,
            &b,
            cfg.permutations,
            cfg.seed.wrapping_add(j as u64),
            cfg.exec,
        )?;
        let m = cfg.n.min(W2_MAX_POINTS);
        out.push(InterstageEntry {
            boundary: grid.t(stages - 1 - j),
            energy_distance: test.statistic,
            p_value: test.p_value,
            w2: w2_exact_small(&a[..m], &b[..m])?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    pub sigma: f64,
    pub norm: f64,
    /// Root of the summed squared standard errors of the two mean
    /// components, i.e. the expected norm scale when the true residual is 0.
    pub se: f64,
    pub n: usize,
}

/// `‖mean v(z_σ, σ) + μ_data‖` over `n` interpolation states at level σ.
pub fn expected_velocity_residual<F: Field + ?Sized>(
    field: &F,
    spec: &MixtureSpec,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<Residual> {
    if !(SIGMA_FLOOR..=1.0).contains(&sigma) {
        return domain(format!("probe sigma {sigma} outside [{SIGMA_FLOOR}, 1]"));
    }
    if n < 2 {
        return domain("expected_velocity_residual needs n >= 2");
    }
    spec.validate()?;
    let mut r = rng(seed, RESIDUAL_STREAM);
    let vs: Vec<Point> = (0..n)
        .map(|_| {
            let x = spec.sample_one(&mut r);
            let e = normal_point(&mut r);
            field.velocity(lerp(x, e, sigma), sigma)
        })
        .collect();
    let mu = spec.mean();
    let mut norm2 = 0.0;
    let mut se2 = 0.0;
    for d in 0..2 {
        let (mean, se) = mean_se(vs.iter().map(|v| v[d]));
        norm2 += (mean + mu[d]).powi(2);
        se2 += se * se;
    }
    Ok(Residual {
        sigma,
        norm: norm2.sqrt(),
        se: se2.sqrt(),
        n,
    })
}

/// One line of the per-boundary report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MismatchRow {
    pub boundary: f64,
    pub divergence_mean: f64,
    pub divergence_se: f64,
    pub energy_distance: f64,
    pub p_value: f64,
    pub w2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MismatchReport {
    pub rows: Vec<MismatchRow>,
    pub residuals: Vec<Residual>,
    pub n_trajectories: usize,
    pub n_distribution: usize,
    pub permutations: usize,
    pub seed: u64,
}

impl MismatchReport {
    /// Joins divergences and distribution distances on their boundary.
    pub fn new(
        divergence: &[BoundaryDivergence],
        interstage: &[InterstageEntry],
        residuals: Vec<Residual>,
        n_trajectories: usize,
        cfg: &InterstageConfig,
    ) -> Result<Self> {
        if divergence.len() != interstage.len()
            || divergence
                .iter()
                .zip(interstage)
                .any(|(d, i)| d.boundary != i.boundary)
        {
            return domain("divergence and distance reports cover different boundaries");
        }
        let rows = divergence
            .iter()
            .zip(interstage)
            .map(|(d, i)| MismatchRow {
                boundary: d.boundary,
                divergence_mean: d.mean,
                divergence_se: d.se,
                energy_distance: i.energy_distance,
                p_value: i.p_value,
                w2: i.w2,
            })
            .collect();
        Ok(MismatchReport {
            rows,
            residuals,
            n_trajectories,
            n_distribution: cfg.n,
            permutations: cfg.permutations,
            seed: cfg.seed,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("boundary,divergence_mean,divergence_se,energy_distance,p_value,w2\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.boundary, r.divergence_mean, r.divergence_se, r.energy_distance, r.p_value, r.w2
            ));
        }
        s
    }
}
