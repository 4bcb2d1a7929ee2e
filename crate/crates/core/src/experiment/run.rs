use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentMethod};
use super::{EVAL_STREAM, REFERENCE_SUBSTEPS};
use crate::adv::{train_adversarial, Discriminator};
use crate::diag::{
    energy_distance, expected_velocity_residual, interstage_distance,
    teacher_trajectory_divergence, w2_exact_small, InterstageConfig, MismatchReport, StartKind,
    W2_MAX_POINTS,
};
use crate::distill::{infer_batch, train_student, Method, StageGrid};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::flow::ode::solve_unchecked;
use crate::flow::{AnalyticField, Field, LearnedField, MixtureSpec, VelocityField};
use crate::netcore::save_checkpoint;
use crate::training::{normal_point, rng};
use crate::Point;

/// σ levels at which the student's first-moment residual is probed.
pub const PROBE_SIGMAS: [f64; 3] = [0.25, 0.5, 0.75];

/// Few-step samples of a field and their distance to the data.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleEval {
    pub samples: Vec<Point>,
    pub reference: Vec<Point>,
    /// Mean exact W2 over consecutive 256-point subsamples.
    pub w2: f64,
    pub energy_distance: f64,
}

/// Runs few-step inference from `n` noise draws and compares the result with
/// the same draws pushed through the exact field of `data` by a fine
/// uniform solve, which yields exact data samples paired with the noise.
pub fn evaluate_samples<F: Field + ?Sized>(
    field: &F,
    grid: &StageGrid,
    data: &MixtureSpec,
    n: usize,
    seed: u64,
    exec: ExecMode,
) -> Result<SampleEval> {
    let exact = AnalyticField::new(data.clone())?;
    let mut r = rng(seed, EVAL_STREAM);
    let eps: Vec<Point> = (0..n).map(|_| normal_point(&mut r)).collect();
    let samples = infer_batch(exec, field, grid, &eps)?;
    let reference: Vec<Point> = exec.map(&eps, |&e| {
        solve_unchecked(&exact, e, 1.0, 0.0, REFERENCE_SUBSTEPS)
    });
    let batch = n.min(W2_MAX_POINTS);
    let batches = n / batch;
    let mut w2 = 0.0;
    for b in 0..batches {
        let s = b * batch..(b + 1) * batch;
        w2 += w2_exact_small(&samples[s.clone()], &reference[s])?;
    }
    Ok(SampleEval {
        energy_distance: energy_distance(&samples, &reference)?,
        w2: w2 / batches as f64,
        samples,
        reference,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub iterations: usize,
    pub final_loss: Option<f64>,
    pub w2: Option<f64>,
    pub energy_distance: Option<f64>,
    pub eval_points: usize,
    pub mismatch: Option<MismatchReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub method: String,
    pub teacher: String,
    pub failed: bool,
    pub seeds: Vec<SeedReport>,
    /// The resolved configuration, verbatim.
    pub config: String,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }
}

struct Trained {
    field: LearnedField,
    csv: String,
    final_loss: Option<f64>,
}

fn train_one(
    cfg: &ExperimentConfig,
    teacher: &VelocityField,
    grid: &StageGrid,
    seed: u64,
) -> Result<Trained> {
    let net = cfg.student_net(seed)?;
    let train = cfg.train_config(seed);
    let data = cfg.data_source();
    match cfg.method {
        ExperimentMethod::Perflow | ExperimentMethod::Ota => {
            let method = if cfg.method == ExperimentMethod::Perflow {
                Method::Perflow
            } else {
                Method::Ota
            };
            let run = train_student(teacher, method, grid, &data, &net, &train)?;
            let mut csv = String::from("iter,loss\n");
            for r in &run.losses {
                csv.push_str(&format!("{},{:?}\n", r.iter, r.loss));
            }
            Ok(Trained {
                final_loss: run.losses.last().map(|r| r.loss),
                field: run.field,
                csv,
            })
        }
        ExperimentMethod::OtaAdv => {
            let init = LearnedField::init(&net)?;
            let disc = Discriminator::default_spec(seed ^ 0xD15C);
            let run = train_adversarial(teacher, &init, grid, &data, &cfg.adv, &disc, &train)?;
            let mut csv = String::from("iter,l_dist,l_adv,l_fm,d_loss\n");
            for r in &run.records {
                csv.push_str(&format!(
                    "{},{:?},{:?},{:?},{:?}\n",
                    r.iter, r.l_dist, r.l_adv, r.l_fm, r.d_loss
                ));
            }
            Ok(Trained {
                final_loss: run.records.last().map(|r| r.l_dist),
                field: run.field,
                csv,
            })
        }
    }
}

fn start_kind(cfg: &ExperimentConfig) -> StartKind {
    match cfg.method {
        ExperimentMethod::Perflow => StartKind::Interpolated,
        ExperimentMethod::Ota => StartKind::OnTrajectory,
        ExperimentMethod::OtaAdv => match cfg.adv.pairs {
            Method::Perflow => StartKind::Interpolated,
            Method::Ota => StartKind::OnTrajectory,
        },
    }
}

fn points_text(points: &[Point]) -> String {
    points
        .iter()
        .map(|p| format!("{:?} {:?}\n", p[0], p[1]))
        .collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(Error::from)
}

/// Trains the student of every seed with the loaded teacher, evaluates it and
/// writes the artefacts.
fn run_seed(
    cfg: &ExperimentConfig,
    teacher: &VelocityField,
    grid: &StageGrid,
    seed: u64,
) -> Result<SeedReport> {
    let dir = cfg.output.join(format!("seed-{seed}"));
    fs::create_dir_all(&dir)?;
    let trained = match train_one(cfg, teacher, grid, seed) {
        Ok(t) => t,
        Err(e @ (Error::Training(_) | Error::Inference(_))) => {
            return Ok(SeedReport {
                seed,
                status: RunStatus::Failed,
                error: Some(e.to_string()),
                iterations: cfg.iters,
                final_loss: None,
                w2: None,
                energy_distance: None,
                eval_points: 0,
                mismatch: None,
            })
        }
        Err(e) => return Err(e),
    };
    write(&dir.join("losses.csv"), &trained.csv)?;
    let comments: Vec<String> = cfg.to_text().lines().map(String::from).collect();
    save_checkpoint(&dir.join("student.ckpt"), trained.field.params(), &comments)?;

    let exec = ExecMode::auto();
    let eval = evaluate_samples(&trained.field, grid, &cfg.data, cfg.eval_n, seed, exec)?;
    write(&dir.join("samples.txt"), &points_text(&eval.samples))?;

    let divergence = teacher_trajectory_divergence(teacher, grid, cfg.eval_n, seed, exec)?;
    let icfg = InterstageConfig {
        n: cfg.eval_n,
        seed,
        permutations: cfg.permutations,
        start: start_kind(cfg),
        student_substeps: 1,
        exec,
    };
    let interstage = interstage_distance(teacher, &trained.field, grid, &cfg.data_source(), &icfg)?;
    let residuals = PROBE_SIGMAS
        .iter()
        .map(|&s| expected_velocity_residual(&trained.field, &cfg.data, s, cfg.eval_n.max(2), seed))
        .collect::<Result<Vec<_>>>()?;
    let mismatch = MismatchReport::new(&divergence, &interstage, residuals, cfg.eval_n, &icfg)?;
    write(&dir.join("mismatch.json"), &mismatch.to_json())?;
    write(&dir.join("mismatch.csv"), &mismatch.to_csv())?;

    Ok(SeedReport {
        seed,
        status: RunStatus::Ok,
        error: None,
        iterations: cfg.iters,
        final_loss: trained.final_loss,
        w2: Some(eval.w2),
        energy_distance: Some(eval.energy_distance),
        eval_points: cfg.eval_n,
        mismatch: Some(mismatch),
    })
}

/// Trains and evaluates one student per seed and writes, under
/// `cfg.output`: `config.txt`, `summary.json` and per seed `losses.csv`,
/// `student.ckpt`, `samples.txt`, `mismatch.json` and `mismatch.csv`.
///
/// A seed whose training diverges is recorded as failed and the report is
/// flagged; the other seeds still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let teacher = cfg.load_teacher()?;
    fs::create_dir_all(&cfg.output)?;
    write(&cfg.output.join("config.txt"), &cfg.to_text())?;
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        seeds.push(run_seed(cfg, &teacher, &grid, seed)?);
    }
    let report = ExperimentReport {
        method: cfg.method.to_string(),
        teacher: cfg.teacher.to_string(),
        failed: seeds.iter().any(|s| s.status == RunStatus::Failed),
        seeds,
        config: cfg.to_text(),
    };
    write(&cfg.output.join("summary.json"), &report.to_json())?;
    Ok(report)
}
