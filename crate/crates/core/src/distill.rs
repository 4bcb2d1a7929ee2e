//! Piecewise distillation of a teacher velocity field into a few-step student.
//!
//! The trajectory from σ = 1 to σ = 0 is cut into `K` stages at the
//! boundaries `1 = t_K > … > t_0 = 0`. For a stage `k` the student learns the
//! constant velocity carrying the stage start `z_{t_k}` to the teacher's
//! solution `z_{t_{k−1}}`. Two ways of producing the stage start are
//! provided:
//!
//! * [`Method::Perflow`]: interpolate a data point and the noise at `t_k`.
//!   The start is generally not on the teacher trajectory through that noise.
//! * [`Method::Ota`]: solve the teacher ODE from the noise down to `t_k`, so
//!   every start lies on a teacher trajectory.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::exec::ExecMode;
use crate::flow::{ode::grid_point, ode::solve_unchecked, DataSource, Field, LearnedField};
use crate::netcore::{adam_step, AdamState, MlpSpec};
use crate::sched::{build_base_schedule, euler, sample_improved, DEFAULT_TRAIN_TIMESTEPS};
use crate::training::{accumulate, normal_point, rng, scale, LossRecord, TrainConfig};
use crate::Point;

pub const DEFAULT_SUBSTEPS: usize = 8;

/// Stage boundaries, stored from `t_K = 1` down to `t_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageGrid {
    boundaries: Vec<f64>,
    pub teacher_substeps: usize,
}

impl StageGrid {
    pub fn new(boundaries: Vec<f64>, teacher_substeps: usize) -> Result<Self> {
        if boundaries.len() < 2 {
            return domain("a stage grid needs at least one stage");
        }
        if boundaries[0] != 1.0 || *boundaries.last().unwrap() != 0.0 {
            return domain("stage boundaries must run from exactly 1 to exactly 0");
        }
        if boundaries.windows(2).any(|w| !(w[1] < w[0])) {
            return domain("stage boundaries must be strictly decreasing");
        }
        if teacher_substeps == 0 {
            return domain("teacher_substeps must be at least 1");
        }
        Ok(StageGrid {
            boundaries,
            teacher_substeps,
        })
    }

    pub fn stages(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Boundaries from `t_K = 1` to `t_0 = 0`.
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// `t_k` for `k` in `0..=K`.
    pub fn t(&self, k: usize) -> f64 {
        self.boundaries[self.stages() - k]
    }

    fn check_stage(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.stages() {
            return domain(format!("stage {k} outside 1..={}", self.stages()));
        }
        Ok(())
    }

    /// Every sub-step noise level of a stage-by-stage solve with `substeps`
    /// equal steps per stage, from 1 down to 0.
    pub fn subgrid(&self, substeps: usize) -> Vec<f64> {
        let mut out = vec![1.0];
        for w in self.boundaries.windows(2) {
            out.extend((1..=substeps).map(|i| grid_point(w[0], w[1], i, substeps)));
        }
        out
    }

    pub fn with_substeps(&self, teacher_substeps: usize) -> Result<Self> {
        StageGrid::new(self.boundaries.clone(), teacher_substeps)
    }
}

/// Boundaries drawn with the improved sampler from a 1000-step schedule.
pub fn default_grid(stages: usize, shift: f64) -> Result<StageGrid> {
    if stages == 0 {
        return domain("at least one stage is required");
    }
    let sched = build_base_schedule(DEFAULT_TRAIN_TIMESTEPS, shift)?;
    StageGrid::new(sample_improved(&sched, stages)?.sigmas, DEFAULT_SUBSTEPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Perflow,
    Ota,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Perflow => "perflow",
            Method::Ota => "ota",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perflow" => Ok(Method::Perflow),
            "ota" => Ok(Method::Ota),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    PerflowOfftrajectory,
    OtaOntrajectory,
}

/// One training pair for stage `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillPair {
    pub stage: usize,
    pub start: Point,
    pub end: Point,
    pub v_target: Point,
    pub t: f64,
    pub z_t: Point,
    pub provenance: Provenance,
}

impl DistillPair {
    fn build(
        grid: &StageGrid,
        k: usize,
        start: Point,
        end: Point,
        u: f64,
        provenance: Provenance,
    ) -> Self {
        let (hi, lo) = (grid.t(k), grid.t(k - 1));
        let dt = lo - hi;
        let v_target = [(end[0] - start[0]) / dt, (end[1] - start[1]) / dt];
        let t = lo + u * (hi - lo);
        let z_t = euler(start, v_target, t - hi);
        DistillPair {
            stage: k,
            start,
            end,
            v_target,
            t,
            z_t,
            provenance,
        }
    }
}

/// Teacher state at `t_k`, reached stage by stage from `eps` at σ = 1.
pub fn on_trajectory_start<F: Field + ?Sized>(
    teacher: &F,
    eps: Point,
    k: usize,
    grid: &StageGrid,
) -> Result<Point> {
    grid.check_stage(k)?;
    Ok(ota_start(teacher, eps, k, grid))
}

fn ota_start<F: Field + ?Sized>(teacher: &F, eps: Point, k: usize, grid: &StageGrid) -> Point {
    let mut z = eps;
    for j in (k + 1..=grid.stages()).rev() {
        z = solve_unchecked(teacher, z, grid.t(j), grid.t(j - 1), grid.teacher_substeps);
    }
    z
}

fn stage_end<F: Field + ?Sized>(teacher: &F, start: Point, k: usize, grid: &StageGrid) -> Point {
    solve_unchecked(
        teacher,
        start,
        grid.t(k),
        grid.t(k - 1),
        grid.teacher_substeps,
    )
}

pub(crate) fn perflow_pair<F: Field + ?Sized>(
    teacher: &F,
    z0: Point,
    eps: Point,
    k: usize,
    grid: &StageGrid,
    u: f64,
) -> DistillPair {
    let tk = grid.t(k);
    let start = crate::flow::mixture::lerp(z0, eps, tk);
    let end = stage_end(teacher, start, k, grid);
    DistillPair::build(grid, k, start, end, u, Provenance::PerflowOfftrajectory)
}

pub(crate) fn ota_pair<F: Field + ?Sized>(
    teacher: &F,
    eps: Point,
    k: usize,
    grid: &StageGrid,
    u: f64,
) -> DistillPair {
    let start = ota_start(teacher, eps, k, grid);
    let end = stage_end(teacher, start, k, grid);
    DistillPair::build(grid, k, start, end, u, Provenance::OtaOntrajectory)
}

/// Off-trajectory pair: the stage start interpolates `z0` and `eps` at `t_k`.
pub fn make_pair_perflow<F: Field + ?Sized, R: Rng + ?Sized>(
    teacher: &F,
    z0: Point,
    eps: Point,
    k: usize,
    grid: &StageGrid,
    rng: &mut R,
) -> Result<DistillPair> {
    grid.check_stage(k)?;
    let u = rng.random::<f64>();
    Ok(perflow_pair(teacher, z0, eps, k, grid, u))
}

/// On-trajectory pair: the stage start is the teacher solve from `eps`.
pub fn make_pair_ota<F: Field + ?Sized, R: Rng + ?Sized>(
    teacher: &F,
    eps: Point,
    k: usize,
    grid: &StageGrid,
    rng: &mut R,
) -> Result<DistillPair> {
    grid.check_stage(k)?;
    let u = rng.random::<f64>();
    Ok(ota_pair(teacher, eps, k, grid, u))
}

/// Mean of `‖v_S(z_t, t) − v*‖²` over the batch.
pub fn distill_loss<F: Field + ?Sized>(student: &F, pairs: &[DistillPair]) -> Result<f64> {
    if pairs.is_empty() {
        return domain("distill_loss needs a nonempty batch");
    }
    let mut total = 0.0;
    for p in pairs {
        let v = student.velocity(p.z_t, p.t);
        total += (v[0] - p.v_target[0]).powi(2) + (v[1] - p.v_target[1]).powi(2);
    }
    let loss = total / pairs.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Training("distillation loss is not finite".into()));
    }
    Ok(loss)
}

/// Random inputs for one pair, drawn up front so pair construction can run in
/// any order.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairDraw {
    z0: Point,
    eps: Point,
    k: usize,
    u: f64,
}

pub(crate) fn draw_pairs<R: Rng + ?Sized>(
    rng: &mut R,
    data: &DataSource,
    stages: usize,
    batch: usize,
) -> Vec<PairDraw> {
    (0..batch)
        .map(|_| {
            let z0 = data.sample_one(rng);
            let eps = normal_point(rng);
            let k = rng.random_range(1..=stages);
            let u = rng.random::<f64>();
            PairDraw { z0, eps, k, u }
        })
        .collect()
}

pub(crate) fn build_pairs<F: Field + ?Sized>(
    exec: ExecMode,
    teacher: &F,
    method: Method,
    grid: &StageGrid,
    draws: &[PairDraw],
) -> Vec<DistillPair> {
    exec.map(draws, |d| match method {
        Method::Perflow => perflow_pair(teacher, d.z0, d.eps, d.k, grid, d.u),
        Method::Ota => ota_pair(teacher, d.eps, d.k, grid, d.u),
    })
}

/// Mean loss and mean parameter gradient of [`distill_loss`].
pub(crate) fn distill_grad(
    exec: ExecMode,
    student: &LearnedField,
    pairs: &[DistillPair],
) -> Result<(f64, Vec<f64>)> {
    let (total, mut grads) = accumulate(exec, student.params(), pairs, |p, g| {
        let (v, trace) = student.trace(p.z_t, p.t);
        let d = [v[0] - p.v_target[0], v[1] - p.v_target[1]];
        student.backprop(&trace, [2.0 * d[0], 2.0 * d[1]], g);
        Ok(d[0] * d[0] + d[1] * d[1])
    })?;
    let n = pairs.len() as f64;
    scale(&mut grads, 1.0 / n);
    Ok((total / n, grads))
}

pub struct StudentRun {
    pub field: LearnedField,
    pub losses: Vec<LossRecord>,
}

/// RNG stream reserved for distillation pair draws.
pub(crate) const PAIR_STREAM: u64 = 10;

/// Online distillation: every iteration draws a fresh batch of pairs (stage
/// uniform over `1..=K`) and takes one Adam step on [`distill_loss`].
pub fn train_student<F: Field + ?Sized>(
    teacher: &F,
    method: Method,
    grid: &StageGrid,
    data: &DataSource,
    net: &MlpSpec,
    cfg: &TrainConfig,
) -> Result<StudentRun> {
    data.validate()?;
    let mut student = LearnedField::init(net)?;
    let mut opt = AdamState::new(student.params().len(), cfg.adam);
    let mut r = rng(cfg.seed, PAIR_STREAM);
    let mut losses = Vec::with_capacity(cfg.iters);
    for iter in 0..cfg.iters {
        let draws = draw_pairs(&mut r, data, grid.stages(), cfg.batch);
        let pairs = build_pairs(cfg.exec, teacher, method, grid, &draws);
        let (loss, grads) = distill_grad(cfg.exec, &student, &pairs)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "distillation loss became non-finite at iteration {iter}"
            )));
        }
        adam_step(student.params_mut(), &grads, &mut opt)?;
        losses.push(LossRecord { iter, loss });
    }
    Ok(StudentRun {
        field: student,
        losses,
    })
}

/// States after each stage of `K`-step inference, from `t_{K−1}` to `t_0`,
/// with `substeps` Euler steps per stage.
pub fn infer_states<F: Field + ?Sized>(
    field: &F,
    grid: &StageGrid,
    eps: Point,
    substeps: usize,
) -> Result<Vec<Point>> {
    if substeps == 0 {
        return domain("substeps must be at least 1");
    }
    let mut z = eps;
    let mut out = Vec::with_capacity(grid.stages());
    for k in (1..=grid.stages()).rev() {
        z = solve_unchecked(field, z, grid.t(k), grid.t(k - 1), substeps);
        if !(z[0].is_finite() && z[1].is_finite()) {
            return Err(Error::Inference(format!(
                "state became non-finite in stage {k}"
            )));
        }
        out.push(z);
    }
    Ok(out)
}

/// One Euler step per stage, evaluating the student at the stage start.
pub fn infer_few_step<F: Field + ?Sized>(
    student: &F,
    grid: &StageGrid,
    eps: Point,
) -> Result<Point> {
    Ok(*infer_states(student, grid, eps, 1)?.last().unwrap())
}

pub fn infer_batch<F: Field + ?Sized>(
    exec: ExecMode,
    student: &F,
    grid: &StageGrid,
    eps: &[Point],
) -> Result<Vec<Point>> {
    exec.map(eps, |&e| infer_few_step(student, grid, e))
        .into_iter()
        .collect()
}
