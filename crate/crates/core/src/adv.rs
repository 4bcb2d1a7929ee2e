//! Trajectory-level adversarial distillation.
//!
//! The student's few-step trajectory and the teacher's many-step trajectory
//! from the same noise are compared state by state at the stage boundaries.
//! A discriminator scores `(z, σ)` and exposes its hidden activations; the
//! student is pushed to raise its scores and to match the teacher's hidden
//! activations, on top of the plain distillation loss.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distill::{
    build_pairs, distill_grad, draw_pairs, infer_states, Method, StageGrid, PAIR_STREAM,
};
use crate::error::{domain, Error, Result};
use crate::exec::ExecMode;
use crate::flow::{embed, DataSource, Field, LearnedField, EMBED_DIM};
use crate::netcore::{
    adam_step, init_params, AdamConfig, AdamState, ForwardTrace, MlpParams, MlpSpec,
};
use crate::training::{accumulate, accumulate_n, normal_point, rng, TrainConfig};
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanKind {
    Hinge,
    Lsgan,
    Wgan,
}

impl fmt::Display for GanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GanKind::Hinge => "hinge",
            GanKind::Lsgan => "lsgan",
            GanKind::Wgan => "wgan",
        })
    }
}

impl FromStr for GanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hinge" => Ok(GanKind::Hinge),
            "lsgan" => Ok(GanKind::Lsgan),
            "wgan" => Ok(GanKind::Wgan),
            other => Err(Error::Domain(format!("unknown GAN loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvConfig {
    pub lambda_adv: f64,
    pub lambda_fm: f64,
    pub gan: GanKind,
    /// Probability of comparing the state after stage 1, 2, … (highest noise
    /// first).
    pub timestep_probs: Vec<f64>,
    /// Iterations during which only the discriminator and the distillation
    /// loss are trained.
    pub warmup: usize,
    pub disc_adam: AdamConfig,
    /// Pair construction for the distillation term.
    pub pairs: Method,
}

impl Default for AdvConfig {
    fn default() -> Self {
        AdvConfig {
            lambda_adv: 0.1,
            lambda_fm: 1.0,
            gan: GanKind::Hinge,
            timestep_probs: vec![0.4, 0.2, 0.2, 0.2],
            warmup: 100,
            disc_adam: AdamConfig {
                lr: 1e-3,
                beta1: 0.5,
                beta2: 0.999,
                eps: 1e-8,
            },
            pairs: Method::Ota,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_adv >= 0.0 && self.lambda_fm >= 0.0) {
            return domain("loss weights must be non-negative");
        }
        if self.timestep_probs.is_empty()
            || self.timestep_probs.iter().any(|&p| !(p >= 0.0))
            || (self.timestep_probs.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return domain("timestep probabilities must be non-negative and sum to 1");
        }
        Ok(())
    }

    fn adversarial_terms_active(&self) -> bool {
        self.lambda_adv != 0.0 || self.lambda_fm != 0.0
    }
}

/// MLP over `(z, σ)` embeddings. All hidden layers are feature layers; the
/// final affine layer is the scalar head.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    params: MlpParams,
}

impl Discriminator {
    pub fn new(params: MlpParams) -> Result<Self> {
        let spec = params.spec();
        if spec.input_dim() != EMBED_DIM || spec.output_dim() != 1 || spec.depth() < 2 {
            return domain(
                "discriminator needs EMBED_DIM inputs, a hidden layer and a scalar head",
            );
        }
        Ok(Discriminator { params })
    }

    /// Random backbone, zero head.
    pub fn init(spec: &MlpSpec) -> Result<Self> {
        let mut params = init_params(spec)?;
        let head = spec.depth() - 1;
        params.weights_mut(head).fill(0.0);
        params.bias_mut(head).fill(0.0);
        Discriminator::new(params)
    }

    pub fn default_spec(seed: u64) -> MlpSpec {
        MlpSpec::default_net(EMBED_DIM, 1, seed)
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn num_feature_layers(&self) -> usize {
        self.params.spec().depth() - 1
    }

    fn trace(&self, z: Point, sigma: f64) -> ForwardTrace {
        self.params
            .forward_trace(&embed(z, sigma))
            .expect("input width checked at construction")
    }
}

/// Score and per-layer features of one state.
pub fn disc_forward(d: &Discriminator, z: Point, sigma: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    if !(z[0].is_finite() && z[1].is_finite() && sigma.is_finite()) {
        return domain("discriminator input must be finite");
    }
    let t = d.trace(z, sigma);
    Ok((t.output[0], t.hidden_features().to_vec()))
}

/// `−mean(scores)`.
pub fn adv_loss_student(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return domain("adv_loss_student needs a nonempty batch");
    }
    Ok(-(scores.iter().sum::<f64>() / scores.len() as f64))
}

/// Discriminator loss and its derivatives with respect to each real and fake
/// score.
pub fn disc_loss_with_grad(
    real: &[f64],
    fake: &[f64],
    kind: GanKind,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if real.is_empty() || fake.is_empty() {
        return domain("disc_loss needs nonempty batches");
    }
    let (nr, nf) = (real.len() as f64, fake.len() as f64);
    let (loss, dr, df) = match kind {
        GanKind::Hinge => (
            real.iter().map(|r| (1.0 - r).max(0.0)).sum::<f64>() / nr
                + fake.iter().map(|f| (1.0 + f).max(0.0)).sum::<f64>() / nf,
            real.iter()
                .map(|&r| if r < 1.0 { -1.0 / nr } else { 0.0 })
                .collect(),
            fake.iter()
                .map(|&f| if f > -1.0 { 1.0 / nf } else { 0.0 })
                .collect(),
        ),
        GanKind::Lsgan => (
            real.iter().map(|r| (r - 1.0).powi(2)).sum::<f64>() / nr
                + fake.iter().map(|f| f * f).sum::<f64>() / nf,
            real.iter().map(|r| 2.0 * (r - 1.0) / nr).collect(),
            fake.iter().map(|f| 2.0 * f / nf).collect(),
        ),
        GanKind::Wgan => (
            fake.iter().sum::<f64>() / nf - real.iter().sum::<f64>() / nr,
            vec![-1.0 / nr; real.len()],
            vec![1.0 / nf; fake.len()],
        ),
    };
    Ok((loss, dr, df))
}

pub fn disc_loss(real: &[f64], fake: &[f64], kind: GanKind) -> Result<f64> {
    Ok(disc_loss_with_grad(real, fake, kind)?.0)
}

/// `Σ_l ‖t_l − s_l‖₂` for one pair of feature stacks.
pub fn fm_distance(teacher: &[Vec<f64>], student: &[Vec<f64>]) -> Result<f64> {
    if teacher.len() != student.len()
        || teacher.iter().zip(student).any(|(a, b)| a.len() != b.len())
    {
        return domain("feature stacks have different shapes");
    }
    Ok(teacher
        .iter()
        .zip(student)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .sum())
}

/// Feature-matching loss averaged over a batch of feature stacks.
pub fn fm_loss(teacher: &[Vec<Vec<f64>>], student: &[Vec<Vec<f64>>]) -> Result<f64> {
    if teacher.is_empty() || teacher.len() != student.len() {
        return domain("feature batches must be nonempty and equally long");
    }
    let mut total = 0.0;
    for (t, s) in teacher.iter().zip(student) {
        total += fm_distance(t, s)?;
    }
    Ok(total / teacher.len() as f64)
}

/// `l_dist + λ_adv·l_adv + λ_FM·l_fm`.
pub fn student_objective(l_dist: f64, l_adv: f64, l_fm: f64, cfg: &AdvConfig) -> f64 {
    l_dist + cfg.lambda_adv * l_adv + cfg.lambda_fm * l_fm
}

/// Categorical draw over `1..=len(probs)`.
pub fn sample_timestep<R: Rng + ?Sized>(cfg: &AdvConfig, rng: &mut R) -> usize {
    let probs = &cfg.timestep_probs;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc && *p > 0.0 {
            return i + 1;
        }
    }
    // u landed in the rounding slack above the cumulative sum
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .map(|i| i + 1)
        .unwrap_or(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StateSource {
    Teacher,
    Student,
}

/// States reached at each stage boundary below σ = 1, each with its σ.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStates {
    pub states: Vec<(f64, Point)>,
    pub source: StateSource,
}

pub fn trajectory_states<F: Field + ?Sized>(
    field: &F,
    grid: &StageGrid,
    eps: Point,
    substeps_per_stage: usize,
    source: StateSource,
) -> Result<TrajectoryStates> {
    let states = infer_states(field, grid, eps, substeps_per_stage)?;
    let sigmas = grid.boundaries()[1..].iter().copied();
    Ok(TrajectoryStates {
        states: sigmas.zip(states).collect(),
        source,
    })
}

/// One record of the adversarial loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdvRecord {
    pub iter: usize,
    pub l_dist: f64,
    pub l_adv: f64,
    pub l_fm: f64,
    pub d_loss: f64,
}

pub struct AdvRun {
    pub field: LearnedField,
    pub discriminator: Discriminator,
    pub records: Vec<AdvRecord>,
}

/// RNG stream for noise and timestep draws of the adversarial terms.
const ADV_STREAM: u64 = 20;

#[derive(Debug, Clone, Copy)]
struct Comparison {
    eps: Point,
    step: usize,
}

/// Student state after `step` one-step stages, with the gradient of a loss on
/// that state pulled back to the student parameters.
fn unrolled_state(
    student: &LearnedField,
    grid: &StageGrid,
    eps: Point,
    step: usize,
) -> (Point, Vec<(f64, ForwardTrace)>) {
    let k_top = grid.stages();
    let mut z = eps;
    let mut tape = Vec::with_capacity(step);
    for k in (k_top + 1 - step..=k_top).rev() {
        let h = grid.t(k - 1) - grid.t(k);
        let (v, trace) = student.trace(z, grid.t(k));
        z = [z[0] + h * v[0], z[1] + h * v[1]];
        tape.push((h, trace));
    }
    (z, tape)
}

fn pull_back(
    student: &LearnedField,
    tape: &[(f64, ForwardTrace)],
    mut g: Point,
    grads: &mut [f64],
) {
    for (h, trace) in tape.iter().rev() {
        let gz = student.backprop(trace, [h * g[0], h * g[1]], grads);
        g = [g[0] + gz[0], g[1] + gz[1]];
    }
}

fn teacher_state<F: Field + ?Sized>(
    teacher: &F,
    grid: &StageGrid,
    eps: Point,
    step: usize,
) -> Point {
    let k_top = grid.stages();
    let mut z = eps;
    for k in (k_top + 1 - step..=k_top).rev() {
        z = crate::flow::ode::solve_unchecked(
            teacher,
            z,
            grid.t(k),
            grid.t(k - 1),
            grid.teacher_substeps,
        );
    }
    z
}

/// Sums of student scores and feature-matching distances over a batch of
/// comparisons, and (when `with_grad`) the gradient of
/// `λ_adv·l_adv + λ_FM·l_fm` with respect to the student parameters.
#[allow(clippy::too_many_arguments)]
fn adv_terms(
    exec: ExecMode,
    student: &LearnedField,
    disc: &Discriminator,
    grid: &StageGrid,
    comps: &[Comparison],
    states: &[(f64, Point, Point)],
    cfg: &AdvConfig,
    with_grad: bool,
) -> Result<([f64; 2], Vec<f64>)> {
    let n = comps.len() as f64;
    let idx: Vec<usize> = (0..comps.len()).collect();
    accumulate_n(exec, student.params(), &idx, |&i, g| -> Result<[f64; 2]> {
        let (sigma, real, _) = states[i];
        let c = comps[i];
        let (fake, tape) = unrolled_state(student, grid, c.eps, c.step);
        let tt = disc.trace(real, sigma);
        let ts = disc.trace(fake, sigma);
        let mut fm = 0.0;
        let mut hidden = Vec::with_capacity(disc.num_feature_layers());
        for (a, b) in tt.hidden_features().iter().zip(ts.hidden_features()) {
            let norm = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            fm += norm;
            // d‖s − t‖/ds = (s − t)/‖s − t‖, taken as zero at coincidence
            let w = if norm > 0.0 {
                cfg.lambda_fm / (n * norm)
            } else {
                0.0
            };
            hidden.push(
                b.iter()
                    .zip(a)
                    .map(|(s, t)| w * (s - t))
                    .collect::<Vec<f64>>(),
            );
        }
        if with_grad {
            let mut scratch = disc.params.zero_grads();
            let gx = disc.params.backward_trace(
                &ts,
                &[-cfg.lambda_adv / n],
                Some(&hidden),
                &mut scratch,
            )?;
            pull_back(student, &tape, [gx[0], gx[1]], g);
        }
        Ok([ts.output[0], fm])
    })
}

/// Alternating training. Each iteration takes one discriminator step (teacher
/// states real, student states fake, same noise and timestep per
/// comparison) and then one student step on
/// [`student_objective`] with fresh distillation pairs.
///
/// The distillation pairs use the same random stream as
/// [`crate::distill::train_student`], so with both weights at zero the student
/// follows exactly the plain trainer's parameter trajectory.
#[allow(clippy::too_many_arguments)]
pub fn train_adversarial<F: Field + ?Sized>(
    teacher: &F,
    student_init: &LearnedField,
    grid: &StageGrid,
    data: &DataSource,
    cfg: &AdvConfig,
    disc_spec: &MlpSpec,
    train: &TrainConfig,
) -> Result<AdvRun> {
    cfg.validate()?;
    data.validate()?;
    if cfg.timestep_probs.len() != grid.stages() {
        return domain(format!(
            "{} timestep probabilities for {} stages",
            cfg.timestep_probs.len(),
            grid.stages()
        ));
    }
    let exec = train.exec;
    let mut student = student_init.clone();
    let mut disc = Discriminator::init(disc_spec)?;
    let mut s_opt = AdamState::new(student.params().len(), train.adam);
    let mut d_opt = AdamState::new(disc.params.len(), cfg.disc_adam);
    let mut pair_rng = rng(train.seed, PAIR_STREAM);
    let mut adv_rng = rng(train.seed, ADV_STREAM);
    let mut records = Vec::with_capacity(train.iters);
    let n = train.batch as f64;

    for iter in 0..train.iters {
        // discriminator step
        let comps: Vec<Comparison> = (0..train.batch)
            .map(|_| Comparison {
                eps: normal_point(&mut adv_rng),
                step: sample_timestep(cfg, &mut adv_rng),
            })
            .collect();
        let states: Vec<(f64, Point, Point)> = exec.map(&comps, |c| {
            let sigma = grid.t(grid.stages() - c.step);
            let real = teacher_state(teacher, grid, c.eps, c.step);
            let fake = unrolled_state(&student, grid, c.eps, c.step).0;
            (sigma, real, fake)
        });
        let d_ref = &disc;
        let traces: Vec<(ForwardTrace, ForwardTrace)> =
            exec.map(&states, |&(s, r, f)| (d_ref.trace(r, s), d_ref.trace(f, s)));
        let real: Vec<f64> = traces.iter().map(|t| t.0.output[0]).collect();
        let fake: Vec<f64> = traces.iter().map(|t| t.1.output[0]).collect();
        let (d_loss, dr, df) = disc_loss_with_grad(&real, &fake, cfg.gan)?;
        if !d_loss.is_finite() {
            return Err(Error::Training(format!(
                "discriminator loss non-finite at iteration {iter}"
            )));
        }
        let idx: Vec<usize> = (0..traces.len()).collect();
        let (_, d_grads) = accumulate(exec, &disc.params, &idx, |&i, g| {
            let (tr, tf) = &traces[i];
            disc.params.backward_trace(tr, &[dr[i]], None, g)?;
            disc.params.backward_trace(tf, &[df[i]], None, g)?;
            Ok(0.0)
        })?;
        adam_step(&mut disc.params, &d_grads, &mut d_opt)?;

        // student step
        let draws = draw_pairs(&mut pair_rng, data, grid.stages(), train.batch);
        let pairs = build_pairs(exec, teacher, cfg.pairs, grid, &draws);
        let (l_dist, mut grads) = distill_grad(exec, &student, &pairs)?;

        let active = cfg.adversarial_terms_active() && iter >= cfg.warmup;
        let ([score_sum, fm_sum], adv_grads) =
            adv_terms(exec, &student, &disc, grid, &comps, &states, cfg, active)?;
        let l_adv = -score_sum / n;
        let l_fm = fm_sum / n;
        let total = student_objective(l_dist, l_adv, l_fm, cfg);
        if !total.is_finite() {
            return Err(Error::Training(format!(
                "student objective non-finite at iteration {iter}"
            )));
        }
        if active {
            for (a, b) in grads.iter_mut().zip(&adv_grads) {
                *a += b;
            }
        }
        adam_step(student.params_mut(), &grads, &mut s_opt)?;
        records.push(AdvRecord {
            iter,
            l_dist,
            l_adv,
            l_fm,
            d_loss,
        });
    }
    Ok(AdvRun {
        field: student,
        discriminator: disc,
        records,
    })
}
