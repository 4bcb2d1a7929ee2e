//! Command-line front end for the distillation lab.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pwflow::adv::{trajectory_states, GanKind, StateSource};
use pwflow::diag::{
    expected_velocity_residual, interstage_distance, teacher_trajectory_divergence,
    InterstageConfig, MismatchReport, StartKind,
};
use pwflow::distill::{infer_batch, StageGrid, DEFAULT_SUBSTEPS};
use pwflow::exec::ExecMode;
use pwflow::experiment::{
    compare_methods, compare_schedulers, reproduce_tables, run_experiment, ExperimentConfig,
    ExperimentMethod, SchedulerComparisonConfig, TeacherSpec, PROBE_SIGMAS,
};
use pwflow::flow::{sample_noise, train_flow_matching, LearnedField, VelocityField, EMBED_DIM};
use pwflow::netcore::{load_checkpoint, save_checkpoint, MlpSpec};
use pwflow::sched::{build_base_schedule, SamplerKind, DEFAULT_TRAIN_TIMESTEPS};
use pwflow::{Error, Point};

#[derive(Parser)]
#[command(
    name = "pwflow",
    version,
    about = "Piecewise rectified-flow distillation on 2D toy data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sigma schedules.
    Schedule {
        #[command(subcommand)]
        action: ScheduleAction,
    },
    /// Recompute the published 4-step sigma rows and check them.
    ReproduceTables,
    /// Train students (or a flow-matching teacher) and write reports.
    Train(TrainArgs),
    /// Few-step sampling from a student checkpoint.
    Infer(InferArgs),
    /// Trajectory and distribution mismatch diagnostics.
    Diagnose(DiagnoseArgs),
    /// W2 of N-step inference under both samplers.
    CompareSchedulers(CompareSchedulersArgs),
    /// Seed-by-seed W2 comparison of two summary.json files.
    CompareMethods { a: PathBuf, b: PathBuf },
}

#[derive(Subcommand)]
enum ScheduleAction {
    /// Print one sigma per line.
    Print {
        #[arg(long, default_value = "improved")]
        sampler: String,
        #[arg(long, default_value_t = 3.0)]
        shift: f64,
        #[arg(long, default_value_t = 4)]
        steps: usize,
        #[arg(long, default_value_t = DEFAULT_TRAIN_TIMESTEPS)]
        timesteps: usize,
    },
}

/// Settings shared by commands that build a stage grid and a teacher.
#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    shift: Option<f64>,
    /// `analytic` or `learned:PATH`.
    #[arg(long)]
    teacher: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file (`key = value` lines); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// perflow, ota or ota+adv.
    #[arg(long)]
    method: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// One seed or a comma-separated list.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    gan: Option<String>,
    #[arg(long)]
    lambda_adv: Option<f64>,
    #[arg(long)]
    lambda_fm: Option<f64>,
    /// Comma-separated stage probabilities, highest noise first.
    #[arg(long)]
    t_probs: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train a flow-matching teacher on the data instead of a student and
    /// write `teacher.ckpt` into the output directory.
    #[arg(long)]
    flow_matching: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 4)]
    stages: usize,
    #[arg(long, default_value_t = 3.0)]
    shift: f64,
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write `sample σ x y` rows for every stage boundary instead of the
    /// final points.
    #[arg(long)]
    trajectory: bool,
    /// Output file; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Student checkpoint; without one the teacher itself is run with
    /// `--student-substeps` steps per stage.
    #[arg(long)]
    student: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SUBSTEPS)]
    student_substeps: usize,
    /// interpolated or on-trajectory.
    #[arg(long, default_value = "interpolated")]
    start: String,
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CompareSchedulersArgs {
    #[arg(long, default_value_t = 3.0)]
    shift: f64,
    #[arg(long, default_value = "0,1,2,3,4")]
    seeds: String,
    #[arg(long, default_value = "4,10,32")]
    steps: String,
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// `analytic` or `learned:PATH`.
    #[arg(long, default_value = "analytic")]
    teacher: String,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{what}: cannot parse '{x}'")))
        })
        .collect()
}

fn apply_grid(cfg: &mut ExperimentConfig, g: &GridArgs) -> Result<(), Error> {
    if let Some(k) = g.stages {
        cfg.stages = k;
        if cfg.adv.timestep_probs.len() != k {
            cfg.adv.timestep_probs = vec![1.0 / k as f64; k];
        }
    }
    if let Some(s) = g.shift {
        cfg.shift = s;
    }
    if let Some(t) = &g.teacher {
        cfg.teacher = t.parse()?;
    }
    Ok(())
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn points_text(points: &[Point]) -> String {
    points
        .iter()
        .map(|p| format!("{:?} {:?}\n", p[0], p[1]))
        .collect()
}

fn train(args: &TrainArgs) -> Result<ExitCode, Error> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = &args.method {
        cfg.method = m.parse::<ExperimentMethod>()?;
    }
    apply_grid(&mut cfg, &args.grid)?;
    if let Some(v) = args.iters {
        cfg.iters = v;
    }
    if let Some(v) = args.batch {
        cfg.batch = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(s) = &args.seed {
        cfg.seeds = list("--seed", s)?;
    }
    if let Some(g) = &args.gan {
        cfg.adv.gan = g
            .parse::<GanKind>()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    if let Some(v) = args.lambda_adv {
        cfg.adv.lambda_adv = v;
    }
    if let Some(v) = args.lambda_fm {
        cfg.adv.lambda_fm = v;
    }
    if let Some(p) = &args.t_probs {
        cfg.adv.timestep_probs = list("--t-probs", p)?;
    }
    if let Some(o) = &args.out {
        cfg.output = o.clone();
    }
    cfg.validate()?;

    if args.flow_matching {
        let seed = cfg.seeds[0];
        let net = MlpSpec::new(
            [vec![EMBED_DIM], cfg.hidden.clone(), vec![2]].concat(),
            cfg.activation,
            seed,
        )?;
        let run = train_flow_matching(&cfg.data_source(), &net, &cfg.train_config(seed))?;
        fs::create_dir_all(&cfg.output)?;
        let mut csv = String::from("iter,loss\n");
        for r in &run.losses {
            csv.push_str(&format!("{},{:?}\n", r.iter, r.loss));
        }
        fs::write(cfg.output.join("teacher_losses.csv"), csv)?;
        let path = cfg.output.join("teacher.ckpt");
        let comments: Vec<String> = cfg.to_text().lines().map(String::from).collect();
        save_checkpoint(&path, run.field.params(), &comments)?;
        println!("{}", path.display());
        return Ok(ExitCode::SUCCESS);
    }

    let report = run_experiment(&cfg)?;
    println!("{}", cfg.output.join("summary.json").display());
    for s in &report.seeds {
        match (s.w2, &s.error) {
            (Some(w2), _) => println!("seed {}: w2 {w2:.5}", s.seed),
            (_, Some(e)) => println!("seed {}: failed: {e}", s.seed),
            _ => {}
        }
    }
    Ok(if report.failed {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn load_student(path: &Path) -> Result<LearnedField, Error> {
    LearnedField::new(load_checkpoint(path)?)
}

fn grid_for(stages: usize, shift: f64) -> Result<StageGrid, Error> {
    let cfg = ExperimentConfig {
        stages,
        shift,
        ..ExperimentConfig::default()
    };
    cfg.grid()
}

fn infer(args: &InferArgs) -> Result<ExitCode, Error> {
    let student = load_student(&args.checkpoint)?;
    let grid = grid_for(args.stages, args.shift)?;
    let eps = sample_noise(args.n, args.seed);
    let text = if args.trajectory {
        let mut s = String::new();
        for (i, &e) in eps.iter().enumerate() {
            s.push_str(&format!("{i} 1.0 {:?} {:?}\n", e[0], e[1]));
            for (sigma, z) in trajectory_states(&student, &grid, e, 1, StateSource::Student)?.states
            {
                s.push_str(&format!("{i} {sigma:?} {:?} {:?}\n", z[0], z[1]));
            }
        }
        s
    } else {
        points_text(&infer_batch(ExecMode::auto(), &student, &grid, &eps)?)
    };
    write_or_print(args.out.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn diagnose(args: &DiagnoseArgs) -> Result<ExitCode, Error> {
    let mut cfg = ExperimentConfig::default();
    apply_grid(&mut cfg, &args.grid)?;
    cfg.validate()?;
    let grid = cfg.grid()?;
    let teacher = cfg.load_teacher()?;
    let start = match args.start.as_str() {
        "interpolated" => StartKind::Interpolated,
        "on-trajectory" => StartKind::OnTrajectory,
        other => return Err(Error::Config(format!("unknown start kind '{other}'"))),
    };
    let (student, substeps): (VelocityField, usize) = match &args.student {
        Some(p) => (load_student(p)?.into(), 1),
        None => (teacher.clone(), args.student_substeps),
    };
    let exec = ExecMode::auto();
    let icfg = InterstageConfig {
        n: args.n,
        seed: args.seed,
        permutations: args.permutations,
        start,
        student_substeps: substeps,
        exec,
    };
    let divergence = teacher_trajectory_divergence(&teacher, &grid, args.n, args.seed, exec)?;
    let interstage = interstage_distance(&teacher, &student, &grid, &cfg.data_source(), &icfg)?;
    let residuals = PROBE_SIGMAS
        .iter()
        .map(|&s| expected_velocity_residual(&student, &cfg.data, s, args.n.max(2), args.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let report = MismatchReport::new(&divergence, &interstage, residuals, args.n, &icfg)?;
    if let Some(p) = &args.csv {
        fs::write(p, report.to_csv())?;
    }
    write_or_print(args.json.as_deref(), &(report.to_json() + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn compare_scheds(args: &CompareSchedulersArgs) -> Result<ExitCode, Error> {
    let base = ExperimentConfig {
        teacher: args.teacher.parse::<TeacherSpec>()?,
        ..ExperimentConfig::default()
    };
    base.validate()?;
    let cfg = SchedulerComparisonConfig {
        data: base.data.clone(),
        shift: args.shift,
        steps: list("--steps", &args.steps)?,
        seeds: list("--seeds", &args.seeds)?,
        n: args.n,
        exec: ExecMode::auto(),
    };
    let c = compare_schedulers(&base.load_teacher()?, &cfg)?;
    if let Some(p) = &args.csv {
        fs::write(p, c.to_csv())?;
    }
    print!("{}", c.summary());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Schedule {
            action:
                ScheduleAction::Print {
                    sampler,
                    shift,
                    steps,
                    timesteps,
                },
        } => {
            let kind: SamplerKind = sampler.parse()?;
            let sched = build_base_schedule(timesteps, shift)?;
            print!("{}", sched.sample(kind, steps)?.to_column_text());
            Ok(ExitCode::SUCCESS)
        }
        Command::ReproduceTables => {
            let r = reproduce_tables();
            print!("{r}");
            Ok(if r.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Train(a) => train(&a),
        Command::Infer(a) => infer(&a),
        Command::Diagnose(a) => diagnose(&a),
        Command::CompareSchedulers(a) => compare_scheds(&a),
        Command::CompareMethods { a, b } => {
            let read = |p: &Path| {
                fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))
            };
            print!("{}", compare_methods(&read(&a)?, &read(&b)?)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Training(_) | Error::Inference(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
