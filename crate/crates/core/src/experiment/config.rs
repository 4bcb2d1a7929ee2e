use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::adv::{AdvConfig, GanKind};
use crate::distill::{Method, StageGrid, DEFAULT_SUBSTEPS};
use crate::error::{Error, Result};
use crate::flow::{AnalyticField, DataSource, LearnedField, MixtureSpec, VelocityField, EMBED_DIM};
use crate::netcore::{load_checkpoint, Activation, AdamConfig, MlpSpec};
use crate::sched::{build_base_schedule, SamplerKind, DEFAULT_TRAIN_TIMESTEPS};
use crate::training::TrainConfig;
use crate::Point;

/// Which student trainer an experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExperimentMethod {
    #[serde(rename = "perflow")]
    Perflow,
    #[serde(rename = "ota")]
    Ota,
    #[serde(rename = "ota+adv")]
    OtaAdv,
}

impl fmt::Display for ExperimentMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentMethod::Perflow => "perflow",
            ExperimentMethod::Ota => "ota",
            ExperimentMethod::OtaAdv => "ota+adv",
        })
    }
}

impl FromStr for ExperimentMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perflow" => Ok(ExperimentMethod::Perflow),
            "ota" => Ok(ExperimentMethod::Ota),
            "ota+adv" => Ok(ExperimentMethod::OtaAdv),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected perflow, ota or ota+adv)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TeacherSpec {
    /// The exact field of the configured data mixture.
    Analytic,
    /// A flow-matching checkpoint.
    Learned(PathBuf),
}

impl fmt::Display for TeacherSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TeacherSpec::Analytic => f.write_str("analytic"),
            TeacherSpec::Learned(p) => write!(f, "learned:{}", p.display()),
        }
    }
}

impl FromStr for TeacherSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "analytic" => Ok(TeacherSpec::Analytic),
            Some(("learned", path)) if !path.is_empty() => {
                Ok(TeacherSpec::Learned(PathBuf::from(path)))
            }
            _ => Err(Error::Config(format!(
                "teacher must be 'analytic' or 'learned:PATH', got '{s}'"
            ))),
        }
    }
}

/// Everything needed to reproduce a run.
///
/// The text form is one `key = value` per line with dotted section names;
/// `#` starts a comment. [`ExperimentConfig::to_text`] writes every key, so
/// the rendered text fully determines the run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: MixtureSpec,
    pub teacher: TeacherSpec,
    pub method: ExperimentMethod,
    pub stages: usize,
    pub shift: f64,
    pub scheduler: SamplerKind,
    pub teacher_substeps: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub adv: AdvConfig,
    pub seeds: Vec<u64>,
    pub eval_n: usize,
    pub permutations: usize,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: MixtureSpec::benchmark(),
            teacher: TeacherSpec::Analytic,
            method: ExperimentMethod::Ota,
            stages: 4,
            shift: 3.0,
            scheduler: SamplerKind::Improved,
            teacher_substeps: DEFAULT_SUBSTEPS,
            hidden: vec![64, 64, 64],
            activation: Activation::Silu,
            iters: 2000,
            batch: 256,
            lr: AdamConfig::default().lr,
            adv: AdvConfig::default(),
            seeds: vec![0],
            eval_n: 4096,
            permutations: 1000,
            output: PathBuf::from("runs/default"),
        }
    }
}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::Config(m),
        other => other,
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| parse_num(key, x)).collect()
}

fn parse_points(key: &str, v: &str) -> Result<Vec<Point>> {
    v.split(';')
        .map(|p| match parse_list::<f64>(key, p)?.as_slice() {
            [x, y] => Ok([*x, *y]),
            _ => cfg_err(format!("{key}: points are written 'x,y' separated by ';'")),
        })
        .collect()
}

fn join<T: fmt::Display>(xs: &[T], sep: &str) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}

/// Floats are written in shortest round-trip form.
fn f(x: f64) -> String {
    format!("{x:?}")
}

fn fl(xs: &[f64]) -> String {
    xs.iter().map(|&x| f(x)).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses config text, starting from the defaults. Unknown keys are
    /// errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return cfg_err(format!("line {}: expected 'key = value'", lineno + 1));
            };
            let (k, v) = (k.trim(), v.trim());
            if seen.insert(k.to_string(), ()).is_some() {
                return cfg_err(format!("key '{k}' given twice"));
            }
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "method" => self.method = v.parse()?,
            "teacher" => self.teacher = v.parse()?,
            "output" => self.output = PathBuf::from(v),
            "seeds" => self.seeds = parse_list(key, v)?,
            "data.weights" => self.data.weights = parse_list(key, v)?,
            "data.means" => self.data.means = parse_points(key, v)?,
            "data.stds" => self.data.stds = parse_list(key, v)?,
            "grid.stages" => self.stages = parse_num(key, v)?,
            "grid.shift" => self.shift = parse_num(key, v)?,
            "grid.scheduler" => self.scheduler = v.parse()?,
            "grid.teacher_substeps" => self.teacher_substeps = parse_num(key, v)?,
            "net.hidden" => self.hidden = parse_list(key, v)?,
            "net.activation" => self.activation = v.parse()?,
            "train.iters" => self.iters = parse_num(key, v)?,
            "train.batch" => self.batch = parse_num(key, v)?,
            "train.lr" => self.lr = parse_num(key, v)?,
            "adv.gan" => self.adv.gan = v.parse::<GanKind>().map_err(as_config)?,
            "adv.lambda_adv" => self.adv.lambda_adv = parse_num(key, v)?,
            "adv.lambda_fm" => self.adv.lambda_fm = parse_num(key, v)?,
            "adv.t_probs" => self.adv.timestep_probs = parse_list(key, v)?,
            "adv.warmup" => self.adv.warmup = parse_num(key, v)?,
            "adv.disc_lr" => self.adv.disc_adam.lr = parse_num(key, v)?,
            "adv.pairs" => self.adv.pairs = v.parse::<Method>()?,
            "eval.n" => self.eval_n = parse_num(key, v)?,
            "eval.permutations" => self.permutations = parse_num(key, v)?,
            other => return cfg_err(format!("unknown config key '{other}'")),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_text(&self) -> String {
        let lines = [
            ("method", self.method.to_string()),
            ("teacher", self.teacher.to_string()),
            ("output", self.output.display().to_string()),
            ("seeds", join(&self.seeds, ",")),
            ("data.weights", fl(&self.data.weights)),
            (
                "data.means",
                self.data
                    .means
                    .iter()
                    .map(|p| format!("{},{}", f(p[0]), f(p[1])))
                    .collect::<Vec<_>>()
                    .join(";"),
            ),
            ("data.stds", fl(&self.data.stds)),
            ("grid.stages", self.stages.to_string()),
            ("grid.shift", f(self.shift)),
            ("grid.scheduler", self.scheduler.to_string()),
            ("grid.teacher_substeps", self.teacher_substeps.to_string()),
            ("net.hidden", join(&self.hidden, ",")),
            ("net.activation", self.activation.to_string()),
            ("train.iters", self.iters.to_string()),
            ("train.batch", self.batch.to_string()),
            ("train.lr", f(self.lr)),
            ("adv.gan", self.adv.gan.to_string()),
            ("adv.lambda_adv", f(self.adv.lambda_adv)),
            ("adv.lambda_fm", f(self.adv.lambda_fm)),
            ("adv.t_probs", fl(&self.adv.timestep_probs)),
            ("adv.warmup", self.adv.warmup.to_string()),
            ("adv.disc_lr", f(self.adv.disc_adam.lr)),
            ("adv.pairs", self.adv.pairs.to_string()),
            ("eval.n", self.eval_n.to_string()),
            ("eval.permutations", self.permutations.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Checks ranges and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.data.validate().map_err(as_config)?;
        if let TeacherSpec::Learned(p) = &self.teacher {
            if !p.is_file() {
                return bad(format!("teacher checkpoint {} does not exist", p.display()));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if self.stages == 0 || self.teacher_substeps == 0 {
            return bad("grid.stages and grid.teacher_substeps must be at least 1".into());
        }
        if !(self.shift > 0.0 && self.shift.is_finite()) {
            return bad(format!("grid.shift must be positive, got {}", self.shift));
        }
        if self.batch == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("train.batch must be >= 1 and train.lr positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("net.hidden needs at least one nonzero width".into());
        }
        if self.eval_n == 0 || self.permutations == 0 {
            return bad("eval.n and eval.permutations must be at least 1".into());
        }
        self.adv.validate().map_err(as_config)?;
        if self.method == ExperimentMethod::OtaAdv && self.adv.timestep_probs.len() != self.stages {
            return bad(format!(
                "adv.t_probs has {} entries for {} stages",
                self.adv.timestep_probs.len(),
                self.stages
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<StageGrid> {
        let sched = build_base_schedule(DEFAULT_TRAIN_TIMESTEPS, self.shift)?;
        StageGrid::new(
            sched.sample(self.scheduler, self.stages)?.sigmas,
            self.teacher_substeps,
        )
    }

    pub fn data_source(&self) -> DataSource {
        DataSource::Mixture(self.data.clone())
    }

    pub fn load_teacher(&self) -> Result<VelocityField> {
        Ok(match &self.teacher {
            TeacherSpec::Analytic => AnalyticField::new(self.data.clone())?.into(),
            TeacherSpec::Learned(p) => LearnedField::new(load_checkpoint(p)?)?.into(),
        })
    }

    /// Student network for one seed.
    pub fn student_net(&self, seed: u64) -> Result<MlpSpec> {
        let mut widths = vec![EMBED_DIM];
        widths.extend(&self.hidden);
        widths.push(2);
        MlpSpec::new(widths, self.activation, seed)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            iters: self.iters,
            batch: self.batch,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            seed,
            ..TrainConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut cfg = ExperimentConfig::default();
        cfg.method = ExperimentMethod::OtaAdv;
        cfg.seeds = vec![3, 1, 4];
        cfg.shift = 1.0 / 3.0;
        cfg.adv.timestep_probs = vec![0.4, 0.1, 0.1, 0.4];
        let back = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parses_sections_and_comments() {
        let cfg = ExperimentConfig::from_text(
            "# run\nmethod = perflow\ngrid.stages = 2  # two stages\ndata.means = -1,0;1,0.5\nseeds=7\n",
        )
        .unwrap();
        assert_eq!(cfg.method, ExperimentMethod::Perflow);
        assert_eq!(cfg.stages, 2);
        assert_eq!(cfg.data.means, vec![[-1.0, 0.0], [1.0, 0.5]]);
        assert_eq!(cfg.seeds, vec![7]);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "method = distill",
            "grid.stages = four",
            "colour = blue",
            "seeds = 1\nseeds = 2",
            "just words",
            "teacher = learned:",
            "data.means = 1,2,3",
        ] {
            assert!(
                matches!(ExperimentConfig::from_text(text), Err(Error::Config(_))),
                "{text}"
            );
        }
        let mut cfg = ExperimentConfig::default();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        cfg.seeds = vec![0];
        cfg.teacher = TeacherSpec::Learned(PathBuf::from("/no/such/file.ckpt"));
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn grid_follows_scheduler() {
        let mut cfg = ExperimentConfig::default();
        let g = cfg.grid().unwrap();
        assert!((g.t(1) - 0.5).abs() < 1e-9);
        cfg.scheduler = SamplerKind::Original;
        assert!((cfg.grid().unwrap().t(1) - 0.0089).abs() < 2e-4);
    }
}
