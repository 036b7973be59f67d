//! Flat `section.key=value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dffw::data::{BallSimConfig, FoldPolicy};
use dffw::experiment::{EvalConfig, ModelSpec};
use dffw::inference::VisiblePartition;
use dffw::model::ModelKind;
use dffw::training::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum TrainSplit {
    /// Training trajectories of one fold.
    Fold(usize),
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    Present,
    Multistep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub sim: BallSimConfig,
    pub data_dir: PathBuf,
    pub history_len: usize,
    pub fold_policy: FoldPolicy,
    pub split: TrainSplit,
    pub max_folds: Option<usize>,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub checkpoint: Option<PathBuf>,
    pub sweep_hidden: Vec<usize>,
    pub sweep_factors: Vec<usize>,
    pub predict_mode: PredictMode,
    /// Sample index (within each trajectory) where rollouts start.
    pub predict_start: usize,
    pub predict_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seed = 42;
        RunConfig {
            seed,
            sim: BallSimConfig { seed, ..BallSimConfig::default() },
            data_dir: PathBuf::from("data"),
            history_len: 50,
            fold_policy: FoldPolicy::OnePerClass,
            split: TrainSplit::Fold(0),
            max_folds: None,
            model: ModelSpec::standard(ModelKind::Dffw),
            train: TrainConfig { seed, ..TrainConfig::default() },
            eval: EvalConfig { seed, ..EvalConfig::default() },
            checkpoint: None,
            sweep_hidden: vec![10, 20, 40],
            sweep_factors: vec![10, 40, 100],
            predict_mode: PredictMode::Multistep,
            predict_start: 0,
            predict_steps: 50,
        }
    }
}

#[derive(Debug, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Parses `key=value` lines; `#` starts a comment. Later keys win.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError(format!("{key}: cannot parse '{v}'")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn range(key: &str, v: &str) -> Result<(f64, f64), ConfigError> {
    match list::<f64>(key, v)?.as_slice() {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(ConfigError(format!("{key}: expected 'lo,hi', got '{v}'"))),
    }
}

fn flag(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError(format!("{key}: expected true or false, got '{v}'"))),
    }
}

impl RunConfig {
    /// Applies keys in order. `seed` goes first so that the per-stage seeds
    /// it implies can still be overridden.
    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<(), ConfigError> {
        if let Some(v) = pairs.get("seed") {
            self.set_seed(parse("seed", v)?);
        }
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Run seed: data generation, training shuffle and inference sampling.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sim.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => {}
            "sim.seed" => self.sim.seed = parse(key, v)?,
            "sim.gravity" => self.sim.gravity = parse(key, v)?,
            "sim.drag" => self.sim.drag_coeff = parse(key, v)?,
            "sim.magnus" => self.sim.magnus_coeff = parse(key, v)?,
            "sim.dt" => self.sim.dt = parse(key, v)?,
            "sim.frames" => self.sim.frames = parse(key, v)?,
            "sim.trajectories_per_class" => self.sim.trajectories_per_class = parse(key, v)?,
            "sim.launch_speed" => self.sim.launch_speed_range = range(key, v)?,
            "sim.launch_angle" => self.sim.launch_angle_range = range(key, v)?,
            "sim.launch_height" => self.sim.launch_height = parse(key, v)?,
            "data.dir" => self.data_dir = PathBuf::from(v),
            "data.history_len" => self.history_len = parse(key, v)?,
            "data.fold_policy" => self.fold_policy = v.parse().map_err(ConfigError)?,
            "data.split" => {
                self.split = match v {
                    "all" => TrainSplit::All,
                    _ => TrainSplit::Fold(parse(key, v.strip_prefix("fold:").unwrap_or(v))?),
                }
            }
            "data.max_folds" => self.max_folds = if v == "all" { None } else { Some(parse(key, v)?) },
            "model.kind" => self.model.kind = v.parse().map_err(ConfigError)?,
            "model.n_h" => self.model.n_h = parse(key, v)?,
            "model.n_f" => self.model.n_f = parse(key, v)?,
            "model.init_std" => self.model.init_std = parse(key, v)?,
            "model.init_seed" => self.model.init_seed = parse(key, v)?,
            "train.alpha" => self.train.alpha = parse(key, v)?,
            "train.rho" => self.train.rho = parse(key, v)?,
            "train.gamma" => self.train.gamma = parse(key, v)?,
            "train.cd_steps" => self.train.cd_steps = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.seed" => self.train.seed = parse(key, v)?,
            "eval.gibbs_steps" => self.eval.gibbs_steps = parse(key, v)?,
            "eval.classification" => self.eval.classification = flag(key, v)?,
            "eval.present_step" => self.eval.present_step = flag(key, v)?,
            "eval.horizons" => self.eval.horizons = list(key, v)?,
            "eval.rollout_stride" => self.eval.rollout_stride = parse(key, v)?,
            "eval.seed" => self.eval.seed = parse(key, v)?,
            "partition.known" => self.eval.partition.known_idx = list(key, v)?,
            "partition.unknown" => self.eval.partition.unknown_idx = list(key, v)?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "sweep.hidden" => self.sweep_hidden = list(key, v)?,
            "sweep.factors" => self.sweep_factors = list(key, v)?,
            "predict.mode" => {
                self.predict_mode = match v {
                    "present" => PredictMode::Present,
                    "multistep" => PredictMode::Multistep,
                    _ => return Err(ConfigError(format!("{key}: expected present or multistep, got '{v}'"))),
                }
            }
            "predict.start" => self.predict_start = parse(key, v)?,
            "predict.steps" => self.predict_steps = parse(key, v)?,
            _ => return Err(ConfigError(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply(&parse_pairs(&text)?)?;
        Ok(cfg)
    }

    /// Checks ranges that do not need the dataset.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.history_len == 0 {
            return Err(ConfigError("data.history_len must be >= 1".into()));
        }
        if self.eval.gibbs_steps == 0 {
            return Err(ConfigError("eval.gibbs_steps must be >= 1".into()));
        }
        VisiblePartition::new(
            self.eval.partition.known_idx.clone(),
            self.eval.partition.unknown_idx.clone(),
            dffw::data::PRESENT_DIMS,
        )
        .map_err(|e| ConfigError(format!("partition: {e}")))?;
        Ok(())
    }
}
