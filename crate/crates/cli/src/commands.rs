use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dffw::checkpoint::{Checkpoint, CheckpointError, Provenance};
use dffw::data::{self, io as dio, DataError, Trajectory};
use dffw::exec::ExecMode;
use dffw::experiment::{self, EvalConfig, ExperimentError, Fitted, FoldResult};
use dffw::metrics::{self, EvalReport};
use dffw::training::{self, TrainError};

use crate::config::{ConfigError, PredictMode, RunConfig, TrainSplit};

/// Failure with a stable code for scripts.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new("config", e.0)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match e {
            DataError::TrajectoryTooShort { .. } => "trajectory_too_short",
            DataError::Io { .. } => "io",
            DataError::Csv { .. } | DataError::Schema(_) => "bad_data",
            _ => "data",
        };
        CliError::new(code, e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::new(e.code(), e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::NonFinite { .. } => "diverged",
            TrainError::InvalidConfig(_) => "config",
            _ => "train",
        };
        CliError::new(code, e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Data(e) => e.into(),
            ExperimentError::Train(e) => e.into(),
            e => CliError::new("experiment", e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn n_classes(trajs: &[Trajectory]) -> usize {
    trajs.iter().map(|t| t.class_id + 1).max().unwrap_or(0)
}

pub fn generate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let trajs = data::generate_dataset(&cfg.sim, ExecMode::Parallel)?;
    if let Some(t) = trajs.iter().find(|t| t.len() <= cfg.history_len) {
        return Err(DataError::TrajectoryTooShort { traj_id: t.id, frames: t.len(), history: cfg.history_len }.into());
    }
    Ok(dio::write_dataset(out, &trajs, cfg.sim.seed)?)
}

struct Dataset {
    trajs: Vec<Trajectory>,
    seed: u64,
    n_classes: usize,
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let trajs = dio::read_dataset(&cfg.data_dir)?;
    let seed = dio::manifest_seed(&cfg.data_dir)?;
    let n_classes = n_classes(&trajs);
    Ok(Dataset { trajs, seed, n_classes })
}

/// Training and held-out trajectories under the configured split.
fn split(cfg: &RunConfig, trajs: &[Trajectory]) -> Result<(Vec<Trajectory>, Vec<Trajectory>), CliError> {
    match cfg.split {
        TrainSplit::All => Ok((trajs.to_vec(), trajs.to_vec())),
        TrainSplit::Fold(k) => {
            let folds = data::kfold_by_trajectory(trajs, cfg.fold_policy)?;
            let s = folds
                .get(k)
                .ok_or_else(|| CliError::new("config", format!("data.split: fold {k} out of range (have {})", folds.len())))?;
            let pick = |idx: &[usize]| idx.iter().map(|&i| trajs[i].clone()).collect();
            Ok((pick(&s.train), pick(&s.test)))
        }
    }
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let ds = load_dataset(cfg)?;
    let (train_trajs, _) = split(cfg, &ds.trajs)?;
    let raw = data::build_samples(&train_trajs, cfg.history_len, ds.n_classes)?;
    let norm = data::fit_normalizer(&raw)?;
    let samples = norm.apply(&raw);
    let params = cfg
        .model
        .init(data::PRESENT_DIMS, 2 * cfg.history_len, ds.n_classes)
        .map_err(|e| CliError::new("config", e.to_string()))?;
    ensure_dir(out)?;
    let log_path = out.join("epochs.csv");
    let mut log = create(&log_path)?;
    writeln!(log, "{}", training::EPOCH_LOG_HEADER).map_err(|e| io_error(&log_path, e))?;
    let mut write_err = None;
    let outcome = training::train(params, &samples, &cfg.train, |e| {
        if let Err(err) = writeln!(log, "{},{},{},{}", e.epoch, e.mean_recon_v, e.mean_recon_l, e.mean_energy) {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_error(&log_path, e));
    }
    log.flush().map_err(|e| io_error(&log_path, e))?;
    let ck = Checkpoint {
        params: outcome.params,
        norm,
        train: cfg.train.clone(),
        provenance: Provenance {
            init_seed: cfg.model.init_seed,
            init_std: cfg.model.init_std,
            data_seed: ds.seed,
            history_len: cfg.history_len,
        },
    };
    let ck_path = out.join("model.ckpt");
    ck.save(&ck_path)?;
    let norm_path = out.join("norm.csv");
    dio::write_norm_stats(create(&norm_path)?, &ck.norm)?;
    Ok(vec![ck_path, log_path, norm_path])
}

fn load_checkpoint(cfg: &RunConfig, n_classes: usize) -> Result<Fitted, CliError> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::new("config", "this command needs --checkpoint (or checkpoint=PATH)"))?;
    let ck = Checkpoint::load(path)?;
    let d = ck.params.dims;
    let want = (data::PRESENT_DIMS, 2 * cfg.history_len, n_classes);
    if (d.n_v, d.n_hist, d.n_l) != want {
        return Err(CliError::new(
            "dim_mismatch",
            format!(
                "checkpoint has (present, history, label) = ({}, {}, {}), dataset needs {:?}",
                d.n_v, d.n_hist, d.n_l, want
            ),
        ));
    }
    Ok(Fitted { params: ck.params, norm: ck.norm })
}

fn eval_config(cfg: &RunConfig, n_classes: usize) -> EvalConfig {
    EvalConfig { history_len: cfg.history_len, n_classes, ..cfg.eval.clone() }
}

fn write_report(path: &Path, reports: &[EvalReport]) -> Result<(), CliError> {
    let mut w = create(path)?;
    metrics::write_report(&mut w, reports).map_err(|e| io_error(path, e))?;
    w.flush().map_err(|e| io_error(path, e))
}

pub const FOLDS_HEADER: &str = "fold,status,task,metric,mean,std,n";

fn write_folds(path: &Path, folds: &[FoldResult]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{FOLDS_HEADER}")?;
        for f in folds {
            match &f.outcome {
                Ok(reports) => {
                    for r in reports {
                        for (name, s) in r.metrics() {
                            writeln!(w, "{},ok,{},{},{},{},{}", f.fold, r.task, name, s.mean, s.std, r.n)?;
                        }
                    }
                }
                Err(e) => writeln!(w, "{},\"failed: {}\",,,,,", f.fold, e.replace('"', "'"))?,
            }
        }
        w.flush()
    };
    body().map_err(|e| io_error(path, e))
}

/// With a checkpoint: evaluates it on the held-out split. Without: trains
/// and evaluates every fold.
pub fn evaluate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let ds = load_dataset(cfg)?;
    let eval = eval_config(cfg, ds.n_classes);
    ensure_dir(out)?;
    let report_path = out.join("report.csv");
    if cfg.checkpoint.is_some() {
        let fitted = load_checkpoint(cfg, ds.n_classes)?;
        let (_, test) = split(cfg, &ds.trajs)?;
        let reports = experiment::evaluate_fitted(&fitted, &test, &eval)?;
        write_report(&report_path, &reports)?;
        return Ok(vec![report_path]);
    }
    let folds = experiment::cross_validate(
        &cfg.model,
        &ds.trajs,
        cfg.fold_policy,
        &cfg.train,
        &eval,
        cfg.max_folds,
        ExecMode::Parallel,
    )?;
    let folds_path = out.join("folds.csv");
    write_folds(&folds_path, &folds)?;
    write_report(&report_path, &experiment::summarize_folds(&folds)?)?;
    Ok(vec![report_path, folds_path])
}

pub fn classify(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let ds = load_dataset(cfg)?;
    let fitted = load_checkpoint(cfg, ds.n_classes)?;
    let eval = eval_config(cfg, ds.n_classes);
    let (_, test) = split(cfg, &ds.trajs)?;
    ensure_dir(out)?;
    let path = out.join("classes.csv");
    let mut w = create(&path)?;
    let probs: Vec<String> = (0..ds.n_classes).map(|k| format!("p_{k}")).collect();
    writeln!(w, "traj_id,frame,true_class,pred_class,{}", probs.join(",")).map_err(|e| io_error(&path, e))?;
    for t in &test {
        let samples = fitted.norm.apply(&data::trajectory_samples(t, cfg.history_len, ds.n_classes)?);
        let mut rng = data::trajectory_rng(eval.seed, t.id);
        for (s, (class, p)) in samples.iter().zip(experiment::classify_samples(&fitted, &samples, &eval, &mut rng)?) {
            let p: Vec<String> = p.iter().map(f64::to_string).collect();
            writeln!(w, "{},{},{},{},{}", s.traj_id, s.frame, s.class_id, class, p.join(",")).map_err(|e| io_error(&path, e))?;
        }
    }
    w.flush().map_err(|e| io_error(&path, e))?;
    Ok(vec![path])
}

pub fn predict(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let ds = load_dataset(cfg)?;
    let fitted = load_checkpoint(cfg, ds.n_classes)?;
    let eval = eval_config(cfg, ds.n_classes);
    let (_, test) = split(cfg, &ds.trajs)?;
    let names = &fitted.norm.names[..fitted.norm.n_present];
    let unknown: Vec<&str> = eval.partition.unknown_idx.iter().map(|&k| names[k].as_str()).collect();
    ensure_dir(out)?;
    let path = out.join("predictions.csv");
    let mut w = create(&path)?;
    let truth_cols: Vec<String> = unknown.iter().map(|n| format!("true_{n}")).collect();
    let pred_cols: Vec<String> = names.iter().map(|n| format!("pred_{n}")).collect();
    writeln!(w, "traj_id,step,frame,{},{}", pred_cols.join(","), truth_cols.join(",")).map_err(|e| io_error(&path, e))?;
    let raw = |v: &ndarray::Array1<f64>| fitted.norm.denormalize_present(v);
    for t in &test {
        let samples = fitted.norm.apply(&data::trajectory_samples(t, cfg.history_len, ds.n_classes)?);
        let mut rng = data::trajectory_rng(eval.seed, t.id);
        let rows: Vec<(usize, usize, ndarray::Array1<f64>)> = match cfg.predict_mode {
            PredictMode::Present => {
                let partition = &eval.partition;
                samples
                    .iter()
                    .map(|s| {
                        let obs: Vec<f64> = partition.known_idx.iter().map(|&i| s.present[i]).collect();
                        let v = dffw::inference::estimate_present(
                            &fitted.params,
                            &obs,
                            &s.history,
                            None,
                            partition,
                            eval.gibbs_steps,
                            &mut rng,
                        )
                        .map_err(|e| CliError::new("inference", e.to_string()))?;
                        Ok((0, s.frame, v))
                    })
                    .collect::<Result<_, CliError>>()?
            }
            PredictMode::Multistep => {
                if cfg.predict_start >= samples.len() {
                    return Err(CliError::new(
                        "config",
                        format!("predict.start {} beyond trajectory {} ({} samples)", cfg.predict_start, t.id, samples.len()),
                    ));
                }
                let start = &samples[cfg.predict_start];
                experiment::rollout_from(&fitted, &samples, cfg.predict_start, cfg.predict_steps, &eval, &mut rng)?
                    .into_iter()
                    .enumerate()
                    .map(|(k, v)| (k + 1, start.frame + k, v))
                    .collect()
            }
        };
        for (step, frame, v) in rows {
            let pred: Vec<String> = raw(&v).iter().map(f64::to_string).collect();
            let truth: Vec<String> = match t.frames.get(frame) {
                Some(f) => {
                    let full = [f.xyz[0], f.xyz[1], f.xyz[2], f.uv[0], f.uv[1]];
                    eval.partition.unknown_idx.iter().map(|&k| full[k].to_string()).collect()
                }
                None => vec![String::new(); unknown.len()],
            };
            writeln!(w, "{},{},{},{},{}", t.id, step, frame, pred.join(","), truth.join(",")).map_err(|e| io_error(&path, e))?;
        }
    }
    w.flush().map_err(|e| io_error(&path, e))?;
    Ok(vec![path])
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let ds = load_dataset(cfg)?;
    let (train_trajs, _) = split(cfg, &ds.trajs)?;
    let cells = experiment::sweep(
        &cfg.model,
        &cfg.sweep_hidden,
        &cfg.sweep_factors,
        &train_trajs,
        &ds.trajs,
        cfg.history_len,
        ds.n_classes,
        &cfg.train,
        ExecMode::Parallel,
    )?;
    ensure_dir(out)?;
    let path = out.join("sweep.csv");
    let mut w = create(&path)?;
    experiment::write_sweep(&mut w, &cells).map_err(|e| io_error(&path, e))?;
    w.flush().map_err(|e| io_error(&path, e))?;
    for c in &cells {
        if let Err(e) = &c.result {
            eprintln!("warning: cell {} n_h={} n_f={} failed: {e}", c.kind, c.n_h, c.n_f);
        }
    }
    Ok(vec![path])
}
