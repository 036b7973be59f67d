//! Cross-validated evaluation, energy comparison and the hidden/factor sweep
//! on trajectory datasets.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{build_samples, fit_normalizer, kfold_by_trajectory, DataError, FoldPolicy, NormStats, Sample, Trajectory};
use crate::data::PRESENT_DIMS;
use crate::exec::{self, ExecMode};
use crate::inference::{
    classify, dataset_energy, estimate_present, predict_multistep, EnergyStats, HistoryWindow, InferenceError, VisiblePartition,
};
use crate::metrics::{self, EvalReport, MetricError, Summary, Task};
use crate::model::{init_params, LayerDims, ModelError, ModelKind, ModelParams};
use crate::training::{train, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

/// Architecture and initialisation of one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n_h: usize,
    /// Factors per bank.
    pub n_f: usize,
    pub init_std: f64,
    pub init_seed: u64,
}

impl ModelSpec {
    /// Ball-data architecture: 10 hidden units, 100 factors per bank, init std 0.3.
    pub fn standard(kind: ModelKind) -> Self {
        ModelSpec { kind, n_h: 10, n_f: 100, init_std: 0.3, init_seed: 7 }
    }

    pub fn dims(&self, n_v: usize, n_hist: usize, n_l: usize) -> LayerDims {
        LayerDims::dffw(n_v, self.n_h, n_hist, n_l, self.n_f, self.n_f).with_kind(self.kind)
    }

    pub fn init(&self, n_v: usize, n_hist: usize, n_l: usize) -> Result<ModelParams, ModelError> {
        init_params(self.dims(n_v, n_hist, n_l), self.init_seed, self.init_std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub history_len: usize,
    pub n_classes: usize,
    pub gibbs_steps: usize,
    pub classification: bool,
    pub present_step: bool,
    /// Multi-step horizons to report; empty disables rollouts.
    pub horizons: Vec<usize>,
    /// Frames between rollout start points.
    pub rollout_stride: usize,
    /// Observed (2D) and estimated (3D) present units.
    pub partition: VisiblePartition,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            history_len: 50,
            n_classes: 4,
            gibbs_steps: crate::inference::DEFAULT_GIBBS_STEPS,
            classification: true,
            present_step: true,
            horizons: vec![1, 50],
            rollout_stride: 10,
            partition: VisiblePartition::balls(),
            seed: 11,
        }
    }
}

/// A trained model with the normaliser it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub params: ModelParams,
    pub norm: NormStats,
}

/// Fits a normaliser on `trajs`, then trains a fresh model on the z-scored samples.
pub fn fit(
    spec: &ModelSpec,
    trajs: &[Trajectory],
    history_len: usize,
    n_classes: usize,
    cfg: &TrainConfig,
) -> Result<(Fitted, Vec<crate::training::EpochLog>), ExperimentError> {
    let raw = build_samples(trajs, history_len, n_classes)?;
    let norm = fit_normalizer(&raw)?;
    let samples = norm.apply(&raw);
    let params = spec.init(PRESENT_DIMS, 2 * history_len, n_classes)?;
    let outcome = train(params, &samples, cfg, |_| {})?;
    Ok((Fitted { params: outcome.params, norm }, outcome.log))
}

/// History window holding raw observed coordinates. Features come out
/// z-scored with the history statistics; pushed frames arrive z-scored with
/// the present statistics of the `observed` units.
#[derive(Debug, Clone)]
pub struct NormalizedWindow<'a> {
    norm: &'a NormStats,
    observed: &'a [usize],
    raw: std::collections::VecDeque<Vec<f64>>,
}

impl<'a> NormalizedWindow<'a> {
    /// Seeds the window from a z-scored history vector.
    pub fn from_history(norm: &'a NormStats, observed: &'a [usize], hist: &Array1<f64>) -> Self {
        let raw = norm.denormalize_history(hist).to_vec();
        NormalizedWindow { norm, observed, raw: raw.chunks(observed.len()).map(<[f64]>::to_vec).collect() }
    }
}

impl HistoryWindow for NormalizedWindow<'_> {
    fn features(&self) -> Array1<f64> {
        let flat: Array1<f64> = self.raw.iter().flatten().copied().collect();
        self.norm.normalize_history(&flat)
    }

    fn push(&mut self, frame: &[f64]) {
        self.raw.pop_front();
        self.raw.push_back(self.observed.iter().zip(frame).map(|(&k, &x)| self.norm.denormalize_present_at(k, x)).collect());
    }
}

fn eval_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    crate::data::trajectory_rng(seed, stream as usize)
}

/// Per-trajectory xyz error metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesScore {
    pub nrmse: f64,
    pub pcc: f64,
    pub pvalue: f64,
}

fn score(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<SeriesScore, MetricError> {
    let nrmse = metrics::nrmse_multi(pred.view(), truth.view())?;
    let pcc = metrics::pcc_multi(pred.view(), truth.view())?;
    let pvalue = metrics::pcc_pvalue(pcc, truth.nrows())?;
    Ok(SeriesScore { nrmse, pcc, pvalue })
}

fn series_report(task: Task, scores: &[SeriesScore]) -> EvalReport {
    let pick = |f: fn(&SeriesScore) -> f64| Summary::of(&scores.iter().map(f).collect::<Vec<_>>());
    EvalReport {
        task,
        accuracy: None,
        nrmse: pick(|s| s.nrmse),
        pcc: pick(|s| s.pcc),
        pvalue: pick(|s| s.pvalue),
        n: scores.len(),
    }
}

fn rows_to_array(rows: &[Vec<f64>], width: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), width), |(i, j)| rows[i][j])
}

/// Raw values of the estimated units.
fn raw_unknown(norm: &NormStats, partition: &VisiblePartition, v: &Array1<f64>) -> Vec<f64> {
    partition.unknown_idx.iter().map(|&k| norm.denormalize_present_at(k, v[k])).collect()
}

/// Predicted labels for every sample of `samples` (z-scored) from the
/// observed units and history, with the estimated units at zero.
pub fn classify_samples(
    fitted: &Fitted,
    samples: &[Sample],
    cfg: &EvalConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, Array1<f64>)>, ExperimentError> {
    samples
        .iter()
        .map(|s| {
            let mut present = s.present.clone();
            for &k in &cfg.partition.unknown_idx {
                present[k] = 0.0;
            }
            Ok(classify(&fitted.params, &present, &s.history, cfg.gibbs_steps, rng)?)
        })
        .collect()
}

/// Present-step estimates of the unknown units (raw values) for consecutive
/// samples of one trajectory, with the matching ground truth.
pub fn estimate_trajectory(
    fitted: &Fitted,
    samples: &[Sample],
    cfg: &EvalConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f64>, Array2<f64>), ExperimentError> {
    let part = &cfg.partition;
    let mut pred = Vec::with_capacity(samples.len());
    let mut truth = Vec::with_capacity(samples.len());
    for s in samples {
        let observed: Vec<f64> = part.known_idx.iter().map(|&i| s.present[i]).collect();
        let v = estimate_present(&fitted.params, &observed, &s.history, None, part, cfg.gibbs_steps, rng)?;
        pred.push(raw_unknown(&fitted.norm, part, &v));
        truth.push(raw_unknown(&fitted.norm, part, &s.present));
    }
    let w = part.unknown_idx.len();
    Ok((rows_to_array(&pred, w), rows_to_array(&truth, w)))
}

/// Autonomous rollout from sample `start` of one trajectory's consecutive
/// samples, feeding back the observed units. Returns the z-scored present
/// vectors.
pub fn rollout_from(
    fitted: &Fitted,
    samples: &[Sample],
    start: usize,
    steps: usize,
    cfg: &EvalConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Array1<f64>>, ExperimentError> {
    let known = &cfg.partition.known_idx;
    let mut window = NormalizedWindow::from_history(&fitted.norm, known, &samples[start].history);
    Ok(predict_multistep(&fitted.params, &mut window, None, steps, known, cfg.gibbs_steps, rng)?)
}

/// Rollouts from every `rollout_stride`-th sample. Returns, per horizon,
/// predicted and true unknown units over the start points.
pub fn rollout_trajectory(
    fitted: &Fitted,
    samples: &[Sample],
    cfg: &EvalConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Array2<f64>, Array2<f64>)>, ExperimentError> {
    let part = &cfg.partition;
    let max_h = cfg.horizons.iter().copied().max().unwrap_or(0);
    let mut pred = vec![Vec::new(); cfg.horizons.len()];
    let mut truth = vec![Vec::new(); cfg.horizons.len()];
    let mut start = 0;
    while start + max_h <= samples.len() {
        let out = rollout_from(fitted, samples, start, max_h, cfg, rng)?;
        for (slot, &h) in cfg.horizons.iter().enumerate() {
            pred[slot].push(raw_unknown(&fitted.norm, part, &out[h - 1]));
            truth[slot].push(raw_unknown(&fitted.norm, part, &samples[start + h - 1].present));
        }
        start += cfg.rollout_stride;
    }
    let w = part.unknown_idx.len();
    Ok(pred.iter().zip(&truth).map(|(p, t)| (rows_to_array(p, w), rows_to_array(t, w))).collect())
}

/// Runs the enabled tasks for one trained model on held-out trajectories.
/// One report per task; series metrics are per trajectory then averaged.
pub fn evaluate_fitted(fitted: &Fitted, test: &[Trajectory], cfg: &EvalConfig) -> Result<Vec<EvalReport>, ExperimentError> {
    if cfg.horizons.contains(&0) || cfg.rollout_stride == 0 {
        return Err(ExperimentError::Invalid("horizons and rollout stride must be >= 1".into()));
    }
    cfg.partition.check(fitted.params.dims.n_v)?;
    let mut reports = Vec::new();
    let per_traj: Vec<Vec<Sample>> = test
        .iter()
        .map(|t| Ok(fitted.norm.apply(&crate::data::trajectory_samples(t, cfg.history_len, cfg.n_classes)?)))
        .collect::<Result<_, DataError>>()?;
    if cfg.classification {
        let mut rng = eval_rng(cfg.seed, 0);
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for samples in &per_traj {
            pred.extend(classify_samples(fitted, samples, cfg, &mut rng)?.into_iter().map(|(c, _)| c));
            truth.extend(samples.iter().map(|s| s.class_id));
        }
        let acc = metrics::accuracy(&pred, &truth)?;
        reports.push(EvalReport {
            accuracy: Some(Summary { mean: acc, std: 0.0 }),
            n: truth.len(),
            ..EvalReport::empty(Task::Classification)
        });
    }
    if cfg.present_step {
        let mut scores = Vec::new();
        for (i, samples) in per_traj.iter().enumerate() {
            let mut rng = eval_rng(cfg.seed, 1 + i as u64);
            let (pred, truth) = estimate_trajectory(fitted, samples, cfg, &mut rng)?;
            scores.push(score(&pred, &truth)?);
        }
        reports.push(series_report(Task::PresentStep, &scores));
    }
    if !cfg.horizons.is_empty() {
        let mut scores = vec![Vec::new(); cfg.horizons.len()];
        for (i, samples) in per_traj.iter().enumerate() {
            let mut rng = eval_rng(cfg.seed, 1_000_000 + i as u64);
            for (slot, (pred, truth)) in rollout_trajectory(fitted, samples, cfg, &mut rng)?.into_iter().enumerate() {
                scores[slot].push(score(&pred, &truth)?);
            }
        }
        for (&h, s) in cfg.horizons.iter().zip(&scores) {
            reports.push(series_report(Task::Multistep(h), s));
        }
    }
    Ok(reports)
}

/// One fold of one model: its reports, or why it produced none.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub outcome: Result<Vec<EvalReport>, String>,
}

/// Trains on each fold's training trajectories and evaluates on the rest.
/// Folds run through `mode`; every fold derives its own training seed. A
/// fold that fails (for instance by diverging) is recorded and the others
/// continue.
pub fn cross_validate(
    spec: &ModelSpec,
    trajs: &[Trajectory],
    policy: FoldPolicy,
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    max_folds: Option<usize>,
    mode: ExecMode,
) -> Result<Vec<FoldResult>, ExperimentError> {
    let mut splits = kfold_by_trajectory(trajs, policy)?;
    if let Some(k) = max_folds {
        splits.truncate(k);
    }
    let folds: Vec<(usize, _)> = splits.into_iter().enumerate().collect();
    Ok(exec::map(mode, &folds, |(fold, split)| {
        let pick = |idx: &[usize]| idx.iter().map(|&i| trajs[i].clone()).collect::<Vec<_>>();
        let run = || -> Result<Vec<EvalReport>, ExperimentError> {
            let cfg = TrainConfig { seed: train_cfg.seed.wrapping_add(*fold as u64), ..*train_cfg };
            let (fitted, _) = fit(spec, &pick(&split.train), eval_cfg.history_len, eval_cfg.n_classes, &cfg)?;
            let eval = EvalConfig { seed: eval_cfg.seed.wrapping_add(*fold as u64), ..eval_cfg.clone() };
            evaluate_fitted(&fitted, &pick(&split.test), &eval)
        };
        FoldResult { fold: *fold, outcome: run().map_err(|e| e.to_string()) }
    }))
}

/// Aggregates the successful folds task by task.
pub fn summarize_folds(folds: &[FoldResult]) -> Result<Vec<EvalReport>, ExperimentError> {
    let ok: Vec<&Vec<EvalReport>> = folds.iter().filter_map(|f| f.outcome.as_ref().ok()).collect();
    let Some(first) = ok.first() else {
        let why = folds.iter().find_map(|f| f.outcome.as_ref().err()).cloned().unwrap_or_else(|| "no folds".into());
        return Err(ExperimentError::Invalid(format!("every fold failed: {why}")));
    };
    first
        .iter()
        .map(|r| {
            let same: Vec<EvalReport> = ok.iter().filter_map(|f| f.iter().find(|x| x.task == r.task).cloned()).collect();
            Ok(metrics::aggregate(&same)?)
        })
        .collect()
}

/// Trains on `train_trajs` and returns the mean-field energy statistics over
/// `eval_trajs`, z-scored with the training statistics.
pub fn trained_energy(
    spec: &ModelSpec,
    train_trajs: &[Trajectory],
    eval_trajs: &[Trajectory],
    history_len: usize,
    n_classes: usize,
    cfg: &TrainConfig,
) -> Result<EnergyStats, ExperimentError> {
    let (fitted, _) = fit(spec, train_trajs, history_len, n_classes, cfg)?;
    let samples = fitted.norm.apply(&build_samples(eval_trajs, history_len, n_classes)?);
    Ok(dataset_energy(&fitted.params, &samples))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub kind: ModelKind,
    pub n_h: usize,
    pub n_f: usize,
    /// Energy statistics or the error that stopped this cell.
    pub result: Result<EnergyStats, String>,
}

pub const SWEEP_HEADER: &str = "model,n_h,n_f,energy_mean,energy_std";

/// Trains every (model, n_h, n_f) combination from scratch on `train_trajs`
/// and measures energy over `eval_trajs`. A failing cell is recorded and the
/// rest continue.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    base: &ModelSpec,
    hidden: &[usize],
    factors: &[usize],
    train_trajs: &[Trajectory],
    eval_trajs: &[Trajectory],
    history_len: usize,
    n_classes: usize,
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<Vec<SweepCell>, ExperimentError> {
    if hidden.is_empty() || factors.is_empty() {
        return Err(ExperimentError::Invalid("sweep grid is empty".into()));
    }
    let mut cells = Vec::new();
    for &n_h in hidden {
        for &n_f in factors {
            for kind in [ModelKind::Dffw, ModelKind::Ffw] {
                cells.push(ModelSpec { kind, n_h, n_f, ..*base });
            }
        }
    }
    Ok(exec::map(mode, &cells, |spec| SweepCell {
        kind: spec.kind,
        n_h: spec.n_h,
        n_f: spec.n_f,
        result: trained_energy(spec, train_trajs, eval_trajs, history_len, n_classes, cfg).map_err(|e| e.to_string()),
    }))
}

/// Writes the grid in long format. Failed cells get empty energy fields.
pub fn write_sweep<W: std::io::Write>(mut out: W, cells: &[SweepCell]) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for c in cells {
        match &c.result {
            Ok(e) => writeln!(out, "{},{},{},{},{}", c.kind, c.n_h, c.n_f, e.mean, e.std)?,
            Err(_) => writeln!(out, "{},{},{},,", c.kind, c.n_h, c.n_f)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, BallSimConfig};

    fn small_data() -> Vec<Trajectory> {
        let cfg = BallSimConfig { trajectories_per_class: 2, frames: 60, ..BallSimConfig::default() };
        generate_dataset(&cfg, ExecMode::Sequential).unwrap()
    }

    fn tiny_spec(kind: ModelKind) -> ModelSpec {
        ModelSpec { kind, n_h: 4, n_f: 6, init_std: 0.3, init_seed: 1 }
    }

    fn tiny_eval() -> EvalConfig {
        EvalConfig { history_len: 5, horizons: vec![1, 5], rollout_stride: 5, ..EvalConfig::default() }
    }

    #[test]
    fn normalized_window_round_trips_frames() {
        let data = small_data();
        let raw = build_samples(&data[..1], 5, 4).unwrap();
        let norm = fit_normalizer(&raw).unwrap();
        let z = norm.apply(&raw);
        let known = crate::data::UV_IDX;
        let mut w = NormalizedWindow::from_history(&norm, &known, &z[0].history);
        assert!((&w.features() - &z[0].history).iter().all(|d| d.abs() < 1e-12));
        w.push(&[z[0].present[3], z[0].present[4]]);
        assert!((&w.features() - &z[1].history).iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn evaluation_is_deterministic_and_mode_independent() {
        let data = small_data();
        let train_cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let run = |mode| {
            cross_validate(&tiny_spec(ModelKind::Dffw), &data, FoldPolicy::OnePerClass, &train_cfg, &tiny_eval(), None, mode).unwrap()
        };
        let a = run(ExecMode::Sequential);
        assert_eq!(a, run(ExecMode::Parallel));
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|f| f.outcome.is_ok()));
        let summary = summarize_folds(&a).unwrap();
        let tasks: Vec<Task> = summary.iter().map(|r| r.task).collect();
        assert_eq!(tasks, vec![Task::Classification, Task::PresentStep, Task::Multistep(1), Task::Multistep(5)]);
        for r in &summary {
            for (_, s) in r.metrics() {
                assert!(s.mean.is_finite() && s.std.is_finite());
            }
        }
    }

    #[test]
    fn failed_folds_are_recorded() {
        let data = small_data();
        let diverging = TrainConfig { alpha: 0.9, rho: 0.9, epochs: 3, ..TrainConfig::default() };
        let spec = ModelSpec { init_std: 3.0, ..tiny_spec(ModelKind::Dffw) };
        let folds = cross_validate(&spec, &data, FoldPolicy::OnePerClass, &diverging, &tiny_eval(), None, ExecMode::Sequential).unwrap();
        assert_eq!(folds.len(), 2);
        assert!(folds.iter().all(|f| f.outcome.as_ref().unwrap_err().contains("non-finite")));
        assert!(summarize_folds(&folds).unwrap_err().to_string().contains("every fold failed"));
    }

    #[test]
    fn sweep_records_every_cell() {
        let data = small_data();
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let cells = sweep(&tiny_spec(ModelKind::Dffw), &[2, 3], &[4], &data[..4], &data, 5, 4, &cfg, ExecMode::Parallel).unwrap();
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|c| c.result.is_ok()));
        let bad = sweep(&tiny_spec(ModelKind::Dffw), &[2], &[4], &data, &data, 500, 4, &cfg, ExecMode::Sequential).unwrap();
        assert!(bad.iter().all(|c| c.result.as_ref().unwrap_err().contains("shorter than history")));
        let mut buf = Vec::new();
        write_sweep(&mut buf, &bad).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{SWEEP_HEADER}\ndffw,2,4,,\nffw,2,4,,\n"));
        assert!(sweep(&tiny_spec(ModelKind::Dffw), &[], &[4], &data, &data, 5, 4, &cfg, ExecMode::Sequential).is_err());
    }
}
