//! Evaluation metrics and fold aggregation.
//!
//! Multi-dimensional series are passed as `(time, dims)` arrays and reduce
//! per dimension, then average.

use std::io::{Read, Write};

use ndarray::{ArrayView1, ArrayView2, Axis};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("series lengths differ ({pred} vs {truth})")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("need at least {needed} points, got {found}")]
    TooShort { needed: usize, found: usize },
    #[error("constant series: range or variance is zero")]
    Constant,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("report csv: {0}")]
    Csv(String),
}

fn check_pair(pred: ArrayView1<f64>, truth: ArrayView1<f64>, min_len: usize) -> Result<(), MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    if truth.len() < min_len {
        return Err(MetricError::TooShort { needed: min_len, found: truth.len() });
    }
    Ok(())
}

/// Root-mean-square error as a percentage of the ground-truth range.
pub fn nrmse(pred: ArrayView1<f64>, truth: ArrayView1<f64>) -> Result<f64, MetricError> {
    check_pair(pred, truth, 2)?;
    let (lo, hi) = truth.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(MetricError::Constant);
    }
    let mse = pred.iter().zip(&truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / truth.len() as f64;
    Ok(100.0 * mse.sqrt() / range)
}

/// Sample Pearson correlation.
pub fn pcc(pred: ArrayView1<f64>, truth: ArrayView1<f64>) -> Result<f64, MetricError> {
    check_pair(pred, truth, 3)?;
    let n = truth.len() as f64;
    let (mp, mt) = (pred.sum() / n, truth.sum() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(&truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(MetricError::Constant);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn is_constant(x: ArrayView1<f64>) -> bool {
    x.iter().all(|&v| v == x[0])
}

/// Reduces column by column and averages. Columns with constant truth are
/// skipped; a constant prediction column scores `on_flat_pred`.
fn per_dim(
    pred: ArrayView2<f64>,
    truth: ArrayView2<f64>,
    f: fn(ArrayView1<f64>, ArrayView1<f64>) -> Result<f64, MetricError>,
    on_flat_pred: Option<f64>,
) -> Result<f64, MetricError> {
    if pred.dim() != truth.dim() {
        return Err(MetricError::Invalid(format!("shapes differ: {:?} vs {:?}", pred.dim(), truth.dim())));
    }
    let (mut total, mut used) = (0.0, 0);
    for (p, t) in pred.axis_iter(Axis(1)).zip(truth.axis_iter(Axis(1))) {
        if t.is_empty() || is_constant(t) {
            continue;
        }
        total += match on_flat_pred {
            Some(x) if is_constant(p) => x,
            _ => f(p, t)?,
        };
        used += 1;
    }
    if used == 0 {
        return Err(MetricError::Constant);
    }
    Ok(total / used as f64)
}

pub fn nrmse_multi(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64, MetricError> {
    per_dim(pred, truth, nrmse, None)
}

/// A constant prediction column carries no correlation and counts as 0.
pub fn pcc_multi(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64, MetricError> {
    per_dim(pred, truth, pcc, Some(0.0))
}

/// Two-sided p-value of `t = r·sqrt((n−2)/(1−r²))` under Student-t with `n−2` dof.
pub fn pcc_pvalue(r: f64, n: usize) -> Result<f64, MetricError> {
    if n < 3 {
        return Err(MetricError::TooShort { needed: 3, found: n });
    }
    if !(r.abs() <= 1.0) {
        return Err(MetricError::Invalid(format!("|r| must be <= 1, got {r}")));
    }
    if r.abs() == 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = r.abs() * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| MetricError::Invalid(e.to_string()))?;
    Ok((2.0 * dist.sf(t)).clamp(0.0, 1.0))
}

/// Percentage of matching labels.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    if truth.is_empty() {
        return Err(MetricError::TooShort { needed: 1, found: 0 });
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Summary { mean, std })
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2}±{:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Classification,
    PresentStep,
    Multistep(usize),
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Classification => f.write_str("classification"),
            Task::PresentStep => f.write_str("present_step"),
            Task::Multistep(k) => write!(f, "multistep_{k}"),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classification" => Ok(Task::Classification),
            "present_step" => Ok(Task::PresentStep),
            _ => s
                .strip_prefix("multistep_")
                .and_then(|k| k.parse().ok())
                .map(Task::Multistep)
                .ok_or_else(|| MetricError::Csv(format!("unknown task '{s}'"))),
        }
    }
}

/// Metric aggregates for one task: mean ± std across folds (or sequences).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    /// Percent.
    pub accuracy: Option<Summary>,
    /// Percent.
    pub nrmse: Option<Summary>,
    pub pcc: Option<Summary>,
    pub pvalue: Option<Summary>,
    /// Number of evaluated items (samples or sequences) behind the numbers.
    pub n: usize,
}

impl EvalReport {
    pub fn empty(task: Task) -> Self {
        EvalReport { task, accuracy: None, nrmse: None, pcc: None, pvalue: None, n: 0 }
    }

    pub fn metrics(&self) -> impl Iterator<Item = (&'static str, Summary)> + '_ {
        [("accuracy", self.accuracy), ("nrmse", self.nrmse), ("pcc", self.pcc), ("pvalue", self.pvalue)]
            .into_iter()
            .filter_map(|(name, s)| s.map(|s| (name, s)))
    }
}

/// Unweighted mean and sample std of each metric's mean across reports of one task.
pub fn aggregate(reports: &[EvalReport]) -> Result<EvalReport, MetricError> {
    let first = reports.first().ok_or(MetricError::TooShort { needed: 1, found: 0 })?;
    if reports.iter().any(|r| r.task != first.task) {
        return Err(MetricError::Invalid("cannot aggregate reports of different tasks".into()));
    }
    let collect = |get: fn(&EvalReport) -> Option<Summary>| {
        let means: Vec<f64> = reports.iter().filter_map(|r| get(r).map(|s| s.mean)).collect();
        Summary::of(&means)
    };
    Ok(EvalReport {
        task: first.task,
        accuracy: collect(|r| r.accuracy),
        nrmse: collect(|r| r.nrmse),
        pcc: collect(|r| r.pcc),
        pvalue: collect(|r| r.pvalue),
        n: reports.iter().map(|r| r.n).sum(),
    })
}

pub const REPORT_HEADER: &str = "task,metric,mean,std,n";

/// Leading comment line explaining how p-values were pooled.
pub const REPORT_NOTE: &str = "# pvalue: computed per test sequence, averaged per fold, then mean/std across folds";

pub fn write_report<W: Write>(mut out: W, reports: &[EvalReport]) -> std::io::Result<()> {
    writeln!(out, "{REPORT_NOTE}")?;
    writeln!(out, "{REPORT_HEADER}")?;
    for r in reports {
        for (name, s) in r.metrics() {
            writeln!(out, "{},{},{},{},{}", r.task, name, s.mean, s.std, r.n)?;
        }
    }
    Ok(())
}

pub fn read_report<R: Read>(input: R) -> Result<Vec<EvalReport>, MetricError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut out: Vec<EvalReport> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| MetricError::Csv(e.to_string()))?;
        let get = |i: usize| rec.get(i).ok_or_else(|| MetricError::Csv("missing column".into()));
        let task: Task = get(0)?.parse()?;
        let num = |i: usize| -> Result<f64, MetricError> { get(i)?.parse().map_err(|_| MetricError::Csv("bad number".into())) };
        let s = Summary { mean: num(2)?, std: num(3)? };
        let n: usize = get(4)?.parse().map_err(|_| MetricError::Csv("bad n".into()))?;
        if out.last().is_none_or(|r| r.task != task) {
            out.push(EvalReport::empty(task));
        }
        let report = out.last_mut().expect("just pushed");
        report.n = n;
        match get(1)? {
            "accuracy" => report.accuracy = Some(s),
            "nrmse" => report.nrmse = Some(s),
            "pcc" => report.pcc = Some(s),
            "pvalue" => report.pvalue = Some(s),
            other => return Err(MetricError::Csv(format!("unknown metric '{other}'"))),
        }
    }
    Ok(out)
}
