//! Sequential two-chain contrastive divergence.
//!
//! Every sample drives two short Markov chains. The first clamps label and
//! history and reconstructs the present layer from zero; the second clamps
//! present and history and reconstructs the label layer from zero. Weights
//! are updated after every chain step.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::Sample;
use crate::model::{bernoulli, Conditioned, FactorBank, Layer, ModelKind, ModelParams, Projections, MEAN_FIELD_SWEEPS};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("sample {sample}: {what} has length {found}, model expects {expected}")]
    DimensionMismatch { sample: usize, what: &'static str, expected: usize, found: usize },
    #[error("non-finite value in {group} at epoch {epoch}, sample {sample}")]
    NonFinite { group: String, epoch: usize, sample: usize },
    #[error("expected a {expected} model, got {found}")]
    WrongKind { expected: ModelKind, found: ModelKind },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub rho: f64,
    pub gamma: f64,
    pub cd_steps: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Ball-experiment settings.
    fn default() -> Self {
        TrainConfig { alpha: 1e-4, rho: 0.5, gamma: 0.0002, cd_steps: 3, epochs: 100, seed: 1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, x) in [("alpha", self.alpha), ("rho", self.rho), ("gamma", self.gamma)] {
            if !(x > 0.0 && x < 1.0) {
                return Err(TrainError::InvalidConfig(format!("{name} must lie in (0,1), got {x}")));
            }
        }
        if self.cd_steps == 0 {
            return Err(TrainError::InvalidConfig("cd_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// One array per parameter group, shaped like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub bank1: FactorBank,
    pub bank2: Option<FactorBank>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
    pub c: Array1<f64>,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let d = &params.dims;
        GradientSet {
            bank1: FactorBank::zeros(d, d.n_f1),
            bank2: params.bank2.as_ref().map(|_| FactorBank::zeros(d, d.n_f2)),
            a: Array1::zeros(d.n_v),
            b: Array1::zeros(d.n_h),
            c: Array1::zeros(d.n_l),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bank1.is_finite()
            && self.bank2.as_ref().is_none_or(FactorBank::is_finite)
            && self.a.iter().chain(&self.b).chain(&self.c).all(|x| x.is_finite())
    }
}

/// Momentum buffers, zero-initialised.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySet(pub GradientSet);

impl VelocitySet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        VelocitySet(GradientSet::zeros_like(params))
    }
}

/// Rank-one statistic of one weight matrix: `activity ⊗ coefficient`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterStat {
    pub activity: Array1<f64>,
    pub coefficient: Array1<f64>,
}

impl OuterStat {
    pub fn dense(&self) -> Array2<f64> {
        let a = self.activity.view().insert_axis(ndarray::Axis(1));
        let c = self.coefficient.view().insert_axis(ndarray::Axis(0));
        &a * &c
    }
}

/// Statistics of one bank: for each layer, the layer's (σ-scaled) activity
/// times the product of the other three layers' factor projections.
#[derive(Debug, Clone, PartialEq)]
pub struct BankStats {
    pub v: OuterStat,
    pub h: OuterStat,
    pub hist: OuterStat,
    pub l: OuterStat,
}

impl BankStats {
    pub fn get(&self, layer: Layer) -> &OuterStat {
        match layer {
            Layer::Visible => &self.v,
            Layer::Hidden => &self.h,
            Layer::History => &self.hist,
            Layer::Label => &self.l,
        }
    }

    fn dense(&self) -> FactorBank {
        FactorBank { w_v: self.v.dense(), w_h: self.h.dense(), w_hist: self.hist.dense(), w_l: self.l.dense() }
    }
}

/// Sufficient statistics of one clamped state, each equal to `-∂E/∂θ`.
/// Kept in factored form; [`Statistics::dense`] expands to a [`GradientSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Statistics {
    pub bank1: BankStats,
    pub bank2: Option<BankStats>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
    pub c: Array1<f64>,
}

impl Statistics {
    pub fn dense(&self) -> GradientSet {
        GradientSet {
            bank1: self.bank1.dense(),
            bank2: self.bank2.as_ref().map(BankStats::dense),
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
        }
    }
}

fn bank_stats(
    proj: &Projections,
    v_scaled: &Array1<f64>,
    h: ArrayView1<f64>,
    hist_scaled: &Array1<f64>,
    l: ArrayView1<f64>,
) -> BankStats {
    let stat = |activity: Array1<f64>, skip| OuterStat { activity, coefficient: proj.product(Some(skip)) };
    BankStats {
        v: stat(v_scaled.clone(), Layer::Visible),
        h: stat(h.to_owned(), Layer::Hidden),
        hist: stat(hist_scaled.clone(), Layer::History),
        l: stat(l.to_owned(), Layer::Label),
    }
}

fn statistics_in(cond: &Conditioned<'_>, v: ArrayView1<f64>, h: ArrayView1<f64>, l: ArrayView1<f64>) -> Statistics {
    let p = cond.params();
    let v_scaled = &v / &p.sigma;
    let hist_scaled = &cond.hist() / &p.sigma_hist;
    let of_bank = |second: bool| {
        cond.projections(second, v, h, l)
            .map(|proj| bank_stats(&proj, &v_scaled, h, &hist_scaled, l))
    };
    let a = Zip::from(&v).and(&p.a).and(&p.sigma).map_collect(|&v, &a, &s| (v - a) / (s * s));
    Statistics {
        bank1: of_bank(false).expect("bank 1 always present"),
        bank2: of_bank(true),
        a,
        b: h.to_owned(),
        c: l.to_owned(),
    }
}

/// Statistics of a fully specified state. Positive-phase callers pass the
/// data-clamped state, negative-phase callers the chain state.
pub fn statistics(params: &ModelParams, v: &Array1<f64>, h: &Array1<f64>, l: &Array1<f64>, hist: &Array1<f64>) -> Statistics {
    let cond = Conditioned::new(params, hist.view());
    statistics_in(&cond, v.view(), h.view(), l.view())
}

#[inline]
fn step_weight(theta: &mut f64, vel: &mut f64, delta: f64, cfg: &TrainConfig) {
    *vel = cfg.rho * *vel + cfg.alpha * (delta - cfg.gamma * *theta);
    *theta += *vel;
}

#[inline]
fn step_bias(theta: &mut f64, vel: &mut f64, delta: f64, cfg: &TrainConfig) {
    *vel = cfg.rho * *vel + cfg.alpha * delta;
    *theta += *vel;
}

fn update_biases(params: &mut ModelParams, velocity: &mut GradientSet, pos: (&Array1<f64>, &Array1<f64>, &Array1<f64>), neg: (&Array1<f64>, &Array1<f64>, &Array1<f64>), cfg: &TrainConfig) {
    let groups = [
        (&mut params.a, &mut velocity.a, pos.0, neg.0),
        (&mut params.b, &mut velocity.b, pos.1, neg.1),
        (&mut params.c, &mut velocity.c, pos.2, neg.2),
    ];
    for (theta, vel, p, n) in groups {
        Zip::from(theta).and(vel).and(p).and(n).for_each(|t, v, &p, &n| step_bias(t, v, p - n, cfg));
    }
}

/// Momentum/decay step with dense statistics:
/// `Δ = pos − neg`, `vel ← ρ·vel + α(Δ − γθ)`, `θ ← θ + vel`.
/// Weight decay applies to the factor weights only.
pub fn apply_update(params: &mut ModelParams, velocity: &mut VelocitySet, pos: &GradientSet, neg: &GradientSet, cfg: &TrainConfig) {
    let vel = &mut velocity.0;
    let banks = [
        (Some(&mut params.bank1), Some(&mut vel.bank1), Some(&pos.bank1), Some(&neg.bank1)),
        (params.bank2.as_mut(), vel.bank2.as_mut(), pos.bank2.as_ref(), neg.bank2.as_ref()),
    ];
    for (theta, v, p, n) in banks {
        let (Some(theta), Some(v), Some(p), Some(n)) = (theta, v, p, n) else { continue };
        for layer in Layer::ALL {
            Zip::from(theta.weight_mut(layer))
                .and(v.weight_mut(layer))
                .and(p.weight(layer))
                .and(n.weight(layer))
                .for_each(|t, v, &p, &n| step_weight(t, v, p - n, cfg));
        }
    }
    update_biases(params, vel, (&pos.a, &pos.b, &pos.c), (&neg.a, &neg.b, &neg.c), cfg);
}

/// Same update as [`apply_update`] computed directly from factored statistics,
/// bit-identical to expanding them first.
pub fn apply_statistics(params: &mut ModelParams, velocity: &mut VelocitySet, pos: &Statistics, neg: &Statistics, cfg: &TrainConfig) {
    let vel = &mut velocity.0;
    let banks = [
        (Some(&mut params.bank1), Some(&mut vel.bank1), Some(&pos.bank1), Some(&neg.bank1)),
        (params.bank2.as_mut(), vel.bank2.as_mut(), pos.bank2.as_ref(), neg.bank2.as_ref()),
    ];
    for (theta, v, p, n) in banks {
        let (Some(theta), Some(v), Some(p), Some(n)) = (theta, v, p, n) else { continue };
        for layer in Layer::ALL {
            let (ps, ns) = (p.get(layer), n.get(layer));
            let theta = theta.weight_mut(layer);
            let v = v.weight_mut(layer);
            for ((t_row, v_row), (&pa, &na)) in
                theta.rows_mut().into_iter().zip(v.rows_mut()).zip(ps.activity.iter().zip(&ns.activity))
            {
                Zip::from(t_row)
                    .and(v_row)
                    .and(&ps.coefficient)
                    .and(&ns.coefficient)
                    .for_each(|t, v, &pc, &nc| step_weight(t, v, pa * pc - na * nc, cfg));
            }
        }
    }
    update_biases(params, vel, (&pos.a, &pos.b, &pos.c), (&neg.a, &neg.b, &neg.c), cfg);
}

/// Per-step statistics of one chain plus its final reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub steps: Vec<(Statistics, Statistics)>,
    /// Final reconstructed layer: present mean (first chain) or label probabilities (second chain).
    pub reconstruction: Array1<f64>,
}

/// First chain: reconstruct the present layer from zero with label and
/// history clamped, updating weights after every step.
///
/// Hidden units are sampled to drive the chain; statistics use their
/// probabilities, and the present layer is set to its Gaussian mean.
pub fn chain_reconstruct_present<R: Rng + ?Sized>(
    params: &mut ModelParams,
    velocity: &mut VelocitySet,
    sample: &Sample,
    cfg: &TrainConfig,
    rng: &mut R,
    keep_trace: bool,
) -> ChainTrace {
    let l = &sample.label;
    let mut v = Array1::zeros(params.dims.n_v);
    let mut h_prob = Conditioned::new(params, sample.history.view()).hidden_probs(v.view(), l.view());
    let mut h = bernoulli(&h_prob, rng);
    let mut steps = Vec::new();
    for _ in 0..cfg.cd_steps {
        let (pos, neg) = {
            let cond = Conditioned::new(params, sample.history.view());
            let pos = statistics_in(&cond, sample.present.view(), h_prob.view(), l.view());
            v = cond.visible_mean(h.view(), l.view());
            h_prob = cond.hidden_probs(v.view(), l.view());
            h = bernoulli(&h_prob, rng);
            let neg = statistics_in(&cond, v.view(), h_prob.view(), l.view());
            (pos, neg)
        };
        apply_statistics(params, velocity, &pos, &neg, cfg);
        if keep_trace {
            steps.push((pos, neg));
        }
    }
    ChainTrace { steps, reconstruction: v }
}

/// Second chain: reconstruct the label layer from zero with present and
/// history clamped, updating weights after every step.
pub fn chain_reconstruct_label<R: Rng + ?Sized>(
    params: &mut ModelParams,
    velocity: &mut VelocitySet,
    sample: &Sample,
    cfg: &TrainConfig,
    rng: &mut R,
    keep_trace: bool,
) -> ChainTrace {
    let v = &sample.present;
    let mut l_prob = Array1::zeros(params.dims.n_l);
    let mut h_prob = Conditioned::new(params, sample.history.view()).hidden_probs(v.view(), l_prob.view());
    let mut h = bernoulli(&h_prob, rng);
    let mut steps = Vec::new();
    for _ in 0..cfg.cd_steps {
        let (pos, neg) = {
            let cond = Conditioned::new(params, sample.history.view());
            let pos = statistics_in(&cond, v.view(), h_prob.view(), sample.label.view());
            l_prob = cond.label_probs(h.view(), v.view());
            let l = bernoulli(&l_prob, rng);
            h_prob = cond.hidden_probs(v.view(), l.view());
            h = bernoulli(&h_prob, rng);
            let neg = statistics_in(&cond, v.view(), h_prob.view(), l_prob.view());
            (pos, neg)
        };
        apply_statistics(params, velocity, &pos, &neg, cfg);
        if keep_trace {
            steps.push((pos, neg));
        }
    }
    ChainTrace { steps, reconstruction: l_prob }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean squared error of the first chain's final present reconstruction.
    pub mean_recon_v: f64,
    /// Mean squared error of the second chain's final label probabilities.
    pub mean_recon_l: f64,
    /// Mean mean-field energy of the training samples after the epoch.
    pub mean_energy: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,mean_recon_v,mean_recon_l,mean_energy";

pub fn write_epoch_log<W: Write>(mut out: W, log: &[EpochLog]) -> std::io::Result<()> {
    writeln!(out, "{EPOCH_LOG_HEADER}")?;
    for e in log {
        writeln!(out, "{},{},{},{}", e.epoch, e.mean_recon_v, e.mean_recon_l, e.mean_energy)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

fn mse(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + (x - y).powi(2)) / a.len().max(1) as f64
}

/// Mean-field energy averaged over `samples`.
pub fn mean_energy(params: &ModelParams, samples: &[Sample]) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| {
            let cond = Conditioned::new(params, s.history.view());
            let (h, l) = cond.mean_field(s.present.view(), MEAN_FIELD_SWEEPS);
            cond.energy(s.present.view(), h.view(), l.view())
        })
        .sum();
    total / samples.len().max(1) as f64
}

fn check_samples(params: &ModelParams, samples: &[Sample]) -> Result<(), TrainError> {
    let d = &params.dims;
    for (i, s) in samples.iter().enumerate() {
        for (what, expected, found) in [
            ("present", d.n_v, s.present.len()),
            ("history", d.n_hist, s.history.len()),
            ("label", d.n_l, s.label.len()),
        ] {
            if expected != found {
                return Err(TrainError::DimensionMismatch { sample: i, what, expected, found });
            }
        }
    }
    Ok(())
}

/// Runs sequential contrastive divergence for `cfg.epochs` epochs over
/// normalised `samples`, visiting them in a fresh seeded shuffle each epoch.
/// `on_epoch` sees every epoch's log entry as soon as it is complete.
pub fn train(
    mut params: ModelParams,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    if cfg.epochs > 0 {
        cfg.validate()?;
    }
    check_samples(&params, samples)?;
    let mut velocity = VelocitySet::zeros_like(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut recon_v, mut recon_l) = (0.0, 0.0);
        for &idx in &order {
            let sample = &samples[idx];
            let first = chain_reconstruct_present(&mut params, &mut velocity, sample, cfg, &mut rng, false);
            recon_v += mse(&first.reconstruction, &sample.present);
            let second = chain_reconstruct_label(&mut params, &mut velocity, sample, cfg, &mut rng, false);
            recon_l += mse(&second.reconstruction, &sample.label);
            if let Some(group) = params.first_non_finite() {
                return Err(TrainError::NonFinite { group, epoch, sample: idx });
            }
        }
        let n = samples.len().max(1) as f64;
        let entry = EpochLog {
            epoch,
            mean_recon_v: recon_v / n,
            mean_recon_l: recon_l / n,
            mean_energy: mean_energy(&params, samples),
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { params, log })
}

/// [`train`] for the single-bank baseline; rejects two-bank parameters.
pub fn train_ffw(
    params: ModelParams,
    samples: &[Sample],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    if params.kind() != ModelKind::Ffw {
        return Err(TrainError::WrongKind { expected: ModelKind::Ffw, found: params.kind() });
    }
    train(params, samples, cfg, on_epoch)
}
