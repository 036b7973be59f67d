//! Test-time procedures on a trained machine.

use std::collections::VecDeque;

use ndarray::Array1;
use rand::Rng;
use thiserror::Error;

use crate::data::Sample;
use crate::model::{bernoulli, Conditioned, ModelParams, MEAN_FIELD_SWEEPS};

/// Gibbs alternations used at test time unless configured otherwise.
pub const DEFAULT_GIBBS_STEPS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("non-finite prediction at rollout step {step}")]
    NonFinite { step: usize },
    #[error("gibbs_steps must be >= 1")]
    NoGibbsSteps,
    #[error("{what}: expected length {expected}, found {found}")]
    ShapeMismatch { what: &'static str, expected: usize, found: usize },
}

/// Split of the present layer into observed (clamped) and free units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisiblePartition {
    pub known_idx: Vec<usize>,
    pub unknown_idx: Vec<usize>,
}

impl VisiblePartition {
    pub fn new(known_idx: Vec<usize>, unknown_idx: Vec<usize>, n_v: usize) -> Result<Self, InferenceError> {
        let p = VisiblePartition { known_idx, unknown_idx };
        p.check(n_v)?;
        Ok(p)
    }

    /// Ball layout: `(x, y, z)` free, `(u, v)` observed.
    pub fn balls() -> Self {
        VisiblePartition { known_idx: crate::data::UV_IDX.to_vec(), unknown_idx: crate::data::XYZ_IDX.to_vec() }
    }

    /// Every unit free.
    pub fn all_free(n_v: usize) -> Self {
        VisiblePartition { known_idx: Vec::new(), unknown_idx: (0..n_v).collect() }
    }

    pub fn check(&self, n_v: usize) -> Result<(), InferenceError> {
        let mut seen = vec![false; n_v];
        for &i in self.known_idx.iter().chain(&self.unknown_idx) {
            if i >= n_v {
                return Err(InferenceError::InvalidPartition(format!("index {i} out of range for {n_v} units")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(InferenceError::InvalidPartition(format!("index {i} listed twice")));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(InferenceError::InvalidPartition(format!("unit {i} not covered")));
        }
        Ok(())
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), InferenceError> {
    if expected == found {
        Ok(())
    } else {
        Err(InferenceError::ShapeMismatch { what, expected, found })
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(x: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Infers the class from a (possibly partial) present vector and history.
///
/// The label layer starts empty; hidden and label layers are then alternated
/// `gibbs_steps` times. Returns the argmax class and the last label probabilities.
pub fn classify<R: Rng + ?Sized>(
    params: &ModelParams,
    present: &Array1<f64>,
    hist: &Array1<f64>,
    gibbs_steps: usize,
    rng: &mut R,
) -> Result<(usize, Array1<f64>), InferenceError> {
    if gibbs_steps == 0 {
        return Err(InferenceError::NoGibbsSteps);
    }
    check_len("present", params.dims.n_v, present.len())?;
    check_len("history", params.dims.n_hist, hist.len())?;
    let cond = Conditioned::new(params, hist.view());
    let mut l = Array1::zeros(params.dims.n_l);
    let mut probs = l.clone();
    for _ in 0..gibbs_steps {
        let h = bernoulli(&cond.hidden_probs(present.view(), l.view()), rng);
        probs = cond.label_probs(h.view(), present.view());
        l = bernoulli(&probs, rng);
    }
    Ok((argmax(&probs), probs))
}

/// Completes the present layer from the observed units and history.
///
/// Free units start at zero; observed units are clamped to `observed`
/// (ordered as `partition.known_idx`) throughout. Without a label, the class
/// is inferred first with [`classify`] on the partial present vector.
pub fn estimate_present<R: Rng + ?Sized>(
    params: &ModelParams,
    observed: &[f64],
    hist: &Array1<f64>,
    label: Option<&Array1<f64>>,
    partition: &VisiblePartition,
    gibbs_steps: usize,
    rng: &mut R,
) -> Result<Array1<f64>, InferenceError> {
    if gibbs_steps == 0 {
        return Err(InferenceError::NoGibbsSteps);
    }
    partition.check(params.dims.n_v)?;
    check_len("observed", partition.known_idx.len(), observed.len())?;
    check_len("history", params.dims.n_hist, hist.len())?;
    let mut v = Array1::zeros(params.dims.n_v);
    for (&i, &x) in partition.known_idx.iter().zip(observed) {
        v[i] = x;
    }
    let inferred;
    let l = match label {
        Some(l) => {
            check_len("label", params.dims.n_l, l.len())?;
            l
        }
        None => {
            let (class, _) = classify(params, &v, hist, gibbs_steps, rng)?;
            inferred = crate::data::one_hot(class, params.dims.n_l);
            &inferred
        }
    };
    let cond = Conditioned::new(params, hist.view());
    for _ in 0..gibbs_steps {
        let h = bernoulli(&cond.hidden_probs(v.view(), l.view()), rng);
        let mean = cond.visible_mean(h.view(), l.view());
        for &i in &partition.unknown_idx {
            v[i] = mean[i];
        }
    }
    Ok(v)
}

/// Sliding window of past 2D frames fed to the history layer.
pub trait HistoryWindow {
    /// Current history-layer activities.
    fn features(&self) -> Array1<f64>;
    /// Appends the newest frame (model units of the present layer's 2D
    /// part) and drops the oldest.
    fn push(&mut self, frame: &[f64]);
}

/// History kept directly in model units, oldest frame first.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameWindow {
    frames: VecDeque<Vec<f64>>,
}

impl FrameWindow {
    /// Splits a flat history vector into frames of `frame_dims` values.
    pub fn from_flat(hist: &Array1<f64>, frame_dims: usize) -> Self {
        assert!(frame_dims > 0 && hist.len() % frame_dims == 0, "history length must be a multiple of the frame size");
        let flat = hist.to_vec();
        FrameWindow { frames: flat.chunks(frame_dims).map(<[f64]>::to_vec).collect() }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

impl HistoryWindow for FrameWindow {
    fn features(&self) -> Array1<f64> {
        self.frames.iter().flatten().copied().collect()
    }

    fn push(&mut self, frame: &[f64]) {
        self.frames.pop_front();
        self.frames.push_back(frame.to_vec());
    }
}

/// Autonomous rollout: each step completes the whole present layer with no
/// observation, then feeds the `feedback_idx` part of it back into the
/// history window. Returns one present vector per step; `window` is left
/// holding the history after the last step.
pub fn predict_multistep<R: Rng + ?Sized, W: HistoryWindow + ?Sized>(
    params: &ModelParams,
    window: &mut W,
    label: Option<&Array1<f64>>,
    steps: usize,
    feedback_idx: &[usize],
    gibbs_steps: usize,
    rng: &mut R,
) -> Result<Vec<Array1<f64>>, InferenceError> {
    let free = VisiblePartition::all_free(params.dims.n_v);
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        let v = estimate_present(params, &[], &window.features(), label, &free, gibbs_steps, rng)?;
        if !v.iter().all(|x| x.is_finite()) {
            return Err(InferenceError::NonFinite { step });
        }
        let frame: Vec<f64> = feedback_idx.iter().map(|&i| v[i]).collect();
        window.push(&frame);
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyStats {
    pub mean: f64,
    pub std: f64,
}

/// Energy of every sample with hidden and label layers at their mean-field
/// activations for the clamped present and history; returns mean and
/// sample standard deviation.
pub fn dataset_energy(params: &ModelParams, samples: &[Sample]) -> EnergyStats {
    let energies: Vec<f64> = samples
        .iter()
        .map(|s| {
            let cond = Conditioned::new(params, s.history.view());
            let (h, l) = cond.mean_field(s.present.view(), MEAN_FIELD_SWEEPS);
            cond.energy(s.present.view(), h.view(), l.view())
        })
        .collect();
    let n = energies.len() as f64;
    let mean = energies.iter().sum::<f64>() / n.max(1.0);
    let std = if energies.len() > 1 {
        (energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    EnergyStats { mean, std }
}
