//! Parameters of the factored four-way machines and the pure kernels that
//! evaluate energy, per-layer inputs and activation probabilities.
//!
//! The four layers are the real-valued present layer `v`, the binary hidden
//! layer `h`, the real-valued history layer (conditioning only) and the
//! binary label layer `l`. A [`FactorBank`] replaces the fourth-order weight
//! tensor by `n_f` rank-one products; the disjunctive machine owns two banks,
//! the first feeding the present layer and the second feeding the label layer.
//! The baseline machine is the same structure with the second bank absent.
//!
//! Energy convention (shared by both machines):
//!
//! ```text
//! E = Σ_i (v_i - a_i)² / 2σ_i²  -  Σ_j b_j h_j  -  Σ_o c_o l_o
//!     - Σ_bank Σ_f  V_f · H_f · K_f · L_f
//! ```
//!
//! where `V_f = Σ_i W^v_if v_i/σ_i`, `H_f = Σ_j W^h_jf h_j`,
//! `K_f = Σ_k W^hist_kf x_k/σ_k` and `L_f = Σ_o W^l_of l_o` are the per-layer
//! factor projections. The 4-way tensor is never materialised.

use ndarray::{Array1, Array2, ArrayView1, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid layer dimensions: {0}")]
    InvalidDims(String),
    #[error("initialisation std must be positive and finite, got {0}")]
    InvalidStd(f64),
    #[error("{what}: expected length {expected}, found {found}")]
    ShapeMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("{0} must be strictly positive")]
    NonPositiveSigma(&'static str),
    #[error("non-finite entry in {0}")]
    NonFinite(String),
}

/// Which machine a parameter set describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Two specialised factor banks (regression + classification).
    Dffw,
    /// Single factored four-way tensor.
    Ffw,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dffw => "dffw",
            ModelKind::Ffw => "ffw",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dffw" => Ok(ModelKind::Dffw),
            "ffw" => Ok(ModelKind::Ffw),
            other => Err(format!("unknown model kind '{other}' (expected dffw|ffw)")),
        }
    }
}

/// The four layers of the machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    Visible,
    Hidden,
    History,
    Label,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::Visible, Layer::Hidden, Layer::History, Layer::Label];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Visible => "w_v",
            Layer::Hidden => "w_h",
            Layer::History => "w_hist",
            Layer::Label => "w_l",
        }
    }
}

/// Unit counts for every layer plus the factor counts of both banks.
///
/// `n_f2 == 0` denotes the single-bank baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerDims {
    pub n_v: usize,
    pub n_h: usize,
    pub n_hist: usize,
    pub n_l: usize,
    pub n_f1: usize,
    pub n_f2: usize,
}

impl LayerDims {
    pub fn dffw(n_v: usize, n_h: usize, n_hist: usize, n_l: usize, n_f1: usize, n_f2: usize) -> Self {
        LayerDims { n_v, n_h, n_hist, n_l, n_f1, n_f2 }
    }

    pub fn ffw(n_v: usize, n_h: usize, n_hist: usize, n_l: usize, n_f: usize) -> Self {
        LayerDims { n_v, n_h, n_hist, n_l, n_f1: n_f, n_f2: 0 }
    }

    /// Same layer sizes, other machine. The baseline gets `n_f1` factors.
    pub fn with_kind(self, kind: ModelKind) -> Self {
        match kind {
            ModelKind::Ffw => LayerDims { n_f2: 0, ..self },
            ModelKind::Dffw if self.n_f2 == 0 => LayerDims { n_f2: self.n_f1, ..self },
            ModelKind::Dffw => self,
        }
    }

    pub fn kind(&self) -> ModelKind {
        if self.n_f2 == 0 {
            ModelKind::Ffw
        } else {
            ModelKind::Dffw
        }
    }

    pub fn units(&self, layer: Layer) -> usize {
        match layer {
            Layer::Visible => self.n_v,
            Layer::Hidden => self.n_h,
            Layer::History => self.n_hist,
            Layer::Label => self.n_l,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let named = [
            ("n_v", self.n_v),
            ("n_h", self.n_h),
            ("n_hist", self.n_hist),
            ("n_l", self.n_l),
            ("n_f1", self.n_f1),
        ];
        for (name, n) in named {
            if n == 0 {
                return Err(ModelError::InvalidDims(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// Four unit→factor weight matrices (units × factors) of one factoring layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorBank {
    pub w_v: Array2<f64>,
    pub w_h: Array2<f64>,
    pub w_hist: Array2<f64>,
    pub w_l: Array2<f64>,
}

impl FactorBank {
    pub fn zeros(dims: &LayerDims, n_f: usize) -> Self {
        FactorBank {
            w_v: Array2::zeros((dims.n_v, n_f)),
            w_h: Array2::zeros((dims.n_h, n_f)),
            w_hist: Array2::zeros((dims.n_hist, n_f)),
            w_l: Array2::zeros((dims.n_l, n_f)),
        }
    }

    fn random<R: Rng + ?Sized>(dims: &LayerDims, n_f: usize, dist: &Normal<f64>, rng: &mut R) -> Self {
        let mut draw = |rows: usize| Array2::from_shape_simple_fn((rows, n_f), || dist.sample(rng));
        let w_v = draw(dims.n_v);
        let w_h = draw(dims.n_h);
        let w_hist = draw(dims.n_hist);
        let w_l = draw(dims.n_l);
        FactorBank { w_v, w_h, w_hist, w_l }
    }

    pub fn n_factors(&self) -> usize {
        self.w_v.ncols()
    }

    pub fn weight(&self, layer: Layer) -> &Array2<f64> {
        match layer {
            Layer::Visible => &self.w_v,
            Layer::Hidden => &self.w_h,
            Layer::History => &self.w_hist,
            Layer::Label => &self.w_l,
        }
    }

    pub fn weight_mut(&mut self, layer: Layer) -> &mut Array2<f64> {
        match layer {
            Layer::Visible => &mut self.w_v,
            Layer::Hidden => &mut self.w_h,
            Layer::History => &mut self.w_hist,
            Layer::Label => &mut self.w_l,
        }
    }

    pub fn is_finite(&self) -> bool {
        Layer::ALL
            .iter()
            .all(|&layer| self.weight(layer).iter().all(|w| w.is_finite()))
    }
}

/// All free parameters of one machine.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: LayerDims,
    /// Regression-specialised bank; drives the present layer.
    pub bank1: FactorBank,
    /// Classification-specialised bank; drives the label layer. `None` for the baseline.
    pub bank2: Option<FactorBank>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
    pub c: Array1<f64>,
    pub sigma: Array1<f64>,
    pub sigma_hist: Array1<f64>,
}

/// Draws every factor weight from `N(0, std²)`; biases start at zero and
/// standard deviations at one. Deterministic in `(dims, seed, std)`.
pub fn init_params(dims: LayerDims, seed: u64, std: f64) -> Result<ModelParams, ModelError> {
    dims.validate()?;
    if !(std > 0.0 && std.is_finite()) {
        return Err(ModelError::InvalidStd(std));
    }
    let dist = Normal::new(0.0, std).map_err(|_| ModelError::InvalidStd(std))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bank1 = FactorBank::random(&dims, dims.n_f1, &dist, &mut rng);
    let bank2 = (dims.n_f2 > 0).then(|| FactorBank::random(&dims, dims.n_f2, &dist, &mut rng));
    Ok(ModelParams {
        dims,
        bank1,
        bank2,
        a: Array1::zeros(dims.n_v),
        b: Array1::zeros(dims.n_h),
        c: Array1::zeros(dims.n_l),
        sigma: Array1::ones(dims.n_v),
        sigma_hist: Array1::ones(dims.n_hist),
    })
}

impl ModelParams {
    /// All-zero weights and biases, unit standard deviations.
    pub fn zeros(dims: LayerDims) -> Self {
        ModelParams {
            dims,
            bank1: FactorBank::zeros(&dims, dims.n_f1),
            bank2: (dims.n_f2 > 0).then(|| FactorBank::zeros(&dims, dims.n_f2)),
            a: Array1::zeros(dims.n_v),
            b: Array1::zeros(dims.n_h),
            c: Array1::zeros(dims.n_l),
            sigma: Array1::ones(dims.n_v),
            sigma_hist: Array1::ones(dims.n_hist),
        }
    }

    pub fn kind(&self) -> ModelKind {
        if self.bank2.is_some() {
            ModelKind::Dffw
        } else {
            ModelKind::Ffw
        }
    }

    pub fn banks(&self) -> impl Iterator<Item = &FactorBank> {
        std::iter::once(&self.bank1).chain(self.bank2.as_ref())
    }

    /// Checks every shape against `dims` and the positivity/finiteness invariants.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.dims.validate()?;
        let d = &self.dims;
        match (&self.bank2, d.n_f2) {
            (None, 0) => {}
            (Some(bank), n) if bank.n_factors() == n && n > 0 => {}
            (bank2, n) => {
                return Err(ModelError::ShapeMismatch {
                    what: "bank2 factors".into(),
                    expected: n,
                    found: bank2.as_ref().map_or(0, FactorBank::n_factors),
                })
            }
        }
        for (name, bank, n_f) in [("bank1", Some(&self.bank1), d.n_f1), ("bank2", self.bank2.as_ref(), d.n_f2)] {
            let Some(bank) = bank else { continue };
            for layer in Layer::ALL {
                let w = bank.weight(layer);
                let what = format!("{name}.{}", layer.as_str());
                check_len(&format!("{what} rows"), d.units(layer), w.nrows())?;
                check_len(&format!("{what} cols"), n_f, w.ncols())?;
                if !w.iter().all(|x| x.is_finite()) {
                    return Err(ModelError::NonFinite(what));
                }
            }
        }
        let vectors = [
            ("a", &self.a, d.n_v),
            ("b", &self.b, d.n_h),
            ("c", &self.c, d.n_l),
            ("sigma", &self.sigma, d.n_v),
            ("sigma_hist", &self.sigma_hist, d.n_hist),
        ];
        for (name, vec, n) in vectors {
            check_len(name, n, vec.len())?;
            if !vec.iter().all(|x| x.is_finite()) {
                return Err(ModelError::NonFinite(name.into()));
            }
        }
        if !self.sigma.iter().all(|&s| s > 0.0) {
            return Err(ModelError::NonPositiveSigma("sigma"));
        }
        if !self.sigma_hist.iter().all(|&s| s > 0.0) {
            return Err(ModelError::NonPositiveSigma("sigma_hist"));
        }
        Ok(())
    }

    /// Name of the first parameter group holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<String> {
        for (name, bank) in [("bank1", Some(&self.bank1)), ("bank2", self.bank2.as_ref())] {
            let Some(bank) = bank else { continue };
            for layer in Layer::ALL {
                if !bank.weight(layer).iter().all(|x| x.is_finite()) {
                    return Some(format!("{name}.{}", layer.as_str()));
                }
            }
        }
        for (name, vec) in [("a", &self.a), ("b", &self.b), ("c", &self.c)] {
            if !vec.iter().all(|x| x.is_finite()) {
                return Some(name.into());
            }
        }
        None
    }

    /// Baseline parameters viewed as a disjunctive machine with a zero second bank.
    pub fn with_zero_bank2(&self, n_f2: usize) -> ModelParams {
        let mut out = self.clone();
        out.dims.n_f2 = n_f2;
        out.bank2 = Some(FactorBank::zeros(&out.dims, n_f2));
        out
    }
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::ShapeMismatch { what: what.into(), expected, found })
    }
}

/// Activities of all four layers at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub v: Array1<f64>,
    pub h: Array1<f64>,
    pub l: Array1<f64>,
    pub hist: Array1<f64>,
}

impl LayerState {
    pub fn zeros(dims: &LayerDims) -> Self {
        LayerState {
            v: Array1::zeros(dims.n_v),
            h: Array1::zeros(dims.n_h),
            l: Array1::zeros(dims.n_l),
            hist: Array1::zeros(dims.n_hist),
        }
    }

    pub fn activity(&self, layer: Layer) -> &Array1<f64> {
        match layer {
            Layer::Visible => &self.v,
            Layer::Hidden => &self.h,
            Layer::History => &self.hist,
            Layer::Label => &self.l,
        }
    }

    fn assert_matches(&self, dims: &LayerDims) {
        assert_eq!(self.v.len(), dims.n_v, "present layer length");
        assert_eq!(self.h.len(), dims.n_h, "hidden layer length");
        assert_eq!(self.l.len(), dims.n_l, "label layer length");
        assert_eq!(self.hist.len(), dims.n_hist, "history layer length");
    }
}

/// Per-layer factor projections of one bank: `Σ_units w[unit, f] · activity[unit]`,
/// present and history activities divided by their σ.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub v: Array1<f64>,
    pub h: Array1<f64>,
    pub hist: Array1<f64>,
    pub l: Array1<f64>,
}

impl Projections {
    pub fn get(&self, layer: Layer) -> &Array1<f64> {
        match layer {
            Layer::Visible => &self.v,
            Layer::Hidden => &self.h,
            Layer::History => &self.hist,
            Layer::Label => &self.l,
        }
    }

    /// Elementwise product over all layers except `skip`.
    pub fn product(&self, skip: Option<Layer>) -> Array1<f64> {
        let mut out = Array1::ones(self.v.len());
        for layer in Layer::ALL {
            if Some(layer) != skip {
                out *= self.get(layer);
            }
        }
        out
    }
}

pub(crate) fn scaled_projection(w: &Array2<f64>, x: ArrayView1<f64>, sigma: ArrayView1<f64>) -> Array1<f64> {
    let scaled = &x / &sigma;
    w.t().dot(&scaled)
}

pub(crate) fn projection(w: &Array2<f64>, x: ArrayView1<f64>) -> Array1<f64> {
    w.t().dot(&x)
}

impl FactorBank {
    pub fn project(&self, state: &LayerState, sigma: &Array1<f64>, sigma_hist: &Array1<f64>) -> Projections {
        Projections {
            v: scaled_projection(&self.w_v, state.v.view(), sigma.view()),
            h: projection(&self.w_h, state.h.view()),
            hist: scaled_projection(&self.w_hist, state.hist.view(), sigma_hist.view()),
            l: projection(&self.w_l, state.l.view()),
        }
    }
}

/// For each factor, the product over all layers except `skip` of that layer's
/// weighted (σ-scaled for real-valued layers) sum.
pub fn factor_projection(
    bank: &FactorBank,
    state: &LayerState,
    sigma: &Array1<f64>,
    sigma_hist: &Array1<f64>,
    skip: Option<Layer>,
) -> Array1<f64> {
    bank.project(state, sigma, sigma_hist).product(skip)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Kernels for a fixed history vector.
///
/// The history projections of each bank are computed once and reused by every
/// conditional evaluated against the same parameters.
pub struct Conditioned<'a> {
    params: &'a ModelParams,
    hist: ArrayView1<'a, f64>,
    hist1: Array1<f64>,
    hist2: Option<Array1<f64>>,
}

impl<'a> Conditioned<'a> {
    pub fn new(params: &'a ModelParams, hist: ArrayView1<'a, f64>) -> Self {
        assert_eq!(hist.len(), params.dims.n_hist, "history layer length");
        let sh = params.sigma_hist.view();
        Conditioned {
            params,
            hist,
            hist1: scaled_projection(&params.bank1.w_hist, hist, sh),
            hist2: params.bank2.as_ref().map(|bank| scaled_projection(&bank.w_hist, hist, sh)),
        }
    }

    pub fn params(&self) -> &'a ModelParams {
        self.params
    }

    pub fn hist(&self) -> ArrayView1<'a, f64> {
        self.hist
    }

    fn bank_hist(&self, second: bool) -> Option<(&'a FactorBank, &Array1<f64>)> {
        if second {
            Some((self.params.bank2.as_ref()?, self.hist2.as_ref()?))
        } else {
            Some((&self.params.bank1, &self.hist1))
        }
    }

    /// Full projections of one bank (`second` selects bank 2) at the given state.
    pub fn projections(&self, second: bool, v: ArrayView1<f64>, h: ArrayView1<f64>, l: ArrayView1<f64>) -> Option<Projections> {
        let (bank, hist) = self.bank_hist(second)?;
        Some(Projections {
            v: scaled_projection(&bank.w_v, v, self.params.sigma.view()),
            h: projection(&bank.w_h, h),
            hist: hist.clone(),
            l: projection(&bank.w_l, l),
        })
    }

    /// `s^h`: both banks contribute through their own hidden weights.
    pub fn hidden_input(&self, v: ArrayView1<f64>, l: ArrayView1<f64>) -> Array1<f64> {
        let p = &self.params;
        assert_eq!(v.len(), p.dims.n_v, "present layer length");
        assert_eq!(l.len(), p.dims.n_l, "label layer length");
        let mut out = Array1::zeros(p.dims.n_h);
        for second in [false, true] {
            let Some((bank, hist)) = self.bank_hist(second) else { continue };
            let mut coef = scaled_projection(&bank.w_v, v, p.sigma.view());
            coef *= hist;
            coef *= &projection(&bank.w_l, l);
            out += &bank.w_h.dot(&coef);
        }
        out
    }

    /// `s^v`: bank 1 only.
    pub fn visible_input(&self, h: ArrayView1<f64>, l: ArrayView1<f64>) -> Array1<f64> {
        let p = &self.params;
        assert_eq!(h.len(), p.dims.n_h, "hidden layer length");
        assert_eq!(l.len(), p.dims.n_l, "label layer length");
        let bank = &p.bank1;
        let mut coef = projection(&bank.w_h, h);
        coef *= &self.hist1;
        coef *= &projection(&bank.w_l, l);
        bank.w_v.dot(&coef)
    }

    /// `s^l`: bank 2 only; identically zero for the single-bank baseline.
    pub fn label_input(&self, h: ArrayView1<f64>, v: ArrayView1<f64>) -> Array1<f64> {
        let p = &self.params;
        assert_eq!(h.len(), p.dims.n_h, "hidden layer length");
        assert_eq!(v.len(), p.dims.n_v, "present layer length");
        let Some((bank, hist)) = self.bank_hist(true) else {
            return Array1::zeros(p.dims.n_l);
        };
        let mut coef = projection(&bank.w_h, h);
        coef *= hist;
        coef *= &scaled_projection(&bank.w_v, v, p.sigma.view());
        bank.w_l.dot(&coef)
    }

    pub fn hidden_probs(&self, v: ArrayView1<f64>, l: ArrayView1<f64>) -> Array1<f64> {
        let mut s = self.hidden_input(v, l);
        Zip::from(&mut s).and(&self.params.b).for_each(|s, &b| *s = sigmoid(b + *s));
        s
    }

    pub fn label_probs(&self, h: ArrayView1<f64>, v: ArrayView1<f64>) -> Array1<f64> {
        let mut s = self.label_input(h, v);
        Zip::from(&mut s).and(&self.params.c).for_each(|s, &c| *s = sigmoid(c + *s));
        s
    }

    /// Mean of the Gaussian present-layer conditional, `a_i + σ_i s^v_i`.
    pub fn visible_mean(&self, h: ArrayView1<f64>, l: ArrayView1<f64>) -> Array1<f64> {
        let p = &self.params;
        let mut s = self.visible_input(h, l);
        Zip::from(&mut s)
            .and(&p.a)
            .and(&p.sigma)
            .for_each(|s, &a, &sigma| *s = a + sigma * *s);
        s
    }

    pub fn energy(&self, v: ArrayView1<f64>, h: ArrayView1<f64>, l: ArrayView1<f64>) -> f64 {
        let p = &self.params;
        let quadratic: f64 = Zip::from(&v)
            .and(&p.a)
            .and(&p.sigma)
            .fold(0.0, |acc, &v, &a, &s| acc + (v - a).powi(2) / (2.0 * s * s));
        let mut e = quadratic - h.dot(&p.b) - l.dot(&p.c);
        for second in [false, true] {
            if let Some(proj) = self.projections(second, v, h, l) {
                e -= proj.product(None).sum();
            }
        }
        e
    }

    /// Deterministic mean-field completion of `(h, l)` for clamped `v`:
    /// starting from an empty label layer, alternate hidden and label
    /// activation probabilities for `sweeps` rounds, then refresh the hidden layer.
    pub fn mean_field(&self, v: ArrayView1<f64>, sweeps: usize) -> (Array1<f64>, Array1<f64>) {
        let mut l = Array1::zeros(self.params.dims.n_l);
        let mut h = self.hidden_probs(v, l.view());
        for _ in 0..sweeps {
            l = self.label_probs(h.view(), v);
            h = self.hidden_probs(v, l.view());
        }
        (h, l)
    }
}

/// Number of hidden/label refinement rounds used for deterministic energy reporting.
pub const MEAN_FIELD_SWEEPS: usize = 3;

pub fn energy(params: &ModelParams, state: &LayerState) -> f64 {
    state.assert_matches(&params.dims);
    Conditioned::new(params, state.hist.view()).energy(state.v.view(), state.h.view(), state.l.view())
}

pub fn hidden_input(params: &ModelParams, state: &LayerState) -> Array1<f64> {
    Conditioned::new(params, state.hist.view()).hidden_input(state.v.view(), state.l.view())
}

pub fn visible_input(params: &ModelParams, state: &LayerState) -> Array1<f64> {
    Conditioned::new(params, state.hist.view()).visible_input(state.h.view(), state.l.view())
}

pub fn label_input(params: &ModelParams, state: &LayerState) -> Array1<f64> {
    Conditioned::new(params, state.hist.view()).label_input(state.h.view(), state.v.view())
}

pub fn hidden_probs(params: &ModelParams, state: &LayerState) -> Array1<f64> {
    Conditioned::new(params, state.hist.view()).hidden_probs(state.v.view(), state.l.view())
}

pub fn label_probs(params: &ModelParams, state: &LayerState) -> Array1<f64> {
    Conditioned::new(params, state.hist.view()).label_probs(state.h.view(), state.v.view())
}

pub fn visible_mean(params: &ModelParams, state: &LayerState) -> Array1<f64> {
    Conditioned::new(params, state.hist.view()).visible_mean(state.h.view(), state.l.view())
}

/// Independent Bernoulli draws. Probabilities must lie in `[0, 1]`.
pub fn bernoulli<R: Rng + ?Sized>(probs: &Array1<f64>, rng: &mut R) -> Array1<f64> {
    probs.mapv(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
}

/// Draws from `N(mean_i, σ_i²)`.
pub fn gaussian<R: Rng + ?Sized>(mean: &Array1<f64>, sigma: &Array1<f64>, rng: &mut R) -> Array1<f64> {
    assert!(sigma.iter().all(|&s| s > 0.0), "sigma must be strictly positive");
    Zip::from(mean)
        .and(sigma)
        .map_collect(|&m, &s| m + s * rng.sample::<f64, _>(rand_distr::StandardNormal))
}

pub fn sample_hidden<R: Rng + ?Sized>(params: &ModelParams, state: &LayerState, rng: &mut R) -> Array1<f64> {
    bernoulli(&hidden_probs(params, state), rng)
}

pub fn sample_label<R: Rng + ?Sized>(params: &ModelParams, state: &LayerState, rng: &mut R) -> Array1<f64> {
    bernoulli(&label_probs(params, state), rng)
}

pub fn sample_visible<R: Rng + ?Sized>(params: &ModelParams, state: &LayerState, rng: &mut R) -> Array1<f64> {
    gaussian(&visible_mean(params, state), &params.sigma, rng)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::array;

    /// One unit per layer, one factor per bank, all weights one.
    pub(crate) fn toy(kind: ModelKind) -> (ModelParams, LayerState) {
        let dims = LayerDims::dffw(1, 1, 1, 1, 1, 1).with_kind(kind);
        let mut p = ModelParams::zeros(dims);
        let ones = |b: &mut FactorBank| {
            for layer in Layer::ALL {
                b.weight_mut(layer).fill(1.0);
            }
        };
        ones(&mut p.bank1);
        if let Some(b) = p.bank2.as_mut() {
            ones(b);
        }
        let s = LayerState { v: array![1.0], h: array![1.0], l: array![1.0], hist: array![1.0] };
        (p, s)
    }

    /// Literal nested-loop transcription of the energy.
    pub(crate) fn energy_oracle(p: &ModelParams, s: &LayerState) -> f64 {
        let d = p.dims;
        let mut e = 0.0;
        for i in 0..d.n_v {
            e += (s.v[i] - p.a[i]).powi(2) / (2.0 * p.sigma[i].powi(2));
        }
        for j in 0..d.n_h {
            e -= s.h[j] * p.b[j];
        }
        for o in 0..d.n_l {
            e -= s.l[o] * p.c[o];
        }
        for bank in p.banks() {
            for f in 0..bank.n_factors() {
                for i in 0..d.n_v {
                    for j in 0..d.n_h {
                        for k in 0..d.n_hist {
                            for o in 0..d.n_l {
                                e -= bank.w_v[[i, f]] * s.v[i] / p.sigma[i]
                                    * bank.w_h[[j, f]]
                                    * s.h[j]
                                    * bank.w_hist[[k, f]]
                                    * s.hist[k]
                                    / p.sigma_hist[k]
                                    * bank.w_l[[o, f]]
                                    * s.l[o];
                            }
                        }
                    }
                }
            }
        }
        e
    }

    pub(crate) fn random_instance(dims: LayerDims, seed: u64) -> (ModelParams, LayerState) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
        let mut p = init_params(dims, seed, 0.7).unwrap();
        p.a = Array1::from_shape_simple_fn(dims.n_v, || rng.random_range(-1.0..1.0));
        p.b = Array1::from_shape_simple_fn(dims.n_h, || rng.random_range(-1.0..1.0));
        p.c = Array1::from_shape_simple_fn(dims.n_l, || rng.random_range(-1.0..1.0));
        p.sigma = Array1::from_shape_simple_fn(dims.n_v, || rng.random_range(0.5..2.0));
        p.sigma_hist = Array1::from_shape_simple_fn(dims.n_hist, || rng.random_range(0.5..2.0));
        let s = LayerState {
            v: Array1::from_shape_simple_fn(dims.n_v, || rng.random_range(-2.0..2.0)),
            h: Array1::from_shape_simple_fn(dims.n_h, || rng.random::<f64>()),
            l: Array1::from_shape_simple_fn(dims.n_l, || rng.random::<f64>()),
            hist: Array1::from_shape_simple_fn(dims.n_hist, || rng.random_range(-2.0..2.0)),
        };
        (p, s)
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn init_is_deterministic_and_zero_biased() {
        let dims = LayerDims::dffw(5, 10, 100, 4, 100, 100);
        let p1 = init_params(dims, 7, 0.3).unwrap();
        let p2 = init_params(dims, 7, 0.3).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.a.iter().chain(&p1.b).chain(&p1.c).all(|&x| x == 0.0));
        assert!(p1.sigma.iter().chain(&p1.sigma_hist).all(|&x| x == 1.0));
        assert_ne!(p1, init_params(dims, 8, 0.3).unwrap());
    }

    #[test]
    fn init_sample_variance_matches_std() {
        // 4 * 250 * 100 = 100_000 entries in bank 1
        let dims = LayerDims::ffw(250, 250, 250, 250, 100);
        let p = init_params(dims, 11, 0.3).unwrap();
        let all: Vec<f64> = Layer::ALL.iter().flat_map(|&l| p.bank1.weight(l).iter().copied()).collect();
        assert_eq!(all.len(), 100_000);
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (all.len() - 1) as f64;
        assert!((var - 0.09).abs() < 0.005, "variance {var}");
    }

    #[test]
    fn init_rejects_bad_std() {
        let dims = LayerDims::ffw(1, 1, 1, 1, 1);
        assert_eq!(init_params(dims, 0, 0.0), Err(ModelError::InvalidStd(0.0)));
        assert!(init_params(dims, 0, -1.0).is_err());
    }

    #[test]
    fn baseline_shares_bank1_draws_with_disjunctive() {
        let d = LayerDims::dffw(3, 2, 4, 2, 5, 3);
        let dffw = init_params(d, 3, 0.3).unwrap();
        let ffw = init_params(d.with_kind(ModelKind::Ffw), 3, 0.3).unwrap();
        assert_eq!(dffw.bank1, ffw.bank1);
        assert!(ffw.bank2.is_none());
    }

    #[test]
    fn factor_projection_cases() {
        let (p, s) = toy(ModelKind::Dffw);
        let zero = FactorBank::zeros(&p.dims, 3);
        assert_eq!(factor_projection(&zero, &s, &p.sigma, &p.sigma_hist, None), Array1::<f64>::zeros(3));
        let f = factor_projection(&p.bank1, &s, &p.sigma, &p.sigma_hist, Some(Layer::Hidden));
        assert_eq!(f, array![1.0]);

        // 2 units per layer, 2 factors: brute force
        let dims = LayerDims::dffw(2, 2, 2, 2, 2, 2);
        for seed in 0..20 {
            let (p, s) = random_instance(dims, seed);
            for skip in [None, Some(Layer::Visible), Some(Layer::Hidden), Some(Layer::History), Some(Layer::Label)] {
                let got = factor_projection(&p.bank1, &s, &p.sigma, &p.sigma_hist, skip);
                for f in 0..2 {
                    let mut want = 1.0;
                    for layer in Layer::ALL {
                        if Some(layer) == skip {
                            continue;
                        }
                        let w = p.bank1.weight(layer);
                        let act = s.activity(layer);
                        let mut sum = 0.0;
                        for u in 0..2 {
                            let scale = match layer {
                                Layer::Visible => p.sigma[u],
                                Layer::History => p.sigma_hist[u],
                                _ => 1.0,
                            };
                            sum += w[[u, f]] * act[u] / scale;
                        }
                        want *= sum;
                    }
                    assert!(rel_close(got[f], want, 1e-12), "{} vs {}", got[f], want);
                }
            }
        }
    }

    #[test]
    fn energy_examples() {
        let dims = LayerDims::dffw(2, 3, 4, 2, 2, 2);
        assert_eq!(energy(&ModelParams::zeros(dims), &LayerState::zeros(&dims)), 0.0);

        let (p, s) = toy(ModelKind::Dffw);
        assert!((energy(&p, &s) - (-1.5)).abs() < 1e-15);

        let dims = LayerDims::dffw(3, 2, 4, 2, 2, 2);
        for seed in 0..50 {
            let (p, s) = random_instance(dims, seed);
            let (got, want) = (energy(&p, &s), energy_oracle(&p, &s));
            assert!(rel_close(got, want, 1e-12), "{got} vs {want}");
        }
    }

    #[test]
    #[should_panic(expected = "present layer length")]
    fn energy_rejects_mismatched_state() {
        let dims = LayerDims::dffw(2, 3, 4, 2, 2, 2);
        let mut s = LayerState::zeros(&dims);
        s.v = Array1::zeros(3);
        energy(&ModelParams::zeros(dims), &s);
    }

    #[test]
    fn input_examples() {
        let (p, mut s) = toy(ModelKind::Dffw);
        assert_eq!(hidden_input(&p, &s), array![2.0]);
        assert_eq!(visible_input(&p, &s), array![1.0]);
        assert_eq!(label_input(&p, &s), array![1.0]);

        s.l.fill(0.0);
        assert_eq!(hidden_input(&p, &s), array![0.0]);

        let dims = LayerDims::dffw(3, 2, 4, 2, 2, 2);
        let (mut p, s) = random_instance(dims, 5);
        let with_bank1 = visible_input(&p, &s);
        p.bank1 = FactorBank::zeros(&dims, 2);
        assert_eq!(visible_input(&p, &s), Array1::<f64>::zeros(3));
        assert!(with_bank1.iter().any(|&x| x != 0.0));

        let (mut p, s) = random_instance(dims, 6);
        p.bank2 = Some(FactorBank::zeros(&dims, 2));
        assert_eq!(label_input(&p, &s), Array1::<f64>::zeros(2));
    }

    #[test]
    fn hidden_input_is_negative_energy_slope() {
        // E is linear in h_j, so the central difference is exact up to rounding.
        let dims = LayerDims::dffw(3, 2, 4, 2, 2, 2);
        for seed in 0..20 {
            let (p, s) = random_instance(dims, seed);
            let sh = hidden_input(&p, &s);
            for j in 0..dims.n_h {
                let eps = 1e-5;
                let mut up = s.clone();
                up.h[j] += eps;
                let mut dn = s.clone();
                dn.h[j] -= eps;
                let fd = (energy(&p, &up) - energy(&p, &dn)) / (2.0 * eps);
                assert!((fd - (-sh[j] - p.b[j])).abs() < 1e-8, "{fd} vs {}", -sh[j] - p.b[j]);
            }
        }
    }

    #[test]
    fn probability_examples() {
        let dims = LayerDims::dffw(2, 3, 4, 2, 2, 2);
        let mut p = ModelParams::zeros(dims);
        let s = LayerState::zeros(&dims);
        assert!(hidden_probs(&p, &s).iter().all(|&x| x == 0.5));
        assert!(label_probs(&p, &s).iter().all(|&x| x == 0.5));
        p.b.fill(20.0);
        assert!(hidden_probs(&p, &s).iter().all(|&x| (1.0 - x) < 1e-8));
        p.a = array![1.5, -2.0];
        assert_eq!(visible_mean(&p, &s), array![1.5, -2.0]);
    }

    #[test]
    fn sampling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(bernoulli(&Array1::ones(7), &mut rng), Array1::<f64>::ones(7));
        assert_eq!(bernoulli(&Array1::zeros(7), &mut rng), Array1::<f64>::zeros(7));

        let half = Array1::from_elem(100_000, 0.5);
        let mean = bernoulli(&half, &mut rng).mean().unwrap();
        assert!((mean - 0.5).abs() < 0.01, "{mean}");

        let dims = LayerDims::dffw(2, 3, 4, 2, 2, 2);
        let (p, s) = random_instance(dims, 3);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(sample_hidden(&p, &s, &mut r1), sample_hidden(&p, &s, &mut r2));
        assert_eq!(sample_label(&p, &s, &mut r1), sample_label(&p, &s, &mut r2));
        assert_eq!(sample_visible(&p, &s, &mut r1), sample_visible(&p, &s, &mut r2));
    }

    #[test]
    #[should_panic(expected = "sigma must be strictly positive")]
    fn gaussian_rejects_zero_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        gaussian(&array![0.0], &array![0.0], &mut rng);
    }

    #[test]
    fn validate_catches_bad_sigma_and_shapes() {
        let dims = LayerDims::dffw(2, 3, 4, 2, 2, 2);
        let mut p = ModelParams::zeros(dims);
        assert!(p.validate().is_ok());
        p.sigma[0] = 0.0;
        assert_eq!(p.validate(), Err(ModelError::NonPositiveSigma("sigma")));
        let mut p = ModelParams::zeros(dims);
        p.c = Array1::zeros(5);
        assert!(matches!(p.validate(), Err(ModelError::ShapeMismatch { .. })));
        let mut p = ModelParams::zeros(dims);
        p.bank1.w_h[[0, 0]] = f64::NAN;
        assert_eq!(p.first_non_finite().as_deref(), Some("bank1.w_h"));
    }
}
