//! Per-feature z-scoring of present and history units.

use ndarray::{Array1, ArrayView1};

use super::{DataError, Sample};

/// Below this a feature is treated as constant.
const MIN_STD: f64 = 1e-12;

/// Statistics over the present features followed by the history features.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose std was replaced by 1.
    pub degenerate: Vec<usize>,
    pub n_present: usize,
}

pub fn feature_names(n_present: usize, n_history: usize) -> Vec<String> {
    let mut names: Vec<String> = if n_present == super::PRESENT_DIMS {
        ["x", "y", "z", "u", "v"].iter().map(|s| s.to_string()).collect()
    } else {
        (0..n_present).map(|i| format!("present_{i}")).collect()
    };
    if n_history % 2 == 0 {
        for k in 0..n_history / 2 {
            names.push(format!("hist_{k}_u"));
            names.push(format!("hist_{k}_v"));
        }
    } else {
        names.extend((0..n_history).map(|k| format!("hist_{k}")));
    }
    names
}

/// Fits mean and sample standard deviation per feature.
pub fn fit_normalizer(samples: &[Sample]) -> Result<NormStats, DataError> {
    if samples.len() < 2 {
        return Err(DataError::TooFewSamples { needed: 2, found: samples.len() });
    }
    let n_present = samples[0].present.len();
    let n_history = samples[0].history.len();
    let width = n_present + n_history;
    let n = samples.len() as f64;
    let mut mean = vec![0.0; width];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s.present.iter().chain(s.history.iter())) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; width];
    for s in samples {
        for ((v, m), x) in var.iter_mut().zip(&mean).zip(s.present.iter().chain(s.history.iter())) {
            *v += (x - m) * (x - m);
        }
    }
    let mut degenerate = Vec::new();
    let std = var
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let sd = (v / (n - 1.0)).sqrt();
            if sd < MIN_STD {
                degenerate.push(k);
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(NormStats { names: feature_names(n_present, n_history), mean, std, degenerate, n_present })
}

impl NormStats {
    pub fn n_history(&self) -> usize {
        self.mean.len() - self.n_present
    }

    pub fn present_mean(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.mean[..self.n_present])
    }

    pub fn present_std(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.std[..self.n_present])
    }

    fn zscore(x: &Array1<f64>, mean: &[f64], std: &[f64]) -> Array1<f64> {
        Array1::from_iter(x.iter().zip(mean).zip(std).map(|((x, m), s)| (x - m) / s))
    }

    fn unscore(x: &Array1<f64>, mean: &[f64], std: &[f64]) -> Array1<f64> {
        Array1::from_iter(x.iter().zip(mean).zip(std).map(|((x, m), s)| x * s + m))
    }

    pub fn normalize_present(&self, x: &Array1<f64>) -> Array1<f64> {
        Self::zscore(x, &self.mean[..self.n_present], &self.std[..self.n_present])
    }

    pub fn denormalize_present(&self, x: &Array1<f64>) -> Array1<f64> {
        Self::unscore(x, &self.mean[..self.n_present], &self.std[..self.n_present])
    }

    pub fn normalize_history(&self, x: &Array1<f64>) -> Array1<f64> {
        Self::zscore(x, &self.mean[self.n_present..], &self.std[self.n_present..])
    }

    pub fn denormalize_history(&self, x: &Array1<f64>) -> Array1<f64> {
        Self::unscore(x, &self.mean[self.n_present..], &self.std[self.n_present..])
    }

    /// Raw value of present feature `k`.
    pub fn denormalize_present_at(&self, k: usize, x: f64) -> f64 {
        x * self.std[k] + self.mean[k]
    }

    pub fn apply(&self, samples: &[Sample]) -> Vec<Sample> {
        samples
            .iter()
            .map(|s| Sample {
                present: self.normalize_present(&s.present),
                history: self.normalize_history(&s.history),
                ..s.clone()
            })
            .collect()
    }

    pub fn invert(&self, samples: &[Sample]) -> Vec<Sample> {
        samples
            .iter()
            .map(|s| Sample {
                present: self.denormalize_present(&s.present),
                history: self.denormalize_history(&s.history),
                ..s.clone()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn sample(p: Vec<f64>, h: Vec<f64>) -> Sample {
        Sample {
            present: Array1::from_vec(p),
            history: Array1::from_vec(h),
            label: array![1.0],
            class_id: 0,
            traj_id: 0,
            frame: 0,
        }
    }

    #[test]
    fn constant_feature_is_flagged() {
        let s = vec![sample(vec![1.0, 2.0], vec![5.0, 0.0]), sample(vec![3.0, 2.0], vec![5.0, 1.0])];
        let st = fit_normalizer(&s).unwrap();
        assert_eq!(st.degenerate, vec![1, 2]);
        assert_eq!(st.std[1], 1.0);
        assert_eq!(st.std[2], 1.0);
        assert_eq!(st.names, vec!["present_0", "present_1", "hist_0_u", "hist_0_v"]);
    }

    #[test]
    fn needs_two_samples() {
        let s = vec![sample(vec![1.0], vec![1.0])];
        assert_eq!(fit_normalizer(&s), Err(DataError::TooFewSamples { needed: 2, found: 1 }));
    }

    #[test]
    fn training_moments_after_apply() {
        let s: Vec<Sample> = (0..50)
            .map(|i| {
                let x = i as f64;
                sample(vec![x.sin() * 3.0 + 7.0, x * x], vec![(x * 0.3).cos(), 100.0 - x])
            })
            .collect();
        let st = fit_normalizer(&s).unwrap();
        let z = st.apply(&s);
        for k in 0..2 {
            let col: Vec<f64> = z.iter().map(|s| s.present[k]).collect();
            let m = col.iter().sum::<f64>() / 50.0;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 49.0;
            assert!(m.abs() < 1e-10 && (v - 1.0).abs() < 1e-10, "{m} {v}");
        }
        assert_eq!(z[3].label, s[3].label);
    }

    proptest! {
        #[test]
        fn round_trip(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 2..20)) {
            let s: Vec<Sample> = rows.iter().map(|r| sample(r[..2].to_vec(), r[2..].to_vec())).collect();
            let st = fit_normalizer(&s).unwrap();
            let back = st.invert(&st.apply(&s));
            for (a, b) in s.iter().zip(&back) {
                for (x, y) in a.present.iter().chain(&a.history).zip(b.present.iter().chain(&b.history)) {
                    prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
                }
            }
        }
    }
}
