//! Cross-validation splits by whole trajectory.

use std::collections::BTreeMap;

use super::{DataError, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FoldPolicy {
    /// Fold `i` trains on the `i`-th trajectory of every class and tests on the rest.
    #[default]
    OnePerClass,
}

impl std::str::FromStr for FoldPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "one_per_class" => Ok(FoldPolicy::OnePerClass),
            other => Err(format!("unknown fold policy '{other}' (expected one_per_class)")),
        }
    }
}

/// Indices into the trajectory list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn kfold_by_trajectory(trajs: &[Trajectory], policy: FoldPolicy) -> Result<Vec<Split>, DataError> {
    match policy {
        FoldPolicy::OnePerClass => {
            let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (idx, t) in trajs.iter().enumerate() {
                by_class.entry(t.class_id).or_default().push(idx);
            }
            let k = by_class.values().map(Vec::len).min().unwrap_or(0);
            if k < 2 {
                return Err(DataError::TooFewTrajectories { needed: 2, found: k });
            }
            Ok((0..k)
                .map(|fold| {
                    let train: Vec<usize> = by_class.values().map(|members| members[fold]).collect();
                    let test = (0..trajs.len()).filter(|i| !train.contains(i)).collect();
                    Split { train, test }
                })
                .collect())
        }
    }
}
