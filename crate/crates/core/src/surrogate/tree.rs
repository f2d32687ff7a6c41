//! CART decision tree with Gini impurity.

use serde::{Deserialize, Serialize};

use crate::detector::Label;
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::SurrogateSample;

pub const N_CLASSES: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "node")]
pub enum TreeNode {
    #[serde(rename = "internal")]
    Internal {
        feature: usize,
        threshold: f64,
        gini: f64,
        n_samples: usize,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    #[serde(rename = "leaf")]
    Leaf {
        counts: [usize; N_CLASSES],
        gini: f64,
        label: Label,
    },
}

impl TreeNode {
    pub fn gini(&self) -> f64 {
        match self {
            TreeNode::Internal { gini, .. } => *gini,
            TreeNode::Leaf { gini, .. } => *gini,
        }
    }

    pub fn n_samples(&self) -> usize {
        match self {
            TreeNode::Internal { n_samples, .. } => *n_samples,
            TreeNode::Leaf { counts, .. } => counts.iter().sum(),
        }
    }

    pub fn predict(&self, features: &[f64]) -> Label {
        match self {
            TreeNode::Leaf { label, .. } => *label,
            TreeNode::Internal { feature, threshold, left, right, .. } => {
                if features[*feature] <= *threshold {
                    left.predict(features)
                } else {
                    right.predict(features)
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

pub fn gini_of_counts(counts: &[usize; N_CLASSES]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn class_counts(samples: &[SurrogateSample], idx: &[usize]) -> [usize; N_CLASSES] {
    let mut counts = [0usize; N_CLASSES];
    for &i in idx {
        counts[samples[i].label.index()] += 1;
    }
    counts
}

/// Ties go to the lower class index.
fn majority(counts: &[usize; N_CLASSES]) -> Label {
    let mut best = 0;
    for k in 1..N_CLASSES {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    Label::from_index(best)
}

#[derive(Debug, Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

/// Exhaustive best split over the given features: candidate thresholds are
/// midpoints between consecutive distinct sorted values; the winner maximizes
/// weighted impurity decrease, ties broken by lowest feature index then
/// lowest threshold.
fn best_split(
    samples: &[SurrogateSample],
    idx: &[usize],
    features: &[usize],
    min_samples_leaf: usize,
) -> Option<Split> {
    let n = idx.len();
    let parent_gini = gini_of_counts(&class_counts(samples, idx));
    let mut best: Option<Split> = None;

    for &f in features {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| {
            samples[a].features[f].partial_cmp(&samples[b].features[f]).unwrap()
        });
        // prefix class counts over the sorted order let each candidate be
        // evaluated in O(1)
        let mut left = [0usize; N_CLASSES];
        let mut right = class_counts(samples, idx);
        for pos in 0..n - 1 {
            let k = samples[order[pos]].label.index();
            left[k] += 1;
            right[k] -= 1;
            let a = samples[order[pos]].features[f];
            let b = samples[order[pos + 1]].features[f];
            if a == b {
                continue;
            }
            let nl = pos + 1;
            let nr = n - nl;
            if nl < min_samples_leaf || nr < min_samples_leaf {
                continue;
            }
            let threshold = (a + b) / 2.0;
            let decrease = parent_gini
                - (nl as f64 / n as f64) * gini_of_counts(&left)
                - (nr as f64 / n as f64) * gini_of_counts(&right);
            let better = match best {
                None => true,
                Some(s) => {
                    decrease > s.decrease
                        || (decrease == s.decrease
                            && (f < s.feature || (f == s.feature && threshold < s.threshold)))
                }
            };
            if better {
                best = Some(Split { feature: f, threshold, decrease });
            }
        }
    }
    best.filter(|s| s.decrease > 0.0)
}

fn grow(
    samples: &[SurrogateSample],
    idx: &[usize],
    depth: usize,
    max_depth: usize,
    min_samples_leaf: usize,
    max_features: usize,
    rng: Option<&mut Rng>,
) -> TreeNode {
    let counts = class_counts(samples, idx);
    let gini = gini_of_counts(&counts);
    let leaf = |counts: [usize; N_CLASSES], gini| TreeNode::Leaf {
        counts,
        gini,
        label: majority(&counts),
    };
    if gini == 0.0 || depth >= max_depth || idx.len() < 2 * min_samples_leaf {
        return leaf(counts, gini);
    }

    let n_features = samples[0].features.len();
    let mut rng = rng;
    let features: Vec<usize> = match rng.as_deref_mut() {
        Some(r) if max_features < n_features => {
            // seeded subset of features for this split
            let mut all: Vec<usize> = (0..n_features).collect();
            r.shuffle(&mut all);
            let mut subset = all[..max_features].to_vec();
            subset.sort_unstable();
            subset
        }
        _ => (0..n_features).collect(),
    };

    let split = match best_split(samples, idx, &features, min_samples_leaf) {
        Some(s) => s,
        None => return leaf(counts, gini),
    };
    let (li, ri): (Vec<usize>, Vec<usize>) = idx
        .iter()
        .partition(|&&i| samples[i].features[split.feature] <= split.threshold);
    let left = grow(
        samples,
        &li,
        depth + 1,
        max_depth,
        min_samples_leaf,
        max_features,
        rng.as_deref_mut(),
    );
    let right =
        grow(samples, &ri, depth + 1, max_depth, min_samples_leaf, max_features, rng);
    TreeNode::Internal {
        feature: split.feature,
        threshold: split.threshold,
        gini,
        n_samples: idx.len(),
        left: Box::new(left),
        right: Box::new(right),
    }
}

pub fn fit_tree(
    samples: &[SurrogateSample],
    max_depth: usize,
    min_samples_leaf: usize,
) -> Result<TreeNode> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to fit a tree on".into()));
    }
    if min_samples_leaf == 0 {
        return Err(Error::Param("min_samples_leaf must be >= 1".into()));
    }
    let idx: Vec<usize> = (0..samples.len()).collect();
    let n_features = samples[0].features.len();
    Ok(grow(samples, &idx, 0, max_depth, min_samples_leaf, n_features, None))
}

/// Tree fit with a per-split random feature subset; used by the forest.
pub(super) fn fit_tree_subset(
    samples: &[SurrogateSample],
    idx: &[usize],
    max_depth: usize,
    min_samples_leaf: usize,
    max_features: usize,
    rng: &mut Rng,
) -> TreeNode {
    grow(samples, idx, 0, max_depth, min_samples_leaf, max_features, Some(rng))
}
