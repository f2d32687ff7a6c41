//! Random forest over the CART trees, and the mean-decrease-in-impurity
//! feature importance that drives feature selection.

use rayon::prelude::*;

use crate::detector::Label;
use crate::error::{Error, Result};
use crate::rng::{role, Rng};

use super::tree::{fit_tree_subset, TreeNode, N_CLASSES};
use super::SurrogateSample;

#[derive(Debug, Clone)]
pub struct ForestSpec {
    pub n_trees: usize,
    /// Features considered per split; ceil(sqrt(8)) = 3 by default.
    pub max_features: usize,
    pub bootstrap: bool,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for ForestSpec {
    fn default() -> Self {
        ForestSpec {
            n_trees: 100,
            max_features: 3,
            bootstrap: true,
            max_depth: usize::MAX,
            min_samples_leaf: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    pub trees: Vec<TreeNode>,
    pub n_features: usize,
}

impl Forest {
    /// Majority vote across trees; ties go to the lower class index.
    pub fn predict(&self, features: &[f64]) -> Label {
        let mut votes = [0usize; N_CLASSES];
        for t in &self.trees {
            votes[t.predict(features).index()] += 1;
        }
        let mut best = 0;
        for k in 1..N_CLASSES {
            if votes[k] > votes[best] {
                best = k;
            }
        }
        Label::from_index(best)
    }
}

/// Fits n_trees CART trees, each on a seeded bootstrap resample with a
/// seeded 3-feature subset per split. Per-tree seeds derive from the master
/// seed by tree index, so trees can be fit in parallel without changing the
/// result.
pub fn fit_forest(samples: &[SurrogateSample], spec: &ForestSpec) -> Result<Forest> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to fit a forest on".into()));
    }
    if spec.n_trees == 0 {
        return Err(Error::Param("n_trees must be >= 1".into()));
    }
    let n_features = samples[0].features.len();
    if spec.max_features == 0 || spec.max_features > n_features {
        return Err(Error::Param(format!(
            "max_features {} outside 1..={n_features}",
            spec.max_features
        )));
    }
    let n = samples.len();
    let trees: Vec<TreeNode> = (0..spec.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = Rng::for_role(spec.seed.wrapping_add(t as u64), role::FOREST);
            let idx: Vec<usize> = if spec.bootstrap {
                (0..n).map(|_| rng.below(n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree_subset(
                samples,
                &idx,
                spec.max_depth,
                spec.min_samples_leaf,
                spec.max_features,
                &mut rng,
            )
        })
        .collect();
    Ok(Forest { trees, n_features })
}

#[derive(Debug, Clone)]
pub struct FeatureImportance {
    /// Non-negative, sums to 1 unless no tree made any split.
    pub scores: Vec<f64>,
    pub warning: Option<String>,
}

fn accumulate(node: &TreeNode, n_root: f64, scores: &mut [f64]) {
    if let TreeNode::Internal { feature, gini, n_samples, left, right, .. } = node {
        let n = *n_samples as f64;
        let decrease = gini
            - (left.n_samples() as f64 / n) * left.gini()
            - (right.n_samples() as f64 / n) * right.gini();
        scores[*feature] += (n / n_root) * decrease;
        accumulate(left, n_root, scores);
        accumulate(right, n_root, scores);
    }
}

/// Mean decrease in impurity, averaged over trees and normalized to sum 1.
pub fn feature_importance(forest: &Forest) -> FeatureImportance {
    let mut scores = vec![0.0; forest.n_features];
    for t in &forest.trees {
        let mut per_tree = vec![0.0; forest.n_features];
        accumulate(t, t.n_samples() as f64, &mut per_tree);
        for (s, p) in scores.iter_mut().zip(per_tree) {
            *s += p;
        }
    }
    for s in scores.iter_mut() {
        *s /= forest.trees.len() as f64;
    }
    let total: f64 = scores.iter().sum();
    if total == 0.0 {
        return FeatureImportance {
            scores,
            warning: Some("no tree in the forest made a split; importances are all zero".into()),
        };
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
    FeatureImportance { scores, warning: None }
}

/// Smallest prefix of importance-sorted features reaching the cumulative
/// threshold; always at least one feature. Equal importances favor the lower
/// index.
pub fn select_features(importances: &[f64], cumulative: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..importances.len()).collect();
    order.sort_by(|&a, &b| {
        importances[b].partial_cmp(&importances[a]).unwrap().then(a.cmp(&b))
    });
    let mut picked = Vec::new();
    let mut acc = 0.0;
    for i in order {
        picked.push(i);
        acc += importances[i];
        if acc >= cumulative {
            break;
        }
    }
    picked
}
