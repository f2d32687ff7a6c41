//! Interpretable surrogate for the detector: a random forest ranks features,
//! a depth-bounded decision tree mimics the verdict labels, and pure leaves
//! become human-readable rules.

mod forest;
mod tree;

pub use forest::{feature_importance, fit_forest, select_features, FeatureImportance, Forest, ForestSpec};
pub use tree::{fit_tree, gini_of_counts, TreeNode, N_CLASSES};

use crate::detector::{AnomalyVerdict, Label};
use crate::error::{Error, Result};
use crate::ingest::FrameSeries;

/// Display names for the eight features, in signal order. `Ruddere_angle_Mean`
/// is a deliberate reproduction of the published table spelling.
pub const FEATURE_NAMES: [&str; 8] = [
    "PORT_RPM_Mean",
    "STBD_RPM_Mean",
    "PORT_Battery_Mean",
    "STBD_Battery_Mean",
    "Heading_True_Mean",
    "Rate_of_Turn_Mean",
    "SOG_Speed_over_Ground",
    "Ruddere_angle_Mean",
];

pub const DEFAULT_MAX_DEPTH: usize = 5;
pub const DEFAULT_CUMULATIVE_IMPORTANCE: f64 = 0.95;

/// One training row for the surrogate: raw (denormalized) feature values
/// joined with the detector's verdict label.
#[derive(Debug, Clone)]
pub struct SurrogateSample {
    pub features: Vec<f64>,
    pub label: Label,
}

/// Joins verdicts with the raw frame values at their timestamps. For the
/// LSTM detector a verdict carries its window's last-frame timestamp, so the
/// join lands on that frame.
pub fn build_samples(
    series: &FrameSeries,
    verdicts: &[AnomalyVerdict],
) -> Result<Vec<SurrogateSample>> {
    let index: std::collections::HashMap<i64, usize> = series
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| (f.timestamp, i))
        .collect();
    verdicts
        .iter()
        .map(|v| {
            let &i = index.get(&v.timestamp).ok_or_else(|| {
                Error::TimestampMismatch(format!(
                    "verdict at {} has no matching frame",
                    v.timestamp
                ))
            })?;
            Ok(SurrogateSample {
                features: series.frames[i].values.iter().map(|x| x.unwrap_or(0.0)).collect(),
                label: v.label,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Gt,
}

impl Cmp {
    fn symbol(&self) -> &'static str {
        match self {
            Cmp::Le => "\u{2264}",
            Cmp::Gt => ">",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rule {
    /// Root-to-leaf order.
    pub conjuncts: Vec<(usize, Cmp, f64)>,
    pub label: Label,
    pub gini: f64,
    pub support: usize,
}

/// One rule per leaf with gini <= gini_max, conditions collected from the
/// root down. Repeated conditions on the same (feature, comparator) collapse
/// to the tightest bound, kept at the first occurrence.
pub fn extract_rules(tree: &TreeNode, gini_max: f64) -> Vec<Rule> {
    let mut rules = Vec::new();
    let mut path: Vec<(usize, Cmp, f64)> = Vec::new();
    walk(tree, gini_max, &mut path, &mut rules);
    rules
}

fn walk(
    node: &TreeNode,
    gini_max: f64,
    path: &mut Vec<(usize, Cmp, f64)>,
    rules: &mut Vec<Rule>,
) {
    match node {
        TreeNode::Leaf { counts, gini, label } => {
            if *gini <= gini_max {
                rules.push(Rule {
                    conjuncts: collapse(path),
                    label: *label,
                    gini: *gini,
                    support: counts.iter().sum(),
                });
            }
        }
        TreeNode::Internal { feature, threshold, left, right, .. } => {
            path.push((*feature, Cmp::Le, *threshold));
            walk(left, gini_max, path, rules);
            path.pop();
            path.push((*feature, Cmp::Gt, *threshold));
            walk(right, gini_max, path, rules);
            path.pop();
        }
    }
}

fn collapse(path: &[(usize, Cmp, f64)]) -> Vec<(usize, Cmp, f64)> {
    let mut out: Vec<(usize, Cmp, f64)> = Vec::new();
    for &(f, cmp, v) in path {
        if let Some(existing) = out.iter_mut().find(|(f2, c2, _)| *f2 == f && *c2 == cmp) {
            existing.2 = match cmp {
                Cmp::Le => existing.2.min(v),
                Cmp::Gt => existing.2.max(v),
            };
        } else {
            out.push((f, cmp, v));
        }
    }
    out
}

/// Table-style single-line rendering:
/// `If A <= 1.00: If B > 2.00: Class: Normal`.
pub fn render_rule(rule: &Rule, names: &[&str]) -> String {
    let mut parts: Vec<String> = rule
        .conjuncts
        .iter()
        .map(|(f, cmp, v)| format!("If {} {} {:.2}:", names[*f], cmp.symbol(), v))
        .collect();
    parts.push(format!("Class: {}", rule.label.as_rule_text()));
    parts.join(" ")
}

/// Fraction of samples where the tree reproduces the detector's label.
pub fn fidelity(tree: &TreeNode, samples: &[SurrogateSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples for fidelity".into()));
    }
    let hits = samples
        .iter()
        .filter(|s| tree.predict(&s.features) == s.label)
        .count();
    Ok(hits as f64 / samples.len() as f64)
}
