//! Exact O(n^2) t-SNE for the 2-D baseline map of detector verdicts, plus
//! CSV/SVG export. No Barnes-Hut: the point counts here are desk-scale.

use crate::detector::Label;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::{role, Rng};

pub const DEFAULT_PERPLEXITY: f64 = 30.0;
pub const DEFAULT_ITERS: usize = 1000;
pub const DEFAULT_LEARNING_RATE: f64 = 200.0;
pub const EXAGGERATION: f64 = 12.0;
pub const EXAGGERATION_ITERS: usize = 250;
pub const MOMENTUM_EARLY: f64 = 0.5;
pub const MOMENTUM_LATE: f64 = 0.8;

const P_FLOOR: f64 = 1e-12;

/// Fill colors for the scatter map, indexed by label.
pub const LABEL_COLORS: [&str; 3] = ["#9e9e9e", "#ff9800", "#e53935"];

#[derive(Debug, Clone)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: DEFAULT_PERPLEXITY,
            iters: DEFAULT_ITERS,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
        }
    }
}

/// Joint probabilities over point pairs: symmetric, unit sum, zero diagonal.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    pub p: Mat,
    pub perplexity: f64,
    /// 2^H actually reached by the per-point binary search.
    pub achieved_perplexity: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Embedding {
    /// n x 2 coordinates.
    pub y: Mat,
    pub labels: Vec<Label>,
    pub timestamps: Vec<i64>,
    pub kl_history: Vec<f64>,
}

fn squared_distances(x: &Mat) -> Mat {
    let n = x.rows;
    let mut d = Mat::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let mut acc = 0.0;
            for (a, b) in x.row(i).iter().zip(x.row(j)) {
                acc += (a - b) * (a - b);
            }
            *d.at_mut(i, j) = acc;
            *d.at_mut(j, i) = acc;
        }
    }
    d
}

/// Per-point sigma found by binary search on the precision beta = 1/(2 sigma^2)
/// so that the conditional distribution's effective neighbor count 2^H hits
/// the requested perplexity within 1e-5 (at most 50 halvings).
pub fn pairwise_affinities(x: &Mat, perplexity: f64) -> Result<AffinityMatrix> {
    let n = x.rows;
    if n < 2 {
        return Err(Error::InsufficientData(format!("t-SNE needs >= 2 points, got {n}")));
    }
    if !(perplexity > 0.0) || perplexity >= n as f64 {
        return Err(Error::Param(format!("perplexity {perplexity} outside (0, n={n})")));
    }
    let d = squared_distances(x);
    let mut cond = Mat::zeros(n, n);
    let mut achieved = vec![0.0; n];
    for i in 0..n {
        let mut beta = 1.0;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        for _ in 0..50 {
            // conditional p_{j|i} at this beta, stabilized against the
            // smallest distance
            let dmin = (0..n)
                .filter(|&j| j != i)
                .map(|j| d.at(i, j))
                .fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            for j in 0..n {
                let v = if j == i { 0.0 } else { (-beta * (d.at(i, j) - dmin)).exp() };
                *cond.at_mut(i, j) = v;
                sum += v;
            }
            let mut entropy_bits = 0.0;
            for j in 0..n {
                let p = cond.at(i, j) / sum;
                *cond.at_mut(i, j) = p;
                if p > 0.0 {
                    entropy_bits -= p * p.log2();
                }
            }
            achieved[i] = entropy_bits.exp2();
            let diff = achieved[i] - perplexity;
            if diff.abs() <= 1e-5 {
                break;
            }
            if diff > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_finite() { (beta + beta_max) / 2.0 } else { beta * 2.0 };
            } else {
                beta_max = beta;
                beta = if beta_min.is_finite() { (beta + beta_min) / 2.0 } else { beta / 2.0 };
            }
        }
    }
    let mut p = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = (cond.at(i, j) + cond.at(j, i)) / (2.0 * n as f64);
                *p.at_mut(i, j) = v.max(P_FLOOR);
            }
        }
    }
    Ok(AffinityMatrix { p, perplexity, achieved_perplexity: achieved })
}

/// Sum over off-diagonal pairs of p log(p/q); entries floored at 1e-12.
pub fn kl_divergence(p: &Mat, q: &Mat) -> Result<f64> {
    if p.rows != q.rows || p.cols != q.cols || p.rows != p.cols {
        return Err(Error::Shape("kl_divergence: shape mismatch".into()));
    }
    let n = p.rows;
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pij = p.at(i, j).max(P_FLOOR);
            let qij = q.at(i, j).max(P_FLOOR);
            kl += pij * (pij / qij).ln();
        }
    }
    Ok(kl)
}

/// Student-t kernel Q and unnormalized numerators for the current layout.
fn low_dim_q(y: &Mat) -> (Mat, Mat) {
    let n = y.rows;
    let mut num = Mat::zeros(n, n);
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y.at(i, 0) - y.at(j, 0);
            let dy = y.at(i, 1) - y.at(j, 1);
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            *num.at_mut(i, j) = v;
            *num.at_mut(j, i) = v;
            total += 2.0 * v;
        }
    }
    let mut q = Mat::zeros(n, n);
    for k in 0..n * n {
        q.data[k] = (num.data[k] / total).max(P_FLOOR);
    }
    for i in 0..n {
        *q.at_mut(i, i) = 0.0;
    }
    (q, num)
}

/// KL objective and its analytic gradient at the layout `y`.
fn kl_and_grad(p: &Mat, y: &Mat) -> Result<(f64, Mat)> {
    let n = y.rows;
    let (q, num) = low_dim_q(y);
    let kl = kl_divergence(p, &q)?;
    let mut grad = Mat::zeros(n, 2);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let coeff = 4.0 * (p.at(i, j) - q.at(i, j)) * num.at(i, j);
            *grad.at_mut(i, 0) += coeff * (y.at(i, 0) - y.at(j, 0));
            *grad.at_mut(i, 1) += coeff * (y.at(i, 1) - y.at(j, 1));
        }
    }
    Ok((kl, grad))
}

/// Momentum gradient descent on the KL objective with early exaggeration.
/// KL history is recorded against the true (unexaggerated) P each iteration.
pub fn tsne(
    x: &Mat,
    labels: &[Label],
    timestamps: &[i64],
    config: &TsneConfig,
) -> Result<Embedding> {
    let n = x.rows;
    if labels.len() != n || timestamps.len() != n {
        return Err(Error::Shape(format!(
            "tsne: {n} points but {} labels / {} timestamps",
            labels.len(),
            timestamps.len()
        )));
    }
    let affinities = pairwise_affinities(x, config.perplexity)?;
    let p = affinities.p;
    let p_exaggerated = {
        let mut m = p.clone();
        for v in m.data.iter_mut() {
            *v *= EXAGGERATION;
        }
        m
    };

    let mut rng = Rng::for_role(config.seed, role::TSNE_INIT);
    let mut y = Mat::zeros(n, 2);
    for v in y.data.iter_mut() {
        *v = 1e-4 * rng.gauss();
    }
    let mut velocity = Mat::zeros(n, 2);
    let mut kl_history = Vec::with_capacity(config.iters);

    for iter in 0..config.iters {
        let exaggerating = iter < EXAGGERATION_ITERS;
        let p_eff = if exaggerating { &p_exaggerated } else { &p };
        let (_, grad) = kl_and_grad(p_eff, &y)?;
        let momentum = if exaggerating { MOMENTUM_EARLY } else { MOMENTUM_LATE };
        for k in 0..n * 2 {
            velocity.data[k] = momentum * velocity.data[k] - config.learning_rate * grad.data[k];
            y.data[k] += velocity.data[k];
        }
        // re-center to pin down the translation degree of freedom
        for c in 0..2 {
            let mean = (0..n).map(|i| y.at(i, c)).sum::<f64>() / n as f64;
            for i in 0..n {
                *y.at_mut(i, c) -= mean;
            }
        }
        if y.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "t-SNE coordinates went non-finite at iteration {iter}"
            )));
        }
        let (q, _) = low_dim_q(&y);
        kl_history.push(kl_divergence(&p, &q)?);
    }

    Ok(Embedding {
        y,
        labels: labels.to_vec(),
        timestamps: timestamps.to_vec(),
        kl_history,
    })
}

/// Writes `embedding.csv` (x,y,label,timestamp) and a self-contained scatter
/// SVG into the given directory.
pub fn export_map(embedding: &Embedding, dir: &std::path::Path) -> Result<()> {
    let n = embedding.y.rows;
    let mut csv = String::from("x,y,label,timestamp\n");
    for i in 0..n {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            embedding.y.at(i, 0),
            embedding.y.at(i, 1),
            embedding.labels[i].as_csv(),
            embedding.timestamps[i]
        ));
    }
    std::fs::write(dir.join("embedding.csv"), csv)?;
    std::fs::write(dir.join("embedding.svg"), render_svg(embedding))?;
    Ok(())
}

fn render_svg(embedding: &Embedding) -> String {
    const W: f64 = 800.0;
    const H: f64 = 600.0;
    const MARGIN: f64 = 40.0;
    let n = embedding.y.rows;
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (0.0f64, 1.0f64, 0.0f64, 1.0f64);
    if n > 0 {
        xmin = f64::INFINITY;
        xmax = f64::NEG_INFINITY;
        ymin = f64::INFINITY;
        ymax = f64::NEG_INFINITY;
        for i in 0..n {
            xmin = xmin.min(embedding.y.at(i, 0));
            xmax = xmax.max(embedding.y.at(i, 0));
            ymin = ymin.min(embedding.y.at(i, 1));
            ymax = ymax.max(embedding.y.at(i, 1));
        }
        if xmax == xmin {
            xmax = xmin + 1.0;
        }
        if ymax == ymin {
            ymax = ymin + 1.0;
        }
    }
    let sx = |x: f64| MARGIN + (x - xmin) / (xmax - xmin) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - ymin) / (ymax - ymin) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for i in 0..n {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n",
            sx(embedding.y.at(i, 0)),
            sy(embedding.y.at(i, 1)),
            LABEL_COLORS[embedding.labels[i].index()]
        ));
    }
    let legend = [
        (Label::Normal, "Normal"),
        (Label::PotentialAnomaly, "Potential Anomaly"),
        (Label::HighScoreAnomaly, "High-Score Anomaly"),
    ];
    for (row, (label, text)) in legend.iter().enumerate() {
        let y = 20.0 + 18.0 * row as f64;
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{y:.2}\" r=\"5\" fill=\"{}\" data-legend=\"1\"/>\n",
            W - 170.0,
            LABEL_COLORS[label.index()]
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" font-family=\"sans-serif\">{text}</text>\n",
            W - 160.0,
            y + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_affinity_invariants(p: &Mat) {
        let n = p.rows;
        let mut sum = 0.0;
        for i in 0..n {
            assert_eq!(p.at(i, i), 0.0);
            for j in 0..n {
                assert!(p.at(i, j) >= 0.0);
                assert!((p.at(i, j) - p.at(j, i)).abs() < 1e-15);
                sum += p.at(i, j);
            }
        }
        assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
    }

    #[test]
    fn equidistant_points_uniform_affinities() {
        // regular tetrahedron in 3-D
        let x = Mat::from_vec(
            4,
            3,
            vec![
                1.0, 1.0, 1.0, //
                1.0, -1.0, -1.0, //
                -1.0, 1.0, -1.0, //
                -1.0, -1.0, 1.0,
            ],
        );
        let aff = pairwise_affinities(&x, 3.0).unwrap();
        assert_affinity_invariants(&aff.p);
        let expect = 1.0 / 12.0; // uniform over the 12 off-diagonal entries
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!((aff.p.at(i, j) - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn binary_search_hits_perplexity() {
        let mut rng = Rng::new(7);
        let x = Mat::from_vec(50, 4, (0..200).map(|_| rng.next_f64()).collect());
        let perp = 12.0;
        let aff = pairwise_affinities(&x, perp).unwrap();
        assert_affinity_invariants(&aff.p);
        for (i, &got) in aff.achieved_perplexity.iter().enumerate() {
            assert!((got - perp).abs() <= 1e-5, "point {i}: 2^H = {got}");
        }
    }

    #[test]
    fn perplexity_at_or_above_n_rejected() {
        let x = Mat::zeros(5, 2);
        assert!(matches!(pairwise_affinities(&x, 5.0), Err(Error::Param(_))));
        assert!(matches!(pairwise_affinities(&x, 7.0), Err(Error::Param(_))));
    }

    #[test]
    fn duplicate_points_survive_via_floor() {
        let mut x = Mat::zeros(6, 2);
        *x.at_mut(4, 0) = 1.0;
        *x.at_mut(5, 1) = 1.0;
        let aff = pairwise_affinities(&x, 3.0).unwrap();
        assert!(aff.p.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn kl_examples() {
        let mut rng = Rng::new(3);
        let n = 6;
        // random joint distributions with zero diagonal
        let mut mk = || {
            let mut m = Mat::from_vec(n, n, (0..n * n).map(|_| rng.next_f64()).collect());
            for i in 0..n {
                *m.at_mut(i, i) = 0.0;
            }
            let s: f64 = m.data.iter().sum();
            for v in m.data.iter_mut() {
                *v /= s;
            }
            m
        };
        for _ in 0..20 {
            let p = mk();
            let q = mk();
            assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
            assert!(kl_divergence(&p, &q).unwrap() >= 0.0);

            // loop oracle
            let mut oracle = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let pij = p.at(i, j).max(1e-12);
                        let qij = q.at(i, j).max(1e-12);
                        oracle += pij * (pij / qij).ln();
                    }
                }
            }
            assert!((kl_divergence(&p, &q).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = Rng::new(13);
        let x = Mat::from_vec(10, 4, (0..40).map(|_| rng.next_f64()).collect());
        let p = pairwise_affinities(&x, 4.0).unwrap().p;
        let mut y = Mat::from_vec(10, 2, (0..20).map(|_| rng.gauss()).collect());
        let (_, grad) = kl_and_grad(&p, &y).unwrap();
        let h = 1e-6;
        for k in 0..20 {
            let orig = y.data[k];
            y.data[k] = orig + h;
            let (lp, _) = kl_and_grad(&p, &y).unwrap();
            y.data[k] = orig - h;
            let (lm, _) = kl_and_grad(&p, &y).unwrap();
            y.data[k] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = grad.data[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            assert!(rel < 1e-4, "param {k}: analytic {a} vs numeric {numeric}");
        }
    }

    #[test]
    fn two_points_repel_and_kl_vanishes() {
        let x = Mat::from_vec(2, 2, vec![0.0, 0.0, 1.0, 1.0]);
        let config = TsneConfig { perplexity: 1.0, iters: 400, ..Default::default() };
        let e = tsne(&x, &[Label::Normal; 2], &[0, 10], &config).unwrap();
        let dx = e.y.at(0, 0) - e.y.at(1, 0);
        let dy = e.y.at(0, 1) - e.y.at(1, 1);
        assert!((dx * dx + dy * dy).sqrt() > 1.0);
        assert!(*e.kl_history.last().unwrap() < 1e-3, "kl {:?}", e.kl_history.last());
    }

    #[test]
    fn clusters_separate_linearly() {
        let mut rng = Rng::new(42);
        let n = 50;
        let mut x = Mat::zeros(n, 8);
        for i in 0..n {
            let center = if i < 25 { 0.0 } else { 6.0 };
            for j in 0..8 {
                *x.at_mut(i, j) = center + 0.3 * rng.gauss();
            }
        }
        let labels: Vec<Label> = (0..n)
            .map(|i| if i < 25 { Label::Normal } else { Label::HighScoreAnomaly })
            .collect();
        let ts: Vec<i64> = (0..n as i64).collect();
        let config = TsneConfig {
            perplexity: 10.0,
            iters: 500,
            learning_rate: 50.0,
            seed: 42,
        };
        let e = tsne(&x, &labels, &ts, &config).unwrap();

        // a linear separator along the direction between cluster centroids
        let centroid = |range: std::ops::Range<usize>| {
            let mut c = [0.0; 2];
            for i in range.clone() {
                c[0] += e.y.at(i, 0);
                c[1] += e.y.at(i, 1);
            }
            [c[0] / range.len() as f64, c[1] / range.len() as f64]
        };
        let a = centroid(0..25);
        let b = centroid(25..50);
        let w = [b[0] - a[0], b[1] - a[1]];
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let mut correct = 0;
        for i in 0..n {
            let s = w[0] * (e.y.at(i, 0) - mid[0]) + w[1] * (e.y.at(i, 1) - mid[1]);
            if (s > 0.0) == (i >= 25) {
                correct += 1;
            }
        }
        assert_eq!(correct, n, "clusters not linearly separable in the embedding");
        // post-exaggeration descent makes progress
        assert!(e.kl_history[499] < e.kl_history[250], "kl {:?}", &e.kl_history[248..252]);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = Rng::new(1);
        let x = Mat::from_vec(20, 3, (0..60).map(|_| rng.next_f64()).collect());
        let labels = vec![Label::Normal; 20];
        let ts: Vec<i64> = (0..20).collect();
        let config = TsneConfig { perplexity: 5.0, iters: 50, seed: 9, ..Default::default() };
        let a = tsne(&x, &labels, &ts, &config).unwrap();
        let b = tsne(&x, &labels, &ts, &config).unwrap();
        assert_eq!(a.y.data, b.y.data);
        assert_eq!(a.kl_history, b.kl_history);
    }

    #[test]
    fn export_writes_csv_rows_and_circles() {
        let e = Embedding {
            y: Mat::from_vec(3, 2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 0.5]),
            labels: vec![Label::Normal, Label::PotentialAnomaly, Label::HighScoreAnomaly],
            timestamps: vec![10, 20, 30],
            kl_history: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        export_map(&e, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("embedding.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("x,y,label,timestamp\n"));
        assert!(csv.contains(",potential,20"));

        let svg = std::fs::read_to_string(dir.path().join("embedding.svg")).unwrap();
        // 3 data circles + 3 legend circles
        assert_eq!(svg.matches("<circle").count(), 6);
        for color in LABEL_COLORS {
            assert!(svg.contains(color));
        }
        // only the three label colors appear as fills (plus the background)
        for fill in svg.split("fill=\"").skip(1) {
            let value: String = fill.chars().take_while(|&c| c != '"').collect();
            assert!(
                LABEL_COLORS.contains(&value.as_str()) || value == "white",
                "unexpected fill {value}"
            );
        }
    }

    #[test]
    fn empty_embedding_still_renders_legend() {
        let e = Embedding {
            y: Mat::zeros(0, 2),
            labels: vec![],
            timestamps: vec![],
            kl_history: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        export_map(&e, dir.path()).unwrap();
        let svg = std::fs::read_to_string(dir.path().join("embedding.svg")).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("High-Score Anomaly"));
    }
}
