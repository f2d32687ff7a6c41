//! Minimal neural-network core: dense and LSTM layers with exact
//! backpropagation, MSE loss, Adam, and a deterministic training loop.
//!
//! Everything is f64. All parameters of a model can be flattened into one
//! vector (see [`Model`]), which is what the optimizer and the finite
//! difference gradient checker operate on.

mod adam;
mod dense;
mod lstm;
mod models;
mod train;

pub use adam::AdamState;
pub use dense::{Activation, DenseLayer};
pub use lstm::{LstmGrads, LstmLayer};
pub use models::{Batch, LstmAe, Model, VanillaAe};
pub use train::{grad_check, train, Dataset, GradCheckReport, TrainConfig, TrainHistory};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Mean squared error over all elements.
pub fn mse(pred: &Mat, truth: &Mat) -> Result<f64> {
    if !pred.same_shape(truth) {
        return Err(Error::Shape(format!(
            "mse: {}x{} vs {}x{}",
            pred.rows, pred.cols, truth.rows, truth.cols
        )));
    }
    let n = pred.data.len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .data
        .iter()
        .zip(&truth.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_identical_is_zero() {
        let a = Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mse_unit_difference() {
        let p = Mat::from_vec(1, 2, vec![0.0, 0.0]);
        let t = Mat::from_vec(1, 2, vec![1.0, 1.0]);
        assert_eq!(mse(&p, &t).unwrap(), 1.0);
    }

    #[test]
    fn mse_shape_mismatch_errors() {
        let p = Mat::zeros(1, 2);
        let t = Mat::zeros(2, 1);
        assert!(mse(&p, &t).is_err());
    }

    #[test]
    fn mse_matches_loop_oracle() {
        let mut rng = crate::rng::Rng::new(13);
        let p = Mat::from_vec(13, 8, (0..104).map(|_| rng.gauss()).collect());
        let t = Mat::from_vec(13, 8, (0..104).map(|_| rng.gauss()).collect());
        let fast = mse(&p, &t).unwrap();
        let mut acc = 0.0;
        for i in 0..13 {
            for j in 0..8 {
                let d = p.at(i, j) - t.at(i, j);
                acc += d * d;
            }
        }
        let slow = acc / 104.0;
        assert!((fast - slow).abs() < 1e-12);
    }
}
