//! Fully connected layer with ReLU / Sigmoid / Identity activations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Sigmoid,
    Identity,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed in terms of the pre-activation z.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// out_dim x in_dim.
    pub w: Mat,
    pub b: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Glorot-uniform initialization, limit sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..out_dim * in_dim).map(|_| rng.uniform(-limit, limit)).collect();
        DenseLayer { w: Mat::from_vec(out_dim, in_dim, data), b: vec![0.0; out_dim], activation }
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows
    }

    /// Returns (activated output, pre-activation cache). x is batch x in_dim.
    pub fn forward(&self, x: &Mat) -> Result<(Mat, Mat)> {
        if x.cols != self.in_dim() {
            return Err(Error::Shape(format!(
                "dense forward: input width {} != layer in_dim {}",
                x.cols,
                self.in_dim()
            )));
        }
        let mut z = x.matmul_tb(&self.w);
        z.add_row(&self.b);
        let y = z.map(|v| self.activation.apply(v));
        Ok((y, z))
    }

    /// Exact gradients of the forward map. Returns (grad_w, grad_b, grad_x).
    pub fn backward(&self, x: &Mat, z: &Mat, upstream: &Mat) -> Result<(Mat, Vec<f64>, Mat)> {
        if !z.same_shape(upstream) {
            return Err(Error::Shape("dense backward: upstream shape mismatch".into()));
        }
        let dz = upstream.hadamard(&z.map(|v| self.activation.derivative(v)));
        let grad_w = dz.matmul_ta(x); // out_dim x in_dim
        let grad_b = dz.col_sum();
        let grad_x = dz.matmul(&self.w); // batch x in_dim
        Ok((grad_w, grad_b, grad_x))
    }

    pub fn param_count(&self) -> usize {
        self.w.data.len() + self.b.len()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w.data);
        out.extend_from_slice(&self.b);
    }

    pub fn read_params(&mut self, src: &[f64], pos: &mut usize) {
        let nw = self.w.data.len();
        self.w.data.copy_from_slice(&src[*pos..*pos + nw]);
        *pos += nw;
        let nb = self.b.len();
        self.b.copy_from_slice(&src[*pos..*pos + nb]);
        *pos += nb;
    }
}
