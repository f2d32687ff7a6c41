//! The two autoencoder architectures, behind one flat-parameter interface.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::dense::{Activation, DenseLayer};
use crate::nn::lstm::LstmLayer;
use crate::rng::Rng;

/// One training batch. `Rows` is batch x features; `Seq` is timestep-major,
/// L entries of batch x features.
#[derive(Debug, Clone)]
pub enum Batch {
    Rows(Mat),
    Seq(Vec<Mat>),
}

impl Batch {
    pub fn n_samples(&self) -> usize {
        match self {
            Batch::Rows(m) => m.rows,
            Batch::Seq(steps) => steps.first().map_or(0, |m| m.rows),
        }
    }
}

/// Anything trainable by the loop in `train`: parameters flatten to a single
/// vector, and one call yields reconstruction loss plus its exact gradient.
pub trait Model {
    fn param_count(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, flat: &[f64]);
    /// MSE reconstruction loss and dLoss/dparams for one batch.
    fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, Vec<f64>)>;
    /// Loss only; default recomputes the gradient and drops it.
    fn loss(&self, batch: &Batch) -> Result<f64> {
        Ok(self.loss_and_grad(batch)?.0)
    }
}

/// Dense autoencoder: 8 -> 32 -> 16 -> 8 -> 16 -> 32 -> 8, ReLU hidden
/// layers, sigmoid output.
#[derive(Debug, Clone)]
pub struct VanillaAe {
    pub layers: Vec<DenseLayer>,
}

impl VanillaAe {
    pub const WIDTHS: [usize; 7] = [8, 32, 16, 8, 16, 32, 8];

    pub fn new(rng: &mut Rng) -> Self {
        Self::with_widths(&Self::WIDTHS, rng)
    }

    /// Smaller instances for gradient checks and tests.
    pub fn with_widths(widths: &[usize], rng: &mut Rng) -> Self {
        let mut layers = Vec::new();
        for i in 0..widths.len() - 1 {
            let act =
                if i == widths.len() - 2 { Activation::Sigmoid } else { Activation::ReLU };
            layers.push(DenseLayer::glorot(widths[i], widths[i + 1], act, rng));
        }
        VanillaAe { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?.0;
        }
        Ok(cur)
    }
}

impl Model for VanillaAe {
    fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            l.write_params(&mut out);
        }
        out
    }

    fn set_params(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for l in &mut self.layers {
            l.read_params(flat, &mut pos);
        }
        assert_eq!(pos, flat.len(), "flat parameter vector length mismatch");
    }

    fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let x = match batch {
            Batch::Rows(m) => m,
            Batch::Seq(_) => {
                return Err(Error::Shape("vanilla AE expects row batches, got sequences".into()))
            }
        };
        // forward, caching inputs and pre-activations per layer
        let mut inputs = vec![x.clone()];
        let mut pres = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, z) = layer.forward(inputs.last().unwrap())?;
            pres.push(z);
            inputs.push(y);
        }
        let recon = inputs.last().unwrap();
        let n = (recon.rows * recon.cols) as f64;
        let loss = crate::nn::mse(recon, x)?;

        let mut upstream = Mat::from_vec(
            recon.rows,
            recon.cols,
            recon.data.iter().zip(&x.data).map(|(p, t)| 2.0 * (p - t) / n).collect(),
        );
        let mut grads_rev: Vec<(Mat, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let (gw, gb, gx) = layer.backward(&inputs[li], &pres[li], &upstream)?;
            grads_rev.push((gw, gb));
            upstream = gx;
        }
        // reconstruction target is the input itself, so the loss also depends
        // on x directly; parameter gradients are unaffected by that term
        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in grads_rev.into_iter().rev() {
            flat.extend_from_slice(&gw.data);
            flat.extend_from_slice(&gb);
        }
        Ok((loss, flat))
    }
}

/// LSTM autoencoder: two encoder LSTMs (64, 32), a repeat step expanding the
/// code back to sequence length, two decoder LSTMs (32, 64), and a per-step
/// dense output back to 8 features.
#[derive(Debug, Clone)]
pub struct LstmAe {
    pub enc1: LstmLayer,
    pub enc2: LstmLayer,
    pub dec1: LstmLayer,
    pub dec2: LstmLayer,
    pub out: DenseLayer,
    pub seq_len: usize,
}

impl LstmAe {
    pub fn new(seq_len: usize, rng: &mut Rng) -> Self {
        Self::with_dims(8, 64, 32, seq_len, rng)
    }

    /// Smaller instances for gradient checks and tests.
    pub fn with_dims(
        input: usize,
        h1: usize,
        h2: usize,
        seq_len: usize,
        rng: &mut Rng,
    ) -> Self {
        LstmAe {
            enc1: LstmLayer::glorot(input, h1, true, rng),
            enc2: LstmLayer::glorot(h1, h2, false, rng),
            dec1: LstmLayer::glorot(h2, h2, true, rng),
            dec2: LstmLayer::glorot(h2, h1, true, rng),
            out: DenseLayer::glorot(h1, input, Activation::Identity, rng),
            seq_len,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.enc1.input_dim()
    }

    /// Reconstruction of a timestep-major sequence batch.
    pub fn forward(&self, seq: &[Mat]) -> Result<Vec<Mat>> {
        if seq.len() != self.seq_len {
            return Err(Error::Shape(format!(
                "lstm AE expects sequences of length {}, got {}",
                self.seq_len,
                seq.len()
            )));
        }
        let enc1 = self.enc1.forward(seq)?;
        let enc2 = self.enc2.forward(&enc1.hidden)?;
        let code = enc2.hidden.last().unwrap().clone();
        let repeated: Vec<Mat> = (0..self.seq_len).map(|_| code.clone()).collect();
        let dec1 = self.dec1.forward(&repeated)?;
        let dec2 = self.dec2.forward(&dec1.hidden)?;
        let mut recon = Vec::with_capacity(self.seq_len);
        for h in &dec2.hidden {
            recon.push(self.out.forward(h)?.0);
        }
        Ok(recon)
    }
}

impl Model for LstmAe {
    fn param_count(&self) -> usize {
        self.enc1.param_count()
            + self.enc2.param_count()
            + self.dec1.param_count()
            + self.dec2.param_count()
            + self.out.param_count()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.enc1.write_params(&mut out);
        self.enc2.write_params(&mut out);
        self.dec1.write_params(&mut out);
        self.dec2.write_params(&mut out);
        self.out.write_params(&mut out);
        out
    }

    fn set_params(&mut self, flat: &[f64]) {
        let mut pos = 0;
        self.enc1.read_params(flat, &mut pos);
        self.enc2.read_params(flat, &mut pos);
        self.dec1.read_params(flat, &mut pos);
        self.dec2.read_params(flat, &mut pos);
        self.out.read_params(flat, &mut pos);
        assert_eq!(pos, flat.len(), "flat parameter vector length mismatch");
    }

    fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let seq = match batch {
            Batch::Seq(s) => s,
            Batch::Rows(_) => {
                return Err(Error::Shape("LSTM AE expects sequence batches, got rows".into()))
            }
        };
        if seq.len() != self.seq_len {
            return Err(Error::Shape(format!(
                "lstm AE expects sequences of length {}, got {}",
                self.seq_len,
                seq.len()
            )));
        }
        let n = seq[0].rows;
        let h2 = self.enc2.hidden_dim();

        // forward with caches
        let enc1 = self.enc1.forward(seq)?;
        let enc2 = self.enc2.forward(&enc1.hidden)?;
        let code = enc2.hidden.last().unwrap().clone();
        let repeated: Vec<Mat> = (0..self.seq_len).map(|_| code.clone()).collect();
        let dec1 = self.dec1.forward(&repeated)?;
        let dec2 = self.dec2.forward(&dec1.hidden)?;
        let mut recon = Vec::with_capacity(self.seq_len);
        let mut out_pre = Vec::with_capacity(self.seq_len);
        for h in &dec2.hidden {
            let (y, z) = self.out.forward(h)?;
            recon.push(y);
            out_pre.push(z);
        }

        // loss over all L * n * features elements
        let total = (self.seq_len * n * self.input_dim()) as f64;
        let mut loss = 0.0;
        for (r, x) in recon.iter().zip(seq) {
            for (a, b) in r.data.iter().zip(&x.data) {
                loss += (a - b) * (a - b);
            }
        }
        loss /= total;

        // output dense layer, per step
        let mut gw_out = Mat::zeros(self.out.out_dim(), self.out.in_dim());
        let mut gb_out = vec![0.0; self.out.out_dim()];
        let mut d_dec2 = Vec::with_capacity(self.seq_len);
        for t in 0..self.seq_len {
            let upstream = Mat::from_vec(
                n,
                self.input_dim(),
                recon[t]
                    .data
                    .iter()
                    .zip(&seq[t].data)
                    .map(|(p, x)| 2.0 * (p - x) / total)
                    .collect(),
            );
            let (gw, gb, gx) = self.out.backward(&dec2.hidden[t], &out_pre[t], &upstream)?;
            gw_out.add(&gw);
            for (a, b) in gb_out.iter_mut().zip(gb) {
                *a += b;
            }
            d_dec2.push(gx);
        }

        let (g_dec2, d_dec1) = self.dec2.backward(&dec1.hidden, &dec2, &d_dec2)?;
        let (g_dec1, d_repeat) = self.dec1.backward(&repeated, &dec1, &d_dec1)?;

        // repeat step: the code feeds every timestep, so its gradient is the
        // sum over timesteps
        let mut d_code = Mat::zeros(n, h2);
        for d in &d_repeat {
            d_code.add(d);
        }
        let mut d_enc2_hidden = vec![Mat::zeros(n, h2); self.seq_len];
        *d_enc2_hidden.last_mut().unwrap() = d_code;

        let (g_enc2, d_enc1_hidden) = self.enc2.backward(&enc1.hidden, &enc2, &d_enc2_hidden)?;
        let (g_enc1, _) = self.enc1.backward(seq, &enc1, &d_enc1_hidden)?;

        let mut flat = Vec::with_capacity(self.param_count());
        let pack = |g: &crate::nn::lstm::LstmGrads, flat: &mut Vec<f64>| {
            for a in 0..4 {
                flat.extend_from_slice(&g.w[a].data);
                flat.extend_from_slice(&g.u[a].data);
                flat.extend_from_slice(&g.b[a]);
            }
        };
        pack(&g_enc1, &mut flat);
        pack(&g_enc2, &mut flat);
        pack(&g_dec1, &mut flat);
        pack(&g_dec2, &mut flat);
        flat.extend_from_slice(&gw_out.data);
        flat.extend_from_slice(&gb_out);
        Ok((loss, flat))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanilla_spec_shape_round_trip() {
        let model = VanillaAe::new(&mut Rng::new(1));
        assert_eq!(model.input_dim(), 8);
        assert_eq!(model.layers.len(), 6);
        let x = Mat::from_vec(3, 8, (0..24).map(|i| i as f64 / 24.0).collect());
        let y = model.forward(&x).unwrap();
        assert_eq!((y.rows, y.cols), (3, 8));
        // sigmoid output lands in (0, 1)
        assert!(y.data.iter().all(|&v| v > 0.0 && v < 1.0));

        let p = model.params();
        assert_eq!(p.len(), model.param_count());
        let mut model2 = VanillaAe::new(&mut Rng::new(2));
        model2.set_params(&p);
        let y2 = model2.forward(&x).unwrap();
        assert_eq!(y.data, y2.data);
    }

    #[test]
    fn lstm_ae_reconstruction_shape() {
        let mut model = LstmAe::with_dims(3, 5, 4, 4, &mut Rng::new(7));
        let seq: Vec<Mat> = (0..4).map(|t| Mat::from_vec(2, 3, vec![t as f64; 6])).collect();
        let recon = model.forward(&seq).unwrap();
        assert_eq!(recon.len(), 4);
        assert_eq!((recon[0].rows, recon[0].cols), (2, 3));

        let p = model.params();
        assert_eq!(p.len(), model.param_count());
        model.set_params(&p);
        let recon2 = model.forward(&seq).unwrap();
        for (a, b) in recon.iter().zip(&recon2) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn wrong_batch_kind_is_shape_error() {
        let vanilla = VanillaAe::new(&mut Rng::new(1));
        assert!(vanilla.loss_and_grad(&Batch::Seq(vec![Mat::zeros(1, 8)])).is_err());
        let lstm = LstmAe::with_dims(3, 4, 3, 2, &mut Rng::new(1));
        assert!(lstm.loss_and_grad(&Batch::Rows(Mat::zeros(1, 3))).is_err());
    }
}
