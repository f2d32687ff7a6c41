//! LSTM layer with full backpropagation through time.
//!
//! Gate order throughout is [input, forget, output, candidate]. The standard
//! recurrence per step:
//!
//! ```text
//! i = sigmoid(W_i x_t + U_i h_{t-1} + b_i)
//! f = sigmoid(W_f x_t + U_f h_{t-1} + b_f)
//! o = sigmoid(W_o x_t + U_o h_{t-1} + b_o)
//! g = tanh   (W_g x_t + U_g h_{t-1} + b_g)
//! c_t = f * c_{t-1} + i * g
//! h_t = o * tanh(c_t)
//! ```
//!
//! with h_0 = c_0 = 0. Sequences are handled timestep-major: a batch of n
//! sequences of length L is `&[Mat]` with L entries of shape n x input.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::dense::sigmoid;
use crate::rng::Rng;

pub const GATE_I: usize = 0;
pub const GATE_F: usize = 1;
pub const GATE_O: usize = 2;
pub const GATE_G: usize = 3;

#[derive(Debug, Clone)]
pub struct LstmLayer {
    /// Input weights, hidden x input, per gate.
    pub w: [Mat; 4],
    /// Recurrent weights, hidden x hidden, per gate.
    pub u: [Mat; 4],
    /// Biases, per gate.
    pub b: [Vec<f64>; 4],
    pub return_sequences: bool,
}

/// Per-step activations cached by the forward pass for BPTT.
pub struct LstmCache {
    /// Gate activations [i, f, o, g] per step, each n x hidden.
    gates: Vec<[Mat; 4]>,
    /// Cell states per step.
    cells: Vec<Mat>,
    /// tanh(c_t) per step.
    tanh_c: Vec<Mat>,
    /// Hidden states per step.
    pub hidden: Vec<Mat>,
}

/// Parameter gradients in the same layout as the layer.
pub struct LstmGrads {
    pub w: [Mat; 4],
    pub u: [Mat; 4],
    pub b: [Vec<f64>; 4],
}

impl LstmLayer {
    pub fn glorot(input: usize, hidden: usize, return_sequences: bool, rng: &mut Rng) -> Self {
        let wl = (6.0 / (input + hidden) as f64).sqrt();
        let ul = (6.0 / (hidden + hidden) as f64).sqrt();
        let mk = |r: &mut Rng, rows, cols, lim: f64| {
            Mat::from_vec(rows, cols, (0..rows * cols).map(|_| r.uniform(-lim, lim)).collect())
        };
        let w = [
            mk(rng, hidden, input, wl),
            mk(rng, hidden, input, wl),
            mk(rng, hidden, input, wl),
            mk(rng, hidden, input, wl),
        ];
        let u = [
            mk(rng, hidden, hidden, ul),
            mk(rng, hidden, hidden, ul),
            mk(rng, hidden, hidden, ul),
            mk(rng, hidden, hidden, ul),
        ];
        // forget-gate bias starts at 1 so memory is open early in training
        let b = [vec![0.0; hidden], vec![1.0; hidden], vec![0.0; hidden], vec![0.0; hidden]];
        LstmLayer { w, u, b, return_sequences }
    }

    pub fn input_dim(&self) -> usize {
        self.w[0].cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.w[0].rows
    }

    /// Runs the recurrence over the whole sequence. Returns the cache; the
    /// layer output is `cache.hidden` (all steps) or its last entry when
    /// `return_sequences` is false.
    pub fn forward(&self, seq: &[Mat]) -> Result<LstmCache> {
        if seq.is_empty() {
            return Err(Error::Shape("lstm forward: empty sequence".into()));
        }
        let n = seq[0].rows;
        let hidden = self.hidden_dim();
        for (t, x) in seq.iter().enumerate() {
            if x.cols != self.input_dim() || x.rows != n {
                return Err(Error::Shape(format!(
                    "lstm forward: step {t} is {}x{}, expected {n}x{}",
                    x.rows,
                    x.cols,
                    self.input_dim()
                )));
            }
        }
        let mut cache = LstmCache {
            gates: Vec::with_capacity(seq.len()),
            cells: Vec::with_capacity(seq.len()),
            tanh_c: Vec::with_capacity(seq.len()),
            hidden: Vec::with_capacity(seq.len()),
        };
        let mut h_prev = Mat::zeros(n, hidden);
        let mut c_prev = Mat::zeros(n, hidden);
        for x in seq {
            let mut pre = [
                x.matmul_tb(&self.w[0]),
                x.matmul_tb(&self.w[1]),
                x.matmul_tb(&self.w[2]),
                x.matmul_tb(&self.w[3]),
            ];
            for (a, p) in pre.iter_mut().enumerate() {
                p.add(&h_prev.matmul_tb(&self.u[a]));
                p.add_row(&self.b[a]);
            }
            let gates = [
                pre[GATE_I].map(sigmoid),
                pre[GATE_F].map(sigmoid),
                pre[GATE_O].map(sigmoid),
                pre[GATE_G].map(f64::tanh),
            ];
            let mut c = gates[GATE_F].hadamard(&c_prev);
            c.add(&gates[GATE_I].hadamard(&gates[GATE_G]));
            let tanh_c = c.map(f64::tanh);
            let h = gates[GATE_O].hadamard(&tanh_c);
            cache.gates.push(gates);
            cache.cells.push(c.clone());
            cache.tanh_c.push(tanh_c);
            cache.hidden.push(h.clone());
            h_prev = h;
            c_prev = c;
        }
        Ok(cache)
    }

    /// Full BPTT. `upstream` carries dL/dh_t per step; when the layer only
    /// returns the final hidden state, pass zeros except at the last step.
    /// Returns (parameter gradients, dL/dx_t per step).
    pub fn backward(
        &self,
        seq: &[Mat],
        cache: &LstmCache,
        upstream: &[Mat],
    ) -> Result<(LstmGrads, Vec<Mat>)> {
        if cache.hidden.len() != seq.len() {
            return Err(Error::Shape("lstm backward: cache does not match sequence".into()));
        }
        if upstream.len() != seq.len() {
            return Err(Error::Shape("lstm backward: upstream length mismatch".into()));
        }
        let n = seq[0].rows;
        let hidden = self.hidden_dim();
        let input = self.input_dim();
        let mut grads = LstmGrads {
            w: [
                Mat::zeros(hidden, input),
                Mat::zeros(hidden, input),
                Mat::zeros(hidden, input),
                Mat::zeros(hidden, input),
            ],
            u: [
                Mat::zeros(hidden, hidden),
                Mat::zeros(hidden, hidden),
                Mat::zeros(hidden, hidden),
                Mat::zeros(hidden, hidden),
            ],
            b: [vec![0.0; hidden], vec![0.0; hidden], vec![0.0; hidden], vec![0.0; hidden]],
        };
        let mut dx = vec![Mat::zeros(n, input); seq.len()];
        let mut dh_next = Mat::zeros(n, hidden);
        let mut dc_next = Mat::zeros(n, hidden);

        for t in (0..seq.len()).rev() {
            let gates = &cache.gates[t];
            let tanh_c = &cache.tanh_c[t];
            let c_prev = if t == 0 { Mat::zeros(n, hidden) } else { cache.cells[t - 1].clone() };
            let h_prev = if t == 0 { Mat::zeros(n, hidden) } else { cache.hidden[t - 1].clone() };

            let mut dh = upstream[t].clone();
            dh.add(&dh_next);

            let d_o = dh.hadamard(tanh_c);
            let mut dc = dh.hadamard(&gates[GATE_O]);
            dc = dc.hadamard(&tanh_c.map(|v| 1.0 - v * v));
            dc.add(&dc_next);

            let d_i = dc.hadamard(&gates[GATE_G]);
            let d_f = dc.hadamard(&c_prev);
            let d_g = dc.hadamard(&gates[GATE_I]);

            // gate pre-activation gradients
            let dz = [
                d_i.hadamard(&gates[GATE_I].map(|v| v * (1.0 - v))),
                d_f.hadamard(&gates[GATE_F].map(|v| v * (1.0 - v))),
                d_o.hadamard(&gates[GATE_O].map(|v| v * (1.0 - v))),
                d_g.hadamard(&gates[GATE_G].map(|v| 1.0 - v * v)),
            ];

            let mut dh_acc = Mat::zeros(n, hidden);
            let mut dx_acc = Mat::zeros(n, input);
            for a in 0..4 {
                grads.w[a].add(&dz[a].matmul_ta(&seq[t]));
                grads.u[a].add(&dz[a].matmul_ta(&h_prev));
                for (gb, s) in grads.b[a].iter_mut().zip(dz[a].col_sum()) {
                    *gb += s;
                }
                dx_acc.add(&dz[a].matmul(&self.w[a]));
                dh_acc.add(&dz[a].matmul(&self.u[a]));
            }
            dx[t] = dx_acc;
            dh_next = dh_acc;
            dc_next = dc.hadamard(&gates[GATE_F]);
        }
        Ok((grads, dx))
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden_dim();
        4 * (h * self.input_dim() + h * h + h)
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for a in 0..4 {
            out.extend_from_slice(&self.w[a].data);
            out.extend_from_slice(&self.u[a].data);
            out.extend_from_slice(&self.b[a]);
        }
    }

    pub fn read_params(&mut self, src: &[f64], pos: &mut usize) {
        for a in 0..4 {
            let nw = self.w[a].data.len();
            self.w[a].data.copy_from_slice(&src[*pos..*pos + nw]);
            *pos += nw;
            let nu = self.u[a].data.len();
            self.u[a].data.copy_from_slice(&src[*pos..*pos + nu]);
            *pos += nu;
            let nb = self.b[a].len();
            self.b[a].copy_from_slice(&src[*pos..*pos + nb]);
            *pos += nb;
        }
    }
}
