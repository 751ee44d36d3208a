//! GRU sequence-to-sequence autoencoder.
//!
//! Encoder: two GRU layers, each followed by layer normalization; the
//! normalized final state of the second layer is the embedding `z`.
//! Decoder: `z` is fed as the input at every step of two GRU layers (zero
//! initial state), each normalized, then a linear map back to the channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{ParamId, Parameters, Tape, Tensor, TensorError, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum AutoencoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("expected {expected} values, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("window length {got} does not match model window length {expected}")]
    DeltaMismatch { expected: usize, got: usize },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("empty batch")]
    EmptyBatch,
}

/// Hyperparameters fixing every tensor shape of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub channels: usize,
    pub embedding_dim: usize,
    pub delta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruLayerParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_u: ParamId,
    pub w_r: ParamId,
    pub w_n: ParamId,
    pub u_u: ParamId,
    pub u_r: ParamId,
    pub u_n: ParamId,
    pub b_u: ParamId,
    pub b_r: ParamId,
    pub b_n: ParamId,
}

impl GruLayerParams {
    fn init(params: &mut Parameters, prefix: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut add = |name: &str, shape: &[usize], fan_in: usize| {
            params.insert(format!("{prefix}.{name}"), uniform(rng, shape, fan_in))
        };
        Self {
            input_size: input,
            hidden_size: hidden,
            w_u: add("w_u", &[hidden, input], input),
            w_r: add("w_r", &[hidden, input], input),
            w_n: add("w_n", &[hidden, input], input),
            u_u: add("u_u", &[hidden, hidden], hidden),
            u_r: add("u_r", &[hidden, hidden], hidden),
            u_n: add("u_n", &[hidden, hidden], hidden),
            b_u: add("b_u", &[hidden], hidden),
            b_r: add("b_r", &[hidden], hidden),
            b_n: add("b_n", &[hidden], hidden),
        }
    }

    fn ids(&self) -> [ParamId; 9] {
        [
            self.w_u, self.w_r, self.w_n, self.u_u, self.u_r, self.u_n, self.b_u, self.b_r, self.b_n,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormParams {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl NormParams {
    fn init(params: &mut Parameters, prefix: &str, size: usize) -> Self {
        Self {
            gain: params.insert(format!("{prefix}.gain"), Tensor::vector(vec![1.0; size])),
            bias: params.insert(format!("{prefix}.bias"), Tensor::zeros(&[size])),
            eps: LAYER_NORM_EPS,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect())
        .expect("shape and data agree")
}

/// Parameter leaves registered on one tape.
struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    fn get(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    fn gru(&self, layer: &GruLayerParams, x: Var, h: Var) -> [Var; 11] {
        let p = layer.ids().map(|id| self.get(id));
        [x, h, p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub params: Parameters,
    shape: ModelShape,
    encoder: [GruLayerParams; 2],
    encoder_norm: [NormParams; 2],
    decoder: [GruLayerParams; 2],
    decoder_norm: [NormParams; 2],
    out_w: ParamId,
    out_b: ParamId,
}

impl AutoencoderModel {
    /// Fresh model with weights uniform in `±1/sqrt(fan_in)`.
    pub fn new(shape: ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Parameters::new();
        let (c, d) = (shape.channels, shape.embedding_dim);
        let encoder = [
            GruLayerParams::init(&mut params, "encoder.gru0", c, d, &mut rng),
            GruLayerParams::init(&mut params, "encoder.gru1", d, d, &mut rng),
        ];
        let encoder_norm = [
            NormParams::init(&mut params, "encoder.norm0", d),
            NormParams::init(&mut params, "encoder.norm1", d),
        ];
        let decoder = [
            GruLayerParams::init(&mut params, "decoder.gru0", d, d, &mut rng),
            GruLayerParams::init(&mut params, "decoder.gru1", d, d, &mut rng),
        ];
        let decoder_norm = [
            NormParams::init(&mut params, "decoder.norm0", d),
            NormParams::init(&mut params, "decoder.norm1", d),
        ];
        let out_w = params.insert("decoder.out.weight", uniform(&mut rng, &[c, d], d));
        let out_b = params.insert("decoder.out.bias", uniform(&mut rng, &[c], d));
        Self {
            params,
            shape,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            out_w,
            out_b,
        }
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn embedding_dim(&self) -> usize {
        self.shape.embedding_dim
    }

    pub fn delta(&self) -> usize {
        self.shape.delta
    }

    pub fn encoder_layers(&self) -> &[GruLayerParams; 2] {
        &self.encoder
    }

    pub fn decoder_layers(&self) -> &[GruLayerParams; 2] {
        &self.decoder
    }

    /// Parameter ids belonging to the encoder (GRU layers and their norms).
    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.encoder.iter().flat_map(|l| l.ids()).collect();
        ids.extend(self.encoder_norm.iter().flat_map(|n| [n.gain, n.bias]));
        ids
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .ids()
            .map(|id| {
                if trainable {
                    tape.param(&self.params, id)
                } else {
                    tape.constant(self.params.get(id).clone())
                }
            })
            .collect();
        Bound { vars }
    }

    fn check_windows(&self, windows: &[&[f64]]) -> Result<(), AutoencoderError> {
        if windows.is_empty() {
            return Err(AutoencoderError::EmptyBatch);
        }
        let expected = self.shape.delta * self.shape.channels;
        for w in windows {
            if w.len() != expected {
                if w.len() % self.shape.channels == 0 {
                    return Err(AutoencoderError::DeltaMismatch {
                        expected: self.shape.delta,
                        got: w.len() / self.shape.channels,
                    });
                }
                return Err(AutoencoderError::WrongLength { expected, got: w.len() });
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(AutoencoderError::NonFinite);
            }
        }
        Ok(())
    }

    fn encode_bound(&self, tape: &mut Tape, p: &Bound, windows: &[&[f64]]) -> Result<Var, AutoencoderError> {
        let (b, c, d) = (windows.len(), self.shape.channels, self.shape.embedding_dim);
        let mut h0 = tape.constant(Tensor::zeros(&[b, d]));
        let mut h1 = h0;
        let mut step = vec![0.0; b * c];
        for t in 0..self.shape.delta {
            for (row, w) in windows.iter().enumerate() {
                step[row * c..(row + 1) * c].copy_from_slice(&w[t * c..(t + 1) * c]);
            }
            let x = tape.constant(Tensor::matrix(b, c, step.clone())?);
            h0 = tape.gru_cell(&p.gru(&self.encoder[0], x, h0))?;
            let n0 = self.norm(tape, p, &self.encoder_norm[0], h0)?;
            h1 = tape.gru_cell(&p.gru(&self.encoder[1], n0, h1))?;
        }
        Ok(self.norm(tape, p, &self.encoder_norm[1], h1)?)
    }

    fn decode_bound(&self, tape: &mut Tape, p: &Bound, z: Var, delta: usize) -> Result<Var, AutoencoderError> {
        let b = tape.value(z).dims2().0;
        let d = self.shape.embedding_dim;
        let mut h0 = tape.constant(Tensor::zeros(&[b, d]));
        let mut h1 = h0;
        let mut outputs = Vec::with_capacity(delta);
        let (w, bias) = (p.get(self.out_w), p.get(self.out_b));
        for _ in 0..delta {
            h0 = tape.gru_cell(&p.gru(&self.decoder[0], z, h0))?;
            let n0 = self.norm(tape, p, &self.decoder_norm[0], h0)?;
            h1 = tape.gru_cell(&p.gru(&self.decoder[1], n0, h1))?;
            let n1 = self.norm(tape, p, &self.decoder_norm[1], h1)?;
            outputs.push(tape.linear(n1, w, bias)?);
        }
        Ok(tape.concat_cols(&outputs)?)
    }

    fn norm(&self, tape: &mut Tape, p: &Bound, n: &NormParams, x: Var) -> Result<Var, TensorError> {
        tape.layer_norm(x, p.get(n.gain), p.get(n.bias), n.eps)
    }

    /// Embedding of a single `(delta, channels)` window.
    pub fn encode(&self, window: &[f64]) -> Result<Vec<f64>, AutoencoderError> {
        Ok(self.embed(&[window], 1)?)
    }

    /// Embeddings of many windows as a row-major `(n, D)` matrix, evaluated
    /// `batch_size` windows at a time without recording gradients.
    pub fn embed(&self, windows: &[&[f64]], batch_size: usize) -> Result<Vec<f64>, AutoencoderError> {
        self.check_windows(windows)?;
        let mut out = Vec::with_capacity(windows.len() * self.shape.embedding_dim);
        for chunk in windows.chunks(batch_size.max(1)) {
            let mut tape = Tape::new();
            let p = self.bind(&mut tape, false);
            let z = self.encode_bound(&mut tape, &p, chunk)?;
            out.extend_from_slice(tape.value(z).data());
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(AutoencoderError::NonFinite);
        }
        Ok(out)
    }

    /// Reconstruction of `delta` steps from an embedding, row-major `(delta, channels)`.
    pub fn decode(&self, z: &[f64], delta: usize) -> Result<Vec<f64>, AutoencoderError> {
        let d = self.shape.embedding_dim;
        if z.len() != d {
            return Err(AutoencoderError::WrongLength { expected: d, got: z.len() });
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let zv = tape.constant(Tensor::matrix(1, d, z.to_vec())?);
        let out = self.decode_bound(&mut tape, &p, zv, delta)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Record a forward pass of a batch with trainable parameters.
    pub fn forward_on_tape(&self, tape: &mut Tape, windows: &[&[f64]]) -> Result<ForwardPass, AutoencoderError> {
        self.check_windows(windows)?;
        let p = self.bind(tape, true);
        let z = self.encode_bound(tape, &p, windows)?;
        let reconstruction = self.decode_bound(tape, &p, z, self.shape.delta)?;
        let target: Vec<f64> = windows.iter().flat_map(|w| w.iter().copied()).collect();
        let width = self.shape.delta * self.shape.channels;
        let target = tape.constant(Tensor::matrix(windows.len(), width, target)?);
        let diff = tape.sub(reconstruction, target)?;
        let sq = tape.squared_norm(diff)?;
        let loss = tape.affine(sq, 0.5 / windows.len() as f64, 0.0)?;
        Ok(ForwardPass {
            embeddings: z,
            reconstruction,
            reconstruction_loss: loss,
        })
    }

    /// `L_AE` of a batch: half the batch-averaged squared Frobenius error.
    pub fn reconstruction_loss(&self, windows: &[&[f64]]) -> Result<f64, AutoencoderError> {
        let mut tape = Tape::new();
        let pass = self.forward_on_tape(&mut tape, windows)?;
        Ok(tape.value(pass.reconstruction_loss).item())
    }
}

/// Handles into a recorded forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardPass {
    /// `(batch, D)`
    pub embeddings: Var,
    /// `(batch, delta * channels)`
    pub reconstruction: Var,
    /// Scalar `L_AE`.
    pub reconstruction_loss: Var,
}

/// `(1/2) (1/n) sum_i ||x_i - xhat_i||^2` for already-computed reconstructions.
pub fn reconstruction_error(originals: &[&[f64]], reconstructions: &[&[f64]]) -> f64 {
    assert_eq!(originals.len(), reconstructions.len());
    if originals.is_empty() {
        return 0.0;
    }
    let total: f64 = originals
        .iter()
        .zip(reconstructions)
        .map(|(x, y)| x.iter().zip(*y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    0.5 * total / originals.len() as f64
}

/// One GRU step for a single input vector, `h = (1-u) h_prev + u n`.
pub fn gru_step(
    params: &Parameters,
    layer: &GruLayerParams,
    x: &[f64],
    h_prev: &[f64],
) -> Result<Vec<f64>, AutoencoderError> {
    if x.len() != layer.input_size {
        return Err(AutoencoderError::WrongLength { expected: layer.input_size, got: x.len() });
    }
    if h_prev.len() != layer.hidden_size {
        return Err(AutoencoderError::WrongLength { expected: layer.hidden_size, got: h_prev.len() });
    }
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::matrix(1, x.len(), x.to_vec())?);
    let hv = tape.constant(Tensor::matrix(1, h_prev.len(), h_prev.to_vec())?);
    let p = layer.ids().map(|id| tape.constant(params.get(id).clone()));
    let out = tape.gru_cell(&[xv, hv, p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]])?;
    Ok(tape.value(out).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(delta: usize, d: usize, seed: u64) -> AutoencoderModel {
        AutoencoderModel::new(ModelShape { channels: 3, embedding_dim: d, delta }, seed)
    }

    fn window(delta: usize, phase: f64) -> Vec<f64> {
        (0..delta * 3).map(|i| 0.5 + 0.4 * ((i as f64) * 0.3 + phase).sin()).collect()
    }

    /// Direct evaluation of the GRU equations, independent of the tape kernel.
    fn gru_reference(p: &Parameters, l: &GruLayerParams, x: &[f64], h: &[f64]) -> Vec<f64> {
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mv = |id: ParamId, v: &[f64], j: usize| -> f64 {
            let m = p.get(id);
            let cols = m.shape()[1];
            (0..cols).map(|k| m.data()[j * cols + k] * v[k]).sum()
        };
        let b = |id: ParamId, j: usize| p.get(id).data()[j];
        let hs = l.hidden_size;
        let u: Vec<f64> = (0..hs).map(|j| sig(mv(l.w_u, x, j) + mv(l.u_u, h, j) + b(l.b_u, j))).collect();
        let r: Vec<f64> = (0..hs).map(|j| sig(mv(l.w_r, x, j) + mv(l.u_r, h, j) + b(l.b_r, j))).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        (0..hs)
            .map(|j| {
                let n = (mv(l.w_n, x, j) + mv(l.u_n, &rh, j) + b(l.b_n, j)).tanh();
                (1.0 - u[j]) * h[j] + u[j] * n
            })
            .collect()
    }

    #[test]
    fn zero_weights_keep_zero_state() {
        let mut m = toy(4, 2, 0);
        m.params.iter_mut().for_each(|t| t.data_mut().fill(0.0));
        let l = m.encoder_layers()[0];
        assert_eq!(gru_step(&m.params, &l, &[0.3, -1.0, 2.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_update_gate_yields_candidate() {
        let mut m = toy(4, 2, 1);
        let l = m.encoder_layers()[0];
        m.params.get_mut(l.b_u).data_mut().fill(50.0);
        let (x, h) = ([0.2, 0.4, 0.9], [0.7, -0.3]);
        let out = gru_step(&m.params, &l, &x, &h).unwrap();
        // candidate n = tanh(W_n x + U_n (r * h) + b_n), computed by hand
        let p = &m.params;
        let row = |id: ParamId, v: &[f64], j: usize| -> f64 {
            let t = p.get(id);
            let c = t.shape()[1];
            (0..c).map(|k| t.data()[j * c + k] * v[k]).sum()
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let r: Vec<f64> = (0..2)
            .map(|j| sig(row(l.w_r, &x, j) + row(l.u_r, &h, j) + p.get(l.b_r).data()[j]))
            .collect();
        let rh = [r[0] * h[0], r[1] * h[1]];
        for j in 0..2 {
            let n = (row(l.w_n, &x, j) + row(l.u_n, &rh, j) + p.get(l.b_n).data()[j]).tanh();
            assert!((out[j] - n).abs() < 1e-12, "{} vs {n}", out[j]);
        }
    }

    #[test]
    fn gru_step_matches_reference() {
        let m = toy(4, 2, 5);
        for l in m.encoder_layers().iter().chain(m.decoder_layers()) {
            let x: Vec<f64> = (0..l.input_size).map(|i| 0.3 * i as f64 - 0.2).collect();
            let h = [0.25, -0.6];
            let got = gru_step(&m.params, l, &x, &h).unwrap();
            let want = gru_reference(&m.params, l, &x, &h);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn encode_is_deterministic_and_sized() {
        let m = AutoencoderModel::new(ModelShape { channels: 3, embedding_dim: 30, delta: 16 }, 9);
        let w = window(16, 0.1);
        let a = m.encode(&w).unwrap();
        let b = m.encode(&w).unwrap();
        assert_eq!(a.len(), 30);
        assert_eq!(a, b);
    }

    #[test]
    fn encode_rejects_bad_inputs() {
        let m = toy(8, 4, 2);
        let mut w = window(8, 0.0);
        w[5] = f64::NAN;
        assert!(matches!(m.encode(&w), Err(AutoencoderError::NonFinite)));
        assert!(matches!(
            m.encode(&window(9, 0.0)),
            Err(AutoencoderError::DeltaMismatch { expected: 8, got: 9 })
        ));
        assert!(matches!(m.encode(&[0.0; 7]), Err(AutoencoderError::WrongLength { .. })));
    }

    #[test]
    fn decode_shape_and_determinism() {
        let m = toy(8, 4, 3);
        let z = m.encode(&window(8, 0.4)).unwrap();
        let a = m.decode(&z, 8).unwrap();
        assert_eq!(a.len(), 8 * 3);
        assert_eq!(a, m.decode(&z, 8).unwrap());
        assert!(m.decode(&z[..3], 8).is_err());
    }

    #[test]
    fn round_trip_shape_for_sweep_lengths() {
        for delta in [128, 256, 600, 960] {
            let m = AutoencoderModel::new(ModelShape { channels: 3, embedding_dim: 4, delta }, 1);
            let z = m.encode(&window(delta, 0.0)).unwrap();
            assert_eq!(m.decode(&z, delta).unwrap().len(), delta * 3);
        }
    }

    #[test]
    fn reconstruction_error_examples() {
        let x = window(600, 0.0);
        let y: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        assert!((reconstruction_error(&[&x], &[&y]) - 900.0).abs() < 1e-9);
        assert_eq!(reconstruction_error(&[&x], &[&x]), 0.0);
        assert_eq!(reconstruction_error(&[&[0.0, 1.0]], &[&[0.5, 0.5]]), 0.25);
    }

    #[test]
    fn loss_matches_explicit_reconstruction() {
        let m = toy(8, 4, 4);
        let (w1, w2) = (window(8, 0.0), window(8, 1.0));
        let loss = m.reconstruction_loss(&[&w1, &w2]).unwrap();
        let r1 = m.decode(&m.encode(&w1).unwrap(), 8).unwrap();
        let r2 = m.decode(&m.encode(&w2).unwrap(), 8).unwrap();
        let direct = reconstruction_error(&[&w1, &w2], &[&r1, &r2]);
        assert!((loss - direct).abs() < 1e-12);
    }

    #[test]
    fn normalized_embedding_has_zero_mean_unit_variance() {
        // the gain/bias are identity at init, so z is the raw normalized state
        let m = toy(12, 6, 8);
        let z = m.encode(&window(12, 0.3)).unwrap();
        let mean = z.iter().sum::<f64>() / 6.0;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-12);
        // variance is var/(var + eps) of the pre-norm state
        assert!((var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn reconstruction_gradient_matches_finite_differences() {
        let mut m = toy(8, 4, 12);
        let ws: Vec<Vec<f64>> = (0..3).map(|k| window(8, k as f64)).collect();
        let refs: Vec<&[f64]> = ws.iter().map(Vec::as_slice).collect();
        let mut tape = Tape::new();
        let pass = m.forward_on_tape(&mut tape, &refs).unwrap();
        tape.backward(pass.reconstruction_loss, &mut m.params).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        let mut probe = m.clone();
        for id in m.params.ids() {
            let g = m.params.get(id).grad().unwrap().to_vec();
            for k in 0..g.len() {
                let orig = m.params.get(id).data()[k];
                probe.params.get_mut(id).data_mut()[k] = orig + h;
                let up = probe.reconstruction_loss(&refs).unwrap();
                probe.params.get_mut(id).data_mut()[k] = orig - h;
                let down = probe.reconstruction_loss(&refs).unwrap();
                probe.params.get_mut(id).data_mut()[k] = orig;
                let fd = (up - down) / (2.0 * h);
                worst = worst.max((g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-4));
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst:e}");
    }
}
