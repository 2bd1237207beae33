//! Reference LSTM engine: peephole LSTM layers, a softmax output layer, and
//! floating-point and fixed-point forward passes over a layer stack.

pub mod fixed;
pub mod lut;

use rand::Rng;
use thiserror::Error;

pub use fixed::{
    quantize_network, FixedFormat, FixedLstmState, QuantConfig, QuantizedLstmLayer, QuantizedNetwork,
    QuantizedOutputLayer,
};
pub use lut::{build_lut, ActivationKind, ActivationLut, LutSpec};

use crate::quant::QuantError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RnnError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dim { what: String, expected: usize, got: usize },
    #[error("fixed-point mode requires quantized parameters")]
    MissingQuantized,
    #[error(transparent)]
    Quant(#[from] QuantError),
}

pub(crate) fn check_dim(what: &str, expected: usize, got: usize) -> Result<(), RnnError> {
    if expected != got {
        return Err(RnnError::Dim { what: what.to_string(), expected, got });
    }
    Ok(())
}

/// Gate order used for every per-gate array: input, forget, output, candidate cell.
pub const GATE_NAMES: [&str; 4] = ["i", "f", "o", "c"];
pub const GATE_I: usize = 0;
pub const GATE_F: usize = 1;
pub const GATE_O: usize = 2;
pub const GATE_C: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Float,
    Fixed,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, RnnError> {
        check_dim("matrix data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn random<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-scale..=scale)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).iter().zip(x).map(|(w, v)| w * v).sum()).collect()
    }
}

/// Parameters of one peephole LSTM layer.
///
/// Per-gate arrays are indexed by [`GATE_I`], [`GATE_F`], [`GATE_O`], [`GATE_C`].
/// Peepholes exist for the three sigmoid gates only.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub wx: [Matrix; 4],
    pub wh: [Matrix; 4],
    pub peephole: [Vec<f64>; 3],
    pub bias: [Vec<f64>; 4],
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            wx: std::array::from_fn(|_| Matrix::zeros(hidden_dim, input_dim)),
            wh: std::array::from_fn(|_| Matrix::zeros(hidden_dim, hidden_dim)),
            peephole: std::array::from_fn(|_| vec![0.0; hidden_dim]),
            bias: std::array::from_fn(|_| vec![0.0; hidden_dim]),
        }
    }

    /// Uniform initialization in `±1/sqrt(input + hidden)`; peepholes and biases in `±0.5`.
    pub fn random<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let scale = 1.0 / ((input_dim + hidden_dim) as f64).sqrt();
        let vec = |rng: &mut R| (0..hidden_dim).map(|_| rng.gen_range(-0.5..=0.5)).collect::<Vec<f64>>();
        Self {
            wx: std::array::from_fn(|_| Matrix::random(hidden_dim, input_dim, scale, rng)),
            wh: std::array::from_fn(|_| Matrix::random(hidden_dim, hidden_dim, scale, rng)),
            peephole: std::array::from_fn(|_| vec(rng)),
            bias: std::array::from_fn(|_| vec(rng)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.wx[0].cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.wx[0].rows()
    }

    pub fn validate(&self) -> Result<(), RnnError> {
        let (d, h) = (self.input_dim(), self.hidden_dim());
        for g in 0..4 {
            check_dim("input weight rows", h, self.wx[g].rows())?;
            check_dim("input weight cols", d, self.wx[g].cols())?;
            check_dim("recurrent weight rows", h, self.wh[g].rows())?;
            check_dim("recurrent weight cols", h, self.wh[g].cols())?;
            check_dim("bias", h, self.bias[g].len())?;
        }
        for p in &self.peephole {
            check_dim("peephole", h, p.len())?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (d, h) = (self.input_dim(), self.hidden_dim());
        4 * h * (d + h) + 3 * h + 4 * h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayerParams {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl OutputLayerParams {
    pub fn zeros(hidden_dim: usize, labels: usize) -> Self {
        Self { weights: Matrix::zeros(labels, hidden_dim), bias: vec![0.0; labels] }
    }

    pub fn random<R: Rng>(hidden_dim: usize, labels: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (hidden_dim as f64).sqrt();
        Self {
            weights: Matrix::random(labels, hidden_dim, scale, rng),
            bias: (0..labels).map(|_| rng.gen_range(-0.5..=0.5)).collect(),
        }
    }

    pub fn labels(&self) -> usize {
        self.weights.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }
}

/// Recurrent state of one layer in floating point.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self { h: vec![0.0; hidden_dim], c: vec![0.0; hidden_dim] }
    }
}

/// One floating-point time step; returns `h_t` and updates `state` in place.
pub fn lstm_step_float(params: &LstmLayerParams, x: &[f64], state: &mut LstmState) -> Result<Vec<f64>, RnnError> {
    let h_dim = params.hidden_dim();
    check_dim("layer input", params.input_dim(), x.len())?;
    check_dim("state h", h_dim, state.h.len())?;
    check_dim("state c", h_dim, state.c.len())?;
    let gate_pre = |g: usize| -> Vec<f64> {
        let a = params.wx[g].matvec(x);
        let b = params.wh[g].matvec(&state.h);
        (0..h_dim).map(|j| a[j] + b[j] + params.bias[g][j]).collect()
    };
    let pre_i = gate_pre(GATE_I);
    let pre_f = gate_pre(GATE_F);
    let pre_o = gate_pre(GATE_O);
    let pre_c = gate_pre(GATE_C);
    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    for j in 0..h_dim {
        let c_prev = state.c[j];
        let i = lut::sigmoid(pre_i[j] + params.peephole[GATE_I][j] * c_prev);
        let f = lut::sigmoid(pre_f[j] + params.peephole[GATE_F][j] * c_prev);
        let cand = pre_c[j].tanh();
        c[j] = f * c_prev + i * cand;
        let o = lut::sigmoid(pre_o[j] + params.peephole[GATE_O][j] * c[j]);
        h[j] = o * c[j].tanh();
    }
    state.h.clone_from(&h);
    state.c = c;
    Ok(h)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// A unidirectional LSTM stack followed by a softmax output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmNetwork {
    pub input_dim: usize,
    pub layers: Vec<LstmLayerParams>,
    pub output: OutputLayerParams,
    pub quantized: Option<QuantizedNetwork>,
}

impl LstmNetwork {
    pub fn new(input_dim: usize, layers: Vec<LstmLayerParams>, output: OutputLayerParams) -> Result<Self, RnnError> {
        let net = Self { input_dim, layers, output, quantized: None };
        net.validate()?;
        Ok(net)
    }

    /// Random network with `depth` layers of width `hidden`.
    pub fn random<R: Rng>(input_dim: usize, depth: usize, hidden: usize, labels: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(depth);
        let mut d = input_dim;
        for _ in 0..depth {
            layers.push(LstmLayerParams::random(d, hidden, rng));
            d = hidden;
        }
        let output = OutputLayerParams::random(d, labels, rng);
        Self { input_dim, layers, output, quantized: None }
    }

    pub fn validate(&self) -> Result<(), RnnError> {
        let mut d = self.input_dim;
        for layer in &self.layers {
            layer.validate()?;
            check_dim("layer chain", d, layer.input_dim())?;
            d = layer.hidden_dim();
        }
        check_dim("output layer input", d, self.output.hidden_dim())?;
        check_dim("output bias", self.output.labels(), self.output.bias.len())?;
        Ok(())
    }

    pub fn labels(&self) -> usize {
        self.output.labels()
    }

    /// `(input_dim, hidden_dim)` per layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.input_dim(), l.hidden_dim())).collect()
    }

    pub fn param_count(&self) -> usize {
        count_params(&self.layers, &self.output)
    }

    pub fn float_state(&self) -> Vec<LstmState> {
        self.layers.iter().map(|l| LstmState::zeros(l.hidden_dim())).collect()
    }

    pub fn quantized(&self) -> Result<&QuantizedNetwork, RnnError> {
        self.quantized.as_ref().ok_or(RnnError::MissingQuantized)
    }

    /// Runs one frame in floating point and returns the output probabilities.
    pub fn frame_float(&self, x: &[f64], state: &mut [LstmState]) -> Result<Vec<f64>, RnnError> {
        check_dim("layer states", self.layers.len(), state.len())?;
        let mut cur = x.to_vec();
        for (layer, st) in self.layers.iter().zip(state.iter_mut()) {
            cur = lstm_step_float(layer, &cur, st)?;
        }
        let logits: Vec<f64> =
            self.output.weights.matvec(&cur).iter().zip(&self.output.bias).map(|(a, b)| a + b).collect();
        Ok(softmax(&logits))
    }
}

/// Either mode's per-layer recurrent state.
#[derive(Debug, Clone, PartialEq)]
pub enum NetworkState {
    Float(Vec<LstmState>),
    Fixed(Vec<FixedLstmState>),
}

impl NetworkState {
    pub fn new(net: &LstmNetwork, mode: Mode) -> Result<Self, RnnError> {
        Ok(match mode {
            Mode::Float => NetworkState::Float(net.float_state()),
            Mode::Fixed => NetworkState::Fixed(net.quantized()?.initial_state()),
        })
    }
}

/// Runs a feature sequence through the stack, returning one probability row per frame.
/// States carry over between calls.
pub fn stack_forward(net: &LstmNetwork, x_seq: &[Vec<f64>], state: &mut NetworkState) -> Result<Vec<Vec<f64>>, RnnError> {
    let mut out = Vec::with_capacity(x_seq.len());
    match state {
        NetworkState::Float(st) => {
            for x in x_seq {
                out.push(net.frame_float(x, st)?);
            }
        }
        NetworkState::Fixed(st) => {
            let q = net.quantized()?;
            for x in x_seq {
                out.push(q.frame(x, st)?);
            }
        }
    }
    Ok(out)
}

/// Weights, peepholes and biases over all layers plus the output layer.
pub fn count_params(layers: &[LstmLayerParams], output: &OutputLayerParams) -> usize {
    layers.iter().map(LstmLayerParams::param_count).sum::<usize>() + output.param_count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_layer_gives_zero() {
        let p = LstmLayerParams::zeros(3, 4);
        let mut st = LstmState::zeros(4);
        let h = lstm_step_float(&p, &[1.0, -2.0, 0.5], &mut st).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(st.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_unit_cell() {
        let p = LstmLayerParams::zeros(1, 1);
        let mut st = LstmState { h: vec![0.0], c: vec![1.0] };
        let h = lstm_step_float(&p, &[0.0], &mut st).unwrap();
        assert_eq!(st.c[0], 0.5);
        assert!((h[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((h[0] - 0.231059).abs() < 1e-6);
    }

    /// Straight-line restatement of the six peephole-LSTM equations.
    fn oracle_step(p: &LstmLayerParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = p.hidden_dim();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        for j in 0..n {
            let mut s = [0.0f64; 4];
            for (g, sg) in s.iter_mut().enumerate() {
                let mut acc = p.bias[g][j];
                for k in 0..x.len() {
                    acc += p.wx[g].row(j)[k] * x[k];
                }
                for k in 0..n {
                    acc += p.wh[g].row(j)[k] * h_prev[k];
                }
                *sg = acc;
            }
            let i = sig(s[0] + p.peephole[0][j] * c_prev[j]);
            let f = sig(s[1] + p.peephole[1][j] * c_prev[j]);
            let cc = s[3].tanh();
            c[j] = f * c_prev[j] + i * cc;
            let o = sig(s[2] + p.peephole[2][j] * c[j]);
            h[j] = o * c[j].tanh();
        }
        (h, c)
    }

    #[test]
    fn matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = LstmLayerParams::random(16, 16, &mut rng);
        let mut st = LstmState::zeros(16);
        for t in 0..5 {
            let x: Vec<f64> = (0..16).map(|k| ((t * 16 + k) as f64 * 0.37).sin()).collect();
            let (h_ref, c_ref) = oracle_step(&p, &x, &st.h, &st.c);
            let h = lstm_step_float(&p, &x, &mut st).unwrap();
            for j in 0..16 {
                assert!((h[j] - h_ref[j]).abs() < 1e-12);
                assert!((st.c[j] - c_ref[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let p = LstmLayerParams::zeros(3, 4);
        let mut st = LstmState::zeros(4);
        assert!(matches!(lstm_step_float(&p, &[1.0], &mut st), Err(RnnError::Dim { .. })));
        let net = LstmNetwork::new(3, vec![p.clone()], OutputLayerParams::zeros(5, 2));
        assert!(net.is_err());
        let net = LstmNetwork::new(3, vec![p], OutputLayerParams::zeros(4, 2)).unwrap();
        assert!(matches!(NetworkState::new(&net, Mode::Fixed), Err(RnnError::MissingQuantized)));
    }

    #[test]
    fn param_counts() {
        assert_eq!(count_params(&[LstmLayerParams::zeros(1, 1)], &OutputLayerParams::zeros(1, 1)) - 2, 15);
        assert_eq!(count_params(&[], &OutputLayerParams::zeros(4, 2)), 10);
    }

    #[test]
    fn stack_shapes_and_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = LstmNetwork::random(30, 2, 24, 30, &mut rng);
        let mut st = NetworkState::new(&net, Mode::Float).unwrap();
        assert!(stack_forward(&net, &[], &mut st).unwrap().is_empty());
        assert_eq!(st, NetworkState::new(&net, Mode::Float).unwrap());
        let xs: Vec<Vec<f64>> = (0..4).map(|t| (0..30).map(|k| (k == t) as u8 as f64).collect()).collect();
        let out = stack_forward(&net, &xs, &mut st).unwrap();
        assert_eq!(out.len(), 4);
        for row in out {
            assert_eq!(row.len(), 30);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
