//! Fixed-point forward pass.
//!
//! Weights, peepholes and biases are quantized per tensor. Products are summed
//! exactly in 64-bit integers and re-quantized only at three points: the
//! gate pre-activation after each matrix-vector sum (and again after the
//! peephole term), the cell after its update, and `h` after the output gate.

use rand::Rng;

use super::lut::{ActivationKind, ActivationLut, LutSpec};
use super::{check_dim, LstmLayerParams, LstmNetwork, Matrix, OutputLayerParams, RnnError, GATE_C, GATE_F, GATE_I, GATE_O};
use crate::quant::{dequantize, quantize, rescale, search_step, QuantScheme, QuantizedTensor};

/// Number formats of one layer's datapath.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedFormat {
    /// Layer input signals.
    pub input: QuantScheme,
    /// Layer output `h`.
    pub hidden: QuantScheme,
    /// PE buffer / gate pre-activation.
    pub preact: QuantScheme,
    pub cell: QuantScheme,
    /// Activation table outputs.
    pub gate: QuantScheme,
    pub lut: LutSpec,
}

/// Bit widths for [`quantize_network`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantConfig {
    pub weight_bits: u8,
    pub signal_bits: u8,
    pub cell_bits: u8,
    /// Step exponent of the first layer's input; defaults to a ±4 range.
    pub input_exponent: Option<i32>,
    pub lut: LutSpec,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self { weight_bits: 6, signal_bits: 8, cell_bits: 16, input_exponent: None, lut: LutSpec::default() }
    }
}

impl QuantConfig {
    fn scheme(bits: u8, range_exp: i32) -> Result<QuantScheme, RnnError> {
        Ok(QuantScheme::new(bits, range_exp - (bits as i32 - 1))?)
    }

    /// Hidden signals cover ±1, pre-activations ±32, cells ±16, table outputs ±2.
    pub fn format(&self, input: QuantScheme) -> Result<FixedFormat, RnnError> {
        Ok(FixedFormat {
            input,
            hidden: Self::scheme(self.signal_bits, 0)?,
            preact: Self::scheme(self.cell_bits, 5)?,
            cell: Self::scheme(self.cell_bits, 4)?,
            gate: Self::scheme(self.cell_bits, 1)?,
            lut: self.lut,
        })
    }

    pub fn input_scheme(&self) -> Result<QuantScheme, RnnError> {
        match self.input_exponent {
            Some(e) => Ok(QuantScheme::new(self.signal_bits, e)?),
            None => Self::scheme(self.signal_bits, 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedLstmState {
    pub h: Vec<i32>,
    pub c: Vec<i32>,
}

impl FixedLstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self { h: vec![0; hidden_dim], c: vec![0; hidden_dim] }
    }
}

#[inline]
pub(crate) fn dot(w: &[i32], x: &[i32]) -> i64 {
    w.iter().zip(x).map(|(&a, &b)| a as i64 * b as i64).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLstmLayer {
    pub wx: [QuantizedTensor; 4],
    pub wh: [QuantizedTensor; 4],
    pub peephole: [QuantizedTensor; 3],
    pub bias: [QuantizedTensor; 4],
    pub format: FixedFormat,
    sigmoid: ActivationLut,
    tanh: ActivationLut,
}

impl QuantizedLstmLayer {
    pub fn new(
        wx: [QuantizedTensor; 4],
        wh: [QuantizedTensor; 4],
        peephole: [QuantizedTensor; 3],
        bias: [QuantizedTensor; 4],
        format: FixedFormat,
    ) -> Result<Self, RnnError> {
        let h = bias[0].len();
        let d = wx[0].len() / h.max(1);
        for g in 0..4 {
            check_dim("quantized input weights", h * d, wx[g].len())?;
            check_dim("quantized recurrent weights", h * h, wh[g].len())?;
            check_dim("quantized bias", h, bias[g].len())?;
        }
        for p in &peephole {
            check_dim("quantized peephole", h, p.len())?;
        }
        let sigmoid = ActivationLut::build(ActivationKind::Sigmoid, format.lut, format.gate);
        let tanh = ActivationLut::build(ActivationKind::Tanh, format.lut, format.gate);
        Ok(Self { wx, wh, peephole, bias, format, sigmoid, tanh })
    }

    pub fn hidden_dim(&self) -> usize {
        self.bias[0].len()
    }

    pub fn input_dim(&self) -> usize {
        self.wx[0].len() / self.hidden_dim().max(1)
    }

    pub fn sigmoid_lut(&self) -> &ActivationLut {
        &self.sigmoid
    }

    pub fn tanh_lut(&self) -> &ActivationLut {
        &self.tanh
    }

    /// Exponent at which gate `g`'s input, recurrent and bias terms are summed exactly.
    pub fn acc_exponent(&self, g: usize) -> i32 {
        let ex = self.wx[g].scheme.exponent() + self.format.input.exponent();
        let eh = self.wh[g].scheme.exponent() + self.format.hidden.exponent();
        ex.min(eh).min(self.bias[g].scheme.exponent())
    }

    pub fn param_count(&self) -> usize {
        self.wx.iter().chain(&self.wh).chain(&self.peephole).chain(&self.bias).map(QuantizedTensor::len).sum()
    }

    /// One time step on integer levels. `x` is in `format.input`; the
    /// new `h` (in `format.hidden`) and cell replace the contents of `state`.
    pub fn step(&self, x: &[i32], state: &mut FixedLstmState) -> Result<(), RnnError> {
        let (d, n) = (self.input_dim(), self.hidden_dim());
        check_dim("layer input", d, x.len())?;
        check_dim("state h", n, state.h.len())?;
        check_dim("state c", n, state.c.len())?;
        let fmt = &self.format;
        let e_pre = fmt.preact.exponent();

        let mut pre = [vec![0i64; n], vec![0i64; n], vec![0i64; n], vec![0i64; n]];
        for (g, pre_g) in pre.iter_mut().enumerate() {
            let e_x = self.wx[g].scheme.exponent() + fmt.input.exponent();
            let e_h = self.wh[g].scheme.exponent() + fmt.hidden.exponent();
            let e_b = self.bias[g].scheme.exponent();
            let e_acc = self.acc_exponent(g);
            for (j, p) in pre_g.iter_mut().enumerate() {
                let sx = dot(&self.wx[g].levels[j * d..(j + 1) * d], x);
                let sh = dot(&self.wh[g].levels[j * n..(j + 1) * n], &state.h);
                let acc = rescale(sx, e_x, e_acc)
                    + rescale(sh, e_h, e_acc)
                    + rescale(self.bias[g].levels[j] as i64, e_b, e_acc);
                *p = fmt.preact.saturate(rescale(acc, e_acc, e_pre)) as i64;
            }
        }

        let e_cell = fmt.cell.exponent();
        let e_gate = fmt.gate.exponent();
        let peep = |k: usize, j: usize, c: i64| {
            let w = &self.peephole[k];
            rescale(w.levels[j] as i64 * c, w.scheme.exponent() + e_cell, e_pre)
        };
        let e_fc = e_gate + e_cell;
        let e_ig = 2 * e_gate;
        let e_sum = e_fc.min(e_ig);
        for j in 0..n {
            let c_prev = state.c[j] as i64;
            let i = self.sigmoid.lookup(fmt.preact.saturate(pre[GATE_I][j] + peep(0, j, c_prev)) as i64, e_pre) as i64;
            let f = self.sigmoid.lookup(fmt.preact.saturate(pre[GATE_F][j] + peep(1, j, c_prev)) as i64, e_pre) as i64;
            let cand = self.tanh.lookup(pre[GATE_C][j], e_pre) as i64;
            let sum = rescale(f * c_prev, e_fc, e_sum) + rescale(i * cand, e_ig, e_sum);
            let c = fmt.cell.saturate(rescale(sum, e_sum, e_cell));
            let o = self.sigmoid.lookup(fmt.preact.saturate(pre[GATE_O][j] + peep(2, j, c as i64)) as i64, e_pre) as i64;
            let tc = self.tanh.lookup(c as i64, e_cell) as i64;
            state.c[j] = c;
            state.h[j] = fmt.hidden.saturate(rescale(o * tc, e_ig, fmt.hidden.exponent()));
        }
        Ok(())
    }

    /// Float parameters recovered from the levels.
    pub fn dequantized(&self) -> LstmLayerParams {
        let (d, n) = (self.input_dim(), self.hidden_dim());
        let m = |t: &QuantizedTensor, r, c| Matrix::from_vec(r, c, dequantize(t)).expect("shape checked");
        LstmLayerParams {
            wx: std::array::from_fn(|g| m(&self.wx[g], n, d)),
            wh: std::array::from_fn(|g| m(&self.wh[g], n, n)),
            peephole: std::array::from_fn(|k| dequantize(&self.peephole[k])),
            bias: std::array::from_fn(|g| dequantize(&self.bias[g])),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedOutputLayer {
    pub weights: QuantizedTensor,
    pub bias: QuantizedTensor,
}

impl QuantizedOutputLayer {
    pub fn labels(&self) -> usize {
        self.bias.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.len() / self.labels().max(1)
    }

    pub fn acc_exponent(&self, input: QuantScheme) -> i32 {
        (self.weights.scheme.exponent() + input.exponent()).min(self.bias.scheme.exponent())
    }

    /// Exact integer logits, returned as reals.
    pub fn logits(&self, h: &[i32], input: QuantScheme) -> Result<Vec<f64>, RnnError> {
        let n = self.hidden_dim();
        check_dim("output layer input", n, h.len())?;
        let e_w = self.weights.scheme.exponent() + input.exponent();
        let e_b = self.bias.scheme.exponent();
        let e_acc = self.acc_exponent(input);
        let scale = crate::quant::pow2(e_acc);
        Ok((0..self.labels())
            .map(|r| {
                let acc = rescale(dot(&self.weights.levels[r * n..(r + 1) * n], h), e_w, e_acc)
                    + rescale(self.bias.levels[r] as i64, e_b, e_acc);
                acc as f64 * scale
            })
            .collect())
    }

    pub fn dequantized(&self) -> OutputLayerParams {
        OutputLayerParams {
            weights: Matrix::from_vec(self.labels(), self.hidden_dim(), dequantize(&self.weights)).expect("shape checked"),
            bias: dequantize(&self.bias),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedNetwork {
    /// Format of the network input (first layer input).
    pub input: QuantScheme,
    pub layers: Vec<QuantizedLstmLayer>,
    pub output: QuantizedOutputLayer,
}

impl QuantizedNetwork {
    pub fn new(input: QuantScheme, layers: Vec<QuantizedLstmLayer>, output: QuantizedOutputLayer) -> Result<Self, RnnError> {
        let mut signal = input;
        for layer in &layers {
            if layer.format.input != signal {
                return Err(RnnError::Dim {
                    what: "layer input format chain".into(),
                    expected: signal.exponent() as usize,
                    got: layer.format.input.exponent() as usize,
                });
            }
            signal = layer.format.hidden;
        }
        let mut d = None;
        for layer in &layers {
            if let Some(prev) = d {
                check_dim("quantized layer chain", prev, layer.input_dim())?;
            }
            d = Some(layer.hidden_dim());
        }
        if let Some(prev) = d {
            check_dim("quantized output input", prev, output.hidden_dim())?;
        }
        Ok(Self { input, layers, output })
    }

    pub fn initial_state(&self) -> Vec<FixedLstmState> {
        self.layers.iter().map(|l| FixedLstmState::zeros(l.hidden_dim())).collect()
    }

    /// Signal format feeding the output layer.
    pub fn top_signal(&self) -> QuantScheme {
        self.layers.last().map_or(self.input, |l| l.format.hidden)
    }

    pub fn quantize_input(&self, x: &[f64]) -> Result<Vec<i32>, RnnError> {
        Ok(quantize(x, &[x.len()], self.input)?.levels)
    }

    /// Runs the layer stack on quantized input; returns the top layer's `h`.
    pub fn frame_levels(&self, x: &[i32], state: &mut [FixedLstmState]) -> Result<Vec<i32>, RnnError> {
        check_dim("layer states", self.layers.len(), state.len())?;
        let mut cur = x.to_vec();
        for (layer, st) in self.layers.iter().zip(state.iter_mut()) {
            layer.step(&cur, st)?;
            cur.clone_from(&st.h);
        }
        Ok(cur)
    }

    /// One frame from real-valued input to output probabilities.
    pub fn frame(&self, x: &[f64], state: &mut [FixedLstmState]) -> Result<Vec<f64>, RnnError> {
        let xq = self.quantize_input(x)?;
        let top = self.frame_levels(&xq, state)?;
        Ok(super::softmax(&self.output.logits(&top, self.top_signal())?))
    }

    pub fn dequantized(&self) -> (Vec<LstmLayerParams>, OutputLayerParams) {
        (self.layers.iter().map(QuantizedLstmLayer::dequantized).collect(), self.output.dequantized())
    }
}

fn quantize_weights(values: &[f64], shape: &[usize], bits: u8) -> Result<QuantizedTensor, RnnError> {
    let scheme = search_step(values, bits)?;
    Ok(quantize(values, shape, scheme)?)
}

fn quantize_matrix(m: &Matrix, bits: u8) -> Result<QuantizedTensor, RnnError> {
    quantize_weights(m.data(), &[m.rows(), m.cols()], bits)
}

/// Direct quantization: one searched power-of-two step per weight tensor.
pub fn quantize_network(net: &LstmNetwork, cfg: &QuantConfig) -> Result<QuantizedNetwork, RnnError> {
    net.validate()?;
    let wb = cfg.weight_bits;
    let input = cfg.input_scheme()?;
    let mut signal = input;
    let mut layers = Vec::with_capacity(net.layers.len());
    for p in &net.layers {
        let format = cfg.format(signal)?;
        let vecq = |v: &Vec<f64>| quantize_weights(v, &[v.len()], wb);
        let wx = [0, 1, 2, 3].map(|g| quantize_matrix(&p.wx[g], wb));
        let wh = [0, 1, 2, 3].map(|g| quantize_matrix(&p.wh[g], wb));
        let peephole = [0, 1, 2].map(|k| vecq(&p.peephole[k]));
        let bias = [0, 1, 2, 3].map(|g| vecq(&p.bias[g]));
        layers.push(QuantizedLstmLayer::new(
            collect_array(wx)?,
            collect_array(wh)?,
            collect_array(peephole)?,
            collect_array(bias)?,
            format,
        )?);
        signal = format.hidden;
    }
    let output = QuantizedOutputLayer {
        weights: quantize_matrix(&net.output.weights, wb)?,
        bias: quantize_weights(&net.output.bias, &[net.output.bias.len()], wb)?,
    };
    QuantizedNetwork::new(input, layers, output)
}

fn collect_array<const N: usize>(a: [Result<QuantizedTensor, RnnError>; N]) -> Result<[QuantizedTensor; N], RnnError> {
    let v = a.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(v.try_into().expect("length preserved"))
}

/// Random integer levels for a layer, for exercising the datapath directly.
pub fn random_quantized_layer<R: Rng>(input_dim: usize, hidden_dim: usize, format: FixedFormat, weight_bits: u8, rng: &mut R) -> QuantizedLstmLayer {
    let tensor = |shape: Vec<usize>, rng: &mut R| {
        let exponent = rng.gen_range(-9..=-4);
        let scheme = QuantScheme::new(weight_bits, exponent).expect("valid bits");
        let m = scheme.max_level();
        let levels = (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(-m..=m)).collect();
        QuantizedTensor::new(levels, scheme, shape).expect("levels in range")
    };
    let wx = std::array::from_fn(|_| tensor(vec![hidden_dim, input_dim], rng));
    let wh = std::array::from_fn(|_| tensor(vec![hidden_dim, hidden_dim], rng));
    let peephole = std::array::from_fn(|_| tensor(vec![hidden_dim], rng));
    let bias = std::array::from_fn(|_| tensor(vec![hidden_dim], rng));
    QuantizedLstmLayer::new(wx, wh, peephole, bias, format).expect("consistent shapes")
}
