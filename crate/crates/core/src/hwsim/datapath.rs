use super::{layer_cycles, HwConfig, HwError};
use crate::quant::{rescale, QuantScheme};
use crate::rnn::{FixedLstmState, QuantizedLstmLayer, QuantizedNetwork, QuantizedOutputLayer, RnnError};

/// Clock counters accumulated by a simulator run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CycleCounter {
    pub input_path: u64,
    pub recurrent_path: u64,
    pub output_tile: u64,
    pub sync: u64,
    pub invocations: u64,
}

impl CycleCounter {
    /// LSTM tile clocks, excluding the output tile.
    pub fn lstm(&self) -> u64 {
        self.input_path + self.recurrent_path + self.sync
    }

    pub fn total(&self) -> u64 {
        self.lstm() + self.output_tile
    }

    pub fn add(&mut self, other: &CycleCounter) {
        self.input_path += other.input_path;
        self.recurrent_path += other.recurrent_path;
        self.output_tile += other.output_tile;
        self.sync += other.sync;
        self.invocations += other.invocations;
    }
}

/// A quantized layer laid out for the PE arrays: weights column-major, so
/// each clock streams one column to the PEs alongside one input element.
#[derive(Debug, Clone)]
pub struct HwLayer {
    input_dim: usize,
    hidden: usize,
    wx_cols: [Vec<i32>; 4],
    wh_cols: [Vec<i32>; 4],
    wx_exp: [i32; 4],
    wh_exp: [i32; 4],
    bias: [Vec<i32>; 4],
    bias_exp: [i32; 4],
    peephole: [Vec<i32>; 3],
    peephole_exp: [i32; 3],
    source: QuantizedLstmLayer,
}

fn transpose(levels: &[i32], rows: usize, cols: usize) -> Vec<i32> {
    let mut out = vec![0; levels.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = levels[r * cols + c];
        }
    }
    out
}

impl HwLayer {
    pub fn load(layer: &QuantizedLstmLayer) -> Self {
        let (d, h) = (layer.input_dim(), layer.hidden_dim());
        Self {
            input_dim: d,
            hidden: h,
            wx_cols: std::array::from_fn(|g| transpose(&layer.wx[g].levels, h, d)),
            wh_cols: std::array::from_fn(|g| transpose(&layer.wh[g].levels, h, h)),
            wx_exp: std::array::from_fn(|g| layer.wx[g].scheme.exponent()),
            wh_exp: std::array::from_fn(|g| layer.wh[g].scheme.exponent()),
            bias: std::array::from_fn(|g| layer.bias[g].levels.clone()),
            bias_exp: std::array::from_fn(|g| layer.bias[g].scheme.exponent()),
            peephole: std::array::from_fn(|k| layer.peephole[k].levels.clone()),
            peephole_exp: std::array::from_fn(|k| layer.peephole[k].scheme.exponent()),
            source: layer.clone(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }
}

/// The four PE output buffers, one 16-bit word per hidden unit.
struct PeBuffers([Vec<i32>; 4]);

/// Runs one layer step through the PE arrays and the element-wise unit.
/// Returns the PE-array clocks spent.
pub fn simulate_layer(layer: &HwLayer, x: &[i32], state: &mut FixedLstmState, cfg: &HwConfig) -> Result<u64, HwError> {
    let (d, n) = (layer.input_dim, layer.hidden);
    if n > cfg.context_width {
        return Err(HwError::SlotWidth { hidden: n, width: cfg.context_width });
    }
    crate::rnn::check_dim("layer input", d, x.len())?;
    crate::rnn::check_dim("state h", n, state.h.len())?;
    crate::rnn::check_dim("state c", n, state.c.len())?;
    let fmt = layer.source.format;
    let p = cfg.pes_per_array;
    let mut buffers = PeBuffers(std::array::from_fn(|_| vec![0; n]));
    let mut clocks = 0u64;
    let mut acc = vec![vec![0i64; p]; cfg.pe_arrays];

    for round in 0..cfg.gate_rounds() as usize {
        let gates: Vec<(usize, usize)> =
            (0..cfg.pe_arrays).map(|a| (a, round * cfg.pe_arrays + a)).filter(|&(_, g)| g < 4).collect();
        for tile in 0..cfg.row_tiles(n) as usize {
            let rows = tile * p..n.min((tile + 1) * p);
            let width = rows.len();
            let mut shifts = [(0u32, 0u32); 4];
            for &(a, g) in &gates {
                let e_x = layer.wx_exp[g] + fmt.input.exponent();
                let e_h = layer.wh_exp[g] + fmt.hidden.exponent();
                let e_acc = e_x.min(e_h).min(layer.bias_exp[g]);
                shifts[g] = ((e_x - e_acc) as u32, (e_h - e_acc) as u32);
                // bias preload
                let b_shift = (layer.bias_exp[g] - e_acc) as u32;
                for (pe, r) in rows.clone().enumerate() {
                    acc[a][pe] = (layer.bias[g][r] as i64) << b_shift;
                }
            }
            // input path: one element of x per clock, broadcast to every PE
            for (k, &xk) in x.iter().enumerate() {
                for &(a, g) in &gates {
                    let col = &layer.wx_cols[g][k * n + rows.start..k * n + rows.end];
                    let xk = (xk as i64) << shifts[g].0;
                    for (pe, &w) in col.iter().enumerate() {
                        acc[a][pe] += w as i64 * xk;
                    }
                }
                clocks += 1;
            }
            // recurrent path
            for (k, &hk) in state.h.iter().enumerate() {
                for &(a, g) in &gates {
                    let col = &layer.wh_cols[g][k * n + rows.start..k * n + rows.end];
                    let hk = (hk as i64) << shifts[g].1;
                    for (pe, &w) in col.iter().enumerate() {
                        acc[a][pe] += w as i64 * hk;
                    }
                }
                clocks += 1;
            }
            for &(a, g) in &gates {
                let e_acc = layer.source.acc_exponent(g);
                for pe in 0..width {
                    buffers.0[g][rows.start + pe] = fmt.preact.saturate(rescale(acc[a][pe], e_acc, fmt.preact.exponent()));
                }
            }
        }
    }

    let (h, c) = epu(layer, &buffers, &state.c);
    state.h = h;
    state.c = c;
    Ok(clocks)
}

/// Element-wise unit: peepholes, table activations, cell and output update.
fn epu(layer: &HwLayer, buffers: &PeBuffers, c_prev: &[i32]) -> (Vec<i32>, Vec<i32>) {
    let fmt = layer.source.format;
    let sig = layer.source.sigmoid_lut();
    let tanh = layer.source.tanh_lut();
    let pre = fmt.preact;
    let e_cell = fmt.cell.exponent();
    let e_gate = fmt.gate.exponent();
    let [pe_i, pe_f, pe_o, pe_c] = &buffers.0;

    let peephole = |k: usize, j: usize, cell: i32| -> i64 {
        let prod = layer.peephole[k][j] as i64 * cell as i64;
        rescale(prod, layer.peephole_exp[k] + e_cell, pre.exponent())
    };
    let activate = |lut: &crate::rnn::ActivationLut, buf: i32, extra: i64| -> i64 {
        let v = pre.saturate(buf as i64 + extra);
        lut.lookup(v as i64, pre.exponent()) as i64
    };

    let mut h = Vec::with_capacity(c_prev.len());
    let mut c = Vec::with_capacity(c_prev.len());
    for (j, &cp) in c_prev.iter().enumerate() {
        let in_gate = activate(sig, pe_i[j], peephole(0, j, cp));
        let forget = activate(sig, pe_f[j], peephole(1, j, cp));
        let candidate = activate(tanh, pe_c[j], 0);
        // f*c_prev is at e_gate+e_cell, i*g at 2*e_gate; sum at the finer one
        let (e_a, e_b) = (e_gate + e_cell, 2 * e_gate);
        let e_sum = e_a.min(e_b);
        let sum = ((forget * cp as i64) << (e_a - e_sum)) + ((in_gate * candidate) << (e_b - e_sum));
        let cell = fmt.cell.saturate(rescale(sum, e_sum, e_cell));
        let out_gate = activate(sig, pe_o[j], peephole(2, j, cell));
        let squashed = tanh.lookup(cell as i64, e_cell) as i64;
        h.push(fmt.hidden.saturate(rescale(out_gate * squashed, 2 * e_gate, fmt.hidden.exponent())));
        c.push(cell);
    }
    (h, c)
}

/// Output tile: outer-product matrix-vector product over `h`, logits returned
/// as reals. Returns the logits and the clocks spent.
pub fn simulate_output(layer: &QuantizedOutputLayer, h: &[i32], input: QuantScheme, cfg: &HwConfig) -> Result<(Vec<f64>, u64), HwError> {
    let labels = layer.labels();
    let n = layer.hidden_dim();
    crate::rnn::check_dim("output tile input", n, h.len())?;
    let e_w = layer.weights.scheme.exponent() + input.exponent();
    let e_b = layer.bias.scheme.exponent();
    let e_acc = e_w.min(e_b);
    let mut acc: Vec<i64> = layer.bias.levels.iter().map(|&b| (b as i64) << (e_b - e_acc)).collect();
    let mut clocks = 0;
    let p = cfg.pes_per_array;
    for tile in 0..cfg.row_tiles(labels) as usize {
        let rows = tile * p..labels.min((tile + 1) * p);
        for (k, &hk) in h.iter().enumerate() {
            let hk = (hk as i64) << (e_w - e_acc);
            for r in rows.clone() {
                acc[r] += layer.weights.levels[r * n + k] as i64 * hk;
            }
            clocks += 1;
        }
    }
    let scale = crate::quant::pow2(e_acc);
    Ok((acc.into_iter().map(|a| a as f64 * scale).collect(), clocks))
}

/// A whole quantized network mapped onto the accelerator.
#[derive(Debug, Clone)]
pub struct HwNetwork {
    cfg: HwConfig,
    input: QuantScheme,
    layers: Vec<HwLayer>,
    output: QuantizedOutputLayer,
    top: QuantScheme,
    pub cycles: CycleCounter,
}

impl HwNetwork {
    pub fn new(net: &QuantizedNetwork, cfg: HwConfig) -> Result<Self, HwError> {
        for l in &net.layers {
            if l.hidden_dim() > cfg.context_width {
                return Err(HwError::SlotWidth { hidden: l.hidden_dim(), width: cfg.context_width });
            }
        }
        Ok(Self {
            cfg,
            input: net.input,
            layers: net.layers.iter().map(HwLayer::load).collect(),
            output: net.output.clone(),
            top: net.top_signal(),
            cycles: CycleCounter::default(),
        })
    }

    pub fn config(&self) -> &HwConfig {
        &self.cfg
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers.iter().map(HwLayer::hidden_dim).collect()
    }

    pub fn initial_state(&self) -> Vec<FixedLstmState> {
        self.layers.iter().map(|l| FixedLstmState::zeros(l.hidden)).collect()
    }

    pub fn quantize_input(&self, x: &[f64]) -> Result<Vec<i32>, HwError> {
        Ok(crate::quant::quantize(x, &[x.len()], self.input).map_err(RnnError::from)?.levels)
    }

    /// One invocation of the LSTM tile over every layer plus the output tile.
    pub fn frame(&mut self, x: &[f64], state: &mut [FixedLstmState]) -> Result<Vec<f64>, HwError> {
        crate::rnn::check_dim("layer states", self.layers.len(), state.len())?;
        let mut cur = self.quantize_input(x)?;
        for (layer, st) in self.layers.iter().zip(state.iter_mut()) {
            let expected = layer_cycles(layer.input_dim, layer.hidden, &self.cfg);
            let clocks = simulate_layer(layer, &cur, st, &self.cfg)?;
            debug_assert_eq!(clocks, expected.total());
            self.cycles.input_path += expected.input_path;
            self.cycles.recurrent_path += clocks - expected.input_path;
            cur.clone_from(&st.h);
        }
        self.cycles.sync += self.cfg.sync_overhead;
        self.cycles.invocations += 1;
        let (logits, clocks) = simulate_output(&self.output, &cur, self.top, &self.cfg)?;
        self.cycles.output_tile += clocks;
        Ok(crate::rnn::softmax(&logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::fixed::random_quantized_layer;
    use crate::rnn::{quantize_network, LstmLayerParams, LstmNetwork, OutputLayerParams, QuantConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn format() -> crate::rnn::FixedFormat {
        let cfg = QuantConfig::default();
        cfg.format(cfg.input_scheme().unwrap()).unwrap()
    }

    #[test]
    fn matches_reference_datapath_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let hw = HwConfig::default();
        for (d, n) in [(5, 7), (30, 40), (3, 300)] {
            let layer = random_quantized_layer(d, n, format(), 6, &mut rng);
            let hw_layer = HwLayer::load(&layer);
            let mut a = FixedLstmState::zeros(n);
            let mut b = FixedLstmState::zeros(n);
            for _ in 0..6 {
                let x: Vec<i32> = (0..d).map(|_| rng.gen_range(-127..=127)).collect();
                layer.step(&x, &mut a).unwrap();
                let clocks = simulate_layer(&hw_layer, &x, &mut b, &hw).unwrap();
                assert_eq!(a, b);
                assert_eq!(clocks, layer_cycles(d, n, &hw).total());
            }
        }
    }

    #[test]
    fn zero_layer_closed_form() {
        let net = LstmNetwork::new(1, vec![LstmLayerParams::zeros(1, 1)], OutputLayerParams::zeros(1, 2)).unwrap();
        let q = quantize_network(&net, &QuantConfig::default()).unwrap();
        let layer = HwLayer::load(&q.layers[0]);
        let fmt = q.layers[0].format;
        let mut st = FixedLstmState { h: vec![0], c: vec![fmt.cell.quantize_value(1.0)] };
        simulate_layer(&layer, &[0], &mut st, &HwConfig::default()).unwrap();
        assert_eq!(fmt.cell.dequantize_value(st.c[0]), 0.5);
        assert!((fmt.hidden.dequantize_value(st.h[0]) - 0.231059).abs() <= fmt.hidden.step());
    }

    #[test]
    fn output_tile_matches_reference_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = LstmNetwork::random(6, 1, 20, 31, &mut rng);
        let q = quantize_network(&net, &QuantConfig::default()).unwrap();
        let h: Vec<i32> = (0..20).map(|_| rng.gen_range(-127..=127)).collect();
        let reference = q.output.logits(&h, q.top_signal()).unwrap();
        let (logits, clocks) = simulate_output(&q.output, &h, q.top_signal(), &HwConfig::default()).unwrap();
        assert_eq!(reference, logits);
        assert_eq!(clocks, 20);
    }

    #[test]
    fn slot_width_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = HwLayer::load(&random_quantized_layer(2, 20, format(), 6, &mut rng));
        let cfg = HwConfig { context_width: 16, ..HwConfig::default() };
        let mut st = FixedLstmState::zeros(20);
        assert!(matches!(simulate_layer(&layer, &[0, 0], &mut st, &cfg), Err(HwError::SlotWidth { .. })));
    }

    #[test]
    fn network_frame_counts_cycles() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = LstmNetwork::random(30, 2, 256, 30, &mut rng);
        let q = quantize_network(&net, &QuantConfig::default()).unwrap();
        let mut hw = HwNetwork::new(&q, HwConfig::default()).unwrap();
        let mut hs = hw.initial_state();
        let mut rs = q.initial_state();
        let x: Vec<f64> = (0..30).map(|k| (k == 3) as u8 as f64).collect();
        let a = hw.frame(&x, &mut hs).unwrap();
        let b = q.frame(&x, &mut rs).unwrap();
        assert_eq!(a, b);
        assert_eq!(hs, rs);
        assert_eq!(hw.cycles.lstm(), 1596);
        assert_eq!(hw.cycles.output_tile, 256);
    }
}
