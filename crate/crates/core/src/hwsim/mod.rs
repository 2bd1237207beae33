//! Cycle- and bit-accurate model of the LSTM accelerator: PE arrays computing
//! matrix-vector products by the outer-product method, the element-wise LSTM
//! unit, the context memory and the output tile.
//!
//! Only PE-array clocks are counted. The element-wise unit runs behind the PE
//! buffers and is treated as fully pipelined; bias preload is free.

mod context;
mod datapath;

use thiserror::Error;

pub use context::{ContextMemory, SlotId};
pub use datapath::{simulate_layer, simulate_output, CycleCounter, HwLayer, HwNetwork};

use crate::rnn::{LstmNetwork, RnnError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HwError {
    #[error("hidden dimension {hidden} exceeds the context slot width {width}")]
    SlotWidth { hidden: usize, width: usize },
    #[error("context memory is full ({capacity} slots)")]
    ContextFull { capacity: usize },
    #[error("context slot {0} is not allocated")]
    EmptySlot(usize),
    #[error("level {0} does not fit a context word")]
    ContextOverflow(i32),
    #[error(transparent)]
    Rnn(#[from] RnnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HwConfig {
    pub pe_arrays: usize,
    pub pes_per_array: usize,
    pub weight_bits: u8,
    pub signal_bits: u8,
    pub cell_bits: u8,
    /// Widest layer a context slot can hold.
    pub context_width: usize,
    /// Fixed clocks added per network invocation for synchronization.
    pub sync_overhead: u64,
}

impl Default for HwConfig {
    fn default() -> Self {
        Self {
            pe_arrays: 2,
            pes_per_array: 256,
            weight_bits: 6,
            signal_bits: 8,
            cell_bits: 16,
            context_width: 1024,
            sync_overhead: 0,
        }
    }
}

impl HwConfig {
    pub fn total_pes(&self) -> usize {
        self.pe_arrays * self.pes_per_array
    }

    /// Rounds needed to issue the four per-path matrix-vector products.
    pub fn gate_rounds(&self) -> u64 {
        4u64.div_ceil(self.pe_arrays as u64)
    }

    pub fn row_tiles(&self, rows: usize) -> u64 {
        (rows as u64).div_ceil(self.pes_per_array as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LayerCycles {
    pub input_path: u64,
    pub recurrent_path: u64,
}

impl LayerCycles {
    pub fn total(&self) -> u64 {
        self.input_path + self.recurrent_path
    }
}

/// PE-array clocks for one LSTM layer step: one input element per clock for
/// each of `ceil(4 / arrays)` rounds and `ceil(hidden / pes)` row tiles.
pub fn layer_cycles(input_dim: usize, hidden: usize, cfg: &HwConfig) -> LayerCycles {
    let per_element = cfg.gate_rounds() * cfg.row_tiles(hidden);
    LayerCycles { input_path: per_element * input_dim as u64, recurrent_path: per_element * hidden as u64 }
}

/// Output tile clocks: one hidden element per clock per tile of label rows.
pub fn output_tile_cycles(hidden: usize, labels: usize, cfg: &HwConfig) -> u64 {
    hidden as u64 * cfg.row_tiles(labels)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CycleReport {
    pub layers: Vec<LayerCycles>,
    pub sync_overhead: u64,
    /// Reported apart from [`CycleReport::total`].
    pub output_tile: u64,
}

impl CycleReport {
    pub fn total(&self) -> u64 {
        self.layers.iter().map(LayerCycles::total).sum::<u64>() + self.sync_overhead
    }

    pub fn total_with_output(&self) -> u64 {
        self.total() + self.output_tile
    }
}

/// Cycle report for a stack given `(input_dim, hidden)` per layer.
pub fn network_cycles(dims: &[(usize, usize)], cfg: &HwConfig) -> CycleReport {
    CycleReport {
        layers: dims.iter().map(|&(d, h)| layer_cycles(d, h, cfg)).collect(),
        sync_overhead: cfg.sync_overhead,
        output_tile: 0,
    }
}

pub fn model_cycles(net: &LstmNetwork, cfg: &HwConfig) -> CycleReport {
    let mut r = network_cycles(&net.layer_dims(), cfg);
    let top = net.layers.last().map_or(net.input_dim, |l| l.hidden_dim());
    r.output_tile = output_tile_cycles(top, net.labels(), cfg);
    r
}

/// Clocks per second for `am_rate` acoustic invocations and `lm_calls`
/// character-model invocations per second.
pub fn realtime_budget(am_rate: u64, lm_calls: u64, am: &CycleReport, lm: &CycleReport) -> u64 {
    am_rate * am.total() + lm_calls * lm.total()
}

/// Byte sizes of one beam-search node's fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeLayout {
    pub label: usize,
    pub parent: usize,
    pub depth: usize,
    pub probabilities: usize,
    pub context_slot: usize,
    pub word_state: usize,
}

impl Default for NodeLayout {
    fn default() -> Self {
        // u8 label, u16 parent and depth, two f32 probabilities, u8 slot,
        // f32 word score + two u32 word ids + u16 buffer offset
        Self { label: 1, parent: 2, depth: 2, probabilities: 8, context_slot: 1, word_state: 14 }
    }
}

impl NodeLayout {
    pub fn bytes(&self) -> usize {
        self.label + self.parent + self.depth + self.probabilities + self.context_slot + self.word_state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryReport {
    pub am_weights: usize,
    pub lm_weights: usize,
    pub luts: usize,
    pub context: usize,
    /// Node storage for the live beam plus one frame of candidate extensions.
    pub beam: usize,
}

impl MemoryReport {
    pub fn weights(&self) -> usize {
        self.am_weights + self.lm_weights
    }

    pub fn total(&self) -> usize {
        self.weights() + self.luts + self.context + self.beam
    }
}

/// Bytes of packed quantized parameters.
pub fn weight_bytes(net: &LstmNetwork, default_bits: u8) -> usize {
    let bits: usize = match &net.quantized {
        Some(q) => q
            .layers
            .iter()
            .flat_map(|l| l.wx.iter().chain(&l.wh).chain(&l.peephole).chain(&l.bias))
            .chain([&q.output.weights, &q.output.bias])
            .map(|t| t.len() * t.scheme.bits() as usize)
            .sum(),
        None => net.param_count() * default_bits as usize,
    };
    bits.div_ceil(8)
}

pub fn context_bytes(beam_width: usize, lm_hidden: &[usize], cell_bits: u8) -> usize {
    beam_width * lm_hidden.iter().map(|h| 2 * h * cell_bits as usize).sum::<usize>().div_ceil(8)
}

pub fn memory_footprint(am: &LstmNetwork, lm: Option<&LstmNetwork>, beam_width: usize, cfg: &HwConfig) -> MemoryReport {
    let lut_spec = am
        .quantized
        .as_ref()
        .and_then(|q| q.layers.first())
        .map(|l| (l.format.lut.intervals as usize + 1, l.format.gate.bits() as usize))
        .unwrap_or((1025, cfg.cell_bits as usize));
    let lm_hidden: Vec<usize> = lm.map(|n| n.layers.iter().map(|l| l.hidden_dim()).collect()).unwrap_or_default();
    let labels = am.labels();
    MemoryReport {
        am_weights: weight_bytes(am, cfg.weight_bits),
        lm_weights: lm.map_or(0, |n| weight_bytes(n, cfg.weight_bits)),
        luts: 2 * (lut_spec.0 * lut_spec.1).div_ceil(8),
        context: context_bytes(beam_width, &lm_hidden, cfg.cell_bits),
        beam: beam_width * labels * NodeLayout::default().bytes(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_fixtures() {
        let cfg = HwConfig::default();
        assert_eq!(cfg.total_pes(), 512);
        assert_eq!(layer_cycles(123, 256, &cfg).input_path, 246);
        assert_eq!(layer_cycles(256, 256, &cfg).input_path, 512);
        assert_eq!(layer_cycles(256, 256, &cfg).total(), 1024);
        assert_eq!(layer_cycles(123, 256, &cfg).total(), 758);
        let lm1 = layer_cycles(30, 256, &cfg);
        assert_eq!((lm1.input_path, lm1.total()), (60, 572));
        let am = network_cycles(&[(123, 256), (256, 256), (256, 256)], &cfg);
        assert_eq!(am.total(), 2806);
        let lm = network_cycles(&[(30, 256), (256, 256)], &cfg);
        assert_eq!(lm.total(), 1596);
        assert_eq!(realtime_budget(100, 3840, &am, &lm), 6_409_240);
        assert_eq!(realtime_budget(0, 0, &am, &lm), 0);
        assert_eq!(realtime_budget(100, 30 * 128, &am, &lm), realtime_budget(100, 3840, &am, &lm));
    }

    #[test]
    fn zero_input_layer_is_recurrent_only() {
        let c = layer_cycles(0, 256, &HwConfig::default());
        assert_eq!((c.input_path, c.recurrent_path), (0, 512));
    }

    #[test]
    fn scaling_with_arrays_and_tiles() {
        let two = HwConfig::default();
        let four = HwConfig { pe_arrays: 4, ..two };
        let one = HwConfig { pe_arrays: 1, ..two };
        for d in [1, 30, 123, 256] {
            let base = layer_cycles(d, 256, &two).total();
            assert_eq!(layer_cycles(d, 256, &four).total() * 2, base);
            assert_eq!(layer_cycles(d, 256, &one).total(), base * 2);
        }
        let three = HwConfig { pe_arrays: 3, ..two };
        assert_eq!(layer_cycles(10, 256, &three).total(), 2 * (10 + 256));
        assert_eq!(layer_cycles(512, 512, &two).total(), 2 * 2 * (512 + 512));
    }

    #[test]
    fn sync_overhead_adds_per_invocation() {
        let cfg = HwConfig { sync_overhead: 7, ..HwConfig::default() };
        assert_eq!(network_cycles(&[(30, 256), (256, 256)], &cfg).total(), 1603);
    }

    #[test]
    fn footprint_arithmetic() {
        assert_eq!(context_bytes(128, &[256, 256], 16), 262_144);
        let toy = LstmNetwork::new(
            1,
            vec![crate::rnn::LstmLayerParams::zeros(1, 1)],
            crate::rnn::OutputLayerParams::zeros(1, 0),
        )
        .unwrap();
        assert_eq!(toy.param_count(), 15);
        assert_eq!(weight_bytes(&toy, 6), 12);
    }
}
