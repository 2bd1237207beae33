//! LSTM character models for the beam search, in floating point, bit-exact
//! fixed point, or on the simulated accelerator with contexts held in the
//! accelerator's context memory.
//!
//! Every context carries the model's output distribution for the next label,
//! so scoring an extension never re-runs the network. The initial context is
//! the zero state after consuming the end-of-sentence label.

use std::rc::Rc;
use std::sync::Arc;

use crate::decoder::{CharLm, DecodeError};
use crate::hwsim::{ContextMemory, HwConfig, HwError, HwNetwork, SlotId};
use crate::rnn::{LstmNetwork, Mode, NetworkState, RnnError};

fn lm_err(e: impl std::fmt::Display) -> DecodeError {
    DecodeError::CharLm(e.to_string())
}

fn one_hot(dim: usize, label: usize) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    x[label] = 1.0;
    x
}

fn log_probs(p: Vec<f64>) -> Vec<f64> {
    p.into_iter().map(f64::ln).collect()
}

#[derive(Debug)]
pub struct RnnContext {
    state: NetworkState,
    log_probs: Vec<f64>,
}

/// Character model evaluated by the reference engine.
pub struct RnnCharLm {
    net: Arc<LstmNetwork>,
    mode: Mode,
    start_label: usize,
    calls: u64,
}

impl RnnCharLm {
    pub fn new(net: Arc<LstmNetwork>, mode: Mode, start_label: usize) -> Result<Self, RnnError> {
        crate::rnn::check_dim("character model input", net.labels(), net.input_dim)?;
        if start_label >= net.input_dim {
            return Err(RnnError::Dim { what: "start label".into(), expected: net.input_dim, got: start_label });
        }
        if mode == Mode::Fixed {
            net.quantized()?;
        }
        Ok(Self { net, mode, start_label, calls: 0 })
    }

    fn run(&mut self, state: &mut NetworkState, label: usize) -> Result<Vec<f64>, DecodeError> {
        self.calls += 1;
        let x = one_hot(self.net.input_dim, label);
        let mut out = crate::rnn::stack_forward(&self.net, std::slice::from_ref(&x), state).map_err(lm_err)?;
        Ok(log_probs(out.pop().expect("one frame in, one frame out")))
    }
}

impl CharLm for RnnCharLm {
    type Context = Rc<RnnContext>;

    fn initial(&mut self) -> Result<Self::Context, DecodeError> {
        let mut state = NetworkState::new(&self.net, self.mode).map_err(lm_err)?;
        let log_probs = self.run(&mut state, self.start_label)?;
        Ok(Rc::new(RnnContext { state, log_probs }))
    }

    fn advance(&mut self, ctx: &Self::Context, label: usize) -> Result<Self::Context, DecodeError> {
        let mut state = ctx.state.clone();
        let log_probs = self.run(&mut state, label)?;
        Ok(Rc::new(RnnContext { state, log_probs }))
    }

    fn log_prob(&self, ctx: &Self::Context, label: usize) -> f64 {
        ctx.log_probs[label]
    }

    fn calls(&self) -> u64 {
        self.calls
    }
}

#[derive(Debug)]
pub struct HwContext {
    slot: SlotId,
    log_probs: Vec<f64>,
}

/// Character model run on the simulated accelerator. Recurrent state lives
/// in the context memory; each live hypothesis owns one slot.
pub struct HwCharLm {
    net: HwNetwork,
    memory: ContextMemory,
    input_dim: usize,
    start_label: usize,
}

impl HwCharLm {
    /// `slots` bounds the number of simultaneously live contexts.
    pub fn new(net: &LstmNetwork, cfg: HwConfig, slots: usize, start_label: usize) -> Result<Self, HwError> {
        crate::rnn::check_dim("character model input", net.labels(), net.input_dim)?;
        if start_label >= net.input_dim {
            return Err(RnnError::Dim { what: "start label".into(), expected: net.input_dim, got: start_label }.into());
        }
        let hw = HwNetwork::new(net.quantized()?, cfg)?;
        let memory = ContextMemory::new(slots, &hw.hidden_dims(), cfg.context_width)?;
        Ok(Self { net: hw, memory, input_dim: net.input_dim, start_label })
    }

    /// Slots a beam of `beam_width` can hold at once: the survivors of the
    /// previous frame plus the contexts of their new extensions.
    pub fn slots_for_beam(beam_width: usize) -> usize {
        2 * beam_width + 1
    }

    pub fn network(&self) -> &HwNetwork {
        &self.net
    }

    pub fn memory(&self) -> &ContextMemory {
        &self.memory
    }

    fn run(&mut self, mut state: Vec<crate::rnn::FixedLstmState>, label: usize) -> Result<HwContext, DecodeError> {
        let probs = self.net.frame(&one_hot(self.input_dim, label), &mut state).map_err(lm_err)?;
        let slot = self.memory.alloc().map_err(lm_err)?;
        self.memory.store(slot, &state).map_err(lm_err)?;
        Ok(HwContext { slot, log_probs: log_probs(probs) })
    }
}

impl CharLm for HwCharLm {
    type Context = HwContext;

    fn initial(&mut self) -> Result<HwContext, DecodeError> {
        let state = self.net.initial_state();
        self.run(state, self.start_label)
    }

    fn advance(&mut self, ctx: &HwContext, label: usize) -> Result<HwContext, DecodeError> {
        let state = self.memory.load(ctx.slot).map_err(lm_err)?;
        self.run(state, label)
    }

    fn log_prob(&self, ctx: &HwContext, label: usize) -> f64 {
        ctx.log_probs[label]
    }

    fn release(&mut self, ctx: HwContext) {
        self.memory.release(ctx.slot);
    }

    fn calls(&self) -> u64 {
        self.net.cycles.invocations
    }
}
