//! End-to-end decoding: acoustic model forward pass per frame, beam search
//! with the character model and word rescoring, and the run report. Also
//! generates random toy models so everything runs without trained weights.

use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::charlm::{HwCharLm, RnnCharLm};
use crate::container::{quantize_model, ContainerError, Model, ModelKind};
use crate::decoder::{Alphabet, BeamConfig, CharLm, DecodeError, Decoder, DecoderStats, NoCharLm};
use crate::hwsim::{memory_footprint, model_cycles, realtime_budget, CycleCounter, CycleReport, HwConfig, HwError, HwNetwork};
use crate::report::{Report, ReportError};
use crate::rnn::{LstmNetwork, Mode, QuantConfig, RnnError};
use crate::wordlm::{parse_arpa_str, ArpaError, ArpaModel, WordScorer};

/// Acoustic frames per second.
pub const FRAME_RATE: u64 = 100;
/// Character-model calls per second used for the reference budget line.
pub const REFERENCE_LM_RATE: u64 = 3840;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Rnn(#[from] RnnError),
    #[error(transparent)]
    Hw(#[from] HwError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Arpa(#[from] ArpaError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl PipelineError {
    /// True when the failure is caused by the inputs rather than a bug.
    pub fn is_input_error(&self) -> bool {
        match self {
            PipelineError::Input(_) | PipelineError::Container(_) | PipelineError::Arpa(_) => true,
            PipelineError::Decode(e) => matches!(e, DecodeError::PosteriorLength { .. } | DecodeError::Alphabet(_)),
            PipelineError::Rnn(RnnError::Dim { .. } | RnnError::MissingQuantized) => true,
            PipelineError::Hw(HwError::SlotWidth { .. }) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Float,
    Fixed,
    Hwsim,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::Float => "float",
            RunMode::Fixed => "fixed",
            RunMode::Hwsim => "hwsim",
        }
    }
}

impl FromStr for RunMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "float" => Ok(RunMode::Float),
            "fixed" => Ok(RunMode::Fixed),
            "hwsim" => Ok(RunMode::Hwsim),
            _ => Err(PipelineError::Input(format!("unknown mode {s:?} (float, fixed, hwsim)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub beam: BeamConfig,
    pub mode: RunMode,
    pub hw: HwConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { beam: BeamConfig::default(), mode: RunMode::Hwsim, hw: HwConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Models {
    pub am: Model,
    pub lm: Option<Model>,
    pub words: Option<Arc<ArpaModel>>,
}

impl Models {
    pub fn validate(&self, mode: RunMode) -> Result<(), PipelineError> {
        if self.am.kind != ModelKind::Acoustic {
            return Err(PipelineError::Input("acoustic model container holds a character model".into()));
        }
        if let Some(lm) = &self.lm {
            if lm.kind != ModelKind::CharLm {
                return Err(PipelineError::Input("character model container holds an acoustic model".into()));
            }
            if lm.alphabet != self.am.alphabet {
                return Err(PipelineError::Input("acoustic and character models use different alphabets".into()));
            }
            if lm.alphabet.eos().is_none() {
                return Err(PipelineError::Input("character model alphabet has no end-of-sentence label".into()));
            }
        }
        if mode != RunMode::Float {
            for (what, m) in [("acoustic", Some(&self.am)), ("character", self.lm.as_ref())] {
                if m.is_some_and(|m| !m.is_quantized()) {
                    return Err(PipelineError::Input(format!("{what} model has no quantized tensors; mode {} needs them", mode.as_str())));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub transcript: String,
    pub labels: Vec<usize>,
    pub report: Report,
    pub beam: DecoderStats,
    pub am_cycles: CycleCounter,
    pub lm_cycles: CycleCounter,
}

enum Acoustic<'a> {
    Float(&'a LstmNetwork, Vec<crate::rnn::LstmState>),
    Fixed(&'a crate::rnn::QuantizedNetwork, Vec<crate::rnn::FixedLstmState>),
    Hw(Box<HwNetwork>, Vec<crate::rnn::FixedLstmState>),
}

impl Acoustic<'_> {
    fn frame(&mut self, x: &[f64]) -> Result<Vec<f64>, PipelineError> {
        Ok(match self {
            Acoustic::Float(net, st) => net.frame_float(x, st)?,
            Acoustic::Fixed(q, st) => q.frame(x, st)?,
            Acoustic::Hw(hw, st) => hw.frame(x, st)?,
        })
    }
}

/// Counter a reference-mode run would have produced on the accelerator.
fn modelled_counter(report: &CycleReport, invocations: u64) -> CycleCounter {
    let input: u64 = report.layers.iter().map(|l| l.input_path).sum();
    let recurrent: u64 = report.layers.iter().map(|l| l.recurrent_path).sum();
    CycleCounter {
        input_path: input * invocations,
        recurrent_path: recurrent * invocations,
        output_tile: report.output_tile * invocations,
        sync: report.sync_overhead * invocations,
        invocations,
    }
}

struct Run {
    labels: Vec<usize>,
    stats: DecoderStats,
    am_invocations: u64,
    am_measured: Option<CycleCounter>,
    lm_invocations: u64,
    lm_measured: Option<CycleCounter>,
    context_peak: Option<usize>,
}

fn run_search<L: CharLm>(
    features: &[Vec<f64>],
    am: &mut Acoustic,
    alphabet: &Alphabet,
    beam: BeamConfig,
    lm: L,
    words: Option<WordScorer>,
) -> Result<(Vec<usize>, DecoderStats, L), PipelineError> {
    let mut dec = Decoder::new(alphabet.clone(), beam, lm, words)?;
    for x in features {
        let y = am.frame(x)?;
        dec.step(&y)?;
    }
    let best = dec.best_hypothesis()?;
    let stats = dec.stats();
    Ok((best.labels, stats, dec.into_char_lm()))
}

/// Decodes a feature sequence end to end.
pub fn decode(features: &[Vec<f64>], models: &Models, cfg: &RunConfig) -> Result<DecodeOutput, PipelineError> {
    models.validate(cfg.mode)?;
    let am_net = &models.am.network;
    if let Some((i, x)) = features.iter().enumerate().find(|(_, x)| x.len() != am_net.input_dim) {
        return Err(PipelineError::Input(format!("frame {i} has {} values, the acoustic model expects {}", x.len(), am_net.input_dim)));
    }
    let alphabet = &models.am.alphabet;
    let words = models.words.clone().map(|m| WordScorer::new(m, cfg.beam.lambda, cfg.beam.beta));
    let started = Instant::now();

    let mut am = match cfg.mode {
        RunMode::Float => Acoustic::Float(am_net, am_net.float_state()),
        RunMode::Fixed => {
            let q = am_net.quantized()?;
            Acoustic::Fixed(q, q.initial_state())
        }
        RunMode::Hwsim => {
            let hw = HwNetwork::new(am_net.quantized()?, cfg.hw)?;
            let st = hw.initial_state();
            Acoustic::Hw(Box::new(hw), st)
        }
    };

    let run = match (&models.lm, cfg.mode) {
        (None, _) => {
            let (labels, stats, _) = run_search(features, &mut am, alphabet, cfg.beam, NoCharLm, words)?;
            Run { labels, stats, am_invocations: 0, am_measured: None, lm_invocations: 0, lm_measured: None, context_peak: None }
        }
        (Some(lm), RunMode::Float | RunMode::Fixed) => {
            let mode = if cfg.mode == RunMode::Float { Mode::Float } else { Mode::Fixed };
            let eos = lm.alphabet.eos().expect("validated");
            let char_lm = RnnCharLm::new(Arc::new(lm.network.clone()), mode, eos)?;
            let (labels, stats, char_lm) = run_search(features, &mut am, alphabet, cfg.beam, char_lm, words)?;
            Run {
                labels,
                stats,
                am_invocations: 0,
                am_measured: None,
                lm_invocations: char_lm.calls(),
                lm_measured: None,
                context_peak: None,
            }
        }
        (Some(lm), RunMode::Hwsim) => {
            let eos = lm.alphabet.eos().expect("validated");
            let slots = HwCharLm::slots_for_beam(cfg.beam.beam_width);
            let char_lm = HwCharLm::new(&lm.network, cfg.hw, slots, eos)?;
            let (labels, stats, char_lm) = run_search(features, &mut am, alphabet, cfg.beam, char_lm, words)?;
            Run {
                labels,
                stats,
                am_invocations: 0,
                am_measured: None,
                lm_invocations: char_lm.calls(),
                lm_measured: Some(char_lm.network().cycles),
                context_peak: Some(char_lm.memory().peak()),
            }
        }
    };
    let run = Run {
        am_invocations: features.len() as u64,
        am_measured: match &am {
            Acoustic::Hw(hw, _) => Some(hw.cycles),
            _ => None,
        },
        ..run
    };
    let elapsed = started.elapsed().as_secs_f64();

    let am_model = model_cycles(am_net, &cfg.hw);
    let lm_model = models.lm.as_ref().map(|m| model_cycles(&m.network, &cfg.hw)).unwrap_or_default();
    let am_cycles = run.am_measured.unwrap_or_else(|| modelled_counter(&am_model, run.am_invocations));
    let lm_cycles = run.lm_measured.unwrap_or_else(|| modelled_counter(&lm_model, run.lm_invocations));

    let transcript = alphabet.render(&run.labels);
    let mut r = Report::new();
    r.set("mode", cfg.mode.as_str())?;
    r.set("transcript", &transcript)?;
    r.set("frames", features.len())?;
    r.set("audio_seconds", features.len() as f64 / FRAME_RATE as f64)?;
    r.set("config.beam_width", cfg.beam.beam_width)?;
    r.set("config.alpha", cfg.beam.alpha)?;
    r.set("config.lambda", cfg.beam.lambda)?;
    r.set("config.beta", cfg.beam.beta)?;
    r.set("config.prune_period", cfg.beam.prune_period)?;
    r.set("config.char_lm", models.lm.is_some())?;
    r.set("config.word_lm", models.words.is_some())?;

    r.set("am.invocations", run.am_invocations)?;
    r.set("lm.invocations", run.lm_invocations)?;
    cycle_shape(&mut r, "am.per_frame", &am_model)?;
    cycle_shape(&mut r, "lm.per_call", &lm_model)?;

    r.set("cycle_source", if cfg.mode == RunMode::Hwsim { "simulated" } else { "modelled" })?;
    counter_keys(&mut r, "cycles.am", &am_cycles)?;
    counter_keys(&mut r, "cycles.lm", &lm_cycles)?;
    r.set("cycles.total", am_cycles.total() + lm_cycles.total())?;

    let seconds = features.len() as f64 / FRAME_RATE as f64;
    let lm_rate = if seconds > 0.0 { (run.lm_invocations as f64 / seconds).round() as u64 } else { 0 };
    r.set("budget.am_rate", FRAME_RATE)?;
    r.set("budget.lm_rate", lm_rate)?;
    r.set("budget.cycles_per_second", realtime_budget(FRAME_RATE, lm_rate, &am_model, &lm_model))?;
    r.set("budget.reference_lm_rate", REFERENCE_LM_RATE)?;
    r.set("budget.reference_cycles_per_second", realtime_budget(FRAME_RATE, REFERENCE_LM_RATE, &am_model, &lm_model))?;

    let mem = memory_footprint(am_net, models.lm.as_ref().map(|m| &m.network), cfg.beam.beam_width, &cfg.hw);
    r.set("memory.am_weights", mem.am_weights)?;
    r.set("memory.lm_weights", mem.lm_weights)?;
    r.set("memory.luts", mem.luts)?;
    r.set("memory.context", mem.context)?;
    r.set("memory.beam", mem.beam)?;
    r.set("memory.total", mem.total())?;

    let s = run.stats;
    r.set("beam.mean_live", s.mean_live())?;
    r.set("beam.width_pruned", s.width_pruned)?;
    r.set("beam.depth_prunes", s.depth_prunes)?;
    r.set("beam.emitted_labels", s.emitted_labels)?;
    r.set("beam.peak_nodes", s.peak_nodes)?;
    r.set("beam.peak_contexts", s.peak_contexts)?;
    if let Some(peak) = run.context_peak {
        r.set("beam.context_slots_peak", peak)?;
    }
    r.set("time.wall_seconds", elapsed)?;
    r.set("time.realtime_factor", if elapsed > 0.0 { seconds / elapsed } else { 0.0 })?;

    Ok(DecodeOutput { transcript, labels: run.labels, report: r, beam: s, am_cycles, lm_cycles })
}

fn cycle_shape(r: &mut Report, prefix: &str, c: &CycleReport) -> Result<(), ReportError> {
    for (i, l) in c.layers.iter().enumerate() {
        r.set(format!("{prefix}.layer{i}.input_path"), l.input_path)?;
        r.set(format!("{prefix}.layer{i}.recurrent_path"), l.recurrent_path)?;
        r.set(format!("{prefix}.layer{i}.total"), l.total())?;
    }
    r.set(format!("{prefix}.sync"), c.sync_overhead)?;
    r.set(format!("{prefix}.total"), c.total())?;
    // kept out of the total above, which is the figure the budget uses
    r.set(format!("{prefix}_output_tile"), c.output_tile)
}

fn counter_keys(r: &mut Report, prefix: &str, c: &CycleCounter) -> Result<(), ReportError> {
    r.set(format!("{prefix}.lstm.input_path"), c.input_path)?;
    r.set(format!("{prefix}.lstm.recurrent_path"), c.recurrent_path)?;
    r.set(format!("{prefix}.lstm.sync"), c.sync)?;
    r.set(format!("{prefix}.lstm.total"), c.lstm())?;
    r.set(format!("{prefix}.output_tile"), c.output_tile)?;
    r.set(format!("{prefix}.total"), c.total())
}

/// Toy model shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToySpec {
    pub am_depth: usize,
    pub am_hidden: usize,
    pub lm_depth: usize,
    pub lm_hidden: usize,
    pub seed: u64,
    pub frames: usize,
}

impl ToySpec {
    pub const SMALL: ToySpec = ToySpec { am_depth: 3, am_hidden: 256, lm_depth: 2, lm_hidden: 256, seed: 1, frames: 300 };
    pub const TINY: ToySpec = ToySpec { am_depth: 1, am_hidden: 32, lm_depth: 1, lm_hidden: 32, seed: 1, frames: 100 };
}

impl FromStr for ToySpec {
    type Err = PipelineError;

    /// `small` or `tiny`, optionally followed by `,key=value` overrides for
    /// `seed`, `frames`, `am_depth`, `am_hidden`, `lm_depth`, `lm_hidden`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(',');
        let mut spec = match parts.next() {
            Some("small") => ToySpec::SMALL,
            Some("tiny") => ToySpec::TINY,
            other => return Err(PipelineError::Input(format!("unknown toy preset {other:?} (small, tiny)"))),
        };
        for kv in parts {
            let (k, v) = kv.split_once('=').ok_or_else(|| PipelineError::Input(format!("toy option {kv:?} is not key=value")))?;
            let n: u64 = v.parse().map_err(|_| PipelineError::Input(format!("toy option {k} needs a number")))?;
            match k {
                "seed" => spec.seed = n,
                "frames" => spec.frames = n as usize,
                "am_depth" => spec.am_depth = n as usize,
                "am_hidden" => spec.am_hidden = n as usize,
                "lm_depth" => spec.lm_depth = n as usize,
                "lm_hidden" => spec.lm_hidden = n as usize,
                _ => return Err(PipelineError::Input(format!("unknown toy option {k}"))),
            }
        }
        if spec.am_hidden == 0 || spec.lm_hidden == 0 {
            return Err(PipelineError::Input("toy hidden sizes must be positive".into()));
        }
        Ok(spec)
    }
}

/// Random models, a word list and a feature stream for smoke tests.
#[derive(Debug, Clone)]
pub struct ToyBundle {
    pub am: Model,
    pub lm: Model,
    pub arpa: String,
    pub features: Vec<Vec<f64>>,
}

/// Share of toy frames whose most likely output is blank, as in a trained
/// CTC model.
const TOY_BLANK_SHARE: f64 = 0.8;
/// Output weight gain so label posteriors follow the input.
const TOY_OUTPUT_GAIN: f64 = 20.0;

pub fn gen_toy(spec: &ToySpec) -> Result<ToyBundle, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let alphabet = Alphabet::standard();
    let qcfg = QuantConfig::default();

    let mut am_net = LstmNetwork::random(crate::frontend::FEATURE_DIM, spec.am_depth, spec.am_hidden, alphabet.am_dim(), &mut rng);
    let top = am_net.layers.last().map_or(am_net.input_dim, |l| l.hidden_dim());
    let gain = TOY_OUTPUT_GAIN / (top as f64).sqrt();
    let weights: Vec<f64> = (0..alphabet.am_dim() * top).map(|_| rng.gen_range(-gain..gain)).collect();
    am_net.output.weights = crate::rnn::Matrix::from_vec(alphabet.am_dim(), top, weights)?;
    let features = toy_features(&mut rng, spec.frames);
    calibrate_blank(&mut am_net, &features, alphabet.blank())?;
    let am = quantize_model(&Model::new(ModelKind::Acoustic, alphabet.clone(), am_net)?, &qcfg)?;

    let lm_net = LstmNetwork::random(alphabet.labels(), spec.lm_depth, spec.lm_hidden, alphabet.labels(), &mut rng);
    let lm = quantize_model(&Model::new(ModelKind::CharLm, alphabet.clone(), lm_net)?, &qcfg)?;

    let arpa = toy_arpa(&mut rng);
    parse_arpa_str(&arpa)?;
    Ok(ToyBundle { am, lm, arpa, features })
}

/// Sets the blank bias so blank is the top output on the target share of
/// `features`.
fn calibrate_blank(net: &mut LstmNetwork, features: &[Vec<f64>], blank: usize) -> Result<(), PipelineError> {
    let mut state = net.float_state();
    let mut margins = Vec::with_capacity(features.len());
    for x in features {
        net.frame_float(x, &mut state)?;
        let h = state.last().map_or(x.as_slice(), |s| s.h.as_slice());
        let logits: Vec<f64> = net.output.weights.matvec(h).iter().zip(&net.output.bias).map(|(a, b)| a + b).collect();
        let best_label = logits.iter().enumerate().filter(|&(k, _)| k != blank).map(|(_, &v)| v).fold(f64::MIN, f64::max);
        margins.push(best_label - logits[blank]);
    }
    if margins.is_empty() {
        return Ok(());
    }
    margins.sort_by(f64::total_cmp);
    let idx = ((margins.len() as f64 * TOY_BLANK_SHARE).ceil() as usize).clamp(1, margins.len()) - 1;
    net.output.bias[blank] += margins[idx] + 0.25;
    Ok(())
}

fn toy_arpa(rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<String> = Vec::new();
    while words.len() < 40 {
        let len = rng.gen_range(1..=6);
        let w: String = (0..len).map(|_| (b'A' + rng.gen_range(0..26u8)) as char).collect();
        if !words.contains(&w) {
            words.push(w);
        }
    }
    words.sort();
    let mut unigrams = vec![("</s>".to_string(), -1.2, None), ("<s>".to_string(), -99.0, Some(-0.5))];
    for w in &words {
        unigrams.push((w.clone(), -rng.gen_range(1.0..2.5), Some(-rng.gen_range(0.1..0.6))));
    }
    let mut bigrams = Vec::new();
    for _ in 0..60 {
        let a = &unigrams[rng.gen_range(1..unigrams.len())].0;
        let b = &unigrams[rng.gen_range(2..unigrams.len())].0;
        let key = format!("{a} {b}");
        if !bigrams.iter().any(|(k, _)| *k == key) {
            bigrams.push((key, -rng.gen_range(0.2..1.5)));
        }
    }
    let mut out = format!("\\data\\\nngram 1={}\nngram 2={}\n\n\\1-grams:\n", unigrams.len(), bigrams.len());
    for (w, p, bo) in &unigrams {
        match bo {
            Some(b) => out.push_str(&format!("{p:.4}\t{w}\t{b:.4}\n")),
            None => out.push_str(&format!("{p:.4}\t{w}\n")),
        }
    }
    out.push_str("\n\\2-grams:\n");
    for (k, p) in &bigrams {
        out.push_str(&format!("{p:.4}\t{k}\n"));
    }
    out.push_str("\n\\end\\\n");
    out
}

/// Piecewise-stationary stream: runs of 3 to 12 frames around one of a few
/// prototype vectors, plus uniform noise.
fn toy_features(rng: &mut ChaCha8Rng, frames: usize) -> Vec<Vec<f64>> {
    let dim = crate::frontend::FEATURE_DIM;
    let protos: Vec<Vec<f64>> = (0..12).map(|_| (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
    let mut out = Vec::with_capacity(frames);
    while out.len() < frames {
        let p = &protos[rng.gen_range(0..protos.len())];
        for _ in 0..rng.gen_range(3..=12) {
            if out.len() == frames {
                break;
            }
            out.push(p.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect());
        }
    }
    out
}
