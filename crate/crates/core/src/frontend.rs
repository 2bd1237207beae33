//! Audio front end: 25 ms Hamming frames every 10 ms, 40 log-mel filterbank
//! energies plus log frame energy, delta and double-delta (123 dims), then
//! per-dimension normalization over a centered 300-frame window.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

pub const MEL_BINS: usize = 40;
pub const STATIC_DIM: usize = MEL_BINS + 1;
pub const FEATURE_DIM: usize = 3 * STATIC_DIM;
/// ln of the smallest filterbank or frame energy.
pub const LOG_FLOOR: f64 = -10.0;
pub const STD_FLOOR: f64 = 1e-5;
const DELTA_SPAN: usize = 2;

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error("unsupported wav format: {0}")]
    WavFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("feature file: {0}")]
    Format(String),
    #[error("frame has {got} values, expected {expected}")]
    Dim { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Normalization {
    /// Centered window of `window` frames (even sizes use one frame less),
    /// clipped at the stream edges.
    Sliding { window: usize },
    /// Trailing window ending at the current frame; no lookahead.
    Causal { window: usize },
    /// Fixed statistics, e.g. from a training set.
    Global { mean: Vec<f64>, var: Vec<f64> },
    None,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::Sliding { window: 300 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub normalization: Normalization,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self { sample_rate: 16_000, normalization: Normalization::default() }
    }
}

impl FrontendConfig {
    pub fn window_len(&self) -> usize {
        (self.sample_rate as usize * 25) / 1000
    }

    pub fn hop_len(&self) -> usize {
        (self.sample_rate as usize * 10) / 1000
    }

    /// Smallest power of two holding one window.
    pub fn fft_len(&self) -> usize {
        self.window_len().next_power_of_two()
    }
}

pub fn frame_count(samples: usize, window: usize, hop: usize) -> usize {
    if samples < window {
        0
    } else {
        (samples - window) / hop + 1
    }
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len).map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()).collect()
}

/// Hamming-weighted frames of 25 ms every 10 ms.
pub fn frame_signal(samples: &[f64], rate: u32) -> Vec<Vec<f64>> {
    let cfg = FrontendConfig { sample_rate: rate, ..Default::default() };
    let (win, hop) = (cfg.window_len(), cfg.hop_len());
    let w = hamming(win);
    (0..frame_count(samples.len(), win, hop))
        .map(|i| samples[i * hop..i * hop + win].iter().zip(&w).map(|(s, w)| s * w).collect())
        .collect()
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale from 0 Hz to Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Per filter: first bin and weights from there on.
    filters: Vec<(usize, Vec<f64>)>,
    centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(bins: usize, fft_len: usize, rate: u32) -> Self {
        let nyquist = rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..bins + 2).map(|i| mel_to_hz(top * i as f64 / (bins + 1) as f64)).collect();
        let bin_hz = rate as f64 / fft_len as f64;
        let spectrum = fft_len / 2 + 1;
        let filters = (0..bins)
            .map(|j| {
                let (lo, mid, hi) = (edges[j], edges[j + 1], edges[j + 2]);
                let weights: Vec<(usize, f64)> = (0..spectrum)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                let first = weights.first().map_or(0, |w| w.0);
                let mut dense = vec![0.0; weights.last().map_or(0, |w| w.0 + 1 - first)];
                for (k, w) in weights {
                    dense[k - first] = w;
                }
                (first, dense)
            })
            .collect();
        Self { filters, centers: edges[1..=bins].to_vec() }
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn center_hz(&self, j: usize) -> f64 {
        self.centers[j]
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.filters.iter().map(|(first, w)| w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum()).collect()
    }
}

fn floored_ln(x: f64) -> f64 {
    x.max(LOG_FLOOR.exp()).ln()
}

/// Per-frame spectral analysis with a cached FFT plan.
pub struct Analyzer {
    fft: Arc<dyn Fft<f64>>,
    fft_len: usize,
    bank: MelFilterbank,
}

impl Analyzer {
    pub fn new(rate: u32) -> Self {
        let cfg = FrontendConfig { sample_rate: rate, ..Default::default() };
        let fft_len = cfg.fft_len();
        Self {
            fft: FftPlanner::new().plan_fft_forward(fft_len),
            fft_len,
            bank: MelFilterbank::new(MEL_BINS, fft_len, rate),
        }
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    /// |X_k|² for k = 0..=N/2 of the zero-padded frame.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&s| Complex::new(s, 0.0)).collect();
        buf.resize(self.fft_len, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        buf[..self.fft_len / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    /// 40 log filterbank energies followed by the log frame energy.
    pub fn logmel_energy(&self, frame: &[f64]) -> Vec<f64> {
        let power = self.power_spectrum(frame);
        let mut out: Vec<f64> = self.bank.apply(&power).into_iter().map(floored_ln).collect();
        out.push(floored_ln(frame.iter().map(|s| s * s).sum()));
        out
    }
}

pub fn logmel_energy(frame: &[f64], rate: u32) -> Vec<f64> {
    Analyzer::new(rate).logmel_energy(frame)
}

/// Regression deltas over ±2 frames with edge replication.
pub fn deltas(seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let t_max = seq.len() as isize - 1;
    let at = |t: isize| &seq[t.clamp(0, t_max) as usize];
    let norm = 2.0 * (1..=DELTA_SPAN).map(|n| (n * n) as f64).sum::<f64>();
    (0..seq.len() as isize)
        .map(|t| {
            (0..seq[t as usize].len())
                .map(|d| {
                    (1..=DELTA_SPAN as isize).map(|n| n as f64 * (at(t + n)[d] - at(t - n)[d])).sum::<f64>() / norm
                })
                .collect()
        })
        .collect()
}

/// Appends delta and double-delta to each static frame.
pub fn add_deltas(statics: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d1 = deltas(statics);
    let d2 = deltas(&d1);
    statics
        .iter()
        .zip(d1.iter().zip(&d2))
        .map(|(s, (a, b))| s.iter().chain(a).chain(b).copied().collect())
        .collect()
}

/// Mean and standard deviation (floored) of each dimension over `frames`.
/// Deviations are taken from the first frame so a constant window gives an
/// exact mean.
pub fn window_stats<'a, I>(frames: I, dim: usize) -> (Vec<f64>, Vec<f64>)
where
    I: IntoIterator<Item = &'a Vec<f64>> + Clone,
{
    let mut it = frames.clone().into_iter();
    let Some(reference) = it.next() else {
        return (vec![0.0; dim], vec![1.0; dim]);
    };
    let mut n = 0usize;
    let mut shift = vec![0.0; dim];
    for f in frames.clone() {
        n += 1;
        for d in 0..dim {
            shift[d] += f[d] - reference[d];
        }
    }
    let mean: Vec<f64> = (0..dim).map(|d| reference[d] + shift[d] / n as f64).collect();
    let mut var = vec![0.0; dim];
    for f in frames {
        for d in 0..dim {
            let e = f[d] - mean[d];
            var[d] += e * e;
        }
    }
    let std = var.into_iter().map(|v| (v / n as f64).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

fn apply_norm(frame: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    frame.iter().zip(mean.iter().zip(std)).map(|(x, (m, s))| (x - m) / s).collect()
}

/// Streaming per-dimension normalizer holding a bounded ring of frames.
#[derive(Debug, Clone)]
pub struct Normalizer {
    mode: Normalization,
    ring: VecDeque<Vec<f64>>,
    /// Index of the oldest frame in the ring.
    base: usize,
    /// Frames pushed so far.
    seen: usize,
    /// Frames already emitted.
    emitted: usize,
}

impl Normalizer {
    pub fn new(mode: Normalization) -> Self {
        Self { mode, ring: VecDeque::new(), base: 0, seen: 0, emitted: 0 }
    }

    /// Frames of lookahead needed before a frame can be emitted.
    pub fn lookahead(&self) -> usize {
        match self.mode {
            Normalization::Sliding { window } => window.saturating_sub(1) / 2,
            _ => 0,
        }
    }

    fn half(&self) -> usize {
        self.lookahead()
    }

    fn span(&self, t: usize, end: usize) -> (usize, usize) {
        match &self.mode {
            Normalization::Sliding { .. } => (t.saturating_sub(self.half()), (t + self.half() + 1).min(end)),
            Normalization::Causal { window } => ((t + 1).saturating_sub((*window).max(1)), t + 1),
            _ => (t, t + 1),
        }
    }

    fn emit(&mut self, t: usize, end: usize) -> Vec<f64> {
        let frame = &self.ring[t - self.base];
        match &self.mode {
            Normalization::None => frame.clone(),
            Normalization::Global { mean, var } => {
                let std: Vec<f64> = var.iter().map(|v| v.sqrt().max(STD_FLOOR)).collect();
                apply_norm(frame, mean, &std)
            }
            _ => {
                let (lo, hi) = self.span(t, end);
                let dim = frame.len();
                let (mean, std) = window_stats(self.ring.range(lo - self.base..hi - self.base), dim);
                apply_norm(frame, &mean, &std)
            }
        }
    }

    fn trim(&mut self) {
        // keep what the next frame to emit may still look back on
        let keep_from = match &self.mode {
            Normalization::Sliding { .. } => self.emitted.saturating_sub(self.half()),
            Normalization::Causal { window } => (self.emitted + 1).saturating_sub((*window).max(1)),
            _ => self.emitted,
        };
        while self.base < keep_from {
            self.ring.pop_front();
            self.base += 1;
        }
    }

    /// Adds a frame; returns any frames that became ready.
    pub fn push(&mut self, frame: Vec<f64>) -> Vec<Vec<f64>> {
        self.ring.push_back(frame);
        self.seen += 1;
        let mut out = Vec::new();
        while self.emitted + self.lookahead() < self.seen {
            out.push(self.emit(self.emitted, self.seen));
            self.emitted += 1;
            self.trim();
        }
        out
    }

    /// End of stream: emits the remaining frames with clipped windows.
    pub fn finish(&mut self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        while self.emitted < self.seen {
            out.push(self.emit(self.emitted, self.seen));
            self.emitted += 1;
            self.trim();
        }
        out
    }

    pub fn buffered(&self) -> usize {
        self.ring.len()
    }
}

pub fn normalize(seq: &[Vec<f64>], mode: &Normalization) -> Vec<Vec<f64>> {
    let mut n = Normalizer::new(mode.clone());
    let mut out = Vec::with_capacity(seq.len());
    for f in seq {
        out.extend(n.push(f.clone()));
    }
    out.extend(n.finish());
    out
}

pub fn sliding_normalize(seq: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    normalize(seq, &Normalization::Sliding { window })
}

/// Full pipeline from PCM samples in [-1, 1) to normalized 123-dim frames.
pub fn extract(samples: &[f64], cfg: &FrontendConfig) -> Vec<Vec<f64>> {
    let frames = frame_signal(samples, cfg.sample_rate);
    if frames.is_empty() {
        return Vec::new();
    }
    let analyzer = Analyzer::new(cfg.sample_rate);
    let statics: Vec<Vec<f64>> = frames.iter().map(|f| analyzer.logmel_energy(f)).collect();
    normalize(&add_deltas(&statics), &cfg.normalization)
}

/// Mono 16-bit PCM, scaled to [-1, 1).
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32), FrontendError> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(FrontendError::WavFormat(format!(
            "{} channel(s), {} bits {:?}; need mono 16-bit PCM",
            spec.channels, spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader.into_samples::<i16>().map(|s| s.map(|v| v as f64 / 32768.0)).collect::<Result<_, _>>()?;
    Ok((samples, spec.sample_rate))
}

pub fn write_wav(path: &Path, samples: &[f64], rate: u32) -> Result<(), FrontendError> {
    let spec = hound::WavSpec { channels: 1, sample_rate: rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Text header `frames=<n> dim=<d>` then n·d little-endian f32 values.
pub fn write_features<W: Write>(mut w: W, frames: &[Vec<f64>]) -> Result<(), FrontendError> {
    let dim = frames.first().map_or(FEATURE_DIM, Vec::len);
    writeln!(w, "frames={} dim={}", frames.len(), dim)?;
    for f in frames {
        if f.len() != dim {
            return Err(FrontendError::Dim { expected: dim, got: f.len() });
        }
        for &v in f {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_features<R: Read>(r: R) -> Result<Vec<Vec<f64>>, FrontendError> {
    let mut r = BufReader::new(r);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let field = |key: &str| -> Result<usize, FrontendError> {
        header
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
            .ok_or_else(|| FrontendError::Format(format!("header lacks {key}")))?
            .parse()
            .map_err(|_| FrontendError::Format(format!("bad {key} in header")))
    };
    let (n, dim) = (field("frames")?, field("dim")?);
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != n * dim * 4 {
        return Err(FrontendError::Format(format!("payload is {} bytes, header implies {}", payload.len(), n * dim * 4)));
    }
    let values: Vec<f64> =
        payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    Ok(values.chunks(dim.max(1)).take(n).map(<[f64]>::to_vec).collect())
}

pub fn read_feature_file(path: &Path) -> Result<Vec<Vec<f64>>, FrontendError> {
    read_features(std::fs::File::open(path)?)
}

pub fn write_feature_file(path: &Path, frames: &[Vec<f64>]) -> Result<(), FrontendError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_features(&mut w, frames)?;
    w.flush()?;
    Ok(())
}

/// Reads `mean` and `var` lines of whitespace-separated values.
pub fn read_global_stats(path: &Path) -> Result<Normalization, FrontendError> {
    let text = std::fs::read_to_string(path)?;
    let mut mean = None;
    let mut var = None;
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        let slot = match parts.next() {
            Some("mean") => &mut mean,
            Some("var") => &mut var,
            _ => continue,
        };
        let vals: Result<Vec<f64>, _> = parts.map(str::parse).collect();
        *slot = Some(vals.map_err(|_| FrontendError::Format("bad number in statistics file".into()))?);
    }
    match (mean, var) {
        (Some(mean), Some(var)) if mean.len() == var.len() => Ok(Normalization::Global { mean, var }),
        _ => Err(FrontendError::Format("statistics file needs mean and var lines of equal length".into())),
    }
}
