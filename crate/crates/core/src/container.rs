//! Binary model container.
//!
//! Layout (little-endian): magic, version, model kind, alphabet, topology,
//! per-layer number formats, then tensor records in a fixed order, then a
//! CRC-32 of everything before it. Quantized levels are two's-complement
//! fields packed LSB-first at the tensor's bit width, so 6-bit tensors take
//! four levels per three bytes. Float shadows, when present, are stored as
//! f64 records after the quantized ones.

use std::path::Path;

use thiserror::Error;

use crate::decoder::{Alphabet, DecodeError};
use crate::quant::{dequantize, QuantError, QuantScheme, QuantizedTensor};
use crate::rnn::{
    quantize_network, FixedFormat, LstmLayerParams, LstmNetwork, LutSpec, Matrix, OutputLayerParams, QuantConfig,
    QuantizedLstmLayer, QuantizedNetwork, QuantizedOutputLayer, RnnError,
};

pub const MAGIC: &[u8; 6] = b"QLSTMC";
pub const VERSION: u16 = 1;

const FLAG_QUANTIZED: u8 = 1;
const FLAG_FLOAT: u8 = 2;
const RECORD_LEVELS: u8 = 0;
const RECORD_F64: u8 = 1;
const GATE_SUFFIX: [&str; 4] = ["i", "f", "o", "c"];

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a model container")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u16),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("container truncated at byte {0}")]
    Truncated(usize),
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error(transparent)]
    Rnn(#[from] RnnError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Alphabet(#[from] DecodeError),
}

fn malformed(msg: impl Into<String>) -> ContainerError {
    ContainerError::Malformed(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Features in, labels plus blank out.
    Acoustic,
    /// One-hot labels in, next-label distribution out.
    CharLm,
}

/// A network with its alphabet, as stored in a container.
#[derive(Debug, Clone)]
pub struct Model {
    pub kind: ModelKind,
    pub alphabet: Alphabet,
    /// Float parameters; dequantized values when the container has no shadow.
    pub network: LstmNetwork,
    pub float_shadow: bool,
}

impl Model {
    pub fn new(kind: ModelKind, alphabet: Alphabet, network: LstmNetwork) -> Result<Self, ContainerError> {
        let m = Self { kind, alphabet, network, float_shadow: true };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ContainerError> {
        self.network.validate()?;
        let expected = match self.kind {
            ModelKind::Acoustic => self.alphabet.am_dim(),
            ModelKind::CharLm => {
                if self.network.input_dim != self.alphabet.labels() {
                    return Err(malformed(format!(
                        "character model input {} does not match {} labels",
                        self.network.input_dim,
                        self.alphabet.labels()
                    )));
                }
                self.alphabet.labels()
            }
        };
        if self.network.labels() != expected {
            return Err(malformed(format!("network has {} outputs, alphabet needs {expected}", self.network.labels())));
        }
        Ok(())
    }

    pub fn is_quantized(&self) -> bool {
        self.network.quantized.is_some()
    }
}

/// Applies direct quantization to every tensor of `model`.
pub fn quantize_model(model: &Model, cfg: &QuantConfig) -> Result<Model, ContainerError> {
    let mut out = model.clone();
    out.network.quantized = Some(quantize_network(&model.network, cfg)?);
    Ok(out)
}

/// Bytes holding `n` levels of `bits` bits.
pub fn packed_len(n: usize, bits: u8) -> usize {
    (n * bits as usize).div_ceil(8)
}

pub fn pack_levels(levels: &[i32], bits: u8) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(levels.len(), bits)];
    let mask = (1u64 << bits) - 1;
    let mut pos = 0usize;
    for &l in levels {
        let mut v = (l as i64 as u64) & mask;
        let mut left = bits as usize;
        while left > 0 {
            let (byte, off) = (pos / 8, pos % 8);
            let take = left.min(8 - off);
            out[byte] |= ((v & ((1 << take) - 1)) as u8) << off;
            v >>= take;
            pos += take;
            left -= take;
        }
    }
    out
}

pub fn unpack_levels(bytes: &[u8], n: usize, bits: u8) -> Vec<i32> {
    let mut out = Vec::with_capacity(n);
    let mut pos = 0usize;
    for _ in 0..n {
        let mut v = 0u64;
        let mut got = 0usize;
        while got < bits as usize {
            let (byte, off) = (pos / 8, pos % 8);
            let take = (bits as usize - got).min(8 - off);
            v |= (((bytes[byte] >> off) as u64) & ((1 << take) - 1)) << got;
            got += take;
            pos += take;
        }
        let shift = 64 - bits as u32;
        out.push((((v << shift) as i64) >> shift) as i32);
    }
    out
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn opt_index(&mut self, v: Option<usize>) {
        self.i32(v.map_or(-1, |i| i as i32));
    }
    fn scheme(&mut self, s: QuantScheme) {
        self.u8(s.bits());
        self.i32(s.exponent());
    }
    fn name(&mut self, name: &str) {
        self.u16(name.len() as u16);
        self.0.extend_from_slice(name.as_bytes());
    }
    fn shape(&mut self, shape: &[usize]) {
        self.u8(shape.len() as u8);
        for &d in shape {
            self.u32(d as u32);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.pos + n > self.buf.len() {
            return Err(ContainerError::Truncated(self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn i32(&mut self) -> Result<i32, ContainerError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn f64(&mut self) -> Result<f64, ContainerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn opt_index(&mut self) -> Result<Option<usize>, ContainerError> {
        let v = self.i32()?;
        Ok((v >= 0).then_some(v as usize))
    }
    fn scheme(&mut self) -> Result<QuantScheme, ContainerError> {
        let bits = self.u8()?;
        Ok(QuantScheme::new(bits, self.i32()?)?)
    }
    fn name(&mut self) -> Result<String, ContainerError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed("tensor name is not UTF-8"))
    }
    fn shape(&mut self) -> Result<Vec<usize>, ContainerError> {
        let n = self.u8()? as usize;
        (0..n).map(|_| Ok(self.u32()? as usize)).collect()
    }
}

/// Tensor names and shapes in storage order.
fn tensor_layout(net_dims: &[(usize, usize)], top: usize, labels: usize) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for (l, &(d, h)) in net_dims.iter().enumerate() {
        for g in GATE_SUFFIX {
            out.push((format!("layer{l}.wx.{g}"), vec![h, d]));
        }
        for g in GATE_SUFFIX {
            out.push((format!("layer{l}.wh.{g}"), vec![h, h]));
        }
        for g in &GATE_SUFFIX[..3] {
            out.push((format!("layer{l}.peephole.{g}"), vec![h]));
        }
        for g in GATE_SUFFIX {
            out.push((format!("layer{l}.bias.{g}"), vec![h]));
        }
    }
    out.push(("output.weights".into(), vec![labels, top]));
    out.push(("output.bias".into(), vec![labels]));
    out
}

fn float_tensors(net: &LstmNetwork) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for p in &net.layers {
        out.extend(p.wx.iter().map(|m| m.data().to_vec()));
        out.extend(p.wh.iter().map(|m| m.data().to_vec()));
        out.extend(p.peephole.iter().cloned());
        out.extend(p.bias.iter().cloned());
    }
    out.push(net.output.weights.data().to_vec());
    out.push(net.output.bias.clone());
    out
}

fn quantized_tensors(q: &QuantizedNetwork) -> Vec<&QuantizedTensor> {
    let mut out = Vec::new();
    for l in &q.layers {
        out.extend(l.wx.iter().chain(&l.wh).chain(&l.peephole).chain(&l.bias));
    }
    out.push(&q.output.weights);
    out.push(&q.output.bias);
    out
}

fn top_dim(net: &LstmNetwork) -> usize {
    net.layers.last().map_or(net.input_dim, LstmLayerParams::hidden_dim)
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>, ContainerError> {
    model.validate()?;
    let net = &model.network;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.u8(match model.kind {
        ModelKind::Acoustic => 0,
        ModelKind::CharLm => 1,
    });
    let mut flags = 0;
    if net.quantized.is_some() {
        flags |= FLAG_QUANTIZED;
    }
    if model.float_shadow || net.quantized.is_none() {
        flags |= FLAG_FLOAT;
    }
    w.u8(flags);

    let symbols = model.alphabet.symbols();
    w.u16(symbols.len() as u16);
    for &c in symbols {
        w.u32(c as u32);
    }
    w.opt_index(model.alphabet.delimiter());
    w.opt_index(model.alphabet.eos());

    w.u32(net.input_dim as u32);
    w.u16(net.layers.len() as u16);
    for l in &net.layers {
        w.u32(l.hidden_dim() as u32);
    }
    w.u32(net.labels() as u32);

    let layout = tensor_layout(&net.layer_dims(), top_dim(net), net.labels());
    if let Some(q) = &net.quantized {
        w.scheme(q.input);
        for l in &q.layers {
            let f = l.format;
            for s in [f.input, f.hidden, f.preact, f.cell, f.gate] {
                w.scheme(s);
            }
            w.u32(f.lut.intervals);
            w.i32(f.lut.range_exp);
        }
        for ((name, shape), t) in layout.iter().zip(quantized_tensors(q)) {
            w.name(name);
            w.u8(RECORD_LEVELS);
            w.shape(shape);
            w.scheme(t.scheme);
            w.0.extend(pack_levels(&t.levels, t.scheme.bits()));
        }
    }
    if flags & FLAG_FLOAT != 0 {
        for ((name, shape), values) in layout.iter().zip(float_tensors(net)) {
            w.name(name);
            w.u8(RECORD_F64);
            w.shape(shape);
            for v in values {
                w.0.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    Ok(w.0)
}

fn expect_record(r: &mut Reader, name: &str, shape: &[usize], kind: u8) -> Result<(), ContainerError> {
    let got = r.name()?;
    if got != name {
        return Err(malformed(format!("expected tensor {name}, found {got}")));
    }
    if r.u8()? != kind {
        return Err(malformed(format!("tensor {name} has the wrong record type")));
    }
    let s = r.shape()?;
    if s != shape {
        return Err(malformed(format!("tensor {name} has shape {s:?}, expected {shape:?}")));
    }
    Ok(())
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model, ContainerError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 2 + 4 {
        return Err(ContainerError::Truncated(bytes.len()));
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(ContainerError::Version(version));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ContainerError::Checksum { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 8 };
    let kind = match r.u8()? {
        0 => ModelKind::Acoustic,
        1 => ModelKind::CharLm,
        k => return Err(malformed(format!("unknown model kind {k}"))),
    };
    let flags = r.u8()?;
    if flags & (FLAG_QUANTIZED | FLAG_FLOAT) == 0 || flags & !(FLAG_QUANTIZED | FLAG_FLOAT) != 0 {
        return Err(malformed(format!("bad flags {flags:#x}")));
    }

    let n_sym = r.u16()? as usize;
    let symbols = (0..n_sym)
        .map(|_| char::from_u32(r.u32()?).ok_or_else(|| malformed("bad alphabet symbol")))
        .collect::<Result<Vec<_>, _>>()?;
    let delimiter = r.opt_index()?;
    let eos = r.opt_index()?;
    let alphabet = Alphabet::new(symbols, delimiter, eos)?;

    let input_dim = r.u32()? as usize;
    let depth = r.u16()? as usize;
    let hidden: Vec<usize> = (0..depth).map(|_| Ok(r.u32()? as usize)).collect::<Result<_, ContainerError>>()?;
    let labels = r.u32()? as usize;
    let dims: Vec<(usize, usize)> =
        hidden.iter().enumerate().map(|(i, &h)| (if i == 0 { input_dim } else { hidden[i - 1] }, h)).collect();
    let top = hidden.last().copied().unwrap_or(input_dim);
    let layout = tensor_layout(&dims, top, labels);

    let quantized = if flags & FLAG_QUANTIZED != 0 {
        let input = r.scheme()?;
        let mut formats = Vec::with_capacity(depth);
        for _ in 0..depth {
            let s: Vec<QuantScheme> = (0..5).map(|_| r.scheme()).collect::<Result<_, _>>()?;
            let lut = LutSpec { intervals: r.u32()?, range_exp: r.i32()? };
            if !lut.is_valid() {
                return Err(malformed("invalid activation table spec"));
            }
            formats.push(FixedFormat { input: s[0], hidden: s[1], preact: s[2], cell: s[3], gate: s[4], lut });
        }
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, shape) in &layout {
            expect_record(&mut r, name, shape, RECORD_LEVELS)?;
            let scheme = r.scheme()?;
            let n: usize = shape.iter().product();
            let levels = unpack_levels(r.take(packed_len(n, scheme.bits()))?, n, scheme.bits());
            tensors.push(QuantizedTensor::new(levels, scheme, shape.clone())?);
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("layout length");
        let mut layers = Vec::with_capacity(depth);
        for format in formats {
            let wx = std::array::from_fn(|_| next());
            let wh = std::array::from_fn(|_| next());
            let peephole = std::array::from_fn(|_| next());
            let bias = std::array::from_fn(|_| next());
            layers.push(QuantizedLstmLayer::new(wx, wh, peephole, bias, format)?);
        }
        let output = QuantizedOutputLayer { weights: next(), bias: next() };
        Some(QuantizedNetwork::new(input, layers, output)?)
    } else {
        None
    };

    let float_shadow = flags & FLAG_FLOAT != 0;
    let (layers, output) = if float_shadow {
        let mut values = Vec::with_capacity(layout.len());
        for (name, shape) in &layout {
            expect_record(&mut r, name, shape, RECORD_F64)?;
            let n: usize = shape.iter().product();
            values.push((0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?);
        }
        let mut it = values.into_iter();
        let mut next = || it.next().expect("layout length");
        let mut layers = Vec::with_capacity(depth);
        for &(d, h) in &dims {
            let mut mat = |rows, cols| Matrix::from_vec(rows, cols, next());
            let wx = [mat(h, d)?, mat(h, d)?, mat(h, d)?, mat(h, d)?];
            let wh = [mat(h, h)?, mat(h, h)?, mat(h, h)?, mat(h, h)?];
            let peephole = std::array::from_fn(|_| next());
            let bias = std::array::from_fn(|_| next());
            layers.push(LstmLayerParams { wx, wh, peephole, bias });
        }
        let weights = Matrix::from_vec(labels, top, next())?;
        (layers, OutputLayerParams { weights, bias: next() })
    } else {
        quantized.as_ref().expect("flags checked").dequantized()
    };
    if r.pos != body.len() {
        return Err(malformed(format!("{} trailing bytes", body.len() - r.pos)));
    }

    let mut network = LstmNetwork::new(input_dim, layers, output)?;
    network.quantized = quantized;
    let model = Model { kind, alphabet, network, float_shadow };
    model.validate()?;
    Ok(model)
}

pub fn write_model(path: &Path, model: &Model) -> Result<(), ContainerError> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<Model, ContainerError> {
    from_bytes(&std::fs::read(path)?)
}

/// Largest elementwise gap between the float parameters and their quantized values.
pub fn max_quantization_gap(model: &Model) -> Option<f64> {
    let q = model.network.quantized.as_ref()?;
    let gap = float_tensors(&model.network)
        .iter()
        .zip(quantized_tensors(q))
        .flat_map(|(f, t)| f.iter().zip(dequantize(t)).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    Some(gap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_bit_packing() {
        let levels: Vec<i32> = (-7..8).collect();
        let packed = pack_levels(&levels, 6);
        assert_eq!(packed.len(), 12);
        assert_eq!(unpack_levels(&packed, 15, 6), levels);
        // four 6-bit fields fill exactly three bytes
        assert_eq!(pack_levels(&[-1, -1, -1, -1], 6), vec![0xff, 0xff, 0xff]);
        assert_eq!(pack_levels(&[1, 0, 0, 0], 6), vec![1, 0, 0]);
        assert_eq!(pack_levels(&[0, 1, 0, 0], 6), vec![0x40, 0, 0]);
    }

    #[test]
    fn extreme_levels_survive() {
        for bits in [2u8, 4, 6, 8, 13, 16, 31] {
            let m = QuantScheme::new(bits, 0).unwrap().max_level();
            let levels = vec![m, -m, 0, 1, -1, m - 1];
            assert_eq!(unpack_levels(&pack_levels(&levels, bits), levels.len(), bits), levels);
        }
    }
}
