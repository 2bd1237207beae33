//! Lookup-table activation functions, as used by the LSTM element-wise unit.

use crate::quant::{rescale, QuantScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
}

impl ActivationKind {
    pub fn exact(self, x: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => x.tanh(),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Table geometry shared by every table in a datapath.
///
/// `intervals` uniform cells span `[-2^range_exp, 2^range_exp]`; the table
/// holds one sample per cell boundary, so `intervals + 1` entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LutSpec {
    pub intervals: u32,
    pub range_exp: i32,
}

impl Default for LutSpec {
    fn default() -> Self {
        Self { intervals: 1024, range_exp: 3 }
    }
}

impl LutSpec {
    /// `log2` of the sampling interval.
    pub fn delta_exp(&self) -> i32 {
        self.range_exp + 1 - self.intervals.trailing_zeros() as i32
    }

    pub fn is_valid(&self) -> bool {
        self.intervals >= 2 && self.intervals.is_power_of_two()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationLut {
    kind: ActivationKind,
    spec: LutSpec,
    output: QuantScheme,
    entries: Vec<i32>,
}

impl ActivationLut {
    /// Panics if `spec.intervals` is not a power of two ≥ 2.
    pub fn build(kind: ActivationKind, spec: LutSpec, output: QuantScheme) -> Self {
        assert!(spec.is_valid(), "LUT intervals must be a power of two >= 2");
        let half = (spec.intervals / 2) as i64;
        let delta = crate::quant::pow2(spec.delta_exp());
        let sample = |j: i64| output.quantize_value(kind.exact(j as f64 * delta));
        let entries = match kind {
            // mirrored so odd symmetry holds exactly
            ActivationKind::Tanh => {
                let pos: Vec<i32> = (0..=half).map(sample).collect();
                (-half..=half)
                    .map(|j| if j < 0 { -pos[(-j) as usize] } else { pos[j as usize] })
                    .collect()
            }
            ActivationKind::Sigmoid => (-half..=half).map(sample).collect(),
        };
        Self { kind, spec, output, entries }
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn spec(&self) -> LutSpec {
        self.spec
    }

    pub fn output_scheme(&self) -> QuantScheme {
        self.output
    }

    pub fn entries(&self) -> &[i32] {
        &self.entries
    }

    fn index_of(&self, j: i64) -> usize {
        let half = (self.spec.intervals / 2) as i64;
        (j.clamp(-half, half) + half) as usize
    }

    /// Looks up a fixed-point input given as `level * 2^exponent`.
    #[inline]
    pub fn lookup(&self, level: i64, exponent: i32) -> i32 {
        let j = rescale(level, exponent, self.spec.delta_exp());
        self.entries[self.index_of(j)]
    }

    /// Real-valued lookup (round-to-nearest cell, ties away from zero).
    pub fn eval(&self, x: f64) -> f64 {
        let delta = crate::quant::pow2(self.spec.delta_exp());
        let j = (x / delta).round();
        let half = (self.spec.intervals / 2) as f64;
        let idx = self.index_of(j.clamp(-half, half) as i64);
        self.output.dequantize_value(self.entries[idx])
    }

    /// Table storage in bytes.
    pub fn storage_bytes(&self) -> usize {
        (self.entries.len() * self.output.bits() as usize).div_ceil(8)
    }
}

/// Builds a table with the given number of intervals over `[-range, range]`;
/// `range` must be a power of two.
pub fn build_lut(kind: ActivationKind, intervals: u32, range: f64, output: QuantScheme) -> ActivationLut {
    let range_exp = range.log2().round() as i32;
    assert_eq!(crate::quant::pow2(range_exp), range, "LUT range must be a power of two");
    ActivationLut::build(kind, LutSpec { intervals, range_exp }, output)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out() -> QuantScheme {
        QuantScheme::new(16, -14).unwrap()
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let lut = build_lut(ActivationKind::Sigmoid, 1024, 8.0, out());
        assert!((lut.eval(0.0) - 0.5).abs() <= out().step());
        assert_eq!(lut.lookup(0, -10), 1 << 13);
    }

    #[test]
    fn tanh_is_exactly_odd() {
        let lut = build_lut(ActivationKind::Tanh, 1024, 8.0, out());
        for level in -40000i64..40000 {
            assert_eq!(lut.lookup(-level, -10), -lut.lookup(level, -10));
        }
        for x in [0.0, 0.3, 1.7, 7.99, 8.0, 100.0] {
            assert_eq!(lut.eval(-x), -lut.eval(x));
        }
    }

    #[test]
    fn sigmoid_complement_symmetry() {
        let lut = build_lut(ActivationKind::Sigmoid, 1024, 8.0, out());
        for level in (-20000i64..20000).step_by(7) {
            let a = out().dequantize_value(lut.lookup(level, -10));
            let b = out().dequantize_value(lut.lookup(-level, -10));
            assert!((a + b - 1.0).abs() <= out().step());
        }
    }

    #[test]
    fn entries_are_monotone_and_bounded() {
        for kind in [ActivationKind::Sigmoid, ActivationKind::Tanh] {
            let lut = build_lut(kind, 1024, 8.0, out());
            assert_eq!(lut.entries().len(), 1025);
            assert!(lut.entries().windows(2).all(|w| w[0] <= w[1]));
            let lo = if kind == ActivationKind::Sigmoid { 0.0 } else { -1.0 };
            for &e in lut.entries() {
                let v = out().dequantize_value(e);
                assert!((lo..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn sigmoid_error_sweep() {
        let lut = build_lut(ActivationKind::Sigmoid, 1024, 8.0, out());
        let delta = crate::quant::pow2(lut.spec().delta_exp());
        // every table cell, at its samples and at dense points in between
        let mut worst = 0.0f64;
        for j in -512..=512 {
            for sub in -8..=8 {
                let x = (j as f64 + sub as f64 / 16.0) * delta;
                if x.abs() > 8.0 {
                    continue;
                }
                worst = worst.max((lut.eval(x) - sigmoid(x)).abs());
            }
        }
        assert!(worst <= 0.005, "worst error {worst}");
    }

    #[test]
    fn out_of_range_clamps() {
        let lut = build_lut(ActivationKind::Tanh, 1024, 8.0, out());
        assert_eq!(lut.eval(50.0), lut.eval(8.0));
        assert_eq!(lut.lookup(i32::MAX as i64, 0), *lut.entries().last().unwrap());
    }
}
