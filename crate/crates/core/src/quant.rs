//! Fixed-point number formats.
//!
//! A [`QuantScheme`] is a symmetric, saturating uniform quantizer whose step is
//! an exact power of two. Real value = `level * 2^exponent`, with levels in
//! `[-(2^(bits-1) - 1), 2^(bits-1) - 1]`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("bit width {0} out of range (2..=31)")]
    BadBits(u8),
    #[error("step {0} is not a positive power of two")]
    BadStep(f64),
    #[error("non-finite value {value} at element {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("shape {shape:?} does not match {len} elements")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("level {level} at element {index} outside the {bits}-bit range")]
    LevelOutOfRange { index: usize, level: i32, bits: u8 },
}

/// Bit width plus power-of-two step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantScheme {
    bits: u8,
    exponent: i32,
}

impl QuantScheme {
    pub fn new(bits: u8, exponent: i32) -> Result<Self, QuantError> {
        if !(2..=31).contains(&bits) {
            return Err(QuantError::BadBits(bits));
        }
        Ok(Self { bits, exponent })
    }

    pub fn from_step(bits: u8, step: f64) -> Result<Self, QuantError> {
        if !(step.is_finite() && step > 0.0) {
            return Err(QuantError::BadStep(step));
        }
        let e = step.log2().round() as i32;
        if pow2(e) != step {
            return Err(QuantError::BadStep(step));
        }
        Self::new(bits, e)
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    /// `log2(step)`.
    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    pub fn step(&self) -> f64 {
        pow2(self.exponent)
    }

    pub fn max_level(&self) -> i32 {
        (1i32 << (self.bits - 1)) - 1
    }

    pub fn max_value(&self) -> f64 {
        self.max_level() as f64 * self.step()
    }

    pub fn saturate(&self, level: i64) -> i32 {
        let m = self.max_level() as i64;
        level.clamp(-m, m) as i32
    }

    /// Round-to-nearest (ties away from zero), then saturate.
    pub fn quantize_value(&self, x: f64) -> i32 {
        let scaled = x / self.step();
        let r = scaled.round();
        let m = self.max_level() as f64;
        r.clamp(-m, m) as i32
    }

    pub fn dequantize_value(&self, level: i32) -> f64 {
        level as f64 * self.step()
    }

    pub fn contains_level(&self, level: i32) -> bool {
        level.abs() <= self.max_level()
    }
}

pub(crate) fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

/// Re-expresses an integer at exponent `from` in exponent `to`, rounding to
/// nearest with ties away from zero. Exact when `to <= from`.
pub fn rescale(value: i64, from: i32, to: i32) -> i64 {
    if to <= from {
        let shift = (from - to) as u32;
        debug_assert!(shift < 63);
        value << shift
    } else {
        let shift = (to - from) as u32;
        if shift >= 63 {
            return 0;
        }
        let half = 1i64 << (shift - 1);
        let mag = (value.abs() + half) >> shift;
        if value < 0 {
            -mag
        } else {
            mag
        }
    }
}

/// Integer levels sharing one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub levels: Vec<i32>,
    pub scheme: QuantScheme,
    pub shape: Vec<usize>,
}

impl QuantizedTensor {
    pub fn new(levels: Vec<i32>, scheme: QuantScheme, shape: Vec<usize>) -> Result<Self, QuantError> {
        check_shape(&shape, levels.len())?;
        if let Some((index, &level)) = levels.iter().enumerate().find(|(_, l)| !scheme.contains_level(**l)) {
            return Err(QuantError::LevelOutOfRange { index, level, bits: scheme.bits() });
        }
        Ok(Self { levels, scheme, shape })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<(), QuantError> {
    if shape.iter().product::<usize>() != len {
        return Err(QuantError::ShapeMismatch { shape: shape.to_vec(), len });
    }
    Ok(())
}

pub fn quantize(values: &[f64], shape: &[usize], scheme: QuantScheme) -> Result<QuantizedTensor, QuantError> {
    check_shape(shape, values.len())?;
    let levels = values
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value.is_finite() {
                Ok(scheme.quantize_value(value))
            } else {
                Err(QuantError::NonFinite { index, value })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QuantizedTensor { levels, scheme, shape: shape.to_vec() })
}

pub fn dequantize(q: &QuantizedTensor) -> Vec<f64> {
    q.levels.iter().map(|&l| q.scheme.dequantize_value(l)).collect()
}

/// Sum of squared errors of quantizing `values` with `scheme`.
pub fn quantization_sse(values: &[f64], scheme: QuantScheme) -> f64 {
    values
        .iter()
        .map(|&v| {
            let e = v - scheme.dequantize_value(scheme.quantize_value(v));
            e * e
        })
        .sum()
}

/// Candidate step exponents covering `[max|v| / 2^(bits+2), 4 max|v|]`.
pub fn candidate_exponents(max_abs: f64, bits: u8) -> std::ops::RangeInclusive<i32> {
    let lo = (max_abs / pow2(bits as i32 + 2)).log2().floor() as i32;
    let hi = (4.0 * max_abs).log2().ceil() as i32;
    lo..=hi
}

/// Power-of-two step minimizing the quantization SSE; ties go to the finer step.
pub fn search_step(values: &[f64], bits: u8) -> Result<QuantScheme, QuantError> {
    QuantScheme::new(bits, 0)?;
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(QuantError::NonFinite { index, value });
    }
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        tracing::warn!(bits, "all-zero tensor; using default step 2^-{}", bits - 1);
        return QuantScheme::new(bits, -(bits as i32 - 1));
    }
    let mut best: Option<(f64, QuantScheme)> = None;
    for e in candidate_exponents(max_abs, bits) {
        let scheme = QuantScheme::new(bits, e)?;
        let sse = quantization_sse(values, scheme);
        if best.map_or(true, |(b, _)| sse < b) {
            best = Some((sse, scheme));
        }
    }
    Ok(best.expect("candidate range is never empty").1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(bits: u8, e: i32) -> QuantScheme {
        QuantScheme::new(bits, e).unwrap()
    }

    #[test]
    fn zero_is_fixed_point() {
        for bits in [2, 6, 8, 16] {
            assert_eq!(s(bits, -3).quantize_value(0.0), 0);
        }
    }

    #[test]
    fn rounds_and_saturates() {
        let q = quantize(&[0.1234, 10.0, -10.0], &[3], s(6, -4)).unwrap();
        assert_eq!(q.levels, vec![2, 31, -31]);
        assert_eq!(dequantize(&q), vec![0.125, 1.9375, -1.9375]);
    }

    #[test]
    fn ties_away_from_zero() {
        let sc = s(8, 0);
        assert_eq!(sc.quantize_value(0.5), 1);
        assert_eq!(sc.quantize_value(-0.5), -1);
        assert_eq!(sc.quantize_value(2.5), 3);
        assert_eq!(rescale(3, 0, 1), 2);
        assert_eq!(rescale(-3, 0, 1), -2);
        assert_eq!(rescale(-5, 0, 2), -1);
        assert_eq!(rescale(-6, 0, 2), -2);
        assert_eq!(rescale(5, 2, 0), 20);
    }

    #[test]
    fn non_finite_is_rejected_with_index() {
        let err = quantize(&[0.0, f64::NAN], &[2], s(8, -4)).unwrap_err();
        assert!(matches!(err, QuantError::NonFinite { index: 1, .. }));
    }

    #[test]
    fn scheme_validation() {
        assert!(QuantScheme::new(1, 0).is_err());
        assert!(QuantScheme::from_step(6, 0.3).is_err());
        assert!(QuantScheme::from_step(6, -0.25).is_err());
        assert_eq!(QuantScheme::from_step(6, 0.0625).unwrap().exponent(), -4);
        assert_eq!(s(6, 0).max_level(), 31);
        assert_eq!(s(16, 0).max_level(), 32767);
    }

    #[test]
    fn search_step_examples() {
        assert_eq!(search_step(&[-1.0, 1.0], 2).unwrap().step(), 1.0);
        let sc = search_step(&[0.5], 6).unwrap();
        assert_eq!(sc.exponent(), -5);
        assert_eq!(sc.quantize_value(0.5), 16);
        let zero = search_step(&[0.0, 0.0], 6).unwrap();
        assert_eq!(zero.exponent(), -5);
    }

    #[test]
    fn search_step_matches_exhaustive_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..2000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let chosen = search_step(&values, 6).unwrap();
        let chosen_sse = quantization_sse(&values, chosen);
        // wider than the searched range on purpose
        for e in -20..=5 {
            assert!(chosen_sse <= quantization_sse(&values, s(6, e)), "exponent {e} beats the search");
        }
    }

    proptest! {
        #[test]
        fn idempotent(x in -100.0f64..100.0, bits in 2u8..17, e in -12i32..3) {
            let sc = s(bits, e);
            let l = sc.quantize_value(x);
            prop_assert_eq!(sc.quantize_value(sc.dequantize_value(l)), l);
        }

        #[test]
        fn symmetric(x in -100.0f64..100.0, bits in 2u8..17, e in -12i32..3) {
            let sc = s(bits, e);
            prop_assert_eq!(sc.quantize_value(-x), -sc.quantize_value(x));
        }

        #[test]
        fn error_bound_in_range(frac in -1.0f64..1.0, bits in 2u8..17, e in -12i32..3) {
            let sc = s(bits, e);
            let x = frac * sc.max_value();
            let err = (x - sc.dequantize_value(sc.quantize_value(x))).abs();
            prop_assert!(err <= sc.step() / 2.0);
        }

        #[test]
        fn rescale_matches_float_rounding(v in -1_000_000i64..1_000_000, shift in 0i32..20) {
            let exact = v as f64 / pow2(shift);
            prop_assert_eq!(rescale(v, 0, shift), exact.round() as i64);
        }
    }
}
