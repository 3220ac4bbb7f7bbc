//! Uniform linear 8-bit quantization over a [min, max] range.
//!
//! `q = clamp(round((v - min) / scale), 0, 255)` with `scale = (max - min) / 255`
//! and rounding half away from zero. `v' = min + q * scale`.
//! Arithmetic is carried out in `f64` and divides by the range rather than the
//! rounded `scale`, so midpoints such as 127.5 land exactly.

use alloc::format;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

pub const LEVELS: f64 = 255.0;

/// Largest input dimension whose zero-point-offset dot product fits an `i32`.
pub const MAX_DOT_LEN: usize = (i32::MAX as usize) / (255 * 255);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub min_val: f32,
    pub max_val: f32,
    pub scale: f32,
    pub zero_point: u8,
}

impl QuantParams {
    pub fn from_range(min_val: f32, max_val: f32) -> Result<Self> {
        if !(min_val.is_finite() && max_val.is_finite()) {
            return Err(Error::DegenerateRange(format!("non-finite range [{min_val}, {max_val}]")));
        }
        if min_val >= max_val {
            return Err(Error::DegenerateRange(format!(
                "min {min_val} must be below max {max_val}"
            )));
        }
        let range = max_val as f64 - min_val as f64;
        let zero = math::round(-(min_val as f64) * LEVELS / range).clamp(0.0, LEVELS);
        Ok(Self {
            min_val,
            max_val,
            scale: (range / LEVELS) as f32,
            zero_point: zero as u8,
        })
    }

    fn range(&self) -> f64 {
        self.max_val as f64 - self.min_val as f64
    }

    /// Exact step between adjacent levels.
    pub fn step(&self) -> f64 {
        self.range() / LEVELS
    }

    pub fn quantize_value(&self, v: f32) -> u8 {
        let t = (v as f64 - self.min_val as f64) * LEVELS / self.range();
        // NaN falls through the clamp and casts to 0
        math::round(t).clamp(0.0, LEVELS) as u8
    }

    pub fn dequantize_value(&self, q: u8) -> f64 {
        self.min_val as f64 + q as f64 * self.step()
    }
}

/// Min/max of `values` mapped onto 256 levels.
pub fn compute_quant_params(values: &[f32]) -> Result<QuantParams> {
    let mut iter = values.iter().copied();
    let first = iter
        .next()
        .ok_or_else(|| Error::DegenerateRange("no values".into()))?;
    let (min, max) = iter.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
    QuantParams::from_range(min, max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub data: Vec<u8>,
    pub shape: Vec<usize>,
    pub params: QuantParams,
}

impl QuantizedTensor {
    pub fn new(data: Vec<u8>, shape: Vec<usize>, params: QuantParams) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dimension(format!(
                "shape {shape:?} holds {n} values, data has {}",
                data.len()
            )));
        }
        Ok(Self { data, shape, params })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub fn quantize(values: &[f32], shape: &[usize], params: QuantParams) -> Result<QuantizedTensor> {
    let data = values.iter().map(|&v| params.quantize_value(v)).collect();
    QuantizedTensor::new(data, shape.to_vec(), params)
}

pub fn dequantize(tensor: &QuantizedTensor) -> Vec<f32> {
    tensor
        .data
        .iter()
        .map(|&q| tensor.params.dequantize_value(q) as f32)
        .collect()
}

/// How dot products of 8-bit operands are accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccumMode {
    /// Integer accumulation of zero-point-offset products in `i32`, one rescale
    /// at the end. Bit-identical everywhere.
    FixedAccum,
    /// `f32` accumulation; the dequantization of each product is folded into a
    /// single `scale_w * scale_x` factor.
    FloatAccum,
}

#[inline]
pub(crate) fn dot_fixed(row: &[u8], zw: i32, x: &[u8], zx: i32) -> i32 {
    row.iter()
        .zip(x)
        .map(|(&w, &v)| (w as i32 - zw) * (v as i32 - zx))
        .sum()
}

#[inline]
pub(crate) fn dot_float(row: &[u8], zw: i32, x: &[u8], zx: i32) -> f32 {
    row.iter()
        .zip(x)
        .map(|(&w, &v)| (w as i32 - zw) as f32 * (v as i32 - zx) as f32)
        .sum()
}

/// `weights` has shape `[out, in]`, `input` shape `[in]`; `bias` is in units of
/// `weights.scale * input.scale`.
pub fn quantized_matvec(
    weights: &QuantizedTensor,
    input: &QuantizedTensor,
    bias: &[i32],
    mode: AccumMode,
) -> Result<Vec<f32>> {
    let [out_dim, in_dim] = weights.shape[..] else {
        return Err(Error::dimension(format!("weights must be 2-D, got {:?}", weights.shape)));
    };
    if input.len() != in_dim || bias.len() != out_dim {
        return Err(Error::dimension(format!(
            "weights [{out_dim}, {in_dim}] vs input {} and bias {}",
            input.len(),
            bias.len()
        )));
    }
    if in_dim > MAX_DOT_LEN {
        return Err(Error::dimension(format!(
            "input dimension {in_dim} overflows a 32-bit accumulator"
        )));
    }
    let zw = weights.params.zero_point as i32;
    let zx = input.params.zero_point as i32;
    let combined = weights.params.scale as f64 * input.params.scale as f64;
    let rows = weights.data.chunks_exact(in_dim.max(1)).take(out_dim);
    Ok(match mode {
        AccumMode::FixedAccum => rows
            .zip(bias)
            .map(|(row, &b)| {
                let acc = dot_fixed(row, zw, &input.data, zx).saturating_add(b);
                (acc as f64 * combined) as f32
            })
            .collect(),
        AccumMode::FloatAccum => {
            let combined = combined as f32;
            rows.zip(bias)
                .map(|(row, &b)| dot_float(row, zw, &input.data, zx) * combined + b as f32 * combined)
                .collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn symmetric_unit_range() {
        let p = compute_quant_params(&[-1.0, 1.0]).unwrap();
        assert_eq!((p.min_val, p.max_val), (-1.0, 1.0));
        assert!((p.scale as f64 - 2.0 / 255.0).abs() < 1e-9);
        assert!((p.scale - 0.0078431).abs() < 1e-7);
        assert_eq!(p.quantize_value(0.0), 128);
        assert_eq!(p.zero_point, 128);
    }

    #[test]
    fn zero_based_range() {
        let p = compute_quant_params(&[0.0, 2.55]).unwrap();
        assert!((p.scale - 0.01).abs() < 1e-7);
        assert_eq!(p.zero_point, 0);
    }

    #[test]
    fn degenerate_ranges_are_rejected() {
        assert!(matches!(compute_quant_params(&[5.0, 5.0]), Err(Error::DegenerateRange(_))));
        assert!(matches!(compute_quant_params(&[]), Err(Error::DegenerateRange(_))));
    }

    #[test]
    fn endpoints_map_to_extreme_levels() {
        let p = QuantParams::from_range(-3.5, 12.25).unwrap();
        assert_eq!(p.quantize_value(-3.5), 0);
        assert_eq!(p.quantize_value(12.25), 255);
        assert_eq!(p.dequantize_value(0), -3.5);
        assert!((p.dequantize_value(255) - 12.25).abs() <= p.step());
        assert_eq!(p.quantize_value(-100.0), 0);
        assert_eq!(p.quantize_value(100.0), 255);
        assert_eq!(p.quantize_value(f32::NAN), 0);
    }

    #[test]
    fn identity_weights_reproduce_the_input() {
        let n = 6;
        let mut w = vec![0.0f32; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        let wp = compute_quant_params(&w).unwrap();
        let wq = quantize(&w, &[n, n], wp).unwrap();
        let v = [-0.9f32, -0.3, 0.0, 0.2, 0.55, 0.99];
        let xp = QuantParams::from_range(-1.0, 1.0).unwrap();
        let xq = quantize(&v, &[n], xp).unwrap();
        for mode in [AccumMode::FixedAccum, AccumMode::FloatAccum] {
            let out = quantized_matvec(&wq, &xq, &[0; 6], mode).unwrap();
            for (o, e) in out.iter().zip(v) {
                assert!(((o - e).abs() as f64) <= 2.0 * xp.step(), "{mode:?}: {o} vs {e}");
            }
        }
    }

    #[test]
    fn zero_weights_yield_the_bias() {
        let wp = QuantParams::from_range(-1.0, 1.0).unwrap();
        let w = quantize(&[0.0; 8], &[2, 4], wp).unwrap();
        let xp = QuantParams::from_range(-5.0, 5.0).unwrap();
        let x = quantize(&[1.0, -2.0, 3.0, 4.9], &[4], xp).unwrap();
        let bias = [1234, -77];
        let combined = wp.scale as f64 * xp.scale as f64;
        let out = quantized_matvec(&w, &x, &bias, AccumMode::FixedAccum).unwrap();
        assert_eq!(out, vec![(1234.0 * combined) as f32, (-77.0 * combined) as f32]);
        let out = quantized_matvec(&w, &x, &bias, AccumMode::FloatAccum).unwrap();
        let c = combined as f32;
        assert_eq!(out, vec![1234.0 * c, -77.0 * c]);
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let p = QuantParams::from_range(0.0, 1.0).unwrap();
        let w = QuantizedTensor::new(vec![0; 6], vec![2, 3], p).unwrap();
        let x = QuantizedTensor::new(vec![0; 4], vec![4], p).unwrap();
        assert!(matches!(
            quantized_matvec(&w, &x, &[0, 0], AccumMode::FixedAccum),
            Err(Error::Dimension(_))
        ));
        assert!(QuantizedTensor::new(vec![0; 5], vec![2, 3], p).is_err());
    }

    #[test]
    fn fixed_accum_is_repeatable() {
        let p = QuantParams::from_range(-0.7, 1.3).unwrap();
        let data: Vec<u8> = (0..64u32).map(|i| (i * 37 % 256) as u8).collect();
        let w = QuantizedTensor::new(data.clone(), vec![8, 8], p).unwrap();
        let x = QuantizedTensor::new(data[..8].to_vec(), vec![8], p).unwrap();
        let a = quantized_matvec(&w, &x, &[3; 8], AccumMode::FixedAccum).unwrap();
        let b = quantized_matvec(&w, &x, &[3; 8], AccumMode::FixedAccum).unwrap();
        let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    proptest! {
        #[test]
        fn round_trip_error_is_half_a_step(lo in -100.0f32..50.0, width in 0.01f32..200.0, t in 0.0f64..=1.0) {
            let hi = lo + width;
            prop_assume!(hi > lo);
            let p = QuantParams::from_range(lo, hi).unwrap();
            let v = (lo as f64 + t * (hi as f64 - lo as f64)) as f32;
            prop_assume!(v >= lo && v <= hi);
            let err = (p.dequantize_value(p.quantize_value(v)) - v as f64).abs();
            prop_assert!(err <= p.step() / 2.0 * (1.0 + 1e-9));
        }

        #[test]
        fn quantization_is_monotone(lo in -10.0f32..0.0, width in 0.1f32..20.0, a in -40.0f32..40.0, b in -40.0f32..40.0) {
            let p = QuantParams::from_range(lo, lo + width).unwrap();
            let (x, y) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(p.quantize_value(x) <= p.quantize_value(y));
        }
    }
}
