//! Radix-2 decimation-in-time FFTs, one in `f32` and one in Q15 fixed point.
//!
//! Fixed-point layout:
//! - data lanes are `i32` holding Q15 values; magnitudes never exceed
//!   `2^15 + log2(n)` because every stage scales by 1/2;
//! - twiddles are Q15 `i16`, rounded from `libm` cos/sin;
//! - complex products accumulate in `i32` (|w| <= 1 keeps them below 2^31);
//! - every shift rounds half up (`(x + (1 << (s - 1))) >> s`).
//!
//! Output of the fixed transform is the true DFT scaled by `1/n`.

use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Bits of fraction in Q15 values.
pub const Q15_SHIFT: u32 = 15;

fn bit_reverse_table(n: usize) -> Vec<u32> {
    let bits = n.trailing_zeros();
    (0..n as u32)
        .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (32 - bits) })
        .collect()
}

fn check_size(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::config(alloc::format!(
            "fft size {n} is not a power of two >= 2"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FloatFft {
    n: usize,
    twiddles: Vec<(f32, f32)>,
    bitrev: Vec<u32>,
}

impl FloatFft {
    pub fn new(n: usize) -> Result<Self> {
        check_size(n)?;
        let twiddles = (0..n / 2)
            .map(|k| {
                let phase = -2.0 * core::f64::consts::PI * k as f64 / n as f64;
                (math::cos(phase) as f32, math::sin(phase) as f32)
            })
            .collect();
        Ok(Self {
            n,
            twiddles,
            bitrev: bit_reverse_table(n),
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// In-place forward transform. `re` and `im` must both be `n` long.
    pub fn forward(&self, re: &mut [f32], im: &mut [f32]) {
        assert!(re.len() == self.n && im.len() == self.n);
        permute(re, im, &self.bitrev);
        let mut half = 1;
        while half < self.n {
            let stride = self.n / (2 * half);
            for start in (0..self.n).step_by(2 * half) {
                for k in 0..half {
                    let (wr, wi) = self.twiddles[k * stride];
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            half *= 2;
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedFft {
    n: usize,
    twiddles: Vec<(i16, i16)>,
    bitrev: Vec<u32>,
}

#[inline]
pub(crate) fn round_shift_i32(x: i32, shift: u32) -> i32 {
    if shift == 0 {
        x
    } else {
        x.wrapping_add(1 << (shift - 1)) >> shift
    }
}

pub(crate) fn to_q15(x: f64) -> i16 {
    let v = math::round(x * 32768.0);
    v.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

impl FixedFft {
    pub fn new(n: usize) -> Result<Self> {
        check_size(n)?;
        let twiddles = (0..n / 2)
            .map(|k| {
                let phase = -2.0 * core::f64::consts::PI * k as f64 / n as f64;
                (to_q15(math::cos(phase)), to_q15(math::sin(phase)))
            })
            .collect();
        Ok(Self {
            n,
            twiddles,
            bitrev: bit_reverse_table(n),
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Scale exponent of the output: result == DFT / 2^stages.
    pub fn stages(&self) -> u32 {
        self.n.trailing_zeros()
    }

    /// In-place forward transform on Q15 lanes, scaled by 1/2 per stage.
    pub fn forward(&self, re: &mut [i32], im: &mut [i32]) {
        assert!(re.len() == self.n && im.len() == self.n);
        permute(re, im, &self.bitrev);
        let mut half = 1;
        while half < self.n {
            let stride = self.n / (2 * half);
            for start in (0..self.n).step_by(2 * half) {
                for k in 0..half {
                    let (wr, wi) = self.twiddles[k * stride];
                    let (wr, wi) = (wr as i32, wi as i32);
                    let a = start + k;
                    let b = a + half;
                    let tr = round_shift_i32(re[b] * wr - im[b] * wi, Q15_SHIFT);
                    let ti = round_shift_i32(re[b] * wi + im[b] * wr, Q15_SHIFT);
                    let (ar, ai) = (re[a], im[a]);
                    re[a] = round_shift_i32(ar + tr, 1);
                    im[a] = round_shift_i32(ai + ti, 1);
                    re[b] = round_shift_i32(ar - tr, 1);
                    im[b] = round_shift_i32(ai - ti, 1);
                }
            }
            half *= 2;
        }
    }
}

fn permute<T>(re: &mut [T], im: &mut [T], bitrev: &[u32]) {
    for (i, &j) in bitrev.iter().enumerate() {
        let j = j as usize;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
}
