//! Triangular mel filterbank over the one-sided power spectrum.

use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Weight 1.0 in the fixed-point filterbank (Q15, stored unsigned so 1.0 fits).
pub const MEL_WEIGHT_ONE: u32 = 1 << 15;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * math::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (math::pow(10.0, mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelFilter {
    /// First FFT bin with non-zero weight.
    pub start_bin: usize,
    pub weights: Vec<f32>,
    pub weights_q15: Vec<u32>,
    pub center_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelBank {
    filters: Vec<MelFilter>,
    num_bins: usize,
}

impl MelBank {
    /// Builds `num_channels` filters with centres evenly spaced on the mel scale
    /// between `low_hz` and `high_hz`. Weights are triangles in the mel domain,
    /// so neighbouring filters sum to 1 between their centres.
    pub fn new(
        num_channels: usize,
        fft_size: usize,
        sample_rate_hz: u32,
        low_hz: f64,
        high_hz: f64,
    ) -> Result<Self> {
        if num_channels == 0 {
            return Err(Error::config("mel bank needs at least one channel"));
        }
        let num_bins = fft_size / 2 + 1;
        let low_mel = hz_to_mel(low_hz);
        let high_mel = hz_to_mel(high_hz);
        let step = (high_mel - low_mel) / (num_channels + 1) as f64;
        let edge = |i: usize| low_mel + step * i as f64;
        let bin_hz = sample_rate_hz as f64 / fft_size as f64;

        let mut filters = Vec::with_capacity(num_channels);
        for k in 0..num_channels {
            let (left, center, right) = (edge(k), edge(k + 1), edge(k + 2));
            let mut start_bin = None;
            let mut weights = Vec::new();
            for bin in 0..num_bins {
                let mel = hz_to_mel(bin as f64 * bin_hz);
                let w = if mel > left && mel <= center {
                    (mel - left) / (center - left)
                } else if mel > center && mel < right {
                    (right - mel) / (right - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    start_bin.get_or_insert(bin);
                    weights.push(w);
                } else if start_bin.is_some() {
                    break;
                }
            }
            let Some(start_bin) = start_bin else {
                return Err(Error::config(alloc::format!(
                    "mel channel {k} covers no FFT bin; use fewer channels or a larger fft"
                )));
            };
            let weights_q15 = weights
                .iter()
                .map(|&w| (math::round(w * MEL_WEIGHT_ONE as f64) as u32).clamp(1, MEL_WEIGHT_ONE))
                .collect();
            filters.push(MelFilter {
                start_bin,
                weights: weights.iter().map(|&w| w as f32).collect(),
                weights_q15,
                center_hz: mel_to_hz(center),
            });
        }
        Ok(Self { filters, num_bins })
    }

    pub fn filters(&self) -> &[MelFilter] {
        &self.filters
    }

    pub fn num_channels(&self) -> usize {
        self.filters.len()
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn apply_f32(&self, power: &[f32], out: &mut Vec<f32>) {
        out.clear();
        out.extend(self.filters.iter().map(|f| {
            f.weights
                .iter()
                .zip(&power[f.start_bin..])
                .map(|(w, p)| w * p)
                .sum::<f32>()
        }));
    }

    /// 64-bit accumulation of `u32` power times Q15 weights.
    pub fn apply_fixed(&self, power: &[u32], out: &mut Vec<u64>) {
        out.clear();
        out.extend(self.filters.iter().map(|f| {
            f.weights_q15
                .iter()
                .zip(&power[f.start_bin..])
                .map(|(&w, &p)| w as u64 * p as u64)
                .sum::<u64>()
        }));
    }

    /// Sum of all filter weights at `bin`.
    pub fn total_weight(&self, bin: usize) -> f64 {
        self.filters
            .iter()
            .filter(|f| bin >= f.start_bin && bin < f.start_bin + f.weights.len())
            .map(|f| f.weights[bin - f.start_bin] as f64)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 125.0, 1000.0, 7500.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-6);
        }
        assert!((hz_to_mel(1000.0) - 1000.0).abs() < 0.5);
    }

    #[test]
    fn weights_partition_the_band() {
        for channels in [32, 40] {
            let bank = MelBank::new(channels, 512, 16_000, 125.0, 7500.0).unwrap();
            let bin_hz = 16_000.0 / 512.0;
            for bin in 0..bank.num_bins() {
                let hz = bin as f64 * bin_hz;
                let total = bank.total_weight(bin);
                if hz > 125.0 && hz < 7500.0 {
                    assert!(total > 0.0 && total <= 1.0 + 1e-6, "bin {bin}: {total}");
                } else {
                    assert_eq!(total, 0.0, "bin {bin} outside band");
                }
            }
            for f in bank.filters() {
                assert!(f.weights.iter().sum::<f32>() > 0.0);
            }
        }
    }

    #[test]
    fn too_many_channels_is_a_config_error() {
        assert!(MelBank::new(128, 64, 16_000, 125.0, 7500.0).is_err());
    }
}
