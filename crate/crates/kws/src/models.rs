//! Hand-built models and synthetic audio for demos and end-to-end tests.
//!
//! A tone encoder gives unit `i` a logit of
//! `gain * (x[k_i] - (x[k_i - 3] + x[k_i + 3]) / 2) - bias` over log-mel input
//! `x`, so a pure tone at the centre of mel channel `k_i` fires unit `i` while
//! silence and broadband noise leave everything on the filler.

use std::f64::consts::PI;

use anyhow::Result;
use kws_core::frontend::{FrontendConfig, MelBank, SAMPLE_RATE_HZ};
use kws_core::inference::{Activation, EmbeddingModel, EncoderModel, InputSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::modeltext::{FloatLayer, FloatModel};

/// Calibrated log-mel range for the default frontend.
pub const LOG_MEL_RANGE: (f32, f32) = (-28.0, 28.0);
const NEIGHBOUR: usize = 3;

pub fn mel_bank(cfg: &FrontendConfig) -> Result<MelBank> {
    Ok(MelBank::new(cfg.num_channels, cfg.fft_size, SAMPLE_RATE_HZ, cfg.mel_low_hz as f64, cfg.mel_high_hz as f64)?)
}

pub fn channel_center_hz(cfg: &FrontendConfig, channel: usize) -> Result<f64> {
    Ok(mel_bank(cfg)?.filters()[channel].center_hz)
}

/// Float description of a tone encoder over single frames.
pub fn tone_encoder_text(cfg: &FrontendConfig, channels: &[usize], gain: f32, bias: f32, name: &str) -> FloatModel {
    let c = cfg.num_channels;
    let m = channels.len();
    let mut weights = vec![0.0f32; (m + 1) * c];
    for (i, &k) in channels.iter().enumerate() {
        let row = &mut weights[i * c..(i + 1) * c];
        row[k] += gain;
        row[k.saturating_sub(NEIGHBOUR)] -= gain / 2.0;
        row[(k + NEIGHBOUR).min(c - 1)] -= gain / 2.0;
    }
    let mut b = vec![-bias; m];
    b.push(0.0);
    FloatModel {
        embedding: false,
        name: name.into(),
        units: m,
        input: InputSpec { num_channels: c, num_stacked_frames: 1 },
        layers: vec![FloatLayer {
            in_dim: c,
            out_dim: m + 1,
            activation: Activation::Softmax,
            input_range: LOG_MEL_RANGE,
            weights,
            bias: b,
        }],
    }
}

pub fn tone_encoder(cfg: &FrontendConfig, channels: &[usize], gain: f32, bias: f32, name: &str) -> Result<EncoderModel> {
    match tone_encoder_text(cfg, channels, gain, bias, name).quantize()? {
        kws_core::inference::Model::Encoder(e) => Ok(e),
        kws_core::inference::Model::Embedding(_) => unreachable!("tone models are encoders"),
    }
}

/// Two-layer encoder with random weights, `channels -> hidden -> units + 1`.
pub fn dense_encoder_text(seed: u64, channels: usize, hidden: usize, units: usize, name: &str) -> FloatModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_vec = |n: usize, amp: f32| -> Vec<f32> { (0..n).map(|_| rng.random_range(-amp..amp)).collect() };
    FloatModel {
        embedding: false,
        name: name.into(),
        units,
        input: InputSpec { num_channels: channels, num_stacked_frames: 1 },
        layers: vec![
            FloatLayer {
                in_dim: channels,
                out_dim: hidden,
                activation: Activation::Relu,
                input_range: LOG_MEL_RANGE,
                weights: rand_vec(channels * hidden, 0.1),
                bias: rand_vec(hidden, 0.5),
            },
            FloatLayer {
                in_dim: hidden,
                out_dim: units + 1,
                activation: Activation::Softmax,
                input_range: (0.0, 8.0),
                weights: rand_vec(hidden * (units + 1), 0.3),
                bias: rand_vec(units + 1, 0.5),
            },
        ],
    }
}

/// Single linear layer `channels -> dim` with random weights.
pub fn random_embedding_text(seed: u64, channels: usize, dim: usize) -> FloatModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..channels * dim).map(|_| rng.random_range(-0.2f32..0.2)).collect();
    let bias = (0..dim).map(|_| rng.random_range(-0.5f32..0.5)).collect();
    FloatModel {
        embedding: true,
        name: "embedding".into(),
        units: 0,
        input: InputSpec { num_channels: channels, num_stacked_frames: 1 },
        layers: vec![FloatLayer {
            in_dim: channels,
            out_dim: dim,
            activation: Activation::None,
            input_range: LOG_MEL_RANGE,
            weights,
            bias,
        }],
    }
}

pub fn random_embedding(seed: u64, channels: usize, dim: usize) -> Result<EmbeddingModel> {
    match random_embedding_text(seed, channels, dim).quantize()? {
        kws_core::inference::Model::Embedding(e) => Ok(e),
        kws_core::inference::Model::Encoder(_) => unreachable!("embedding text"),
    }
}

/// A keyword made of consecutive tones, one per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneKeyword {
    pub channels: Vec<usize>,
    pub tone_ms: u32,
    pub amplitude: f64,
}

impl ToneKeyword {
    pub fn duration_samples(&self) -> usize {
        self.channels.len() * self.tone_ms as usize * 16
    }

    /// Renders the keyword; `harmonic` adds a second partial at twice the
    /// frequency with that relative level, a crude voice colour.
    pub fn render(&self, cfg: &FrontendConfig, harmonic: f64) -> Result<Vec<i16>> {
        let bank = mel_bank(cfg)?;
        let n = self.tone_ms as usize * 16;
        let ramp = 160.min(n / 2);
        let mut out = Vec::with_capacity(self.duration_samples());
        for &k in &self.channels {
            let f = bank.filters()[k].center_hz;
            for i in 0..n {
                let env = if i < ramp {
                    0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos()
                } else if i >= n - ramp {
                    0.5 - 0.5 * (PI * (n - i) as f64 / ramp as f64).cos()
                } else {
                    1.0
                };
                let t = i as f64 / SAMPLE_RATE_HZ as f64;
                let s = (2.0 * PI * f * t).sin() + harmonic * (4.0 * PI * f * t).sin();
                out.push((self.amplitude * env * s / (1.0 + harmonic)).round() as i16);
            }
        }
        Ok(out)
    }
}

pub fn white_noise(seed: u64, n: usize, std_dev: f64) -> Vec<i16> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std_dev).expect("positive deviation");
    (0..n)
        .map(|_| normal.sample(&mut rng).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
        .collect()
}

/// Adds `src` into `dst` starting at `at`, saturating.
pub fn mix_into(dst: &mut [i16], at: usize, src: &[i16]) {
    for (d, &s) in dst[at..].iter_mut().zip(src) {
        *d = d.saturating_add(s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kws_core::frontend::Frontend;
    use kws_core::frontend::AudioChunk;
    use kws_core::inference::{encoder_forward, AccumMode};

    #[test]
    fn log_mel_range_covers_tones_and_silence() {
        let cfg = FrontendConfig::default();
        let kw = ToneKeyword { channels: vec![8, 16, 24], tone_ms: 300, amplitude: 12000.0 };
        let mut audio = vec![0i16; 8000];
        audio.extend(kw.render(&cfg, 0.0).unwrap());
        let frames = Frontend::process_chunk(&cfg, &AudioChunk::new(audio)).unwrap();
        let (lo, hi) = frames
            .iter()
            .flat_map(|f| f.channels.iter())
            .fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(lo >= LOG_MEL_RANGE.0 && hi <= LOG_MEL_RANGE.1, "{lo} {hi}");
    }

    #[test]
    fn tone_units_fire_in_order() {
        let cfg = FrontendConfig::default();
        let model = tone_encoder(&cfg, &[8, 16, 24], 2.0, 10.0, "tones").unwrap();
        let kw = ToneKeyword { channels: vec![8, 16, 24], tone_ms: 300, amplitude: 12000.0 };
        let mut audio = white_noise(1, 8000, 30.0);
        audio.extend(kw.render(&cfg, 0.0).unwrap());
        let frames = Frontend::process_chunk(&cfg, &AudioChunk::new(audio)).unwrap();
        let post = encoder_forward(&frames, &model, AccumMode::FixedAccum).unwrap();
        // noise lead-in stays on the filler
        assert!(post[..40].iter().all(|p| p.filler_posterior > 0.99));
        for (unit, centre_frame) in [(0, 65), (1, 95), (2, 125)] {
            let p = &post[centre_frame];
            assert!(p.keyword_posteriors[unit] > 0.95, "unit {unit}: {p:?}");
        }
    }
}
