//! Log-mel filterbank frontend for 16 kHz, 16-bit mono PCM.
//!
//! Two arithmetic modes share framing and table construction:
//!
//! * [`ArithmeticMode::Float`] works in `f32` on samples normalised to [-1, 1).
//! * [`ArithmeticMode::FixedPoint`] emulates a DSP datapath and is bit-exact
//!   on every platform:
//!
//! | stage            | storage                  | accumulator |
//! |------------------|--------------------------|-------------|
//! | window           | Q15 `i16` coefficients   | `i32`       |
//! | FFT              | Q15 in `i32` lanes       | `i32`, 1/2 per stage |
//! | power            | `u32`                    | `i64`       |
//! | mel filterbank   | Q15 `u32` weights        | `u64`       |
//! | log              | Q16 `i32` natural log    | `u128` squaring |
//!
//! The fixed mel energy equals the float one times `2^(45 - 2*log2(fft_size))`;
//! the log stage removes that offset so both modes report the same quantity.

mod fft;
mod mel;
mod noise;

use alloc::vec;
use alloc::vec::Vec;

pub use fft::{FixedFft, FloatFft};
pub use mel::{hz_to_mel, mel_to_hz, MelBank, MelFilter, MEL_WEIGHT_ONE};
pub use noise::{noise_suppress, NoiseTracker, PowerValue, WARM_UP_FRAMES};

use crate::math;
use crate::{Error, Result};

pub const SAMPLE_RATE_HZ: u32 = 16_000;
pub const SAMPLES_PER_MS: u32 = SAMPLE_RATE_HZ / 1000;
/// Fraction bits of the fixed-point log output.
pub const LOG_Q_SHIFT: u32 = 16;
/// ln(2) in Q32.
const LN2_Q32: i64 = 2_977_044_472;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioChunk {
    pub samples: Vec<i16>,
    pub sample_rate_hz: u32,
}

impl AudioChunk {
    pub fn new(samples: Vec<i16>) -> Self {
        Self {
            samples,
            sample_rate_hz: SAMPLE_RATE_HZ,
        }
    }

    pub fn with_rate(samples: Vec<i16>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::config(alloc::format!(
                "sample rate {sample_rate_hz} Hz unsupported, expected {SAMPLE_RATE_HZ}"
            )));
        }
        Ok(Self::new(samples))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_ms(&self) -> u64 {
        self.samples.len() as u64 / SAMPLES_PER_MS as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithmeticMode {
    Float,
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub frame_length_ms: u32,
    pub hop_ms: u32,
    pub num_channels: usize,
    pub fft_size: usize,
    pub mel_low_hz: f32,
    pub mel_high_hz: f32,
    /// Floor applied to mel energies before the log.
    pub log_floor: f32,
    pub noise_suppression_enabled: bool,
    pub arithmetic_mode: ArithmeticMode,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            frame_length_ms: 25,
            hop_ms: 10,
            num_channels: 40,
            fft_size: 512,
            mel_low_hz: 125.0,
            mel_high_hz: 7500.0,
            log_floor: 1e-12,
            noise_suppression_enabled: false,
            arithmetic_mode: ArithmeticMode::Float,
        }
    }
}

impl FrontendConfig {
    pub fn frame_samples(&self) -> usize {
        (self.frame_length_ms * SAMPLES_PER_MS) as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * SAMPLES_PER_MS) as usize
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Natural log of the floor; the smallest value any channel can take.
    pub fn log_floor_value(&self) -> f32 {
        match self.arithmetic_mode {
            ArithmeticMode::Float => math::ln(self.log_floor as f64) as f32,
            ArithmeticMode::FixedPoint => fixed_log_floor(self.log_floor) as f32 / (1u32 << LOG_Q_SHIFT) as f32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_length_ms == 0 || self.hop_ms == 0 {
            return Err(Error::config("frame length and hop must be positive"));
        }
        if !(1..=128).contains(&self.num_channels) {
            return Err(Error::config(alloc::format!(
                "num_channels {} outside 1..=128",
                self.num_channels
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::config(alloc::format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if self.fft_size < self.frame_samples() {
            return Err(Error::config(alloc::format!(
                "frame of {} samples is longer than fft_size {}",
                self.frame_samples(),
                self.fft_size
            )));
        }
        let nyquist = SAMPLE_RATE_HZ as f32 / 2.0;
        if !(self.mel_low_hz >= 0.0 && self.mel_low_hz < self.mel_high_hz && self.mel_high_hz <= nyquist) {
            return Err(Error::config(alloc::format!(
                "mel range {}..{} Hz must satisfy 0 <= low < high <= {nyquist}",
                self.mel_low_hz,
                self.mel_high_hz
            )));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return Err(Error::config("log_floor must be a positive finite number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    /// Log-mel energies, one per channel.
    pub channels: Vec<f32>,
    pub frame_index: u64,
    /// Start of the frame relative to the start of the stream.
    pub timestamp_ms: u64,
}

impl FeatureFrame {
    pub fn append_le_bytes(&self, out: &mut Vec<u8>) {
        for c in &self.channels {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrameData {
    /// Windowed samples in [-1, 1), zero-padded to `fft_size`.
    Float(Vec<f32>),
    /// Windowed Q15 samples, zero-padded to `fft_size`.
    Fixed(Vec<i32>),
}

impl FrameData {
    pub fn len(&self) -> usize {
        match self {
            FrameData::Float(v) => v.len(),
            FrameData::Fixed(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedFrame {
    pub frame_index: u64,
    pub start_sample: u64,
    pub data: FrameData,
}

/// One-sided power spectrum in the representation of the active mode.
#[derive(Debug, Clone, PartialEq)]
pub enum PowerSpectrum {
    Float(Vec<f32>),
    Fixed(Vec<u32>),
}

/// Number of frames `frame_audio` yields for `len` samples.
pub fn frame_count(len: usize, frame: usize, hop: usize) -> usize {
    if len < frame {
        0
    } else {
        (len - frame) / hop + 1
    }
}

/// Precomputed window, FFT and filterbank tables for one configuration.
#[derive(Debug, Clone)]
pub struct FrontendTables {
    config: FrontendConfig,
    window: Vec<f32>,
    window_q15: Vec<i16>,
    float_fft: FloatFft,
    fixed_fft: FixedFft,
    mel: MelBank,
    log_floor_q16: i32,
    /// Exponent relating fixed mel energies to float ones.
    fixed_scale_bits: i64,
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * math::cos(2.0 * core::f64::consts::PI * i as f64 / n as f64))
        .collect()
}

fn fixed_log_floor(floor: f32) -> i32 {
    // ceil keeps every fixed output >= ln(floor)
    math::ceil(math::ln(floor as f64) * (1u64 << LOG_Q_SHIFT) as f64) as i32
}

impl FrontendTables {
    pub fn new(config: &FrontendConfig) -> Result<Self> {
        config.validate()?;
        let w = hann(config.frame_samples());
        let mel = MelBank::new(
            config.num_channels,
            config.fft_size,
            SAMPLE_RATE_HZ,
            config.mel_low_hz as f64,
            config.mel_high_hz as f64,
        )?;
        let fixed_fft = FixedFft::new(config.fft_size)?;
        let stages = fixed_fft.stages() as i64;
        Ok(Self {
            window: w.iter().map(|&v| v as f32).collect(),
            window_q15: w
                .iter()
                .map(|&v| math::round(v * 32768.0).min(i16::MAX as f64) as i16)
                .collect(),
            float_fft: FloatFft::new(config.fft_size)?,
            fixed_fft,
            mel,
            log_floor_q16: fixed_log_floor(config.log_floor),
            fixed_scale_bits: 2 * (15 - stages) + 15,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn mel(&self) -> &MelBank {
        &self.mel
    }

    /// Windows `samples[start..start + frame]` and zero-pads to `fft_size`.
    pub fn window_frame(&self, samples: &[i16], frame_index: u64, start_sample: u64) -> WindowedFrame {
        let n = self.config.fft_size;
        debug_assert_eq!(samples.len(), self.window.len());
        let data = match self.config.arithmetic_mode {
            ArithmeticMode::Float => {
                let mut v = vec![0.0f32; n];
                for ((o, &s), &w) in v.iter_mut().zip(samples).zip(&self.window) {
                    *o = s as f32 / 32768.0 * w;
                }
                FrameData::Float(v)
            }
            ArithmeticMode::FixedPoint => {
                let mut v = vec![0i32; n];
                for ((o, &s), &w) in v.iter_mut().zip(samples).zip(&self.window_q15) {
                    *o = fft::round_shift_i32(s as i32 * w as i32, fft::Q15_SHIFT);
                }
                FrameData::Fixed(v)
            }
        };
        WindowedFrame {
            frame_index,
            start_sample,
            data,
        }
    }

    pub fn power_spectrum(&self, frame: &WindowedFrame) -> Result<PowerSpectrum> {
        let n = self.config.fft_size;
        if frame.data.len() != n {
            return Err(Error::dimension(alloc::format!(
                "frame has {} samples, fft_size is {n}",
                frame.data.len()
            )));
        }
        let bins = self.config.num_bins();
        Ok(match &frame.data {
            FrameData::Float(x) => {
                let mut re = x.clone();
                let mut im = vec![0.0f32; n];
                self.float_fft.forward(&mut re, &mut im);
                PowerSpectrum::Float((0..bins).map(|k| re[k] * re[k] + im[k] * im[k]).collect())
            }
            FrameData::Fixed(x) => {
                let mut re = x.clone();
                let mut im = vec![0i32; n];
                self.fixed_fft.forward(&mut re, &mut im);
                PowerSpectrum::Fixed(
                    (0..bins)
                        .map(|k| {
                            let p = re[k] as i64 * re[k] as i64 + im[k] as i64 * im[k] as i64;
                            p.min(u32::MAX as i64) as u32
                        })
                        .collect(),
                )
            }
        })
    }

    /// Mel filterbank plus floored natural log.
    pub fn log_mel_from_power(&self, power: &PowerSpectrum, frame_index: u64) -> FeatureFrame {
        let channels = match power {
            PowerSpectrum::Float(p) => {
                let mut energies = Vec::with_capacity(self.mel.num_channels());
                self.mel.apply_f32(p, &mut energies);
                let floor = self.config.log_floor;
                energies
                    .iter()
                    .map(|&e| math::ln(e.max(floor) as f64) as f32)
                    .collect()
            }
            PowerSpectrum::Fixed(p) => {
                let mut energies = Vec::with_capacity(self.mel.num_channels());
                self.mel.apply_fixed(p, &mut energies);
                energies
                    .iter()
                    .map(|&e| {
                        let q = fixed_ln_q16(e, self.fixed_scale_bits).map_or(self.log_floor_q16, |v| v.max(self.log_floor_q16));
                        q as f32 / (1u32 << LOG_Q_SHIFT) as f32
                    })
                    .collect()
            }
        };
        FeatureFrame {
            channels,
            frame_index,
            timestamp_ms: frame_index * self.config.hop_ms as u64,
        }
    }

    pub fn log_mel(&self, frame: &WindowedFrame) -> Result<FeatureFrame> {
        let power = self.power_spectrum(frame)?;
        Ok(self.log_mel_from_power(&power, frame.frame_index))
    }
}

/// log2(x) in Q16 for x > 0, by normalisation and repeated squaring.
pub fn fixed_log2_q16(x: u64) -> Option<i64> {
    if x == 0 {
        return None;
    }
    let int_part = 63 - x.leading_zeros() as i64;
    // mantissa in [1, 2) as Q63
    let mut m: u128 = (x as u128) << (63 - int_part);
    let mut frac: i64 = 0;
    for _ in 0..LOG_Q_SHIFT {
        m = (m * m) >> 63;
        frac <<= 1;
        if m >= 1u128 << 64 {
            m >>= 1;
            frac |= 1;
        }
    }
    Some((int_part << LOG_Q_SHIFT) + frac)
}

/// ln(x / 2^scale_bits) in Q16.
fn fixed_ln_q16(x: u64, scale_bits: i64) -> Option<i32> {
    let log2 = fixed_log2_q16(x)? - (scale_bits << LOG_Q_SHIFT);
    let prod = log2 * LN2_Q32;
    // round half up, arithmetic shift
    Some(((prod + (1i64 << 31)) >> 32) as i32)
}

/// Splits a chunk into windowed, zero-padded frames.
pub fn frame_audio(chunk: &AudioChunk, config: &FrontendConfig) -> Result<Vec<WindowedFrame>> {
    let tables = FrontendTables::new(config)?;
    Ok(frame_with(&tables, &chunk.samples))
}

fn frame_with(tables: &FrontendTables, samples: &[i16]) -> Vec<WindowedFrame> {
    let cfg = tables.config();
    let (frame, hop) = (cfg.frame_samples(), cfg.hop_samples());
    (0..frame_count(samples.len(), frame, hop))
        .map(|i| {
            let start = i * hop;
            tables.window_frame(&samples[start..start + frame], i as u64, start as u64)
        })
        .collect()
}

/// Single-frame log-mel, without noise suppression.
pub fn log_mel_spectrum(frame: &WindowedFrame, config: &FrontendConfig) -> Result<FeatureFrame> {
    FrontendTables::new(config)?.log_mel(frame)
}

#[derive(Debug, Clone)]
enum Suppressor {
    Float(NoiseTracker<f32>),
    Fixed(NoiseTracker<u32>),
}

/// Streaming frontend. Accepts audio in arbitrary pieces and emits a feature
/// frame as soon as its last sample arrives.
#[derive(Debug, Clone)]
pub struct Frontend {
    tables: FrontendTables,
    pending: Vec<i16>,
    /// Absolute index of `pending[0]`.
    pending_start: u64,
    next_frame: u64,
    suppressor: Option<Suppressor>,
}

impl Frontend {
    pub fn new(config: &FrontendConfig) -> Result<Self> {
        let tables = FrontendTables::new(config)?;
        let bins = config.num_bins();
        let suppressor = config.noise_suppression_enabled.then(|| match config.arithmetic_mode {
            ArithmeticMode::Float => Suppressor::Float(NoiseTracker::new(bins)),
            ArithmeticMode::FixedPoint => Suppressor::Fixed(NoiseTracker::new(bins)),
        });
        Ok(Self {
            tables,
            pending: Vec::with_capacity(config.frame_samples() * 2),
            pending_start: 0,
            next_frame: 0,
            suppressor,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        self.tables.config()
    }

    pub fn tables(&self) -> &FrontendTables {
        &self.tables
    }

    /// Absolute sample count at which the next frame completes.
    pub fn next_frame_end(&self) -> u64 {
        let cfg = self.config();
        self.next_frame * cfg.hop_samples() as u64 + cfg.frame_samples() as u64
    }

    pub fn samples_seen(&self) -> u64 {
        self.pending_start + self.pending.len() as u64
    }

    pub fn reset(&mut self) {
        self.pending.clear();
        self.pending_start = 0;
        self.next_frame = 0;
        match &mut self.suppressor {
            Some(Suppressor::Float(t)) => t.reset(),
            Some(Suppressor::Fixed(t)) => t.reset(),
            None => {}
        }
    }

    pub fn push(&mut self, samples: &[i16], out: &mut Vec<FeatureFrame>) {
        self.pending.extend_from_slice(samples);
        let (frame, hop) = (self.config().frame_samples(), self.config().hop_samples());
        loop {
            let start = self.next_frame * hop as u64;
            let offset = (start - self.pending_start) as usize;
            if offset + frame > self.pending.len() {
                break;
            }
            let windowed = self
                .tables
                .window_frame(&self.pending[offset..offset + frame], self.next_frame, start);
            // frame length equals fft_size by construction
            let mut power = self.tables.power_spectrum(&windowed).expect("frame sized by tables");
            match (&mut self.suppressor, &mut power) {
                (Some(Suppressor::Float(t)), PowerSpectrum::Float(p)) => t.process(p),
                (Some(Suppressor::Fixed(t)), PowerSpectrum::Fixed(p)) => t.process(p),
                _ => {}
            }
            out.push(self.tables.log_mel_from_power(&power, self.next_frame));
            self.next_frame += 1;
        }
        let keep_from = (self.next_frame * hop as u64).saturating_sub(self.pending_start) as usize;
        let keep_from = keep_from.min(self.pending.len());
        self.pending.drain(..keep_from);
        self.pending_start += keep_from as u64;
    }

    /// Convenience: runs a fresh copy of this frontend over a whole chunk.
    pub fn process_chunk(config: &FrontendConfig, chunk: &AudioChunk) -> Result<Vec<FeatureFrame>> {
        let mut fe = Frontend::new(config)?;
        let mut out = Vec::new();
        fe.push(&chunk.samples, &mut out);
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
