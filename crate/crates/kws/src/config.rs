//! Flat `key = value` configuration. Blank lines and `#` comments are
//! ignored; unknown keys are rejected.

use std::path::{Path, PathBuf};

use kws_core::cascade::{CascadeConfig, CascadeTiming, MemoryBudget, StageConfig};
use kws_core::decoder::DecoderConfig;
use kws_core::evaluation::EvalConfig;
use kws_core::frontend::{ArithmeticMode, FrontendConfig};
use kws_core::inference::AccumMode;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{key}` at line {line}")]
    UnknownKey { key: String, line: usize },
    #[error("bad value `{value}` for `{key}` at line {line}: {reason}")]
    BadValue { key: String, value: String, line: usize, reason: String },
    #[error("line {line} is not `key = value`")]
    Syntax { line: usize },
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Per-stage detector settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSettings {
    pub threshold: f64,
    pub smoothing_frames: usize,
    pub score_window_frames: usize,
    pub accumulate: AccumMode,
    pub model: Option<PathBuf>,
}

impl Default for StageSettings {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            smoothing_frames: 30,
            score_window_frames: 100,
            accumulate: AccumMode::FixedAccum,
            model: None,
        }
    }
}

impl StageSettings {
    pub fn decoder(&self, num_units: usize) -> DecoderConfig {
        DecoderConfig {
            num_units,
            smoothing_window_frames: self.smoothing_frames,
            score_window_frames: self.score_window_frames,
            threshold: self.threshold.clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub frontend: FrontendConfig,
    pub stage1: StageSettings,
    pub stage2: StageSettings,
    pub timing: CascadeTiming,
    pub catchup_factor: usize,
    pub budget: MemoryBudget,
    pub speaker_threshold: f64,
    pub speaker_accumulate: AccumMode,
    pub speaker_embedding: Option<PathBuf>,
    pub speaker_profile: Option<PathBuf>,
    pub eval_refractory_ms: u64,
    pub eval_hit_window_ms: u64,
    pub power_multiplier: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            frontend: FrontendConfig::default(),
            stage1: StageSettings::default(),
            stage2: StageSettings::default(),
            timing: CascadeTiming::default(),
            catchup_factor: 4,
            budget: MemoryBudget::default(),
            speaker_threshold: 0.7,
            speaker_accumulate: AccumMode::FixedAccum,
            speaker_embedding: None,
            speaker_profile: None,
            eval_refractory_ms: 1000,
            eval_hit_window_ms: 750,
            power_multiplier: 100.0,
        }
    }
}

/// Every accepted key with its meaning, for `--help`.
pub const KEYS: &[(&str, &str)] = &[
    ("frontend.frame_length_ms", "analysis frame length (25)"),
    ("frontend.hop_ms", "frame hop (10)"),
    ("frontend.num_channels", "mel channels (40)"),
    ("frontend.fft_size", "FFT size, power of two (512)"),
    ("frontend.mel_low_hz", "lowest mel edge (125)"),
    ("frontend.mel_high_hz", "highest mel edge (7500)"),
    ("frontend.log_floor", "energy floor before the log (1e-12)"),
    ("frontend.noise_suppression", "true|false (false)"),
    ("frontend.arithmetic", "float|fixed (float)"),
    ("stage1.threshold", "stage-1 trigger threshold (0.5)"),
    ("stage1.smoothing_frames", "posterior smoothing window L (30)"),
    ("stage1.score_window_frames", "score window T_s (100)"),
    ("stage1.accumulate", "fixed|float (fixed)"),
    ("stage1.model", "stage-1 model path"),
    ("stage2.threshold", "stage-2 accept threshold (0.5)"),
    ("stage2.smoothing_frames", "posterior smoothing window L (30)"),
    ("stage2.score_window_frames", "score window T_s (100)"),
    ("stage2.accumulate", "fixed|float (fixed)"),
    ("stage2.model", "stage-2 model path"),
    ("cascade.stage2_window_ms", "streamed audio stage 2 waits for after a trigger (1000)"),
    ("cascade.lookback_ms", "buffered audio stage 2 may accept from (2000)"),
    ("cascade.refractory_ms", "quiet time after a stage-2 decision (1000)"),
    ("cascade.catchup_factor", "stage-2 samples processed per new sample (4)"),
    ("budget.total_bytes", "DSP memory (131072)"),
    ("budget.program_bytes", "program line (25600)"),
    ("budget.tables_bytes", "tables line (12288)"),
    ("budget.buffer_bytes", "audio ring buffer line (64000)"),
    ("budget.model_bytes", "stage-1 model line (13312)"),
    ("speaker.threshold", "cosine acceptance threshold (0.7)"),
    ("speaker.accumulate", "fixed|float (fixed)"),
    ("speaker.embedding", "embedding model path"),
    ("speaker.profile", "speaker profile path"),
    ("eval.refractory_ms", "false-accept de-duplication window (1000)"),
    ("eval.hit_window_ms", "half-width of the positive hit window (750)"),
    ("eval.power_multiplier", "stage-2 cost relative to stage 1 (100)"),
];

pub fn keys_help() -> String {
    let mut s = String::from("config keys (key = value):\n");
    for (k, d) in KEYS {
        s.push_str(&format!("  {k:<28} {d}\n"));
    }
    s
}

fn parse_accum(v: &str) -> Result<AccumMode, String> {
    match v {
        "fixed" => Ok(AccumMode::FixedAccum),
        "float" => Ok(AccumMode::FloatAccum),
        _ => Err("expected fixed or float".into()),
    }
}

pub fn parse_arithmetic(v: &str) -> Result<ArithmeticMode, String> {
    match v {
        "fixed" => Ok(ArithmeticMode::FixedPoint),
        "float" => Ok(ArithmeticMode::Float),
        _ => Err("expected fixed or float".into()),
    }
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn finite(v: &str) -> Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err("not finite".into())
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value).map_err(|e| match e {
                None => ConfigError::UnknownKey { key: key.into(), line },
                Some(reason) => ConfigError::BadValue { key: key.into(), value: value.into(), line, reason },
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
                    path: p.display().to_string(),
                    reason: e.to_string(),
                })?;
                Self::parse(&text)
            }
        }
    }

    /// `Err(None)` for an unknown key.
    fn set(&mut self, key: &str, v: &str) -> Result<(), Option<String>> {
        let fe = &mut self.frontend;
        match key {
            "frontend.frame_length_ms" => fe.frame_length_ms = num(v)?,
            "frontend.hop_ms" => fe.hop_ms = num(v)?,
            "frontend.num_channels" => fe.num_channels = num(v)?,
            "frontend.fft_size" => fe.fft_size = num(v)?,
            "frontend.mel_low_hz" => fe.mel_low_hz = num(v)?,
            "frontend.mel_high_hz" => fe.mel_high_hz = num(v)?,
            "frontend.log_floor" => fe.log_floor = num(v)?,
            "frontend.noise_suppression" => fe.noise_suppression_enabled = num(v)?,
            "frontend.arithmetic" => fe.arithmetic_mode = parse_arithmetic(v)?,
            "cascade.stage2_window_ms" => self.timing.stage2_window_ms = num(v)?,
            "cascade.lookback_ms" => self.timing.lookback_ms = num(v)?,
            "cascade.refractory_ms" => self.timing.refractory_ms = num(v)?,
            "cascade.catchup_factor" => self.catchup_factor = num(v)?,
            "budget.total_bytes" => self.budget.total_bytes = num(v)?,
            "budget.program_bytes" => self.budget.program_bytes = num(v)?,
            "budget.tables_bytes" => self.budget.tables_bytes = num(v)?,
            "budget.buffer_bytes" => self.budget.buffer_bytes = num(v)?,
            "budget.model_bytes" => self.budget.model_budget_bytes = num(v)?,
            "speaker.threshold" => self.speaker_threshold = finite(v)?,
            "speaker.accumulate" => self.speaker_accumulate = parse_accum(v)?,
            "speaker.embedding" => self.speaker_embedding = Some(v.into()),
            "speaker.profile" => self.speaker_profile = Some(v.into()),
            "eval.refractory_ms" => self.eval_refractory_ms = num(v)?,
            "eval.hit_window_ms" => self.eval_hit_window_ms = num(v)?,
            "eval.power_multiplier" => self.power_multiplier = finite(v)?,
            _ => {
                let (stage, field) = key.split_once('.').ok_or(None)?;
                let s = match stage {
                    "stage1" => &mut self.stage1,
                    "stage2" => &mut self.stage2,
                    _ => return Err(None),
                };
                match field {
                    "threshold" => s.threshold = finite(v)?,
                    "smoothing_frames" => s.smoothing_frames = num(v)?,
                    "score_window_frames" => s.score_window_frames = num(v)?,
                    "accumulate" => s.accumulate = parse_accum(v)?,
                    "model" => s.model = Some(v.into()),
                    _ => return Err(None),
                }
            }
        }
        Ok(())
    }

    pub fn stage_config(&self, settings: &StageSettings, num_units: usize) -> StageConfig {
        StageConfig {
            frontend: self.frontend.clone(),
            decoder: settings.decoder(num_units),
            accumulate: settings.accumulate,
        }
    }

    pub fn cascade(&self, stage1_units: usize, stage2_units: usize) -> CascadeConfig {
        CascadeConfig {
            stage1: self.stage_config(&self.stage1, stage1_units),
            stage2: self.stage_config(&self.stage2, stage2_units),
            stage1_threshold: self.stage1.threshold,
            stage2_threshold: self.stage2.threshold,
            timing: self.timing,
            budget: self.budget,
            stage2_catchup_factor: self.catchup_factor,
            speaker_accumulate: self.speaker_accumulate,
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            refractory_ms: self.eval_refractory_ms,
            hit_window_ms: self.eval_hit_window_ms,
            timing: self.timing,
        }
    }
}
