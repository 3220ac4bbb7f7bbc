use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::decoder::{DecoderConfig, KeywordHypothesis, StreamingDecoder};
use crate::frontend::{FeatureFrame, Frontend, FrontendConfig, SAMPLES_PER_MS};
use crate::inference::{AccumMode, EncoderModel, FrameStacker};
use crate::{Error, Result};

/// Everything a single keyword detector needs besides its model.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub frontend: FrontendConfig,
    pub decoder: DecoderConfig,
    pub accumulate: AccumMode,
}

impl StageConfig {
    pub fn new(num_units: usize) -> Self {
        Self {
            frontend: FrontendConfig::default(),
            decoder: DecoderConfig::new(num_units),
            accumulate: AccumMode::FixedAccum,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Stream time of the end of the frame that produced the hypothesis.
    pub time_ms: u64,
    pub hypothesis: KeywordHypothesis,
}

/// Frontend, frame stacker, encoder and streaming decoder run back to back.
#[derive(Debug, Clone)]
pub struct KeywordDetector {
    config: StageConfig,
    frontend: Frontend,
    stacker: FrameStacker,
    model: Arc<EncoderModel>,
    decoder: StreamingDecoder,
    /// Stream sample at which this detector's audio starts.
    sample_offset: u64,
    keep_features: bool,
    features: Vec<FeatureFrame>,
    scratch: Vec<FeatureFrame>,
}

impl KeywordDetector {
    pub fn new(config: StageConfig, model: Arc<EncoderModel>) -> Result<Self> {
        config.frontend.validate()?;
        let spec = model.input_spec();
        if spec.num_channels != config.frontend.num_channels {
            return Err(Error::dimension(format!(
                "model expects {} channels, frontend produces {}",
                spec.num_channels, config.frontend.num_channels
            )));
        }
        if model.num_units() != config.decoder.num_units {
            return Err(Error::dimension(format!(
                "model has {} units, decoder configured for {}",
                model.num_units(),
                config.decoder.num_units
            )));
        }
        Ok(Self {
            frontend: Frontend::new(&config.frontend)?,
            stacker: FrameStacker::new(spec),
            decoder: StreamingDecoder::new(config.decoder)?,
            model,
            config,
            sample_offset: 0,
            keep_features: false,
            features: Vec::new(),
            scratch: Vec::new(),
        })
    }

    /// Places sample 0 of this detector at `sample_offset` in the stream.
    pub fn with_offset(mut self, sample_offset: u64) -> Self {
        self.sample_offset = sample_offset;
        self
    }

    pub fn keeping_features(mut self) -> Self {
        self.keep_features = true;
        self
    }

    pub fn config(&self) -> &StageConfig {
        &self.config
    }

    pub fn model(&self) -> &Arc<EncoderModel> {
        &self.model
    }

    pub fn features(&self) -> &[FeatureFrame] {
        &self.features
    }

    /// Absolute stream sample at which the next frame completes.
    pub fn next_frame_end(&self) -> u64 {
        self.sample_offset + self.frontend.next_frame_end()
    }

    pub fn samples_seen(&self) -> u64 {
        self.sample_offset + self.frontend.samples_seen()
    }

    /// Stream time at the end of local frame `index`.
    pub fn frame_end_ms(&self, index: u64) -> u64 {
        let fe = &self.config.frontend;
        (self.sample_offset + index * fe.hop_samples() as u64 + fe.frame_samples() as u64) / SAMPLES_PER_MS as u64
    }

    pub fn reset(&mut self) {
        self.frontend.reset();
        self.stacker.reset();
        self.decoder.reset();
        self.features.clear();
    }

    pub fn push(&mut self, samples: &[i16], out: &mut Vec<Detection>) -> Result<()> {
        self.scratch.clear();
        self.frontend.push(samples, &mut self.scratch);
        for frame in &self.scratch {
            if let Some(stacked) = self.stacker.push(frame)? {
                let post = self.model.posteriors(&stacked, self.config.accumulate, frame.frame_index)?;
                let hypothesis = self.decoder.push(&post)?;
                out.push(Detection {
                    time_ms: self.frame_end_ms(frame.frame_index),
                    hypothesis,
                });
            }
        }
        if self.keep_features {
            self.features.append(&mut self.scratch);
        }
        Ok(())
    }
}
