#![allow(dead_code)]

use std::sync::Arc;

use kws::config::Config;
use kws::models::{random_embedding, tone_encoder, white_noise, mix_into, ToneKeyword};
use kws_core::cascade::{Cascade, CascadeEvent};
use kws_core::frontend::AudioChunk;
use kws_core::inference::{EmbeddingModel, EncoderModel};

pub const CHANNELS: [usize; 3] = [8, 16, 24];

pub fn tone_config() -> Config {
    let mut cfg = Config::default();
    cfg.stage1.smoothing_frames = 20;
    cfg.stage1.score_window_frames = 100;
    cfg.stage1.threshold = 0.5;
    cfg.stage2.smoothing_frames = 20;
    cfg.stage2.score_window_frames = 100;
    cfg.stage2.threshold = 0.8;
    cfg
}

pub struct Models {
    pub stage1: Arc<EncoderModel>,
    pub stage2: Arc<EncoderModel>,
    pub embedding: Arc<EmbeddingModel>,
}

pub fn models(cfg: &Config) -> Models {
    Models {
        stage1: Arc::new(tone_encoder(&cfg.frontend, &CHANNELS, 2.0, 10.0, "stage1").unwrap()),
        stage2: Arc::new(tone_encoder(&cfg.frontend, &CHANNELS, 3.0, 12.0, "stage2").unwrap()),
        embedding: Arc::new(random_embedding(7, cfg.frontend.num_channels, 64).unwrap()),
    }
}

pub fn keyword() -> ToneKeyword {
    ToneKeyword { channels: CHANNELS.to_vec(), tone_ms: 200, amplitude: 12000.0 }
}

/// Noise with the keyword planted at each of `starts_ms`; returns the audio
/// and the keyword end times.
pub fn audio_with_keywords(cfg: &Config, seconds: u64, starts_ms: &[u64], kw: &ToneKeyword) -> (Vec<i16>, Vec<u64>) {
    let mut audio = white_noise(3, (seconds * 16000) as usize, 30.0);
    let rendered = kw.render(&cfg.frontend, 0.0).unwrap();
    let mut ends = Vec::new();
    for &s in starts_ms {
        mix_into(&mut audio, (s * 16) as usize, &rendered);
        ends.push(s + rendered.len() as u64 / 16);
    }
    (audio, ends)
}

pub fn run_cascade(cfg: &Config, m: &Models, audio: &[i16], chunk_ms: usize) -> Vec<CascadeEvent> {
    let mut cascade = Cascade::new(cfg.cascade(m.stage1.num_units(), m.stage2.num_units())).unwrap();
    cascade.load_stage1(m.stage1.clone()).unwrap();
    cascade.load_stage2(m.stage2.clone()).unwrap();
    let mut events = Vec::new();
    for piece in audio.chunks(chunk_ms * 16) {
        events.extend(cascade.push_audio(&AudioChunk::new(piece.to_vec())).unwrap());
    }
    events.extend(cascade.finish().unwrap());
    events
}
