//! Seeded synthetic evaluation corpus.
//!
//! Every stream carries two posterior tracks (stage 1, stage 2) over the same
//! 10 ms frames. Background frames put a small random mass on each keyword
//! unit. A planted keyword makes unit `i` fire for `unit_frames` frames in
//! keyword order, ending at the labelled end time, with a per-stage amplitude:
//!
//! - positives: a latent difficulty sets both amplitudes; hard utterances are
//!   weak in both stages;
//! - confusable words (negatives): strong in stage 1, mostly weak in stage 2;
//! - impostor speakers saying the keyword (negatives): strong in both stages.
//!
//! Positives carry a signature near the enrolled target speaker; every event
//! planted in negative audio carries a random impostor signature.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kws_core::evaluation::{LabeledCorpus, NegativeStream, PositiveUtterance, SpeakerTrack};
use kws_core::inference::PosteriorFrame;
use kws_core::speaker::{enroll, SpeakerProfile, SpeakerSignature};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::config::Config;
use crate::evaluate::{decode_stream, Manifest, ManifestEntry, ManifestKind};
use crate::formats::{self, StreamFile};

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusParams {
    pub seed: u64,
    pub negative_hours: f64,
    pub negative_stream_minutes: u32,
    pub positives: usize,
    pub positive_ms: u64,
    pub units: usize,
    pub unit_frames: usize,
    pub hop_ms: u32,
    pub confusables_per_hour: f64,
    pub impostors_per_hour: f64,
    pub signature_dim: usize,
    /// Per-component noise added to the target speaker for each positive.
    pub target_noise: f64,
    pub speaker_threshold: f64,
    /// Decoder settings the corpus is meant to be scored with.
    pub smoothing_frames: usize,
    pub score_window_frames: usize,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            seed: 1,
            negative_hours: 2.0,
            negative_stream_minutes: 10,
            positives: 200,
            positive_ms: 3000,
            units: 3,
            unit_frames: 15,
            hop_ms: 10,
            confusables_per_hour: 30.0,
            impostors_per_hour: 8.0,
            signature_dim: 64,
            target_noise: 0.06,
            speaker_threshold: 0.7,
            smoothing_frames: 10,
            score_window_frames: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantedKind {
    Keyword,
    Confusable,
    Impostor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedEvent {
    pub kind: PlantedKind,
    pub end_ms: u64,
    pub stage1_amplitude: f32,
    pub stage2_amplitude: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStream {
    pub duration_ms: u64,
    pub file: StreamFile,
    pub events: Vec<PlantedEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub params: CorpusParams,
    pub negatives: Vec<SyntheticStream>,
    pub positives: Vec<SyntheticStream>,
    pub profile: SpeakerProfile,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

/// Low background posteriors for `n` frames and `units` units.
fn background(rng: &mut ChaCha8Rng, n: usize, units: usize) -> Vec<Vec<f32>> {
    (0..n).map(|_| (0..units).map(|_| 0.12 * rng.random::<f32>().powi(2)).collect()).collect()
}

fn plant(track: &mut [Vec<f32>], end_frame: usize, unit_frames: usize, amplitude: f32, rng: &mut ChaCha8Rng) {
    let m = track[0].len();
    let len = track.len();
    for i in 0..m {
        let stop = end_frame + 1 - (m - 1 - i) * unit_frames;
        for row in &mut track[stop.saturating_sub(unit_frames)..stop.min(len)] {
            row[i] = (amplitude + rng.random_range(-0.04f32..0.04)).clamp(0.0, 0.95);
        }
    }
}

fn to_frames(track: Vec<Vec<f32>>) -> Vec<PosteriorFrame> {
    track
        .into_iter()
        .enumerate()
        .map(|(i, mut row)| {
            let total: f32 = row.iter().sum();
            if total > 1.0 {
                row.iter_mut().for_each(|v| *v /= total);
            }
            let filler = (1.0 - row.iter().sum::<f32>()).max(0.0);
            PosteriorFrame { keyword_posteriors: row, filler_posterior: filler, frame_index: i as u64 }
        })
        .collect()
}

fn stream_rng(seed: u64, class: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class << 32 | index as u64);
    rng
}

fn build_stream(
    p: &CorpusParams,
    rng: &mut ChaCha8Rng,
    duration_ms: u64,
    events: Vec<PlantedEvent>,
    background_sig: SpeakerSignature,
    planted: Vec<(u64, SpeakerSignature)>,
) -> SyntheticStream {
    let n = (duration_ms / p.hop_ms as u64) as usize;
    let mut s1 = background(rng, n, p.units);
    let mut s2 = background(rng, n, p.units);
    for e in &events {
        let end = (e.end_ms / p.hop_ms as u64) as usize;
        plant(&mut s1, end, p.unit_frames, e.stage1_amplitude, rng);
        plant(&mut s2, end, p.unit_frames, e.stage2_amplitude, rng);
    }
    SyntheticStream {
        duration_ms,
        file: StreamFile {
            hop_ms: p.hop_ms,
            stage1: to_frames(s1),
            stage2: to_frames(s2),
            background: Some(background_sig),
            planted,
        },
        events,
    }
}

fn negative_stream(p: &CorpusParams, index: usize, duration_ms: u64) -> SyntheticStream {
    let mut rng = stream_rng(p.seed, 1, index);
    let hours = duration_ms as f64 / 3_600_000.0;
    let keyword_ms = (p.units * p.unit_frames) as u64 * p.hop_ms as u64;
    let mut events = Vec::new();
    for (kind, rate) in [(PlantedKind::Confusable, p.confusables_per_hour), (PlantedKind::Impostor, p.impostors_per_hour)] {
        let count = (rate * hours).round() as usize;
        for _ in 0..count {
            let end_ms = rng.random_range(keyword_ms + 100..duration_ms.saturating_sub(1500).max(keyword_ms + 101));
            let (a1, a2) = match kind {
                PlantedKind::Confusable => (rng.random_range(0.35..0.9), rng.random_range(0.1..0.55)),
                _ => (rng.random_range(0.6..0.95), rng.random_range(0.6..0.95)),
            };
            events.push(PlantedEvent { kind, end_ms, stage1_amplitude: a1, stage2_amplitude: a2 });
        }
    }
    events.sort_by_key(|e| e.end_ms);
    // keep planted events at least 3 s apart so each is its own episode
    let mut kept: Vec<PlantedEvent> = Vec::new();
    for e in events {
        if kept.last().is_none_or(|k| e.end_ms >= k.end_ms + 3000) {
            kept.push(e);
        }
    }
    let dim = p.signature_dim;
    let planted = kept.iter().map(|e| (e.end_ms, SpeakerSignature::new(unit_vector(&mut rng, dim)))).collect();
    let bg = SpeakerSignature::new(unit_vector(&mut rng, dim));
    build_stream(p, &mut rng, duration_ms, kept, bg, planted)
}

fn positive_stream(p: &CorpusParams, index: usize, target: &[f32]) -> SyntheticStream {
    let mut rng = stream_rng(p.seed, 2, index);
    let end_ms = rng.random_range(p.positive_ms * 6 / 10..p.positive_ms * 85 / 100);
    let difficulty: f32 = rng.random();
    let a1 = (0.2 + 0.75 * difficulty.sqrt() + rng.random_range(-0.05..0.05)).clamp(0.05, 0.95);
    let a2 = (0.35 + 0.6 * difficulty.powf(0.3) + rng.random_range(-0.03..0.03)).clamp(0.05, 0.95);
    let noise = Normal::new(0.0, p.target_noise).expect("positive noise");
    let sig: Vec<f32> = target.iter().map(|&t| t + noise.sample(&mut rng) as f32).collect();
    let event = PlantedEvent { kind: PlantedKind::Keyword, end_ms, stage1_amplitude: a1, stage2_amplitude: a2 };
    build_stream(p, &mut rng, p.positive_ms, vec![event], SpeakerSignature::new(sig), Vec::new())
}

pub fn generate(params: &CorpusParams) -> Result<SyntheticCorpus> {
    let mut rng = stream_rng(params.seed, 0, 0);
    let target = unit_vector(&mut rng, params.signature_dim);
    let profile = enroll(&[SpeakerSignature::new(target.clone())], params.speaker_threshold)?;
    let total_ms = (params.negative_hours * 3_600_000.0).round() as u64;
    let chunk_ms = params.negative_stream_minutes.max(1) as u64 * 60_000;
    let durations: Vec<u64> = (0..total_ms.div_ceil(chunk_ms))
        .map(|i| chunk_ms.min(total_ms - i * chunk_ms))
        .collect();
    let negatives = durations.par_iter().enumerate().map(|(i, &d)| negative_stream(params, i, d)).collect();
    let positives = (0..params.positives).into_par_iter().map(|i| positive_stream(params, i, &target)).collect();
    Ok(SyntheticCorpus { params: params.clone(), negatives, positives, profile })
}

impl SyntheticCorpus {
    /// Config with the decoder settings the corpus was generated for.
    pub fn config(&self) -> Config {
        let mut cfg = Config::default();
        for s in [&mut cfg.stage1, &mut cfg.stage2] {
            s.smoothing_frames = self.params.smoothing_frames;
            s.score_window_frames = self.params.score_window_frames;
        }
        cfg.speaker_threshold = self.params.speaker_threshold;
        cfg
    }

    pub fn config_text(&self) -> String {
        let p = &self.params;
        format!(
            "# decoder settings for the synthetic corpus (seed {})\n\
             stage1.smoothing_frames = {}\nstage1.score_window_frames = {}\n\
             stage2.smoothing_frames = {}\nstage2.score_window_frames = {}\n\
             speaker.threshold = {}\n",
            p.seed, p.smoothing_frames, p.score_window_frames, p.smoothing_frames, p.score_window_frames, p.speaker_threshold
        )
    }

    /// Decodes every stream into score tracks.
    pub fn labeled(&self, cfg: &Config) -> Result<LabeledCorpus> {
        let speaker = |s: &SyntheticStream| -> Option<SpeakerTrack> {
            Some(SpeakerTrack {
                planted: s.file.planted.clone(),
                background: s.file.background.clone()?,
                match_ms: cfg.timing.lookback_ms,
            })
        };
        let negatives = self
            .negatives
            .par_iter()
            .map(|s| {
                let (stage1, stage2) = decode_stream(&s.file, cfg)?;
                Ok(NegativeStream { duration_ms: s.duration_ms, stage1, stage2, speaker: speaker(s) })
            })
            .collect::<Result<Vec<_>>>()?;
        let positives = self
            .positives
            .par_iter()
            .map(|s| {
                let (stage1, stage2) = decode_stream(&s.file, cfg)?;
                Ok(PositiveUtterance { keyword_end_ms: s.events[0].end_ms, stage1, stage2, speaker: speaker(s) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LabeledCorpus { negatives, positives })
    }

    /// Writes stream files, `manifest.txt`, `corpus.conf` and `target.kwsv`
    /// into `dir`; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut entries = Vec::new();
        for (kind, streams) in [(ManifestKind::Negative, &self.negatives), (ManifestKind::Positive, &self.positives)] {
            for (i, s) in streams.iter().enumerate() {
                let name = format!("{}-{i:04}.kwst", if kind == ManifestKind::Negative { "neg" } else { "pos" });
                std::fs::write(dir.join(&name), formats::write_stream(&s.file)?)?;
                let label = match kind {
                    ManifestKind::Negative => s.duration_ms,
                    ManifestKind::Positive => s.events[0].end_ms,
                };
                entries.push(ManifestEntry { kind, label_ms: label, path: PathBuf::from(name) });
            }
        }
        let manifest = dir.join("manifest.txt");
        std::fs::write(&manifest, Manifest { entries }.to_text())?;
        std::fs::write(dir.join("corpus.conf"), self.config_text())?;
        std::fs::write(dir.join("target.kwsv"), self.profile.to_bytes())?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusParams {
        CorpusParams { negative_hours: 0.25, negative_stream_minutes: 5, positives: 20, ..CorpusParams::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&CorpusParams { seed: 2, ..small() }).unwrap();
        assert_ne!(a.negatives[0].file, c.negatives[0].file);
        assert_eq!(a.negatives.len(), 3);
        assert_eq!(a.negatives.iter().map(|n| n.duration_ms).sum::<u64>(), 900_000);
    }

    #[test]
    fn posteriors_are_distributions() {
        let c = generate(&small()).unwrap();
        for s in c.negatives.iter().chain(&c.positives) {
            for f in s.file.stage1.iter().chain(&s.file.stage2) {
                assert!((f.total() - 1.0).abs() < 1e-5);
                assert!(f.keyword_posteriors.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn signatures_separate_target_from_impostors() {
        let c = generate(&small()).unwrap();
        let cos = |s: &SpeakerSignature| kws_core::speaker::verify(s, &c.profile).unwrap();
        for p in &c.positives {
            assert!(cos(p.file.background.as_ref().unwrap()).accepted);
        }
        for n in &c.negatives {
            for (_, s) in &n.file.planted {
                assert!(!cos(s).accepted);
            }
        }
    }
}
