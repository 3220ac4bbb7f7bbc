//! Corpus manifests and the `evaluate` pipeline.
//!
//! Manifest lines are `negative <duration_ms> <path>` or
//! `positive <keyword_end_ms> <path>`; `#` starts a comment and relative paths
//! resolve against the manifest's directory. `.kwst` paths are synthetic
//! posterior streams, anything else is read as 16 kHz audio and run through
//! the stage models.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use kws_core::cascade::{keyword_segment, Detection, KeywordDetector, Stage};
use kws_core::evaluation::{
    accept_events, cascade_episodes, cascade_table, decode_track, power_proxy, render_table, sweep_operating_points,
    DetPoint, LabeledCorpus, NegativeStream, OperatingPointRow, PositiveUtterance, PowerProxy, ScoreTrack,
    SpeakerTrack, TABLE_CSV_HEADER,
};
use kws_core::frontend::AudioChunk;
use kws_core::inference::{EmbeddingModel, EncoderModel};
use kws_core::speaker::{embed, SpeakerProfile, SpeakerSignature};
use rayon::prelude::*;

use crate::config::Config;
use crate::formats::{read_stream, StreamFile};
use crate::wav;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestKind {
    Negative,
    Positive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub kind: ManifestKind,
    /// Duration for negatives, keyword end for positives.
    pub label_ms: u64,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, char::is_whitespace).map(str::trim);
            let (Some(kind), Some(label), Some(path)) = (parts.next(), parts.next(), parts.next()) else {
                bail!("manifest line {}: expected `<negative|positive> <ms> <path>`", i + 1);
            };
            let kind = match kind {
                "negative" => ManifestKind::Negative,
                "positive" => ManifestKind::Positive,
                other => bail!("manifest line {}: unknown entry kind `{other}`", i + 1),
            };
            let label_ms = label.parse().with_context(|| format!("manifest line {}: bad time `{label}`", i + 1))?;
            ensure!(
                kind == ManifestKind::Positive || label_ms > 0,
                "manifest line {}: negative audio must have positive duration",
                i + 1
            );
            entries.push(ManifestEntry { kind, label_ms, path: PathBuf::from(path) });
        }
        Ok(Self { entries })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let kind = match e.kind {
                ManifestKind::Negative => "negative",
                ManifestKind::Positive => "positive",
            };
            let _ = writeln!(s, "{kind} {} {}", e.label_ms, e.path.display());
        }
        s
    }
}

/// Decodes both posterior tracks of a synthetic stream; frame `i` is stamped
/// `i * hop`.
pub fn decode_stream(file: &StreamFile, cfg: &Config) -> Result<(ScoreTrack, ScoreTrack)> {
    let hop = file.hop_ms as u64;
    let units = |t: &[kws_core::inference::PosteriorFrame]| t.first().map_or(1, |f| f.num_units());
    let s1 = decode_track(&file.stage1, cfg.stage1.decoder(units(&file.stage1)), 0, hop)?;
    let s2 = decode_track(&file.stage2, cfg.stage2.decoder(units(&file.stage2)), 0, hop)?;
    Ok((s1, s2))
}

#[derive(Debug, Clone)]
pub struct AudioModels {
    pub stage1: Arc<EncoderModel>,
    pub stage2: Arc<EncoderModel>,
    pub embedding: Option<Arc<EmbeddingModel>>,
}

fn detections_track(dets: &[Detection], hop_ms: u64) -> ScoreTrack {
    ScoreTrack {
        start_ms: dets.first().map_or(0, |d| d.time_ms),
        hop_ms,
        scores: dets.iter().map(|d| d.hypothesis.score).collect(),
    }
}

/// Runs both stage detectors over a whole recording. With an embedding model,
/// each de-duplicated stage-2 accept gets the signature of its keyword segment.
pub fn audio_tracks(chunk: &AudioChunk, cfg: &Config, models: &AudioModels) -> Result<(ScoreTrack, ScoreTrack, Option<SpeakerTrack>)> {
    let hop = cfg.frontend.hop_ms as u64;
    let run = |model: &Arc<EncoderModel>, settings, keep: bool| -> Result<(KeywordDetector, Vec<Detection>)> {
        let mut det = KeywordDetector::new(cfg.stage_config(settings, model.num_units()), model.clone())?;
        if keep {
            det = det.keeping_features();
        }
        let mut out = Vec::new();
        det.push(&chunk.samples, &mut out)?;
        Ok((det, out))
    };
    let (_, d1) = run(&models.stage1, &cfg.stage1, false)?;
    let (det2, d2) = run(&models.stage2, &cfg.stage2, models.embedding.is_some())?;
    let speaker = match &models.embedding {
        None => None,
        Some(emb) => {
            let accepted: Vec<u64> = d2.iter().filter(|d| d.hypothesis.score >= cfg.stage2.threshold).map(|d| d.time_ms).collect();
            let mut planted = Vec::new();
            for t in accept_events(&accepted, cfg.eval_refractory_ms) {
                let d = d2.iter().find(|d| d.time_ms == t).expect("accept time comes from a detection");
                let seg = keyword_segment(det2.features(), &d.hypothesis.alignment, cfg.stage2.smoothing_frames);
                planted.push((t, embed(&seg, emb, cfg.speaker_accumulate)?));
            }
            ensure!(!det2.features().is_empty(), "recording too short for a single frame");
            let background = embed(det2.features(), emb, cfg.speaker_accumulate)?;
            Some(SpeakerTrack { planted, background, match_ms: cfg.timing.lookback_ms })
        }
    };
    Ok((detections_track(&d1, hop), detections_track(&d2, hop), speaker))
}

/// Signature of the best-scoring stage-2 keyword in an utterance, with that
/// keyword score.
pub fn utterance_signature(
    chunk: &AudioChunk,
    cfg: &Config,
    stage2: &Arc<EncoderModel>,
    embedding: &EmbeddingModel,
) -> Result<(SpeakerSignature, f64)> {
    let mut det = KeywordDetector::new(cfg.stage_config(&cfg.stage2, stage2.num_units()), stage2.clone())?.keeping_features();
    let mut dets = Vec::new();
    det.push(&chunk.samples, &mut dets)?;
    let best = dets
        .iter()
        .reduce(|a, b| if b.hypothesis.score > a.hypothesis.score { b } else { a })
        .context("utterance too short to decode a keyword")?;
    let seg = keyword_segment(det.features(), &best.hypothesis.alignment, cfg.stage2.smoothing_frames);
    Ok((embed(&seg, embedding, cfg.speaker_accumulate)?, best.hypothesis.score))
}

fn load_entry(
    entry: &ManifestEntry,
    base: &Path,
    cfg: &Config,
    models: Option<&AudioModels>,
) -> Result<(ScoreTrack, ScoreTrack, Option<SpeakerTrack>)> {
    let path = base.join(&entry.path);
    let ctx = || format!("corpus entry {}", path.display());
    if path.extension().is_some_and(|e| e == "kwst") {
        let bytes = std::fs::read(&path).with_context(ctx)?;
        let file = read_stream(&bytes).with_context(ctx)?;
        let (s1, s2) = decode_stream(&file, cfg).with_context(ctx)?;
        let speaker = file.background.map(|background| SpeakerTrack {
            planted: file.planted,
            background,
            match_ms: cfg.timing.lookback_ms,
        });
        Ok((s1, s2, speaker))
    } else {
        let models = models.with_context(|| format!("{}: audio entries need --stage1 and --stage2 models", path.display()))?;
        let chunk = wav::read_audio(&path).with_context(ctx)?;
        audio_tracks(&chunk, cfg, models).with_context(ctx)
    }
}

/// Loads and scores every manifest entry on `jobs` threads (0 = all cores).
/// The result does not depend on the thread count.
pub fn load_corpus(manifest_path: &Path, cfg: &Config, models: Option<&AudioModels>, jobs: usize) -> Result<LabeledCorpus> {
    let text = std::fs::read_to_string(manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest = Manifest::parse(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let loaded = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| load_entry(e, base, cfg, models))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut corpus = LabeledCorpus::default();
    for (e, (stage1, stage2, speaker)) in manifest.entries.iter().zip(loaded) {
        match e.kind {
            ManifestKind::Negative => corpus.negatives.push(NegativeStream { duration_ms: e.label_ms, stage1, stage2, speaker }),
            ManifestKind::Positive => {
                corpus.positives.push(PositiveUtterance { keyword_end_ms: e.label_ms, stage1, stage2, speaker })
            }
        }
    }
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub stage2_threshold: f64,
    pub rows: Vec<OperatingPointRow>,
    /// Stage-2 cost of each row on the negative audio.
    pub power: Vec<PowerProxy>,
    pub stage1_det: Vec<DetPoint>,
    pub stage2_det: Vec<DetPoint>,
}

/// Stage-2 run time of a cascade on the negatives. Without a stage-1
/// threshold, stage 2 runs over all of the audio.
pub fn cascade_power(corpus: &LabeledCorpus, stage1_threshold: Option<f64>, cfg: &Config) -> Result<PowerProxy> {
    let total_s = corpus.negatives.iter().map(|n| n.duration_ms as f64).sum::<f64>() / 1000.0;
    let runs: Vec<f64> = match stage1_threshold.filter(|&t| t > 0.0) {
        None => corpus.negatives.iter().map(|n| n.duration_ms as f64 / 1000.0).collect(),
        Some(th1) => {
            let mut runs = Vec::new();
            for n in &corpus.negatives {
                for e in cascade_episodes(&n.stage1, &n.stage2, th1, cfg.stage2.threshold, None, &cfg.eval())? {
                    let secs = (cfg.timing.lookback_ms + e.decision.time_ms() - e.trigger_ms) as f64 / 1000.0;
                    runs.push(secs);
                }
            }
            runs
        }
    };
    Ok(power_proxy(&runs, total_s, cfg.power_multiplier)?)
}

pub fn evaluate(
    corpus: &LabeledCorpus,
    cfg: &Config,
    stage1_thresholds: &[f64],
    profile: Option<&SpeakerProfile>,
    sweep_points: usize,
) -> Result<EvaluationReport> {
    let eval = cfg.eval();
    let th2 = cfg.stage2.threshold;
    let rows = cascade_table(corpus, th2, stage1_thresholds, profile, &eval)?;
    let power = rows.iter().map(|r| cascade_power(corpus, r.stage1_threshold, cfg)).collect::<Result<_>>()?;
    let sweep: Vec<f64> = match sweep_points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    };
    Ok(EvaluationReport {
        stage2_threshold: th2,
        rows,
        power,
        stage1_det: sweep_operating_points(corpus, Stage::Stage1, &sweep, &eval)?,
        stage2_det: sweep_operating_points(corpus, Stage::Stage2, &sweep, &eval)?,
    })
}

impl EvaluationReport {
    pub fn csv(&self) -> String {
        let mut s = format!("{TABLE_CSV_HEADER},stage2_wakes_per_hr,stage2_run_secs,power_units\n");
        let cell = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| x.to_string());
        for (r, p) in self.rows.iter().zip(&self.power) {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                cell(r.stage1_threshold),
                cell(r.stage1_fa_per_hr),
                cell(r.stage1_frr),
                r.cascade_fa_per_hr,
                r.cascade_frr,
                p.wake_rate_per_hr,
                p.stage2_run_secs,
                p.total_units
            );
        }
        s
    }

    pub fn det_csv(&self) -> String {
        let mut s = String::from("stage,threshold,fa_per_hr,frr\n");
        for (stage, pts) in [("stage1", &self.stage1_det), ("stage2", &self.stage2_det)] {
            for p in pts {
                let _ = writeln!(s, "{stage},{},{},{}", p.threshold, p.fa_per_hr, p.frr);
            }
        }
        s
    }

    pub fn text(&self) -> String {
        render_table(&self.rows, self.stage2_threshold)
    }
}
