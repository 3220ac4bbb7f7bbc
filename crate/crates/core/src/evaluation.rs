//! False accepts per hour, false reject rate, threshold sweeps, cascade
//! operating-point tables and a stage-2 power proxy, computed on per-frame
//! score tracks.
//!
//! A detector's accept times are the frames whose score reaches its threshold
//! (for the cascade: the trigger times of accepted stage-2 episodes). False
//! accepts are accept times on negative audio after greedy refractory
//! de-duplication; a positive is a hit when any accept time lies within the
//! hit window around its labelled keyword end.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::cascade::{CascadeController, CascadeEvent, CascadeTiming, EventKind, Stage, Stage2Decision};
use crate::decoder::{streaming_decode, DecoderConfig};
use crate::inference::PosteriorFrame;
use crate::speaker::{self, SpeakerProfile, SpeakerSignature};
use crate::{Error, Result};

const MS_PER_HOUR: f64 = 3_600_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub refractory_ms: u64,
    /// Half-width of the window around a labelled keyword end.
    pub hit_window_ms: u64,
    pub timing: CascadeTiming,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            refractory_ms: 1000,
            hit_window_ms: 750,
            timing: CascadeTiming::default(),
        }
    }
}

/// Per-frame detector scores; frame `i` is stamped `start_ms + i * hop_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTrack {
    pub start_ms: u64,
    pub hop_ms: u64,
    pub scores: Vec<f64>,
}

impl ScoreTrack {
    pub fn time_ms(&self, i: usize) -> u64 {
        self.start_ms + i as u64 * self.hop_ms
    }

    fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.scores.iter().enumerate().map(|(i, &s)| (self.time_ms(i), s))
    }

    /// Frames stamped within `[from, to]`.
    fn range(&self, from: u64, to: u64) -> impl Iterator<Item = (u64, f64)> + '_ {
        let hop = self.hop_ms.max(1);
        let lo = from.saturating_sub(self.start_ms).div_ceil(hop) as usize;
        let hi = match to.checked_sub(self.start_ms) {
            Some(d) => ((d / hop) as usize + 1).min(self.scores.len()),
            None => 0,
        };
        (lo..hi.max(lo)).map(move |i| (self.time_ms(i), self.scores[i]))
    }

    fn accept_times(&self, threshold: f64) -> Vec<u64> {
        self.iter().filter(|&(_, s)| s >= threshold).map(|(t, _)| t).collect()
    }
}

/// Runs the streaming decoder over a posterior stream.
pub fn decode_track(posteriors: &[PosteriorFrame], config: DecoderConfig, start_ms: u64, hop_ms: u64) -> Result<ScoreTrack> {
    Ok(ScoreTrack {
        start_ms,
        hop_ms,
        scores: streaming_decode(posteriors, config)?.into_iter().map(|(_, h)| h.score).collect(),
    })
}

/// Speaker signatures for the keywords (or impostors) in one stream. An
/// accept is attributed to the planted signature nearest its time when one
/// lies within `match_ms`, else to `background`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerTrack {
    pub planted: Vec<(u64, SpeakerSignature)>,
    pub background: SpeakerSignature,
    pub match_ms: u64,
}

impl SpeakerTrack {
    pub fn signature_at(&self, time_ms: u64) -> &SpeakerSignature {
        self.planted
            .iter()
            .map(|(t, s)| (t.abs_diff(time_ms), s))
            .filter(|&(d, _)| d <= self.match_ms)
            .min_by_key(|&(d, _)| d)
            .map_or(&self.background, |(_, s)| s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeStream {
    pub duration_ms: u64,
    pub stage1: ScoreTrack,
    pub stage2: ScoreTrack,
    pub speaker: Option<SpeakerTrack>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositiveUtterance {
    pub keyword_end_ms: u64,
    pub stage1: ScoreTrack,
    pub stage2: ScoreTrack,
    pub speaker: Option<SpeakerTrack>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCorpus {
    pub negatives: Vec<NegativeStream>,
    pub positives: Vec<PositiveUtterance>,
}

impl LabeledCorpus {
    pub fn negative_hours(&self) -> f64 {
        self.negatives.iter().map(|n| n.duration_ms as f64).sum::<f64>() / MS_PER_HOUR
    }
}

/// What is being evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectorSpec<'a> {
    Single {
        stage: Stage,
        threshold: f64,
    },
    /// `stage1_threshold` of `None` (or <= 0) passes everything to stage 2.
    Cascade {
        stage1_threshold: Option<f64>,
        stage2_threshold: f64,
        speaker: Option<&'a SpeakerProfile>,
    },
}

/// One stage-2 run of the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub trigger_ms: u64,
    pub stage1_score: f64,
    pub decision: Stage2Decision,
    pub speaker_score: Option<f64>,
    /// Stage 2 accepted and, when enabled, the speaker verified.
    pub accepted: bool,
}

fn check_speaker(track: Option<&SpeakerTrack>, profile: &SpeakerProfile, time_ms: u64) -> Result<(f64, bool)> {
    let track = track.ok_or_else(|| Error::Evaluation("speaker verification needs speaker signatures".into()))?;
    let v = speaker::verify(track.signature_at(time_ms), profile)?;
    Ok((v.score, v.accepted))
}

/// Greedy de-duplication: keeps an accept time, then skips everything within
/// `refractory_ms` after it. `times` must be ascending.
pub fn accept_events(times: &[u64], refractory_ms: u64) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::new();
    for &t in times {
        if out.last().is_none_or(|&last| t >= last + refractory_ms) {
            out.push(t);
        }
    }
    out
}

/// Runs the cascade state machine over a pair of score tracks.
pub fn cascade_episodes(
    stage1: &ScoreTrack,
    stage2: &ScoreTrack,
    stage1_threshold: f64,
    stage2_threshold: f64,
    speaker: Option<(&SpeakerTrack, &SpeakerProfile)>,
    cfg: &EvalConfig,
) -> Result<Vec<Episode>> {
    let timing = cfg.timing;
    let mut ctl = CascadeController::new(stage1_threshold, stage2_threshold, timing, speaker.is_some());
    let mut episodes = Vec::new();
    for (t, s) in stage1.iter() {
        let Some(trigger) = ctl.stage1(t, s) else {
            continue;
        };
        let deadline = trigger.time_ms + timing.stage2_window_ms;
        let from = trigger.time_ms.saturating_sub(timing.lookback_ms);
        let decision = stage2
            .range(from, deadline)
            .find_map(|(t2, s2)| ctl.stage2(t2, s2))
            .or_else(|| ctl.expire(deadline))
            .expect("stage 2 concludes by its deadline");
        let mut episode = Episode {
            trigger_ms: trigger.time_ms,
            stage1_score: trigger.score,
            decision,
            speaker_score: None,
            accepted: matches!(decision, Stage2Decision::Accept { .. }),
        };
        if let (true, Some((track, profile))) = (episode.accepted, speaker) {
            let (score, ok) = check_speaker(Some(track), profile, trigger.time_ms)?;
            episode.speaker_score = Some(score);
            episode.accepted = ok;
            ctl.verification_done(decision.time_ms())?;
        }
        episodes.push(episode);
    }
    Ok(episodes)
}

fn passes_through(stage1_threshold: Option<f64>) -> bool {
    stage1_threshold.is_none_or(|t| t <= 0.0)
}

/// Ascending accept times of a detector on one stream.
pub fn accept_times(
    spec: &DetectorSpec,
    stage1: &ScoreTrack,
    stage2: &ScoreTrack,
    speaker: Option<&SpeakerTrack>,
    cfg: &EvalConfig,
) -> Result<Vec<u64>> {
    match *spec {
        DetectorSpec::Single { stage: Stage::Stage1, threshold } => Ok(stage1.accept_times(threshold)),
        DetectorSpec::Single { stage: Stage::Stage2, threshold } => Ok(stage2.accept_times(threshold)),
        DetectorSpec::Cascade { stage1_threshold, stage2_threshold, speaker: profile } if passes_through(stage1_threshold) => {
            let times = stage2.accept_times(stage2_threshold);
            match profile {
                None => Ok(times),
                Some(p) => {
                    let mut kept = Vec::with_capacity(times.len());
                    for t in times {
                        if check_speaker(speaker, p, t)?.1 {
                            kept.push(t);
                        }
                    }
                    Ok(kept)
                }
            }
        }
        DetectorSpec::Cascade { stage1_threshold, stage2_threshold, speaker: profile } => {
            let sp = match profile {
                Some(p) => Some((
                    speaker.ok_or_else(|| Error::Evaluation("speaker verification needs speaker signatures".into()))?,
                    p,
                )),
                None => None,
            };
            let th1 = stage1_threshold.expect("pass-through handled above");
            Ok(cascade_episodes(stage1, stage2, th1, stage2_threshold, sp, cfg)?
                .into_iter()
                .filter(|e| e.accepted)
                .map(|e| e.trigger_ms)
                .collect())
        }
    }
}

/// De-duplicated false accepts on one negative stream.
pub fn false_accepts(stream: &NegativeStream, spec: &DetectorSpec, cfg: &EvalConfig) -> Result<Vec<u64>> {
    let times = accept_times(spec, &stream.stage1, &stream.stage2, stream.speaker.as_ref(), cfg)?;
    Ok(accept_events(&times, cfg.refractory_ms))
}

pub fn is_hit(utt: &PositiveUtterance, spec: &DetectorSpec, cfg: &EvalConfig) -> Result<bool> {
    let times = accept_times(spec, &utt.stage1, &utt.stage2, utt.speaker.as_ref(), cfg)?;
    let lo = utt.keyword_end_ms.saturating_sub(cfg.hit_window_ms);
    let hi = utt.keyword_end_ms + cfg.hit_window_ms;
    Ok(times.iter().any(|t| (lo..=hi).contains(t)))
}

pub fn fa_per_hour(false_accepts: usize, negative_ms: u64) -> Result<f64> {
    if negative_ms == 0 {
        return Err(Error::Evaluation("negative audio has zero duration".into()));
    }
    Ok(false_accepts as f64 * MS_PER_HOUR / negative_ms as f64)
}

pub fn reject_rate(misses: usize, positives: usize) -> Result<f64> {
    if positives == 0 {
        return Err(Error::Evaluation("no positive utterances".into()));
    }
    Ok(misses as f64 / positives as f64)
}

pub fn measure_far(negatives: &[NegativeStream], spec: &DetectorSpec, cfg: &EvalConfig) -> Result<f64> {
    let duration: u64 = negatives.iter().map(|n| n.duration_ms).sum();
    if duration == 0 {
        return Err(Error::Evaluation("negative audio has zero duration".into()));
    }
    let mut count = 0;
    for n in negatives {
        count += false_accepts(n, spec, cfg)?.len();
    }
    fa_per_hour(count, duration)
}

pub fn measure_frr(positives: &[PositiveUtterance], spec: &DetectorSpec, cfg: &EvalConfig) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::Evaluation("no positive utterances".into()));
    }
    let mut misses = 0;
    for p in positives {
        if !is_hit(p, spec, cfg)? {
            misses += 1;
        }
    }
    reject_rate(misses, positives.len())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub fa_per_hr: f64,
    pub frr: f64,
}

/// (FA/hr, FRR) of one stage at each threshold.
pub fn sweep_operating_points(corpus: &LabeledCorpus, stage: Stage, thresholds: &[f64], cfg: &EvalConfig) -> Result<Vec<DetPoint>> {
    thresholds
        .iter()
        .map(|&threshold| {
            let spec = DetectorSpec::Single { stage, threshold };
            Ok(DetPoint {
                threshold,
                fa_per_hr: measure_far(&corpus.negatives, &spec, cfg)?,
                frr: measure_frr(&corpus.positives, &spec, cfg)?,
            })
        })
        .collect()
}

/// One line of the cascade table. The stage-1 fields are `None` on the
/// stage-1-disabled row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPointRow {
    pub stage1_threshold: Option<f64>,
    pub stage1_fa_per_hr: Option<f64>,
    pub stage1_frr: Option<f64>,
    pub cascade_fa_per_hr: f64,
    pub cascade_frr: f64,
}

/// The stage-2-alone row followed by one row per stage-1 threshold, stage-2
/// threshold held fixed.
pub fn cascade_table(
    corpus: &LabeledCorpus,
    stage2_threshold: f64,
    stage1_thresholds: &[f64],
    speaker: Option<&SpeakerProfile>,
    cfg: &EvalConfig,
) -> Result<Vec<OperatingPointRow>> {
    let cascade = |th1: Option<f64>| -> Result<(f64, f64)> {
        let spec = DetectorSpec::Cascade {
            stage1_threshold: th1,
            stage2_threshold,
            speaker,
        };
        Ok((measure_far(&corpus.negatives, &spec, cfg)?, measure_frr(&corpus.positives, &spec, cfg)?))
    };
    let (fa, frr) = cascade(None)?;
    let mut rows = alloc::vec![OperatingPointRow {
        stage1_threshold: None,
        stage1_fa_per_hr: None,
        stage1_frr: None,
        cascade_fa_per_hr: fa,
        cascade_frr: frr,
    }];
    for &th1 in stage1_thresholds {
        let single = DetectorSpec::Single { stage: Stage::Stage1, threshold: th1 };
        let (fa, frr) = cascade(Some(th1))?;
        rows.push(OperatingPointRow {
            stage1_threshold: Some(th1),
            stage1_fa_per_hr: Some(measure_far(&corpus.negatives, &single, cfg)?),
            stage1_frr: Some(measure_frr(&corpus.positives, &single, cfg)?),
            cascade_fa_per_hr: fa,
            cascade_frr: frr,
        });
    }
    Ok(rows)
}

fn opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map_or_else(|| String::from("None"), f)
}

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

fn rate(v: f64) -> String {
    format!("{v:.3}")
}

/// Aligned text table in the layout of the paper's cascade table.
pub fn render_table(rows: &[OperatingPointRow], stage2_threshold: f64) -> String {
    let header = ["Stage 1 FA/hr", "Stage 1 FRR", "Cascade FA/hr", "Cascade FRR"];
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                opt(r.stage1_fa_per_hr, rate),
                opt(r.stage1_frr, pct),
                rate(r.cascade_fa_per_hr),
                pct(r.cascade_frr),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..4)
        .map(|c| cells.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = format!("Cascade operating point vs stage 1 operating point (stage 2 threshold fixed at {stage2_threshold})\n");
    let line = |out: &mut String, row: [&str; 4]| {
        let parts: Vec<String> = row.iter().zip(&widths).map(|(s, &w)| format!("{s:>w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  "));
    };
    line(&mut out, header);
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 6));
    for r in &cells {
        line(&mut out, [&r[0], &r[1], &r[2], &r[3]]);
    }
    out
}

pub const TABLE_CSV_HEADER: &str = "stage1_threshold,stage1_fa_per_hr,stage1_frr,cascade_fa_per_hr,cascade_frr";

pub fn table_csv(rows: &[OperatingPointRow]) -> String {
    let mut out = String::from(TABLE_CSV_HEADER);
    out.push('\n');
    let cell = |v: Option<f64>| v.map_or_else(|| String::from("none"), |x| format!("{x}"));
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            cell(r.stage1_threshold),
            cell(r.stage1_fa_per_hr),
            cell(r.stage1_frr),
            r.cascade_fa_per_hr,
            r.cascade_frr
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerProxy {
    pub stage1_cost_units_per_sec: f64,
    pub stage2_cost_multiplier: f64,
    pub stage2_run_secs: f64,
    pub wake_rate_per_hr: f64,
    pub total_units: f64,
}

/// Unitless energy estimate: stage 1 costs 1 per second of audio, stage 2
/// costs `multiplier` per second it runs.
pub fn power_proxy(stage2_runs_secs: &[f64], duration_sec: f64, multiplier: f64) -> Result<PowerProxy> {
    if multiplier <= 1.0 {
        return Err(Error::config(format!("stage-2 cost multiplier {multiplier} must exceed 1")));
    }
    if duration_sec <= 0.0 {
        return Err(Error::Evaluation("power proxy over zero duration".into()));
    }
    let run: f64 = stage2_runs_secs.iter().sum();
    Ok(PowerProxy {
        stage1_cost_units_per_sec: 1.0,
        stage2_cost_multiplier: multiplier,
        stage2_run_secs: run,
        wake_rate_per_hr: stage2_runs_secs.len() as f64 * 3600.0 / duration_sec,
        total_units: duration_sec + run * multiplier,
    })
}

/// Stage-2 run length of each trigger in a cascade event log: the buffered
/// lookback plus the time from trigger to decision.
pub fn stage2_runs(events: &[CascadeEvent], lookback_ms: u64) -> Vec<f64> {
    events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Stage2Accept | EventKind::Stage2Reject))
        .map(|e| (lookback_ms + e.timestamp_ms.saturating_sub(e.trigger_ms)) as f64 / 1000.0)
        .collect()
}
