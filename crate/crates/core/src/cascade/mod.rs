//! Two-stage cascade: a small always-on stage 1 over a ring buffer of recent
//! audio wakes a larger stage 2, which rescans the buffered audio plus what
//! follows and makes the final decision, optionally followed by speaker
//! verification.

mod budget;
mod controller;
mod detector;
mod ring;

pub use budget::{enforce_budget, BudgetLine, BudgetReport, MemoryBudget, Stage};
pub use controller::{CascadeController, CascadeStateKind, CascadeTiming, Stage2Decision, Trigger};
pub use detector::{Detection, KeywordDetector, StageConfig};
pub use ring::{RingBuffer, DEFAULT_CAPACITY_SAMPLES};

use alloc::collections::VecDeque;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::frontend::{AudioChunk, FeatureFrame, SAMPLES_PER_MS};
use crate::inference::{AccumMode, EmbeddingModel, EncoderModel};
use crate::speaker::{self, SpeakerProfile};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Stage1Trigger,
    Stage2Accept,
    Stage2Reject,
    SpeakerAccept,
    SpeakerReject,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Stage1Trigger => "stage1_trigger",
            EventKind::Stage2Accept => "stage2_accept",
            EventKind::Stage2Reject => "stage2_reject",
            EventKind::SpeakerAccept => "speaker_accept",
            EventKind::SpeakerReject => "speaker_reject",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeEvent {
    pub kind: EventKind,
    pub timestamp_ms: u64,
    /// Stream position when the event was produced; later than
    /// `timestamp_ms` while stage 2 is catching up.
    pub emitted_ms: u64,
    pub trigger_ms: u64,
    pub stage1_score: f64,
    pub stage2_score: Option<f64>,
    pub speaker_score: Option<f64>,
    /// Stage-2 firing times of the keyword units, stream milliseconds.
    pub alignment_ms: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub stage1_threshold: f64,
    pub stage2_threshold: f64,
    pub timing: CascadeTiming,
    pub budget: MemoryBudget,
    /// Stage 2 consumes at most this many samples per sample of new audio.
    pub stage2_catchup_factor: usize,
    pub speaker_accumulate: AccumMode,
}

impl CascadeConfig {
    pub fn new(num_units: usize) -> Self {
        let stage = StageConfig::new(num_units);
        Self {
            stage1: stage.clone(),
            stage2: stage,
            stage1_threshold: 0.5,
            stage2_threshold: 0.5,
            timing: CascadeTiming::default(),
            budget: MemoryBudget::default(),
            stage2_catchup_factor: 4,
            speaker_accumulate: AccumMode::FixedAccum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        self.stage1.frontend.validate()?;
        self.stage2.frontend.validate()?;
        self.stage1.decoder.validate()?;
        self.stage2.decoder.validate()?;
        if self.stage2_catchup_factor < 2 {
            return Err(Error::config("stage-2 catch-up factor must be at least 2"));
        }
        if self.timing.stage2_window_ms == 0 {
            return Err(Error::config("stage-2 window must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct SpeakerCheck {
    model: Arc<EmbeddingModel>,
    profile: SpeakerProfile,
}

/// Stage 2 working through a snapshot and the audio that followed it.
#[derive(Debug)]
struct Stage2Session {
    detector: KeywordDetector,
    pending: VecDeque<i16>,
    /// Stream sample just past the last queued sample.
    queued_until: u64,
    deadline_sample: u64,
    scratch: Vec<Detection>,
}

impl Stage2Session {
    fn enqueue(&mut self, samples: &[i16]) {
        let room = self.deadline_sample.saturating_sub(self.queued_until) as usize;
        let take = room.min(samples.len());
        self.pending.extend(&samples[..take]);
        self.queued_until += take as u64;
    }

    fn exhausted(&self) -> bool {
        self.pending.is_empty() && self.queued_until >= self.deadline_sample
    }
}

#[derive(Debug)]
pub struct Cascade {
    config: CascadeConfig,
    ring: RingBuffer,
    stage1: Option<KeywordDetector>,
    stage2_model: Option<Arc<EncoderModel>>,
    speaker: Option<SpeakerCheck>,
    controller: CascadeController,
    session: Option<Stage2Session>,
    samples_seen: u64,
    scratch: Vec<Detection>,
    reports: Vec<BudgetReport>,
}

impl Cascade {
    pub fn new(config: CascadeConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            ring: RingBuffer::new(config.budget.buffer_capacity_samples()),
            controller: CascadeController::new(config.stage1_threshold, config.stage2_threshold, config.timing, false),
            config,
            stage1: None,
            stage2_model: None,
            speaker: None,
            session: None,
            samples_seen: 0,
            scratch: Vec::new(),
            reports: Vec::new(),
        })
    }

    /// Loads the stage-1 model; fails with a budget error when it does not fit.
    pub fn load_stage1(&mut self, model: Arc<EncoderModel>) -> Result<BudgetReport> {
        let report = enforce_budget(&self.config.budget, model.byte_size(), Stage::Stage1)?;
        self.stage1 = Some(KeywordDetector::new(self.config.stage1.clone(), model)?);
        self.reports.push(report.clone());
        Ok(report)
    }

    pub fn load_stage2(&mut self, model: Arc<EncoderModel>) -> Result<BudgetReport> {
        let report = enforce_budget(&self.config.budget, model.byte_size(), Stage::Stage2)?;
        KeywordDetector::new(self.config.stage2.clone(), model.clone())?;
        self.stage2_model = Some(model);
        self.reports.push(report.clone());
        Ok(report)
    }

    pub fn set_speaker(&mut self, model: Arc<EmbeddingModel>, profile: SpeakerProfile) -> Result<()> {
        let spec = model.network().input_spec;
        if spec.num_channels != self.config.stage2.frontend.num_channels {
            return Err(Error::dimension(format!(
                "embedding expects {} channels, stage-2 frontend produces {}",
                spec.num_channels, self.config.stage2.frontend.num_channels
            )));
        }
        if model.dim() != profile.signature.dim() {
            return Err(Error::dimension(format!(
                "embedding dimension {} differs from profile dimension {}",
                model.dim(),
                profile.signature.dim()
            )));
        }
        self.speaker = Some(SpeakerCheck { model, profile });
        self.controller = CascadeController::new(
            self.config.stage1_threshold,
            self.config.stage2_threshold,
            self.config.timing,
            true,
        );
        Ok(())
    }

    pub fn config(&self) -> &CascadeConfig {
        &self.config
    }

    pub fn budget_reports(&self) -> &[BudgetReport] {
        &self.reports
    }

    pub fn state(&self) -> CascadeStateKind {
        self.controller.state()
    }

    pub fn wake_count(&self) -> u64 {
        self.controller.wake_count()
    }

    pub fn ring(&self) -> &RingBuffer {
        &self.ring
    }

    fn now_ms(&self) -> u64 {
        self.samples_seen / SAMPLES_PER_MS as u64
    }

    fn check_loaded(&self) -> Result<()> {
        if self.stage1.is_none() || self.stage2_model.is_none() {
            return Err(Error::Lifecycle("both stage models must be loaded before streaming audio".into()));
        }
        Ok(())
    }

    /// Streams a chunk through the cascade. Stage 2, when running, advances by
    /// a bounded amount of work per stage-1 frame.
    pub fn push_audio(&mut self, chunk: &AudioChunk) -> Result<Vec<CascadeEvent>> {
        self.check_loaded()?;
        let mut events = Vec::new();
        let mut rest = &chunk.samples[..];
        while !rest.is_empty() {
            let stage1 = self.stage1.as_mut().expect("checked");
            let until_frame = (stage1.next_frame_end() - self.samples_seen).max(1) as usize;
            let (slice, tail) = rest.split_at(until_frame.min(rest.len()));
            rest = tail;

            self.ring.write(slice);
            self.samples_seen += slice.len() as u64;
            if let Some(session) = &mut self.session {
                session.enqueue(slice);
            }
            self.scratch.clear();
            stage1.push(slice, &mut self.scratch)?;
            for i in 0..self.scratch.len() {
                let d = &self.scratch[i];
                if let Some(trigger) = self.controller.stage1(d.time_ms, d.hypothesis.score) {
                    events.push(CascadeEvent {
                        kind: EventKind::Stage1Trigger,
                        timestamp_ms: trigger.time_ms,
                        emitted_ms: self.now_ms(),
                        trigger_ms: trigger.time_ms,
                        stage1_score: trigger.score,
                        stage2_score: None,
                        speaker_score: None,
                        alignment_ms: Vec::new(),
                    });
                    self.start_session(trigger)?;
                }
            }
            self.advance_stage2(self.config.stage2_catchup_factor * slice.len(), &mut events)?;
        }
        Ok(events)
    }

    /// Lets stage 2 finish its queued audio at end of stream; a stage 2 still
    /// waiting for audio is rejected at the current stream time.
    pub fn finish(&mut self) -> Result<Vec<CascadeEvent>> {
        let mut events = Vec::new();
        self.advance_stage2(usize::MAX, &mut events)?;
        if self.session.take().is_some() {
            let trigger = self.controller.current_trigger().expect("session implies trigger");
            if let Some(decision) = self.controller.abort(self.now_ms()) {
                events.push(self.decision_event(trigger, decision, Vec::new()));
            }
        }
        Ok(events)
    }

    fn start_session(&mut self, trigger: Trigger) -> Result<()> {
        let snapshot = self.ring.snapshot();
        let start = self.samples_seen - snapshot.len() as u64;
        let model = self.stage2_model.clone().expect("checked");
        let mut detector = KeywordDetector::new(self.config.stage2.clone(), model)?.with_offset(start);
        if self.speaker.is_some() {
            detector = detector.keeping_features();
        }
        let deadline_sample = (trigger.time_ms + self.config.timing.stage2_window_ms) * SAMPLES_PER_MS as u64;
        let mut session = Stage2Session {
            detector,
            pending: VecDeque::with_capacity(snapshot.len() + 16_000),
            queued_until: start,
            deadline_sample,
            scratch: Vec::new(),
        };
        session.enqueue(&snapshot.samples);
        self.session = Some(session);
        Ok(())
    }

    fn advance_stage2(&mut self, budget: usize, events: &mut Vec<CascadeEvent>) -> Result<()> {
        let Some(mut session) = self.session.take() else {
            return Ok(());
        };
        let trigger = self.controller.current_trigger().expect("session implies trigger");
        let n = budget.min(session.pending.len());
        let work: Vec<i16> = session.pending.drain(..n).collect();
        let mut detections = core::mem::take(&mut session.scratch);
        detections.clear();
        session.detector.push(&work, &mut detections)?;
        for d in &detections {
            if let Some(decision) = self.controller.stage2(d.time_ms, d.hypothesis.score) {
                let alignment: Vec<u64> = d
                    .hypothesis
                    .alignment
                    .iter()
                    .map(|&t| session.detector.frame_end_ms(t))
                    .collect();
                let event = self.decision_event(trigger, decision, alignment);
                events.push(event.clone());
                if let Stage2Decision::Accept { .. } = decision {
                    self.verify_speaker(&session, &d.hypothesis.alignment, &event, events)?;
                }
                return Ok(());
            }
        }
        session.scratch = detections;
        if session.exhausted() {
            let deadline_ms = session.deadline_sample / SAMPLES_PER_MS as u64;
            if let Some(decision) = self.controller.expire(deadline_ms) {
                events.push(self.decision_event(trigger, decision, Vec::new()));
            }
        } else {
            self.session = Some(session);
        }
        Ok(())
    }

    fn decision_event(&self, trigger: Trigger, decision: Stage2Decision, alignment_ms: Vec<u64>) -> CascadeEvent {
        let (kind, score, alignment_ms) = match decision {
            Stage2Decision::Accept { score, .. } => (EventKind::Stage2Accept, score, alignment_ms),
            Stage2Decision::Reject { best_score, .. } => (EventKind::Stage2Reject, best_score, Vec::new()),
        };
        CascadeEvent {
            kind,
            timestamp_ms: decision.time_ms(),
            emitted_ms: self.now_ms(),
            trigger_ms: trigger.time_ms,
            stage1_score: trigger.score,
            stage2_score: Some(score),
            speaker_score: None,
            alignment_ms,
        }
    }

    fn verify_speaker(
        &mut self,
        session: &Stage2Session,
        alignment: &[u64],
        accept: &CascadeEvent,
        events: &mut Vec<CascadeEvent>,
    ) -> Result<()> {
        let Some(check) = &self.speaker else {
            return Ok(());
        };
        let segment = keyword_segment(
            session.detector.features(),
            alignment,
            self.config.stage2.decoder.smoothing_window_frames,
        );
        let signature = speaker::embed(&segment, &check.model, self.config.speaker_accumulate)?;
        let verdict = speaker::verify(&signature, &check.profile)?;
        events.push(CascadeEvent {
            kind: if verdict.accepted {
                EventKind::SpeakerAccept
            } else {
                EventKind::SpeakerReject
            },
            speaker_score: Some(verdict.score),
            ..accept.clone()
        });
        self.controller.verification_done(accept.timestamp_ms)
    }
}

/// Features of the keyword segment: from the smoothing window of the first
/// unit's firing frame through the last unit's firing frame.
pub fn keyword_segment(features: &[FeatureFrame], alignment: &[u64], smoothing_window_frames: usize) -> Vec<FeatureFrame> {
    let lead = smoothing_window_frames.saturating_sub(1) as u64;
    let first = alignment.first().map_or(0, |&t| t.saturating_sub(lead));
    let last = alignment.last().copied().unwrap_or(0);
    features
        .iter()
        .filter(|f| (first..=last).contains(&f.frame_index))
        .cloned()
        .collect()
}
