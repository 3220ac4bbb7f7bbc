use alloc::vec::Vec;

use crate::{Error, Result};

/// Stage-2 and refractory timing, in stream milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CascadeTiming {
    /// Stage-2 frames earlier than `trigger - lookback` are ignored.
    pub lookback_ms: u64,
    /// Stage-2 concludes at `trigger + stage2_window`.
    pub stage2_window_ms: u64,
    /// Stage 1 may not re-trigger until this long after a stage-2 decision.
    pub refractory_ms: u64,
}

impl Default for CascadeTiming {
    fn default() -> Self {
        Self {
            lookback_ms: 2000,
            stage2_window_ms: 1000,
            refractory_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CascadeStateKind {
    Listening,
    Stage2Running,
    AwaitingVerification,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trigger {
    pub time_ms: u64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stage2Decision {
    Accept { time_ms: u64, score: f64 },
    /// `best_score` is the highest stage-2 score seen in the window.
    Reject { time_ms: u64, best_score: f64 },
}

impl Stage2Decision {
    pub fn time_ms(&self) -> u64 {
        match *self {
            Stage2Decision::Accept { time_ms, .. } | Stage2Decision::Reject { time_ms, .. } => time_ms,
        }
    }
}

/// The cascade's state machine, independent of where scores come from.
#[derive(Debug, Clone)]
pub struct CascadeController {
    pub stage1_threshold: f64,
    pub stage2_threshold: f64,
    timing: CascadeTiming,
    verification: bool,
    state: CascadeStateKind,
    trigger: Option<Trigger>,
    best_stage2: f64,
    refractory_until: u64,
    wake_count: u64,
    history: Vec<CascadeStateKind>,
    record_history: bool,
}

impl CascadeController {
    pub fn new(stage1_threshold: f64, stage2_threshold: f64, timing: CascadeTiming, verification: bool) -> Self {
        Self {
            stage1_threshold,
            stage2_threshold,
            timing,
            verification,
            state: CascadeStateKind::Listening,
            trigger: None,
            best_stage2: 0.0,
            refractory_until: 0,
            wake_count: 0,
            history: Vec::new(),
            record_history: false,
        }
    }

    /// Keeps every state entered, for inspection in tests.
    pub fn with_history(mut self) -> Self {
        self.record_history = true;
        self.history.push(self.state);
        self
    }

    pub fn history(&self) -> &[CascadeStateKind] {
        &self.history
    }

    pub fn timing(&self) -> CascadeTiming {
        self.timing
    }

    pub fn state(&self) -> CascadeStateKind {
        self.state
    }

    pub fn wake_count(&self) -> u64 {
        self.wake_count
    }

    pub fn current_trigger(&self) -> Option<Trigger> {
        self.trigger
    }

    pub fn stage2_deadline_ms(&self) -> Option<u64> {
        match self.state {
            CascadeStateKind::Stage2Running => self.trigger.map(|t| t.time_ms + self.timing.stage2_window_ms),
            _ => None,
        }
    }

    fn enter(&mut self, state: CascadeStateKind) {
        self.state = state;
        if self.record_history {
            self.history.push(state);
        }
    }

    /// Feeds one stage-1 score. Returns the trigger when stage 1 wakes stage 2.
    pub fn stage1(&mut self, time_ms: u64, score: f64) -> Option<Trigger> {
        if self.state != CascadeStateKind::Listening || time_ms < self.refractory_until || score < self.stage1_threshold {
            return None;
        }
        let trigger = Trigger { time_ms, score };
        self.trigger = Some(trigger);
        self.best_stage2 = 0.0;
        self.wake_count += 1;
        self.enter(CascadeStateKind::Stage2Running);
        Some(trigger)
    }

    /// Feeds one stage-2 score stamped with its stream time.
    pub fn stage2(&mut self, time_ms: u64, score: f64) -> Option<Stage2Decision> {
        let trigger = self.trigger.filter(|_| self.state == CascadeStateKind::Stage2Running)?;
        let deadline = trigger.time_ms + self.timing.stage2_window_ms;
        if time_ms + self.timing.lookback_ms < trigger.time_ms {
            return None;
        }
        if time_ms > deadline {
            return self.expire(deadline);
        }
        self.best_stage2 = self.best_stage2.max(score);
        if score >= self.stage2_threshold {
            let decision = Stage2Decision::Accept {
                time_ms: time_ms.max(trigger.time_ms),
                score,
            };
            if self.verification {
                self.enter(CascadeStateKind::AwaitingVerification);
            } else {
                self.settle(decision.time_ms());
            }
            return Some(decision);
        }
        None
    }

    /// Concludes a running stage 2 as a reject once `now_ms` reaches the deadline.
    pub fn expire(&mut self, now_ms: u64) -> Option<Stage2Decision> {
        let deadline = self.stage2_deadline_ms()?;
        (now_ms >= deadline).then(|| self.reject(deadline))
    }

    /// Concludes a running stage 2 as a reject at `time_ms`, e.g. at end of stream.
    pub fn abort(&mut self, time_ms: u64) -> Option<Stage2Decision> {
        let deadline = self.stage2_deadline_ms()?;
        Some(self.reject(time_ms.min(deadline)))
    }

    fn reject(&mut self, time_ms: u64) -> Stage2Decision {
        let best_score = self.best_stage2;
        self.settle(time_ms);
        Stage2Decision::Reject { time_ms, best_score }
    }

    /// Ends the verification step that followed a stage-2 accept.
    pub fn verification_done(&mut self, time_ms: u64) -> Result<()> {
        if self.state != CascadeStateKind::AwaitingVerification {
            return Err(Error::Lifecycle("no verification pending".into()));
        }
        self.settle(time_ms);
        Ok(())
    }

    fn settle(&mut self, decision_ms: u64) {
        self.refractory_until = decision_ms + self.timing.refractory_ms;
        self.trigger = None;
        self.enter(CascadeStateKind::Listening);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use CascadeStateKind::*;

    fn legal(history: &[CascadeStateKind]) -> bool {
        history.windows(2).all(|w| {
            matches!(
                (w[0], w[1]),
                (Listening, Stage2Running)
                    | (Stage2Running, Listening)
                    | (Stage2Running, AwaitingVerification)
                    | (AwaitingVerification, Listening)
            )
        })
    }

    #[test]
    fn accept_path_and_refractory() {
        let mut c = CascadeController::new(0.5, 0.6, CascadeTiming::default(), false).with_history();
        assert_eq!(c.stage1(100, 0.4), None);
        assert!(c.stage2(100, 0.9).is_none());
        let t = c.stage1(3000, 0.7).unwrap();
        assert_eq!(t.time_ms, 3000);
        assert_eq!(c.stage1(3010, 0.9), None);
        // too early for the lookback window
        assert_eq!(c.stage2(900, 1.0), None);
        assert_eq!(c.stage2(2500, 0.5), None);
        assert_eq!(c.stage2(2600, 0.8), Some(Stage2Decision::Accept { time_ms: 3000, score: 0.8 }));
        assert_eq!(c.state(), Listening);
        assert_eq!(c.stage1(3990, 0.9), None);
        assert!(c.stage1(4000, 0.9).is_some());
        assert_eq!(c.wake_count(), 2);
        assert!(legal(c.history()));
    }

    #[test]
    fn reject_at_the_deadline() {
        let mut c = CascadeController::new(0.5, 0.6, CascadeTiming::default(), false);
        c.stage1(5000, 0.9).unwrap();
        assert_eq!(c.stage2(5500, 0.3), None);
        assert_eq!(c.expire(5999), None);
        assert_eq!(c.stage2(6010, 0.9), Some(Stage2Decision::Reject { time_ms: 6000, best_score: 0.3 }));
        assert_eq!(c.stage1(6999, 0.9), None);
        assert!(c.stage1(7000, 0.9).is_some());
        assert_eq!(c.abort(7100), Some(Stage2Decision::Reject { time_ms: 7100, best_score: 0.0 }));
    }

    #[test]
    fn verification_state() {
        let mut c = CascadeController::new(0.5, 0.6, CascadeTiming::default(), true).with_history();
        assert!(c.verification_done(0).is_err());
        c.stage1(1000, 0.9).unwrap();
        c.stage2(1200, 0.9).unwrap();
        assert_eq!(c.state(), AwaitingVerification);
        assert_eq!(c.stage1(5000, 0.9), None);
        c.verification_done(1200).unwrap();
        assert_eq!(c.history(), &[Listening, Stage2Running, AwaitingVerification, Listening]);
        assert!(legal(c.history()));
    }

    #[test]
    fn unreachable_threshold_never_triggers() {
        let mut c = CascadeController::new(1.01, 0.0, CascadeTiming::default(), false);
        for t in 0..10_000 {
            assert!(c.stage1(t * 10, 1.0).is_none());
        }
        assert_eq!(c.wake_count(), 0);
    }
}
