//! Minimum-statistics noise floor tracking on power spectra.
//!
//! Per bin: smooth the power over time, track the minimum of the smoothed
//! power over the last `SUBWINDOWS * SUBWINDOW_FRAMES` frames, and subtract
//! that minimum from the raw power, clamping at zero. No bias compensation.

use alloc::vec;
use alloc::vec::Vec;

pub const SUBWINDOWS: usize = 8;
pub const SUBWINDOW_FRAMES: usize = 12;
/// Temporal smoothing factor for the tracked power (float mode).
pub const SMOOTHING: f32 = 0.7;
/// Same factor in Q15 for fixed mode.
pub const SMOOTHING_Q15: u64 = 22938;

/// Number of frames the tracker needs before its estimate covers a full window.
pub const WARM_UP_FRAMES: usize = SUBWINDOWS * SUBWINDOW_FRAMES;

/// Power sample the tracker can operate on.
pub trait PowerValue: Copy + PartialOrd {
    const MAX: Self;
    fn smooth(prev: Self, current: Self) -> Self;
    fn saturating_sub(self, other: Self) -> Self;
}

impl PowerValue for f32 {
    const MAX: Self = f32::INFINITY;

    fn smooth(prev: Self, current: Self) -> Self {
        SMOOTHING * prev + (1.0 - SMOOTHING) * current
    }

    fn saturating_sub(self, other: Self) -> Self {
        (self - other).max(0.0)
    }
}

impl PowerValue for u32 {
    const MAX: Self = u32::MAX;

    fn smooth(prev: Self, current: Self) -> Self {
        let acc = SMOOTHING_Q15 * prev as u64 + (32768 - SMOOTHING_Q15) * current as u64;
        ((acc + 16384) >> 15) as u32
    }

    fn saturating_sub(self, other: Self) -> Self {
        u32::saturating_sub(self, other)
    }
}

fn min<T: PowerValue>(a: T, b: T) -> T {
    if b < a {
        b
    } else {
        a
    }
}

#[derive(Debug, Clone)]
pub struct NoiseTracker<T> {
    smoothed: Vec<T>,
    current_min: Vec<T>,
    /// Ring of completed sub-window minima, `SUBWINDOWS` rows of `bins`.
    history: Vec<T>,
    frames_in_subwindow: usize,
    next_row: usize,
    started: bool,
}

impl<T: PowerValue> NoiseTracker<T> {
    pub fn new(bins: usize) -> Self {
        Self {
            smoothed: vec![T::MAX; bins],
            current_min: vec![T::MAX; bins],
            history: vec![T::MAX; bins * SUBWINDOWS],
            frames_in_subwindow: 0,
            next_row: 0,
            started: false,
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.smoothed.len());
    }

    /// Updates the estimate with `power` and subtracts it in place.
    pub fn process(&mut self, power: &mut [T]) {
        let bins = self.smoothed.len();
        assert_eq!(power.len(), bins);
        if !self.started {
            self.smoothed.copy_from_slice(power);
            self.started = true;
        }
        for (b, p) in power.iter_mut().enumerate() {
            let s = T::smooth(self.smoothed[b], *p);
            self.smoothed[b] = s;
            self.current_min[b] = min(self.current_min[b], s);
            let floor = self
                .history
                .iter()
                .skip(b)
                .step_by(bins)
                .fold(self.current_min[b], |acc, &v| min(acc, v));
            *p = p.saturating_sub(floor);
        }
        self.frames_in_subwindow += 1;
        if self.frames_in_subwindow == SUBWINDOW_FRAMES {
            let row = self.next_row * bins;
            self.history[row..row + bins].copy_from_slice(&self.current_min);
            self.current_min.fill(T::MAX);
            self.next_row = (self.next_row + 1) % SUBWINDOWS;
            self.frames_in_subwindow = 0;
        }
    }
}

/// Batch form: runs a fresh tracker over `spectra` when `enabled`, identity otherwise.
pub fn noise_suppress<T: PowerValue>(spectra: &[Vec<T>], enabled: bool) -> Vec<Vec<T>> {
    let mut out = spectra.to_vec();
    if enabled {
        if let Some(first) = spectra.first() {
            let mut tracker = NoiseTracker::new(first.len());
            for frame in &mut out {
                tracker.process(frame);
            }
        }
    }
    out
}
