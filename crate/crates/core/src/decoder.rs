//! Posterior smoothing and the order-constrained keyword score.
//!
//! With smoothed posteriors `s_t(y_i)` (mean of `y_i` over the trailing `L`
//! frames) the score of a window of `T` frames is
//!
//! ```text
//! h = ( max_{t_1 <= t_2 <= ... <= t_M} prod_i s_{t_i}(y_i) )^(1/M)
//! ```
//!
//! computed as a log-space dynamic program: `B[i][t] = ln s_t(y_i) + max_{t' <= t} B[i-1][t']`.
//! Backpointers recover the firing frames; ties go to the earliest frame.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::inference::PosteriorFrame;
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    /// Keyword units M.
    pub num_units: usize,
    /// Smoothing window L.
    pub smoothing_window_frames: usize,
    /// Score window T_s.
    pub score_window_frames: usize,
    pub threshold: f64,
}

impl DecoderConfig {
    pub fn new(num_units: usize) -> Self {
        Self {
            num_units,
            smoothing_window_frames: 30,
            score_window_frames: 100,
            threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_units == 0 || self.smoothing_window_frames == 0 {
            return Err(Error::config("decoder needs num_units >= 1 and smoothing window >= 1"));
        }
        if self.score_window_frames < self.num_units {
            return Err(Error::config(format!(
                "score window {} shorter than {} units",
                self.score_window_frames, self.num_units
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config(format!("decoder threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedFrame {
    pub values: Vec<f64>,
    pub frame_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordHypothesis {
    /// h in [0, 1].
    pub score: f64,
    /// Firing frames t_1 <= ... <= t_M, as stream frame indices.
    pub alignment: Vec<u64>,
    /// Last frame of the scored window.
    pub end_frame: u64,
}

/// Running mean over the trailing `L` frames; during warm-up the mean is over
/// the frames seen so far.
#[derive(Debug, Clone)]
pub struct PosteriorSmoother {
    window: usize,
    history: VecDeque<Vec<f32>>,
}

impl PosteriorSmoother {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            history: VecDeque::with_capacity(window),
        }
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }

    pub fn push(&mut self, frame: &PosteriorFrame) -> SmoothedFrame {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(frame.keyword_posteriors.clone());
        let count = self.history.len() as f64;
        let values = (0..frame.keyword_posteriors.len())
            .map(|i| self.history.iter().map(|h| h[i] as f64).sum::<f64>() / count)
            .collect();
        SmoothedFrame {
            values,
            frame_index: frame.frame_index,
        }
    }
}

pub fn smooth(posteriors: &[PosteriorFrame], window: usize) -> Result<Vec<SmoothedFrame>> {
    if window == 0 {
        return Err(Error::config("smoothing window must be >= 1"));
    }
    let mut s = PosteriorSmoother::new(window);
    Ok(posteriors.iter().map(|p| s.push(p)).collect())
}

/// Reusable DP buffers.
#[derive(Debug, Clone, Default)]
struct ScoreScratch {
    row: Vec<f64>,
    next: Vec<f64>,
    back: Vec<u32>,
}

fn score_window<'a, I>(frames: I, num_units: usize, scratch: &mut ScoreScratch) -> KeywordHypothesis
where
    I: ExactSizeIterator<Item = &'a SmoothedFrame> + Clone,
{
    let t_len = frames.len();
    let m = num_units;
    let first_index = frames.clone().next().map_or(0, |f| f.frame_index);
    let end_frame = frames.clone().last().map_or(0, |f| f.frame_index);
    let log_s = |f: &SmoothedFrame, i: usize| math::ln(f.values[i]);

    let ScoreScratch { row, next, back } = scratch;
    row.clear();
    row.extend(frames.clone().map(|f| log_s(f, 0)));
    back.clear();
    back.resize(m * t_len, 0);
    for i in 1..m {
        next.clear();
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0u32);
        for (t, f) in frames.clone().enumerate() {
            // strict > keeps the earliest maximiser
            if row[t] > best || t == 0 {
                best = row[t];
                arg = t as u32;
            }
            back[i * t_len + t] = arg;
            next.push(log_s(f, i) + best);
        }
        core::mem::swap(row, next);
    }
    let (mut best, mut end) = (f64::NEG_INFINITY, 0usize);
    for (t, &v) in row.iter().enumerate() {
        if v > best || t == 0 {
            best = v;
            end = t;
        }
    }
    let mut alignment = vec![0u64; m];
    let mut t = end;
    for i in (0..m).rev() {
        alignment[i] = first_index + t as u64;
        t = back[i * t_len + t] as usize;
    }
    let score = math::exp(best / m as f64).clamp(0.0, 1.0);
    KeywordHypothesis {
        score,
        alignment,
        end_frame,
    }
}

/// Score of a window of smoothed frames. Alignment indices are taken from the
/// frames' `frame_index`, which are assumed consecutive.
pub fn keyword_score(window: &[SmoothedFrame]) -> Result<KeywordHypothesis> {
    let m = window.first().map_or(0, |f| f.values.len());
    if m == 0 || window.len() < m {
        return Err(Error::InsufficientFrames {
            needed: m.max(1),
            got: window.len(),
        });
    }
    if window.iter().any(|f| f.values.len() != m) {
        return Err(Error::dimension("smoothed frames disagree on unit count"));
    }
    Ok(score_window(window.iter(), m, &mut ScoreScratch::default()))
}

/// Per-frame decoder over the trailing `T_s` smoothed frames. State is the
/// smoother history plus the score window, O(M x (L + T_s)).
#[derive(Debug, Clone)]
pub struct StreamingDecoder {
    config: DecoderConfig,
    smoother: PosteriorSmoother,
    window: VecDeque<SmoothedFrame>,
    scratch: ScoreScratch,
}

impl StreamingDecoder {
    pub fn new(config: DecoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            smoother: PosteriorSmoother::new(config.smoothing_window_frames),
            window: VecDeque::with_capacity(config.score_window_frames),
            scratch: ScoreScratch::default(),
            config,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn reset(&mut self) {
        self.smoother.reset();
        self.window.clear();
    }

    /// Hypothesis over the window ending at `frame`. Before `M` frames have
    /// arrived the window is shorter than `M`; the score is still defined
    /// because firing frames may coincide.
    pub fn push(&mut self, frame: &PosteriorFrame) -> Result<KeywordHypothesis> {
        if frame.num_units() != self.config.num_units {
            return Err(Error::dimension(format!(
                "decoder expects {} units, frame has {}",
                self.config.num_units,
                frame.num_units()
            )));
        }
        if self.window.len() == self.config.score_window_frames {
            self.window.pop_front();
        }
        self.window.push_back(self.smoother.push(frame));
        Ok(score_window(self.window.iter(), self.config.num_units, &mut self.scratch))
    }
}

pub fn streaming_decode(posteriors: &[PosteriorFrame], config: DecoderConfig) -> Result<Vec<(u64, KeywordHypothesis)>> {
    let mut dec = StreamingDecoder::new(config)?;
    posteriors
        .iter()
        .map(|p| Ok((p.frame_index, dec.push(p)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn post(values: &[f32], index: u64) -> PosteriorFrame {
        PosteriorFrame {
            keyword_posteriors: values.to_vec(),
            filler_posterior: 1.0 - values.iter().sum::<f32>().min(1.0),
            frame_index: index,
        }
    }

    fn window(units: &[&[f64]]) -> Vec<SmoothedFrame> {
        (0..units[0].len())
            .map(|t| SmoothedFrame {
                values: units.iter().map(|u| u[t]).collect(),
                frame_index: t as u64,
            })
            .collect()
    }

    /// Exhaustive max over all non-decreasing firing tuples.
    fn brute_force(w: &[SmoothedFrame]) -> (f64, Vec<u64>) {
        let m = w[0].values.len();
        let t = w.len();
        let mut best = (-1.0f64, Vec::new());
        let mut tuple = vec![0usize; m];
        loop {
            let p: f64 = tuple.iter().enumerate().map(|(i, &ti)| w[ti].values[i]).product();
            if p > best.0 {
                best = (p, tuple.iter().map(|&x| x as u64).collect());
            }
            // next non-decreasing tuple in lexicographic order
            let mut k = m;
            loop {
                if k == 0 {
                    return (best.0.powf(1.0 / m as f64), best.1);
                }
                k -= 1;
                if tuple[k] + 1 < t {
                    tuple[k] += 1;
                    let v = tuple[k];
                    tuple[k + 1..].iter_mut().for_each(|x| *x = v);
                    break;
                }
            }
        }
    }

    #[test]
    fn smoothing_examples() {
        let stream: Vec<PosteriorFrame> = [0.2f32, 0.4, 0.6].iter().enumerate().map(|(i, &v)| post(&[v], i as u64)).collect();
        let got: Vec<f64> = smooth(&stream, 2).unwrap().iter().map(|s| s.values[0]).collect();
        for (g, e) in got.iter().zip([0.2, 0.3, 0.5]) {
            assert!((g - e).abs() < 1e-7, "{got:?}");
        }
        let id: Vec<f64> = smooth(&stream, 1).unwrap().iter().map(|s| s.values[0]).collect();
        assert_eq!(id, vec![0.2f32 as f64, 0.4f32 as f64, 0.6f32 as f64]);
        let constant: Vec<PosteriorFrame> = (0..50).map(|i| post(&[0.25], i)).collect();
        assert!(smooth(&constant, 7).unwrap().iter().all(|s| s.values[0] == 0.25));
        assert!(smooth(&constant, 0).is_err());
    }

    #[test]
    fn all_ones_scores_one_with_earliest_alignment() {
        let ones = [1.0; 5];
        let h = keyword_score(&window(&[&ones, &ones, &ones])).unwrap();
        assert_eq!(h.score, 1.0);
        assert_eq!(h.alignment, vec![0, 0, 0]);
        assert_eq!(h.end_frame, 4);
    }

    #[test]
    fn two_unit_example() {
        let w = window(&[&[0.9, 0.1, 0.1], &[0.2, 0.8, 0.1]]);
        let h = keyword_score(&w).unwrap();
        let (oracle, oracle_align) = brute_force(&w);
        assert!((oracle - 0.72f64.sqrt()).abs() < 1e-12);
        assert!((h.score - oracle).abs() < 1e-12);
        assert!((h.score - 0.8485).abs() < 1e-4);
        assert_eq!(h.alignment, vec![0, 1]);
        assert_eq!(oracle_align, vec![0, 1]);
    }

    #[test]
    fn single_unit_is_the_maximum() {
        let w = window(&[&[0.1, 0.7, 0.3, 0.7]]);
        let h = keyword_score(&w).unwrap();
        assert_eq!(h.score, 0.7);
        assert_eq!(h.alignment, vec![1]);
    }

    #[test]
    fn short_window_is_an_error() {
        let w = window(&[&[0.5], &[0.5], &[0.5]]);
        assert!(matches!(keyword_score(&w), Err(Error::InsufficientFrames { needed: 3, got: 1 })));
        assert!(keyword_score(&[]).is_err());
    }

    #[test]
    fn order_constraint_matters() {
        // unit 2 peaks strictly before unit 1
        let early = [0.0, 0.9, 0.0, 0.0, 0.0, 0.0];
        let late = [0.0, 0.0, 0.0, 0.0, 0.9, 0.0];
        let forward = keyword_score(&window(&[&early, &late])).unwrap().score;
        let reversed = keyword_score(&window(&[&late, &early])).unwrap().score;
        assert!(reversed < forward);
        assert_eq!(reversed, 0.0);
    }

    #[test]
    fn score_depends_on_unit_order() {
        let a = [0.9, 0.2, 0.1, 0.1];
        let b = [0.1, 0.3, 0.8, 0.2];
        let c = [0.1, 0.1, 0.3, 0.9];
        let in_order = keyword_score(&window(&[&a, &b, &c])).unwrap().score;
        let shuffled = keyword_score(&window(&[&c, &a, &b])).unwrap().score;
        assert!((in_order - shuffled).abs() > 0.1);
    }

    #[test]
    fn zero_keyword_posteriors_score_zero() {
        let frames: Vec<PosteriorFrame> = (0..200).map(|i| post(&[0.0, 0.0, 0.0], i)).collect();
        for (_, h) in streaming_decode(&frames, DecoderConfig::new(3)).unwrap() {
            assert_eq!(h.score, 0.0);
        }
    }

    #[test]
    fn thresholding_is_anti_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames: Vec<PosteriorFrame> = (0..300)
            .map(|i| post(&[rng.random_range(0.0..0.5), rng.random_range(0.0..0.5)], i))
            .collect();
        let scores: Vec<f64> = streaming_decode(&frames, DecoderConfig::new(2)).unwrap().into_iter().map(|(_, h)| h.score).collect();
        let accepted = |th: f64| scores.iter().filter(|&&s| s >= th).count();
        let mut prev = usize::MAX;
        for k in 0..=20 {
            let n = accepted(k as f64 / 20.0);
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn streaming_equals_batch_on_random_streams() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for m in 1..=5 {
            let frames: Vec<PosteriorFrame> = (0..500)
                .map(|i| {
                    let v: Vec<f32> = (0..m).map(|_| rng.random_range(0.0f32..1.0 / m as f32)).collect();
                    post(&v, i)
                })
                .collect();
            let cfg = DecoderConfig { num_units: m, smoothing_window_frames: 7, score_window_frames: 40, threshold: 0.5 };
            let streamed = streaming_decode(&frames, cfg).unwrap();
            let smoothed = smooth(&frames, 7).unwrap();
            for (t, (idx, h)) in streamed.iter().enumerate() {
                assert_eq!(*idx, t as u64);
                let lo = (t + 1).saturating_sub(40);
                if t + 1 - lo >= m {
                    let batch = keyword_score(&smoothed[lo..=t]).unwrap();
                    assert!((batch.score - h.score).abs() <= 1e-9);
                    assert_eq!(batch.alignment, h.alignment);
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(DecoderConfig::new(3).validate().is_ok());
        assert!(DecoderConfig { num_units: 0, ..DecoderConfig::new(1) }.validate().is_err());
        assert!(DecoderConfig { score_window_frames: 2, ..DecoderConfig::new(3) }.validate().is_err());
        assert!(DecoderConfig { threshold: 1.5, ..DecoderConfig::new(3) }.validate().is_err());
        let mut dec = StreamingDecoder::new(DecoderConfig::new(3)).unwrap();
        assert!(dec.push(&post(&[0.1, 0.1], 0)).is_err());
    }

    fn arb_window() -> impl Strategy<Value = Vec<SmoothedFrame>> {
        (1usize..=4, 1usize..=8).prop_flat_map(|(m, t)| {
            prop::collection::vec(prop::collection::vec(0.0f64..=1.0, m), t.max(m)).prop_map(|rows| {
                rows.into_iter()
                    .enumerate()
                    .map(|(i, values)| SmoothedFrame { values, frame_index: 100 + i as u64 })
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn dp_matches_brute_force(w in arb_window()) {
            let h = keyword_score(&w).unwrap();
            let (oracle, _) = brute_force(&w);
            prop_assert!((h.score - oracle).abs() <= 1e-9);
            // the alignment realises the score
            let m = w[0].values.len();
            let p: f64 = h.alignment.iter().enumerate().map(|(i, &t)| w[(t - 100) as usize].values[i]).product();
            prop_assert!((p.powf(1.0 / m as f64) - h.score).abs() <= 1e-9);
            prop_assert!(h.alignment.windows(2).all(|a| a[0] <= a[1]));
        }

        #[test]
        fn geometric_mean_bounds(w in arb_window()) {
            let h = keyword_score(&w).unwrap().score;
            let m = w[0].values.len();
            let peaks: Vec<f64> = (0..m).map(|i| w.iter().map(|f| f.values[i]).fold(0.0, f64::max)).collect();
            let geo = peaks.iter().product::<f64>().powf(1.0 / m as f64);
            prop_assert!((0.0..=1.0).contains(&h));
            prop_assert!(h <= geo + 1e-12);
        }
    }
}
