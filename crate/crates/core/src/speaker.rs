//! Speaker signatures: a per-frame embedding network averaged over the keyword
//! segment, enrolment by averaging, cosine-similarity verification.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::frontend::FeatureFrame;
use crate::inference::{AccumMode, EmbeddingModel};
use crate::math;
use crate::{Error, Result};

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_ENROLLMENT_UTTERANCES: usize = 3;
pub const PROFILE_MAGIC: &[u8; 4] = b"KWSV";

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerSignature {
    pub vector: Vec<f32>,
    pub source_frames: usize,
}

impl SpeakerSignature {
    pub fn new(vector: Vec<f32>) -> Self {
        Self {
            vector,
            source_frames: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    fn norm(&self) -> f64 {
        math::sqrt(self.vector.iter().map(|&v| v as f64 * v as f64).sum())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    /// Unit length.
    pub signature: SpeakerSignature,
    pub num_enrollment_utterances: usize,
    /// Accept when cosine similarity >= threshold.
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    pub score: f64,
    pub accepted: bool,
}

/// Runs the embedding network on every frame of the segment and averages the
/// outputs. Frames before the start of the segment are replaced by the first
/// frame when the network stacks context.
pub fn embed(features: &[FeatureFrame], model: &EmbeddingModel, mode: AccumMode) -> Result<SpeakerSignature> {
    if features.is_empty() {
        return Err(Error::Speaker("cannot embed an empty segment".into()));
    }
    let spec = model.network().input_spec;
    let mut sum = vec![0.0f64; model.dim()];
    let mut input = Vec::with_capacity(spec.input_dim());
    for t in 0..features.len() {
        input.clear();
        for k in 0..spec.num_stacked_frames {
            let idx = (t + k + 1).saturating_sub(spec.num_stacked_frames);
            let frame = &features[idx];
            if frame.channels.len() != spec.num_channels {
                return Err(Error::dimension(format!(
                    "embedding expects {} channels, frame has {}",
                    spec.num_channels,
                    frame.channels.len()
                )));
            }
            input.extend_from_slice(&frame.channels);
        }
        for (s, v) in sum.iter_mut().zip(model.network().forward(&input, mode)?) {
            *s += v as f64;
        }
    }
    let n = features.len() as f64;
    Ok(SpeakerSignature {
        vector: sum.into_iter().map(|s| (s / n) as f32).collect(),
        source_frames: features.len(),
    })
}

/// Mean of the signatures, normalised to unit length.
pub fn enroll(signatures: &[SpeakerSignature], threshold: f64) -> Result<SpeakerProfile> {
    let first = signatures
        .first()
        .ok_or_else(|| Error::Speaker("enrolment needs at least one signature".into()))?;
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::config(format!("speaker threshold {threshold} outside [-1, 1]")));
    }
    let d = first.dim();
    if let Some(bad) = signatures.iter().find(|s| s.dim() != d) {
        return Err(Error::dimension(format!("signature dimension {} differs from {d}", bad.dim())));
    }
    let mut mean = vec![0.0f64; d];
    for s in signatures {
        for (m, &v) in mean.iter_mut().zip(&s.vector) {
            *m += v as f64;
        }
    }
    let norm = math::sqrt(mean.iter().map(|m| m * m).sum());
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Speaker("enrolment mean has zero or non-finite length".into()));
    }
    Ok(SpeakerProfile {
        signature: SpeakerSignature {
            vector: mean.iter().map(|m| (m / norm) as f32).collect(),
            source_frames: signatures.iter().map(|s| s.source_frames).sum(),
        },
        num_enrollment_utterances: signatures.len(),
        threshold,
    })
}

pub fn cosine_similarity(a: &SpeakerSignature, b: &SpeakerSignature) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dimension(format!("signature dimensions {} and {} differ", a.dim(), b.dim())));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Speaker("cosine of a zero-length signature".into()));
    }
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(&x, &y)| x as f64 * y as f64).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn verify(test: &SpeakerSignature, profile: &SpeakerProfile) -> Result<Verification> {
    let score = cosine_similarity(test, &profile.signature)?;
    Ok(Verification {
        score,
        accepted: score >= profile.threshold,
    })
}

impl SpeakerProfile {
    /// `KWSV`, D (u32), D f32, threshold (f32), N (u32); little endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.signature.dim());
        out.extend_from_slice(PROFILE_MAGIC);
        out.extend_from_slice(&(self.signature.dim() as u32).to_le_bytes());
        for v in &self.signature.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.threshold as f32).to_le_bytes());
        out.extend_from_slice(&(self.num_enrollment_utterances as u32).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |at: usize| -> Result<[u8; 4]> {
            bytes
                .get(at..at + 4)
                .map(|b| [b[0], b[1], b[2], b[3]])
                .ok_or_else(|| Error::parse(at, "truncated speaker profile"))
        };
        if word(0)? != *PROFILE_MAGIC {
            return Err(Error::parse(0, "bad speaker profile magic"));
        }
        let d = u32::from_le_bytes(word(4)?) as usize;
        if d == 0 {
            return Err(Error::parse(4, "zero-dimensional profile"));
        }
        let expected = d
            .checked_mul(4)
            .and_then(|v| v.checked_add(16))
            .ok_or_else(|| Error::parse(4, "profile dimension overflows"))?;
        if bytes.len() != expected {
            return Err(Error::parse(bytes.len().min(expected), "speaker profile length does not match its dimension"));
        }
        let vector: Vec<f32> = (0..d).map(|i| word(8 + 4 * i).map(f32::from_le_bytes)).collect::<Result<_>>()?;
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(8, "non-finite profile value"));
        }
        let threshold = f32::from_le_bytes(word(8 + 4 * d)?) as f64;
        if !(-1.0..=1.0).contains(&threshold) {
            return Err(Error::parse(8 + 4 * d, "profile threshold outside [-1, 1]"));
        }
        let n = u32::from_le_bytes(word(12 + 4 * d)?) as usize;
        if n == 0 {
            return Err(Error::parse(12 + 4 * d, "profile enrolled from zero utterances"));
        }
        Ok(Self {
            signature: SpeakerSignature::new(vector),
            num_enrollment_utterances: n,
            threshold,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{Activation, InputSpec, Layer, Network};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sig(v: &[f32]) -> SpeakerSignature {
        SpeakerSignature::new(v.to_vec())
    }

    fn profile(v: &[f32], threshold: f64) -> SpeakerProfile {
        enroll(&[sig(v)], threshold).unwrap()
    }

    fn frames(seed: u64, n: usize, channels: usize) -> Vec<FeatureFrame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| FeatureFrame {
                channels: (0..channels).map(|_| rng.random_range(-8.0f32..4.0)).collect(),
                frame_index: i as u64,
                timestamp_ms: 10 * i as u64,
            })
            .collect()
    }

    fn random_embedding(seed: u64, channels: usize, stack: usize, dim: usize) -> EmbeddingModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let i = channels * stack;
        let w: Vec<f32> = (0..i * dim).map(|_| rng.random_range(-0.2f32..0.2)).collect();
        let b: Vec<f32> = (0..dim).map(|_| rng.random_range(-0.5f32..0.5)).collect();
        let layer = Layer::from_float(&w, &b, i, dim, Activation::None, (-10.0, 6.0)).unwrap();
        let spec = InputSpec { num_channels: channels, num_stacked_frames: stack };
        EmbeddingModel::new(Network::new("emb", spec, vec![layer]).unwrap()).unwrap()
    }

    #[test]
    fn enrolment_examples() {
        let p = profile(&[3.0, 4.0], 0.5);
        assert_eq!(p.signature.vector, vec![0.6, 0.8]);
        let v = sig(&[2.0, -1.0, 0.5]);
        let p3 = enroll(&[v.clone(), v.clone(), v.clone()], 0.5).unwrap();
        let p1 = enroll(&[v], 0.5).unwrap();
        assert_eq!(p3.signature.vector, p1.signature.vector);
        assert_eq!(p3.num_enrollment_utterances, 3);
        let p = enroll(&[sig(&[1.0, 0.0]), sig(&[0.0, 1.0])], 0.5).unwrap();
        let r = core::f32::consts::FRAC_1_SQRT_2;
        assert!(p.signature.vector.iter().all(|&x| (x - r).abs() < 1e-7));
        assert!(enroll(&[sig(&[1.0, 0.0]), sig(&[1.0])], 0.5).is_err());
        assert!(enroll(&[], 0.5).is_err());
    }

    #[test]
    fn verification_examples() {
        let p = profile(&[0.3, -0.2, 0.9], 1.0);
        let v = verify(&p.signature, &p).unwrap();
        assert!((v.score - 1.0).abs() < 1e-7);
        let p = profile(&[0.0, 1.0], 0.5);
        assert_eq!(verify(&sig(&[1.0, 0.0]), &p).unwrap().score, 0.0);
        let p = profile(&[1.0, 0.0], 0.7);
        let v = verify(&sig(&[1.0, 1.0]), &p).unwrap();
        assert!((v.score - 0.5f64.sqrt()).abs() < 1e-7);
        assert!(v.accepted);
        assert!(verify(&sig(&[0.0, 0.0]), &p).is_err());
        assert!(verify(&sig(&[1.0]), &p).is_err());
    }

    #[test]
    fn embedding_is_deterministic_and_smooth_under_padding() {
        let model = random_embedding(1, 40, 3, DEFAULT_DIM);
        let seg = frames(2, 60, 40);
        let a = embed(&seg, &model, AccumMode::FixedAccum).unwrap();
        let b = embed(&seg, &model, AccumMode::FixedAccum).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), DEFAULT_DIM);
        let mut longer = seg.clone();
        longer.push(FeatureFrame { channels: vec![-8.0; 40], frame_index: 60, timestamp_ms: 600 });
        let c = embed(&longer, &model, AccumMode::FixedAccum).unwrap();
        assert!(cosine_similarity(&a, &c).unwrap() >= 0.99);
        assert!(embed(&[], &model, AccumMode::FixedAccum).is_err());
    }

    #[test]
    fn constant_network_returns_its_bias() {
        let bias: Vec<f32> = (0..8).map(|i| i as f32 * 0.25 - 1.0).collect();
        let layer = Layer::from_float(&[0.0; 40 * 8], &bias, 40, 8, Activation::None, (-10.0, 6.0)).unwrap();
        let expect = layer.bias_real();
        let spec = InputSpec { num_channels: 40, num_stacked_frames: 1 };
        let model = EmbeddingModel::new(Network::new("c", spec, vec![layer]).unwrap()).unwrap();
        for seed in 0..3 {
            let s = embed(&frames(seed, 10, 40), &model, AccumMode::FixedAccum).unwrap();
            for ((&got, &e), &b) in s.vector.iter().zip(&expect).zip(&bias) {
                assert!((got - e).abs() < 1e-6);
                assert!((got - b).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn profile_bytes_round_trip() {
        let p = enroll(&[sig(&[1.0, 2.0, 3.0]), sig(&[0.5, 0.0, -1.0])], 0.25).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(bytes.len(), 16 + 12);
        assert_eq!(SpeakerProfile::from_bytes(&bytes).unwrap(), p);
        for n in 0..bytes.len() {
            assert!(SpeakerProfile::from_bytes(&bytes[..n]).is_err());
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(SpeakerProfile::from_bytes(&bad).is_err());
    }

    fn arb_vec() -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-10.0f32..10.0, 8).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn cosine_properties(a in arb_vec(), b in arb_vec(), alpha in 0.01f32..100.0, th in -1.0f64..1.0) {
            let (sa, sb) = (sig(&a), sig(&b));
            let ab = cosine_similarity(&sa, &sb).unwrap();
            let ba = cosine_similarity(&sb, &sa).unwrap();
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, ba);
            let p = profile(&b, th);
            let scaled = sig(&a.iter().map(|x| x * alpha).collect::<Vec<_>>());
            let v1 = verify(&sa, &p).unwrap();
            let v2 = verify(&scaled, &p).unwrap();
            prop_assert!((v1.score - v2.score).abs() <= 1e-6);
            if (v1.score - th).abs() > 1e-6 {
                prop_assert_eq!(v1.accepted, v2.accepted);
            }
        }

        #[test]
        fn power_of_two_scaling_is_exact(a in arb_vec(), b in arb_vec(), k in -20i32..20, th in -1.0f64..1.0) {
            let p = profile(&b, th);
            let alpha = 2.0f32.powi(k);
            let v1 = verify(&sig(&a), &p).unwrap();
            let v2 = verify(&sig(&a.iter().map(|x| x * alpha).collect::<Vec<_>>()), &p).unwrap();
            prop_assert!((v1.score - v2.score).abs() <= 1e-9);
            prop_assert_eq!(v1.accepted, v2.accepted);
        }
    }
}
