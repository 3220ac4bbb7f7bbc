use super::*;
use alloc::vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixed_config() -> FrontendConfig {
    FrontendConfig {
        arithmetic_mode: ArithmeticMode::FixedPoint,
        ..FrontendConfig::default()
    }
}

fn tone(freq_hz: f64, amplitude: f64, len: usize) -> Vec<i16> {
    (0..len)
        .map(|i| {
            let v = amplitude * math::sin(2.0 * core::f64::consts::PI * freq_hz * i as f64 / 16_000.0);
            v.round() as i16
        })
        .collect()
}

/// Lowpass-coloured noise: crude stand-in for speech energy distribution.
fn speech_like_noise(seed: u64, len: usize) -> Vec<i16> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = 0.0f64;
    (0..len)
        .map(|_| {
            let white: f64 = rng.random_range(-1.0..1.0);
            prev = 0.6 * prev + white;
            (prev * 6000.0).clamp(-32768.0, 32767.0) as i16
        })
        .collect()
}

#[test]
fn frame_count_examples() {
    let cfg = FrontendConfig::default();
    assert_eq!(frame_audio(&AudioChunk::new(vec![0; 400]), &cfg).unwrap().len(), 1);
    assert_eq!(frame_audio(&AudioChunk::new(vec![0; 399]), &cfg).unwrap().len(), 0);
    let frames = frame_audio(&AudioChunk::new(vec![1; 720]), &cfg).unwrap();
    let starts: Vec<u64> = frames.iter().map(|f| f.start_sample).collect();
    assert_eq!(starts, vec![0, 160, 320]);
    assert!(frames.iter().all(|f| f.data.len() == 512));
}

#[test]
fn frame_count_law_holds_for_many_lengths() {
    let cfg = FrontendConfig::default();
    for len in (0..3000).step_by(37) {
        let expected = if len >= 400 { (len - 400) / 160 + 1 } else { 0 };
        assert_eq!(frame_count(len, 400, 160), expected);
        let frames = frame_audio(&AudioChunk::new(vec![0; len]), &cfg).unwrap();
        assert_eq!(frames.len(), expected);
    }
}

#[test]
fn frame_longer_than_fft_is_config_error() {
    let cfg = FrontendConfig {
        fft_size: 256,
        ..FrontendConfig::default()
    };
    assert!(matches!(
        frame_audio(&AudioChunk::new(vec![0; 1000]), &cfg),
        Err(Error::Config(_))
    ));
}

#[test]
fn config_validation() {
    let ok = FrontendConfig::default();
    assert!(ok.validate().is_ok());
    let bad = [
        FrontendConfig { num_channels: 0, ..ok.clone() },
        FrontendConfig { num_channels: 129, ..ok.clone() },
        FrontendConfig { fft_size: 500, ..ok.clone() },
        FrontendConfig { mel_low_hz: 8000.0, ..ok.clone() },
        FrontendConfig { mel_high_hz: 9000.0, ..ok.clone() },
        FrontendConfig { log_floor: 0.0, ..ok.clone() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    assert!(AudioChunk::with_rate(vec![], 8000).is_err());
}

#[test]
fn zero_frame_hits_the_floor() {
    for cfg in [FrontendConfig::default(), fixed_config()] {
        let frames = frame_audio(&AudioChunk::new(vec![0; 400]), &cfg).unwrap();
        let feat = log_mel_spectrum(&frames[0], &cfg).unwrap();
        assert_eq!(feat.channels.len(), 40);
        let floor = cfg.log_floor_value();
        assert!(feat.channels.iter().all(|&c| c == floor), "{:?}", cfg.arithmetic_mode);
        assert!(floor as f64 >= math::ln(cfg.log_floor as f64) - 1e-6);
    }
}

#[test]
fn no_channel_is_ever_nan_or_infinite() {
    let mut loud = vec![i16::MAX; 800];
    for (i, s) in loud.iter_mut().enumerate() {
        if i % 2 == 1 {
            *s = i16::MIN;
        }
    }
    for cfg in [FrontendConfig::default(), fixed_config()] {
        let floor = cfg.log_floor_value();
        for samples in [vec![0; 800], loud.clone(), speech_like_noise(3, 800)] {
            let feats = Frontend::process_chunk(&cfg, &AudioChunk::new(samples)).unwrap();
            for f in feats {
                assert!(f.channels.iter().all(|c| c.is_finite() && *c >= floor));
            }
        }
    }
}

/// Independent oracle: f64 DFT of the Hann-windowed frame, triangular mel
/// weights evaluated directly from the mel formula.
fn oracle_log_mel(samples: &[i16], channels: usize) -> Vec<f64> {
    let n_fft = 512usize;
    let frame = samples.len();
    let x: Vec<f64> = samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let w = 0.5 - 0.5 * (2.0 * core::f64::consts::PI * i as f64 / frame as f64).cos();
            s as f64 / 32768.0 * w
        })
        .collect();
    let power: Vec<f64> = (0..=n_fft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let ph = -2.0 * core::f64::consts::PI * (k * t) as f64 / n_fft as f64;
                re += v * ph.cos();
                im += v * ph.sin();
            }
            re * re + im * im
        })
        .collect();
    let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let (lo, hi) = (mel(125.0), mel(7500.0));
    let step = (hi - lo) / (channels + 1) as f64;
    (0..channels)
        .map(|k| {
            let (l, c, r) = (lo + step * k as f64, lo + step * (k + 1) as f64, lo + step * (k + 2) as f64);
            let e: f64 = power
                .iter()
                .enumerate()
                .map(|(b, p)| {
                    let m = mel(b as f64 * 16_000.0 / n_fft as f64);
                    let w = if m > l && m <= c {
                        (m - l) / (c - l)
                    } else if m > c && m < r {
                        (r - m) / (r - c)
                    } else {
                        0.0
                    };
                    w * p
                })
                .sum();
            e.max(1e-12).ln()
        })
        .collect()
}

fn argmax(v: impl IntoIterator<Item = f64>) -> usize {
    v.into_iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

#[test]
fn tone_at_channel_centre_peaks_in_that_channel() {
    let cfg = FrontendConfig::default();
    let tables = FrontendTables::new(&cfg).unwrap();
    let centres: Vec<f64> = tables.mel().filters().iter().map(|f| f.center_hz).collect();
    for (k, &hz) in centres.iter().enumerate() {
        let samples = tone(hz, 32000.0, 400);
        let oracle = oracle_log_mel(&samples, 40);
        let frames = frame_audio(&AudioChunk::new(samples), &cfg).unwrap();
        let feat = tables.log_mel(&frames[0]).unwrap();
        let got = argmax(feat.channels.iter().map(|&c| c as f64));
        assert_eq!(argmax(oracle.iter().copied()), k, "oracle disagrees at channel {k}");
        assert_eq!(got, k, "channel {k} ({hz:.1} Hz)");
        let peak = oracle[k];
        for (a, b) in feat.channels.iter().zip(&oracle) {
            // f32 FFT round-off dominates far below the peak
            if peak - b < 12.0 {
                assert!((*a as f64 - b).abs() < 1e-2, "channel {k}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn fixed_point_is_deterministic() {
    let cfg = fixed_config();
    let chunk = AudioChunk::new(speech_like_noise(11, 4000));
    let a = Frontend::process_chunk(&cfg, &chunk).unwrap();
    let b = Frontend::process_chunk(&cfg, &chunk).unwrap();
    let bytes = |v: &[FeatureFrame]| {
        let mut out = Vec::new();
        v.iter().for_each(|f| f.append_le_bytes(&mut out));
        out
    };
    assert_eq!(bytes(&a), bytes(&b));
}

#[test]
fn float_and_fixed_agree_on_speech_like_noise() {
    let chunk = AudioChunk::new(speech_like_noise(5, 16_000));
    let float = Frontend::process_chunk(&FrontendConfig::default(), &chunk).unwrap();
    let fixed = Frontend::process_chunk(&fixed_config(), &chunk).unwrap();
    assert_eq!(float.len(), fixed.len());
    let mut worst = 0.0f32;
    for (a, b) in float.iter().zip(&fixed) {
        for (x, y) in a.channels.iter().zip(&b.channels) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst <= 0.1, "worst channel difference {worst}");
}

#[test]
fn streaming_matches_batch_for_any_split() {
    let samples = speech_like_noise(9, 5000);
    for cfg in [FrontendConfig::default(), fixed_config()] {
        let batch = Frontend::process_chunk(&cfg, &AudioChunk::new(samples.clone())).unwrap();
        let mut fe = Frontend::new(&cfg).unwrap();
        let mut streamed = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pos = 0;
        while pos < samples.len() {
            let n = rng.random_range(1..500).min(samples.len() - pos);
            fe.push(&samples[pos..pos + n], &mut streamed);
            pos += n;
        }
        assert_eq!(batch, streamed);
        assert_eq!(streamed[3].timestamp_ms, 30);
    }
}

#[test]
fn fixed_log2_is_accurate() {
    for x in [1u64, 2, 3, 10, 1000, 123_456_789, u32::MAX as u64, 1 << 45, u64::MAX] {
        let got = fixed_log2_q16(x).unwrap() as f64 / 65536.0;
        assert!((got - (x as f64).log2()).abs() < 1.0 / 32768.0, "{x}: {got}");
    }
    assert_eq!(fixed_log2_q16(0), None);
}

#[test]
fn noise_suppression_in_the_stream_removes_stationary_hum() {
    let hum = tone(1000.0, 3000.0, 16_000 * 2);
    for mode in [ArithmeticMode::Float, ArithmeticMode::FixedPoint] {
        let base = FrontendConfig {
            arithmetic_mode: mode,
            ..FrontendConfig::default()
        };
        let on = FrontendConfig {
            noise_suppression_enabled: true,
            ..base.clone()
        };
        let plain = Frontend::process_chunk(&base, &AudioChunk::new(hum.clone())).unwrap();
        let suppressed = Frontend::process_chunk(&on, &AudioChunk::new(hum.clone())).unwrap();
        let last = plain.len() - 1;
        let peak = argmax(plain[last].channels.iter().map(|&c| c as f64));
        assert!(suppressed[last].channels[peak] < plain[last].channels[peak] - 5.0);
    }
}
