mod common;

use common::*;
use kws_core::cascade::{CascadeEvent, EventKind};

fn of_kind(events: &[CascadeEvent], kind: EventKind) -> Vec<&CascadeEvent> {
    events.iter().filter(|e| e.kind == kind).collect()
}

#[test]
fn noise_alone_wakes_nothing() {
    let cfg = tone_config();
    let (audio, _) = audio_with_keywords(&cfg, 10, &[], &keyword());
    assert!(run_cascade(&cfg, &models(&cfg), &audio, 100).is_empty());
}

#[test]
fn each_keyword_triggers_once_and_is_accepted() {
    let cfg = tone_config();
    let (audio, ends) = audio_with_keywords(&cfg, 20, &[3000, 9000, 15000], &keyword());
    let events = run_cascade(&cfg, &models(&cfg), &audio, 100);
    let triggers = of_kind(&events, EventKind::Stage1Trigger);
    let accepts = of_kind(&events, EventKind::Stage2Accept);
    assert_eq!(triggers.len(), 3);
    assert_eq!(accepts.len(), 3);
    for ((t, a), end) in triggers.iter().zip(&accepts).zip(&ends) {
        assert!(t.timestamp_ms.abs_diff(*end) <= 250, "trigger {} vs end {end}", t.timestamp_ms);
        assert_eq!(a.trigger_ms, t.timestamp_ms);
        assert!(a.timestamp_ms <= t.timestamp_ms + 1000);
        assert_eq!(a.alignment_ms.len(), 3);
        assert!(a.alignment_ms.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn chunking_does_not_change_events() {
    let cfg = tone_config();
    let m = models(&cfg);
    let (audio, _) = audio_with_keywords(&cfg, 8, &[2000], &keyword());
    let a = run_cascade(&cfg, &m, &audio, 100);
    let b = run_cascade(&cfg, &m, &audio, 7);
    let strip = |v: &[CascadeEvent]| v.iter().map(|e| (e.kind, e.timestamp_ms, e.stage2_score)).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn unreachable_threshold_never_triggers() {
    let mut cfg = tone_config();
    cfg.stage1.threshold = 1.01;
    let (audio, _) = audio_with_keywords(&cfg, 8, &[2000], &keyword());
    assert!(run_cascade(&cfg, &models(&cfg), &audio, 100).is_empty());
}

#[test]
fn reversed_keyword_is_not_accepted() {
    let cfg = tone_config();
    let mut kw = keyword();
    kw.channels.reverse();
    let (audio, _) = audio_with_keywords(&cfg, 8, &[2000], &kw);
    let events = run_cascade(&cfg, &models(&cfg), &audio, 100);
    assert!(of_kind(&events, EventKind::Stage2Accept).is_empty());
}

#[test]
fn audio_before_models_is_a_lifecycle_error() {
    let cfg = tone_config();
    let mut cascade = kws_core::cascade::Cascade::new(cfg.cascade(3, 3)).unwrap();
    let err = cascade.push_audio(&kws_core::frontend::AudioChunk::new(vec![0; 160])).unwrap_err();
    assert!(matches!(err, kws_core::Error::Lifecycle(_)), "{err}");
}
