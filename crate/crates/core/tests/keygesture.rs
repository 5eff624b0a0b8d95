use lglab::keygesture::{extract_key_gestures, ncc, read_key_gestures, write_key_gestures, Patch};
use lglab::synthface::{render_sprite, FactorVector};
use proptest::prelude::*;

const SIZE: usize = 32;

fn sprite(smile: f64, yawn: f64, eyes: f64, noise_seed: u64) -> Patch {
    let f = FactorVector::new(3, smile, yawn, eyes, 0.0, 0.0, noise_seed, 0.01).unwrap();
    Patch::new(SIZE, SIZE, render_sprite(&f, SIZE).unwrap().pixels).unwrap()
}

#[test]
fn three_expression_stream_yields_three_templates() {
    let expressions = [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)];
    let mut frames = Vec::new();
    let mut segment = Vec::new();
    for (k, &(s, y, e)) in expressions.iter().enumerate() {
        for j in 0..20u32 {
            let idx = k as u32 * 20 + j;
            frames.push((idx, sprite(s, y, e, idx as u64)));
            segment.push(k);
        }
    }

    let mut within_min = f64::INFINITY;
    let mut across_max = f64::NEG_INFINITY;
    for i in 0..frames.len() {
        for j in i + 1..frames.len() {
            let c = ncc(&frames[i].1, &frames[j].1).unwrap();
            if segment[i] == segment[j] {
                within_min = within_min.min(c);
            } else {
                across_max = across_max.max(c);
            }
        }
    }
    assert!(across_max < 0.9 && 0.9 < within_min, "across {across_max}, within {within_min}");

    let ex = extract_key_gestures(0, &frames, 0.9, 32).unwrap();
    assert_eq!(ex.dictionary.templates.len(), 3);
    let idx: Vec<u32> = ex.events.iter().map(|e| e.frame_index).collect();
    assert_eq!(idx, vec![0, 20, 40]);
    assert!(ex.events[0].is_seed());
    assert!(ex.events[1..].iter().all(|e| e.best_ncc < 0.9));
}

fn ncc_direct(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut num = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    num / (va.sqrt() * vb.sqrt())
}

#[test]
fn report_roundtrip_keeps_seed_sentinel() {
    let frames: Vec<(u32, Patch)> = (0..30u32)
        .map(|i| (i * 2, sprite(if i < 15 { 0.0 } else { 1.0 }, 0.0, 0.0, i as u64)))
        .collect();
    let ex = extract_key_gestures(4, &frames, 0.9, 32).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("key.csv");
    write_key_gestures(&path, &ex.events).unwrap();
    let back = read_key_gestures(&path).unwrap();
    assert_eq!(back.len(), ex.events.len());
    assert!(back[0].is_seed());
    for (a, b) in back.iter().zip(&ex.events) {
        assert_eq!((a.subject_id, a.frame_index), (b.subject_id, b.frame_index));
        assert!(a.best_ncc == b.best_ncc || (a.best_ncc - b.best_ncc).abs() < 1e-12);
    }
}

/// A stream of sprites cycling through a few expression levels.
fn stream(levels: &[(u8, u8)]) -> Vec<(u32, Patch)> {
    levels
        .iter()
        .enumerate()
        .map(|(i, &(s, y))| (i as u32, sprite(s as f64 / 4.0, y as f64 / 4.0, 0.0, i as u64)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ncc_bounded_symmetric_and_matches_direct_formula(
        a in prop::collection::vec(0.0f64..1.0, 16),
        b in prop::collection::vec(0.0f64..1.0, 16),
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let pa = Patch::new(4, 4, a.clone()).unwrap();
        let pb = Patch::new(4, 4, b.clone()).unwrap();
        let c = ncc(&pa, &pb).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert!((c - ncc_direct(&a, &b)).abs() < 1e-9);
        prop_assert_eq!(c, ncc(&pb, &pa).unwrap());
        let affine = Patch::new(4, 4, a.iter().map(|v| shift + scale * v).collect()).unwrap();
        prop_assert!((ncc(&affine, &pb).unwrap() - c).abs() < 1e-9);
    }

    #[test]
    fn events_increase_and_respect_threshold(
        levels in prop::collection::vec((0u8..5, 0u8..5), 1..40),
        tau in 0.5f64..0.99,
        max_templates in 1usize..6,
    ) {
        let frames = stream(&levels);
        let ex = extract_key_gestures(1, &frames, tau, max_templates).unwrap();
        prop_assert!(!ex.events.is_empty() && ex.events.len() <= frames.len());
        prop_assert!(ex.events.windows(2).all(|w| w[0].frame_index < w[1].frame_index));
        prop_assert!(ex.events[1..].iter().all(|e| e.best_ncc < tau));
        prop_assert!(ex.dictionary.templates.len() <= max_templates);
    }

    #[test]
    fn raising_tau_never_reduces_events_on_sprite_streams(
        levels in prop::collection::vec((0u8..5, 0u8..5), 1..40),
        tau in 0.5f64..0.95,
        bump in 0.0f64..0.05,
        max_templates in 1usize..40,
    ) {
        let frames = stream(&levels);
        let low = extract_key_gestures(1, &frames, tau, max_templates).unwrap();
        let high = extract_key_gestures(1, &frames, tau + bump, max_templates).unwrap();
        prop_assert!(high.events.len() >= low.events.len());
    }
}
