use lglab::latentlab::{
    choose_epsilon, detect_signature, estimate_attribute_vector, flag_anomalies, matched_filter_scores, percentile,
    roc_auc, subject_mean, Centering, LabeledEncoding, Strategy, SubjectTrace,
};
use proptest::prelude::{any, prop, prop_assert, proptest, ProptestConfig};
use proptest::strategy::Strategy as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, center: &[f64]) -> Vec<f64> {
    center.iter().map(|c| c + rng.sample::<f64, _>(StandardNormal)).collect()
}

#[test]
fn subject_mean_matches_running_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = 16;
    let entries: Vec<(u32, Vec<f64>)> = (0..1000u32).map(|t| (t, gaussian(&mut rng, &vec![0.3; d]))).collect();
    let trace = SubjectTrace::new(0, entries.clone()).unwrap();
    let mu = subject_mean(&trace);

    // Running (Welford-style) mean, entries visited back to front.
    let mut running = vec![0.0; d];
    for (k, (_, z)) in entries.iter().rev().enumerate() {
        for j in 0..d {
            running[j] += (z[j] - running[j]) / (k + 1) as f64;
        }
    }
    for j in 0..d {
        assert!((mu[j] - running[j]).abs() < 1e-12);
    }
}

#[test]
fn injected_anomaly_is_the_only_flag() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 8;
    let center = vec![1.0; d];
    let mut codes: Vec<Vec<f64>> =
        (0..200).map(|_| center.iter().map(|c| c + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    // Re-center the neutral codes so their mean is exactly `center`.
    let m: Vec<f64> = (0..d).map(|j| codes.iter().map(|z| z[j]).sum::<f64>() / codes.len() as f64).collect();
    for z in &mut codes {
        for j in 0..d {
            z[j] += center[j] - m[j];
        }
    }
    let mut u = vec![0.0; d];
    u[3] = 1.0;
    // The injected code shifts μ_i too; scale it so it ends 5u from μ_i.
    let n = codes.len() as f64 + 1.0;
    let shift = 5.0 * n / (n - 1.0);
    codes.insert(57, center.iter().zip(&u).map(|(c, e)| c + shift * e).collect());
    let trace = SubjectTrace::new(0, codes.into_iter().enumerate().map(|(t, z)| (t as u32, z)).collect()).unwrap();

    let events = flag_anomalies(&trace, 2.0).unwrap();
    let flagged: Vec<u32> = events.iter().filter(|e| e.flagged).map(|e| e.t).collect();
    assert_eq!(flagged, vec![57]);
    assert!((events[57].score - 5.0).abs() < 1e-9);
}

/// Percentile by selecting the two bracketing order statistics.
fn select_percentile(values: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let mut v = values.to_vec();
    let a = *v.select_nth_unstable_by(lo, |x, y| x.total_cmp(y)).1;
    let b = if lo + 1 < values.len() { *v.select_nth_unstable_by(lo + 1, |x, y| x.total_cmp(y)).1 } else { a };
    a + (rank - lo as f64) * (b - a)
}

#[test]
fn percentile_matches_selection_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let values: Vec<f64> = (0..5001).map(|_| rng.random::<f64>() * 10.0).collect();
    for p in [0.5, 5.0, 37.3, 50.0, 95.0, 99.9] {
        assert!((percentile(&values, p).unwrap() - select_percentile(&values, p)).abs() < 1e-9);
    }
    assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0).unwrap(), 2.5);
}

#[test]
fn diff_of_means_concentrates_on_true_difference() {
    let d = 32;
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a: Vec<f64> = (0..d).map(|j| (j as f64 * 0.3).sin()).collect();
    let b: Vec<f64> = (0..d).map(|j| (j as f64 * 0.7).cos()).collect();
    let mut enc = Vec::with_capacity(2 * n);
    for _ in 0..n {
        enc.push(LabeledEncoding { z: gaussian(&mut rng, &a), subject_id: 0, positive: true });
        enc.push(LabeledEncoding { z: gaussian(&mut rng, &b), subject_id: 0, positive: false });
    }
    let v = estimate_attribute_vector("x", &enc, Strategy::DiffOfMeans).unwrap();
    let err: f64 = v.z_a.iter().zip(a.iter().zip(&b)).map(|(e, (x, y))| (e - (x - y)).powi(2)).sum::<f64>().sqrt();
    assert!(err < 4.0 * (2.0 * d as f64 / n as f64).sqrt(), "error {err}");
    assert_eq!((v.n_pos, v.n_neg), (n, n));
}

/// Two subjects, each with some positives and negatives.
fn labeled() -> impl proptest::strategy::Strategy<Value = Vec<LabeledEncoding>> {
    prop::collection::vec((prop::collection::vec(-3.0f64..3.0, 3), 0u32..2, any::<bool>()), 4..24).prop_map(|rows| {
        let mut out: Vec<LabeledEncoding> =
            rows.into_iter().map(|(z, subject_id, positive)| LabeledEncoding { z, subject_id, positive }).collect();
        for (i, (s, p)) in [(0, true), (0, false), (1, true), (1, false)].into_iter().enumerate() {
            out[i].subject_id = s;
            out[i].positive = p;
        }
        out
    })
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

const STRATEGIES: [Strategy; 3] = [Strategy::DiffOfMeans, Strategy::PositiveMeanOnly, Strategy::PerSubjectCentered];

fn trace_of(codes: &[Vec<f64>]) -> SubjectTrace {
    SubjectTrace::new(7, codes.iter().cloned().enumerate().map(|(t, z)| (t as u32, z)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimates_scale_with_encodings(enc in labeled(), c in 0.1f64..10.0) {
        let scaled: Vec<LabeledEncoding> =
            enc.iter().map(|e| LabeledEncoding { z: e.z.iter().map(|v| c * v).collect(), ..e.clone() }).collect();
        for s in STRATEGIES {
            let a = estimate_attribute_vector("a", &enc, s).unwrap();
            let b = estimate_attribute_vector("a", &scaled, s).unwrap();
            let expect: Vec<f64> = a.z_a.iter().map(|v| c * v).collect();
            prop_assert!(close(&b.z_a, &expect, 1e-9), "{:?}", s);
        }
    }

    #[test]
    fn translation_moves_only_positive_mean(enc in labeled(), shift in prop::collection::vec(-5.0f64..5.0, 3)) {
        let moved: Vec<LabeledEncoding> = enc
            .iter()
            .map(|e| LabeledEncoding { z: e.z.iter().zip(&shift).map(|(v, s)| v + s).collect(), ..e.clone() })
            .collect();
        for s in STRATEGIES {
            let a = estimate_attribute_vector("a", &enc, s).unwrap();
            let b = estimate_attribute_vector("a", &moved, s).unwrap();
            let expect: Vec<f64> = match s {
                Strategy::PositiveMeanOnly => a.z_a.iter().zip(&shift).map(|(v, d)| v + d).collect(),
                _ => a.z_a.clone(),
            };
            prop_assert!(close(&b.z_a, &expect, 1e-9), "{:?}", s);
        }
    }

    #[test]
    fn matched_filter_scores_scale_quadratically(
        codes in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..20),
        za in prop::collection::vec(-2.0f64..2.0, 4),
        c in 0.1f64..10.0,
    ) {
        let scaled: Vec<Vec<f64>> = codes.iter().map(|z| z.iter().map(|v| c * v).collect()).collect();
        let za_scaled: Vec<f64> = za.iter().map(|v| c * v).collect();
        for centering in [Centering::None, Centering::PerSubject] {
            let a = matched_filter_scores(&trace_of(&codes), &za, centering).unwrap();
            let b = matched_filter_scores(&trace_of(&scaled), &za_scaled, centering).unwrap();
            for ((_, x), (_, y)) in a.iter().zip(&b) {
                prop_assert!((y - c * c * x).abs() <= 1e-9 * (1.0 + (c * c * x).abs()));
            }
        }
    }

    #[test]
    fn signature_cosine_ignores_common_scale(
        codes in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 2..20),
        za in prop::collection::vec(0.5f64..2.0, 4),
        c in 0.1f64..10.0,
    ) {
        let scaled: Vec<Vec<f64>> = codes.iter().map(|z| z.iter().map(|v| c * v).collect()).collect();
        let za_scaled: Vec<f64> = za.iter().map(|v| c * v).collect();
        let a = detect_signature(&trace_of(&codes), &za, 0.6, (0.5, 2.0)).unwrap();
        let b = detect_signature(&trace_of(&scaled), &za_scaled, 0.6, (0.5, 2.0)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.score - y.score).abs() < 1e-9);
        }
    }

    #[test]
    fn percentile_threshold_bounds_reference_flags(
        codes in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..80),
        p in 50.0f64..99.0,
    ) {
        let trace = trace_of(&codes);
        let eps = choose_epsilon(std::slice::from_ref(&trace), |_, _| true, p).unwrap();
        let flagged = flag_anomalies(&trace, eps).unwrap().iter().filter(|e| e.flagged).count();
        let bound = (100.0 - p) / 100.0 * codes.len() as f64 + 1.0;
        prop_assert!(flagged as f64 <= bound, "{} flags, bound {}", flagged, bound);
    }

    #[test]
    fn auc_matches_pairwise_comparison(
        pos in prop::collection::vec(-3i32..3, 1..30),
        neg in prop::collection::vec(-3i32..3, 1..30),
    ) {
        let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
        let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
        let mut wins = 0.0;
        for p in &pos {
            for n in &neg {
                wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        let oracle = wins / (pos.len() * neg.len()) as f64;
        prop_assert!((roc_auc(&pos, &neg).unwrap() - oracle).abs() < 1e-12);
    }
}
