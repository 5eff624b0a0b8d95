use lglab::synthface::{feature_region, measure_factor, render_sprite, Attribute, FactorVector};
use proptest::prelude::*;

const SIZE: usize = 32;

fn changed_outside_region(a: &FactorVector, b: &FactorVector, attr: Attribute) -> Vec<(usize, usize)> {
    let pa = render_sprite(a, SIZE).unwrap().pixels;
    let pb = render_sprite(b, SIZE).unwrap().pixels;
    let regions = feature_region(attr, SIZE, a.pose_dx, a.pose_dy);
    let mut outside = Vec::new();
    for row in 0..SIZE {
        for col in 0..SIZE {
            let i = row * SIZE + col;
            if pa[i] != pb[i] && !regions.iter().any(|r| r.contains_pixel(row, col)) {
                outside.push((row, col));
            }
        }
    }
    outside
}

#[test]
fn smile_extremes_differ_only_in_mouth_region() {
    for id in 0..10 {
        let base = FactorVector::neutral(id);
        let up = base.with(Attribute::Smile, 1.0).unwrap();
        let down = base.with(Attribute::Smile, -1.0).unwrap();
        let pa = render_sprite(&up, SIZE).unwrap().pixels;
        let pb = render_sprite(&down, SIZE).unwrap().pixels;
        assert!(pa.iter().zip(&pb).any(|(x, y)| x != y));
        assert!(changed_outside_region(&up, &down, Attribute::Smile).is_empty());
    }
}

/// Spearman rank correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn readback_rank_correlates_with_truth_on_grid() {
    for attr in Attribute::ALL {
        let (lo, hi) = attr.range();
        let mut truth = Vec::new();
        let mut read = Vec::new();
        for k in 0..100 {
            let v = lo + (hi - lo) * k as f64 / 99.0;
            let f = FactorVector::neutral(k as u64 % 7).with(attr, v).unwrap();
            truth.push(v);
            read.push(measure_factor(&render_sprite(&f, SIZE).unwrap().pixels, SIZE, attr));
        }
        let rho = spearman(&truth, &read);
        assert!(rho >= 0.95, "{attr}: spearman {rho}");
    }
}

#[test]
fn spearman_helper_sanity() {
    assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
}

fn attribute() -> impl Strategy<Value = Attribute> {
    prop_oneof![Just(Attribute::Smile), Just(Attribute::Yawn), Just(Attribute::EyeClosure)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_factor_changes_stay_local(
        id in 0u64..1000,
        attr in attribute(),
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
        dx in -2.0f64..2.0,
        dy in -2.0f64..2.0,
        smile in -1.0f64..1.0,
        yawn in 0.0f64..1.0,
        eyes in 0.0f64..1.0,
    ) {
        let base = FactorVector::new(id, smile, yawn, eyes, dx, dy, 0, 0.0).unwrap();
        let (lo, hi) = attr.range();
        let fa = base.with(attr, lo + (hi - lo) * a).unwrap();
        let fb = base.with(attr, lo + (hi - lo) * b).unwrap();
        let outside = changed_outside_region(&fa, &fb, attr);
        prop_assert!(outside.is_empty(), "{:?} changed outside region at {:?}", attr, outside);
    }

    #[test]
    fn rendering_is_bit_stable_and_in_range(
        id in 0u64..1000,
        smile in -1.0f64..1.0,
        noise_seed in 0u64..100,
        noise in 0.0f64..0.2,
    ) {
        let f = FactorVector::new(id, smile, 0.3, 0.2, 0.5, -0.5, noise_seed, noise).unwrap();
        let a = render_sprite(&f, SIZE).unwrap();
        let b = render_sprite(&f, SIZE).unwrap();
        prop_assert_eq!(&a.pixels, &b.pixels);
        prop_assert!(a.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
