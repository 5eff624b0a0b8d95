use std::collections::BTreeMap;
use std::sync::{Mutex, OnceLock};

use super::geometry::{readback_layout, Region, FEATURE_LEVEL};
use super::{render_sprite, Attribute, FactorVector};

/// Raw geometric statistics of a sprite's feature regions.
#[derive(Clone, Copy, Debug)]
struct RawReadings {
    /// Mouth center-band centroid row minus corner-band centroid row.
    curvature: f64,
    /// Total ink inside the mouth box.
    mouth_ink: f64,
    /// Total ink inside both eye boxes.
    eye_ink: f64,
}

/// Pixels of `region` as `(row, col, value)`.
fn region_pixels<'a>(pixels: &'a [f64], size: usize, region: &'a Region) -> impl Iterator<Item = (usize, usize, f64)> + 'a {
    (0..size).flat_map(move |row| {
        (0..size).filter(move |&col| region.contains_pixel(row, col)).map(move |col| (row, col, pixels[row * size + col]))
    })
}

/// Per-pixel ink for a region: `(skin − p) / (skin − feature)`, with the
/// skin level taken as the region's median. On a clean render this is the
/// feature's coverage of the pixel, so the region total is the feature
/// area. Not clamped, so zero-mean noise cancels in sums.
fn ink_map(pixels: &[f64], size: usize, region: &Region) -> Vec<(usize, usize, f64)> {
    let mut values: Vec<f64> = region_pixels(pixels, size, region).map(|(_, _, p)| p).collect();
    if values.is_empty() {
        return Vec::new();
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let skin = values[values.len() / 2];
    let span = (skin - FEATURE_LEVEL).max(1e-3);
    region_pixels(pixels, size, region).map(|(r, c, p)| (r, c, (skin - p) / span)).collect()
}

fn raw_readings(pixels: &[f64], size: usize) -> RawReadings {
    let layout = readback_layout(size);
    let mouth = ink_map(pixels, size, &layout.mouth_box);
    let mouth_ink = mouth.iter().map(|&(_, _, w)| w).sum();

    let (mut mass, mut x_moment) = (0.0, 0.0);
    for &(_, col, w) in &mouth {
        let w = w.max(0.0);
        mass += w;
        x_moment += w * (col as f64 + 0.5);
    }
    let cx = if mass > 0.0 { x_moment / mass } else { layout.mouth_cx };
    let hw = layout.mouth_hw;

    // Ink-weighted mean row in the center band and in the corner bands.
    let (mut wc, mut yc, mut wk, mut yk) = (0.0, 0.0, 0.0, 0.0);
    for &(row, col, w) in &mouth {
        let w = w.max(0.0);
        let off = ((col as f64 + 0.5) - cx).abs() / hw;
        let y = row as f64 + 0.5;
        if off < 0.5 {
            wc += w;
            yc += w * y;
        } else if (0.6..=1.0).contains(&off) {
            wk += w;
            yk += w * y;
        }
    }
    let curvature = if wc > 0.0 && wk > 0.0 { yc / wc - yk / wk } else { 0.0 };
    let eye_ink = layout
        .eye_boxes
        .iter()
        .map(|b| ink_map(pixels, size, b).iter().map(|&(_, _, w)| w).sum::<f64>())
        .sum();
    RawReadings { curvature, mouth_ink, eye_ink }
}

#[derive(Clone, Copy, Debug)]
struct Calibration {
    smile_neg: f64,
    smile_pos: f64,
    yawn_zero: f64,
    yawn_one: f64,
    eye_zero: f64,
    eye_one: f64,
}

fn calibrate(size: usize) -> Calibration {
    let read = |attr: Attribute, v: f64| {
        let f = FactorVector::neutral(0).with(attr, v).expect("in range");
        let sprite = render_sprite(&f, size).expect("valid size");
        raw_readings(&sprite.pixels, size)
    };
    Calibration {
        smile_neg: read(Attribute::Smile, -1.0).curvature,
        smile_pos: read(Attribute::Smile, 1.0).curvature,
        yawn_zero: read(Attribute::Yawn, 0.0).mouth_ink,
        yawn_one: read(Attribute::Yawn, 1.0).mouth_ink,
        eye_zero: read(Attribute::EyeClosure, 0.0).eye_ink,
        eye_one: read(Attribute::EyeClosure, 1.0).eye_ink,
    }
}

fn calibration(size: usize) -> Calibration {
    static CACHE: OnceLock<Mutex<BTreeMap<usize, Calibration>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    if let Some(c) = cache.lock().expect("calibration cache poisoned").get(&size) {
        return *c;
    }
    let c = calibrate(size);
    cache.lock().expect("calibration cache poisoned").insert(size, c);
    c
}

/// Read a behavior factor back from sprite pixels (row-major, `size×size`).
///
/// Each reading is a linear map of one geometric statistic, anchored on
/// noiseless reference renders at the ends of the factor's range: mouth
/// curvature for smile, mouth ink for yawn, eye ink for eye closure.
/// Readings are not clamped, so decoded images may read slightly outside
/// the factor range. Assumes `|pose| ≤ 1` pixel.
pub fn measure_factor(pixels: &[f64], size: usize, attr: Attribute) -> f64 {
    assert_eq!(pixels.len(), size * size, "pixel buffer does not match size");
    let raw = raw_readings(pixels, size);
    let c = calibration(size);
    match attr {
        Attribute::Smile => -1.0 + 2.0 * (raw.curvature - c.smile_neg) / (c.smile_pos - c.smile_neg),
        Attribute::Yawn => (raw.mouth_ink - c.yawn_zero) / (c.yawn_one - c.yawn_zero),
        Attribute::EyeClosure => (raw.eye_ink - c.eye_zero) / (c.eye_one - c.eye_zero),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reading(identity: u64, attr: Attribute, v: f64) -> f64 {
        let f = FactorVector::neutral(identity).with(attr, v).unwrap();
        let s = render_sprite(&f, 32).unwrap();
        measure_factor(&s.pixels, 32, attr)
    }

    #[test]
    fn smile_readback_near_truth() {
        for id in [0, 5, 17] {
            let m = reading(id, Attribute::Smile, 0.8);
            assert!((m - 0.8).abs() <= 0.1, "identity {id}: {m}");
        }
    }

    #[test]
    fn neutral_reads_zero_smile() {
        for id in [0, 3, 9] {
            let m = measure_factor(&render_sprite(&FactorVector::neutral(id), 32).unwrap().pixels, 32, Attribute::Smile);
            assert!(m.abs() <= 0.05, "identity {id}: {m}");
        }
    }

    #[test]
    fn smile_readback_monotone_on_grid() {
        let grid = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let readings: Vec<f64> = grid.iter().map(|&v| reading(2, Attribute::Smile, v)).collect();
        for w in readings.windows(2) {
            assert!(w[1] >= w[0], "{readings:?}");
        }
    }

    #[test]
    fn yawn_and_eyes_track_truth() {
        for attr in [Attribute::Yawn, Attribute::EyeClosure] {
            for v in [0.0, 0.3, 0.6, 1.0] {
                let m = reading(4, attr, v);
                assert!((m - v).abs() <= 0.1, "{attr} {v}: {m}");
            }
        }
    }
}
