use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Attribute, FactorVector};

// Nominal layout as fractions of the sprite side.
const HEAD_CY: f64 = 0.56;
const EYE_CY: f64 = 0.42;
const EYE_DX: f64 = 0.17;
const EYE_RX: f64 = 0.085;
const EYE_RY_OPEN: f64 = 0.07;
const EYE_RY_CLOSED: f64 = 0.015;
const MOUTH_CY: f64 = 0.72;
const MOUTH_HW: f64 = 0.19;
const MOUTH_CURVE: f64 = 0.11;
const MOUTH_T0: f64 = 0.03;
const MOUTH_OPEN: f64 = 0.08;

pub(super) const FEATURE_LEVEL: f64 = 0.08;

/// Static appearance of one subject.
#[derive(Clone, Copy, Debug)]
pub(super) struct Identity {
    head_rx: f64,
    head_ry: f64,
    skin: f64,
    background: f64,
    hair: f64,
    hair_depth: f64,
}

impl Identity {
    pub(super) fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1D_E7_17_7E);
        let skin = rng.random_range(0.70..0.85);
        Identity {
            head_rx: rng.random_range(0.40..0.44),
            head_ry: rng.random_range(0.45..0.48),
            skin,
            background: skin - rng.random_range(0.06..0.12),
            hair: skin - rng.random_range(0.15..0.30),
            hair_depth: rng.random_range(0.07..0.12),
        }
    }
}

/// Axis-aligned pixel-space rectangle; a pixel belongs to it when its
/// center lies inside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Region {
    pub fn contains_pixel(&self, row: usize, col: usize) -> bool {
        let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    fn grow(&self, d: f64) -> Region {
        Region { x0: self.x0 - d, x1: self.x1 + d, y0: self.y0 - d, y1: self.y1 + d }
    }
}

pub(super) struct FaceGeometry {
    s: f64,
    cx: f64,
    dx: f64,
    dy: f64,
}

#[inline]
fn coverage(signed_dist: f64) -> f64 {
    (0.5 - signed_dist).clamp(0.0, 1.0)
}

/// Approximate signed distance (pixels) to an axis-aligned ellipse boundary.
fn ellipse_dist(px: f64, py: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    let (u, v) = ((px - cx) / rx, (py - cy) / ry);
    let r = (u * u + v * v).sqrt();
    if r < 1e-12 {
        return -rx.min(ry);
    }
    let grad = ((px - cx).powi(2) / rx.powi(4) + (py - cy).powi(2) / ry.powi(4)).sqrt() / r;
    (r - 1.0) / grad
}

impl FaceGeometry {
    pub(super) fn new(size: usize, dx: f64, dy: f64) -> Self {
        let s = size as f64;
        FaceGeometry { s, cx: 0.5 * s, dx, dy }
    }

    fn eye_centers(&self) -> [(f64, f64); 2] {
        let y = EYE_CY * self.s + self.dy;
        [(self.cx - EYE_DX * self.s + self.dx, y), (self.cx + EYE_DX * self.s + self.dx, y)]
    }

    fn mouth_center(&self) -> (f64, f64) {
        (self.cx + self.dx, MOUTH_CY * self.s + self.dy)
    }

    /// Declared region for a feature: every pixel a factor can touch.
    pub(super) fn region(&self, attr: Attribute) -> Vec<Region> {
        let s = self.s;
        match attr {
            Attribute::EyeClosure => self
                .eye_centers()
                .iter()
                .map(|&(x, y)| {
                    Region { x0: x - EYE_RX * s, x1: x + EYE_RX * s, y0: y - EYE_RY_OPEN * s, y1: y + EYE_RY_OPEN * s }
                        .grow(1.0)
                })
                .collect(),
            Attribute::Smile | Attribute::Yawn => {
                let (x, y) = self.mouth_center();
                let half_h = (2.0 / 3.0 * MOUTH_CURVE + MOUTH_T0 + MOUTH_OPEN) * s;
                vec![Region { x0: x - MOUTH_HW * s, x1: x + MOUTH_HW * s, y0: y - half_h, y1: y + half_h }.grow(1.0)]
            }
        }
    }

    pub(super) fn shade(&self, id: &Identity, f: &FactorVector, px: f64, py: f64) -> f64 {
        let s = self.s;
        let mut v = id.background;

        let (hcx, hcy) = (self.cx + self.dx, HEAD_CY * s + self.dy);
        let (hrx, hry) = (id.head_rx * s, id.head_ry * s);
        let head = coverage(ellipse_dist(px, py, hcx, hcy, hrx, hry));
        v += (id.skin - v) * head;

        let hairline = hcy - hry + id.hair_depth * s;
        let hair = head * coverage(py - hairline);
        v += (id.hair - v) * hair;

        let ry = (EYE_RY_CLOSED + (EYE_RY_OPEN - EYE_RY_CLOSED) * (1.0 - f.eye_closure)) * s;
        for (ex, ey) in self.eye_centers() {
            let c = coverage(ellipse_dist(px, py, ex, ey, EYE_RX * s, ry));
            v += (FEATURE_LEVEL - v) * c;
        }

        let (mx, my) = self.mouth_center();
        let hw = MOUTH_HW * s;
        let u = ((px - mx) / hw).clamp(-1.0, 1.0);
        let curve_y = my - MOUTH_CURVE * s * f.smile * (u * u - 1.0 / 3.0);
        let half_thick = MOUTH_T0 * s + MOUTH_OPEN * s * f.yawn * (1.0 - u * u).sqrt();
        let d_vert = (py - curve_y).abs() - half_thick;
        let d_horz = (px - mx).abs() - hw;
        let c = coverage(d_vert.max(d_horz));
        v += (FEATURE_LEVEL - v) * c;

        v.clamp(0.0, 1.0)
    }
}

/// Pixel region that `attr` may change on a sprite of `size` at the given pose.
pub fn feature_region(attr: Attribute, size: usize, pose_dx: f64, pose_dy: f64) -> Vec<Region> {
    FaceGeometry::new(size, pose_dx, pose_dy).region(attr)
}

/// Nominal mouth column center, half width, and feature box for read-back.
pub(super) struct ReadbackLayout {
    pub mouth_cx: f64,
    pub mouth_hw: f64,
    pub mouth_box: Region,
    pub eye_boxes: [Region; 2],
}

pub(super) fn readback_layout(size: usize) -> ReadbackLayout {
    let g = FaceGeometry::new(size, 0.0, 0.0);
    let s = g.s;
    let (mx, my) = g.mouth_center();
    let mouth_half_h = (2.0 / 3.0 * MOUTH_CURVE + MOUTH_T0 + MOUTH_OPEN) * s;
    let mouth_box = Region {
        x0: mx - MOUTH_HW * s - 1.5,
        x1: mx + MOUTH_HW * s + 1.5,
        y0: my - mouth_half_h - 0.5,
        y1: my + mouth_half_h + 1.0,
    };
    let eyes = g.eye_centers();
    let eye_box = |(x, y): (f64, f64)| Region {
        x0: x - EYE_RX * s - 2.0,
        x1: x + EYE_RX * s + 2.0,
        y0: y - EYE_RY_OPEN * s - 1.5,
        y1: y + EYE_RY_OPEN * s + 1.0,
    };
    ReadbackLayout { mouth_cx: mx, mouth_hw: MOUTH_HW * s, mouth_box, eye_boxes: [eye_box(eyes[0]), eye_box(eyes[1])] }
}
