//! Procedural face sprites with controllable behavior factors.
//!
//! A sprite is a schematic face: an elliptical head on a flat background,
//! a hair cap, two elliptical eyes and a mouth drawn as a thick curve. The
//! behavior factors act only inside fixed feature regions (eyes, mouth),
//! shifted by the pose offset, so every pixel change can be attributed to
//! one factor. [`measure_factor`] reads the factors back from pixels and is
//! the evaluation oracle for decoded images.

mod geometry;
pub mod io;
mod measure;
mod session;

pub use geometry::{feature_region, Region};
pub use measure::measure_factor;
pub use session::{generate_session, Event, FrameLabel, SessionSchedule};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use geometry::{FaceGeometry, Identity};

/// Default sprite side length in pixels.
pub const DEFAULT_SIZE: usize = 32;
pub const MIN_SIZE: usize = 16;

/// Behavior attributes a sprite can express.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attribute {
    Smile,
    Yawn,
    EyeClosure,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Smile, Attribute::Yawn, Attribute::EyeClosure];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Smile => "smile",
            Attribute::Yawn => "yawn",
            Attribute::EyeClosure => "eye_closure",
        }
    }

    /// Admissible factor range.
    pub fn range(self) -> (f64, f64) {
        match self {
            Attribute::Smile => (-1.0, 1.0),
            Attribute::Yawn | Attribute::EyeClosure => (0.0, 1.0),
        }
    }
}

impl std::fmt::Display for Attribute {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smile" => Ok(Attribute::Smile),
            "yawn" => Ok(Attribute::Yawn),
            "eye_closure" => Ok(Attribute::EyeClosure),
            other => Err(Error::validation(format!("unknown attribute `{other}`"))),
        }
    }
}

/// Generative factors of one sprite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactorVector {
    pub identity_seed: u64,
    /// Mouth curvature in [-1, 1]; positive is a smile.
    pub smile: f64,
    /// Mouth opening in [0, 1].
    pub yawn: f64,
    /// Eyelid closure in [0, 1]; 1 is fully closed.
    pub eye_closure: f64,
    /// Whole-face offset in pixels, each in [-2, 2].
    pub pose_dx: f64,
    pub pose_dy: f64,
    pub noise_seed: u64,
    /// Half-width of the additive uniform pixel noise.
    pub noise_level: f64,
}

impl FactorVector {
    /// Neutral, noiseless, centered face for an identity.
    pub fn neutral(identity_seed: u64) -> Self {
        FactorVector {
            identity_seed,
            smile: 0.0,
            yawn: 0.0,
            eye_closure: 0.0,
            pose_dx: 0.0,
            pose_dy: 0.0,
            noise_seed: 0,
            noise_level: 0.0,
        }
    }

    /// Build and validate.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        identity_seed: u64,
        smile: f64,
        yawn: f64,
        eye_closure: f64,
        pose_dx: f64,
        pose_dy: f64,
        noise_seed: u64,
        noise_level: f64,
    ) -> Result<Self> {
        let f = FactorVector { identity_seed, smile, yawn, eye_closure, pose_dx, pose_dy, noise_seed, noise_level };
        f.validate()?;
        Ok(f)
    }

    pub fn with(mut self, attr: Attribute, value: f64) -> Result<Self> {
        *self.factor_mut(attr) = value;
        self.validate()?;
        Ok(self)
    }

    pub fn factor(&self, attr: Attribute) -> f64 {
        match attr {
            Attribute::Smile => self.smile,
            Attribute::Yawn => self.yawn,
            Attribute::EyeClosure => self.eye_closure,
        }
    }

    fn factor_mut(&mut self, attr: Attribute) -> &mut f64 {
        match attr {
            Attribute::Smile => &mut self.smile,
            Attribute::Yawn => &mut self.yawn,
            Attribute::EyeClosure => &mut self.eye_closure,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for attr in Attribute::ALL {
            let (lo, hi) = attr.range();
            let v = self.factor(attr);
            if !(lo..=hi).contains(&v) {
                return Err(Error::validation(format!("{attr} = {v} outside [{lo}, {hi}]")));
            }
        }
        for (name, v) in [("pose_dx", self.pose_dx), ("pose_dy", self.pose_dy)] {
            if !(-2.0..=2.0).contains(&v) {
                return Err(Error::validation(format!("{name} = {v} outside [-2, 2]")));
            }
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::validation(format!("noise_level = {} must be finite and >= 0", self.noise_level)));
        }
        Ok(())
    }
}

/// A rendered grayscale sprite, row-major, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SpriteFrame {
    pub size: usize,
    pub pixels: Vec<f64>,
    pub subject_id: u32,
    pub frame_index: u32,
    /// Ground truth; for evaluation only.
    pub factors: FactorVector,
}

impl SpriteFrame {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.size + col]
    }
}

/// Render one sprite. Deterministic in `(factors, size)`.
pub fn render_sprite(factors: &FactorVector, size: usize) -> Result<SpriteFrame> {
    if size < MIN_SIZE {
        return Err(Error::validation(format!("sprite size {size} below minimum {MIN_SIZE}")));
    }
    factors.validate()?;
    let id = Identity::from_seed(factors.identity_seed);
    let geo = FaceGeometry::new(size, factors.pose_dx, factors.pose_dy);
    let mut pixels = vec![0.0; size * size];
    for row in 0..size {
        for col in 0..size {
            let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
            pixels[row * size + col] = geo.shade(&id, factors, px, py);
        }
    }
    if factors.noise_level > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(factors.noise_seed);
        let a = factors.noise_level;
        for p in pixels.iter_mut() {
            let n: f64 = rng.random_range(-a..=a);
            *p = (*p + n).clamp(0.0, 1.0);
        }
    }
    Ok(SpriteFrame { size, pixels, subject_id: 0, frame_index: 0, factors: *factors })
}

/// SplitMix64 finaliser, used to derive independent seeds.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_u64, |acc, &p| mix64(acc ^ mix64(p)))
}
