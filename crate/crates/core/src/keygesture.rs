//! Key-gesture winnowing by normalized cross-correlation.
//!
//! Each subject's stream is scanned once. The first usable frame seeds a
//! template dictionary; every later frame is compared against all
//! templates and, when its best correlation falls below `tau`, it is
//! reported as a key gesture and (while there is room) appended as a new
//! template.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.85;
pub const DEFAULT_MAX_TEMPLATES: usize = 32;
/// Mean-centered patches with per-pixel variance at or below this are degenerate.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// A grayscale image or sub-image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Patch {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::validation(format!(
                "patch {width}×{height} cannot hold {} pixels",
                pixels.len()
            )));
        }
        Ok(Patch { width, height, pixels })
    }

    /// Per-pixel variance after removing the mean.
    pub fn centered_variance(&self) -> f64 {
        let n = self.pixels.len() as f64;
        let mean = self.pixels.iter().sum::<f64>() / n;
        self.pixels.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n
    }

    /// Unit-norm mean-centered copy, or a degenerate-patch error.
    fn normalized(&self) -> Result<Vec<f64>> {
        let variance = self.centered_variance();
        if variance <= VARIANCE_FLOOR {
            return Err(Error::DegeneratePatch { variance });
        }
        let n = self.pixels.len() as f64;
        let mean = self.pixels.iter().sum::<f64>() / n;
        let norm = self.pixels.iter().map(|p| (p - mean).powi(2)).sum::<f64>().sqrt();
        Ok(self.pixels.iter().map(|p| (p - mean) / norm).collect())
    }
}

/// Normalized cross-correlation `Σ(a−ā)(b−b̄) / (‖a−ā‖·‖b−b̄‖)`, clamped to [-1, 1].
pub fn ncc(a: &Patch, b: &Patch) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::validation(format!(
            "ncc: shape mismatch {}×{} vs {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let (na, nb) = (a.normalized()?, b.normalized()?);
    Ok(dot(&na, &nb).clamp(-1.0, 1.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rectangle in pixel coordinates: top-left `(row, col)` and extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropBox {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// Cut a subject's predefined region out of a full frame, without resampling.
pub fn crop_subject_region(frame: &Patch, bx: CropBox) -> Result<Patch> {
    if bx.width == 0 || bx.height == 0 || bx.row + bx.height > frame.height || bx.col + bx.width > frame.width {
        return Err(Error::validation(format!(
            "crop box {bx:?} outside {}×{} frame",
            frame.width, frame.height
        )));
    }
    let mut pixels = Vec::with_capacity(bx.width * bx.height);
    for r in bx.row..bx.row + bx.height {
        let start = r * frame.width + bx.col;
        pixels.extend_from_slice(&frame.pixels[start..start + bx.width]);
    }
    Patch::new(bx.width, bx.height, pixels)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub patch: Patch,
    pub subject_id: u32,
    pub source_frame: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateDictionary {
    pub subject_id: u32,
    pub templates: Vec<Template>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyGestureEvent {
    pub subject_id: u32,
    pub frame_index: u32,
    /// Best correlation against the dictionary at emission time;
    /// `f64::NEG_INFINITY` for the seeding frame.
    pub best_ncc: f64,
}

impl KeyGestureEvent {
    pub fn is_seed(&self) -> bool {
        self.best_ncc == f64::NEG_INFINITY
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub events: Vec<KeyGestureEvent>,
    pub dictionary: TemplateDictionary,
    /// Frames skipped because they were constant.
    pub degenerate_skipped: usize,
}

/// Greedy single-pass key-gesture extraction over one subject's frames,
/// given as `(frame_index, patch)` in increasing frame order.
pub fn extract_key_gestures(subject_id: u32, frames: &[(u32, Patch)], tau: f64, max_templates: usize) -> Result<Extraction> {
    if frames.is_empty() {
        return Err(Error::validation("extract_key_gestures: empty frame sequence"));
    }
    if !(-1.0..=1.0).contains(&tau) {
        return Err(Error::validation(format!("tau = {tau} outside [-1, 1]")));
    }
    if max_templates == 0 {
        return Err(Error::validation("max_templates must be at least 1"));
    }
    if frames.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::validation("frame indices must be strictly increasing"));
    }
    let shape = (frames[0].1.width, frames[0].1.height);

    let mut events = Vec::new();
    let mut dictionary = TemplateDictionary { subject_id, templates: Vec::new() };
    let mut normalized: Vec<Vec<f64>> = Vec::new();
    let mut degenerate_skipped = 0;

    for (frame_index, patch) in frames {
        if (patch.width, patch.height) != shape {
            return Err(Error::validation(format!("frame {frame_index} has a different shape")));
        }
        let unit = match patch.normalized() {
            Ok(v) => v,
            Err(Error::DegeneratePatch { .. }) => {
                degenerate_skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let best = if normalized.is_empty() {
            f64::NEG_INFINITY
        } else {
            normalized.iter().map(|t| dot(t, &unit).clamp(-1.0, 1.0)).fold(f64::NEG_INFINITY, f64::max)
        };
        let seed = normalized.is_empty();
        if seed || best < tau {
            events.push(KeyGestureEvent { subject_id, frame_index: *frame_index, best_ncc: best });
            if normalized.len() < max_templates {
                normalized.push(unit);
                dictionary.templates.push(Template { patch: patch.clone(), subject_id, source_frame: *frame_index });
            }
        }
    }
    if degenerate_skipped > 0 {
        warn!("subject {subject_id}: skipped {degenerate_skipped} degenerate frames");
    }
    Ok(Extraction { events, dictionary, degenerate_skipped })
}

pub const KEY_GESTURE_HEADER: &str = "subject_id,frame_index,best_ncc";

pub fn write_key_gestures(path: &Path, events: &[KeyGestureEvent]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{KEY_GESTURE_HEADER}")?;
    for e in events {
        if e.is_seed() {
            writeln!(out, "{},{},", e.subject_id, e.frame_index)?;
        } else {
            writeln!(out, "{},{},{}", e.subject_id, e.frame_index, e.best_ncc)?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_key_gestures(path: &Path) -> Result<Vec<KeyGestureEvent>> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let perr = |m: &str| Error::Parse { path: name.clone(), line: i + 1, message: m.to_string() };
        if i == 0 {
            if line.trim() != KEY_GESTURE_HEADER {
                return Err(perr("unexpected header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(perr("expected 3 columns"));
        }
        let best_ncc = if cols[2].is_empty() {
            f64::NEG_INFINITY
        } else {
            cols[2].parse().map_err(|_| perr("bad best_ncc"))?
        };
        events.push(KeyGestureEvent {
            subject_id: cols[0].parse().map_err(|_| perr("bad subject_id"))?,
            frame_index: cols[1].parse().map_err(|_| perr("bad frame_index"))?,
            best_ncc,
        });
    }
    Ok(events)
}
