//! Sprite and ground-truth file formats: 8-bit binary PGM (P5) and CSV.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::session::FrameLabel;
use super::SpriteFrame;
use crate::error::{Error, Result};

/// `s{subject}_f{frame}.pgm`
pub fn sprite_filename(subject: u32, frame: u32) -> String {
    format!("s{subject}_f{frame}.pgm")
}

pub fn sprite_path(dir: &Path, subject: u32, frame: u32) -> PathBuf {
    dir.join(sprite_filename(subject, frame))
}

/// Quantize [0, 1] to 8 bits.
pub fn quantize(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode a grayscale image as binary PGM.
pub fn encode_pgm(width: usize, height: usize, pixels: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&p| quantize(p)));
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::validation(format!("{} pixels for a {width}×{height} image", pixels.len())));
    }
    fs::write(path, encode_pgm(width, height, pixels))?;
    Ok(())
}

/// Decode a binary 8-bit PGM into `(width, height, pixels in [0, 1])`.
pub fn decode_pgm(bytes: &[u8], name: &str) -> Result<(usize, usize, Vec<f64>)> {
    let bad = |msg: &str| Error::Parse { path: name.to_string(), line: 1, message: msg.to_string() };
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII PGM header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PGM header number"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    pos += 1;
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated PGM payload"))?;
    Ok((w, h, data.iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path)?;
    decode_pgm(&bytes, &path.display().to_string())
}

/// One row of the ground-truth CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthRow {
    pub subject_id: u32,
    pub frame_index: u32,
    pub smile: f64,
    pub yawn: f64,
    pub eye_closure: f64,
    pub label: FrameLabel,
}

pub const GROUND_TRUTH_HEADER: &str = "subject_id,frame_index,smile,yawn,eye_closure,label";

pub fn ground_truth_rows(frames: &[SpriteFrame], label: impl Fn(u32, u32) -> FrameLabel) -> Vec<GroundTruthRow> {
    frames
        .iter()
        .map(|f| GroundTruthRow {
            subject_id: f.subject_id,
            frame_index: f.frame_index,
            smile: f.factors.smile,
            yawn: f.factors.yawn,
            eye_closure: f.factors.eye_closure,
            label: label(f.subject_id, f.frame_index),
        })
        .collect()
}

pub fn write_ground_truth(path: &Path, rows: &[GroundTruthRow]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{GROUND_TRUTH_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.subject_id,
            r.frame_index,
            r.smile,
            r.yawn,
            r.eye_closure,
            r.label.as_str()
        )?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthRow>> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != GROUND_TRUTH_HEADER {
                return Err(Error::Parse { path: name, line: 1, message: "unexpected header".into() });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let perr = |m: String| Error::Parse { path: name.clone(), line: i + 1, message: m };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(perr(format!("expected 6 columns, found {}", cols.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| perr(format!("bad number `{s}`")));
        let int = |s: &str| s.parse::<u32>().map_err(|_| perr(format!("bad integer `{s}`")));
        rows.push(GroundTruthRow {
            subject_id: int(cols[0])?,
            frame_index: int(cols[1])?,
            smile: num(cols[2])?,
            yawn: num(cols[3])?,
            eye_closure: num(cols[4])?,
            label: cols[5].parse().map_err(|_| perr(format!("bad label `{}`", cols[5])))?,
        });
    }
    Ok(rows)
}
