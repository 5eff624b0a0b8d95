use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::synthface::io::write_pgm;
use crate::synthface::{Event, SessionSchedule};

/// Gray level of the separators in [`export_image_grid`].
pub const SEPARATOR_LEVEL: f64 = 0.5;

/// Tile equally sized square images row-major into one image with 1-pixel
/// separators. Returns `(width, height, pixels)`.
pub fn tile_images(images: &[Vec<f64>], rows: usize, cols: usize) -> Result<(usize, usize, Vec<f64>)> {
    if rows == 0 || cols == 0 || images.len() != rows * cols {
        return Err(Error::validation(format!("{} images do not fill a {rows}×{cols} grid", images.len())));
    }
    let side = (images[0].len() as f64).sqrt().round() as usize;
    if side == 0 || images.iter().any(|im| im.len() != side * side) {
        return Err(Error::validation("grid images must be square and of one size"));
    }
    let (w, h) = (cols * side + cols - 1, rows * side + rows - 1);
    let mut out = vec![SEPARATOR_LEVEL; w * h];
    for (k, im) in images.iter().enumerate() {
        let (r, c) = (k / cols, k % cols);
        let (y0, x0) = (r * (side + 1), c * (side + 1));
        for i in 0..side {
            out[(y0 + i) * w + x0..(y0 + i) * w + x0 + side].copy_from_slice(&im[i * side..(i + 1) * side]);
        }
    }
    Ok((w, h, out))
}

/// Write a grid of images as one PGM.
pub fn export_image_grid(images: &[Vec<f64>], rows: usize, cols: usize, path: &Path) -> Result<()> {
    let (w, h, px) = tile_images(images, rows, cols)?;
    write_pgm(path, w, h, &px)
}

pub const SCHEDULE_HEADER: &str = "subject_id,start_frame,end_frame,attribute,intensity";

/// Schedule CSV. Subject and frame counts are not part of the file.
pub fn write_schedule(path: &Path, schedule: &SessionSchedule) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{SCHEDULE_HEADER}")?;
    for e in &schedule.events {
        writeln!(out, "{},{},{},{},{}", e.subject_id, e.start_frame, e.end_frame, e.attribute, e.intensity)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_schedule(path: &Path, subjects: u32, frames_per_subject: u32) -> Result<SessionSchedule> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let perr = |m: String| Error::Parse { path: name.clone(), line: i + 1, message: m };
        if i == 0 {
            if line.trim() != SCHEDULE_HEADER {
                return Err(perr(format!("expected header `{SCHEDULE_HEADER}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(perr(format!("expected 5 columns, found {}", cols.len())));
        }
        let int = |s: &str| s.parse::<u32>().map_err(|_| perr(format!("bad integer `{s}`")));
        events.push(Event {
            subject_id: int(cols[0])?,
            start_frame: int(cols[1])?,
            end_frame: int(cols[2])?,
            attribute: cols[3].parse().map_err(|_| perr(format!("unknown attribute `{}`", cols[3])))?,
            intensity: cols[4].parse().map_err(|_| perr(format!("bad intensity `{}`", cols[4])))?,
        });
    }
    SessionSchedule::new(subjects, frames_per_subject, events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthface::io::read_pgm;

    fn img(side: usize, v: f64) -> Vec<f64> {
        (0..side * side).map(|i| v + i as f64 * 1e-3).collect()
    }

    #[test]
    fn single_cell_has_no_separators() {
        let a = img(4, 0.1);
        let (w, h, px) = tile_images(std::slice::from_ref(&a), 1, 1).unwrap();
        assert_eq!((w, h), (4, 4));
        assert_eq!(px, a);
    }

    #[test]
    fn two_by_two_of_32_is_65_square() {
        let ims: Vec<Vec<f64>> = (0..4).map(|k| img(32, 0.1 * k as f64)).collect();
        let (w, h, px) = tile_images(&ims, 2, 2).unwrap();
        assert_eq!((w, h), (65, 65));
        for r in 0..2 {
            for c in 0..2 {
                for (i, j) in [(0, 0), (5, 17), (31, 31)] {
                    assert_eq!(px[(r * 33 + i) * w + c * 33 + j], ims[r * 2 + c][i * 32 + j]);
                }
            }
        }
        assert!((0..65).all(|y| px[y * w + 32] == SEPARATOR_LEVEL));
        assert!((0..65).all(|x| px[32 * w + x] == SEPARATOR_LEVEL));
    }

    #[test]
    fn grid_errors_and_file() {
        assert!(tile_images(&[img(4, 0.0)], 1, 2).is_err());
        assert!(tile_images(&[img(4, 0.0), img(3, 0.0)], 1, 2).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        export_image_grid(&[img(4, 0.0), img(4, 0.5)], 1, 2, &path).unwrap();
        let (w, h, _) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (9, 4));
    }

    #[test]
    fn schedule_roundtrip() {
        let s = SessionSchedule::random(3, 120, 10, 30, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_schedule(&path, &s).unwrap();
        assert_eq!(read_schedule(&path, 3, 120).unwrap(), s);

        fs::write(&path, format!("{SCHEDULE_HEADER}\n0,10,20,smile,1\n0,15,25,smile,1\n")).unwrap();
        assert!(read_schedule(&path, 1, 100).is_err());
        fs::write(&path, format!("{SCHEDULE_HEADER}\n0,10,20,frown,1\n")).unwrap();
        assert!(matches!(read_schedule(&path, 1, 100), Err(Error::Parse { line: 2, .. })));
    }
}
