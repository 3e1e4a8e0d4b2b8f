//! Pseudo-color previews as binary 8-bit PPM.

use std::fs;
use std::path::{Path, PathBuf};

use hsie_core::hsidata::{CubePaths, HsiCube};

use crate::exit::CliError;

/// Bands shown as red, green and blue.
pub const PREVIEW_BANDS: [usize; 3] = [57, 27, 17];

pub fn preview_path(cube_path: &Path) -> PathBuf {
    CubePaths::new(cube_path).header.with_extension("ppm")
}

/// `P6` image with each band clamped to `[0, 1]` and scaled to 0..=255.
pub fn render_ppm(cube: &HsiCube, bands: [usize; 3]) -> Vec<u8> {
    let (h, w, _) = cube.dims();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for &b in &bands {
                out.push((cube.get(b, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

/// Writes the preview next to `cube_path`, or warns and skips it when the
/// cube has too few bands.
pub fn write_preview(cube: &HsiCube, cube_path: &Path) -> Result<Option<PathBuf>, CliError> {
    let needed = PREVIEW_BANDS.iter().max().expect("three bands") + 1;
    if cube.bands() < needed {
        eprintln!(
            "warning: preview skipped, bands {:?} need at least {needed} bands but the cube has {}",
            PREVIEW_BANDS,
            cube.bands()
        );
        return Ok(None);
    }
    let path = preview_path(cube_path);
    fs::write(&path, render_ppm(cube, PREVIEW_BANDS)).map_err(|e| CliError::io(&path, e))?;
    Ok(Some(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_layout_and_scaling() {
        let cube = HsiCube::new(1, 2, 3, vec![0.0, 1.0, 0.5, 2.0, -1.0, 0.25]).unwrap();
        let ppm = render_ppm(&cube, [0, 1, 2]);
        let header = b"P6\n2 1\n255\n";
        assert_eq!(&ppm[..header.len()], header);
        assert_eq!(&ppm[header.len()..], &[0, 128, 0, 255, 255, 64]);
    }

    #[test]
    fn preview_sits_next_to_cube() {
        assert_eq!(preview_path(Path::new("out/x.hdr")), PathBuf::from("out/x.ppm"));
        assert_eq!(preview_path(Path::new("out/x")), PathBuf::from("out/x.ppm"));
    }
}
