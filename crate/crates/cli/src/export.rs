//! Raw tensor files and lossless PNG frames for generated clips.

use std::fs;
use std::path::Path;

use dualcam_core::io::{bytes_to_f32, f32_to_bytes};
use dualcam_core::Clip;

use crate::{CliError, CliResult};

pub fn write_clip(path: &Path, clip: &Clip) -> CliResult<()> {
    fs::write(path, f32_to_bytes(&clip.data)).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Reads a raw little-endian f32 clip of the given shape.
pub fn read_clip(path: &Path, shape: [usize; 4]) -> CliResult<Clip> {
    let bytes = fs::read(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let expected = shape.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(CliError::Invalid(format!(
            "corrupt tensor file {}: {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let mut clip = Clip::zeros(shape[0], shape[1], shape[2], shape[3]);
    clip.data = bytes_to_f32(&bytes);
    Ok(clip)
}

/// Writes `frame_000.png`, ... under `dir`, 8-bit RGB.
pub fn write_png_frames(dir: &Path, clip: &Clip) -> CliResult<()> {
    let rt = |e: &dyn std::fmt::Display| CliError::Runtime(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(|e| rt(&e))?;
    if clip.channels != 3 {
        return Err(CliError::Invalid(format!("PNG export needs 3 channels, got {}", clip.channels)));
    }
    for u in 0..clip.frames {
        let bytes: Vec<u8> = clip
            .frame_slice(u)
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img = image::RgbImage::from_raw(clip.width as u32, clip.height as u32, bytes).expect("buffer matches shape");
        img.save(dir.join(format!("frame_{u:03}.png"))).map_err(|e| rt(&e))?;
    }
    Ok(())
}
