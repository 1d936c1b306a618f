use std::fmt::Write as _;
use std::path::Path;

use super::ReportVariant;
use crate::data::{write_pgm, GrayImage};
use crate::error::{contract, CoreError, Result};

/// Upsamples a square attention map to `size × size`, scaled so its
/// largest weight is white.
pub fn upsample_map(alpha: &[f64], size: usize) -> Result<GrayImage> {
    let side = (alpha.len() as f64).sqrt().round() as usize;
    if side == 0 || side * side != alpha.len() || size % side != 0 {
        return Err(contract(format!(
            "attention map of {} weights does not tile a {size}x{size} image",
            alpha.len()
        )));
    }
    let max = alpha.iter().cloned().fold(0.0, f64::max);
    let cell = size / side;
    let pixels = (0..size * size)
        .map(|p| {
            let (r, c) = (p / size / cell, p % size / cell);
            let a = if max > 0.0 { alpha[r * side + c] / max } else { 0.0 };
            (a * 255.0).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(size, size, pixels)
}

/// Writes `sentence_<i>.csv` (one row per token, one column per location)
/// and `sentence_<i>_token_<t>.pgm` heat maps into `dir`.
pub fn export_attention_maps(v: &ReportVariant, dir: &Path, image_size: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    for (i, maps) in v.attention_maps.iter().enumerate() {
        let mut csv = String::new();
        for row in maps {
            let cells: Vec<String> = row.iter().map(|a| a.to_string()).collect();
            writeln!(csv, "{}", cells.join(",")).expect("string write");
        }
        let path = dir.join(format!("sentence_{i}.csv"));
        std::fs::write(&path, csv).map_err(|e| CoreError::io(&path, e))?;
        for (t, row) in maps.iter().enumerate() {
            let img = upsample_map(row, image_size)?;
            write_pgm(&dir.join(format!("sentence_{i}_token_{t}.pgm")), &img)?;
        }
    }
    Ok(())
}
