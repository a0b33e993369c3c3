//! Side-by-side image / ground truth / prediction panels.

use std::path::{Path, PathBuf};

use super::metrics::threshold_map;
use super::window::Predictor;
use crate::data::{denormalize_image, DomainSample};
use crate::error::{Error, Result};
use crate::exec;

/// Writes `<id>.png` per sample: the image, its mask and the thresholded
/// prediction, left to right. Returns the written paths in input order.
pub fn emit_overlays<P: Predictor>(
    predictor: &P,
    samples: &[(String, DomainSample)],
    threshold: f64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    exec::map_slice(samples, |(id, s)| {
        let (h, w) = (s.height(), s.width());
        let pred = threshold_map(&predictor.foreground(s)?, threshold);
        let rgb = denormalize_image(&s.image);
        let mut canvas = vec![0u8; h * 3 * w * 3];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let row = y * 3 * w;
                canvas[(row + x) * 3..(row + x) * 3 + 3].copy_from_slice(&rgb[p * 3..p * 3 + 3]);
                let g = s.mask.as_ref().map_or(0, |m| m[p]) * 255;
                canvas[(row + w + x) * 3..(row + w + x) * 3 + 3].fill(g);
                canvas[(row + 2 * w + x) * 3..(row + 2 * w + x) * 3 + 3].fill(pred[p] * 255);
            }
        }
        let path = out_dir.join(format!("{id}.png"));
        image::save_buffer(&path, &canvas, (3 * w) as u32, h as u32, image::ExtendedColorType::Rgb8)
            .map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
        Ok(path)
    })
    .into_iter()
    .collect()
}
