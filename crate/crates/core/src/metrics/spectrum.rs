//! Averaged log-magnitude spectra with DC moved to the center.

use std::fs;
use std::path::Path;

use crate::data::{load_image, GrayImage};
use crate::error::{Error, Result};
use crate::tensor::{fft::fft2d, Tensor};

const FIXED_ONE: f64 = (1u64 << 52) as f64;

/// Mean of `log(1 + |F|)` over `images`, shifted so that DC sits at
/// `(h/2, w/2)`. Row-major `h×w`.
pub fn spectrum_map(images: &[GrayImage]) -> Result<Tensor<f64>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Input("spectrum needs at least one image".into()))?;
    let (h, w) = (first.height(), first.width());
    // Fixed-point sums make the mean independent of image order.
    let mut acc = vec![0i128; h * w];
    for (i, img) in images.iter().enumerate() {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::Input(format!(
                "image {i} is {}x{}, the first is {w}x{h}",
                img.width(),
                img.height()
            )));
        }
        let t = Tensor::new(vec![h, w], img.to_unit())?;
        let mag = fft2d(&t)?.magnitude();
        for (y, row) in mag.data().chunks_exact(w).enumerate() {
            let cy = (y + h / 2) % h;
            for (x, m) in row.iter().enumerate() {
                acc[cy * w + (x + w / 2) % w] += (m.ln_1p() * FIXED_ONE).round() as i128;
            }
        }
    }
    let n = images.len() as f64;
    Tensor::new(vec![h, w], acc.into_iter().map(|v| v as f64 / FIXED_ONE / n).collect())
}

/// [`spectrum_map`] min-max scaled to 8 bits.
pub fn spectrum_average_images(images: &[GrayImage]) -> Result<GrayImage> {
    let map = spectrum_map(images)?;
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let (lo, hi) = map
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let levels: Vec<f64> = map
        .data()
        .iter()
        .map(|&v| if span > 0.0 { 255.0 * (v - lo) / span } else { 0.0 })
        .collect();
    GrayImage::from_levels(w, h, &levels)
}

/// Average spectrum of every image file directly inside `dir`.
pub fn spectrum_average(dir: impl AsRef<Path>) -> Result<GrayImage> {
    let dir = dir.as_ref();
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "png"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Input(format!("no PGM or PNG images in {}", dir.display())));
    }
    let images = files.iter().map(load_image).collect::<Result<Vec<_>>>()?;
    spectrum_average_images(&images)
}
