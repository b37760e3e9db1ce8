//! Bilinear resampling with half-pixel centers (align-corners off).

use super::image::GrayImage;
use crate::error::{Error, Result};

/// Source coordinate and blend weight for each destination index.
fn taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src_len - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Resample a row-major `w×h` plane to `tw×th`.
pub fn resample_plane(src: &[f64], w: usize, h: usize, tw: usize, th: usize) -> Vec<f64> {
    assert_eq!(src.len(), w * h);
    if (w, h) == (tw, th) {
        return src.to_vec();
    }
    let xs = taps(w, tw);
    let ys = taps(h, th);
    let mut out = Vec::with_capacity(tw * th);
    for &(y0, y1, fy) in &ys {
        let r0 = &src[y0 * w..(y0 + 1) * w];
        let r1 = &src[y1 * w..(y1 + 1) * w];
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bot - top) * fy);
        }
    }
    out
}

pub fn resample(image: &GrayImage, target_w: usize, target_h: usize) -> Result<GrayImage> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::contract("resample", "target size must be at least 1x1"));
    }
    if (image.width(), image.height()) == (target_w, target_h) {
        return Ok(image.clone());
    }
    let plane = resample_plane(&image.to_levels(), image.width(), image.height(), target_w, target_h);
    GrayImage::from_levels(target_w, target_h, &plane)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let img = GrayImage::new(3, 2, vec![9, 8, 7, 6, 5, 4]).unwrap();
        assert_eq!(resample(&img, 3, 2).unwrap(), img);
    }

    #[test]
    fn constant_stays_constant() {
        let img = GrayImage::filled(7, 5, 93);
        for (w, h) in [(3, 3), (14, 10), (1, 1), (16, 4)] {
            assert!(resample(&img, w, h).unwrap().pixels().iter().all(|&p| p == 93));
        }
    }

    #[test]
    fn upsampled_ramp_is_monotone() {
        let img = GrayImage::new(2, 1, vec![0, 255]).unwrap();
        let up = resample(&img, 4, 1).unwrap();
        // half-pixel centers: 0, 63.75, 191.25, 255
        assert_eq!(up.pixels(), &[0, 64, 191, 255]);
        assert!(up.pixels().windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn halving_averages_pairs() {
        let plane = [0.0, 2.0, 4.0, 6.0];
        assert_eq!(resample_plane(&plane, 4, 1, 2, 1), vec![1.0, 5.0]);
    }
}
