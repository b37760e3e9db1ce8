//! Lossy path of a baseline grayscale JPEG codec: 8×8 DCT, table
//! quantization and reconstruction. Entropy coding is not modelled since it
//! is lossless.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::image::{quantize, GrayImage};
use crate::error::{Error, Result};

/// Standard luminance quantization table (ITU-T T.81, Annex K), row-major.
pub const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Quantization table for `quality` using the libjpeg scaling rule.
pub fn quant_table(quality: u8) -> Result<[u16; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::contract("jpeg", format!("quality {quality} outside 1..=100")));
    }
    let q = u32::from(quality);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    Ok(LUMA_TABLE.map(|b| ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as u16))
}

/// `basis[u][x] = c(u)/2 · cos((2x+1)uπ/16)`, orthonormal 8-point DCT-II.
fn basis() -> &'static [[f64; 8]; 8] {
    static B: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    B.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let c = if u == 0 { (0.5f64).sqrt() } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = c / 2.0 * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn idct(coef: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| b[u][x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| b[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

/// Compress and decompress `image` at `quality` (1..=100).
///
/// Dimensions are padded to multiples of 8 by edge replication and cropped
/// back after reconstruction.
pub fn jpeg_roundtrip(image: &GrayImage, quality: u8) -> Result<GrayImage> {
    let table = quant_table(quality)?;
    let (w, h) = (image.width(), image.height());
    let (pw, ph) = (w.div_ceil(8) * 8, h.div_ceil(8) * 8);
    let px = image.pixels();
    let sample = |x: usize, y: usize| f64::from(px[y.min(h - 1) * w + x.min(w - 1)]);
    let mut out = vec![0u8; w * h];
    let mut block = [0.0; 64];
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = sample(bx + x, by + y) - 128.0;
                }
            }
            let mut coef = fdct(&block);
            for (c, &q) in coef.iter_mut().zip(&table) {
                let q = f64::from(q);
                *c = (*c / q).round() * q;
            }
            let rec = idct(&coef);
            for y in 0..8 {
                for x in 0..8 {
                    let (ix, iy) = (bx + x, by + y);
                    if ix < w && iy < h {
                        out[iy * w + ix] = quantize(rec[y * 8 + x] + 128.0);
                    }
                }
            }
        }
    }
    GrayImage::new(w, h, out)
}

pub fn psnr(a: &GrayImage, b: &GrayImage) -> f64 {
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / a.pixels().len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn libjpeg_scaling_rule() {
        assert_eq!(quant_table(50).unwrap(), LUMA_TABLE);
        assert_eq!(quant_table(100).unwrap(), [1; 64]);
        // q=10 -> 500%: 16*5 = 80
        assert_eq!(quant_table(10).unwrap()[0], 80);
        // q=75 -> 50%: (16*50+50)/100 = 8
        assert_eq!(quant_table(75).unwrap()[0], 8);
        assert_eq!(quant_table(1).unwrap()[63], 255);
        assert!(quant_table(0).is_err());
        assert!(quant_table(101).is_err());
    }

    #[test]
    fn dct_is_orthonormal() {
        let block: [f64; 64] = std::array::from_fn(|i| ((i * 37) % 61) as f64 - 30.0);
        let back = idct(&fdct(&block));
        for (a, b) in block.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
        let e_in: f64 = block.iter().map(|v| v * v).sum();
        let e_out: f64 = fdct(&block).iter().map(|v| v * v).sum();
        assert!((e_in - e_out).abs() < 1e-6);
    }

    #[test]
    fn mid_gray_is_fixed_point() {
        let img = GrayImage::filled(13, 9, 128);
        for q in [1, 10, 50, 75, 95, 100] {
            assert_eq!(jpeg_roundtrip(&img, q).unwrap(), img);
        }
    }

    #[test]
    fn preserves_dimensions() {
        let img = GrayImage::new(10, 3, (0..30).map(|i| (i * 8) as u8).collect()).unwrap();
        let out = jpeg_roundtrip(&img, 40).unwrap();
        assert_eq!((out.width(), out.height()), (10, 3));
    }

    #[test]
    fn requantization_changes_less() {
        let img = crate::data::toy_image(64, 3, crate::data::ToySplit::Train, true, 0).unwrap();
        let once = jpeg_roundtrip(&img, 10).unwrap();
        let twice = jpeg_roundtrip(&once, 10).unwrap();
        let changed = |a: &GrayImage, b: &GrayImage| a.pixels().iter().zip(b.pixels()).filter(|(x, y)| x != y).count();
        assert!(changed(&once, &twice) < changed(&img, &once));
    }

    #[test]
    fn high_quality_is_near_lossless_on_toy_images() {
        for i in 0..8 {
            let img = crate::data::toy_image(64, 7, crate::data::ToySplit::Train, i % 2 == 1, i).unwrap();
            let p = psnr(&img, &jpeg_roundtrip(&img, 95).unwrap());
            assert!(p >= 35.0, "psnr {p}");
        }
    }
}
