//! Image degradations used for robustness evaluation.
//!
//! | kind  | sampled parameter                                   |
//! |-------|-----------------------------------------------------|
//! | blur  | kernel size k ∈ {3,5,7,9}, σ = 0.3((k−1)/2 − 1) + 0.8 |
//! | crop  | r ~ U(5,20) % of each side removed, resampled back    |
//! | jpeg  | quality ~ U{10..75}                                  |
//! | noise | variance ~ U(5,20) in squared 8-bit levels           |

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use super::jpeg::jpeg_roundtrip;
use super::resample::resample_plane;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbKind {
    Blur,
    Crop,
    Jpeg,
    Noise,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 4] = [PerturbKind::Blur, PerturbKind::Crop, PerturbKind::Jpeg, PerturbKind::Noise];

    pub fn name(self) -> &'static str {
        match self {
            PerturbKind::Blur => "blur",
            PerturbKind::Crop => "crop",
            PerturbKind::Jpeg => "jpeg",
            PerturbKind::Noise => "noise",
        }
    }
}

impl fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PerturbKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::contract("perturb", format!("unknown perturbation kind '{s}'")))
    }
}

/// Concrete parameters of one degradation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    Blur { kernel: usize },
    Crop { ratio_percent: f64, fx: f64, fy: f64 },
    Jpeg { quality: u8 },
    Noise { variance: f64 },
}

impl Perturbation {
    pub fn sample<R: Rng + ?Sized>(kind: PerturbKind, rng: &mut R) -> Self {
        match kind {
            PerturbKind::Blur => Perturbation::Blur {
                kernel: [3, 5, 7, 9][rng.random_range(0..4)],
            },
            PerturbKind::Crop => Perturbation::Crop {
                ratio_percent: rng.random_range(5.0..20.0),
                fx: rng.random(),
                fy: rng.random(),
            },
            PerturbKind::Jpeg => Perturbation::Jpeg {
                quality: rng.random_range(10..=75),
            },
            PerturbKind::Noise => Perturbation::Noise {
                variance: rng.random_range(5.0..20.0),
            },
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, image: &GrayImage, rng: &mut R) -> Result<GrayImage> {
        match *self {
            Perturbation::Blur { kernel } => {
                let sigma = 0.3 * ((kernel as f64 - 1.0) / 2.0 - 1.0) + 0.8;
                gaussian_blur(image, sigma, kernel)
            }
            Perturbation::Crop { ratio_percent, fx, fy } => crop_resize(image, ratio_percent, fx, fy),
            Perturbation::Jpeg { quality } => jpeg_roundtrip(image, quality),
            Perturbation::Noise { variance } => add_noise(image, variance, rng),
        }
    }
}

/// Sample and apply one degradation of `kind`.
pub fn perturb<R: Rng + ?Sized>(image: &GrayImage, kind: PerturbKind, rng: &mut R) -> Result<GrayImage> {
    let p = Perturbation::sample(kind, rng);
    p.apply(image, rng)
}

pub fn gaussian_kernel(sigma: f64, size: usize) -> Vec<f64> {
    let r = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(image: &GrayImage, sigma: f64, size: usize) -> Result<GrayImage> {
    if size % 2 == 0 || sigma <= 0.0 {
        return Err(Error::contract("gaussian_blur", format!("kernel {size} / sigma {sigma}")));
    }
    let (w, h) = (image.width(), image.height());
    let k = gaussian_kernel(sigma, size);
    let r = (size / 2) as isize;
    let src = image.to_levels();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, &kv)| kv * src[y * w + clampi(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, &kv)| kv * tmp[clampi(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    GrayImage::from_levels(w, h, &out)
}

/// Keep a `(1 − r/100)` fraction of each side at relative offset
/// `(fx, fy) ∈ [0,1]²` of the free margin, then resample to the input size.
pub fn crop_resize(image: &GrayImage, ratio_percent: f64, fx: f64, fy: f64) -> Result<GrayImage> {
    let (w, h) = (image.width(), image.height());
    let keep = 1.0 - ratio_percent / 100.0;
    let cw = ((w as f64 * keep).round() as usize).clamp(1, w);
    let ch = ((h as f64 * keep).round() as usize).clamp(1, h);
    let x0 = ((w - cw) as f64 * fx.clamp(0.0, 1.0)).round() as usize;
    let y0 = ((h - ch) as f64 * fy.clamp(0.0, 1.0)).round() as usize;
    let levels = image.to_levels();
    let mut crop = Vec::with_capacity(cw * ch);
    for y in y0..y0 + ch {
        crop.extend_from_slice(&levels[y * w + x0..y * w + x0 + cw]);
    }
    GrayImage::from_levels(w, h, &resample_plane(&crop, cw, ch, w, h))
}

pub fn add_noise<R: Rng + ?Sized>(image: &GrayImage, variance: f64, rng: &mut R) -> Result<GrayImage> {
    let normal = Normal::new(0.0, variance.sqrt())
        .map_err(|e| Error::contract("noise", format!("variance {variance}: {e}")))?;
    let out: Vec<f64> = image.to_levels().iter().map(|&v| v + normal.sample(rng)).collect();
    GrayImage::from_levels(image.width(), image.height(), &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn textured(w: usize, h: usize) -> GrayImage {
        GrayImage::new(w, h, (0..w * h).map(|i| ((i * 31 + i / w * 7) % 256) as u8).collect()).unwrap()
    }

    #[test]
    fn blur_of_constant_is_identity() {
        let img = GrayImage::filled(17, 11, 77);
        for k in [3, 5, 7, 9] {
            let out = Perturbation::Blur { kernel: k }.apply(&img, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(out, img);
        }
    }

    #[test]
    fn degenerate_crop_is_identity() {
        let img = textured(32, 24);
        let out = crop_resize(&img, 0.0, 0.3, 0.9).unwrap();
        for (a, b) in out.pixels().iter().zip(img.pixels()) {
            assert!(a.abs_diff(*b) <= 1);
        }
    }

    #[test]
    fn noise_std_matches_variance() {
        let img = GrayImage::filled(256, 256, 128);
        let out = add_noise(&img, 20.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let d: Vec<f64> = out.to_levels().iter().map(|v| v - 128.0).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((3.5..=5.5).contains(&std), "std {std}");
    }

    #[test]
    fn every_kind_preserves_size_and_is_seeded() {
        let img = textured(37, 23);
        for kind in PerturbKind::ALL {
            let a = perturb(&img, kind, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let b = perturb(&img, kind, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            assert_eq!((a.width(), a.height()), (37, 23));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sampled_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            match Perturbation::sample(PerturbKind::Blur, &mut rng) {
                Perturbation::Blur { kernel } => assert!([3, 5, 7, 9].contains(&kernel)),
                _ => unreachable!(),
            }
            match Perturbation::sample(PerturbKind::Jpeg, &mut rng) {
                Perturbation::Jpeg { quality } => assert!((10..=75).contains(&quality)),
                _ => unreachable!(),
            }
            match Perturbation::sample(PerturbKind::Noise, &mut rng) {
                Perturbation::Noise { variance } => assert!((5.0..20.0).contains(&variance)),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!(matches!("sharpen".parse::<PerturbKind>(), Err(Error::Contract { .. })));
        assert_eq!("jpeg".parse::<PerturbKind>().unwrap(), PerturbKind::Jpeg);
    }
}
