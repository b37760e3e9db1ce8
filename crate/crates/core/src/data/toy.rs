//! Deterministic synthetic dataset.
//!
//! Real samples are smooth random fields. Fake samples are the same kind of
//! field plus a faint period-4 grid, the kind of trace a transposed-conv or
//! nearest upsampler leaves behind. The grid is a separable product
//! `A·cos(πx/2 + φx)·cos(πy/2 + φy)`, so its energy sits on the four
//! diagonal bins `(±N/4, ±N/4)` and stays clear of the axis-aligned leakage
//! of the intensity ramp.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::image::{save_image, GrayImage};
use super::manifest::DatasetManifest;
use super::perturb::gaussian_kernel;
use super::derive_seed;
use crate::error::{Error, Result};
use crate::tensor::{fft2d, Tensor};

pub const FIELD_SIGMA: f64 = 3.0;
pub const GRID_PERIOD: usize = 4;
pub const GRID_AMPLITUDE: f64 = 8.0 / 255.0;
const FIELD_MEAN: f64 = 0.5;
const FIELD_STD: f64 = 0.12;
const RAMP: f64 = 0.2;
pub const SUBSET_NAME: &str = "toy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ToySplit {
    #[default]
    Train,
    Test,
}

impl ToySplit {
    fn tag(self) -> u64 {
        match self {
            ToySplit::Train => 0,
            ToySplit::Test => 1,
        }
    }
}

fn check_size(size: usize) -> Result<()> {
    if size < 32 || !size.is_power_of_two() {
        return Err(Error::contract("gen_toy", format!("size {size} must be a power of two >= 32")));
    }
    Ok(())
}

/// Circular separable blur of a square plane.
fn blur_wrap(plane: &[f64], n: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as usize;
    let k = gaussian_kernel(sigma, 2 * r + 1);
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            tmp[y * n + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * plane[y * n + (x + n * r + i - r) % n])
                .sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            out[y * n + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[((y + n * r + i - r) % n) * n + x])
                .sum();
        }
    }
    out
}

fn smooth_field(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    let mut f = blur_wrap(&noise, n, FIELD_SIGMA);
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    let std = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f.len() as f64).sqrt();
    let gx = rng.random_range(-RAMP..RAMP);
    let gy = rng.random_range(-RAMP..RAMP);
    for y in 0..n {
        for x in 0..n {
            let v = &mut f[y * n + x];
            let ramp = gx * (x as f64 / n as f64 - 0.5) + gy * (y as f64 / n as f64 - 0.5);
            *v = FIELD_MEAN + FIELD_STD * (*v - mean) / std + ramp;
        }
    }
    f
}

/// One sample, as a pure function of `(seed, split, class, index)`.
pub fn toy_image(size: usize, seed: u64, split: ToySplit, fake: bool, index: usize) -> Result<GrayImage> {
    check_size(size)?;
    let s = derive_seed(seed, &[split.tag(), u64::from(fake), index as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    let mut f = smooth_field(size, &mut rng);
    if fake {
        let w = 2.0 * PI / GRID_PERIOD as f64;
        let px = rng.random_range(0.0..2.0 * PI);
        let py = rng.random_range(0.0..2.0 * PI);
        for y in 0..size {
            let cy = (w * y as f64 + py).cos();
            for x in 0..size {
                f[y * size + x] += GRID_AMPLITUDE * (w * x as f64 + px).cos() * cy;
            }
        }
    }
    GrayImage::from_unit(size, size, &f)
}

/// Write `n_per_class` real and fake samples to `out_dir/toy/{real,fake}`
/// plus `out_dir/manifest.json`.
pub fn gen_toy_dataset(
    n_per_class: usize,
    size: usize,
    seed: u64,
    split: ToySplit,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    if n_per_class == 0 {
        return Err(Error::contract("gen_toy", "n must be at least 1"));
    }
    check_size(size)?;
    let out = out_dir.as_ref();
    for (class, fake) in [("real", false), ("fake", true)] {
        let dir = out.join(SUBSET_NAME).join(class);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..n_per_class {
            save_image(&toy_image(size, seed, split, fake, i)?, dir.join(format!("{i:05}.pgm")))?;
        }
    }
    let manifest = DatasetManifest::scan(out)?;
    manifest.write(out.join("manifest.json"))?;
    Ok(manifest)
}

/// Unshifted FFT indices of the four grid bins of an `n×n` image.
pub fn grid_bins(n: usize) -> [(usize, usize); 4] {
    let (a, b) = (n / GRID_PERIOD, n - n / GRID_PERIOD);
    [(a, a), (a, b), (b, a), (b, b)]
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}

/// Magnitude at `(ky, kx)` over the median of its 8-neighbour ring
/// (periodic indexing).
pub fn ring_ratio(mag: &[f64], h: usize, w: usize, ky: usize, kx: usize) -> f64 {
    let mut ring = Vec::with_capacity(8);
    for dy in [h - 1, 0, 1] {
        for dx in [w - 1, 0, 1] {
            if (dy, dx) != (0, 0) {
                ring.push(mag[((ky + dy) % h) * w + (kx + dx) % w]);
            }
        }
    }
    mag[ky * w + kx] / median(ring).max(f64::MIN_POSITIVE)
}

pub fn magnitude_spectrum(image: &GrayImage) -> Result<Vec<f64>> {
    let t = Tensor::<f64>::new(vec![image.height(), image.width()], image.to_levels())?;
    Ok(fft2d(&t)?.magnitude().into_data())
}

/// Strongest ring ratio over the grid bins. The grid scorer behind the
/// separability check: fakes land far above 5, reals near 1.
pub fn grid_peak_ratio(image: &GrayImage) -> Result<f64> {
    let (h, w) = (image.height(), image.width());
    if h != w || h % GRID_PERIOD != 0 {
        return Err(Error::Input(format!("grid scorer needs a square image with side divisible by 4, got {w}x{h}")));
    }
    let mag = magnitude_spectrum(image)?;
    Ok(grid_bins(h)
        .iter()
        .map(|&(ky, kx)| ring_ratio(&mag, h, w, ky, kx))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_deterministic_and_distinct() {
        let a = toy_image(32, 7, ToySplit::Train, true, 3).unwrap();
        assert_eq!(a, toy_image(32, 7, ToySplit::Train, true, 3).unwrap());
        assert_ne!(a, toy_image(32, 7, ToySplit::Test, true, 3).unwrap());
        assert_ne!(a, toy_image(32, 7, ToySplit::Train, true, 4).unwrap());
    }

    #[test]
    fn bad_sizes_rejected() {
        assert!(toy_image(48, 0, ToySplit::Train, false, 0).is_err());
        assert!(toy_image(16, 0, ToySplit::Train, false, 0).is_err());
    }

    #[test]
    fn grid_peaks_separate_classes() {
        let mut real_hits = 0;
        for i in 0..200 {
            let fake = grid_peak_ratio(&toy_image(64, 11, ToySplit::Train, true, i).unwrap()).unwrap();
            assert!(fake >= 5.0, "fake {i}: {fake}");
            let real = grid_peak_ratio(&toy_image(64, 11, ToySplit::Train, false, i).unwrap()).unwrap();
            if real < 3.0 {
                real_hits += 1;
            }
        }
        assert!(real_hits >= 190, "{real_hits}/200 reals below 3");
    }

    #[test]
    fn field_statistics() {
        let img = toy_image(64, 1, ToySplit::Train, false, 0).unwrap();
        let v = img.to_unit();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 0.5).abs() < 0.03, "mean {mean}");
    }
}
