//! Images, codecs, resampling, perturbations and the synthetic dataset.

pub mod image;
pub mod jpeg;
pub mod manifest;
pub mod perturb;
pub mod resample;
pub mod toy;

pub use image::{load_image, save_image, GrayImage};
pub use jpeg::{jpeg_roundtrip, psnr};
pub use manifest::{DatasetManifest, Subset, FAKE_LABEL, REAL_LABEL};
pub use perturb::{gaussian_blur, perturb, PerturbKind, Perturbation};
pub use resample::resample;
pub use toy::{gen_toy_dataset, grid_peak_ratio, toy_image, ToySplit};

/// Mix `tags` into `seed` with splitmix64 so per-item streams are stable
/// and independent of iteration order.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(seed), |acc, &t| mix(acc ^ mix(t)))
}
