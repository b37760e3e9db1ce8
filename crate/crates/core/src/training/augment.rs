use rand::Rng;

use super::config::AugmentConfig;
use crate::data::{gaussian_blur, jpeg_roundtrip, GrayImage};

/// Flip, blur, JPEG, in that order, each gated by an independent coin.
///
/// All random draws happen whether or not a transform is enabled, so
/// toggling one transform never shifts the stream seen by the others.
pub fn augment<R: Rng + ?Sized>(image: &GrayImage, cfg: &AugmentConfig, rng: &mut R) -> GrayImage {
    let p = cfg.probability;
    let flip = rng.random_bool(p);
    let blur = rng.random_bool(p);
    let sigma = rng.random_range(cfg.blur_sigma.0..=cfg.blur_sigma.1);
    let jpeg = rng.random_bool(p);
    let quality = rng.random_range(cfg.jpeg_quality.0..=cfg.jpeg_quality.1);

    let mut out = if cfg.hflip && flip {
        image.flip_horizontal()
    } else {
        image.clone()
    };
    if cfg.blur && blur {
        let k = 2 * (2.0 * sigma).ceil() as usize + 1;
        out = gaussian_blur(&out, sigma, k).expect("odd kernel and positive sigma");
    }
    if cfg.jpeg && jpeg {
        out = jpeg_roundtrip(&out, quality).expect("quality validated by config");
    }
    out
}
