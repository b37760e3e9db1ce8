use super::config::ModelConfig;
use super::network::{forward_logits, ScaleInputs};
use super::params::ModelParams;
use crate::data::resample::resample_plane;
use crate::data::GrayImage;
use crate::error::{Error, Result};
use crate::tensor::ops::sigmoid_scalar;
use crate::tensor::{Real, Tensor};

/// Smallest accepted input side.
pub const MIN_SIDE: usize = 16;

const EVAL_CHUNK: usize = 32;

/// Bilinear resample of the `[0,1]` form of `image` to `side×side`,
/// without re-quantizing.
pub fn image_plane(image: &GrayImage, side: usize) -> Vec<f64> {
    resample_plane(&image.to_unit(), image.width(), image.height(), side, side)
}

/// Stack images into the per-scale inputs `cfg` asks for.
pub fn prepare_inputs<T: Real>(images: &[&GrayImage], cfg: &ModelConfig) -> Result<ScaleInputs<T>> {
    if images.is_empty() {
        return Err(Error::Input("no images to score".into()));
    }
    for img in images {
        if img.width() < MIN_SIDE || img.height() < MIN_SIDE {
            return Err(Error::Input(format!(
                "image {}x{} is smaller than {MIN_SIDE}x{MIN_SIDE}",
                img.width(),
                img.height()
            )));
        }
    }
    let n = images.len();
    let stack = |side: usize| -> Tensor<T> {
        let data = images
            .iter()
            .flat_map(|img| image_plane(img, side))
            .map(T::of)
            .collect();
        Tensor::from_parts(vec![n, 1, side, side], data)
    };
    let s = cfg.base_scale;
    Ok(ScaleInputs {
        large: cfg.use_large_scale.then(|| stack(2 * s)),
        base: stack(s),
        small: cfg.use_small_scale.then(|| stack(s / 2)),
    })
}

/// Logit of a single image.
pub fn forward<T: Real>(params: &ModelParams<T>, image: &GrayImage) -> Result<T> {
    let inputs = prepare_inputs(&[image], &params.config)?;
    Ok(forward_logits(params, &inputs)?[0])
}

/// A trained detector. Probability is `sigmoid(logit)`; `1` means fake.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub params: ModelParams<f32>,
}

impl Detector {
    pub fn new(params: ModelParams<f32>) -> Result<Self> {
        params.validate()?;
        Ok(Detector { params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    pub fn logits(&self, images: &[&GrayImage]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EVAL_CHUNK) {
            let inputs = prepare_inputs::<f32>(chunk, &self.params.config)?;
            out.extend(forward_logits(&self.params, &inputs)?.into_iter().map(f64::from));
        }
        Ok(out)
    }

    pub fn probabilities(&self, images: &[&GrayImage]) -> Result<Vec<f64>> {
        Ok(self.logits(images)?.into_iter().map(sigmoid_scalar).collect())
    }

    pub fn score(&self, image: &GrayImage) -> Result<f64> {
        Ok(self.probabilities(&[image])?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            base_channels: 4,
            ..ModelConfig::with_scale(32)
        }
    }

    #[test]
    fn zero_network_emits_head_bias() {
        let mut p = ModelParams::<f64>::zeros(&cfg()).unwrap();
        p.set("head.fc2.bias", Tensor::from_f64(&[1], &[0.625]).unwrap()).unwrap();
        for seed in 0..3u8 {
            let img = GrayImage::new(40, 24, (0..960).map(|i| (i as u8).wrapping_mul(seed + 3)).collect()).unwrap();
            assert_eq!(forward(&p, &img).unwrap(), 0.625);
        }
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let p = ModelParams::<f32>::init(&cfg(), 11).unwrap();
        let img = crate::data::toy_image(64, 1, crate::data::ToySplit::Train, true, 0).unwrap();
        let a = forward(&p, &img).unwrap();
        assert!(a.is_finite());
        assert_eq!(a.to_bits(), forward(&p, &img).unwrap().to_bits());
        let d = Detector::new(p).unwrap();
        let batch = d.logits(&[&img, &img]).unwrap();
        assert_eq!(batch[0], batch[1]);
    }

    #[test]
    fn tiny_images_rejected() {
        let p = ModelParams::<f32>::init(&cfg(), 1).unwrap();
        assert!(matches!(forward(&p, &GrayImage::filled(8, 30, 0)), Err(Error::Input(_))));
    }
}
