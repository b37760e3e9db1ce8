//! The detector: three-scale wavelet-enhanced stems, residual spatial
//! blocks, Fourier blocks and an MLP head.

pub mod config;
pub mod detector;
pub mod network;
pub mod params;

pub use config::ModelConfig;
pub use detector::{forward, prepare_inputs, Detector};
pub use network::{
    cdc_conv, forward_logits, frequency_process_block, spatial_process_block, wavelet_enhanced_stem, Graph,
    ScaleInputs,
};
pub use params::{param_specs, ModelParams};
