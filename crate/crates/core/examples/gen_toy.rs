//! Write a small synthetic dataset and report how separable it is.
//!
//! cargo run --release --example gen_toy -- /tmp/toy

use std::path::PathBuf;

use esf_detect::data::{gen_toy_dataset, grid_peak_ratio, toy_image, ToySplit};

fn main() -> esf_detect::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("esf_toy"));
    let manifest = gen_toy_dataset(50, 64, 7, ToySplit::Train, &out)?;
    println!("{} images under {}", manifest.total(), out.display());

    for fake in [false, true] {
        let ratios: Vec<f64> = (0..5)
            .map(|i| grid_peak_ratio(&toy_image(64, 7, ToySplit::Train, fake, i)?))
            .collect::<esf_detect::Result<_>>()?;
        let label = if fake { "fake" } else { "real" };
        println!("{label}: grid peak ratios {ratios:.2?}");
    }
    Ok(())
}
