//! Average spectra of real and fake toy images. The fake map carries four
//! bright off-center peaks from the periodic upsampling grid.

use esf_detect::data::{save_image, toy_image, ToySplit};
use esf_detect::metrics::spectrum_average_images;

fn main() -> esf_detect::Result<()> {
    let dir = std::env::temp_dir();
    for fake in [false, true] {
        let images = (0..64)
            .map(|i| toy_image(64, 1, ToySplit::Test, fake, i))
            .collect::<esf_detect::Result<Vec<_>>>()?;
        let map = spectrum_average_images(&images)?;
        let (c, q) = (32, 16);
        let peaks = [map.get(c - q, c - q), map.get(c + q, c - q), map.get(c - q, c + q), map.get(c + q, c + q)];
        let name = if fake { "fake" } else { "real" };
        let path = dir.join(format!("esf_spectrum_{name}.png"));
        save_image(&map, &path)?;
        println!("{name}: grid-bin levels {peaks:?} -> {}", path.display());
    }
    Ok(())
}
