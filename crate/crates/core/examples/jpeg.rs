//! JPEG lossy round trip across qualities.

use esf_detect::data::{jpeg_roundtrip, psnr, toy_image, ToySplit};

fn main() -> esf_detect::Result<()> {
    let img = toy_image(64, 4, ToySplit::Test, false, 0)?;
    for q in [10, 30, 60, 75, 90, 95, 100] {
        println!("q {q:>3}: PSNR {:.2} dB", psnr(&img, &jpeg_roundtrip(&img, q)?));
    }
    Ok(())
}
