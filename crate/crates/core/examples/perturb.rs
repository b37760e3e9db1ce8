//! Apply each perturbation to one toy image and show how far it moves.

use esf_detect::data::{perturb, psnr, save_image, toy_image, PerturbKind, Perturbation, ToySplit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let img = toy_image(64, 3, ToySplit::Test, true, 0)?;
    let dir = std::env::temp_dir().join("esf_perturb_example");
    std::fs::create_dir_all(&dir)?;
    for kind in PerturbKind::ALL {
        let params = Perturbation::sample(kind, &mut ChaCha8Rng::seed_from_u64(5));
        let out = perturb(&img, kind, &mut ChaCha8Rng::seed_from_u64(5))?;
        println!("{:<6} {params:?} PSNR {:.2} dB", kind.name(), psnr(&img, &out));
        save_image(&out, dir.join(format!("{}.png", kind.name())))?;
    }
    println!("images in {}", dir.display());
    Ok(())
}
