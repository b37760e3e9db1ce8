//! Fake-probability of single images.
//!
//! cargo run --release --example infer -- <checkpoint> <image>...

use esf_detect::data::load_image;
use esf_detect::metrics::THRESHOLD;
use esf_detect::model::Detector;
use esf_detect::training::load_checkpoint;

fn main() -> esf_detect::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some((ckpt, images)) = args.split_first() else {
        eprintln!("usage: infer <checkpoint> <image>...");
        std::process::exit(1);
    };
    let detector = Detector::new(load_checkpoint(ckpt)?)?;
    for path in images {
        let p = detector.score(&load_image(path)?)?;
        let label = if p >= THRESHOLD { "fake" } else { "real" };
        println!("{path}: {p:.4} {label}");
    }
    Ok(())
}
