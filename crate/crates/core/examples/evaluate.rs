//! Score a dataset with a checkpoint, clean and under every perturbation.
//!
//! cargo run --release --example evaluate -- <checkpoint> [dataset dir]
//! Without a dataset, a held-out toy split is generated.

use std::path::PathBuf;

use esf_detect::data::{gen_toy_dataset, DatasetManifest, PerturbKind, ToySplit};
use esf_detect::metrics::robustness_eval;
use esf_detect::model::Detector;
use esf_detect::training::load_checkpoint;

fn main() -> esf_detect::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("esf_toy.esfc"));
    let manifest = match args.next() {
        Some(dir) => DatasetManifest::open(dir)?,
        None => gen_toy_dataset(100, 64, 7, ToySplit::Test, std::env::temp_dir().join("esf_eval_example"))?,
    };
    let detector = Detector::new(load_checkpoint(&ckpt)?)?;
    let report = robustness_eval(&detector, &manifest, &PerturbKind::ALL, 0)?;
    for s in &report.subsets {
        println!("{:<12} Acc {:6.2}  AP {:6.2}  ({} real, {} fake)", s.name, s.acc, s.ap, s.n_real, s.n_fake);
    }
    if let Some(p) = &report.perturbation {
        for k in &p.kinds {
            println!("{:<12} mAcc {:6.2}", k.kind, k.m_acc);
        }
        println!("average drop {:.2}", p.average_drop);
    }
    Ok(())
}
