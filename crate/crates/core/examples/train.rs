//! Train a detector on freshly generated toy data and save a checkpoint.
//!
//! cargo run --release --example train -- /tmp/toy.esfc

use std::path::PathBuf;

use esf_detect::data::{gen_toy_dataset, ToySplit};
use esf_detect::model::ModelConfig;
use esf_detect::training::{save_checkpoint, train, TrainConfig};

fn main() -> esf_detect::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("esf_toy.esfc"));
    let data = std::env::temp_dir().join("esf_train_example");
    let samples = gen_toy_dataset(200, 64, 7, ToySplit::Train, &data)?.load_all()?;

    let model = ModelConfig::with_scale(32);
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 16,
        learning_rate: 2e-4,
        ..TrainConfig::default()
    };
    let outcome = train(&samples, &model, &cfg, |r| {
        println!("epoch {:>2} loss {:.4} acc {:.1} lr {:.2e}", r.epoch, r.mean_loss, r.train_acc, r.lr);
    })?;
    save_checkpoint(&outcome.params, &out)?;
    println!("saved {}", out.display());
    Ok(())
}
