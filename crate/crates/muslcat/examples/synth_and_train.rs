//! End-to-end tour: synthesize a small tagged dataset, train a desk-sized
//! MuSLCAN on it for a few epochs, and score the held-out songs.
//!
//! The synthetic songs hide one sine per active tag in Gaussian noise, so a
//! short run already separates the classes. Expect a minute or two on one
//! core; pass a different epoch count as the first argument.
//!
//! Run with `cargo run --release --example synth_and_train`.

use muslcat::manifest::{Manifest, Split};
use muslcat::metrics::evaluate;
use muslcat::model::ModelConfig;
use muslcat::synth::synth_dataset;
use muslcat::train::{run_train, TrainConfig};

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let dir = std::env::temp_dir().join("muslcat_synth_and_train");

    eprintln!("synthesizing 40 songs with 3 tags under {}", dir.display());
    let manifest_path = synth_dataset(&dir, 40, 3, 1).unwrap();

    let cfg = TrainConfig {
        model: ModelConfig::desk_muslcan(3),
        seed: 0,
        train_manifest: manifest_path.clone(),
        val_manifest: manifest_path.clone(),
        checkpoint_dir: dir.join("run"),
        batch_size: 8,
        base_lr: 0.01,
        momentum: 0.9,
        patience: 3,
        stop_below: 1.6e-5,
        prefetch_batches: 2,
        max_epochs: epochs,
    };
    let (model, report) = run_train(&cfg).unwrap();
    eprintln!(
        "best validation loss {:.4} at epoch {}; checkpoint {}",
        report.best_val_loss,
        report.best_epoch,
        report.checkpoint.display()
    );

    let manifest = Manifest::load(&manifest_path).unwrap();
    let eval = evaluate(&model, &manifest, Split::Test).unwrap();
    println!("{eval}");
}
