//! Scores a trained checkpoint against one split of a manifest and prints
//! the per-tag table.
//!
//! Run with
//! `cargo run --release --example evaluate_checkpoint -- <checkpoint> <manifest> [split]`
//! where split is train, valid or test (default test). The synth_and_train
//! example leaves a checkpoint and manifest behind to try this on.

use muslcat::manifest::{Manifest, Split};
use muslcat::metrics::evaluate;
use muslcat::model::load_checkpoint;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (ckpt, manifest) = match (args.get(1), args.get(2)) {
        (Some(c), Some(m)) => (c.clone(), m.clone()),
        _ => {
            eprintln!("usage: evaluate_checkpoint <checkpoint> <manifest> [split]");
            return;
        }
    };
    let split: Split = args.get(3).map(String::as_str).unwrap_or("test").parse().unwrap();

    let model = load_checkpoint(ckpt.as_ref()).unwrap();
    let manifest = Manifest::load(&manifest).unwrap();
    let report = evaluate(&model, &manifest, split).unwrap();
    println!("{report}");
}
