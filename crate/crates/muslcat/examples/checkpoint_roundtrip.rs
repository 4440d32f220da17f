//! Saves a freshly built model, loads it back, and verifies the reloaded
//! copy produces bit-identical outputs.
//!
//! Run with `cargo run --release --example checkpoint_roundtrip`.

use muslcat::model::{build_model, load_checkpoint, save_checkpoint, ModelConfig};
use muslcat::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let path = std::env::temp_dir().join("muslcat_roundtrip.ckpt");
    let model = build_model(&ModelConfig::tiny_muslcat(4), 42).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let bytes = std::fs::metadata(&path).unwrap().len();
    println!("saved {} ({bytes} bytes)", path.display());

    let reloaded = load_checkpoint(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::uniform(&[2, 1, 2048], -0.5, 0.5, &mut rng);
    let before = model.forward_eval(&x).unwrap();
    let after = reloaded.forward_eval(&x).unwrap();

    assert_eq!(before.data(), after.data(), "outputs changed across the roundtrip");
    println!("reloaded model output is bit-identical over {} logits", before.data().len());

    std::fs::remove_file(&path).unwrap();
}
