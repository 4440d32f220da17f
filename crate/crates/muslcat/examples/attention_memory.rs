//! Shows the memory-efficient relative-logit path agreeing with the
//! explicit quadratic gather while its embedding storage grows linearly in
//! sequence length.
//!
//! Run with `cargo run --release --example attention_memory`.

use muslcat::attention::{
    embed_alloc_floats, relative_logits_explicit, relative_logits_skewed,
    reset_embed_alloc_counter,
};
use muslcat::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (n_h, d_h, d_max) = (4, 16, 64);
    let e = Tensor::uniform(&[n_h, 2 * d_max + 1, d_h], -0.5, 0.5, &mut rng);

    println!("{:>6} {:>14} {:>14} {:>12}", "L", "skewed floats", "explicit floats", "max |diff|");
    for l in [4, 8, 16, 32, 64, 128, 256] {
        let q = Tensor::uniform(&[1, n_h, l, d_h], -1.0, 1.0, &mut rng);

        reset_embed_alloc_counter();
        let fast = relative_logits_skewed(&q, &e).unwrap();
        let fast_floats = embed_alloc_floats();

        reset_embed_alloc_counter();
        let slow = relative_logits_explicit(&q, &e).unwrap();
        let slow_floats = embed_alloc_floats();

        let diff = fast
            .data()
            .iter()
            .zip(slow.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        println!("{l:>6} {fast_floats:>14} {slow_floats:>14} {diff:>12.1e}");
    }
    println!();
    println!("skewed storage per head is 2L-1 embedding rows; explicit is L^2.");
    println!("Doubling L doubles one column and quadruples the other.");
}
