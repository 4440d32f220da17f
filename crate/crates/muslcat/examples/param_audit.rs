//! Builds every reference variant, tabulates exact parameter counts against
//! the published sizes, then breaks one model down by component with the
//! closed-form size estimate printed beside each attention-augmented block.
//!
//! Run with `cargo run --release --example param_audit`.

use muslcat::model::{audit_params, build_model, reference_report, ModelConfig};

fn main() {
    let report = reference_report(50).unwrap();
    println!("{report}");

    println!();
    println!("MuSLCAN breakdown:");
    let model = build_model(&ModelConfig::reference_muslcan(50), 0).unwrap();
    println!("{}", audit_params(&model));
}
