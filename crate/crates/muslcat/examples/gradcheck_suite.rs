//! Runs the full finite-difference gradient suite and prints one line per
//! check: every differentiable layer family, three random shapes each, plus
//! weight paths for the parametered families.
//!
//! Run with `cargo run --release --example gradcheck_suite`. Pass a family
//! name prefix to restrict, e.g. `-- mha`.

use muslcat::gradcheck::layer_suite;

fn main() {
    let filter = std::env::args().nth(1);
    let reports = match layer_suite(filter.as_deref(), 0) {
        Ok(reports) => reports,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    };
    let mut failed = 0;
    for rep in &reports {
        println!("{rep}");
        if !rep.passed {
            failed += 1;
        }
    }
    println!();
    if failed == 0 {
        println!("all {} checks passed", reports.len());
    } else {
        println!("{failed} of {} checks FAILED", reports.len());
        std::process::exit(1);
    }
}
