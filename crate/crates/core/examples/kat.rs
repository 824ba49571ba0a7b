//! Runs the known-answer files in a directory.
//!
//! `cargo run --example kat -- [dir]`, defaulting to the bundled vectors.

use std::path::PathBuf;

use nodeguard::kat;

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/kat"));
    let reports = kat::run_kat_dir(&dir).expect("readable KAT directory");
    for r in &reports {
        println!(
            "{:<8} {:>5}/{:<5} {}",
            r.alg.name(),
            r.passed,
            r.total,
            r.path.display()
        );
    }
    if reports.iter().any(|r| !r.all_passed()) {
        std::process::exit(1);
    }
}
