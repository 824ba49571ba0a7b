//! A quick timing run over a few sizes, printed as CSV.

use nodeguard::bench::{self, BenchParams};

fn main() {
    let params = BenchParams {
        sizes: vec![256, 1_000, 4_000, 16_000],
        iters: 50,
        ..BenchParams::default()
    };
    let rows = bench::run_bench(&params);
    print!("{}", bench::to_csv(&rows));
    let shape = bench::check_shape(&rows, 0.05, 5.0);
    println!(
        "# xoodyak faster: {}, min ratio {:.2}, monotonic: {}",
        shape.xoodyak_faster, shape.min_ratio, shape.monotonic
    );
}
