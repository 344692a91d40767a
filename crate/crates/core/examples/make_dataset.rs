//! Regenerates the bundled synthetic dataset.
//!
//! Usage: cargo run -p modelchain-core --example make_dataset [rows] [seed]
//!
//! Writes CSV to stdout. The repository's copy at
//! `configs/data/separable-400.csv` was produced with the defaults.

use modelchain_core::harness::separable_rows;

fn main() {
    let mut args = std::env::args().skip(1);
    let rows: usize = args
        .next()
        .map(|v| v.parse().expect("rows must be a number"))
        .unwrap_or(400);
    let seed: u64 = args
        .next()
        .map(|v| v.parse().expect("seed must be a number"))
        .unwrap_or(7);
    println!("x1,x2,label");
    for row in separable_rows(rows, seed) {
        println!("{},{},{}", row.features[0], row.features[1], row.label);
    }
}
