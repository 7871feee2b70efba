//! Print a synthetic CAP-shaped corpus as CSV.
//!
//! Usage: cargo run -p dqc-core --example gen_fixture -- <rows> <seed>

use dqc_core::synthetic::{corpus_to_csv, generate_corpus};
use dqc_core::taxonomy::LabelScheme;

fn main() {
    let mut args = std::env::args().skip(1);
    let rows: usize = args
        .next()
        .unwrap_or_else(|| "200".to_string())
        .parse()
        .expect("rows must be an integer");
    let seed: u64 = args
        .next()
        .unwrap_or_else(|| "7".to_string())
        .parse()
        .expect("seed must be an integer");
    let scheme = LabelScheme::default_cap();
    let corpus = generate_corpus(&scheme, rows, seed);
    print!("{}", corpus_to_csv(&corpus));
}
