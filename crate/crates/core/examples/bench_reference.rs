//! Runs the 512×512×32, C = 16 reference case and prints the CSV row.

use deltavox::bench::{run_bench, write_csv, BenchCase, DEFAULT_BUDGET_BYTES};

fn main() -> deltavox::Result<()> {
    let outcomes = run_bench(&[BenchCase::reference()], DEFAULT_BUDGET_BYTES)?;
    write_csv(std::io::stdout(), &outcomes)
}
