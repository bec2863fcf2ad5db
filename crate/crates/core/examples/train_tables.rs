//! Usage: cargo run --release --example train_tables [steps] [table-out]

use dred::cli::rd_csv;
use dred::features::synthetic_corpus;
use dred::trainer::{train_tables, TrainConfig};

fn main() -> dred::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(Ok(2000), |s| s.parse()).expect("steps must be an integer");
    let config = TrainConfig { steps, ..TrainConfig::default() };
    let corpus = synthetic_corpus(11, 110, 400)?;
    let outcome = train_tables(&config, &corpus)?;
    print!("{}", rd_csv(&outcome.points));
    if let Some(path) = args.next() {
        outcome.table.save(&path)?;
        eprintln!("table written to {path}");
    }
    Ok(())
}
