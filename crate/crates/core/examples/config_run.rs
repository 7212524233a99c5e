//! Drives a JSON experiment config the same way `featnet run` does.
//!
//! `cargo run --example config_run -- configs/pvrd2_ring.json`

use featnet::cli::Prepared;
use featnet::config::ExperimentConfig;

fn main() -> featnet::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "configs/pvrd2_ring.json".into());
    let prepared = Prepared::new(ExperimentConfig::load(&path, &[])?)?;
    let (trace, summary) = prepared.run(0, false)?;
    trace.write_csv_to(&mut std::io::stdout().lock())?;
    eprintln!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
