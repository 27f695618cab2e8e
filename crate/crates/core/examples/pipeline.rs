//! Run every harness stage on a reduced configuration.
//!
//! cargo run --release --example pipeline -- [out-dir]

use std::path::PathBuf;

use chebcal::harness::{self, ExperimentConfig};

fn main() -> chebcal::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("chebcal_pipeline"));
    let cfg = ExperimentConfig::from_json(
        r#"{
          "seed": 7,
          "surfaces": 8,
          "mc": {"paths": 4000},
          "direct": {"counts": [3, 3, 3, 3, 6, 8]},
          "benchmark": {"surrogate_evals": 2000, "pricer_calls": 2}
        }"#,
    )?;
    let manifest = harness::generate_surfaces(&cfg, &out)?;
    println!("{} surfaces, {} failures", manifest.entries.len(), manifest.failures.len());
    let direct = harness::build_direct(&cfg, &out)?;
    println!("direct tensor: {} values from {} pricer calls", direct.stored_values, direct.pricer_calls);
    let acc = harness::assess_accuracy(&cfg, &out)?;
    println!(
        "accuracy: mean {:.4}, worst cell {:.4}",
        acc.overall_mean_abs_error.unwrap_or(f64::NAN),
        acc.worst_cell_mean_abs_error.unwrap_or(f64::NAN)
    );
    let batch = harness::calibrate_batch(&cfg, &out)?;
    if let Some(q) = batch.rmse_quantiles {
        println!("calibration RMSE: median {:.4}, max {:.4}", q.q50, q.max);
    }
    let bench = harness::benchmark(&cfg, &out)?;
    println!("speedup {:.0}x", bench.speedup);
    println!("outputs in {}", out.display());
    Ok(())
}
