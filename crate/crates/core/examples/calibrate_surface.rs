//! Build a small surrogate from the Monte Carlo pricer, then calibrate it to
//! a freshly priced surface.
//!
//! cargo run --release --example calibrate_surface

use std::time::Instant;

use chebcal::calibration::{calibrate, CalibrationConfig};
use chebcal::harness::{build_direct_with, ExperimentConfig};
use chebcal::surface::VolModel;

fn main() -> chebcal::Result<()> {
    let cfg = ExperimentConfig::from_json(
        r#"{"mc": {"paths": 5000}, "direct": {"counts": [3, 3, 3, 3, 6, 8]}}"#,
    )?;
    let start = Instant::now();
    let (tensor, report) = build_direct_with(&cfg, &cfg.build_pricer()?)?;
    println!("surrogate from {} pricer calls in {:.1} s", report.pricer_calls, start.elapsed().as_secs_f64());
    let surrogate = chebcal::calibration::Surrogate::full(tensor, cfg.layout())?;

    let truth = [0.05, 1.8, -0.6, 0.2];
    let target = cfg.surface_pricer(0)?.vol_surface(&truth, &cfg.surface)?;
    let r = calibrate(&target, &surrogate, None, &CalibrationConfig::default())?;
    println!("true    {truth:?}");
    println!("fitted  {:?}", r.theta.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>());
    println!(
        "RMSE {:.4}, {} iterations, {} surrogate calls, {:?}, {:.1} ms",
        r.rmse,
        r.iterations,
        r.surrogate_calls,
        r.termination,
        r.wall_time_s * 1e3
    );
    for s in &r.starts {
        println!("  start loss {:.3e} -> {:.3e} ({:?})", s.initial_loss, s.final_loss, s.termination);
    }
    Ok(())
}
