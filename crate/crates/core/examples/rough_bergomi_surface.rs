//! Price one rough Bergomi implied-vol surface and print it.
//!
//! cargo run --release --example rough_bergomi_surface -- [paths]

use std::time::Instant;

use chebcal::rough_bergomi::{price_call_surface, MCConfig, RoughBergomiParams};
use chebcal::surface::SurfaceSpec;

fn main() -> chebcal::Result<()> {
    let paths = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let params = RoughBergomiParams::constant(0.04, 1.5, -0.7, 0.1)?;
    let spec = SurfaceSpec::standard();
    let mc = MCConfig { paths, ..Default::default() };

    let start = Instant::now();
    let prices = price_call_surface(&params, &spec, &mc)?;
    let elapsed = start.elapsed();
    let vols = prices.implied_vols()?;

    print!("{:>6}", "T\\K");
    for k in spec.strikes() {
        print!("{k:>8.2}");
    }
    println!();
    for (i, t) in spec.maturities().iter().enumerate() {
        print!("{t:>6.2}");
        for j in 0..spec.cols() {
            match vols.quote(i, j) {
                Some(v) => print!("{:>8.4}", v),
                None => print!("{:>8}", "-"),
            }
        }
        println!("   E[S_T] = {:.5} +- {:.5}", prices.forward_means[i], prices.forward_std_errors[i]);
    }
    println!("{paths} paths in {:.3} s", elapsed.as_secs_f64());
    Ok(())
}
