//! Interpolate smooth functions on Chebyshev grids and watch the error fall.
//!
//! cargo run --release --example chebyshev_interpolation

use chebcal::chebyshev::{build_full_tensor, ChebyshevGrid, Interval};

fn sup_error(f: fn(f64) -> f64, count: usize) -> chebcal::Result<f64> {
    let grid = ChebyshevGrid::new(vec![(Interval::new(-1.0, 1.0)?, count)])?;
    let t = build_full_tensor(&grid, |x| f(x[0]))?;
    let mut worst: f64 = 0.0;
    for k in 0..1001 {
        let x = -1.0 + 2.0 * k as f64 / 1000.0;
        worst = worst.max((t.eval_barycentric(&[x])? - f(x)).abs());
    }
    Ok(worst)
}

fn main() -> chebcal::Result<()> {
    println!("{:>6} {:>12} {:>12}", "nodes", "exp", "runge");
    for n in [4, 8, 12, 16, 32, 50, 64, 100] {
        let e = sup_error(f64::exp, n)?;
        let r = sup_error(|x| 1.0 / (1.0 + 25.0 * x * x), n)?;
        println!("{n:>6} {e:>12.3e} {r:>12.3e}");
    }

    // Two dimensions, with value, gradient and both evaluation schemes.
    let grid = ChebyshevGrid::new(vec![(Interval::new(0.5, 2.0)?, 12), (Interval::new(-1.0, 3.0)?, 14)])?;
    let f = |x: &[f64]| (x[0] * x[1]).sin() + x[0].ln();
    let t = build_full_tensor(&grid, f)?;
    let x = [1.3, 0.7];
    println!(
        "f{x:?} = {:.10}, barycentric {:.10}, clenshaw {:.10}",
        f(&x),
        t.eval_barycentric(&x)?,
        t.eval_clenshaw(&x)?
    );
    println!("gradient {:?}", t.eval_gradient(&x)?);
    match t.eval_barycentric(&[2.5, 0.0]) {
        Err(e) => println!("outside the box: {e}"),
        Ok(v) => println!("unexpected value {v}"),
    }
    Ok(())
}
