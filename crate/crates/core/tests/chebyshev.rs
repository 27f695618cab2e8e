use chebcal::chebyshev::{build_full_tensor, ChebyshevGrid, Interval};
use proptest::prelude::*;

fn samples(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
}

fn sup_error_1d(f: fn(f64) -> f64, count: usize) -> f64 {
    let grid = ChebyshevGrid::new(vec![(Interval::new(-1.0, 1.0).unwrap(), count)]).unwrap();
    let t = build_full_tensor(&grid, |x| f(x[0])).unwrap();
    samples(-1.0, 1.0, 1001)
        .map(|x| (t.eval_barycentric(&[x]).unwrap() - f(x)).abs())
        .fold(0.0, f64::max)
}

/// Poles at ±i/5 bound the Bernstein ellipse: error ~ rho^-n.
#[test]
fn runge_function_converges_at_the_ellipse_rate() {
    let runge = |x: f64| 1.0 / (1.0 + 25.0 * x * x);
    let rho = (1.0 + 26f64.sqrt()) / 5.0;
    let e50 = sup_error_1d(runge, 50);
    let e64 = sup_error_1d(runge, 64);
    // Independent reference value for 50 points of the second kind.
    assert!((e50 - 1.1596e-4).abs() < 1e-7, "{e50}");
    assert!(e64 < 1e-5, "{e64}");
    let rate = (e50 / e64).powf(1.0 / 14.0);
    assert!((rate / rho - 1.0).abs() < 0.02, "{rate} vs {rho}");
}

#[test]
fn exponential_converges_spectrally() {
    let errs: Vec<f64> = (4..=16).map(|n| sup_error_1d(f64::exp, n)).collect();
    assert!(errs[12 - 4] < 1e-9, "{}", errs[8]);
    for w in errs.windows(2) {
        assert!(w[1] <= 10.0 * w[0].max(1e-15), "{errs:?}");
    }
}

#[test]
fn six_dimensional_gradient_matches_finite_differences() {
    let f = |x: &[f64]| (0.3 * x[0] + 0.2 * x[1] * x[2]).exp() * (x[3] - 0.5 * x[4]).cos() + x[5] * x[5] * x[0];
    let grid = ChebyshevGrid::uniform(&[Interval::new(-1.0, 1.0).unwrap(); 6], 9).unwrap();
    let t = build_full_tensor(&grid, f).unwrap();
    let mut rng = rand::rngs::StdRng::seed_from_u64(11);
    for _ in 0..20 {
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-0.8..0.8)).collect();
        let g = t.eval_gradient(&x).unwrap();
        for k in 0..6 {
            let h = 1e-5;
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (t.eval_barycentric(&up).unwrap() - t.eval_barycentric(&dn).unwrap()) / (2.0 * h);
            assert!((g[k] - fd).abs() <= 1e-4 * fd.abs().max(1e-2), "dim {k}: {} vs {fd}", g[k]);
        }
    }
}

use rand::{Rng, SeedableRng};

fn poly(coeffs: &[Vec<f64>], x: &[f64]) -> f64 {
    coeffs
        .iter()
        .zip(x)
        .map(|(c, &xi)| c.iter().rev().fold(0.0, |acc, &a| acc * xi + a))
        .product()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn polynomials_are_reproduced(
        counts in prop::collection::vec(2usize..7, 1..4),
        seed in any::<u64>(),
    ) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let coeffs: Vec<Vec<f64>> = counts.iter().map(|&n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let dims = counts.iter().map(|&n| (Interval::new(-1.5, 2.0).unwrap(), n)).collect();
        let grid = ChebyshevGrid::new(dims).unwrap();
        let t = build_full_tensor(&grid, |x| poly(&coeffs, x)).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = counts.iter().map(|_| rng.random_range(-1.5..2.0)).collect();
            let (a, b) = (t.eval_barycentric(&x).unwrap(), poly(&coeffs, &x));
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{} vs {}", a, b);
        }
    }

    #[test]
    fn nodes_are_exact(counts in prop::collection::vec(2usize..6, 1..4), seed in any::<u64>()) {
        let dims = counts.iter().map(|&n| (Interval::new(0.5, 3.0).unwrap(), n)).collect();
        let grid = ChebyshevGrid::new(dims).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let shift: f64 = rng.random();
        let t = build_full_tensor(&grid, |x| x.iter().map(|v| (v + shift).sin()).sum()).unwrap();
        let len = t.values().len();
        for flat in 0..len {
            let idx = grid.unravel(flat);
            let x = grid.node_coordinates(&idx);
            prop_assert_eq!(t.eval_barycentric(&x).unwrap(), t.values()[flat]);
        }
    }

    #[test]
    fn clenshaw_agrees_with_barycentric(seed in any::<u64>()) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let dims = (0..3).map(|_| (Interval::new(-2.0, 1.0).unwrap(), rng.random_range(2..8))).collect();
        let grid = ChebyshevGrid::new(dims).unwrap();
        let values: Vec<f64> = (0..grid.dense_len().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = chebcal::chebyshev::FullChebyshevTensor::from_values(grid, values).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..1.0)).collect();
            let (a, b) = (t.eval_barycentric(&x).unwrap(), t.eval_clenshaw(&x).unwrap());
            let scale = t.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
            prop_assert!((a - b).abs() <= 1e-12 * scale.max(a.abs()), "{} vs {}", a, b);
        }
    }

    #[test]
    fn affine_maps_commute_with_interpolation(
        lo in -5.0f64..5.0, width in 0.1f64..10.0, lo2 in -5.0f64..5.0, width2 in 0.1f64..10.0, seed in any::<u64>(),
    ) {
        let f = |u: f64, v: f64| (0.7 * u).sin() * (0.3 * v).cos() + u * v;
        let to_box = |s: f64, lo: f64, w: f64| lo + 0.5 * (s + 1.0) * w;
        let unit = ChebyshevGrid::uniform(&[Interval::new(-1.0, 1.0).unwrap(); 2], 7).unwrap();
        let boxed = ChebyshevGrid::new(vec![
            (Interval::new(lo, lo + width).unwrap(), 7),
            (Interval::new(lo2, lo2 + width2).unwrap(), 7),
        ]).unwrap();
        let a = build_full_tensor(&unit, |s| f(to_box(s[0], lo, width), to_box(s[1], lo2, width2))).unwrap();
        let b = build_full_tensor(&boxed, |x| f(x[0], x[1])).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        for _ in 0..20 {
            let s = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let x = [to_box(s[0], lo, width), to_box(s[1], lo2, width2)];
            let (va, vb) = (a.eval_barycentric(&s).unwrap(), b.eval_barycentric(&x).unwrap());
            let scale = a.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
            prop_assert!((va - vb).abs() <= 1e-13 * scale.max(1.0), "{} vs {}", va, vb);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_low_dim(seed in any::<u64>(), two_d in any::<bool>()) {
        let d = if two_d { 2 } else { 1 };
        let f = |x: &[f64]| x.iter().enumerate().map(|(k, v)| ((k as f64 + 1.0) * v).sin()).sum::<f64>() + x.iter().product::<f64>();
        let grid = ChebyshevGrid::uniform(&vec![Interval::new(-1.0, 2.0).unwrap(); d], 20).unwrap();
        let t = build_full_tensor(&grid, f).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-0.9..1.9)).collect();
        let g = t.eval_gradient(&x).unwrap();
        for k in 0..d {
            let h = 1e-5;
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (t.eval_barycentric(&up).unwrap() - t.eval_barycentric(&dn).unwrap()) / (2.0 * h);
            prop_assert!((g[k] - fd).abs() <= 1e-4 * fd.abs().max(1e-2), "{} vs {}", g[k], fd);
        }
    }
}
