#![allow(dead_code)]

use chebcal::calibration::Surrogate;
use chebcal::chebyshev::{build_full_tensor, ChebyshevGrid, Interval};
use chebcal::rough_bergomi::ParamLayout;
use chebcal::tensor_train::{TtCore, TtTensor};
use rand::Rng;
use rand_distr::StandardNormal;

/// Smooth stand-in for an implied-vol map of `(xi, eta, rho, H, T, K)`.
pub fn toy_vol(x: &[f64]) -> f64 {
    let (xi, eta, rho, h, t, k) = (x[0], x[1], x[2], x[3], x[4], x[5]);
    let m = k.ln();
    xi.sqrt() * (1.0 + 0.1 * eta * rho * m / t.powf(0.5 - 0.5 * h) + 0.05 * eta * m * m) + 0.01 * h * t
}

pub fn paper_box() -> Vec<(Interval, usize)> {
    vec![
        (Interval::new(0.01, 0.16).unwrap(), 5),
        (Interval::new(0.5, 4.0).unwrap(), 5),
        (Interval::new(-0.95, -0.1).unwrap(), 4),
        (Interval::new(0.025, 0.5).unwrap(), 4),
        (Interval::new(0.3, 2.0).unwrap(), 6),
        (Interval::new(0.7, 1.3).unwrap(), 8),
    ]
}

pub fn toy_surrogate() -> Surrogate {
    let grid = ChebyshevGrid::new(paper_box()).unwrap();
    let t = build_full_tensor(&grid, toy_vol).unwrap();
    Surrogate::full(t, ParamLayout::constant()).unwrap()
}

pub fn random_tt(modes: &[usize], ranks: &[usize], rng: &mut impl Rng) -> TtTensor {
    let cores = modes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let len = n * ranks[k] * ranks[k + 1];
            let data = (0..len).map(|_| rng.sample(StandardNormal)).collect();
            TtCore::new(n, ranks[k], ranks[k + 1], data).unwrap()
        })
        .collect();
    TtTensor::new(cores).unwrap()
}

/// Brute-force entry by explicit matrix products.
pub fn brute_entry(t: &TtTensor, index: &[usize]) -> f64 {
    let mut row = vec![1.0];
    for (core, &j) in t.cores().iter().zip(index) {
        let m = core.matrix(j);
        row = (0..core.right())
            .map(|b| (0..core.left()).map(|a| row[a] * m[a][b]).sum())
            .collect();
    }
    row[0]
}

pub fn all_indices(modes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in modes {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..n).map(move |j| {
                    let mut q = p.clone();
                    q.push(j);
                    q
                })
            })
            .collect();
    }
    out
}
