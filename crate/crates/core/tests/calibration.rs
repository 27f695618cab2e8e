mod common;

use chebcal::calibration::{calibrate, loss, loss_gradient, rmse, CalibrationConfig, OutOfDomainPolicy};
use chebcal::harness::calibrate_batch_with;
use chebcal::surface::{SurfaceSpec, VolModel, VolSurface};
use common::toy_surrogate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec() -> SurfaceSpec {
    SurfaceSpec::new(vec![0.4, 0.8, 1.5], vec![0.8, 0.9, 1.0, 1.1, 1.2]).unwrap()
}

fn interior(rng: &mut impl Rng, bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds
        .iter()
        .map(|&(lo, hi)| lo + (hi - lo) * rng.random_range(0.1..0.9))
        .collect()
}

fn noisy_target(theta: &[f64], noise: f64, rng: &mut impl Rng) -> VolSurface {
    let s = toy_surrogate();
    let clean = s.vol_surface(theta, &spec()).unwrap();
    let quotes = clean.quotes().iter().map(|v| v + noise * rng.random_range(-1.0..1.0)).collect();
    VolSurface::from_quotes(spec(), quotes).unwrap()
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let s = toy_surrogate();
    let bounds = s.theta_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let target = noisy_target(&interior(&mut rng, &bounds), 0.01, &mut rng);
    for _ in 0..20 {
        let theta = interior(&mut rng, &bounds);
        let g = loss_gradient(&theta, &target, &s, OutOfDomainPolicy::Reject).unwrap();
        for k in 0..theta.len() {
            let h = 1e-6 * (bounds[k].1 - bounds[k].0);
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (loss(&up, &target, &s, OutOfDomainPolicy::Reject).unwrap()
                - loss(&dn, &target, &s, OutOfDomainPolicy::Reject).unwrap())
                / (2.0 * h);
            assert!((g[k] - fd).abs() <= 1e-4 * fd.abs().max(1e-6), "dim {k}: {} vs {fd}", g[k]);
        }
    }
}

#[test]
fn recovers_surrogate_generated_surfaces() {
    let s = toy_surrogate();
    let bounds = s.theta_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let target = noisy_target(&interior(&mut rng, &bounds), 0.0, &mut rng);
        let r = calibrate(&target, &s, None, &CalibrationConfig::default()).unwrap();
        assert!(r.rmse < 1e-4, "{}", r.rmse);
    }
}

#[test]
fn final_loss_never_exceeds_a_start() {
    let s = toy_surrogate();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target = noisy_target(&interior(&mut rng, &s.theta_bounds()), 0.02, &mut rng);
    let r = calibrate(&target, &s, None, &CalibrationConfig::default()).unwrap();
    assert_eq!(r.starts.len(), 5);
    for st in &r.starts {
        assert!(r.loss <= st.initial_loss);
        assert!(st.final_loss <= st.initial_loss);
    }
    assert!(r.loss_history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn batch_of_one_matches_single_calibration() {
    let s = toy_surrogate();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let target = noisy_target(&interior(&mut rng, &s.theta_bounds()), 0.005, &mut rng);
    let cfg = CalibrationConfig::default();
    let single = calibrate(&target, &s, None, &cfg).unwrap();
    let batch = calibrate_batch_with(&s, &[(0, target)], &cfg);
    assert_eq!(batch.results.len(), 1);
    assert_eq!(batch.results[0].1.theta, single.theta);
    assert_eq!(batch.results[0].1.loss, single.loss);
}

#[test]
fn uniform_weight_scaling_does_not_change_the_fit() {
    let s = toy_surrogate();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let target = noisy_target(&interior(&mut rng, &s.theta_bounds()), 0.01, &mut rng);
    let scaled = target.clone().with_weights(vec![7.0; target.quotes().len()]).unwrap();
    let cfg = CalibrationConfig::default();
    let a = calibrate(&target, &s, None, &cfg).unwrap();
    let b = calibrate(&scaled, &s, None, &cfg).unwrap();
    assert_eq!(a.theta, b.theta);
}

#[test]
fn narrower_bounds_are_respected() {
    let s = toy_surrogate();
    let mut bounds = s.theta_bounds();
    bounds[1] = (1.0, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut theta = interior(&mut rng, &s.theta_bounds());
    theta[1] = 3.5;
    let target = noisy_target(&theta, 0.0, &mut rng);
    let r = calibrate(&target, &s, Some(&bounds), &CalibrationConfig::default()).unwrap();
    assert!(r.theta[1] >= 1.0 && r.theta[1] <= 1.5);
    assert_eq!(r.out_of_box_probes, 0);
}

fn surface_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..0.8, 15)
}

proptest! {
    #[test]
    fn rmse_is_a_metric(a in surface_strategy(), b in surface_strategy(), c in surface_strategy()) {
        let mk = |q: Vec<f64>| VolSurface::from_quotes(spec(), q).unwrap();
        let (a, b, c) = (mk(a), mk(b), mk(c));
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(rmse(&a, &b).unwrap(), rmse(&b, &a).unwrap());
        prop_assert!(rmse(&a, &c).unwrap() <= rmse(&a, &b).unwrap() + rmse(&b, &c).unwrap() + 1e-15);
    }
}
