use chebcal::rough_bergomi::{
    bs_otm_price, bs_price, implied_vol, implied_vol_otm, price_call_surface, ForwardVarianceCurve, MCConfig,
    RoughBergomiParams, Scheme,
};
use chebcal::surface::SurfaceSpec;
use proptest::prelude::*;

fn mc(paths: usize, seed: u64) -> MCConfig {
    MCConfig {
        paths,
        rng_seed: seed,
        ..MCConfig::default()
    }
}

#[test]
fn standard_error_shrinks_by_root_two_when_paths_double() {
    let p = RoughBergomiParams::constant(0.04, 1.5, -0.7, 0.1).unwrap();
    let spec = SurfaceSpec::new(vec![0.5, 1.0], vec![0.8, 1.0, 1.2]).unwrap();
    let small = price_call_surface(&p, &spec, &mc(10_000, 3)).unwrap();
    let large = price_call_surface(&p, &spec, &mc(20_000, 4)).unwrap();
    for (a, b) in small.std_errors.iter().zip(&large.std_errors) {
        let ratio = a / b;
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
    }
}

#[test]
fn vanishing_vol_of_vol_gives_a_flat_surface() {
    let p = RoughBergomiParams::constant(0.09, 1e-8, -0.5, 0.3).unwrap();
    let spec = SurfaceSpec::standard();
    let s = price_call_surface(&p, &spec, &mc(60_000, 5)).unwrap();
    let vols = s.implied_vols().unwrap();
    assert_eq!(vols.valid_count(), spec.len());
    for &v in vols.quotes() {
        assert!((v - 0.3).abs() <= 0.005, "{v}");
    }
    for (m, se) in s.forward_means.iter().zip(&s.forward_std_errors) {
        assert!((m - 1.0).abs() <= 4.0 * se, "{m} +- {se}");
    }
}

#[test]
fn martingale_with_piecewise_forward_variance() {
    let xi = ForwardVarianceCurve::new(vec![(0.0, 0.02), (0.5, 0.06), (1.0, 0.1)]).unwrap();
    let p = RoughBergomiParams::new(xi, 2.0, -0.9, 0.07).unwrap();
    let spec = SurfaceSpec::new(vec![0.25, 0.75, 1.5], vec![1.0]).unwrap();
    for scheme in [Scheme::ExactCholesky, Scheme::Hybrid] {
        let cfg = MCConfig {
            scheme,
            ..mc(20_000, 9)
        };
        let s = price_call_surface(&p, &spec, &cfg).unwrap();
        for (m, se) in s.forward_means.iter().zip(&s.forward_std_errors) {
            assert!((m - 1.0).abs() <= 4.0 * se, "{scheme:?}: {m} +- {se}");
        }
    }
}

#[test]
fn identical_seeds_give_identical_prices() {
    let p = RoughBergomiParams::constant(0.05, 2.5, -0.8, 0.15).unwrap();
    let spec = SurfaceSpec::new(vec![0.3, 1.0], vec![0.9, 1.1]).unwrap();
    let a = price_call_surface(&p, &spec, &mc(3_000, 21)).unwrap();
    let b = price_call_surface(&p, &spec, &mc(3_000, 21)).unwrap();
    let c = price_call_surface(&p, &spec, &mc(3_000, 22)).unwrap();
    assert_eq!(a.calls, b.calls);
    assert_ne!(a.calls, c.calls);
}

proptest! {
    #[test]
    fn black_scholes_round_trip(vol in 0.02f64..1.5, k in 0.5f64..1.8, t in 0.05f64..3.0) {
        let call = bs_price(1.0, k, t, vol).unwrap();
        if call - (1.0 - k).max(0.0) > 1e-9 {
            let v = implied_vol(call, k, t).unwrap();
            prop_assert!((v - vol).abs() < 1e-6, "{} vs {}", v, vol);
        }
        let otm = bs_otm_price(k, t, vol);
        if otm > 1e-9 {
            let v = implied_vol_otm(otm, k, t).unwrap();
            prop_assert!((v - vol).abs() < 1e-6, "{} vs {}", v, vol);
        }
    }
}
