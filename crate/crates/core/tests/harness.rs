use std::sync::atomic::{AtomicUsize, Ordering};

use chebcal::harness::{
    assess_accuracy_with, build_direct_with, build_tt_with, generate_surfaces, ExperimentConfig, Profile,
};
use chebcal::surface::{SurfaceSpec, VolModel, VolSurface};
use chebcal::Result;

/// Model defined by a closed form in `(theta, T, K)`; counts its calls.
struct Stub<F> {
    f: F,
    calls: AtomicUsize,
}

impl<F: Fn(&[f64], f64, f64) -> f64 + Sync> Stub<F> {
    fn new(f: F) -> Self {
        Self {
            f,
            calls: AtomicUsize::new(0),
        }
    }
}

impl<F: Fn(&[f64], f64, f64) -> f64 + Sync> VolModel for Stub<F> {
    fn vol_surface(&self, theta: &[f64], spec: &SurfaceSpec) -> Result<VolSurface> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut q = Vec::with_capacity(spec.len());
        for &t in spec.maturities() {
            for &k in spec.strikes() {
                q.push((self.f)(theta, t, k));
            }
        }
        VolSurface::from_quotes(spec.clone(), q)
    }
}

fn separable(theta: &[f64], t: f64, k: f64) -> f64 {
    theta[0].sqrt() * (1.0 + 0.1 * theta[1]) * (1.2 + theta[2]) * (1.0 + theta[3]) * (1.0 + 0.2 * t) * k.exp()
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig::from_json(r#"{"direct": {"counts": [2, 2, 2, 2, 2, 2]}}"#).unwrap()
}

#[test]
fn direct_build_calls_the_model_once_per_parameter_node() {
    let cfg = small_config();
    let stub = Stub::new(|_: &[f64], _, _| 0.2);
    let (t, report) = build_direct_with(&cfg, &stub).unwrap();
    assert_eq!(stub.calls.load(Ordering::Relaxed), 16);
    assert_eq!(report.pricer_calls, 16);
    assert_eq!(t.values().len(), 64);
    assert!(t.values().iter().all(|&v| v == 0.2));
    assert_eq!(report.filled_cells, 0);
}

#[test]
fn direct_build_rejects_many_pillars() {
    let cfg = ExperimentConfig::from_json(r#"{"pillars": 8}"#).unwrap();
    let stub = Stub::new(|_: &[f64], _, _| 0.2);
    assert!(build_direct_with(&cfg, &stub).is_err());
    assert_eq!(stub.calls.load(Ordering::Relaxed), 0);
}

#[test]
fn separable_model_completes_at_rank_one() {
    let cfg = ExperimentConfig::from_json(r#"{"tt": {"counts": [4, 4, 4, 4, 4, 4], "samples": 600}}"#).unwrap();
    let stub = Stub::new(separable);
    let (tt, report) = build_tt_with(&cfg, &stub).unwrap();
    assert!(report.completion.converged, "{:?}", report.completion.termination);
    assert_eq!(tt.ranks(), vec![1; 7]);
    assert_eq!(report.grid_points, 4096);
}

fn cases(cfg: &ExperimentConfig, model: &dyn VolModel, shift: f64) -> Vec<(usize, Vec<f64>, VolSurface)> {
    chebcal::harness::draw_thetas(&cfg.theta_bounds(), 6, 1)
        .into_iter()
        .enumerate()
        .map(|(i, theta)| {
            let s = model.vol_surface(&theta, &cfg.surface).unwrap();
            let q = s.quotes().iter().map(|v| v + shift).collect();
            (i, theta, VolSurface::from_quotes(cfg.surface.clone(), q).unwrap())
        })
        .collect()
}

#[test]
fn self_assessment_has_zero_error_and_shifts_show_up_exactly() {
    let cfg = ExperimentConfig::default();
    let stub = Stub::new(separable);
    let exact = assess_accuracy_with(&stub, &cfg.theta_bounds(), &cfg.surface, &cases(&cfg, &stub, 0.0)).unwrap();
    assert_eq!(exact.overall_max_abs_error, Some(0.0));
    let delta = 0.0125;
    let shifted = assess_accuracy_with(&stub, &cfg.theta_bounds(), &cfg.surface, &cases(&cfg, &stub, delta)).unwrap();
    for e in shifted.mean_abs_error.iter().chain(&shifted.max_abs_error) {
        assert!((e.unwrap() - delta).abs() < 1e-12);
    }
}

#[test]
fn assessment_excludes_parameters_outside_the_box() {
    let cfg = ExperimentConfig::default();
    let stub = Stub::new(separable);
    let mut cs = cases(&cfg, &stub, 0.0);
    cs[2].1[1] = 100.0;
    let r = assess_accuracy_with(&stub, &cfg.theta_bounds(), &cfg.surface, &cs).unwrap();
    assert_eq!(r.excluded_out_of_domain, vec![2]);
    assert_eq!(r.surfaces_used, 5);
}

#[test]
fn zero_surfaces_give_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_json(r#"{"surfaces": 0}"#).unwrap();
    let m = generate_surfaces(&cfg, dir.path()).unwrap();
    assert!(m.entries.is_empty() && m.failures.is_empty());
    assert!(dir.path().join("surfaces/manifest.json").exists());
}

#[test]
fn manifests_are_byte_identical_for_equal_seeds() {
    let cfg = ExperimentConfig::from_json(r#"{"surfaces": 3, "mc": {"paths": 1000}, "seed": 42}"#).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_surfaces(&cfg, a.path()).unwrap();
    generate_surfaces(&cfg, b.path()).unwrap();
    for name in ["manifest.json", "surface_00000.json", "surface_00002.csv"] {
        let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("surfaces").join(name)).unwrap();
        assert_eq!(read(&a), read(&b), "{name}");
    }
}

#[test]
fn config_profiles_and_validation() {
    let paper = ExperimentConfig::from_json(r#"{"profile": "paper"}"#).unwrap();
    assert_eq!(paper.profile, Profile::Paper);
    assert_eq!((paper.surfaces, paper.mc.paths), (1000, 60_000));
    let desk = ExperimentConfig::from_json(r#"{"mc": {"paths": 500}}"#).unwrap();
    assert_eq!((desk.surfaces, desk.mc.paths, desk.mc.time_steps_per_year), (50, 500, 120));
    assert!(ExperimentConfig::from_json(r#"{"surfacez": 3}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"domain": {"hurst": [0.5, 0.1]}}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"direct": {"counts": [5, 5]}}"#).is_err());
    assert!(ExperimentConfig::from_json("[1, 2]").is_err());
}
