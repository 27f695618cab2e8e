//! End-to-end experiment pipeline: synthetic surfaces, direct and TT
//! surrogate builds, accuracy assessment, batch calibration and timing.
//!
//! Every stage reads an [`ExperimentConfig`] and writes under one output
//! directory:
//!
//! ```text
//! surfaces/manifest.json, surfaces/surface_00000.{json,csv}
//! direct/tensor.bin(+.json), direct/build_report.json
//! tt/tensor.bin(+.json), tt/build_report.json
//! accuracy/<kind>/{report.json, mean_abs_error.csv, max_abs_error.csv}
//! calibration/<kind>/{summary.json, results.csv, results/result_00000.json}
//! benchmark/<kind>/report.json
//! ```
//!
//! Wall-clock measurements go to `timing.json` / `timing.csv` files next to
//! the reports, so that everything else is byte-identical across runs with
//! the same seed. All randomness derives from the root seed through
//! [`crate::rng::stream_seed`] labels.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calibration::{calibrate, CalibrationConfig, CalibrationResult, Surrogate, SurrogateTensor};
use crate::chebyshev::{build_full_tensor_blocked, ChebyshevGrid, FullChebyshevTensor, Interval};
use crate::completion::{sample_adaptive, CompletionConfig, CompletionReport, GridIndexSampler, Sampler};
use crate::error::{Error, Result};
use crate::format::{read_full, read_json, read_tt, write_full, write_json, write_tt};
use crate::rng::{indexed_seed, stream_rng, stream_seed};
use crate::rough_bergomi::{MCConfig, ParamLayout, RoughBergomiPricer};
use crate::surface::{SurfaceSpec, VolModel, VolSurface};
use crate::tensor_train::{Sample, TtTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 50 surfaces, 20,000 paths.
    Desk,
    /// 1,000 surfaces, 60,000 paths.
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateKind {
    Direct,
    Tt,
}

impl SurrogateKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Direct => "direct",
            Self::Tt => "tt",
        }
    }
}

/// Parameter box; the forward variance range applies to every pillar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Domain {
    pub xi: (f64, f64),
    pub eta: (f64, f64),
    pub rho: (f64, f64),
    pub hurst: (f64, f64),
}

impl Default for Domain {
    fn default() -> Self {
        Self {
            xi: (0.01, 0.16),
            eta: (0.5, 4.0),
            rho: (-0.95, -0.1),
            hurst: (0.025, 0.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectConfig {
    /// Nodes per dimension: parameters, then maturity, then strike.
    pub counts: Vec<usize>,
}

impl Default for DirectConfig {
    fn default() -> Self {
        Self {
            counts: vec![5, 5, 3, 4, 6, 8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtConfig {
    pub points_per_dim: usize,
    /// Overrides `points_per_dim` per dimension.
    pub counts: Option<Vec<usize>>,
    /// Initial number of sampled grid points (train plus held-out).
    pub samples: usize,
    pub completion: CompletionConfig,
}

impl Default for TtConfig {
    fn default() -> Self {
        Self {
            points_per_dim: 7,
            counts: None,
            samples: 10_000,
            completion: CompletionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub surrogate_evals: usize,
    pub pricer_calls: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            surrogate_evals: 10_000,
            pricer_calls: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seed: u64,
    pub domain: Domain,
    /// Forward variance pillars; one means a flat curve.
    pub pillars: usize,
    pub surface: SurfaceSpec,
    /// Monte Carlo settings. `rng_seed` is replaced by streams derived from
    /// `seed`.
    pub mc: MCConfig,
    pub surfaces: usize,
    pub direct: DirectConfig,
    pub tt: TtConfig,
    pub calibration: CalibrationConfig,
    pub benchmark: BenchmarkConfig,
    /// Surrogate used by assess-accuracy, calibrate-batch and benchmark.
    pub surrogate: SurrogateKind,
    /// Defaults to `<out>/<kind>/tensor.bin`.
    pub surrogate_path: Option<PathBuf>,
    /// Defaults to `<out>/surfaces`.
    pub surfaces_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let (surfaces, paths) = match profile {
            Profile::Desk => (50, 20_000),
            Profile::Paper => (1_000, 60_000),
        };
        Self {
            profile,
            seed: 0,
            domain: Domain::default(),
            pillars: 1,
            surface: SurfaceSpec::standard(),
            mc: MCConfig {
                paths,
                ..MCConfig::default()
            },
            surfaces,
            direct: DirectConfig::default(),
            tt: TtConfig::default(),
            calibration: CalibrationConfig::default(),
            benchmark: BenchmarkConfig::default(),
            surrogate: SurrogateKind::Direct,
            surrogate_path: None,
            surfaces_dir: None,
        }
    }

    /// Parse a JSON config. Fields not given come from the selected
    /// `profile` (desk by default).
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        if !user.is_object() {
            return Err(Error::invalid("config must be a JSON object"));
        }
        let profile = match user.get("profile") {
            Some(p) => serde_json::from_value(p.clone()).map_err(|e| Error::invalid(format!("config: {e}")))?,
            None => Profile::Desk,
        };
        let mut base = serde_json::to_value(Self::profile(profile))?;
        merge(&mut base, user);
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        for (name, (lo, hi)) in [("xi", d.xi), ("eta", d.eta), ("rho", d.rho), ("hurst", d.hurst)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!("domain.{name} must be an increasing pair")));
            }
        }
        if !(d.xi.0 > 0.0 && d.eta.0 > 0.0 && d.rho.0 >= -1.0 && d.rho.1 <= 1.0 && d.hurst.0 > 0.0 && d.hurst.1 < 1.0) {
            return Err(Error::invalid("domain exceeds the admissible parameter ranges"));
        }
        if self.pillars == 0 {
            return Err(Error::invalid("pillars must be at least 1"));
        }
        self.mc.validate()?;
        self.calibration.validate()?;
        self.tt.completion.validate()?;
        let dim = self.layout().len() + 2;
        if self.direct.counts.len() != dim && self.layout().len() <= 4 {
            return Err(Error::invalid(format!(
                "direct.counts has {} entries, expected {dim}",
                self.direct.counts.len()
            )));
        }
        let tt = self.tt_counts();
        if tt.len() != dim || tt.iter().chain(&self.direct.counts).any(|&n| n < 2) {
            return Err(Error::invalid(format!("grid counts must be at least 2 in each of {dim} dimensions")));
        }
        if self.tt.samples < 2 {
            return Err(Error::invalid("tt.samples must be at least 2"));
        }
        if self.benchmark.surrogate_evals == 0 || self.benchmark.pricer_calls == 0 {
            return Err(Error::invalid("benchmark counts must be positive"));
        }
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        if self.pillars == 1 {
            ParamLayout::constant()
        } else {
            let horizon = self.surface.maturities()[self.surface.rows() - 1];
            ParamLayout::uniform(self.pillars, horizon)
        }
    }

    pub fn theta_bounds(&self) -> Vec<(f64, f64)> {
        let d = &self.domain;
        let mut b = vec![d.xi; self.pillars];
        b.extend([d.eta, d.rho, d.hurst]);
        b
    }

    pub fn tt_counts(&self) -> Vec<usize> {
        self.tt
            .counts
            .clone()
            .unwrap_or_else(|| vec![self.tt.points_per_dim; self.layout().len() + 2])
    }

    /// Chebyshev grid over `(theta..., maturity, strike)` with the given
    /// node counts; maturity and strike span the surface grid.
    pub fn grid(&self, counts: &[usize]) -> Result<ChebyshevGrid> {
        let s = &self.surface;
        let mut ranges = self.theta_bounds();
        ranges.push((s.maturities()[0], s.maturities()[s.rows() - 1]));
        ranges.push((s.strikes()[0], s.strikes()[s.cols() - 1]));
        if ranges.len() != counts.len() {
            return Err(Error::invalid(format!("{} counts for {} dimensions", counts.len(), ranges.len())));
        }
        let dims = ranges
            .into_iter()
            .zip(counts)
            .map(|((lo, hi), &n)| Ok((Interval::new(lo, hi)?, n)))
            .collect::<Result<_>>()?;
        ChebyshevGrid::new(dims)
    }

    fn pricer(&self, seed: u64) -> Result<RoughBergomiPricer> {
        RoughBergomiPricer::new(
            self.layout(),
            MCConfig {
                rng_seed: seed,
                ..self.mc.clone()
            },
        )
    }

    /// Pricer used for every build node (common random numbers).
    pub fn build_pricer(&self) -> Result<RoughBergomiPricer> {
        self.pricer(stream_seed(self.seed, "build/mc"))
    }

    /// Pricer for synthetic surface `index`.
    pub fn surface_pricer(&self, index: usize) -> Result<RoughBergomiPricer> {
        self.pricer(indexed_seed(self.seed, "surfaces/mc", index as u64))
    }
}

fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, u) => *b = u,
    }
}

/// A recorded per-item failure; the run continues past it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub index: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub file: String,
    pub theta: Vec<f64>,
    pub mc_seed: u64,
    pub valid_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub parameter_names: Vec<String>,
    pub layout: ParamLayout,
    pub spec: SurfaceSpec,
    pub mc: MCConfig,
    pub requested: usize,
    pub entries: Vec<ManifestEntry>,
    pub failures: Vec<Failure>,
}

#[derive(Serialize)]
struct Timing {
    stage: &'static str,
    wall_time_s: f64,
    threads: usize,
}

fn write_timing(dir: &Path, stage: &'static str, started: Instant) -> Result<()> {
    write_json(
        &dir.join("timing.json"),
        &Timing {
            stage,
            wall_time_s: started.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
        },
    )
}

/// `count` parameter vectors drawn uniformly from the box.
pub fn draw_thetas(bounds: &[(f64, f64)], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, "surfaces/theta");
    (0..count)
        .map(|_| bounds.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect())
        .collect()
}

pub fn surfaces_dir(cfg: &ExperimentConfig, out: &Path) -> PathBuf {
    cfg.surfaces_dir.clone().unwrap_or_else(|| out.join("surfaces"))
}

pub fn surrogate_path(cfg: &ExperimentConfig, out: &Path) -> PathBuf {
    cfg.surrogate_path
        .clone()
        .unwrap_or_else(|| out.join(cfg.surrogate.name()).join("tensor.bin"))
}

/// Draw `cfg.surfaces` parameter points, price each surface and write it
/// with a manifest of the generating parameters.
pub fn generate_surfaces(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let started = Instant::now();
    let dir = surfaces_dir(cfg, out);
    fs::create_dir_all(&dir)?;
    let thetas = draw_thetas(&cfg.theta_bounds(), cfg.surfaces, cfg.seed);
    let priced: Vec<(usize, Vec<f64>, u64, Result<VolSurface>)> = thetas
        .into_par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let seed = indexed_seed(cfg.seed, "surfaces/mc", i as u64);
            let surface = cfg.surface_pricer(i).and_then(|p| p.vol_surface(&theta, &cfg.surface));
            (i, theta, seed, surface)
        })
        .collect();
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (index, theta, mc_seed, surface) in priced {
        match surface {
            Ok(s) => {
                let file = format!("surface_{index:05}.json");
                write_json(&dir.join(&file), &s)?;
                s.save_csv(&dir.join(format!("surface_{index:05}.csv")))?;
                entries.push(ManifestEntry {
                    index,
                    file,
                    theta,
                    mc_seed,
                    valid_cells: s.valid_count(),
                });
            }
            Err(e) => {
                log::warn!("surface {index} failed: {e}");
                failures.push(Failure {
                    index,
                    error: e.to_string(),
                });
            }
        }
    }
    let layout = cfg.layout();
    let manifest = Manifest {
        seed: cfg.seed,
        parameter_names: layout.names(),
        layout,
        spec: cfg.surface.clone(),
        mc: cfg.mc.clone(),
        requested: cfg.surfaces,
        entries,
        failures,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_timing(&dir, "generate-surfaces", started)?;
    log::info!("{} surfaces written to {}", manifest.entries.len(), dir.display());
    Ok(manifest)
}

/// Load a manifest and its surfaces.
pub fn load_surfaces(dir: &Path) -> Result<(Manifest, Vec<VolSurface>)> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let surfaces = manifest
        .entries
        .iter()
        .map(|e| read_json(&dir.join(&e.file)))
        .collect::<Result<_>>()?;
    Ok((manifest, surfaces))
}

/// Replace invalid cells by the nearest valid strike in the same row (ties
/// to the lower strike); rows without any valid cell copy the nearest
/// complete row. Returns the values and the number of filled cells.
pub fn fill_invalid(s: &VolSurface) -> Result<(Vec<f64>, usize)> {
    let (rows, cols) = (s.spec().rows(), s.spec().cols());
    let mut out = s.quotes().to_vec();
    let mut filled = 0;
    let mut empty_rows = Vec::new();
    for i in 0..rows {
        let valid: Vec<usize> = (0..cols).filter(|&j| s.valid()[i * cols + j]).collect();
        if valid.is_empty() {
            empty_rows.push(i);
            continue;
        }
        for j in 0..cols {
            if !s.valid()[i * cols + j] {
                let src = *valid
                    .iter()
                    .min_by_key(|&&v| (v.abs_diff(j), v))
                    .expect("row has a valid cell");
                out[i * cols + j] = out[i * cols + src];
                filled += 1;
            }
        }
    }
    let full: Vec<usize> = (0..rows).filter(|i| !empty_rows.contains(i)).collect();
    if full.is_empty() {
        return Err(Error::SimulationFailure("surface has no valid cell".into()));
    }
    for &i in &empty_rows {
        let src = *full.iter().min_by_key(|&&r| (r.abs_diff(i), r)).expect("non-empty");
        let row: Vec<f64> = out[src * cols..(src + 1) * cols].to_vec();
        out[i * cols..(i + 1) * cols].copy_from_slice(&row);
        filled += cols;
    }
    Ok((out, filled))
}

/// Maturity x strike node grid of the last two dimensions.
fn node_spec(grid: &ChebyshevGrid) -> Result<SurfaceSpec> {
    let d = grid.dim();
    SurfaceSpec::new(grid.dims()[d - 2].nodes().to_vec(), grid.dims()[d - 1].nodes().to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectReport {
    pub counts: Vec<usize>,
    pub grid: ChebyshevGrid,
    pub layout: ParamLayout,
    pub theta_combinations: usize,
    pub stored_values: usize,
    pub pricer_calls: usize,
    /// Cells without an implied vol, filled from neighbours.
    pub filled_cells: usize,
}

/// Build the full tensor: one model call per parameter node, each pricing
/// the whole maturity x strike node block.
pub fn build_direct_with(cfg: &ExperimentConfig, model: &dyn VolModel) -> Result<(FullChebyshevTensor, DirectReport)> {
    let layout = cfg.layout();
    if layout.len() > 4 {
        return Err(Error::invalid(format!(
            "{} parameters is too many for a full tensor; use build-tt",
            layout.len()
        )));
    }
    let grid = cfg.grid(&cfg.direct.counts)?;
    let spec = node_spec(&grid)?;
    let filled = AtomicUsize::new(0);
    let (tensor, calls) = build_full_tensor_blocked(&grid, layout.len(), |theta| {
        let (values, n) = fill_invalid(&model.vol_surface(theta, &spec)?)?;
        filled.fetch_add(n, Ordering::Relaxed);
        Ok(values)
    })?;
    let report = DirectReport {
        counts: cfg.direct.counts.clone(),
        grid,
        layout,
        theta_combinations: calls,
        stored_values: tensor.values().len(),
        pricer_calls: calls,
        filled_cells: filled.into_inner(),
    };
    Ok((tensor, report))
}

pub fn build_direct(cfg: &ExperimentConfig, out: &Path) -> Result<DirectReport> {
    let started = Instant::now();
    let dir = out.join("direct");
    fs::create_dir_all(&dir)?;
    let (tensor, report) = build_direct_with(cfg, &cfg.build_pricer()?)?;
    write_full(&dir.join("tensor.bin"), &tensor)?;
    write_json(&dir.join("build_report.json"), &report)?;
    write_timing(&dir, "build-direct", started)?;
    log::info!("direct tensor: {} pricer calls, {} values", report.pricer_calls, report.stored_values);
    Ok(report)
}

/// Samples grid points, pricing each distinct parameter node once as a
/// maturity x strike block and caching it.
struct BlockSampler<'a> {
    grid: ChebyshevGrid,
    spec: SurfaceSpec,
    indices: GridIndexSampler,
    model: &'a dyn VolModel,
    blocks: HashMap<Vec<usize>, Vec<f64>>,
    calls: usize,
    filled: usize,
}

impl Sampler for BlockSampler<'_> {
    fn modes(&self) -> &[usize] {
        self.indices.modes()
    }

    fn draw(&mut self, count: usize) -> Result<Vec<Sample>> {
        let indices = self.indices.draw(count);
        let p = self.grid.dim() - 2;
        let missing: BTreeSet<Vec<usize>> = indices
            .iter()
            .map(|i| i[..p].to_vec())
            .filter(|h| !self.blocks.contains_key(h))
            .collect();
        let head = self.grid.slice_dims(0..p)?;
        let priced: Vec<(Vec<usize>, Result<(Vec<f64>, usize)>)> = missing
            .into_par_iter()
            .map(|h| {
                let theta = head.node_coordinates(&h);
                let block = self.model.vol_surface(&theta, &self.spec).and_then(|s| fill_invalid(&s));
                (h, block)
            })
            .collect();
        for (h, block) in priced {
            let (values, n) = block?;
            self.calls += 1;
            self.filled += n;
            self.blocks.insert(h, values);
        }
        let cols = self.spec.cols();
        Ok(indices
            .into_iter()
            .map(|index| {
                let value = self.blocks[&index[..p]][index[p] * cols + index[p + 1]];
                Sample { index, value }
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtReport {
    pub counts: Vec<usize>,
    pub grid: ChebyshevGrid,
    pub layout: ParamLayout,
    pub grid_points: u128,
    pub pricer_calls: usize,
    pub filled_cells: usize,
    pub completion: CompletionReport,
}

/// Number of points of a grid with `counts` nodes per dimension.
pub fn grid_points(counts: &[usize]) -> u128 {
    counts.iter().map(|&n| n as u128).product()
}

/// Build a TT surrogate by sample-adaptive completion of priced grid points.
pub fn build_tt_with(cfg: &ExperimentConfig, model: &dyn VolModel) -> Result<(TtTensor, TtReport)> {
    let counts = cfg.tt_counts();
    let grid = cfg.grid(&counts)?;
    let mut sampler = BlockSampler {
        spec: node_spec(&grid)?,
        indices: GridIndexSampler::new(counts.clone(), stream_seed(cfg.seed, "tt/samples"))?,
        grid: grid.clone(),
        model,
        blocks: HashMap::new(),
        calls: 0,
        filled: 0,
    };
    let completion = CompletionConfig {
        rng_seed: stream_seed(cfg.seed, "tt/completion"),
        ..cfg.tt.completion.clone()
    };
    let (tt, report) = sample_adaptive(&mut sampler, cfg.tt.samples, &completion)?;
    let tt = tt.with_grid(grid.clone())?;
    let report = TtReport {
        grid_points: grid_points(&counts),
        counts,
        grid,
        layout: cfg.layout(),
        pricer_calls: sampler.calls,
        filled_cells: sampler.filled,
        completion: report,
    };
    Ok((tt, report))
}

pub fn build_tt(cfg: &ExperimentConfig, out: &Path) -> Result<TtReport> {
    let started = Instant::now();
    let dir = out.join("tt");
    fs::create_dir_all(&dir)?;
    log::info!("TT grid has {} points", grid_points(&cfg.tt_counts()));
    let (tt, report) = build_tt_with(cfg, &cfg.build_pricer()?)?;
    write_tt(&dir.join("tensor.bin"), &tt)?;
    write_json(&dir.join("build_report.json"), &report)?;
    write_timing(&dir, "build-tt", started)?;
    log::info!(
        "TT ranks {:?}, held-out relative RMSE {:?}, converged {}",
        report.completion.ranks,
        report.completion.test_rel_rmse,
        report.completion.converged
    );
    Ok(report)
}

/// Load the configured surrogate from disk.
pub fn load_surrogate(cfg: &ExperimentConfig, out: &Path) -> Result<Surrogate> {
    let path = surrogate_path(cfg, out);
    match cfg.surrogate {
        SurrogateKind::Direct => Surrogate::full(read_full(&path)?, cfg.layout()),
        SurrogateKind::Tt => Surrogate::tt(read_tt(&path)?, cfg.layout()),
    }
}

/// Absolute implied-vol errors of a model against benchmark surfaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub spec: SurfaceSpec,
    pub surfaces_used: usize,
    /// Manifest indices whose parameters lie outside the surrogate box.
    pub excluded_out_of_domain: Vec<usize>,
    pub failures: Vec<Failure>,
    /// Per cell, row-major (maturities x strikes); `None` where no surface
    /// has a valid quote.
    pub mean_abs_error: Vec<Option<f64>>,
    pub max_abs_error: Vec<Option<f64>>,
    pub overall_mean_abs_error: Option<f64>,
    pub overall_max_abs_error: Option<f64>,
    pub worst_cell_mean_abs_error: Option<f64>,
    pub best_cell_mean_abs_error: Option<f64>,
}

/// Compare `model` at each case's parameters with the case's surface.
pub fn assess_accuracy_with(
    model: &dyn VolModel,
    bounds: &[(f64, f64)],
    spec: &SurfaceSpec,
    cases: &[(usize, Vec<f64>, VolSurface)],
) -> Result<AccuracyReport> {
    let mut excluded = Vec::new();
    let inside: Vec<&(usize, Vec<f64>, VolSurface)> = cases
        .iter()
        .filter(|(i, theta, _)| {
            let ok = theta.len() == bounds.len() && theta.iter().zip(bounds).all(|(&v, &(lo, hi))| v >= lo && v <= hi);
            if !ok {
                excluded.push(*i);
            }
            ok
        })
        .collect();
    let evaluated: Vec<(usize, Result<VolSurface>)> = inside
        .par_iter()
        .map(|(i, theta, s)| {
            if s.spec() != spec {
                return (*i, Err(Error::invalid("surface is on a different grid")));
            }
            (*i, model.vol_surface(theta, spec))
        })
        .collect();
    let n = spec.len();
    let (mut sum, mut max, mut count) = (vec![0.0; n], vec![0.0f64; n], vec![0usize; n]);
    let mut failures = Vec::new();
    let mut used = 0;
    for ((_, _, bench), (index, fitted)) in inside.iter().zip(evaluated) {
        let fitted = match fitted {
            Ok(f) => f,
            Err(e) => {
                failures.push(Failure {
                    index,
                    error: e.to_string(),
                });
                continue;
            }
        };
        used += 1;
        for c in 0..n {
            if bench.valid()[c] && fitted.valid()[c] {
                let e = (bench.quotes()[c] - fitted.quotes()[c]).abs();
                sum[c] += e;
                max[c] = max[c].max(e);
                count[c] += 1;
            }
        }
    }
    let mean: Vec<Option<f64>> = (0..n).map(|c| (count[c] > 0).then(|| sum[c] / count[c] as f64)).collect();
    let maxes: Vec<Option<f64>> = (0..n).map(|c| (count[c] > 0).then_some(max[c])).collect();
    let total: usize = count.iter().sum();
    let cell_means: Vec<f64> = mean.iter().flatten().copied().collect();
    Ok(AccuracyReport {
        spec: spec.clone(),
        surfaces_used: used,
        excluded_out_of_domain: excluded,
        failures,
        overall_mean_abs_error: (total > 0).then(|| sum.iter().sum::<f64>() / total as f64),
        overall_max_abs_error: maxes.iter().flatten().copied().reduce(f64::max),
        worst_cell_mean_abs_error: cell_means.iter().copied().reduce(f64::max),
        best_cell_mean_abs_error: cell_means.iter().copied().reduce(f64::min),
        mean_abs_error: mean,
        max_abs_error: maxes,
    })
}

/// Heatmap CSV: maturities as rows, strikes as columns, empty where undefined.
pub fn write_heatmap(path: &Path, spec: &SurfaceSpec, values: &[Option<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["maturity".to_string()];
    header.extend(spec.strikes().iter().map(|k| k.to_string()));
    w.write_record(&header)?;
    for (i, t) in spec.maturities().iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(
            values[i * spec.cols()..(i + 1) * spec.cols()]
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn manifest_cases(manifest: &Manifest, surfaces: Vec<VolSurface>) -> Vec<(usize, Vec<f64>, VolSurface)> {
    manifest
        .entries
        .iter()
        .zip(surfaces)
        .map(|(e, s)| (e.index, e.theta.clone(), s))
        .collect()
}

pub fn assess_accuracy(cfg: &ExperimentConfig, out: &Path) -> Result<AccuracyReport> {
    let started = Instant::now();
    let surrogate = load_surrogate(cfg, out)?;
    let (manifest, surfaces) = load_surfaces(&surfaces_dir(cfg, out))?;
    let cases = manifest_cases(&manifest, surfaces);
    let report = assess_accuracy_with(&surrogate, &surrogate.theta_bounds(), &manifest.spec, &cases)?;
    let dir = out.join("accuracy").join(cfg.surrogate.name());
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("report.json"), &report)?;
    write_heatmap(&dir.join("mean_abs_error.csv"), &report.spec, &report.mean_abs_error)?;
    write_heatmap(&dir.join("max_abs_error.csv"), &report.spec, &report.max_abs_error)?;
    write_timing(&dir, "assess-accuracy", started)?;
    log::info!(
        "accuracy over {} surfaces: mean {:?}, worst cell mean {:?}, max {:?}",
        report.surfaces_used,
        report.overall_mean_abs_error,
        report.worst_cell_mean_abs_error,
        report.overall_max_abs_error
    );
    Ok(report)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseQuantiles {
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    pub max: f64,
}

impl RmseQuantiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            q50: quantile(&v, 0.5)?,
            q90: quantile(&v, 0.9)?,
            q99: quantile(&v, 0.99)?,
            max: *v.last()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub surfaces: usize,
    pub calibrated: usize,
    pub failures: Vec<Failure>,
    pub mean_rmse: Option<f64>,
    pub rmse_quantiles: Option<RmseQuantiles>,
}

pub struct BatchOutcome {
    pub results: Vec<(usize, CalibrationResult)>,
    pub summary: BatchSummary,
}

/// Calibrate every surface in parallel; failures are recorded and skipped.
pub fn calibrate_batch_with(surrogate: &Surrogate, cases: &[(usize, VolSurface)], cfg: &CalibrationConfig) -> BatchOutcome {
    let outcomes: Vec<(usize, Result<CalibrationResult>)> = cases
        .par_iter()
        .map(|(i, s)| (*i, calibrate(s, surrogate, None, cfg)))
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (index, r) in outcomes {
        match r {
            Ok(r) => results.push((index, r)),
            Err(e) => failures.push(Failure {
                index,
                error: e.to_string(),
            }),
        }
    }
    let rmses: Vec<f64> = results.iter().map(|(_, r)| r.rmse).collect();
    let summary = BatchSummary {
        surfaces: cases.len(),
        calibrated: results.len(),
        failures,
        mean_rmse: (!rmses.is_empty()).then(|| rmses.iter().sum::<f64>() / rmses.len() as f64),
        rmse_quantiles: RmseQuantiles::of(&rmses),
    };
    BatchOutcome { results, summary }
}

pub fn calibrate_batch(cfg: &ExperimentConfig, out: &Path) -> Result<BatchSummary> {
    let started = Instant::now();
    let surrogate = load_surrogate(cfg, out)?;
    let (manifest, surfaces) = load_surfaces(&surfaces_dir(cfg, out))?;
    let cases: Vec<(usize, VolSurface)> = manifest.entries.iter().map(|e| e.index).zip(surfaces).collect();
    let calibration = CalibrationConfig {
        seed: stream_seed(cfg.seed, "calibration"),
        ..cfg.calibration.clone()
    };
    let outcome = calibrate_batch_with(&surrogate, &cases, &calibration);
    let dir = out.join("calibration").join(cfg.surrogate.name());
    fs::create_dir_all(dir.join("results"))?;
    let names = surrogate.layout().names();
    let mut table = csv::Writer::from_path(dir.join("results.csv"))?;
    let mut timing = csv::Writer::from_path(dir.join("timing.csv"))?;
    let mut header = vec!["index".to_string()];
    header.extend(names.iter().cloned());
    header.extend(["rmse", "loss", "iterations", "termination"].map(String::from));
    table.write_record(&header)?;
    timing.write_record(["index", "wall_time_s"])?;
    for (index, r) in &outcome.results {
        write_json(&dir.join("results").join(format!("result_{index:05}.json")), r)?;
        let mut row = vec![index.to_string()];
        row.extend(r.theta.iter().map(|v| v.to_string()));
        row.extend([
            r.rmse.to_string(),
            r.loss.to_string(),
            r.iterations.to_string(),
            serde_json::to_value(r.termination)?.as_str().unwrap_or_default().to_string(),
        ]);
        table.write_record(&row)?;
        timing.write_record([index.to_string(), r.wall_time_s.to_string()])?;
    }
    table.flush()?;
    timing.flush()?;
    write_json(&dir.join("summary.json"), &outcome.summary)?;
    write_timing(&dir, "calibrate-batch", started)?;
    log::info!(
        "calibrated {}/{} surfaces, RMSE quantiles {:?}",
        outcome.summary.calibrated,
        outcome.summary.surfaces,
        outcome.summary.rmse_quantiles
    );
    Ok(outcome.summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub surrogate: SurrogateKind,
    pub surrogate_evals: usize,
    /// Mean time to evaluate a full surface.
    pub surrogate_surface_latency_s: f64,
    /// Mean time of a single-point evaluation.
    pub surrogate_point_latency_s: f64,
    pub pricer_calls: usize,
    pub pricer_paths: usize,
    pub pricer_latency_s: f64,
    /// Pricer surface latency over surrogate surface latency.
    pub speedup: f64,
    pub threads: usize,
}

/// Time surrogate and pricer on the same surface grid.
pub fn benchmark_with(
    surrogate: &Surrogate,
    pricer: &dyn VolModel,
    spec: &SurfaceSpec,
    bench: &BenchmarkConfig,
    pricer_paths: usize,
    seed: u64,
) -> Result<BenchmarkReport> {
    let bounds = surrogate.theta_bounds();
    let thetas = draw_thetas(&bounds, bench.surrogate_evals.max(bench.pricer_calls), stream_seed(seed, "benchmark"));
    let eval = surrogate.evaluator(spec)?;
    let mut sink = 0.0;
    let t0 = Instant::now();
    for theta in &thetas[..bench.surrogate_evals] {
        sink += eval.values(theta)?[0];
    }
    let surface_latency = t0.elapsed().as_secs_f64() / bench.surrogate_evals as f64;
    let (t_mid, k_mid) = spec.cell(spec.rows() / 2, spec.cols() / 2);
    let t1 = Instant::now();
    for theta in &thetas[..bench.surrogate_evals] {
        let mut x = theta.clone();
        x.extend([t_mid, k_mid]);
        sink += surrogate.eval(&x)?;
    }
    let point_latency = t1.elapsed().as_secs_f64() / bench.surrogate_evals as f64;
    let t2 = Instant::now();
    for theta in &thetas[..bench.pricer_calls] {
        sink += pricer.vol_surface(theta, spec)?.quotes().len() as f64;
    }
    let pricer_latency = t2.elapsed().as_secs_f64() / bench.pricer_calls as f64;
    log::debug!("benchmark checksum {sink}");
    Ok(BenchmarkReport {
        surrogate: match surrogate.tensor() {
            SurrogateTensor::Full(_) => SurrogateKind::Direct,
            SurrogateTensor::Tt(_) => SurrogateKind::Tt,
        },
        surrogate_evals: bench.surrogate_evals,
        surrogate_surface_latency_s: surface_latency,
        surrogate_point_latency_s: point_latency,
        pricer_calls: bench.pricer_calls,
        pricer_paths,
        pricer_latency_s: pricer_latency,
        speedup: pricer_latency / surface_latency,
        threads: rayon::current_num_threads(),
    })
}

pub fn benchmark(cfg: &ExperimentConfig, out: &Path) -> Result<BenchmarkReport> {
    let surrogate = load_surrogate(cfg, out)?;
    let pricer = cfg.pricer(stream_seed(cfg.seed, "benchmark/mc"))?;
    let report = benchmark_with(&surrogate, &pricer, &cfg.surface, &cfg.benchmark, cfg.mc.paths, cfg.seed)?;
    let dir = out.join("benchmark").join(cfg.surrogate.name());
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("report.json"), &report)?;
    log::info!(
        "surrogate {:.3e} s per surface, pricer {:.3e} s, speedup {:.0}x",
        report.surrogate_surface_latency_s,
        report.pricer_latency_s,
        report.speedup
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_and_overrides() {
        let desk = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(desk.surfaces, 50);
        assert_eq!(desk.mc.paths, 20_000);
        let paper = ExperimentConfig::from_json(r#"{"profile": "paper", "mc": {"time_steps_per_year": 60}}"#).unwrap();
        assert_eq!(paper.surfaces, 1_000);
        assert_eq!(paper.mc.paths, 60_000);
        assert_eq!(paper.mc.time_steps_per_year, 60);
        assert!(ExperimentConfig::from_json(r#"{"surfacez": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"domain": {"eta": [4.0, 0.5]}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"direct": {"counts": [3, 3]}}"#).is_err());
        assert!(ExperimentConfig::from_json("[1]").is_err());
    }

    #[test]
    fn thirteen_dimensional_grid_size() {
        let cfg = ExperimentConfig::from_json(r#"{"pillars": 8}"#).unwrap();
        assert_eq!(cfg.layout().len(), 11);
        assert_eq!(grid_points(&cfg.tt_counts()), 96_889_010_407);
        assert!(matches!(
            build_direct_with(&cfg, &cfg.build_pricer().unwrap()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        let q = RmseQuantiles::of(&v).unwrap();
        assert_eq!((q.q50, q.q90, q.q99, q.max), (50.0, 90.0, 99.0, 100.0));
        assert_eq!(quantile(&[1.0, 2.0], 0.25), Some(1.25));
        assert!(RmseQuantiles::of(&[]).is_none());
    }

    #[test]
    fn fill_uses_nearest_valid_strike_then_row() {
        let spec = SurfaceSpec::new(vec![0.5, 1.0], vec![0.8, 0.9, 1.0, 1.1]).unwrap();
        let s = VolSurface::from_optional(spec, &[None, None, None, None, Some(0.3), None, None, Some(0.2)]).unwrap();
        let (v, n) = fill_invalid(&s).unwrap();
        assert_eq!(v, vec![0.3, 0.3, 0.2, 0.2, 0.3, 0.3, 0.2, 0.2]);
        assert_eq!(n, 6);
    }
}
