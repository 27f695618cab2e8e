//! Low-rank TT completion from sampled entries.
//!
//! The fixed-rank solver is Riemannian conjugate gradient on the manifold of
//! TT tensors with prescribed ranks. A point is held twice: as left-orthogonal
//! cores `U_1..U_{d-1}, U_d` and as right-orthogonal cores `V_1, V_2..V_d`.
//! A tangent vector is a list of core variations `D_mu` with the gauge
//! `U_mu^T D_mu = 0` for `mu < d`, and stands for
//! `sum_mu U_1..U_{mu-1} D_mu V_{mu+1}..V_d`. Steps are retracted by TT
//! rounding and search directions carried over by orthogonal projection onto
//! the new tangent space.
//!
//! The objective is `1/2 sum_{train} (X(i) - y_i)^2`; held-out samples are
//! only ever used for reporting and rank selection.

use std::collections::HashSet;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{indexed_seed, stream_rng};
use crate::tensor_train::{mat_vec, thin_svd, vec_mat, Sample, SampleSet, TtCore, TtTensor};

/// Completion hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionConfig {
    /// CG iterations per fixed-rank stage.
    pub max_cg_iterations: usize,
    /// Stage stops once the training relative RMSE reaches this.
    pub train_rel_tol: f64,
    /// Success criterion on held-out relative RMSE.
    pub test_rel_tol: f64,
    /// A rank increase must improve the held-out error by this relative amount.
    pub stagnation_epsilon: f64,
    pub max_rank: usize,
    pub sample_growth_factor: f64,
    pub max_sample_rounds: usize,
    /// Fraction of every sample batch held out for testing.
    pub test_fraction: f64,
    /// Extra random starts for a fixed-rank completion whose first start
    /// misses `train_rel_tol`; the lowest training loss wins.
    pub restarts: usize,
    pub rng_seed: u64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            max_cg_iterations: 250,
            train_rel_tol: 1e-10,
            test_rel_tol: 1e-4,
            stagnation_epsilon: 1e-3,
            max_rank: 12,
            sample_growth_factor: 2.0,
            max_sample_rounds: 4,
            test_fraction: 0.2,
            restarts: 4,
            rng_seed: 0,
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train_rel_tol", self.train_rel_tol),
            ("test_rel_tol", self.test_rel_tol),
            ("stagnation_epsilon", self.stagnation_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_rank == 0 {
            return Err(Error::invalid("max_rank must be at least 1"));
        }
        if !(self.sample_growth_factor > 1.0 && self.sample_growth_factor.is_finite()) {
            return Err(Error::invalid("sample_growth_factor must exceed 1"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::invalid("test_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Outcome of one fixed-rank optimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub ranks: Vec<usize>,
    pub iterations: usize,
    pub train_rel_rmse: f64,
    pub test_rel_rmse: Option<f64>,
    /// True when this stage produced the best held-out error so far.
    pub best: bool,
    pub termination: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub ranks: Vec<usize>,
    pub train_rel_rmse: f64,
    pub test_rel_rmse: Option<f64>,
    /// `sum_{train} (X(i) - y_i)^2`.
    pub train_sq_error: f64,
    pub stages: Vec<StageReport>,
    pub samples_used: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub sample_rounds: usize,
    pub converged: bool,
    pub termination: String,
    /// Excluded from serialization so reports stay reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Degrees of freedom of the fixed-rank TT manifold.
pub fn manifold_dimension(modes: &[usize], ranks: &[usize]) -> usize {
    let cores: usize = modes
        .iter()
        .enumerate()
        .map(|(k, &n)| ranks[k] * n * ranks[k + 1])
        .sum();
    let gauge: usize = ranks[1..ranks.len() - 1].iter().map(|r| r * r).sum();
    cores - gauge
}

/// Check that `ranks` can be carried by a TT with these mode sizes.
pub fn check_ranks(modes: &[usize], ranks: &[usize]) -> Result<()> {
    let d = modes.len();
    if ranks.len() != d + 1 || ranks[0] != 1 || ranks[d] != 1 || ranks.contains(&0) {
        return Err(Error::invalid(format!(
            "ranks {ranks:?} must have length {} with unit boundary ranks",
            d + 1
        )));
    }
    for k in 0..d {
        if ranks[k + 1] > ranks[k] * modes[k] || ranks[k] > modes[k] * ranks[k + 1] {
            return Err(Error::invalid(format!(
                "ranks {ranks:?} inadmissible for modes {modes:?} at core {k}"
            )));
        }
    }
    Ok(())
}

/// Fixed-rank completion from a random start, restarted from fresh random
/// cores while the training tolerance is missed.
pub fn complete_fixed_rank(samples: &SampleSet, ranks: &[usize], cfg: &CompletionConfig) -> Result<(TtTensor, CompletionReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let problem = Problem::new(samples)?;
    check_ranks(&problem.modes, ranks)?;
    if let Some(zero) = problem.zero_solution(samples) {
        return Ok(finish(zero, samples, vec![], true, "zero data", start));
    }
    let rank_one = ranks.iter().all(|&r| r == 1);
    let attempts = if rank_one { 1 } else { cfg.restarts + 1 };
    let mut stages: Vec<StageReport> = Vec::new();
    let mut best: Option<(TtTensor, f64, String)> = None;
    for attempt in 0..attempts {
        let init = if rank_one {
            problem.rank_one_start()
        } else if attempt == 0 {
            random_cores(&problem.modes, ranks, &mut stream_rng(cfg.rng_seed, "completion/init"))
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(indexed_seed(cfg.rng_seed, "completion/restart", attempt as u64));
            random_cores(&problem.modes, ranks, &mut rng)
        };
        let stage = run_stage(&problem, init, cfg)?;
        let tt = TtTensor::new(stage.cores)?;
        let improved = best.as_ref().is_none_or(|(_, train, _)| stage.train_rel_rmse < *train);
        stages.push(StageReport {
            ranks: tt.ranks(),
            iterations: stage.iterations,
            train_rel_rmse: stage.train_rel_rmse,
            test_rel_rmse: test_rel_rmse(&tt, samples),
            best: improved,
            termination: stage.termination.clone(),
        });
        if improved {
            best = Some((tt, stage.train_rel_rmse, stage.termination));
        }
        if stage.train_rel_rmse <= cfg.train_rel_tol {
            break;
        }
    }
    let (tt, train, termination) = best.expect("at least one attempt");
    let converged = test_rel_rmse(&tt, samples).unwrap_or(train) <= cfg.test_rel_tol;
    Ok(finish(tt, samples, stages, converged, &termination, start))
}

/// Rank-adaptive completion: start at ranks all one and raise interior ranks
/// in cyclic order. Stops at the held-out tolerance, at the rank cap, or when
/// a full cycle of increments improves the best held-out error by less than
/// `stagnation_epsilon` relative. Returns the stage with the best held-out
/// error.
pub fn rank_adaptive(samples: &SampleSet, cfg: &CompletionConfig) -> Result<(TtTensor, CompletionReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let problem = Problem::new(samples)?;
    if let Some(zero) = problem.zero_solution(samples) {
        return Ok(finish(zero, samples, vec![], true, "zero data", start));
    }
    let d = problem.modes.len();
    let mut stages = Vec::new();
    let stage = run_stage(&problem, problem.rank_one_start(), cfg)?;
    let mut best = TtTensor::new(stage.cores)?;
    let mut best_err = test_rel_rmse(&best, samples).unwrap_or(stage.train_rel_rmse);
    stages.push(StageReport {
        ranks: best.ranks(),
        iterations: stage.iterations,
        train_rel_rmse: stage.train_rel_rmse,
        test_rel_rmse: test_rel_rmse(&best, samples),
        best: true,
        termination: stage.termination,
    });
    // Current iterate; `best` keeps the lowest held-out error seen.
    let mut current = best.clone();
    let mut next_pos = 0;
    let mut cycle_start_err = best_err;
    let mut steps_in_cycle = 0;
    let mut attempt = 0u64;
    let termination = loop {
        if best_err <= cfg.test_rel_tol {
            break "tolerance reached";
        }
        let ranks = current.ranks();
        let candidates: Vec<usize> = (1..d)
            .filter(|&p| {
                let mut r = ranks.clone();
                r[p] += 1;
                r[p] <= cfg.max_rank && check_ranks(&problem.modes, &r).is_ok()
            })
            .collect();
        if candidates.is_empty() {
            break "rank cap";
        }
        if steps_in_cycle >= d - 1 {
            if best_err > cycle_start_err * (1.0 - cfg.stagnation_epsilon) {
                break "stagnation";
            }
            cycle_start_err = best_err;
            steps_in_cycle = 0;
        }
        // Next admissible interior position at or after the cursor.
        let pos = (0..d - 1)
            .map(|s| 1 + (next_pos + s) % (d - 1))
            .find(|p| candidates.contains(p))
            .expect("non-empty candidates");
        next_pos = pos % (d - 1);
        steps_in_cycle += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(indexed_seed(cfg.rng_seed, "completion/pad", attempt));
        attempt += 1;
        let padded = pad_rank(current.cores(), pos, &mut rng);
        let stage = run_stage(&problem, padded, cfg)?;
        current = TtTensor::new(stage.cores)?;
        let test = test_rel_rmse(&current, samples);
        let err = test.unwrap_or(stage.train_rel_rmse);
        let improved = err < best_err;
        stages.push(StageReport {
            ranks: current.ranks(),
            iterations: stage.iterations,
            train_rel_rmse: stage.train_rel_rmse,
            test_rel_rmse: test,
            best: improved,
            termination: stage.termination,
        });
        log::debug!("rank stage {:?}: held-out {err:.3e} (best {best_err:.3e})", current.ranks());
        if improved {
            best = current.clone();
            best_err = err;
        }
    };
    let converged = best_err <= cfg.test_rel_tol;
    Ok(finish(best, samples, stages, converged, termination, start))
}

/// Source of additional observed entries.
pub trait Sampler {
    fn modes(&self) -> &[usize];
    /// Up to `count` entries not returned before. Fewer means the grid is
    /// exhausted.
    fn draw(&mut self, count: usize) -> Result<Vec<Sample>>;
}

/// Uniform draws of grid indices without replacement.
pub struct GridIndexSampler {
    modes: Vec<usize>,
    total: u128,
    drawn: HashSet<Vec<usize>>,
    rng: ChaCha8Rng,
}

impl GridIndexSampler {
    pub fn new(modes: Vec<usize>, seed: u64) -> Result<Self> {
        if modes.is_empty() || modes.contains(&0) {
            return Err(Error::invalid("sampler modes must be non-empty and positive"));
        }
        let total = modes.iter().map(|&n| n as u128).product();
        Ok(Self {
            modes,
            total,
            drawn: HashSet::new(),
            rng: stream_rng(seed, "completion/sampler"),
        })
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    /// Up to `count` indices not drawn before.
    pub fn draw(&mut self, count: usize) -> Vec<Vec<usize>> {
        let remaining = self.total - self.drawn.len() as u128;
        let count = (count as u128).min(remaining) as usize;
        let mut out = Vec::with_capacity(count);
        if remaining <= 4 * count as u128 {
            // Dense regime: enumerate the complement and pick from it.
            let mut free: Vec<Vec<usize>> = (0..self.total as usize)
                .map(|flat| unravel(&self.modes, flat))
                .filter(|i| !self.drawn.contains(i))
                .collect();
            for k in 0..count {
                let pick = self.rng.random_range(k..free.len());
                free.swap(k, pick);
                out.push(free[k].clone());
            }
        } else {
            while out.len() < count {
                let idx: Vec<usize> = self.modes.iter().map(|&n| self.rng.random_range(0..n)).collect();
                if !self.drawn.contains(&idx) {
                    self.drawn.insert(idx.clone());
                    out.push(idx);
                }
            }
            return out;
        }
        self.drawn.extend(out.iter().cloned());
        out
    }
}

/// Uniform sampling without replacement from a grid, evaluating each new
/// index with `f` in parallel.
pub struct UniformGridSampler<F> {
    indices: GridIndexSampler,
    f: F,
}

impl<F> UniformGridSampler<F>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    pub fn new(modes: Vec<usize>, seed: u64, f: F) -> Result<Self> {
        Ok(Self {
            indices: GridIndexSampler::new(modes, seed)?,
            f,
        })
    }

    /// Indices only, without evaluating.
    pub fn draw_indices(&mut self, count: usize) -> Vec<Vec<usize>> {
        self.indices.draw(count)
    }
}

fn unravel(modes: &[usize], mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0; modes.len()];
    for (slot, &n) in idx.iter_mut().zip(modes).rev() {
        *slot = flat % n;
        flat /= n;
    }
    idx
}

impl<F> Sampler for UniformGridSampler<F>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    fn modes(&self) -> &[usize] {
        self.indices.modes()
    }

    fn draw(&mut self, count: usize) -> Result<Vec<Sample>> {
        let indices = self.draw_indices(count);
        let f = &self.f;
        indices
            .into_par_iter()
            .map(|index| {
                let value = f(&index)?;
                if !value.is_finite() {
                    return Err(Error::BuildFailure { index, value });
                }
                Ok(Sample { index, value })
            })
            .collect()
    }
}

/// Sample-adaptive completion: run [`rank_adaptive`] on `initial` samples
/// and, while it fails, grow the sample set by `sample_growth_factor` and
/// rerun it from ranks all one.
pub fn sample_adaptive(sampler: &mut dyn Sampler, initial: usize, cfg: &CompletionConfig) -> Result<(TtTensor, CompletionReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let modes = sampler.modes().to_vec();
    let first = sampler.draw(initial)?;
    let mut samples = SampleSet::new(modes, first, cfg.test_fraction, indexed_seed(cfg.rng_seed, "completion/split", 0))?;
    let (mut tt, mut report) = rank_adaptive(&samples, cfg)?;
    let mut stages = report.stages.clone();
    let mut rounds = 0;
    while !report.converged && rounds < cfg.max_sample_rounds {
        let target = (samples.len() as f64 * cfg.sample_growth_factor).ceil() as usize;
        let extra = sampler.draw(target - samples.len())?;
        if extra.is_empty() {
            report.termination = "sampler exhausted".into();
            break;
        }
        rounds += 1;
        samples.extend(extra, cfg.test_fraction, indexed_seed(cfg.rng_seed, "completion/split", rounds as u64))?;
        let (next_tt, next_report) = rank_adaptive(&samples, cfg)?;
        stages.extend(next_report.stages.iter().cloned());
        tt = next_tt;
        report = next_report;
    }
    report.stages = stages;
    report.sample_rounds = rounds;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((tt, report))
}

fn finish(tt: TtTensor, samples: &SampleSet, stages: Vec<StageReport>, converged: bool, termination: &str, start: Instant) -> (TtTensor, CompletionReport) {
    let (sq, norm2) = samples.train().fold((0.0, 0.0), |(e, n), s| {
        let r = tt.entry_unchecked(&s.index) - s.value;
        (e + r * r, n + s.value * s.value)
    });
    let report = CompletionReport {
        ranks: tt.ranks(),
        train_rel_rmse: relative(sq, norm2, samples.train_len()),
        test_rel_rmse: test_rel_rmse(&tt, samples),
        train_sq_error: sq,
        stages,
        samples_used: samples.len(),
        train_samples: samples.train_len(),
        test_samples: samples.test_len(),
        sample_rounds: 0,
        converged,
        termination: termination.into(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    (tt, report)
}

/// `||e|| / ||y||`, falling back to the plain RMSE for zero data.
fn relative(sq_err: f64, sq_norm: f64, n: usize) -> f64 {
    if sq_norm > 0.0 {
        (sq_err / sq_norm).sqrt()
    } else if n > 0 {
        (sq_err / n as f64).sqrt()
    } else {
        0.0
    }
}

fn test_rel_rmse(tt: &TtTensor, samples: &SampleSet) -> Option<f64> {
    if samples.test_len() == 0 {
        return None;
    }
    let (sq, norm2) = samples.test().fold((0.0, 0.0), |(e, n), s| {
        let r = tt.entry_unchecked(&s.index) - s.value;
        (e + r * r, n + s.value * s.value)
    });
    Some(relative(sq, norm2, samples.test_len()))
}

fn random_cores(modes: &[usize], ranks: &[usize], rng: &mut ChaCha8Rng) -> Vec<TtCore> {
    modes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let data = (0..n * ranks[k] * ranks[k + 1]).map(|_| rng.sample(StandardNormal)).collect();
            TtCore::new(n, ranks[k], ranks[k + 1], data).expect("shape is consistent")
        })
        .collect()
}

/// Raise rank `pos` by one: a new column of core `pos - 1` and a new row of
/// core `pos`, each Gaussian with norm `1e-4` times the core's norm.
fn pad_rank(cores: &[TtCore], pos: usize, rng: &mut ChaCha8Rng) -> Vec<TtCore> {
    let mut out = cores.to_vec();
    let (a, b) = (&cores[pos - 1], &cores[pos]);
    let mut noise = |len: usize, scale: f64| -> Vec<f64> {
        let v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        v.into_iter().map(|x| x * scale / norm).collect()
    };
    let col = noise(a.mode() * a.left(), 1e-4 * a.frobenius_norm().max(1e-300));
    let mut data = Vec::with_capacity(a.mode() * a.left() * (a.right() + 1));
    for (row, extra) in a.data().chunks(a.right()).zip(&col) {
        data.extend_from_slice(row);
        data.push(*extra);
    }
    out[pos - 1] = TtCore::new(a.mode(), a.left(), a.right() + 1, data).expect("padded shape");
    let row = noise(b.mode() * b.right(), 1e-4 * b.frobenius_norm().max(1e-300));
    let mut data = Vec::with_capacity(b.mode() * (b.left() + 1) * b.right());
    for j in 0..b.mode() {
        data.extend_from_slice(b.slice(j));
        data.extend_from_slice(&row[j * b.right()..(j + 1) * b.right()]);
    }
    out[pos] = TtCore::new(b.mode(), b.left() + 1, b.right(), data).expect("padded shape");
    out
}

/// Training data laid out for the optimizer.
struct Problem {
    modes: Vec<usize>,
    /// Row-major `m x d` multi-indices.
    idx: Vec<usize>,
    y: Vec<f64>,
    y_norm2: f64,
}

impl Problem {
    fn new(samples: &SampleSet) -> Result<Self> {
        let modes = samples.modes().to_vec();
        if modes.len() < 2 {
            return Err(Error::invalid("completion needs at least two dimensions"));
        }
        if samples.train_len() == 0 {
            return Err(Error::invalid("completion needs at least one training sample"));
        }
        let mut idx = Vec::with_capacity(samples.train_len() * modes.len());
        let mut y = Vec::with_capacity(samples.train_len());
        for s in samples.train() {
            idx.extend_from_slice(&s.index);
            y.push(s.value);
        }
        let y_norm2 = y.iter().map(|v| v * v).sum();
        Ok(Self { modes, idx, y, y_norm2 })
    }

    fn m(&self) -> usize {
        self.y.len()
    }

    fn index(&self, i: usize) -> &[usize] {
        let d = self.modes.len();
        &self.idx[i * d..(i + 1) * d]
    }

    fn zero_solution(&self, samples: &SampleSet) -> Option<TtTensor> {
        if samples.samples().iter().any(|s| s.value != 0.0) {
            return None;
        }
        let cores = self
            .modes
            .iter()
            .map(|&n| TtCore::new(n, 1, 1, vec![0.0; n]).expect("valid shape"))
            .collect();
        TtTensor::new(cores).ok()
    }

    /// Rank-one start from per-slice means, scaled by least squares.
    fn rank_one_start(&self) -> Vec<TtCore> {
        let d = self.modes.len();
        let mean = self.y.iter().sum::<f64>() / self.m() as f64;
        let mut cores: Vec<Vec<f64>> = Vec::with_capacity(d);
        for k in 0..d {
            let n = self.modes[k];
            let (mut sum, mut count) = (vec![0.0; n], vec![0usize; n]);
            for i in 0..self.m() {
                let j = self.index(i)[k];
                sum[j] += self.y[i];
                count[j] += 1;
            }
            let v: Vec<f64> = (0..n)
                .map(|j| if count[j] > 0 { sum[j] / count[j] as f64 } else { mean })
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            cores.push(if norm > 0.0 { v.iter().map(|x| x / norm).collect() } else { vec![1.0; n] });
        }
        let (mut xy, mut xx) = (0.0, 0.0);
        for i in 0..self.m() {
            let x: f64 = self.index(i).iter().enumerate().map(|(k, &j)| cores[k][j]).product();
            xy += x * self.y[i];
            xx += x * x;
        }
        let scale = if xx > 0.0 { xy / xx } else { 1.0 };
        cores[d - 1].iter_mut().for_each(|v| *v *= scale);
        cores
            .into_iter()
            .map(|v| TtCore::new(v.len(), 1, 1, v).expect("valid shape"))
            .collect()
    }
}

fn slice_matrix(core: &TtCore, j: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(core.left(), core.right(), core.slice(j))
}

fn left_unfolding(core: &TtCore) -> DMatrix<f64> {
    DMatrix::from_row_slice(core.mode() * core.left(), core.right(), core.data())
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn core_from_left_unfolding(mode: usize, left: usize, m: &DMatrix<f64>) -> TtCore {
    TtCore::new(mode, left, m.ncols(), row_major(m)).expect("unfolding shape")
}

fn core_from_slices(slices: &[DMatrix<f64>]) -> TtCore {
    let (left, right) = slices[0].shape();
    let data = slices.iter().flat_map(row_major).collect();
    TtCore::new(slices.len(), left, right, data).expect("slice shapes agree")
}

/// `C(j) <- m C(j)`.
fn mul_left(m: &DMatrix<f64>, core: &TtCore) -> TtCore {
    let slices: Vec<_> = (0..core.mode()).map(|j| m * slice_matrix(core, j)).collect();
    core_from_slices(&slices)
}

/// `C(j) <- C(j) m`.
fn mul_right(core: &TtCore, m: &DMatrix<f64>) -> TtCore {
    let unfolded = left_unfolding(core) * m;
    core_from_left_unfolding(core.mode(), core.left(), &unfolded)
}

/// `core = Q R` with `Q` left-orthogonal.
fn left_qr(core: &TtCore) -> (TtCore, DMatrix<f64>) {
    let qr = left_unfolding(core).qr();
    (core_from_left_unfolding(core.mode(), core.left(), &qr.q()), qr.r())
}

/// `core = L Q` with `Q` right-orthogonal.
fn right_lq(core: &TtCore) -> (DMatrix<f64>, TtCore) {
    let (n, left, right) = (core.mode(), core.left(), core.right());
    let data = core.data();
    // Transposed right unfolding: rows (j, b), columns a.
    let mt = DMatrix::from_fn(n * right, left, |row, a| data[((row / right) * left + a) * right + row % right]);
    let qr = mt.qr();
    let q = qr.q();
    // Rank-deficient shapes (left > n * right) shrink the left rank.
    let k = q.ncols();
    let mut out = vec![0.0; n * k * right];
    for j in 0..n {
        for a in 0..k {
            for b in 0..right {
                out[(j * k + a) * right + b] = q[(j * right + b, a)];
            }
        }
    }
    (qr.r().transpose(), TtCore::new(n, k, right, out).expect("consistent shape"))
}

fn left_orthogonalize(mut cores: Vec<TtCore>) -> Vec<TtCore> {
    for k in 0..cores.len() - 1 {
        let (q, r) = left_qr(&cores[k]);
        cores[k + 1] = mul_left(&r, &cores[k + 1]);
        cores[k] = q;
    }
    cores
}

fn right_orthogonalize(mut cores: Vec<TtCore>) -> Vec<TtCore> {
    for k in (1..cores.len()).rev() {
        let (l, q) = right_lq(&cores[k]);
        cores[k - 1] = mul_right(&cores[k - 1], &l);
        cores[k] = q;
    }
    cores
}

/// Truncate to `ranks` by right-orthogonalization then an SVD sweep; the
/// result is left-orthogonal.
fn round_to(cores: Vec<TtCore>, ranks: &[usize]) -> Vec<TtCore> {
    let mut cores = right_orthogonalize(cores);
    for k in 0..cores.len() - 1 {
        let (u, sigma, vt) = thin_svd(left_unfolding(&cores[k]));
        let r = ranks[k + 1].min(sigma.len());
        let carry = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&sigma[..r])) * vt.rows(0, r);
        cores[k + 1] = mul_left(&carry, &cores[k + 1]);
        cores[k] = core_from_left_unfolding(cores[k].mode(), cores[k].left(), &u.columns(0, r).into_owned());
    }
    cores
}

/// A point on the manifold in both orthogonal gauges.
struct Point {
    u: Vec<TtCore>,
    v: Vec<TtCore>,
}

impl Point {
    fn from_left_orthogonal(u: Vec<TtCore>) -> Self {
        let v = right_orthogonalize(u.clone());
        Self { u, v }
    }

    fn ranks(&self) -> Vec<usize> {
        std::iter::once(1).chain(self.u.iter().map(TtCore::right)).collect()
    }
}

/// Per-sample interface vectors and values at a point.
struct Cache {
    /// `lefts[k]`: `m x r_k`, product of `U` slices before core `k`.
    lefts: Vec<Vec<f64>>,
    /// `rights[k]`: `m x r_{k+1}`, product of `V` slices after core `k`.
    rights: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl Cache {
    fn new(p: &Point, prob: &Problem) -> Self {
        let d = prob.modes.len();
        let m = prob.m();
        let ranks = p.ranks();
        let mut lefts = vec![vec![1.0; m]];
        for k in 1..d {
            let prev = &lefts[k - 1];
            let (rl, rr) = (ranks[k - 1], ranks[k]);
            let mut cur = Vec::with_capacity(m * rr);
            for i in 0..m {
                let j = prob.index(i)[k - 1];
                cur.extend(vec_mat(&prev[i * rl..(i + 1) * rl], p.u[k - 1].slice(j), rr));
            }
            lefts.push(cur);
        }
        let mut rights = vec![Vec::new(); d];
        rights[d - 1] = vec![1.0; m];
        for k in (0..d - 1).rev() {
            let (rn, rr) = (ranks[k + 2], ranks[k + 1]);
            let next = &rights[k + 1];
            let mut cur = Vec::with_capacity(m * rr);
            for i in 0..m {
                let j = prob.index(i)[k + 1];
                cur.extend(mat_vec(p.v[k + 1].slice(j), rn, &next[i * rn..(i + 1) * rn]));
            }
            rights[k] = cur;
        }
        let rl = ranks[d - 1];
        let values = (0..m)
            .map(|i| {
                let j = prob.index(i)[d - 1];
                vec_mat(&lefts[d - 1][i * rl..(i + 1) * rl], p.u[d - 1].slice(j), 1)[0]
            })
            .collect();
        Self { lefts, rights, values }
    }
}

/// Tangent vector: one variation per core, same shapes as the cores.
#[derive(Clone)]
struct Tangent(Vec<Vec<f64>>);

impl Tangent {
    fn dot(&self, other: &Tangent) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    /// `a * self + b * other`.
    fn combine(&self, a: f64, other: &Tangent, b: f64) -> Tangent {
        Tangent(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect())
                .collect(),
        )
    }

    fn scaled(&self, a: f64) -> Tangent {
        Tangent(self.0.iter().map(|x| x.iter().map(|v| a * v).collect()).collect())
    }
}

/// Remove the component along `U_k` for every core but the last.
fn gauge_project(p: &Point, t: &mut Tangent) {
    let d = p.u.len();
    for k in 0..d - 1 {
        let core = &p.u[k];
        let u = left_unfolding(core);
        let dm = DMatrix::from_row_slice(core.mode() * core.left(), core.right(), &t.0[k]);
        let projected = &dm - &u * (u.transpose() * &dm);
        t.0[k] = row_major(&projected);
    }
}

/// Riemannian gradient of `1/2 sum e_i^2` where `e` are residuals.
fn gradient(p: &Point, prob: &Problem, cache: &Cache, residual: &[f64]) -> Tangent {
    let ranks = p.ranks();
    let d = prob.modes.len();
    let mut g: Vec<Vec<f64>> = p.u.iter().map(|c| vec![0.0; c.data().len()]).collect();
    for k in 0..d {
        let (rl, rr) = (ranks[k], ranks[k + 1]);
        let gk = &mut g[k];
        for (i, &e) in residual.iter().enumerate() {
            let j = prob.index(i)[k];
            let l = &cache.lefts[k][i * rl..(i + 1) * rl];
            let r = &cache.rights[k][i * rr..(i + 1) * rr];
            let block = &mut gk[j * rl * rr..(j + 1) * rl * rr];
            for (a, &la) in l.iter().enumerate() {
                let w = e * la;
                if w == 0.0 {
                    continue;
                }
                block[a * rr..(a + 1) * rr]
                    .iter_mut()
                    .zip(r)
                    .for_each(|(x, &rb)| *x += w * rb);
            }
        }
    }
    let mut t = Tangent(g);
    gauge_project(p, &mut t);
    t
}

/// Values of a tangent vector at the training indices.
fn tangent_values(p: &Point, prob: &Problem, cache: &Cache, t: &Tangent) -> Vec<f64> {
    let ranks = p.ranks();
    let d = prob.modes.len();
    (0..prob.m())
        .map(|i| {
            let idx = prob.index(i);
            (0..d)
                .map(|k| {
                    let (rl, rr) = (ranks[k], ranks[k + 1]);
                    let j = idx[k];
                    let block = &t.0[k][j * rl * rr..(j + 1) * rl * rr];
                    let l = &cache.lefts[k][i * rl..(i + 1) * rl];
                    let r = &cache.rights[k][i * rr..(i + 1) * rr];
                    let lv = vec_mat(l, block, rr);
                    lv.iter().zip(r).map(|(a, b)| a * b).sum::<f64>()
                })
                .sum()
        })
        .collect()
}

/// Rank-doubled TT cores of `X + alpha t` (`with_point`) or of `t` alone.
fn tangent_cores(p: &Point, t: &Tangent, alpha: f64, with_point: bool) -> Vec<TtCore> {
    let d = p.u.len();
    (0..d)
        .map(|k| {
            let (u, v) = (&p.u[k], &p.v[k]);
            let (n, rl, rr) = (u.mode(), u.left(), u.right());
            let dk = &t.0[k];
            let slices: Vec<DMatrix<f64>> = (0..n)
                .map(|j| {
                    let dj = DMatrix::from_row_slice(rl, rr, &dk[j * rl * rr..(j + 1) * rl * rr]) * alpha;
                    let uj = slice_matrix(u, j);
                    let vj = slice_matrix(v, j);
                    if k == 0 {
                        let mut m = DMatrix::zeros(1, 2 * rr);
                        m.view_mut((0, 0), (1, rr)).copy_from(&dj);
                        m.view_mut((0, rr), (1, rr)).copy_from(&uj);
                        m
                    } else if k == d - 1 {
                        let mut m = DMatrix::zeros(2 * rl, 1);
                        m.view_mut((0, 0), (rl, 1)).copy_from(&vj);
                        let bottom = if with_point { uj + dj } else { dj };
                        m.view_mut((rl, 0), (rl, 1)).copy_from(&bottom);
                        m
                    } else {
                        let mut m = DMatrix::zeros(2 * rl, 2 * rr);
                        m.view_mut((0, 0), (rl, rr)).copy_from(&vj);
                        m.view_mut((rl, 0), (rl, rr)).copy_from(&dj);
                        m.view_mut((rl, rr), (rl, rr)).copy_from(&uj);
                        m
                    }
                })
                .collect();
            core_from_slices(&slices)
        })
        .collect()
}

fn retract(p: &Point, t: &Tangent, alpha: f64) -> Point {
    let ranks = p.ranks();
    Point::from_left_orthogonal(round_to(tangent_cores(p, t, alpha, true), &ranks))
}

/// Orthogonal projection of the TT `z` onto the tangent space at `p`.
fn project(p: &Point, z: &[TtCore]) -> Tangent {
    let d = p.u.len();
    let mut left = vec![DMatrix::from_element(1, 1, 1.0)];
    for k in 0..d - 1 {
        let mut acc = DMatrix::zeros(p.u[k].right(), z[k].right());
        for j in 0..z[k].mode() {
            acc += slice_matrix(&p.u[k], j).transpose() * &left[k] * slice_matrix(&z[k], j);
        }
        left.push(acc);
    }
    let mut right = vec![DMatrix::from_element(1, 1, 1.0); d];
    for k in (1..d).rev() {
        let mut acc = DMatrix::zeros(z[k].left(), p.v[k].left());
        for j in 0..z[k].mode() {
            acc += slice_matrix(&z[k], j) * &right[k] * slice_matrix(&p.v[k], j).transpose();
        }
        right[k - 1] = acc;
    }
    let mut t = Tangent(
        (0..d)
            .map(|k| {
                (0..z[k].mode())
                    .flat_map(|j| row_major(&(&left[k] * slice_matrix(&z[k], j) * &right[k])))
                    .collect()
            })
            .collect(),
    );
    gauge_project(p, &mut t);
    t
}

struct StageResult {
    cores: Vec<TtCore>,
    iterations: usize,
    train_rel_rmse: f64,
    termination: String,
}

const MAX_HALVINGS: usize = 30;
const STALL_WINDOW: usize = 50;
const STALL_TOL: f64 = 1e-8;

/// Riemannian CG at the ranks of `init`.
fn run_stage(prob: &Problem, init: Vec<TtCore>, cfg: &CompletionConfig) -> Result<StageResult> {
    let ranks: Vec<usize> = std::iter::once(1).chain(init.iter().map(TtCore::right)).collect();
    let dof = manifold_dimension(&prob.modes, &ranks);
    if prob.m() < dof {
        log::warn!("{} training samples for a manifold of dimension {dof}", prob.m());
    }
    let mut point = Point::from_left_orthogonal(left_orthogonalize(init));
    let mut cache = Cache::new(&point, prob);
    let mut residual: Vec<f64> = cache.values.iter().zip(&prob.y).map(|(x, y)| x - y).collect();
    let mut loss = 0.5 * residual.iter().map(|e| e * e).sum::<f64>();
    let rel = |loss: f64| relative(2.0 * loss, prob.y_norm2, prob.m());
    if !loss.is_finite() {
        return Err(Error::CompletionFailure(format!("non-finite initial loss at ranks {ranks:?}")));
    }
    let mut grad = gradient(&point, prob, &cache, &residual);
    let mut dir = grad.scaled(-1.0);
    let mut history = vec![loss];
    let mut iterations = 0;
    let termination = loop {
        if rel(loss) <= cfg.train_rel_tol {
            break "train tolerance";
        }
        if iterations >= cfg.max_cg_iterations {
            break "iteration limit";
        }
        let gg = grad.dot(&grad);
        if gg.sqrt() <= 1e-15 * prob.y_norm2.sqrt() || gg == 0.0 {
            break "stationary";
        }
        if grad.dot(&dir) >= 0.0 {
            dir = grad.scaled(-1.0);
        }
        let dv = tangent_values(&point, prob, &cache, &dir);
        let denom: f64 = dv.iter().map(|v| v * v).sum();
        if denom == 0.0 {
            break "stationary";
        }
        let mut alpha = -residual.iter().zip(&dv).map(|(e, v)| e * v).sum::<f64>() / denom;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = retract(&point, &dir, alpha);
            let cand_cache = Cache::new(&cand, prob);
            let cand_res: Vec<f64> = cand_cache.values.iter().zip(&prob.y).map(|(x, y)| x - y).collect();
            let cand_loss = 0.5 * cand_res.iter().map(|e| e * e).sum::<f64>();
            if !cand_loss.is_finite() {
                return Err(Error::CompletionFailure(format!(
                    "non-finite loss at ranks {ranks:?} after {iterations} iterations"
                )));
            }
            if cand_loss <= loss {
                accepted = Some((cand, cand_cache, cand_res, cand_loss));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, next_cache, next_res, next_loss)) = accepted else {
            break "line search failed";
        };
        let new_grad = gradient(&next, prob, &next_cache, &next_res);
        let moved_dir = project(&next, &tangent_cores(&point, &dir, 1.0, false));
        let moved_grad = project(&next, &tangent_cores(&point, &grad, 1.0, false));
        let beta = (new_grad.dot(&new_grad) - new_grad.dot(&moved_grad)) / gg;
        dir = new_grad.combine(-1.0, &moved_dir, beta.max(0.0));
        grad = new_grad;
        point = next;
        cache = next_cache;
        residual = next_res;
        loss = next_loss;
        iterations += 1;
        history.push(loss);
        if history.len() > STALL_WINDOW {
            let old = history[history.len() - 1 - STALL_WINDOW];
            if old - loss <= STALL_TOL * old {
                break "stalled";
            }
        }
    };
    Ok(StageResult {
        cores: point.u,
        iterations,
        train_rel_rmse: rel(loss),
        termination: termination.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_tt(modes: &[usize], ranks: &[usize], seed: u64) -> TtTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TtTensor::new(random_cores(modes, ranks, &mut rng)).unwrap()
    }

    fn observe(t: &TtTensor, fraction: f64, seed: u64) -> SampleSet {
        let modes = t.mode_sizes();
        let total: usize = modes.iter().product();
        let count = (total as f64 * fraction).round() as usize;
        let mut sampler = UniformGridSampler::new(modes.clone(), seed, |i: &[usize]| t.entry(i)).unwrap();
        let samples = sampler.draw(count).unwrap();
        SampleSet::new(modes, samples, 0.2, seed).unwrap()
    }

    #[test]
    fn orthogonalization_preserves_tensor() {
        let t = random_tt(&[3, 4, 3], &[1, 2, 3, 1], 1);
        let dense = t.to_dense().unwrap();
        let p = Point::from_left_orthogonal(left_orthogonalize(t.cores().to_vec()));
        for cores in [&p.u, &p.v] {
            let back = TtTensor::new(cores.clone()).unwrap().to_dense().unwrap();
            for (a, b) in back.iter().zip(&dense) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let u0 = left_unfolding(&p.u[0]);
        assert!((u0.transpose() * &u0 - DMatrix::identity(2, 2)).norm() < 1e-13);
    }

    #[test]
    fn projection_of_tangent_is_identity() {
        let t = random_tt(&[3, 4, 3, 2], &[1, 2, 3, 2, 1], 2);
        let p = Point::from_left_orthogonal(left_orthogonalize(t.cores().to_vec()));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tan = Tangent(p.u.iter().map(|c| (0..c.data().len()).map(|_| rng.sample(StandardNormal)).collect()).collect());
        gauge_project(&p, &mut tan);
        let z = tangent_cores(&p, &tan, 1.0, false);
        let back = project(&p, &z);
        let diff = back.combine(1.0, &tan, -1.0);
        assert!(diff.dot(&diff).sqrt() < 1e-12 * tan.dot(&tan).sqrt());
        // Metric agrees with the ambient inner product.
        let zt = TtTensor::new(z).unwrap();
        assert!((zt.inner_product(&zt).unwrap() - tan.dot(&tan)).abs() < 1e-10 * tan.dot(&tan));
    }

    #[test]
    fn retraction_at_zero_step_is_identity() {
        let t = random_tt(&[4, 3, 4], &[1, 2, 2, 1], 4);
        let p = Point::from_left_orthogonal(left_orthogonalize(t.cores().to_vec()));
        let zero = Tangent(p.u.iter().map(|c| vec![0.0; c.data().len()]).collect());
        let q = retract(&p, &zero, 1.0);
        let a = TtTensor::new(q.u).unwrap().to_dense().unwrap();
        for (x, y) in a.iter().zip(t.to_dense().unwrap()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_low_rank_tensor() {
        let truth = random_tt(&[7; 4], &[1, 2, 3, 2, 1], 10);
        let samples = observe(&truth, 0.3, 11);
        let (tt, report) = complete_fixed_rank(&samples, &[1, 2, 3, 2, 1], &CompletionConfig::default()).unwrap();
        assert!(report.test_rel_rmse.unwrap() < 1e-6, "{report:?}");
        assert_eq!(tt.ranks(), vec![1, 2, 3, 2, 1]);
    }

    #[test]
    fn constant_tensor_fully_observed() {
        let cores = (0..3).map(|_| TtCore::from_vector(&[2.0; 4]).unwrap()).collect();
        let truth = TtTensor::new(cores).unwrap();
        let samples = observe(&truth, 1.0, 1);
        let (_, report) = complete_fixed_rank(&samples, &[1, 1, 1, 1], &CompletionConfig::default()).unwrap();
        assert!(report.train_rel_rmse < 1e-12);
        assert!(report.test_rel_rmse.unwrap() < 1e-12);
    }

    #[test]
    fn under_rank_is_much_worse() {
        let truth = random_tt(&[7; 4], &[1, 2, 3, 2, 1], 20);
        let samples = observe(&truth, 0.3, 21);
        let cfg = CompletionConfig::default();
        let (_, good) = complete_fixed_rank(&samples, &[1, 2, 3, 2, 1], &cfg).unwrap();
        let (_, bad) = complete_fixed_rank(&samples, &[1, 1, 2, 1, 1], &cfg).unwrap();
        assert!(bad.test_rel_rmse.unwrap() >= 10.0 * good.test_rel_rmse.unwrap());
    }

    #[test]
    fn training_loss_is_monotone() {
        let truth = random_tt(&[5; 4], &[1, 2, 2, 2, 1], 30);
        let samples = observe(&truth, 0.4, 31);
        let prob = Problem::new(&samples).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let init = random_cores(&prob.modes, &[1, 2, 2, 2, 1], &mut rng);
        // Re-run stages of increasing length; losses must not increase.
        let mut last = f64::INFINITY;
        for iters in [1, 2, 5, 10, 20, 40] {
            let cfg = CompletionConfig { max_cg_iterations: iters, ..Default::default() };
            let s = run_stage(&prob, init.clone(), &cfg).unwrap();
            assert!(s.train_rel_rmse <= last * (1.0 + 1e-12));
            last = s.train_rel_rmse;
        }
    }

    #[test]
    fn rejects_inadmissible_ranks() {
        let truth = random_tt(&[3, 3, 3], &[1, 2, 2, 1], 5);
        let samples = observe(&truth, 0.9, 5);
        let cfg = CompletionConfig::default();
        assert!(complete_fixed_rank(&samples, &[1, 4, 2, 1], &cfg).is_err());
        assert!(complete_fixed_rank(&samples, &[1, 2, 2], &cfg).is_err());
    }

    #[test]
    fn test_samples_do_not_enter_objective() {
        let truth = random_tt(&[5; 3], &[1, 2, 2, 1], 40);
        let samples = observe(&truth, 0.5, 41);
        let mut corrupted: Vec<Sample> = samples.samples().to_vec();
        let test: HashSet<Vec<usize>> = samples.test().map(|s| s.index.clone()).collect();
        for s in corrupted.iter_mut().filter(|s| test.contains(&s.index)) {
            s.value = 1e6;
        }
        let other = SampleSet::with_split(
            samples.modes().to_vec(),
            corrupted,
            samples.train_positions().to_vec(),
            samples.test_positions().to_vec(),
        )
        .unwrap();
        let cfg = CompletionConfig { max_cg_iterations: 30, ..Default::default() };
        let (a, ra) = complete_fixed_rank(&samples, &[1, 2, 2, 1], &cfg).unwrap();
        let (b, rb) = complete_fixed_rank(&other, &[1, 2, 2, 1], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.train_rel_rmse, rb.train_rel_rmse);
        assert_ne!(ra.test_rel_rmse, rb.test_rel_rmse);
    }

    #[test]
    fn rank_adaptive_finds_ranks() {
        let truth = random_tt(&[7; 3], &[1, 3, 2, 1], 50);
        let samples = observe(&truth, 0.4, 51);
        let cfg = CompletionConfig { test_rel_tol: 1e-7, ..Default::default() };
        let (tt, report) = rank_adaptive(&samples, &cfg).unwrap();
        let r = tt.ranks();
        assert!(r[1] >= 3 && r[2] >= 2, "{r:?}");
        assert!(report.test_rel_rmse.unwrap() < 1e-6, "{report:?}");
        assert!(report.converged);
    }

    #[test]
    fn rank_adaptive_zero_data() {
        let modes = vec![4, 4, 4];
        let samples: Vec<Sample> = (0..30).map(|f| Sample { index: unravel(&modes, f * 2), value: 0.0 }).collect();
        let set = SampleSet::new(modes, samples, 0.2, 0).unwrap();
        let (tt, report) = rank_adaptive(&set, &CompletionConfig::default()).unwrap();
        assert_eq!(tt.ranks(), vec![1, 1, 1, 1]);
        assert_eq!(report.train_rel_rmse, 0.0);
        assert!(tt.to_dense().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rank_adaptive_respects_cap() {
        let truth = random_tt(&[6; 4], &[1, 3, 3, 3, 1], 60);
        let samples = observe(&truth, 0.3, 61);
        let cfg = CompletionConfig { max_rank: 2, ..Default::default() };
        let (tt, report) = rank_adaptive(&samples, &cfg).unwrap();
        assert!(tt.max_rank() <= 2);
        assert!(!report.converged);
    }

    #[test]
    fn sample_adaptive_grows_when_starved() {
        let truth = random_tt(&[6; 4], &[1, 2, 2, 2, 1], 70);
        let modes = truth.mode_sizes();
        let dof = manifold_dimension(&modes, &truth.ranks());
        let mut sampler = UniformGridSampler::new(modes, 71, |i: &[usize]| truth.entry(i)).unwrap();
        let cfg = CompletionConfig { test_rel_tol: 1e-6, max_sample_rounds: 10, ..Default::default() };
        let (_, report) = sample_adaptive(&mut sampler, dof / 20, &cfg).unwrap();
        assert!(report.sample_rounds >= 1);
        assert!(report.converged, "{report:#?}");
    }

    #[test]
    fn sample_adaptive_without_rounds_matches_rank_adaptive() {
        let truth = random_tt(&[5; 3], &[1, 2, 2, 1], 80);
        let modes = truth.mode_sizes();
        let cfg = CompletionConfig { max_sample_rounds: 0, ..Default::default() };
        let mut sampler = UniformGridSampler::new(modes.clone(), 81, |i: &[usize]| truth.entry(i)).unwrap();
        let (a, ra) = sample_adaptive(&mut sampler, 40, &cfg).unwrap();
        let mut sampler = UniformGridSampler::new(modes.clone(), 81, |i: &[usize]| truth.entry(i)).unwrap();
        let drawn = sampler.draw(40).unwrap();
        let set = SampleSet::new(modes, drawn, cfg.test_fraction, indexed_seed(cfg.rng_seed, "completion/split", 0)).unwrap();
        let (b, rb) = rank_adaptive(&set, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.stages, rb.stages);
        assert_eq!(ra.sample_rounds, 0);
    }

    #[test]
    fn sampler_exhausts_grid() {
        let mut sampler = UniformGridSampler::new(vec![2, 3], 1, |_: &[usize]| Ok(1.0)).unwrap();
        let a = sampler.draw(4).unwrap();
        let b = sampler.draw(10).unwrap();
        assert_eq!(a.len() + b.len(), 6);
        let all: HashSet<Vec<usize>> = a.iter().chain(&b).map(|s| s.index.clone()).collect();
        assert_eq!(all.len(), 6);
        assert!(sampler.draw(1).unwrap().is_empty());
    }

    #[test]
    fn deterministic_reports() {
        let truth = random_tt(&[5; 3], &[1, 2, 2, 1], 90);
        let samples = observe(&truth, 0.5, 91);
        let cfg = CompletionConfig::default();
        let (a, ra) = rank_adaptive(&samples, &cfg).unwrap();
        let (b, rb) = rank_adaptive(&samples, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
    }
}
