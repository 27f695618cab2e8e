//! Monte Carlo pricing under rough Bergomi.
//!
//! ```text
//! dX_t = -V_t / 2 dt + sqrt(V_t) dW_t,          X_0 = 0 (log-price, spot one)
//! V_t  = xi(t) exp(eta Y_t - eta^2 t^(2H) / 2)
//! Y_t  = sqrt(2H) int_0^t (t - s)^(H - 1/2) dZ_s,   d<W, Z> = rho dt
//! ```
//!
//! The default scheme samples `(Y, Z)` on the time grid exactly from their
//! joint Gaussian law (see [`covariance`]); the hybrid scheme is a cheaper
//! approximation on a uniform grid. Paths are simulated in blocks of
//! [`BLOCK`], block `b` drawing from its own ChaCha8 stream, so results do not
//! depend on the number of threads.

pub mod black_scholes;
pub mod covariance;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use black_scholes::{bs_otm_price, bs_price, bs_vega, implied_vol, implied_vol_otm, norm_cdf};

use crate::error::{Error, Result};
use crate::rng::indexed_seed;
use crate::surface::{SurfaceSpec, VolModel, VolSurface};

pub const BLOCK: usize = 1024;

/// Piecewise-constant, left-continuous forward variance: on `(t_{i-1}, t_i]`
/// the curve equals `v_i` (with `t_0 = 0`); beyond the last pillar the last
/// value is extended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct ForwardVarianceCurve {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<Vec<(f64, f64)>> for ForwardVarianceCurve {
    type Error = Error;

    fn try_from(pillars: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(pillars)
    }
}

impl From<ForwardVarianceCurve> for Vec<(f64, f64)> {
    fn from(c: ForwardVarianceCurve) -> Self {
        c.pillars()
    }
}

impl ForwardVarianceCurve {
    pub fn new(pillars: Vec<(f64, f64)>) -> Result<Self> {
        if pillars.is_empty() {
            return Err(Error::invalid("forward variance curve needs a pillar"));
        }
        let (times, values): (Vec<f64>, Vec<f64>) = pillars.into_iter().unzip();
        if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("pillar times must be non-negative and strictly increasing"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("forward variances must be positive"));
        }
        Ok(Self { times, values })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(vec![(0.0, value)])
    }

    pub fn pillars(&self) -> Vec<(f64, f64)> {
        self.times.iter().copied().zip(self.values.iter().copied()).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&p| p < t);
        self.values[k.min(self.values.len() - 1)]
    }

    /// `int_0^t xi(s) ds`.
    pub fn integral(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        let mut prev = 0.0;
        for (&p, &v) in self.times.iter().zip(&self.values) {
            if p >= t {
                return acc + v * (t - prev);
            }
            acc += v * (p - prev);
            prev = p;
        }
        acc + self.values[self.values.len() - 1] * (t - prev)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoughBergomiParams {
    pub xi: ForwardVarianceCurve,
    pub eta: f64,
    pub rho: f64,
    pub hurst: f64,
}

impl RoughBergomiParams {
    pub fn new(xi: ForwardVarianceCurve, eta: f64, rho: f64, hurst: f64) -> Result<Self> {
        let p = Self { xi, eta, rho, hurst };
        p.validate()?;
        Ok(p)
    }

    pub fn constant(xi: f64, eta: f64, rho: f64, hurst: f64) -> Result<Self> {
        Self::new(ForwardVarianceCurve::constant(xi)?, eta, rho, hurst)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("rho must lie in [-1, 1], got {}", self.rho)));
        }
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::invalid(format!("hurst must lie in (0, 1), got {}", self.hurst)));
        }
        Ok(())
    }
}

/// How a flat parameter vector `(xi pillars..., eta, rho, H)` maps onto
/// [`RoughBergomiParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamLayout {
    pub pillar_times: Vec<f64>,
}

impl ParamLayout {
    /// One forward variance for all times.
    pub fn constant() -> Self {
        Self { pillar_times: vec![0.0] }
    }

    /// `count` pillars at `horizon * k / count`, `k = 1..=count`.
    pub fn uniform(count: usize, horizon: f64) -> Self {
        Self {
            pillar_times: (1..=count).map(|k| horizon * k as f64 / count as f64).collect(),
        }
    }

    pub fn pillars(&self) -> usize {
        self.pillar_times.len()
    }

    pub fn len(&self) -> usize {
        self.pillars() + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = if self.pillars() == 1 {
            vec!["xi".into()]
        } else {
            (1..=self.pillars()).map(|k| format!("xi_{k}")).collect()
        };
        names.extend(["eta", "rho", "hurst"].map(String::from));
        names
    }

    pub fn to_params(&self, theta: &[f64]) -> Result<RoughBergomiParams> {
        if theta.len() != self.len() {
            return Err(Error::invalid(format!(
                "parameter vector of length {} for layout of length {}",
                theta.len(),
                self.len()
            )));
        }
        let m = self.pillars();
        let xi = ForwardVarianceCurve::new(self.pillar_times.iter().copied().zip(theta[..m].iter().copied()).collect())?;
        RoughBergomiParams::new(xi, theta[m], theta[m + 1], theta[m + 2])
    }

    pub fn flatten(&self, p: &RoughBergomiParams) -> Result<Vec<f64>> {
        let mut theta: Vec<f64> = self.pillar_times.iter().map(|&t| p.xi.value_at(t)).collect();
        if p.xi.pillars().len() != self.pillars() {
            return Err(Error::invalid("forward variance curve does not match the layout"));
        }
        theta.extend([p.eta, p.rho, p.hurst]);
        Ok(theta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Exact joint Gaussian sampling of the Volterra process and its driver.
    ExactCholesky,
    /// Hybrid scheme with one exact near-field term; maturities are snapped
    /// to the nearest grid time.
    Hybrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Average out-of-the-money payoffs and price in-the-money calls by
    /// put-call parity.
    OtmParity,
    /// Average call payoffs at every strike.
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MCConfig {
    pub paths: usize,
    pub time_steps_per_year: usize,
    pub rng_seed: u64,
    pub scheme: Scheme,
    pub estimator: Estimator,
    /// Use the spot `exp(X_T)` (known mean one) as a control variate for
    /// every payoff. Off by default.
    pub control_variate: bool,
}

impl Default for MCConfig {
    fn default() -> Self {
        Self {
            paths: 60_000,
            time_steps_per_year: 120,
            rng_seed: 0,
            scheme: Scheme::ExactCholesky,
            estimator: Estimator::OtmParity,
            control_variate: false,
        }
    }
}

impl MCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths < 2 {
            return Err(Error::invalid("at least two paths are needed"));
        }
        if self.time_steps_per_year == 0 {
            return Err(Error::invalid("time_steps_per_year must be at least 1"));
        }
        Ok(())
    }
}

/// Simulated paths at the requested maturities.
#[derive(Clone, Debug)]
pub struct Simulation {
    /// Simulated times matching the requested maturities (snapped under the
    /// hybrid scheme).
    pub times: Vec<f64>,
    pub paths: usize,
    /// Row-major `paths x maturities` log-prices.
    pub log_prices: Vec<f64>,
    /// Row-major `paths x maturities` Volterra values `Y_t`.
    pub volterra: Vec<f64>,
}

impl Simulation {
    pub fn log_price(&self, path: usize, maturity: usize) -> f64 {
        self.log_prices[path * self.times.len() + maturity]
    }
}

/// Terminal log-prices, `paths x maturities`, row-major.
pub fn simulate_terminal_log_prices(p: &RoughBergomiParams, maturities: &[f64], mc: &MCConfig) -> Result<Vec<f64>> {
    Ok(simulate(p, maturities, mc)?.log_prices)
}

pub fn simulate(p: &RoughBergomiParams, maturities: &[f64], mc: &MCConfig) -> Result<Simulation> {
    p.validate()?;
    mc.validate()?;
    if maturities.is_empty()
        || maturities.iter().any(|t| !(t.is_finite() && *t > 0.0))
        || maturities.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::invalid("maturities must be positive and strictly increasing"));
    }
    let horizon = maturities[maturities.len() - 1];
    let steps = ((mc.time_steps_per_year as f64 * horizon) - 1e-9).ceil().max(1.0) as usize;
    let h = horizon / steps as f64;
    let uniform: Vec<f64> = (1..=steps).map(|k| if k == steps { horizon } else { k as f64 * h }).collect();
    let (grid, marks) = match mc.scheme {
        Scheme::ExactCholesky => insert_times(&uniform, maturities),
        Scheme::Hybrid => {
            let marks: Vec<usize> = maturities
                .iter()
                .map(|&t| ((t / h).round() as usize).clamp(1, steps) - 1)
                .collect();
            if marks.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid("two maturities snap to the same grid time"));
            }
            (uniform, marks)
        }
    };
    let times: Vec<f64> = marks.iter().map(|&k| grid[k]).collect();
    let kernel = match mc.scheme {
        Scheme::ExactCholesky => Kernel::Exact(cached_factor(p.hurst, &grid)?),
        Scheme::Hybrid => Kernel::Hybrid(HybridKernel::new(p.hurst, h, steps)),
    };
    let blocks = mc.paths.div_ceil(BLOCK);
    let results: Vec<(Vec<f64>, Vec<f64>)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let count = BLOCK.min(mc.paths - b * BLOCK);
            let mut rng = ChaCha8Rng::seed_from_u64(indexed_seed(mc.rng_seed, "rbergomi/block", b as u64));
            simulate_block(p, &grid, &marks, &kernel, count, &mut rng)
        })
        .collect();
    let mut log_prices = Vec::with_capacity(mc.paths * marks.len());
    let mut volterra = Vec::with_capacity(mc.paths * marks.len());
    for (x, y) in results {
        log_prices.extend(x);
        volterra.extend(y);
    }
    if log_prices.iter().any(|v| !v.is_finite()) {
        return Err(Error::SimulationFailure("non-finite log-price".into()));
    }
    Ok(Simulation {
        times,
        paths: mc.paths,
        log_prices,
        volterra,
    })
}

/// Merge maturities into a grid; returns the grid and the maturity positions.
fn insert_times(grid: &[f64], maturities: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut all: Vec<f64> = grid.to_vec();
    for &t in maturities {
        if !all.iter().any(|&g| (g - t).abs() <= 1e-12 * t.max(1.0)) {
            all.push(t);
        }
    }
    all.sort_by(f64::total_cmp);
    let marks = maturities
        .iter()
        .map(|&t| {
            all.iter()
                .position(|&g| (g - t).abs() <= 1e-12 * t.max(1.0))
                .expect("maturity was inserted")
        })
        .collect();
    (all, marks)
}

type FactorKey = (u64, Vec<u64>);

fn cached_factor(hurst: f64, grid: &[f64]) -> Result<Arc<DMatrix<f64>>> {
    static CACHE: OnceLock<Mutex<HashMap<FactorKey, Arc<DMatrix<f64>>>>> = OnceLock::new();
    let key = (hurst.to_bits(), grid.iter().map(|t| t.to_bits()).collect());
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(f) = cache.lock().expect("factor cache poisoned").get(&key) {
        return Ok(Arc::clone(f));
    }
    let factor = Arc::new(covariance::joint_factor(hurst, grid)?);
    let mut map = cache.lock().expect("factor cache poisoned");
    if map.len() >= 64 {
        map.clear();
    }
    map.insert(key, Arc::clone(&factor));
    Ok(factor)
}

enum Kernel {
    Exact(Arc<DMatrix<f64>>),
    Hybrid(HybridKernel),
}

/// Hybrid scheme weights: the first cell of the kernel is integrated
/// exactly against the Brownian increment, the rest use the kernel at
/// optimal evaluation points `b_k`.
struct HybridKernel {
    gamma: f64,
    /// Lower Cholesky factor of the covariance of `(dZ_i, int (t_i - s)^g dZ_s)`
    /// over one step.
    chol: [f64; 3],
    /// `weights[k]` multiplies `dZ_{i-k}` in `Y_i`, for `k >= 2`.
    weights: Vec<f64>,
}

impl HybridKernel {
    fn new(hurst: f64, h: f64, steps: usize) -> Self {
        let g = hurst - 0.5;
        let c00 = h;
        let c01 = h.powf(g + 1.0) / (g + 1.0);
        let c11 = h.powf(2.0 * g + 1.0) / (2.0 * g + 1.0);
        let l00 = c00.sqrt();
        let l10 = c01 / l00;
        let l11 = (c11 - l10 * l10).max(0.0).sqrt();
        let weights = (0..=steps)
            .map(|k| {
                if k < 2 {
                    0.0
                } else if g.abs() < 1e-14 {
                    1.0
                } else {
                    let kf = k as f64;
                    let b = ((kf.powf(g + 1.0) - (kf - 1.0).powf(g + 1.0)) / (g + 1.0)).powf(1.0 / g);
                    (b * h).powf(g)
                }
            })
            .collect();
        Self {
            gamma: g,
            chol: [l00, l10, l11],
            weights,
        }
    }
}

/// One block of paths; returns (log-prices, Volterra values) at the marks.
fn simulate_block(
    p: &RoughBergomiParams,
    grid: &[f64],
    marks: &[usize],
    kernel: &Kernel,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let n = grid.len();
    let mut ys = DMatrix::<f64>::zeros(n, count);
    let mut dzs = DMatrix::<f64>::zeros(n, count);
    match kernel {
        Kernel::Exact(l) => {
            let xi = DMatrix::from_iterator(2 * n, count, (0..2 * n * count).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let g = l.as_ref() * xi;
            for c in 0..count {
                let col = g.column(c);
                let mut prev = 0.0;
                for k in 0..n {
                    ys[(k, c)] = col[k];
                    dzs[(k, c)] = col[n + k] - prev;
                    prev = col[n + k];
                }
            }
        }
        Kernel::Hybrid(hk) => {
            let scale = (2.0 * hk.gamma + 1.0).sqrt();
            let [l00, l10, l11] = hk.chol;
            let mut near = vec![0.0; n];
            for c in 0..count {
                for k in 0..n {
                    let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                    dzs[(k, c)] = l00 * a;
                    near[k] = l10 * a + l11 * b;
                }
                for i in 0..n {
                    let far: f64 = (2..=i + 1).map(|k| hk.weights[k] * dzs[(i + 1 - k, c)]).sum();
                    ys[(i, c)] = scale * (near[i] + far);
                }
            }
        }
    }
    let perp = DMatrix::from_iterator(n, count, (0..n * count).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let comp = (1.0 - p.rho * p.rho).max(0.0).sqrt();
    // Per-step constants: left time, its variance level and compensator.
    let lefts: Vec<f64> = std::iter::once(0.0).chain(grid[..n - 1].iter().copied()).collect();
    let level: Vec<f64> = lefts.iter().map(|&t| p.xi.value_at(t)).collect();
    let drift: Vec<f64> = lefts
        .iter()
        .map(|&t| 0.5 * p.eta * p.eta * t.powf(2.0 * p.hurst))
        .collect();
    let dts: Vec<f64> = grid.iter().zip(&lefts).map(|(t, s)| t - s).collect();
    let mut x_out = Vec::with_capacity(count * marks.len());
    let mut y_out = Vec::with_capacity(count * marks.len());
    for c in 0..count {
        let mut x = 0.0;
        let mut next_mark = 0;
        for k in 0..n {
            let y_left = if k == 0 { 0.0 } else { ys[(k - 1, c)] };
            let v = level[k] * (p.eta * y_left - drift[k]).exp();
            let dw = p.rho * dzs[(k, c)] + comp * dts[k].sqrt() * perp[(k, c)];
            x += -0.5 * v * dts[k] + v.sqrt() * dw;
            if next_mark < marks.len() && marks[next_mark] == k {
                x_out.push(x);
                y_out.push(ys[(k, c)]);
                next_mark += 1;
            }
        }
    }
    (x_out, y_out)
}

/// Pairwise summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 64 {
        v.iter().sum()
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

/// Sample mean and its standard error.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    let dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean and standard error of `v` with control `c` of known mean one;
/// `c_mean` is the sample mean of `c`.
fn controlled_mean_and_se(v: &[f64], c: &[f64], c_mean: f64) -> (f64, f64) {
    let n = v.len() as f64;
    let v_mean = pairwise_sum(v) / n;
    let cov: Vec<f64> = v.iter().zip(c).map(|(x, y)| (x - v_mean) * (y - c_mean)).collect();
    let var: Vec<f64> = c.iter().map(|y| (y - c_mean).powi(2)).collect();
    let var_c = pairwise_sum(&var);
    let b = if var_c > 0.0 { pairwise_sum(&cov) / var_c } else { 0.0 };
    let adjusted: Vec<f64> = v.iter().zip(c).map(|(x, y)| x - b * (y - 1.0)).collect();
    mean_and_se(&adjusted)
}

/// Monte Carlo prices on a maturity x strike grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriceSurface {
    pub spec: SurfaceSpec,
    /// Simulated time per maturity row.
    pub times: Vec<f64>,
    /// Row-major call prices.
    pub calls: Vec<f64>,
    /// Row-major out-of-the-money prices (puts below strike one).
    pub otm: Vec<f64>,
    /// Standard error of each price estimate.
    pub std_errors: Vec<f64>,
    /// Sample mean of `exp(X_T)` per maturity, and its standard error.
    pub forward_means: Vec<f64>,
    pub forward_std_errors: Vec<f64>,
}

pub fn price_call_surface(p: &RoughBergomiParams, spec: &SurfaceSpec, mc: &MCConfig) -> Result<PriceSurface> {
    let sim = simulate(p, spec.maturities(), mc)?;
    let m = spec.rows();
    let mut out = PriceSurface {
        spec: spec.clone(),
        times: sim.times.clone(),
        calls: Vec::with_capacity(spec.len()),
        otm: Vec::with_capacity(spec.len()),
        std_errors: Vec::with_capacity(spec.len()),
        forward_means: Vec::with_capacity(m),
        forward_std_errors: Vec::with_capacity(m),
    };
    let mut payoff = vec![0.0; sim.paths];
    for i in 0..m {
        let spots: Vec<f64> = (0..sim.paths).map(|path| sim.log_price(path, i).exp()).collect();
        let (fm, fse) = mean_and_se(&spots);
        out.forward_means.push(fm);
        out.forward_std_errors.push(fse);
        for &k in spec.strikes() {
            let put_side = k < 1.0 && mc.estimator == Estimator::OtmParity;
            for (slot, &s) in payoff.iter_mut().zip(&spots) {
                *slot = if put_side { (k - s).max(0.0) } else { (s - k).max(0.0) };
            }
            let (mean, se) = if mc.control_variate {
                controlled_mean_and_se(&payoff, &spots, fm)
            } else {
                mean_and_se(&payoff)
            };
            let intrinsic = (1.0 - k).max(0.0);
            let (call, otm) = if put_side {
                (intrinsic + mean, mean)
            } else {
                (mean, mean - intrinsic)
            };
            out.calls.push(call);
            out.otm.push(otm);
            out.std_errors.push(se);
        }
    }
    Ok(out)
}

impl PriceSurface {
    /// Implied vols per cell; cells without a solution are flagged invalid.
    pub fn implied_vols(&self) -> Result<VolSurface> {
        let cols = self.spec.cols();
        let quotes: Vec<Option<f64>> = self
            .otm
            .iter()
            .enumerate()
            .map(|(c, &price)| {
                let (t, k) = (self.times[c / cols], self.spec.strikes()[c % cols]);
                implied_vol_otm(price, k, t).ok()
            })
            .collect();
        if quotes.iter().all(Option::is_none) {
            return Err(Error::SimulationFailure("no cell of the surface has an implied vol".into()));
        }
        VolSurface::from_optional(self.spec.clone(), &quotes)
    }
}

pub fn implied_vol_surface(p: &RoughBergomiParams, spec: &SurfaceSpec, mc: &MCConfig) -> Result<VolSurface> {
    price_call_surface(p, spec, mc)?.implied_vols()
}

/// The Monte Carlo pricer as a [`VolModel`] over flat parameter vectors.
#[derive(Clone, Debug)]
pub struct RoughBergomiPricer {
    pub layout: ParamLayout,
    pub mc: MCConfig,
}

impl RoughBergomiPricer {
    pub fn new(layout: ParamLayout, mc: MCConfig) -> Result<Self> {
        mc.validate()?;
        Ok(Self { layout, mc })
    }
}

impl VolModel for RoughBergomiPricer {
    fn vol_surface(&self, theta: &[f64], spec: &SurfaceSpec) -> Result<VolSurface> {
        implied_vol_surface(&self.layout.to_params(theta)?, spec, &self.mc)
    }
}
