//! Surrogate-based calibration of model parameters to implied-vol surfaces.
//!
//! A [`Surrogate`] is a Chebyshev tensor over `(theta..., maturity, strike)`.
//! For a fixed surface grid the maturity and strike basis vectors are
//! computed once ([`SurfaceEvaluator`]); each parameter probe then contracts
//! the parameter dimensions down to a small maturity x strike block.
//!
//! The optimizer is a projected Levenberg-Marquardt method on the weighted
//! residuals `sqrt(w) (q - v(theta))` in box-normalized coordinates, with an
//! active set for variables pinned at a bound. Every probe is projected into
//! the box before evaluation.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chebyshev::{contract_leading, Basis, ChebyshevGrid, FullChebyshevTensor};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::rough_bergomi::{ParamLayout, RoughBergomiParams};
use crate::surface::{SurfaceSpec, VolModel, VolSurface};
use crate::tensor_train::{vec_mat, TtTensor};

#[derive(Clone, Debug, PartialEq)]
pub enum SurrogateTensor {
    Full(FullChebyshevTensor),
    Tt(TtTensor),
}

/// A Chebyshev tensor over `(theta..., maturity, strike)`.
#[derive(Clone, Debug)]
pub struct Surrogate {
    tensor: SurrogateTensor,
    layout: ParamLayout,
    grid: ChebyshevGrid,
}

impl Surrogate {
    pub fn full(tensor: FullChebyshevTensor, layout: ParamLayout) -> Result<Self> {
        let grid = tensor.grid().clone();
        Self::checked(SurrogateTensor::Full(tensor), layout, grid)
    }

    pub fn tt(tensor: TtTensor, layout: ParamLayout) -> Result<Self> {
        let grid = tensor
            .grid()
            .cloned()
            .ok_or_else(|| Error::invalid("TT surrogate needs a Chebyshev grid"))?;
        Self::checked(SurrogateTensor::Tt(tensor), layout, grid)
    }

    fn checked(tensor: SurrogateTensor, layout: ParamLayout, grid: ChebyshevGrid) -> Result<Self> {
        if grid.dim() != layout.len() + 2 {
            return Err(Error::invalid(format!(
                "tensor of dimension {} cannot hold {} parameters plus maturity and strike",
                grid.dim(),
                layout.len()
            )));
        }
        Ok(Self { tensor, layout, grid })
    }

    pub fn tensor(&self) -> &SurrogateTensor {
        &self.tensor
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn grid(&self) -> &ChebyshevGrid {
        &self.grid
    }

    pub fn theta_dim(&self) -> usize {
        self.layout.len()
    }

    /// Parameter box as `(lo, hi)` pairs.
    pub fn theta_bounds(&self) -> Vec<(f64, f64)> {
        self.grid.intervals()[..self.theta_dim()]
            .iter()
            .map(|iv| (iv.lo(), iv.hi()))
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match &self.tensor {
            SurrogateTensor::Full(t) => t.eval_barycentric(x),
            SurrogateTensor::Tt(t) => t.cheb_eval(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.tensor {
            SurrogateTensor::Full(t) => t.eval_gradient(x),
            SurrogateTensor::Tt(t) => t.cheb_gradient(x),
        }
    }

    /// Precompute maturity/strike bases for repeated evaluation on `spec`.
    pub fn evaluator(&self, spec: &SurfaceSpec) -> Result<SurfaceEvaluator<'_>> {
        let p = self.theta_dim();
        let dims = self.grid.dims();
        let (td, kd) = (&dims[p], &dims[p + 1]);
        for (axis, dim, values) in [(p, td, spec.maturities()), (p + 1, kd, spec.strikes())] {
            let iv = dim.interval();
            if let Some(&v) = values.iter().find(|&&v| !iv.contains(v)) {
                return Err(Error::OutOfDomain {
                    dim: axis,
                    value: v,
                    lo: iv.lo(),
                    hi: iv.hi(),
                });
            }
        }
        let dense = |dim: &crate::chebyshev::GridDim, values: &[f64]| -> Vec<f64> {
            values
                .iter()
                .flat_map(|&v| dim.basis(v).dense(dim.count()).into_owned())
                .collect()
        };
        Ok(SurfaceEvaluator {
            surrogate: self,
            spec: spec.clone(),
            bt: dense(td, spec.maturities()),
            bk: dense(kd, spec.strikes()),
        })
    }

    /// Contract the parameter dimensions; returns the row-major
    /// maturity x strike node block.
    fn theta_block(&self, bases: &[Basis]) -> Vec<f64> {
        match &self.tensor {
            SurrogateTensor::Full(t) => contract_leading(t.values(), &self.grid.counts(), bases),
            SurrogateTensor::Tt(t) => {
                let p = bases.len();
                let row = t.contract_row(bases);
                let (ct, ck) = (&t.cores()[p], &t.cores()[p + 1]);
                let mut out = Vec::with_capacity(ct.mode() * ck.mode());
                for a in 0..ct.mode() {
                    let u = vec_mat(&row, ct.slice(a), ct.right());
                    for b in 0..ck.mode() {
                        out.push(u.iter().zip(ck.slice(b)).map(|(x, y)| x * y).sum());
                    }
                }
                out
            }
        }
    }
}

impl VolModel for Surrogate {
    fn vol_surface(&self, theta: &[f64], spec: &SurfaceSpec) -> Result<VolSurface> {
        VolSurface::from_quotes(spec.clone(), self.evaluator(spec)?.values(theta)?)
    }
}

/// A surrogate bound to one surface grid.
pub struct SurfaceEvaluator<'a> {
    surrogate: &'a Surrogate,
    spec: SurfaceSpec,
    /// Row-major `maturities x nodes` basis values.
    bt: Vec<f64>,
    bk: Vec<f64>,
}

impl SurfaceEvaluator<'_> {
    pub fn spec(&self) -> &SurfaceSpec {
        &self.spec
    }

    fn theta_bases(&self, theta: &[f64]) -> Result<Vec<Basis>> {
        let s = self.surrogate;
        if theta.len() != s.theta_dim() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                s.theta_dim(),
                theta.len()
            )));
        }
        let dims = &s.grid.dims()[..theta.len()];
        for (k, (&v, d)) in theta.iter().zip(dims).enumerate() {
            let iv = d.interval();
            if !iv.contains(v) {
                return Err(Error::OutOfDomain {
                    dim: k,
                    value: v,
                    lo: iv.lo(),
                    hi: iv.hi(),
                });
            }
        }
        Ok(theta.iter().zip(dims).map(|(&v, d)| d.basis(v)).collect())
    }

    /// Interpolate a node block onto the surface cells.
    fn expand(&self, block: &[f64]) -> Vec<f64> {
        let p = self.surrogate.theta_dim();
        let dims = self.surrogate.grid.dims();
        let (nt, nk) = (dims[p].count(), dims[p + 1].count());
        let (rows, cols) = (self.spec.rows(), self.spec.cols());
        // block (nt x nk) times bk^T (nk x cols)
        let mut right = vec![0.0; nt * cols];
        for a in 0..nt {
            let brow = &block[a * nk..(a + 1) * nk];
            for j in 0..cols {
                right[a * cols + j] = brow.iter().zip(&self.bk[j * nk..(j + 1) * nk]).map(|(x, y)| x * y).sum();
            }
        }
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let w = &self.bt[i * nt..(i + 1) * nt];
            for j in 0..cols {
                out[i * cols + j] = (0..nt).map(|a| w[a] * right[a * cols + j]).sum();
            }
        }
        out
    }

    /// Surrogate vols on every cell, row-major.
    pub fn values(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let bases = self.theta_bases(theta)?;
        Ok(self.expand(&self.surrogate.theta_block(&bases)))
    }

    /// Values and, per parameter, the partial derivatives on every cell.
    pub fn values_and_jacobian(&self, theta: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let bases = self.theta_bases(theta)?;
        let values = self.expand(&self.surrogate.theta_block(&bases));
        let dims = self.surrogate.grid.dims();
        let jac = (0..theta.len())
            .map(|l| {
                let mut b = bases.clone();
                b[l] = Basis::Weights(dims[l].basis_derivative(theta[l]));
                self.expand(&self.surrogate.theta_block(&b))
            })
            .collect();
        Ok((values, jac))
    }
}

/// What to do with parameter points outside the surrogate's box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutOfDomainPolicy {
    #[default]
    Reject,
    Clamp,
    /// Price outside the box with the Monte Carlo pricer. Declared only.
    PricerFallback,
}

impl OutOfDomainPolicy {
    /// Map `theta` into the box, or fail.
    pub fn resolve(&self, theta: &[f64], bounds: &[(f64, f64)]) -> Result<Vec<f64>> {
        let outside = theta
            .iter()
            .zip(bounds)
            .position(|(&v, &(lo, hi))| !(v >= lo && v <= hi));
        let Some(k) = outside else {
            return Ok(theta.to_vec());
        };
        match self {
            Self::Reject => Err(Error::OutOfDomain {
                dim: k,
                value: theta[k],
                lo: bounds[k].0,
                hi: bounds[k].1,
            }),
            Self::Clamp => Ok(theta.iter().zip(bounds).map(|(&v, &(lo, hi))| v.clamp(lo, hi)).collect()),
            Self::PricerFallback => Err(Error::Unsupported("pricer fallback outside the surrogate domain".into())),
        }
    }
}

/// `sum w (q - v)^2` over valid cells.
pub fn loss(theta: &[f64], surface: &VolSurface, s: &Surrogate, policy: OutOfDomainPolicy) -> Result<f64> {
    let theta = policy.resolve(theta, &s.theta_bounds())?;
    let v = s.evaluator(surface.spec())?.values(&theta)?;
    Ok(weighted_residuals(surface, &v).map(|(w, r)| w * r * r).sum())
}

/// Gradient of [`loss`] with respect to the parameters.
pub fn loss_gradient(theta: &[f64], surface: &VolSurface, s: &Surrogate, policy: OutOfDomainPolicy) -> Result<Vec<f64>> {
    let theta = policy.resolve(theta, &s.theta_bounds())?;
    let (v, jac) = s.evaluator(surface.spec())?.values_and_jacobian(&theta)?;
    Ok(jac
        .iter()
        .map(|dv| {
            surface
                .valid()
                .iter()
                .enumerate()
                .filter(|(_, ok)| **ok)
                .map(|(c, _)| -2.0 * surface.weights()[c] * (surface.quotes()[c] - v[c]) * dv[c])
                .sum()
        })
        .collect())
}

fn weighted_residuals<'a>(surface: &'a VolSurface, v: &'a [f64]) -> impl Iterator<Item = (f64, f64)> + 'a {
    surface
        .valid()
        .iter()
        .enumerate()
        .filter(|(_, ok)| **ok)
        .map(move |(c, _)| (surface.weights()[c], surface.quotes()[c] - v[c]))
}

/// Root mean squared difference over the cells valid in both surfaces.
pub fn rmse(a: &VolSurface, b: &VolSurface) -> Result<f64> {
    if a.spec() != b.spec() {
        return Err(Error::invalid("surfaces are on different grids"));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for c in 0..a.quotes().len() {
        if a.valid()[c] && b.valid()[c] {
            sum += (a.quotes()[c] - b.quotes()[c]).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Undefined("no cell is valid in both surfaces".into()));
    }
    Ok((sum / n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub starts: usize,
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub seed: u64,
    pub out_of_domain: OutOfDomainPolicy,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            starts: 5,
            max_iterations: 500,
            gradient_tol: 1e-10,
            step_tol: 1e-12,
            seed: 0,
            out_of_domain: OutOfDomainPolicy::Reject,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 {
            return Err(Error::invalid("at least one start is needed"));
        }
        if !(self.gradient_tol >= 0.0 && self.step_tol >= 0.0) {
            return Err(Error::invalid("tolerances must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Gradient,
    Step,
    MaxIterations,
    /// The damping grew without finding a decrease.
    Stalled,
    /// No start improved on its initial loss.
    NoProgress,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartReport {
    pub initial_theta: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub theta_star: RoughBergomiParams,
    pub theta: Vec<f64>,
    /// Recomputed from the fitted surface.
    pub rmse: f64,
    pub loss: f64,
    /// Loss after each accepted step of the winning start.
    pub loss_history: Vec<f64>,
    pub starts: Vec<StartReport>,
    pub iterations: usize,
    pub surrogate_calls: usize,
    pub pricer_calls: usize,
    pub out_of_box_probes: usize,
    pub termination: Termination,
    #[serde(skip)]
    pub wall_time_s: f64,
}

struct Problem<'a> {
    eval: SurfaceEvaluator<'a>,
    cells: Vec<usize>,
    quotes: Vec<f64>,
    /// Square roots of the weights, normalized to sum one.
    sqrt_w: Vec<f64>,
    scale: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    width: Vec<f64>,
    calls: usize,
    out_of_box: usize,
}

impl Problem<'_> {
    fn theta(&self, u: &[f64]) -> Vec<f64> {
        (0..u.len())
            .map(|l| (self.lo[l] + self.width[l] * u[l]).clamp(self.lo[l], self.hi[l]))
            .collect()
    }

    fn count_probe(&mut self, u: &[f64]) {
        self.calls += 1;
        if u.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            self.out_of_box += 1;
        }
    }

    fn residuals(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        self.count_probe(u);
        let v = self.eval.values(&self.theta(u))?;
        Ok(self.residuals_from(&v))
    }

    fn residuals_from(&self, v: &[f64]) -> Vec<f64> {
        self.cells
            .iter()
            .zip(&self.quotes)
            .zip(&self.sqrt_w)
            .map(|((&c, &q), &sw)| sw * (q - v[c]))
            .collect()
    }

    /// Residuals and their Jacobian in normalized coordinates.
    fn linearize(&mut self, u: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.count_probe(u);
        let (v, jac) = self.eval.values_and_jacobian(&self.theta(u))?;
        let r = self.residuals_from(&v);
        let j = DMatrix::from_fn(self.cells.len(), u.len(), |row, l| {
            -self.sqrt_w[row] * jac[l][self.cells[row]] * self.width[l]
        });
        Ok((r, j))
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

struct StartOutcome {
    u: Vec<f64>,
    loss: f64,
    history: Vec<f64>,
    report: StartReport,
}

fn run_start(pb: &mut Problem<'_>, u0: Vec<f64>, cfg: &CalibrationConfig) -> Result<StartOutcome> {
    let p = u0.len();
    let mut u = u0;
    let (mut r, mut j) = pb.linearize(&u)?;
    let mut loss = sum_sq(&r);
    let initial_loss = loss;
    let mut history = vec![loss];
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let termination = 'outer: loop {
        if iterations >= cfg.max_iterations {
            break Termination::MaxIterations;
        }
        let jt_r = j.transpose() * DVector::from_column_slice(&r);
        let grad: Vec<f64> = jt_r.iter().map(|g| 2.0 * g).collect();
        // Variables pinned at a bound with the gradient pushing outward
        // are held fixed for this step.
        let free: Vec<usize> = (0..p)
            .filter(|&l| pb.width[l] > 0.0)
            .filter(|&l| !((u[l] <= 0.0 && grad[l] > 0.0) || (u[l] >= 1.0 && grad[l] < 0.0)))
            .collect();
        let pg = free.iter().map(|&l| grad[l] * grad[l]).sum::<f64>().sqrt();
        if pg < cfg.gradient_tol || free.is_empty() {
            break Termination::Gradient;
        }
        let jf = j.select_columns(&free);
        let a = jf.transpose() * &jf;
        let b = -(jf.transpose() * DVector::from_column_slice(&r));
        let dmax = a.diagonal().max();
        iterations += 1;
        loop {
            let mut m = a.clone();
            for k in 0..free.len() {
                m[(k, k)] += lambda * a[(k, k)].max(1e-12 * dmax).max(f64::MIN_POSITIVE);
            }
            let delta = match m.cholesky() {
                Some(ch) => ch.solve(&b),
                None => {
                    lambda *= 4.0;
                    if lambda > 1e12 {
                        break 'outer Termination::Stalled;
                    }
                    continue;
                }
            };
            let mut trial = u.clone();
            for (k, &l) in free.iter().enumerate() {
                trial[l] = (u[l] + delta[k]).clamp(0.0, 1.0);
            }
            let step = trial.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if step < cfg.step_tol {
                break 'outer Termination::Step;
            }
            let r_new = pb.residuals(&trial)?;
            let loss_new = sum_sq(&r_new);
            if loss_new < loss {
                u = trial;
                (r, j) = pb.linearize(&u)?;
                loss = sum_sq(&r);
                history.push(loss);
                lambda = (lambda / 3.0).max(1e-12);
                break;
            }
            lambda *= 4.0;
            if lambda > 1e12 {
                break 'outer Termination::Stalled;
            }
        }
    };
    Ok(StartOutcome {
        report: StartReport {
            initial_theta: Vec::new(),
            initial_loss: initial_loss * pb.scale,
            final_loss: loss * pb.scale,
            iterations,
            termination,
        },
        history: history.into_iter().map(|l| l * pb.scale).collect(),
        u,
        loss,
    })
}

/// Latin hypercube starts in the unit box.
fn latin_hypercube(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, "calibration/starts");
    let mut points = vec![vec![0.0; dim]; count];
    for l in 0..dim {
        let mut strata: Vec<usize> = (0..count).collect();
        strata.shuffle(&mut rng);
        for (point, &s) in points.iter_mut().zip(&strata) {
            point[l] = (s as f64 + rng.random::<f64>()) / count as f64;
        }
    }
    points
}

/// Fit surrogate parameters to `surface` within `bounds` (default: the
/// surrogate's parameter box).
pub fn calibrate(
    surface: &VolSurface,
    s: &Surrogate,
    bounds: Option<&[(f64, f64)]>,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult> {
    cfg.validate()?;
    let started = Instant::now();
    let domain = s.theta_bounds();
    let bounds = bounds.map(<[_]>::to_vec).unwrap_or_else(|| domain.clone());
    if bounds.len() != domain.len() {
        return Err(Error::invalid("bounds do not match the parameter layout"));
    }
    for (&(lo, hi), &(dlo, dhi)) in bounds.iter().zip(&domain) {
        if !(lo <= hi && lo >= dlo && hi <= dhi) {
            return Err(Error::invalid(format!("bounds [{lo}, {hi}] not inside [{dlo}, {dhi}]")));
        }
    }
    let eval = s.evaluator(surface.spec())?;
    let cells: Vec<usize> = (0..surface.quotes().len()).filter(|&c| surface.valid()[c]).collect();
    let total: f64 = cells.iter().map(|&c| surface.weights()[c]).sum();
    let scale = if total > 0.0 { total } else { 1.0 };
    let mut pb = Problem {
        eval,
        quotes: cells.iter().map(|&c| surface.quotes()[c]).collect(),
        sqrt_w: cells.iter().map(|&c| (surface.weights()[c] / scale).sqrt()).collect(),
        cells,
        scale,
        lo: bounds.iter().map(|b| b.0).collect(),
        hi: bounds.iter().map(|b| b.1).collect(),
        width: bounds.iter().map(|b| b.1 - b.0).collect(),
        calls: 0,
        out_of_box: 0,
    };
    let mut best: Option<StartOutcome> = None;
    let mut reports = Vec::with_capacity(cfg.starts);
    let mut iterations = 0;
    for u0 in latin_hypercube(cfg.starts, domain.len(), cfg.seed) {
        let theta0 = pb.theta(&u0);
        let mut outcome = run_start(&mut pb, u0, cfg)?;
        outcome.report.initial_theta = theta0;
        iterations += outcome.report.iterations;
        reports.push(outcome.report.clone());
        if best.as_ref().is_none_or(|b| outcome.loss < b.loss) {
            best = Some(outcome);
        }
    }
    let best = best.expect("at least one start");
    let theta = pb.theta(&best.u);
    let fitted = VolSurface::from_quotes(surface.spec().clone(), pb.eval.values(&theta)?)?;
    let no_progress = reports.iter().all(|r| r.final_loss >= r.initial_loss);
    Ok(CalibrationResult {
        theta_star: s.layout().to_params(&theta)?,
        rmse: rmse(surface, &fitted)?,
        loss: best.loss * pb.scale,
        loss_history: best.history,
        termination: if no_progress { Termination::NoProgress } else { best.report.termination },
        theta,
        starts: reports,
        iterations,
        surrogate_calls: pb.calls + 1,
        pricer_calls: 0,
        out_of_box_probes: pb.out_of_box,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Calibrate each surface independently, in parallel.
pub fn calibrate_many(
    surfaces: &[VolSurface],
    s: &Surrogate,
    bounds: Option<&[(f64, f64)]>,
    cfg: &CalibrationConfig,
) -> Vec<Result<CalibrationResult>> {
    surfaces.par_iter().map(|q| calibrate(q, s, bounds, cfg)).collect()
}
