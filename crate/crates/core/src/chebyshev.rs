//! Chebyshev grids and full (direct) Chebyshev tensors.
//!
//! A [`ChebyshevGrid`] is the Cartesian product of one-dimensional Chebyshev
//! grids, each mapped affinely onto its own interval. Nodes are stored in
//! ascending order, so node `k` of an `n`-point dimension is
//! `mid - half * cos(k * pi / (n - 1))`.
//!
//! A [`FullChebyshevTensor`] stores one value per grid point in row-major
//! order (the last dimension varies fastest) and is identified with its
//! tensor-product polynomial interpolant. The interpolant can be evaluated
//! with the second barycentric formula or with Clenshaw's recurrence on a
//! cached coefficient tensor; both contract the tensor one dimension at a time.

use std::borrow::Cow;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative distance (in units of interval width) below which a coordinate
/// is treated as sitting exactly on a node.
pub const NODE_HIT_TOL: f64 = 1e-14;

/// Closed interval `[lo, hi]` with `lo < hi`, both finite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("interval [{lo}, {hi}] is not finite")));
        }
        if lo >= hi {
            return Err(Error::invalid(format!("degenerate interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Map `x` in the interval to `[-1, 1]`.
    pub fn to_unit(&self, x: f64) -> f64 {
        ((x - self.mid()) / self.half_width()).clamp(-1.0, 1.0)
    }
}

impl TryFrom<(f64, f64)> for Interval {
    type Error = Error;

    fn try_from((lo, hi): (f64, f64)) -> Result<Self> {
        Interval::new(lo, hi)
    }
}

impl From<Interval> for (f64, f64) {
    fn from(iv: Interval) -> Self {
        (iv.lo, iv.hi)
    }
}

/// The `count` Chebyshev points (second kind) of `iv`, ascending.
///
/// Endpoints are exactly `iv.lo()` and `iv.hi()` and the set is symmetric
/// about the midpoint.
pub fn chebyshev_points(count: usize, iv: Interval) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::invalid(format!(
            "at least 2 Chebyshev points are required, got {count}"
        )));
    }
    let n = (count - 1) as f64;
    let mid = iv.mid();
    let half = iv.half_width();
    // sin((2k - n) pi / 2n) == -cos(k pi / n), and sin is odd in floating
    // point, so the unit nodes come out exactly antisymmetric.
    let mut nodes: Vec<f64> = (0..count)
        .map(|k| {
            let unit = (std::f64::consts::PI * (2.0 * k as f64 - n) / (2.0 * n)).sin();
            mid + half * unit
        })
        .collect();
    nodes[0] = iv.lo;
    nodes[count - 1] = iv.hi;
    if count % 2 == 1 {
        nodes[count / 2] = mid;
    }
    Ok(nodes)
}

/// Per-dimension interpolation factor at a coordinate.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Basis {
    /// The coordinate hits node `k`; the interpolant reduces to that slice.
    Node(usize),
    /// Values of the Lagrange basis polynomials at the coordinate.
    Weights(Vec<f64>),
}

impl Basis {
    pub(crate) fn dense(&self, n: usize) -> Cow<'_, [f64]> {
        match self {
            Basis::Weights(w) => Cow::Borrowed(w),
            Basis::Node(k) => {
                let mut w = vec![0.0; n];
                w[*k] = 1.0;
                Cow::Owned(w)
            }
        }
    }
}

/// One dimension of a [`ChebyshevGrid`].
#[derive(Clone, Debug)]
pub struct GridDim {
    interval: Interval,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GridDim {
    pub fn new(interval: Interval, count: usize) -> Result<Self> {
        let nodes = chebyshev_points(count, interval)?;
        let weights = (0..count)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                if k == 0 || k == count - 1 {
                    0.5 * sign
                } else {
                    sign
                }
            })
            .collect();
        Ok(Self { interval, nodes, weights })
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    fn node_hit(&self, x: f64) -> Option<usize> {
        let tol = NODE_HIT_TOL * self.interval.width();
        self.nodes.iter().position(|&node| (x - node).abs() <= tol)
    }

    /// Lagrange basis values at `x` via the second barycentric formula.
    pub(crate) fn basis(&self, x: f64) -> Basis {
        if let Some(k) = self.node_hit(x) {
            return Basis::Node(k);
        }
        let mut q: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&node, &w)| w / (x - node))
            .collect();
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= total);
        Basis::Weights(q)
    }

    /// Derivatives of the Lagrange basis polynomials at `x`.
    pub(crate) fn basis_derivative(&self, x: f64) -> Vec<f64> {
        let n = self.count();
        if let Some(m) = self.node_hit(x) {
            // Row m of the barycentric differentiation matrix.
            let xm = self.nodes[m];
            let mut row = vec![0.0; n];
            let mut diag = 0.0;
            for j in (0..n).filter(|&j| j != m) {
                let d = (self.weights[j] / self.weights[m]) / (xm - self.nodes[j]);
                row[j] = d;
                diag -= d;
            }
            row[m] = diag;
            return row;
        }
        // The nearest node's derivative is recovered from sum(l_j') = 0,
        // which sidesteps cancellation close to that node.
        let nearest = (0..n)
            .min_by(|&a, &b| {
                (x - self.nodes[a])
                    .abs()
                    .total_cmp(&(x - self.nodes[b]).abs())
            })
            .unwrap_or(0);
        let q: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&node, &w)| w / (x - node))
            .collect();
        let s: f64 = q.iter().sum();
        let ds: f64 = -q
            .iter()
            .zip(&self.nodes)
            .map(|(&qj, &node)| qj / (x - node))
            .sum::<f64>();
        let ratio = ds / s;
        let mut out = vec![0.0; n];
        let mut acc = 0.0;
        for j in (0..n).filter(|&j| j != nearest) {
            let lj = q[j] / s;
            let d = lj * (-1.0 / (x - self.nodes[j]) - ratio);
            out[j] = d;
            acc += d;
        }
        out[nearest] = -acc;
        out
    }
}

#[derive(Serialize, Deserialize)]
struct GridAxis {
    lo: f64,
    hi: f64,
    count: usize,
}

/// Cartesian product of per-dimension Chebyshev grids.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "Vec<GridAxis>", into = "Vec<GridAxis>")]
pub struct ChebyshevGrid {
    dims: Vec<GridDim>,
}

impl TryFrom<Vec<GridAxis>> for ChebyshevGrid {
    type Error = Error;

    fn try_from(axes: Vec<GridAxis>) -> Result<Self> {
        let dims = axes
            .into_iter()
            .map(|s| Ok((Interval::new(s.lo, s.hi)?, s.count)))
            .collect::<Result<Vec<_>>>()?;
        ChebyshevGrid::new(dims)
    }
}

impl From<ChebyshevGrid> for Vec<GridAxis> {
    fn from(grid: ChebyshevGrid) -> Self {
        grid.dims
            .iter()
            .map(|d| GridAxis {
                lo: d.interval.lo,
                hi: d.interval.hi,
                count: d.count(),
            })
            .collect()
    }
}

impl PartialEq for ChebyshevGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dims.len() == other.dims.len()
            && self
                .dims
                .iter()
                .zip(&other.dims)
                .all(|(a, b)| a.interval == b.interval && a.count() == b.count())
    }
}

impl ChebyshevGrid {
    pub fn new(dims: Vec<(Interval, usize)>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::invalid("a grid needs at least one dimension"));
        }
        let dims = dims
            .into_iter()
            .map(|(iv, count)| GridDim::new(iv, count))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dims })
    }

    /// Grid with the same point count in every dimension.
    pub fn uniform(intervals: &[Interval], count: usize) -> Result<Self> {
        Self::new(intervals.iter().map(|&iv| (iv, count)).collect())
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[GridDim] {
        &self.dims
    }

    pub fn counts(&self) -> Vec<usize> {
        self.dims.iter().map(GridDim::count).collect()
    }

    pub fn intervals(&self) -> Vec<Interval> {
        self.dims.iter().map(GridDim::interval).collect()
    }

    /// Number of grid points; exact even when the grid cannot be materialized.
    pub fn total_points(&self) -> u128 {
        self.dims.iter().map(|d| d.count() as u128).product()
    }

    /// Number of points as `usize`, failing if the grid is too large to store densely.
    pub fn dense_len(&self) -> Result<usize> {
        let total = self.total_points();
        usize::try_from(total)
            .ok()
            .filter(|&n| n <= (1usize << 34))
            .ok_or_else(|| Error::invalid(format!("grid of {total} points is too large to store densely")))
    }

    /// Sub-grid made of the dimensions in `range`.
    pub fn slice_dims(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.dim() {
            return Err(Error::invalid(format!(
                "dimension range {range:?} invalid for a {}-d grid",
                self.dim()
            )));
        }
        Ok(Self {
            dims: self.dims[range].to_vec(),
        })
    }

    pub fn node_coordinates(&self, index: &[usize]) -> Vec<f64> {
        index
            .iter()
            .zip(&self.dims)
            .map(|(&k, d)| d.nodes[k])
            .collect()
    }

    /// Row-major multi-index of a flat position.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut index = vec![0; self.dim()];
        for (slot, d) in index.iter_mut().zip(&self.dims).rev() {
            *slot = flat % d.count();
            flat /= d.count();
        }
        index
    }

    /// Row-major flat position of a multi-index.
    pub fn ravel(&self, index: &[usize]) -> Result<usize> {
        self.check_index(index)?;
        Ok(index
            .iter()
            .zip(&self.dims)
            .fold(0usize, |acc, (&k, d)| acc * d.count() + k))
    }

    pub fn check_index(&self, index: &[usize]) -> Result<()> {
        if index.len() != self.dim() {
            return Err(Error::invalid(format!(
                "multi-index of length {} for a {}-d grid",
                index.len(),
                self.dim()
            )));
        }
        for (i, (&k, d)) in index.iter().zip(&self.dims).enumerate() {
            if k >= d.count() {
                return Err(Error::invalid(format!(
                    "index {k} out of bounds in dimension {i} (size {})",
                    d.count()
                )));
            }
        }
        Ok(())
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point of length {} for a {}-d grid",
                x.len(),
                self.dim()
            )));
        }
        for (dim, (&v, d)) in x.iter().zip(&self.dims).enumerate() {
            if !d.interval.contains(v) {
                return Err(Error::OutOfDomain {
                    dim,
                    value: v,
                    lo: d.interval.lo,
                    hi: d.interval.hi,
                });
            }
        }
        Ok(())
    }

    pub(crate) fn bases(&self, x: &[f64]) -> Result<Vec<Basis>> {
        self.check_point(x)?;
        Ok(x.iter().zip(&self.dims).map(|(&v, d)| d.basis(v)).collect())
    }
}

/// Contract the leading `factors.len()` dimensions of a row-major tensor.
pub(crate) fn contract_leading(values: &[f64], counts: &[usize], factors: &[Basis]) -> Vec<f64> {
    let mut current: Cow<'_, [f64]> = Cow::Borrowed(values);
    for (factor, &n) in factors.iter().zip(counts) {
        let rest = current.len() / n;
        let next = match factor {
            Basis::Node(k) => current[k * rest..(k + 1) * rest].to_vec(),
            Basis::Weights(w) => {
                let mut out = vec![0.0; rest];
                for (j, &wj) in w.iter().enumerate() {
                    let slice = &current[j * rest..(j + 1) * rest];
                    out.iter_mut().zip(slice).for_each(|(o, &v)| *o += wj * v);
                }
                out
            }
        };
        current = Cow::Owned(next);
    }
    current.into_owned()
}

/// Values of a function on every point of a Chebyshev grid.
#[derive(Debug)]
pub struct FullChebyshevTensor {
    grid: ChebyshevGrid,
    values: Vec<f64>,
    coefficients: OnceLock<Vec<f64>>,
}

impl Clone for FullChebyshevTensor {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.clone(),
            coefficients: OnceLock::new(),
        }
    }
}

impl PartialEq for FullChebyshevTensor {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

impl FullChebyshevTensor {
    pub fn from_values(grid: ChebyshevGrid, values: Vec<f64>) -> Result<Self> {
        let expected = grid.dense_len()?;
        if values.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::BuildFailure {
                index: grid.unravel(pos),
                value: values[pos],
            });
        }
        Ok(Self {
            grid,
            values,
            coefficients: OnceLock::new(),
        })
    }

    pub fn grid(&self) -> &ChebyshevGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn value_at(&self, index: &[usize]) -> Result<f64> {
        Ok(self.values[self.grid.ravel(index)?])
    }

    /// New tensor on the same grid with `f` applied to every stored value.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_values(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// Interpolant value at `x` by the barycentric formula, one dimension at a time.
    pub fn eval_barycentric(&self, x: &[f64]) -> Result<f64> {
        let bases = self.grid.bases(x)?;
        Ok(contract_leading(&self.values, &self.grid.counts(), &bases)[0])
    }

    /// Interpolant value at `x` by Clenshaw's recurrence on the Chebyshev coefficients.
    pub fn eval_clenshaw(&self, x: &[f64]) -> Result<f64> {
        self.grid.check_point(x)?;
        let mut current: Cow<'_, [f64]> = Cow::Borrowed(self.coefficients());
        for (d, &v) in self.grid.dims.iter().zip(x) {
            let n = d.count();
            let rest = current.len() / n;
            let t = d.interval.to_unit(v);
            let mut b1 = vec![0.0; rest];
            let mut b2 = vec![0.0; rest];
            for m in (1..n).rev() {
                let c = &current[m * rest..(m + 1) * rest];
                for i in 0..rest {
                    let b0 = c[i] + 2.0 * t * b1[i] - b2[i];
                    b2[i] = b1[i];
                    b1[i] = b0;
                }
            }
            let c0 = &current[..rest];
            let out: Vec<f64> = (0..rest).map(|i| c0[i] + t * b1[i] - b2[i]).collect();
            current = Cow::Owned(out);
        }
        Ok(current[0])
    }

    /// Partial derivatives of the interpolant at `x`.
    pub fn eval_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let bases = self.grid.bases(x)?;
        let counts = self.grid.counts();
        Ok((0..self.dim())
            .map(|k| {
                let mut factors = bases.clone();
                factors[k] = Basis::Weights(self.grid.dims[k].basis_derivative(x[k]));
                contract_leading(&self.values, &counts, &factors)[0]
            })
            .collect())
    }

    /// Chebyshev coefficients in row-major order, with `T_m` of dimension `i`
    /// along axis `i`. Computed once and cached.
    pub fn coefficients(&self) -> &[f64] {
        self.coefficients.get_or_init(|| {
            let counts = self.grid.counts();
            let mut data = self.values.clone();
            for (axis, &n) in counts.iter().enumerate() {
                let transform = values_to_coefficients_matrix(n);
                apply_along_axis(&mut data, &counts, axis, &transform);
            }
            data
        })
    }
}

/// Matrix taking values at ascending Chebyshev nodes to Chebyshev coefficients.
fn values_to_coefficients_matrix(n: usize) -> Vec<f64> {
    let big_n = n - 1;
    let two_n = 2 * big_n;
    let mut mat = vec![0.0; n * n];
    for m in 0..n {
        for k in 0..n {
            // Ascending node k is cos(j pi / N) with j = N - k.
            let j = big_n - k;
            let arg = (m * j) % two_n;
            let mut c = (std::f64::consts::PI * arg as f64 / big_n as f64).cos();
            if j == 0 || j == big_n {
                c *= 0.5;
            }
            let mut scale = 2.0 / big_n as f64;
            if m == 0 || m == big_n {
                scale *= 0.5;
            }
            mat[m * n + k] = scale * c;
        }
    }
    mat
}

fn apply_along_axis(data: &mut [f64], counts: &[usize], axis: usize, mat: &[f64]) {
    let n = counts[axis];
    let outer: usize = counts[..axis].iter().product();
    let inner: usize = counts[axis + 1..].iter().product();
    let mut fiber = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            for (j, slot) in fiber.iter_mut().enumerate() {
                *slot = data[base + j * inner];
            }
            for m in 0..n {
                let row = &mat[m * n..(m + 1) * n];
                data[base + m * inner] = row.iter().zip(&fiber).map(|(a, b)| a * b).sum();
            }
        }
    }
}

/// Evaluate `f` on every grid node, in parallel.
pub fn build_full_tensor<F>(grid: &ChebyshevGrid, f: F) -> Result<FullChebyshevTensor>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let len = grid.dense_len()?;
    let values: Vec<f64> = (0..len)
        .into_par_iter()
        .map(|flat| f(&grid.node_coordinates(&grid.unravel(flat))))
        .collect();
    FullChebyshevTensor::from_values(grid.clone(), values)
}

/// Sequential variant of [`build_full_tensor`] for evaluators that are not `Sync`.
pub fn build_full_tensor_sequential<F>(grid: &ChebyshevGrid, mut f: F) -> Result<FullChebyshevTensor>
where
    F: FnMut(&[f64]) -> f64,
{
    let len = grid.dense_len()?;
    let values: Vec<f64> = (0..len)
        .map(|flat| f(&grid.node_coordinates(&grid.unravel(flat))))
        .collect();
    FullChebyshevTensor::from_values(grid.clone(), values)
}

/// Build a tensor whose trailing dimensions are produced in one batch.
///
/// `f` is called once per point of the leading `leading` dimensions and must
/// return the row-major block of values over the trailing dimensions. Returns
/// the tensor and the number of calls made to `f`.
pub fn build_full_tensor_blocked<F>(
    grid: &ChebyshevGrid,
    leading: usize,
    f: F,
) -> Result<(FullChebyshevTensor, usize)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if leading == 0 || leading >= grid.dim() {
        return Err(Error::invalid(format!(
            "leading dimension count {leading} must be in 1..{}",
            grid.dim()
        )));
    }
    let head = grid.slice_dims(0..leading)?;
    let tail_len = grid.slice_dims(leading..grid.dim())?.dense_len()?;
    let calls = head.dense_len()?;
    let blocks: Vec<Vec<f64>> = (0..calls)
        .into_par_iter()
        .map(|flat| {
            let block = f(&head.node_coordinates(&head.unravel(flat)))?;
            if block.len() != tail_len {
                return Err(Error::invalid(format!(
                    "block evaluator returned {} values, expected {tail_len}",
                    block.len()
                )));
            }
            Ok(block)
        })
        .collect::<Result<_>>()?;
    let values = blocks.concat();
    Ok((FullChebyshevTensor::from_values(grid.clone(), values)?, calls))
}
