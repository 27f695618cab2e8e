//! Tensors in tensor-train (TT) format.
//!
//! A `d`-dimensional tensor is stored as cores `C_1, ..., C_d`, where
//! `C_i(j)` is an `r_{i-1} x r_i` matrix and `r_0 = r_d = 1`:
//!
//! ```text
//! X(j_1, ..., j_d) = C_1(j_1) C_2(j_2) ... C_d(j_d)
//! ```
//!
//! Each core is one contiguous buffer laid out as `(j, a, b)` with `b`
//! fastest, i.e. the slices `C_i(j)` are row-major matrices stored back to
//! back. Storage is `sum_i n_i r_{i-1} r_i` numbers instead of `prod_i n_i`.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chebyshev::{Basis, ChebyshevGrid, FullChebyshevTensor};
use crate::error::{Error, Result};

/// One TT core: `mode` matrices of shape `left x right`.
#[derive(Clone, Debug, PartialEq)]
pub struct TtCore {
    mode: usize,
    left: usize,
    right: usize,
    data: Vec<f64>,
}

impl TtCore {
    pub fn new(mode: usize, left: usize, right: usize, data: Vec<f64>) -> Result<Self> {
        if mode == 0 || left == 0 || right == 0 {
            return Err(Error::invalid(format!(
                "core shape ({mode}, {left}, {right}) has a zero extent"
            )));
        }
        if data.len() != mode * left * right {
            return Err(Error::invalid(format!(
                "core of shape ({mode}, {left}, {right}) needs {} entries, got {}",
                mode * left * right,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("core entries must be finite"));
        }
        Ok(Self { mode, left, right, data })
    }

    pub fn zeros(mode: usize, left: usize, right: usize) -> Self {
        Self {
            mode,
            left,
            right,
            data: vec![0.0; mode * left * right],
        }
    }

    /// Build a core from its list-of-matrices view: `matrices[j][a][b]`.
    pub fn from_matrices(matrices: &[Vec<Vec<f64>>]) -> Result<Self> {
        let mode = matrices.len();
        let left = matrices.first().map_or(0, Vec::len);
        let right = matrices.first().and_then(|m| m.first()).map_or(0, Vec::len);
        let mut data = Vec::with_capacity(mode * left * right);
        for m in matrices {
            if m.len() != left || m.iter().any(|row| row.len() != right) {
                return Err(Error::invalid("all matrices of a core must share one shape"));
            }
            m.iter().for_each(|row| data.extend_from_slice(row));
        }
        Self::new(mode, left, right, data)
    }

    /// Core of a rank-one chain: `values[j]` as `1 x 1` matrices.
    pub fn from_vector(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, 1, values.to_vec())
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn left(&self) -> usize {
        self.left
    }

    pub fn right(&self) -> usize {
        self.right
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `C(j)` as a row-major `left x right` slice.
    pub fn slice(&self, j: usize) -> &[f64] {
        let size = self.left * self.right;
        &self.data[j * size..(j + 1) * size]
    }

    /// `C(j)` as a matrix.
    pub fn matrix(&self, j: usize) -> Vec<Vec<f64>> {
        self.slice(j).chunks(self.right).map(<[f64]>::to_vec).collect()
    }

    /// `sum_j w_j C(j)` as a row-major `left x right` buffer.
    pub(crate) fn weighted(&self, basis: &Basis) -> Vec<f64> {
        match basis {
            Basis::Node(j) => self.slice(*j).to_vec(),
            Basis::Weights(w) => self.combine(w),
        }
    }

    pub(crate) fn combine(&self, w: &[f64]) -> Vec<f64> {
        let size = self.left * self.right;
        let mut out = vec![0.0; size];
        for (j, &wj) in w.iter().enumerate() {
            out.iter_mut()
                .zip(self.slice(j))
                .for_each(|(o, &c)| *o += wj * c);
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Row vector times a row-major `rows x cols` matrix.
pub(crate) fn vec_mat(v: &[f64], m: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (a, &va) in v.iter().enumerate() {
        if va == 0.0 {
            continue;
        }
        out.iter_mut()
            .zip(&m[a * cols..(a + 1) * cols])
            .for_each(|(o, &x)| *o += va * x);
    }
    out
}

/// Row-major `rows x cols` matrix times a column vector.
pub(crate) fn mat_vec(m: &[f64], cols: usize, v: &[f64]) -> Vec<f64> {
    m.chunks(cols)
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Tensor in TT format, optionally attached to a Chebyshev grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TtTensor {
    cores: Vec<TtCore>,
    grid: Option<ChebyshevGrid>,
}

impl TtTensor {
    pub fn new(cores: Vec<TtCore>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::invalid("a TT tensor needs at least one core"));
        }
        if cores[0].left != 1 || cores[cores.len() - 1].right != 1 {
            return Err(Error::invalid("boundary TT ranks must be one"));
        }
        for (i, pair) in cores.windows(2).enumerate() {
            if pair[0].right != pair[1].left {
                return Err(Error::invalid(format!(
                    "core {i} has right rank {} but core {} has left rank {}",
                    pair[0].right,
                    i + 1,
                    pair[1].left
                )));
            }
        }
        Ok(Self { cores, grid: None })
    }

    /// Attach the Chebyshev grid whose node values this tensor stores.
    pub fn with_grid(mut self, grid: ChebyshevGrid) -> Result<Self> {
        if grid.counts() != self.mode_sizes() {
            return Err(Error::invalid(format!(
                "grid counts {:?} do not match mode sizes {:?}",
                grid.counts(),
                self.mode_sizes()
            )));
        }
        self.grid = Some(grid);
        Ok(self)
    }

    pub fn grid(&self) -> Option<&ChebyshevGrid> {
        self.grid.as_ref()
    }

    pub fn cores(&self) -> &[TtCore] {
        &self.cores
    }

    pub fn dim(&self) -> usize {
        self.cores.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(TtCore::mode).collect()
    }

    /// `(r_0, ..., r_d)`.
    pub fn ranks(&self) -> Vec<usize> {
        std::iter::once(1)
            .chain(self.cores.iter().map(TtCore::right))
            .collect()
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    /// Number of stored reals.
    pub fn storage_len(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    pub fn check_index(&self, index: &[usize]) -> Result<()> {
        if index.len() != self.dim() {
            return Err(Error::invalid(format!(
                "multi-index of length {} for a {}-d tensor",
                index.len(),
                self.dim()
            )));
        }
        for (i, (&j, core)) in index.iter().zip(&self.cores).enumerate() {
            if j >= core.mode {
                return Err(Error::invalid(format!(
                    "index {j} out of bounds in dimension {i} (size {})",
                    core.mode
                )));
            }
        }
        Ok(())
    }

    /// Entry at a zero-based multi-index.
    pub fn entry(&self, index: &[usize]) -> Result<f64> {
        self.check_index(index)?;
        Ok(self.entry_unchecked(index))
    }

    pub(crate) fn entry_unchecked(&self, index: &[usize]) -> f64 {
        let mut row = self.cores[0].slice(index[0]).to_vec();
        for (core, &j) in self.cores.iter().zip(index).skip(1) {
            row = vec_mat(&row, core.slice(j), core.right);
        }
        row[0]
    }

    /// Dense row-major reconstruction.
    pub fn to_dense(&self) -> Result<Vec<f64>> {
        let total = self
            .mode_sizes()
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .filter(|&n| n <= (1usize << 30))
            .ok_or_else(|| Error::invalid("tensor too large to reconstruct densely"))?;
        // Sweep left to right: rows are multi-indices over the processed modes.
        let mut acc = self.cores[0].data.clone();
        let mut rows = self.cores[0].mode;
        for core in &self.cores[1..] {
            let mut next = Vec::with_capacity(rows * core.mode * core.right);
            for row in acc.chunks(core.left) {
                for j in 0..core.mode {
                    next.extend(vec_mat(row, core.slice(j), core.right));
                }
            }
            acc = next;
            rows *= core.mode;
        }
        debug_assert_eq!(acc.len(), total);
        Ok(acc)
    }

    /// Sum over all indices of `self(i) * other(i)`, by core-wise contraction.
    pub fn inner_product(&self, other: &TtTensor) -> Result<f64> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::invalid(format!(
                "mode sizes {:?} and {:?} differ",
                self.mode_sizes(),
                other.mode_sizes()
            )));
        }
        // m is r_a x r_b, row-major.
        let mut m = vec![1.0];
        for (a, b) in self.cores.iter().zip(&other.cores) {
            let mut next = vec![0.0; a.right * b.right];
            for j in 0..a.mode {
                let (aj, bj) = (a.slice(j), b.slice(j));
                // tmp = m * B(j), shape a.left x b.right
                let mut tmp = vec![0.0; a.left * b.right];
                for p in 0..a.left {
                    let mrow = &m[p * b.left..(p + 1) * b.left];
                    let trow = &mut tmp[p * b.right..(p + 1) * b.right];
                    for (q, &mv) in mrow.iter().enumerate() {
                        trow.iter_mut()
                            .zip(&bj[q * b.right..(q + 1) * b.right])
                            .for_each(|(t, &x)| *t += mv * x);
                    }
                }
                // next += A(j)^T * tmp
                for p in 0..a.left {
                    let trow = &tmp[p * b.right..(p + 1) * b.right];
                    for s in 0..a.right {
                        let av = aj[p * a.right + s];
                        next[s * b.right..(s + 1) * b.right]
                            .iter_mut()
                            .zip(trow)
                            .for_each(|(n, &t)| *n += av * t);
                    }
                }
            }
            m = next;
        }
        Ok(m[0])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner_product(self).map(|v| v.max(0.0).sqrt()).unwrap_or(0.0)
    }

    fn require_grid(&self) -> Result<&ChebyshevGrid> {
        self.grid
            .as_ref()
            .ok_or_else(|| Error::InvalidState("TT tensor has no Chebyshev grid attached".into()))
    }

    /// Value of the Chebyshev interpolant of the gridded tensor at `x`.
    pub fn cheb_eval(&self, x: &[f64]) -> Result<f64> {
        let grid = self.require_grid()?;
        let bases = grid.bases(x)?;
        Ok(self.contract_row(&bases)[0])
    }

    /// Partial derivatives of the Chebyshev interpolant at `x`.
    pub fn cheb_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let grid = self.require_grid()?;
        let bases = grid.bases(x)?;
        let mats: Vec<Vec<f64>> = self
            .cores
            .iter()
            .zip(&bases)
            .map(|(c, b)| c.weighted(b))
            .collect();
        let d = self.dim();
        // prefix[k] = M_1 ... M_k (row vector), suffix[k] = M_{k+1} ... M_d (column).
        let mut prefix = vec![vec![1.0]];
        for (core, m) in self.cores.iter().zip(&mats) {
            let last = prefix.last().expect("non-empty");
            prefix.push(vec_mat(last, m, core.right));
        }
        let mut suffix = vec![vec![1.0]; d + 1];
        for k in (0..d).rev() {
            suffix[k] = mat_vec(&mats[k], self.cores[k].right, &suffix[k + 1]);
        }
        Ok((0..d)
            .map(|k| {
                let core = &self.cores[k];
                let dm = core.combine(&grid.dims()[k].basis_derivative(x[k]));
                let row = vec_mat(&prefix[k], &dm, core.right);
                row.iter().zip(&suffix[k + 1]).map(|(a, b)| a * b).sum()
            })
            .collect())
    }

    /// Contract every core with its basis vector; returns the `1 x r_k` row
    /// after the last supplied basis.
    pub(crate) fn contract_row(&self, bases: &[Basis]) -> Vec<f64> {
        let mut row = vec![1.0];
        for (core, b) in self.cores.iter().zip(bases) {
            row = vec_mat(&row, &core.weighted(b), core.right);
        }
        row
    }
}

/// Entry of `t` at a zero-based multi-index.
pub fn tt_entry(t: &TtTensor, index: &[usize]) -> Result<f64> {
    t.entry(index)
}

/// Inner product of two TT tensors with identical mode sizes.
pub fn tt_inner_product(a: &TtTensor, b: &TtTensor) -> Result<f64> {
    a.inner_product(b)
}

/// Chebyshev interpolant of a gridded TT tensor at `x`.
pub fn tt_cheb_eval(t: &TtTensor, x: &[f64]) -> Result<f64> {
    t.cheb_eval(x)
}

/// TT-SVD of a full Chebyshev tensor; the result carries the tensor's grid.
///
/// `tol` bounds the Frobenius norm of the reconstruction error. Each of the
/// `d - 1` unfoldings is truncated with budget `tol / sqrt(d - 1)`.
pub fn tt_from_full(t: &FullChebyshevTensor, tol: f64) -> Result<TtTensor> {
    tt_svd(t.values(), &t.grid().counts(), tol)?.with_grid(t.grid().clone())
}

/// TT-SVD of a dense row-major tensor.
pub fn tt_svd(values: &[f64], modes: &[usize], tol: f64) -> Result<TtTensor> {
    if !(tol >= 0.0) {
        return Err(Error::invalid(format!("tolerance must be non-negative, got {tol}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("tensor values must be finite"));
    }
    let total: usize = modes.iter().product();
    if modes.is_empty() || total != values.len() {
        return Err(Error::invalid(format!(
            "{} values do not fill modes {modes:?}",
            values.len()
        )));
    }
    let d = modes.len();
    let budget = if d > 1 { tol / ((d - 1) as f64).sqrt() } else { 0.0 };
    let mut cores = Vec::with_capacity(d);
    let mut rest = values.to_vec();
    let mut r_prev = 1;
    for &n in &modes[..d - 1] {
        let rows = r_prev * n;
        let cols = rest.len() / rows;
        let (u, sigma, vt) = thin_svd(DMatrix::from_row_slice(rows, cols, &rest));
        let rank = truncation_rank(&sigma, budget);
        let mut data = vec![0.0; n * r_prev * rank];
        for a in 0..r_prev {
            for j in 0..n {
                for b in 0..rank {
                    data[(j * r_prev + a) * rank + b] = u[(a * n + j, b)];
                }
            }
        }
        cores.push(TtCore::new(n, r_prev, rank, data)?);
        let mut next = vec![0.0; rank * cols];
        for b in 0..rank {
            for c in 0..cols {
                next[b * cols + c] = sigma[b] * vt[(b, c)];
            }
        }
        rest = next;
        r_prev = rank;
    }
    let n = modes[d - 1];
    let mut data = vec![0.0; n * r_prev];
    for a in 0..r_prev {
        for j in 0..n {
            data[j * r_prev + a] = rest[a * n + j];
        }
    }
    cores.push(TtCore::new(n, r_prev, 1, data)?);
    TtTensor::new(cores)
}

/// Thin SVD `m = u diag(sigma) vt` with `sigma` sorted descending.
///
/// Wide matrices are factored through their transpose; the bidiagonal
/// solver loses accuracy when fed a matrix with more columns than rows.
pub(crate) fn thin_svd(m: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let wide = m.nrows() < m.ncols();
    let svd = if wide { m.transpose() } else { m }.svd(true, true);
    let (u, vt) = (svd.u.expect("requested U"), svd.v_t.expect("requested V^T"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = u.select_columns(&order);
    let vt = vt.select_rows(&order);
    if wide {
        (vt.transpose(), sigma, u.transpose())
    } else {
        (u, sigma, vt)
    }
}

/// Smallest rank whose discarded tail has squared norm within `budget^2`.
fn truncation_rank(sigma: &[f64], budget: f64) -> usize {
    let limit = budget * budget;
    let mut tail = 0.0;
    let mut rank = sigma.len();
    while rank > 1 {
        let s = sigma[rank - 1];
        if tail + s * s > limit {
            break;
        }
        tail += s * s;
        rank -= 1;
    }
    rank.max(1)
}

/// One observed entry of a gridded tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub index: Vec<usize>,
    pub value: f64,
}

/// Observed entries with a disjoint train/test partition.
#[derive(Clone, Debug)]
pub struct SampleSet {
    modes: Vec<usize>,
    samples: Vec<Sample>,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl SampleSet {
    /// Validate `samples` and split them at random, holding out
    /// `round(len * test_fraction)` entries for testing.
    pub fn new(modes: Vec<usize>, samples: Vec<Sample>, test_fraction: f64, seed: u64) -> Result<Self> {
        let mut set = Self {
            modes,
            samples: Vec::new(),
            train: Vec::new(),
            test: Vec::new(),
        };
        set.extend(samples, test_fraction, seed)?;
        Ok(set)
    }

    /// Use an explicit partition given as positions into `samples`.
    pub fn with_split(modes: Vec<usize>, samples: Vec<Sample>, train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        validate_samples(&modes, &samples, &mut HashSet::new())?;
        let mut seen = vec![false; samples.len()];
        for &p in train.iter().chain(&test) {
            if p >= samples.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("train/test partition must be disjoint and in range"));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("train/test partition must cover every sample"));
        }
        Ok(Self { modes, samples, train, test })
    }

    /// Add new samples, splitting them with the same held-out fraction.
    pub fn extend(&mut self, new: Vec<Sample>, test_fraction: f64, seed: u64) -> Result<()> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::invalid(format!("test fraction {test_fraction} not in [0, 1)")));
        }
        let mut seen: HashSet<Vec<usize>> = self.samples.iter().map(|s| s.index.clone()).collect();
        validate_samples(&self.modes, &new, &mut seen)?;
        let start = self.samples.len();
        let mut positions: Vec<usize> = (start..start + new.len()).collect();
        positions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (new.len() as f64 * test_fraction).round() as usize;
        self.test.extend_from_slice(&positions[..n_test]);
        self.train.extend_from_slice(&positions[n_test..]);
        self.samples.extend(new);
        Ok(())
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn train(&self) -> impl Iterator<Item = &Sample> + '_ {
        self.train.iter().map(|&p| &self.samples[p])
    }

    pub fn test(&self) -> impl Iterator<Item = &Sample> + '_ {
        self.test.iter().map(|&p| &self.samples[p])
    }

    /// Positions into [`samples`](Self::samples) of the training entries.
    pub fn train_positions(&self) -> &[usize] {
        &self.train
    }

    pub fn test_positions(&self) -> &[usize] {
        &self.test
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn test_len(&self) -> usize {
        self.test.len()
    }

    pub fn contains(&self, index: &[usize]) -> bool {
        self.samples.iter().any(|s| s.index == index)
    }
}

fn validate_samples(modes: &[usize], samples: &[Sample], seen: &mut HashSet<Vec<usize>>) -> Result<()> {
    for s in samples {
        if s.index.len() != modes.len() || s.index.iter().zip(modes).any(|(&i, &n)| i >= n) {
            return Err(Error::invalid(format!(
                "sample index {:?} outside modes {modes:?}",
                s.index
            )));
        }
        if !s.value.is_finite() {
            return Err(Error::invalid(format!("sample at {:?} is not finite", s.index)));
        }
        if !seen.insert(s.index.clone()) {
            return Err(Error::invalid(format!("duplicate sample index {:?}", s.index)));
        }
    }
    Ok(())
}
