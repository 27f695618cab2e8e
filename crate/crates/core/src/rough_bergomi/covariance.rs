//! Joint covariance of the Volterra process and its driving Brownian motion.
//!
//! With `Y_t = sqrt(2H) int_0^t (t - u)^(H - 1/2) dZ_u`, `g = H - 1/2` and
//! `a = H + 1/2`:
//!
//! ```text
//! Var(Y_t)      = t^(2H)
//! Cov(Y_s, Y_t) = 2H int_0^s v^g (v + t - s)^g dv          (s <= t)
//! Cov(Y_t, Z_s) = sqrt(2H) / a * (t^a - (t - min(s, t))^a)
//! Cov(Z_s, Z_t) = min(s, t)
//! ```
//!
//! The integral is split at `min(s, t - s)`: Gauss-Jacobi with weight `v^g`
//! below, Gauss-Legendre on dyadic pieces `[D 2^k, D 2^(k+1)]` above.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const JITTER: f64 = 1e-12;

/// Nodes and weights of the `n`-point Gauss-Jacobi rule for
/// `int_{-1}^{1} (1 - x)^alpha (1 + x)^beta f(x) dx` (Golub-Welsch).
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1 && alpha > -1.0 && beta > -1.0);
    let ab = alpha + beta;
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    diag[0] = (beta - alpha) / (ab + 2.0);
    for (k, slot) in diag.iter_mut().enumerate().skip(1) {
        let kf = k as f64;
        *slot = (beta * beta - alpha * alpha) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0));
    }
    for (k, slot) in off.iter_mut().enumerate() {
        let kf = (k + 1) as f64;
        let s = 2.0 * kf + ab;
        let b2 = if k == 0 {
            4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab).powi(2) * (3.0 + ab))
        } else {
            4.0 * kf * (kf + alpha) * (kf + beta) * (kf + ab) / (s * s * (s + 1.0) * (s - 1.0))
        };
        *slot = b2.sqrt();
    }
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            diag[i]
        } else if i + 1 == j {
            off[i]
        } else if j + 1 == i {
            off[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mu0 = 2f64.powf(ab + 1.0) * libm::tgamma(alpha + 1.0) * libm::tgamma(beta + 1.0) / libm::tgamma(ab + 2.0);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Quadrature for `int_0^s v^g (v + delta)^g dv` at fixed `g`.
pub struct KernelIntegrator {
    g: f64,
    jacobi: (Vec<f64>, Vec<f64>),
    legendre: (Vec<f64>, Vec<f64>),
}

impl KernelIntegrator {
    pub fn new(hurst: f64) -> Self {
        let g = hurst - 0.5;
        Self {
            g,
            jacobi: gauss_jacobi(24, 0.0, g),
            legendre: gauss_jacobi(16, 0.0, 0.0),
        }
    }

    pub fn integrate(&self, s: f64, delta: f64) -> f64 {
        let g = self.g;
        if s <= 0.0 {
            return 0.0;
        }
        if delta <= 0.0 {
            return s.powf(2.0 * g + 1.0) / (2.0 * g + 1.0);
        }
        if g == 0.0 {
            return s;
        }
        let c = s.min(delta);
        let half = 0.5 * c;
        let (xs, ws) = &self.jacobi;
        let near: f64 = xs
            .iter()
            .zip(ws)
            .map(|(&x, &w)| w * (half * (1.0 + x) + delta).powf(g))
            .sum::<f64>()
            * half.powf(1.0 + g);
        let mut far = 0.0;
        let mut lo = c;
        while lo < s {
            let hi = (2.0 * lo).min(s);
            let (mid, rad) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            let (xs, ws) = &self.legendre;
            far += rad
                * xs.iter()
                    .zip(ws)
                    .map(|(&x, &w)| {
                        let v = mid + rad * x;
                        w * (v * (v + delta)).powf(g)
                    })
                    .sum::<f64>();
            lo = hi;
        }
        near + far
    }
}

/// Covariance of `(Y_{t_1}, ..., Y_{t_N}, Z_{t_1}, ..., Z_{t_N})`.
pub fn joint_covariance(hurst: f64, times: &[f64]) -> DMatrix<f64> {
    let n = times.len();
    let quad = KernelIntegrator::new(hurst);
    let a = hurst + 0.5;
    let c = (2.0 * hurst).sqrt() / a;
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..=i {
            let (s, t) = (times[j], times[i]);
            let yy = if i == j {
                t.powf(2.0 * hurst)
            } else {
                2.0 * hurst * quad.integrate(s, t - s)
            };
            cov[(i, j)] = yy;
            cov[(j, i)] = yy;
            cov[(n + i, n + j)] = s;
            cov[(n + j, n + i)] = s;
        }
        for j in 0..n {
            let (t, s) = (times[i], times[j]);
            let m = s.min(t);
            let yz = c * (t.powf(a) - (t - m).powf(a));
            cov[(i, n + j)] = yz;
            cov[(n + j, i)] = yz;
        }
    }
    cov
}

/// Lower Cholesky factor of the joint covariance, with jitter on the diagonal.
pub fn joint_factor(hurst: f64, times: &[f64]) -> Result<DMatrix<f64>> {
    let mut cov = joint_covariance(hurst, times);
    for k in 0..cov.nrows() {
        cov[(k, k)] += JITTER;
    }
    cov.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::SimulationFailure(format!("covariance not positive definite at H = {hurst}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_jacobi(16, 0.0, 0.0);
        let exact = |p: i32| if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
        for p in 0..32 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            assert!((q - exact(p)).abs() < 1e-13, "degree {p}");
        }
    }

    #[test]
    fn jacobi_rule_integrates_weighted_monomials() {
        let beta = -0.4;
        let (x, w) = gauss_jacobi(10, 0.0, beta);
        // int_{-1}^{1} (1 + x)^beta dx = 2^(beta + 1) / (beta + 1)
        let total: f64 = w.iter().sum();
        assert!((total - 2f64.powf(beta + 1.0) / (beta + 1.0)).abs() < 1e-13);
        // int (1 + x)^beta (1 + x) dx = 2^(beta + 2) / (beta + 2)
        let first: f64 = x.iter().zip(&w).map(|(x, w)| w * (1.0 + x)).sum();
        assert!((first - 2f64.powf(beta + 2.0) / (beta + 2.0)).abs() < 1e-13);
    }

    /// Brute-force reference by substitution v = u^p, removing the singularity.
    fn reference(g: f64, s: f64, delta: f64) -> f64 {
        let p = 4.0 / (1.0 + g);
        let top = s.powf(1.0 / p);
        let n = 400_000;
        let h = top / n as f64;
        (0..n)
            .map(|k| {
                let u = (k as f64 + 0.5) * h;
                let v = u.powf(p);
                p * u.powf(p - 1.0) * v.powf(g) * (v + delta).powf(g)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn kernel_integral_matches_reference() {
        for &hurst in &[0.05, 0.1, 0.3, 0.7] {
            let q = KernelIntegrator::new(hurst);
            for &(s, d) in &[(1.0, 0.01), (0.5, 1.5), (2.0, 1.0 / 120.0), (0.01, 0.01)] {
                let a = q.integrate(s, d);
                let b = reference(hurst - 0.5, s, d);
                assert!((a - b).abs() < 1e-7 * b.abs(), "H {hurst} s {s} d {d}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn brownian_case_is_exact() {
        let times = [0.25, 0.5, 1.0];
        let cov = joint_covariance(0.5, &times);
        for i in 0..3 {
            for j in 0..3 {
                let m = times[i].min(times[j]);
                assert!((cov[(i, j)] - m).abs() < 1e-15);
                assert!((cov[(i, 3 + j)] - m).abs() < 1e-15);
            }
        }
        assert!(joint_factor(0.5, &times).is_ok());
    }

    #[test]
    fn factor_exists_across_hurst_range() {
        let times: Vec<f64> = (1..=240).map(|k| k as f64 / 120.0).collect();
        for &h in &[0.025, 0.1, 0.2625, 0.5] {
            let l = joint_factor(h, &times).unwrap();
            assert!(l.iter().all(|v| v.is_finite()));
        }
    }
}
