//! Gauss–Hermite quadrature for expectations under the standard normal law.
//!
//! Rules are built once per node count with the Golub–Welsch algorithm
//! (symmetric tridiagonal eigenproblem) and cached for shared read access.
//! The adaptive wrappers double the node count until two successive
//! estimates agree to the requested tolerance.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Node counts tried by the adaptive integrators, in order.
const LADDER: [usize; 7] = [8, 16, 32, 64, 128, 256, 512];

/// Default convergence tolerance for 1-D Gaussian expectations.
pub const TOL_1D: f64 = 1e-10;
/// Default convergence tolerance for 2-D Gaussian expectations.
pub const TOL_2D: f64 = 1e-8;

/// A fixed-order Gauss–Hermite rule in the physicists' convention:
/// `sum_i w_i f(x_i) ≈ ∫ e^{-x²} f(x) dx`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds the rule of the given degree via the Golub–Welsch companion
    /// matrix: zero diagonal, sqrt(n/2) off-diagonal.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature degree must be positive");
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n - 1 {
            let e = ((i as f64 + 1.0) * 0.5).sqrt();
            m[(i, i + 1)] = e;
            m[(i + 1, i)] = e;
        }
        let eigen = m.symmetric_eigen();
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = eigen
            .eigenvalues
            .iter()
            .zip(eigen.eigenvectors.row(0).iter())
            .map(|(&x, &v0)| (x, v0 * v0 * sqrt_pi))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        GaussHermite {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// `E[f(Z)]` for `Z` standard normal.
    pub fn gauss_expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let sqrt2 = std::f64::consts::SQRT_2;
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(sqrt2 * x);
        }
        acc / sqrt_pi
    }

    /// `E[f(X, Y)]` for standard normals with correlation `corr`.
    pub fn gauss_expect2<F: Fn(f64, f64) -> f64>(&self, corr: f64, f: F) -> f64 {
        let sqrt2 = std::f64::consts::SQRT_2;
        let pi = std::f64::consts::PI;
        let s = (1.0 - corr * corr).max(0.0).sqrt();
        let mut acc = 0.0;
        for (&xi, &wi) in self.nodes.iter().zip(&self.weights) {
            let x = sqrt2 * xi;
            let mut inner = 0.0;
            for (&xj, &wj) in self.nodes.iter().zip(&self.weights) {
                let y = corr * x + s * sqrt2 * xj;
                inner += wj * f(x, y);
            }
            acc += wi * inner;
        }
        acc / pi
    }
}

fn rule(n: usize) -> &'static GaussHermite {
    static RULES: [OnceLock<GaussHermite>; LADDER.len()] =
        [const { OnceLock::new() }; LADDER.len()];
    let slot = LADDER
        .iter()
        .position(|&m| m == n)
        .expect("node count not on the ladder");
    RULES[slot].get_or_init(|| GaussHermite::new(n))
}

fn converged(prev: f64, next: f64, tol: f64) -> bool {
    (next - prev).abs() <= tol * (1.0 + next.abs())
}

/// Adaptive `E[f(Z)]`, doubling nodes until successive estimates agree.
pub fn gauss_expect_adaptive<F: Fn(f64) -> f64>(f: F, tol: f64) -> Result<f64> {
    let mut prev = f64::NAN;
    for &n in &LADDER {
        let est = rule(n).gauss_expect(&f);
        if !est.is_finite() {
            return Err(Error::numeric(format!(
                "divergent integrand in Gaussian expectation (n = {n})"
            )));
        }
        if prev.is_finite() && converged(prev, est, tol) {
            return Ok(est);
        }
        prev = est;
    }
    Err(Error::numeric(format!(
        "Gaussian expectation did not converge to {tol:.1e} within {} nodes",
        LADDER[LADDER.len() - 1]
    )))
}

/// Simpson-rule Gaussian expectation over `[-12, 12]`; used for merely
/// piecewise-smooth integrands where the spectral rule stalls. The truncated
/// tail mass is below 1e-31.
pub fn gauss_expect_grid<F: Fn(f64) -> f64>(f: F) -> f64 {
    let n = 48_000usize;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let z = lo + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * (-0.5 * z * z).exp() * f(z);
    }
    acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
}

/// Adaptive `E[f(X, Y)]` for correlated standard normals.
pub fn gauss_expect2_adaptive<F: Fn(f64, f64) -> f64>(corr: f64, f: F, tol: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&corr) {
        return Err(Error::invalid(format!("correlation {corr} outside [-1, 1]")));
    }
    // |corr| = 1 degenerates to a line; integrate in one dimension.
    if corr == 1.0 {
        return gauss_expect_adaptive(|z| f(z, z), tol);
    }
    if corr == -1.0 {
        return gauss_expect_adaptive(|z| f(z, -z), tol);
    }
    let mut prev = f64::NAN;
    for &n in &LADDER {
        let est = rule(n).gauss_expect2(corr, &f);
        if !est.is_finite() {
            return Err(Error::numeric(format!(
                "divergent integrand in 2-D Gaussian expectation (n = {n})"
            )));
        }
        if prev.is_finite() && converged(prev, est, tol) {
            return Ok(est);
        }
        prev = est;
    }
    Err(Error::numeric(format!(
        "2-D Gaussian expectation did not converge to {tol:.1e}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn moments_of_the_standard_normal() {
        let q = GaussHermite::new(32);
        assert_abs_diff_eq!(q.gauss_expect(|_| 1.0), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(q.gauss_expect(|z| z), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(q.gauss_expect(|z| z * z), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(q.gauss_expect(|z| z.powi(4)), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn exponential_moment_matches_closed_form() {
        // E[e^{tZ}] = e^{t²/2}; E[cosh Z] = e^{1/2}.
        let got = gauss_expect_adaptive(|z| (1.5 * z).exp(), TOL_1D).unwrap();
        assert_abs_diff_eq!(got, (1.5f64 * 1.5 / 2.0).exp(), epsilon = 1e-10);
        let got = gauss_expect_adaptive(|z| z.cosh(), TOL_1D).unwrap();
        assert_abs_diff_eq!(got, 0.5f64.exp(), epsilon = 1e-10);
    }

    #[test]
    fn correlated_product_moment() {
        // E[XY] = q for the correlated pair.
        for q in [-0.8, -0.3, 0.0, 0.4, 0.9] {
            let got = gauss_expect2_adaptive(q, |x, y| x * y, TOL_2D).unwrap();
            assert_abs_diff_eq!(got, q, epsilon = 1e-9);
        }
    }

    #[test]
    fn degenerate_correlations() {
        let got = gauss_expect2_adaptive(1.0, |x, y| x * y, TOL_2D).unwrap();
        assert_abs_diff_eq!(got, 1.0, epsilon = 1e-9);
        let got = gauss_expect2_adaptive(-1.0, |x, y| x * y, TOL_2D).unwrap();
        assert_abs_diff_eq!(got, -1.0, epsilon = 1e-9);
    }

    #[test]
    fn divergent_integrand_is_rejected() {
        // e^{z⁴} has no Gaussian expectation.
        assert!(gauss_expect_adaptive(|z| (z.powi(4)).exp(), TOL_1D).is_err());
    }
}
