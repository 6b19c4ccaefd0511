//! Goodness of fit for the tilted law of past increments.
//!
//! After one free-evolution step of a `PD(x, 0)` partition, the Gaussian
//! increment that carried an atom to any fixed rank is distributed as
//! `e^{xψ(z)} φ(z) / g(x)`: the standard normal tilted by the x-th power of
//! the multiplier. For a linear `ψ(z) = λz` this is exactly `N(xλ, 1)`.

use rayon::prelude::*;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::evolution::PsiModel;
use crate::pointproc::sample_pd;
use crate::stream::substream;
use crate::{Error, Result};

use super::twosample::{kolmogorov_pvalue, ks_one_sample};
use super::{QsReport, StatisticResult, DOM_TILT, MIN_REPLICAS};

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Tabulated CDF of `e^{xψ(z)} φ(z)`, normalized on a wide grid.
struct TiltedCdf {
    zs: Vec<f64>,
    cum: Vec<f64>,
}

impl TiltedCdf {
    fn build(psi: &PsiModel, x: f64) -> Result<Self> {
        let n = 4801;
        let (lo, hi) = (-12.0, 12.0);
        let step = (hi - lo) / (n - 1) as f64;
        let zs: Vec<f64> = (0..n).map(|i| lo + i as f64 * step).collect();
        let dens: Vec<f64> = zs
            .iter()
            .map(|&z| (x * psi.value(z) - 0.5 * z * z).exp())
            .collect();
        if dens.iter().any(|d| !d.is_finite()) {
            return Err(Error::numeric("tilted density is not finite on the grid"));
        }
        let mut cum = vec![0.0; n];
        for i in 1..n {
            cum[i] = cum[i - 1] + 0.5 * (dens[i - 1] + dens[i]) * step;
        }
        let total = cum[n - 1];
        if total.is_nan() || total <= 0.0 {
            return Err(Error::numeric("tilted density has zero mass on the grid"));
        }
        for c in &mut cum {
            *c /= total;
        }
        Ok(TiltedCdf { zs, cum })
    }

    fn eval(&self, z: f64) -> f64 {
        if z <= self.zs[0] {
            return 0.0;
        }
        if z >= *self.zs.last().unwrap() {
            return 1.0;
        }
        let hi = self.zs.partition_point(|&v| v < z).max(1);
        let t = (z - self.zs[hi - 1]) / (self.zs[hi] - self.zs[hi - 1]);
        self.cum[hi - 1] + t * (self.cum[hi] - self.cum[hi - 1])
    }
}

/// Collects the rank-1 past increment over free-evolution replicas of a
/// `PD(x, 0)` partition and tests it against the tilted reference law.
pub fn increment_tilt_test(
    x: f64,
    n_atoms: usize,
    psi: &PsiModel,
    n_replicas: usize,
    significance: f64,
    root_seed: u64,
) -> Result<QsReport> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::invalid("tail index outside (0, 1)"));
    }
    if n_replicas < MIN_REPLICAS {
        return Err(Error::invalid(format!("need at least {MIN_REPLICAS} replicas")));
    }
    if n_atoms < 2 {
        return Err(Error::invalid("need at least 2 atoms per replica"));
    }

    let winners: Vec<f64> = (0..n_replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(root_seed, DOM_TILT, i as u64);
            let mp = sample_pd(x, n_atoms, &mut rng)?;
            let mut best = f64::NEG_INFINITY;
            let mut best_kappa = 0.0;
            for &w in mp.weights() {
                let kappa: f64 = rng.sample(StandardNormal);
                let lw = w.ln() + psi.value(kappa);
                if lw > best {
                    best = lw;
                    best_kappa = kappa;
                }
            }
            Ok(best_kappa)
        })
        .collect::<Result<_>>()?;

    // Reference CDF: exact for linear ψ, tabulated otherwise.
    let (distance, name) = match psi.linear_slope() {
        Some(lambda) => {
            let shift = x * lambda;
            (
                ks_one_sample(&winners, |z| normal_cdf(z - shift)),
                "rank1-increment-vs-normal".to_string(),
            )
        }
        None => {
            let table = TiltedCdf::build(psi, x)?;
            (
                ks_one_sample(&winners, |z| table.eval(z)),
                "rank1-increment-vs-tilted".to_string(),
            )
        }
    };
    let p_value = kolmogorov_pvalue(n_replicas, distance);
    let mean_obs = winners.iter().sum::<f64>() / winners.len() as f64;
    let result = StatisticResult {
        name,
        distance,
        p_value,
        reject: p_value < significance,
        mean_before: None,
        mean_after: Some(mean_obs),
    };
    let pass = !result.reject;
    Ok(QsReport {
        test: "increment-tilt".to_string(),
        n_replicas,
        significance,
        corrected_significance: significance,
        results: vec![result],
        pass,
        seed: root_seed,
        notes: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_cdf_reference_points() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_cdf(-1.0), 0.15865525393145707, epsilon = 1e-12);
    }

    #[test]
    fn tilted_table_matches_the_linear_closed_form() {
        // For ψ(z) = λz the tilted law is N(xλ, 1); the generic table must
        // agree with the closed form.
        let psi = PsiModel::linear(1.5);
        let table = TiltedCdf::build(&psi, 0.4).unwrap();
        for z in [-2.0, -0.5, 0.0, 0.6, 1.7, 3.0] {
            assert_abs_diff_eq!(table.eval(z), normal_cdf(z - 0.6), epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_tilt_limit_is_standard_normal() {
        let psi = PsiModel::log_cosh(1.0);
        let table = TiltedCdf::build(&psi, 1e-9).unwrap();
        for z in [-1.0, 0.0, 1.0] {
            assert_abs_diff_eq!(table.eval(z), normal_cdf(z), epsilon = 1e-6);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let psi = PsiModel::linear(1.0);
        assert!(increment_tilt_test(1.2, 100, &psi, 500, 0.01, 1).is_err());
        assert!(increment_tilt_test(0.5, 100, &psi, 10, 0.01, 1).is_err());
        assert!(increment_tilt_test(0.5, 1, &psi, 500, 0.01, 1).is_err());
    }
}
