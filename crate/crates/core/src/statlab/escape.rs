//! Empirical check of the escape bound for deep atoms.
//!
//! For a proper partition evolved by `T` steps of increments `λψ(κ)`, the
//! probability that any atom initially beyond rank `N` ends with normalized
//! weight above `δ` is bounded by
//! `(1/δ) (g(2λ) g(-2λ))^{T/2} Σ_{i>N} E[ξ_i]`,
//! with `g` the Gaussian exponential moment of `ψ`. The bound is uniform in
//! the covariance power, so it is checked here with a constant-overlap
//! field; the event itself only depends on per-atom increment sums.

use rayon::prelude::*;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::evolution::{g_moment, PsiModel};
use crate::pointproc::sample_pd;
use crate::stream::substream;
use crate::{Error, Result};

use super::{DOM_ESCAPE, MIN_REPLICAS};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EscapeBoundOutcome {
    pub empirical: f64,
    pub empirical_se: f64,
    pub bound: f64,
    pub bound_se: f64,
    /// Mean stored mass beyond the cutoff rank.
    pub tail_mass_mean: f64,
    /// `(g(2λ) g(-2λ))^{T/2}`.
    pub g_factor: f64,
    /// `empirical <= bound + 3·(combined standard error)`.
    pub pass: bool,
    pub n_replicas: usize,
    pub seed: u64,
}

/// Estimates the escape probability and the analytic bound side by side.
///
/// Each replica draws a `PD(x, 0)` partition with `n_total` stored atoms
/// (renormalized to a proper partition), evolves it `t_steps` times with
/// increments `λψ(κ)` over a constant-overlap field `q^r`, and records
/// whether any atom of initial rank above `cutoff` ends above `delta`.
#[allow(clippy::too_many_arguments)]
pub fn escape_bound_check(
    x: f64,
    q: f64,
    n_total: usize,
    cutoff: usize,
    t_steps: usize,
    lambda: f64,
    delta: f64,
    psi: &PsiModel,
    r: u32,
    n_replicas: usize,
    root_seed: u64,
) -> Result<EscapeBoundOutcome> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::invalid("tail index outside (0, 1)"));
    }
    if cutoff == 0 || cutoff >= n_total {
        return Err(Error::invalid("cutoff must lie strictly inside the stored atoms"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta must lie in (0, 1)"));
    }
    if t_steps == 0 {
        return Err(Error::invalid("need at least one step"));
    }
    if n_replicas < MIN_REPLICAS {
        return Err(Error::invalid(format!("need at least {MIN_REPLICAS} replicas")));
    }
    let qr = q.powi(r as i32);
    if !(0.0..1.0).contains(&qr) {
        return Err(Error::invalid("constant overlap power q^r must lie in [0, 1)"));
    }

    // The bound's moment factor, from the unscaled ψ at ±2λ.
    let g_plus = g_moment(psi, 2.0 * lambda)?;
    let g_minus = g_moment(psi, -2.0 * lambda)?;
    let g_factor = (g_plus * g_minus).powf(t_steps as f64 / 2.0);
    if !g_factor.is_finite() {
        return Err(Error::numeric("moment factor diverges"));
    }

    let scaled = psi.scaled_by(lambda);
    let shared_sd = qr.sqrt();
    let idio_sd = (1.0 - qr).sqrt();

    struct Draw {
        escaped: bool,
        tail_mass: f64,
    }
    let draws: Vec<Draw> = (0..n_replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(root_seed, DOM_ESCAPE, i as u64);
            let mp = sample_pd(x, n_total, &mut rng)?;
            let weights = mp.renormalized_stored();
            let tail_mass: f64 = weights[cutoff..].iter().sum();
            let mut log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
            for _ in 0..t_steps {
                let shared = shared_sd * rng.sample::<f64, _>(StandardNormal);
                for lw in log_w.iter_mut() {
                    let kappa = shared + idio_sd * rng.sample::<f64, _>(StandardNormal);
                    *lw += scaled.value(kappa);
                }
            }
            let final_w = crate::evolution::softmax_scaled(&log_w, 1.0)?;
            let escaped = final_w[cutoff..].iter().any(|&w| w > delta);
            Ok(Draw { escaped, tail_mass })
        })
        .collect::<Result<_>>()?;

    let n = n_replicas as f64;
    let empirical = draws.iter().filter(|d| d.escaped).count() as f64 / n;
    let empirical_se = (empirical * (1.0 - empirical) / n).sqrt();
    let tail_mass_mean = draws.iter().map(|d| d.tail_mass).sum::<f64>() / n;
    let tail_var = draws
        .iter()
        .map(|d| (d.tail_mass - tail_mass_mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    let tail_se = (tail_var / n).sqrt();
    let bound = g_factor * tail_mass_mean / delta;
    let bound_se = g_factor * tail_se / delta;
    let slack = 3.0 * (empirical_se * empirical_se + bound_se * bound_se).sqrt();
    Ok(EscapeBoundOutcome {
        empirical,
        empirical_se,
        bound,
        bound_se,
        tail_mass_mean,
        g_factor,
        pass: empirical <= bound + slack,
        n_replicas,
        seed: root_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_tilt_reduces_to_markov() {
        // λ = 0 freezes the weights: the event is just the initial tail
        // exceeding δ, bounded by mean tail mass / δ.
        let out = escape_bound_check(
            0.5,
            0.0,
            300,
            50,
            1,
            0.0,
            0.05,
            &PsiModel::linear(1.0),
            1,
            300,
            21,
        )
        .unwrap();
        assert!((out.g_factor - 1.0).abs() < 1e-9);
        assert!(out.pass, "empirical {} vs bound {}", out.empirical, out.bound);
    }

    #[test]
    fn bound_factor_grows_with_steps() {
        let psi = PsiModel::linear(1.0);
        let one = escape_bound_check(0.5, 0.0, 200, 50, 1, 0.5, 0.05, &psi, 1, 200, 22).unwrap();
        let four = escape_bound_check(0.5, 0.0, 200, 50, 4, 0.5, 0.05, &psi, 1, 200, 22).unwrap();
        // (g(1) g(-1))^{T/2} = e^{T/2} for the unit linear shape.
        let expected_ratio = (4.0f64 / 2.0).exp() / (1.0f64 / 2.0).exp();
        let ratio = four.g_factor / one.g_factor;
        assert!((ratio - expected_ratio).abs() < 1e-9);
    }

    #[test]
    fn parameter_validation() {
        let psi = PsiModel::linear(1.0);
        assert!(escape_bound_check(0.5, 0.0, 100, 0, 1, 0.5, 0.05, &psi, 1, 300, 1).is_err());
        assert!(escape_bound_check(0.5, 0.0, 100, 100, 1, 0.5, 0.05, &psi, 1, 300, 1).is_err());
        assert!(escape_bound_check(0.5, 0.0, 100, 50, 1, 0.5, 1.5, &psi, 1, 300, 1).is_err());
        assert!(escape_bound_check(0.5, -0.5, 100, 50, 1, 0.5, 0.05, &psi, 1, 300, 1).is_err());
    }
}
