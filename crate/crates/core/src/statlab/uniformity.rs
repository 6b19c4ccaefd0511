//! Uniformity of the leading-rank ancestry permutation.
//!
//! Over many free-evolution steps the ordering that the current top atoms
//! had at the start becomes uniform over all patterns: the accumulated
//! increments swamp the initial gaps. The test tracks, per replica, which of
//! the `n_top!` original orderings produced the final top `n_top` atoms and
//! measures the total-variation distance of the empirical pattern law to
//! uniform, across a grid of step counts.

use rayon::prelude::*;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::evolution::PsiModel;
use crate::pointproc::sample_pd;
use crate::stream::substream;
use crate::{Error, Result};

use super::{DOM_UNIFORMITY, DOM_UNIFORMITY_BOOT, MIN_REPLICAS};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct UniformityPoint {
    pub t_steps: u64,
    pub tv_distance: f64,
    /// Bootstrap standard error of the TV distance.
    pub std_err: f64,
    pub pattern_counts: Vec<u64>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct UniformityReport {
    pub n_top: usize,
    pub n_replicas: usize,
    pub points: Vec<UniformityPoint>,
    /// Successive TV distances do not increase beyond twice the combined
    /// standard errors.
    pub decreasing_within_error: bool,
    pub seed: u64,
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// Lehmer index of the pattern formed by the origins of the final top ranks.
fn pattern_id(origins: &[usize]) -> usize {
    let n = origins.len();
    let mut id = 0;
    for i in 0..n {
        let smaller_later = origins[i + 1..].iter().filter(|&&o| o < origins[i]).count();
        id = id * (n - i) + smaller_later;
    }
    id
}

fn tv_to_uniform(counts: &[u64], total: u64) -> f64 {
    let m = counts.len() as f64;
    0.5 * counts
        .iter()
        .map(|&c| (c as f64 / total as f64 - 1.0 / m).abs())
        .sum::<f64>()
}

/// Runs the ancestry-pattern uniformity test on `PD(x, 0)` replicas under
/// free evolution with increment function `psi`, for each step count in
/// `t_grid`. Only `n_top` of 2 or 3 is supported.
///
/// For a linear `ψ(z) = λz` the `T`-step increment sum is drawn in one shot
/// as `N(0, Tλ²)` per atom, which is its exact law; other shapes accumulate
/// `T` draws.
pub fn permutation_uniformity_test(
    x: f64,
    n_atoms: usize,
    psi: &PsiModel,
    n_top: usize,
    t_grid: &[u64],
    n_replicas: usize,
    root_seed: u64,
) -> Result<UniformityReport> {
    if !(n_top == 2 || n_top == 3) {
        return Err(Error::invalid("n_top must be 2 or 3"));
    }
    if n_atoms < n_top {
        return Err(Error::invalid("need at least n_top atoms"));
    }
    if n_replicas < MIN_REPLICAS {
        return Err(Error::invalid(format!("need at least {MIN_REPLICAS} replicas")));
    }
    if t_grid.is_empty() {
        return Err(Error::invalid("empty step grid"));
    }
    let m = factorial(n_top);
    let linear_slope = psi.linear_slope();

    let mut points = Vec::with_capacity(t_grid.len());
    for (t_idx, &t_steps) in t_grid.iter().enumerate() {
        let patterns: Vec<usize> = (0..n_replicas)
            .into_par_iter()
            .map(|i| {
                let mut rng =
                    substream(root_seed, DOM_UNIFORMITY + t_idx as u64, i as u64);
                let mp = sample_pd(x, n_atoms, &mut rng)?;
                let w = mp.weights();
                // Accumulated increment per atom over t_steps free steps.
                let totals: Vec<f64> = match linear_slope {
                    Some(lambda) => {
                        let sigma = lambda * (t_steps as f64).sqrt();
                        (0..n_atoms)
                            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    }
                    None => (0..n_atoms)
                        .map(|_| {
                            (0..t_steps)
                                .map(|_| psi.value(rng.sample::<f64, _>(StandardNormal)))
                                .sum()
                        })
                        .collect(),
                };
                let mut order: Vec<usize> = (0..n_atoms).collect();
                order.sort_by(|&a, &b| {
                    let la = w[a].ln() + totals[a];
                    let lb = w[b].ln() + totals[b];
                    lb.total_cmp(&la).then(a.cmp(&b))
                });
                Ok(pattern_id(&order[..n_top]))
            })
            .collect::<Result<_>>()?;

        let mut counts = vec![0u64; m];
        for p in &patterns {
            counts[*p] += 1;
        }
        let tv = tv_to_uniform(&counts, n_replicas as u64);

        // Multinomial bootstrap of the TV estimate.
        let mut boot_rng = substream(root_seed, DOM_UNIFORMITY_BOOT, t_idx as u64);
        let rounds = 200;
        let mut boot = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            let mut resampled = vec![0u64; m];
            for _ in 0..n_replicas {
                resampled[patterns[boot_rng.random_range(0..n_replicas)]] += 1;
            }
            boot.push(tv_to_uniform(&resampled, n_replicas as u64));
        }
        let mean_b = boot.iter().sum::<f64>() / rounds as f64;
        let var_b =
            boot.iter().map(|v| (v - mean_b) * (v - mean_b)).sum::<f64>() / (rounds - 1) as f64;
        points.push(UniformityPoint {
            t_steps,
            tv_distance: tv,
            std_err: var_b.sqrt(),
            pattern_counts: counts,
        });
    }

    let decreasing_within_error = points.windows(2).all(|w| {
        w[1].tv_distance <= w[0].tv_distance + 2.0 * (w[0].std_err + w[1].std_err)
    });
    Ok(UniformityReport {
        n_top,
        n_replicas,
        points,
        decreasing_within_error,
        seed: root_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_ids_enumerate_permutations() {
        assert_eq!(pattern_id(&[1, 5]), 0);
        assert_eq!(pattern_id(&[5, 1]), 1);
        assert_eq!(pattern_id(&[0, 1, 2]), 0);
        assert_eq!(pattern_id(&[2, 1, 0]), 5);
        let mut seen = std::collections::BTreeSet::new();
        for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            seen.insert(pattern_id(&perm));
        }
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn zero_steps_pin_the_identity_pattern() {
        let psi = PsiModel::linear(1.0);
        let report =
            permutation_uniformity_test(0.5, 20, &psi, 2, &[0], 300, 11).unwrap();
        let p = &report.points[0];
        assert_eq!(p.pattern_counts[0], 300);
        assert!((p.tv_distance - 0.5).abs() < 1e-12);
    }

    #[test]
    fn input_validation() {
        let psi = PsiModel::linear(1.0);
        assert!(permutation_uniformity_test(0.5, 20, &psi, 4, &[1], 300, 1).is_err());
        assert!(permutation_uniformity_test(0.5, 1, &psi, 2, &[1], 300, 1).is_err());
        assert!(permutation_uniformity_test(0.5, 20, &psi, 2, &[], 300, 1).is_err());
        assert!(permutation_uniformity_test(0.5, 20, &psi, 2, &[1], 10, 1).is_err());
    }
}
