//! Seeded Monte-Carlo hypothesis tests for the invariance and limit
//! properties of random overlap structures: quasi-stationarity under the
//! correlated evolution, the tilted law of past increments, asymptotic
//! uniformity of the leading-rank permutation, and the escape bound for
//! deep atoms.
//!
//! Every test draws its replicas from named substream domains of a single
//! root seed, records the seed in its report, and parallelizes over
//! replicas without affecting the result.

mod escape;
mod replica;
mod tilt;
mod twosample;
mod uniformity;

pub use escape::{escape_bound_check, EscapeBoundOutcome};
pub use replica::{evolve_replica, OverlapHandle, Replica, ReplicaEvolution, ReplicaSource};
pub use tilt::increment_tilt_test;
pub use twosample::{
    kolmogorov_pvalue, ks_one_sample, ks_permutation_pvalue, ks_two_sample,
    mean_chi2_permutation_pvalue, mean_chi2_statistic,
};
pub use uniformity::{permutation_uniformity_test, UniformityPoint, UniformityReport};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evolution::EvolutionConfig;
use crate::rpc::level_pair_masses;
use crate::stream::substream;
use crate::{Error, Result};

// Substream domains.
pub(crate) const DOM_QS_BEFORE: u64 = 0x51;
pub(crate) const DOM_QS_AFTER: u64 = 0x52;
pub(crate) const DOM_QS_PERM: u64 = 0x53;
pub(crate) const DOM_TILT: u64 = 0x54;
pub(crate) const DOM_UNIFORMITY: u64 = 0x55;
pub(crate) const DOM_UNIFORMITY_BOOT: u64 = 0x56;
pub(crate) const DOM_ESCAPE: u64 = 0x57;

/// Minimum replica count accepted by the two-sample tests.
pub const MIN_REPLICAS: usize = 200;

/// One tested statistic with its distance and permutation p-value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatisticResult {
    pub name: String,
    pub distance: f64,
    pub p_value: f64,
    pub reject: bool,
    pub mean_before: Option<f64>,
    pub mean_after: Option<f64>,
}

/// Outcome of an invariance test over a family of statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QsReport {
    pub test: String,
    pub n_replicas: usize,
    pub significance: f64,
    /// Bonferroni-corrected per-statistic level.
    pub corrected_significance: f64,
    pub results: Vec<StatisticResult>,
    /// No statistic rejected at the corrected level.
    pub pass: bool,
    pub seed: u64,
    pub notes: Vec<String>,
}

impl QsReport {
    /// Flat `(statistic, distance, p_value)` rows.
    pub fn csv_rows(&self) -> Vec<(String, f64, f64)> {
        self.results
            .iter()
            .map(|r| (r.name.clone(), r.distance, r.p_value))
            .collect()
    }
}

/// The registered statistic family for quasi-stationarity testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QsStatistic {
    /// The leading weight ξ_1.
    TopWeight,
    /// The gap ratio ξ_2/ξ_1.
    GapRatio,
    /// The per-level masses of the weighted overlap law, compared jointly.
    LevelMasses,
}

impl QsStatistic {
    pub fn name(&self) -> &'static str {
        match self {
            QsStatistic::TopWeight => "top-weight",
            QsStatistic::GapRatio => "gap-ratio",
            QsStatistic::LevelMasses => "level-masses",
        }
    }

    pub fn all() -> Vec<QsStatistic> {
        vec![QsStatistic::TopWeight, QsStatistic::GapRatio, QsStatistic::LevelMasses]
    }
}

/// Settings for [`qs_test`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QsTestConfig {
    pub n_replicas: usize,
    pub significance: f64,
    pub statistics: Vec<QsStatistic>,
    pub n_permutations: usize,
}

impl Default for QsTestConfig {
    fn default() -> Self {
        QsTestConfig {
            n_replicas: 2000,
            significance: 0.01,
            statistics: QsStatistic::all(),
            n_permutations: 2000,
        }
    }
}

struct ReplicaSummary {
    top_weight: f64,
    gap_ratio: f64,
    level_masses: Vec<f64>,
}

fn summarize(rep: &Replica) -> ReplicaSummary {
    let w = &rep.weights;
    let top_weight = w[0];
    let gap_ratio = if w.len() > 1 { w[1] / w[0] } else { f64::NAN };
    let level_masses = match &rep.overlaps {
        OverlapHandle::Tree { labels, .. } => level_pair_masses(w, labels),
        // A single overlap value carries all the pair mass.
        OverlapHandle::Constant { .. } => vec![1.0],
        OverlapHandle::Dense(_) => Vec::new(),
    };
    ReplicaSummary {
        top_weight,
        gap_ratio,
        level_masses,
    }
}

/// Two-sample quasi-stationarity test: `n_replicas` fresh draws are measured
/// as the "before" group, an independent set of draws is evolved once
/// (or `cfg.steps` times) and measured as the "after" group, and each
/// registered statistic is compared with a permutation-resampled test at the
/// Bonferroni-corrected level.
pub fn qs_test(
    source: &ReplicaSource,
    cfg: &EvolutionConfig,
    test_cfg: &QsTestConfig,
    root_seed: u64,
) -> Result<QsReport> {
    if test_cfg.n_replicas < MIN_REPLICAS {
        return Err(Error::invalid(format!(
            "need at least {MIN_REPLICAS} replicas, got {}",
            test_cfg.n_replicas
        )));
    }
    if test_cfg.statistics.is_empty() {
        return Err(Error::invalid("no statistics registered"));
    }
    if !(test_cfg.significance > 0.0 && test_cfg.significance < 1.0) {
        return Err(Error::invalid("significance must lie in (0, 1)"));
    }
    source.validate()?;
    if test_cfg.statistics.contains(&QsStatistic::GapRatio) && source.min_atoms() < 2 {
        return Err(Error::invalid("gap-ratio statistic needs at least 2 atoms"));
    }

    let n = test_cfg.n_replicas;
    let before: Vec<ReplicaSummary> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(root_seed, DOM_QS_BEFORE, i as u64);
            source.draw(&mut rng).map(|rep| summarize(&rep))
        })
        .collect::<Result<_>>()?;
    let after: Vec<ReplicaSummary> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(root_seed, DOM_QS_AFTER, i as u64);
            let mut rep = source.draw(&mut rng)?;
            evolve_replica(&mut rep, cfg, &mut rng)?;
            Ok(summarize(&rep))
        })
        .collect::<Result<_>>()?;

    let corrected = test_cfg.significance / test_cfg.statistics.len() as f64;
    let mut results = Vec::new();
    let mut notes = Vec::new();
    for (idx, stat) in test_cfg.statistics.iter().enumerate() {
        let mut perm_rng = substream(root_seed, DOM_QS_PERM, idx as u64);
        let result = match stat {
            QsStatistic::TopWeight | QsStatistic::GapRatio => {
                let pick = |s: &ReplicaSummary| match stat {
                    QsStatistic::TopWeight => s.top_weight,
                    _ => s.gap_ratio,
                };
                let xs: Vec<f64> = before.iter().map(pick).collect();
                let ys: Vec<f64> = after.iter().map(pick).collect();
                let (distance, p_value) =
                    ks_permutation_pvalue(&xs, &ys, test_cfg.n_permutations, &mut perm_rng);
                StatisticResult {
                    name: stat.name().to_string(),
                    distance,
                    p_value,
                    reject: p_value < corrected,
                    mean_before: Some(mean(&xs)),
                    mean_after: Some(mean(&ys)),
                }
            }
            QsStatistic::LevelMasses => {
                let xs: Vec<Vec<f64>> = before.iter().map(|s| s.level_masses.clone()).collect();
                let ys: Vec<Vec<f64>> = after.iter().map(|s| s.level_masses.clone()).collect();
                if xs[0].is_empty() {
                    notes.push(
                        "level-masses statistic unavailable for dense replicas; skipped"
                            .to_string(),
                    );
                    continue;
                }
                let (distance, p_value) =
                    mean_chi2_permutation_pvalue(&xs, &ys, test_cfg.n_permutations, &mut perm_rng);
                StatisticResult {
                    name: stat.name().to_string(),
                    distance,
                    p_value,
                    reject: p_value < corrected,
                    mean_before: None,
                    mean_after: None,
                }
            }
        };
        results.push(result);
    }

    let pass = results.iter().all(|r| !r.reject);
    Ok(QsReport {
        test: "quasi-stationarity".to_string(),
        n_replicas: n,
        significance: test_cfg.significance,
        corrected_significance: corrected,
        results,
        pass,
        seed: root_seed,
        notes,
    })
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{Power, PsiModel};

    #[test]
    fn qs_test_validates_inputs() {
        let source = ReplicaSource::Pd {
            x: 0.5,
            n_atoms: 50,
            q: 0.3,
        };
        let cfg = EvolutionConfig::new(PsiModel::linear(1.0), Power::Free);
        let tc = QsTestConfig {
            n_replicas: 10,
            ..QsTestConfig::default()
        };
        assert!(qs_test(&source, &cfg, &tc, 1).is_err());

        let tc = QsTestConfig {
            statistics: Vec::new(),
            ..QsTestConfig::default()
        };
        assert!(qs_test(&source, &cfg, &tc, 1).is_err());
    }

    #[test]
    fn degeneration_of_a_two_atom_system_is_detected() {
        // A finite system drifts to a single surviving atom; the law of ξ_1
        // after 100 steps is nowhere near its starting point mass.
        let source = ReplicaSource::Fixed {
            weights: vec![0.6, 0.4],
            q: 0.0,
        };
        let cfg = EvolutionConfig::new(PsiModel::linear(1.0), Power::Free).with_steps(100);
        let tc = QsTestConfig {
            n_replicas: 400,
            significance: 0.01,
            statistics: vec![QsStatistic::TopWeight],
            n_permutations: 500,
        };
        let report = qs_test(&source, &cfg, &tc, 7).unwrap();
        assert!(!report.pass, "degenerate system must be rejected");
        let r = &report.results[0];
        assert!(r.mean_after.unwrap() > 0.93, "after-mean {:?}", r.mean_after);
    }
}
