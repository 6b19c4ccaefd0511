//! Experiment configuration: a strict, versioned TOML schema.
//!
//! A run is fully determined by `(config, seed)`. Unknown keys are rejected,
//! configs round-trip losslessly through TOML, and the canonical JSON
//! encoding of the config is hashed into every report.

use std::path::PathBuf;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use rostlab_core::evolution::{EvolutionConfig, Power, PsiModel};
use rostlab_core::rpc::RpcSpec;
use rostlab_core::statlab::{QsStatistic, QsTestConfig};

pub const CONFIG_VERSION: u32 = 1;

/// The experiment names the runner accepts.
pub const EXPERIMENTS: &[&str] = &[
    "pd-sample",
    "rpc-sample",
    "evolve",
    "qs-test",
    "tilt-test",
    "uniformity-test",
    "escape-bound",
    "factorize",
    "ultrametric",
    "directing-recover",
    "transforms-check",
    "mark-shift",
];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub experiment: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pd: Option<PdParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rpc: Option<RpcParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolution: Option<EvolutionParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<TestParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<ShiftParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escape: Option<EscapeParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniformity: Option<UniformityParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transforms: Option<TransformsParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directing: Option<DirectingParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PdParams {
    pub x: f64,
    pub n_atoms: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_lo: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_hi: Option<usize>,
    /// Constant off-diagonal overlap attached when a replica needs one.
    #[serde(default)]
    pub q: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RpcParams {
    pub x_levels: Vec<f64>,
    pub q_levels: Vec<f64>,
    pub branching: Vec<usize>,
    /// Leading leaves materialized for dense structure checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_n: Option<usize>,
    #[serde(default)]
    pub include_tree_json: bool,
}

impl RpcParams {
    pub fn to_spec(&self) -> anyhow::Result<RpcSpec> {
        Ok(RpcSpec::new(
            self.x_levels.clone(),
            self.q_levels.clone(),
            self.branching.clone(),
        )?)
    }
}

/// Covariance power: a positive integer or the string "free".
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum PowerParam {
    R(u32),
    Named(String),
}

impl PowerParam {
    pub fn to_power(&self) -> anyhow::Result<Power> {
        match self {
            PowerParam::R(r) if *r >= 1 => Ok(Power::Correlated(*r)),
            PowerParam::R(_) => bail!("power must be >= 1 or \"free\""),
            PowerParam::Named(s) if s == "free" => Ok(Power::Free),
            PowerParam::Named(s) => bail!("unknown power '{s}' (expected an integer or \"free\")"),
        }
    }
}

fn default_scale() -> f64 {
    1.0
}

fn default_steps() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvolutionParams {
    /// Registered increment function: "linear" or "log-cosh".
    pub psi: String,
    #[serde(default = "default_scale")]
    pub psi_scale: f64,
    pub power: PowerParam,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

impl EvolutionParams {
    pub fn psi_model(&self) -> anyhow::Result<PsiModel> {
        Ok(PsiModel::by_name(&self.psi, self.psi_scale)?)
    }

    pub fn to_config(&self) -> anyhow::Result<EvolutionConfig> {
        Ok(EvolutionConfig::new(self.psi_model()?, self.power.to_power()?)
            .with_steps(self.steps))
    }
}

fn default_significance() -> f64 {
    0.01
}

fn default_permutations() -> usize {
    2000
}

fn default_statistics() -> Vec<String> {
    vec!["top-weight".into(), "gap-ratio".into(), "level-masses".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TestParams {
    #[serde(default = "default_significance")]
    pub significance: f64,
    #[serde(default = "default_statistics")]
    pub statistics: Vec<String>,
    #[serde(default = "default_permutations")]
    pub n_permutations: usize,
}

impl Default for TestParams {
    fn default() -> Self {
        TestParams {
            significance: default_significance(),
            statistics: default_statistics(),
            n_permutations: default_permutations(),
        }
    }
}

impl TestParams {
    pub fn to_qs_config(&self, n_replicas: usize) -> anyhow::Result<QsTestConfig> {
        let mut statistics = Vec::new();
        for name in &self.statistics {
            statistics.push(match name.as_str() {
                "top-weight" => QsStatistic::TopWeight,
                "gap-ratio" => QsStatistic::GapRatio,
                "level-masses" => QsStatistic::LevelMasses,
                other => bail!("unknown statistic '{other}'"),
            });
        }
        Ok(QsTestConfig {
            n_replicas,
            significance: self.significance,
            statistics,
            n_permutations: self.n_permutations,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ShiftParams {
    /// Mark law μ over the integer alphabet.
    pub mark_weights: Vec<f64>,
    /// Per-mark exponential scales: `W_c(κ) = exp(λ_c κ)`, κ standard normal.
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EscapeParams {
    pub cutoff: usize,
    pub t_steps: usize,
    pub lambda: f64,
    pub delta: f64,
    #[serde(default)]
    pub q: f64,
    #[serde(default = "default_r")]
    pub r: u32,
}

fn default_r() -> u32 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct UniformityParams {
    pub n_top: usize,
    pub t_grid: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MatrixParams {
    /// Inline dense rows, or a CSV file path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "default_value_tol")]
    pub value_tolerance: f64,
    #[serde(default)]
    pub ultrametric_tolerance: f64,
}

fn default_value_tol() -> f64 {
    rostlab_core::DEFAULT_VALUE_TOL
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TransformsParams {
    /// Grids for the linear smoothing identity.
    pub x_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    /// Points for the derivative identity residual.
    pub derivative_qs: Vec<f64>,
    pub derivative_step: f64,
    /// Power at which the transformed covariance must be near the identity.
    pub decay_power: u32,
    pub decay_q_max: f64,
}

impl Default for TransformsParams {
    fn default() -> Self {
        TransformsParams {
            x_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            lambda_grid: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            rho_grid: vec![0.0, 0.25, 0.5, 0.75, 0.99],
            derivative_qs: vec![0.1, 0.3, 0.5],
            derivative_step: 1e-3,
            decay_power: 32,
            decay_q_max: 0.8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DirectingParams {
    /// Leading leaves materialized before block extraction.
    pub top_n: usize,
    pub fit_lo: usize,
    pub fit_hi: usize,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("failed to parse config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.version != CONFIG_VERSION {
            bail!("unsupported config version {} (expected {CONFIG_VERSION})", self.version);
        }
        if !EXPERIMENTS.contains(&self.experiment.as_str()) {
            bail!(
                "unknown experiment '{}'; available: {}",
                self.experiment,
                EXPERIMENTS.join(", ")
            );
        }
        Ok(())
    }

    /// Canonical JSON encoding (field order fixed by the schema).
    pub fn canonical_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// FNV-1a hash of the canonical JSON, as fixed-width hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.canonical_json()).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        format!("{h:016x}")
    }

    /// A runnable default configuration for the named experiment.
    pub fn default_for(experiment: &str, seed: u64) -> anyhow::Result<Self> {
        let mut cfg = ExperimentConfig {
            version: CONFIG_VERSION,
            experiment: experiment.to_string(),
            seed,
            replicas: None,
            out_dir: None,
            threads: None,
            pd: None,
            rpc: None,
            evolution: None,
            test: None,
            shift: None,
            escape: None,
            uniformity: None,
            matrix: None,
            transforms: None,
            directing: None,
        };
        match experiment {
            "pd-sample" => {
                cfg.replicas = Some(1);
                cfg.pd = Some(PdParams {
                    x: 0.5,
                    n_atoms: 1000,
                    fit_lo: Some(99),
                    fit_hi: Some(1000),
                    q: 0.0,
                });
            }
            "rpc-sample" => {
                cfg.replicas = Some(1);
                cfg.rpc = Some(RpcParams {
                    x_levels: vec![0.3, 0.6],
                    q_levels: vec![0.2, 0.6],
                    branching: vec![16, 24],
                    top_n: Some(200),
                    include_tree_json: false,
                });
            }
            "evolve" => {
                cfg.replicas = Some(1);
                cfg.rpc = Some(RpcParams {
                    x_levels: vec![0.3, 0.6],
                    q_levels: vec![0.2, 0.6],
                    branching: vec![16, 24],
                    top_n: None,
                    include_tree_json: false,
                });
                cfg.evolution = Some(EvolutionParams {
                    psi: "linear".into(),
                    psi_scale: 1.0,
                    power: PowerParam::R(1),
                    steps: 1,
                });
            }
            "qs-test" => {
                cfg.replicas = Some(2000);
                cfg.rpc = Some(RpcParams {
                    x_levels: vec![0.5],
                    q_levels: vec![0.3],
                    branching: vec![2000],
                    top_n: None,
                    include_tree_json: false,
                });
                cfg.evolution = Some(EvolutionParams {
                    psi: "linear".into(),
                    psi_scale: 1.0,
                    power: PowerParam::R(1),
                    steps: 1,
                });
                cfg.test = Some(TestParams::default());
            }
            "tilt-test" => {
                cfg.replicas = Some(5000);
                cfg.pd = Some(PdParams {
                    x: 0.5,
                    n_atoms: 2000,
                    fit_lo: None,
                    fit_hi: None,
                    q: 0.0,
                });
                cfg.evolution = Some(EvolutionParams {
                    psi: "linear".into(),
                    psi_scale: 1.0,
                    power: PowerParam::Named("free".into()),
                    steps: 1,
                });
                cfg.test = Some(TestParams::default());
            }
            "uniformity-test" => {
                cfg.replicas = Some(5000);
                cfg.pd = Some(PdParams {
                    x: 0.5,
                    n_atoms: 500,
                    fit_lo: None,
                    fit_hi: None,
                    q: 0.0,
                });
                cfg.evolution = Some(EvolutionParams {
                    psi: "linear".into(),
                    psi_scale: 1.0,
                    power: PowerParam::Named("free".into()),
                    steps: 1,
                });
                cfg.uniformity = Some(UniformityParams {
                    n_top: 2,
                    t_grid: vec![100, 1000, 10_000],
                });
            }
            "escape-bound" => {
                cfg.replicas = Some(5000);
                cfg.pd = Some(PdParams {
                    x: 0.5,
                    n_atoms: 500,
                    fit_lo: None,
                    fit_hi: None,
                    q: 0.3,
                });
                cfg.evolution = Some(EvolutionParams {
                    psi: "linear".into(),
                    psi_scale: 1.0,
                    power: PowerParam::R(1),
                    steps: 1,
                });
                cfg.escape = Some(EscapeParams {
                    cutoff: 50,
                    t_steps: 1,
                    lambda: 0.5,
                    delta: 0.05,
                    q: 0.3,
                    r: 1,
                });
            }
            "factorize" | "ultrametric" => {
                cfg.matrix = Some(MatrixParams {
                    rows: Some(vec![
                        vec![1.0, 0.5, 0.0, 0.0],
                        vec![0.5, 1.0, 0.0, 0.0],
                        vec![0.0, 0.0, 1.0, 0.7],
                        vec![0.0, 0.0, 0.7, 1.0],
                    ]),
                    csv_path: None,
                    weights: Some(vec![0.4, 0.3, 0.2, 0.1]),
                    value_tolerance: 1e-6,
                    ultrametric_tolerance: 0.0,
                });
            }
            "directing-recover" => {
                cfg.replicas = Some(500);
                cfg.rpc = Some(RpcParams {
                    x_levels: vec![0.4, 0.8],
                    q_levels: vec![0.2, 0.6],
                    branching: vec![32, 2048],
                    top_n: None,
                    include_tree_json: false,
                });
                cfg.directing = Some(DirectingParams {
                    top_n: 2048,
                    fit_lo: 0,
                    fit_hi: 12,
                });
            }
            "transforms-check" => {
                cfg.transforms = Some(TransformsParams::default());
            }
            "mark-shift" => {
                cfg.replicas = Some(10_000);
                cfg.pd = Some(PdParams {
                    x: 0.5,
                    n_atoms: 500,
                    fit_lo: None,
                    fit_hi: None,
                    q: 0.0,
                });
                cfg.shift = Some(ShiftParams {
                    mark_weights: vec![0.5, 0.5],
                    lambda: vec![1.0, 2.0],
                });
            }
            other => bail!("unknown experiment '{other}'"),
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for name in EXPERIMENTS {
            let cfg = ExperimentConfig::default_for(name, 42).unwrap();
            let text = cfg.to_toml_string().unwrap();
            let back = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(cfg, back, "round trip failed for {name}");
            assert_eq!(cfg.hash(), back.hash());
        }
    }

    #[test]
    fn unknown_keys_and_experiments_are_rejected() {
        let bad = "version = 1\nexperiment = \"pd-sample\"\nseed = 1\nbogus = 3\n";
        assert!(ExperimentConfig::from_toml_str(bad).is_err());
        let bad = "version = 1\nexperiment = \"nope\"\nseed = 1\n";
        assert!(ExperimentConfig::from_toml_str(bad).is_err());
        let bad = "version = 9\nexperiment = \"pd-sample\"\nseed = 1\n";
        assert!(ExperimentConfig::from_toml_str(bad).is_err());
    }

    #[test]
    fn power_parses_integers_and_free() {
        assert_eq!(PowerParam::R(2).to_power().unwrap(), Power::Correlated(2));
        assert_eq!(
            PowerParam::Named("free".into()).to_power().unwrap(),
            Power::Free
        );
        assert!(PowerParam::Named("loose".into()).to_power().is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ExperimentConfig::default_for("pd-sample", 1).unwrap();
        let mut b = a.clone();
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
