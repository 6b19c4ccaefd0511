//! Replica plumbing for the Monte-Carlo tests: lightweight samples that
//! carry their overlap structure either as cascade ancestry labels, a
//! constant off-diagonal value, or a dense matrix, together with a one-pass
//! evolution that works on all three representations.

use rand_distr::StandardNormal;

use rand::Rng;

use crate::evolution::{sample_field_dense, EvolutionConfig, FieldSampler, Power};
use crate::pointproc::sample_pd;
use crate::rost::OverlapMatrix;
use crate::rpc::{field_from_labels, sample_cascade, RpcSpec};
use crate::stream::Stream;
use crate::{Error, Result};

/// The overlap structure of a replica.
#[derive(Debug, Clone)]
pub enum OverlapHandle {
    /// Cascade ancestry: `labels[l-1][rank]` is the depth-`l` vertex.
    Tree {
        labels: Vec<Vec<usize>>,
        q_levels: Vec<f64>,
    },
    /// Constant off-diagonal overlap.
    Constant { q: f64 },
    Dense(OverlapMatrix),
}

/// A sampled system: stored weights renormalized to sum to one, plus the
/// overlap structure. Comparing truncated systems on renormalized weights
/// keeps remainder bookkeeping out of the test statistics.
#[derive(Debug, Clone)]
pub struct Replica {
    pub weights: Vec<f64>,
    pub overlaps: OverlapHandle,
}

/// Replica generators for the invariance tests.
#[derive(Debug, Clone)]
pub enum ReplicaSource {
    /// A fresh cascade per replica.
    Rpc(RpcSpec),
    /// A truncated Poisson–Dirichlet partition with constant overlap `q`.
    Pd { x: f64, n_atoms: usize, q: f64 },
    /// The same fixed weights every replica, with constant overlap `q`.
    Fixed { weights: Vec<f64>, q: f64 },
}

impl ReplicaSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            ReplicaSource::Rpc(spec) => spec.validate(),
            ReplicaSource::Pd { x, n_atoms, q } => {
                if !(*x > 0.0 && *x < 1.0) {
                    return Err(Error::invalid("tail index outside (0, 1)"));
                }
                if *n_atoms == 0 {
                    return Err(Error::invalid("empty partition"));
                }
                if q.abs() >= 1.0 {
                    return Err(Error::invalid("constant overlap outside (-1, 1)"));
                }
                Ok(())
            }
            ReplicaSource::Fixed { weights, q } => {
                if weights.is_empty() {
                    return Err(Error::invalid("empty fixed weights"));
                }
                if q.abs() >= 1.0 {
                    return Err(Error::invalid("constant overlap outside (-1, 1)"));
                }
                Ok(())
            }
        }
    }

    pub fn min_atoms(&self) -> usize {
        match self {
            ReplicaSource::Rpc(spec) => spec.leaf_count(),
            ReplicaSource::Pd { n_atoms, .. } => *n_atoms,
            ReplicaSource::Fixed { weights, .. } => weights.len(),
        }
    }

    pub fn draw(&self, rng: &mut Stream) -> Result<Replica> {
        match self {
            ReplicaSource::Rpc(spec) => {
                let tree = sample_cascade(spec, rng)?;
                let sum: f64 = tree.weights().iter().sum();
                let weights = tree.weights().iter().map(|w| w / sum).collect();
                Ok(Replica {
                    weights,
                    overlaps: OverlapHandle::Tree {
                        labels: tree.level_labels().to_vec(),
                        q_levels: spec.q_levels.clone(),
                    },
                })
            }
            ReplicaSource::Pd { x, n_atoms, q } => {
                let mp = sample_pd(*x, *n_atoms, rng)?;
                Ok(Replica {
                    weights: mp.renormalized_stored(),
                    overlaps: OverlapHandle::Constant { q: *q },
                })
            }
            ReplicaSource::Fixed { weights, q } => {
                let sum: f64 = weights.iter().sum();
                Ok(Replica {
                    weights: weights.iter().map(|w| w / sum).collect(),
                    overlaps: OverlapHandle::Constant { q: *q },
                })
            }
        }
    }
}

/// Auxiliary record of the final evolution step.
#[derive(Debug, Clone)]
pub struct ReplicaEvolution {
    /// The Gaussian draw of the last step, indexed by post-evolution rank.
    pub last_kappa_by_rank: Vec<f64>,
    /// Starting rank of the atom at each post-evolution rank.
    pub origin: Vec<usize>,
}

fn draw_kappa(
    handle: &OverlapHandle,
    n: usize,
    power: Power,
    sampler: FieldSampler,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    match power {
        Power::Free => Ok((0..n).map(|_| rng.sample(StandardNormal)).collect()),
        Power::Correlated(r) => match handle {
            OverlapHandle::Tree { labels, q_levels } => {
                if sampler == FieldSampler::Dense {
                    return Err(Error::invalid(
                        "dense field sampling not supported on tree replicas",
                    ));
                }
                field_from_labels(labels, q_levels, r, rng)
            }
            OverlapHandle::Constant { q } => {
                // κ_i = √(q^r) κ_c + √(1-q^r) κ_i^f, exact for constant Q.
                let qr = q.powi(r as i32);
                if qr < 0.0 {
                    return Err(Error::invalid(
                        "constant-overlap field needs q^r >= 0; use a dense matrix",
                    ));
                }
                let shared = (qr.sqrt()) * rng.sample::<f64, _>(StandardNormal);
                let idio = (1.0 - qr).max(0.0).sqrt();
                Ok((0..n)
                    .map(|_| shared + idio * rng.sample::<f64, _>(StandardNormal))
                    .collect())
            }
            OverlapHandle::Dense(q) => sample_field_dense(q, r, rng),
        },
    }
}

/// Applies `cfg.steps` evolution steps to a replica in place and reports the
/// last step's field values along with the origin of every final rank.
pub fn evolve_replica(
    rep: &mut Replica,
    cfg: &EvolutionConfig,
    rng: &mut Stream,
) -> Result<ReplicaEvolution> {
    let n = rep.weights.len();
    if cfg.steps == 0 {
        return Err(Error::invalid("evolution requires at least one step"));
    }
    let mut log_w: Vec<f64> = rep.weights.iter().map(|w| w.ln()).collect();
    let mut origin: Vec<usize> = (0..n).collect();
    let mut last_kappa: Vec<f64> = Vec::new();

    for _ in 0..cfg.steps {
        let kappa = draw_kappa(&rep.overlaps, n, cfg.power, cfg.field_sampler, rng)?;
        for rank in 0..n {
            let inc = cfg.psi.value(kappa[rank]);
            if !inc.is_finite() {
                return Err(Error::numeric("non-finite increment"));
            }
            log_w[rank] += inc;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| log_w[b].total_cmp(&log_w[a]).then(a.cmp(&b)));
        log_w = order.iter().map(|&o| log_w[o]).collect();
        origin = order.iter().map(|&o| origin[o]).collect();
        last_kappa = order.iter().map(|&o| kappa[o]).collect();
        match &mut rep.overlaps {
            OverlapHandle::Tree { labels, .. } => {
                for level in labels.iter_mut() {
                    *level = order.iter().map(|&o| level[o]).collect();
                }
            }
            OverlapHandle::Constant { .. } => {}
            OverlapHandle::Dense(q) => {
                let mut rank_of = vec![0usize; n];
                for (new_rank, &old) in order.iter().enumerate() {
                    rank_of[old] = new_rank;
                }
                *q = q.permuted(&rank_of);
            }
        }
    }

    rep.weights = crate::evolution::softmax_scaled(&log_w, 1.0)?;
    Ok(ReplicaEvolution {
        last_kappa_by_rank: last_kappa,
        origin,
    })
}
