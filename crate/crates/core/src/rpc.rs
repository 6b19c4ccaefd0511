//! Hierarchical Poisson cascades.
//!
//! A `k`-level cascade is a depth-`k` tree of power-tail Poisson processes:
//! the vertex at depth `l` owns an independent process with tail index
//! `x_{l+1}`, and each leaf weight is the product of the atom positions along
//! its root-to-leaf path, normalized over all leaves. The overlap between two
//! leaves is `q_{l+1}` where `l` is the depth of their deepest common
//! ancestor, which makes the overlap matrix ultrametric by construction.
//!
//! Only the top `M_l` atoms per vertex are kept. The unsampled leaf mass
//! below each deepest process is folded into the normalizer through the same
//! conditional-mean correction used for truncated Poisson–Dirichlet
//! partitions; unsampled subtrees at the upper levels are not corrected for,
//! so upper branching counts should be generous enough to make their mass
//! negligible (the defaults used by the tests keep it orders of magnitude
//! below the leaf-level correction).

use rand::Rng;
use serde::Serialize;

use crate::pointproc::{sample_power_tail_poisson, tail_mass_correction, MassPartition};
use crate::rost::{OverlapMatrix, Rost};
use crate::{Error, Result};

/// Total leaves allowed for tree-only sampling.
pub const LEAF_BUDGET: usize = 1 << 22;
/// Total leaves allowed when a dense overlap matrix is materialized.
pub const DENSE_LEAF_BUDGET: usize = 4096;

/// Parameters of a `k`-level cascade.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RpcSpec {
    /// Tail indices `0 < x_1 < … < x_k < 1`.
    pub x_levels: Vec<f64>,
    /// Overlap values `0 <= q_1 < … < q_k < 1`.
    pub q_levels: Vec<f64>,
    /// Atoms kept per vertex at each depth (`branching[l-1]` children for
    /// depth-`(l-1)` vertices).
    pub branching: Vec<usize>,
}

impl RpcSpec {
    pub fn new(x_levels: Vec<f64>, q_levels: Vec<f64>, branching: Vec<usize>) -> Result<Self> {
        let spec = RpcSpec {
            x_levels,
            q_levels,
            branching,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Uniform branching `m` at every level.
    pub fn uniform(x_levels: Vec<f64>, q_levels: Vec<f64>, m: usize) -> Result<Self> {
        let k = x_levels.len();
        Self::new(x_levels, q_levels, vec![m; k])
    }

    pub fn k(&self) -> usize {
        self.x_levels.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.branching.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.x_levels.len();
        if k == 0 {
            return Err(Error::invalid("a cascade needs at least one level"));
        }
        if self.q_levels.len() != k || self.branching.len() != k {
            return Err(Error::invalid("x_levels, q_levels and branching must have equal length"));
        }
        for (i, &x) in self.x_levels.iter().enumerate() {
            if !(x > 0.0 && x < 1.0) {
                return Err(Error::invalid(format!("x_{} = {x} outside (0, 1)", i + 1)));
            }
            if i > 0 && x <= self.x_levels[i - 1] {
                return Err(Error::invalid("x levels must be strictly increasing"));
            }
        }
        for (i, &q) in self.q_levels.iter().enumerate() {
            if !(0.0..1.0).contains(&q) {
                return Err(Error::invalid(format!("q_{} = {q} outside [0, 1)", i + 1)));
            }
            if i > 0 && q <= self.q_levels[i - 1] {
                return Err(Error::invalid("q levels must be strictly increasing"));
            }
        }
        if self.branching.iter().any(|&m| m < 2) {
            return Err(Error::invalid("branching must keep at least 2 atoms per vertex"));
        }
        Ok(())
    }

    /// The step function whose jumps encode the cascade parameters: 0 below
    /// `q_1`, then `x_l` on `[q_l, q_{l+1})` with `q_{k+1} = 1`.
    pub fn x_of_q(&self, q: f64) -> f64 {
        let mut value = 0.0;
        for (l, &ql) in self.q_levels.iter().enumerate() {
            if q >= ql {
                value = self.x_levels[l];
            }
        }
        if q >= 1.0 {
            value = 1.0;
        }
        value
    }
}

/// A realized cascade: per-vertex Poisson atoms, ranked leaf weights,
/// leaf addresses and the ancestry labels of every rank.
#[derive(Debug, Clone, Serialize)]
pub struct CascadeTree {
    spec: RpcSpec,
    /// `node_atoms[l][v]` are the atoms of the process owned by vertex `v`
    /// at depth `l` (descending within each vertex).
    node_atoms: Vec<Vec<Vec<f64>>>,
    /// Leaf address per rank: the path `(a_1, …, a_k)`.
    addresses: Vec<Vec<usize>>,
    /// `level_labels[l-1][rank]` is the flattened ancestor vertex id at
    /// depth `l`, for `l = 1..=k`.
    level_labels: Vec<Vec<usize>>,
    /// Normalized leaf weights, descending.
    weights: Vec<f64>,
    normalizer: f64,
    remainder_mass: f64,
}

impl CascadeTree {
    pub fn spec(&self) -> &RpcSpec {
        &self.spec
    }

    pub fn k(&self) -> usize {
        self.spec.k()
    }

    pub fn leaf_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn remainder_mass(&self) -> f64 {
        self.remainder_mass
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn node_atoms(&self) -> &[Vec<Vec<f64>>] {
        &self.node_atoms
    }

    /// The rank-to-address map `Π`.
    pub fn addresses(&self) -> &[Vec<usize>] {
        &self.addresses
    }

    /// Ancestor vertex ids by depth: `level_labels()[l-1][rank]`.
    pub fn level_labels(&self) -> &[Vec<usize>] {
        &self.level_labels
    }

    /// Depth of the deepest common ancestor of two ranked leaves.
    pub fn shared_level(&self, i: usize, j: usize) -> usize {
        let (a, b) = (&self.addresses[i], &self.addresses[j]);
        let mut l = 0;
        while l < a.len() && a[l] == b[l] {
            l += 1;
        }
        l
    }

    /// Overlap of two ranked leaves: `q_{l(i,j)+1}`, or 1 on the diagonal.
    pub fn overlap(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        let l = self.shared_level(i, j);
        self.spec.q_levels[l]
    }

    pub fn mass_partition(&self) -> Result<MassPartition> {
        MassPartition::with_remainder(
            self.weights.clone(),
            self.remainder_mass,
            Some(self.normalizer),
        )
    }

    /// Dense overlap matrix of the `top_n` leading leaves.
    pub fn to_overlap_matrix(&self, top_n: usize) -> Result<OverlapMatrix> {
        let n = top_n.min(self.leaf_count());
        if n == 0 {
            return Err(Error::invalid("empty overlap matrix requested"));
        }
        let mut q = OverlapMatrix::identity(n)?;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = self.overlap(i, j);
                q.set(i, j, v);
                q.set(j, i, v);
            }
        }
        Ok(q)
    }

    /// ROSt view of the `top_n` leading leaves; the weight of everything
    /// below them is reported as remainder mass.
    pub fn to_rost(&self, top_n: usize) -> Result<Rost> {
        let n = top_n.min(self.leaf_count());
        let stored: Vec<f64> = self.weights[..n].to_vec();
        let sum: f64 = stored.iter().sum();
        let xi = MassPartition::with_remainder(stored, 1.0 - sum, Some(self.normalizer))?;
        Rost::new(xi, self.to_overlap_matrix(n)?)
    }

    /// Pair mass carried by each overlap value: entry `l-1` is the
    /// ξ⊗ξ-mass of pairs with overlap `q_l`, normalized over distinct pairs.
    /// Linear in the leaf count.
    pub fn level_pair_masses(&self) -> Vec<f64> {
        level_pair_masses(&self.weights, &self.level_labels)
    }
}

/// Same-block pair masses per depth from weights and ancestry labels.
///
/// For depth `l` let `a_l = Σ_B w_B² - Σ_i w_i²` over the blocks of the
/// depth-`l` partition; the mass at overlap `q_l` is `a_{l-1} - a_l`
/// normalized by `a_0`.
pub fn level_pair_masses(weights: &[f64], level_labels: &[Vec<usize>]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    let a0 = total * total - sum_sq;
    if a0 <= 0.0 {
        return vec![0.0; level_labels.len()];
    }
    let mut a = Vec::with_capacity(level_labels.len() + 1);
    a.push(a0);
    for labels in level_labels {
        let max_label = labels.iter().copied().max().unwrap_or(0);
        let mut block_sums = vec![0.0; max_label + 1];
        for (w, &b) in weights.iter().zip(labels) {
            block_sums[b] += w;
        }
        let same: f64 = block_sums.iter().map(|s| s * s).sum::<f64>() - sum_sq;
        a.push(same.max(0.0));
    }
    (0..level_labels.len()).map(|l| (a[l] - a[l + 1]) / a0).collect()
}

/// Samples a cascade tree within [`LEAF_BUDGET`].
pub fn sample_cascade(spec: &RpcSpec, rng: &mut impl Rng) -> Result<CascadeTree> {
    spec.validate()?;
    if spec.leaf_count() > LEAF_BUDGET {
        return Err(Error::invalid(format!(
            "{} leaves exceed the leaf budget {LEAF_BUDGET}",
            spec.leaf_count()
        )));
    }
    let k = spec.k();

    // Per-vertex Poisson processes: depth-l vertices own index x_{l+1}.
    let mut node_atoms: Vec<Vec<Vec<f64>>> = Vec::with_capacity(k);
    let mut vertices_at = 1usize;
    for l in 0..k {
        let mut level = Vec::with_capacity(vertices_at);
        for _ in 0..vertices_at {
            level.push(sample_power_tail_poisson(spec.x_levels[l], spec.branching[l], rng)?);
        }
        node_atoms.push(level);
        vertices_at *= spec.branching[l];
    }

    // Path products, level by level.
    let mut prefix: Vec<f64> = vec![1.0];
    for level in node_atoms.iter() {
        let m = level[0].len();
        let mut next = Vec::with_capacity(prefix.len() * m);
        for (v, p) in prefix.iter().enumerate() {
            for atom in &level[v] {
                next.push(p * atom);
            }
        }
        prefix = next;
    }
    let products = prefix;

    // Conditional-mean correction for the unsampled leaves of each deepest
    // process; the prefix of vertex v at depth k-1 is the product of the
    // first k-1 path factors.
    let x_k = spec.x_levels[k - 1];
    let mut bottom_prefix: Vec<f64> = vec![1.0];
    for level in node_atoms.iter().take(k - 1) {
        let m = level[0].len();
        let mut next = Vec::with_capacity(bottom_prefix.len() * m);
        for (v, p) in bottom_prefix.iter().enumerate() {
            for atom in &level[v] {
                next.push(p * atom);
            }
        }
        bottom_prefix = next;
    }
    let mut correction = 0.0;
    for (v, p) in bottom_prefix.iter().enumerate() {
        let last = *node_atoms[k - 1][v].last().expect("branching >= 2");
        correction += p * tail_mass_correction(x_k, last);
    }

    let stored: f64 = products.iter().sum();
    let normalizer = stored + correction;

    // Rank the leaves; ties (measure zero) break by address order.
    let mut order: Vec<usize> = (0..products.len()).collect();
    order.sort_by(|&a, &b| products[b].total_cmp(&products[a]).then(a.cmp(&b)));

    let radices = &spec.branching;
    let mut weights = Vec::with_capacity(order.len());
    let mut addresses = Vec::with_capacity(order.len());
    let mut level_labels: Vec<Vec<usize>> = vec![Vec::with_capacity(order.len()); k];
    for &leaf in &order {
        weights.push(products[leaf] / normalizer);
        let mut addr = vec![0usize; k];
        let mut rem = leaf;
        for l in (0..k).rev() {
            addr[l] = rem % radices[l];
            rem /= radices[l];
        }
        let mut vertex = 0usize;
        for l in 0..k {
            vertex = vertex * radices[l] + addr[l];
            level_labels[l].push(vertex);
        }
        addresses.push(addr);
    }

    Ok(CascadeTree {
        spec: spec.clone(),
        node_atoms,
        addresses,
        level_labels,
        weights,
        normalizer,
        remainder_mass: correction / normalizer,
    })
}

/// Samples a cascade and materializes the full dense ROSt. Rejected when the
/// leaf count exceeds [`DENSE_LEAF_BUDGET`]; sample the tree alone for
/// larger systems.
pub fn sample_rpc(spec: &RpcSpec, rng: &mut impl Rng) -> Result<(Rost, CascadeTree)> {
    spec.validate()?;
    if spec.leaf_count() > DENSE_LEAF_BUDGET {
        return Err(Error::invalid(format!(
            "{} leaves exceed the dense budget {DENSE_LEAF_BUDGET}; use sample_cascade",
            spec.leaf_count()
        )));
    }
    let tree = sample_cascade(spec, rng)?;
    let rost = Rost::new(tree.mass_partition()?, tree.to_overlap_matrix(tree.leaf_count())?)?;
    Ok((rost, tree))
}

/// Draws the tree-structured Gaussian field with covariance `Q^{*r}`:
/// independent vertex increments of variance `q_{l+1}^r - q_l^r`
/// (with `q_0 = 0`, `q_{k+1} = 1`), summed along each leaf's path.
/// Returns one value per ranked leaf; linear in the tree size.
pub fn tree_gaussian_field(
    tree: &CascadeTree,
    q_levels: &[f64],
    r: u32,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    field_from_labels(&tree.level_labels, q_levels, r, rng)
}

/// The same field for an arbitrary set of leaves described by their ancestry
/// labels (`labels[l-1][i]` = depth-`l` vertex of leaf `i`). Labels need not
/// be dense: one increment is drawn per distinct vertex, in sorted order.
pub fn field_from_labels(
    labels: &[Vec<usize>],
    q_levels: &[f64],
    r: u32,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let k = labels.len();
    if k == 0 || q_levels.len() != k {
        return Err(Error::invalid("one overlap level per cascade depth required"));
    }
    if r == 0 {
        return Err(Error::invalid("field power must be at least 1"));
    }
    let n = labels[0].len();
    if labels.iter().any(|l| l.len() != n) {
        return Err(Error::invalid("label vectors must have equal length"));
    }
    let powered: Vec<f64> = q_levels.iter().map(|q| q.powi(r as i32)).collect();
    let mut sigmas = Vec::with_capacity(k + 1);
    let mut prev = 0.0;
    for &p in &powered {
        let var = p - prev;
        if var < -1e-12 {
            return Err(Error::invalid("q levels must be nondecreasing"));
        }
        sigmas.push(var.max(0.0).sqrt());
        prev = p;
    }
    sigmas.push((1.0 - prev).max(0.0).sqrt());

    let root: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * sigmas[0];
    let mut field = vec![root; n];
    let mut distinct: Vec<usize> = Vec::new();
    for (depth, level) in labels.iter().enumerate() {
        let sigma = sigmas[depth + 1];
        distinct.clear();
        distinct.extend_from_slice(level);
        distinct.sort_unstable();
        distinct.dedup();
        let draws: Vec<f64> = distinct
            .iter()
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma)
            .collect();
        for (i, &v) in level.iter().enumerate() {
            let slot = distinct.binary_search(&v).expect("label present");
            field[i] += draws[slot];
        }
    }
    Ok(field)
}
