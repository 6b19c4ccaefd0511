//! The random-overlap-structure data model and its structural algebra:
//! overlap matrices, Schur powers, monotone transforms, ultrametricity,
//! state spaces, factorization into indecomposable parts, paintbox blocks
//! and extraction of the directing (block-level) structure.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::pointproc::MassPartition;
use crate::{Error, Result};

/// Hard cap on the merged state-space size; beyond this the tolerance is
/// considered to produce an unbounded value set.
const STATE_CAP: usize = 1024;

/// A symmetric matrix of pairwise overlaps with unit diagonal.
///
/// Construction only fixes the shape; value-level invariants (symmetry,
/// unit diagonal, entries in `[-1, 1]`, positive semi-definiteness) are
/// checked by [`validate_rost`] so that defective data can be inspected
/// rather than rejected outright.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    n: usize,
    entries: Vec<f64>,
    psd_tolerance: f64,
}

impl OverlapMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::invalid("empty overlap matrix"));
        }
        let mut entries = Vec::with_capacity(n * n);
        for row in &rows {
            if row.len() != n {
                return Err(Error::invalid("overlap matrix must be square"));
            }
            entries.extend_from_slice(row);
        }
        Ok(OverlapMatrix {
            n,
            entries,
            psd_tolerance: default_psd_tolerance(n),
        })
    }

    /// Unit diagonal, constant off-diagonal value `q`.
    pub fn constant(n: usize, q: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("empty overlap matrix"));
        }
        let mut m = OverlapMatrix {
            n,
            entries: vec![q; n * n],
            psd_tolerance: default_psd_tolerance(n),
        };
        for i in 0..n {
            m.entries[i * n + i] = 1.0;
        }
        Ok(m)
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::constant(n, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.n + j] = v;
    }

    pub fn psd_tolerance(&self) -> f64 {
        self.psd_tolerance
    }

    pub fn with_psd_tolerance(mut self, tol: f64) -> Self {
        self.psd_tolerance = tol;
        self
    }

    /// Off-diagonal entries of the upper triangle, `(i, j, q_ij)` with `i < j`.
    pub fn upper_triangle(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| ((i + 1)..self.n).map(move |j| (i, j, self.get(i, j))))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| self.entries[i * self.n..(i + 1) * self.n].to_vec())
            .collect()
    }

    /// Minimum eigenvalue of the symmetrized matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let mut m = DMatrix::<f64>::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = 0.5 * (self.get(i, j) + self.get(j, i));
            }
        }
        m.symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    /// Dense row-major CSV, one row per line.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| format!("{}", self.get(i, j))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|t| t.trim().parse::<f64>()).collect();
            rows.push(row.map_err(|e| Error::invalid(format!("bad CSV entry: {e}")))?);
        }
        Self::from_rows(rows)
    }

    pub(crate) fn permuted(&self, rank_of: &[usize]) -> OverlapMatrix {
        // rank_of[i] = new position of old index i; new[m][n] = old[inv(m)][inv(n)].
        let n = self.n;
        let mut inv = vec![0usize; n];
        for (old, &new) in rank_of.iter().enumerate() {
            inv[new] = old;
        }
        let mut out = OverlapMatrix {
            n,
            entries: vec![0.0; n * n],
            psd_tolerance: self.psd_tolerance,
        };
        for m in 0..n {
            for k in 0..n {
                out.entries[m * n + k] = self.get(inv[m], inv[k]);
            }
        }
        out
    }
}

pub fn default_psd_tolerance(n: usize) -> f64 {
    1e-8 * n.max(1) as f64
}

/// A random overlap structure: ordered weights plus their overlap matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rost {
    pub xi: MassPartition,
    pub q: OverlapMatrix,
}

impl Rost {
    pub fn new(xi: MassPartition, q: OverlapMatrix) -> Result<Self> {
        if xi.len() != q.dim() {
            return Err(Error::invalid(format!(
                "partition has {} atoms but overlap matrix is {}x{}",
                xi.len(),
                q.dim(),
                q.dim()
            )));
        }
        Ok(Rost { xi, q })
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }
}

/// Outcome of [`validate_rost`]; reports, never rejects.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dims_match: bool,
    pub partition_ok: bool,
    pub partition_error: Option<String>,
    pub symmetric: bool,
    pub unit_diagonal: bool,
    pub entries_in_range: bool,
    pub min_eigenvalue: f64,
    pub psd_ok: bool,
    /// Distinct off-diagonal values at the default merge tolerance.
    pub distinct_off_diagonal: usize,
    pub valid: bool,
}

const SYM_TOL: f64 = 1e-12;

/// Checks every structural invariant of a ROSt and summarizes the findings.
pub fn validate_rost(r: &Rost) -> ValidationReport {
    let n = r.q.dim();
    let dims_match = r.xi.len() == n;
    let partition = r.xi.validate();
    let mut symmetric = true;
    let mut unit_diagonal = true;
    let mut entries_in_range = true;
    for i in 0..n {
        if (r.q.get(i, i) - 1.0).abs() > SYM_TOL {
            unit_diagonal = false;
        }
        for j in 0..n {
            let v = r.q.get(i, j);
            if (v - r.q.get(j, i)).abs() > SYM_TOL {
                symmetric = false;
            }
            if !v.is_finite() || v.abs() > 1.0 + SYM_TOL {
                entries_in_range = false;
            }
        }
    }
    let min_eigenvalue = r.q.min_eigenvalue();
    let psd_ok = min_eigenvalue >= -r.q.psd_tolerance();
    let distinct = state_space(&r.q, crate::DEFAULT_VALUE_TOL).values.len();
    ValidationReport {
        dims_match,
        partition_ok: partition.is_ok(),
        partition_error: partition.err().map(|e| e.to_string()),
        symmetric,
        unit_diagonal,
        entries_in_range,
        min_eigenvalue,
        psd_ok,
        distinct_off_diagonal: distinct,
        valid: dims_match
            && r.xi.validate().is_ok()
            && symmetric
            && unit_diagonal
            && entries_in_range
            && psd_ok,
    }
}

/// Entrywise `r`-th power. Unit diagonal and (by Schur's theorem) positive
/// semi-definiteness are preserved.
pub fn schur_power(q: &OverlapMatrix, r: u32) -> Result<OverlapMatrix> {
    if r == 0 {
        return Err(Error::invalid("Schur power requires r >= 1"));
    }
    let mut out = q.clone();
    for v in &mut out.entries {
        *v = v.powi(r as i32);
    }
    Ok(out)
}

/// Registered strictly increasing maps `[0, 1] → [0, 1]` with `f(1) = 1`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonotoneMap {
    Identity,
    /// `q ↦ q^gamma`, `gamma > 0`. Odd integer exponents extend to
    /// negative entries.
    Pow(f64),
}

impl MonotoneMap {
    fn check(&self) -> Result<()> {
        if let MonotoneMap::Pow(g) = self {
            if !(*g > 0.0 && g.is_finite()) {
                return Err(Error::invalid("power map requires a positive exponent"));
            }
        }
        Ok(())
    }

    fn admits_negative(&self) -> bool {
        match self {
            MonotoneMap::Identity => true,
            MonotoneMap::Pow(g) => g.fract() == 0.0 && (*g as i64) % 2 == 1,
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        match self {
            MonotoneMap::Identity => v,
            MonotoneMap::Pow(g) => {
                if v < 0.0 {
                    -(-v).powf(*g)
                } else {
                    v.powf(*g)
                }
            }
        }
    }
}

/// Entrywise image of the overlaps under a registered monotone map.
pub fn apply_monotone(q: &OverlapMatrix, f: MonotoneMap) -> Result<OverlapMatrix> {
    f.check()?;
    if !f.admits_negative() {
        for (i, j, v) in q.upper_triangle() {
            if v < 0.0 {
                return Err(Error::invalid(format!(
                    "entry ({i}, {j}) = {v} is negative and the map has no odd extension"
                )));
            }
        }
    }
    let mut out = q.clone();
    for v in &mut out.entries {
        *v = f.apply(*v);
    }
    Ok(out)
}

/// A triple violating the ultrametric inequality by more than the tolerance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UltrametricViolation {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    /// `min(q_ik, q_kj) - q_ij`.
    pub deficit: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UltrametricReport {
    pub ok: bool,
    pub violation_count: usize,
    /// At most [`UltrametricReport::MAX_LISTED`] witnesses.
    pub violations: Vec<UltrametricViolation>,
}

impl UltrametricReport {
    pub const MAX_LISTED: usize = 100;
}

/// Checks `q_ij >= min(q_ik, q_kj) - tol` over every triple.
pub fn ultrametric_check(q: &OverlapMatrix, tol: f64) -> UltrametricReport {
    let n = q.dim();
    let mut violations = Vec::new();
    let mut count = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let qij = q.get(i, j);
            for k in 0..n {
                if k == i || k == j {
                    continue;
                }
                let bound = q.get(i, k).min(q.get(k, j));
                if qij < bound - tol {
                    count += 1;
                    if violations.len() < UltrametricReport::MAX_LISTED {
                        violations.push(UltrametricViolation {
                            i,
                            j,
                            k,
                            deficit: bound - qij,
                        });
                    }
                }
            }
        }
    }
    UltrametricReport {
        ok: count == 0,
        violation_count: count,
        violations,
    }
}

/// The merged off-diagonal value set and the per-row value sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateSpace {
    /// Representative (smallest member) of each merged value group, ascending.
    pub values: Vec<f64>,
    /// Sorted group indices present in each row.
    pub row_values: Vec<Vec<usize>>,
    /// Whether every row sees the full value set.
    pub indecomposable: bool,
}

/// Clusters the off-diagonal values into groups of diameter at most
/// `value_tol` and reports the global and per-row sets.
pub fn state_space(q: &OverlapMatrix, value_tol: f64) -> StateSpace {
    let n = q.dim();
    let mut all: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for (_, _, v) in q.upper_triangle() {
        all.push(v);
    }
    let group_min = group_values(&all, value_tol);
    let mut row_values: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut present = vec![false; group_min.len()];
        for j in 0..n {
            if j != i {
                present[group_of(&group_min, q.get(i, j))] = true;
            }
        }
        row_values.push((0..group_min.len()).filter(|&g| present[g]).collect());
    }
    let full: Vec<usize> = (0..group_min.len()).collect();
    let indecomposable = row_values.iter().all(|r| *r == full);
    StateSpace {
        values: group_min,
        row_values,
        indecomposable,
    }
}

/// Greedy grouping of sorted values into clusters of diameter <= tol;
/// returns each cluster's smallest member.
fn group_values(values: &[f64], tol: f64) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut mins = Vec::new();
    for v in sorted {
        match mins.last() {
            Some(&m) if v - m <= tol => {}
            _ => mins.push(v),
        }
    }
    mins
}

fn group_of(group_min: &[f64], v: f64) -> usize {
    match group_min.binary_search_by(|m| m.total_cmp(&v)) {
        Ok(g) => g,
        Err(0) => 0,
        Err(pos) => pos - 1,
    }
}

/// One indecomposable factor of a ROSt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QFactor {
    /// Original indices of the factor's atoms, ascending.
    pub indices: Vec<usize>,
    /// The factor with weights renormalized to a proper partition.
    pub rost: Rost,
    /// Fraction of the stored mass carried by this factor.
    pub mass_share: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Factorization {
    pub factors: Vec<QFactor>,
    /// Partition-refinement passes performed (bounded by the state count).
    pub rounds: usize,
    pub state_count: usize,
}

/// Iteratively partitions the indices by their row value set until every
/// part is indecomposable.
pub fn q_factorize(r: &Rost, value_tol: f64) -> Result<Factorization> {
    let n = r.dim();
    let global = state_space(&r.q, value_tol);
    let state_count = global.values.len();
    if state_count > STATE_CAP {
        return Err(Error::invalid(format!(
            "state space has {state_count} merged values at tolerance {value_tol:.1e}; \
             refusing factorization (cap {STATE_CAP})"
        )));
    }

    let mut active: Vec<Vec<usize>> = vec![(0..n).collect()];
    let mut finished: Vec<Vec<usize>> = Vec::new();
    let mut rounds = 0usize;
    while !active.is_empty() {
        rounds += 1;
        if rounds > state_count + 1 {
            return Err(Error::structural(
                "factorization failed to stabilize within the state-count bound",
            ));
        }
        let mut next: Vec<Vec<usize>> = Vec::new();
        for part in active.drain(..) {
            let sub = submatrix(&r.q, &part);
            let ss = state_space(&sub, value_tol);
            if ss.indecomposable {
                finished.push(part);
                continue;
            }
            // Group the part's rows by their value-set tag.
            let mut by_tag: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
            for (local, &orig) in part.iter().enumerate() {
                by_tag.entry(ss.row_values[local].clone()).or_default().push(orig);
            }
            next.extend(by_tag.into_values());
        }
        active = next;
    }

    finished.sort_by_key(|p| p[0]);
    let stored_total: f64 = r.xi.weights().iter().sum();
    let mut factors = Vec::with_capacity(finished.len());
    for indices in finished {
        let sub_weights: Vec<f64> = indices.iter().map(|&i| r.xi.weights()[i]).collect();
        let mass_share = sub_weights.iter().sum::<f64>() / stored_total;
        let xi = MassPartition::proper(sub_weights)?;
        let q = submatrix(&r.q, &indices);
        factors.push(QFactor {
            indices,
            rost: Rost::new(xi, q)?,
            mass_share,
        });
    }
    Ok(Factorization {
        factors,
        rounds,
        state_count,
    })
}

fn submatrix(q: &OverlapMatrix, indices: &[usize]) -> OverlapMatrix {
    let m = indices.len();
    let mut entries = Vec::with_capacity(m * m);
    for &i in indices {
        for &j in indices {
            entries.push(q.get(i, j));
        }
    }
    OverlapMatrix {
        n: m,
        entries,
        psd_tolerance: q.psd_tolerance,
    }
}

/// Blocks of the top-overlap equivalence relation with their densities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockPartition {
    /// Disjoint index sets covering the sample, ordered by decreasing density.
    pub blocks: Vec<Vec<usize>>,
    /// Counting fraction of each block.
    pub count_densities: Vec<f64>,
    /// ξ-mass of each block relative to the stored mass, when weights are given.
    pub mass_densities: Option<Vec<f64>>,
    /// The largest off-diagonal value.
    pub q_max: f64,
}

/// Partitions the indices by the relation `q_ij >= q_max - value_tol` and
/// verifies that the relation is transitive on the sample.
///
/// Decomposable matrices are rejected, with one allowance for finite
/// samples: a row may miss the *top* state when its atom is the only
/// sampled member of its block, so only the non-top states are required in
/// every row.
pub fn paintbox_blocks(
    q: &OverlapMatrix,
    value_tol: f64,
    xi: Option<&MassPartition>,
) -> Result<BlockPartition> {
    let n = q.dim();
    if n < 2 {
        return Err(Error::invalid("paintbox blocks require at least 2 atoms"));
    }
    if let Some(x) = xi {
        if x.len() != n {
            return Err(Error::invalid("weights do not match the matrix dimension"));
        }
    }
    let ss = state_space(q, value_tol);
    if ss.values.len() > STATE_CAP {
        return Err(Error::invalid("state space too large at this tolerance"));
    }
    let top_group = ss.values.len() - 1;
    for (i, row) in ss.row_values.iter().enumerate() {
        let misses_non_top = (0..top_group).any(|g| !row.contains(&g));
        if misses_non_top {
            return Err(Error::structural(format!(
                "row {i} misses a non-top overlap value: the matrix is decomposable \
                 (or sampled too shallowly); factorize before extracting blocks"
            )));
        }
    }
    let q_max = q
        .upper_triangle()
        .map(|(_, _, v)| v)
        .fold(f64::NEG_INFINITY, f64::max);

    // Connected components of the relation.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let related = |v: f64| v >= q_max - value_tol;
    for (i, j, v) in q.upper_triangle() {
        if related(v) {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a] = b;
            }
        }
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        members.entry(root).or_default().push(i);
    }
    // The relation must coincide with its transitive closure.
    for (i, j, v) in q.upper_triangle() {
        let same = find(&mut parent, i) == find(&mut parent, j);
        if same && !related(v) {
            return Err(Error::structural(format!(
                "top-overlap relation is not transitive: indices {i} and {j} are \
                 connected but q_ij = {v} < q_max - tol = {}",
                q_max - value_tol
            )));
        }
    }

    let mut blocks: Vec<Vec<usize>> = members.into_values().collect();
    let density = |b: &Vec<usize>| -> f64 {
        match xi {
            Some(x) => {
                let stored: f64 = x.weights().iter().sum();
                b.iter().map(|&i| x.weights()[i]).sum::<f64>() / stored
            }
            None => b.len() as f64 / n as f64,
        }
    };
    blocks.sort_by(|a, b| density(b).total_cmp(&density(a)).then(a[0].cmp(&b[0])));
    let count_densities: Vec<f64> = blocks.iter().map(|b| b.len() as f64 / n as f64).collect();
    let mass_densities = xi.map(|x| {
        let stored: f64 = x.weights().iter().sum();
        blocks
            .iter()
            .map(|b| b.iter().map(|&i| x.weights()[i]).sum::<f64>() / stored)
            .collect()
    });
    Ok(BlockPartition {
        blocks,
        count_densities,
        mass_densities,
        q_max,
    })
}

/// The block-level structure extracted from a sampled ROSt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectingRost {
    /// Block masses, descending, renormalized to a proper partition.
    pub xi_tilde: MassPartition,
    /// Block-level overlaps divided by `q_max`.
    pub q_tilde: OverlapMatrix,
    /// The scale `q_max`.
    pub scale: f64,
    /// The underlying blocks (original indices).
    pub blocks: Vec<Vec<usize>>,
}

/// Extracts the directing structure: paintbox blocks as atoms, block masses
/// as weights, and cross-block overlaps rescaled by `q_max`.
///
/// Cross-block overlaps are required to be constant over all representative
/// pairs within `value_tol`; the representative is the first pair's value so
/// that exact constructions stay exact.
pub fn extract_directing(r: &Rost, value_tol: f64) -> Result<DirectingRost> {
    let bp = paintbox_blocks(&r.q, value_tol, Some(&r.xi))?;
    if bp.q_max.is_nan() || bp.q_max <= 0.0 {
        return Err(Error::invalid(format!(
            "q_max = {} is not positive; the sample has no discrete directing structure",
            bp.q_max
        )));
    }
    let k = bp.blocks.len();
    let mut q_tilde = OverlapMatrix::constant(k, 0.0)?;
    for a in 0..k {
        for b in (a + 1)..k {
            let mut rep: Option<f64> = None;
            for &i in &bp.blocks[a] {
                for &j in &bp.blocks[b] {
                    let v = r.q.get(i.min(j), i.max(j));
                    match rep {
                        None => rep = Some(v),
                        Some(first) => {
                            if (v - first).abs() > value_tol {
                                return Err(Error::structural(format!(
                                    "cross-block overlap between blocks {a} and {b} is not \
                                     constant: {first} vs {v}"
                                )));
                            }
                        }
                    }
                }
            }
            let value = rep.expect("blocks are nonempty") / bp.q_max;
            q_tilde.set(a, b, value);
            q_tilde.set(b, a, value);
        }
    }
    let masses = bp
        .mass_densities
        .clone()
        .expect("extraction always attaches weights");
    let xi_tilde = MassPartition::proper(masses)?;
    Ok(DirectingRost {
        xi_tilde,
        q_tilde,
        scale: bp.q_max,
        blocks: bp.blocks,
    })
}

/// The weighted empirical overlap law `Σ_{i≠j} ξ_i ξ_j δ_{q_ij}`, normalized,
/// as `(value, mass)` pairs merged at `value_tol` and sorted by value.
pub fn overlap_histogram(r: &Rost, value_tol: f64) -> Result<Vec<(f64, f64)>> {
    let n = r.dim();
    if n < 2 {
        return Err(Error::invalid("overlap histogram requires at least 2 atoms"));
    }
    let w = r.xi.weights();
    let all: Vec<f64> = r.q.upper_triangle().map(|(_, _, v)| v).collect();
    let group_min = group_values(&all, value_tol);
    let mut mass = vec![0.0; group_min.len()];
    let mut total = 0.0;
    for (i, j, v) in r.q.upper_triangle() {
        let pair = w[i] * w[j];
        mass[group_of(&group_min, v)] += pair;
        total += pair;
    }
    if total <= 0.0 {
        return Err(Error::numeric("degenerate pair mass"));
    }
    Ok(group_min
        .into_iter()
        .zip(mass.into_iter().map(|m| m / total))
        .collect())
}
