//! The correlated evolution of random overlap structures and the analytic
//! transforms of the increment function.
//!
//! One evolution step multiplies each weight by `e^{ψ(κ_i)}`, where `κ` is a
//! centered Gaussian field with covariance `Q^{*r}` (entrywise power) or, in
//! the free case, i.i.d. standard normal. The weights are renormalized and
//! reordered, and the overlap matrix is conjugated by the reordering
//! permutation. All weight arithmetic happens in log space.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::pointproc::MassPartition;
use crate::quad::{gauss_expect2_adaptive, gauss_expect_adaptive, TOL_1D, TOL_2D};
use crate::rost::{schur_power, OverlapMatrix, Rost};
use crate::rpc::{field_from_labels, CascadeTree};
use crate::{Error, Result};

/// An admissible increment function: a registered shape, an output scale,
/// and an optional affine normalization to mean zero and unit second moment
/// under the standard normal law.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsiModel {
    kind: PsiKind,
    scale: f64,
    offset: f64,
    denom: f64,
    normalized: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiKind {
    /// `ψ(z) = scale · z`
    Linear,
    /// `ψ(z) = scale · log cosh z`
    LogCosh,
    /// Piecewise-linear interpolation of a sampled smooth function, clamped
    /// to the edge values outside the table (hence bounded and admissible).
    Tabulated { xs: Vec<f64>, ys: Vec<f64> },
}

impl PsiModel {
    pub fn linear(scale: f64) -> Self {
        PsiModel {
            kind: PsiKind::Linear,
            scale,
            offset: 0.0,
            denom: 1.0,
            normalized: false,
        }
    }

    pub fn log_cosh(scale: f64) -> Self {
        PsiModel {
            kind: PsiKind::LogCosh,
            scale,
            offset: 0.0,
            denom: 1.0,
            normalized: false,
        }
    }

    pub fn tabulated(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::invalid("a table needs at least two points"));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("table abscissas must be strictly increasing"));
        }
        Ok(PsiModel {
            kind: PsiKind::Tabulated { xs, ys },
            scale: 1.0,
            offset: 0.0,
            denom: 1.0,
            normalized: false,
        })
    }

    /// Looks up a registered shape by name ("linear" or "log-cosh").
    pub fn by_name(name: &str, scale: f64) -> Result<Self> {
        match name {
            "linear" => Ok(Self::linear(scale)),
            "log-cosh" | "logcosh" => Ok(Self::log_cosh(scale)),
            other => Err(Error::invalid(format!("unknown increment function '{other}'"))),
        }
    }

    fn raw(&self, z: f64) -> f64 {
        let base = match &self.kind {
            PsiKind::Linear => z,
            PsiKind::LogCosh => z.abs() + (-2.0 * z.abs()).exp().ln_1p() - std::f64::consts::LN_2,
            PsiKind::Tabulated { xs, ys } => interp_clamped(xs, ys, z),
        };
        self.scale * base
    }

    /// `ψ(z)`, after normalization when enabled.
    pub fn value(&self, z: f64) -> f64 {
        (self.raw(z) - self.offset) / self.denom
    }

    /// `ψ'(z)` for the differentiable shapes.
    pub fn derivative(&self, z: f64) -> Result<f64> {
        let base = match &self.kind {
            PsiKind::Linear => 1.0,
            PsiKind::LogCosh => z.tanh(),
            PsiKind::Tabulated { .. } => {
                return Err(Error::invalid("tabulated increments carry no derivative"))
            }
        };
        Ok(self.scale * base / self.denom)
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn kind(&self) -> &PsiKind {
        &self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// For a purely linear model, its effective output slope.
    pub fn linear_slope(&self) -> Option<f64> {
        match self.kind {
            PsiKind::Linear => Some(self.scale / self.denom),
            _ => None,
        }
    }

    /// The model for `c · ψ`; any normalization is kept as part of ψ, so the
    /// result is no longer flagged as normalized.
    pub fn scaled_by(&self, c: f64) -> Self {
        PsiModel {
            kind: self.kind.clone(),
            scale: self.scale * c,
            offset: self.offset * c,
            denom: self.denom,
            normalized: false,
        }
    }

    /// Recenters to mean zero and rescales to unit second moment under the
    /// standard normal law. Rejected for (numerically) constant functions.
    pub fn normalized(&self) -> Result<Self> {
        let (offset, denom) = match self.kind {
            // Closed form keeps the linear case exact.
            PsiKind::Linear => (0.0, self.scale.abs()),
            // The spectral rule stalls on the interpolation kinks.
            PsiKind::Tabulated { .. } => {
                let mean = crate::quad::gauss_expect_grid(|z| self.raw(z));
                let var = crate::quad::gauss_expect_grid(|z| (self.raw(z) - mean).powi(2));
                (mean, var.sqrt())
            }
            PsiKind::LogCosh => {
                let mean = gauss_expect_adaptive(|z| self.raw(z), TOL_1D)?;
                let var = gauss_expect_adaptive(|z| (self.raw(z) - mean).powi(2), TOL_1D)?;
                (mean, var.sqrt())
            }
        };
        if denom.is_nan() || denom <= 1e-12 {
            return Err(Error::invalid("cannot normalize a constant increment function"));
        }
        Ok(PsiModel {
            kind: self.kind.clone(),
            scale: self.scale,
            offset,
            denom,
            normalized: true,
        })
    }

    /// Verifies `g(t) < ∞` on a grid of exponents.
    pub fn check_admissible(&self, grid: &[f64]) -> Result<()> {
        for &t in grid {
            g_moment(self, t)?;
        }
        Ok(())
    }
}

fn interp_clamped(xs: &[f64], ys: &[f64], z: f64) -> f64 {
    if z <= xs[0] {
        return ys[0];
    }
    if z >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let hi = xs.partition_point(|&x| x < z).max(1);
    let (x0, x1) = (xs[hi - 1], xs[hi]);
    let t = (z - x0) / (x1 - x0);
    ys[hi - 1] + t * (ys[hi] - ys[hi - 1])
}

/// The Gaussian exponential moment `g(t) = E[e^{t ψ(Z)}]`.
pub fn g_moment(psi: &PsiModel, t: f64) -> Result<f64> {
    let g = gauss_expect_adaptive(|z| (t * psi.value(z)).exp(), TOL_1D)?;
    if !(g.is_finite() && g > 0.0) {
        return Err(Error::numeric(format!("exponential moment diverges at t = {t}")));
    }
    Ok(g)
}

/// Covariance power driving one evolution step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Power {
    /// Gaussian field with covariance `Q^{*r}`.
    Correlated(u32),
    /// Independent standard normal increments.
    Free,
}

/// How the Gaussian field is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldSampler {
    /// Tree increments when ancestry labels are available, else dense.
    #[default]
    Auto,
    Dense,
    Tree,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub psi: PsiModel,
    pub power: Power,
    pub steps: usize,
    pub field_sampler: FieldSampler,
    /// Keep the per-step increment record (otherwise only the last step).
    pub retain_increments: bool,
}

impl EvolutionConfig {
    pub fn new(psi: PsiModel, power: Power) -> Self {
        EvolutionConfig {
            psi,
            power,
            steps: 1,
            field_sampler: FieldSampler::Auto,
            retain_increments: false,
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn retaining_increments(mut self) -> Self {
        self.retain_increments = true;
        self
    }
}

/// Outcome of an evolution run.
#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub rost: Rost,
    /// `permutation[i]` is the final rank of the atom that started at rank `i`.
    pub permutation: Vec<usize>,
    /// Realized increments `ψ(κ)` per step, indexed by starting rank;
    /// one entry per step when retained, otherwise only the last step.
    pub increments: Vec<Vec<f64>>,
}

/// Draws a centered Gaussian vector with covariance `Q^{*r}` through a
/// Cholesky factorization, escalating a diagonal jitter when the factor
/// fails, up to `1e-8`.
pub fn sample_field_dense(q: &OverlapMatrix, r: u32, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let powered = schur_power(q, r)?;
    let n = powered.dim();
    let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = 0.5 * (powered.get(i, j) + powered.get(j, i));
        }
    }
    for jitter in [0.0, 1e-12, 1e-10, 1e-8] {
        let mut attempt = m.clone();
        for i in 0..n {
            attempt[(i, i)] += jitter;
        }
        if let Some(chol) = attempt.cholesky() {
            let z = nalgebra::DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let v = chol.l() * z;
            return Ok(v.iter().copied().collect());
        }
    }
    Err(Error::numeric(
        "covariance is indefinite beyond the jitter budget; matrix is not PSD",
    ))
}

/// One Gaussian field draw for the configured power and sampler.
fn draw_field(
    n: usize,
    q: &OverlapMatrix,
    labels: Option<&[Vec<usize>]>,
    q_levels: Option<&[f64]>,
    cfg: &EvolutionConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    match cfg.power {
        Power::Free => Ok((0..n).map(|_| rng.sample(StandardNormal)).collect()),
        Power::Correlated(r) => {
            let use_tree = match cfg.field_sampler {
                FieldSampler::Auto => labels.is_some(),
                FieldSampler::Tree => {
                    if labels.is_none() {
                        return Err(Error::invalid(
                            "tree field sampling requires an attached cascade tree",
                        ));
                    }
                    true
                }
                FieldSampler::Dense => false,
            };
            if use_tree {
                field_from_labels(labels.unwrap(), q_levels.unwrap(), r, rng)
            } else {
                sample_field_dense(q, r, rng)
            }
        }
    }
}

/// Runs `cfg.steps` evolution steps on a ROSt. When a cascade tree is
/// attached (and covers the stored atoms as its leading leaves), correlated
/// fields are drawn through the tree in linear time.
pub fn evolve(
    rost: &Rost,
    tree: Option<&CascadeTree>,
    cfg: &EvolutionConfig,
    rng: &mut impl Rng,
) -> Result<EvolutionResult> {
    let n = rost.dim();
    if cfg.steps == 0 {
        return Err(Error::invalid("evolution requires at least one step"));
    }
    if let Some(t) = tree {
        if t.leaf_count() < n {
            return Err(Error::invalid("cascade tree does not cover the stored atoms"));
        }
    }

    let mut log_w: Vec<f64> = rost.xi.weights().iter().map(|w| w.ln()).collect();
    let mut q = rost.q.clone();
    let mut labels: Option<Vec<Vec<usize>>> = tree.map(|t| {
        t.level_labels()
            .iter()
            .map(|lv| lv[..n].to_vec())
            .collect()
    });
    let q_levels: Option<Vec<f64>> = tree.map(|t| t.spec().q_levels.clone());
    // origin[rank] = starting rank of the atom currently at `rank`.
    let mut origin: Vec<usize> = (0..n).collect();
    let mut increments: Vec<Vec<f64>> = Vec::new();

    for _ in 0..cfg.steps {
        let kappa = draw_field(n, &q, labels.as_deref(), q_levels.as_deref(), cfg, rng)?;
        let mut step_inc = vec![0.0; n];
        for rank in 0..n {
            let inc = cfg.psi.value(kappa[rank]);
            if !inc.is_finite() {
                return Err(Error::numeric("non-finite increment"));
            }
            log_w[rank] += inc;
            step_inc[origin[rank]] = inc;
        }
        if !cfg.retain_increments {
            increments.clear();
        }
        increments.push(step_inc);

        // Stable descending reorder; ties break by the pre-step rank.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| log_w[b].total_cmp(&log_w[a]).then(a.cmp(&b)));
        let mut rank_of = vec![0usize; n];
        for (new_rank, &old) in order.iter().enumerate() {
            rank_of[old] = new_rank;
        }
        log_w = order.iter().map(|&o| log_w[o]).collect();
        origin = order.iter().map(|&o| origin[o]).collect();
        if let Some(ls) = labels.as_mut() {
            for level in ls.iter_mut() {
                *level = order.iter().map(|&o| level[o]).collect();
            }
        }
        q = q.permuted(&rank_of);
    }

    let weights = softmax_scaled(&log_w, 1.0 - rost.xi.remainder_mass())?;
    let xi = MassPartition::with_remainder(weights, rost.xi.remainder_mass(), None)?;
    let mut permutation = vec![0usize; n];
    for (rank, &orig) in origin.iter().enumerate() {
        permutation[orig] = rank;
    }
    Ok(EvolutionResult {
        rost: Rost::new(xi, q)?,
        permutation,
        increments,
    })
}

/// Normalizes log-weights to sum to `mass` via max-subtracted exponentials.
pub(crate) fn softmax_scaled(log_w: &[f64], mass: f64) -> Result<Vec<f64>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::numeric("non-finite log-weights"));
    }
    let mut out: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v = *v / sum * mass;
    }
    Ok(out)
}

/// The smoothed increment function of the directing structure's evolution:
/// `ψ_{x,ρ}(y) = log E[e^{x ψ(y + Z √(1-ρ))}]`.
pub fn psi_tilde(psi: &PsiModel, x: f64, rho: f64, y: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::invalid(format!("tail index x = {x} outside (0, 1)")));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("bandwidth parameter rho = {rho} outside [0, 1]")));
    }
    if rho == 1.0 {
        return Ok(x * psi.value(y));
    }
    let band = (1.0 - rho).sqrt();
    let e = gauss_expect_adaptive(|z| (x * psi.value(y + band * z)).exp(), TOL_1D)?;
    if !(e.is_finite() && e > 0.0) {
        return Err(Error::numeric("smoothed exponential moment diverges"));
    }
    Ok(e.ln())
}

/// The overlap covariance function `C_ψ(q) = E[ψ(X) ψ(Y)]` for standard
/// normals with correlation `q`; requires a normalized model.
pub fn c_psi(psi: &PsiModel, q: f64) -> Result<f64> {
    if !psi.is_normalized() {
        return Err(Error::invalid("C_ψ requires the normalized increment function"));
    }
    gauss_expect2_adaptive(q, |a, b| psi.value(a) * psi.value(b), TOL_2D)
}

/// Residual of the derivative identity `d/dq C_ψ = C_{ψ'}` at `q`, using a
/// central difference of step `h`; second order in `h` for smooth shapes.
pub fn c_psi_derivative_check(psi: &PsiModel, q: f64, h: f64) -> Result<f64> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::invalid("step must be positive"));
    }
    // Fails early for shapes without a derivative.
    psi.derivative(0.0)?;
    let plus = c_psi(psi, q + h)?;
    let minus = c_psi(psi, q - h)?;
    let fd = (plus - minus) / (2.0 * h);
    let deriv_cov = gauss_expect2_adaptive(
        q,
        |a, b| psi.derivative(a).unwrap() * psi.derivative(b).unwrap(),
        TOL_2D,
    )?;
    Ok((fd - deriv_cov).abs())
}

/// The covariance matrix of the transformed field: `q̂_ij = C_ψ(q_ij^r)`
/// entrywise, with the diagonal pinned at 1.
pub fn hat_q(q: &OverlapMatrix, r: u32, psi: &PsiModel) -> Result<OverlapMatrix> {
    if !psi.is_normalized() {
        return Err(Error::invalid("the transformed covariance requires normalized ψ"));
    }
    let powered = schur_power(q, r)?;
    let n = powered.dim();
    let mut cache: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
    let mut out = OverlapMatrix::identity(n)?;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = powered.get(i, j);
            let mapped = match cache.get(&v.to_bits()) {
                Some(&m) => m,
                None => {
                    let m = c_psi(psi, v.clamp(-1.0, 1.0))?;
                    cache.insert(v.to_bits(), m);
                    m
                }
            };
            out.set(i, j, mapped);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::substream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn g_moment_closed_forms() {
        let linear = PsiModel::linear(1.3);
        for t in [-1.0f64, 0.0, 0.7, 2.0] {
            let expected = (t * t * 1.3 * 1.3 / 2.0).exp();
            assert_abs_diff_eq!(g_moment(&linear, t).unwrap(), expected, epsilon = 1e-9);
        }
        // E[e^{log cosh Z}] = E[cosh Z] = e^{1/2}.
        let lc = PsiModel::log_cosh(1.0);
        assert_abs_diff_eq!(g_moment(&lc, 1.0).unwrap(), 0.5f64.exp(), epsilon = 1e-10);
        assert_abs_diff_eq!(g_moment(&lc, 0.0).unwrap(), 1.0, epsilon = 1e-12);
        // E[cosh² Z] = (e² + 1)/2.
        let expected = (2.0f64.exp() + 1.0) / 2.0;
        assert_abs_diff_eq!(g_moment(&lc, 2.0).unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn log_cosh_shape_is_stable_for_large_arguments() {
        let lc = PsiModel::log_cosh(1.0);
        // log cosh z ≈ |z| - log 2 far from the origin.
        assert_abs_diff_eq!(lc.value(500.0), 500.0 - std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(lc.value(-500.0), 500.0 - std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(lc.value(0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lc.value(1.0), 1.0f64.cosh().ln(), epsilon = 1e-12);
    }

    #[test]
    fn psi_tilde_limits_and_linear_form() {
        let lc = PsiModel::log_cosh(1.0);
        let direct = psi_tilde(&lc, 0.5, 1.0, 0.7).unwrap();
        assert_abs_diff_eq!(direct, 0.5 * lc.value(0.7), epsilon = 1e-12);

        // Linear shape: ψ_{x,ρ}(√ρ y) = x λ √ρ y + x²λ²(1-ρ)/2.
        let (x, lambda, rho, y) = (0.5, 2.0, 0.64, 1.0);
        let psi = PsiModel::linear(lambda);
        let got = psi_tilde(&psi, x, rho, rho.sqrt() * y).unwrap();
        assert_abs_diff_eq!(got, 0.98, epsilon = 1e-9);
    }

    #[test]
    fn c_psi_identity_for_linear() {
        let psi = PsiModel::linear(3.0).normalized().unwrap();
        for q in [-0.9, -0.4, 0.0, 0.3, 0.8] {
            assert_abs_diff_eq!(c_psi(&psi, q).unwrap(), q, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(c_psi(&psi, 1.0).unwrap(), 1.0, epsilon = 1e-9);
        assert!(c_psi(&PsiModel::linear(1.0), 0.5).is_err());
    }

    #[test]
    fn derivative_identity_for_linear_is_exact() {
        let psi = PsiModel::linear(1.0).normalized().unwrap();
        let residual = c_psi_derivative_check(&psi, 0.4, 1e-3).unwrap();
        assert!(residual < 1e-10, "residual {residual}");
    }

    #[test]
    fn derivative_check_rejects_tabulated() {
        let psi = PsiModel::tabulated(vec![-1.0, 0.0, 1.0], vec![0.1, 0.0, 0.1])
            .unwrap()
            .normalized()
            .unwrap();
        assert!(c_psi_derivative_check(&psi, 0.3, 1e-3).is_err());
    }

    #[test]
    fn hat_q_reduces_to_schur_power_for_linear() {
        let psi = PsiModel::linear(1.0).normalized().unwrap();
        let mut q = OverlapMatrix::constant(3, 0.5).unwrap();
        q.set(0, 1, 0.8);
        q.set(1, 0, 0.8);
        let hq = hat_q(&q, 2, &psi).unwrap();
        let sq = schur_power(&q, 2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    assert_eq!(hq.get(i, j), 1.0);
                } else {
                    assert_abs_diff_eq!(hq.get(i, j), sq.get(i, j), epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn hat_q_tends_to_identity_at_large_power() {
        let psi = PsiModel::log_cosh(1.0).normalized().unwrap();
        let q = OverlapMatrix::constant(4, 0.8).unwrap();
        let hq = hat_q(&q, 32, &psi).unwrap();
        for (_, _, v) in hq.upper_triangle() {
            assert!(v.abs() < 0.02, "off-diagonal {v}");
        }
    }

    #[test]
    fn single_atom_and_zero_scale_are_fixed_points() {
        let one = Rost::new(
            MassPartition::proper(vec![1.0]).unwrap(),
            OverlapMatrix::identity(1).unwrap(),
        )
        .unwrap();
        let cfg = EvolutionConfig::new(PsiModel::log_cosh(1.0), Power::Free);
        let out = evolve(&one, None, &cfg, &mut substream(1, 0, 0)).unwrap();
        assert_eq!(out.rost.xi.weights(), &[1.0]);
        assert_eq!(out.permutation, vec![0]);

        let two = Rost::new(
            MassPartition::proper(vec![0.6, 0.4]).unwrap(),
            OverlapMatrix::constant(2, 0.5).unwrap(),
        )
        .unwrap();
        let cfg = EvolutionConfig::new(PsiModel::linear(0.0), Power::Correlated(1));
        let out = evolve(&two, None, &cfg, &mut substream(1, 0, 1)).unwrap();
        assert_eq!(out.permutation, vec![0, 1]);
        assert_abs_diff_eq!(out.rost.xi.weights()[0], 0.6, epsilon = 1e-12);
    }

    #[test]
    fn conjugation_identity_holds_exactly() {
        let rows = vec![
            vec![1.0, 0.6, 0.2, 0.2],
            vec![0.6, 1.0, 0.2, 0.2],
            vec![0.2, 0.2, 1.0, 0.6],
            vec![0.2, 0.2, 0.6, 1.0],
        ];
        let q = OverlapMatrix::from_rows(rows).unwrap();
        let xi = MassPartition::proper(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let rost = Rost::new(xi, q.clone()).unwrap();
        let cfg = EvolutionConfig::new(PsiModel::linear(2.0), Power::Correlated(1))
            .with_steps(3)
            .retaining_increments();
        let out = evolve(&rost, None, &cfg, &mut substream(13, 0, 0)).unwrap();
        assert_eq!(out.increments.len(), 3);

        // Recompute π Q π⁻¹ from the stored permutation.
        let pi = &out.permutation;
        for m in 0..4 {
            for l in 0..4 {
                let mut src = (0, 0);
                for (i, &rank) in pi.iter().enumerate() {
                    if rank == m {
                        src.0 = i;
                    }
                    if rank == l {
                        src.1 = i;
                    }
                }
                assert_eq!(out.rost.q.get(m, l), q.get(src.0, src.1));
            }
        }

        // The off-diagonal multiset is preserved.
        let mut before: Vec<f64> = q.upper_triangle().map(|(_, _, v)| v).collect();
        let mut after: Vec<f64> = out.rost.q.upper_triangle().map(|(_, _, v)| v).collect();
        before.sort_by(f64::total_cmp);
        after.sort_by(f64::total_cmp);
        assert_eq!(before, after);
    }

    #[test]
    fn log_space_survives_extreme_weight_ranges() {
        // Weights spanning ~300 orders of magnitude.
        let raw: Vec<f64> = (0..100).map(|i| 10f64.powi(-3 * i)).collect();
        let xi = MassPartition::proper(raw).unwrap();
        let rost = Rost::new(xi, OverlapMatrix::identity(100).unwrap()).unwrap();
        let cfg = EvolutionConfig::new(PsiModel::linear(1.0), Power::Free).with_steps(5);
        let out = evolve(&rost, None, &cfg, &mut substream(17, 0, 0)).unwrap();
        assert!(out.rost.xi.weights().iter().all(|w| w.is_finite() && *w > 0.0));
        let total: f64 = out.rost.xi.weights().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn dense_sampler_handles_borderline_psd() {
        // Constant q = -0.5 on 3 points has a zero eigenvalue.
        let q = OverlapMatrix::constant(3, -0.5).unwrap();
        let field = sample_field_dense(&q, 1, &mut substream(19, 0, 0)).unwrap();
        assert_eq!(field.len(), 3);
        assert!(field.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dense_sampler_rejects_indefinite_matrices() {
        let q = OverlapMatrix::constant(3, -0.9).unwrap();
        assert!(sample_field_dense(&q, 1, &mut substream(19, 0, 1)).is_err());
    }

    #[test]
    fn free_and_dense_identity_fields_agree_in_law() {
        // Identity covariance: the dense path must produce i.i.d. normals;
        // spot-check first moments.
        let q = OverlapMatrix::identity(2000).unwrap();
        let f = sample_field_dense(&q, 3, &mut substream(23, 0, 0)).unwrap();
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        let var = f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64;
        assert!(mean.abs() < 0.08, "mean {mean}");
        assert!((var - 1.0).abs() < 0.12, "var {var}");
    }

    #[test]
    fn tabulated_model_interpolates_and_clamps() {
        let psi = PsiModel::tabulated(vec![-1.0, 1.0], vec![-2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(psi.value(0.0), 0.0);
        assert_abs_diff_eq!(psi.value(0.5), 1.0);
        assert_abs_diff_eq!(psi.value(10.0), 2.0);
        assert_abs_diff_eq!(psi.value(-10.0), -2.0);
        assert!(PsiModel::tabulated(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
    }
}
