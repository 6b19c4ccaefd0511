//! Power-tail Poisson processes, Poisson–Dirichlet mass-partitions and
//! marked multiplicative shifts.
//!
//! The central object is the Poisson process on `(0, ∞)` with intensity
//! `x s^{-x-1} ds`, `x ∈ (0, 1)`, whose tail is the power law
//! `ν([s, ∞)) = s^{-x}`. Its ordered atoms are generated exactly as
//! `η_i = Γ_i^{-1/x}` with `Γ_i` the arrival times of a unit-rate
//! exponential walk. Normalizing the atoms by their total mass yields a
//! `PD(x, 0)` mass-partition; only the top `N` atoms are stored and the
//! normalizer is corrected by the conditional mean of the truncated tail,
//! `(x/(1-x)) η_N^{1-x}`.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::quad::{gauss_expect_adaptive, TOL_1D};
use crate::stream::{substream, Stream};
use crate::{Error, Result, TOL_MASS};

/// An ordered mass-partition: positive weights, descending, with an
/// estimate of the probability mass beyond the stored atoms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MassPartition {
    weights: Vec<f64>,
    remainder_mass: f64,
    /// The normalizer ζ relating stored weights to raw Poisson positions,
    /// present when the partition was built from a Poisson realization.
    normalizer: Option<f64>,
}

impl MassPartition {
    /// A proper partition from explicit weights; the weights are validated
    /// as positive and nonincreasing, then scaled to sum to one.
    pub fn proper(weights: Vec<f64>) -> Result<Self> {
        validate_descending_positive(&weights)?;
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(Error::invalid("weights must have a positive finite sum"));
        }
        let weights = weights.iter().map(|w| w / sum).collect();
        Ok(MassPartition {
            weights,
            remainder_mass: 0.0,
            normalizer: None,
        })
    }

    /// A partition with explicitly accounted remainder mass. The stored
    /// weights plus the remainder must fill the unit mass up to [`TOL_MASS`].
    pub fn with_remainder(
        weights: Vec<f64>,
        remainder_mass: f64,
        normalizer: Option<f64>,
    ) -> Result<Self> {
        validate_descending_positive(&weights)?;
        if !(remainder_mass >= 0.0 && remainder_mass.is_finite()) {
            return Err(Error::invalid("remainder mass must be nonnegative"));
        }
        let total: f64 = weights.iter().sum::<f64>() + remainder_mass;
        if !(1.0 - TOL_MASS..=1.0 + TOL_MASS).contains(&total) {
            return Err(Error::invalid(format!(
                "stored mass + remainder = {total}, expected 1 within {TOL_MASS:.0e}"
            )));
        }
        Ok(MassPartition {
            weights,
            remainder_mass,
            normalizer,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn remainder_mass(&self) -> f64 {
        self.remainder_mass
    }

    pub fn normalizer(&self) -> Option<f64> {
        self.normalizer
    }

    /// Number of explicitly stored atoms.
    pub fn truncation_count(&self) -> usize {
        self.weights.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Stored weights rescaled to sum to one, hiding the remainder. Used by
    /// statistics that compare truncated systems on an equal footing.
    pub fn renormalized_stored(&self) -> Vec<f64> {
        let sum: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / sum).collect()
    }

    /// Checks all structural invariants.
    pub fn validate(&self) -> Result<()> {
        validate_descending_positive(&self.weights)?;
        let total = self.weights.iter().sum::<f64>() + self.remainder_mass;
        if self.remainder_mass < 0.0 {
            return Err(Error::invalid("negative remainder mass"));
        }
        if !(1.0 - TOL_MASS..=1.0 + TOL_MASS).contains(&total) {
            return Err(Error::invalid(format!("total mass {total} not within tolerance of 1")));
        }
        Ok(())
    }
}

fn validate_descending_positive(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::invalid("empty weight list"));
    }
    for (i, w) in weights.iter().enumerate() {
        if !(w.is_finite() && *w > 0.0) {
            return Err(Error::invalid(format!("weight {i} is not positive and finite")));
        }
        if i > 0 && weights[i - 1] < *w {
            return Err(Error::invalid(format!("weights not nonincreasing at index {i}")));
        }
    }
    Ok(())
}

/// Ordered positions of the top `n_atoms` atoms of the Poisson process with
/// intensity `x s^{-x-1} ds`, generated as `Γ_i^{-1/x}`.
pub fn sample_power_tail_poisson(x: f64, n_atoms: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    check_tail_index(x)?;
    if n_atoms == 0 {
        return Err(Error::invalid("n_atoms must be at least 1"));
    }
    let inv_x = 1.0 / x;
    let mut arrival = 0.0_f64;
    let mut atoms = Vec::with_capacity(n_atoms);
    for _ in 0..n_atoms {
        let e: f64 = rng.sample(Exp1);
        arrival += e;
        atoms.push(arrival.powf(-inv_x));
    }
    Ok(atoms)
}

fn check_tail_index(x: f64) -> Result<()> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::invalid(format!("tail index x = {x} outside (0, 1)")));
    }
    Ok(())
}

/// Conditional mean of the unstored mass below the smallest stored atom.
pub(crate) fn tail_mass_correction(x: f64, smallest_atom: f64) -> f64 {
    (x / (1.0 - x)) * smallest_atom.powf(1.0 - x)
}

/// Samples a truncated `PD(x, 0)` mass-partition with `n_atoms` stored atoms.
///
/// The normalizer is `ζ = Σ_{i≤N} η_i + R` with the tail correction
/// `R = (x/(1-x)) η_N^{1-x}`, so the stored weights plus the reported
/// remainder fill the unit mass exactly.
pub fn sample_pd(x: f64, n_atoms: usize, rng: &mut impl Rng) -> Result<MassPartition> {
    let atoms = sample_power_tail_poisson(x, n_atoms, rng)?;
    partition_from_atoms(x, atoms)
}

pub(crate) fn partition_from_atoms(x: f64, atoms: Vec<f64>) -> Result<MassPartition> {
    let stored: f64 = atoms.iter().sum();
    let correction = tail_mass_correction(x, *atoms.last().expect("nonempty"));
    let zeta = stored + correction;
    let weights: Vec<f64> = atoms.iter().map(|a| a / zeta).collect();
    Ok(MassPartition {
        weights,
        remainder_mass: correction / zeta,
        normalizer: Some(zeta),
    })
}

/// Least-squares tail-index estimate from the rank decay of the weights.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PdEstimate {
    /// Estimated tail index `x̂ = -1/slope`.
    pub x_hat: f64,
    /// Bootstrap standard error of `x̂`.
    pub std_err: f64,
    /// Raw log-log slope.
    pub slope: f64,
}

const BOOTSTRAP_ROUNDS: usize = 200;
const BOOTSTRAP_DOMAIN: u64 = 0x9d_e57;

/// Fits `log ξ_n` against `log n` over `fit_range` (0-based indices into the
/// stored weights); the slope of a `PD(x, 0)` partition converges to `-1/x`.
///
/// The standard error comes from a pair-resampling bootstrap with a fixed
/// internal seed, so repeated calls are deterministic.
pub fn estimate_pd_x(mp: &MassPartition, fit_range: std::ops::Range<usize>) -> Result<PdEstimate> {
    if fit_range.end > mp.len() || fit_range.start >= fit_range.end {
        return Err(Error::invalid("fit range outside stored atoms"));
    }
    if fit_range.len() < 10 {
        return Err(Error::invalid("fit range must contain at least 10 atoms"));
    }
    let w = &mp.weights()[fit_range.clone()];
    for i in 0..w.len() {
        if w[i] <= 0.0 {
            return Err(Error::invalid("zero weight in fit range"));
        }
        if i > 0 && w[i] > w[i - 1] {
            return Err(Error::invalid("non-monotone weights in fit range"));
        }
    }
    let points: Vec<(f64, f64)> = w
        .iter()
        .enumerate()
        .map(|(i, &wi)| (((fit_range.start + i + 1) as f64).ln(), wi.ln()))
        .collect();
    let slope = ols_slope(&points)
        .ok_or_else(|| Error::numeric("degenerate abscissas in tail fit"))?;
    if slope >= 0.0 {
        return Err(Error::numeric("weights do not decay over the fit range"));
    }
    let x_hat = -1.0 / slope;

    let mut rng = substream(0, BOOTSTRAP_DOMAIN, 0);
    let n = points.len();
    let mut resampled = Vec::with_capacity(n);
    let mut boots = Vec::with_capacity(BOOTSTRAP_ROUNDS);
    for _ in 0..BOOTSTRAP_ROUNDS {
        resampled.clear();
        for _ in 0..n {
            resampled.push(points[rng.random_range(0..n)]);
        }
        if let Some(b) = ols_slope(&resampled) {
            if b < 0.0 {
                boots.push(-1.0 / b);
            }
        }
    }
    let std_err = sample_std(&boots);
    Ok(PdEstimate {
        x_hat,
        std_err,
        slope,
    })
}

fn ols_slope(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    let mean_u = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_v = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(u, v) in points {
        num += (u - mean_u) * (v - mean_v);
        den += (u - mean_u) * (u - mean_u);
    }
    (den > 0.0).then(|| num / den)
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return f64::NAN;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    var.sqrt()
}

/// A mass-partition whose atoms carry marks from a finite integer alphabet.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkedPartition {
    pub base: MassPartition,
    /// One mark per stored atom.
    pub marks: Vec<usize>,
    /// The probability law on the mark alphabet.
    pub mark_weights: Vec<f64>,
}

impl MarkedPartition {
    pub fn new(base: MassPartition, marks: Vec<usize>, mark_weights: Vec<f64>) -> Result<Self> {
        if marks.len() != base.len() {
            return Err(Error::invalid("one mark per stored atom required"));
        }
        validate_mark_law(&mark_weights)?;
        if marks.iter().any(|&c| c >= mark_weights.len()) {
            return Err(Error::invalid("mark identifier outside the alphabet"));
        }
        Ok(MarkedPartition {
            base,
            marks,
            mark_weights,
        })
    }

    /// Marks each atom independently with law `mark_weights`.
    pub fn mark_iid(
        base: MassPartition,
        mark_weights: Vec<f64>,
        rng: &mut Stream,
    ) -> Result<Self> {
        validate_mark_law(&mark_weights)?;
        let marks = (0..base.len())
            .map(|_| sample_categorical(&mark_weights, rng))
            .collect();
        Self::new(base, marks, mark_weights)
    }
}

fn validate_mark_law(mark_weights: &[f64]) -> Result<()> {
    if mark_weights.is_empty() {
        return Err(Error::invalid("empty mark alphabet"));
    }
    if mark_weights.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid("mark probabilities must be nonnegative"));
    }
    let sum: f64 = mark_weights.iter().sum();
    if (sum - 1.0).abs() > TOL_MASS {
        return Err(Error::invalid(format!("mark law sums to {sum}, expected 1")));
    }
    Ok(())
}

pub(crate) fn sample_categorical(weights: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Per-mark noise laws feeding the shift functions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLaw {
    StandardNormal,
    PointMass(f64),
}

impl NoiseLaw {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            NoiseLaw::StandardNormal => rng.sample(rand_distr::StandardNormal),
            NoiseLaw::PointMass(v) => *v,
        }
    }
}

/// Registered multiplicative shift functions `(mark, noise) → multiplier`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftFn {
    /// `W_c(κ) = exp(λ_c κ)`, one scale per mark.
    ExpScale { lambda: Vec<f64> },
    /// Noise-independent positive multiplier per mark.
    Constant { w: Vec<f64> },
}

impl ShiftFn {
    fn check_alphabet(&self, n_marks: usize) -> Result<()> {
        let len = match self {
            ShiftFn::ExpScale { lambda } => lambda.len(),
            ShiftFn::Constant { w } => w.len(),
        };
        if len != n_marks {
            return Err(Error::invalid(format!(
                "shift function covers {len} marks, alphabet has {n_marks}"
            )));
        }
        if let ShiftFn::Constant { w } = self {
            if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::invalid("shift multipliers must be positive"));
            }
        }
        Ok(())
    }

    fn log_multiplier(&self, mark: usize, kappa: f64) -> f64 {
        match self {
            ShiftFn::ExpScale { lambda } => lambda[mark] * kappa,
            ShiftFn::Constant { w } => w[mark].ln(),
        }
    }

    /// `E[W_c^x(κ)]` under the mark's noise law; closed forms where they
    /// exist, quadrature otherwise.
    fn xth_moment(&self, mark: usize, noise: &NoiseLaw, x: f64) -> Result<f64> {
        let value = match (self, noise) {
            (ShiftFn::ExpScale { lambda }, NoiseLaw::StandardNormal) => {
                let a = x * lambda[mark];
                gauss_expect_adaptive(|z| (a * z).exp(), TOL_1D)?
            }
            (ShiftFn::ExpScale { lambda }, NoiseLaw::PointMass(v)) => (x * lambda[mark] * v).exp(),
            (ShiftFn::Constant { w }, _) => w[mark].powf(x),
        };
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::numeric(format!(
                "x-th moment of the shift diverges for mark {mark}"
            )));
        }
        Ok(value)
    }
}

/// The shifted partition together with the predicted post-shift mark law.
#[derive(Debug, Clone)]
pub struct ShiftOutcome {
    pub shifted: MarkedPartition,
    /// `μ̃(c) = μ(c) E[W_c^x] / 𝒩`.
    pub predicted_mark_law: Vec<f64>,
    /// The normalizing moment `𝒩 = Σ_c μ(c) E[W_c^x]`.
    pub moment: f64,
}

/// Applies a multiplicative mark-dependent shift to a marked partition and
/// reorders. The tail index `x` of the underlying partition enters only the
/// predicted mark law.
pub fn marked_shift(
    mp: &MarkedPartition,
    x: f64,
    shift: &ShiftFn,
    noise: &[NoiseLaw],
    rng: &mut Stream,
) -> Result<ShiftOutcome> {
    check_tail_index(x)?;
    let alphabet = mp.mark_weights.len();
    shift.check_alphabet(alphabet)?;
    if noise.len() != alphabet {
        return Err(Error::invalid("one noise law per mark required"));
    }

    let mut moment = 0.0;
    let mut predicted: Vec<f64> = Vec::with_capacity(alphabet);
    for (c, law) in noise.iter().enumerate() {
        let m = shift.xth_moment(c, law, x)?;
        predicted.push(mp.mark_weights[c] * m);
        moment += mp.mark_weights[c] * m;
    }
    if !(moment.is_finite() && moment > 0.0) {
        return Err(Error::numeric("shift moment integral is not finite"));
    }
    for p in &mut predicted {
        *p /= moment;
    }

    // Shift in log space, reorder, renormalize the stored mass.
    let n = mp.base.len();
    let mut shifted: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let kappa = noise[mp.marks[i]].sample(rng);
        let lw = mp.base.weights()[i].ln() + shift.log_multiplier(mp.marks[i], kappa);
        if !lw.is_finite() {
            return Err(Error::numeric("non-finite shifted weight"));
        }
        shifted.push((lw, i));
    }
    shifted.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let max_lw = shifted[0].0;
    let mut sum = 0.0;
    for (lw, _) in &shifted {
        sum += (lw - max_lw).exp();
    }
    let stored_mass = 1.0 - mp.base.remainder_mass();
    let weights: Vec<f64> = shifted
        .iter()
        .map(|(lw, _)| (lw - max_lw).exp() / sum * stored_mass)
        .collect();
    let marks: Vec<usize> = shifted.iter().map(|&(_, i)| mp.marks[i]).collect();
    let base = MassPartition::with_remainder(weights, mp.base.remainder_mass(), None)?;
    Ok(ShiftOutcome {
        shifted: MarkedPartition::new(base, marks, mp.mark_weights.clone())?,
        predicted_mark_law: predicted,
        moment,
    })
}
