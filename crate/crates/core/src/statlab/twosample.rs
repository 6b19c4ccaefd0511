//! Distribution-free test statistics with permutation-resampled p-values.
//!
//! The two-sample statistic is the sup-distance between empirical
//! distribution functions; its null distribution is resampled by permuting
//! group labels over the pooled sample, which stays valid at any replica
//! count and with ties. Vector-valued discrete statistics (per-level overlap
//! masses) use a chi-square-style standardized mean difference instead,
//! since EDF tests degenerate on a handful of support points.

use rand::Rng;

use crate::stream::Stream;

/// Sup-distance between the empirical distribution functions of two samples.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> f64 {
    let mut pooled: Vec<(f64, bool)> = xs
        .iter()
        .map(|&v| (v, true))
        .chain(ys.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let labels: Vec<bool> = pooled.iter().map(|p| p.1).collect();
    let values: Vec<f64> = pooled.iter().map(|p| p.0).collect();
    ks_from_sorted(&values, &labels, xs.len(), ys.len())
}

/// Walks the pooled sorted values, evaluating the EDF gap only after runs of
/// equal values so ties are handled exactly.
fn ks_from_sorted(values: &[f64], labels: &[bool], n1: usize, n2: usize) -> f64 {
    let (mut c1, mut c2) = (0usize, 0usize);
    let mut d = 0.0f64;
    for i in 0..values.len() {
        if labels[i] {
            c1 += 1;
        } else {
            c2 += 1;
        }
        if i + 1 == values.len() || values[i + 1] > values[i] {
            let gap = (c1 as f64 / n1 as f64 - c2 as f64 / n2 as f64).abs();
            if gap > d {
                d = gap;
            }
        }
    }
    d
}

/// Two-sample sup-distance with a permutation p-value over `n_perms`
/// label shuffles; returns `(statistic, p_value)` with the add-one rule.
pub fn ks_permutation_pvalue(
    xs: &[f64],
    ys: &[f64],
    n_perms: usize,
    rng: &mut Stream,
) -> (f64, f64) {
    let mut pooled: Vec<(f64, bool)> = xs
        .iter()
        .map(|&v| (v, true))
        .chain(ys.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let values: Vec<f64> = pooled.iter().map(|p| p.0).collect();
    let mut labels: Vec<bool> = pooled.iter().map(|p| p.1).collect();
    let observed = ks_from_sorted(&values, &labels, xs.len(), ys.len());

    let mut exceed = 0usize;
    for _ in 0..n_perms {
        shuffle(&mut labels, rng);
        let d = ks_from_sorted(&values, &labels, xs.len(), ys.len());
        if d >= observed - 1e-12 {
            exceed += 1;
        }
    }
    let p = (1 + exceed) as f64 / (n_perms + 1) as f64;
    (observed, p)
}

fn shuffle<T>(items: &mut [T], rng: &mut impl Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// One-sample sup-distance against a reference CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs());
        d = d.max((f - i as f64 / n).abs());
    }
    d
}

/// Asymptotic Kolmogorov p-value `P(sup |B| > √n d)`.
pub fn kolmogorov_pvalue(n: usize, d: f64) -> f64 {
    let t = (n as f64).sqrt() * d;
    if t < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64) * (j as f64) * t * t).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Standardized squared mean difference summed over coordinates. The
/// per-coordinate scale is the pooled variance of all observations, which is
/// permutation-invariant; degenerate coordinates are skipped.
pub fn mean_chi2_statistic(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let dims = a[0].len();
    let scales = pooled_scales(a, b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut stat = 0.0;
    for l in 0..dims {
        if scales[l] <= 0.0 {
            continue;
        }
        let ma: f64 = a.iter().map(|v| v[l]).sum::<f64>() / na;
        let mb: f64 = b.iter().map(|v| v[l]).sum::<f64>() / nb;
        stat += (ma - mb) * (ma - mb) / (scales[l] * (1.0 / na + 1.0 / nb));
    }
    stat
}

fn pooled_scales(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    let dims = a[0].len();
    let n = (a.len() + b.len()) as f64;
    let mut scales = Vec::with_capacity(dims);
    for l in 0..dims {
        let mean: f64 = a.iter().chain(b.iter()).map(|v| v[l]).sum::<f64>() / n;
        let var: f64 = a
            .iter()
            .chain(b.iter())
            .map(|v| (v[l] - mean) * (v[l] - mean))
            .sum::<f64>()
            / (n - 1.0);
        scales.push(if var > 1e-18 { var } else { 0.0 });
    }
    scales
}

/// Permutation p-value for the chi-square-style statistic. The pooled
/// per-coordinate scales are permutation-invariant, so each resample only
/// recomputes group means over a shuffled index array.
pub fn mean_chi2_permutation_pvalue(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    n_perms: usize,
    rng: &mut Stream,
) -> (f64, f64) {
    let observed = mean_chi2_statistic(a, b);
    let dims = a[0].len();
    let scales = pooled_scales(a, b);
    let (na, nb) = (a.len(), b.len());
    let pool: Vec<&[f64]> = a
        .iter()
        .map(|v| v.as_slice())
        .chain(b.iter().map(|v| v.as_slice()))
        .collect();
    let totals: Vec<f64> = (0..dims)
        .map(|l| pool.iter().map(|v| v[l]).sum())
        .collect();
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    let mut sums_a = vec![0.0; dims];
    let mut exceed = 0usize;
    for _ in 0..n_perms {
        shuffle(&mut idx, rng);
        sums_a.iter_mut().for_each(|s| *s = 0.0);
        for &i in &idx[..na] {
            for l in 0..dims {
                sums_a[l] += pool[i][l];
            }
        }
        let mut stat = 0.0;
        for l in 0..dims {
            if scales[l] <= 0.0 {
                continue;
            }
            let ma = sums_a[l] / na as f64;
            let mb = (totals[l] - sums_a[l]) / nb as f64;
            stat += (ma - mb) * (ma - mb) / (scales[l] * (1.0 / na as f64 + 1.0 / nb as f64));
        }
        if stat >= observed - 1e-12 {
            exceed += 1;
        }
    }
    let p = (1 + exceed) as f64 / (n_perms + 1) as f64;
    (observed, p)
}
