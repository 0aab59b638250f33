//! Conditional Value-at-Risk for finite random variables.
//!
//! For a cost `Z` and confidence level `α ∈ (0, 1]`,
//!
//! ```text
//! CVaR_α[Z] = min_t { t + E[max(Z - t, 0)] / α }
//! ```
//!
//! which for a discrete variable is the probability-weighted mean of the worst
//! `α` tail mass, with the atom at the Value-at-Risk counted fractionally.
//! [`cvar_exact`] is the library truth. [`cvar_jittered_estimator`] reproduces
//! the sample-based procedure used for Monte Carlo validation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::PROB_SUM_TOL;
use crate::rng::{base_rng, substream, Stream};

/// Finite outcome/probability pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteRandomVariable {
    outcomes: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteRandomVariable {
    pub fn new(outcomes: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if outcomes.is_empty() || outcomes.len() != probs.len() {
            return Err(Error::InvalidDistribution(format!(
                "need equal nonzero lengths, got {} outcomes and {} probabilities",
                outcomes.len(),
                probs.len()
            )));
        }
        if outcomes.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite outcome".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidDistribution("probability outside [0, 1]".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(Self { outcomes, probs })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|p| p.0).collect(),
            pairs.iter().map(|p| p.1).collect(),
        )
    }

    pub fn constant(value: f64) -> Self {
        Self {
            outcomes: vec![value],
            probs: vec![1.0],
        }
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.outcomes.iter().zip(&self.probs).map(|(z, p)| z * p).sum()
    }

    /// Largest outcome carrying positive probability.
    pub fn ess_sup(&self) -> f64 {
        self.outcomes
            .iter()
            .zip(&self.probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|(z, _)| *z)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Applies `f` to every outcome, keeping the probabilities.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            outcomes: self.outcomes.iter().map(|z| f(*z)).collect(),
            probs: self.probs.clone(),
        }
    }

    /// `(outcome, prob)` pairs sorted by outcome, largest first.
    pub fn sorted_desc(&self) -> Vec<(f64, f64)> {
        let mut pairs: Vec<(f64, f64)> = self
            .outcomes
            .iter()
            .copied()
            .zip(self.probs.iter().copied())
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        pairs
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return domain(format!("confidence level must lie in (0, 1], got {alpha}"));
    }
    Ok(())
}

/// Exact CVaR by the sorted-tail closed form.
pub fn cvar_exact(z: &DiscreteRandomVariable, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(z.mean());
    }
    Ok(tail_mean(z.sorted_desc().into_iter(), alpha))
}

/// Mean of the worst `alpha` mass of a descending `(value, weight)` stream.
fn tail_mean(sorted_desc: impl Iterator<Item = (f64, f64)>, alpha: f64) -> f64 {
    let mut remaining = alpha;
    let mut acc = 0.0;
    let mut last = f64::NAN;
    for (value, p) in sorted_desc {
        if p <= 0.0 {
            continue;
        }
        last = value;
        let take = p.min(remaining);
        acc += take * value;
        remaining -= take;
        if remaining <= 0.0 {
            return acc / alpha;
        }
    }
    // probability rounding left a sliver of tail unassigned
    (acc + remaining * last) / alpha
}

/// `t + E[max(Z - t, 0)] / α`, the objective minimized by CVaR.
pub fn cvar_objective(z: &DiscreteRandomVariable, alpha: f64, t: f64) -> f64 {
    let excess: f64 = z
        .outcomes
        .iter()
        .zip(&z.probs)
        .map(|(v, p)| p * (v - t).max(0.0))
        .sum();
    t + excess / alpha
}

/// Brute-force CVaR: minimizes the CVaR objective over `t_grid`.
pub fn cvar_minimization_oracle(
    z: &DiscreteRandomVariable,
    alpha: f64,
    t_grid: &[f64],
) -> Result<f64> {
    check_alpha(alpha)?;
    if t_grid.is_empty() {
        return domain("empty t grid");
    }
    Ok(t_grid
        .iter()
        .map(|&t| cvar_objective(z, alpha, t))
        .fold(f64::INFINITY, f64::min))
}

/// `lo, lo + step, ...` up to and including `hi` (within rounding).
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

/// Monte Carlo CVaR estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvarEstimate {
    pub value: f64,
    pub confidence_alpha: f64,
    pub sample_count: usize,
    pub jitter_sigma: f64,
    /// Empirical (1 - α)-quantile of the jittered samples.
    pub quantile: f64,
    /// Bootstrap standard error, when resampling was requested.
    pub std_error: Option<f64>,
}

/// Jittered samples sorted largest first.
fn jitter_sorted(samples: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    let base = base_rng(seed, Stream::Jitter);
    let mut z: Vec<f64> = samples
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if sigma > 0.0 {
                let n: f64 = substream(&base, i as u64).sample(StandardNormal);
                v + sigma * n
            } else {
                v
            }
        })
        .collect();
    z.sort_by(|a, b| b.total_cmp(a));
    z
}

/// Lower empirical (1 - α)-quantile: the smallest sample `q` such that the
/// fraction of samples strictly below `q` is at least `1 - α`.
pub fn lower_quantile(sorted_desc: &[f64], alpha: f64) -> f64 {
    let m = sorted_desc.len();
    let target = (1.0 - alpha) * m as f64;
    // ascending position i has at most i samples below it
    let asc: Vec<f64> = sorted_desc.iter().rev().copied().collect();
    let mut i = 0;
    while i < m {
        let below = asc.partition_point(|v| *v < asc[i]);
        if below as f64 >= target - 1e-9 {
            return asc[i];
        }
        i += 1;
    }
    asc[m - 1]
}

/// Empirical CVaR of equally weighted samples sorted largest first: the mean of
/// the worst `α·M` samples, with the boundary sample counted fractionally.
fn empirical_cvar(sorted_desc: &[f64], alpha: f64) -> f64 {
    let w = 1.0 / sorted_desc.len() as f64;
    tail_mean(sorted_desc.iter().map(|v| (*v, w)), alpha)
}

/// Jittered CVaR estimator over cost samples.
///
/// Adds `N(0, σ²)` noise to each sample (sample `i` uses its own counter-based
/// stream under `seed`) and averages the worst `α` fraction. Without ties this
/// is `(1/(αM)) Σ z_i 1{z_i ≥ Q̂_α}` whenever `αM` is an integer.
pub fn cvar_jittered_estimator(
    samples: &[f64],
    alpha: f64,
    sigma: f64,
    seed: u64,
) -> Result<CvarEstimate> {
    Ok(jittered_cvar_levels(samples, &[alpha], sigma, seed, 0)?[0])
}

/// [`cvar_jittered_estimator`] at several confidence levels sharing one set of
/// jittered samples, optionally with bootstrap standard errors.
pub fn jittered_cvar_levels(
    samples: &[f64],
    alphas: &[f64],
    sigma: f64,
    seed: u64,
    bootstrap_resamples: usize,
) -> Result<Vec<CvarEstimate>> {
    if samples.is_empty() {
        return domain("no samples");
    }
    if !(sigma >= 0.0) {
        return domain(format!("jitter sigma must be nonnegative, got {sigma}"));
    }
    for &a in alphas {
        check_alpha(a)?;
    }
    let sorted = jitter_sorted(samples, sigma, seed);
    let errors = if bootstrap_resamples > 1 {
        Some(bootstrap_std_errors(&sorted, alphas, bootstrap_resamples, seed))
    } else {
        None
    };
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| CvarEstimate {
            value: empirical_cvar(&sorted, alpha),
            confidence_alpha: alpha,
            sample_count: samples.len(),
            jitter_sigma: sigma,
            quantile: lower_quantile(&sorted, alpha),
            std_error: errors.as_ref().map(|e| e[i]),
        })
        .collect())
}

/// Bootstrap standard errors of the empirical CVaR at each level.
///
/// Each resample is represented by multinomial counts over the sorted samples,
/// so one pass over the counts evaluates every level.
fn bootstrap_std_errors(sorted_desc: &[f64], alphas: &[f64], resamples: usize, seed: u64) -> Vec<f64> {
    let m = sorted_desc.len();
    let mut order: Vec<usize> = (0..alphas.len()).collect();
    order.sort_by(|&a, &b| alphas[a].total_cmp(&alphas[b]));

    let base = base_rng(seed, Stream::Bootstrap);
    let mut counts = vec![0u32; m];
    let mut sum = vec![0.0; alphas.len()];
    let mut sum_sq = vec![0.0; alphas.len()];
    for b in 0..resamples {
        counts.iter_mut().for_each(|c| *c = 0);
        let mut rng = substream(&base, b as u64);
        for _ in 0..m {
            counts[rng.random_range(0..m)] += 1;
        }
        let mut next = 0;
        let mut cum_n = 0.0;
        let mut cum_sum = 0.0;
        for (i, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let c = c as f64;
            while next < order.len() {
                let target = alphas[order[next]] * m as f64;
                if cum_n + c < target {
                    break;
                }
                let v = (cum_sum + (target - cum_n) * sorted_desc[i]) / target;
                sum[order[next]] += v;
                sum_sq[order[next]] += v * v;
                next += 1;
            }
            if next == order.len() {
                break;
            }
            cum_n += c;
            cum_sum += c * sorted_desc[i];
        }
        // rounding can leave α = 1 just short of the full count
        while next < order.len() {
            let v = cum_sum / cum_n;
            sum[order[next]] += v;
            sum_sq[order[next]] += v * v;
            next += 1;
        }
    }
    let n = resamples as f64;
    sum.iter()
        .zip(&sum_sq)
        .map(|(s, s2)| {
            let mean = s / n;
            ((s2 - n * mean * mean) / (n - 1.0)).max(0.0).sqrt()
        })
        .collect()
}

/// `(1/m) log Σ exp(m·y_i)`, evaluated with the maximum factored out.
pub fn log_sum_exp_scaled(y: &[f64], m: f64) -> Result<f64> {
    if !(m > 0.0) {
        return domain(format!("scale must be positive, got {m}"));
    }
    if y.is_empty() {
        return domain("empty vector");
    }
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = y.iter().map(|v| (m * (v - max)).exp()).sum();
    Ok(max + s.ln() / m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn two_point() -> DiscreteRandomVariable {
        DiscreteRandomVariable::from_pairs(&[(0.0, 0.9), (10.0, 0.1)]).unwrap()
    }

    #[test]
    fn exact_examples() {
        let z = two_point();
        assert_abs_diff_eq!(cvar_exact(&z, 1.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cvar_exact(&z, 0.2).unwrap(), 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cvar_exact(&z, 0.05).unwrap(), 10.0, epsilon = 1e-12);
        assert!(cvar_exact(&z, 0.0).is_err());
        assert!(cvar_exact(&z, 1.5).is_err());
    }

    #[test]
    fn oracle_examples() {
        let grid = uniform_grid(-1.0, 11.0, 1e-4);
        // frozen from the grid search itself
        let v = cvar_minimization_oracle(&two_point(), 0.2, &grid).unwrap();
        assert_abs_diff_eq!(v, 5.0, epsilon = 1e-6);
        let c = DiscreteRandomVariable::constant(3.5);
        let g = uniform_grid(2.5, 4.5, 1e-3);
        assert_abs_diff_eq!(cvar_minimization_oracle(&c, 0.3, &g).unwrap(), 3.5, epsilon = 1e-9);
        let coin = DiscreteRandomVariable::from_pairs(&[(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let g = uniform_grid(-1.0, 2.0, 1e-4);
        assert_abs_diff_eq!(cvar_minimization_oracle(&coin, 0.5, &g).unwrap(), 1.0, epsilon = 1e-6);
        assert!(cvar_minimization_oracle(&coin, 0.5, &[]).is_err());
    }

    #[test]
    fn jittered_examples() {
        let e = cvar_jittered_estimator(&[5.0; 4], 0.5, 0.0, 1).unwrap();
        assert_eq!(e.value, 5.0);
        assert_eq!(e.sample_count, 4);

        let z = two_point();
        let mut rng = crate::rng::counter_rng(11, Stream::Validation, 0);
        let samples: Vec<f64> = (0..100_000)
            .map(|_| if rng.random::<f64>() < 0.1 { 10.0 } else { 0.0 })
            .collect();
        let est = jittered_cvar_levels(&samples, &[0.2], 1e-12, 5, 200).unwrap()[0];
        let se = est.std_error.unwrap();
        assert!((est.value - cvar_exact(&z, 0.2).unwrap()).abs() <= 0.15);
        assert!((est.value - 5.0).abs() <= 3.0 * se, "{} se {}", est.value, se);

        let a = cvar_jittered_estimator(&samples, 0.2, 1e-7, 9).unwrap();
        let b = cvar_jittered_estimator(&samples, 0.2, 1e-12, 9).unwrap();
        assert!((a.value - b.value).abs() < 1e-4);
    }

    #[test]
    fn jittered_matches_indicator_form_without_ties() {
        // αM integral and distinct samples
        let samples: Vec<f64> = (0..20).map(|i| (i * 7 % 20) as f64).collect();
        let est = cvar_jittered_estimator(&samples, 0.25, 0.0, 0).unwrap();
        let q = est.quantile;
        let direct: f64 = samples.iter().filter(|z| **z >= q).sum::<f64>() / (0.25 * 20.0);
        assert_eq!(q, 15.0);
        assert_abs_diff_eq!(est.value, direct, epsilon = 1e-12);
    }

    #[test]
    fn quantile_convention() {
        let d = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(lower_quantile(&d, 0.5), 3.0);
        assert_eq!(lower_quantile(&d, 1.0), 1.0);
        assert_eq!(lower_quantile(&d, 0.01), 4.0);
    }

    #[test]
    fn log_sum_exp_examples() {
        assert_abs_diff_eq!(log_sum_exp_scaled(&[0.0, 0.0], 1.0).unwrap(), 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(log_sum_exp_scaled(&[3.0, -50.0], 10.0).unwrap(), 3.0, epsilon = 1e-12);
        assert!(log_sum_exp_scaled(&[1.0], 0.0).is_err());
        // no overflow for large m·y
        assert_abs_diff_eq!(log_sum_exp_scaled(&[1000.0, 1000.0], 10.0).unwrap(), 1000.0 + 2f64.ln() / 10.0, epsilon = 1e-9);
    }

    fn arb_rv() -> impl Strategy<Value = DiscreteRandomVariable> {
        prop::collection::vec((-10.0f64..10.0, 0.01f64..1.0), 1..8).prop_map(|pairs| {
            let total: f64 = pairs.iter().map(|p| p.1).sum();
            let outcomes = pairs.iter().map(|p| p.0).collect();
            let probs = pairs.iter().map(|p| p.1 / total).collect();
            DiscreteRandomVariable::new(outcomes, probs).unwrap()
        })
    }

    proptest! {
        #[test]
        fn exact_matches_minimization(z in arb_rv(), alpha in 0.05f64..=1.0) {
            let step = 1e-3;
            let grid = uniform_grid(-11.0, 11.0, step);
            let brute = cvar_minimization_oracle(&z, alpha, &grid).unwrap();
            let exact = cvar_exact(&z, alpha).unwrap();
            prop_assert!(brute >= exact - 1e-9);
            prop_assert!(brute - exact <= step / alpha);
        }

        #[test]
        fn monotone_in_confidence(z in arb_rv(), a in 0.01f64..=1.0, b in 0.01f64..=1.0) {
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            prop_assert!(cvar_exact(&z, hi).unwrap() <= cvar_exact(&z, lo).unwrap() + 1e-12);
        }

        #[test]
        fn bounded_by_mean_and_sup(z in arb_rv(), a in 0.01f64..=1.0) {
            let v = cvar_exact(&z, a).unwrap();
            prop_assert!(v >= z.mean() - 1e-9);
            prop_assert!(v <= z.ess_sup() + 1e-9);
        }

        #[test]
        fn log_sum_exp_bounds(y in prop::collection::vec(-50.0f64..50.0, 1..10), m in 0.1f64..50.0) {
            let v = log_sum_exp_scaled(&y, m).unwrap();
            let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= max - 1e-12);
            prop_assert!(v <= max + (y.len() as f64).ln() / m + 1e-12);
        }
    }
}
