//! Monte Carlo estimates of the risk-sensitive quantities under a given policy.
//!
//! Trajectory `i` started from state `x` draws its disturbances from a
//! counter-based stream keyed by `(seed, x, i)`, so every estimate is
//! reproducible and independent of thread scheduling. Under a fixed control
//! the cost samples do not depend on `α`, and every confidence level is read
//! off the same sample set.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::{SurfaceFunction, SystemModel};
use crate::risk::{jittered_cvar_levels, CvarEstimate};
use crate::rng::{base_rng, mix64, point_seed, substream, Stream};
use crate::value_iteration::{next_confidence, stage_cost, PolicyTable, StageCostSpec};

/// Jitter used for the maximum-surface cost.
pub const W0_SIGMA: f64 = 1e-12;
/// Jitter used for the summed exponential cost.
pub const J0_SIGMA: f64 = 1e-7;
pub const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Clone, Copy)]
pub enum RolloutPolicy<'a> {
    Fixed(f64),
    /// Greedy controls with the confidence level carried along by the stored
    /// multipliers.
    Table(&'a PolicyTable),
}

impl RolloutPolicy<'_> {
    pub fn validate(&self, model: &SystemModel, horizon: usize) -> Result<()> {
        match self {
            RolloutPolicy::Fixed(u) => {
                if !model.controls().contains(u) {
                    return domain(format!("control {u} is not in the control set"));
                }
            }
            RolloutPolicy::Table(t) => {
                if t.horizon() < horizon {
                    return domain(format!(
                        "policy covers {} stages, rollout needs {horizon}",
                        t.horizon()
                    ));
                }
            }
        }
        Ok(())
    }

    fn depends_on_alpha(&self) -> bool {
        matches!(self, RolloutPolicy::Table(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McRunConfig {
    pub samples: usize,
    pub jitter_sigma: f64,
    pub seed: u64,
    pub horizon: usize,
    /// Zero disables the standard errors.
    pub bootstrap_resamples: usize,
}

impl McRunConfig {
    pub fn new(samples: usize, jitter_sigma: f64, seed: u64, horizon: usize) -> Result<Self> {
        let cfg = Self {
            samples,
            jitter_sigma,
            seed,
            horizon,
            bootstrap_resamples: BOOTSTRAP_RESAMPLES,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return domain("at least one sample is required");
        }
        if !(self.jitter_sigma >= 0.0) {
            return domain(format!("jitter sigma must be nonnegative, got {}", self.jitter_sigma));
        }
        Ok(())
    }

    pub fn with_sigma(self, jitter_sigma: f64) -> Self {
        Self { jitter_sigma, ..self }
    }
}

/// Per-trajectory cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostKind {
    /// `max_k g(x_k)`.
    MaxSurface(SurfaceFunction),
    /// `Σ_k c(x_k)`.
    SumStageCost(StageCostSpec),
}

impl CostKind {
    pub fn of(&self, path: &[f64]) -> f64 {
        match self {
            CostKind::MaxSurface(g) => path.iter().map(|&x| g.eval(x)).fold(f64::NEG_INFINITY, f64::max),
            CostKind::SumStageCost(spec) => path.iter().map(|&x| stage_cost(spec, x)).sum(),
        }
    }
}

/// States `x_0, …, x_N` of one rollout. `alpha0` seeds the confidence
/// coordinate of a table policy and is ignored otherwise.
pub fn simulate_trajectory<R: Rng>(
    model: &SystemModel,
    policy: &RolloutPolicy,
    x0: f64,
    alpha0: f64,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (lo, hi) = model.state_bounds();
    if !(x0 >= lo && x0 <= hi) {
        return domain(format!("initial state {x0} outside [{lo}, {hi}]"));
    }
    let dist = model.disturbance();
    let mut path = Vec::with_capacity(horizon + 1);
    let (mut x, mut y) = (x0, alpha0);
    path.push(x);
    for k in 0..horizon {
        let j = dist.sample_index(rng.random::<f64>());
        let u = match policy {
            RolloutPolicy::Fixed(u) => *u,
            RolloutPolicy::Table(t) => {
                let (u, y_next) = next_confidence(t, k, x, y, j)?;
                y = y_next;
                u
            }
        };
        x = model.step(x, u, dist.values()[j]);
        path.push(x);
    }
    Ok(path)
}

fn sample_key(seed: u64, policy: &RolloutPolicy, x: f64, alpha: f64) -> u64 {
    let key = point_seed(seed, x.to_bits());
    if policy.depends_on_alpha() {
        mix64(key ^ alpha.to_bits())
    } else {
        key
    }
}

/// `M` cost samples from `x`, in sample order.
pub fn cost_samples(
    model: &SystemModel,
    policy: &RolloutPolicy,
    x: f64,
    alpha: f64,
    cost: &CostKind,
    cfg: &McRunConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    policy.validate(model, cfg.horizon)?;
    let base = base_rng(sample_key(cfg.seed, policy, x, alpha), Stream::Trajectory);
    (0..cfg.samples)
        .map(|i| {
            let mut rng = substream(&base, i as u64);
            simulate_trajectory(model, policy, x, alpha, cfg.horizon, &mut rng).map(|p| cost.of(&p))
        })
        .collect()
}

/// CVaR estimates from `x` at each level in `alphas`.
pub fn estimate_levels(
    model: &SystemModel,
    policy: &RolloutPolicy,
    x: f64,
    alphas: &[f64],
    cost: &CostKind,
    cfg: &McRunConfig,
) -> Result<Vec<CvarEstimate>> {
    if alphas.is_empty() {
        return Ok(Vec::new());
    }
    let jitter_seed = |alpha: f64| mix64(sample_key(cfg.seed, policy, x, alpha));
    if policy.depends_on_alpha() {
        alphas
            .iter()
            .map(|&a| {
                let z = cost_samples(model, policy, x, a, cost, cfg)?;
                Ok(jittered_cvar_levels(&z, &[a], cfg.jitter_sigma, jitter_seed(a), cfg.bootstrap_resamples)?[0])
            })
            .collect()
    } else {
        let z = cost_samples(model, policy, x, alphas[0], cost, cfg)?;
        jittered_cvar_levels(&z, alphas, cfg.jitter_sigma, jitter_seed(alphas[0]), cfg.bootstrap_resamples)
    }
}

/// `CVaR_α[max_k g(x_k)]` from `x`.
pub fn estimate_w0(
    model: &SystemModel,
    policy: &RolloutPolicy,
    x: f64,
    alpha: f64,
    surface: SurfaceFunction,
    cfg: &McRunConfig,
) -> Result<CvarEstimate> {
    Ok(estimate_levels(model, policy, x, &[alpha], &CostKind::MaxSurface(surface), cfg)?[0])
}

/// `CVaR_α[Σ_k c(x_k)]` from `x`.
pub fn estimate_j0star(
    model: &SystemModel,
    policy: &RolloutPolicy,
    x: f64,
    alpha: f64,
    spec: &StageCostSpec,
    cfg: &McRunConfig,
) -> Result<CvarEstimate> {
    Ok(estimate_levels(model, policy, x, &[alpha], &CostKind::SumStageCost(*spec), cfg)?[0])
}

/// Estimates on `states × alphas`, indexed `[state][alpha]`. States run in
/// parallel.
pub fn estimate_grid(
    model: &SystemModel,
    policy: &RolloutPolicy,
    states: &[f64],
    alphas: &[f64],
    cost: &CostKind,
    cfg: &McRunConfig,
) -> Result<Vec<Vec<CvarEstimate>>> {
    states
        .par_iter()
        .map(|&x| estimate_levels(model, policy, x, alphas, cost, cfg))
        .collect()
}

/// Fraction of rollouts whose maximum surface value is nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitFrequency {
    pub frequency: f64,
    /// Binomial standard error `sqrt(p(1-p)/M)`.
    pub std_error: f64,
    pub samples: usize,
}

impl ExitFrequency {
    pub fn from_costs(max_g: &[f64]) -> Self {
        let m = max_g.len();
        let p = max_g.iter().filter(|&&v| v >= 0.0).count() as f64 / m as f64;
        Self {
            frequency: p,
            std_error: (p * (1.0 - p) / m as f64).sqrt(),
            samples: m,
        }
    }
}

pub fn exit_frequency(
    model: &SystemModel,
    policy: &RolloutPolicy,
    x: f64,
    alpha: f64,
    surface: SurfaceFunction,
    cfg: &McRunConfig,
) -> Result<ExitFrequency> {
    let z = cost_samples(model, policy, x, alpha, &CostKind::MaxSurface(surface), cfg)?;
    Ok(ExitFrequency::from_costs(&z))
}

/// Relative gaps between value-iteration and Monte Carlo values, normalized by
/// each side in turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub mean_by_mc: f64,
    pub max_by_mc: f64,
    pub mean_by_vi: f64,
    pub max_by_vi: f64,
    pub points: usize,
}

pub fn relative_gaps(pairs: &[(f64, f64)]) -> GapReport {
    let n = pairs.len().max(1) as f64;
    let (mut s_mc, mut m_mc, mut s_vi, mut m_vi) = (0.0, 0.0f64, 0.0, 0.0f64);
    for &(vi, mc) in pairs {
        let d = (vi - mc).abs();
        let a = d / mc.abs();
        let b = d / vi.abs();
        s_mc += a;
        s_vi += b;
        m_mc = m_mc.max(a);
        m_vi = m_vi.max(b);
    }
    GapReport {
        mean_by_mc: s_mc / n,
        max_by_mc: m_mc,
        mean_by_vi: s_vi / n,
        max_by_vi: m_vi,
        points: pairs.len(),
    }
}
