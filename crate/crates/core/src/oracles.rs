//! Independent reference computations used to check the solver.
//!
//! None of these share code with the value-iteration path beyond the model
//! and the exact CVaR of a finite distribution.

use std::collections::{BTreeMap, HashMap};

use crate::envelope::{InnerProblem, InterpolatedYJ, RiskEnvelope};
use crate::error::Result;
use crate::model::{DisturbanceDistribution, SystemModel};
use crate::risk::{cvar_exact, DiscreteRandomVariable};
use crate::grid::{AugmentedGrid, ValueTable};
use crate::value_iteration::{greedy_decision, next_confidence, stage_cost, PolicyTable, StageCostSpec};

fn lerp(states: &[f64], vals: &[f64], x: f64) -> f64 {
    let n = states.len();
    if x <= states[0] {
        return vals[0];
    }
    if x >= states[n - 1] {
        return vals[n - 1];
    }
    let i = states.partition_point(|s| *s < x) - 1;
    let w = (x - states[i]) / (states[i + 1] - states[i]);
    (1.0 - w) * vals[i] + w * vals[i + 1]
}

fn state_dp(
    model: &SystemModel,
    states: &[f64],
    spec: &StageCostSpec,
    aggregate: impl Fn(&[(f64, f64)]) -> f64,
) -> Vec<f64> {
    let cost: Vec<f64> = states.iter().map(|&x| stage_cost(spec, x)).collect();
    let mut j = cost.clone();
    for _ in 0..model.horizon() {
        j = states
            .iter()
            .zip(&cost)
            .map(|(&x, &c)| {
                let best = model
                    .controls()
                    .iter()
                    .map(|&u| {
                        let vals: Vec<(f64, f64)> = model
                            .disturbance()
                            .values()
                            .iter()
                            .zip(model.disturbance().probs())
                            .map(|(&w, &p)| (p, lerp(states, &j, model.step(x, u, w))))
                            .collect();
                        aggregate(&vals)
                    })
                    .fold(f64::INFINITY, f64::min);
                c + best
            })
            .collect();
    }
    j
}

/// Risk-neutral `J_0(x) = min_u {c(x) + E[J_1(f(x, u, w))]}` on `states`.
pub fn expectation_dp(model: &SystemModel, states: &[f64], spec: &StageCostSpec) -> Vec<f64> {
    state_dp(model, states, spec, |v| v.iter().map(|(p, j)| p * j).sum())
}

/// Worst-case `J_0(x) = min_u {c(x) + max_w J_1(f(x, u, w))}` over disturbances
/// with positive probability.
pub fn minimax_dp(model: &SystemModel, states: &[f64], spec: &StageCostSpec) -> Vec<f64> {
    state_dp(model, states, spec, |v| {
        v.iter()
            .filter(|(p, _)| *p > 0.0)
            .map(|(_, j)| *j)
            .fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Finite chain on states `0, 1, …, n-1` with `next[x][u][j]` the successor
/// under control `u` and disturbance `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyChain {
    pub next: Vec<Vec<Vec<usize>>>,
    pub disturbance: DisturbanceDistribution,
}

impl ToyChain {
    pub fn n_states(&self) -> usize {
        self.next.len()
    }

    pub fn n_controls(&self) -> usize {
        self.next[0].len()
    }

    pub fn states(&self) -> Vec<f64> {
        (0..self.n_states()).map(|i| i as f64).collect()
    }

    /// The chain as a [`SystemModel`] with controls `0, 1, …`.
    pub fn model(&self, horizon: usize) -> Result<SystemModel> {
        let next = self.next.clone();
        let values = self.disturbance.values().to_vec();
        let controls = (0..self.n_controls()).map(|u| u as f64).collect();
        SystemModel::new(
            "toy",
            controls,
            self.disturbance.clone(),
            (0.0, (self.n_states() - 1) as f64),
            horizon,
            move |x, u, w| {
                let j = values.iter().position(|v| *v == w).unwrap_or(0);
                next[x.round() as usize][u.round() as usize][j] as f64
            },
        )
    }

    fn grouped(&self, x: usize, u: usize) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        for (j, &p) in self.disturbance.probs().iter().enumerate() {
            if p > 0.0 {
                *out.entry(self.next[x][u][j]).or_insert(0.0) += p;
            }
        }
        out
    }
}

type Dist = Vec<(f64, f64)>;

/// Every distribution of `Σ_{i≥k} c(x_i)` reachable from `x` at stage `k` by
/// some policy that may depend on the whole state history.
fn history_options(
    chain: &ToyChain,
    cost: &[f64],
    x: usize,
    k: usize,
    n: usize,
    memo: &mut HashMap<(usize, usize), Vec<Dist>>,
) -> Vec<Dist> {
    if let Some(v) = memo.get(&(x, k)) {
        return v.clone();
    }
    let out = if k == n {
        vec![vec![(cost[x], 1.0)]]
    } else {
        let mut out = Vec::new();
        for u in 0..chain.n_controls() {
            let groups: Vec<(usize, f64)> = chain.grouped(x, u).into_iter().collect();
            let children: Vec<Vec<Dist>> = groups
                .iter()
                .map(|&(xn, _)| history_options(chain, cost, xn, k + 1, n, memo))
                .collect();
            // odometer over one option per child
            let mut pick = vec![0usize; children.len()];
            loop {
                let mut dist = Vec::new();
                for (g, &(_, p)) in groups.iter().enumerate() {
                    for &(v, q) in &children[g][pick[g]] {
                        dist.push((cost[x] + v, p * q));
                    }
                }
                out.push(dist);
                let mut d = 0;
                while d < pick.len() {
                    pick[d] += 1;
                    if pick[d] < children[d].len() {
                        break;
                    }
                    pick[d] = 0;
                    d += 1;
                }
                if d == pick.len() {
                    break;
                }
            }
        }
        out
    };
    memo.insert((x, k), out.clone());
    out
}

/// Total-cost distributions of every deterministic policy that sees the state
/// history, from `x0` over `horizon` steps.
pub fn history_policy_costs(chain: &ToyChain, spec: &StageCostSpec, x0: usize, horizon: usize) -> Vec<Dist> {
    let cost: Vec<f64> = chain.states().iter().map(|&x| stage_cost(spec, x)).collect();
    history_options(chain, &cost, x0, 0, horizon, &mut HashMap::new())
}

/// `min_π CVaR_α[Σ_k c(x_k)]` over history-dependent deterministic policies.
pub fn min_cvar_history(chain: &ToyChain, spec: &StageCostSpec, x0: usize, horizon: usize, alpha: f64) -> Result<f64> {
    let mut best = f64::INFINITY;
    for d in history_policy_costs(chain, spec, x0, horizon) {
        best = best.min(cvar_exact(&DiscreteRandomVariable::from_pairs(&d)?, alpha)?);
    }
    Ok(best)
}

/// Same minimum over policies `μ_k(x)` that see only the current state.
pub fn min_cvar_markov(chain: &ToyChain, spec: &StageCostSpec, x0: usize, horizon: usize, alpha: f64) -> Result<f64> {
    let cost: Vec<f64> = chain.states().iter().map(|&x| stage_cost(spec, x)).collect();
    let (s, c) = (chain.n_states(), chain.n_controls());
    let slots = s * horizon;
    let total = c.pow(slots as u32);
    let mut best = f64::INFINITY;
    for code in 0..total {
        let mut policy = vec![0usize; slots];
        let mut rest = code;
        for p in policy.iter_mut() {
            *p = rest % c;
            rest /= c;
        }
        let mut paths: Dist = vec![(cost[x0], 1.0)];
        let mut at = vec![x0];
        for k in 0..horizon {
            let mut next_paths = Vec::new();
            let mut next_at = Vec::new();
            for (&(v, p), &x) in paths.iter().zip(&at) {
                for (xn, q) in chain.grouped(x, policy[k * s + x]) {
                    next_paths.push((v + cost[xn], p * q));
                    next_at.push(xn);
                }
            }
            paths = next_paths;
            at = next_at;
        }
        best = best.min(cvar_exact(&DiscreteRandomVariable::from_pairs(&paths)?, alpha)?);
    }
    Ok(best)
}

/// Exact total-cost distribution of a greedy augmented-state policy, found by
/// expanding every disturbance sequence. Only for small models.
pub fn table_policy_costs(
    model: &SystemModel,
    policy: &PolicyTable,
    spec: &StageCostSpec,
    x0: f64,
    alpha0: f64,
    horizon: usize,
) -> Result<Dist> {
    let dist = model.disturbance();
    let mut frontier = vec![(x0, alpha0, stage_cost(spec, x0), 1.0)];
    for k in 0..horizon {
        let mut next = Vec::with_capacity(frontier.len() * dist.len());
        for (x, y, acc, p) in frontier {
            for (j, (&w, &q)) in dist.values().iter().zip(dist.probs()).enumerate() {
                if q <= 0.0 {
                    continue;
                }
                let (u, y_next) = next_confidence(policy, k, x, y, j)?;
                let xn = model.step(x, u, w);
                next.push((xn, y_next, acc + stage_cost(spec, xn), p * q));
            }
        }
        frontier = next;
    }
    Ok(frontier.into_iter().map(|(_, _, v, p)| (v, p)).collect())
}

/// Like [`table_policy_costs`], but every decision is re-optimized at the
/// exact `(x, y)` reached instead of looked up at the nearest grid point.
pub fn online_greedy_costs(
    model: &SystemModel,
    grid: &AugmentedGrid,
    values: &[ValueTable],
    spec: &StageCostSpec,
    x0: f64,
    alpha0: f64,
    horizon: usize,
) -> Result<Dist> {
    let dist = model.disturbance();
    let mut frontier = vec![(x0, alpha0, stage_cost(spec, x0), 1.0)];
    for k in 0..horizon {
        let mut next = Vec::with_capacity(frontier.len() * dist.len());
        for (x, y, acc, p) in frontier {
            let d = greedy_decision(model, grid, spec, &values[k + 1], x, y)?;
            let u = model.controls()[d.control];
            for (j, (&w, &q)) in dist.values().iter().zip(dist.probs()).enumerate() {
                if q <= 0.0 {
                    continue;
                }
                let y_next = (d.multipliers[j] * y).clamp(grid.min_level(), 1.0);
                let xn = model.step(x, u, w);
                next.push((xn, y_next, acc + stage_cost(spec, xn), p * q));
            }
        }
        frontier = next;
    }
    Ok(frontier.into_iter().map(|(_, _, v, p)| (v, p)).collect())
}

/// Both sides of the one-step decomposition
/// `CVaR_α[Z] = max_{R} Σ_j p_j R_j CVaR_{α R_j}[Z | j]` for
/// `Z | j ~ children[j].1`, chosen with probability `children[j].0`.
///
/// The right side is solved with the envelope machinery on curves that carry
/// every breakpoint of `y ↦ y·CVaR_y`, so it is exact.
pub fn decomposition_sides(children: &[(f64, DiscreteRandomVariable)], alpha: f64) -> Result<(f64, f64)> {
    let joint: Dist = children
        .iter()
        .flat_map(|(p, z)| z.outcomes().iter().zip(z.probs()).map(move |(v, q)| (*v, p * q)))
        .collect();
    let lhs = cvar_exact(&DiscreteRandomVariable::from_pairs(&joint)?, alpha)?;

    let mut levels: Vec<f64> = vec![1.0];
    for (_, z) in children {
        let mut cum = 0.0;
        for (_, q) in z.sorted_desc() {
            cum += q;
            if cum > 1e-15 && cum < 1.0 - 1e-12 {
                levels.push(cum);
            }
        }
    }
    levels.sort_by(f64::total_cmp);
    levels.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let curves = children
        .iter()
        .map(|(_, z)| {
            let vals: Vec<f64> = levels.iter().map(|&y| cvar_exact(z, y)).collect::<Result<_>>()?;
            Ok(InterpolatedYJ::from_levels(&levels, &vals))
        })
        .collect::<Result<Vec<_>>>()?;
    let problem = InnerProblem {
        envelope: RiskEnvelope {
            y: alpha,
            probs: children.iter().map(|c| c.0).collect(),
            t_upper: 1.0,
        },
        curves,
    };
    let rhs = crate::envelope::solve_inner(&problem)?.optimal_value;
    Ok((lhs, rhs))
}

/// Largest objective over a uniform grid of feasible `t` for two or three
/// successors; the last coordinate is fixed by the budget constraint.
pub fn brute_force_inner(problem: &InnerProblem, steps: usize) -> f64 {
    let e = &problem.envelope;
    let w = e.probs.len();
    assert!((2..=3).contains(&w), "brute force supports two or three successors");
    let h = e.t_upper / steps as f64;
    let mut best = f64::NEG_INFINITY;
    let mut t = vec![0.0; w];
    let mut try_point = |t: &mut Vec<f64>| {
        let used: f64 = (0..w - 1).map(|j| e.probs[j] * t[j]).sum();
        let last = (e.y - used) / e.probs[w - 1];
        if last >= -1e-12 && last <= e.t_upper + 1e-12 {
            t[w - 1] = last.clamp(0.0, e.t_upper);
            best = best.max(problem.objective(t));
        }
    };
    for a in 0..=steps {
        t[0] = a as f64 * h;
        if w == 2 {
            try_point(&mut t);
        } else {
            for b in 0..=steps {
                t[1] = b as f64 * h;
                try_point(&mut t);
            }
        }
    }
    best
}
