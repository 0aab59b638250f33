//! Property suites run by the `validate` command.
//!
//! Every suite draws from its own counter-based stream, so a run is fully
//! determined by the seed.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::envelope::{solve_inner, solve_inner_simplex, InnerProblem};
use crate::error::Result;
use crate::grid::AugmentedGrid;
use crate::model::{load_pond_benchmark, DisturbanceDistribution, SystemModel};
use crate::monte_carlo::{estimate_grid, CostKind, McRunConfig, RolloutPolicy, W0_SIGMA};
use crate::oracles::{
    brute_force_inner, decomposition_sides, expectation_dp, min_cvar_history, minimax_dp, ToyChain,
};
use crate::risk::{cvar_exact, log_sum_exp_scaled, CvarEstimate, DiscreteRandomVariable};
use crate::rng::{counter_rng, Stream};
use crate::safe_sets::{
    check_exit_bound, check_inclusion, check_nesting, extract_s_mc, extract_u, special_case_equivalence,
    SafeSetGrid,
};
use crate::value_iteration::{run_value_iteration, Solution, StageCostSpec};

/// Risk levels of the safe-set lattice, in feet.
pub const RISK_LEVELS: [f64; 5] = [-0.5, -0.25, 0.0, 0.25, 0.5];
/// Monte Carlo noise band, in standard errors.
pub const NOISE_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ValidationConfig {
    pub seed: u64,
    pub mc_samples: usize,
    /// Raw runoff table; checked by the distribution suite before use.
    pub disturbance_values: Vec<f64>,
    pub disturbance_probs: Vec<f64>,
}

impl ValidationConfig {
    pub fn pond(seed: u64, quick: bool) -> Self {
        let d = crate::model::pond_v1_distribution();
        Self {
            seed,
            mc_samples: if quick { 1_000 } else { 100_000 },
            disturbance_values: d.values().to_vec(),
            disturbance_probs: d.probs().to_vec(),
        }
    }
}

fn suite_rng(seed: u64, suite: u64) -> ChaCha8Rng {
    counter_rng(seed, Stream::Validation, suite)
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SuiteResult {
    let start = Instant::now();
    let (pass, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    SuiteResult {
        name,
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Random finite variable with `1..=max_atoms` atoms on `[lo, hi]`.
pub fn random_variable(rng: &mut impl Rng, max_atoms: usize, lo: f64, hi: f64) -> DiscreteRandomVariable {
    let n = rng.random_range(1..=max_atoms);
    let outcomes: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    DiscreteRandomVariable::new(outcomes, random_probs(rng, n)).expect("normalized")
}

fn random_probs(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|v| v / s).collect();
    let head: f64 = p[..n - 1].iter().sum();
    p[n - 1] = 1.0 - head;
    p
}

fn random_alpha(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.1) {
        1.0
    } else {
        rng.random_range(0.001..1.0)
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn suite_distribution(cfg: &ValidationConfig) -> SuiteResult {
    timed("distribution", || {
        match DisturbanceDistribution::new(cfg.disturbance_values.clone(), cfg.disturbance_probs.clone()) {
            Ok(d) => Ok((true, format!("{} outcomes, mean {:.4}", d.len(), d.mean()))),
            Err(e) => Ok((false, e.to_string())),
        }
    })
}

/// Coherence axioms on 1000 random variables, tolerance 1e-10.
pub fn suite_coherence(seed: u64) -> SuiteResult {
    timed("coherence", || {
        let mut rng = suite_rng(seed, 1);
        let tol = 1e-10;
        let mut failures = Vec::new();
        for i in 0..1000 {
            let n = rng.random_range(1..=8);
            let probs = random_probs(&mut rng, n);
            let z1: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let z2: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let a = random_alpha(&mut rng);
            let v = |z: &[f64]| cvar_exact(&DiscreteRandomVariable::new(z.to_vec(), probs.clone()).unwrap(), a).unwrap();
            let c1 = v(&z1);
            let c2 = v(&z2);
            let bump: Vec<f64> = z1.iter().map(|x| x + rng.random_range(0.0..1.0)).collect();
            let shift = rng.random_range(-3.0..3.0);
            let lambda = rng.random_range(0.1..4.0);
            let sum: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a + b).collect();
            let z1v = DiscreteRandomVariable::new(z1.clone(), probs.clone()).unwrap();
            let checks = [
                ("monotone", v(&bump) >= c1 - tol),
                ("translation", close(v(&z1.iter().map(|x| x + shift).collect::<Vec<_>>()), c1 + shift, tol)),
                ("homogeneous", close(v(&z1.iter().map(|x| x * lambda).collect::<Vec<_>>()), lambda * c1, tol)),
                ("subadditive", v(&sum) <= c1 + c2 + tol * (1.0 + c1.abs() + c2.abs())),
                ("bounds", c1 >= z1v.mean() - tol && c1 <= z1v.ess_sup() + tol),
            ];
            for (name, ok) in checks {
                if !ok {
                    failures.push(format!("#{i} {name}"));
                }
            }
        }
        Ok((failures.is_empty(), summarize(1000, &failures)))
    })
}

fn summarize(n: usize, failures: &[String]) -> String {
    if failures.is_empty() {
        format!("{n} cases")
    } else {
        format!("{} of {n} failed, first: {}", failures.len(), failures[0])
    }
}

/// `y ↦ y·CVaR_y[Z]` concave on a uniform grid, 200 variables.
pub fn suite_concavity(seed: u64) -> SuiteResult {
    timed("concavity", || {
        let mut rng = suite_rng(seed, 2);
        let ys: Vec<f64> = (1..=200).map(|i| i as f64 / 200.0).collect();
        let mut failures = Vec::new();
        for i in 0..200 {
            let z = random_variable(&mut rng, 10, -5.0, 5.0);
            let f: Vec<f64> = ys.iter().map(|&y| y * cvar_exact(&z, y).unwrap()).collect();
            if f.windows(3).any(|w| w[0] + w[2] - 2.0 * w[1] > 1e-10) {
                failures.push(format!("#{i}"));
            }
        }
        Ok((failures.is_empty(), summarize(200, &failures)))
    })
}

/// `max y ≤ (1/m) log Σ e^{m y_i} ≤ max y + log(p)/m` on 1000 vectors, and
/// `CVaR[log Z] ≤ log CVaR[Z]` for positive `Z`.
pub fn suite_log_sum_exp(seed: u64) -> SuiteResult {
    timed("log_sum_exp", || {
        let mut rng = suite_rng(seed, 3);
        let mut failures = Vec::new();
        for i in 0..1000 {
            let p = rng.random_range(1..=12);
            let y: Vec<f64> = (0..p).map(|_| rng.random_range(-10.0..10.0)).collect();
            let m = rng.random_range(0.1..50.0);
            let lse = log_sum_exp_scaled(&y, m)?;
            let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-12 * max.abs().max(1.0);
            if lse < max - tol || lse > max + (p as f64).ln() / m + tol {
                failures.push(format!("#{i} bounds"));
            }
            let z = random_variable(&mut rng, 6, 0.01, 10.0);
            let a = random_alpha(&mut rng);
            if cvar_exact(&z.map(f64::ln), a)? > cvar_exact(&z, a)?.ln() + 1e-12 {
                failures.push(format!("#{i} log"));
            }
        }
        Ok((failures.is_empty(), summarize(1000, &failures)))
    })
}

/// One-step decomposition identity on depth-2 chains, tolerance 1e-6.
pub fn suite_decomposition(seed: u64) -> SuiteResult {
    timed("decomposition", || {
        let mut rng = suite_rng(seed, 4);
        let mut failures = Vec::new();
        let mut worst: f64 = 0.0;
        for i in 0..500 {
            let w = rng.random_range(2..=3);
            let probs = random_probs(&mut rng, w);
            let children: Vec<(f64, DiscreteRandomVariable)> = probs
                .iter()
                .map(|&p| (p, random_variable(&mut rng, 4, 0.0, 10.0)))
                .collect();
            let a = random_alpha(&mut rng);
            let (l, r) = decomposition_sides(&children, a)?;
            worst = worst.max((l - r).abs());
            if (l - r).abs() > 1e-6 {
                failures.push(format!("#{i} α={a}: {l} vs {r}"));
            }
        }
        Ok((failures.is_empty(), format!("{}, max gap {worst:.2e}", summarize(500, &failures))))
    })
}

/// Random concave envelope problem with two or three successors.
pub fn random_inner_problem(rng: &mut impl Rng) -> InnerProblem {
    let w = rng.random_range(2..=3);
    let n_levels = rng.random_range(3..=9);
    let mut levels: Vec<f64> = (0..n_levels - 1).map(|_| rng.random_range(0.01..0.99)).collect();
    levels.push(1.0);
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let values: Vec<Vec<f64>> = (0..w)
        .map(|_| {
            let z = random_variable(rng, 5, 0.0, 1.0);
            levels.iter().map(|&y| cvar_exact(&z, y).unwrap()).collect()
        })
        .collect();
    let y = rng.random_range(0.25..1.0);
    InnerProblem::from_values(y, random_probs(rng, w), &levels, &values)
}

/// Greedy envelope solver against a brute-force grid search over `R`,
/// 200 instances, tolerance 5e-3.
pub fn suite_envelope(seed: u64) -> SuiteResult {
    timed("envelope_oracle", || {
        let mut rng = suite_rng(seed, 5);
        let mut failures = Vec::new();
        let mut worst: f64 = 0.0;
        for i in 0..200 {
            let p = random_inner_problem(&mut rng);
            let steps = if p.curves.len() == 2 { 20_000 } else { 400 };
            let greedy = solve_inner(&p)?.optimal_value;
            let brute = brute_force_inner(&p, steps);
            let lp = solve_inner_simplex(&p)?.optimal_value;
            worst = worst.max(greedy - brute);
            if greedy < brute - 1e-9 || greedy - brute > 5e-3 || (greedy - lp).abs() > 1e-7 {
                failures.push(format!("#{i}: greedy {greedy} brute {brute} simplex {lp}"));
            }
        }
        Ok((failures.is_empty(), format!("{}, max gap {worst:.2e}", summarize(200, &failures))))
    })
}

/// Value iteration against exhaustive policy enumeration on random toy chains
/// with up to 3 states, 2 controls, 3 disturbances and 3 steps.
pub fn suite_toy_enumeration(seed: u64, chains: usize) -> SuiteResult {
    timed("toy_enumeration", || {
        let mut rng = suite_rng(seed, 6);
        let spec = StageCostSpec::new(1.0, 1.0, crate::model::SurfaceFunction::LinearOffset { c_max: 1.0 })?;
        let levels: Vec<f64> = (1..=64).map(|i| i as f64 / 64.0).collect();
        let mut failures = Vec::new();
        let mut worst: f64 = 0.0;
        let mut cases = 0;
        for i in 0..chains {
            let chain = random_toy_chain(&mut rng);
            let n = rng.random_range(1..=3);
            let grid = AugmentedGrid::new(chain.states(), levels.clone())?;
            let sol = run_value_iteration(&chain.model(n)?, &grid, &spec)?;
            for x0 in 0..chain.n_states() {
                for iy in [0, 7, 15, 31, 47, 63] {
                    let exact = min_cvar_history(&chain, &spec, x0, n, levels[iy])?;
                    let vi = sol.j0().get(x0, iy);
                    worst = worst.max((vi - exact).abs());
                    cases += 1;
                    if (vi - exact).abs() > 1e-3 {
                        failures.push(format!("chain #{i} x0={x0} α={}: {vi} vs {exact}", levels[iy]));
                    }
                }
            }
        }
        Ok((failures.is_empty(), format!("{}, max gap {worst:.2e}", summarize(cases, &failures))))
    })
}

/// Chain with 2-3 states, 1-2 controls and 2-3 disturbances whose
/// probabilities are multiples of 1/4.
pub fn random_toy_chain(rng: &mut impl Rng) -> ToyChain {
    let s = rng.random_range(2..=3);
    let c = rng.random_range(1..=2);
    let w = rng.random_range(2..=3);
    let probs = if w == 2 {
        let a = rng.random_range(1..=3) as f64 / 4.0;
        vec![a, 1.0 - a]
    } else {
        let mut p = vec![0.25, 0.25, 0.25];
        p[rng.random_range(0..3)] = 0.5;
        p
    };
    let next = (0..s)
        .map(|_| (0..c).map(|_| (0..w).map(|_| rng.random_range(0..s)).collect()).collect())
        .collect();
    ToyChain {
        next,
        disturbance: DisturbanceDistribution::new((0..w).map(|j| j as f64).collect(), probs).expect("valid"),
    }
}

/// Solved pond benchmark plus Monte Carlo estimates of the worst surface value
/// on the full grid under the open valve.
pub struct PondRun {
    pub model: SystemModel,
    pub grid: AugmentedGrid,
    pub spec: StageCostSpec,
    pub solution: Solution,
    pub mc: McRunConfig,
    /// `w0[ix][iy]` at `(G_s[ix], G_c[iy])`.
    pub w0: Vec<Vec<CvarEstimate>>,
}

impl PondRun {
    pub fn new(model: SystemModel, grid: AugmentedGrid, spec: StageCostSpec, samples: usize, seed: u64) -> Result<Self> {
        let solution = run_value_iteration(&model, &grid, &spec)?;
        let mc = McRunConfig::new(samples, W0_SIGMA, seed, model.horizon())?;
        let w0 = estimate_grid(
            &model,
            &RolloutPolicy::Fixed(1.0),
            grid.states(),
            grid.levels(),
            &CostKind::MaxSurface(spec.surface),
            &mc,
        )?;
        Ok(Self {
            model,
            grid,
            spec,
            solution,
            mc,
            w0,
        })
    }

    pub fn pond_v1(samples: usize, seed: u64) -> Result<Self> {
        Self::new(load_pond_benchmark(), AugmentedGrid::pond_v1(), StageCostSpec::pond_v1(), samples, seed)
    }

    pub fn u_sets(&self, risks: &[f64]) -> Result<Vec<SafeSetGrid>> {
        let mut out = Vec::new();
        for &a in self.grid.levels() {
            for &r in risks {
                out.push(extract_u(self.solution.j0(), &self.grid, &self.spec, a, r)?);
            }
        }
        Ok(out)
    }

    pub fn s_sets(&self, risks: &[f64]) -> Result<Vec<SafeSetGrid>> {
        let mut out = Vec::new();
        for &a in self.grid.levels() {
            for &r in risks {
                out.push(extract_s_mc(self.grid.states(), &self.w0, a, r)?);
            }
        }
        Ok(out)
    }
}

/// Greedy valve policy, risk-neutral oracle, monotonicity and the
/// expectation/worst-case bracket on the pond.
pub fn suite_pond_value_iteration(run: &PondRun) -> SuiteResult {
    timed("pond_value_iteration", || {
        let (grid, j0) = (&run.grid, run.solution.j0());
        let mut notes = Vec::new();
        let outlet = crate::model::PondParams::pond_v1().outlet_elev;
        let closed = (0..run.solution.policy.horizon())
            .flat_map(|k| (0..grid.n_states()).flat_map(move |ix| (0..grid.n_levels()).map(move |iy| (k, ix, iy))))
            .filter(|&(k, ix, iy)| grid.states()[ix] >= outlet && run.solution.policy.control(k, ix, iy) != 1.0)
            .count();
        if closed > 0 {
            notes.push(format!("{closed} closed-valve choices at x ≥ E"));
        }
        let neutral = expectation_dp(&run.model, grid.states(), &run.spec);
        let worst = minimax_dp(&run.model, grid.states(), &run.spec);
        let top = grid.n_levels() - 1;
        let mut max_rel: f64 = 0.0;
        for ix in 0..grid.n_states() {
            max_rel = max_rel.max((j0.get(ix, top) - neutral[ix]).abs() / neutral[ix]);
            let row = j0.row(ix);
            if row.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12)) {
                notes.push(format!("not nonincreasing in y at x={}", grid.states()[ix]));
            }
            if row[0] > worst[ix] * (1.0 + 1e-9) || row[0] < neutral[ix] * (1.0 - 1e-9) {
                notes.push(format!("outside expectation/worst-case bracket at x={}", grid.states()[ix]));
            }
            if ix > 0 && (0..grid.n_levels()).any(|iy| j0.get(ix, iy) < j0.get(ix - 1, iy) * (1.0 - 1e-12)) {
                notes.push(format!("not nondecreasing in x at x={}", grid.states()[ix]));
            }
        }
        if max_rel > 0.01 {
            notes.push(format!("risk-neutral gap {max_rel:.3e}"));
        }
        Ok((
            notes.is_empty(),
            if notes.is_empty() {
                format!("risk-neutral gap {max_rel:.2e}, valve open everywhere at x ≥ E")
            } else {
                notes.join("; ")
            },
        ))
    })
}

/// Nesting of value-iteration sets (exact) and Monte Carlo sets (noise band)
/// across the full `G_c × r` lattice.
pub fn suite_nesting(run: &PondRun) -> SuiteResult {
    timed("nesting", || {
        let u = check_nesting(&run.u_sets(&RISK_LEVELS)?, 0.0);
        let s = check_nesting(&run.s_sets(&RISK_LEVELS)?, NOISE_SIGMAS);
        Ok((
            u.pass && s.pass,
            format!(
                "U: {} pairs, {} violations; S: {} pairs, {} violations, {} in band",
                u.pairs_checked,
                u.violations.len(),
                s.pairs_checked,
                s.violations.len(),
                s.in_band
            ),
        ))
    })
}

/// `U ⊆ S` on the lattice.
pub fn suite_inclusion(run: &PondRun) -> SuiteResult {
    timed("inclusion", || {
        let us = run.u_sets(&RISK_LEVELS)?;
        let ss = run.s_sets(&RISK_LEVELS)?;
        let mut violations = 0;
        let mut band = 0;
        let mut u_total = 0;
        for (u, s) in us.iter().zip(&ss) {
            let rep = check_inclusion(u, s, NOISE_SIGMAS)?;
            violations += rep.violations.len();
            band += rep.in_band.len();
            u_total += u.len();
        }
        Ok((
            violations == 0,
            format!("{} pairs, {u_total} U members, {violations} violations, {band} in band", us.len()),
        ))
    })
}

/// Exit frequency of every `x ∈ U_α^0` stays below `α` plus three binomial
/// standard errors. Runs on the pond and on a 12-step pond where `U_α^0` is
/// not empty.
pub fn suite_exit_bound(run: &PondRun, short: &PondRun) -> SuiteResult {
    timed("exit_bound", || {
        let mut checked = 0;
        let mut pass = true;
        for r in [run, short] {
            let mc = McRunConfig { bootstrap_resamples: 0, ..r.mc };
            let rep = check_exit_bound(
                &r.model,
                r.solution.j0(),
                &r.grid,
                &r.spec,
                &RolloutPolicy::Fixed(1.0),
                &mc,
                NOISE_SIGMAS,
            )?;
            checked += rep.checks.len();
            pass &= rep.pass;
        }
        Ok((pass, format!("{checked} (x, α) members checked")))
    })
}

/// Maximal probabilistic safe set against the `α = 1` indicator pipeline, at
/// `ε = 0.1` on the pond and on the 12-step pond.
pub fn suite_special_case(seed: u64, samples: usize) -> SuiteResult {
    timed("special_case", || {
        let mut levels = crate::grid::POND_LEVELS.to_vec();
        levels[0] = 1.0;
        let grid = AugmentedGrid::new(AugmentedGrid::pond_v1().states().to_vec(), levels)?;
        let mut notes = Vec::new();
        let mut pass = true;
        for n in [48, 12] {
            let model = load_pond_benchmark().with_horizon(n);
            let mut cfg = McRunConfig::new(samples, 0.0, seed, n)?;
            cfg.bootstrap_resamples = 0;
            let rep = special_case_equivalence(&model, &grid, 5.0, 0.1, &RolloutPolicy::Fixed(1.0), &cfg, 100)?;
            pass &= rep.pass;
            notes.push(format!(
                "N={n}: {} oracle members, {} differ, {} outside shell",
                rep.rows.iter().filter(|r| r.in_dp).count(),
                rep.symmetric_difference.len(),
                rep.outside_shell.len()
            ));
        }
        Ok((pass, notes.join("; ")))
    })
}

/// Allowance for the estimator's own jitter, in units of the jitter sigma.
/// The tail mean of `N(0, σ²)` noise stays below `4σ` at the smallest level.
pub const JITTER_ALLOWANCE: f64 = 10.0;

/// Monte Carlo worst surface value never exceeds 1.5 ft beyond noise.
pub fn suite_w0_ceiling(run: &PondRun) -> SuiteResult {
    timed("w0_ceiling", || {
        let max = run
            .w0
            .iter()
            .flatten()
            .map(|e| e.value - NOISE_SIGMAS * e.std_error.unwrap_or(0.0) - JITTER_ALLOWANCE * e.jitter_sigma)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok((max <= 1.5, format!("largest estimate minus 3σ: {max:.6}")))
    })
}

/// Runs every suite. The pond-dependent suites are skipped when the runoff
/// table is invalid.
pub fn run_all(cfg: &ValidationConfig) -> Vec<SuiteResult> {
    let mut out = vec![suite_distribution(cfg)];
    out.push(suite_coherence(cfg.seed));
    out.push(suite_concavity(cfg.seed));
    out.push(suite_log_sum_exp(cfg.seed));
    out.push(suite_decomposition(cfg.seed));
    out.push(suite_envelope(cfg.seed));
    out.push(suite_toy_enumeration(cfg.seed, 40));
    if !out[0].pass {
        return out;
    }
    let built = DisturbanceDistribution::new(cfg.disturbance_values.clone(), cfg.disturbance_probs.clone())
        .and_then(|d| SystemModel::pond(crate::model::PondParams::pond_v1(), d))
        .and_then(|model| {
            let short = model.clone().with_horizon(12);
            Ok((
                PondRun::new(model, AugmentedGrid::pond_v1(), StageCostSpec::pond_v1(), cfg.mc_samples, cfg.seed)?,
                PondRun::new(short, AugmentedGrid::pond_v1(), StageCostSpec::pond_v1(), cfg.mc_samples, cfg.seed)?,
            ))
        });
    match built {
        Ok((run, short)) => {
            out.push(suite_pond_value_iteration(&run));
            out.push(suite_w0_ceiling(&run));
            out.push(suite_inclusion(&run));
            out.push(suite_nesting(&run));
            out.push(suite_exit_bound(&run, &short));
            out.push(suite_special_case(cfg.seed, cfg.mc_samples.min(20_000)));
        }
        Err(e) => out.push(SuiteResult {
            name: "pond",
            pass: false,
            detail: e.to_string(),
            seconds: 0.0,
        }),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupted_table_fails_distribution_suite() {
        let mut cfg = ValidationConfig::pond(1, true);
        cfg.disturbance_probs[0] += 0.01;
        let r = suite_distribution(&cfg);
        assert!(!r.pass);
        assert!(r.detail.contains("sum"));
    }

    #[test]
    fn analytic_suites_pass() {
        for r in [suite_coherence(3), suite_concavity(3), suite_log_sum_exp(3), suite_decomposition(3)] {
            assert!(r.pass, "{}: {}", r.name, r.detail);
        }
    }
}
