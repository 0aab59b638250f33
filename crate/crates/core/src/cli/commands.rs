//! The four subcommands. Each returns its result so callers other than
//! `main` can inspect it.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::artifacts::*;
use super::config::{PolicySource, Resolved, RunConfig};
use super::CliError;
use crate::monte_carlo::{estimate_grid, relative_gaps, CostKind, GapReport, RolloutPolicy};
use crate::risk::CvarEstimate;
use crate::safe_sets::{
    check_exit_bound, check_inclusion, check_nesting, extract_s_mc, extract_u, ExitBoundReport, InclusionReport,
    NestingReport,
};
use crate::validation::{run_all, SuiteResult, ValidationConfig, NOISE_SIGMAS};
use crate::value_iteration::{run_value_iteration, PolicyTable};

fn numeric(stage: &str) -> impl Fn(crate::Error) -> CliError + '_ {
    move |e| CliError::numeric(format!("{stage}: {e}"))
}

fn expect_hash(manifest: &RunManifest, expected: &str) -> Result<(), CliError> {
    if manifest.config_hash != expected {
        return Err(CliError::stale(format!(
            "{} outputs were produced by a different config (hash {}, expected {expected}); rerun `{}`",
            manifest.command, manifest.config_hash, manifest.command
        )));
    }
    Ok(())
}

pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    let res = Resolved::new(cfg)?;
    let start = Instant::now();
    let sol = run_value_iteration(&res.model, &res.grid, &res.spec).map_err(numeric("value iteration"))?;
    let vi_seconds = start.elapsed().as_secs_f64();

    let mut dir = OutputDir::create(out)?;
    dir.write_csv(J0_FILE, &["k", "x", "y", "J"], value_rows(sol.j0(), &res.grid))?;
    for k in 0..sol.policy.horizon() {
        dir.write_csv(&policy_file(k), &["k", "x", "y", "u"], policy_rows(&sol.policy, k))?;
        dir.write_csv(&multipliers_file(k), &["k", "x", "y", "j", "R"], multiplier_rows(&sol.policy, k))?;
    }

    let mut m = RunManifest::new("solve", cfg.solve_hash());
    m.timings = sol
        .diagnostics
        .stage_seconds
        .iter()
        .enumerate()
        .map(|(k, &s)| Timing { stage: format!("backup_{k}"), seconds: s })
        .collect();
    m.timings.push(Timing { stage: "value_iteration".into(), seconds: vi_seconds });
    m.concavity_repairs = sol.diagnostics.concavity_repairs;
    m.saturations = sol.diagnostics.saturations;
    let m = dir.finish(SOLVE_MANIFEST, m)?;
    println!(
        "solve: {} grid points, N = {}, {:.2}s, {} concavity repairs, {} saturations -> {}",
        res.grid.len(),
        res.model.horizon(),
        vi_seconds,
        m.concavity_repairs,
        m.saturations,
        out.display()
    );
    Ok(m)
}

/// Greedy tables from a previous `solve` in `out`, when the config asks for them.
fn load_policy(cfg: &RunConfig, res: &Resolved, out: &Path) -> Result<Option<(PolicyTable, FileEntry)>, CliError> {
    if res.policy != PolicySource::Table {
        return Ok(None);
    }
    let manifest = read_manifest(out, SOLVE_MANIFEST)
        .map_err(|e| CliError::missing(format!("table policy requested but no solve outputs: {e}")))?;
    expect_hash(&manifest, &cfg.solve_hash())?;
    let table = read_policy(
        out,
        &manifest,
        &res.grid,
        res.model.controls(),
        res.model.disturbance().len(),
        res.model.horizon(),
    )
    .map_err(|e| match e.code {
        super::EXIT_STALE => e,
        _ => CliError::missing(format!("table policy requested: {e}")),
    })?;
    let bytes = std::fs::read(out.join(SOLVE_MANIFEST)).map_err(|e| CliError::io(&out.join(SOLVE_MANIFEST), e))?;
    Ok(Some((table, entry(SOLVE_MANIFEST, &bytes))))
}

fn rollout_policy<'a>(res: &Resolved, table: &'a Option<(PolicyTable, FileEntry)>) -> RolloutPolicy<'a> {
    match (res.policy, table) {
        (_, Some((t, _))) => RolloutPolicy::Table(t),
        (PolicySource::Fixed { control }, None) => RolloutPolicy::Fixed(control),
        (PolicySource::Table, None) => unreachable!("table policy is loaded before use"),
    }
}

pub fn cmd_mc(cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    let res = Resolved::new(cfg)?;
    let table = load_policy(cfg, &res, out)?;
    let policy = rollout_policy(&res, &table);
    let states = res.grid.states();

    let start = Instant::now();
    let w0 = estimate_grid(&res.model, &policy, states, &res.alphas, &CostKind::MaxSurface(res.spec.surface), &res.w0_mc)
        .map_err(numeric("W0 estimates"))?;
    let w0_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let j0 = estimate_grid(&res.model, &policy, states, &res.alphas, &CostKind::SumStageCost(res.spec), &res.j0_mc)
        .map_err(numeric("J0* estimates"))?;
    let j0_seconds = start.elapsed().as_secs_f64();

    let mut dir = OutputDir::create(out)?;
    dir.write_csv(W0_FILE, &ESTIMATE_HEADER, estimate_rows(states, &w0, res.w0_mc.seed))?;
    dir.write_csv(J0STAR_FILE, &ESTIMATE_HEADER, estimate_rows(states, &j0, res.j0_mc.seed))?;

    let mut m = RunManifest::new("mc", cfg.mc_hash());
    m.seed = Some(res.w0_mc.seed);
    m.inputs = table.iter().map(|(_, e)| e.clone()).collect();
    m.timings = vec![
        Timing { stage: "w0".into(), seconds: w0_seconds },
        Timing { stage: "j0star".into(), seconds: j0_seconds },
    ];
    let m = dir.finish(MC_MANIFEST, m)?;
    println!(
        "mc: {} states x {} levels, M = {}, {:.2}s + {:.2}s -> {}",
        states.len(),
        res.alphas.len(),
        res.w0_mc.samples,
        w0_seconds,
        j0_seconds,
        out.display()
    );
    Ok(m)
}

#[derive(Debug, Clone, Serialize)]
pub struct SetsReport {
    pub config_hash: String,
    pub inclusion: Vec<InclusionReport>,
    pub nesting: NestingReport,
    /// Absent when the lattice is empty.
    pub exit_bound: Option<ExitBoundReport>,
    /// Value iteration against Monte Carlo `J0*` on the lattice; not gated.
    pub gaps: Option<GapReport>,
    pub pass: bool,
}

fn lattice_estimates(
    states: &[f64],
    alphas: &[f64],
    table: &std::collections::HashMap<(u64, u64), CvarEstimate>,
    name: &str,
) -> Result<Vec<Vec<CvarEstimate>>, CliError> {
    states
        .iter()
        .map(|&x| {
            alphas
                .iter()
                .map(|&a| {
                    table
                        .get(&(x.to_bits(), a.to_bits()))
                        .copied()
                        .ok_or_else(|| CliError::stale(format!("{name} has no estimate at x = {x}, alpha = {a}")))
                })
                .collect()
        })
        .collect()
}

pub fn cmd_sets(cfg: &RunConfig, out: &Path) -> Result<SetsReport, CliError> {
    let res = Resolved::new(cfg)?;
    let solve = read_manifest(out, SOLVE_MANIFEST)?;
    expect_hash(&solve, &cfg.solve_hash())?;
    let mc = read_manifest(out, MC_MANIFEST)?;
    expect_hash(&mc, &cfg.mc_hash())?;
    let (j0_bytes, j0_entry) = read_checked(out, &solve, J0_FILE)?;
    let (w0_bytes, w0_entry) = read_checked(out, &mc, W0_FILE)?;
    let (js_bytes, js_entry) = read_checked(out, &mc, J0STAR_FILE)?;
    let j0 = read_value_table(&j0_bytes, &res.grid, J0_FILE)?;
    let states = res.grid.states();
    let w0 = lattice_estimates(states, &res.alphas, &read_estimates(&w0_bytes, W0_FILE)?, W0_FILE)?;
    let j0star = lattice_estimates(states, &res.alphas, &read_estimates(&js_bytes, J0STAR_FILE)?, J0STAR_FILE)?;

    let mut rows = Vec::new();
    let mut inclusion = Vec::new();
    let mut s_sets = Vec::new();
    for (ia, &alpha) in res.alphas.iter().enumerate() {
        let iy = res.grid.level_index(alpha).expect("lattice levels are checked against the grid");
        for &r in &res.risks {
            let u = extract_u(&j0, &res.grid, &res.spec, alpha, r).map_err(numeric("U extraction"))?;
            let s = extract_s_mc(states, &w0, alpha, r).map_err(numeric("S extraction"))?;
            for (ix, &x) in states.iter().enumerate() {
                let e = &w0[ix][ia];
                rows.push(vec![
                    num(x),
                    num(alpha),
                    num(r),
                    u.membership[ix].to_string(),
                    s.membership[ix].to_string(),
                    num(j0.get(ix, iy)),
                    num(e.value),
                    e.std_error.map(num).unwrap_or_default(),
                ]);
            }
            inclusion.push(check_inclusion(&u, &s, NOISE_SIGMAS).map_err(numeric("inclusion"))?);
            s_sets.push(s);
        }
    }
    let nesting = check_nesting(&s_sets, NOISE_SIGMAS);

    let lattice_empty = res.alphas.is_empty() || res.risks.is_empty();
    let (exit_bound, gaps) = if lattice_empty {
        (None, None)
    } else {
        let table = load_policy(cfg, &res, out)?;
        let policy = rollout_policy(&res, &table);
        let exit = check_exit_bound(&res.model, &j0, &res.grid, &res.spec, &policy, &res.w0_mc, NOISE_SIGMAS)
            .map_err(numeric("exit bound"))?;
        let mut pairs = Vec::new();
        for (ix, row) in j0star.iter().enumerate() {
            for (ia, e) in row.iter().enumerate() {
                let iy = res.grid.level_index(res.alphas[ia]).expect("checked");
                pairs.push((j0.get(ix, iy), e.value));
            }
        }
        (Some(exit), Some(relative_gaps(&pairs)))
    };

    let pass = inclusion.iter().all(|i| i.pass) && nesting.pass && exit_bound.as_ref().is_none_or(|e| e.pass);
    let report = SetsReport {
        config_hash: cfg.sets_hash(),
        inclusion,
        nesting,
        exit_bound,
        gaps,
        pass,
    };

    let mut dir = OutputDir::create(out)?;
    dir.write_csv(
        SETS_FILE,
        &["x", "alpha", "r", "in_U", "in_S_mc", "J0", "W0_mc", "W0_stderr"],
        rows,
    )?;
    dir.write_json(SETS_REPORT, &report)?;
    let mut m = RunManifest::new("sets", cfg.sets_hash());
    m.seed = Some(res.w0_mc.seed);
    m.inputs = vec![j0_entry, w0_entry, js_entry];
    dir.finish(SETS_MANIFEST, m)?;

    print_sets(&report);
    Ok(report)
}

fn print_sets(report: &SetsReport) {
    for i in &report.inclusion {
        println!(
            "inclusion alpha={:<6} r={:<6} violations={} in_band={} {}",
            i.alpha,
            i.r,
            i.violations.len(),
            i.in_band.len(),
            verdict(i.pass)
        );
    }
    let n = &report.nesting;
    println!(
        "nesting pairs={} violations={} in_band={} {}",
        n.pairs_checked,
        n.violations.len(),
        n.in_band,
        verdict(n.pass)
    );
    if let Some(e) = &report.exit_bound {
        println!("exit bound checked={} {}", e.checks.len(), verdict(e.pass));
    }
    if let Some(g) = &report.gaps {
        println!(
            "J0 vs MC J0*: mean (max) gap over MC {:.3} ({:.3}), over VI {:.3} ({:.3}), {} points",
            g.mean_by_mc, g.max_by_mc, g.mean_by_vi, g.max_by_vi, g.points
        );
    }
    println!("sets: {}", verdict(report.pass));
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// `quick` uses 1000 samples; otherwise `mc.samples`. The runoff table is
/// passed through unchecked so the distribution suite can reject it.
pub fn cmd_validate(cfg: &RunConfig, quick: bool) -> Result<Vec<SuiteResult>, CliError> {
    let mut v = ValidationConfig::pond(cfg.mc.seed, quick);
    if !quick {
        v.mc_samples = cfg.mc.samples;
    }
    if let Some(d) = &cfg.model.disturbance {
        v.disturbance_values = d.values.clone();
        v.disturbance_probs = d.probs.clone();
    }
    let results = run_all(&v);
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        println!("{:<width$}  {}  {:>8.2}s  {}", r.name, verdict(r.pass), r.seconds, r.detail);
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("validate: {} suites, {failed} failed", results.len());
    Ok(results)
}
