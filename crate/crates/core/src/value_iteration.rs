//! CVaR value iteration on the augmented grid.
//!
//! ```text
//! J_N(x, y) = c(x)
//! J_k(x, y) = min_u { c(x) + max_{R ∈ R(y, P)} E[R · J_{k+1}(f(x, u, w), y·R)] }
//! ```
//!
//! Stage `k + 1` is frozen while stage `k` is computed; the grid points of a
//! stage are independent and are evaluated in parallel.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::{build_inner_problem, solve_inner, EnvelopeSolution};
use crate::error::{domain, Error, Result};
use crate::grid::{AugmentedGrid, ValueTable};
use crate::model::{SurfaceFunction, SystemModel};

/// Largest exponent passed to `exp` in the stage cost.
pub const EXPONENT_CLIP: f64 = 700.0;

/// Relative margin a later control must beat the incumbent by.
const CONTROL_TIE_TOL: f64 = 1e-12;

/// Exponential stage cost `c(x) = β·exp(m·g(x))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCostSpec {
    pub beta: f64,
    pub m: f64,
    pub surface: SurfaceFunction,
}

impl StageCostSpec {
    pub fn new(beta: f64, m: f64, surface: SurfaceFunction) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) || !(m > 0.0 && m.is_finite()) {
            return domain(format!("beta and m must be positive, got beta={beta}, m={m}"));
        }
        Ok(Self { beta, m, surface })
    }

    /// `β = 1e-3`, `m = 10`, `g(x) = x - 5`.
    pub fn pond_v1() -> Self {
        Self {
            beta: 1e-3,
            m: 10.0,
            surface: SurfaceFunction::LinearOffset { c_max: 5.0 },
        }
    }

    /// `β·exp(m·r)`, the cost level that defines a sublevel set at risk `r`.
    pub fn threshold(&self, r: f64) -> f64 {
        self.beta * (self.m * r).exp()
    }
}

/// Stage cost and whether the exponent had to be clipped.
pub fn stage_cost_checked(spec: &StageCostSpec, x: f64) -> (f64, bool) {
    let e = spec.m * spec.surface.eval(x);
    if e > EXPONENT_CLIP {
        (spec.beta * EXPONENT_CLIP.exp(), true)
    } else {
        (spec.beta * e.exp(), false)
    }
}

pub fn stage_cost(spec: &StageCostSpec, x: f64) -> f64 {
    stage_cost_checked(spec, x).0
}

/// Greedy controls (and confidence multipliers) of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStage {
    pub stage: usize,
    /// Index into the model's control set, per grid point.
    pub controls: Vec<usize>,
    /// `R̄(d_j)` per grid point and disturbance index.
    pub multipliers: Vec<Vec<f64>>,
}

/// `μ̄_k(x, y)` and `R̄_{x,y}` for `k = 0..N-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub control_values: Vec<f64>,
    pub grid: AugmentedGrid,
    pub stages: Vec<PolicyStage>,
}

impl PolicyTable {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn control(&self, k: usize, ix: usize, iy: usize) -> f64 {
        self.control_values[self.stages[k].controls[self.grid.index(ix, iy)]]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Wall time per backup, indexed by stage.
    pub stage_seconds: Vec<f64>,
    pub concavity_repairs: usize,
    pub saturations: usize,
}

/// Output of [`run_value_iteration`].
#[derive(Debug, Clone)]
pub struct Solution {
    /// `J_0, …, J_N`.
    pub values: Vec<ValueTable>,
    pub policy: PolicyTable,
    pub diagnostics: Diagnostics,
}

impl Solution {
    pub fn j0(&self) -> &ValueTable {
        &self.values[0]
    }
}

/// Greedy decision at one augmented point.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub value: f64,
    /// Index into the control set.
    pub control: usize,
    /// `R̄` per disturbance index.
    pub multipliers: Vec<f64>,
    pub repairs: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BackupStats {
    pub repairs: usize,
    pub saturations: usize,
}

/// Minimizes the envelope backup over controls at `(x, y)`, which need not be
/// a grid point. `j_next` is the frozen next-stage table.
pub fn greedy_decision(
    model: &SystemModel,
    grid: &AugmentedGrid,
    spec: &StageCostSpec,
    j_next: &ValueTable,
    x: f64,
    y: f64,
) -> Result<Decision> {
    let cost = stage_cost(spec, x);
    let mut best: Option<(f64, usize, EnvelopeSolution)> = None;
    let mut repairs = 0;
    for (ui, &u) in model.controls().iter().enumerate() {
        let successors: Vec<(f64, f64)> = model.successors(x, u).collect();
        let mut problem = build_inner_problem(&successors, y, j_next, grid);
        repairs += problem.repair();
        let sol = solve_inner(&problem).map_err(|e| Error::Solver {
            context: format!("stage {}, x = {x}, y = {y}, u = {u}", j_next.stage.saturating_sub(1)),
            message: e.to_string(),
        })?;
        let value = cost + sol.optimal_value;
        let better = match &best {
            None => true,
            Some((v, _, _)) => value < *v - CONTROL_TIE_TOL * v.abs(),
        };
        if better {
            best = Some((value, ui, sol));
        }
    }
    let (value, control, sol) = best.expect("control set is nonempty");
    Ok(Decision {
        value,
        control,
        multipliers: sol.r_star,
        repairs,
    })
}

/// One backup `J_{k+1} → J_k`.
pub fn bellman_backup(
    model: &SystemModel,
    grid: &AugmentedGrid,
    spec: &StageCostSpec,
    j_next: &ValueTable,
) -> Result<(ValueTable, PolicyStage, BackupStats)> {
    if j_next.stage == 0 {
        return domain("cannot back up past stage 0");
    }
    let k = j_next.stage - 1;
    let results: Vec<Decision> = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let (ix, iy) = grid.split(p);
            greedy_decision(model, grid, spec, j_next, grid.states()[ix], grid.levels()[iy])
        })
        .collect::<Result<_>>()?;

    let mut stats = BackupStats::default();
    let mut values = Vec::with_capacity(results.len());
    let mut controls = Vec::with_capacity(results.len());
    let mut multipliers = Vec::with_capacity(results.len());
    for r in results {
        stats.repairs += r.repairs;
        values.push(r.value);
        controls.push(r.control);
        multipliers.push(r.multipliers);
    }
    stats.saturations = grid
        .states()
        .iter()
        .filter(|&&x| stage_cost_checked(spec, x).1)
        .count()
        * grid.n_levels();
    Ok((
        ValueTable::new(k, grid, values)?,
        PolicyStage {
            stage: k,
            controls,
            multipliers,
        },
        stats,
    ))
}

/// `J_N(x, y) = c(x)`.
pub fn terminal_values(grid: &AugmentedGrid, spec: &StageCostSpec, horizon: usize) -> ValueTable {
    ValueTable::from_fn(horizon, grid, |x, _| stage_cost(spec, x))
}

/// Runs `N` backups from the terminal cost.
pub fn run_value_iteration(
    model: &SystemModel,
    grid: &AugmentedGrid,
    spec: &StageCostSpec,
) -> Result<Solution> {
    let n = model.horizon();
    let terminal = terminal_values(grid, spec, n);
    let mut diagnostics = Diagnostics {
        stage_seconds: vec![0.0; n],
        saturations: grid
            .states()
            .iter()
            .filter(|&&x| stage_cost_checked(spec, x).1)
            .count()
            * grid.n_levels(),
        ..Default::default()
    };
    let mut values = vec![terminal];
    let mut stages = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let start = Instant::now();
        let (table, stage, stats) = bellman_backup(model, grid, spec, values.last().unwrap())?;
        diagnostics.stage_seconds[k] = start.elapsed().as_secs_f64();
        diagnostics.concavity_repairs += stats.repairs;
        diagnostics.saturations += stats.saturations;
        log::debug!("stage {k}: {:.3}s, {} repairs", diagnostics.stage_seconds[k], stats.repairs);
        values.push(table);
        stages.push(stage);
    }
    values.reverse();
    stages.reverse();
    Ok(Solution {
        values,
        policy: PolicyTable {
            control_values: model.controls().to_vec(),
            grid: grid.clone(),
            stages,
        },
        diagnostics,
    })
}

/// One step of an augmented trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedStep {
    pub x: f64,
    pub y: f64,
    /// Control applied at this step; `None` at the final state.
    pub u: Option<f64>,
}

/// Next confidence level `y' = R̄(d_j)·y`, clamped to `[min G_c, 1]`.
pub fn next_confidence(
    policy: &PolicyTable,
    k: usize,
    x: f64,
    y: f64,
    disturbance: usize,
) -> Result<(f64, f64)> {
    let g = &policy.grid;
    let (ix, iy) = (g.nearest_state(x), g.nearest_level(y));
    let point = g.index(ix, iy);
    let stage = &policy.stages[k];
    let rbar = stage
        .multipliers
        .get(point)
        .and_then(|m| m.get(disturbance))
        .copied()
        .ok_or(Error::MissingMultiplier {
            stage: k,
            x: g.states()[ix],
            y: g.levels()[iy],
        })?;
    let u = policy.control_values[stage.controls[point]];
    Ok((u, (rbar * y).clamp(g.min_level(), 1.0)))
}

/// Rolls `(x_k, y_k)` forward along a disturbance index sequence, looking up
/// controls and multipliers at the nearest grid point.
pub fn confidence_rollout(
    model: &SystemModel,
    policy: &PolicyTable,
    x0: f64,
    alpha0: f64,
    disturbances: &[usize],
) -> Result<Vec<AugmentedStep>> {
    if !(alpha0 > 0.0 && alpha0 <= 1.0) {
        return domain(format!("initial confidence must lie in (0, 1], got {alpha0}"));
    }
    let steps = disturbances.len().min(policy.horizon());
    let values = model.disturbance().values();
    let mut out = Vec::with_capacity(steps + 1);
    let (mut x, mut y) = (x0, alpha0);
    for (k, &j) in disturbances.iter().take(steps).enumerate() {
        let (u, y_next) = next_confidence(policy, k, x, y, j)?;
        out.push(AugmentedStep { x, y, u: Some(u) });
        x = model.step(x, u, values[j]);
        y = y_next;
    }
    out.push(AugmentedStep { x, y, u: None });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::interpolate_state_value;
    use crate::model::DisturbanceDistribution;
    use approx::assert_abs_diff_eq;

    #[test]
    fn stage_cost_examples() {
        let s = StageCostSpec::pond_v1();
        assert_abs_diff_eq!(stage_cost(&s, 5.0), 1e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(stage_cost(&s, 6.0), 22.0265, epsilon = 1e-4);
        let c0 = stage_cost(&s, 0.0);
        assert!((c0 - 1.93e-25).abs() / 1.93e-25 < 1e-2, "{c0}");
        let hot = StageCostSpec::new(1.0, 1000.0, SurfaceFunction::LinearOffset { c_max: 0.0 }).unwrap();
        let (v, sat) = stage_cost_checked(&hot, 1.0);
        assert!(sat && v.is_finite());
        assert!(StageCostSpec::new(0.0, 1.0, s.surface).is_err());
    }

    fn absorbing() -> SystemModel {
        let d = DisturbanceDistribution::new(vec![0.0, 1.0], vec![0.3, 0.7]).unwrap();
        SystemModel::new("absorbing", vec![0.0], d, (0.0, 1.0), 4, |_, _, _| 1.0).unwrap()
    }

    #[test]
    fn absorbing_state_accumulates_cost() {
        let model = absorbing();
        let grid = AugmentedGrid::new(vec![0.0, 1.0], vec![0.1, 0.5, 1.0]).unwrap();
        let spec = StageCostSpec::new(2.0, 1.0, SurfaceFunction::LinearOffset { c_max: 1.0 }).unwrap();
        let sol = run_value_iteration(&model, &grid, &spec).unwrap();
        for k in 0..=4 {
            for iy in 0..3 {
                assert_abs_diff_eq!(sol.values[k].get(1, iy), (4 - k + 1) as f64 * 2.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_horizon_is_terminal_cost() {
        let model = absorbing().with_horizon(0);
        let grid = AugmentedGrid::new(vec![0.0, 1.0], vec![0.5, 1.0]).unwrap();
        let spec = StageCostSpec::pond_v1();
        let sol = run_value_iteration(&model, &grid, &spec).unwrap();
        assert_eq!(sol.values.len(), 1);
        assert_eq!(sol.j0().get(0, 0), stage_cost(&spec, 0.0));
        assert!(sol.policy.stages.is_empty());
    }

    #[test]
    fn top_level_row_is_risk_neutral_backup() {
        let model = crate::model::load_pond_benchmark().with_horizon(3);
        let grid = AugmentedGrid::pond_v1();
        let spec = StageCostSpec::pond_v1();
        let sol = run_value_iteration(&model, &grid, &spec).unwrap();
        let top = grid.n_levels() - 1;
        let j1 = &sol.values[1];
        for (ix, &x) in grid.states().iter().enumerate() {
            let neutral = model
                .controls()
                .iter()
                .map(|&u| {
                    stage_cost(&spec, x)
                        + model
                            .successors(x, u)
                            .map(|(xn, p)| p * interpolate_state_value(j1, &grid, xn, top))
                            .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            let v = sol.j0().get(ix, top);
            assert!((v - neutral).abs() <= 1e-10 * neutral.abs(), "x={x}: {v} vs {neutral}");
        }
    }

    #[test]
    fn rollout_with_unit_multipliers_keeps_confidence() {
        let model = absorbing();
        let grid = AugmentedGrid::new(vec![0.0, 1.0], vec![0.1, 0.5, 1.0]).unwrap();
        let stage = PolicyStage {
            stage: 0,
            controls: vec![0; grid.len()],
            multipliers: vec![vec![1.0, 1.0]; grid.len()],
        };
        let policy = PolicyTable {
            control_values: vec![0.0],
            grid: grid.clone(),
            stages: vec![stage.clone(), stage],
        };
        let path = confidence_rollout(&model, &policy, 0.0, 0.5, &[0, 1]).unwrap();
        assert!(path.iter().all(|s| s.y == 0.5));
        assert_eq!(path.len(), 3);

        let mut shrink = policy.clone();
        shrink.stages[0].multipliers = vec![vec![0.01, 0.01]; grid.len()];
        let path = confidence_rollout(&model, &shrink, 0.0, 0.5, &[0]).unwrap();
        assert_eq!(path[1].y, 0.1);

        let mut broken = policy;
        broken.stages[0].multipliers = vec![vec![]; grid.len()];
        assert!(matches!(
            confidence_rollout(&model, &broken, 0.0, 0.5, &[0]),
            Err(Error::MissingMultiplier { .. })
        ));
    }
}
