//! The inner maximization over the CVaR risk envelope.
//!
//! At an augmented grid point `(x, y)` with control `u`, the backup needs
//!
//! ```text
//! max  E[R · J(x', y·R)]   over  E[R] = 1,  0 < R ≤ 1/y.
//! ```
//!
//! Substituting `t_j = y·R_j` turns this into
//!
//! ```text
//! max  Σ_j (p_j / y) · F_j(t_j)   s.t.  Σ_j p_j t_j = y,  0 ≤ t_j ≤ y_max,
//! ```
//!
//! where `F_j` linearly interpolates the points `(y_i, y_i·J(x'_j, y_i))` over
//! the confidence grid, anchored at `(0, 0)` because `y·CVaR_y → 0` as `y → 0`.
//! Each `F_j` is concave, so the problem is a continuous knapsack over segment
//! slopes and is solved exactly by greedy allocation. [`solve_inner_simplex`]
//! solves the same problem as a hypograph LP for cross-checking.

use std::fmt::Write as _;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{interpolate_bracket, AugmentedGrid, ValueTable};
use crate::simplex::{LinearProgram, LpOutcome, Relation};

/// Perturbations larger than this are reported as repairs.
pub const REPAIR_TOL: f64 = 1e-6;

/// Concave piecewise-linear curve `t ↦ F(t)` through sorted breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolatedYJ {
    pub ts: Vec<f64>,
    pub vals: Vec<f64>,
}

impl InterpolatedYJ {
    /// Curve through `(0, 0)` and `(y_i, y_i·J_i)`.
    pub fn from_levels(levels: &[f64], values: &[f64]) -> Self {
        let mut ts = Vec::with_capacity(levels.len() + 1);
        let mut vals = Vec::with_capacity(levels.len() + 1);
        ts.push(0.0);
        vals.push(0.0);
        for (&y, &j) in levels.iter().zip(values) {
            ts.push(y);
            vals.push(y * j);
        }
        Self { ts, vals }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.ts.len();
        if t <= self.ts[0] {
            return self.vals[0];
        }
        if t >= self.ts[n - 1] {
            return self.vals[n - 1];
        }
        let hi = self.ts.partition_point(|v| *v < t);
        if self.ts[hi] == t {
            return self.vals[hi];
        }
        let lo = hi - 1;
        let w = (t - self.ts[lo]) / (self.ts[hi] - self.ts[lo]);
        self.vals[lo] + w * (self.vals[hi] - self.vals[lo])
    }

    pub fn upper(&self) -> f64 {
        self.ts[self.ts.len() - 1]
    }

    fn slopes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.ts.windows(2).zip(self.vals.windows(2)).map(|(t, v)| {
            let len = t[1] - t[0];
            (len, (v[1] - v[0]) / len)
        })
    }
}

/// Result of [`concave_envelope_repair`].
#[derive(Debug, Clone, PartialEq)]
pub struct Repair {
    pub curve: InterpolatedYJ,
    /// Largest upward move of any breakpoint.
    pub max_lift: f64,
}

impl Repair {
    pub fn changed(&self) -> bool {
        self.max_lift > REPAIR_TOL
    }
}

/// Upper concave envelope of the breakpoints, evaluated back on the same
/// abscissae. Idempotent; concave inputs come back unchanged.
pub fn concave_envelope_repair(curve: &InterpolatedYJ) -> Repair {
    let n = curve.ts.len();
    debug_assert!(n >= 2);
    // monotone chain, upper hull
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (curve.ts[b] - curve.ts[a]) * (curve.vals[i] - curve.vals[a])
                - (curve.vals[b] - curve.vals[a]) * (curve.ts[i] - curve.ts[a]);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut vals = curve.vals.clone();
    let mut max_lift: f64 = 0.0;
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        for i in a + 1..b {
            let s = (curve.ts[i] - curve.ts[a]) / (curve.ts[b] - curve.ts[a]);
            let lifted = curve.vals[a] + s * (curve.vals[b] - curve.vals[a]);
            if lifted > vals[i] {
                max_lift = max_lift.max(lifted - vals[i]);
                vals[i] = lifted;
            }
        }
    }
    if max_lift > REPAIR_TOL {
        debug!("concave repair lifted a breakpoint by {max_lift:.3e}");
    }
    Repair {
        curve: InterpolatedYJ {
            ts: curve.ts.clone(),
            vals,
        },
        max_lift,
    }
}

/// `R(y, P)` expressed in the `t = y·R` variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEnvelope {
    pub y: f64,
    pub probs: Vec<f64>,
    /// Common upper bound on every `t_j` (the top confidence level).
    pub t_upper: f64,
}

/// One envelope maximization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerProblem {
    pub envelope: RiskEnvelope,
    pub curves: Vec<InterpolatedYJ>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSolution {
    pub optimal_value: f64,
    pub t_star: Vec<f64>,
    /// Multipliers `R̄(d_j) = t_j / y`.
    pub r_star: Vec<f64>,
}

impl InnerProblem {
    /// Builds the problem from per-successor values on the confidence grid:
    /// `values[j][i] = J(x'_j, levels[i])`.
    pub fn from_values(y: f64, probs: Vec<f64>, levels: &[f64], values: &[Vec<f64>]) -> Self {
        let curves = values
            .iter()
            .map(|v| InterpolatedYJ::from_levels(levels, v))
            .collect();
        Self {
            envelope: RiskEnvelope {
                y,
                probs,
                t_upper: levels[levels.len() - 1],
            },
            curves,
        }
    }

    /// Replaces every curve by its concave envelope; returns the number of
    /// curves that moved by more than [`REPAIR_TOL`].
    pub fn repair(&mut self) -> usize {
        let mut repaired = 0;
        for c in self.curves.iter_mut() {
            let r = concave_envelope_repair(c);
            if r.changed() {
                repaired += 1;
            }
            *c = r.curve;
        }
        repaired
    }

    /// `E[R · J(x', y·R)]` at a feasible `t`.
    pub fn objective(&self, t: &[f64]) -> f64 {
        let y = self.envelope.y;
        self.curves
            .iter()
            .zip(&self.envelope.probs)
            .zip(t)
            .map(|((c, p), tj)| p / y * c.eval(*tj))
            .sum()
    }

    /// Value at the risk-neutral point `R ≡ 1`.
    pub fn risk_neutral_value(&self) -> f64 {
        let t = vec![self.envelope.y; self.curves.len()];
        self.objective(&t)
    }

    fn solution_from_t(&self, t_star: Vec<f64>) -> EnvelopeSolution {
        let y = self.envelope.y;
        EnvelopeSolution {
            optimal_value: self.objective(&t_star),
            r_star: t_star.iter().map(|t| t / y).collect(),
            t_star,
        }
    }

    /// Structured-text dump of breakpoints and, optionally, a solution.
    pub fn debug_dump(&self, solution: Option<&EnvelopeSolution>) -> String {
        let mut out = String::new();
        let e = &self.envelope;
        let _ = writeln!(out, "y = {:.17e}", e.y);
        let _ = writeln!(out, "t_upper = {:.17e}", e.t_upper);
        for (j, (c, p)) in self.curves.iter().zip(&e.probs).enumerate() {
            let _ = writeln!(out, "[successor {j}] p = {p:.17e}");
            for (t, v) in c.ts.iter().zip(&c.vals) {
                let _ = writeln!(out, "  {t:.17e} {v:.17e}");
            }
        }
        if let Some(s) = solution {
            let _ = writeln!(out, "optimal_value = {:.17e}", s.optimal_value);
            for (j, (t, r)) in s.t_star.iter().zip(&s.r_star).enumerate() {
                let _ = writeln!(out, "  t[{j}] = {t:.17e} R[{j}] = {r:.17e}");
            }
        }
        out
    }
}

/// Assembles the envelope problem for successors `(x'_j, p_j)` of a grid point
/// at confidence `y`, interpolating `J_next` in the state.
pub fn build_inner_problem(
    successors: &[(f64, f64)],
    y: f64,
    j_next: &ValueTable,
    grid: &AugmentedGrid,
) -> InnerProblem {
    let levels = grid.levels();
    let values: Vec<Vec<f64>> = successors
        .iter()
        .map(|&(x, _)| {
            let b = grid.bracket(x);
            (0..levels.len())
                .map(|iy| interpolate_bracket(j_next, grid, b, iy))
                .collect()
        })
        .collect();
    let probs = successors.iter().map(|s| s.1).collect();
    InnerProblem::from_values(y, probs, levels, &values)
}

fn check_feasible(problem: &InnerProblem) -> Result<()> {
    let e = &problem.envelope;
    if !(e.y > 0.0 && e.y <= e.t_upper * (1.0 + 1e-12)) {
        return Err(Error::Solver {
            context: format!("y = {}", e.y),
            message: format!("confidence outside (0, {}]", e.t_upper),
        });
    }
    if problem.curves.len() != e.probs.len() {
        return Err(Error::Solver {
            context: format!("y = {}", e.y),
            message: "curve and probability counts differ".into(),
        });
    }
    Ok(())
}

/// Exact greedy solve of a repaired (concave) problem.
///
/// Segments are taken in order of decreasing slope; equal slopes keep
/// successor order, which makes `R̄` unique.
pub fn solve_inner(problem: &InnerProblem) -> Result<EnvelopeSolution> {
    check_feasible(problem)?;
    let e = &problem.envelope;
    let w = e.probs.len();
    if e.y >= e.t_upper {
        return Ok(problem.solution_from_t(vec![e.t_upper; w]));
    }

    let mut segments: Vec<(usize, f64, f64)> = Vec::new();
    for (j, c) in problem.curves.iter().enumerate() {
        if e.probs[j] <= 0.0 {
            continue;
        }
        for (len, slope) in c.slopes() {
            if len > 0.0 {
                segments.push((j, len, slope));
            }
        }
    }
    // stable: ties stay in (successor, segment) order
    segments.sort_by(|a, b| b.2.total_cmp(&a.2));

    let mut t = vec![0.0; w];
    let mut budget = e.y;
    for &(j, len, _) in &segments {
        if budget <= 0.0 {
            break;
        }
        let cap = e.probs[j] * len;
        if cap <= budget {
            t[j] += len;
            budget -= cap;
        } else {
            t[j] += budget / e.probs[j];
            budget = 0.0;
        }
    }
    if budget > 1e-12 * e.y.max(1.0) {
        return Err(Error::Solver {
            context: format!("y = {}", e.y),
            message: format!("unallocated confidence mass {budget:.3e}"),
        });
    }
    for tj in t.iter_mut() {
        *tj = tj.min(e.t_upper);
    }
    Ok(problem.solution_from_t(t))
}

/// The same problem as a dense hypograph LP:
/// `max Σ (p_j/y) h_j` with `h_j` below every segment line of `F_j`.
pub fn solve_inner_simplex(problem: &InnerProblem) -> Result<EnvelopeSolution> {
    check_feasible(problem)?;
    let e = &problem.envelope;
    let w = e.probs.len();
    if e.y >= e.t_upper {
        return Ok(problem.solution_from_t(vec![e.t_upper; w]));
    }
    // columns: t_j, then h⁺_j, h⁻_j
    let n = 3 * w;
    let mut lp = LinearProgram::new(n);
    for j in 0..w {
        lp.objective[w + 2 * j] = e.probs[j] / e.y;
        lp.objective[w + 2 * j + 1] = -e.probs[j] / e.y;
    }
    for (j, c) in problem.curves.iter().enumerate() {
        for k in 0..c.ts.len() - 1 {
            let (t0, t1) = (c.ts[k], c.ts[k + 1]);
            if t1 <= t0 {
                continue;
            }
            let slope = (c.vals[k + 1] - c.vals[k]) / (t1 - t0);
            let intercept = c.vals[k] - slope * t0;
            let mut row = vec![0.0; n];
            row[w + 2 * j] = 1.0;
            row[w + 2 * j + 1] = -1.0;
            row[j] = -slope;
            lp.add_row(row, Relation::Le, intercept);
        }
        let mut ub = vec![0.0; n];
        ub[j] = 1.0;
        lp.add_row(ub, Relation::Le, e.t_upper);
    }
    let mut eq = vec![0.0; n];
    eq[..w].copy_from_slice(&e.probs);
    lp.add_row(eq, Relation::Eq, e.y);

    match lp.solve() {
        LpOutcome::Optimal { x, .. } => Ok(problem.solution_from_t(x[..w].to_vec())),
        other => Err(Error::Solver {
            context: format!("y = {}", e.y),
            message: format!("hypograph LP returned {other:?}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn curve(points: &[(f64, f64)]) -> InterpolatedYJ {
        InterpolatedYJ {
            ts: points.iter().map(|p| p.0).collect(),
            vals: points.iter().map(|p| p.1).collect(),
        }
    }

    #[test]
    fn repair_examples() {
        let collinear = curve(&[(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)]);
        assert_eq!(concave_envelope_repair(&collinear).curve, collinear);

        let dip = curve(&[(0.0, 0.0), (0.5, 0.1), (1.0, 0.4)]);
        let r = concave_envelope_repair(&dip);
        assert_abs_diff_eq!(r.curve.vals[1], 0.2, epsilon = 1e-15);
        assert!(r.changed());
        assert_eq!(concave_envelope_repair(&r.curve).curve, r.curve);

        let concave = curve(&[(0.0, 0.0), (0.5, 0.3), (1.0, 0.4)]);
        let r = concave_envelope_repair(&concave);
        assert_eq!(r.curve, concave);
        assert!(!r.changed());
    }

    #[test]
    fn constant_values_lie_on_a_line() {
        let c = InterpolatedYJ::from_levels(&[0.2, 0.5, 1.0], &[3.0, 3.0, 3.0]);
        for (t, v) in c.ts.iter().zip(&c.vals) {
            assert_abs_diff_eq!(*v, 3.0 * t, epsilon = 1e-15);
        }
        let p = InnerProblem::from_values(0.5, vec![0.5, 0.5], &[0.5, 1.0], &[vec![4.0, 4.0], vec![2.0, 2.0]]);
        // anchor plus one breakpoint per level
        assert!(p.curves.iter().all(|c| c.ts.len() == 3));
    }

    #[test]
    fn y_at_top_level_is_the_expectation() {
        let p = InnerProblem::from_values(1.0, vec![0.5, 0.5], &[0.5, 1.0], &[vec![4.0, 4.0], vec![2.0, 2.0]]);
        let s = solve_inner(&p).unwrap();
        assert_abs_diff_eq!(s.optimal_value, 3.0, epsilon = 1e-12);
        assert_eq!(s.r_star, vec![1.0, 1.0]);
    }

    #[test]
    fn mass_shifts_to_the_worse_successor() {
        let p = InnerProblem::from_values(
            0.5,
            vec![0.5, 0.5],
            &[0.001, 0.5, 1.0],
            &[vec![4.0; 3], vec![2.0; 3]],
        );
        let s = solve_inner(&p).unwrap();
        // frozen from a 1e-3 grid search over R_1 ∈ [0, 2]
        let brute = (0..=2000)
            .map(|i| i as f64 * 1e-3)
            .map(|r1| p.objective(&[0.5 * r1, 0.5 * (2.0 - r1)]))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(brute, 4.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.optimal_value, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.r_star[0], 2.0, epsilon = 1e-12);
        assert!(s.optimal_value >= p.risk_neutral_value());
        let lp = solve_inner_simplex(&p).unwrap();
        assert_abs_diff_eq!(lp.optimal_value, s.optimal_value, epsilon = 1e-9);
    }

    #[test]
    fn rejects_infeasible_confidence() {
        let p = InnerProblem::from_values(0.0, vec![1.0], &[0.5, 1.0], &[vec![1.0, 1.0]]);
        assert!(solve_inner(&p).is_err());
        let p = InnerProblem::from_values(1.5, vec![1.0], &[0.5, 1.0], &[vec![1.0, 1.0]]);
        assert!(solve_inner(&p).is_err());
    }

    #[test]
    fn dump_lists_breakpoints() {
        let p = InnerProblem::from_values(0.5, vec![1.0], &[0.5, 1.0], &[vec![1.0, 1.0]]);
        let s = solve_inner(&p).unwrap();
        let text = p.debug_dump(Some(&s));
        assert!(text.contains("[successor 0]"));
        assert!(text.contains("optimal_value"));
    }
}
