//! Property tests over randomly generated inputs. Structured inputs (toy
//! chains, envelope problems) are drawn from a seeded generator so proptest
//! only has to shrink a seed.

use cvar_reach::envelope::{solve_inner, InnerProblem};
use cvar_reach::grid::AugmentedGrid;
use cvar_reach::model::{load_pond_benchmark, pond_step, pond_v1_distribution, PondParams, SurfaceFunction};
use cvar_reach::oracles::{expectation_dp, minimax_dp, ToyChain};
use cvar_reach::risk::{cvar_exact, jittered_cvar_levels, log_sum_exp_scaled, DiscreteRandomVariable};
use cvar_reach::safe_sets::{check_nesting, extract_u, prob_safety_dp};
use cvar_reach::validation::{random_inner_problem, random_toy_chain};
use cvar_reach::value_iteration::{run_value_iteration, Solution, StageCostSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arb_rv() -> impl Strategy<Value = DiscreteRandomVariable> {
    prop::collection::vec((-10.0f64..10.0, 0.01f64..1.0), 1..8).prop_map(|pairs| {
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        DiscreteRandomVariable::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1 / total).collect())
            .unwrap()
    })
}

fn toy_spec() -> StageCostSpec {
    StageCostSpec::new(1.0, 1.0, SurfaceFunction::LinearOffset { c_max: 1.0 }).unwrap()
}

fn toy_levels() -> Vec<f64> {
    vec![0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95, 1.0]
}

fn solved_toy(seed: u64) -> (ToyChain, usize, AugmentedGrid, Solution) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chain = random_toy_chain(&mut rng);
    let n = 1 + (seed % 3) as usize;
    let grid = AugmentedGrid::new(chain.states(), toy_levels()).unwrap();
    let sol = run_value_iteration(&chain.model(n).unwrap(), &grid, &toy_spec()).unwrap();
    (chain, n, grid, sol)
}

proptest! {
    #[test]
    fn pond_rises_stays_clamped_and_prefers_the_open_valve(x in 0.0f64..=6.5, j in 0usize..10) {
        let p = PondParams::pond_v1();
        let w = pond_v1_distribution().values()[j];
        let open = pond_step(&p, x, 1.0, w).unwrap();
        let closed = pond_step(&p, x, 0.0, w).unwrap();
        prop_assert!(open >= x && closed >= x);
        prop_assert!(open <= p.state_max && closed <= p.state_max);
        prop_assert!(open <= closed);
    }

    #[test]
    fn surface_sign_marks_the_constraint_set(x in -1.0f64..8.0, c in 0.5f64..6.5) {
        for g in [SurfaceFunction::LinearOffset { c_max: c }, SurfaceFunction::Indicator { constraint_upper: c }] {
            prop_assert_eq!(g.eval(x) < 0.0, g.in_constraint_set(x));
        }
    }

    #[test]
    fn cvar_is_coherent(z in arb_rv(), a in 0.01f64..=1.0, shift in -5.0f64..5.0, scale in 0.0f64..5.0, bump in prop::collection::vec(0.0f64..3.0, 8)) {
        let base = cvar_exact(&z, a).unwrap();
        let tol = 1e-10 * (1.0 + base.abs() + shift.abs()) * (1.0 + scale);
        prop_assert!((cvar_exact(&z.map(|v| v + shift), a).unwrap() - (base + shift)).abs() <= tol);
        prop_assert!((cvar_exact(&z.map(|v| v * scale), a).unwrap() - scale * base).abs() <= tol);
        let bigger: Vec<f64> = z.outcomes().iter().zip(&bump).map(|(v, b)| v + b).collect();
        let y = DiscreteRandomVariable::new(bigger, z.probs().to_vec()).unwrap();
        prop_assert!(base <= cvar_exact(&y, a).unwrap() + 1e-10);
    }

    #[test]
    fn cvar_limits(z in arb_rv()) {
        prop_assert!((cvar_exact(&z, 1.0).unwrap() - z.mean()).abs() <= 1e-10 * (1.0 + z.mean().abs()));
        let top = z.ess_sup();
        let mass: f64 = z.outcomes().iter().zip(z.probs()).filter(|(v, _)| **v == top).map(|(_, p)| p).sum();
        prop_assert!((cvar_exact(&z, mass).unwrap() - top).abs() <= 1e-12 * (1.0 + top.abs()));
    }

    #[test]
    fn scaled_cvar_is_concave_in_the_level(z in arb_rv()) {
        let ys: Vec<f64> = (1..=40).map(|i| i as f64 / 40.0).collect();
        let f: Vec<f64> = ys.iter().map(|&y| y * cvar_exact(&z, y).unwrap()).collect();
        for w in f.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] <= 1e-9);
        }
    }

    #[test]
    fn cvar_of_log_is_below_log_of_cvar(z in arb_rv(), a in 0.01f64..=1.0) {
        let pos = z.map(|v| v.abs() + 0.1);
        prop_assert!(cvar_exact(&pos.map(f64::ln), a).unwrap() <= cvar_exact(&pos, a).unwrap().ln() + 1e-12);
    }

    #[test]
    fn log_sum_exp_is_a_soft_maximum(y in prop::collection::vec(-50.0f64..50.0, 1..12), m in 0.1f64..50.0) {
        let v = log_sum_exp_scaled(&y, m).unwrap();
        let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= max - 1e-12 && v <= max + (y.len() as f64).ln() / m + 1e-12);
    }

    #[test]
    fn envelope_solution_is_a_valid_reweighting(seed in any::<u64>()) {
        let p = random_inner_problem(&mut ChaCha8Rng::seed_from_u64(seed));
        let s = solve_inner(&p).unwrap();
        let y = p.envelope.y;
        let mean: f64 = s.r_star.iter().zip(&p.envelope.probs).map(|(r, q)| r * q).sum();
        prop_assert!((mean - 1.0).abs() <= 1e-8, "E[R] = {}", mean);
        for &r in &s.r_star {
            prop_assert!(r >= 0.0 && r <= 1.0 / y + 1e-12, "R = {} at y = {}", r, y);
        }
    }

    #[test]
    fn envelope_value_falls_as_the_level_rises(seed in any::<u64>(), dy in 0.0f64..0.5) {
        let p = random_inner_problem(&mut ChaCha8Rng::seed_from_u64(seed));
        let hi_y = (p.envelope.y + dy).min(1.0);
        let hi = InnerProblem { envelope: cvar_reach::envelope::RiskEnvelope { y: hi_y, ..p.envelope.clone() }, ..p.clone() };
        prop_assert!(solve_inner(&hi).unwrap().optimal_value <= solve_inner(&p).unwrap().optimal_value + 1e-9);
    }

    #[test]
    fn value_iteration_is_bracketed_and_monotone_in_the_level(seed in any::<u64>()) {
        let (chain, n, grid, sol) = solved_toy(seed);
        let model = chain.model(n).unwrap();
        let spec = toy_spec();
        let mean = expectation_dp(&model, grid.states(), &spec);
        let worst = minimax_dp(&model, grid.states(), &spec);
        for ix in 0..grid.n_states() {
            let row = sol.j0().row(ix);
            for w in row.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
            prop_assert!(row[0] <= worst[ix] + 1e-9);
            prop_assert!(row[row.len() - 1] >= mean[ix] - 1e-9);
        }
    }

    #[test]
    fn stored_multipliers_reweight_the_disturbances(seed in any::<u64>()) {
        let (chain, _, grid, sol) = solved_toy(seed);
        let probs = chain.disturbance.probs();
        for stage in &sol.policy.stages {
            for (i, rs) in stage.multipliers.iter().enumerate() {
                let y = grid.levels()[grid.split(i).1];
                let mean: f64 = rs.iter().zip(probs).map(|(r, p)| r * p).sum();
                prop_assert!((mean - 1.0).abs() <= 1e-8);
                prop_assert!(rs.iter().all(|&r| r >= 0.0 && r <= 1.0 / y + 1e-12));
            }
        }
    }

    #[test]
    fn value_iteration_sets_nest_exactly(seed in any::<u64>()) {
        let (_, _, grid, sol) = solved_toy(seed);
        let spec = toy_spec();
        let mut sets = Vec::new();
        for &a in grid.levels() {
            for r in [-1.0, 0.0, 0.5, 1.0, 2.0] {
                sets.push(extract_u(sol.j0(), &grid, &spec, a, r).unwrap());
            }
        }
        let report = check_nesting(&sets, 0.0);
        prop_assert!(report.pass && report.in_band == 0, "{:?}", report.violations);
    }

    #[test]
    fn safety_probability_is_a_probability_and_shrinks_with_horizon(seed in any::<u64>(), c in 0.5f64..2.5) {
        let chain = random_toy_chain(&mut ChaCha8Rng::seed_from_u64(seed));
        let model = chain.model(3).unwrap();
        let t = prob_safety_dp(&model, &chain.states(), &SurfaceFunction::LinearOffset { c_max: c }, 3);
        for k in 0..t.probs.len() {
            prop_assert!(t.probs[k].iter().all(|p| (0.0..=1.0).contains(p)));
            if k > 0 {
                // P_k has one step fewer to survive than P_{k-1}.
                for (now, earlier) in t.probs[k].iter().zip(&t.probs[k - 1]) {
                    prop_assert!(now + 1e-12 >= *earlier);
                }
            }
        }
    }

    #[test]
    fn jittered_estimates_fall_as_the_level_rises(samples in prop::collection::vec(-5.0f64..5.0, 1..400), seed in any::<u64>()) {
        let alphas: Vec<f64> = (1..=20).map(|i| i as f64 / 20.0).collect();
        let est = jittered_cvar_levels(&samples, &alphas, 1e-7, seed, 0).unwrap();
        for w in est.windows(2) {
            prop_assert!(w[1].value <= w[0].value + 1e-9);
        }
        let again = jittered_cvar_levels(&samples, &alphas, 1e-7, seed, 0).unwrap();
        prop_assert_eq!(est, again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pond_values_rise_with_the_water_level(m in 2.0f64..12.0) {
        let model = load_pond_benchmark().with_horizon(6);
        let grid = AugmentedGrid::pond_v1();
        let spec = StageCostSpec::new(1e-3, m, SurfaceFunction::LinearOffset { c_max: 5.0 }).unwrap();
        let sol = run_value_iteration(&model, &grid, &spec).unwrap();
        for iy in 0..grid.n_levels() {
            for ix in 1..grid.n_states() {
                prop_assert!(sol.j0().get(ix, iy) >= sol.j0().get(ix - 1, iy) - 1e-12);
            }
        }
    }
}
