//! Cross-module invariants: path moments, regime law, generator residual,
//! partition-game optimality, anchor regularity, φ positivity.

use nalgebra::DMatrix;
use proptest::prelude::*;

use regime_core::cost::evaluate_cost;
use regime_core::equilibrium::{solve_equilibrium, EquilibriumOptions};
use regime_core::grid::{Boundary, SpatialGrid, TimeGrid};
use regime_core::merton::{
    solve_equilibrium_ode, solve_precommitted, solve_time_consistent, MertonModel, MertonSpec, Proportional, Weight,
};
use regime_core::model::{ConstantFeedback, Control, Feedback, Model, PdeProblem, Spliced};
use regime_core::partition::{run_cycles, Partition};
use regime_core::pde::{apply_generator, node_generators, solve_linear_parabolic, ControlRule};
use regime_core::problem::SwitchingProblem;
use regime_core::sde::{integrate_path, mean_and_se, per_path, Event, Policy, SimSpec};
use regime_core::switching::{GeneratorMatrix, LevyMeasure, RegimeGeometry};

fn idle() -> ConstantFeedback {
    ConstantFeedback(Control::scalar(0.0))
}

/// `E[sup_{s ≤ horizon} |X(s) − x0|^p]` with its standard error.
fn sup_moment(p: &SwitchingProblem, x0: f64, horizon: f64, step: f64, power: f64, n: usize, seed: u64) -> (f64, f64) {
    let spec = SimSpec {
        t0: 0.0,
        horizon,
        x0,
        regime: 0,
        step,
    };
    let policy = idle();
    let vals = per_path(n, |idx| {
        let mut worst = 0.0f64;
        integrate_path(p, &p.geometry, &p.levy, &spec, Policy::Feedback(&policy), seed, idx, &mut |e| {
            if let Event::Step { x_new, .. } = e {
                worst = worst.max((x_new - x0).abs());
            }
        })?;
        Ok(worst.powf(power))
    })
    .unwrap();
    mean_and_se(&vals)
}

#[test]
fn fourth_moment_of_the_supremum_is_stable_under_step_halving() {
    let p = SwitchingProblem::tanh_preset(1.0).unwrap();
    let (coarse, se_c) = sup_moment(&p, 0.0, 1.0, 0.02, 4.0, 4000, 3);
    let (fine, se_f) = sup_moment(&p, 0.0, 1.0, 0.01, 4.0, 4000, 3);
    assert!(coarse.is_finite() && fine.is_finite());
    // the finer walk sees slightly larger excursions; allow noise plus a 15% drift
    let gap = (fine - coarse).abs();
    assert!(gap <= 3.0 * (se_c.hypot(se_f)) + 0.15 * fine, "{coarse} vs {fine}");
}

#[test]
fn increment_modulus_scales_like_the_square_root() {
    let p = SwitchingProblem::tanh_preset(1.0).unwrap();
    let constants: Vec<f64> = [0.04, 0.02, 0.01]
        .iter()
        .map(|&ds| sup_moment(&p, 1.0, ds, ds / 20.0, 2.0, 4000, 5).0 / ds)
        .collect();
    for c in &constants {
        assert!(*c > 0.0);
    }
    let hi = constants.iter().cloned().fold(f64::MIN, f64::max);
    let lo = constants.iter().cloned().fold(f64::MAX, f64::min);
    assert!(hi / lo < 2.0, "{constants:?}");
}

fn expm_row(q: &[Vec<f64>], t: f64, i: usize) -> Vec<f64> {
    let m = q.len();
    let a = DMatrix::from_fn(m, m, |r, c| q[r][c] * t);
    let e = a.exp();
    (0..m).map(|j| e[(i, j)]).collect()
}

#[test]
fn constant_rate_regime_law_matches_the_matrix_exponential() {
    let rows = vec![
        vec![-0.3, 0.2, 0.1],
        vec![0.15, -0.25, 0.1],
        vec![0.05, 0.3, -0.35],
    ];
    let q = GeneratorMatrix::from_rows(&rows).unwrap();
    let geometry = RegimeGeometry::from_constant_generator(&q, 1.0, (-4.0, 4.0)).unwrap();
    let levy = LevyMeasure::uniform(1.0).unwrap();
    let p = PdeProblem::inert(3).with_volatility(|_, _, _, _| 0.2);
    let n = 20_000;
    for start in 0..3 {
        let spec = SimSpec {
            t0: 0.0,
            horizon: 3.0,
            x0: 0.0,
            regime: start,
            step: 0.01,
        };
        let policy = idle();
        let ends = per_path(n, |idx| {
            Ok(integrate_path(&p, &geometry, &levy, &spec, Policy::Feedback(&policy), 17, idx, &mut |_| {})?.1)
        })
        .unwrap();
        let law = expm_row(&rows, 3.0, start);
        for (j, pj) in law.iter().enumerate() {
            let freq = ends.iter().filter(|&&e| e == j).count() as f64 / n as f64;
            let se = (pj * (1.0 - pj) / n as f64).sqrt();
            assert!((freq - pj).abs() <= 3.0 * se, "start {start} to {j}: {freq} vs {pj}");
        }
    }
}

/// Sup over interior nodes of `(V^{n+1} − V^n)/Δt + L V^n + g`.
fn generator_residual(nx: usize, nt: usize) -> f64 {
    let p = SwitchingProblem::tanh_preset(1.0).unwrap();
    let time = TimeGrid::uniform(1.0, nt).unwrap();
    let space = SpatialGrid::new(-2.0, 2.0, nx).unwrap();
    let u = Control::scalar(0.3);
    let v = solve_linear_parabolic(&p, 0.0, &time, &space, None, ControlRule::Fixed(u)).unwrap();
    let qs = node_generators(&p, &space, time.max_dt()).unwrap();
    let mut worst = 0.0f64;
    // compare on a fixed window away from the edges
    for n in 0..nt {
        let s = time.t(n);
        for k in space.interior() {
            let x = space.x(k);
            if x.abs() > 1.0 {
                continue;
            }
            for i in 0..2 {
                let dt_v = (v.get(n + 1, k, i) - v.get(n, k, i)) / time.dt(n);
                let lv = apply_generator(&v, n, k, i, u, &p, &qs[k]).unwrap();
                let g = p.running_cost(0.0, s, x, i, regime_core::model::RecursiveArgs { y: 0.0, z: 0.0, jump: 0.0 }, u);
                worst = worst.max((dt_v + lv + g).abs());
            }
        }
    }
    worst
}

#[test]
fn generator_residual_of_the_linear_solve_shrinks_with_the_grid() {
    let coarse = generator_residual(41, 40);
    let fine = generator_residual(81, 80);
    assert!(fine < coarse && coarse / fine >= 1.8, "{coarse} -> {fine}");
    assert!(fine < 0.05, "{fine}");
}

#[test]
fn no_constant_control_beats_a_player_at_its_knot() {
    let p = SwitchingProblem::tanh_preset(1.0).unwrap();
    let time = TimeGrid::uniform(1.0, 40).unwrap();
    let space = SpatialGrid::new(-3.0, 3.0, 41).unwrap();
    let part = Partition::uniform(&time, 4).unwrap();
    let sol = run_cycles(&p, &part, &time, &space).unwrap();
    // fixed pseudo-random controls inside the admissible interval
    let controls = [-2.3, -0.7, 0.15, 1.1, 2.6];
    for w in part.nodes().windows(2) {
        let (lo, hi) = (w[0], w[1]);
        for &u in &controls {
            let first = ConstantFeedback(Control::scalar(u));
            let policy = Spliced {
                first: &first,
                switch_time: time.t(hi),
                rest: &sol.strategy,
            };
            let y = evaluate_cost(&p, &policy, time.t(lo), &time, &space).unwrap();
            for k in space.interior() {
                for i in 0..2 {
                    let v = sol.value.get(lo, k, i);
                    assert!(y.cost(k, i) >= v - 1e-8, "knot {lo}, u {u}: {} < {v}", y.cost(k, i));
                }
            }
        }
    }
}

/// Largest control jump across a knot of the partition with `count` players.
fn knot_jump(count: usize) -> f64 {
    let spec = MertonSpec::preset();
    let model = MertonModel::new(spec.clone()).unwrap();
    let time = TimeGrid::uniform(1.0, 64).unwrap();
    let space = SpatialGrid::new(0.25, 4.0, 41).unwrap().with_boundary(Boundary::Homogeneous(spec.gamma));
    let part = Partition::uniform(&time, count).unwrap();
    let sol = run_cycles(&model, &part, &time, &space).unwrap();
    let knots = &part.nodes()[1..part.nodes().len() - 1];
    let mut worst = 0.0f64;
    for &n in knots {
        for k in space.interior() {
            for i in 0..2 {
                worst = worst.max(sol.strategy.get(n, k, i).distance(&sol.strategy.get(n - 1, k, i)));
            }
        }
    }
    worst
}

#[test]
fn strategy_jumps_at_knots_shrink_with_the_mesh() {
    let j4 = knot_jump(4);
    let j8 = knot_jump(8);
    let j16 = knot_jump(16);
    // jump ≤ L·mesh with L stable: the ratio to the mesh does not grow
    let l = [j4 / 0.25, j8 / 0.125, j16 / 0.0625];
    assert!(j8 < j4 && j16 < j8, "{j4} {j8} {j16}");
    assert!(l[2] <= 2.0 * l[0] && l[1] <= 2.0 * l[0], "{l:?}");
}

/// `max |Θ(τa) − Θ(τb)| / |τa − τb|` over adjacent anchors.
fn anchor_lipschitz(nt: usize, nx: usize) -> f64 {
    let spec = MertonSpec::preset();
    let model = MertonModel::new(spec.clone()).unwrap();
    let time = TimeGrid::uniform(1.0, nt).unwrap();
    let space = SpatialGrid::new(0.25, 4.0, nx).unwrap().with_boundary(Boundary::Homogeneous(spec.gamma));
    let eq = solve_equilibrium(&model, &time, &space, EquilibriumOptions::default()).unwrap();
    let mut worst = 0.0f64;
    for a in 0..nt {
        for n in a + 1..=nt {
            for k in space.interior() {
                for i in 0..2 {
                    let d = (eq.theta.get(a, n, k, i) - eq.theta.get(a + 1, n, k, i)).abs() / time.dt(a);
                    worst = worst.max(d);
                }
            }
        }
    }
    worst
}

#[test]
fn theta_is_lipschitz_in_the_anchor_with_a_stable_constant() {
    let c1 = anchor_lipschitz(16, 41);
    let c2 = anchor_lipschitz(32, 81);
    assert!(c1 > 0.0 && c2 > 0.0);
    assert!((c2 / c1 - 1.0).abs() < 0.25, "{c1} vs {c2}");
}

#[test]
fn raising_terminal_data_raises_the_cost() {
    let p = SwitchingProblem::tanh_preset(1.0).unwrap();
    let time = TimeGrid::uniform(1.0, 40).unwrap();
    let space = SpatialGrid::new(-3.0, 3.0, 41).unwrap();
    let base: Vec<f64> = (0..2).flat_map(|i| space.xs().into_iter().map(move |x| x * x + i as f64)).collect();
    let xs = space.xs();
    let bumped: Vec<f64> = base
        .iter()
        .enumerate()
        .map(|(j, v)| v + 0.5 * (1.2 + xs[j % xs.len()].sin()))
        .collect();
    let policy = FnFeedbackish;
    let lo = solve_linear_parabolic(&p, 0.0, &time, &space, Some(&base), ControlRule::Feedback(&policy)).unwrap();
    let hi = solve_linear_parabolic(&p, 0.0, &time, &space, Some(&bumped), ControlRule::Feedback(&policy)).unwrap();
    for n in 0..=40 {
        for k in 0..space.len() {
            for i in 0..2 {
                assert!(hi.get(n, k, i) >= lo.get(n, k, i) - 1e-12);
            }
        }
    }
}

/// A state-dependent feedback `u = −x/2`, clamped.
struct FnFeedbackish;

impl Feedback for FnFeedbackish {
    fn control(&self, _s: f64, x: f64, _i: usize) -> regime_core::Result<Control> {
        Ok(Control::scalar((-0.5 * x).clamp(-3.0, 3.0)))
    }
}

#[test]
fn investment_fraction_is_the_same_for_every_variant_and_node() {
    let spec = MertonSpec::preset();
    let grid = TimeGrid::uniform(1.0, 100).unwrap();
    let eq = Proportional::equilibrium(&spec, &solve_equilibrium_ode(&spec, &grid, 1e-12, 200).unwrap());
    let pre = Proportional::precommitted(&spec, 0.3, &solve_precommitted(&spec, 0.3, &grid).unwrap());
    let tc_spec = MertonSpec::time_consistent_preset();
    let tc = Proportional::time_consistent(&tc_spec, &solve_time_consistent(&tc_spec, &grid).unwrap());
    for i in 0..2 {
        let f = spec.investment_fraction(i);
        assert_eq!(eq.invest[i], f);
        assert_eq!(pre.invest[i], f);
        assert_eq!(tc.invest[i], f);
        for s in [0.3, 0.55, 0.99] {
            for x in [0.5, 2.0] {
                assert_eq!(eq.control(s, x, i).unwrap().0[0], f * x);
            }
        }
    }
}

fn spec_strategy() -> impl Strategy<Value = MertonSpec> {
    (
        prop::array::uniform2(-0.05f64..0.15),
        prop::array::uniform2(0.15f64..0.5),
        // explicit RK4 needs Δs·γ(g/φ)^{1/(1−γ)} of order one; stay where 40 steps resolve it
        0.2f64..0.6,
        0.0f64..2.0,
        0.5f64..1.5,
        prop::array::uniform2(0.05f64..0.9),
    )
        .prop_map(|(b, sigma, gamma, kappa, scale, q)| {
            let mut spec = MertonSpec::preset();
            spec.b = b.to_vec();
            spec.sigma = sigma.to_vec();
            spec.gamma = gamma;
            spec.consumption = Weight::Hyperbolic { scale, kappa };
            spec.bequest = Weight::Hyperbolic { scale: 1.0, kappa };
            spec.generator = GeneratorMatrix::from_rows(&[vec![-q[0], q[0]], vec![q[1], -q[1]]]).unwrap();
            spec
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn phi_stays_above_the_smallest_bequest_weight(spec in spec_strategy()) {
        let grid = TimeGrid::uniform(1.0, 40).unwrap();
        let h_min = (0..=40).map(|n| spec.h(grid.t(n))).fold(f64::INFINITY, f64::min);
        let eq = solve_equilibrium_ode(&spec, &grid, 1e-11, 200).unwrap();
        for a in 0..=40 {
            for i in 0..2 {
                prop_assert_eq!(eq.get(a, 40, i), spec.h(grid.t(a)));
                for n in a..=40 {
                    prop_assert!(eq.get(a, n, i) >= h_min - 1e-12);
                }
            }
        }
        let tau = grid.t(10);
        let pre = solve_precommitted(&spec, tau, &grid).unwrap();
        for i in 0..2 {
            prop_assert_eq!(pre.get(30, i), spec.h(tau));
            for n in 0..=30 {
                prop_assert!(pre.get(n, i) >= spec.h(tau) - 1e-12);
            }
        }
    }

    #[test]
    fn time_consistent_phi_is_nonincreasing(spec in spec_strategy()) {
        let mut spec = spec;
        spec.consumption = Weight::Const(0.8);
        spec.bequest = Weight::Const(1.3);
        let grid = TimeGrid::uniform(1.0, 40).unwrap();
        let phi = solve_time_consistent(&spec, &grid).unwrap();
        for i in 0..2 {
            prop_assert_eq!(phi.get(40, i), 1.3);
            for n in 0..40 {
                prop_assert!(phi.get(n, i) >= phi.get(n + 1, i) - 1e-12);
                prop_assert!(phi.get(n, i) >= 1.3 - 1e-12);
            }
        }
    }

    #[test]
    fn every_node_generator_is_conservative(x in -4.0f64..4.0) {
        let p = SwitchingProblem::tanh_preset(1.0).unwrap();
        let q = p.generator(x).unwrap();
        for i in 0..2 {
            let row: f64 = (0..2).map(|j| q.get(i, j)).sum();
            prop_assert!(row.abs() <= 1e-12 * q.max_exit_rate().max(1.0));
            prop_assert!(q.get(i, 1 - i) >= 0.0);
        }
    }
}
