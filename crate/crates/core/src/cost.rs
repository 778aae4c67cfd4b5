//! Recursive cost of a given feedback strategy and the spike-perturbation
//! test of local optimality.
//!
//! `J(t, x, i; Ψ) = Y(t; t, x, i)` where `Y(t; ·)` solves the linear
//! representation equation with anchor `t` under `Ψ`. A spike perturbation
//! plays `u` on `[t, t+ε]` and the equilibrium strategy afterwards; its gain
//! is `(J(u ⊕ Ψ̄) − J(Ψ̄)) / ε`, computed as a field over `(x, i)`.

use serde::Serialize;

use crate::equilibrium::EquilibriumSolution;
use crate::error::{Error, Result};
use crate::field::ValueField;
use crate::grid::{SpatialGrid, TimeGrid};
use crate::model::{Control, Dynamics, Feedback, Model};
use crate::pde::{solve, ControlRule, SolverOptions};

/// `Y(t; s, x, i)` for one anchor `t`, on `[t, T]`.
#[derive(Debug, Clone)]
pub struct RecursiveCostField {
    pub anchor: f64,
    pub value: ValueField,
}

impl RecursiveCostField {
    /// `J(t, x_k, i; Ψ) = Y(t; t, x_k, i)`.
    pub fn cost(&self, k: usize, i: usize) -> f64 {
        self.value.get(0, k, i)
    }

    /// `Z = Y_x σ(s, x, i, Ψ)` at a node.
    pub fn z<D: Dynamics + ?Sized>(&self, dynamics: &D, policy: &dyn Feedback, n: usize, k: usize, i: usize) -> Result<f64> {
        let s = self.value.time().t(n);
        let x = self.value.space().x(k);
        let u = policy.control(s, x, i)?;
        Ok(self.value.dx(n, k, i) * dynamics.volatility(s, x, i, u))
    }

    /// `Γ_j = Y(·, j) − Y(·, i)`.
    pub fn gamma(&self, n: usize, k: usize, i: usize, j: usize) -> f64 {
        self.value.get(n, k, j) - self.value.get(n, k, i)
    }
}

/// Solves the representation equation on `[t, T]` under `policy`.
pub fn evaluate_cost<M: Model + ?Sized>(
    model: &M,
    policy: &dyn Feedback,
    anchor: f64,
    time: &TimeGrid,
    space: &SpatialGrid,
) -> Result<RecursiveCostField> {
    let a = time
        .index_of(anchor)
        .ok_or_else(|| Error::Config(format!("anchor {anchor} is not a node of the time grid")))?;
    let window = time.window(a, time.steps());
    let sol = solve(
        model,
        anchor,
        &window,
        space,
        None,
        ControlRule::Feedback(policy),
        SolverOptions::default(),
    )?;
    Ok(RecursiveCostField {
        anchor,
        value: sol.value,
    })
}

/// Strategy played on the spike interval.
#[derive(Clone, Copy)]
pub enum Perturbation<'a> {
    Control(Control),
    Strategy(&'a dyn Feedback),
    /// pointwise minimizer of the Hamiltonian anchored at `t`
    AnchorOptimal,
}

/// Gain field over `(x, i)` at time `t`, regime-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikeGain {
    pub t: f64,
    pub epsilon: f64,
    pub xs: Vec<f64>,
    /// `gains[i][k]`
    pub gains: Vec<Vec<f64>>,
    /// minimum over the spatial interior
    pub min: f64,
}

/// `[J(t, ·; u ⊕ Ψ̄) − J(t, ·; Ψ̄)] / ε` with `J(Ψ̄) = Θ(t, t, ·)`.
pub fn spike_gain<M: Model + ?Sized>(
    model: &M,
    eq: &EquilibriumSolution,
    t: f64,
    epsilon: f64,
    perturbation: Perturbation<'_>,
) -> Result<SpikeGain> {
    let time = eq.theta.time();
    let space = eq.theta.space();
    if !(epsilon > 0.0) || t + epsilon > time.end() + 1e-9 * time.max_dt() {
        return Err(Error::Domain(format!(
            "spike [{t}, {}] must lie inside [{}, {}]",
            t + epsilon,
            time.start(),
            time.end()
        )));
    }
    let a = time
        .index_of(t)
        .ok_or_else(|| Error::Config(format!("spike start {t} is not a node of the time grid")))?;
    let b = time.index_of(t + epsilon);
    let b = match b {
        Some(b) if b >= a + 2 => b,
        _ => {
            return Err(Error::Resolution(format!(
                "spike length {epsilon} must cover at least two time steps of {}",
                time.max_dt()
            )))
        }
    };
    let row = eq.theta.row(a);
    let terminal = row.level(b - a).to_vec();
    let rule = match perturbation {
        Perturbation::Control(u) => ControlRule::Fixed(u),
        Perturbation::Strategy(f) => ControlRule::Feedback(f),
        Perturbation::AnchorOptimal => ControlRule::Minimize,
    };
    let sol = solve(model, t, &time.window(a, b), space, Some(&terminal), rule, SolverOptions::default())?;
    let m = eq.theta.regimes();
    let eps = time.t(b) - time.t(a);
    let gains: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..space.len())
                .map(|k| (sol.value.get(0, k, i) - row.get(0, k, i)) / eps)
                .collect()
        })
        .collect();
    let min = gains
        .iter()
        .flat_map(|g| space.interior().map(move |k| g[k]))
        .fold(f64::INFINITY, f64::min);
    Ok(SpikeGain {
        t,
        epsilon: eps,
        xs: space.xs(),
        gains,
        min,
    })
}

/// Spike-length fractions of the horizon used by [`epsilon_ladder`].
pub const EPSILON_LADDER: [f64; 3] = [0.1, 0.05, 0.025];

/// Minimum gain per spike length with a least-squares line through them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderReport {
    pub epsilons: Vec<f64>,
    pub min_gains: Vec<f64>,
    /// `max(0, −min_gain) / ε`
    pub constants: Vec<f64>,
    /// value of the fitted line at `ε = 0`
    pub intercept: f64,
    pub slope: f64,
}

/// Runs every perturbation at every ladder length and reports the minimum
/// gain per length.
pub fn epsilon_ladder<M: Model + ?Sized>(
    model: &M,
    eq: &EquilibriumSolution,
    t: f64,
    fractions: &[f64],
    perturbations: &[Perturbation<'_>],
) -> Result<LadderReport> {
    if fractions.len() < 2 || perturbations.is_empty() {
        return Err(Error::Config("ε ladder needs two lengths and one perturbation".into()));
    }
    let horizon = eq.theta.time().end() - eq.theta.time().start();
    let mut epsilons = Vec::new();
    let mut min_gains = Vec::new();
    for &f in fractions {
        let mut worst = f64::INFINITY;
        let mut eps = f * horizon;
        for p in perturbations {
            let g = spike_gain(model, eq, t, f * horizon, *p)?;
            eps = g.epsilon;
            worst = worst.min(g.min);
        }
        epsilons.push(eps);
        min_gains.push(worst);
    }
    let (intercept, slope) = fit_line(&epsilons, &min_gains);
    let constants = epsilons
        .iter()
        .zip(&min_gains)
        .map(|(e, g)| (-g).max(0.0) / e)
        .collect();
    Ok(LadderReport {
        epsilons,
        min_gains,
        constants,
        intercept,
        slope,
    })
}

/// Ordinary least squares `y ≈ α + β x`; returns `(α, β)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let beta = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - beta * mx, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_equilibrium, EquilibriumOptions};
    use crate::model::{Choice, ControlSet, PdeProblem};
    use crate::pde::solve_hjb;
    use crate::switching::GeneratorMatrix;

    fn discounted(kappa: f64) -> PdeProblem {
        PdeProblem::inert(2)
            .with_drift(|_, _, _, u| u.u())
            .with_volatility(|_, _, i, _| 0.3 + 0.1 * i as f64)
            .with_generator(GeneratorMatrix::from_rows(&[vec![0.0, 0.5], vec![0.7, 0.0]]).unwrap())
            .with_running(move |tau, s, x, _, _, u| (1.0 + kappa * (s - tau)).recip() * (x * x + u.u() * u.u()))
            .with_terminal(move |tau, x, i| (1.0 + kappa * (1.0 - tau)).recip() * (x - 0.1 * i as f64).powi(2))
            .with_controls(ControlSet::interval(-3.0, 3.0))
            .with_minimizer(move |tau, s, _, _, _, p, _| {
                let w = (1.0 + kappa * (s - tau)).recip();
                Some(Choice {
                    control: Control::scalar(-p / (2.0 * w)),
                    clamped: false,
                })
            })
    }

    fn setup() -> (PdeProblem, EquilibriumSolution) {
        let t = TimeGrid::uniform(1.0, 40).unwrap();
        let x = SpatialGrid::new(-2.0, 2.0, 41).unwrap();
        let model = discounted(1.5);
        let eq = solve_equilibrium(&model, &t, &x, EquilibriumOptions { tol: 1e-13, ..Default::default() }).unwrap();
        (model, eq)
    }

    #[test]
    fn cost_of_equilibrium_strategy_is_its_diagonal() {
        let (model, eq) = setup();
        let t = eq.theta.time().clone();
        let x = eq.theta.space().clone();
        for a in [0, 9, 20, 33, 39] {
            let y = evaluate_cost(&model, &eq.strategy, t.t(a), &t, &x).unwrap();
            for i in 0..2 {
                for k in 0..x.len() {
                    assert!((y.cost(k, i) - eq.value.get(a, k, i)).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn constant_controls_cost_at_least_the_hjb_value() {
        let t = TimeGrid::uniform(1.0, 40).unwrap();
        let x = SpatialGrid::new(-2.0, 2.0, 41).unwrap();
        let model = discounted(0.0);
        let v = solve_hjb(&model, 0.0, &t, &x, None).unwrap().value;
        for u in [-1.0, -0.2, 0.0, 0.5, 1.3] {
            let policy = crate::model::ConstantFeedback(Control::scalar(u));
            let y = evaluate_cost(&model, &policy, 0.0, &t, &x).unwrap();
            for k in x.interior() {
                for i in 0..2 {
                    assert!(y.cost(k, i) >= v.get(0, k, i) - 1e-10);
                }
            }
        }
    }

    #[test]
    fn equilibrium_spike_has_zero_gain() {
        let (model, eq) = setup();
        let g = spike_gain(&model, &eq, 0.25, 0.1, Perturbation::Strategy(&eq.strategy)).unwrap();
        assert!(g.gains.iter().flatten().all(|v| v.abs() <= 1e-10), "{}", g.min);
        let err = spike_gain(&model, &eq, 0.25, 0.025, Perturbation::AnchorOptimal).unwrap_err();
        assert_eq!(err.kind(), "resolution");
        assert!(spike_gain(&model, &eq, 0.95, 0.1, Perturbation::AnchorOptimal).is_err());
    }

    #[test]
    fn anchor_optimal_spike_gains_little() {
        let (model, eq) = setup();
        for eps in [0.2, 0.1] {
            let g = spike_gain(&model, &eq, 0.0, eps, Perturbation::AnchorOptimal).unwrap();
            assert!(g.min <= 1e-10);
            assert!(g.min.abs() <= eps, "{eps}: {}", g.min);
        }
        let off = spike_gain(&model, &eq, 0.0, 0.1, Perturbation::Control(Control::scalar(2.0))).unwrap();
        assert!(off.min > 0.0);
    }

    #[test]
    fn z_and_gamma_extraction() {
        let (model, eq) = setup();
        let t = eq.theta.time().clone();
        let x = eq.theta.space().clone();
        let y = evaluate_cost(&model, &eq.strategy, 0.5, &t, &x).unwrap();
        let (n, k, i) = (3, 17, 1);
        let u = eq.strategy.eval(y.value.time().t(n), x.x(k), i).unwrap();
        let expected = y.value.dx(n, k, i) * model.volatility(0.0, x.x(k), i, u);
        assert_eq!(y.z(&model, &eq.strategy, n, k, i).unwrap(), expected);
        assert_eq!(y.gamma(n, k, i, i), 0.0);
        assert_eq!(y.gamma(n, k, 0, 1), -y.gamma(n, k, 1, 0));
    }

    #[test]
    fn line_fit_recovers_exact_lines() {
        let (a, b) = fit_line(&[0.1, 0.05, 0.025], &[0.3, 0.2, 0.15]);
        assert!((a - 0.1).abs() < 1e-14 && (b - 2.0).abs() < 1e-12);
    }
}
