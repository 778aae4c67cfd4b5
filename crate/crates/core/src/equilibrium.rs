//! Equilibrium HJB system solved by fixed-point iteration on the diagonal
//! `v(s) = Θ(s, s)`.
//!
//! Given a diagonal guess, the strategy `Ψ̄(s) = ψ(s; s, v, v_x, v_xx)` is
//! frozen and every anchor row `Θ(τ, ·)` solves a linear backward equation
//! with the anchor `τ` in the costs. The new diagonal replaces the old one
//! until the change is below tolerance. The time axis is processed in slabs
//! from the horizon down; rows of anchors below a converged slab are
//! extended across it once and cached at its lower edge.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{d1, StrategyField, ValueField};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::model::{Control, Feedback, Model};
use crate::partition::PiSolution;
use crate::pde::{minimizing_controls, node_generators, scheme_residual, solve, ControlRule, Diagnostics, SolverOptions};

/// `Θ(τ_a, s_n, x_k, i)` on the triangle `a ≤ n` of one shared time grid.
#[derive(Debug, Clone)]
pub struct TwoTimeField {
    time: TimeGrid,
    space: SpatialGrid,
    m: usize,
    /// row `a` lives on the window `[a, N]`
    rows: Vec<ValueField>,
}

impl TwoTimeField {
    fn new(time: &TimeGrid, space: &SpatialGrid, m: usize) -> Self {
        let rows = (0..time.len())
            .map(|a| ValueField::zeros(time.window(a, time.steps()), space.clone(), m))
            .collect();
        TwoTimeField {
            time: time.clone(),
            space: space.clone(),
            m,
            rows,
        }
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn space(&self) -> &SpatialGrid {
        &self.space
    }

    pub fn regimes(&self) -> usize {
        self.m
    }

    /// Anchor row `Θ(τ_a, ·)` on `[τ_a, T]`.
    pub fn row(&self, a: usize) -> &ValueField {
        &self.rows[a]
    }

    /// `Θ(τ_a, s_n, x_k, i)`; panics unless `a ≤ n`.
    pub fn get(&self, a: usize, n: usize, k: usize, i: usize) -> f64 {
        self.rows[a].get(n - a, k, i)
    }

    /// `Θ(s, s, x, i)` at every node.
    pub fn diagonal(&self) -> ValueField {
        let mut out = ValueField::zeros(self.time.clone(), self.space.clone(), self.m);
        for (a, row) in self.rows.iter().enumerate() {
            out.level_mut(a).copy_from_slice(row.level(0));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumOptions {
    /// sup-norm tolerance on the diagonal change
    pub tol: f64,
    pub max_sweeps: usize,
    /// slab width in time units; `None` uses `T/8`
    pub slab_width: Option<f64>,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions {
            tol: 1e-10,
            max_sweeps: 100,
            slab_width: None,
        }
    }
}

/// One line of the iteration log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRecord {
    /// time interval of the slab
    pub slab: (f64, f64),
    pub sweep: usize,
    pub diag_change: f64,
    /// discrete residual of the slab rows under the updated strategy
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub theta: TwoTimeField,
    /// `V(s, x, i) = Θ(s, s, x, i)`
    pub value: ValueField,
    /// `Ψ̄` recomputed from `value`
    pub strategy: StrategyField,
    pub log: Vec<SweepRecord>,
    pub diagnostics: Diagnostics,
}

/// `ψ(s_n; s_n, v, v_x, v_xx)` at every node of `levels`.
fn diagonal_controls<M: Model + ?Sized>(
    model: &M,
    candidates: &[Control],
    space: &SpatialGrid,
    qs: &[crate::switching::GeneratorMatrix],
    s: f64,
    level: &[f64],
    diag: &mut Diagnostics,
) -> Vec<Control> {
    minimizing_controls(model, candidates, s, s, space, qs, level, diag)
}

/// Recomputes `Ψ̄` from a diagonal value field.
pub fn diagonal_strategy<M: Model + ?Sized>(model: &M, value: &ValueField) -> Result<(StrategyField, Diagnostics)> {
    let time = value.time();
    let space = value.space();
    let qs = node_generators(model, space, time.max_dt())?;
    let candidates = candidates_for(model);
    let mut diag = Diagnostics::default();
    let mut out = StrategyField::new(time.clone(), space.clone(), model.regime_count(), model.control_set().clone());
    for n in 0..time.len() {
        let c = diagonal_controls(model, &candidates, space, &qs, time.t(n), value.level(n), &mut diag);
        out.level_mut(n).copy_from_slice(&c);
    }
    Ok((out, diag))
}

fn candidates_for<M: Model + ?Sized>(model: &M) -> Vec<Control> {
    let probe = vec![0.0; model.regime_count()];
    match model.minimizer(0.0, 0.0, 0.0, 0, &probe, 0.0, 0.0) {
        Some(_) => Vec::new(),
        None => model.control_set().candidates(),
    }
}

/// Fixed-point solve of the equilibrium system over the whole grid.
pub fn solve_equilibrium<M: Model + ?Sized>(
    model: &M,
    time: &TimeGrid,
    space: &SpatialGrid,
    opts: EquilibriumOptions,
) -> Result<EquilibriumSolution> {
    if !(opts.tol > 0.0) || opts.max_sweeps == 0 {
        return Err(Error::Config("equilibrium needs a positive tolerance and at least one sweep".into()));
    }
    model.control_set().validate()?;
    let horizon = time.end() - time.start();
    let width = opts.slab_width.unwrap_or(horizon / 8.0);
    if !(width > 0.0) || width > horizon * (1.0 + 1e-12) {
        return Err(Error::Config(format!("slab width {width} must lie in (0, {horizon}]")));
    }
    let steps = time.steps();
    let m = model.regime_count();
    let nx = space.len();
    let qs = node_generators(model, space, time.max_dt())?;
    let candidates = candidates_for(model);
    let mut theta = TwoTimeField::new(time, space, m);
    let mut strategy = StrategyField::new(time.clone(), space.clone(), m, model.control_set().clone());
    let mut diagnostics = Diagnostics::default();
    let mut log = Vec::new();

    let terminal = |a: usize| -> Vec<f64> {
        let tau = time.t(a);
        (0..m)
            .flat_map(|i| (0..nx).map(move |k| (i, k)))
            .map(|(i, k)| model.terminal_cost(tau, space.x(k), i))
            .collect()
    };
    for a in 0..=steps {
        let h = terminal(a);
        theta.rows[a].level_mut(steps - a).copy_from_slice(&h);
    }
    {
        let mut d = Diagnostics::default();
        let top = theta.rows[steps].level(0).to_vec();
        let c = diagonal_controls(model, &candidates, space, &qs, time.t(steps), &top, &mut d);
        strategy.level_mut(steps).copy_from_slice(&c);
    }

    let base_steps = ((width / time.max_dt()).round() as usize).clamp(1, steps.max(1));
    let mut hi = steps;
    while hi > 0 {
        let mut w = base_steps;
        let outcome = loop {
            let lo = hi.saturating_sub(w);
            match converge_slab(model, time, space, &qs, &candidates, &mut theta, &mut strategy, lo, hi, opts, &mut log) {
                Ok(d) => break Ok((lo, d)),
                Err(e @ Error::NonConvergence { .. }) => {
                    if w == 1 {
                        break Err(e);
                    }
                    w /= 2;
                    log::warn!("slab ending at {} did not converge; halving to {w} steps", time.t(hi));
                }
                Err(e) => break Err(e),
            }
        };
        let (lo, d) = outcome?;
        diagnostics.absorb(&d);
        // carry rows of lower anchors across the converged slab
        let window = time.window(lo, hi);
        let extended: Vec<(usize, ValueField, Diagnostics)> = (0..lo)
            .into_par_iter()
            .map(|a| -> Result<(usize, ValueField, Diagnostics)> {
                let term = theta.rows[a].level(hi - a).to_vec();
                let sol = solve(
                    model,
                    time.t(a),
                    &window,
                    space,
                    Some(&term),
                    ControlRule::Feedback(&strategy),
                    SolverOptions::default(),
                )?;
                Ok((a, sol.value, sol.diagnostics))
            })
            .collect::<Result<Vec<_>>>()?;
        for (a, v, d) in extended {
            diagnostics.absorb(&d);
            for n in lo..hi {
                theta.rows[a].level_mut(n - a).copy_from_slice(v.level(n - lo));
            }
        }
        hi = lo;
    }

    let value = theta.diagonal();
    let (strategy, d) = diagonal_strategy(model, &value)?;
    diagnostics.psi_clamps += d.psi_clamps;
    diagnostics.truncation_hits += d.truncation_hits;
    if d.psi_clamps > 0 {
        log::warn!("strategy minimizer clamped its inputs at {} nodes", d.psi_clamps);
    }
    Ok(EquilibriumSolution {
        theta,
        value,
        strategy,
        log,
        diagnostics,
    })
}

/// Iterates one slab `[lo, hi]` to convergence, writing its rows and the
/// strategy on `lo..hi`.
#[allow(clippy::too_many_arguments)]
fn converge_slab<M: Model + ?Sized>(
    model: &M,
    time: &TimeGrid,
    space: &SpatialGrid,
    qs: &[crate::switching::GeneratorMatrix],
    candidates: &[Control],
    theta: &mut TwoTimeField,
    strategy: &mut StrategyField,
    lo: usize,
    hi: usize,
    opts: EquilibriumOptions,
    log: &mut Vec<SweepRecord>,
) -> Result<Diagnostics> {
    let m = model.regime_count();
    let nx = space.len();
    let mut diagnostics = Diagnostics::default();
    // initial diagonal v(s) = h(s, ·, ·)
    let mut guess: Vec<Vec<f64>> = (lo..hi)
        .map(|n| {
            let s = time.t(n);
            (0..m)
                .flat_map(|i| (0..nx).map(move |k| (i, k)))
                .map(|(i, k)| model.terminal_cost(s, space.x(k), i))
                .collect()
        })
        .collect();
    let mut scratch = Diagnostics::default();
    for (j, n) in (lo..hi).enumerate() {
        let c = diagonal_controls(model, candidates, space, qs, time.t(n), &guess[j], &mut scratch);
        strategy.level_mut(n).copy_from_slice(&c);
    }
    let mut history = Vec::new();
    for sweep in 1..=opts.max_sweeps {
        let rows: Vec<(ValueField, Diagnostics)> = (lo..hi)
            .into_par_iter()
            .map(|a| -> Result<(ValueField, Diagnostics)> {
                let term = theta.rows[a].level(hi - a).to_vec();
                let sol = solve(
                    model,
                    time.t(a),
                    &time.window(a, hi),
                    space,
                    Some(&term),
                    ControlRule::Feedback(&*strategy),
                    SolverOptions::default(),
                )?;
                Ok((sol.value, sol.diagnostics))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut change = 0.0f64;
        for (j, (row, _)) in rows.iter().enumerate() {
            for (p, q) in row.level(0).iter().zip(&guess[j]) {
                change = change.max((p - q).abs());
            }
        }
        for (j, (row, _)) in rows.iter().enumerate() {
            guess[j].copy_from_slice(row.level(0));
            let n = lo + j;
            let c = diagonal_controls(model, candidates, space, qs, time.t(n), &guess[j], &mut scratch);
            strategy.level_mut(n).copy_from_slice(&c);
        }
        let residual = rows
            .par_iter()
            .map(|(row, _)| scheme_residual(model, row.time().t(0), row, &*strategy))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        history.push(change);
        log.push(SweepRecord {
            slab: (time.t(lo), time.t(hi)),
            sweep,
            diag_change: change,
            residual,
        });
        if change < opts.tol {
            for (j, (row, d)) in rows.into_iter().enumerate() {
                let a = lo + j;
                diagnostics.absorb(&d);
                for n in a..hi {
                    theta.rows[a].level_mut(n - a).copy_from_slice(row.level(n - a));
                }
            }
            return Ok(diagnostics);
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_sweeps,
        tol: opts.tol,
        last: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// Largest discrete residual over every anchor row under the stored
/// strategy; rows are checked against their terminal data as well.
pub fn residual<M: Model + ?Sized>(model: &M, sol: &EquilibriumSolution) -> Result<f64> {
    let theta = &sol.theta;
    let steps = theta.time.steps();
    let space = &theta.space;
    (0..=steps)
        .into_par_iter()
        .map(|a| -> Result<f64> {
            let row = theta.row(a);
            let tau = theta.time.t(a);
            let mut worst = 0.0f64;
            for i in 0..theta.m {
                for k in 0..space.len() {
                    let h = model.terminal_cost(tau, space.x(k), i);
                    worst = worst.max((row.get(steps - a, k, i) - h).abs());
                }
            }
            Ok(worst.max(scheme_residual(model, tau, row, &sol.strategy)?))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().fold(0.0, f64::max))
}

/// Distances between the partition-game output and the equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartitionDistance {
    /// `‖Θ^Π − Θ‖`
    pub theta: f64,
    /// `‖Θ^Π_x − Θ_x‖` by central differences
    pub theta_x: f64,
    /// `‖Ψ^Π − Ψ̄‖`
    pub psi: f64,
}

/// Sup-norm distances over `a ≤ n` and the spatial interior.
pub fn compare_to_partition(sol: &EquilibriumSolution, pi: &PiSolution) -> Result<PartitionDistance> {
    let theta = &sol.theta;
    if pi.value.time() != theta.time() || !pi.value.space().same_nodes(theta.space()) || pi.value.regimes() != theta.m {
        return Err(Error::Config("partition and equilibrium solutions live on different grids".into()));
    }
    let steps = theta.time.steps();
    let space = &theta.space;
    let dx = space.dx();
    let nx = space.len();
    let mut out = PartitionDistance {
        theta: 0.0,
        theta_x: 0.0,
        psi: sol.strategy.sup_diff(&pi.strategy)?,
    };
    for a in 0..=steps {
        for n in a..=steps {
            for i in 0..theta.m {
                let eq = theta.row(a).slice(n - a, i);
                let b = pi.partition.block_of_node(a);
                let block = &pi.blocks[b];
                let game = block.slice(n - block.time().offset(), i);
                for k in space.interior() {
                    out.theta = out.theta.max((eq[k] - game[k]).abs());
                    if k > 0 && k + 1 < nx {
                        out.theta_x = out.theta_x.max((d1(eq, k, dx) - d1(game, k, dx)).abs());
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `Ψ̄` as a policy.
impl Feedback for EquilibriumSolution {
    fn control(&self, s: f64, x: f64, i: usize) -> Result<Control> {
        self.strategy.eval(s, x, i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Choice, ControlSet, PdeProblem};
    use crate::partition::{run_cycles, Partition};
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

    fn grids() -> (TimeGrid, SpatialGrid) {
        (TimeGrid::uniform(1.0, 16).unwrap(), SpatialGrid::new(-2.0, 2.0, 41).unwrap())
    }

    #[test]
    fn anchor_free_equilibrium_is_the_hjb_solution() {
        let (t, x) = grids();
        let model = discounted(0.0);
        let eq = solve_equilibrium(&model, &t, &x, EquilibriumOptions { tol: 1e-12, ..Default::default() }).unwrap();
        let hjb = solve_hjb(&model, 0.0, &t, &x, None).unwrap();
        assert!(eq.value.sup_diff(&hjb.value).unwrap() <= 1e-8);
        for a in [0, 5, 11] {
            for n in a..=16 {
                for k in x.interior() {
                    assert!((eq.theta.get(a, n, k, 1) - hjb.value.get(n, k, 1)).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn constant_data_converges_in_one_sweep() {
        let (t, x) = grids();
        let model = PdeProblem::inert(2)
            .with_volatility(|_, _, _, _| 0.4)
            .with_generator(GeneratorMatrix::from_rows(&[vec![0.0, 0.5], vec![0.7, 0.0]]).unwrap())
            .with_terminal(|_, _, _| 2.5);
        let eq = solve_equilibrium(&model, &t, &x, EquilibriumOptions::default()).unwrap();
        assert!(eq.value.data().iter().all(|v| (v - 2.5).abs() < 1e-12));
        assert!(eq.log.iter().all(|r| r.sweep == 1));
    }

    #[test]
    fn stored_strategy_is_recomputable_and_terminal_residual_vanishes() {
        let (t, x) = grids();
        let model = discounted(1.0);
        let eq = solve_equilibrium(&model, &t, &x, EquilibriumOptions::default()).unwrap();
        let (again, _) = diagonal_strategy(&model, &eq.value).unwrap();
        assert_eq!(again, eq.strategy);
        let last = t.steps();
        assert_eq!(
            scheme_residual(&model, 1.0, eq.theta.row(last), &eq.strategy).unwrap(),
            0.0
        );
        for a in 0..=last {
            for k in 0..x.len() {
                assert_eq!(eq.theta.get(a, last, k, 0), model.terminal_cost(t.t(a), x.x(k), 0));
            }
        }
        assert!(residual(&model, &eq).unwrap() < 1e-8);
    }

    #[test]
    fn slab_log_contracts() {
        let (t, x) = grids();
        let eq = solve_equilibrium(&discounted(2.0), &t, &x, EquilibriumOptions::default()).unwrap();
        let mut by_slab: Vec<Vec<f64>> = Vec::new();
        for r in &eq.log {
            if r.sweep == 1 {
                by_slab.push(Vec::new());
            }
            by_slab.last_mut().unwrap().push(r.diag_change);
        }
        for changes in by_slab {
            for w in changes.windows(2).skip(1) {
                assert!(w[1] < w[0] || w[1] < 1e-12, "{changes:?}");
            }
        }
    }

    #[test]
    fn partition_distance_shrinks_with_the_mesh() {
        let t = TimeGrid::uniform(1.0, 32).unwrap();
        let x = SpatialGrid::new(-2.0, 2.0, 41).unwrap();
        let model = discounted(2.0);
        let eq = solve_equilibrium(&model, &t, &x, EquilibriumOptions::default()).unwrap();
        let d: Vec<f64> = [2, 4, 8]
            .iter()
            .map(|&n| {
                let pi = run_cycles(&model, &Partition::uniform(&t, n).unwrap(), &t, &x).unwrap();
                compare_to_partition(&eq, &pi).unwrap().theta
            })
            .collect();
        assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
        let other = SpatialGrid::new(-2.0, 2.0, 21).unwrap();
        let pi = run_cycles(&model, &Partition::uniform(&t, 2).unwrap(), &t, &other).unwrap();
        assert!(compare_to_partition(&eq, &pi).is_err());
    }
}
