//! N-player partition game: one player per partition block, each solving
//! an HJB on its own block against the strategies already fixed by the
//! later players.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{StrategyField, ValueField};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::model::Model;
use crate::pde::{solve, solve_hjb, ControlRule, Diagnostics, SolverOptions};

/// Knots `0 = t_0 < … < t_N = T`, each a node of the PDE time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    knots: Vec<f64>,
    /// grid index of each knot
    nodes: Vec<usize>,
}

impl Partition {
    /// `count` equal blocks; the number of grid steps must be a multiple.
    pub fn uniform(time: &TimeGrid, count: usize) -> Result<Self> {
        let steps = time.steps();
        if count == 0 || !steps.is_multiple_of(count) {
            return Err(Error::Config(format!(
                "{count} equal blocks do not fit {steps} time steps"
            )));
        }
        let nodes: Vec<usize> = (0..=count).map(|k| k * steps / count).collect();
        Ok(Partition {
            knots: nodes.iter().map(|&n| time.t(n)).collect(),
            nodes,
        })
    }

    /// Arbitrary knots; each must coincide with a grid node.
    pub fn from_knots(time: &TimeGrid, knots: &[f64]) -> Result<Self> {
        let mut nodes = Vec::with_capacity(knots.len());
        for &t in knots {
            let n = time
                .index_of(t)
                .ok_or_else(|| Error::Config(format!("partition knot {t} is not a node of the time grid")))?;
            nodes.push(n);
        }
        if nodes.first() != Some(&0) || nodes.last() != Some(&time.steps()) {
            return Err(Error::Config(format!(
                "partition must start at {} and end at {}",
                time.start(),
                time.end()
            )));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("partition knots must be strictly increasing".into()));
        }
        Ok(Partition {
            knots: nodes.iter().map(|&n| time.t(n)).collect(),
            nodes,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Number of players `N`.
    pub fn players(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn mesh(&self) -> f64 {
        self.knots.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Zero-based block of `s`; the horizon belongs to the last block.
    pub fn block(&self, s: f64) -> Result<usize> {
        let (a, b) = (self.knots[0], *self.knots.last().unwrap());
        if !(s >= a && s <= b) {
            return Err(Error::Domain(format!("time {s} outside [{a}, {b}]")));
        }
        let k = self.knots.partition_point(|&t| t <= s).saturating_sub(1);
        Ok(k.min(self.players() - 1))
    }

    /// Block of grid node `n`.
    pub fn block_of_node(&self, n: usize) -> usize {
        let k = self.nodes.partition_point(|&t| t <= n).saturating_sub(1);
        k.min(self.players() - 1)
    }

    /// Anchor `t^Π(s)`: the left knot of the block containing `s`.
    pub fn anchor(&self, s: f64) -> Result<f64> {
        Ok(self.knots[self.block(s)?])
    }
}

/// Output of the backward cycles for one partition.
#[derive(Debug, Clone)]
pub struct PiSolution {
    pub partition: Partition,
    /// `V^Π` on the whole grid
    pub value: ValueField,
    /// `Ψ^Π`, right-continuous at the knots
    pub strategy: StrategyField,
    /// `Θ^k` on `[t_{k−1}, T]`, indexed by zero-based block
    pub blocks: Vec<ValueField>,
    pub diagnostics: Diagnostics,
}

impl PiSolution {
    /// `Θ^Π(τ_a, s_n, x_k, i)` for grid nodes `a ≤ n`.
    pub fn theta(&self, a: usize, n: usize, k: usize, i: usize) -> f64 {
        let b = self.partition.block_of_node(a);
        let block = &self.blocks[b];
        block.get(n - block.time().offset(), k, i)
    }
}

/// Runs the cycles `k = N, …, 1`: representation PDE for `Θ^k` on
/// `[t_k, T]` under the strategy built so far, then the player's HJB on
/// `[t_{k−1}, t_k]`.
pub fn run_cycles<M: Model + ?Sized>(
    model: &M,
    partition: &Partition,
    time: &TimeGrid,
    space: &SpatialGrid,
) -> Result<PiSolution> {
    let steps = time.steps();
    if partition.nodes().last() != Some(&steps) || partition.knots().first() != Some(&time.start()) {
        return Err(Error::Config("partition does not span the time grid".into()));
    }
    let m = model.regime_count();
    let n_players = partition.players();
    let mut value = ValueField::zeros(time.clone(), space.clone(), m);
    let mut strategy = StrategyField::new(time.clone(), space.clone(), m, model.control_set().clone());
    let mut blocks: Vec<Option<ValueField>> = vec![None; n_players];
    let mut diagnostics = Diagnostics::default();

    for b in (0..n_players).rev() {
        let (lo, hi) = (partition.nodes()[b], partition.nodes()[b + 1]);
        let anchor = time.t(lo);
        let tag = |e: Error| e.context(&format!("cycle {}", b + 1));
        // Θ^k on [t_k, T] closed under the already-built Ψ^Π
        let tail = if hi < steps {
            let window = time.window(hi, steps);
            let sol = solve(
                model,
                anchor,
                &window,
                space,
                None,
                ControlRule::Feedback(&strategy),
                SolverOptions::default(),
            )
            .map_err(tag)?;
            diagnostics.absorb(&sol.diagnostics);
            Some(sol.value)
        } else {
            None
        };
        let terminal = tail.as_ref().map(|t| t.level(0).to_vec());
        let head = solve_hjb(model, anchor, &time.window(lo, hi), space, terminal.as_deref()).map_err(tag)?;
        diagnostics.absorb(&head.diagnostics);

        // Ψ^Π on [t_{k−1}, t_k), plus T for the last block
        let top = if hi == steps { hi } else { hi - 1 };
        for n in lo..=top {
            strategy.level_mut(n).copy_from_slice(head.strategy.level(n - lo));
            value.level_mut(n).copy_from_slice(head.value.level(n - lo));
        }

        let window = time.window(lo, steps);
        let mut theta = ValueField::zeros(window, space.clone(), m);
        for n in lo..=hi {
            theta.level_mut(n - lo).copy_from_slice(head.value.level(n - lo));
        }
        if let Some(tail) = &tail {
            for n in hi + 1..=steps {
                theta.level_mut(n - lo).copy_from_slice(tail.level(n - hi));
            }
        }
        blocks[b] = Some(theta);
    }

    Ok(PiSolution {
        partition: partition.clone(),
        value,
        strategy,
        blocks: blocks.into_iter().map(|b| b.expect("every block solved")).collect(),
        diagnostics,
    })
}

/// One line of a refinement study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub players: usize,
    pub mesh: f64,
    /// `‖V^Π − V^{Π_prev}‖` over the interior (0 for the first row)
    pub sup_diff_v: f64,
    pub sup_diff_psi: f64,
    /// `‖Θ^Π − Θ‖` against a reference two-time field, when given
    pub sup_diff_theta: Option<f64>,
}

/// Solves every partition and tabulates successive differences, plus the
/// distance of `Θ^Π` to `reference(a, n, k, i)` when provided.
pub fn refine_and_compare<M: Model + ?Sized>(
    model: &M,
    partitions: &[Partition],
    time: &TimeGrid,
    space: &SpatialGrid,
    reference: Option<&(dyn Fn(usize, usize, usize, usize) -> f64 + Sync)>,
) -> Result<Vec<ConvergenceRow>> {
    let mut rows = Vec::with_capacity(partitions.len());
    let mut prev: Option<PiSolution> = None;
    for p in partitions {
        let sol = run_cycles(model, p, time, space)?;
        let (dv, dpsi) = match &prev {
            Some(q) => (sol.value.sup_diff(&q.value)?, sol.strategy.sup_diff(&q.strategy)?),
            None => (0.0, 0.0),
        };
        let dtheta = reference.map(|r| theta_distance(&sol, space, r));
        rows.push(ConvergenceRow {
            players: p.players(),
            mesh: p.mesh(),
            sup_diff_v: dv,
            sup_diff_psi: dpsi,
            sup_diff_theta: dtheta,
        });
        prev = Some(sol);
    }
    Ok(rows)
}

/// `sup |Θ^Π(τ_a, s_n) − reference(a, n)|` over `a ≤ n` and interior `x`.
pub fn theta_distance(
    sol: &PiSolution,
    space: &SpatialGrid,
    reference: &(dyn Fn(usize, usize, usize, usize) -> f64 + Sync),
) -> f64 {
    let steps = sol.value.time().steps();
    let m = sol.value.regimes();
    let mut worst = 0.0f64;
    for a in 0..=steps {
        for n in a..=steps {
            for i in 0..m {
                for k in space.interior() {
                    worst = worst.max((sol.theta(a, n, k, i) - reference(a, n, k, i)).abs());
                }
            }
        }
    }
    worst
}
