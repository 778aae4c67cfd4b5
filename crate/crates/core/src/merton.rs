//! Regime-switching Merton portfolio/consumption problem.
//!
//! Wealth follows `dX = [b(α)u − c]ds + σ(α)u dW` and the payoff is
//! `E[∫ g(τ,s) c^γ ds + h(τ) X(T)^γ]`. With the power ansatz
//! `value = φ · x^γ` every variant reduces to ODEs in time for `φ`.
//!
//! Sign convention: the payoff is maximized, while [`MertonModel`] presents
//! the problem to the minimizing PDE core with negated costs, so its value
//! is `−φ x^γ`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr, Var};
use crate::grid::TimeGrid;
use crate::model::{Choice, Control, ControlSet, Dynamics, Feedback, Model, RecursiveArgs};
use crate::sde::{integrate_path, mean_and_se, per_path, Event, Policy, SimSpec};
use crate::switching::{GeneratorMatrix, LevyMeasure, RegimeGeometry};

/// Floor applied to `V_xx` and `−V_x` before they enter the minimizer.
pub const EPS_PSI: f64 = 1e-8;

/// Discount-type weight `w(τ, s)` of anchor `τ` and running time `s`.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Const(f64),
    /// `scale / (1 + κ (s − τ))`
    Hyperbolic { scale: f64, kappa: f64 },
    /// `scale · exp(−rate (s − τ))`
    Exponential { scale: f64, rate: f64 },
    /// expression in `tau` and `s`
    Expression(Expr),
}

impl Weight {
    pub fn eval(&self, tau: f64, s: f64) -> f64 {
        match self {
            Weight::Const(c) => *c,
            Weight::Hyperbolic { scale, kappa } => scale / (1.0 + kappa * (s - tau)),
            Weight::Exponential { scale, rate } => scale * (-rate * (s - tau)).exp(),
            Weight::Expression(e) => e
                .eval(&Bindings::new().with(Var::Tau, tau).with(Var::S, s).with(Var::T, s))
                .unwrap_or(f64::NAN),
        }
    }

    /// True when the weight cannot depend on the anchor.
    pub fn anchor_free(&self) -> bool {
        match self {
            Weight::Const(_) => true,
            Weight::Hyperbolic { kappa, .. } => *kappa == 0.0,
            Weight::Exponential { rate, .. } => *rate == 0.0,
            Weight::Expression(e) => !e.variables().contains(&Var::Tau),
        }
    }
}

/// Parameters of the regime-switching Merton problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MertonSpec {
    pub b: Vec<f64>,
    pub sigma: Vec<f64>,
    pub gamma: f64,
    /// running weight `g(τ, s)`
    pub consumption: Weight,
    /// terminal weight, `h(τ) = bequest(τ, T)`
    pub bequest: Weight,
    pub generator: GeneratorMatrix,
    pub horizon: f64,
}

impl MertonSpec {
    /// Two-regime preset with hyperbolic discounting of both weights.
    pub fn preset() -> Self {
        MertonSpec {
            b: vec![0.08, 0.03],
            sigma: vec![0.25, 0.35],
            gamma: 0.5,
            consumption: Weight::Hyperbolic { scale: 1.0, kappa: 1.0 },
            bequest: Weight::Hyperbolic { scale: 1.0, kappa: 1.0 },
            generator: GeneratorMatrix::from_rows(&[vec![0.0, 0.5], vec![0.4, 0.0]]).unwrap(),
            horizon: 1.0,
        }
    }

    /// The preset with anchor-free constant weights (time-consistent).
    pub fn time_consistent_preset() -> Self {
        MertonSpec {
            consumption: Weight::Const(1.0),
            bequest: Weight::Const(1.0),
            ..Self::preset()
        }
    }

    pub fn regimes(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.b.len();
        if m == 0 || self.sigma.len() != m || self.generator.dim() != m {
            return Err(Error::Config(format!(
                "Merton parameters need matching sizes: b {}, sigma {}, generator {}",
                m,
                self.sigma.len(),
                self.generator.dim()
            )));
        }
        if let Some(s) = self.sigma.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::Config(format!("volatility must be positive, got {s}")));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("risk exponent must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        let t = self.horizon;
        for a in 0..=8 {
            for c in a..=8 {
                let (tau, s) = (t * a as f64 / 8.0, t * c as f64 / 8.0);
                let g = self.consumption.eval(tau, s);
                // g ≡ 0 is allowed: the pure-investment problem
                if !(g >= 0.0) || !g.is_finite() {
                    return Err(Error::Config(format!("consumption weight g({tau}, {s}) = {g} must be nonnegative")));
                }
            }
            let h = self.h(t * a as f64 / 8.0);
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::Config(format!("bequest weight h({}) = {h} must be positive", t * a as f64 / 8.0)));
            }
        }
        Ok(())
    }

    pub fn h(&self, tau: f64) -> f64 {
        self.bequest.eval(tau, self.horizon)
    }

    pub fn g(&self, tau: f64, s: f64) -> f64 {
        self.consumption.eval(tau, s)
    }

    pub fn anchor_free(&self) -> bool {
        self.consumption.anchor_free() && self.bequest.anchor_free()
    }

    /// `γ b_i² / (2 (1 − γ) σ_i²)`
    pub fn growth(&self, i: usize) -> f64 {
        self.gamma * self.b[i].powi(2) / (2.0 * (1.0 - self.gamma) * self.sigma[i].powi(2))
    }

    /// Investment-to-wealth ratio `b_i / ((1 − γ) σ_i²)`, common to every variant.
    pub fn investment_fraction(&self, i: usize) -> f64 {
        self.b[i] / ((1.0 - self.gamma) * self.sigma[i].powi(2))
    }

    /// Consumption-to-wealth ratio `(g / φ)^{1/(1−γ)}`.
    pub fn consumption_fraction(&self, g: f64, phi: f64) -> f64 {
        (g / phi).powf(1.0 / (1.0 - self.gamma))
    }
}

/// Classical RK4 step backward from `s1` to `s0` for `y' = f(s, y)`.
fn rk4_back(f: &dyn Fn(f64, &[f64], usize) -> f64, s1: f64, s0: f64, y: &[f64], mid: f64) -> Vec<f64> {
    let h = s1 - s0;
    let m = y.len();
    let eval = |s: f64, z: &[f64]| -> Vec<f64> { (0..m).map(|i| f(s, z, i)).collect() };
    let k1 = eval(s1, y);
    let y2: Vec<f64> = (0..m).map(|i| y[i] - 0.5 * h * k1[i]).collect();
    let k2 = eval(mid, &y2);
    let y3: Vec<f64> = (0..m).map(|i| y[i] - 0.5 * h * k2[i]).collect();
    let k3 = eval(mid, &y3);
    let y4: Vec<f64> = (0..m).map(|i| y[i] - h * k3[i]).collect();
    let k4 = eval(s0, &y4);
    (0..m)
        .map(|i| y[i] - h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn check_positive(v: &[f64], s: f64, what: &str) -> Result<()> {
    if let Some(p) = v.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
        return Err(Error::numeric(
            what,
            format!("φ lost positivity ({p}) at s={s}; check the Merton parameters or refine the time grid"),
        ));
    }
    Ok(())
}

/// `φ(s, i)` on a time grid, row-major `(n, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiCurve {
    pub grid: TimeGrid,
    pub regimes: usize,
    pub values: Vec<f64>,
}

impl PhiCurve {
    pub fn get(&self, n: usize, i: usize) -> f64 {
        self.values[n * self.regimes + i]
    }

    /// Linear interpolation in `s`, clamped to the grid.
    pub fn at(&self, s: f64, i: usize) -> f64 {
        let n = self.grid.floor_index(s);
        if n + 1 >= self.grid.len() {
            return self.get(self.grid.len() - 1, i);
        }
        let w = ((s - self.grid.t(n)) / self.grid.dt(n)).clamp(0.0, 1.0);
        (1.0 - w) * self.get(n, i) + w * self.get(n + 1, i)
    }
}

fn integrate_anchor_row(spec: &MertonSpec, grid: &TimeGrid, tau: f64, from: usize, what: &str) -> Result<PhiCurve> {
    let m = spec.regimes();
    let gam = spec.gamma;
    let q = &spec.generator;
    let rhs = |s: f64, y: &[f64], i: usize| -> f64 {
        let g = spec.g(tau, s);
        -(spec.growth(i) * y[i]
            + (1.0 - gam) * g.powf(1.0 / (1.0 - gam)) * y[i].powf(gam / (gam - 1.0))
            + q.apply_row(i, y))
    };
    let window = grid.window(from, grid.steps());
    let last = window.steps();
    let mut values = vec![0.0; window.len() * m];
    let mut y = vec![spec.h(tau); m];
    values[last * m..].copy_from_slice(&y);
    for n in (0..last).rev() {
        let (s0, s1) = (window.t(n), window.t(n + 1));
        y = rk4_back(&rhs, s1, s0, &y, 0.5 * (s0 + s1));
        check_positive(&y, s0, what)?;
        values[n * m..(n + 1) * m].copy_from_slice(&y);
    }
    Ok(PhiCurve {
        grid: window,
        regimes: m,
        values,
    })
}

/// `φ_i(s)` of the time-consistent problem; needs anchor-free weights.
pub fn solve_time_consistent(spec: &MertonSpec, grid: &TimeGrid) -> Result<PhiCurve> {
    spec.validate()?;
    if !spec.anchor_free() {
        return Err(Error::Config(
            "time-consistent Merton needs anchor-free weights g(s) and constant h".into(),
        ));
    }
    integrate_anchor_row(spec, grid, grid.start(), 0, "time-consistent φ")
}

/// `φ(τ; s, i)` of the problem pre-committed at anchor `τ` (a grid node).
pub fn solve_precommitted(spec: &MertonSpec, tau: f64, grid: &TimeGrid) -> Result<PhiCurve> {
    spec.validate()?;
    let from = grid
        .index_of(tau)
        .ok_or_else(|| Error::Config(format!("anchor {tau} is not a node of the φ grid")))?;
    if from == grid.steps() {
        return Err(Error::Domain(format!("anchor {tau} must lie before the horizon")));
    }
    integrate_anchor_row(spec, grid, tau, from, "pre-committed φ")
}

/// Two-time `φ(τ, s, i)` for `τ ≤ s` with its diagonal fixed-point history.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPhi {
    pub grid: TimeGrid,
    pub regimes: usize,
    /// row `n` holds nodes `n..=N`, each with `m` regime values
    pub rows: Vec<Vec<f64>>,
    pub history: Vec<f64>,
}

impl EquilibriumPhi {
    /// `φ(τ_a, s_n, i)` for `a ≤ n`.
    pub fn get(&self, a: usize, n: usize, i: usize) -> f64 {
        self.rows[a][(n - a) * self.regimes + i]
    }

    /// Diagonal `φ(s, s, i)` as a curve.
    pub fn diagonal(&self) -> PhiCurve {
        let m = self.regimes;
        let values = (0..self.grid.len())
            .flat_map(|n| (0..m).map(move |i| (n, i)))
            .map(|(n, i)| self.get(n, n, i))
            .collect();
        PhiCurve {
            grid: self.grid.clone(),
            regimes: m,
            values,
        }
    }

    /// Ratios of successive diagonal changes.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.history.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

/// Four-point Lagrange interpolation of `d` (row-major `(n, i)`) at the
/// midpoint of cell `j`.
fn cubic_midpoint(d: &[f64], m: usize, steps: usize, j: usize, i: usize) -> f64 {
    if steps < 3 {
        return 0.5 * (d[j * m + i] + d[(j + 1) * m + i]);
    }
    // stencil nodes a..a+3 containing j and j+1
    let a = j.saturating_sub(1).min(steps - 3);
    let t = (j - a) as f64 + 0.5;
    let mut out = 0.0;
    for p in 0..4 {
        let mut w = 1.0;
        for r in 0..4 {
            if r != p {
                w *= (t - r as f64) / (p as f64 - r as f64);
            }
        }
        out += w * d[(a + p) * m + i];
    }
    out
}

/// Solves the two-time φ system by fixed-point iteration on its diagonal.
pub fn solve_equilibrium_ode(spec: &MertonSpec, grid: &TimeGrid, tol: f64, max_iter: usize) -> Result<EquilibriumPhi> {
    spec.validate()?;
    let m = spec.regimes();
    let steps = grid.steps();
    let gam = spec.gamma;
    let q = &spec.generator;
    let e1 = 1.0 / (1.0 - gam);
    let e2 = gam / (1.0 - gam);

    let mut diag: Vec<f64> = (0..=steps).flat_map(|n| vec![spec.h(grid.t(n)); m]).collect();
    let mut history = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for _ in 0..max_iter {
        let d_mid: Vec<f64> = (0..steps)
            .flat_map(|j| (0..m).map(move |i| (j, i)))
            .map(|(j, i)| cubic_midpoint(&diag, m, steps, j, i))
            .collect();
        rows = (0..=steps)
            .map(|a| -> Result<Vec<f64>> {
                let tau = grid.t(a);
                let mut row = vec![0.0; (steps - a + 1) * m];
                let mut y = vec![spec.h(tau); m];
                row[(steps - a) * m..].copy_from_slice(&y);
                for j in (a..steps).rev() {
                    let (s0, s1) = (grid.t(j), grid.t(j + 1));
                    let mid = 0.5 * (s0 + s1);
                    let dref = |s: f64, i: usize| -> f64 {
                        if s == s1 {
                            diag[(j + 1) * m + i]
                        } else if s == s0 {
                            diag[j * m + i]
                        } else {
                            d_mid[j * m + i]
                        }
                    };
                    let rhs = |s: f64, z: &[f64], i: usize| -> f64 {
                        let gss = spec.g(s, s);
                        let ratio = gss / dref(s, i);
                        -(spec.growth(i) * z[i] - gam * z[i] * ratio.powf(e1)
                            + spec.g(tau, s) * ratio.powf(e2)
                            + q.apply_row(i, z))
                    };
                    y = rk4_back(&rhs, s1, s0, &y, mid);
                    check_positive(&y, s0, "equilibrium φ")?;
                    row[(j - a) * m..(j - a + 1) * m].copy_from_slice(&y);
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        let fresh: Vec<f64> = (0..=steps).flat_map(|n| rows[n][..m].to_vec()).collect();
        let change = fresh
            .iter()
            .zip(&diag)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let damp = history.last().is_some_and(|&prev| change > prev);
        history.push(change);
        if damp {
            for (d, f) in diag.iter_mut().zip(&fresh) {
                *d += 0.5 * (f - *d);
            }
        } else {
            diag = fresh;
        }
        if change < tol {
            return Ok(EquilibriumPhi {
                grid: grid.clone(),
                regimes: m,
                rows,
                history,
            });
        }
    }
    let _ = rows;
    Err(Error::NonConvergence {
        iterations: max_iter,
        tol,
        last: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// Which closed-form strategy to use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    TimeConsistent,
    Precommitted,
    Equilibrium,
}

/// Closed-form `(ū, c̄)` at wealth `x` given the relevant φ value and the
/// consumption weight it pairs with (`g(s)`, `g(τ, s)` or `g(s, s)`).
pub fn strategies(spec: &MertonSpec, phi: f64, weight: f64, x: f64, i: usize) -> Result<(f64, f64)> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("wealth must be positive, got {x}")));
    }
    Ok((spec.investment_fraction(i) * x, spec.consumption_fraction(weight, phi) * x))
}

/// Strategy investing and consuming fixed fractions of wealth per regime,
/// the consumption fraction possibly varying in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Proportional {
    pub invest: Vec<f64>,
    /// consumption fraction on a time grid, row-major `(n, i)`
    pub consume: PhiCurve,
}

impl Proportional {
    pub fn constant(invest: Vec<f64>, consume: Vec<f64>, horizon: f64) -> Result<Self> {
        let m = invest.len();
        let grid = TimeGrid::uniform(horizon, 1)?;
        let mut values = consume.clone();
        values.extend_from_slice(&consume);
        Ok(Proportional {
            invest,
            consume: PhiCurve { grid, regimes: m, values },
        })
    }

    /// Equilibrium strategy from the diagonal `φ(s, s, i)`.
    pub fn equilibrium(spec: &MertonSpec, phi: &EquilibriumPhi) -> Self {
        let d = phi.diagonal();
        Self::from_curve(spec, &d, |s| spec.g(s, s))
    }

    pub fn time_consistent(spec: &MertonSpec, phi: &PhiCurve) -> Self {
        Self::from_curve(spec, phi, |s| spec.g(s, s))
    }

    /// Pre-committed strategy of anchor `tau`.
    pub fn precommitted(spec: &MertonSpec, tau: f64, phi: &PhiCurve) -> Self {
        Self::from_curve(spec, phi, |s| spec.g(tau, s))
    }

    fn from_curve(spec: &MertonSpec, phi: &PhiCurve, weight: impl Fn(f64) -> f64) -> Self {
        let m = phi.regimes;
        let values = (0..phi.grid.len())
            .flat_map(|n| (0..m).map(move |i| (n, i)))
            .map(|(n, i)| spec.consumption_fraction(weight(phi.grid.t(n)), phi.get(n, i)))
            .collect();
        Proportional {
            invest: (0..m).map(|i| spec.investment_fraction(i)).collect(),
            consume: PhiCurve {
                grid: phi.grid.clone(),
                regimes: m,
                values,
            },
        }
    }
}

impl Feedback for Proportional {
    fn control(&self, s: f64, x: f64, i: usize) -> Result<Control> {
        Ok(Control::pair(self.invest[i] * x, self.consume.at(s, i) * x))
    }
}

/// Merton problem as a minimizing [`Model`]: value `−φ x^γ`.
#[derive(Debug, Clone)]
pub struct MertonModel {
    pub spec: MertonSpec,
    controls: ControlSet,
}

impl MertonModel {
    pub fn new(spec: MertonSpec) -> Result<Self> {
        spec.validate()?;
        Ok(MertonModel {
            spec,
            controls: ControlSet::Box {
                dim: 2,
                lower: [f64::NEG_INFINITY, 0.0],
                upper: [f64::INFINITY, f64::INFINITY],
                search: [(-20.0, 20.0), (0.0, 20.0)],
            },
        })
    }
}

impl Dynamics for MertonModel {
    fn drift(&self, _s: f64, _x: f64, i: usize, u: Control) -> f64 {
        self.spec.b[i] * u.0[0] - u.0[1]
    }

    fn volatility(&self, _s: f64, _x: f64, i: usize, u: Control) -> f64 {
        self.spec.sigma[i] * u.0[0]
    }
}

impl Model for MertonModel {
    fn regime_count(&self) -> usize {
        self.spec.regimes()
    }

    fn generator(&self, _x: f64) -> Result<GeneratorMatrix> {
        Ok(self.spec.generator.clone())
    }

    fn running_cost(&self, anchor: f64, s: f64, _x: f64, _i: usize, _args: RecursiveArgs, u: Control) -> f64 {
        -self.spec.g(anchor, s) * u.0[1].max(0.0).powf(self.spec.gamma)
    }

    fn terminal_cost(&self, anchor: f64, x: f64, _i: usize) -> f64 {
        -self.spec.h(anchor) * x.max(0.0).powf(self.spec.gamma)
    }

    fn control_set(&self) -> &ControlSet {
        &self.controls
    }

    fn minimizer(&self, anchor: f64, s: f64, _x: f64, i: usize, _v: &[f64], p: f64, pp: f64) -> Option<Choice> {
        let curv = pp.max(EPS_PSI);
        let slope = (-p).max(EPS_PSI);
        let clamped = pp < EPS_PSI || -p < EPS_PSI;
        let sp = &self.spec;
        let u = sp.b[i] * slope / (sp.sigma[i].powi(2) * curv);
        let c = (sp.gamma * sp.g(anchor, s) / slope).powf(1.0 / (1.0 - sp.gamma));
        Some(Choice {
            control: Control::pair(u, c),
            clamped,
        })
    }
}

/// Monte Carlo estimate of `E[∫_t^T g(t,s) c^γ ds + h(t) X(T)^γ]` under a
/// proportional strategy, with a left-point rule for the running payoff.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_payoff(
    spec: &MertonSpec,
    strategy: &Proportional,
    t: f64,
    x: f64,
    i: usize,
    step: f64,
    n_paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let model = MertonModel::new(spec.clone())?;
    // constant rates realized by constant thresholds under a uniform mark law
    let geometry = RegimeGeometry::from_constant_generator(&spec.generator, 1.0, (0.0, 1.0))?;
    let levy = LevyMeasure::uniform(1.0)?;
    let sim = SimSpec {
        t0: t,
        horizon: spec.horizon,
        x0: x,
        regime: i,
        step,
    };
    let gam = spec.gamma;
    let payoffs = per_path(n_paths, |idx| {
        let mut running = 0.0;
        let mut bad: Option<(f64, f64)> = None;
        let (xt, _) = integrate_path(&model, &geometry, &levy, &sim, Policy::Feedback(strategy), seed, idx, &mut |e| {
            if let Event::Step { s, dt, u, x_new, .. } = e {
                running += spec.g(t, s) * u.0[1].max(0.0).powf(gam) * dt;
                if !(x_new > 0.0) && bad.is_none() {
                    bad = Some((s + dt, x_new));
                }
            }
        })?;
        if let Some((s, xv)) = bad {
            return Err(Error::Resolution(format!(
                "wealth reached {xv} at s={s}; use a smaller step than {step}"
            )));
        }
        Ok(running + spec.h(t) * xt.powf(gam))
    })?;
    Ok(mean_and_se(&payoffs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_regime(b: f64, sigma: f64, g: f64) -> MertonSpec {
        MertonSpec {
            b: vec![b],
            sigma: vec![sigma],
            gamma: 0.5,
            consumption: Weight::Const(g),
            bequest: Weight::Const(1.5),
            generator: GeneratorMatrix::zeros(1),
            horizon: 1.0,
        }
    }

    #[test]
    fn zero_consumption_weight_matches_closed_form() {
        let spec = single_regime(0.08, 0.25, 0.0);
        let grid = TimeGrid::uniform(1.0, 200).unwrap();
        let phi = solve_time_consistent(&spec, &grid).unwrap();
        let eq = solve_equilibrium_ode(&spec, &grid, 1e-12, 50).unwrap();
        for n in 0..=200 {
            let s = grid.t(n);
            let exact = 1.5 * (0.5 * 0.08f64.powi(2) * (1.0 - s) / (2.0 * 0.5 * 0.25f64.powi(2))).exp();
            assert!((phi.get(n, 0) - exact).abs() < 1e-8);
            assert!((eq.get(0, n, 0) - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn time_consistent_phi_is_bounded_below_and_monotone() {
        let spec = MertonSpec::time_consistent_preset();
        let grid = TimeGrid::uniform(1.0, 400).unwrap();
        let phi = solve_time_consistent(&spec, &grid).unwrap();
        for n in 0..grid.len() {
            for i in 0..2 {
                assert!(phi.get(n, i) >= spec.h(0.0));
                if n > 0 {
                    assert!(phi.get(n - 1, i) >= phi.get(n, i));
                }
            }
        }
        assert!(solve_time_consistent(&MertonSpec::preset(), &grid).is_err());
    }

    #[test]
    fn precommitted_reduces_and_differs() {
        let grid = TimeGrid::uniform(1.0, 100).unwrap();
        let tc_spec = MertonSpec::time_consistent_preset();
        let tc = solve_time_consistent(&tc_spec, &grid).unwrap();
        let pre = solve_precommitted(&tc_spec, grid.t(40), &grid).unwrap();
        for n in 0..pre.grid.len() {
            for i in 0..2 {
                assert!((pre.get(n, i) - tc.get(n + 40, i)).abs() < 1e-10);
            }
        }
        let spec = MertonSpec::preset();
        let a = solve_precommitted(&spec, grid.t(10), &grid).unwrap();
        let b = solve_precommitted(&spec, grid.t(50), &grid).unwrap();
        let gap = (0..b.grid.len()).map(|n| (a.get(n + 40, 0) - b.get(n, 0)).abs()).fold(0.0, f64::max);
        assert!(gap > 0.0);
        assert_eq!(b.get(b.grid.steps(), 1), spec.h(grid.t(50)));
    }

    #[test]
    fn equilibrium_reduces_to_time_consistent() {
        let grid = TimeGrid::uniform(1.0, 400).unwrap();
        let spec = MertonSpec::time_consistent_preset();
        let tc = solve_time_consistent(&spec, &grid).unwrap();
        let eq = solve_equilibrium_ode(&spec, &grid, 1e-13, 100).unwrap();
        for a in (0..=400).step_by(37) {
            for n in a..=400 {
                for i in 0..2 {
                    assert!((eq.get(a, n, i) - tc.get(n, i)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn hyperbolic_equilibrium_converges_geometrically() {
        let grid = TimeGrid::uniform(1.0, 200).unwrap();
        let spec = MertonSpec {
            bequest: Weight::Const(1.0),
            ..MertonSpec::preset()
        };
        let eq = solve_equilibrium_ode(&spec, &grid, 1e-12, 100).unwrap();
        assert_eq!(eq.get(200, 200, 0), 1.0);
        let ratios = eq.contraction_ratios();
        assert!(!ratios.is_empty() && ratios.iter().all(|&r| r < 1.0), "{ratios:?}");
    }

    #[test]
    fn closed_form_strategy_examples() {
        let spec = single_regime(0.1, 0.2, 1.0);
        let (u, _) = strategies(&spec, 2.0, 1.0, 1.0, 0).unwrap();
        assert!((u - 5.0).abs() < 1e-12);
        let (_, c) = strategies(&spec, 0.7, 0.7, 3.0, 0).unwrap();
        assert_eq!(c, 3.0);
        let (u1, _) = strategies(&spec, 2.0, 1.0, 1.3, 0).unwrap();
        let (u2, _) = strategies(&spec, 2.0, 1.0, 2.6, 0).unwrap();
        assert!((u2 - 2.0 * u1).abs() < 1e-12);
        assert!(strategies(&spec, 2.0, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn minimizer_matches_closed_form_on_the_ansatz() {
        let spec = MertonSpec::preset();
        let model = MertonModel::new(spec.clone()).unwrap();
        let (phi, x, gam) = (1.7f64, 1.3f64, spec.gamma);
        let p = -gam * phi * x.powf(gam - 1.0);
        let pp = -gam * (gam - 1.0) * phi * x.powf(gam - 2.0);
        let c = model.minimizer(0.2, 0.2, x, 1, &[], p, pp).unwrap();
        let (u, cc) = strategies(&spec, phi, spec.g(0.2, 0.2), x, 1).unwrap();
        assert!((c.control.0[0] - u).abs() < 1e-12);
        assert!((c.control.0[1] - cc).abs() < 1e-12);
        assert!(!c.clamped);
        assert!(model.minimizer(0.0, 0.0, x, 0, &[], 1.0, -1.0).unwrap().clamped);
    }

    #[test]
    fn idle_strategy_pays_the_bequest_exactly() {
        let spec = MertonSpec::preset();
        let idle = Proportional::constant(vec![0.0, 0.0], vec![0.0, 0.0], 1.0).unwrap();
        let (est, se) = monte_carlo_payoff(&spec, &idle, 0.25, 2.0, 0, 0.01, 200, 3).unwrap();
        let exact = spec.h(0.25) * 2f64.sqrt();
        assert!((est - exact).abs() < 1e-14 * exact);
        assert!(se < 1e-14);
    }
}
