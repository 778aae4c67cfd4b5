//! Finite-difference solver for coupled backward parabolic systems
//!
//! ```text
//! V_s + ½σ²V_xx + b V_x + [Q(x)V]_i + g(τ, s, x, i, V_i, V_x σ, [QV]_i, u) = 0,
//! V(T, x, i) = h(τ, x, i),
//! ```
//!
//! with `u` fixed, read from a feedback policy, or chosen by minimizing the
//! Hamiltonian pointwise.
//!
//! Diffusion and drift are Crank–Nicolson. The regime coupling and the
//! running cost are explicit: a predictor uses the values at the old level,
//! and each corrector pass averages the explicit terms of both levels (a Heun
//! step), which keeps the whole scheme second order in time.

use crate::error::{Error, Result};
use crate::field::{d1, StrategyField, ValueField};
use crate::grid::{Boundary, SpatialGrid, TimeGrid};
use crate::model::{minimize_hamiltonian, Control, Dynamics, Feedback, Model, RecursiveArgs};
use crate::quadrature::adaptive_simpson;
use crate::switching::GeneratorMatrix;

/// How the control is chosen at each node.
#[derive(Clone, Copy)]
pub enum ControlRule<'a> {
    Fixed(Control),
    Feedback(&'a dyn Feedback),
    /// pointwise Hamiltonian minimization (HJB)
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Minimum corrector passes per step; 0 gives the plain explicit-coupling scheme.
    pub corrector_passes: usize,
    /// Further passes run until the relative change drops below this, so the
    /// stored controls are the ones the step actually used.
    pub corrector_tol: f64,
    pub max_corrector_passes: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            corrector_passes: 1,
            corrector_tol: 1e-13,
            max_corrector_passes: 40,
        }
    }
}

impl SolverOptions {
    /// Exactly `passes` corrector passes, no convergence loop.
    pub fn fixed_passes(passes: usize) -> Self {
        SolverOptions {
            corrector_passes: passes,
            corrector_tol: f64::INFINITY,
            max_corrector_passes: passes,
        }
    }
}

/// Counters collected while solving.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct Diagnostics {
    pub steps: usize,
    /// analytic minimizer had to move a derivative input off a singularity
    pub psi_clamps: usize,
    /// grid-search argmin landed on a truncated edge of the control window
    pub truncation_hits: usize,
    /// steps whose corrector loop hit the pass limit before converging
    pub corrector_stalls: usize,
}

impl Diagnostics {
    pub fn absorb(&mut self, other: &Diagnostics) {
        self.steps += other.steps;
        self.psi_clamps += other.psi_clamps;
        self.truncation_hits += other.truncation_hits;
        self.corrector_stalls += other.corrector_stalls;
    }
}

/// Value field, node controls, and diagnostics of one solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub value: ValueField,
    pub strategy: StrategyField,
    pub diagnostics: Diagnostics,
}

/// Rates `Q(x_k)` at every spatial node, checked against the explicit
/// coupling bound `Δt · max|q_ii| < 1`.
pub fn node_generators<M: Model + ?Sized>(model: &M, space: &SpatialGrid, max_dt: f64) -> Result<Vec<GeneratorMatrix>> {
    let qs = (0..space.len())
        .map(|k| model.generator(space.x(k)))
        .collect::<Result<Vec<_>>>()?;
    let rate = qs.iter().map(GeneratorMatrix::max_exit_rate).fold(0.0, f64::max);
    if max_dt * rate >= 1.0 {
        return Err(Error::Config(format!(
            "time step {max_dt} too large for jump rates up to {rate}: need Δt·max|q_ii| < 1"
        )));
    }
    Ok(qs)
}

/// Pointwise Hamiltonian minimizers `ψ(anchor; s, x_k, i, v, v_x, v_xx)` for a
/// regime-major level `v`; `candidates` feeds the grid search when the model
/// has no analytic minimizer.
#[allow(clippy::too_many_arguments)]
pub fn minimizing_controls<M: Model + ?Sized>(
    model: &M,
    candidates: &[Control],
    anchor: f64,
    s: f64,
    space: &SpatialGrid,
    qs: &[GeneratorMatrix],
    v: &[f64],
    diag: &mut Diagnostics,
) -> Vec<Control> {
    let m = model.regime_count();
    let nx = space.len();
    let dx = space.dx();
    let mut out = vec![Control::default(); m * nx];
    let mut vk = vec![0.0; m];
    for k in 0..nx {
        for (j, slot) in vk.iter_mut().enumerate() {
            *slot = v[j * nx + k];
        }
        for i in 0..m {
            let row = &v[i * nx..(i + 1) * nx];
            let p = d1(row, k, dx);
            let pp = crate::field::d2(row, k, dx);
            let jump = qs[k].apply_row(i, &vk);
            let r = minimize_hamiltonian(model, candidates, anchor, s, space.x(k), i, &vk, jump, p, pp);
            diag.psi_clamps += r.clamped as usize;
            diag.truncation_hits += r.truncated as usize;
            out[i * nx + k] = r.control;
        }
    }
    out
}

/// Shared state of one backward solve.
struct Stepper<'a, M: Model + ?Sized> {
    model: &'a M,
    anchor: f64,
    space: &'a SpatialGrid,
    xs: Vec<f64>,
    qs: &'a [GeneratorMatrix],
    rule: ControlRule<'a>,
    candidates: Vec<Control>,
    m: usize,
}

/// Per-level quantities entering the scheme.
struct Level {
    /// ½σ²
    diff: Vec<f64>,
    drift: Vec<f64>,
    /// explicit part: coupling plus running cost
    explicit: Vec<f64>,
}

impl<M: Model + ?Sized> Stepper<'_, M> {
    fn nx(&self) -> usize {
        self.space.len()
    }

    /// Controls at time `s` given the values `v` used for minimization.
    fn controls(&self, s: f64, v: &[f64], diag: &mut Diagnostics) -> Result<Vec<Control>> {
        let (m, nx) = (self.m, self.nx());
        let mut out = vec![Control::default(); m * nx];
        match self.rule {
            ControlRule::Fixed(c) => out.iter_mut().for_each(|u| *u = c),
            ControlRule::Feedback(f) => {
                for i in 0..m {
                    for k in 0..nx {
                        out[i * nx + k] = f.control(s, self.xs[k], i)?;
                    }
                }
            }
            ControlRule::Minimize => {
                out = minimizing_controls(self.model, &self.candidates, self.anchor, s, self.space, self.qs, v, diag);
            }
        }
        Ok(out)
    }

    fn level(&self, s: f64, v: &[f64], controls: &[Control]) -> Level {
        let (m, nx) = (self.m, self.nx());
        let dx = self.space.dx();
        let mut diff = vec![0.0; m * nx];
        let mut drift = vec![0.0; m * nx];
        let mut explicit = vec![0.0; m * nx];
        let mut vk = vec![0.0; m];
        for k in 0..nx {
            for (j, slot) in vk.iter_mut().enumerate() {
                *slot = v[j * nx + k];
            }
            let x = self.xs[k];
            for i in 0..m {
                let idx = i * nx + k;
                let u = controls[idx];
                let sig = self.model.volatility(s, x, i, u);
                diff[idx] = 0.5 * sig * sig;
                drift[idx] = self.model.drift(s, x, i, u);
                let jump = self.qs[k].apply_row(i, &vk);
                let z = d1(&v[i * nx..(i + 1) * nx], k, dx) * sig;
                let args = RecursiveArgs { y: vk[i], z, jump };
                explicit[idx] = jump + self.model.running_cost(self.anchor, s, x, i, args, u);
            }
        }
        Level {
            diff,
            drift,
            explicit,
        }
    }

    /// Solves `(I - ½Δt D^new) V = (I + ½Δt D^old) V_old + Δt·E` per regime.
    fn implicit_solve(&self, dt: f64, old_v: &[f64], old: &Level, new: &Level, e: &[f64], out: &mut [f64]) -> Result<()> {
        let nx = self.nx();
        let dx = self.space.dx();
        let (h2, h1) = (dx * dx, 2.0 * dx);
        let mut lo = vec![0.0; nx];
        let mut di = vec![0.0; nx];
        let mut up = vec![0.0; nx];
        let mut rhs = vec![0.0; nx];
        for i in 0..self.m {
            let base = i * nx;
            let vo = &old_v[base..base + nx];
            for k in 1..nx - 1 {
                let (ao, bo) = (old.diff[base + k], old.drift[base + k]);
                let dv = ao * (vo[k - 1] - 2.0 * vo[k] + vo[k + 1]) / h2 + bo * (vo[k + 1] - vo[k - 1]) / h1;
                rhs[k] = vo[k] + 0.5 * dt * dv + dt * e[base + k];
                let (an, bn) = (new.diff[base + k], new.drift[base + k]);
                lo[k] = -0.5 * dt * (an / h2 - bn / h1);
                di[k] = 1.0 + dt * an / h2;
                up[k] = -0.5 * dt * (an / h2 + bn / h1);
            }
            // edge conditions α0 V_e + α1 V_{e±1} + α2 V_{e±2} = 0 eliminate the
            // edge node from the adjacent interior row
            let n = nx - 1;
            let (a0, a1, a2) = edge_coefficients(self.space.lower, self.xs[0], dx, false);
            di[1] -= lo[1] * a1 / a0;
            up[1] -= lo[1] * a2 / a0;
            let (b0, b1, b2) = edge_coefficients(self.space.upper, self.xs[n], dx, true);
            di[n - 1] -= up[n - 1] * b1 / b0;
            lo[n - 1] -= up[n - 1] * b2 / b0;
            lo[1] = 0.0;
            up[n - 1] = 0.0;
            thomas(&lo[1..n], &di[1..n], &up[1..n], &mut rhs[1..n])?;
            rhs[0] = -(a1 * rhs[1] + a2 * rhs[2]) / a0;
            rhs[n] = -(b1 * rhs[n - 1] + b2 * rhs[n - 2]) / b0;
            out[base..base + nx].copy_from_slice(&rhs);
        }
        Ok(())
    }
}

/// Coefficients `(α0, α1, α2)` of the edge condition on the edge node and
/// its two inward neighbours.
fn edge_coefficients(b: Boundary, x: f64, dx: f64, upper: bool) -> (f64, f64, f64) {
    match b {
        Boundary::LinearExtrapolation => (1.0, -2.0, 1.0),
        Boundary::Homogeneous(deg) => {
            let c = x / (2.0 * dx);
            if upper {
                (3.0 * c - deg, -4.0 * c, c)
            } else {
                (-3.0 * c - deg, 4.0 * c, -c)
            }
        }
    }
}

/// Tridiagonal solve in place; `lo[0]` and `up[n-1]` are ignored.
pub fn thomas(lo: &[f64], di: &[f64], up: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = di.len();
    let mut c = vec![0.0; n];
    let mut beta = di[0];
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::numeric("tridiagonal solve", format!("zero pivot at row 0 ({beta})")));
    }
    rhs[0] /= beta;
    for k in 1..n {
        c[k - 1] = up[k - 1] / beta;
        beta = di[k] - lo[k] * c[k - 1];
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::numeric("tridiagonal solve", format!("zero pivot at row {k} ({beta})")));
        }
        rhs[k] = (rhs[k] - lo[k] * rhs[k - 1]) / beta;
    }
    for k in (0..n - 1).rev() {
        rhs[k] -= c[k] * rhs[k + 1];
    }
    Ok(())
}

/// Backward solve on `time` with anchor `anchor` in the cost. `terminal`
/// overrides `h(anchor, ·, ·)` (regime-major, `m · n_x` values).
#[allow(clippy::too_many_arguments)]
pub fn solve<M: Model + ?Sized>(
    model: &M,
    anchor: f64,
    time: &TimeGrid,
    space: &SpatialGrid,
    terminal: Option<&[f64]>,
    rule: ControlRule<'_>,
    opts: SolverOptions,
) -> Result<Solution> {
    let m = model.regime_count();
    let nx = space.len();
    model.control_set().validate()?;
    if nx < 5 {
        return Err(Error::Config(format!("backward solve needs at least 5 spatial nodes, got {nx}")));
    }
    for (b, x, upper) in [(space.lower, space.x_min(), false), (space.upper, space.x_max(), true)] {
        if edge_coefficients(b, x, space.dx(), upper).0 == 0.0 {
            return Err(Error::Config(format!("degenerate boundary condition {b:?} at x={x}")));
        }
    }
    let qs = node_generators(model, space, time.max_dt())?;
    let candidates = match rule {
        ControlRule::Minimize => model.control_set().candidates(),
        _ => Vec::new(),
    };
    let st = Stepper {
        model,
        anchor,
        space,
        xs: space.xs(),
        qs: &qs,
        rule,
        candidates,
        m,
    };
    let mut value = ValueField::zeros(time.clone(), space.clone(), m);
    let mut strategy = StrategyField::new(time.clone(), space.clone(), m, model.control_set().clone());
    let mut diag = Diagnostics::default();
    let last = time.steps();

    match terminal {
        Some(t) => {
            if t.len() != m * nx {
                return Err(Error::Config(format!("terminal data has {} values, expected {}", t.len(), m * nx)));
            }
            value.level_mut(last).copy_from_slice(t);
        }
        None => {
            for i in 0..m {
                for k in 0..nx {
                    value.set(last, k, i, model.terminal_cost(anchor, space.x(k), i));
                }
            }
        }
    }
    check_finite(value.level(last), last, time.t(last))?;

    let v_end = value.level(last).to_vec();
    let c_end = st.controls(time.t(last), &v_end, &mut diag)?;
    strategy.level_mut(last).copy_from_slice(&c_end);
    let mut old = st.level(time.t(last), &v_end, &c_end);
    let mut scratch = vec![0.0; m * nx];
    let mut throwaway = Diagnostics::default();

    for n in (0..last).rev() {
        let s = time.t(n);
        let dt = time.dt(n);
        let old_v = value.level(n + 1).to_vec();
        // predictor: controls from the old level, explicit terms frozen there
        let c_pred = st.controls(s, &old_v, &mut throwaway)?;
        let pred = st.level(s, &old_v, &c_pred);
        st.implicit_solve(dt, &old_v, &old, &pred, &old.explicit, &mut scratch)?;
        let mut next = vec![0.0; m * nx];
        for pass in 0..opts.max_corrector_passes.max(opts.corrector_passes) {
            let c = st.controls(s, &scratch, &mut throwaway)?;
            let lvl = st.level(s, &scratch, &c);
            let e: Vec<f64> = old.explicit.iter().zip(&lvl.explicit).map(|(a, b)| 0.5 * (a + b)).collect();
            st.implicit_solve(dt, &old_v, &old, &lvl, &e, &mut next)?;
            let scale = next.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            let change = next.iter().zip(&scratch).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            std::mem::swap(&mut scratch, &mut next);
            if pass + 1 >= opts.corrector_passes {
                if change <= opts.corrector_tol * scale || !change.is_finite() {
                    break;
                }
                if pass + 1 == opts.max_corrector_passes.max(opts.corrector_passes) {
                    diag.corrector_stalls += 1;
                }
            }
        }
        check_finite(&scratch, n, s)?;
        value.level_mut(n).copy_from_slice(&scratch);
        let c = st.controls(s, &scratch, &mut diag)?;
        strategy.level_mut(n).copy_from_slice(&c);
        old = st.level(s, &scratch, &c);
        diag.steps += 1;
    }
    Ok(Solution {
        value,
        strategy,
        diagnostics: diag,
    })
}

/// Largest interior residual of the Crank–Nicolson equations satisfied by
/// `value` under `policy`, with the explicit terms averaged over both levels:
///
/// ```text
/// (V^{n+1} − V^n)/Δt + ½(L^n V^n + L^{n+1} V^{n+1}) + ½(E^n + E^{n+1})
/// ```
pub fn scheme_residual<M: Model + ?Sized>(model: &M, anchor: f64, value: &ValueField, policy: &dyn Feedback) -> Result<f64> {
    let time = value.time();
    let space = value.space();
    let (m, nx) = (model.regime_count(), space.len());
    let qs = node_generators(model, space, time.max_dt())?;
    let st = Stepper {
        model,
        anchor,
        space,
        xs: space.xs(),
        qs: &qs,
        rule: ControlRule::Feedback(policy),
        candidates: Vec::new(),
        m,
    };
    let dx = space.dx();
    let (h2, h1) = (dx * dx, 2.0 * dx);
    let mut noop = Diagnostics::default();
    let level_at = |n: usize, noop: &mut Diagnostics| -> Result<Level> {
        let c = st.controls(time.t(n), value.level(n), noop)?;
        Ok(st.level(time.t(n), value.level(n), &c))
    };
    let mut worst = 0.0f64;
    let last = time.steps();
    if last == 0 {
        return Ok(0.0);
    }
    let mut upper = level_at(last, &mut noop)?;
    for n in (0..last).rev() {
        let lower = level_at(n, &mut noop)?;
        let dt = time.dt(n);
        let (vn, vo) = (value.level(n), value.level(n + 1));
        for i in 0..m {
            for k in space.interior() {
                if k == 0 || k + 1 >= nx {
                    continue;
                }
                let j = i * nx + k;
                let op = |lvl: &Level, v: &[f64]| {
                    lvl.diff[j] * (v[j - 1] - 2.0 * v[j] + v[j + 1]) / h2 + lvl.drift[j] * (v[j + 1] - v[j - 1]) / h1
                };
                let r = (vo[j] - vn[j]) / dt
                    + 0.5 * (op(&lower, vn) + op(&upper, vo))
                    + 0.5 * (lower.explicit[j] + upper.explicit[j]);
                worst = worst.max(r.abs());
            }
        }
        upper = lower;
    }
    Ok(worst)
}

fn check_finite(v: &[f64], n: usize, s: f64) -> Result<()> {
    if let Some(p) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::numeric(
            "backward solve",
            format!("non-finite value at time node {n} (s={s}), entry {p}"),
        ));
    }
    Ok(())
}

/// Linear representation PDE under a fixed control or feedback policy.
pub fn solve_linear_parabolic<M: Model + ?Sized>(
    model: &M,
    anchor: f64,
    time: &TimeGrid,
    space: &SpatialGrid,
    terminal: Option<&[f64]>,
    rule: ControlRule<'_>,
) -> Result<ValueField> {
    if let ControlRule::Minimize = rule {
        return Err(Error::Config("linear solve needs a fixed control or a feedback policy".into()));
    }
    Ok(solve(model, anchor, time, space, terminal, rule, SolverOptions::default())?.value)
}

/// HJB solve with pointwise Hamiltonian minimization.
pub fn solve_hjb<M: Model + ?Sized>(
    model: &M,
    anchor: f64,
    time: &TimeGrid,
    space: &SpatialGrid,
    terminal: Option<&[f64]>,
) -> Result<Solution> {
    let sol = solve(model, anchor, time, space, terminal, ControlRule::Minimize, SolverOptions::default())?;
    if sol.diagnostics.truncation_hits > 0 {
        log::warn!(
            "Hamiltonian minimum on a truncated control edge at {} nodes",
            sol.diagnostics.truncation_hits
        );
    }
    Ok(sol)
}

/// `𝒜^u V = ½σ²V_xx + b V_x + [Q(x)V]_i` at an interior node with central
/// differences.
pub fn apply_generator<D: Dynamics + ?Sized>(
    field: &ValueField,
    n: usize,
    k: usize,
    i: usize,
    u: Control,
    dynamics: &D,
    q: &GeneratorMatrix,
) -> Result<f64> {
    let nx = field.space().len();
    if k == 0 || k + 1 >= nx {
        return Err(Error::Domain(format!("generator needs an interior node, got k={k} of {nx}")));
    }
    let s = field.time().t(n);
    let x = field.space().x(k);
    let sig = dynamics.volatility(s, x, i, u);
    let b = dynamics.drift(s, x, i, u);
    let v = field.regime_vector(n, k);
    Ok(0.5 * sig * sig * field.dxx(n, k, i) + b * field.dx(n, k, i) + q.apply_row(i, &v))
}

/// Gaussian-convolution solution of `V_s + a_i V_xx = 0`, `V(T) = h(anchor, ·, i)`
/// for models with constant diffusion, no drift, no coupling and no running
/// cost under the control `u`.
pub fn kernel_oracle<M: Model + ?Sized>(
    model: &M,
    anchor: f64,
    u: Control,
    time: &TimeGrid,
    space: &SpatialGrid,
) -> Result<ValueField> {
    let m = model.regime_count();
    let mut a = vec![0.0; m];
    let unsupported = |what: &str| Error::Config(format!("kernel oracle needs {what}"));
    for (i, ai) in a.iter_mut().enumerate() {
        let sig0 = model.volatility(time.t(0), space.x(0), i, u);
        *ai = 0.5 * sig0 * sig0;
        for n in [0, time.steps() / 2, time.steps()] {
            for k in (0..space.len()).step_by((space.len() / 16).max(1)) {
                let (s, x) = (time.t(n), space.x(k));
                if model.volatility(s, x, i, u) != sig0 {
                    return Err(unsupported("constant diffusion per regime"));
                }
                if model.drift(s, x, i, u) != 0.0 {
                    return Err(unsupported("zero drift"));
                }
                if model.running_cost(anchor, s, x, i, RecursiveArgs::default(), u) != 0.0 {
                    return Err(unsupported("zero running cost"));
                }
                if model.generator(x)?.rows().iter().flatten().any(|&q| q != 0.0) {
                    return Err(unsupported("zero regime coupling"));
                }
            }
        }
    }
    let mut out = ValueField::zeros(time.clone(), space.clone(), m);
    let horizon = time.end();
    for n in 0..time.len() {
        for (i, &ai) in a.iter().enumerate() {
            let var = 2.0 * ai * (horizon - time.t(n));
            for k in 0..space.len() {
                let x = space.x(k);
                let v = if var <= 0.0 {
                    model.terminal_cost(anchor, x, i)
                } else {
                    let sd = var.sqrt();
                    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
                    adaptive_simpson(
                        |z| model.terminal_cost(anchor, x + sd * z, i) * norm * (-0.5 * z * z).exp(),
                        -12.0,
                        12.0,
                        1e-11,
                    )?
                };
                out.set(n, k, i, v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControlSet, PdeProblem};

    fn grids(nx: usize, nt: usize) -> (TimeGrid, SpatialGrid) {
        (TimeGrid::uniform(1.0, nt).unwrap(), SpatialGrid::new(-4.0, 4.0, nx).unwrap())
    }

    #[test]
    fn thomas_solves_small_system() {
        // [[2,1,0],[1,3,1],[0,1,2]] x = [3,5,3] -> x = [1,1,1]
        let mut r = vec![3.0, 5.0, 3.0];
        thomas(&[0.0, 1.0, 1.0], &[2.0, 3.0, 2.0], &[1.0, 1.0, 0.0], &mut r).unwrap();
        for v in r {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn constants_are_preserved() {
        let (t, x) = grids(41, 20);
        let model = PdeProblem::inert(2)
            .with_volatility(|_, _, _, _| (0.02f64).sqrt())
            .with_terminal(|_, _, _| 3.5);
        let v = solve_linear_parabolic(&model, 0.0, &t, &x, None, ControlRule::Fixed(Control::default())).unwrap();
        assert!(v.data().iter().all(|&y| (y - 3.5).abs() < 1e-13));
    }

    #[test]
    fn matches_matrix_exponential_for_pure_coupling() {
        use nalgebra::Matrix2;
        let q = GeneratorMatrix::from_rows(&[vec![0.0, 0.7], vec![0.3, 0.0]]).unwrap();
        let (t, x) = grids(21, 1000);
        let model = PdeProblem::inert(2)
            .with_volatility(|_, _, _, _| (2e-6f64).sqrt())
            .with_generator(q.clone())
            .with_terminal(|_, _, i| [1.0, 4.0][i]);
        let v = solve_linear_parabolic(&model, 0.0, &t, &x, None, ControlRule::Fixed(Control::default())).unwrap();
        let qm = Matrix2::new(q.get(0, 0), q.get(0, 1), q.get(1, 0), q.get(1, 1));
        let h = nalgebra::Vector2::new(1.0, 4.0);
        for n in [0, 250, 750] {
            let exact = (qm * (1.0 - t.t(n))).exp() * h;
            for i in 0..2 {
                assert!((v.get(n, 10, i) - exact[i]).abs() < 1e-6, "n={n} i={i} err={}", v.get(n, 10, i) - exact[i]);
            }
        }
    }

    #[test]
    fn singleton_hjb_equals_linear_solve() {
        let (t, x) = grids(41, 40);
        let u0 = Control::scalar(0.3);
        let model = PdeProblem::inert(2)
            .with_drift(|_, x, _, u| u.u() - 0.1 * x)
            .with_volatility(|_, _, i, _| 0.3 + 0.1 * i as f64)
            .with_running(|_, _, x, _, _, u| x * x + u.u())
            .with_generator(GeneratorMatrix::from_rows(&[vec![0.0, 0.5], vec![0.2, 0.0]]).unwrap())
            .with_terminal(|_, x, _| (-x * x).exp())
            .with_controls(ControlSet::singleton(u0));
        let lin = solve_linear_parabolic(&model, 0.0, &t, &x, None, ControlRule::Fixed(u0)).unwrap();
        let hjb = solve_hjb(&model, 0.0, &t, &x, None).unwrap();
        assert_eq!(lin.data(), hjb.value.data());
    }

    #[test]
    fn hjb_comparison_in_terminal_data() {
        let (t, x) = grids(41, 40);
        let mk = |shift: f64| {
            PdeProblem::inert(1)
                .with_drift(|_, _, _, u| u.u())
                .with_volatility(|_, _, _, _| 0.5)
                .with_running(|_, _, _, _, _, u| 0.5 * u.u() * u.u())
                .with_terminal(move |_, x, _| (x * x).min(4.0) + shift)
                .with_controls(ControlSet::interval(-2.0, 2.0))
        };
        let v1 = solve_hjb(&mk(0.0), 0.0, &t, &x, None).unwrap().value;
        let v2 = solve_hjb(&mk(0.1), 0.0, &t, &x, None).unwrap().value;
        for (a, b) in v1.data().iter().zip(v2.data()) {
            assert!(a <= b);
        }
    }

    #[test]
    fn stability_bound_is_enforced() {
        let (t, x) = grids(11, 2);
        let q = GeneratorMatrix::from_rows(&[vec![0.0, 3.0], vec![3.0, 0.0]]).unwrap();
        let model = PdeProblem::inert(2).with_generator(q);
        let err = solve_linear_parabolic(&model, 0.0, &t, &x, None, ControlRule::Fixed(Control::default())).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn generator_examples() {
        let (t, x) = grids(17, 2);
        let q = GeneratorMatrix::from_rows(&[vec![0.0, 0.5], vec![0.2, 0.0]]).unwrap();
        let lin = ValueField::from_fn(t.clone(), x.clone(), 2, |_, x, _| x);
        let dynb = PdeProblem::inert(2).with_drift(|_, _, _, _| 2.0).with_volatility(|_, _, _, _| 0.7);
        assert!((apply_generator(&lin, 0, 5, 1, Control::default(), &dynb, &q).unwrap() - 2.0).abs() < 1e-12);

        let sq = ValueField::from_fn(t.clone(), x.clone(), 2, |_, x, _| x * x);
        let dyns = PdeProblem::inert(2).with_volatility(|_, _, _, _| 1.0);
        for k in 1..16 {
            assert!((apply_generator(&sq, 0, k, 0, Control::default(), &dyns, &q).unwrap() - 1.0).abs() < 1e-12);
        }

        let cst = ValueField::from_fn(t, x, 2, |_, _, i| [1.0, 3.0][i]);
        let zero = PdeProblem::inert(2);
        let g = apply_generator(&cst, 0, 3, 0, Control::default(), &zero, &q).unwrap();
        assert!((g - 0.5 * (3.0 - 1.0)).abs() < 1e-14);
        assert!(apply_generator(&cst, 0, 0, 0, Control::default(), &zero, &q).is_err());
    }

    #[test]
    fn kernel_oracle_gaussian_closed_form() {
        let (t, x) = grids(81, 10);
        let model = PdeProblem::inert(1)
            .with_volatility(|_, _, _, _| 1.0)
            .with_terminal(|_, x, _| (-0.5 * x * x).exp());
        let v = kernel_oracle(&model, 0.0, Control::default(), &t, &x).unwrap();
        for n in 0..t.len() {
            let var = 1.0 - t.t(n);
            for k in 0..81 {
                let xx = x.x(k);
                let exact = (-0.5 * xx * xx / (1.0 + var)).exp() / (1.0 + var).sqrt();
                assert!((v.get(n, k, 0) - exact).abs() < 1e-6);
            }
        }
        // delta limit at the last node and symmetry about 0
        for k in 0..81 {
            assert_eq!(v.get(10, k, 0), (-0.5 * x.x(k) * x.x(k)).exp());
            assert!((v.get(3, k, 0) - v.get(3, 80 - k, 0)).abs() < 1e-12);
        }
        let drifted = PdeProblem::inert(1).with_drift(|_, _, _, _| 1.0);
        assert!(kernel_oracle(&drifted, 0.0, Control::default(), &t, &x).is_err());
    }
}
