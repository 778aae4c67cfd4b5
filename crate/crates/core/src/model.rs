//! Controlled dynamics, recursive costs and feedback policies.
//!
//! Every solver in the crate minimizes. Maximization problems negate their
//! costs before reaching this interface.

use crate::error::{Error, Result};
use crate::switching::GeneratorMatrix;

/// A control value with up to two components. Scalar controls use slot 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Control(pub [f64; 2]);

impl Control {
    pub fn scalar(u: f64) -> Self {
        Control([u, 0.0])
    }

    pub fn pair(u: f64, c: f64) -> Self {
        Control([u, c])
    }

    pub fn u(&self) -> f64 {
        self.0[0]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Largest componentwise distance.
    pub fn distance(&self, other: &Control) -> f64 {
        (self.0[0] - other.0[0]).abs().max((self.0[1] - other.0[1]).abs())
    }
}

/// Number of candidate points per active dimension in grid-search minimization.
pub const SEARCH_POINTS: usize = 257;

/// Admissible control set `U`.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet {
    /// Product of intervals. Bounds may be infinite; `search` gives the finite
    /// window scanned when no analytic minimizer exists.
    Box {
        dim: usize,
        lower: [f64; 2],
        upper: [f64; 2],
        search: [(f64, f64); 2],
    },
    Finite(Vec<Control>),
}

impl ControlSet {
    /// Scalar closed interval `[lo, hi]`.
    pub fn interval(lo: f64, hi: f64) -> Self {
        ControlSet::Box {
            dim: 1,
            lower: [lo, 0.0],
            upper: [hi, 0.0],
            search: [(lo, hi), (0.0, 0.0)],
        }
    }

    pub fn singleton(u: Control) -> Self {
        ControlSet::Finite(vec![u])
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Box { dim, .. } => *dim,
            ControlSet::Finite(_) => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControlSet::Box {
                dim,
                lower,
                upper,
                search,
            } => {
                if *dim == 0 || *dim > 2 {
                    return Err(Error::Config(format!("control dimension {dim} not in 1..=2")));
                }
                for d in 0..*dim {
                    if !(lower[d] <= upper[d]) {
                        return Err(Error::Config(format!(
                            "empty control interval [{}, {}] in component {d}",
                            lower[d], upper[d]
                        )));
                    }
                    let (a, b) = search[d];
                    if !(a.is_finite() && b.is_finite() && a <= b) {
                        return Err(Error::Config(format!(
                            "control search window [{a}, {b}] in component {d} must be finite"
                        )));
                    }
                }
                Ok(())
            }
            ControlSet::Finite(v) if v.is_empty() => Err(Error::Config("empty finite control set".into())),
            ControlSet::Finite(_) => Ok(()),
        }
    }

    /// Projects onto `U` (nearest point for finite sets, by max-norm).
    pub fn clamp(&self, c: Control) -> Control {
        match self {
            ControlSet::Box {
                dim, lower, upper, ..
            } => {
                let mut out = c;
                for d in 0..*dim {
                    out.0[d] = c.0[d].clamp(lower[d], upper[d]);
                }
                for v in out.0.iter_mut().skip(*dim) {
                    *v = 0.0;
                }
                out
            }
            ControlSet::Finite(v) => {
                let mut best = v[0];
                for u in &v[1..] {
                    if u.distance(&c) < best.distance(&c) {
                        best = *u;
                    }
                }
                best
            }
        }
    }

    /// Candidate grid scanned by the search minimizer, in lexicographic
    /// increasing order so the first minimum is the smallest control.
    pub fn candidates(&self) -> Vec<Control> {
        match self {
            ControlSet::Finite(v) => {
                let mut v = v.clone();
                v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
                v
            }
            ControlSet::Box {
                dim,
                lower,
                upper,
                search,
            } => {
                let axis = |d: usize| -> Vec<f64> {
                    let lo = search[d].0.max(lower[d]);
                    let hi = search[d].1.min(upper[d]);
                    if lo == hi {
                        return vec![lo];
                    }
                    (0..SEARCH_POINTS)
                        .map(|k| lo + (hi - lo) * k as f64 / (SEARCH_POINTS - 1) as f64)
                        .collect()
                };
                let a = axis(0);
                if *dim == 1 {
                    return a.into_iter().map(Control::scalar).collect();
                }
                let b = axis(1);
                a.iter()
                    .flat_map(|&u| b.iter().map(move |&c| Control::pair(u, c)))
                    .collect()
            }
        }
    }

    /// Whether a search candidate sits on a window edge that truncates an
    /// unbounded (or wider) admissible interval.
    pub fn on_truncated_edge(&self, c: &Control) -> bool {
        match self {
            ControlSet::Finite(_) => false,
            ControlSet::Box {
                dim,
                lower,
                upper,
                search,
            } => (0..*dim).any(|d| {
                (c.0[d] == search[d].0 && search[d].0 > lower[d])
                    || (c.0[d] == search[d].1 && search[d].1 < upper[d])
            }),
        }
    }
}

/// Arguments of the running cost that come from the cost process itself:
/// value `y`, diffusion component `z = V_x σ`, and jump term `[Q V]_i`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RecursiveArgs {
    pub y: f64,
    pub z: f64,
    pub jump: f64,
}

/// A control picked by an analytic minimizer, with a flag raised when a
/// derivative input had to be moved away from a singularity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub control: Control,
    pub clamped: bool,
}

/// Drift and diffusion of the scalar state equation.
pub trait Dynamics: Sync {
    fn drift(&self, s: f64, x: f64, i: usize, u: Control) -> f64;
    fn volatility(&self, s: f64, x: f64, i: usize, u: Control) -> f64;
}

/// A controlled regime-switching problem with an anchor-dependent recursive
/// cost `g(τ, s, x, i, y, z, γ, u)` and terminal cost `h(τ, x, i)`.
pub trait Model: Dynamics {
    fn regime_count(&self) -> usize;
    /// Jump-rate matrix `Q(x)`.
    fn generator(&self, x: f64) -> Result<GeneratorMatrix>;
    fn running_cost(&self, anchor: f64, s: f64, x: f64, i: usize, args: RecursiveArgs, u: Control) -> f64;
    fn terminal_cost(&self, anchor: f64, x: f64, i: usize) -> f64;
    fn control_set(&self) -> &ControlSet;

    /// Analytic Hamiltonian minimizer given the regime vector `v`, gradient
    /// `p = V_x` and curvature `pp = V_xx` of regime `i`. `None` falls back
    /// to grid search.
    #[allow(clippy::too_many_arguments)]
    fn minimizer(&self, _anchor: f64, _s: f64, _x: f64, _i: usize, _v: &[f64], _p: f64, _pp: f64) -> Option<Choice> {
        None
    }

    /// Hamiltonian `p·b + ½σ²·pp + [Qv]_i + g`, with `jump = [Qv]_i` precomputed.
    #[allow(clippy::too_many_arguments)]
    fn hamiltonian(&self, anchor: f64, s: f64, x: f64, i: usize, v: &[f64], jump: f64, p: f64, pp: f64, u: Control) -> f64 {
        let b = self.drift(s, x, i, u);
        let sig = self.volatility(s, x, i, u);
        let args = RecursiveArgs {
            y: v[i],
            z: p * sig,
            jump,
        };
        p * b + 0.5 * sig * sig * pp + jump + self.running_cost(anchor, s, x, i, args, u)
    }
}

/// Closed-loop policy `Ψ(s, x, i)`.
pub trait Feedback: Sync {
    fn control(&self, s: f64, x: f64, i: usize) -> Result<Control>;
}

/// Feedback backed by a closure.
pub struct FnFeedback<F>(pub F);

impl<F> Feedback for FnFeedback<F>
where
    F: Fn(f64, f64, usize) -> Control + Sync,
{
    fn control(&self, s: f64, x: f64, i: usize) -> Result<Control> {
        Ok((self.0)(s, x, i))
    }
}

/// Constant feedback.
#[derive(Debug, Clone, Copy)]
pub struct ConstantFeedback(pub Control);

impl Feedback for ConstantFeedback {
    fn control(&self, _s: f64, _x: f64, _i: usize) -> Result<Control> {
        Ok(self.0)
    }
}

/// Uses `first` before `switch_time` and `rest` from it on.
pub struct Spliced<'a> {
    pub first: &'a dyn Feedback,
    pub switch_time: f64,
    pub rest: &'a dyn Feedback,
}

impl Feedback for Spliced<'_> {
    fn control(&self, s: f64, x: f64, i: usize) -> Result<Control> {
        if s < self.switch_time {
            self.first.control(s, x, i)
        } else {
            self.rest.control(s, x, i)
        }
    }
}

type CoefFn = Box<dyn Fn(f64, f64, usize, Control) -> f64 + Send + Sync>;
type RunningFn = Box<dyn Fn(f64, f64, f64, usize, RecursiveArgs, Control) -> f64 + Send + Sync>;
type TerminalFn = Box<dyn Fn(f64, f64, usize) -> f64 + Send + Sync>;
type GeneratorFn = Box<dyn Fn(f64) -> Result<GeneratorMatrix> + Send + Sync>;
type MinimizerFn = Box<dyn Fn(f64, f64, f64, usize, &[f64], f64, f64) -> Option<Choice> + Send + Sync>;

/// Closure-backed [`Model`], convenient for presets and tests.
pub struct PdeProblem {
    pub regimes: usize,
    pub drift: CoefFn,
    pub volatility: CoefFn,
    pub running: RunningFn,
    pub terminal: TerminalFn,
    pub generator: GeneratorFn,
    pub controls: ControlSet,
    pub minimizer: Option<MinimizerFn>,
}

impl PdeProblem {
    /// Zero drift, zero volatility, zero cost, no switching, controls `{0}`.
    pub fn inert(regimes: usize) -> Self {
        PdeProblem {
            regimes,
            drift: Box::new(|_, _, _, _| 0.0),
            volatility: Box::new(|_, _, _, _| 0.0),
            running: Box::new(|_, _, _, _, _, _| 0.0),
            terminal: Box::new(|_, _, _| 0.0),
            generator: Box::new(move |_| Ok(GeneratorMatrix::zeros(regimes))),
            controls: ControlSet::singleton(Control::default()),
            minimizer: None,
        }
    }

    pub fn with_drift(mut self, f: impl Fn(f64, f64, usize, Control) -> f64 + Send + Sync + 'static) -> Self {
        self.drift = Box::new(f);
        self
    }

    pub fn with_volatility(mut self, f: impl Fn(f64, f64, usize, Control) -> f64 + Send + Sync + 'static) -> Self {
        self.volatility = Box::new(f);
        self
    }

    pub fn with_running(
        mut self,
        f: impl Fn(f64, f64, f64, usize, RecursiveArgs, Control) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.running = Box::new(f);
        self
    }

    pub fn with_terminal(mut self, f: impl Fn(f64, f64, usize) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal = Box::new(f);
        self
    }

    pub fn with_generator(mut self, q: GeneratorMatrix) -> Self {
        self.generator = Box::new(move |_| Ok(q.clone()));
        self
    }

    pub fn with_generator_fn(mut self, f: impl Fn(f64) -> Result<GeneratorMatrix> + Send + Sync + 'static) -> Self {
        self.generator = Box::new(f);
        self
    }

    pub fn with_controls(mut self, u: ControlSet) -> Self {
        self.controls = u;
        self
    }

    pub fn with_minimizer(
        mut self,
        f: impl Fn(f64, f64, f64, usize, &[f64], f64, f64) -> Option<Choice> + Send + Sync + 'static,
    ) -> Self {
        self.minimizer = Some(Box::new(f));
        self
    }
}

impl Dynamics for PdeProblem {
    fn drift(&self, s: f64, x: f64, i: usize, u: Control) -> f64 {
        (self.drift)(s, x, i, u)
    }

    fn volatility(&self, s: f64, x: f64, i: usize, u: Control) -> f64 {
        (self.volatility)(s, x, i, u)
    }
}

impl Model for PdeProblem {
    fn regime_count(&self) -> usize {
        self.regimes
    }

    fn generator(&self, x: f64) -> Result<GeneratorMatrix> {
        (self.generator)(x)
    }

    fn running_cost(&self, anchor: f64, s: f64, x: f64, i: usize, args: RecursiveArgs, u: Control) -> f64 {
        (self.running)(anchor, s, x, i, args, u)
    }

    fn terminal_cost(&self, anchor: f64, x: f64, i: usize) -> f64 {
        (self.terminal)(anchor, x, i)
    }

    fn control_set(&self) -> &ControlSet {
        &self.controls
    }

    fn minimizer(&self, anchor: f64, s: f64, x: f64, i: usize, v: &[f64], p: f64, pp: f64) -> Option<Choice> {
        self.minimizer.as_ref().and_then(|f| f(anchor, s, x, i, v, p, pp))
    }
}

/// Result of a pointwise Hamiltonian minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimized {
    pub control: Control,
    /// analytic minimizer moved a derivative input away from a singularity
    pub clamped: bool,
    /// grid-search argmin sat on a truncated window edge
    pub truncated: bool,
}

/// `ψ(anchor; s, x, i, v, p, pp)`: analytic minimizer when available,
/// otherwise the first minimum over [`ControlSet::candidates`].
#[allow(clippy::too_many_arguments)]
pub fn minimize_hamiltonian<M: Model + ?Sized>(
    model: &M,
    candidates: &[Control],
    anchor: f64,
    s: f64,
    x: f64,
    i: usize,
    v: &[f64],
    jump: f64,
    p: f64,
    pp: f64,
) -> Minimized {
    let set = model.control_set();
    if let Some(choice) = model.minimizer(anchor, s, x, i, v, p, pp) {
        return Minimized {
            control: set.clamp(choice.control),
            clamped: choice.clamped,
            truncated: false,
        };
    }
    let mut best = candidates[0];
    let mut best_h = f64::INFINITY;
    for &u in candidates {
        let h = model.hamiltonian(anchor, s, x, i, v, jump, p, pp, u);
        if h < best_h {
            best_h = h;
            best = u;
        }
    }
    Minimized {
        control: best,
        clamped: false,
        truncated: set.on_truncated_edge(&best),
    }
}
