//! Monte Carlo simulation of the state/regime pair.
//!
//! `X` follows Euler–Maruyama. Regime switches are driven by a unit-rate
//! Poisson clock with marks drawn from the Lévy measure; event times are
//! exact and are inserted as extra nodes, `X` is diffused up to the event
//! and the mark is then mapped through `Δ_ij(X)` at that pre-jump state.
//!
//! Each path owns two ChaCha8 streams derived from `(seed, path index)`: one
//! for the clock and marks, one for Brownian increments. Two paths with the
//! same index therefore share all randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Control, Dynamics, Feedback};
use crate::switching::{LevyMeasure, RegimeGeometry};

/// Initial condition and discretization of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSpec {
    pub t0: f64,
    pub horizon: f64,
    pub x0: f64,
    pub regime: usize,
    /// Euler step
    pub step: f64,
}

/// Open-loop trace or closed-loop feedback.
#[derive(Clone, Copy)]
pub enum Policy<'a> {
    OpenLoop(&'a (dyn Fn(f64) -> Control + Sync)),
    Feedback(&'a dyn Feedback),
}

impl Policy<'_> {
    pub fn control(&self, s: f64, x: f64, i: usize) -> Result<Control> {
        match self {
            Policy::OpenLoop(f) => Ok(f(s)),
            Policy::Feedback(f) => f.control(s, x, i),
        }
    }
}

/// A Poisson event: time, mark and the regime before and after it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpRecord {
    pub time: f64,
    pub mark: f64,
    pub from: usize,
    pub to: usize,
}

/// Sampled trajectory; `regimes[n]` is the right-continuous value at `times[n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub regimes: Vec<usize>,
    pub jumps: Vec<JumpRecord>,
    pub stream: u64,
}

/// What [`integrate_path`] reports to its observer.
#[derive(Debug, Clone, Copy)]
pub enum Event {
    /// Euler step from `(s, x)` over `dt` under control `u`, landing on `x_new`.
    Step {
        s: f64,
        dt: f64,
        x: f64,
        regime: usize,
        u: Control,
        x_new: f64,
    },
    Jump(JumpRecord),
}

/// Clock/mark stream and Brownian stream of path `index`.
pub fn path_streams(seed: u64, index: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut events = ChaCha8Rng::seed_from_u64(seed);
    events.set_stream(2 * index);
    let mut brownian = ChaCha8Rng::seed_from_u64(seed);
    brownian.set_stream(2 * index + 1);
    (events, brownian)
}

fn check_spec(spec: &SimSpec, geometry: &RegimeGeometry) -> Result<()> {
    if !(spec.step > 0.0) {
        return Err(Error::Config(format!("simulation step must be positive, got {}", spec.step)));
    }
    if !(spec.horizon >= spec.t0) {
        return Err(Error::Config(format!("horizon {} before start {}", spec.horizon, spec.t0)));
    }
    if spec.regime >= geometry.regime_count() {
        return Err(Error::Domain(format!(
            "initial regime {} outside 0..{}",
            spec.regime,
            geometry.regime_count()
        )));
    }
    Ok(())
}

/// Runs one path and streams its steps and jumps to `observer`. Returns the
/// terminal state and regime.
#[allow(clippy::too_many_arguments)]
pub fn integrate_path<D: Dynamics + ?Sized>(
    dynamics: &D,
    geometry: &RegimeGeometry,
    levy: &LevyMeasure,
    spec: &SimSpec,
    policy: Policy<'_>,
    seed: u64,
    index: u64,
    observer: &mut dyn FnMut(Event),
) -> Result<(f64, usize)> {
    check_spec(spec, geometry)?;
    let (mut ev_rng, mut bm_rng) = path_streams(seed, index);
    let h = spec.step;
    let end = spec.horizon;
    let snap = 1e-12 * h.max(end.abs());
    let mut s = spec.t0;
    let mut x = spec.x0;
    let mut i = spec.regime;
    let mut next_event = s + <Exp1 as Distribution<f64>>::sample(&Exp1, &mut ev_rng);
    let mut k: u64 = 0;
    let mut step_no = 0usize;
    while s < end - snap {
        let mut grid_next = spec.t0 + (k + 1) as f64 * h;
        if grid_next > end - snap {
            grid_next = end;
        }
        let event_first = next_event < grid_next;
        let target = if event_first { next_event } else { grid_next };
        let dt = target - s;
        let u = policy.control(s, x, i)?;
        let z: f64 = StandardNormal.sample(&mut bm_rng);
        let x_new = x + dynamics.drift(s, x, i, u) * dt + dynamics.volatility(s, x, i, u) * dt.sqrt() * z;
        if !x_new.is_finite() {
            return Err(Error::Simulation {
                step: step_no,
                time: target,
                detail: format!("state left the reals from x={x} in regime {i}"),
            });
        }
        observer(Event::Step {
            s,
            dt,
            x,
            regime: i,
            u,
            x_new,
        });
        step_no += 1;
        s = target;
        x = x_new;
        if event_first {
            let mark = levy.sample(&mut ev_rng);
            let to = geometry.mark_to_jump(x, i, mark)?;
            observer(Event::Jump(JumpRecord {
                time: s,
                mark,
                from: i,
                to,
            }));
            i = to;
            next_event += <Exp1 as Distribution<f64>>::sample(&Exp1, &mut ev_rng);
        } else {
            k += 1;
        }
    }
    Ok((x, i))
}

/// Simulates and records one path.
#[allow(clippy::too_many_arguments)]
pub fn simulate_path<D: Dynamics + ?Sized>(
    dynamics: &D,
    geometry: &RegimeGeometry,
    levy: &LevyMeasure,
    spec: &SimSpec,
    policy: Policy<'_>,
    seed: u64,
    index: u64,
) -> Result<Path> {
    let mut path = Path {
        times: vec![spec.t0],
        xs: vec![spec.x0],
        regimes: vec![spec.regime],
        jumps: Vec::new(),
        stream: index,
    };
    integrate_path(dynamics, geometry, levy, spec, policy, seed, index, &mut |e| match e {
        Event::Step { s, dt, regime, x_new, .. } => {
            path.times.push(s + dt);
            path.xs.push(x_new);
            path.regimes.push(regime);
        }
        Event::Jump(j) => {
            *path.regimes.last_mut().unwrap() = j.to;
            path.jumps.push(j);
        }
    })?;
    Ok(path)
}

/// Sample mean and its standard error, summed in index order.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Evaluates `f` on path indices `0..n` in parallel, results in index order.
pub fn per_path<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    #[allow(clippy::redundant_closure)] // F is Sync but not Send
    (0..n as u64).into_par_iter().map(|idx| f(idx)).collect()
}

/// Empirical jump rate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    pub rate: f64,
    pub se: f64,
    pub transitions: usize,
    pub paths: usize,
}

/// Estimates `q_ij(x)` from `P(α(Δs) = j | X(0) = x, α(0) = i) / Δs`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_transition_rate<D: Dynamics + ?Sized>(
    dynamics: &D,
    geometry: &RegimeGeometry,
    levy: &LevyMeasure,
    policy: Policy<'_>,
    x: f64,
    i: usize,
    j: usize,
    ds: f64,
    n_paths: usize,
    seed: u64,
) -> Result<RateEstimate> {
    if i == j {
        return Err(Error::Config("transition rate needs distinct regimes".into()));
    }
    if n_paths == 0 {
        return Err(Error::Config("transition rate needs at least one path".into()));
    }
    let spec = SimSpec {
        t0: 0.0,
        horizon: ds,
        x0: x,
        regime: i,
        step: ds,
    };
    let hits = per_path(n_paths, |idx| {
        let (_, end) = integrate_path(dynamics, geometry, levy, &spec, policy, seed, idx, &mut |_| {})?;
        Ok((end == j) as usize)
    })?
    .into_iter()
    .sum::<usize>();
    let q = geometry.rate_matrix(levy, x)?.get(i, j);
    if hits == 0 && q * ds * n_paths as f64 > 25.0 {
        return Err(Error::StatisticalAnomaly(format!(
            "no {i}→{j} transitions in {n_paths} paths at x={x}, expected about {:.1}",
            q * ds * n_paths as f64
        )));
    }
    let p = hits as f64 / n_paths as f64;
    Ok(RateEstimate {
        rate: p / ds,
        se: (p * (1.0 - p) / n_paths as f64).sqrt() / ds,
        transitions: hits,
        paths: n_paths,
    })
}

/// Regime-split probability and mean squared gap on agreement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairDivergence {
    /// empirical `P(regimes ever differ on [t, T])`
    pub split_probability: f64,
    /// empirical `E[sup_s |X1 - X2|² ; regimes always agree]`
    pub mean_sq_gap: f64,
}

/// Runs paths from `ξ1` and `ξ2` on common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn coupled_pair_divergence<D: Dynamics + ?Sized>(
    dynamics: &D,
    geometry: &RegimeGeometry,
    levy: &LevyMeasure,
    policy: Policy<'_>,
    spec: &SimSpec,
    xi2: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PairDivergence> {
    let spec2 = SimSpec { x0: xi2, ..*spec };
    let per = per_path(n_paths, |idx| {
        let a = simulate_path(dynamics, geometry, levy, spec, policy, seed, idx)?;
        let b = simulate_path(dynamics, geometry, levy, &spec2, policy, seed, idx)?;
        if a.times != b.times {
            return Err(Error::numeric("coupled simulation", "paths lost their common time grid"));
        }
        let split = a.regimes != b.regimes;
        let gap = a
            .xs
            .iter()
            .zip(&b.xs)
            .map(|(p, q)| (p - q).powi(2))
            .fold(0.0, f64::max);
        Ok((split, if split { 0.0 } else { gap }))
    })?;
    let n = n_paths as f64;
    Ok(PairDivergence {
        split_probability: per.iter().filter(|p| p.0).count() as f64 / n,
        mean_sq_gap: per.iter().map(|p| p.1).sum::<f64>() / n,
    })
}
