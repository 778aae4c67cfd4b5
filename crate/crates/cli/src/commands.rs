//! One function per subcommand: compute, write artifacts, return the
//! summary fields.

use serde::Serialize;
use serde_json::{json, Map, Value};

use regime_core::cost::{fit_line, spike_gain, Perturbation};
use regime_core::equilibrium::{residual, solve_equilibrium, EquilibriumOptions, EquilibriumSolution};
use regime_core::error::Error;

type Result<T, E = Error> = std::result::Result<T, E>;
use regime_core::grid::{SpatialGrid, TimeGrid};
use regime_core::merton::{
    monte_carlo_payoff, solve_equilibrium_ode, solve_precommitted, solve_time_consistent, EquilibriumPhi, MertonSpec,
    PhiCurve, Proportional,
};
use regime_core::model::{ConstantFeedback, Control, ControlSet, Feedback};
use regime_core::partition::{refine_and_compare, Partition};
use regime_core::pde::solve_hjb;
use regime_core::sde::{estimate_transition_rate, integrate_path, mean_and_se, per_path, simulate_path, Event, Policy, SimSpec};

use crate::config::{MertonVariant, RunConfig, Scenario};
use crate::output::Artifacts;
use crate::CliError;

type Summary = Map<String, Value>;

/// Fixed-point settings of the reference φ ODE.
const PHI_TOL: f64 = 1e-12;
const PHI_MAX_ITER: usize = 200;

fn wants(cfg: &RunConfig, format: &str) -> bool {
    cfg.output.formats.iter().any(|f| f == format)
}

/// Writes a value field in the configured dump formats.
fn dump_value(cfg: &RunConfig, out: &mut Artifacts, stem: &str, v: &regime_core::field::ValueField) -> Result<(), CliError> {
    if wants(cfg, "csv") {
        out.write_with(&format!("{stem}.csv"), |w| v.write_csv(w))?;
    }
    if wants(cfg, "binary") {
        out.write_with(&format!("{stem}.bin"), |w| v.write_binary(w))?;
    }
    Ok(())
}

fn dump_strategy(
    cfg: &RunConfig,
    out: &mut Artifacts,
    stem: &str,
    s: &regime_core::field::StrategyField,
) -> Result<(), CliError> {
    if wants(cfg, "csv") {
        out.write_with(&format!("{stem}.csv"), |w| s.write_csv(w))?;
    }
    if wants(cfg, "binary") {
        out.write_with(&format!("{stem}.bin"), |w| s.write_binary(w))?;
    }
    Ok(())
}

fn merton_spec(sc: &Scenario, command: &str) -> Result<MertonSpec> {
    match sc {
        Scenario::Merton { spec, .. } => Ok(spec.clone()),
        Scenario::Switching(_) => Err(Error::Config(format!("`{command}` needs a merton preset"))),
    }
}

/// Fine φ grid whose every `k`-th node is a node of the PDE grid.
fn phi_grid(cfg: &RunConfig) -> Result<(TimeGrid, usize)> {
    let k = cfg.merton.phi_steps.div_ceil(cfg.grid.n_t).max(1);
    Ok((TimeGrid::uniform(cfg.grid.horizon, cfg.grid.n_t * k)?, k))
}

fn equilibrium_phi(cfg: &RunConfig, spec: &MertonSpec) -> Result<(EquilibriumPhi, usize)> {
    let (grid, k) = phi_grid(cfg)?;
    Ok((solve_equilibrium_ode(spec, &grid, PHI_TOL, PHI_MAX_ITER)?, k))
}

fn regime_index(r: usize) -> usize {
    r - 1
}

#[derive(Serialize)]
struct PathPoint {
    path: u64,
    t: f64,
    x: f64,
    i: usize,
}

#[derive(Serialize)]
struct JumpRow {
    path: u64,
    time: f64,
    mark: f64,
    from: usize,
    to: usize,
}

#[derive(Serialize)]
struct Terminal {
    path: u64,
    x: f64,
    i: usize,
    jumps: usize,
}

pub fn simulate(cfg: &RunConfig, sc: &Scenario, out: &mut Artifacts) -> Result<Summary, CliError> {
    let sim = &cfg.simulate;
    let spec = SimSpec {
        t0: 0.0,
        horizon: cfg.grid.horizon,
        x0: sim.x0,
        regime: regime_index(sim.regime),
        step: sim.step,
    };
    // Merton runs under its equilibrium strategy, expression models under a constant control
    let policy: Box<dyn Feedback> = match sc {
        Scenario::Merton { spec: m, .. } => {
            let (phi, _) = equilibrium_phi(cfg, m)?;
            Box::new(Proportional::equilibrium(m, &phi))
        }
        Scenario::Switching(_) => Box::new(ConstantFeedback(Control::scalar(sim.control))),
    };
    let model = sc.model();
    let run = |idx: u64| -> Result<Terminal> {
        let mut jumps = 0;
        let (x, i) = integrate_path(
            model,
            sc.geometry(),
            sc.levy(),
            &spec,
            Policy::Feedback(policy.as_ref()),
            cfg.seed,
            idx,
            &mut |e| {
                if let Event::Jump(_) = e {
                    jumps += 1;
                }
            },
        )?;
        Ok(Terminal {
            path: idx,
            x,
            i: i + 1,
            jumps,
        })
    };
    let terminals = per_path(sim.paths, run)?;
    let mut points = Vec::new();
    let mut jump_rows = Vec::new();
    for idx in 0..sim.record.min(sim.paths) as u64 {
        let p = simulate_path(model, sc.geometry(), sc.levy(), &spec, Policy::Feedback(policy.as_ref()), cfg.seed, idx)?;
        for ((t, x), i) in p.times.iter().zip(&p.xs).zip(&p.regimes) {
            points.push(PathPoint {
                path: idx,
                t: *t,
                x: *x,
                i: i + 1,
            });
        }
        jump_rows.extend(p.jumps.iter().map(|j| JumpRow {
            path: idx,
            time: j.time,
            mark: j.mark,
            from: j.from + 1,
            to: j.to + 1,
        }));
    }
    out.csv("paths.csv", points)?;
    out.csv("jumps.csv", jump_rows)?;
    let xs: Vec<f64> = terminals.iter().map(|t| t.x).collect();
    let (mean, se) = mean_and_se(&xs);
    let m = model.regime_count();
    let occupancy: Vec<f64> = (1..=m)
        .map(|r| terminals.iter().filter(|t| t.i == r).count() as f64 / terminals.len().max(1) as f64)
        .collect();
    let mean_jumps = terminals.iter().map(|t| t.jumps as f64).sum::<f64>() / terminals.len().max(1) as f64;
    out.csv("terminal.csv", terminals)?;
    let mut s = Summary::new();
    s.insert("paths".into(), json!(sim.paths));
    s.insert("mean_terminal_x".into(), json!(mean));
    s.insert("se_terminal_x".into(), json!(se));
    s.insert("mean_jumps".into(), json!(mean_jumps));
    s.insert("terminal_regime_share".into(), json!(occupancy));
    Ok(s)
}

#[derive(Serialize)]
struct RateRow {
    x: f64,
    i: usize,
    j: usize,
    quadrature: f64,
    empirical: f64,
    se: f64,
    transitions: usize,
}

pub fn rates(cfg: &RunConfig, sc: &Scenario, out: &mut Artifacts) -> Result<Summary, CliError> {
    let m = sc.model().regime_count();
    let zero = ConstantFeedback(Control::scalar(0.0));
    let mut rows = Vec::new();
    let mut worst_z = 0.0f64;
    for &x in &cfg.rates.points {
        let q = sc.geometry().rate_matrix(sc.levy(), x)?;
        for i in 0..m {
            for j in (0..m).filter(|&j| j != i) {
                let est = estimate_transition_rate(
                    sc.model(),
                    sc.geometry(),
                    sc.levy(),
                    Policy::Feedback(&zero),
                    x,
                    i,
                    j,
                    cfg.rates.ds,
                    cfg.rates.paths,
                    cfg.seed,
                )?;
                if est.se > 0.0 {
                    worst_z = worst_z.max((est.rate - q.get(i, j)).abs() / est.se);
                }
                rows.push(RateRow {
                    x,
                    i: i + 1,
                    j: j + 1,
                    quadrature: q.get(i, j),
                    empirical: est.rate,
                    se: est.se,
                    transitions: est.transitions,
                });
            }
        }
    }
    let count = rows.len();
    out.csv("rates.csv", rows)?;
    let mut s = Summary::new();
    s.insert("pairs".into(), json!(count));
    s.insert("max_abs_z".into(), json!(worst_z));
    Ok(s)
}

fn partitions(cfg: &RunConfig, time: &TimeGrid) -> Result<Vec<Partition>> {
    match &cfg.solver.knots {
        Some(k) => Ok(vec![Partition::from_knots(time, k)?]),
        None => cfg.solver.partitions.iter().map(|&n| Partition::uniform(time, n)).collect(),
    }
}

pub fn partition_solve(cfg: &RunConfig, sc: &Scenario, out: &mut Artifacts) -> Result<Summary, CliError> {
    let time = cfg.time_grid()?;
    let space = cfg.space_grid(sc)?;
    let model = sc.model();
    let parts = partitions(cfg, &time)?;
    // reference Θ: the φ ODE for Merton, the equilibrium solver otherwise
    let rows = match sc {
        Scenario::Merton { spec, .. } => {
            let (phi, k) = equilibrium_phi(cfg, spec)?;
            let gam = spec.gamma;
            let xs = space.xs();
            let reference = move |a: usize, n: usize, kx: usize, i: usize| -phi.get(a * k, n * k, i) * xs[kx].powf(gam);
            refine_and_compare(model, &parts, &time, &space, Some(&reference))?
        }
        Scenario::Switching(_) => {
            let eq = solve_equilibrium(model, &time, &space, equilibrium_options(cfg))?;
            let reference = move |a: usize, n: usize, k: usize, i: usize| eq.theta.get(a, n, k, i);
            refine_and_compare(model, &parts, &time, &space, Some(&reference))?
        }
    };
    out.json("convergence.json", &rows)?;
    let finest = regime_core::partition::run_cycles(model, &parts[parts.len() - 1], &time, &space)?;
    dump_value(cfg, out, "value", &finest.value)?;
    dump_strategy(cfg, out, "strategy", &finest.strategy)?;
    let ratios: Vec<f64> = rows
        .windows(2)
        .filter_map(|w| match (w[0].sup_diff_theta, w[1].sup_diff_theta) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        })
        .collect();
    let mut s = Summary::new();
    s.insert("players".into(), json!(rows.iter().map(|r| r.players).collect::<Vec<_>>()));
    s.insert("theta_distance".into(), json!(rows.iter().map(|r| r.sup_diff_theta).collect::<Vec<_>>()));
    s.insert("ratios".into(), json!(ratios));
    Ok(s)
}

fn equilibrium_options(cfg: &RunConfig) -> EquilibriumOptions {
    EquilibriumOptions {
        tol: cfg.solver.tol,
        max_sweeps: cfg.solver.max_sweeps,
        slab_width: cfg.solver.slab_width,
    }
}

fn solve_eq(cfg: &RunConfig, sc: &Scenario) -> Result<EquilibriumSolution> {
    solve_equilibrium(sc.model(), &cfg.time_grid()?, &cfg.space_grid(sc)?, equilibrium_options(cfg))
}

pub fn equilibrium(cfg: &RunConfig, sc: &Scenario, out: &mut Artifacts) -> Result<Summary, CliError> {
    let sol = solve_eq(cfg, sc)?;
    let r = residual(sc.model(), &sol)?;
    out.jsonl("residual_log.jsonl", &sol.log)?;
    dump_value(cfg, out, "value", &sol.value)?;
    dump_strategy(cfg, out, "strategy", &sol.strategy)?;
    let last = sol.log.last();
    let mut s = Summary::new();
    s.insert("sweeps".into(), json!(sol.log.len()));
    s.insert("final_diag_change".into(), json!(last.map(|l| l.diag_change)));
    s.insert("final_residual".into(), json!(r));
    s.insert("diagnostics".into(), serde_json::to_value(sol.diagnostics)?);
    Ok(s)
}

#[derive(Serialize)]
struct PhiRow {
    tau: f64,
    s: f64,
    i: usize,
    phi: f64,
}

#[derive(Serialize)]
struct StrategyRow {
    s: f64,
    i: usize,
    invest_fraction: f64,
    consume_fraction: f64,
}

/// Largest `|V + φ x^γ| / (φ x^γ)` over interior nodes.
fn ansatz_error(space: &SpatialGrid, gamma: f64, nodes: impl Iterator<Item = (f64, f64, usize)>) -> f64 {
    let mut worst = 0.0f64;
    for (v, phi, k) in nodes {
        let exact = phi * space.x(k).powf(gamma);
        worst = worst.max((v + exact).abs() / exact.abs());
    }
    worst
}

pub fn merton(
    cfg: &RunConfig,
    sc: &Scenario,
    out: &mut Artifacts,
    variant: MertonVariant,
) -> Result<Summary, CliError> {
    let spec = merton_spec(sc, "merton")?;
    let time = cfg.time_grid()?;
    let space = cfg.space_grid(sc)?;
    let (grid, step) = phi_grid(cfg)?;
    let m = spec.regimes();
    let gam = spec.gamma;
    let model = sc.model();
    let mut phi_rows = Vec::new();
    let (strategy, pde_error, mc_anchor, mc_curve): (Proportional, f64, f64, PhiCurve) = match variant {
        MertonVariant::Tc => {
            let phi = solve_time_consistent(&spec, &grid)?;
            for n in 0..time.len() {
                for i in 0..m {
                    phi_rows.push(PhiRow {
                        tau: time.t(n),
                        s: time.t(n),
                        i: i + 1,
                        phi: phi.get(n * step, i),
                    });
                }
            }
            let v = solve_hjb(model, 0.0, &time, &space, None)?.value;
            let nodes = (0..time.len())
                .flat_map(|n| space.interior().flat_map(move |k| (0..m).map(move |i| (n, k, i))))
                .map(|(n, k, i)| (v.get(n, k, i), phi.get(n * step, i), k));
            let err = ansatz_error(&space, gam, nodes);
            (Proportional::time_consistent(&spec, &phi), err, cfg.merton.t, phi)
        }
        MertonVariant::Pre => {
            let tau = cfg.merton.anchor;
            let a = time
                .index_of(tau)
                .ok_or_else(|| Error::Config(format!("merton.anchor {tau} is not a node of the time grid")))?;
            let phi = solve_precommitted(&spec, tau, &grid)?;
            let window = time.window(a, time.steps());
            for n in 0..window.len() {
                for i in 0..m {
                    phi_rows.push(PhiRow {
                        tau,
                        s: window.t(n),
                        i: i + 1,
                        phi: phi.get(n * step, i),
                    });
                }
            }
            let v = solve_hjb(model, tau, &window, &space, None)?.value;
            let nodes = (0..window.len())
                .flat_map(|n| space.interior().flat_map(move |k| (0..m).map(move |i| (n, k, i))))
                .map(|(n, k, i)| (v.get(n, k, i), phi.get(n * step, i), k));
            let err = ansatz_error(&space, gam, nodes);
            (Proportional::precommitted(&spec, tau, &phi), err, tau, phi)
        }
        MertonVariant::Eq => {
            let phi = solve_equilibrium_ode(&spec, &grid, PHI_TOL, PHI_MAX_ITER)?;
            for a in 0..time.len() {
                for n in a..time.len() {
                    for i in 0..m {
                        phi_rows.push(PhiRow {
                            tau: time.t(a),
                            s: time.t(n),
                            i: i + 1,
                            phi: phi.get(a * step, n * step, i),
                        });
                    }
                }
            }
            let sol = solve_eq(cfg, sc)?;
            let theta = &sol.theta;
            let phi_ref = &phi;
            let nodes = (0..time.len())
                .flat_map(|a| (a..time.len()).map(move |n| (a, n)))
                .flat_map(|(a, n)| space.interior().flat_map(move |k| (0..m).map(move |i| (a, n, k, i))))
                .map(|(a, n, k, i)| (theta.get(a, n, k, i), phi_ref.get(a * step, n * step, i), k));
            let err = ansatz_error(&space, gam, nodes);
            (Proportional::equilibrium(&spec, &phi), err, cfg.merton.t, phi.diagonal())
        }
    };
    out.csv("phi.csv", phi_rows)?;
    let mut strategy_rows = Vec::new();
    for n in 0..time.len() {
        let s = time.t(n);
        if s < mc_curve.grid.start() - 1e-12 {
            continue;
        }
        for i in 0..m {
            strategy_rows.push(StrategyRow {
                s,
                i: i + 1,
                invest_fraction: strategy.invest[i],
                consume_fraction: strategy.consume.at(s, i),
            });
        }
    }
    out.csv("strategy_table.csv", strategy_rows)?;

    let mut comparison = Map::new();
    comparison.insert("variant".into(), json!(variant));
    comparison.insert("pde_max_relative_error".into(), json!(pde_error));
    if cfg.merton.paths > 0 {
        let i = regime_index(cfg.merton.regime);
        let (est, se) = monte_carlo_payoff(
            &spec,
            &strategy,
            mc_anchor,
            cfg.merton.x,
            i,
            cfg.merton.step,
            cfg.merton.paths,
            cfg.seed,
        )?;
        let ode = mc_curve.at(mc_anchor, i) * cfg.merton.x.powf(gam);
        comparison.insert(
            "monte_carlo".into(),
            json!({
                "t": mc_anchor,
                "x": cfg.merton.x,
                "regime": cfg.merton.regime,
                "paths": cfg.merton.paths,
                "estimate": est,
                "se": se,
                "ode": ode,
                "z": (est - ode) / se,
            }),
        );
    }
    out.json("comparison.json", &comparison)?;
    Ok(comparison)
}

#[derive(Serialize)]
struct GainRow {
    epsilon: f64,
    perturbation: String,
    x: f64,
    i: usize,
    gain: f64,
}

/// Constant fractions `(invest, consume)` tried against the Merton equilibrium.
const MERTON_FRACTIONS: [(f64, f64); 4] = [(0.0, 0.2), (0.5, 0.5), (1.0, 0.2), (1.0, 1.0)];

pub fn verify(cfg: &RunConfig, sc: &Scenario, out: &mut Artifacts) -> Result<Summary, CliError> {
    let time = cfg.time_grid()?;
    let t = cfg.solver.spike_time;
    // reject unresolvable spikes before paying for the equilibrium solve
    for &f in &cfg.solver.epsilon_ladder {
        let eps = f * cfg.grid.horizon;
        if eps < 2.0 * time.max_dt() - 1e-12 {
            return Err(Error::Resolution(format!(
                "spike length {eps} spans fewer than 2 time steps of {}",
                time.max_dt()
            ))
            .into());
        }
    }
    let eq = solve_eq(cfg, sc)?;
    let model = sc.model();
    let mut named: Vec<(String, Box<dyn Feedback>)> = Vec::new();
    match sc {
        Scenario::Merton { spec, .. } => {
            for (a, c) in MERTON_FRACTIONS {
                let m = spec.regimes();
                named.push((
                    format!("fractions({a},{c})"),
                    Box::new(Proportional::constant(vec![a; m], vec![c; m], cfg.grid.horizon)?),
                ));
            }
        }
        Scenario::Switching(_) => {
            if let ControlSet::Box { search, .. } = model.control_set() {
                let (lo, hi) = search[0];
                for u in [lo, 0.5 * (lo + hi), hi] {
                    named.push((format!("constant({u})"), Box::new(ConstantFeedback(Control::scalar(u)))));
                }
            }
        }
    }
    let mut perturbations: Vec<(String, Perturbation<'_>)> = named
        .iter()
        .map(|(n, f)| (n.clone(), Perturbation::Strategy(f.as_ref())))
        .collect();
    perturbations.push(("anchor_optimal".into(), Perturbation::AnchorOptimal));

    let mut rows = Vec::new();
    let mut epsilons = Vec::new();
    let mut min_gains = Vec::new();
    for &f in &cfg.solver.epsilon_ladder {
        let mut worst = f64::INFINITY;
        let mut eps = f * cfg.grid.horizon;
        for (name, p) in &perturbations {
            let g = spike_gain(model, &eq, t, f * cfg.grid.horizon, *p)?;
            eps = g.epsilon;
            worst = worst.min(g.min);
            for (i, row) in g.gains.iter().enumerate() {
                for (x, gain) in g.xs.iter().zip(row) {
                    rows.push(GainRow {
                        epsilon: g.epsilon,
                        perturbation: name.clone(),
                        x: *x,
                        i: i + 1,
                        gain: *gain,
                    });
                }
            }
        }
        epsilons.push(eps);
        min_gains.push(worst);
    }
    let (intercept, _) = if epsilons.len() >= 2 {
        fit_line(&epsilons, &min_gains)
    } else {
        (f64::NAN, f64::NAN)
    };
    let constants: Vec<f64> = epsilons.iter().zip(&min_gains).map(|(e, g)| (-g).max(0.0) / e).collect();
    out.csv("gains.csv", rows)?;
    let report = json!({
        "epsilon": epsilons,
        "min_gain": min_gains,
        "constants": constants,
        "intercept_estimate": intercept,
    });
    out.json("verify.json", &report)?;
    match report {
        Value::Object(map) => Ok(map),
        _ => unreachable!("report is an object"),
    }
}
