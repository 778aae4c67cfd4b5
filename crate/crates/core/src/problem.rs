//! Controlled regime-switching diffusion whose jump rates come from a
//! switching geometry, with coefficients and costs given as expressions.
//!
//! Expressions see `t` and `s` (both the running time), `tau` (the anchor),
//! `x` and `u`. Vectors of length one apply to every regime.

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr, Var};
use crate::model::{Control, ControlSet, Dynamics, Model, RecursiveArgs};
use crate::switching::{tanh_two_regime, GeneratorMatrix, LevyMeasure, RegimeGeometry};

#[derive(Debug, Clone)]
pub struct SwitchingProblem {
    pub geometry: RegimeGeometry,
    pub levy: LevyMeasure,
    drift: Vec<Expr>,
    sigma: Vec<Expr>,
    running: Vec<Expr>,
    terminal: Vec<Expr>,
    controls: ControlSet,
}

fn per_regime(name: &str, v: Vec<Expr>, m: usize) -> Result<Vec<Expr>> {
    match v.len() {
        1 => Ok(vec![v[0].clone(); m]),
        n if n == m => Ok(v),
        n => Err(Error::Config(format!("{name} needs 1 or {m} expressions, got {n}"))),
    }
}

fn bind(tau: f64, s: f64, x: f64, u: f64) -> Bindings {
    Bindings::new()
        .with(Var::Tau, tau)
        .with(Var::S, s)
        .with(Var::T, s)
        .with(Var::X, x)
        .with(Var::U, u)
}

impl SwitchingProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        geometry: RegimeGeometry,
        levy: LevyMeasure,
        drift: Vec<Expr>,
        sigma: Vec<Expr>,
        running: Vec<Expr>,
        terminal: Vec<Expr>,
        controls: ControlSet,
    ) -> Result<Self> {
        let m = geometry.regime_count();
        if (geometry.beta0() - levy.beta0()).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "geometry mark range {} differs from the measure's {}",
                geometry.beta0(),
                levy.beta0()
            )));
        }
        controls.validate()?;
        if controls.dim() != 1 {
            return Err(Error::Config("expression models take a scalar control `u`".into()));
        }
        Ok(SwitchingProblem {
            drift: per_regime("drift", drift, m)?,
            sigma: per_regime("sigma", sigma, m)?,
            running: per_regime("running cost", running, m)?,
            terminal: per_regime("terminal cost", terminal, m)?,
            geometry,
            levy,
            controls,
        })
    }

    /// Two regimes switching through a tanh threshold, mean-reverting
    /// controlled drift, and a quadratic cost discounted hyperbolically from
    /// the anchor.
    pub fn tanh_preset(horizon: f64) -> Result<Self> {
        let geometry = tanh_two_regime(0.2, 0.1, 1.0, 0.6, 1.0, (-4.0, 4.0))?;
        Self::discounted_quadratic(geometry, horizon)
    }

    /// Quadratic discounted costs on a given two-regime geometry.
    pub fn discounted_quadratic(geometry: RegimeGeometry, horizon: f64) -> Result<Self> {
        let p = |s: &str| Expr::parse(s);
        SwitchingProblem::new(
            geometry,
            LevyMeasure::uniform(1.0)?,
            vec![p("u - 0.5*x")?, p("u - 0.2*x")?],
            vec![p("0.3")?, p("0.5")?],
            vec![p("(x^2 + u^2) / (1 + (s - tau))")?],
            vec![p(&format!("x^2 / (1 + ({horizon} - tau))"))?],
            ControlSet::interval(-3.0, 3.0),
        )
    }

    /// Checks that every expression is finite at the corners of
    /// `[0, T] × domain × U`.
    pub fn check_corners(&self, horizon: f64, domain: (f64, f64)) -> Result<()> {
        let (ulo, uhi) = match &self.controls {
            ControlSet::Box { search, .. } => search[0],
            ControlSet::Finite(v) => (v[0].u(), v[v.len() - 1].u()),
        };
        for (name, list) in [
            ("drift", &self.drift),
            ("sigma", &self.sigma),
            ("running", &self.running),
            ("terminal", &self.terminal),
        ] {
            for (i, e) in list.iter().enumerate() {
                for tau in [0.0, horizon] {
                    for s in [tau, horizon] {
                        for x in [domain.0, domain.1] {
                            for u in [ulo, uhi] {
                                let v = e.eval(&bind(tau, s, x, u)).map_err(|err| err.context(&format!("{name}[{i}]")))?;
                                if !v.is_finite() {
                                    return Err(Error::Config(format!(
                                        "{name}[{i}] = `{}` is {v} at (tau={tau}, s={s}, x={x}, u={u})",
                                        e.source()
                                    )));
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl Dynamics for SwitchingProblem {
    fn drift(&self, s: f64, x: f64, i: usize, u: Control) -> f64 {
        self.drift[i].eval(&bind(0.0, s, x, u.u())).unwrap_or(f64::NAN)
    }

    fn volatility(&self, s: f64, x: f64, i: usize, u: Control) -> f64 {
        self.sigma[i].eval(&bind(0.0, s, x, u.u())).unwrap_or(f64::NAN)
    }
}

impl Model for SwitchingProblem {
    fn regime_count(&self) -> usize {
        self.geometry.regime_count()
    }

    fn generator(&self, x: f64) -> Result<GeneratorMatrix> {
        self.geometry.rate_matrix(&self.levy, x)
    }

    fn running_cost(&self, anchor: f64, s: f64, x: f64, i: usize, _args: RecursiveArgs, u: Control) -> f64 {
        self.running[i].eval(&bind(anchor, s, x, u.u())).unwrap_or(f64::NAN)
    }

    fn terminal_cost(&self, anchor: f64, x: f64, i: usize) -> f64 {
        self.terminal[i].eval(&bind(anchor, f64::NAN, x, 0.0)).unwrap_or(f64::NAN)
    }

    fn control_set(&self) -> &ControlSet {
        &self.controls
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_rates_follow_the_threshold() {
        let p = SwitchingProblem::tanh_preset(1.0).unwrap();
        let q = p.generator(0.0).unwrap();
        assert!((q.get(0, 1) - 0.1).abs() < 1e-10);
        assert!((q.get(1, 0) - 0.2).abs() < 1e-10);
        let q = p.generator(2.0).unwrap();
        assert!(q.get(0, 1) > 0.1);
        p.check_corners(1.0, (-4.0, 4.0)).unwrap();
    }

    #[test]
    fn costs_see_the_anchor() {
        let p = SwitchingProblem::tanh_preset(1.0).unwrap();
        let args = RecursiveArgs { y: 0.0, z: 0.0, jump: 0.0 };
        let near = p.running_cost(0.5, 0.5, 1.0, 0, args, Control::scalar(1.0));
        let far = p.running_cost(0.0, 0.5, 1.0, 0, args, Control::scalar(1.0));
        assert_eq!(near, 2.0);
        assert!(far < near);
        assert_eq!(p.terminal_cost(1.0, 2.0, 1), 4.0);
        assert_eq!(p.drift(0.0, 1.0, 0, Control::scalar(1.0)), 0.5);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let p = SwitchingProblem::tanh_preset(1.0).unwrap();
        let e = |s: &str| Expr::parse(s).unwrap();
        let err = SwitchingProblem::new(
            p.geometry.clone(),
            p.levy.clone(),
            vec![e("u"), e("u"), e("u")],
            vec![e("1")],
            vec![e("0")],
            vec![e("0")],
            ControlSet::interval(-1.0, 1.0),
        )
        .unwrap_err();
        assert_eq!(err.kind(), "config");
        let bad = SwitchingProblem::new(
            p.geometry.clone(),
            p.levy.clone(),
            vec![e("u")],
            vec![e("log(x)")],
            vec![e("0")],
            vec![e("0")],
            ControlSet::interval(-1.0, 1.0),
        )
        .unwrap();
        assert!(bad.check_corners(1.0, (-1.0, 1.0)).is_err());
    }
}
