//! Run configuration: TOML text with nested sections, defaults for every
//! key, unknown-key detection with suggestions, and semantic validation
//! that reports every violation with its key path.

use serde::{Deserialize, Serialize};

use regime_core::error::{Error, Result};
use regime_core::expr::Expr;
use regime_core::grid::{Boundary, SpatialGrid, TimeGrid};
use regime_core::merton::{MertonModel, MertonSpec, Weight};
use regime_core::model::{ControlSet, Model};
use regime_core::partition::Partition;
use regime_core::problem::SwitchingProblem;
use regime_core::switching::{
    affine_two_regime, frozen, tanh_two_regime, Density, GeneratorMatrix, LevyMeasure, RegimeGeometry, Threshold,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// regime-switching Merton problem with hyperbolic weights
    #[default]
    Merton,
    /// Merton with anchor-free constant weights
    MertonTimeConsistent,
    /// two regimes, tanh threshold, discounted quadratic cost
    TanhSwitching,
    /// two regimes, clamped affine threshold, discounted quadratic cost
    AffineSwitching,
    /// two regimes that never switch
    Frozen,
    /// everything from expressions
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    /// constant | hyperbolic | exponential | expression
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
}

/// Overrides of the Merton preset parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MertonParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consumption: Option<WeightConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bequest: Option<WeightConfig>,
    /// off-diagonal rates; the diagonal is recomputed
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Preset,
    /// threshold table `β_{i,0..m}(x)` (custom)
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<Vec<String>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
    /// `"uniform"` or a density expression in `x` on `[-β0, β0]`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub running: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal: Option<Vec<String>>,
    /// control interval `[lo, hi]`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merton: Option<MertonParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub n_t: usize,
    pub n_x: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Boundary>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            horizon: 1.0,
            n_t: 80,
            n_x: 81,
            x_min: None,
            x_max: None,
            boundary: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_sweeps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slab_width: Option<f64>,
    /// uniform partition counts for `partition-solve`
    pub partitions: Vec<usize>,
    /// explicit knots, used instead of `partitions` when present
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knots: Option<Vec<f64>>,
    /// spike lengths as fractions of the horizon
    pub epsilon_ladder: Vec<f64>,
    pub spike_time: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-10,
            max_sweeps: 100,
            slab_width: None,
            partitions: vec![4, 8, 16],
            knots: None,
            epsilon_ladder: regime_core::cost::EPSILON_LADDER.to_vec(),
            spike_time: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub x0: f64,
    /// starting regime, numbered from 1
    pub regime: usize,
    pub step: f64,
    pub paths: usize,
    /// constant control for expression models
    pub control: f64,
    /// how many full paths to write out
    pub record: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            x0: 1.0,
            regime: 1,
            step: 1e-3,
            paths: 1000,
            control: 0.0,
            record: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub points: Vec<f64>,
    pub ds: f64,
    pub paths: usize,
}

impl Default for RatesConfig {
    fn default() -> Self {
        RatesConfig {
            points: vec![-1.0, 0.0, 1.0],
            ds: 1e-3,
            paths: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MertonVariant {
    Tc,
    Pre,
    #[default]
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MertonRunConfig {
    pub variant: MertonVariant,
    /// anchor of the pre-committed variant
    pub anchor: f64,
    pub phi_steps: usize,
    /// Monte Carlo check at `(t, x, regime)`; 0 paths skips it
    pub paths: usize,
    pub step: f64,
    pub t: f64,
    pub x: f64,
    pub regime: usize,
}

impl Default for MertonRunConfig {
    fn default() -> Self {
        MertonRunConfig {
            variant: MertonVariant::Eq,
            anchor: 0.0,
            phi_steps: 400,
            paths: 0,
            step: 5e-4,
            t: 0.0,
            x: 1.0,
            regime: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    /// any of csv, json, binary
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: "regime-out".into(),
            formats: vec!["csv".into(), "json".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// worker threads; 0 lets the pool decide
    pub workers: usize,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub simulate: SimulateConfig,
    pub rates: RatesConfig,
    pub merton: MertonRunConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            workers: 0,
            model: ModelConfig::default(),
            grid: GridConfig::default(),
            solver: SolverConfig::default(),
            simulate: SimulateConfig::default(),
            rates: RatesConfig::default(),
            merton: MertonRunConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// A config with every optional key present, used as the key schema.
fn exemplar() -> RunConfig {
    let weight = WeightConfig {
        kind: "hyperbolic".into(),
        value: Some(1.0),
        scale: Some(1.0),
        kappa: Some(1.0),
        rate: Some(1.0),
        expr: Some("1".into()),
    };
    let model = ModelConfig {
        preset: Preset::Custom,
        thresholds: Some(vec![vec!["0".into()]]),
        beta0: Some(1.0),
        density: Some("uniform".into()),
        drift: Some(vec!["0".into()]),
        sigma: Some(vec!["0".into()]),
        running: Some(vec!["0".into()]),
        terminal: Some(vec!["0".into()]),
        control: Some([0.0, 1.0]),
        merton: Some(MertonParams {
            b: Some(vec![0.0]),
            sigma: Some(vec![0.0]),
            gamma: Some(0.5),
            consumption: Some(weight.clone()),
            bequest: Some(weight),
            generator: Some(vec![vec![0.0]]),
        }),
    };
    let mut c = RunConfig {
        model,
        ..RunConfig::default()
    };
    c.grid.x_min = Some(0.0);
    c.grid.x_max = Some(1.0);
    c.grid.boundary = Some(Boundary::LinearExtrapolation);
    c.solver.slab_width = Some(1.0);
    c.solver.knots = Some(vec![0.0]);
    c
}

/// Flags keys of `given` missing from `schema`, with the closest valid key.
fn unknown_keys(given: &toml::Table, schema: &toml::Table, path: &str, out: &mut Vec<String>) {
    for (key, value) in given {
        let here = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        match schema.get(key) {
            Some(toml::Value::Table(sub)) => {
                if let toml::Value::Table(g) = value {
                    unknown_keys(g, sub, &here, out);
                }
            }
            Some(_) => {}
            None => {
                let best = schema
                    .keys()
                    .map(|k| (strsim::damerau_levenshtein(key, k), k))
                    .min_by_key(|(d, _)| *d);
                let hint = match best {
                    Some((d, k)) if d <= 3 => format!("; did you mean `{k}`?"),
                    _ => {
                        let mut keys: Vec<&String> = schema.keys().collect();
                        keys.sort();
                        format!("; valid keys: {}", keys.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", "))
                    }
                };
                out.push(format!("unknown key `{here}`{hint}"));
            }
        }
    }
}

fn schema() -> toml::Table {
    match toml::Table::try_from(exemplar()) {
        Ok(t) => t,
        Err(e) => unreachable!("schema exemplar serializes: {e}"),
    }
}

impl RunConfig {
    /// Parses and validates; every violation is listed in one error.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("malformed config: {}", e.message())))?;
        let mut problems = Vec::new();
        unknown_keys(&table, &schema(), "", &mut problems);
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("\n")));
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// TOML text that parses back to an equal config.
    pub fn to_toml(&self) -> String {
        match toml::to_string(self) {
            Ok(s) => s,
            Err(e) => unreachable!("config serializes: {e}"),
        }
    }

    pub fn is_merton(&self) -> bool {
        matches!(self.model.preset, Preset::Merton | Preset::MertonTimeConsistent)
    }

    /// Every violation, each prefixed by its key path.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        let mut expr = |path: String, src: &str| {
            if let Err(e) = Expr::parse(src) {
                problems.push(format!("{path}: {e}"));
            }
        };
        let m = &self.model;
        for (name, list) in [("drift", &m.drift), ("sigma", &m.sigma), ("running", &m.running), ("terminal", &m.terminal)] {
            if let Some(list) = list {
                for (i, s) in list.iter().enumerate() {
                    expr(format!("model.{name}[{i}]"), s);
                }
            }
        }
        if let Some(rows) = &m.thresholds {
            for (i, row) in rows.iter().enumerate() {
                for (j, s) in row.iter().enumerate() {
                    expr(format!("model.thresholds[{i}][{j}]"), s);
                }
            }
        }
        if let Some(d) = &m.density {
            if d != "uniform" {
                expr("model.density".into(), d);
            }
        }
        if let Some(mp) = &m.merton {
            for (name, w) in [("consumption", &mp.consumption), ("bequest", &mp.bequest)] {
                if let Some(WeightConfig { expr: Some(src), .. }) = w {
                    expr(format!("model.merton.{name}.expr"), src);
                }
            }
        }

        let g = &self.grid;
        if !(g.horizon > 0.0) {
            problems.push(format!("grid.horizon: must be positive, got {}", g.horizon));
        }
        if g.n_t == 0 {
            problems.push("grid.n_t: need at least one time step".into());
        }
        if g.n_x < 5 {
            problems.push(format!("grid.n_x: need at least 5 nodes, got {}", g.n_x));
        }
        let (lo, hi) = self.domain();
        if !(lo < hi) {
            problems.push(format!("grid: x_min {lo} must be below x_max {hi}"));
        }
        if self.is_merton() && !(lo > 0.0) {
            problems.push(format!("grid.x_min: wealth grid must stay positive, got {lo}"));
        }
        let s = &self.solver;
        if !(s.tol > 0.0) {
            problems.push(format!("solver.tol: must be positive, got {}", s.tol));
        }
        if s.max_sweeps == 0 {
            problems.push("solver.max_sweeps: need at least one sweep".into());
        }
        if s.partitions.is_empty() && s.knots.is_none() {
            problems.push("solver.partitions: need at least one partition".into());
        }
        if g.n_t > 0 {
            for (j, &n) in s.partitions.iter().enumerate() {
                if n == 0 || !g.n_t.is_multiple_of(n) {
                    problems.push(format!("solver.partitions[{j}]: {n} blocks do not divide n_t = {}", g.n_t));
                }
            }
        }
        if s.epsilon_ladder.is_empty() || s.epsilon_ladder.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            problems.push("solver.epsilon_ladder: fractions must lie in (0, 1]".into());
        }
        if !(self.simulate.step > 0.0) {
            problems.push("simulate.step: must be positive".into());
        }
        if !(self.rates.ds > 0.0) {
            problems.push("rates.ds: must be positive".into());
        }
        if !(self.merton.step > 0.0) || self.merton.phi_steps == 0 {
            problems.push("merton: step and phi_steps must be positive".into());
        }
        for f in &self.output.formats {
            if !matches!(f.as_str(), "csv" | "json" | "binary") {
                problems.push(format!("output.formats: unknown format `{f}` (csv, json, binary)"));
            }
        }
        if problems.is_empty() {
            // semantic checks that need the built objects
            match self.build() {
                Ok(scenario) => {
                    let m = scenario.model().regime_count();
                    for (path, r) in [("simulate.regime", self.simulate.regime), ("merton.regime", self.merton.regime)] {
                        if r == 0 || r > m {
                            problems.push(format!("{path}: regimes are numbered 1..={m}, got {r}"));
                        }
                    }
                    if let Err(e) = self.time_grid().and_then(|t| {
                        regime_core::pde::node_generators(scenario.model(), &self.space_grid(&scenario)?, t.max_dt())
                    }) {
                        problems.push(format!("grid: {e}"));
                    }
                    if let Some(k) = &s.knots {
                        if let Err(e) = self.time_grid().and_then(|t| Partition::from_knots(&t, k)) {
                            problems.push(format!("solver.knots: {e}"));
                        }
                    }
                }
                Err(e) => problems.push(format!("model: {e}")),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("\n")))
        }
    }

    /// Spatial domain, preset-dependent when not given.
    pub fn domain(&self) -> (f64, f64) {
        let (lo, hi) = if self.is_merton() { (0.25, 4.0) } else { (-4.0, 4.0) };
        (self.grid.x_min.unwrap_or(lo), self.grid.x_max.unwrap_or(hi))
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.grid.horizon, self.grid.n_t)
    }

    pub fn space_grid(&self, scenario: &Scenario) -> Result<SpatialGrid> {
        let (lo, hi) = self.domain();
        let boundary = self.grid.boundary.unwrap_or(match scenario {
            Scenario::Merton { spec, .. } => Boundary::Homogeneous(spec.gamma),
            Scenario::Switching(_) => Boundary::LinearExtrapolation,
        });
        Ok(SpatialGrid::new(lo, hi, self.grid.n_x)?.with_boundary(boundary))
    }

    /// Builds the model described by the `model` section.
    pub fn build(&self) -> Result<Scenario> {
        let m = &self.model;
        let horizon = self.grid.horizon;
        match m.preset {
            Preset::Merton | Preset::MertonTimeConsistent => {
                let base = if m.preset == Preset::Merton {
                    MertonSpec::preset()
                } else {
                    MertonSpec::time_consistent_preset()
                };
                let spec = merton_spec(base, m.merton.as_ref(), horizon)?;
                let model = MertonModel::new(spec.clone())?;
                let geometry = RegimeGeometry::from_constant_generator(&spec.generator, 1.0, self.domain())?;
                Ok(Scenario::Merton {
                    spec,
                    model,
                    geometry,
                    levy: LevyMeasure::uniform(1.0)?,
                })
            }
            _ => {
                let domain = self.domain();
                let beta0 = m.beta0.unwrap_or(1.0);
                let geometry = match m.preset {
                    Preset::TanhSwitching => tanh_two_regime(0.2, 0.1, 1.0, 0.6, beta0, domain)?,
                    Preset::AffineSwitching => affine_two_regime(0.2, 0.1, 0.05, 0.55, 0.6, beta0, domain)?,
                    Preset::Frozen => frozen(2, beta0, domain)?,
                    _ => {
                        let rows = m
                            .thresholds
                            .as_ref()
                            .ok_or_else(|| Error::Config("custom model needs `thresholds`".into()))?;
                        let table = rows
                            .iter()
                            .map(|row| row.iter().map(|s| Ok(Threshold::Expression(Expr::parse(s)?))).collect())
                            .collect::<Result<Vec<Vec<Threshold>>>>()?;
                        RegimeGeometry::new(table, beta0, domain)?
                    }
                };
                let levy = match m.density.as_deref() {
                    None | Some("uniform") => LevyMeasure::uniform(beta0)?,
                    Some(src) => LevyMeasure::new(Density::Expression(Expr::parse(src)?), beta0)?,
                };
                let base = SwitchingProblem::discounted_quadratic(geometry.clone(), horizon)?;
                let exprs = |v: &Option<Vec<String>>| -> Result<Option<Vec<Expr>>> {
                    v.as_ref().map(|l| l.iter().map(|s| Expr::parse(s)).collect()).transpose()
                };
                let defaults = base_expressions(horizon);
                let custom = m.preset == Preset::Custom;
                let pick = |given: Option<Vec<Expr>>, fallback: Vec<Expr>, name: &str| -> Result<Vec<Expr>> {
                    match given {
                        Some(v) => Ok(v),
                        None if custom => Err(Error::Config(format!("custom model needs `{name}`"))),
                        None => Ok(fallback),
                    }
                };
                let control = m.control.unwrap_or([-3.0, 3.0]);
                drop(base);
                let problem = SwitchingProblem::new(
                    geometry,
                    levy,
                    pick(exprs(&m.drift)?, defaults.0, "drift")?,
                    pick(exprs(&m.sigma)?, defaults.1, "sigma")?,
                    pick(exprs(&m.running)?, defaults.2, "running")?,
                    pick(exprs(&m.terminal)?, defaults.3, "terminal")?,
                    ControlSet::interval(control[0], control[1]),
                )?;
                problem.check_corners(horizon, domain)?;
                Ok(Scenario::Switching(problem))
            }
        }
    }
}

/// Drift, volatility, running and terminal expressions of the switching presets.
fn base_expressions(horizon: f64) -> (Vec<Expr>, Vec<Expr>, Vec<Expr>, Vec<Expr>) {
    let p = |s: &str| Expr::parse(s).unwrap_or_else(|e| unreachable!("preset expression parses: {e}"));
    (
        vec![p("u - 0.5*x"), p("u - 0.2*x")],
        vec![p("0.3"), p("0.5")],
        vec![p("(x^2 + u^2) / (1 + (s - tau))")],
        vec![p(&format!("x^2 / (1 + ({horizon} - tau))"))],
    )
}

fn weight(w: &WeightConfig, path: &str) -> Result<Weight> {
    let need = |v: Option<f64>, key: &str| v.ok_or_else(|| Error::Config(format!("{path}.{key} is required for kind `{}`", w.kind)));
    Ok(match w.kind.as_str() {
        "constant" => Weight::Const(need(w.value, "value")?),
        "hyperbolic" => Weight::Hyperbolic {
            scale: w.scale.unwrap_or(1.0),
            kappa: need(w.kappa, "kappa")?,
        },
        "exponential" => Weight::Exponential {
            scale: w.scale.unwrap_or(1.0),
            rate: need(w.rate, "rate")?,
        },
        "expression" => Weight::Expression(Expr::parse(
            w.expr
                .as_deref()
                .ok_or_else(|| Error::Config(format!("{path}.expr is required for kind `expression`")))?,
        )?),
        other => {
            return Err(Error::Config(format!(
                "{path}.kind: unknown weight `{other}` (constant, hyperbolic, exponential, expression)"
            )))
        }
    })
}

fn merton_spec(mut spec: MertonSpec, params: Option<&MertonParams>, horizon: f64) -> Result<MertonSpec> {
    spec.horizon = horizon;
    if let Some(p) = params {
        if let Some(b) = &p.b {
            spec.b = b.clone();
        }
        if let Some(s) = &p.sigma {
            spec.sigma = s.clone();
        }
        if let Some(g) = p.gamma {
            spec.gamma = g;
        }
        if let Some(w) = &p.consumption {
            spec.consumption = weight(w, "model.merton.consumption")?;
        }
        if let Some(w) = &p.bequest {
            spec.bequest = weight(w, "model.merton.bequest")?;
        }
        if let Some(q) = &p.generator {
            spec.generator = GeneratorMatrix::from_rows(q)?;
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// A built model plus what the simulator needs.
pub enum Scenario {
    Merton {
        spec: MertonSpec,
        model: MertonModel,
        geometry: RegimeGeometry,
        levy: LevyMeasure,
    },
    Switching(SwitchingProblem),
}

impl Scenario {
    pub fn model(&self) -> &dyn Model {
        match self {
            Scenario::Merton { model, .. } => model,
            Scenario::Switching(p) => p,
        }
    }

    pub fn geometry(&self) -> &RegimeGeometry {
        match self {
            Scenario::Merton { geometry, .. } => geometry,
            Scenario::Switching(p) => &p.geometry,
        }
    }

    pub fn levy(&self) -> &LevyMeasure {
        match self {
            Scenario::Merton { levy, .. } => levy,
            Scenario::Switching(p) => &p.levy,
        }
    }
}
