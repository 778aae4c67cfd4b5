//! State-dependent switching geometry.
//!
//! Each regime `i` owns a row of `m + 1` threshold functions
//! `β_{i,0}(x) ≤ … ≤ β_{i,m}(x)`, rows are chained end to start, and the mark
//! interval for a jump `i → j` is `Δ_ij(x) = [β_{i,j}(x), β_{i,j+1}(x))`
//! (zero-based `i`, `j`). A unit-mass Lévy measure on `[-β0, β0]` assigns the
//! jump rate `q_ij(x) = π(Δ_ij(x))`.
//!
//! Regimes are zero-based throughout the API.

use rand::Rng;

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr, Var};
use crate::quadrature::{adaptive_simpson, DEFAULT_TOL};

/// Number of equispaced states used to validate the threshold chain.
pub const VALIDATION_SAMPLES: usize = 1001;
/// Samples per ball when extremizing thresholds for `Δ^δ`, `Δ^{-δ}`.
pub const BALL_SAMPLES: usize = 64;

const CHAIN_TOL: f64 = 1e-12;

/// A scalar threshold function `x ↦ β(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Threshold {
    Constant(f64),
    /// `clamp(intercept + slope·x, lo, hi)`
    AffineClamped {
        intercept: f64,
        slope: f64,
        lo: f64,
        hi: f64,
    },
    /// `base + amplitude·tanh(scale·x)`
    Tanh { base: f64, amplitude: f64, scale: f64 },
    /// Expression in the variable `x`.
    Expression(Expr),
}

impl Threshold {
    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(match self {
            Threshold::Constant(c) => *c,
            Threshold::AffineClamped {
                intercept,
                slope,
                lo,
                hi,
            } => (intercept + slope * x).clamp(*lo, *hi),
            Threshold::Tanh {
                base,
                amplitude,
                scale,
            } => base + amplitude * (scale * x).tanh(),
            Threshold::Expression(e) => e.eval(&Bindings::new().with(Var::X, x))?,
        })
    }

    /// Lipschitz constant when it is known in closed form.
    pub fn lipschitz(&self) -> Option<f64> {
        match self {
            Threshold::Constant(_) => Some(0.0),
            Threshold::AffineClamped { slope, .. } => Some(slope.abs()),
            Threshold::Tanh {
                amplitude, scale, ..
            } => Some((amplitude * scale).abs()),
            Threshold::Expression(_) => None,
        }
    }
}

/// Half-open real interval `[lo, hi)`; empty when `lo >= hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const EMPTY: Interval = Interval { lo: 0.0, hi: 0.0 };

    pub fn is_empty(&self) -> bool {
        !(self.lo < self.hi)
    }

    pub fn contains(&self, theta: f64) -> bool {
        self.lo <= theta && theta < self.hi
    }

    pub fn len(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.hi - self.lo
        }
    }
}

/// Density of the mark distribution on `[-β0, β0]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Density {
    /// `1 / (2β0)` on the whole mark space.
    Uniform,
    /// Expression in `x`, where `x` stands for the mark θ.
    Expression(Expr),
}

/// Unit-mass, absolutely continuous Lévy measure on `[-β0, β0]`.
#[derive(Debug, Clone)]
pub struct LevyMeasure {
    density: Density,
    beta0: f64,
    // inverse-CDF table for non-uniform densities: cumulative mass at cell edges
    cdf: Vec<f64>,
}

/// Cells in the inverse-CDF table used to sample non-uniform marks.
const CDF_CELLS: usize = 4096;
/// Tolerance on the total mass of a configured density.
pub const MASS_TOL: f64 = 1e-6;

impl LevyMeasure {
    pub fn uniform(beta0: f64) -> Result<Self> {
        Self::new(Density::Uniform, beta0)
    }

    pub fn new(density: Density, beta0: f64) -> Result<Self> {
        if !(beta0 > 0.0) || !beta0.is_finite() {
            return Err(Error::Config(format!("mark bound beta0 must be positive, got {beta0}")));
        }
        let mut measure = LevyMeasure {
            density,
            beta0,
            cdf: Vec::new(),
        };
        if let Density::Expression(_) = measure.density {
            let h = 2.0 * beta0 / CDF_CELLS as f64;
            for k in 0..=CDF_CELLS {
                let theta = -beta0 + k as f64 * h;
                let v = measure.density_at(theta)?;
                if v < 0.0 {
                    return Err(Error::Config(format!(
                        "Lévy density is negative ({v}) at mark {theta}"
                    )));
                }
            }
            let mut acc = 0.0;
            measure.cdf.push(0.0);
            for k in 0..CDF_CELLS {
                let a = -beta0 + k as f64 * h;
                acc += adaptive_simpson(
                    |t| measure.density_unchecked(t),
                    a,
                    a + h,
                    DEFAULT_TOL / CDF_CELLS as f64,
                )?;
                measure.cdf.push(acc);
            }
        }
        let mass = measure.total_mass()?;
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::Config(format!(
                "Lévy measure must have total mass 1 on [-{beta0}, {beta0}], got {mass}"
            )));
        }
        Ok(measure)
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn density(&self) -> &Density {
        &self.density
    }

    pub fn density_at(&self, theta: f64) -> Result<f64> {
        if theta < -self.beta0 || theta > self.beta0 {
            return Ok(0.0);
        }
        match &self.density {
            Density::Uniform => Ok(0.5 / self.beta0),
            Density::Expression(e) => e.eval(&Bindings::new().with(Var::X, theta)),
        }
    }

    fn density_unchecked(&self, theta: f64) -> f64 {
        self.density_at(theta).unwrap_or(f64::NAN)
    }

    /// `π([lo, hi))` by adaptive quadrature, clipped to the mark space.
    pub fn measure(&self, interval: Interval) -> Result<f64> {
        let lo = interval.lo.max(-self.beta0);
        let hi = interval.hi.min(self.beta0);
        if !(lo < hi) {
            return Ok(0.0);
        }
        adaptive_simpson(|t| self.density_unchecked(t), lo, hi, DEFAULT_TOL).map_err(|e| {
            Error::numeric(
                "Lévy measure",
                format!("quadrature on [{lo}, {hi}) with tol {DEFAULT_TOL:e}: {e}"),
            )
        })
    }

    pub fn total_mass(&self) -> Result<f64> {
        self.measure(Interval {
            lo: -self.beta0,
            hi: self.beta0,
        })
    }

    /// Draws a mark θ ~ π.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v: f64 = rng.random();
        match &self.density {
            Density::Uniform => -self.beta0 + 2.0 * self.beta0 * v,
            Density::Expression(_) => {
                let total = *self.cdf.last().unwrap();
                let target = v * total;
                let k = self.cdf.partition_point(|&c| c <= target).clamp(1, CDF_CELLS);
                let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
                let h = 2.0 * self.beta0 / CDF_CELLS as f64;
                let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
                -self.beta0 + (k as f64 - 1.0 + frac) * h
            }
        }
    }
}

/// Jump-rate matrix `Q(x)`: nonnegative off-diagonals, zero row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    m: usize,
    entries: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn zeros(m: usize) -> Self {
        GeneratorMatrix {
            m,
            entries: vec![0.0; m * m],
        }
    }

    /// Builds from off-diagonal rates; diagonal entries of `rows` are ignored
    /// and recomputed as the negative row sum.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let mut q = GeneratorMatrix::zeros(m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Config(format!(
                    "generator row {i} has {} entries, expected {m}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if i != j {
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(Error::Config(format!(
                            "generator entry q[{i}][{j}] = {v} must be finite and nonnegative"
                        )));
                    }
                    q.entries[i * m + j] = v;
                }
            }
        }
        q.fix_diagonal();
        Ok(q)
    }

    fn fix_diagonal(&mut self) {
        let m = self.m;
        for i in 0..m {
            let off: f64 = (0..m).filter(|&j| j != i).map(|j| self.entries[i * m + j]).sum();
            self.entries[i * m + i] = -off;
        }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.m).map(|i| self.row(i).to_vec()).collect()
    }

    /// `[Q v]_i`.
    pub fn apply_row(&self, i: usize, v: &[f64]) -> f64 {
        self.row(i).iter().zip(v).map(|(q, v)| q * v).sum()
    }

    /// `max_i |q_ii|`.
    pub fn max_exit_rate(&self) -> f64 {
        (0..self.m).map(|i| self.get(i, i).abs()).fold(0.0, f64::max)
    }

    /// Largest `|Σ_j q_ij|` relative to the largest entry magnitude of the row.
    pub fn max_relative_row_sum(&self) -> f64 {
        (0..self.m)
            .map(|i| {
                let row = self.row(i);
                let scale = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let sum: f64 = row.iter().sum();
                if scale == 0.0 {
                    sum.abs()
                } else {
                    sum.abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Threshold chain defining the mark intervals `Δ_ij(x)`.
#[derive(Debug, Clone)]
pub struct RegimeGeometry {
    m: usize,
    table: Vec<Vec<Threshold>>,
    beta0: f64,
    domain: (f64, f64),
}

impl RegimeGeometry {
    /// Validates the chain ordering on [`VALIDATION_SAMPLES`] states of `domain`.
    pub fn new(table: Vec<Vec<Threshold>>, beta0: f64, domain: (f64, f64)) -> Result<Self> {
        let m = table.len();
        if m == 0 {
            return Err(Error::Config("regime count must be positive".into()));
        }
        for (i, row) in table.iter().enumerate() {
            if row.len() != m + 1 {
                return Err(Error::Config(format!(
                    "threshold row {i} has {} entries, expected m + 1 = {}",
                    row.len(),
                    m + 1
                )));
            }
        }
        if !(beta0 > 0.0) {
            return Err(Error::Config(format!("beta0 must be positive, got {beta0}")));
        }
        if !(domain.1 >= domain.0) {
            return Err(Error::Config(format!("empty state domain {domain:?}")));
        }
        let geometry = RegimeGeometry {
            m,
            table,
            beta0,
            domain,
        };
        for k in 0..VALIDATION_SAMPLES {
            let x = domain.0 + (domain.1 - domain.0) * k as f64 / (VALIDATION_SAMPLES - 1) as f64;
            geometry.check_chain(x)?;
        }
        Ok(geometry)
    }

    /// Geometry with constant thresholds realizing the constant rates of `q`
    /// under the uniform unit-mass measure on `[-β0, β0]`.
    pub fn from_constant_generator(q: &GeneratorMatrix, beta0: f64, domain: (f64, f64)) -> Result<Self> {
        let m = q.dim();
        let mut cursor = -beta0;
        let mut table = Vec::with_capacity(m);
        for i in 0..m {
            let mut row = vec![Threshold::Constant(cursor)];
            for j in 0..m {
                if j != i {
                    cursor += q.get(i, j) * 2.0 * beta0;
                }
                row.push(Threshold::Constant(cursor));
            }
            table.push(row);
        }
        if cursor > beta0 * (1.0 + 1e-12) {
            let total: f64 = (0..m).map(|i| -q.get(i, i)).sum();
            return Err(Error::Config(format!(
                "total exit intensity {total} exceeds the unit mass of the Lévy measure"
            )));
        }
        RegimeGeometry::new(table, beta0, domain)
    }

    pub fn regime_count(&self) -> usize {
        self.m
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn threshold(&self, i: usize, k: usize) -> &Threshold {
        &self.table[i][k]
    }

    /// Largest known Lipschitz constant over the table.
    pub fn lipschitz(&self) -> Option<f64> {
        self.table
            .iter()
            .flatten()
            .map(Threshold::lipschitz)
            .try_fold(0.0f64, |acc, l| l.map(|l| acc.max(l)))
    }

    fn row_values(&self, i: usize, x: f64) -> Result<Vec<f64>> {
        self.table[i].iter().map(|t| t.eval(x)).collect()
    }

    fn check_chain(&self, x: f64) -> Result<()> {
        let m = self.m;
        let bad = |i: usize, j: usize, reason: String| Error::GeometryInvalid { i, j, x, reason };
        let mut prev_end: Option<f64> = None;
        for i in 0..m {
            let row = self.row_values(i, x)?;
            let tol = |a: f64, b: f64| CHAIN_TOL * (1.0 + a.abs().max(b.abs()));
            for (k, &v) in row.iter().enumerate() {
                if !v.is_finite() || v.abs() > self.beta0 * (1.0 + CHAIN_TOL) {
                    return Err(bad(i, k, format!("threshold {v} outside [-{0}, {0}]", self.beta0)));
                }
            }
            for k in 0..m {
                if row[k] > row[k + 1] + tol(row[k], row[k + 1]) {
                    return Err(bad(
                        i,
                        k,
                        format!("thresholds decrease: β[{i}][{k}]={} > β[{i}][{}]={}", row[k], k + 1, row[k + 1]),
                    ));
                }
            }
            if (row[i] - row[i + 1]).abs() > tol(row[i], row[i + 1]) {
                return Err(bad(
                    i,
                    i,
                    format!("self-jump interval Δ_ii must be empty, got [{}, {})", row[i], row[i + 1]),
                ));
            }
            if let Some(end) = prev_end {
                if (end - row[0]).abs() > tol(end, row[0]) {
                    return Err(bad(
                        i,
                        0,
                        format!("row {i} starts at {} but row {} ends at {end}", row[0], i - 1),
                    ));
                }
            }
            prev_end = Some(row[m]);
        }
        Ok(())
    }

    /// `Δ_ij(x)`.
    pub fn interval(&self, i: usize, j: usize, x: f64) -> Result<Interval> {
        self.check_indices(i, j)?;
        if i == j {
            return Ok(Interval::EMPTY);
        }
        let lo = self.table[i][j].eval(x)?;
        let hi = self.table[i][j + 1].eval(x)?;
        if lo > hi + CHAIN_TOL * (1.0 + lo.abs()) {
            return Err(Error::GeometryInvalid {
                i,
                j,
                x,
                reason: format!("reversed interval [{lo}, {hi})"),
            });
        }
        Ok(Interval { lo, hi })
    }

    fn check_indices(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.m || j >= self.m {
            return Err(Error::Domain(format!(
                "regime pair ({i}, {j}) outside 0..{}",
                self.m
            )));
        }
        Ok(())
    }

    /// Post-jump regime `i + μ(x, i, θ)`.
    pub fn mark_to_jump(&self, x: f64, i: usize, theta: f64) -> Result<usize> {
        if theta < -self.beta0 || theta > self.beta0 {
            return Err(Error::Domain(format!(
                "mark {theta} outside [-{0}, {0}]",
                self.beta0
            )));
        }
        let mut hit: Option<usize> = None;
        for j in 0..self.m {
            if j == i {
                continue;
            }
            if self.interval(i, j, x)?.contains(theta) {
                if let Some(prev) = hit {
                    return Err(Error::GeometryInvalid {
                        i,
                        j,
                        x,
                        reason: format!("mark {theta} lies in both Δ_{i}{prev} and Δ_{i}{j}"),
                    });
                }
                hit = Some(j);
            }
        }
        Ok(hit.unwrap_or(i))
    }

    /// `Q(x)` with `q_ij(x) = π(Δ_ij(x))`.
    pub fn rate_matrix(&self, levy: &LevyMeasure, x: f64) -> Result<GeneratorMatrix> {
        let m = self.m;
        let mut q = GeneratorMatrix::zeros(m);
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    q.entries[i * m + j] = levy.measure(self.interval(i, j, x)?)?;
                }
            }
        }
        q.fix_diagonal();
        Ok(q)
    }

    /// `(π(Δ^δ \ Δ), π(Δ \ Δ^{-δ}))` at `x`, with the ball extremization done
    /// on [`BALL_SAMPLES`] equispaced states plus `x` itself.
    pub fn interval_measure_gap(
        &self,
        levy: &LevyMeasure,
        i: usize,
        j: usize,
        x: f64,
        delta: f64,
    ) -> Result<(f64, f64)> {
        self.check_indices(i, j)?;
        if !(delta > 0.0) || i == j {
            return Ok((0.0, 0.0));
        }
        let centre = self.interval(i, j, x)?;
        let mut union: Option<Interval> = None;
        let mut inter = centre;
        let mut any_empty = centre.is_empty();
        let mut visit = |y: f64| -> Result<()> {
            let d = self.interval(i, j, y)?;
            if d.is_empty() {
                any_empty = true;
            } else {
                union = Some(match union {
                    None => d,
                    Some(u) => Interval {
                        lo: u.lo.min(d.lo),
                        hi: u.hi.max(d.hi),
                    },
                });
            }
            inter = Interval {
                lo: inter.lo.max(d.lo),
                hi: inter.hi.min(d.hi),
            };
            Ok(())
        };
        visit(x)?;
        for k in 0..BALL_SAMPLES {
            let y = x - delta + 2.0 * delta * k as f64 / (BALL_SAMPLES - 1) as f64;
            visit(y)?;
        }
        let outer = union.unwrap_or(Interval::EMPTY);
        let inner = if any_empty { Interval::EMPTY } else { inter };

        let gap_out = if centre.is_empty() {
            levy.measure(outer)?
        } else if outer.is_empty() {
            0.0
        } else {
            levy.measure(Interval {
                lo: outer.lo,
                hi: centre.lo,
            })? + levy.measure(Interval {
                lo: centre.hi,
                hi: outer.hi,
            })?
        };
        let gap_in = if centre.is_empty() {
            0.0
        } else if inner.is_empty() {
            levy.measure(centre)?
        } else {
            levy.measure(Interval {
                lo: centre.lo,
                hi: inner.lo,
            })? + levy.measure(Interval {
                lo: inner.hi,
                hi: centre.hi,
            })?
        };
        Ok((gap_out, gap_in))
    }
}

/// Two-regime preset with `β_01(x) = base + amplitude·tanh(scale·x)` separating
/// `Δ_01 = [0, β_01(x))` from `Δ_10 = [β_01(x), upper)`.
///
/// With the uniform measure on `[-1, 1]`, `base = 0.2`, `amplitude = 0.1`,
/// `upper = 0.6`: `q_01(0) = 0.1` and `q_10(0) = 0.2`.
pub fn tanh_two_regime(base: f64, amplitude: f64, scale: f64, upper: f64, beta0: f64, domain: (f64, f64)) -> Result<RegimeGeometry> {
    let moving = Threshold::Tanh {
        base,
        amplitude,
        scale,
    };
    let table = vec![
        vec![Threshold::Constant(0.0), Threshold::Constant(0.0), moving.clone()],
        vec![moving, Threshold::Constant(upper), Threshold::Constant(upper)],
    ];
    RegimeGeometry::new(table, beta0, domain)
}

/// Two-regime preset with clamped affine thresholds (same layout as
/// [`tanh_two_regime`]).
pub fn affine_two_regime(intercept: f64, slope: f64, lo: f64, hi: f64, upper: f64, beta0: f64, domain: (f64, f64)) -> Result<RegimeGeometry> {
    let moving = Threshold::AffineClamped {
        intercept,
        slope,
        lo,
        hi,
    };
    let table = vec![
        vec![Threshold::Constant(0.0), Threshold::Constant(0.0), moving.clone()],
        vec![moving, Threshold::Constant(upper), Threshold::Constant(upper)],
    ];
    RegimeGeometry::new(table, beta0, domain)
}

/// Geometry in which no mark ever triggers a jump.
pub fn frozen(m: usize, beta0: f64, domain: (f64, f64)) -> Result<RegimeGeometry> {
    let table = (0..m)
        .map(|_| vec![Threshold::Constant(0.0); m + 1])
        .collect();
    RegimeGeometry::new(table, beta0, domain)
}
