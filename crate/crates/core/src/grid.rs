//! Time and space discretizations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodes `t_0 < … < t_K` of a uniform time grid, possibly a contiguous
/// window of a larger global grid (`offset` is the global index of node 0).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    offset: usize,
}

impl TimeGrid {
    /// `steps + 1` equispaced nodes on `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        let nodes = (0..=steps)
            .map(|n| if n == steps { horizon } else { horizon * n as f64 / steps as f64 })
            .collect();
        Ok(TimeGrid { nodes, offset: 0 })
    }

    /// Window `[a, b]` (inclusive, local indices) sharing node values.
    pub fn window(&self, a: usize, b: usize) -> TimeGrid {
        assert!(a <= b && b < self.nodes.len(), "time window {a}..={b} out of range");
        TimeGrid {
            nodes: self.nodes[a..=b].to_vec(),
            offset: self.offset + a,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn t(&self, n: usize) -> f64 {
        self.nodes[n]
    }

    pub fn start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn end(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn dt(&self, n: usize) -> f64 {
        self.nodes[n + 1] - self.nodes[n]
    }

    pub fn max_dt(&self) -> f64 {
        (0..self.steps()).map(|n| self.dt(n)).fold(0.0, f64::max)
    }

    /// Local index of the node equal to `t` (relative tolerance 1e-9 of the
    /// spacing), if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let h = self.max_dt().max(f64::MIN_POSITIVE);
        let k = self.nodes.partition_point(|&v| v < t - 1e-9 * h);
        (k < self.nodes.len() && (self.nodes[k] - t).abs() <= 1e-9 * h).then_some(k)
    }

    /// Largest `n` with `t_n <= t`, clamped to the grid.
    pub fn floor_index(&self, t: f64) -> usize {
        self.nodes.partition_point(|&v| v <= t).saturating_sub(1).min(self.nodes.len() - 1)
    }
}

/// Condition imposed at a truncated spatial edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// `V_xx = 0` (second difference vanishes).
    #[default]
    LinearExtrapolation,
    /// `x V_x = degree · V`, exact for values homogeneous of that degree.
    Homogeneous(f64),
}

/// Uniform grid on `[x_min, x_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    x_min: f64,
    x_max: f64,
    n: usize,
    dx: f64,
    pub lower: Boundary,
    pub upper: Boundary,
    /// nodes at each edge excluded from error norms
    pub buffer: usize,
}

impl SpatialGrid {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Config(format!("spatial grid needs at least 3 nodes, got {n}")));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::Config(format!("bad spatial domain [{x_min}, {x_max}]")));
        }
        Ok(SpatialGrid {
            x_min,
            x_max,
            n,
            dx: (x_max - x_min) / (n - 1) as f64,
            lower: Boundary::LinearExtrapolation,
            upper: Boundary::LinearExtrapolation,
            buffer: 1,
        })
    }

    pub fn with_boundary(mut self, b: Boundary) -> Self {
        self.lower = b;
        self.upper = b;
        self
    }

    pub fn with_buffer(mut self, buffer: usize) -> Self {
        self.buffer = buffer.max(1);
        self
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn x(&self, k: usize) -> f64 {
        if k == self.n - 1 {
            self.x_max
        } else {
            self.x_min + k as f64 * self.dx
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.x(k)).collect()
    }

    /// Nodes used by error norms: everything outside the buffer zone.
    pub fn interior(&self) -> std::ops::Range<usize> {
        let b = self.buffer.min((self.n - 1) / 2);
        b..self.n - b
    }

    /// Cell index `k` and weight `w` with `x ≈ (1-w)·x_k + w·x_{k+1}`,
    /// clamped to the domain.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        if !(x > self.x_min) {
            return (0, 0.0);
        }
        if x >= self.x_max {
            return (self.n - 2, 1.0);
        }
        let r = (x - self.x_min) / self.dx;
        let k = (r.floor() as usize).min(self.n - 2);
        (k, (r - k as f64).clamp(0.0, 1.0))
    }

    /// Same node positions, no boundary or buffer differences.
    pub fn same_nodes(&self, other: &SpatialGrid) -> bool {
        self.n == other.n && self.x_min == other.x_min && self.x_max == other.x_max
    }
}
