//! Grid-backed value and strategy fields.
//!
//! Storage is level-major: index `(n·m + i)·n_x + k` for time node `n`,
//! regime `i`, space node `k`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::model::{Control, ControlSet, Feedback};

/// First derivative at node `k`: central inside, one-sided second order at
/// the edges.
pub fn d1(v: &[f64], k: usize, dx: f64) -> f64 {
    let n = v.len();
    if k == 0 {
        (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dx)
    } else if k == n - 1 {
        (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dx)
    } else {
        (v[k + 1] - v[k - 1]) / (2.0 * dx)
    }
}

/// Second derivative at node `k`: central inside, one-sided second order at
/// the edges (first order when only three nodes exist).
pub fn d2(v: &[f64], k: usize, dx: f64) -> f64 {
    let n = v.len();
    let h2 = dx * dx;
    if k == 0 {
        if n >= 4 {
            (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
        } else {
            (v[0] - 2.0 * v[1] + v[2]) / h2
        }
    } else if k == n - 1 {
        if n >= 4 {
            (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / h2
        } else {
            (v[n - 1] - 2.0 * v[n - 2] + v[n - 3]) / h2
        }
    } else {
        (v[k - 1] - 2.0 * v[k] + v[k + 1]) / h2
    }
}

/// JSON header preceding a binary field dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub kind: String,
    pub regimes: usize,
    pub n_x: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub times: Vec<f64>,
    pub components: usize,
    pub layout: String,
}

/// Values `V(s, x, i)` on a time window × spatial grid × regimes.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    time: TimeGrid,
    space: SpatialGrid,
    m: usize,
    data: Vec<f64>,
}

impl ValueField {
    pub fn zeros(time: TimeGrid, space: SpatialGrid, m: usize) -> Self {
        let len = time.len() * m * space.len();
        ValueField {
            time,
            space,
            m,
            data: vec![0.0; len],
        }
    }

    pub fn from_fn(time: TimeGrid, space: SpatialGrid, m: usize, f: impl Fn(f64, f64, usize) -> f64) -> Self {
        let mut out = ValueField::zeros(time, space, m);
        for n in 0..out.time.len() {
            for i in 0..m {
                for k in 0..out.space.len() {
                    let v = f(out.time.t(n), out.space.x(k), i);
                    out.set(n, k, i, v);
                }
            }
        }
        out
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn space(&self) -> &SpatialGrid {
        &self.space
    }

    pub fn regimes(&self) -> usize {
        self.m
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn idx(&self, n: usize, k: usize, i: usize) -> usize {
        (n * self.m + i) * self.space.len() + k
    }

    pub fn get(&self, n: usize, k: usize, i: usize) -> f64 {
        self.data[self.idx(n, k, i)]
    }

    pub fn set(&mut self, n: usize, k: usize, i: usize, v: f64) {
        let j = self.idx(n, k, i);
        self.data[j] = v;
    }

    /// Spatial profile of regime `i` at node `n`.
    pub fn slice(&self, n: usize, i: usize) -> &[f64] {
        let a = self.idx(n, 0, i);
        &self.data[a..a + self.space.len()]
    }

    pub fn slice_mut(&mut self, n: usize, i: usize) -> &mut [f64] {
        let a = self.idx(n, 0, i);
        let nx = self.space.len();
        &mut self.data[a..a + nx]
    }

    /// All regimes at node `n` (`m · n_x` values, regime-major).
    pub fn level(&self, n: usize) -> &[f64] {
        let a = self.idx(n, 0, 0);
        &self.data[a..a + self.m * self.space.len()]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [f64] {
        let a = self.idx(n, 0, 0);
        let len = self.m * self.space.len();
        &mut self.data[a..a + len]
    }

    /// Regime vector `(V(s_n, x_k, 1), …, V(s_n, x_k, m))`.
    pub fn regime_vector(&self, n: usize, k: usize) -> Vec<f64> {
        (0..self.m).map(|i| self.get(n, k, i)).collect()
    }

    pub fn dx(&self, n: usize, k: usize, i: usize) -> f64 {
        d1(self.slice(n, i), k, self.space.dx())
    }

    pub fn dxx(&self, n: usize, k: usize, i: usize) -> f64 {
        d2(self.slice(n, i), k, self.space.dx())
    }

    /// Linear interpolation in `x` at node `n`.
    pub fn interpolate(&self, n: usize, x: f64, i: usize) -> f64 {
        let (k, w) = self.space.locate(x);
        let v = self.slice(n, i);
        (1.0 - w) * v[k] + w * v[k + 1]
    }

    /// Sup-norm distance over the interior on the common global time nodes.
    pub fn sup_diff(&self, other: &ValueField) -> Result<f64> {
        if !self.space.same_nodes(&other.space) || self.m != other.m {
            return Err(Error::Config("field comparison on mismatched grids".into()));
        }
        let a0 = self.time.offset().max(other.time.offset());
        let a1 = (self.time.offset() + self.time.steps()).min(other.time.offset() + other.time.steps());
        let mut worst = 0.0f64;
        for g in a0..=a1 {
            let (n, n2) = (g - self.time.offset(), g - other.time.offset());
            for i in 0..self.m {
                for k in self.space.interior() {
                    worst = worst.max((self.get(n, k, i) - other.get(n2, k, i)).abs());
                }
            }
        }
        Ok(worst)
    }

    /// Long-format CSV `s,x,i,value` with regimes numbered from 1.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "s,x,i,value")?;
        for n in 0..self.time.len() {
            for i in 0..self.m {
                for k in 0..self.space.len() {
                    writeln!(w, "{},{},{},{}", self.time.t(n), self.space.x(k), i + 1, self.get(n, k, i))?;
                }
            }
        }
        Ok(())
    }

    pub fn header(&self) -> DumpHeader {
        DumpHeader {
            kind: "value_field".into(),
            regimes: self.m,
            n_x: self.space.len(),
            x_min: self.space.x_min(),
            x_max: self.space.x_max(),
            times: self.time.nodes().to_vec(),
            components: 1,
            layout: "(n*regimes+i)*n_x+k".into(),
        }
    }

    /// JSON header line followed by little-endian `f64` values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = serde_json::to_string(&self.header()).map_err(std::io::Error::other)?;
        writeln!(w, "{header}")?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dump written by [`ValueField::write_binary`]; the time grid is
    /// rebuilt from the stored node list.
    pub fn read_binary<R: BufRead>(mut r: R) -> Result<(DumpHeader, Vec<f64>)> {
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| Error::Config(format!("reading dump header: {e}")))?;
        let header: DumpHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::Config(format!("bad dump header: {e}")))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::Config(format!("reading dump body: {e}")))?;
        let expected = header.times.len() * header.regimes * header.n_x * header.components;
        if bytes.len() != expected * 8 {
            return Err(Error::Config(format!(
                "dump body has {} bytes, expected {}",
                bytes.len(),
                expected * 8
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((header, values))
    }
}

/// Controls `Ψ(s, x, i)` on grid nodes, bilinear in `(s, x)` between them
/// and projected onto `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyField {
    time: TimeGrid,
    space: SpatialGrid,
    m: usize,
    controls: ControlSet,
    data: Vec<Control>,
}

impl StrategyField {
    pub fn new(time: TimeGrid, space: SpatialGrid, m: usize, controls: ControlSet) -> Self {
        let len = time.len() * m * space.len();
        StrategyField {
            time,
            space,
            m,
            controls,
            data: vec![Control::default(); len],
        }
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn space(&self) -> &SpatialGrid {
        &self.space
    }

    pub fn regimes(&self) -> usize {
        self.m
    }

    pub fn control_set(&self) -> &ControlSet {
        &self.controls
    }

    fn idx(&self, n: usize, k: usize, i: usize) -> usize {
        (n * self.m + i) * self.space.len() + k
    }

    pub fn get(&self, n: usize, k: usize, i: usize) -> Control {
        self.data[self.idx(n, k, i)]
    }

    pub fn set(&mut self, n: usize, k: usize, i: usize, c: Control) {
        let j = self.idx(n, k, i);
        self.data[j] = c;
    }

    /// Controls of all regimes at node `n`.
    pub fn level(&self, n: usize) -> &[Control] {
        let a = self.idx(n, 0, 0);
        &self.data[a..a + self.m * self.space.len()]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [Control] {
        let a = self.idx(n, 0, 0);
        let len = self.m * self.space.len();
        &mut self.data[a..a + len]
    }

    /// Bilinear evaluation, exact at nodes.
    pub fn eval(&self, s: f64, x: f64, i: usize) -> Result<Control> {
        let h = self.time.max_dt();
        if s < self.time.start() - 1e-9 * h || s > self.time.end() + 1e-9 * h || i >= self.m {
            return Err(Error::Domain(format!(
                "strategy queried at (s={s}, i={i}) outside [{}, {}] × 0..{}",
                self.time.start(),
                self.time.end(),
                self.m
            )));
        }
        let n = match self.time.index_of(s) {
            Some(n) => n,
            None => self.time.floor_index(s),
        };
        let (k, w) = self.space.locate(x);
        let at = |n: usize| -> Control {
            let a = self.get(n, k, i);
            let b = self.get(n, k + 1, i);
            if w == 0.0 {
                a
            } else {
                Control([(1.0 - w) * a.0[0] + w * b.0[0], (1.0 - w) * a.0[1] + w * b.0[1]])
            }
        };
        let c0 = at(n);
        let c = if n + 1 < self.time.len() && s != self.time.t(n) {
            let ws = ((s - self.time.t(n)) / self.time.dt(n)).clamp(0.0, 1.0);
            let c1 = at(n + 1);
            Control([(1.0 - ws) * c0.0[0] + ws * c1.0[0], (1.0 - ws) * c0.0[1] + ws * c1.0[1]])
        } else {
            c0
        };
        Ok(self.controls.clamp(c))
    }

    /// Sup-norm distance between controls over the interior on common nodes.
    pub fn sup_diff(&self, other: &StrategyField) -> Result<f64> {
        if !self.space.same_nodes(&other.space) || self.m != other.m {
            return Err(Error::Config("strategy comparison on mismatched grids".into()));
        }
        let a0 = self.time.offset().max(other.time.offset());
        let a1 = (self.time.offset() + self.time.steps()).min(other.time.offset() + other.time.steps());
        let mut worst = 0.0f64;
        for g in a0..=a1 {
            let (n, n2) = (g - self.time.offset(), g - other.time.offset());
            for i in 0..self.m {
                for k in self.space.interior() {
                    worst = worst.max(self.get(n, k, i).distance(&other.get(n2, k, i)));
                }
            }
        }
        Ok(worst)
    }

    /// Long-format CSV `s,x,i,u,c` with regimes numbered from 1.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "s,x,i,u,c")?;
        for n in 0..self.time.len() {
            for i in 0..self.m {
                for k in 0..self.space.len() {
                    let c = self.get(n, k, i);
                    writeln!(w, "{},{},{},{},{}", self.time.t(n), self.space.x(k), i + 1, c.0[0], c.0[1])?;
                }
            }
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = DumpHeader {
            kind: "strategy_field".into(),
            regimes: self.m,
            n_x: self.space.len(),
            x_min: self.space.x_min(),
            x_max: self.space.x_max(),
            times: self.time.nodes().to_vec(),
            components: 2,
            layout: "((n*regimes+i)*n_x+k)*2+component".into(),
        };
        let header = serde_json::to_string(&header).map_err(std::io::Error::other)?;
        writeln!(w, "{header}")?;
        for c in &self.data {
            w.write_all(&c.0[0].to_le_bytes())?;
            w.write_all(&c.0[1].to_le_bytes())?;
        }
        Ok(())
    }
}

impl Feedback for StrategyField {
    fn control(&self, s: f64, x: f64, i: usize) -> Result<Control> {
        self.eval(s, x, i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grids() -> (TimeGrid, SpatialGrid) {
        (TimeGrid::uniform(1.0, 4).unwrap(), SpatialGrid::new(0.0, 2.0, 9).unwrap())
    }

    #[test]
    fn derivative_stencils_exact_on_quadratics() {
        let dx = 0.25;
        let v: Vec<f64> = (0..9).map(|k| {
            let x = k as f64 * dx;
            3.0 * x * x - x + 2.0
        }).collect();
        for k in 0..9 {
            let x = k as f64 * dx;
            assert!((d1(&v, k, dx) - (6.0 * x - 1.0)).abs() < 1e-12, "k={k}");
            assert!((d2(&v, k, dx) - 6.0).abs() < 1e-10, "k={k}");
        }
    }

    #[test]
    fn layout_and_slices() {
        let (t, x) = grids();
        let f = ValueField::from_fn(t, x, 2, |s, x, i| s + 10.0 * x + 100.0 * i as f64);
        assert_eq!(f.get(2, 3, 1), 0.5 + 7.5 + 100.0);
        assert_eq!(f.slice(2, 1)[3], f.get(2, 3, 1));
        assert_eq!(f.level(2).len(), 18);
        assert_eq!(f.regime_vector(1, 0), vec![0.25, 100.25]);
        assert!((f.interpolate(0, 0.125, 0) - 1.25).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let (t, x) = grids();
        let f = ValueField::from_fn(t, x, 2, |s, x, i| (s * x).sin() + i as f64);
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let (h, values) = ValueField::read_binary(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(h, f.header());
        assert_eq!(values, f.data());
    }

    #[test]
    fn strategy_exact_at_nodes_and_clamped() {
        let (t, x) = grids();
        let mut st = StrategyField::new(t.clone(), x.clone(), 1, ControlSet::interval(-1.0, 1.0));
        for n in 0..t.len() {
            for k in 0..x.len() {
                st.set(n, k, 0, Control::scalar(0.1 * n as f64 + 0.05 * k as f64));
            }
        }
        assert_eq!(st.eval(t.t(2), x.x(3), 0).unwrap(), st.get(2, 3, 0));
        let mid = st.eval(0.5 * (t.t(1) + t.t(2)), x.x(3), 0).unwrap().u();
        assert!((mid - (0.15 + 0.15)).abs() < 1e-12);
        // node value 0.4 + 0.4 = 0.8 stays, beyond-range interpolation clamps
        st.set(4, 8, 0, Control::scalar(5.0));
        assert_eq!(st.eval(1.0, 2.0, 0).unwrap().u(), 1.0);
        assert!(st.eval(1.5, 0.0, 0).is_err());
    }
}
