//! Uniform tensor grids on `[0,T] x box` and functions sampled on them.
//!
//! Storage is time-major: node `(k, s)` lives at `k * space_len + s`, with
//! the space index `s` row-major over the factor coordinates (last fastest).

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("grid functions live on different grids")]
    Mismatch,
    #[error("point t={t}, y={y:?} lies more than one cell outside the grid box")]
    OutOfBox { t: f64, y: Vec<f64> },
    #[error("non-finite value {value} at node t={t}, y={y:?}")]
    NonFinite { t: f64, y: Vec<f64>, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    horizon: f64,
    n_t: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    n_y: Vec<usize>,
}

impl Grid {
    pub fn new(horizon: f64, n_t: usize, lo: Vec<f64>, hi: Vec<f64>, n_y: Vec<usize>) -> Result<Self, GridError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(GridError::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        if n_t < 2 {
            return Err(GridError::Invalid("need at least 2 time levels".into()));
        }
        let m = n_y.len();
        if m == 0 || lo.len() != m || hi.len() != m {
            return Err(GridError::Invalid("box bounds and node counts must share one dimension".into()));
        }
        if n_y.iter().any(|&n| n < 3) {
            return Err(GridError::Invalid("need at least 3 nodes per factor dimension".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(GridError::Invalid("box needs finite lo < hi".into()));
        }
        Ok(Grid { horizon, n_t, lo, hi, n_y })
    }

    /// One-factor grid on `[0,T] x [lo,hi]`.
    pub fn uniform_1d(horizon: f64, n_t: usize, lo: f64, hi: f64, n_y: usize) -> Result<Self, GridError> {
        Grid::new(horizon, n_t, vec![lo], vec![hi], vec![n_y])
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn m(&self) -> usize {
        self.n_y.len()
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_y(&self) -> &[usize] {
        &self.n_y
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn dt(&self) -> f64 {
        self.horizon / (self.n_t - 1) as f64
    }

    pub fn dy(&self, dim: usize) -> f64 {
        (self.hi[dim] - self.lo[dim]) / (self.n_y[dim] - 1) as f64
    }

    /// Time of level `k`; the last level is exactly `T`.
    pub fn t(&self, k: usize) -> f64 {
        if k + 1 == self.n_t {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    /// Coordinate `j` of dimension `dim`; the last node is exactly `hi`.
    pub fn y(&self, dim: usize, j: usize) -> f64 {
        if j + 1 == self.n_y[dim] {
            self.hi[dim]
        } else {
            self.lo[dim] + j as f64 * self.dy(dim)
        }
    }

    pub fn space_len(&self) -> usize {
        self.n_y.iter().product()
    }

    pub fn len(&self) -> usize {
        self.n_t * self.space_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Factor coordinates of space index `s`.
    pub fn space_point(&self, s: usize, out: &mut [f64]) {
        let mut rem = s;
        for dim in (0..self.m()).rev() {
            let j = rem % self.n_y[dim];
            rem /= self.n_y[dim];
            out[dim] = self.y(dim, j);
        }
    }

    /// Stride of dimension `dim` in the space index.
    fn stride(&self, dim: usize) -> usize {
        self.n_y[dim + 1..].iter().product()
    }

    /// Same grid with every spacing halved.
    pub fn refined(&self) -> Grid {
        Grid {
            n_t: 2 * self.n_t - 1,
            n_y: self.n_y.iter().map(|n| 2 * n - 1).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

/// Cell index and weight along one axis, plus whether the point was clamped.
fn locate(x: f64, lo: f64, h: f64, n: usize) -> Result<(usize, f64, bool), ()> {
    let hi = lo + h * (n - 1) as f64;
    let mut clamped = false;
    let mut x = x;
    if !(x >= lo && x <= hi) {
        if !x.is_finite() || x < lo - h || x > hi + h {
            return Err(());
        }
        clamped = true;
        x = x.clamp(lo, hi);
    }
    let u = (x - lo) / h;
    let i = (u.floor() as usize).min(n - 2);
    Ok((i, u - i as f64, clamped))
}

#[inline]
fn lerp(a: f64, b: f64, u: f64) -> f64 {
    a + u * (b - a)
}

/// Like [`locate`] but never fails: any point is projected onto the box.
fn locate_clamped(x: f64, lo: f64, h: f64, n: usize) -> (usize, f64, bool) {
    let hi = lo + h * (n - 1) as f64;
    let inside = x >= lo && x <= hi;
    let xc = if x.is_nan() { lo } else { x.clamp(lo, hi) };
    let u = (xc - lo) / h;
    let i = (u.floor() as usize).min(n - 2);
    (i, u - i as f64, !inside)
}

impl GridFunction {
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Invalid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        let f = GridFunction { grid, values };
        if let Some(i) = f.values.iter().position(|v| !v.is_finite()) {
            let (t, y) = f.node_coords(i);
            return Err(GridError::NonFinite { t, y, value: f.values[i] });
        }
        Ok(f)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        let n = grid.len();
        GridFunction { grid, values: vec![c; n] }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, &[f64]) -> f64) -> Result<Self, GridError> {
        let mut values = Vec::with_capacity(grid.len());
        let mut y = vec![0.0; grid.m()];
        for k in 0..grid.n_t() {
            let t = grid.t(k);
            for s in 0..grid.space_len() {
                grid.space_point(s, &mut y);
                values.push(f(t, &y));
            }
        }
        GridFunction::from_values(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Values at time level `k`.
    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.grid.space_len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn at(&self, k: usize, s: usize) -> f64 {
        self.values[k * self.grid.space_len() + s]
    }

    pub fn node_coords(&self, i: usize) -> (f64, Vec<f64>) {
        let n = self.grid.space_len();
        let mut y = vec![0.0; self.grid.m()];
        self.grid.space_point(i % n, &mut y);
        (self.grid.t(i / n), y)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Nested `a + u (b - a)` over the cell corners; exact on constants.
    fn multilinear(&self, cells: &[(usize, f64)], tk: (usize, f64)) -> f64 {
        let m = self.grid.m();
        let n = self.grid.space_len();
        let mut vals: Vec<f64> = (0..1usize << (m + 1))
            .map(|corner| {
                let k = tk.0 + (corner & 1);
                let mut s = 0;
                for (dim, &(j, _)) in cells.iter().enumerate() {
                    s = s * self.grid.n_y[dim] + j + (corner >> (dim + 1) & 1);
                }
                self.values[k * n + s]
            })
            .collect();
        let mut width = vals.len();
        for bit in (0..=m).rev() {
            let half = width / 2;
            let u = if bit == 0 { tk.1 } else { cells[bit - 1].1 };
            for c in 0..half {
                vals[c] = lerp(vals[c], vals[c + half], u);
            }
            width = half;
        }
        vals[0]
    }

    /// Multilinear interpolation. Points up to one cell outside the box are
    /// clamped onto it (returned flag set); anything further is an error.
    pub fn interpolate(&self, t: f64, y: &[f64]) -> Result<(f64, bool), GridError> {
        let g = &self.grid;
        let out = || GridError::OutOfBox { t, y: y.to_vec() };
        if y.len() != g.m() {
            return Err(GridError::Invalid(format!("expected {} factor coordinates", g.m())));
        }
        let (k, ut, mut clamped) = locate(t, 0.0, g.dt(), g.n_t).map_err(|_| out())?;
        let mut cells = Vec::with_capacity(g.m());
        for dim in 0..g.m() {
            let (j, u, c) = locate(y[dim], g.lo[dim], g.dy(dim), g.n_y[dim]).map_err(|_| out())?;
            clamped |= c;
            cells.push((j, u));
        }
        Ok((self.multilinear(&cells, (k, ut)), clamped))
    }

    /// Interpolation with unconditional clamping onto the box; the flag
    /// reports whether clamping happened.
    pub fn interpolate_clamped(&self, t: f64, y: &[f64]) -> (f64, bool) {
        let g = &self.grid;
        let (k, ut, mut clamped) = locate_clamped(t, 0.0, g.dt(), g.n_t);
        if g.m() == 1 {
            let (j, u, c) = locate_clamped(y[0], g.lo[0], g.dy(0), g.n_y[0]);
            let n = g.n_y[0];
            let v = &self.values;
            let a = lerp(v[k * n + j], v[k * n + j + 1], u);
            let b = lerp(v[(k + 1) * n + j], v[(k + 1) * n + j + 1], u);
            return (lerp(a, b, ut), clamped | c);
        }
        let mut cells = Vec::with_capacity(g.m());
        for dim in 0..g.m() {
            let (j, u, c) = locate_clamped(y[dim], g.lo[dim], g.dy(dim), g.n_y[dim]);
            clamped |= c;
            cells.push((j, u));
        }
        (self.multilinear(&cells, (k, ut)), clamped)
    }

    /// `D_y f`, one grid function per factor coordinate: centred differences
    /// inside, second-order one-sided differences on the box faces.
    pub fn gradient_y(&self) -> Vec<GridFunction> {
        let g = &self.grid;
        let n = g.space_len();
        (0..g.m())
            .map(|dim| {
                let h = g.dy(dim);
                let stride = g.stride(dim);
                let ny = g.n_y[dim];
                let mut out = vec![0.0; self.values.len()];
                for k in 0..g.n_t {
                    let base = k * n;
                    let v = &self.values[base..base + n];
                    for s in 0..n {
                        let j = (s / stride) % ny;
                        let at = |off: isize| v[(s as isize + off * stride as isize) as usize];
                        out[base + s] = if j == 0 {
                            (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
                        } else if j == ny - 1 {
                            (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h)
                        } else {
                            (at(1) - at(-1)) / (2.0 * h)
                        };
                    }
                }
                GridFunction {
                    grid: g.clone(),
                    values: out,
                }
            })
            .collect()
    }

    /// Largest `|f - g|` over the nodes.
    pub fn sup_diff(&self, other: &GridFunction) -> Result<f64, GridError> {
        if self.grid != other.grid {
            return Err(GridError::Mismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |a, (x, y)| a.max((x - y).abs())))
    }

    /// Writes `t,y1..ym,value` rows, time-major, with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let m = self.grid.m();
        let mut header = String::from("t");
        for i in 1..=m {
            header.push_str(&format!(",y{i}"));
        }
        writeln!(w, "{header},value")?;
        let n = self.grid.space_len();
        let mut y = vec![0.0; m];
        for (i, v) in self.values.iter().enumerate() {
            self.grid.space_point(i % n, &mut y);
            write!(w, "{:.16e}", self.grid.t(i / n))?;
            for c in &y {
                write!(w, ",{c:.16e}")?;
            }
            writeln!(w, ",{v:.16e}")?;
        }
        Ok(())
    }
}

/// `max_nodes e^{-kappa (T - t)} (|f - g| + |D_y f - D_y g|)`.
pub fn weighted_distance(f: &GridFunction, g: &GridFunction, kappa: f64) -> Result<f64, GridError> {
    if f.grid != g.grid {
        return Err(GridError::Mismatch);
    }
    let diff = GridFunction {
        grid: f.grid.clone(),
        values: f.values.iter().zip(&g.values).map(|(a, b)| a - b).collect(),
    };
    Ok(weighted_norm(&diff, kappa))
}

/// `max_nodes e^{-kappa (T - t)} (|f| + |D_y f|)`.
pub fn weighted_norm(f: &GridFunction, kappa: f64) -> f64 {
    let grads = f.gradient_y();
    let g = &f.grid;
    let n = g.space_len();
    let mut best = 0.0f64;
    for k in 0..g.n_t {
        let w = (-kappa * (g.horizon - g.t(k))).exp();
        for s in 0..n {
            let i = k * n + s;
            let grad = if grads.len() == 1 {
                grads[0].values[i].abs()
            } else {
                grads.iter().map(|d| d.values[i].powi(2)).sum::<f64>().sqrt()
            };
            best = best.max(w * (f.values[i].abs() + grad));
        }
    }
    best
}
