//! The Feynman-Kac map `f -> L_f`, evaluated through its linear PDE
//!
//! ```text
//! u_t + Q u + alpha u_y + (beta^2/2) u_yy + f^{1-q*} / q* = 0,   u(T, .) = 1
//! ```
//!
//! with Crank-Nicolson in time and centred differences in `y`. On the box
//! faces the equation is imposed with `u_yy = 0` (the solution is taken to
//! be locally linear in `y` there) and a one-sided second-order `u_y`. The
//! face rows carry three entries, so each step is a small banded solve.
//!
//! Imposing a vanishing third derivative instead (a one-sided `u_yy`) makes
//! the step matrix strongly non-normal: powers of the CN step grow by a factor
//! of several thousand before decaying, which shows up as a roundoff floor
//! near `1e-12` in the fixed-point increments.

use crate::grid::{Grid, GridFunction};
use crate::model::MarketModel;

use super::band::BandMatrix;
use super::FkError;

/// `Q` and `alpha` tabulated on a one-factor grid.
#[derive(Debug, Clone)]
pub struct FkOperator {
    grid: Grid,
    q: Vec<f64>,
    alpha: Vec<f64>,
    diffusion: f64,
    q_star: f64,
}

/// Result of one operator application.
#[derive(Debug, Clone)]
pub struct Applied {
    pub u: GridFunction,
    /// Nodes raised to 1 after the solve.
    pub clamped: usize,
    /// Largest amount removed by clamping.
    pub max_undershoot: f64,
}

impl FkOperator {
    pub fn new(model: &MarketModel, grid: &Grid) -> Result<Self, FkError> {
        if model.m() != 1 || grid.m() != 1 {
            return Err(FkError::UnsupportedDimension(model.m().max(grid.m())));
        }
        if grid.n_y()[0] < 5 {
            return Err(FkError::Invalid("the PDE grid needs at least 5 factor nodes".into()));
        }
        if (grid.horizon() - model.horizon()).abs() > 1e-12 * model.horizon() {
            return Err(FkError::Invalid(format!(
                "grid horizon {} differs from model horizon {}",
                grid.horizon(),
                model.horizon()
            )));
        }
        let mut ws = model.workspace();
        let n = grid.len();
        let mut q = Vec::with_capacity(n);
        let mut alpha = Vec::with_capacity(n);
        let ny = grid.n_y()[0];
        for k in 0..grid.n_t() {
            let t = grid.t(k);
            for j in 0..ny {
                model.evaluate(&mut ws, t, &[grid.y(0, j)])?;
                q.push(ws.q);
                alpha.push(ws.alpha[0]);
            }
        }
        Ok(FkOperator {
            grid: grid.clone(),
            q,
            alpha,
            diffusion: 0.5 * model.beta() * model.beta(),
            q_star: model.q_star(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `Q` at every node, time-major.
    pub fn q_values(&self) -> &[f64] {
        &self.q
    }

    /// `alpha` at every node, time-major.
    pub fn alpha_values(&self) -> &[f64] {
        &self.alpha
    }

    pub fn diffusion(&self) -> f64 {
        self.diffusion
    }

    pub fn q_star(&self) -> f64 {
        self.q_star
    }

    /// `(A u)_j` for the spatial operator `A u = Q u + alpha u_y + D u_yy`
    /// at time level `k`.
    fn apply_spatial(&self, k: usize, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        let h = self.grid.dy(0);
        let (ih2, i2h) = (1.0 / (h * h), 0.5 / h);
        let d = self.diffusion;
        let base = k * n;
        for j in 0..n {
            let (q, a) = (self.q[base + j], self.alpha[base + j]);
            // On the faces u_yy = 0 and u_y is one-sided.
            let (uy, uyy) = if j == 0 {
                ((-3.0 * u[0] + 4.0 * u[1] - u[2]) * i2h, 0.0)
            } else if j == n - 1 {
                ((3.0 * u[j] - 4.0 * u[j - 1] + u[j - 2]) * i2h, 0.0)
            } else {
                ((u[j + 1] - u[j - 1]) * i2h, (u[j + 1] - 2.0 * u[j] + u[j - 1]) * ih2)
            };
            out[j] = q * u[j] + a * uy + d * uyy;
        }
    }

    /// Applies the map to `f` (which must be `>= 1` on the operator's grid).
    pub fn apply(&self, f: &GridFunction) -> Result<Applied, FkError> {
        let g = &self.grid;
        if f.grid() != g {
            return Err(FkError::Grid(crate::grid::GridError::Mismatch));
        }
        let n = g.n_y()[0];
        let nt = g.n_t();
        let dt = g.dt();
        let h = g.dy(0);
        let (ih2, i2h) = (1.0 / (h * h), 0.5 / h);
        let d = self.diffusion;
        let half = 0.5 * dt;
        let expo = 1.0 - self.q_star;
        let inv_q = 1.0 / self.q_star;
        let fv = f.values();
        if let Some(i) = fv.iter().position(|&v| !(v >= 1.0 && v.is_finite())) {
            let (t, y) = f.node_coords(i);
            return Err(FkError::Invalid(format!(
                "operator input must be finite and >= 1, got {} at t={t}, y={y:?}",
                fv[i]
            )));
        }

        let mut u = vec![0.0; nt * n];
        u[(nt - 1) * n..].fill(1.0);
        let mut src_next: Vec<f64> = fv[(nt - 1) * n..].iter().map(|v| v.powf(expo) * inv_q).collect();
        let mut src = vec![0.0; n];
        let mut au = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        let mut mat = BandMatrix::new(n, 2, 2);

        for k in (0..nt - 1).rev() {
            for j in 0..n {
                src[j] = fv[k * n + j].powf(expo) * inv_q;
            }
            let next = &u[(k + 1) * n..(k + 2) * n];
            self.apply_spatial(k + 1, next, &mut au);
            for j in 0..n {
                rhs[j] = next[j] + half * au[j] + half * (src[j] + src_next[j]);
            }

            // I - dt/2 A at level k.
            let base = k * n;
            mat.clear();
            for j in 1..n - 1 {
                let (q, a) = (self.q[base + j], self.alpha[base + j]);
                mat.set(j, j - 1, -half * (d * ih2 - a * i2h));
                mat.set(j, j, 1.0 - half * (q - 2.0 * d * ih2));
                mat.set(j, j + 1, -half * (d * ih2 + a * i2h));
            }
            let (q, a) = (self.q[base], self.alpha[base]);
            mat.set(0, 0, 1.0 - half * (q - 3.0 * a * i2h));
            mat.set(0, 1, -half * 4.0 * a * i2h);
            mat.set(0, 2, half * a * i2h);
            let l = n - 1;
            let (q, a) = (self.q[base + l], self.alpha[base + l]);
            mat.set(l, l, 1.0 - half * (q + 3.0 * a * i2h));
            mat.set(l, l - 1, half * 4.0 * a * i2h);
            mat.set(l, l - 2, -half * a * i2h);

            if !mat.factor() {
                return Err(FkError::Singular { t: g.t(k) });
            }
            mat.solve(&mut rhs);
            if let Some(j) = rhs.iter().position(|v| !v.is_finite()) {
                return Err(FkError::NonFinite {
                    t: g.t(k),
                    y: g.y(0, j),
                    value: rhs[j],
                });
            }
            u[base..base + n].copy_from_slice(&rhs);
            std::mem::swap(&mut src, &mut src_next);
        }

        let mut clamped = 0;
        let mut max_undershoot = 0.0f64;
        for v in &mut u {
            if *v < 1.0 {
                clamped += 1;
                max_undershoot = max_undershoot.max(1.0 - *v);
                *v = 1.0;
            }
        }
        let u = GridFunction::from_values(g.clone(), u)?;
        Ok(Applied {
            u,
            clamped,
            max_undershoot,
        })
    }
}
