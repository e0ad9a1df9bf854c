//! Pointwise residual of the quasilinear equation for `h`.

use crate::grid::{Grid, GridFunction};
use crate::model::MarketModel;

use super::{FkError, FkOperator};

/// `h_t + Q h + alpha h_y + (beta^2/2) h_yy + h^{1-q*} / q*` on interior
/// factor nodes (zero on the box faces). `h_t` is centred, and one-sided
/// second order on the first and last time levels.
pub fn hjb_residual(h: &GridFunction, model: &MarketModel) -> Result<GridFunction, FkError> {
    let op = FkOperator::new(model, h.grid())?;
    residual_with(&op, h)
}

pub fn residual_with(op: &FkOperator, h: &GridFunction) -> Result<GridFunction, FkError> {
    let g: &Grid = op.grid();
    if h.grid() != g {
        return Err(FkError::Grid(crate::grid::GridError::Mismatch));
    }
    let n = g.n_y()[0];
    let nt = g.n_t();
    let dt = g.dt();
    let dy = g.dy(0);
    let v = h.values();
    let (q, a) = (op.q_values(), op.alpha_values());
    let d = op.diffusion();
    let qs = op.q_star();
    let mut out = vec![0.0; v.len()];
    for k in 0..nt {
        for j in 1..n - 1 {
            let i = k * n + j;
            let ht = if nt < 3 {
                (v[n + j] - v[j]) / dt
            } else if k == 0 {
                (-3.0 * v[i] + 4.0 * v[i + n] - v[i + 2 * n]) / (2.0 * dt)
            } else if k == nt - 1 {
                (3.0 * v[i] - 4.0 * v[i - n] + v[i - 2 * n]) / (2.0 * dt)
            } else {
                (v[i + n] - v[i - n]) / (2.0 * dt)
            };
            let hy = (v[i + 1] - v[i - 1]) / (2.0 * dy);
            let hyy = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (dy * dy);
            out[i] = ht + q[i] * v[i] + a[i] * hy + d * hyy + v[i].powf(1.0 - qs) / qs;
        }
    }
    Ok(GridFunction::from_values(g.clone(), out)?)
}
