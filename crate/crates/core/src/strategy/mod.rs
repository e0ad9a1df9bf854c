//! Optimal investment and consumption built from a solved `h`.
//!
//! With `z = x^gamma h^eps` the controls are
//!
//! ```text
//! pi* = theta/(1-gamma) + eps sqrt(1-rho^2) beta sigma*' D_y h / ((1-gamma) h)
//! c*  = h^{-q*}
//! ```
//!
//! and the optimal wealth follows `dX = a* X dt + X b*' dW` with
//! `a* = r + pi*' theta - c*` and `b* = pi*`.

mod hamiltonian;
mod wealth;

use serde::Serialize;

use crate::constants::{optimal_rate, BoundsError, BoundsLedger};
use crate::fk_solver::{BoundCheck, FkError, FkOperator, SolveResult};
use crate::grid::{Grid, GridError, GridFunction};
use crate::mc_oracle::McError;
use crate::model::{MarketModel, ModelError, ModelWorkspace};

pub use hamiltonian::{hamiltonian_check, HamiltonianProbe, HamiltonianReport};
pub use wealth::{simulate_wealth, WealthOptions, WealthReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StrategyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    Fk(#[from] FkError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("wealth must be positive, got {0}")]
    NonPositiveWealth(f64),
    #[error("{0}")]
    Invalid(String),
}

/// Controls tabulated on a grid.
#[derive(Debug, Clone)]
pub struct StrategyField {
    grid: Grid,
    pi: Vec<GridFunction>,
    c: GridFunction,
    a: GridFunction,
    h: Option<GridFunction>,
    grad: Option<Vec<GridFunction>>,
}

fn check_model_grid(model: &MarketModel, grid: &Grid) -> Result<(), StrategyError> {
    if model.m() != grid.m() {
        return Err(StrategyError::Invalid(format!(
            "model has {} factors, grid has {}",
            model.m(),
            grid.m()
        )));
    }
    if (grid.horizon() - model.horizon()).abs() > 1e-12 * model.horizon() {
        return Err(StrategyError::Invalid(format!(
            "grid horizon {} differs from model horizon {}",
            grid.horizon(),
            model.horizon()
        )));
    }
    Ok(())
}

/// `sigma*' g` for `g` in R^m.
pub(crate) fn sigma_star_t(model: &MarketModel, g: &[f64], out: &mut [f64]) {
    let (d, ss) = (model.d(), model.sigma_star());
    for (j, o) in out.iter_mut().enumerate() {
        *o = g.iter().enumerate().map(|(i, gi)| ss[i * d + j] * gi).sum();
    }
}

impl StrategyField {
    /// The optimal controls for `h`, with `D_y h` from [`GridFunction::gradient_y`].
    pub fn optimal(h: &GridFunction, model: &MarketModel) -> Result<Self, StrategyError> {
        let grid = h.grid().clone();
        check_model_grid(model, &grid)?;
        if let Some(v) = h.values().iter().find(|v| !(**v >= 1.0 && v.is_finite())) {
            return Err(StrategyError::Invalid(format!("h must be finite and >= 1, found {v}")));
        }
        let grad = h.gradient_y();
        let (m, gamma, qs) = (model.m(), model.gamma(), model.q_star());
        let coef = model.eps() * model.sqrt_one_minus_rho2() * model.beta() / (1.0 - gamma);
        let mut g = vec![0.0; m];
        let mut mix = vec![0.0; model.d()];
        let field = Self::build(model, &grid, |i, _, _, ws, pi| {
            let hv = h.values()[i];
            for (k, gk) in g.iter_mut().enumerate() {
                *gk = grad[k].values()[i];
            }
            sigma_star_t(model, &g, &mut mix);
            for (j, p) in pi.iter_mut().enumerate() {
                *p = ws.theta[j] / (1.0 - gamma) + coef * mix[j] / hv;
            }
            hv.powf(-qs)
        })?;
        Ok(StrategyField {
            h: Some(h.clone()),
            grad: Some(grad),
            ..field
        })
    }

    /// Merton controls: the optimal field for `h = 1`, i.e.
    /// `pi = theta/(1-gamma)` and `c = 1`.
    pub fn merton(model: &MarketModel, grid: &Grid) -> Result<Self, StrategyError> {
        Self::optimal(&GridFunction::constant(grid.clone(), 1.0), model)
    }

    /// A user strategy: `rule(t, y, ws, pi)` fills `pi` and returns `c`; `ws`
    /// holds the model evaluated at `(t, y)`.
    pub fn custom(
        model: &MarketModel,
        grid: &Grid,
        mut rule: impl FnMut(f64, &[f64], &ModelWorkspace, &mut [f64]) -> f64,
    ) -> Result<Self, StrategyError> {
        check_model_grid(model, grid)?;
        Self::build(model, grid, |_, t, y, ws, pi| rule(t, y, ws, pi))
    }

    fn build(
        model: &MarketModel,
        grid: &Grid,
        mut node: impl FnMut(usize, f64, &[f64], &ModelWorkspace, &mut [f64]) -> f64,
    ) -> Result<Self, StrategyError> {
        let d = model.d();
        let n = grid.len();
        let mut pi = vec![Vec::with_capacity(n); d];
        let mut c = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut ws = model.workspace();
        let mut y = vec![0.0; grid.m()];
        let mut p = vec![0.0; d];
        for k in 0..grid.n_t() {
            let t = grid.t(k);
            for s in 0..grid.space_len() {
                grid.space_point(s, &mut y);
                model.evaluate(&mut ws, t, &y)?;
                let i = k * grid.space_len() + s;
                let cv = node(i, t, &y, &ws, &mut p);
                if !(cv >= 0.0 && cv.is_finite()) || p.iter().any(|v| !v.is_finite()) {
                    return Err(StrategyError::Invalid(format!(
                        "inadmissible control at t={t}, y={y:?}: pi={p:?}, c={cv}"
                    )));
                }
                let drift: f64 = ws.r + p.iter().zip(&ws.theta).map(|(p, th)| p * th).sum::<f64>() - cv;
                for (j, pj) in p.iter().enumerate() {
                    pi[j].push(*pj);
                }
                c.push(cv);
                a.push(drift);
            }
        }
        let wrap = |v: Vec<f64>| GridFunction::from_values(grid.clone(), v);
        Ok(StrategyField {
            grid: grid.clone(),
            pi: pi.into_iter().map(wrap).collect::<Result<_, _>>()?,
            c: wrap(c)?,
            a: wrap(a)?,
            h: None,
            grad: None,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn d(&self) -> usize {
        self.pi.len()
    }

    /// `pi*`, one grid function per stock.
    pub fn pi(&self) -> &[GridFunction] {
        &self.pi
    }

    pub fn c(&self) -> &GridFunction {
        &self.c
    }

    /// Wealth drift `a* = r + pi*' theta - c*`.
    pub fn a_star(&self) -> &GridFunction {
        &self.a
    }

    /// Wealth volatility `b*`; identical to `pi*`.
    pub fn b_star(&self) -> &[GridFunction] {
        &self.pi
    }

    /// The `h` this field was built from, if any.
    pub fn h(&self) -> Option<&GridFunction> {
        self.h.as_ref()
    }

    pub fn gradient(&self) -> Option<&[GridFunction]> {
        self.grad.as_deref()
    }

    /// Controls at an arbitrary point by clamped interpolation; returns `c`
    /// and whether clamping happened.
    pub fn controls_at(&self, t: f64, y: &[f64], pi: &mut [f64]) -> (f64, bool) {
        let mut clamped = false;
        for (p, f) in pi.iter_mut().zip(&self.pi) {
            let (v, cl) = f.interpolate_clamped(t, y);
            *p = v;
            clamped |= cl;
        }
        let (c, cl) = self.c.interpolate_clamped(t, y);
        (c.max(0.0), clamped | cl)
    }

    /// Writes `t, y1..ym, pi_1..pi_d, c, a_star, b_1..b_d`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let g = &self.grid;
        let mut head = vec!["t".to_string()];
        head.extend((1..=g.m()).map(|i| format!("y{i}")));
        head.extend((1..=self.d()).map(|j| format!("pi_{j}")));
        head.push("c".into());
        head.push("a_star".into());
        head.extend((1..=self.d()).map(|j| format!("b_{j}")));
        writeln!(w, "{}", head.join(","))?;
        let mut y = vec![0.0; g.m()];
        let mut row = String::new();
        for k in 0..g.n_t() {
            for s in 0..g.space_len() {
                g.space_point(s, &mut y);
                let i = k * g.space_len() + s;
                row.clear();
                row.push_str(&format!("{:.16e}", g.t(k)));
                for v in &y {
                    row.push_str(&format!(",{v:.16e}"));
                }
                for p in &self.pi {
                    row.push_str(&format!(",{:.16e}", p.values()[i]));
                }
                row.push_str(&format!(",{:.16e},{:.16e}", self.c.values()[i], self.a.values()[i]));
                for p in &self.pi {
                    row.push_str(&format!(",{:.16e}", p.values()[i]));
                }
                writeln!(w, "{row}")?;
            }
        }
        Ok(())
    }
}

/// `z(t, x, y) = x^gamma h(t, y)^eps`.
pub fn value_function(h: &GridFunction, model: &MarketModel, t: f64, x: f64, y: &[f64]) -> Result<f64, StrategyError> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(StrategyError::NonPositiveWealth(x));
    }
    let (hv, _) = h.interpolate(t, y)?;
    Ok(x.powf(model.gamma()) * hv.powf(model.eps()))
}

/// Sup over nodes of `|pi_a - pi_b| + |c_a - c_b|` (Euclidean norm on `pi`).
pub fn control_gap(a: &StrategyField, b: &StrategyField) -> Result<f64, StrategyError> {
    if a.grid != b.grid || a.d() != b.d() {
        return Err(StrategyError::Grid(GridError::Mismatch));
    }
    let mut gap = 0.0f64;
    for i in 0..a.grid.len() {
        let dp: f64 = a
            .pi
            .iter()
            .zip(&b.pi)
            .map(|(p, q)| (p.values()[i] - q.values()[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        gap = gap.max(dp + (a.c.values()[i] - b.c.values()[i]).abs());
    }
    Ok(gap)
}

/// `ln(B1* U*_n)`.
pub fn log_strategy_bound(n: usize, ledger: &BoundsLedger) -> Result<f64, StrategyError> {
    let rate = optimal_rate(n, ledger)?;
    Ok(ledger.b1_star.ln() + rate.log_u_star)
}

/// Control-gap certificates: for every recorded `n`, the gap between the
/// controls of `h_n` and of the final iterate against `B1* U*_n`. Uses the
/// stored history when present and otherwise replays the iteration.
pub fn strategy_bound_checks(model: &MarketModel, result: &SolveResult) -> Result<Vec<BoundCheck>, StrategyError> {
    let final_field = StrategyField::optimal(&result.h, model)?;
    let check = |n: usize, hn: &GridFunction| -> Result<BoundCheck, StrategyError> {
        let gap = control_gap(&StrategyField::optimal(hn, model)?, &final_field)?;
        Ok(BoundCheck::new(n, gap, log_strategy_bound(n, &result.ledger)?))
    };
    let mut out = Vec::with_capacity(result.n_done);
    if let Some(hist) = &result.history {
        for (i, hn) in hist.iter().enumerate() {
            out.push(check(i + 1, hn)?);
        }
        return Ok(out);
    }
    let op = FkOperator::new(model, result.h.grid())?;
    let mut hn = GridFunction::constant(result.h.grid().clone(), 1.0);
    for n in 1..=result.n_done {
        hn = op.apply(&hn)?.u;
        out.push(check(n, &hn)?);
    }
    Ok(out)
}

/// Bound checks that need no iterates, for models without a PDE path.
///
/// Every iterate lies in the class `f >= 1`, `|f| + |D_y f| <= r*`, so the
/// sup gap is at most `2 r*`, and the control gap at most
/// `2 (B1* - q*) + 1` (the `pi` part scales `|D_y f / f| <= r*`, and
/// `c = f^{-q*}` lies in `(0, 1]`). Returns the sup-gap and the control
/// checks for `n = 1..=n_max` with these envelopes as the observed values.
pub fn envelope_checks(ledger: &BoundsLedger, n_max: usize) -> Result<(Vec<BoundCheck>, Vec<BoundCheck>), StrategyError> {
    let gap = 2.0 * ledger.r_star;
    let control = 2.0 * (ledger.b1_star - ledger.q_star) + 1.0;
    let mut sup_gap = Vec::with_capacity(n_max);
    let mut control_gap = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        sup_gap.push(BoundCheck::new(n, gap, ledger.log_sup_gap_bound(n)));
        control_gap.push(BoundCheck::new(n, control, log_strategy_bound(n, ledger)?));
    }
    Ok((sup_gap, control_gap))
}

/// Summary of [`strategy_bound_checks`].
#[derive(Debug, Clone, Serialize)]
pub struct StrategyBoundSummary {
    pub checks: Vec<BoundCheck>,
    pub all_hold: bool,
}

impl From<Vec<BoundCheck>> for StrategyBoundSummary {
    fn from(checks: Vec<BoundCheck>) -> Self {
        let all_hold = checks.iter().all(|c| c.holds);
        StrategyBoundSummary { checks, all_hold }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::preset;

    #[test]
    fn unit_h_gives_merton() {
        let model = preset("paper-example").unwrap();
        let grid = Grid::uniform_1d(1.0, 11, -2.0, 2.0, 21).unwrap();
        let f = StrategyField::merton(&model, &grid).unwrap();
        assert!(f.c().values().iter().all(|&c| c == 1.0));
        let mut y = [0.0];
        for k in 0..11 {
            for s in 0..21 {
                grid.space_point(s, &mut y);
                let th = model.risk_premium(grid.t(k), &y).unwrap()[0];
                let i = k * 21 + s;
                assert_eq!(f.pi()[0].values()[i], th / 0.25);
            }
        }
    }

    #[test]
    fn merton_constant_controls() {
        let model = preset("merton-constant").unwrap();
        let grid = Grid::uniform_1d(1.0, 21, -3.0, 3.0, 31).unwrap();
        let qs = model.q_star();
        let h = GridFunction::from_fn(grid, |t, _| 1.0 + 0.8 * (1.0 - t)).unwrap();
        let f = StrategyField::optimal(&h, &model).unwrap();
        for (i, &p) in f.pi()[0].values().iter().enumerate() {
            assert!((p - 0.08).abs() < 1e-15, "{p}");
            let hv = h.values()[i];
            assert_eq!(f.c().values()[i], hv.powf(-qs));
            assert!(f.c().values()[i] > 0.0 && f.c().values()[i] <= 1.0);
            let a = 0.01 + 0.08 * 0.02 - hv.powf(-qs);
            assert!((f.a_star().values()[i] - a).abs() < 1e-15);
        }
    }

    #[test]
    fn full_correlation_drops_the_hedge() {
        let model = preset("paper-example").unwrap().with_scalars(None, Some(1.0), None, None).unwrap();
        let grid = Grid::uniform_1d(1.0, 11, -2.0, 2.0, 21).unwrap();
        let h = GridFunction::from_fn(grid.clone(), |t, y| 1.0 + (1.0 - t) * (1.0 + y[0].sin())).unwrap();
        let f = StrategyField::optimal(&h, &model).unwrap();
        let m = StrategyField::merton(&model, &grid).unwrap();
        assert_eq!(f.pi()[0], m.pi()[0]);
    }

    #[test]
    fn value_function_examples() {
        let model = preset("paper-example").unwrap();
        let grid = Grid::uniform_1d(1.0, 11, -2.0, 2.0, 21).unwrap();
        let one = GridFunction::constant(grid.clone(), 1.0);
        assert_eq!(value_function(&one, &model, 0.3, 1.0, &[0.1]).unwrap(), 1.0);
        let h = GridFunction::from_fn(grid.clone(), |t, _| if t < 1.0 { 1.1 } else { 1.0 }).unwrap();
        assert_eq!(value_function(&h, &model, 1.0, 3.0, &[0.5]).unwrap(), 3f64.powf(0.75));
        let z = value_function(&h, &model, 0.0, 2.0, &[0.0]).unwrap();
        // eps = 4/13 here; 2^{3/4} 1.1^{4/13} = 1.7318437537...
        assert!((z - 1.731_843_753_7).abs() < 1e-9, "{z}");
        assert!(matches!(
            value_function(&h, &model, 0.0, 0.0, &[0.0]),
            Err(StrategyError::NonPositiveWealth(_))
        ));
        assert!(value_function(&h, &model, 0.0, 1.0, &[5.0]).is_err());
    }

    #[test]
    fn gap_is_symmetric_and_zero_on_self() {
        let model = preset("paper-example").unwrap();
        let grid = Grid::uniform_1d(1.0, 11, -2.0, 2.0, 21).unwrap();
        let h = GridFunction::from_fn(grid.clone(), |t, y| 1.0 + (1.0 - t) * y[0].cos().abs()).unwrap();
        let a = StrategyField::optimal(&h, &model).unwrap();
        let b = StrategyField::merton(&model, &grid).unwrap();
        assert_eq!(control_gap(&a, &a).unwrap(), 0.0);
        let g = control_gap(&a, &b).unwrap();
        assert!(g > 0.0);
        assert_eq!(g, control_gap(&b, &a).unwrap());
    }

    #[test]
    fn csv_layout() {
        let model = preset("two-asset-sv").unwrap();
        let grid = Grid::new(1.0, 3, vec![-1.0, -1.0], vec![1.0, 1.0], vec![3, 3]).unwrap();
        let f = StrategyField::merton(&model, &grid).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,y1,y2,pi_1,pi_2,c,a_star,b_1,b_2");
        assert_eq!(lines.count(), 27);
        assert!(text.ends_with('\n'));
    }
}
