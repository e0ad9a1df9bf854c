//! Wealth under a strategy field, simulated jointly with the factor.
//!
//! The factor takes Euler steps driven by the same increments as
//! [`crate::mc_oracle::simulate_factor`], so two strategies run with one seed
//! see common random numbers. Wealth moves by the exact exponential of its
//! frozen-coefficient increment, which keeps every path positive.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{StrategyError, StrategyField};
use crate::mc_oracle::{factor_step, mean_stderr, path_rng, time_steps, Increments, McParams};
use crate::model::MarketModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WealthOptions {
    pub mc: McParams,
    /// Number of time levels kept for the path summary (at least 2).
    pub record: usize,
}

impl Default for WealthOptions {
    fn default() -> Self {
        WealthOptions {
            mc: McParams::default(),
            record: 51,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WealthReport {
    pub x0: f64,
    pub y0: Vec<f64>,
    pub n_paths: usize,
    pub step: f64,
    pub n_steps: usize,
    pub seed: u64,
    /// Estimate of `E[int_0^T c^gamma X^gamma dt + X_T^gamma]`.
    pub j_hat: f64,
    pub j_stderr: f64,
    pub consumption_utility: f64,
    pub terminal_utility: f64,
    pub min_wealth: f64,
    /// Path nodes at which the field was read outside its grid box.
    pub clamped: usize,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub q05: Vec<f64>,
    pub q50: Vec<f64>,
    pub q95: Vec<f64>,
    /// Per-path utility, in path order.
    #[serde(skip)]
    pub per_path: Vec<f64>,
}

impl WealthReport {
    /// Writes `t, mean, q05, q50, q95`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,mean,q05,q50,q95")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[i], self.mean[i], self.q05[i], self.q50[i], self.q95[i]
            )?;
        }
        Ok(())
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

struct PathOut {
    j: f64,
    consumption: f64,
    terminal: f64,
    recorded: Vec<f64>,
    clamped: usize,
    min_x: f64,
}

pub fn simulate_wealth(
    field: &StrategyField,
    model: &MarketModel,
    x0: f64,
    y0: &[f64],
    opts: &WealthOptions,
) -> Result<WealthReport, StrategyError> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(StrategyError::NonPositiveWealth(x0));
    }
    if field.d() != model.d() || field.grid().m() != model.m() || y0.len() != model.m() {
        return Err(StrategyError::Invalid("strategy field, model and y0 shapes disagree".into()));
    }
    if (field.grid().horizon() - model.horizon()).abs() > 1e-12 * model.horizon() {
        return Err(StrategyError::Invalid("strategy field and model horizons differ".into()));
    }
    if opts.record < 2 {
        return Err(StrategyError::Invalid("record must be at least 2".into()));
    }
    let p = &opts.mc;
    if p.n_paths < 2 {
        return Err(StrategyError::Invalid(format!("need at least 2 paths, got {}", p.n_paths)));
    }
    let (d, m, g) = (model.d(), model.m(), model.gamma());
    let (n_steps, dt) = time_steps(0.0, model.horizon(), p.step)?;
    let levels: Vec<usize> = (0..opts.record)
        .map(|j| ((j * n_steps) as f64 / (opts.record - 1) as f64).round() as usize)
        .collect();

    let rows: Vec<PathOut> = (0..p.n_paths)
        .into_par_iter()
        .map_init(
            || (model.workspace(), Increments::new(d, m), vec![0.0; d]),
            |(ws, inc, pi), path| {
                let mut rng = path_rng(p.seed, path);
                let mut y = y0.to_vec();
                let mut lx = x0.ln();
                let mut recorded = Vec::with_capacity(levels.len());
                let mut next = 0;
                let mut clamped = 0;
                let mut min_x = x0;
                model
                    .evaluate(ws, 0.0, &y)
                    .map_err(|source| crate::mc_oracle::McError::Model { path, source })?;
                let (mut c, cl) = field.controls_at(0.0, &y, pi);
                clamped += cl as usize;
                let mut u_prev = c.powf(g) * (g * lx).exp();
                let mut integral = 0.0;
                while next < levels.len() && levels[next] == 0 {
                    recorded.push(x0);
                    next += 1;
                }
                for k in 0..n_steps {
                    inc.draw(model, &mut rng, dt);
                    let mut drift = ws.r - c;
                    let mut noise = 0.0;
                    for j in 0..d {
                        drift += pi[j] * ws.theta[j] - 0.5 * pi[j] * pi[j];
                        noise += pi[j] * inc.dw[j];
                    }
                    lx += drift * dt + noise;
                    factor_step(model, ws, inc, dt, &mut y);
                    let t = (k + 1) as f64 * dt;
                    model
                        .evaluate(ws, t, &y)
                        .map_err(|source| crate::mc_oracle::McError::Model { path, source })?;
                    let (cn, cl) = field.controls_at(t, &y, pi);
                    c = cn;
                    clamped += cl as usize;
                    let xg = (g * lx).exp();
                    let u = c.powf(g) * xg;
                    integral += 0.5 * dt * (u_prev + u);
                    u_prev = u;
                    let x = lx.exp();
                    min_x = min_x.min(x);
                    while next < levels.len() && levels[next] == k + 1 {
                        recorded.push(x);
                        next += 1;
                    }
                }
                let terminal = (g * lx).exp();
                Ok(PathOut {
                    j: integral + terminal,
                    consumption: integral,
                    terminal,
                    recorded,
                    clamped,
                    min_x,
                })
            },
        )
        .collect::<Result<_, StrategyError>>()?;

    let per_path: Vec<f64> = rows.iter().map(|r| r.j).collect();
    let (j_hat, j_stderr) = mean_stderr(&per_path);
    let n = p.n_paths as f64;
    let consumption_utility = rows.iter().map(|r| r.consumption).sum::<f64>() / n;
    let terminal_utility = rows.iter().map(|r| r.terminal).sum::<f64>() / n;
    let min_wealth = rows.iter().map(|r| r.min_x).fold(f64::INFINITY, f64::min);
    let clamped = rows.iter().map(|r| r.clamped).sum();
    if clamped > 0 {
        log::warn!("{clamped} path node(s) read the strategy outside its grid box");
    }
    let mut times = Vec::with_capacity(levels.len());
    let (mut mean, mut q05, mut q50, mut q95) = (vec![], vec![], vec![], vec![]);
    let mut col = Vec::with_capacity(p.n_paths);
    for (i, &k) in levels.iter().enumerate() {
        times.push(k as f64 * dt);
        col.clear();
        col.extend(rows.iter().map(|r| r.recorded[i]));
        mean.push(col.iter().sum::<f64>() / n);
        col.sort_by(f64::total_cmp);
        q05.push(quantile(&col, 0.05));
        q50.push(quantile(&col, 0.5));
        q95.push(quantile(&col, 0.95));
    }
    Ok(WealthReport {
        x0,
        y0: y0.to_vec(),
        n_paths: p.n_paths,
        step: dt,
        n_steps,
        seed: p.seed,
        j_hat,
        j_stderr,
        consumption_utility,
        terminal_utility,
        min_wealth,
        clamped,
        times,
        mean,
        q05,
        q50,
        q95,
        per_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::mc_oracle::{simulate_factor, with_workers};
    use crate::model::preset;

    fn opts(n_paths: usize, step: f64, seed: u64) -> WealthOptions {
        WealthOptions {
            mc: McParams { n_paths, step, seed },
            record: 11,
        }
    }

    #[test]
    fn riskless_growth_cancelled_by_consumption() {
        let mut cfg = preset("merton-constant").unwrap().config().clone();
        cfg.r = "1".into();
        cfg.mu = vec!["1".into()];
        let model = MarketModel::from_config(cfg).unwrap();
        let grid = Grid::uniform_1d(1.0, 11, -5.0, 5.0, 11).unwrap();
        let field = StrategyField::custom(&model, &grid, |_, _, _, pi| {
            pi[0] = 0.0;
            1.0
        })
        .unwrap();
        let rep = simulate_wealth(&field, &model, 1.0, &[0.0], &opts(20, 0.01, 0)).unwrap();
        assert!(rep.mean.iter().all(|&x| x == 1.0));
        assert!((rep.j_hat - 2.0).abs() < 1e-12, "{}", rep.j_hat);
        assert!(rep.j_stderr < 1e-12);
    }

    #[test]
    fn idle_wealth_without_consumption() {
        let mut cfg = preset("merton-constant").unwrap().config().clone();
        cfg.r = "0".into();
        cfg.mu = vec!["0".into()];
        let model = MarketModel::from_config(cfg).unwrap();
        let grid = Grid::uniform_1d(1.0, 11, -5.0, 5.0, 11).unwrap();
        let field = StrategyField::custom(&model, &grid, |_, _, _, pi| {
            pi[0] = 0.0;
            0.0
        })
        .unwrap();
        let rep = simulate_wealth(&field, &model, 1.0, &[0.0], &opts(20, 0.01, 0)).unwrap();
        assert_eq!(rep.j_hat, 1.0);
        assert_eq!(rep.min_wealth, 1.0);
    }

    #[test]
    fn lognormal_moment_without_consumption() {
        let model = preset("merton-constant").unwrap().with_scalars(None, Some(1.0), None, None).unwrap();
        let grid = Grid::uniform_1d(1.0, 11, -5.0, 5.0, 11).unwrap();
        let field = StrategyField::custom(&model, &grid, |_, _, ws, pi| {
            pi[0] = ws.theta[0] / (1.0 - 0.75);
            0.0
        })
        .unwrap();
        let x0 = 2.0;
        let rep = simulate_wealth(&field, &model, x0, &[0.0], &opts(40_000, 0.05, 8)).unwrap();
        let (r, th, g) = (0.01, 0.02, 0.75);
        let exact = x0.powf(g) * (g * (r + th * th / (2.0 * (1.0 - g)))).exp();
        assert!((rep.j_hat - exact).abs() <= 3.0 * rep.j_stderr, "{} vs {exact}", rep.j_hat);
        assert!(rep.min_wealth > 0.0);
    }

    #[test]
    fn shares_increments_with_simulate_factor() {
        let model = preset("merton-constant").unwrap();
        let p = McParams {
            n_paths: 5,
            step: 0.1,
            seed: 4,
        };
        let fp = simulate_factor(&model, &[0.3], &p).unwrap();
        let grid = Grid::uniform_1d(1.0, 11, -10.0, 10.0, 11).unwrap();
        let field = StrategyField::custom(&model, &grid, |_, _, _, pi| {
            pi[0] = 1.0;
            0.0
        })
        .unwrap();
        let rep = simulate_wealth(&field, &model, 1.0, &[0.3], &WealthOptions { mc: p, record: 11 }).unwrap();
        assert_eq!(rep.n_steps, fp.n_steps);
        for path in 0..5 {
            let w: f64 = (0..fp.n_steps).map(|k| fp.dw_at(path, k)[0]).sum();
            let lx = (0.01 + 0.02 - 0.5) * 1.0 + w;
            let expect = (0.75 * lx).exp();
            assert!((rep.per_path[path] - expect).abs() < 1e-12 * expect);
        }
    }

    #[test]
    fn deterministic_across_workers() {
        let model = preset("paper-example").unwrap();
        let grid = Grid::uniform_1d(1.0, 21, -6.0, 6.0, 41).unwrap();
        let field = StrategyField::merton(&model, &grid).unwrap();
        let o = opts(200, 0.02, 3);
        let a = with_workers(1, || simulate_wealth(&field, &model, 1.0, &[0.0], &o)).unwrap().unwrap();
        let b = with_workers(8, || simulate_wealth(&field, &model, 1.0, &[0.0], &o)).unwrap().unwrap();
        assert_eq!(a.per_path, b.per_path);
        assert_eq!(a.q50, b.q50);
    }

    #[test]
    fn rejects_bad_input() {
        let model = preset("paper-example").unwrap();
        let grid = Grid::uniform_1d(1.0, 11, -1.0, 1.0, 11).unwrap();
        let field = StrategyField::merton(&model, &grid).unwrap();
        assert!(matches!(
            simulate_wealth(&field, &model, 0.0, &[0.0], &opts(10, 0.1, 0)),
            Err(StrategyError::NonPositiveWealth(_))
        ));
        assert!(simulate_wealth(&field, &model, 1.0, &[0.0, 1.0], &opts(10, 0.1, 0)).is_err());
    }
}
