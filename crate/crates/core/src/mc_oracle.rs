//! Euler-Maruyama simulation of the factor and of the auxiliary process
//! `d eta = alpha dt + beta dU`, and a Monte Carlo evaluation of the
//! Feynman-Kac map used as an independent check on the PDE solver.
//!
//! Every path draws from its own ChaCha8 stream, selected by the path index
//! under the master seed, and reductions run in path order, so results do not
//! depend on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{GridError, GridFunction};
use crate::model::{MarketModel, ModelError, ModelWorkspace};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum McError {
    #[error("path {path}: {source}")]
    Model {
        path: usize,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{0}")]
    Invalid(String),
}

/// Path count, requested step and master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McParams {
    pub n_paths: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for McParams {
    fn default() -> Self {
        McParams {
            n_paths: 100_000,
            step: 1.0 / 2000.0,
            seed: 0,
        }
    }
}

/// Generator for path `path` under `seed`.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Runs `f` on a dedicated pool of `workers` threads (`0` = rayon default).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R, McError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| McError::Invalid(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Uniform time steps covering `[t0, t1]` no longer than `step`.
pub(crate) fn time_steps(t0: f64, t1: f64, step: f64) -> Result<(usize, f64), McError> {
    let span = t1 - t0;
    if !(span > 0.0) {
        return Err(McError::Invalid(format!("start time {t0} must lie before {t1}")));
    }
    if !(step > 0.0 && step <= span * (1.0 + 1e-12)) {
        return Err(McError::Invalid(format!("step {step} must lie in (0, {span}]")));
    }
    let n = ((span / step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    Ok((n, span / n as f64))
}

fn check_params(p: &McParams) -> Result<(), McError> {
    if p.n_paths < 2 {
        return Err(McError::Invalid(format!("need at least 2 paths, got {}", p.n_paths)));
    }
    Ok(())
}

/// Sample mean and standard error, summed in index order.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Terminal states of the auxiliary process and the pathwise `int Q du`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathBatch {
    pub t0: f64,
    pub y0: Vec<f64>,
    pub step: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// `n_paths x m`, path-major.
    pub terminal: Vec<f64>,
    /// Trapezoidal `int_t^horizon Q(u, eta_u) du` per path.
    pub int_q: Vec<f64>,
}

impl PathBatch {
    pub fn terminal_of(&self, path: usize) -> &[f64] {
        let m = self.y0.len();
        &self.terminal[path * m..(path + 1) * m]
    }
}

/// One Euler-Maruyama path of `eta` from `(t0, y0)`. `visit` sees every node
/// `(k, t_k, eta_k, Q_k)`; returns the trapezoidal integral of `Q`.
#[allow(clippy::too_many_arguments)]
fn eta_path(
    model: &MarketModel,
    ws: &mut ModelWorkspace,
    rng: &mut ChaCha8Rng,
    t0: f64,
    y: &mut [f64],
    n_steps: usize,
    dt: f64,
    noise: f64,
    mut visit: impl FnMut(usize, f64, &[f64], f64),
) -> Result<f64, ModelError> {
    let sd = noise * dt.sqrt();
    let mut int_q = 0.0;
    model.evaluate(ws, t0, y)?;
    let mut q_prev = ws.q;
    visit(0, t0, y, q_prev);
    for k in 0..n_steps {
        for (i, yi) in y.iter_mut().enumerate() {
            let xi: f64 = StandardNormal.sample(rng);
            *yi += ws.alpha[i] * dt + sd * xi;
        }
        let t = t0 + (k + 1) as f64 * dt;
        model.evaluate(ws, t, y)?;
        int_q += 0.5 * dt * (q_prev + ws.q);
        q_prev = ws.q;
        visit(k + 1, t, y, q_prev);
    }
    Ok(int_q)
}

fn check_start(model: &MarketModel, t: f64, y: &[f64], horizon: f64) -> Result<(), McError> {
    if y.len() != model.m() {
        return Err(McError::Invalid(format!("expected {} factor coordinates", model.m())));
    }
    if !(horizon <= model.horizon() * (1.0 + 1e-12)) || t < 0.0 {
        return Err(McError::Invalid(format!(
            "need 0 <= t < horizon <= T, got t={t}, horizon={horizon}, T={}",
            model.horizon()
        )));
    }
    Ok(())
}

/// Simulates `eta^{t,y}` up to `horizon` with the model's `beta`.
pub fn simulate_eta(model: &MarketModel, t: f64, y: &[f64], horizon: f64, p: &McParams) -> Result<PathBatch, McError> {
    simulate_eta_with_noise(model, t, y, horizon, p, model.beta())
}

/// [`simulate_eta`] with the noise scale replacing `beta` (zero allowed).
pub fn simulate_eta_with_noise(
    model: &MarketModel,
    t: f64,
    y: &[f64],
    horizon: f64,
    p: &McParams,
    noise: f64,
) -> Result<PathBatch, McError> {
    check_params(p)?;
    check_start(model, t, y, horizon)?;
    let (n_steps, dt) = time_steps(t, horizon, p.step)?;
    let m = model.m();
    let rows: Vec<(Vec<f64>, f64)> = (0..p.n_paths)
        .into_par_iter()
        .map_init(
            || model.workspace(),
            |ws, path| {
                let mut rng = path_rng(p.seed, path);
                let mut state = y.to_vec();
                let iq = eta_path(model, ws, &mut rng, t, &mut state, n_steps, dt, noise, |_, _, _, _| {})
                    .map_err(|source| McError::Model { path, source })?;
                Ok((state, iq))
            },
        )
        .collect::<Result<_, McError>>()?;
    let mut terminal = Vec::with_capacity(p.n_paths * m);
    let mut int_q = Vec::with_capacity(p.n_paths);
    for (s, iq) in rows {
        terminal.extend_from_slice(&s);
        int_q.push(iq);
    }
    Ok(PathBatch {
        t0: t,
        y0: y.to_vec(),
        step: dt,
        n_steps,
        n_paths: p.n_paths,
        seed: p.seed,
        terminal,
        int_q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// Path nodes at which `f` was read outside its grid box.
    pub clamped: usize,
}

/// Monte Carlo estimate of `L_f(t, y)`:
/// `E G(t,T) + (1/q*) int_t^T E[f(s, eta_s)^{1-q*} G(t,s)] ds`.
pub fn mc_operator_value(
    f: &GridFunction,
    model: &MarketModel,
    t: f64,
    y: &[f64],
    p: &McParams,
) -> Result<McEstimate, McError> {
    mc_operator_value_with_noise(f, model, t, y, p, model.beta())
}

/// [`mc_operator_value`] with the noise scale replacing `beta`.
pub fn mc_operator_value_with_noise(
    f: &GridFunction,
    model: &MarketModel,
    t: f64,
    y: &[f64],
    p: &McParams,
    noise: f64,
) -> Result<McEstimate, McError> {
    check_params(p)?;
    let horizon = model.horizon();
    check_start(model, t, y, horizon)?;
    let g = f.grid();
    if g.m() != model.m() || (g.horizon() - horizon).abs() > 1e-12 * horizon {
        return Err(McError::Grid(GridError::Mismatch));
    }
    if (0..g.m()).any(|i| y[i] < g.lo()[i] || y[i] > g.hi()[i]) {
        return Err(McError::Grid(GridError::OutOfBox { t, y: y.to_vec() }));
    }
    if let Some(v) = f.values().iter().find(|v| !(**v >= 1.0 && v.is_finite())) {
        return Err(McError::Invalid(format!("f must be finite and >= 1, found {v}")));
    }
    let qs = model.q_star();
    let source = f.map(|v| v.powf(1.0 - qs));
    let (n_steps, dt) = time_steps(t, horizon, p.step)?;

    let rows: Vec<(f64, usize)> = (0..p.n_paths)
        .into_par_iter()
        .map_init(
            || model.workspace(),
            |ws, path| {
                let mut rng = path_rng(p.seed, path);
                let mut state = y.to_vec();
                let mut clamped = 0;
                let (mut cum_q, mut q_prev) = (0.0, 0.0);
                let (mut src_int, mut prev) = (0.0, 0.0);
                let mut g_last = 1.0;
                eta_path(model, ws, &mut rng, t, &mut state, n_steps, dt, noise, |k, s, eta, q| {
                    if k > 0 {
                        cum_q += 0.5 * dt * (q_prev + q);
                    }
                    q_prev = q;
                    g_last = cum_q.exp();
                    let (fv, c) = source.interpolate_clamped(s, eta);
                    clamped += c as usize;
                    let cur = fv * g_last;
                    if k > 0 {
                        src_int += 0.5 * dt * (prev + cur);
                    }
                    prev = cur;
                })
                .map_err(|source| McError::Model { path, source })?;
                Ok((g_last + src_int / qs, clamped))
            },
        )
        .collect::<Result<_, McError>>()?;

    let values: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let clamped = rows.iter().map(|r| r.1).sum();
    if clamped > 0 {
        log::warn!("{clamped} path node(s) read f outside its grid box");
    }
    let (mean, stderr) = mean_stderr(&values);
    Ok(McEstimate {
        mean,
        stderr,
        n_paths: p.n_paths,
        clamped,
    })
}

/// Brownian increments of one step: `dW` (d), `dV` (m) and
/// `dU = rho dV + sqrt(1 - rho^2) sigma* dW` (m).
#[derive(Debug, Clone)]
pub struct Increments {
    pub dw: Vec<f64>,
    pub dv: Vec<f64>,
    pub du: Vec<f64>,
}

impl Increments {
    pub fn new(d: usize, m: usize) -> Self {
        Increments {
            dw: vec![0.0; d],
            dv: vec![0.0; m],
            du: vec![0.0; m],
        }
    }

    /// Draws the next step; `W` first, then `V`.
    pub fn draw(&mut self, model: &MarketModel, rng: &mut ChaCha8Rng, dt: f64) {
        let sd = dt.sqrt();
        for w in &mut self.dw {
            let z: f64 = StandardNormal.sample(rng);
            *w = sd * z;
        }
        for v in &mut self.dv {
            let z: f64 = StandardNormal.sample(rng);
            *v = sd * z;
        }
        let (d, rho, s) = (self.dw.len(), model.rho(), model.sqrt_one_minus_rho2());
        let ss = model.sigma_star();
        for (i, u) in self.du.iter_mut().enumerate() {
            let mix: f64 = (0..d).map(|j| ss[i * d + j] * self.dw[j]).sum();
            *u = rho * self.dv[i] + s * mix;
        }
    }
}

/// Factor paths with the increments that drove them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorPaths {
    pub d: usize,
    pub m: usize,
    pub step: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// `n_paths x (n_steps + 1) x m`.
    pub y: Vec<f64>,
    /// `n_paths x n_steps x d`.
    pub dw: Vec<f64>,
    /// `n_paths x n_steps x m`.
    pub dv: Vec<f64>,
    /// `n_paths x n_steps x m`.
    pub du: Vec<f64>,
}

impl FactorPaths {
    pub fn y_at(&self, path: usize, k: usize) -> &[f64] {
        let i = (path * (self.n_steps + 1) + k) * self.m;
        &self.y[i..i + self.m]
    }

    pub fn dw_at(&self, path: usize, k: usize) -> &[f64] {
        let i = (path * self.n_steps + k) * self.d;
        &self.dw[i..i + self.d]
    }

    pub fn du_at(&self, path: usize, k: usize) -> &[f64] {
        let i = (path * self.n_steps + k) * self.m;
        &self.du[i..i + self.m]
    }

    pub fn dv_at(&self, path: usize, k: usize) -> &[f64] {
        let i = (path * self.n_steps + k) * self.m;
        &self.dv[i..i + self.m]
    }
}

/// One Euler step of the factor, `Y += F dt + beta dU`. `ws` must hold the
/// model evaluated at the current state.
pub(crate) fn factor_step(model: &MarketModel, ws: &ModelWorkspace, inc: &Increments, dt: f64, y: &mut [f64]) {
    let b = model.beta();
    for (i, yi) in y.iter_mut().enumerate() {
        *yi += ws.drift[i] * dt + b * inc.du[i];
    }
}

/// Euler-Maruyama paths of `dY = F dt + beta dU` on `[0, T]`, keeping the
/// increments. The draws match those seen by the wealth simulation for the
/// same seed.
pub fn simulate_factor(model: &MarketModel, y0: &[f64], p: &McParams) -> Result<FactorPaths, McError> {
    check_params(p)?;
    if y0.len() != model.m() {
        return Err(McError::Invalid(format!("expected {} factor coordinates", model.m())));
    }
    let (d, m) = (model.d(), model.m());
    let (n_steps, dt) = time_steps(0.0, model.horizon(), p.step)?;
    type Row = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);
    let rows: Vec<Row> = (0..p.n_paths)
        .into_par_iter()
        .map_init(
            || (model.workspace(), Increments::new(d, m)),
            |(ws, inc), path| {
                let mut rng = path_rng(p.seed, path);
                let mut y = y0.to_vec();
                let mut ys = Vec::with_capacity((n_steps + 1) * m);
                let (mut dw, mut dv, mut du) = (
                    Vec::with_capacity(n_steps * d),
                    Vec::with_capacity(n_steps * m),
                    Vec::with_capacity(n_steps * m),
                );
                ys.extend_from_slice(&y);
                for k in 0..n_steps {
                    let t = k as f64 * dt;
                    model
                        .evaluate(ws, t, &y)
                        .map_err(|source| McError::Model { path, source })?;
                    inc.draw(model, &mut rng, dt);
                    factor_step(model, ws, inc, dt, &mut y);
                    ys.extend_from_slice(&y);
                    dw.extend_from_slice(&inc.dw);
                    dv.extend_from_slice(&inc.dv);
                    du.extend_from_slice(&inc.du);
                }
                Ok((ys, dw, dv, du))
            },
        )
        .collect::<Result<_, McError>>()?;
    let mut out = FactorPaths {
        d,
        m,
        step: dt,
        n_steps,
        n_paths: p.n_paths,
        seed: p.seed,
        y: Vec::with_capacity(p.n_paths * (n_steps + 1) * m),
        dw: Vec::with_capacity(p.n_paths * n_steps * d),
        dv: Vec::with_capacity(p.n_paths * n_steps * m),
        du: Vec::with_capacity(p.n_paths * n_steps * m),
    };
    for (ys, dw, dv, du) in rows {
        out.y.extend(ys);
        out.dw.extend(dw);
        out.dv.extend(dv);
        out.du.extend(du);
    }
    Ok(out)
}
