//! Pointwise check that the closed-form controls maximise the Hamiltonian
//!
//! ```text
//! H0 = x r q1 + F' q~ + (x^g c^g - x c q1) + x^2 mu |pi|^2 / 2
//!      + x pi' (theta q1 + beta sqrt(1-rho^2) sigma*' mu~) + (beta^2/2) tr M0
//! ```
//!
//! with `q1, mu, mu~, q~, M0` the derivatives of `z = x^gamma h^eps`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{sigma_star_t, StrategyError};
use crate::grid::GridFunction;
use crate::mc_oracle::path_rng;
use crate::model::{MarketModel, ModelWorkspace};

/// Relative slack allowed above `H0(theta*)`.
pub const HAMILTONIAN_TOL: f64 = 1e-9;

/// `h`, `D_y h` and the diagonal of `D_yy h`, ready for pointwise use.
#[derive(Debug, Clone)]
pub struct HamiltonianProbe<'a> {
    model: &'a MarketModel,
    h: &'a GridFunction,
    grad: Vec<GridFunction>,
    second: Vec<GridFunction>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HamiltonianReport {
    pub t: f64,
    pub y: Vec<f64>,
    pub x: f64,
    /// `H0` at the maximiser.
    pub h0_star: f64,
    /// Maximiser from the Hamiltonian's own `q1, mu, mu~`.
    pub pi_star: Vec<f64>,
    pub c_star: f64,
    /// Largest `|pi*|`, `|c*|` difference to the strategy-field formulas
    /// evaluated with the same `h` and `D_y h`.
    pub formula_gap: f64,
    pub n_samples: usize,
    /// `max (H0(sample) - H0*) / (1 + |H0*|)` over the samples.
    pub max_excess: f64,
    pub passed: bool,
}

/// Derivatives of `z` at one point.
struct Derivs {
    q1: f64,
    mu: f64,
    mu_t: Vec<f64>,
    q_t: Vec<f64>,
    tr_m0: f64,
}

impl<'a> HamiltonianProbe<'a> {
    pub fn new(h: &'a GridFunction, model: &'a MarketModel) -> Result<Self, StrategyError> {
        if h.grid().m() != model.m() {
            return Err(StrategyError::Invalid("h and model disagree on m".into()));
        }
        let grad = h.gradient_y();
        let second = grad.iter().enumerate().map(|(i, g)| g.gradient_y().swap_remove(i)).collect();
        Ok(HamiltonianProbe { model, h, grad, second })
    }

    fn derivs(&self, t: f64, y: &[f64], x: f64) -> Result<(f64, Vec<f64>, Derivs), StrategyError> {
        let model = self.model;
        let (g, e) = (model.gamma(), model.eps());
        let (h, _) = self.h.interpolate(t, y)?;
        let mut hy = Vec::with_capacity(y.len());
        let mut hyy = Vec::with_capacity(y.len());
        for (gf, sf) in self.grad.iter().zip(&self.second) {
            hy.push(gf.interpolate(t, y)?.0);
            hyy.push(sf.interpolate(t, y)?.0);
        }
        let xg = x.powf(g);
        let he = h.powf(e);
        let q1 = g * x.powf(g - 1.0) * he;
        let mu = g * (g - 1.0) * x.powf(g - 2.0) * he;
        let mu_t = hy.iter().map(|v| e * g * x.powf(g - 1.0) * h.powf(e - 1.0) * v).collect();
        let q_t = hy.iter().map(|v| xg * e * h.powf(e - 1.0) * v).collect();
        let tr_m0 = hy
            .iter()
            .zip(&hyy)
            .map(|(a, b)| xg * (e * (e - 1.0) * h.powf(e - 2.0) * a * a + e * h.powf(e - 1.0) * b))
            .sum();
        Ok((
            h,
            hy,
            Derivs {
                q1,
                mu,
                mu_t,
                q_t,
                tr_m0,
            },
        ))
    }

    /// `theta q1 + beta sqrt(1-rho^2) sigma*' mu~`.
    fn linear_part(&self, ws: &ModelWorkspace, dv: &Derivs) -> Vec<f64> {
        let m = self.model;
        let mut mix = vec![0.0; m.d()];
        sigma_star_t(m, &dv.mu_t, &mut mix);
        let k = m.beta() * m.sqrt_one_minus_rho2();
        ws.theta.iter().zip(&mix).map(|(th, s)| th * dv.q1 + k * s).collect()
    }

    fn h0(&self, ws: &ModelWorkspace, dv: &Derivs, lin: &[f64], x: f64, pi: &[f64], c: f64) -> f64 {
        let m = self.model;
        let g = m.gamma();
        let f_q: f64 = ws.drift.iter().zip(&dv.q_t).map(|(a, b)| a * b).sum();
        let pi2: f64 = pi.iter().map(|p| p * p).sum();
        let pl: f64 = pi.iter().zip(lin).map(|(p, l)| p * l).sum();
        x * ws.r * dv.q1 + f_q + (x.powf(g) * c.powf(g) - x * c * dv.q1)
            + 0.5 * x * x * dv.mu * pi2
            + x * pl
            + 0.5 * m.beta() * m.beta() * dv.tr_m0
    }

    /// Samples `n_samples` controls around the maximiser, from small
    /// perturbations to far-off points, plus zero consumption.
    pub fn check(&self, t: f64, y: &[f64], x: f64, n_samples: usize, seed: u64) -> Result<HamiltonianReport, StrategyError> {
        if !(x > 0.0 && x.is_finite()) {
            return Err(StrategyError::NonPositiveWealth(x));
        }
        let model = self.model;
        let mut ws = model.workspace();
        model.evaluate(&mut ws, t, y)?;
        let (h, hy, dv) = self.derivs(t, y, x)?;
        if !(dv.mu < 0.0 && dv.q1 > 0.0) {
            return Err(StrategyError::Invalid(format!(
                "degenerate second derivative: q1={}, mu={}",
                dv.q1, dv.mu
            )));
        }
        let lin = self.linear_part(&ws, &dv);
        let pi_star: Vec<f64> = lin.iter().map(|l| l / (x * dv.mu.abs())).collect();
        let c_star = (model.gamma() / dv.q1).powf(model.gamma1()) / x;
        let h0_star = self.h0(&ws, &dv, &lin, x, &pi_star, c_star);

        let g1 = 1.0 - model.gamma();
        let coef = model.eps() * model.sqrt_one_minus_rho2() * model.beta() / g1;
        let mut mix = vec![0.0; model.d()];
        sigma_star_t(model, &hy, &mut mix);
        let mut formula_gap = (c_star - h.powf(-model.q_star())).abs();
        for j in 0..model.d() {
            let p = ws.theta[j] / g1 + coef * mix[j] / h;
            formula_gap = formula_gap.max((p - pi_star[j]).abs());
        }

        let mut rng = path_rng(seed, 0);
        let scale = 1.0 + pi_star.iter().map(|p| p.abs()).fold(0.0, f64::max);
        let mut max_excess = f64::NEG_INFINITY;
        let mut pi = vec![0.0; model.d()];
        for _ in 0..n_samples {
            let spread = 10f64.powf(rng.random_range(-6.0..1.0)) * scale;
            for (p, ps) in pi.iter_mut().zip(&pi_star) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *p = ps + spread * z;
            }
            let c = if rng.random_bool(0.1) {
                0.0
            } else {
                let z: f64 = StandardNormal.sample(&mut rng);
                c_star * (10f64.powf(rng.random_range(-6.0..0.5)) * z).exp()
            };
            let v = self.h0(&ws, &dv, &lin, x, &pi, c);
            max_excess = max_excess.max((v - h0_star) / (1.0 + h0_star.abs()));
        }
        Ok(HamiltonianReport {
            t,
            y: y.to_vec(),
            x,
            h0_star,
            pi_star,
            c_star,
            formula_gap,
            n_samples,
            max_excess,
            passed: max_excess <= HAMILTONIAN_TOL,
        })
    }

    /// `H0` at an arbitrary control, for external comparisons.
    pub fn value(&self, t: f64, y: &[f64], x: f64, pi: &[f64], c: f64) -> Result<f64, StrategyError> {
        if !(x > 0.0 && x.is_finite()) {
            return Err(StrategyError::NonPositiveWealth(x));
        }
        let mut ws = self.model.workspace();
        self.model.evaluate(&mut ws, t, y)?;
        let (_, _, dv) = self.derivs(t, y, x)?;
        let lin = self.linear_part(&ws, &dv);
        Ok(self.h0(&ws, &dv, &lin, x, pi, c))
    }

    /// `q1 = z_x` at a point.
    pub fn q1(&self, t: f64, y: &[f64], x: f64) -> Result<f64, StrategyError> {
        Ok(self.derivs(t, y, x)?.2.q1)
    }
}

pub fn hamiltonian_check(
    h: &GridFunction,
    model: &MarketModel,
    t: f64,
    y: &[f64],
    x: f64,
    n_samples: usize,
    seed: u64,
) -> Result<HamiltonianReport, StrategyError> {
    HamiltonianProbe::new(h, model)?.check(t, y, x, n_samples, seed)
}
