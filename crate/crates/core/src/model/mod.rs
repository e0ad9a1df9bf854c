//! Market and factor model.
//!
//! A [`MarketModel`] bundles the coefficient expressions of the bond/stock
//! market and of the factor SDE together with the investor's parameters, and
//! evaluates the derived quantities every solver needs: the risk premium
//! `theta`, the factor drift under the distorted measure `alpha`, and the
//! potential `Q` of the quasilinear PDE.

mod conditions;
pub(crate) mod linalg;
mod presets;

use serde::{Deserialize, Serialize};

use crate::expr::{CoefficientExpr, Evaluator, ExprError, Program, Var};
use linalg::{Lu, SINGULAR_DET};

pub use conditions::{check_conditions, ConditionReport, ConditionStatus, SamplingBox};
pub use presets::{preset, TwoAssetParams, PRESET_NAMES};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("volatility matrix is singular at t={t}, y={y:?}")]
    SingularVolatility { t: f64, y: Vec<f64> },
    #[error("coefficient `{what}`: {source}")]
    Expr {
        what: String,
        #[source]
        source: ExprError,
    },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("unknown preset `{0}` (expected one of: paper-example, two-asset-sv, merton-constant)")]
    UnknownPreset(String),
}

fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::Invalid(msg.into())
}

/// Text form of a model, as it appears in JSON configs and run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of risky assets.
    pub d: usize,
    /// Factor dimension.
    pub m: usize,
    pub horizon: f64,
    pub gamma: f64,
    pub rho: f64,
    pub beta: f64,
    /// `m x d`, rows orthonormal.
    pub sigma_star: Vec<Vec<f64>>,
    pub r: String,
    pub mu: Vec<String>,
    /// `d x d` volatility matrix, row `i` drives stock `i`.
    pub sigma: Vec<Vec<String>>,
    /// Factor drift `F`, one entry per factor coordinate.
    pub drift: Vec<String>,
    /// Additive decomposition `alpha_i = sum_l a_{i,l}(t, y_l)` (`m x m`), when
    /// known. Entry `(i, l)` may only reference `t` and `y{l+1}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_parts: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone)]
pub struct MarketModel {
    config: ModelConfig,
    d: usize,
    m: usize,
    horizon: f64,
    gamma: f64,
    rho: f64,
    beta: f64,
    sigma_star: Vec<f64>,
    r: CoefficientExpr,
    mu: Vec<CoefficientExpr>,
    sigma: Vec<CoefficientExpr>,
    drift: Vec<CoefficientExpr>,
    alpha_parts: Option<Vec<CoefficientExpr>>,
    program: Program,
}

/// Per-thread scratch for point evaluation of a model.
#[derive(Debug, Clone)]
pub struct ModelWorkspace {
    ev: Evaluator,
    lu: Lu,
    sigma: Vec<f64>,
    scratch: Vec<f64>,
    pub r: f64,
    pub mu: Vec<f64>,
    pub drift: Vec<f64>,
    pub theta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub q: f64,
}

fn parse(src: &str, dims: usize, what: impl Fn() -> String) -> Result<CoefficientExpr, ModelError> {
    CoefficientExpr::parse(src, dims).map_err(|source| ModelError::Expr {
        what: what(),
        source,
    })
}

impl MarketModel {
    pub fn from_config(config: ModelConfig) -> Result<Self, ModelError> {
        let ModelConfig { d, m, .. } = config;
        if d == 0 || m == 0 {
            return Err(invalid("d and m must be at least 1"));
        }
        if !(config.gamma > 0.0 && config.gamma < 1.0) {
            return Err(invalid(format!("gamma must lie in (0,1), got {}", config.gamma)));
        }
        if !(0.0..=1.0).contains(&config.rho) {
            return Err(invalid(format!("rho must lie in [0,1], got {}", config.rho)));
        }
        if !(config.beta > 0.0 && config.beta.is_finite()) {
            return Err(invalid(format!("beta must be positive, got {}", config.beta)));
        }
        if !(config.horizon > 0.0 && config.horizon.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {}", config.horizon)));
        }
        if config.sigma_star.len() != m || config.sigma_star.iter().any(|row| row.len() != d) {
            return Err(invalid(format!("sigma_star must be {m} x {d}")));
        }
        let sigma_star: Vec<f64> = config.sigma_star.iter().flatten().copied().collect();
        for i in 0..m {
            for k in 0..m {
                let dot: f64 = (0..d).map(|j| sigma_star[i * d + j] * sigma_star[k * d + j]).sum();
                let target = if i == k { 1.0 } else { 0.0 };
                if (dot - target).abs() > 1e-12 {
                    return Err(invalid(
                        "sigma_star * sigma_star' must equal the identity to within 1e-12",
                    ));
                }
            }
        }
        if config.mu.len() != d {
            return Err(invalid(format!("mu must have {d} entries")));
        }
        if config.sigma.len() != d || config.sigma.iter().any(|row| row.len() != d) {
            return Err(invalid(format!("sigma must be {d} x {d}")));
        }
        if config.drift.len() != m {
            return Err(invalid(format!("drift must have {m} entries")));
        }
        let r = parse(&config.r, m, || "r".into())?;
        let mu = config
            .mu
            .iter()
            .enumerate()
            .map(|(i, s)| parse(s, m, || format!("mu[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let mut sigma = Vec::with_capacity(d * d);
        for (i, row) in config.sigma.iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                sigma.push(parse(s, m, || format!("sigma[{i}][{j}]"))?);
            }
        }
        let drift = config
            .drift
            .iter()
            .enumerate()
            .map(|(i, s)| parse(s, m, || format!("drift[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let alpha_parts = match &config.alpha_parts {
            None => None,
            Some(rows) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    return Err(invalid(format!("alpha_parts must be {m} x {m}")));
                }
                let mut parts = Vec::with_capacity(m * m);
                for (i, row) in rows.iter().enumerate() {
                    for (l, s) in row.iter().enumerate() {
                        let e = parse(s, m, || format!("alpha_parts[{i}][{l}]"))?;
                        if (0..m).any(|k| k != l && e.depends_on(Var::Y(k))) {
                            return Err(invalid(format!(
                                "alpha_parts[{i}][{l}] may only depend on t and y{}",
                                l + 1
                            )));
                        }
                        parts.push(e);
                    }
                }
                Some(parts)
            }
        };
        let program = Program::compile(
            std::iter::once(&r)
                .chain(mu.iter())
                .chain(sigma.iter())
                .chain(drift.iter()),
            m,
        )
        .map_err(|source| ModelError::Expr {
            what: "model".into(),
            source,
        })?;
        Ok(MarketModel {
            d,
            m,
            horizon: config.horizon,
            gamma: config.gamma,
            rho: config.rho,
            beta: config.beta,
            sigma_star,
            r,
            mu,
            sigma,
            drift,
            alpha_parts,
            program,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `m x d`, row-major.
    pub fn sigma_star(&self) -> &[f64] {
        &self.sigma_star
    }

    pub fn sigma_star_frobenius(&self) -> f64 {
        self.sigma_star.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn r_expr(&self) -> &CoefficientExpr {
        &self.r
    }

    pub fn mu_exprs(&self) -> &[CoefficientExpr] {
        &self.mu
    }

    /// Row-major `d x d`.
    pub fn sigma_exprs(&self) -> &[CoefficientExpr] {
        &self.sigma
    }

    pub fn drift_exprs(&self) -> &[CoefficientExpr] {
        &self.drift
    }

    pub fn alpha_parts(&self) -> Option<&[CoefficientExpr]> {
        self.alpha_parts.as_deref()
    }

    /// `1 / (1 - gamma)`.
    pub fn gamma1(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    /// `1 / (1 - rho^2 gamma)`.
    pub fn q_star(&self) -> f64 {
        1.0 / (1.0 - self.rho * self.rho * self.gamma)
    }

    /// Exponent of the distortion transform, `(1 - gamma) q*`.
    pub fn eps(&self) -> f64 {
        (1.0 - self.gamma) * self.q_star()
    }

    /// `gamma sqrt(1 - rho^2) beta / (1 - gamma)`.
    pub fn beta_star(&self) -> f64 {
        self.gamma * self.sqrt_one_minus_rho2() * self.beta / (1.0 - self.gamma)
    }

    pub fn sqrt_one_minus_rho2(&self) -> f64 {
        (1.0 - self.rho * self.rho).max(0.0).sqrt()
    }

    /// Prefactor of `Q`: `gamma (1 - rho^2 gamma) / (1 - gamma)`.
    pub fn q_prefactor(&self) -> f64 {
        self.gamma * (1.0 - self.rho * self.rho * self.gamma) / (1.0 - self.gamma)
    }

    pub fn workspace(&self) -> ModelWorkspace {
        ModelWorkspace {
            ev: self.program.evaluator(),
            lu: Lu::with_size(self.d),
            sigma: vec![0.0; self.d * self.d],
            scratch: vec![0.0; self.d.max(self.m)],
            r: 0.0,
            mu: vec![0.0; self.d],
            drift: vec![0.0; self.m],
            theta: vec![0.0; self.d],
            alpha: vec![0.0; self.m],
            q: 0.0,
        }
    }

    /// Evaluates `r`, `mu`, `F`, `theta`, `alpha` and `Q` at `(t, y)` into `ws`.
    pub fn evaluate(&self, ws: &mut ModelWorkspace, t: f64, y: &[f64]) -> Result<(), ModelError> {
        if y.len() != self.m {
            return Err(invalid(format!("expected {} factor coordinates", self.m)));
        }
        self.program
            .eval(&mut ws.ev, t, y)
            .map_err(|source| ModelError::Expr {
                what: format!("model at t={t}, y={y:?}"),
                source,
            })?;
        let (d, m) = (self.d, self.m);
        let p = &self.program;
        ws.r = p.output(&ws.ev, 0);
        for i in 0..d {
            ws.mu[i] = p.output(&ws.ev, 1 + i);
        }
        for k in 0..d * d {
            ws.sigma[k] = p.output(&ws.ev, 1 + d + k);
        }
        for i in 0..m {
            ws.drift[i] = p.output(&ws.ev, 1 + d + d * d + i);
        }
        if d == 1 {
            let s = ws.sigma[0];
            if s.abs() <= SINGULAR_DET {
                return Err(ModelError::SingularVolatility { t, y: y.to_vec() });
            }
            ws.theta[0] = (ws.mu[0] - ws.r) / s;
        } else {
            let det = ws.lu.factor(&ws.sigma);
            if !(det.abs() > SINGULAR_DET) {
                return Err(ModelError::SingularVolatility { t, y: y.to_vec() });
            }
            for i in 0..d {
                ws.theta[i] = ws.mu[i] - ws.r;
            }
            ws.lu.solve(&mut ws.theta, &mut ws.scratch);
        }
        let bs = self.beta_star();
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..d {
                acc += self.sigma_star[i * d + j] * ws.theta[j];
            }
            ws.alpha[i] = ws.drift[i] + bs * acc;
        }
        let theta2: f64 = ws.theta.iter().map(|v| v * v).sum();
        ws.q = self.q_prefactor() * (ws.r + theta2 / (2.0 * (1.0 - self.gamma)));
        Ok(())
    }

    /// Risk premium `theta = sigma^{-1} (mu - r 1)`.
    pub fn risk_premium(&self, t: f64, y: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut ws = self.workspace();
        self.evaluate(&mut ws, t, y)?;
        Ok(ws.theta)
    }

    /// `alpha = F + beta* sigma* theta`.
    pub fn drift_alpha(&self, t: f64, y: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut ws = self.workspace();
        self.evaluate(&mut ws, t, y)?;
        Ok(ws.alpha)
    }

    /// `Q = gamma (1 - rho^2 gamma)/(1 - gamma) (r + |theta|^2 / (2 (1 - gamma)))`.
    pub fn q_coefficient(&self, t: f64, y: &[f64]) -> Result<f64, ModelError> {
        let mut ws = self.workspace();
        self.evaluate(&mut ws, t, y)?;
        Ok(ws.q)
    }

    /// Copy with different scalar parameters, re-validated.
    pub fn with_scalars(
        &self,
        gamma: Option<f64>,
        rho: Option<f64>,
        beta: Option<f64>,
        horizon: Option<f64>,
    ) -> Result<Self, ModelError> {
        let mut cfg = self.config.clone();
        if let Some(v) = gamma {
            cfg.gamma = v;
        }
        if let Some(v) = rho {
            cfg.rho = v;
        }
        if let Some(v) = beta {
            cfg.beta = v;
        }
        if let Some(v) = horizon {
            cfg.horizon = v;
        }
        // A stored decomposition bakes in beta*; rebuild from the preset instead.
        if cfg.alpha_parts.is_some() && (gamma.is_some() || rho.is_some() || beta.is_some()) {
            cfg.alpha_parts = None;
        }
        MarketModel::from_config(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_model(r: f64, mu: f64, sigma: f64, gamma: f64, rho: f64) -> MarketModel {
        MarketModel::from_config(ModelConfig {
            d: 1,
            m: 1,
            horizon: 1.0,
            gamma,
            rho,
            beta: 1.0,
            sigma_star: vec![vec![1.0]],
            r: r.to_string(),
            mu: vec![mu.to_string()],
            sigma: vec![vec![sigma.to_string()]],
            drift: vec!["0".into()],
            alpha_parts: None,
        })
        .unwrap()
    }

    #[test]
    fn risk_premium_constant() {
        let m = constant_model(0.01, 0.02, 0.5, 0.75, 0.5);
        let th = m.risk_premium(0.3, &[1.0]).unwrap();
        assert!((th[0] - 0.02).abs() < 1e-16);
        let m = constant_model(0.01, 0.01, 0.5, 0.75, 0.5);
        assert_eq!(m.risk_premium(0.3, &[1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn two_asset_premium_uses_true_inverse() {
        let p = TwoAssetParams {
            r: 0.01,
            mu: [0.02, 0.02],
            b: [0.0, 1.0],
            sigma: ["1".into(), "1".into()],
            drift: ["0".into(), "0".into()],
            ..TwoAssetParams::default()
        };
        let m = p.build().unwrap();
        let th = m.risk_premium(0.0, &[0.0, 0.0]).unwrap();
        assert!((th[0] - 0.01).abs() < 1e-16 && th[1].abs() < 1e-16, "{th:?}");
    }

    #[test]
    fn alpha_examples() {
        let m = constant_model(0.01, 0.02, 0.5, 0.75, 1.0);
        assert_eq!(m.beta_star(), 0.0);
        assert_eq!(m.drift_alpha(0.5, &[0.2]).unwrap(), vec![0.0]);
        let m = constant_model(0.01, 0.02, 0.5, 0.75, 0.5);
        assert!((m.beta_star() - 3.0 * 0.75f64.sqrt()).abs() < 1e-15);
        assert!((m.beta_star() - 2.598076).abs() < 1e-6);
        let a = m.drift_alpha(0.0, &[0.0]).unwrap()[0];
        assert!((a - 0.02 * m.beta_star()).abs() < 1e-16);
        assert!((a - 0.0519615).abs() < 1e-7);
    }

    #[test]
    fn q_examples() {
        let m = constant_model(0.01, 0.02, 0.5, 0.75, 0.5);
        let q = m.q_coefficient(0.0, &[0.0]).unwrap();
        assert!((q - 0.026325).abs() < 1e-15, "{q}");
        let m = constant_model(0.0, 0.0, 0.5, 0.75, 0.5);
        assert_eq!(m.q_coefficient(0.0, &[0.0]).unwrap(), 0.0);
        let m = constant_model(0.01, 0.02, 0.5, 1e-8, 0.5);
        assert!(m.q_coefficient(0.0, &[0.0]).unwrap() < 1e-6);
    }

    #[test]
    fn singular_volatility_is_reported() {
        let mut cfg = constant_model(0.01, 0.02, 0.5, 0.75, 0.5).config().clone();
        cfg.sigma = vec![vec!["y".into()]];
        let m = MarketModel::from_config(cfg).unwrap();
        match m.risk_premium(0.5, &[0.0]) {
            Err(ModelError::SingularVolatility { t, y }) => {
                assert_eq!(t, 0.5);
                assert_eq!(y, vec![0.0]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_scalars() {
        let base = constant_model(0.01, 0.02, 0.5, 0.75, 0.5).config().clone();
        for f in [
            |c: &mut ModelConfig| c.gamma = 1.0,
            |c: &mut ModelConfig| c.gamma = 0.0,
            |c: &mut ModelConfig| c.rho = 1.5,
            |c: &mut ModelConfig| c.beta = 0.0,
            |c: &mut ModelConfig| c.horizon = -1.0,
            |c: &mut ModelConfig| c.sigma_star = vec![vec![0.9]],
            |c: &mut ModelConfig| c.mu = vec![],
        ] {
            let mut c = base.clone();
            f(&mut c);
            assert!(matches!(MarketModel::from_config(c), Err(ModelError::Invalid(_))));
        }
    }

    #[test]
    fn one_factor_example_scalars() {
        let m = preset("paper-example").unwrap();
        assert!((m.q_star() - 1.0 / 0.8125).abs() < 1e-12);
        assert!((m.q_star() - 1.230769230769).abs() < 1e-12);
        assert!((m.eps() - 0.25 / 0.8125).abs() < 1e-12);
        assert_eq!(m.eps(), (1.0 - m.gamma()) * m.q_star());
        assert_eq!(m.gamma1(), 4.0);
        assert!(m.q_star() >= 1.0);
    }
}
