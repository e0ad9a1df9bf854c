//! Built-in models.

use serde::{Deserialize, Serialize};

use super::{invalid, MarketModel, ModelConfig, ModelError};
use crate::expr::CoefficientExpr;

pub const PRESET_NAMES: [&str; 3] = ["paper-example", "two-asset-sv", "merton-constant"];

/// Builds a named preset with its default parameters.
pub fn preset(name: &str) -> Result<MarketModel, ModelError> {
    match name {
        "paper-example" => MarketModel::from_config(one_factor_example()),
        "merton-constant" => MarketModel::from_config(merton_constant()),
        "two-asset-sv" => TwoAssetParams::default().build(),
        other => Err(ModelError::UnknownPreset(other.to_string())),
    }
}

/// One bond, one stock, one factor; every coefficient oscillates in `y t`.
fn one_factor_example() -> ModelConfig {
    ModelConfig {
        d: 1,
        m: 1,
        horizon: 1.0,
        gamma: 0.75,
        rho: 0.5,
        beta: 1.0,
        sigma_star: vec![vec![1.0]],
        r: "0.01*(1+0.5*sin(y*t))".into(),
        mu: vec!["0.02*(1+0.5*sin(y*t))".into()],
        sigma: vec![vec!["0.5+sin(y*t)^2".into()]],
        drift: vec!["0.1*sin(y*t)".into()],
        alpha_parts: None,
    }
}

fn merton_constant() -> ModelConfig {
    ModelConfig {
        d: 1,
        m: 1,
        horizon: 1.0,
        gamma: 0.75,
        rho: 0.5,
        beta: 1.0,
        sigma_star: vec![vec![1.0]],
        r: "0.01".into(),
        mu: vec!["0.02".into()],
        sigma: vec![vec!["0.5".into()]],
        drift: vec!["0".into()],
        alpha_parts: None,
    }
}

/// Two stocks driven by `W1 + b_i W2`, each with its own volatility factor.
///
/// Stock `i` has volatility row `sigma_i(t, y_i) * (1, b_i)`; factor `i`
/// follows `dY_i = F_i(t, Y_i) dt + beta dU_i` with `sigma* = I`. The
/// `sigma` and `drift` strings are written in the one-factor variables
/// `t`, `y` and re-embedded on coordinate `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoAssetParams {
    pub r: f64,
    pub mu: [f64; 2],
    pub b: [f64; 2],
    pub sigma: [String; 2],
    pub drift: [String; 2],
    pub gamma: f64,
    pub rho: f64,
    pub beta: f64,
    pub horizon: f64,
}

impl Default for TwoAssetParams {
    fn default() -> Self {
        TwoAssetParams {
            r: 0.01,
            mu: [0.02, 0.03],
            b: [0.0, 1.0],
            sigma: ["0.5+sin(y*t)^2".into(), "0.4+0.5*sin(y*t)^2".into()],
            drift: ["0.1*sin(y*t)".into(), "0.1*sin(y*t)".into()],
            gamma: 0.75,
            rho: 0.5,
            beta: 1.0,
            horizon: 1.0,
        }
    }
}

impl TwoAssetParams {
    pub fn build(&self) -> Result<MarketModel, ModelError> {
        MarketModel::from_config(self.to_config()?)
    }

    pub fn to_config(&self) -> Result<ModelConfig, ModelError> {
        let [b1, b2] = self.b;
        if b1 == b2 || !(b2 - b1).is_finite() {
            return Err(invalid("two-asset-sv requires b1 != b2 (sigma is singular otherwise)"));
        }
        let embed = |src: &str, coord: usize, what: &str| -> Result<String, ModelError> {
            CoefficientExpr::parse(src, 1)
                .and_then(|e| e.embed_coordinate(coord, 2))
                .map(|e| e.to_string())
                .map_err(|source| ModelError::Expr {
                    what: format!("{what}[{coord}]"),
                    source,
                })
        };
        let sig = [embed(&self.sigma[0], 0, "sigma")?, embed(&self.sigma[1], 1, "sigma")?];
        let drift = [embed(&self.drift[0], 0, "drift")?, embed(&self.drift[1], 1, "drift")?];

        // sigma^{-1}_{i,l} = k_{i,l} / sigma_l(t, y_l) with
        // k = [[b2, -b1], [-1, 1]] / (b2 - b1).
        let den = b2 - b1;
        let k = [[b2 / den, -b1 / den], [-1.0 / den, 1.0 / den]];
        let gamma = self.gamma;
        let beta_star =
            gamma * (1.0 - self.rho * self.rho).max(0.0).sqrt() * self.beta / (1.0 - gamma);
        let mut parts = vec![vec![String::new(); 2]; 2];
        for (i, row) in parts.iter_mut().enumerate() {
            for (l, cell) in row.iter_mut().enumerate() {
                let c = beta_star * k[i][l] * (self.mu[l] - self.r);
                let premium = format!("{c:?}/({})", sig[l]);
                *cell = if i == l {
                    format!("({}) + {premium}", drift[i])
                } else {
                    premium
                };
            }
        }
        Ok(ModelConfig {
            d: 2,
            m: 2,
            horizon: self.horizon,
            gamma,
            rho: self.rho,
            beta: self.beta,
            sigma_star: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            r: format!("{:?}", self.r),
            mu: vec![format!("{:?}", self.mu[0]), format!("{:?}", self.mu[1])],
            sigma: vec![
                vec![sig[0].clone(), format!("{:?}*({})", b1, sig[0])],
                vec![sig[1].clone(), format!("{:?}*({})", b2, sig[1])],
            ],
            drift: drift.to_vec(),
            alpha_parts: Some(parts),
        })
    }
}
