//! JSON run configuration.
//!
//! ```json
//! {
//!   "model": { "preset": "paper-example" },
//!   "numerics": { "n_t": 201, "n_y": 401, "y_lo": -6, "y_hi": 6, "n_max": 20 },
//!   "mc": { "n_paths": 100000, "step": 0.0005, "seed": 0 },
//!   "outputs": { "dir": "out" }
//! }
//! ```
//!
//! `model` is either `{"preset": name}` or an inline model with the fields of
//! [`ModelConfig`]. Every section and field is optional except `model`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::fk_solver::{SolveOptions, ZetaPolicy};
use crate::grid::{Grid, GridError};
use crate::mc_oracle::McParams;
use crate::model::{preset, MarketModel, ModelConfig, ModelError};
use crate::strategy::WealthOptions;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Preset { preset: String },
    Inline(ModelConfig),
}

// Hand-written so that an inline model reports the offending field instead
// of "did not match any variant".
impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let value = serde_json::Value::deserialize(de)?;
        let obj = value
            .as_object()
            .ok_or_else(|| D::Error::custom("model must be an object"))?;
        if let Some(name) = obj.get("preset") {
            if obj.len() != 1 {
                return Err(D::Error::custom("a preset model takes no other fields"));
            }
            let name = name
                .as_str()
                .ok_or_else(|| D::Error::custom("preset must be a string"))?;
            return Ok(ModelSpec::Preset { preset: name.to_string() });
        }
        ModelConfig::deserialize(value)
            .map(ModelSpec::Inline)
            .map_err(|e| D::Error::custom(format!("inline model: {e}")))
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<MarketModel, ModelError> {
        match self {
            ModelSpec::Preset { preset: name } => preset(name),
            ModelSpec::Inline(cfg) => MarketModel::from_config(cfg.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    /// Time levels on `[0, T]`.
    pub n_t: usize,
    /// Nodes per factor coordinate.
    pub n_y: usize,
    pub y_lo: f64,
    pub y_hi: f64,
    pub tol: f64,
    pub n_max: usize,
    pub zeta: ZetaPolicy,
    /// Keep every iterate (used for the control-gap certificates).
    pub history: bool,
    pub condition_samples: usize,
    pub condition_seed: u64,
    pub derivative_cap: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        let s = SolveOptions::default();
        Numerics {
            n_t: 201,
            n_y: 401,
            y_lo: -6.0,
            y_hi: 6.0,
            tol: s.tol,
            n_max: s.n_max,
            zeta: s.zeta,
            history: false,
            condition_samples: s.condition_samples,
            condition_seed: s.condition_seed,
            derivative_cap: s.derivative_cap,
        }
    }
}

impl Numerics {
    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            n_max: self.n_max,
            zeta: self.zeta,
            keep_history: self.history,
            condition_samples: self.condition_samples,
            condition_seed: self.condition_seed,
            derivative_cap: self.derivative_cap,
        }
    }

    /// The solver grid for an `m`-factor model. Only its box and sizes are
    /// stored, so this is cheap for any `m`.
    pub fn grid(&self, model: &MarketModel) -> Result<Grid, GridError> {
        let m = model.m();
        Grid::new(model.horizon(), self.n_t, vec![self.y_lo; m], vec![self.y_hi; m], vec![self.n_y; m])
    }
}

/// A `(t, y)` location for the Monte Carlo comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    pub t: f64,
    pub y: Vec<f64>,
}

/// Built-in one-factor probe locations, staggered in time so that a full
/// set costs about three full-horizon runs.
pub const DEFAULT_PROBES: [(f64, f64); 8] = [
    (0.0, 0.0),
    (0.25, 1.0),
    (0.5, -1.0),
    (0.6, 2.0),
    (0.75, -2.0),
    (0.1, -0.5),
    (0.4, 0.5),
    (0.8, 1.5),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub step: f64,
    pub seed: u64,
    /// Worker threads; 0 lets the pool choose.
    pub threads: usize,
    /// Explicit probe list for `mc-check`; empty means the defaults.
    pub points: Vec<Probe>,
    /// How many default probes to use when `points` is empty.
    pub n_points: usize,
    /// Initial wealth and factor for `simulate`.
    pub x0: f64,
    pub y0: Vec<f64>,
    /// Time levels in the wealth summary.
    pub record: usize,
    /// Also simulate the Merton field (`h = 1`) with the same numbers.
    pub baseline: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        let p = McParams::default();
        McConfig {
            n_paths: p.n_paths,
            step: p.step,
            seed: p.seed,
            threads: 0,
            points: Vec::new(),
            n_points: 5,
            x0: 1.0,
            y0: Vec::new(),
            record: WealthOptions::default().record,
            baseline: true,
        }
    }
}

impl McConfig {
    pub fn params(&self) -> McParams {
        McParams {
            n_paths: self.n_paths,
            step: self.step,
            seed: self.seed,
        }
    }

    pub fn wealth_options(&self) -> WealthOptions {
        WealthOptions {
            mc: self.params(),
            record: self.record,
        }
    }

    /// The configured probes, or the first `n_points` defaults embedded on
    /// every factor coordinate.
    pub fn probes(&self, m: usize) -> Result<Vec<Probe>, String> {
        if !self.points.is_empty() {
            if let Some(p) = self.points.iter().find(|p| p.y.len() != m) {
                return Err(format!("probe at t={} has {} coordinates, model has m = {m}", p.t, p.y.len()));
            }
            return Ok(self.points.clone());
        }
        if self.n_points == 0 || self.n_points > DEFAULT_PROBES.len() {
            return Err(format!(
                "n_points must be in 1..={}, got {}",
                DEFAULT_PROBES.len(),
                self.n_points
            ));
        }
        Ok(DEFAULT_PROBES[..self.n_points]
            .iter()
            .map(|&(t, y)| Probe { t, y: vec![y; m] })
            .collect())
    }

    pub fn start_factor(&self, m: usize) -> Result<Vec<f64>, String> {
        match self.y0.len() {
            0 => Ok(vec![0.0; m]),
            k if k == m => Ok(self.y0.clone()),
            k => Err(format!("y0 has {k} coordinates, model has m = {m}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    /// Output directory; empty means `$MERTON_FK_OUT` or `./out`.
    pub dir: PathBuf,
    pub h_csv: bool,
    pub deltas_csv: bool,
    pub residual_csv: bool,
    pub strategy_csv: bool,
    pub paths_csv: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            dir: PathBuf::new(),
            h_csv: true,
            deltas_csv: true,
            residual_csv: true,
            strategy_csv: true,
            paths_csv: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub outputs: Outputs,
}

impl RunConfig {
    pub fn for_preset(name: &str) -> Self {
        RunConfig {
            model: ModelSpec::Preset {
                preset: name.to_string(),
            },
            numerics: Numerics::default(),
            mc: McConfig::default(),
            outputs: Outputs::default(),
        }
    }

    /// Parses a JSON document; errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document() {
        let cfg = RunConfig::from_json(r#"{"model": {"preset": "merton-constant"}}"#).unwrap();
        assert_eq!(cfg, RunConfig::for_preset("merton-constant"));
    }

    #[test]
    fn errors_point_at_the_line() {
        let text = "{\n  \"model\": {\"preset\": \"paper-example\"},\n  \"numerics\": {\"n_tt\": 3}\n}";
        let err = RunConfig::from_json(text).unwrap_err();
        assert_eq!(err.line(), 3);
        assert!(err.to_string().contains("n_tt"), "{err}");
        // Inline-model errors are located just past the model object.
        let text = "{\n  \"model\": {\n    \"d\": 1\n  },\n  \"mc\": {}\n}";
        let err = RunConfig::from_json(text).unwrap_err();
        assert_eq!(err.line(), 4);
        assert!(err.to_string().contains("missing field `m`"), "{err}");
    }

    #[test]
    fn inline_model_round_trips() {
        let model = preset("paper-example").unwrap();
        let cfg = RunConfig {
            model: ModelSpec::Inline(model.config().clone()),
            ..RunConfig::for_preset("x")
        };
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn zeta_policy_forms() {
        let cfg = RunConfig::from_json(r#"{"model": {"preset": "paper-example"}, "numerics": {"zeta": {"fixed": 2.5}}}"#).unwrap();
        assert_eq!(cfg.numerics.zeta, ZetaPolicy::Fixed(2.5));
        let cfg = RunConfig::from_json(r#"{"model": {"preset": "paper-example"}, "numerics": {"zeta": "optimal"}}"#).unwrap();
        assert_eq!(cfg.numerics.zeta, ZetaPolicy::Optimal);
    }

    #[test]
    fn default_probes_embed_on_each_coordinate() {
        let mc = McConfig::default();
        let p = mc.probes(2).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(p[1].y, vec![1.0, 1.0]);
        let bad = McConfig {
            n_points: 9,
            ..McConfig::default()
        };
        assert!(bad.probes(1).is_err());
    }
}
