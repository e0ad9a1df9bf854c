//! Fixed-point iteration `h_n = L(h_{n-1})`, `h_0 = 1`, on a one-factor grid.

mod band;
mod operator;
mod residual;

use serde::{Deserialize, Serialize};

use crate::constants::{ledger_from_constants, optimal_rate, BoundsError, BoundsLedger, SupConstants};
use crate::grid::{weighted_distance, Grid, GridError, GridFunction};
use crate::model::{check_conditions, ConditionReport, MarketModel, ModelError, SamplingBox};

pub use operator::{Applied, FkOperator};
pub use residual::{hjb_residual, residual_with};

/// Increments below this are treated as the solver's roundoff floor.
pub const NUMERICAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FkError {
    #[error("the PDE solver handles one factor only, got m = {0}; use the Monte Carlo oracle")]
    UnsupportedDimension(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("{0}")]
    Invalid(String),
    #[error("zero pivot in the implicit step at t={t}")]
    Singular { t: f64 },
    #[error("non-finite value {value} at t={t}, y={y}")]
    NonFinite { t: f64, y: f64, value: f64 },
    #[error("iteration {n}: {source}")]
    Iteration {
        n: usize,
        #[source]
        source: Box<FkError>,
    },
}

/// Choice of the metric weight `zeta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaPolicy {
    Fixed(f64),
    /// `zeta*_n` at `n = n_max`.
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub tol: f64,
    pub n_max: usize,
    pub zeta: ZetaPolicy,
    pub keep_history: bool,
    pub condition_samples: usize,
    pub condition_seed: u64,
    pub derivative_cap: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-15,
            n_max: 20,
            zeta: ZetaPolicy::Optimal,
            keep_history: false,
            condition_samples: 20_000,
            condition_seed: 0,
            derivative_cap: 100.0,
        }
    }
}

/// Observed gap against a theoretical bound, both in natural units; the
/// bound is also kept in log form because it often overflows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub n: usize,
    pub observed: f64,
    pub bound: f64,
    pub log_bound: f64,
    pub holds: bool,
}

impl BoundCheck {
    pub fn new(n: usize, observed: f64, log_bound: f64) -> Self {
        let holds = observed <= 0.0 || observed.ln() <= log_bound;
        BoundCheck {
            n,
            observed,
            bound: log_bound.exp(),
            log_bound,
            holds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub h: GridFunction,
    /// `h_1 .. h_n` when requested.
    pub history: Option<Vec<GridFunction>>,
    /// `delta_n = max |h_n - h_{n-1}|`, starting at `n = 1`.
    pub delta_seq: Vec<f64>,
    /// kappa-weighted distance between consecutive iterates.
    pub metric_seq: Vec<f64>,
    /// Unweighted `max (|h_n - h_{n-1}| + |D_y h_n - D_y h_{n-1}|)`.
    pub gap_seq: Vec<f64>,
    pub clamp_counts: Vec<usize>,
    pub n_done: usize,
    /// First `n` with `delta_n < NUMERICAL_FLOOR`.
    pub floor_index: Option<usize>,
    pub converged: bool,
    pub residual: GridFunction,
    pub residual_sup: f64,
    /// Gap to the final iterate against `B* lambda^n`.
    pub sup_gap: Vec<BoundCheck>,
    pub conditions: ConditionReport,
    pub ledger: BoundsLedger,
}

/// Samples the conditions over the grid box and builds the ledger for the
/// requested `zeta` policy.
pub fn ledger_for(
    model: &MarketModel,
    grid: &Grid,
    opts: &SolveOptions,
) -> Result<(ConditionReport, BoundsLedger), FkError> {
    let bx = SamplingBox {
        lo: grid.lo().to_vec(),
        hi: grid.hi().to_vec(),
    };
    let report = check_conditions(
        model,
        &bx,
        opts.condition_samples,
        opts.condition_seed,
        opts.derivative_cap,
    )?;
    let sup = SupConstants::from(&report);
    let zeta = match opts.zeta {
        ZetaPolicy::Fixed(z) => z,
        ZetaPolicy::Optimal => {
            // L* does not depend on zeta.
            let probe = ledger_from_constants(sup, model, 1.0)?;
            optimal_rate(opts.n_max.max(1), &probe)?.zeta_star
        }
    };
    let mut ledger = ledger_from_constants(sup, model, zeta)?;
    ledger.tabulate_rates(opts.n_max.max(1));
    Ok((report, ledger))
}

pub fn solve_fixed_point(model: &MarketModel, grid: &Grid, opts: &SolveOptions) -> Result<SolveResult, FkError> {
    if !(opts.tol > 0.0) {
        return Err(FkError::Invalid(format!("tol must be positive, got {}", opts.tol)));
    }
    if opts.n_max == 0 {
        return Err(FkError::Invalid("n_max must be at least 1".into()));
    }
    let op = FkOperator::new(model, grid)?;
    let (conditions, ledger) = ledger_for(model, grid, opts)?;

    let mut prev = GridFunction::constant(grid.clone(), 1.0);
    let mut iterates = Vec::new();
    let (mut delta_seq, mut metric_seq, mut gap_seq, mut clamp_counts) = (vec![], vec![], vec![], vec![]);
    let mut converged = false;
    for n in 1..=opts.n_max {
        let out = op.apply(&prev).map_err(|e| FkError::Iteration {
            n,
            source: Box::new(e),
        })?;
        let delta = out.u.sup_diff(&prev)?;
        metric_seq.push(weighted_distance(&out.u, &prev, ledger.kappa)?);
        gap_seq.push(weighted_distance(&out.u, &prev, 0.0)?);
        delta_seq.push(delta);
        clamp_counts.push(out.clamped);
        if out.clamped > 0 {
            log::warn!(
                "iteration {n}: {} node(s) clamped to 1 (max undershoot {:e})",
                out.clamped,
                out.max_undershoot
            );
        }
        log::info!("iteration {n}: delta = {delta:e}");
        iterates.push(out.u.clone());
        prev = out.u;
        if delta <= opts.tol {
            converged = true;
            break;
        }
    }
    let n_done = delta_seq.len();
    let floor_index = delta_seq.iter().position(|&d| d < NUMERICAL_FLOOR).map(|i| i + 1);
    let h = prev;
    let mut sup_gap = Vec::with_capacity(n_done);
    for (i, hn) in iterates.iter().enumerate() {
        let observed = weighted_distance(&h, hn, 0.0)?;
        sup_gap.push(BoundCheck::new(i + 1, observed, ledger.log_sup_gap_bound(i + 1)));
    }
    let residual = residual_with(&op, &h)?;
    let residual_sup = residual.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(SolveResult {
        h,
        history: opts.keep_history.then_some(iterates),
        delta_seq,
        metric_seq,
        gap_seq,
        clamp_counts,
        n_done,
        floor_index,
        converged,
        residual,
        residual_sup,
        sup_gap,
        conditions,
        ledger,
    })
}

/// Runs exactly `n` iterations from `h_0 = 1` and returns `h_n`.
pub fn iterate_n(model: &MarketModel, grid: &Grid, n: usize) -> Result<GridFunction, FkError> {
    let op = FkOperator::new(model, grid)?;
    let mut h = GridFunction::constant(grid.clone(), 1.0);
    for i in 1..=n {
        h = op
            .apply(&h)
            .map_err(|e| FkError::Iteration {
                n: i,
                source: Box::new(e),
            })?
            .u;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::preset;

    #[test]
    fn huge_tolerance_stops_after_one_step() {
        let model = preset("paper-example").unwrap();
        let grid = Grid::uniform_1d(1.0, 41, -6.0, 6.0, 81).unwrap();
        let opts = SolveOptions {
            tol: 10.0,
            condition_samples: 500,
            ..SolveOptions::default()
        };
        let res = solve_fixed_point(&model, &grid, &opts).unwrap();
        assert_eq!(res.n_done, 1);
        let once = iterate_n(&model, &grid, 1).unwrap();
        assert_eq!(res.h, once);
    }

    #[test]
    fn invalid_options() {
        let model = preset("paper-example").unwrap();
        let grid = Grid::uniform_1d(1.0, 11, -6.0, 6.0, 21).unwrap();
        let bad = SolveOptions {
            tol: 0.0,
            ..SolveOptions::default()
        };
        assert!(matches!(solve_fixed_point(&model, &grid, &bad), Err(FkError::Invalid(_))));
        let bad = SolveOptions {
            n_max: 0,
            ..SolveOptions::default()
        };
        assert!(matches!(solve_fixed_point(&model, &grid, &bad), Err(FkError::Invalid(_))));
    }

    #[test]
    fn bound_check_in_log_space() {
        assert!(BoundCheck::new(3, 0.0, -1e6).holds);
        assert!(BoundCheck::new(3, 1e300, 1e6).holds);
        assert!(!BoundCheck::new(3, 2.0, 0.5).holds);
    }
}
