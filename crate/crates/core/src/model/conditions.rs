//! Sampling-based check of the regularity conditions A1-A3 and estimation of
//! the sup-constants `Q*`, `D*` and `alpha*` that feed the convergence bounds.
//!
//! The conditions are global bounds over `[0,T] x R^m`; here they are
//! estimated over a truncated box from a shifted Halton point set, so every
//! reported constant is the maximum over a declared, seed-reproducible sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::SINGULAR_DET;
use super::{invalid, MarketModel, ModelError};
use crate::expr::{CoefficientExpr, Program, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionStatus {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SamplingBox {
    pub fn uniform(m: usize, lo: f64, hi: f64) -> Self {
        SamplingBox {
            lo: vec![lo; m],
            hi: vec![hi; m],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub a1: ConditionStatus,
    pub a2: ConditionStatus,
    pub a3: ConditionStatus,
    pub sup_r: f64,
    pub sup_mu: f64,
    /// Frobenius norm.
    pub sup_sigma_inv: f64,
    pub q_star: f64,
    pub d_star: f64,
    pub alpha_star: f64,
    pub sup_drift: f64,
    pub sup_drift_dt: f64,
    pub sup_drift_dy: f64,
    pub sup_coefficient_derivative: f64,
    pub min_r: f64,
    pub min_mu: f64,
    pub sampling_box: SamplingBox,
    pub horizon: f64,
    pub samples: usize,
    pub seed: u64,
    pub derivative_cap: f64,
    /// Points where evaluation failed (singular volatility, domain errors).
    pub failures: Vec<String>,
    pub notes: Vec<String>,
}

const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

/// Cranley-Patterson shifted Halton points in `[0,T] x box`.
pub(crate) fn sample_points(
    horizon: f64,
    bx: &SamplingBox,
    samples: usize,
    seed: u64,
) -> impl Iterator<Item = (f64, Vec<f64>)> + '_ {
    let m = bx.lo.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..=m).map(|_| rng.random::<f64>()).collect();
    (1..=samples as u64).map(move |i| {
        let u = |k: usize| (radical_inverse(i, PRIMES[k]) + shift[k]).fract();
        let t = horizon * u(0);
        let y = (0..m)
            .map(|j| bx.lo[j] + (bx.hi[j] - bx.lo[j]) * u(j + 1))
            .collect();
        (t, y)
    })
}

/// Estimates the condition constants of `model` over `[0,T] x bx`.
pub fn check_conditions(
    model: &MarketModel,
    bx: &SamplingBox,
    samples: usize,
    seed: u64,
    derivative_cap: f64,
) -> Result<ConditionReport, ModelError> {
    let (d, m) = (model.d, model.m);
    if samples < 100 {
        return Err(invalid("condition check needs at least 100 samples"));
    }
    if bx.lo.len() != m || bx.hi.len() != m || bx.lo.iter().zip(&bx.hi).any(|(a, b)| !(a < b)) {
        return Err(invalid(format!("sampling box must be {m}-dimensional with lo < hi")));
    }
    if m > PRIMES.len() - 1 {
        return Err(invalid("factor dimension too large for the sampling sequence"));
    }

    // Derivative blocks, one per variable t, y1..ym: [r, mu, sigma, F].
    let vars: Vec<Var> = std::iter::once(Var::T).chain((0..m).map(Var::Y)).collect();
    let block = 1 + d + d * d + m;
    let mut dexprs: Vec<CoefficientExpr> = Vec::with_capacity(block * vars.len());
    for &v in &vars {
        dexprs.push(model.r.differentiate(v));
        dexprs.extend(model.mu.iter().map(|e| e.differentiate(v)));
        dexprs.extend(model.sigma.iter().map(|e| e.differentiate(v)));
        dexprs.extend(model.drift.iter().map(|e| e.differentiate(v)));
    }
    let dprog = Program::compile(&dexprs, m).map_err(|source| ModelError::Expr {
        what: "coefficient derivatives".into(),
        source,
    })?;
    let mut dev = dprog.evaluator();

    // Decomposition parts a_{i,l} with their t- and y_l-derivatives.
    let parts_prog = match model.alpha_parts() {
        Some(parts) => {
            let mut list = Vec::with_capacity(3 * parts.len());
            for (k, a) in parts.iter().enumerate() {
                list.push(a.clone());
                list.push(a.differentiate(Var::T));
                list.push(a.differentiate(Var::Y(k % m)));
            }
            Some(Program::compile(&list, m).map_err(|source| ModelError::Expr {
                what: "alpha decomposition".into(),
                source,
            })?)
        }
        None => None,
    };
    let mut pev = parts_prog.as_ref().map(Program::evaluator);

    let mut ws = model.workspace();
    let inv_gamma = 1.0 / (1.0 - model.gamma);
    let pref = model.q_prefactor();
    let bs = model.beta_star();

    let mut rep = ConditionReport {
        a1: ConditionStatus::Pass,
        a2: ConditionStatus::Pass,
        a3: ConditionStatus::Pass,
        sup_r: 0.0,
        sup_mu: 0.0,
        sup_sigma_inv: 0.0,
        q_star: 0.0,
        d_star: 0.0,
        alpha_star: 0.0,
        sup_drift: 0.0,
        sup_drift_dt: 0.0,
        sup_drift_dy: 0.0,
        sup_coefficient_derivative: 0.0,
        min_r: f64::INFINITY,
        min_mu: f64::INFINITY,
        sampling_box: bx.clone(),
        horizon: model.horizon,
        samples,
        seed,
        derivative_cap,
        failures: Vec::new(),
        notes: Vec::new(),
    };
    let mut failure_count = 0usize;
    let mut det_pos = false;
    let mut det_neg = false;
    let mut min_det: Option<(f64, f64, Vec<f64>)> = None;

    let mut sig_inv = vec![0.0; d * d];
    let mut col = vec![0.0; d];
    let mut scratch = vec![0.0; d.max(m)];
    let mut dtheta = vec![0.0; d];
    let mut dq = vec![0.0; vars.len()];
    let mut dalpha = vec![vec![0.0; m]; vars.len()];

    let mut record_failure = |rep: &mut ConditionReport, msg: String| {
        failure_count += 1;
        if rep.failures.len() < 16 {
            rep.failures.push(msg);
        }
    };

    for (t, y) in sample_points(model.horizon, bx, samples, seed) {
        if let Err(e) = model.evaluate(&mut ws, t, &y) {
            record_failure(&mut rep, e.to_string());
            continue;
        }
        // sigma^{-1} and det(sigma); `evaluate` already factorised for d > 1.
        let det = if d == 1 {
            sig_inv[0] = 1.0 / ws.sigma[0];
            ws.sigma[0]
        } else {
            let det = ws.lu.factor(&ws.sigma);
            for j in 0..d {
                col.iter_mut().enumerate().for_each(|(i, c)| *c = (i == j) as u8 as f64);
                ws.lu.solve(&mut col, &mut scratch);
                for i in 0..d {
                    sig_inv[i * d + j] = col[i];
                }
            }
            det
        };
        if det > 0.0 {
            det_pos = true;
        } else {
            det_neg = true;
        }
        if min_det.as_ref().is_none_or(|(v, ..)| det.abs() < *v) {
            min_det = Some((det.abs(), t, y.clone()));
        }

        rep.sup_r = rep.sup_r.max(ws.r.abs());
        rep.min_r = rep.min_r.min(ws.r);
        rep.sup_mu = rep.sup_mu.max(ws.mu.iter().map(|v| v * v).sum::<f64>().sqrt());
        rep.min_mu = rep.min_mu.min(ws.mu.iter().copied().fold(f64::INFINITY, f64::min));
        rep.sup_sigma_inv = rep
            .sup_sigma_inv
            .max(sig_inv.iter().map(|v| v * v).sum::<f64>().sqrt());
        rep.q_star = rep.q_star.max(ws.q);
        rep.sup_drift = rep.sup_drift.max(ws.drift.iter().fold(0.0, |a, v| a.max(v.abs())));

        if let Err(e) = dprog.eval(&mut dev, t, &y) {
            record_failure(&mut rep, format!("derivative at t={t}, y={y:?}: {e}"));
            continue;
        }
        for (vi, _) in vars.iter().enumerate() {
            let base = vi * block;
            let g = |k: usize| dprog.output(&dev, base + k);
            let dr = g(0);
            // d theta = sigma^{-1} (d mu - d r 1 - d sigma theta)
            for i in 0..d {
                let mut acc = g(1 + i) - dr;
                for j in 0..d {
                    acc -= g(1 + d + i * d + j) * ws.theta[j];
                }
                col[i] = acc;
            }
            for i in 0..d {
                dtheta[i] = (0..d).map(|j| sig_inv[i * d + j] * col[j]).sum();
            }
            let th_dth: f64 = ws.theta.iter().zip(&dtheta).map(|(a, b)| a * b).sum();
            dq[vi] = pref * (dr + th_dth * inv_gamma);
            for i in 0..m {
                let dfi = g(1 + d + d * d + i);
                let mut acc = 0.0;
                for j in 0..d {
                    acc += model.sigma_star[i * d + j] * dtheta[j];
                }
                dalpha[vi][i] = dfi + bs * acc;
                if vi == 0 {
                    rep.sup_drift_dt = rep.sup_drift_dt.max(dfi.abs());
                } else {
                    rep.sup_drift_dy = rep.sup_drift_dy.max(dfi.abs());
                }
            }
            for k in 0..1 + d + d * d {
                rep.sup_coefficient_derivative = rep.sup_coefficient_derivative.max(g(k).abs());
            }
        }
        let grad_q = dq[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        rep.d_star = rep.d_star.max(grad_q);

        let local_alpha = match (&parts_prog, pev.as_mut()) {
            (Some(p), Some(ev)) => {
                if let Err(e) = p.eval(ev, t, &y) {
                    record_failure(&mut rep, format!("alpha part at t={t}, y={y:?}: {e}"));
                    continue;
                }
                (0..p.n_outputs()).fold(0.0f64, |a, k| a.max(p.output(ev, k).abs()))
            }
            _ => {
                // Componentwise: a_{i,i} = alpha_i.
                let mut a = 0.0f64;
                for i in 0..m {
                    a = a.max(ws.alpha[i].abs());
                    for row in &dalpha {
                        a = a.max(row[i].abs());
                    }
                }
                a
            }
        };
        rep.alpha_star = rep.alpha_star.max(local_alpha);
    }

    if failure_count > 0 {
        rep.a1 = ConditionStatus::Fail;
        rep.notes.push(format!("{failure_count} sample point(s) failed to evaluate"));
    }
    if det_pos && det_neg {
        rep.a1 = ConditionStatus::Fail;
        let (v, t, y) = min_det.clone().expect("at least one sample evaluated");
        rep.failures.push(format!(
            "det(sigma) changes sign over the box; sigma is singular near t={t}, y={y:?} (|det|={v:e})"
        ));
    }
    if let Some((v, t, y)) = &min_det {
        if *v <= SINGULAR_DET * 1e3 && rep.a1 != ConditionStatus::Fail {
            rep.a1 = ConditionStatus::Warn;
            rep.notes.push(format!("near-singular sigma at t={t}, y={y:?}"));
        }
    }
    let warn = |s: &mut ConditionStatus| {
        if *s == ConditionStatus::Pass {
            *s = ConditionStatus::Warn;
        }
    };
    if rep.min_r < 0.0 || rep.min_mu < 0.0 {
        warn(&mut rep.a1);
        rep.notes.push("r or mu takes negative values on the box".into());
    }
    if rep.sup_sigma_inv > derivative_cap || rep.sup_coefficient_derivative > derivative_cap {
        warn(&mut rep.a1);
        rep.notes.push(format!("A1 bound exceeds cap {derivative_cap}"));
    }
    if rep.sup_drift_dt.max(rep.sup_drift_dy) > derivative_cap {
        warn(&mut rep.a2);
        rep.notes.push(format!("F derivative bound exceeds cap {derivative_cap}"));
    }
    if rep.alpha_star > derivative_cap {
        warn(&mut rep.a3);
        rep.notes.push(format!("alpha* exceeds cap {derivative_cap}"));
    }
    if model.alpha_parts().is_none() && m > 1 {
        rep.notes
            .push("no alpha decomposition supplied; alpha* uses alpha_i as a_{i,i}".into());
    }
    if failure_count == samples {
        rep.q_star = f64::NAN;
        rep.d_star = f64::NAN;
        rep.alpha_star = f64::NAN;
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{preset, ModelConfig};

    fn bx() -> SamplingBox {
        SamplingBox::uniform(1, -6.0, 6.0)
    }

    #[test]
    fn constant_model_has_zero_gradient() {
        let m = preset("merton-constant").unwrap();
        let q = m.q_coefficient(0.0, &[0.0]).unwrap();
        let rep = check_conditions(&m, &bx(), 500, 1, 100.0).unwrap();
        assert_eq!(rep.q_star, q);
        assert_eq!(rep.d_star, 0.0);
        assert_eq!(rep.a1, ConditionStatus::Pass);
        assert!((rep.alpha_star - 0.02 * m.beta_star()).abs() < 1e-15);
    }

    #[test]
    fn vanishing_volatility_fails_a1() {
        let mut cfg: ModelConfig = preset("merton-constant").unwrap().config().clone();
        cfg.sigma = vec![vec!["y".into()]];
        let m = crate::model::MarketModel::from_config(cfg).unwrap();
        let rep = check_conditions(&m, &bx(), 1000, 3, 100.0).unwrap();
        assert_eq!(rep.a1, ConditionStatus::Fail);
        let last = rep.failures.last().unwrap();
        assert!(last.contains("singular"), "{last}");
    }

    #[test]
    fn reproducible_given_seed() {
        let m = preset("paper-example").unwrap();
        let a = check_conditions(&m, &bx(), 2000, 9, 100.0).unwrap();
        let b = check_conditions(&m, &bx(), 2000, 9, 100.0).unwrap();
        assert_eq!(a, b);
        let c = check_conditions(&m, &bx(), 2000, 10, 100.0).unwrap();
        assert_ne!(a.q_star, c.q_star);
    }

    #[test]
    fn too_few_samples() {
        let m = preset("paper-example").unwrap();
        assert!(check_conditions(&m, &bx(), 99, 0, 1.0).is_err());
    }

    #[test]
    fn two_asset_uses_decomposition() {
        let m = preset("two-asset-sv").unwrap();
        let rep = check_conditions(&m, &SamplingBox::uniform(2, -3.0, 3.0), 2000, 0, 100.0).unwrap();
        assert_eq!(rep.a1, ConditionStatus::Pass);
        assert!(rep.alpha_star.is_finite() && rep.alpha_star > 0.0);
    }

    #[test]
    fn halton_points_cover_the_box() {
        let pts: Vec<_> = sample_points(1.0, &bx(), 1000, 0).collect();
        assert_eq!(pts.len(), 1000);
        assert!(pts.iter().all(|(t, y)| (0.0..=1.0).contains(t) && (-6.0..=6.0).contains(&y[0])));
        let left = pts.iter().filter(|(_, y)| y[0] < 0.0).count();
        assert!((left as i64 - 500).abs() < 10);
    }
}
