//! Constants of the convergence theory.
//!
//! Every formula is evaluated as printed, from the sampled sup-constants of a
//! [`ConditionReport`]. The bounds are very conservative and easily exceed the
//! `f64` range; such entries are stored as `+inf` and listed in `warnings`.
//! Quantities that feed inequality checks are also kept in log form.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::model::{ConditionReport, MarketModel};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BoundsError {
    #[error("zeta must be positive and finite, got {0}")]
    NonPositiveZeta(f64),
    #[error("sup-constant {name} must be finite and nonnegative, got {value}")]
    BadInput { name: &'static str, value: f64 },
    #[error("iteration index must be at least 1")]
    ZeroIteration,
}

/// Sampled sup-constants `Q*`, `D*`, `alpha*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupConstants {
    pub q_sup: f64,
    pub d_sup: f64,
    pub alpha_sup: f64,
}

impl From<&ConditionReport> for SupConstants {
    fn from(r: &ConditionReport) -> Self {
        SupConstants {
            q_sup: r.q_star,
            d_sup: r.d_star,
            alpha_sup: r.alpha_star,
        }
    }
}

/// Optimised bound for a given iteration count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalRate {
    pub n: usize,
    pub x_star: f64,
    pub zeta_star: f64,
    pub g_star: f64,
    pub log_u_star: f64,
    pub u_star: f64,
    /// `B1* U*_n`, the bound on the control gap.
    pub strategy_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsLedger {
    #[serde(rename = "Q_star")]
    pub q_sup: f64,
    #[serde(rename = "D_star")]
    pub d_sup: f64,
    #[serde(rename = "alpha_star")]
    pub alpha_sup: f64,
    pub q_star: f64,
    pub horizon: f64,
    pub m: usize,
    pub beta: f64,
    pub rho: f64,
    pub gamma: f64,
    pub eps: f64,
    pub gamma1: f64,
    pub sigma_star_norm: f64,

    pub r0: f64,
    pub phi_1: f64,
    pub phi_2: f64,
    pub iota_1: f64,
    pub iota_2: f64,
    pub psi_star: f64,
    pub iota_tilde: f64,
    pub h_star: f64,
    pub r_star: f64,
    pub l_star: f64,

    pub zeta: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub b_star: f64,
    pub log_b_star: f64,
    pub c_star: f64,
    pub log_c_star: f64,
    pub t_tilde: f64,
    pub b1_star: f64,

    pub rates: Vec<OptimalRate>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

/// `a * b` with `0 * inf = 0`: a vanishing factor switches a term off.
fn prod(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// `(e^{qT} - 1) / q`, continuous at `q = 0`.
fn exp_ratio(q: f64, t: f64) -> f64 {
    if q == 0.0 {
        t
    } else {
        (q * t).exp_m1() / q
    }
}

pub fn compute_ledger(
    report: &ConditionReport,
    model: &MarketModel,
    zeta: f64,
) -> Result<BoundsLedger, BoundsError> {
    ledger_from_constants(SupConstants::from(report), model, zeta)
}

pub fn ledger_from_constants(
    sup: SupConstants,
    model: &MarketModel,
    zeta: f64,
) -> Result<BoundsLedger, BoundsError> {
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(BoundsError::NonPositiveZeta(zeta));
    }
    for (name, value) in [
        ("Q_star", sup.q_sup),
        ("D_star", sup.d_sup),
        ("alpha_star", sup.alpha_sup),
    ] {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(BoundsError::BadInput { name, value });
        }
    }
    let SupConstants {
        q_sup,
        d_sup,
        alpha_sup: a,
    } = sup;
    let t = model.horizon();
    let m = model.m() as f64;
    let beta = model.beta();
    let qs = model.q_star();
    let b2 = beta * beta;

    let phi_tilde = |q: f64| q * (q_sup + b2 * a / 2.0) + (2.0 * m * m + 1.0) * q * q * a * a / b2;
    let phi = |q: f64| SQRT_2 * (t * phi_tilde(q)).exp();
    let iota = |q: f64| q * a * (1.0 / b2 + t);
    let (phi_1, phi_2) = (phi(1.0), phi(2.0));
    let (iota_1, iota_2) = (iota(1.0), iota(2.0));
    let inner = t * d_sup + t * a * (a + 1.0 + b2 / 2.0) + a / b2;
    let psi_star = (t * a + inner * inner).sqrt();
    let iota_tilde = b2 * t * (iota_1.max(iota_2) + a).powi(2);
    let h_star = 2.0
        * (2.0 * prod(phi_1, iota_1 + a) + prod(psi_star, phi_2.sqrt()))
            .max(1.0 / (beta * (2.0 * PI).sqrt()))
        * (iota_tilde / 2.0).exp();

    let r0 = (q_sup * t).exp() + exp_ratio(q_sup, t) / qs;
    let r_star = r0
        + m * (h_star / qs * (2.0 * t.sqrt() + t) + prod(d_sup * t, ((a + q_sup) * t).exp()));
    let l_star = (1.0 + r_star * qs + t * d_sup) * (a * t).exp();
    let one_ml = 1.0 + m * l_star;
    let kappa = q_sup + zeta + 1.0 + m * l_star;
    let lambda = 1.0 / (1.0 + zeta / one_ml);
    let one_minus_lambda = (zeta / one_ml) / (1.0 + zeta / one_ml);
    let log_b_star = kappa * t + (1.0 + r_star).ln() - one_minus_lambda.ln();
    let b_star = (kappa * t).exp() * (1.0 + r_star) / one_minus_lambda;
    let log_c_star = (1.0 + r_star).ln() + (q_sup + one_ml) * t;
    let c_star = (1.0 + r_star) * ((q_sup + one_ml) * t).exp();
    let t_tilde = one_ml * t;
    let b1_star = model.gamma1()
        * beta
        * model.eps()
        * model.sqrt_one_minus_rho2()
        * model.sigma_star_frobenius()
        * r_star
        + qs;

    let mut ledger = BoundsLedger {
        q_sup,
        d_sup,
        alpha_sup: a,
        q_star: qs,
        horizon: t,
        m: model.m(),
        beta,
        rho: model.rho(),
        gamma: model.gamma(),
        eps: model.eps(),
        gamma1: model.gamma1(),
        sigma_star_norm: model.sigma_star_frobenius(),
        r0,
        phi_1,
        phi_2,
        iota_1,
        iota_2,
        psi_star,
        iota_tilde,
        h_star,
        r_star,
        l_star,
        zeta,
        kappa,
        lambda,
        b_star,
        log_b_star,
        c_star,
        log_c_star,
        t_tilde,
        b1_star,
        rates: Vec::new(),
        warnings: Vec::new(),
        notes: vec![
            "iota_tilde uses max(iota_1, iota_2); the derivative estimate behind H* \
             works with max(iota_1, iota_2/2) + alpha*, which gives a smaller value"
                .into(),
        ],
    };
    ledger.collect_warnings();
    Ok(ledger)
}

impl BoundsLedger {
    fn collect_warnings(&mut self) {
        let entries = [
            ("r0", self.r0),
            ("phi_1", self.phi_1),
            ("phi_2", self.phi_2),
            ("H_star", self.h_star),
            ("r_star", self.r_star),
            ("L_star", self.l_star),
            ("kappa", self.kappa),
            ("B_star", self.b_star),
            ("C_star", self.c_star),
            ("B1_star", self.b1_star),
        ];
        self.warnings = entries
            .iter()
            .filter(|(_, v)| !v.is_finite())
            .map(|(n, _)| format!("{n} overflows f64 and is stored as +inf"))
            .collect();
        if self.lambda >= 1.0 {
            self.warnings
                .push("lambda rounds to 1 in f64; B_star is +inf".into());
        }
    }

    /// Sup-gap bound `B* lambda^n` in log form.
    pub fn log_sup_gap_bound(&self, n: usize) -> f64 {
        self.log_b_star + n as f64 * self.lambda.ln()
    }

    pub fn sup_gap_bound(&self, n: usize) -> f64 {
        self.log_sup_gap_bound(n).exp()
    }

    /// Fills `rates` for `n = 1..=n_max`.
    pub fn tabulate_rates(&mut self, n_max: usize) {
        self.rates = (1..=n_max)
            .map(|n| optimal_rate(n, self).expect("n >= 1"))
            .collect();
        if self.rates.iter().any(|r| !r.u_star.is_finite()) {
            let w = "U_star_n overflows f64 for some n; log_u_star is exact".to_string();
            if !self.warnings.contains(&w) {
                self.warnings.push(w);
            }
        }
    }

    /// `(name, value)` pairs for the two-column CSV.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut v: Vec<(String, f64)> = [
            ("Q_star", self.q_sup),
            ("D_star", self.d_sup),
            ("alpha_star", self.alpha_sup),
            ("q_star", self.q_star),
            ("T", self.horizon),
            ("m", self.m as f64),
            ("beta", self.beta),
            ("rho", self.rho),
            ("gamma", self.gamma),
            ("eps", self.eps),
            ("gamma1", self.gamma1),
            ("sigma_star_norm", self.sigma_star_norm),
            ("r0", self.r0),
            ("phi_1", self.phi_1),
            ("phi_2", self.phi_2),
            ("iota_1", self.iota_1),
            ("iota_2", self.iota_2),
            ("Psi_star", self.psi_star),
            ("iota_tilde", self.iota_tilde),
            ("H_star", self.h_star),
            ("r_star", self.r_star),
            ("L_star", self.l_star),
            ("zeta", self.zeta),
            ("kappa", self.kappa),
            ("lambda", self.lambda),
            ("B_star", self.b_star),
            ("log_B_star", self.log_b_star),
            ("C_star", self.c_star),
            ("log_C_star", self.log_c_star),
            ("T_tilde", self.t_tilde),
            ("B1_star", self.b1_star),
        ]
        .iter()
        .map(|(n, x)| (n.to_string(), *x))
        .collect();
        for r in &self.rates {
            v.push((format!("x_star_{}", r.n), r.x_star));
            v.push((format!("zeta_star_{}", r.n), r.zeta_star));
            v.push((format!("g_star_{}", r.n), r.g_star));
            v.push((format!("U_star_{}", r.n), r.u_star));
            v.push((format!("log_U_star_{}", r.n), r.log_u_star));
        }
        v
    }
}

/// `g_n(x) = x T~ - ln x - (n-1) ln(1+x)`.
pub fn g_n(n: usize, t_tilde: f64, x: f64) -> f64 {
    x * t_tilde - x.ln() - (n as f64 - 1.0) * x.ln_1p()
}

/// Positive root of `T~ x^2 + (T~ - n) x - 1 = 0`, the minimiser of `g_n`.
///
/// Algebraically equal to `(sqrt((T~-n)^2 + 4T~) + n - T~) / (2T~)`; the
/// rationalised branch avoids cancellation when `T~ >> n`.
pub fn x_star(n: usize, t_tilde: f64) -> f64 {
    let b = t_tilde - n as f64;
    let disc = (b * b + 4.0 * t_tilde).sqrt();
    if b > 0.0 {
        2.0 / (b + disc)
    } else {
        (disc - b) / (2.0 * t_tilde)
    }
}

pub fn optimal_rate(n: usize, ledger: &BoundsLedger) -> Result<OptimalRate, BoundsError> {
    if n == 0 {
        return Err(BoundsError::ZeroIteration);
    }
    let one_ml = 1.0 + ledger.m as f64 * ledger.l_star;
    let tt = ledger.t_tilde;
    let (x, zeta, g) = if tt.is_finite() {
        let x = x_star(n, tt);
        (x, one_ml * x, g_n(n, tt, x))
    } else {
        // x* ~ 1/T~ -> 0 and g* -> inf.
        (0.0, 1.0 / ledger.horizon, f64::INFINITY)
    };
    let log_u = ledger.log_c_star + g;
    let u = log_u.exp();
    Ok(OptimalRate {
        n,
        x_star: x,
        zeta_star: zeta,
        g_star: g,
        log_u_star: log_u,
        u_star: u,
        strategy_bound: prod(ledger.b1_star, u),
    })
}

/// Control-gap bound `B1* U*_n`.
pub fn strategy_error_bound(n: usize, ledger: &BoundsLedger) -> Result<f64, BoundsError> {
    Ok(optimal_rate(n, ledger)?.strategy_bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::preset;

    fn zeros() -> SupConstants {
        SupConstants {
            q_sup: 0.0,
            d_sup: 0.0,
            alpha_sup: 0.0,
        }
    }

    #[test]
    fn zero_constants_by_hand() {
        let model = preset("merton-constant").unwrap();
        let l = ledger_from_constants(zeros(), &model, 1.0).unwrap();
        let qs = model.q_star();
        assert_eq!(l.psi_star, 0.0);
        assert_eq!(l.iota_tilde, 0.0);
        let h = 2.0 / (2.0 * PI).sqrt();
        assert!((l.h_star - h).abs() < 1e-15);
        let r0 = 1.0 + 1.0 / qs;
        assert!((l.r0 - r0).abs() < 1e-15);
        let r_star = r0 + h / qs * 3.0;
        assert!((l.r_star - r_star).abs() < 1e-14);
        assert!((l.l_star - (1.0 + l.r_star * qs)).abs() < 1e-14);
        let lam = (1.0 + l.l_star) / (2.0 + l.l_star);
        assert!((l.lambda - lam).abs() < 1e-15);
        assert_eq!(l.kappa, 0.0 + 1.0 + 1.0 + l.l_star);
    }

    #[test]
    fn lambda_half_and_limit() {
        let model = preset("paper-example").unwrap();
        let sup = SupConstants {
            q_sup: 0.03,
            d_sup: 0.1,
            alpha_sup: 0.2,
        };
        let base = ledger_from_constants(sup, &model, 1.0).unwrap();
        let z = 1.0 + base.l_star;
        let l = ledger_from_constants(sup, &model, z).unwrap();
        assert_eq!(l.lambda, 0.5);
        let mut prev = 1.0;
        for k in 0..12 {
            let lam = ledger_from_constants(sup, &model, 10f64.powi(k)).unwrap().lambda;
            assert!(lam < prev && lam > 0.0);
            prev = lam;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn r0_limit_is_continuous() {
        let model = preset("merton-constant").unwrap();
        let mut s = zeros();
        let at0 = ledger_from_constants(s, &model, 1.0).unwrap().r0;
        s.q_sup = 1e-12;
        let near = ledger_from_constants(s, &model, 1.0).unwrap().r0;
        assert!((at0 - near).abs() < 1e-11);
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = preset("merton-constant").unwrap();
        assert!(matches!(
            ledger_from_constants(zeros(), &model, 0.0),
            Err(BoundsError::NonPositiveZeta(_))
        ));
        let mut s = zeros();
        s.d_sup = f64::NAN;
        assert!(matches!(
            ledger_from_constants(s, &model, 1.0),
            Err(BoundsError::BadInput { .. })
        ));
        let l = ledger_from_constants(zeros(), &model, 1.0).unwrap();
        assert_eq!(optimal_rate(0, &l), Err(BoundsError::ZeroIteration));
    }

    #[test]
    fn x_star_matches_printed_formula() {
        for &tt in &[0.3, 1.0, 2.5, 17.0, 400.0] {
            for n in 1..40 {
                let printed = (((tt - n as f64).powi(2) + 4.0 * tt).sqrt() + n as f64 - tt) / (2.0 * tt);
                let x = x_star(n, tt);
                assert!((x - printed).abs() <= 1e-12 * printed.max(1.0), "{tt} {n}");
                let foc = tt * x * x + (tt - n as f64) * x - 1.0;
                assert!(foc.abs() < 1e-12);
            }
            // n = 1: g_1 minimised at 1/T~.
            assert!((x_star(1, tt) - 1.0 / tt).abs() < 1e-12 / tt.min(1.0));
        }
    }

    fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        while (b - a).abs() > 1e-14 * (1.0 + a.abs()) {
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - r * (b - a);
            d = a + r * (b - a);
        }
        (a + b) / 2.0
    }

    #[test]
    fn x_star_against_golden_section() {
        for &tt in &[0.5, 3.0, 20.0] {
            for n in [1, 2, 5, 14, 30] {
                let x = golden_section(|x| g_n(n, tt, x), 1e-9, 100.0);
                assert!((x - x_star(n, tt)).abs() < 1e-6 * (1.0 + x), "{tt} {n}");
                assert!(g_n(n, tt, x_star(n, tt)) <= g_n(n, tt, x) + 1e-12);
            }
        }
    }

    #[test]
    fn super_geometric_rate() {
        // Zero sup-constants keep T~ small enough for n >> T~ to be reachable.
        let model = preset("merton-constant").unwrap();
        let mut l = ledger_from_constants(zeros(), &model, 1.0).unwrap();
        assert!(l.t_tilde < 20.0, "{}", l.t_tilde);
        l.tabulate_rates(80);
        let step = |n: usize| l.rates[n].log_u_star - l.rates[n - 1].log_u_star;
        for n in 2..79 {
            assert!(step(n + 1) < step(n), "{n}");
        }
        // Faster than any geometric rate: the log-step keeps falling.
        assert!(step(79) < step(40) - 0.5);
    }

    #[test]
    fn large_ledger_stays_finite_in_log_form() {
        let model = preset("paper-example").unwrap();
        let sup = SupConstants {
            q_sup: 0.04,
            d_sup: 0.3,
            alpha_sup: 0.7,
        };
        let mut l = ledger_from_constants(sup, &model, 1.0).unwrap();
        l.tabulate_rates(31);
        assert!(l.log_c_star.is_finite());
        assert!(l.rates.iter().all(|r| r.log_u_star.is_finite()));
    }

    #[test]
    fn strategy_bound_at_rho_one() {
        let m = preset("merton-constant")
            .unwrap()
            .with_scalars(None, Some(1.0), None, None)
            .unwrap();
        let l = ledger_from_constants(zeros(), &m, 1.0).unwrap();
        assert_eq!(l.b1_star, m.q_star());
    }

    #[test]
    fn deterministic() {
        let model = preset("paper-example").unwrap();
        let sup = SupConstants {
            q_sup: 0.03,
            d_sup: 0.2,
            alpha_sup: 0.5,
        };
        let a = ledger_from_constants(sup, &model, 2.0).unwrap();
        let b = ledger_from_constants(sup, &model, 2.0).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
