//! The Lyapunov functional
//! `L(u) = sup_{u(x) ∈ (0, δ₀)} [log(1/u(x)) + log_b(1 + ε₁ − u(x − M)/u(x))₊]`
//! and the solver for its parameter constraints.
//!
//! The first term grows deep in the tail; the second is `−∞` wherever
//! `u` is steep over the lag `M`, so `L` is large only where the tail is
//! both deep and flat.

use serde::{Deserialize, Serialize};

use crate::dist::TailCurve;
use crate::error::{Error, Result};

/// Default upper cutoff `δ₀` of the region where the functional is taken.
pub const DEFAULT_DELTA0: f64 = 0.05;
/// Tail values at or below this are excluded from the sup.
pub const DEFAULT_LYAP_FLOOR: f64 = 1e-12;

fn default_floor() -> f64 {
    DEFAULT_LYAP_FLOOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovParams {
    pub delta0: f64,
    pub eps1: f64,
    #[serde(rename = "M")]
    pub m_lag: f64,
    pub b: f64,
    pub a: f64,
    #[serde(rename = "M0")]
    pub m0: f64,
    pub kappa: f64,
    pub m: f64,
    pub eps0: f64,
    pub theta_star: f64,
    /// Empirical threshold, filled in from a burn-in run; diagnostic only.
    #[serde(default, rename = "C1")]
    pub c1: Option<f64>,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

/// One named constraint of the parameter system and whether it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintCheck {
    pub name: &'static str,
    pub holds: bool,
    pub detail: String,
}

impl LyapunovParams {
    /// Evaluate every constraint tying the parameters together.
    pub fn constraints(&self) -> Vec<ConstraintCheck> {
        let lm = self.m.ln();
        let lb = self.b.ln();
        let mut out = Vec::new();
        let mut check = |name: &'static str, holds: bool, detail: String| {
            out.push(ConstraintCheck { name, holds, detail });
        };
        check("delta0 in (0, 1)", self.delta0 > 0.0 && self.delta0 < 1.0, format!("delta0 = {}", self.delta0));
        check("m in (1, 2]", self.m > 1.0 && self.m <= 2.0, format!("m = {}", self.m));
        check("a > 0", self.a > 0.0, format!("a = {}", self.a));
        check("M0 > 0", self.m0 > 0.0, format!("M0 = {}", self.m0));
        check("eps1 > 0", self.eps1 > 0.0, format!("eps1 = {}", self.eps1));
        check(
            "eps0 = log(m)/100",
            (self.eps0 - lm / 100.0).abs() <= 1e-12,
            format!("eps0 = {}, log(m)/100 = {}", self.eps0, lm / 100.0),
        );
        check("eps1 < log(m)/100", self.eps1 < lm / 100.0, format!("eps1 = {}", self.eps1));
        check("a*M > 100", self.a * self.m_lag > 100.0, format!("a*M = {}", self.a * self.m_lag));
        check("M > 2*M0", self.m_lag > 2.0 * self.m0, format!("M = {}, M0 = {}", self.m_lag, self.m0));
        check(
            "1 < b < exp(theta_star)",
            self.b > 1.0 && self.b < self.theta_star.exp(),
            format!("b = {}, exp(theta_star) = {}", self.b, self.theta_star.exp()),
        );
        check("kappa in (0, 1)", self.kappa > 0.0 && self.kappa < 1.0, format!("kappa = {}", self.kappa));
        let k_min = lb * lm / 20.0;
        check(
            "log(b)log(m)/20 <= kappa",
            k_min <= self.kappa * (1.0 + 1e-12),
            format!("log(b)log(m)/20 = {k_min}, kappa = {}", self.kappa),
        );
        let lhs = self.a / (8.0 * lb);
        let rhs = 6.0 * self.eps1 + 6.0 * lm / (100.0 * self.m_lag);
        check("a/(8 log b) > 6 eps1 + 6 log(m)/(100 M)", lhs > rhs, format!("{lhs} vs {rhs}"));
        let lhs = self.a * self.m_lag / 8.0;
        let rhs = -(k_min.ln());
        check("a M/8 > -log(log(b)log(m)/20)", lhs > rhs, format!("{lhs} vs {rhs}"));
        check("floor in [0, delta0)", self.floor >= 0.0 && self.floor < self.delta0, format!("floor = {}", self.floor));
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.constraints().into_iter().find(|c| !c.holds) {
            None => Ok(()),
            Some(c) => Err(Error::Infeasible(format!("constraint `{}` violated: {}", c.name, c.detail))),
        }
    }

    /// The lag `M` rounded to the nearest multiple of `step`.
    pub fn lag_on_grid(&self, step: f64) -> f64 {
        (self.m_lag / step).round().max(1.0) * step
    }
}

/// Solve the parameter system for the given tail-domination constants.
///
/// `M = max(101/a, 2M₀ + 1)` rounded up to a multiple of `grid_step`,
/// `ε₁ = (log m)/200`, and `b` is scanned downward through
/// `1 + (b_max − 1)·2^{−k}` with `b_max = min(e^{θ*}, 2)` until the remaining
/// inequalities hold with `κ = (log b)(log m)/20`.
pub fn select_params(a: f64, m0: f64, m: f64, theta_star: f64, grid_step: f64) -> Result<LyapunovParams> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Infeasible(format!("tail-domination rate a must be positive, got {a}")));
    }
    if !(m0 > 0.0 && m0.is_finite()) {
        return Err(Error::Infeasible(format!("M0 must be positive, got {m0}")));
    }
    if !(m > 1.0 && m <= 2.0) {
        return Err(Error::Infeasible(format!("growth constant m must lie in (1, 2], got {m}")));
    }
    if !(theta_star > 0.0 && theta_star.is_finite()) {
        return Err(Error::Infeasible(format!("theta_star must be positive, got {theta_star}")));
    }
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(Error::Domain(format!("grid step must be positive, got {grid_step}")));
    }
    let raw = (101.0 / a).max(2.0 * m0 + 1.0);
    let m_lag = (raw / grid_step - 1e-9).ceil() * grid_step;
    let lm = m.ln();
    let cap = theta_star.exp();
    let (b_max, strict) = if cap <= 2.0 { (cap, true) } else { (2.0, false) };
    let mut k = if strict { 1 } else { 0 };
    let mut last = None;
    loop {
        let b = 1.0 + (b_max - 1.0) * 0.5f64.powi(k);
        if b - 1.0 < 1e-6 {
            break;
        }
        let params = LyapunovParams {
            delta0: DEFAULT_DELTA0,
            eps1: lm / 200.0,
            m_lag,
            b,
            a,
            m0,
            kappa: b.ln() * lm / 20.0,
            m,
            eps0: lm / 100.0,
            theta_star,
            c1: None,
            floor: DEFAULT_LYAP_FLOOR,
        };
        match params.validate() {
            Ok(()) => return Ok(params),
            Err(e) => last = Some(e),
        }
        k += 1;
    }
    Err(last.unwrap_or_else(|| Error::Infeasible("no admissible b in (1, min(e^theta*, 2))".into())))
}

/// `ℓ` from the two tail values `u(x)` and `u(x − M)`.
pub fn ell_value(ux: f64, ux_lag: f64, eps1: f64, b: f64) -> f64 {
    if ux <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let arg = 1.0 + eps1 - ux_lag / ux;
    if arg <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -ux.ln() + arg.ln() / b.ln()
}

/// `ℓ(u; x)` with the lag snapped to the grid.
pub fn ell(u: &TailCurve, x: f64, params: &LyapunovParams) -> f64 {
    let lag = params.lag_on_grid(u.step());
    ell_value(u.eval(x), u.eval(x - lag), params.eps1, params.b)
}

/// `L(u)`: the sup of `ℓ` over grid points with `u(x) ∈ (floor, δ₀)`,
/// or `−∞` when there are none.
pub fn lyap(u: &TailCurve, params: &LyapunovParams) -> f64 {
    let lag_slots = (params.lag_on_grid(u.step()) / u.step()).round() as i64;
    let start = u.start_index();
    u.values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > params.floor && v < params.delta0)
        .map(|(i, &v)| {
            let lagged = u.value_at_index(start + i as i64 - lag_slots);
            ell_value(v, lagged, params.eps1, params.b)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Grid points deep in the tail where `u` is flat over the lag:
/// `u(x) ≤ δ₁`, `u(x) > floor` and `u(x − M) < (1 + ε₁/2)·u(x)`.
pub fn flatness_check(u: &TailCurve, delta1: f64, lag: f64, eps1: f64, floor: f64) -> Vec<f64> {
    let slots = (lag / u.step()).round() as i64;
    let start = u.start_index();
    u.values()
        .iter()
        .enumerate()
        .filter(|(i, &v)| {
            v <= delta1 && v > floor && u.value_at_index(start + *i as i64 - slots) < (1.0 + eps1 / 2.0) * v
        })
        .map(|(i, _)| u.x(i))
        .collect()
}

/// Running maximum of `values[..burn_in]`: the empirical threshold `C₁`.
pub fn burn_in_max(values: &[f64], burn_in: usize) -> f64 {
    values.iter().take(burn_in).copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Whether every value after the burn-in stays within `tol` of the burn-in max.
pub fn bounded_after_burn_in(values: &[f64], burn_in: usize, tol: f64) -> bool {
    let cap = burn_in_max(values, burn_in);
    values.iter().skip(burn_in).all(|&v| v <= cap + tol)
}

/// Whether each value after the burn-in stays within `tol` of the running
/// max of all earlier values.
pub fn never_exceeds_running_max(values: &[f64], burn_in: usize, tol: f64) -> bool {
    let mut running = burn_in_max(values, burn_in);
    for &v in values.iter().skip(burn_in) {
        if v > running + tol {
            return false;
        }
        running = running.max(v);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::GridMode;
    use proptest::prelude::*;

    fn params(eps1: f64, b: f64, delta0: f64, lag: f64) -> LyapunovParams {
        LyapunovParams {
            delta0,
            eps1,
            m_lag: lag,
            b,
            a: 1.0,
            m0: 1.0,
            kappa: 0.5,
            m: 2.0,
            eps0: 2f64.ln() / 100.0,
            theta_star: 1.0,
            c1: None,
            floor: DEFAULT_LYAP_FLOOR,
        }
    }

    #[test]
    fn ell_arithmetic() {
        // log(100) + log2(1.1 − 1.05) = 4.605170 − 4.321928.
        let v = ell_value(0.01, 0.0105, 0.1, 2.0);
        assert!((v - (100f64.ln() + 0.05f64.log2())).abs() < 1e-14);
        assert!((v - 0.28324).abs() < 5e-6, "{v}");
        assert_eq!(ell_value(0.01, 0.0115, 0.1, 2.0), f64::NEG_INFINITY);
        assert_eq!(ell_value(0.01, 0.02, 0.1, 2.0), f64::NEG_INFINITY);
        // log(25) + log2(0.1).
        let flat = ell_value(0.04, 0.04, 0.1, 2.0);
        assert!((flat - (25f64.ln() + 0.1f64.log2())).abs() < 1e-14);
        assert!((flat - (-0.10305)).abs() < 5e-6, "{flat}");
        assert_eq!(ell_value(0.0, 0.0, 0.1, 2.0), f64::NEG_INFINITY);
    }

    #[test]
    fn lyap_of_step_is_minus_infinity() {
        let step = TailCurve::point_mass(0.0, 0.1, 10.0, GridMode::Lattice).unwrap();
        assert_eq!(lyap(&step, &params(0.1, 2.0, 0.05, 1.0)), f64::NEG_INFINITY);
        let shallow = TailCurve::from_fn(0.0, 0.1, 3, GridMode::Continuous, |x| if x < 0.1 { 1.0 } else { 0.0 })
            .unwrap();
        assert_eq!(lyap(&shallow, &params(0.1, 2.0, 0.05, 1.0)), f64::NEG_INFINITY);
    }

    #[test]
    fn lyap_on_a_flat_plateau() {
        // Linear drop to a 0.04 plateau on [0, 10], then linear to 0 at 20.
        let c = TailCurve::from_fn(-1.0, 0.1, 221, GridMode::Continuous, |x| {
            if x < 0.0 {
                1.0 - 0.96 * (x + 1.0).clamp(0.0, 1.0)
            } else if x <= 10.0 {
                0.04
            } else {
                (0.004 * (20.0 - x)).max(0.0)
            }
        })
        .unwrap();
        let p = params(0.1, 2.0, 0.05, 2.0);
        assert!((lyap(&c, &p) - (-0.10305)).abs() < 1e-4);
        assert!((ell(&c, 5.0, &p) - (-0.10305)).abs() < 1e-4);
    }

    #[test]
    fn lyap_is_shift_invariant() {
        let c = TailCurve::from_fn(-8.0, 0.05, 321, GridMode::Continuous, |x| crate::special::normal_tail(x, 1.0))
            .unwrap();
        let p = params(1.0, 1.5, 0.05, 0.2);
        let base = lyap(&c, &p);
        assert!(base.is_finite());
        for k in [-7, 3, 40] {
            assert_eq!(lyap(&c.shifted_slots(k), &p), base);
        }
    }

    #[test]
    fn select_params_example() {
        let p = select_params(0.5, 10.0, 2.0, 1.0, 0.01).unwrap();
        assert!((p.m_lag - 202.0).abs() < 1e-9, "M = {}", p.m_lag);
        assert!((p.eps0 - 0.006_931_471_805_599_453).abs() < 1e-15);
        assert!(p.validate().is_ok());
        assert!(p.b > 1.0 && p.b < 1f64.exp());
    }

    #[test]
    fn select_params_rejects_bad_inputs() {
        assert!(matches!(select_params(0.0, 10.0, 2.0, 1.0, 0.01), Err(Error::Infeasible(_))));
        assert!(matches!(select_params(-1.0, 10.0, 2.0, 1.0, 0.01), Err(Error::Infeasible(_))));
        assert!(select_params(0.5, 10.0, 2.5, 1.0, 0.01).is_err());
    }

    #[test]
    fn flatness_examples() {
        let e = TailCurve::from_fn(0.0, 0.01, 4001, GridMode::Continuous, |x| {
            if x >= 39.99 {
                0.0
            } else {
                (-x).exp().min(1.0)
            }
        })
        .unwrap();
        let eps1 = 0.1;
        let lag = (1.0 + eps1 / 2.0f64).ln() + 0.05;
        let hits = flatness_check(&e, 0.05, lag, eps1, 1e-12);
        assert!(hits.is_empty(), "{hits:?}");

        let plateau = TailCurve::from_fn(-1.0, 0.1, 131, GridMode::Continuous, |x| {
            if x < 0.0 {
                1.0
            } else if x <= 10.0 {
                0.01
            } else {
                0.0
            }
        })
        .unwrap();
        assert!(!flatness_check(&plateau, 0.05, 2.0, eps1, 1e-12).is_empty());

        let step = TailCurve::point_mass(0.0, 0.1, 5.0, GridMode::Lattice).unwrap();
        assert!(flatness_check(&step, 0.05, 2.0, eps1, 1e-12).is_empty());
    }

    #[test]
    fn burn_in_helpers() {
        let v = [f64::NEG_INFINITY, 1.0, 2.0, 1.5, 2.4, 2.6];
        assert_eq!(burn_in_max(&v, 3), 2.0);
        assert!(bounded_after_burn_in(&v, 3, 0.6));
        assert!(!bounded_after_burn_in(&v, 3, 0.5));
        assert!(never_exceeds_running_max(&v, 3, 0.5));
        let neg = [f64::NEG_INFINITY; 4];
        assert!(bounded_after_burn_in(&neg, 2, 0.5));
    }

    proptest! {
        #[test]
        fn ell_nonincreasing_in_ratio(ux in 1e-10f64..0.05, r1 in 0.0f64..2.0, r2 in 0.0f64..2.0) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(ell_value(ux, lo * ux, 0.1, 2.0) >= ell_value(ux, hi * ux, 0.1, 2.0));
        }

        #[test]
        fn selected_params_validate(a in 0.05f64..0.99, m0 in 0.1f64..50.0, m in 1.05f64..2.0, th in 0.1f64..3.0) {
            if let Ok(p) = select_params(a, m0, m, th, 0.01) {
                prop_assert!(p.validate().is_ok());
                prop_assert!(p.a * p.m_lag > 100.0);
            }
        }
    }
}
