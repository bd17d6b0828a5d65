//! Comparison statistics between simulated samples and engine tails.

use crate::dist::{GridMode, TailCurve};
use crate::error::{Error, Result};

/// Half-width `√(log(2/α) / (2n))` of the DKW confidence band.
pub fn dkw_epsilon(n: usize, alpha: f64) -> Result<f64> {
    if n == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("DKW band needs n ≥ 1 and alpha in (0, 1), got {n} and {alpha}")));
    }
    Ok(((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt())
}

/// `sup_x |P̂(X > x) − u(x)|` between the empirical tail of `samples` and
/// a tail curve.
///
/// The supremum is taken over the curve's grid points and every sample
/// value, with left limits at the sample values. Lattice curves are read
/// as step functions, so the distance is exact for lattice samples.
pub fn ks_samples_vs_curve(samples: &[f64], curve: &TailCurve) -> Result<f64> {
    if samples.is_empty() || samples.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("need at least one sample and no NaN".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let above = |x: f64| (sorted.len() - sorted.partition_point(|&v| v <= x)) as f64 / n;
    let at_or_above = |x: f64| (sorted.len() - sorted.partition_point(|&v| v < x)) as f64 / n;
    let nudge = 1e-6 * curve.step();
    let left = |x: f64| match curve.mode() {
        GridMode::Lattice => curve.eval(x - nudge),
        GridMode::Continuous => curve.eval(x),
    };
    let mut d = 0.0f64;
    for i in 0..curve.len() {
        let x = curve.x(i);
        d = d.max((above(x) - curve.eval(x)).abs());
    }
    let mut prev = f64::NAN;
    for &v in &sorted {
        if v == prev {
            continue;
        }
        prev = v;
        d = d.max((above(v) - curve.eval(v)).abs());
        d = d.max((at_or_above(v) - left(v)).abs());
    }
    Ok(d)
}

/// Kendall's S statistic `Σ_{i<j} sign(x_j − x_i)·sign(y_j − y_i)`.
pub fn kendall_s(x: &[f64], y: &[f64]) -> i64 {
    let mut s = 0i64;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let a = (x[j] - x[i]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            let b = (y[j] - y[i]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            s += a * b;
        }
    }
    s
}

/// One-sided exact permutation p-value for an increasing trend of `y`
/// in `x`: the fraction of permutations of `y` with S at least the observed.
pub fn kendall_increasing_pvalue(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 || x.len() > 10 {
        return Err(Error::Domain("exact Kendall test needs 2 to 10 paired points".into()));
    }
    let observed = kendall_s(x, y);
    let mut perm: Vec<f64> = y.to_vec();
    let mut idx: Vec<usize> = (0..y.len()).collect();
    let (mut hits, mut total) = (0u64, 0u64);
    // Heap's algorithm over index permutations.
    let k = idx.len();
    let mut c = vec![0usize; k];
    let mut visit = |idx: &[usize]| {
        for (slot, &i) in perm.iter_mut().zip(idx) {
            *slot = y[i];
        }
        total += 1;
        if kendall_s(x, &perm) >= observed {
            hits += 1;
        }
    };
    visit(&idx);
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                idx.swap(0, i);
            } else {
                idx.swap(c[i], i);
            }
            visit(&idx);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dkw_value() {
        let e = dkw_epsilon(1_000_000, 1e-3).unwrap();
        assert!((e - (2000f64.ln() / 2e6).sqrt()).abs() < 1e-15);
        assert!((e - 0.00195).abs() < 1e-4);
        assert!(dkw_epsilon(0, 0.1).is_err());
    }

    #[test]
    fn ks_on_lattice() {
        // Curve of a fair ±1 coin: P(X > x) = 1/2 on [−1, 1), 0 from 1.
        let c = TailCurve::new(-2.0, 1.0, vec![1.0, 0.5, 0.5, 0.0], GridMode::Lattice).unwrap();
        assert_eq!(ks_samples_vs_curve(&[-1.0, 1.0], &c).unwrap(), 0.0);
        assert_eq!(ks_samples_vs_curve(&[-1.0, -1.0, -1.0, 1.0], &c).unwrap(), 0.25);
        assert_eq!(ks_samples_vs_curve(&[0.0, 1.0], &c).unwrap(), 0.5);
    }

    #[test]
    fn ks_on_continuous_uniform() {
        let c = TailCurve::from_fn(0.0, 0.01, 101, GridMode::Continuous, |x| 1.0 - x).unwrap();
        let s: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let d = ks_samples_vs_curve(&s, &c).unwrap();
        assert!((d - 0.005).abs() < 1e-9, "{d}");
    }

    #[test]
    fn kendall_exact() {
        let x: Vec<f64> = (0..7).map(|i| i as f64).collect();
        assert_eq!(kendall_s(&x, &x), 21);
        // Only the identity attains the maximum.
        assert!((kendall_increasing_pvalue(&x, &x).unwrap() - 1.0 / 5040.0).abs() < 1e-15);
        let rev: Vec<f64> = x.iter().rev().cloned().collect();
        assert_eq!(kendall_increasing_pvalue(&x, &rev).unwrap(), 1.0);
    }
}
