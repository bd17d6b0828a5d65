//! Displacement kernels `Ḡ_n(y, t) = P(N_{y,n} > t)`.
//!
//! Two shapes are supported: translation-invariant step laws, where the
//! displacement ignores the current position `y`, and the cover-time
//! kernel, whose displacement law depends on `y` through
//! `k(y, x) = 2x e^{-(x² + y²)} I₀(2xy)`.

use std::io::Read;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dist::read_xy_csv;
use crate::error::{Error, Result};
use crate::quad;
use crate::special::{bessel_i0_scaled, normal_half_tail, normal_tail};

/// Distance beyond the centre of `k(y, ·)` where the integrand exponent
/// drops below −750; everything past it is treated as zero mass.
const COVER_TRUNCATION: f64 = 28.0;

/// A displacement law that does not depend on the current position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepLaw {
    /// Centered normal; `sigma = 0` is a point mass at the origin.
    Gaussian { sigma: f64 },
    /// One-sided exponential on `[0, ∞)`.
    Exponential { rate: f64 },
    /// Uniform on `[a, b]`; `a = b` is a point mass.
    Uniform { a: f64, b: f64 },
    /// `+1` with probability `prob`, otherwise `−1`.
    TwoPoint { prob: f64 },
    /// Pareto with scale 1: `P(X > x) = x^{-alpha}` for `x ≥ 1`.
    Pareto { alpha: f64 },
    /// Piecewise-linear tail through the given samples.
    Table { x: Vec<f64>, tail: Vec<f64> },
}

impl StepLaw {
    pub fn table_from_csv<R: Read>(input: R) -> Result<StepLaw> {
        let (x, tail) = read_xy_csv(input, "tail")?;
        let law = StepLaw::Table { x, tail };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        match *self {
            StepLaw::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                bad(format!("gaussian sigma must be finite and ≥ 0, got {sigma}"))
            }
            StepLaw::Exponential { rate } if !(rate > 0.0 && rate.is_finite()) => {
                bad(format!("exponential rate must be positive, got {rate}"))
            }
            StepLaw::Uniform { a, b } if !(a.is_finite() && b.is_finite() && a <= b) => {
                bad(format!("uniform bounds must satisfy a ≤ b, got [{a}, {b}]"))
            }
            StepLaw::TwoPoint { prob } if !(0.0..=1.0).contains(&prob) => {
                bad(format!("two-point probability must lie in [0, 1], got {prob}"))
            }
            StepLaw::Pareto { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                bad(format!("pareto alpha must be positive, got {alpha}"))
            }
            StepLaw::Table { ref x, ref tail } => {
                if x.len() < 2 || x.len() != tail.len() {
                    return bad("tail table needs at least two rows of equal length".into());
                }
                if let Some(i) = x.windows(2).position(|w| !(w[1] > w[0])) {
                    return bad(format!("tail table x values must increase (row {})", i + 2));
                }
                if let Some(v) = tail.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return bad(format!("tail table value {v} outside [0, 1]"));
                }
                if let Some(i) = tail.windows(2).position(|w| w[1] > w[0]) {
                    return bad(format!("tail table must be nonincreasing (row {})", i + 2));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `P(X > t)`.
    pub fn tail(&self, t: f64) -> f64 {
        match *self {
            StepLaw::Gaussian { sigma } => {
                if sigma == 0.0 {
                    if t < 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    normal_tail(t, sigma)
                }
            }
            StepLaw::Exponential { rate } => {
                if t < 0.0 {
                    1.0
                } else {
                    (-rate * t).exp()
                }
            }
            StepLaw::Uniform { a, b } => {
                if t < a {
                    1.0
                } else if t >= b {
                    0.0
                } else {
                    (b - t) / (b - a)
                }
            }
            StepLaw::TwoPoint { prob } => {
                if t < -1.0 {
                    1.0
                } else if t < 1.0 {
                    prob
                } else {
                    0.0
                }
            }
            StepLaw::Pareto { alpha } => {
                if t < 1.0 {
                    1.0
                } else {
                    t.powf(-alpha)
                }
            }
            StepLaw::Table { ref x, ref tail } => {
                let i = x.partition_point(|&xi| xi <= t);
                if i == 0 {
                    1.0
                } else if i == x.len() {
                    0.0
                } else {
                    let f = (t - x[i - 1]) / (x[i] - x[i - 1]);
                    tail[i - 1] + f * (tail[i] - tail[i - 1])
                }
            }
        }
    }

    /// Characteristic width, used to size windows.
    pub fn scale(&self) -> f64 {
        match *self {
            StepLaw::Gaussian { sigma } => sigma.max(1e-3),
            StepLaw::Exponential { rate } => 1.0 / rate,
            StepLaw::Uniform { a, b } => ((b - a) / 12f64.sqrt()).max(1e-3),
            StepLaw::TwoPoint { .. } => 1.0,
            StepLaw::Pareto { .. } => 1.0,
            StepLaw::Table { ref x, .. } => ((x[x.len() - 1] - x[0]) / 4.0).max(1e-3),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            StepLaw::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
            StepLaw::Exponential { rate } => {
                let e: f64 = Exp1.sample(rng);
                e / rate
            }
            StepLaw::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
            StepLaw::TwoPoint { prob } => {
                if rng.random::<f64>() < prob {
                    1.0
                } else {
                    -1.0
                }
            }
            StepLaw::Pareto { alpha } => (1.0 - rng.random::<f64>()).powf(-1.0 / alpha),
            StepLaw::Table { ref x, ref tail } => {
                let u: f64 = rng.random();
                // Smallest x with tail(x) ≤ u.
                if tail[0] <= u {
                    return x[0];
                }
                let i = tail.partition_point(|&v| v > u);
                if i == tail.len() {
                    return x[x.len() - 1];
                }
                let f = (tail[i - 1] - u) / (tail[i - 1] - tail[i]);
                x[i - 1] + f * (x[i] - x[i - 1])
            }
        }
    }
}

/// The two-argument kernel `Ḡ_n(y, t)` driving the recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `Ḡ_n(y, t) = Ḡ(t − shift)`.
    TranslationInvariant {
        law: StepLaw,
        #[serde(default)]
        shift: f64,
    },
    /// `Ḡ_n(y, t) = Ḡ_cover(y − n·shift, t − shift)`.
    CoverTime {
        #[serde(default)]
        shift: f64,
    },
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Self {
        KernelSpec::TranslationInvariant { law: StepLaw::Gaussian { sigma }, shift: 0.0 }
    }

    pub fn two_point(prob: f64) -> Self {
        KernelSpec::TranslationInvariant { law: StepLaw::TwoPoint { prob }, shift: 0.0 }
    }

    pub fn cover(shift: f64) -> Self {
        KernelSpec::CoverTime { shift }
    }

    pub fn with_shift(&self, shift: f64) -> Self {
        match self {
            KernelSpec::TranslationInvariant { law, .. } => {
                KernelSpec::TranslationInvariant { law: law.clone(), shift }
            }
            KernelSpec::CoverTime { .. } => KernelSpec::CoverTime { shift },
        }
    }

    pub fn shift(&self) -> f64 {
        match *self {
            KernelSpec::TranslationInvariant { shift, .. } | KernelSpec::CoverTime { shift } => shift,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.shift().is_finite() {
            return Err(Error::Invalid(format!("kernel shift must be finite, got {}", self.shift())));
        }
        match self {
            KernelSpec::TranslationInvariant { law, .. } => law.validate(),
            KernelSpec::CoverTime { .. } => Ok(()),
        }
    }

    pub fn is_translation_invariant(&self) -> bool {
        matches!(self, KernelSpec::TranslationInvariant { .. })
    }

    pub fn scale(&self) -> f64 {
        match self {
            KernelSpec::TranslationInvariant { law, .. } => law.scale(),
            KernelSpec::CoverTime { .. } => std::f64::consts::FRAC_1_SQRT_2,
        }
    }

    /// `Ḡ_n(y, t)`, the probability that a particle at `y` is displaced by more than `t`.
    pub fn tail(&self, n: usize, y: f64, t: f64) -> Result<f64> {
        match self {
            KernelSpec::TranslationInvariant { law, shift } => Ok(law.tail(t - shift)),
            KernelSpec::CoverTime { shift } => cover_tail(y - n as f64 * shift, t - shift),
        }
    }

    /// Least `L ≥ 0` such that shifting the kernel by `L` gives `Ḡ(y, 0) ≥ 1 − ε₀`
    /// for every `y`, with `ε₀ = (log m)/100`. The cover kernel uses its
    /// large-`y` Gaussian limit and additionally requires `L > 1`.
    pub fn centering_shift(&self, m: f64) -> Result<f64> {
        if !(m > 1.0 && m <= 2.0) {
            return Err(Error::Domain(format!("growth constant m must lie in (1, 2], got {m}")));
        }
        let eps0 = m.ln() / 100.0;
        let tail_at: Box<dyn Fn(f64) -> f64> = match self {
            KernelSpec::TranslationInvariant { law, .. } => {
                let law = law.clone();
                Box::new(move |l| law.tail(-l))
            }
            KernelSpec::CoverTime { .. } => Box::new(|l| normal_half_tail(-l)),
        };
        if tail_at(0.0) >= 1.0 - eps0 {
            return Ok(if self.is_translation_invariant() { 0.0 } else { 1.0 + 1e-9 });
        }
        let mut hi = 1.0;
        while tail_at(hi) < 1.0 - eps0 {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::Numeric("no finite centering shift".into()));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if tail_at(mid) >= 1.0 - eps0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(if self.is_translation_invariant() { hi } else { hi.max(1.0 + 1e-9) })
    }
}

/// Log of the conditional density `k(y, x)`; `−∞` for `x ≤ 0`.
pub fn cover_log_density(y: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let y = y.max(0.0);
    let d = x - y;
    (2.0 * x).ln() - d * d + bessel_i0_scaled(2.0 * x * y).ln()
}

/// Conditional density `k(y, x) = 2x e^{-(x² + y²)} I₀(2xy)` of the square-root
/// Gamma–Poisson displacement, evaluated in log space.
pub fn cover_density(y: f64, x: f64) -> f64 {
    cover_log_density(y, x).exp()
}

/// `Ḡ(y, t)` of the unshifted cover kernel: the probability that the next
/// value exceeds `y + t` given current value `y`. Negative `y` moves like
/// `y = 0`: `Ḡ(y, t) = Ḡ(0, t)`. This is the convention under which the
/// exponential domination condition reduces to `y ≥ M`.
pub fn cover_tail(y: f64, t: f64) -> Result<f64> {
    if y < 0.0 {
        return cover_tail(0.0, t);
    }
    let lower = y + t;
    if lower <= 0.0 {
        return Ok(1.0);
    }
    let upper = y + COVER_TRUNCATION;
    if lower >= upper {
        return Ok(0.0);
    }
    // Break the range near the peak so no panel can step over it.
    let mut cuts = vec![lower];
    for d in [-6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0] {
        let c = y + d;
        if c > lower && c < upper {
            cuts.push(c);
        }
    }
    cuts.push(upper);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let part = quad::integrate(|z| cover_density(y, z), w[0], w[1], 1e-17, 1e-13).map_err(
            |e| Error::Numeric(format!("cover tail at y = {y}, t = {t}: {e}")),
        )?;
        total += part.value;
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Survival function of `k(y, ·)` on the grid `x0 + i·step`, `i < len`,
/// built from per-cell Gauss–Legendre integrals accumulated from the right.
pub fn cover_survival_grid(y: f64, x0: f64, step: f64, len: usize) -> Vec<f64> {
    let y = y.max(0.0);
    // Below lo_z the density is under e^{-144}; above hi_z it is truncated.
    let lo_z = (y - 12.0).max(0.0);
    let hi_z = y + COVER_TRUNCATION;
    let mut out = vec![1.0; len];
    let mut acc = 0.0;
    for i in (0..len).rev() {
        let a = x0 + i as f64 * step;
        if a >= hi_z {
            out[i] = 0.0;
            continue;
        }
        if i + 1 == len {
            acc = cover_tail(y, a - y).unwrap_or(0.0);
        } else {
            let lo = a.max(lo_z);
            let hi = (a + step).min(hi_z);
            if hi > lo {
                acc += quad::gauss_legendre5(|z| cover_density(y, z), lo, hi);
            }
        }
        if a <= lo_z {
            // out[..=i] keeps its initial value of 1.
            break;
        }
        out[i] = acc.min(1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_tail_at_zero_is_half() {
        let k = KernelSpec::gaussian(1.0);
        for y in [-3.0, 0.0, 7.0] {
            assert_eq!(k.tail(0, y, 0.0).unwrap(), 0.5);
        }
    }

    #[test]
    fn cover_tail_at_origin_is_gaussian_square() {
        let k = KernelSpec::cover(0.0);
        assert!((k.tail(0, 0.0, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
        let mut x = 0.0;
        while x <= 5.0 {
            assert!((cover_tail(0.0, x).unwrap() - (-x * x).exp()).abs() < 1e-10, "x = {x}");
            x += 0.05;
        }
    }

    #[test]
    fn cover_tail_is_one_left_of_the_origin() {
        for y in [0.0, 0.3, 2.0, 17.0] {
            for t in [-y, -y - 0.5, -y - 10.0] {
                assert_eq!(cover_tail(y, t).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn negative_positions_move_like_zero() {
        for (y, t) in [(-1.0, 2.0), (-0.5, 0.7), (-3.0, 3.2), (-2.0, -1.0)] {
            assert_eq!(cover_tail(y, t).unwrap(), cover_tail(0.0, t).unwrap());
        }
    }

    #[test]
    fn cover_density_values() {
        assert!((cover_density(0.0, 1.0) - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(cover_density(3.0, 0.0), 0.0);
        assert_eq!(cover_density(3.0, -1.0), 0.0);
        // No overflow deep in the large-y regime.
        let v = cover_density(1000.0, 1000.2);
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn cover_density_integrates_to_one() {
        for y in [0.0, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let lo = (y - 15.0f64).max(0.0);
            let total = quad::integrate(|x| cover_density(y, x), lo, y + 30.0, 1e-16, 1e-14)
                .unwrap()
                .value;
            assert!((total - 1.0).abs() < 1e-8, "y = {y}: {total}");
        }
    }

    #[test]
    fn survival_grid_matches_pointwise_tail() {
        for y in [0.0, 1.3, 9.0] {
            let x0 = -2.0;
            let h = 0.05;
            let s = cover_survival_grid(y, x0, h, 600);
            for i in (0..600).step_by(37) {
                let x = x0 + i as f64 * h;
                let want = cover_tail(y, x - y).unwrap();
                assert!((s[i] - want).abs() < 1e-12, "y = {y}, x = {x}: {} vs {want}", s[i]);
            }
        }
    }

    #[test]
    fn step_laws_tails() {
        let tp = StepLaw::TwoPoint { prob: 0.5 };
        assert_eq!(tp.tail(-1.5), 1.0);
        assert_eq!(tp.tail(-1.0), 0.5);
        assert_eq!(tp.tail(0.99), 0.5);
        assert_eq!(tp.tail(1.0), 0.0);
        let u = StepLaw::Uniform { a: 0.0, b: 2.0 };
        assert_eq!(u.tail(0.5), 0.75);
        let point = StepLaw::Uniform { a: 0.0, b: 0.0 };
        assert_eq!(point.tail(-1e-12), 1.0);
        assert_eq!(point.tail(0.0), 0.0);
        let p = StepLaw::Pareto { alpha: 2.0 };
        assert_eq!(p.tail(4.0), 1.0 / 16.0);
        let t = StepLaw::Table { x: vec![0.0, 1.0, 3.0], tail: vec![1.0, 0.5, 0.0] };
        assert_eq!(t.tail(-1.0), 1.0);
        assert_eq!(t.tail(2.0), 0.25);
        assert_eq!(t.tail(5.0), 0.0);
    }

    #[test]
    fn shift_moves_the_tail() {
        let k = KernelSpec::TranslationInvariant { law: StepLaw::Gaussian { sigma: 1.0 }, shift: 2.0 };
        assert_eq!(k.tail(3, 0.0, 2.0).unwrap(), 0.5);
        let c = KernelSpec::cover(0.5);
        // Ḡ_n(y, t) = Ḡ(y − n L, t − L)
        let direct = cover_tail(4.0 - 2.0 * 0.5, 1.0 - 0.5).unwrap();
        assert_eq!(c.tail(2, 4.0, 1.0).unwrap(), direct);
    }

    #[test]
    fn table_csv_validation() {
        let good = "x,tail\n0,1\n1,0.4\n2,0\n";
        assert!(StepLaw::table_from_csv(good.as_bytes()).is_ok());
        let rising = "x,tail\n0,0.5\n1,0.6\n";
        assert!(StepLaw::table_from_csv(rising.as_bytes()).is_err());
        let outside = "x,tail\n0,1.5\n1,0.6\n";
        assert!(StepLaw::table_from_csv(outside.as_bytes()).is_err());
        let header = "a,b\n0,1\n1,0\n";
        assert!(StepLaw::table_from_csv(header.as_bytes()).is_err());
    }

    #[test]
    fn centering_shift_meets_target() {
        let m: f64 = 1.8;
        let eps0 = m.ln() / 100.0;
        let g = KernelSpec::gaussian(1.0);
        let l = g.centering_shift(m).unwrap();
        assert!(StepLaw::Gaussian { sigma: 1.0 }.tail(-l) >= 1.0 - eps0);
        assert!(StepLaw::Gaussian { sigma: 1.0 }.tail(-l + 1e-6) < 1.0 - eps0);
        let c = KernelSpec::cover(0.0).centering_shift(m).unwrap();
        assert!(c > 1.0 && normal_half_tail(-c) >= 1.0 - eps0);
    }

    #[test]
    fn sampler_frequencies() {
        use rand::SeedableRng;
        let mut rng = rand_pcg::Pcg64Mcg::seed_from_u64(7);
        let tp = StepLaw::TwoPoint { prob: 0.3 };
        let n = 100_000;
        let ups = (0..n).filter(|_| tp.sample(&mut rng) > 0.0).count() as f64 / n as f64;
        assert!((ups - 0.3).abs() < 4.0 * (0.3f64 * 0.7 / n as f64).sqrt());
        let t = StepLaw::Table { x: vec![0.0, 1.0, 3.0], tail: vec![1.0, 0.5, 0.0] };
        let above = (0..n).filter(|_| t.sample(&mut rng) > 2.0).count() as f64 / n as f64;
        assert!((above - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / n as f64).sqrt());
    }
}
