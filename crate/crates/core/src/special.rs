//! Special functions used by the cover-time kernel and the validators.

use std::f64::consts::PI;

/// Crossover between the power series and the large-argument expansion.
const SERIES_LIMIT: f64 = 20.0;

fn series(order: u32, z: f64) -> f64 {
    let half = 0.5 * z;
    let q = half * half;
    // j = 0 term: (z/2)^order / order!
    let mut term = if order == 0 { 1.0 } else { half };
    let mut sum = term;
    let mut j = 0u32;
    loop {
        j += 1;
        term *= q / (j as f64 * (j + order) as f64);
        sum += term;
        if term < 1e-17 * sum || j > 500 {
            break;
        }
    }
    sum
}

/// `e^{-z} I_order(z) * sqrt(2 pi z)` via the Hankel expansion, for large z.
fn asymptotic_scaled(order: u32, z: f64) -> f64 {
    let mu = 4.0 * (order * order) as f64;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1u32;
    loop {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (k as f64 * 8.0 * z);
        if next.abs() >= term.abs() || k > 60 {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
        k += 1;
    }
    sum / (2.0 * PI * z).sqrt()
}

fn scaled(order: u32, z: f64) -> f64 {
    let a = z.abs();
    let v = if a <= SERIES_LIMIT {
        series(order, a) * (-a).exp()
    } else {
        asymptotic_scaled(order, a)
    };
    if order == 1 && z < 0.0 {
        -v
    } else {
        v
    }
}

fn unscaled(order: u32, z: f64) -> f64 {
    let a = z.abs();
    let v = if a <= SERIES_LIMIT {
        series(order, a)
    } else {
        asymptotic_scaled(order, a) * a.exp()
    };
    if order == 1 && z < 0.0 {
        -v
    } else {
        v
    }
}

/// Modified Bessel function of the first kind, order 0.
pub fn bessel_i0(z: f64) -> f64 {
    unscaled(0, z)
}

/// Modified Bessel function of the first kind, order 1.
pub fn bessel_i1(z: f64) -> f64 {
    unscaled(1, z)
}

/// `e^{-|z|} I_0(z)`; finite for every finite argument.
pub fn bessel_i0_scaled(z: f64) -> f64 {
    scaled(0, z)
}

/// `e^{-|z|} I_1(z)`.
pub fn bessel_i1_scaled(z: f64) -> f64 {
    scaled(1, z)
}

/// Upper tail of a centered Gaussian with variance 1/2: `P(N(0, 1/2) > x) = erfc(x) / 2`.
pub fn normal_half_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x)
}

/// Upper tail of a centered Gaussian with standard deviation `sigma`.
pub fn normal_tail(x: f64, sigma: f64) -> f64 {
    0.5 * libm::erfc(x / (sigma * std::f64::consts::SQRT_2))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracle: the defining series summed term by term with a
    // fixed, generous term count (no early stopping, no asymptotics).
    fn brute_series(order: u32, z: f64) -> f64 {
        let mut sum = 0.0;
        let mut fact_j = 1.0;
        for j in 0..120u32 {
            if j > 0 {
                fact_j *= j as f64;
            }
            let fact_jn: f64 = (1..=(j + order)).map(|i| i as f64).product();
            sum += (0.5 * z).powi((2 * j + order) as i32) / (fact_j * fact_jn);
        }
        sum
    }

    #[test]
    fn values_at_zero() {
        assert_eq!(bessel_i0(0.0), 1.0);
        assert_eq!(bessel_i1(0.0), 0.0);
        assert_eq!(bessel_i0_scaled(0.0), 1.0);
    }

    #[test]
    fn values_at_one() {
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-15);
        assert!((bessel_i1(1.0) - 0.565_159_103_992_485_0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - brute_series(0, 1.0)).abs() < 1e-14);
    }

    #[test]
    fn series_matches_oracle_below_crossover() {
        for &z in &[0.3, 2.5, 7.0, 13.0, 19.5] {
            for order in 0..2 {
                let got = unscaled(order, z);
                let want = brute_series(order, z);
                assert!(((got - want) / want).abs() < 1e-13, "I{order}({z}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn scaled_form_is_continuous_across_the_crossover() {
        for order in 0..2 {
            let below = series(order, SERIES_LIMIT) * (-SERIES_LIMIT).exp();
            let above = asymptotic_scaled(order, SERIES_LIMIT);
            assert!(((below - above) / below).abs() < 1e-13);
        }
    }

    #[test]
    fn scaled_large_argument_reference_values() {
        // e^{-z} I_nu(z) at z = 100 and 700, 30-digit references.
        let cases = [
            (100.0, 0.039_944_379_299_096_683, 0.039_744_153_025_130_253),
            (700.0, 0.015_081_295_651_531_358, 0.015_070_519_444_716_847),
        ];
        for (z, i0, i1) in cases {
            assert!((bessel_i0_scaled(z) / i0 - 1.0).abs() < 1e-12);
            assert!((bessel_i1_scaled(z) / i1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn order_one_never_exceeds_order_zero() {
        let mut z = 0.0;
        while z < 700.0 {
            assert!(bessel_i1_scaled(z) <= bessel_i0_scaled(z));
            z += 0.37;
        }
    }

    #[test]
    fn half_tail_values() {
        assert_eq!(normal_half_tail(0.0), 0.5);
        assert!((normal_half_tail(1.0) - 0.078_649_603_525_142_57).abs() < 1e-15);
        assert!(normal_half_tail(40.0) == 0.0 || normal_half_tail(40.0) < 1e-300);
        assert_eq!(normal_half_tail(-40.0), 1.0);
    }
}
