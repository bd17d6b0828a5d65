use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use super::{run_replicas, McConfig, SampleSet};
use crate::error::{Error, Result};

/// Deepest tournament allowed; each sample costs `2^n − 1` kernel draws.
pub const MAX_BETA_DEPTH: usize = 22;

/// One draw from the cover kernel `k(y, ·)`: `P ~ Poisson(y²)`,
/// `G ~ Gamma(1 + P, 1)`, return `√G`.
pub fn gamma_poisson_sample<R: Rng + ?Sized>(y: f64, rng: &mut R) -> Result<f64> {
    if !(y >= 0.0 && y.is_finite()) {
        return Err(Error::Domain(format!("kernel position must be finite and ≥ 0, got {y}")));
    }
    let lambda = y * y;
    let p: f64 = if lambda > 0.0 {
        Poisson::new(lambda).map_err(|e| Error::Numeric(format!("poisson({lambda}): {e}")))?.sample(rng)
    } else {
        0.0
    };
    let g: f64 = Gamma::new(1.0 + p, 1.0).map_err(|e| Error::Numeric(format!("gamma({}): {e}", 1.0 + p)))?.sample(rng);
    Ok(g.sqrt())
}

/// `β_n` by an exact tournament: `2^n` leaves at 0, then `n` rounds of
/// pairing, taking the maximum and applying the kernel.
pub fn simulate_beta_chain(n: usize, cfg: &McConfig) -> Result<SampleSet> {
    if n > MAX_BETA_DEPTH {
        return Err(Error::Resource(format!("beta tournament depth {n} exceeds {MAX_BETA_DEPTH}")));
    }
    let values = run_replicas(cfg, |_, rng| {
        let mut level = vec![0.0f64; 1 << n];
        let mut len = level.len();
        while len > 1 {
            for i in 0..len / 2 {
                level[i] = gamma_poisson_sample(level[2 * i].max(level[2 * i + 1]), rng)?;
            }
            len /= 2;
        }
        Ok(level[0])
    })?;
    Ok(SampleSet::new(values))
}
