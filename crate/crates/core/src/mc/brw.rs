use super::{run_replicas, McConfig, OffspringLaw, SampleSet};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

/// Maximal displacement `M_n` of a branching random walk started from one
/// particle at 0. Each generation moves every particle, then replaces it by
/// its offspring; the final branching does not affect the maximum and is
/// skipped.
pub fn simulate_brw_max(
    offspring: &OffspringLaw,
    step_law: &KernelSpec,
    n: usize,
    cfg: &McConfig,
) -> Result<SampleSet> {
    let KernelSpec::TranslationInvariant { law, shift } = step_law else {
        return Err(Error::Invalid("branching random walk needs a translation-invariant step law".into()));
    };
    step_law.validate()?;
    let cap = cfg.population_cap;
    let values = run_replicas(cfg, |replica, rng| {
        let mut pos = vec![0.0f64];
        let mut next = Vec::new();
        for generation in 0..n {
            for p in pos.iter_mut() {
                *p += law.sample(rng) + shift;
            }
            if generation + 1 == n {
                break;
            }
            next.clear();
            for &p in &pos {
                let k = offspring.sample(rng);
                if next.len() + k > cap {
                    return Err(Error::Resource(format!(
                        "replica {replica}: population exceeds the cap of {cap} in generation {}",
                        generation + 1
                    )));
                }
                next.extend(std::iter::repeat(p).take(k));
            }
            std::mem::swap(&mut pos, &mut next);
        }
        Ok(pos.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    })?;
    Ok(SampleSet::new(values))
}
