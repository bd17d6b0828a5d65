//! Seeded Monte Carlo simulators used as stochastic oracles for the engine.
//!
//! Every replica draws from its own generator, seeded by mixing the master
//! seed with the replica index, and results are collected in replica order.
//! Output is therefore identical for any worker count.

mod beta;
mod brw;
mod cover;
mod summary;

use rand_pcg::Pcg64Mcg;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{check_offspring_probs, QTransform};

pub use beta::{gamma_poisson_sample, simulate_beta_chain, MAX_BETA_DEPTH};
pub use brw::simulate_brw_max;
pub use cover::{return_time_moments, simulate_cover_time, simulate_return_epochs, simulate_torus_cover, ReturnMoments, TreeSpec};
pub use summary::{Histogram, QuantileEntry, SampleSet, SampleSummary};

pub type McRng = Pcg64Mcg;

pub const DEFAULT_POPULATION_CAP: usize = 10_000_000;
pub const DEFAULT_STEP_BUDGET: u64 = 10_000_000_000;

fn default_population_cap() -> usize {
    DEFAULT_POPULATION_CAP
}

fn default_step_budget() -> u64 {
    DEFAULT_STEP_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub reps: usize,
    pub master_seed: u64,
    /// Worker threads; 0 uses the global pool.
    #[serde(default)]
    pub workers: usize,
    /// Keep per-sample output for dumping.
    #[serde(default)]
    pub dump: bool,
    #[serde(default = "default_population_cap")]
    pub population_cap: usize,
    #[serde(default = "default_step_budget")]
    pub step_budget: u64,
}

impl McConfig {
    pub fn new(reps: usize, master_seed: u64) -> Self {
        McConfig {
            reps,
            master_seed,
            workers: 0,
            dump: false,
            population_cap: DEFAULT_POPULATION_CAP,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Invalid("reps must be at least 1".into()));
        }
        if self.population_cap == 0 || self.step_budget == 0 {
            return Err(Error::Invalid("population cap and step budget must be positive".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for replica `index` under `master_seed`.
pub fn replica_rng(master_seed: u64, index: u64) -> McRng {
    let hi = splitmix64(master_seed ^ splitmix64(index));
    let lo = splitmix64(hi ^ 0xD1B5_4A32_D192_ED03);
    Pcg64Mcg::new(((hi as u128) << 64) | lo as u128)
}

/// Run `f` once per replica, in parallel, returning results in replica order.
pub(crate) fn run_replicas<T, F>(cfg: &McConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut McRng) -> Result<T> + Sync,
{
    cfg.validate()?;
    let body = || {
        (0..cfg.reps)
            .into_par_iter()
            .map(|i| {
                let mut rng = replica_rng(cfg.master_seed, i as u64);
                f(i, &mut rng)
            })
            .collect::<Result<Vec<T>>>()
    };
    if cfg.workers == 0 {
        body()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Resource(format!("cannot start worker pool: {e}")))?
            .install(body)
    }
}

/// Offspring distribution on `k ≥ 1`, sampled by inverse CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl OffspringLaw {
    /// `probs[i]` is the probability of `i + 1` children.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_offspring_probs(&probs)?;
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(OffspringLaw { probs, cumulative })
    }

    pub fn binary() -> Self {
        OffspringLaw::new(vec![0.0, 1.0]).expect("binary law is valid")
    }

    pub fn from_q(q: &QTransform) -> Result<Self> {
        OffspringLaw::new(q.probs())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let i = self.cumulative.partition_point(|&c| c <= u);
        i.min(self.probs.len() - 1) + 1
    }
}
