//! Numerical engine and Monte Carlo laboratory for max-type distributional
//! recursions `F̄_{n+1} = T_n F̄_n` with `T_n u = Ḡ_n ⊗ Q(u)`.
//!
//! * [`dist`]: discretized tail functions and their diagnostics.
//! * [`kernels`]: displacement kernels, including the cover-time kernel.
//! * [`operators`]: offspring transforms, the ⊗ convolution and the iteration driver.
//! * [`lyapunov`]: the Lyapunov functional and its parameter solver.
//! * [`assumptions`]: scan-based validators for the growth, kernel and regularity conditions.
//! * [`mc`]: seeded simulators used as independent stochastic oracles.
//! * [`stats`]: distances and trend tests for comparing the two.

pub mod assumptions;
pub mod dist;
pub mod error;
pub mod kernels;
pub mod lyapunov;
pub mod mc;
pub mod operators;
pub mod quad;
pub mod special;
pub mod stats;

pub use assumptions::{AssumptionReport, ConditionRecord, KernelScan};
pub use dist::{kolmogorov, GridMode, TailCurve, TraceRecord};
pub use error::{Error, ErrorKind, Result};
pub use kernels::{KernelSpec, StepLaw};
pub use lyapunov::LyapunovParams;
pub use operators::{GridSpec, Mode, QTransform, RecursionConfig};
pub use mc::{McConfig, OffspringLaw, SampleSet, SampleSummary, TreeSpec};
