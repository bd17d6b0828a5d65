//! Run configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tightwave_core::assumptions::{KernelScan, QTilde};
use tightwave_core::lyapunov::LyapunovParams;
use tightwave_core::operators::{Diagnostics, QSpec};
use tightwave_core::{Error, GridSpec, KernelSpec, McConfig, Mode, QTransform, RecursionConfig, Result, TreeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Iterate,
    Validate,
    Lyapunov,
    Simulate,
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Iterate => "iterate",
            Command::Validate => "validate",
            Command::Lyapunov => "lyapunov",
            Command::Simulate => "simulate",
            Command::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kernel: KernelSpec,
    /// Kept in its written form so a degenerate law surfaces as a
    /// validation failure rather than a parse error.
    pub q: QSpec,
    #[serde(default = "default_mode")]
    pub mode: Mode,
}

fn default_mode() -> Mode {
    Mode::MoveFirst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Auto {
    Auto,
}

/// Explicit Lyapunov parameters or `"auto"`, which derives them from the
/// kernel's tail-domination constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LyapunovChoice {
    Auto(Auto),
    Params(LyapunovParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovCheck {
    /// Iterations treated as burn-in.
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Allowed excess over the burn-in maximum.
    #[serde(default = "default_lyap_tol")]
    pub tol: f64,
}

fn default_burn_in() -> usize {
    20
}

fn default_lyap_tol() -> f64 {
    0.5
}

impl Default for LyapunovCheck {
    fn default() -> Self {
        LyapunovCheck { burn_in: default_burn_in(), tol: default_lyap_tol() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Simulation {
    /// Maximal displacement of the system's branching random walk.
    Brw { n: usize },
    Cover { tree: TreeSpec },
    ReturnEpochs { tree: TreeSpec },
    Beta { n: usize },
    Torus { side: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    #[serde(default = "default_delta0")]
    pub delta0: f64,
    /// Growth constant; defaults to `min(2, 1 + 0.8(m₁ − 1))`.
    #[serde(default)]
    pub m: Option<f64>,
    #[serde(default = "default_c_star")]
    pub c_star: f64,
    #[serde(default = "default_theta_star")]
    pub theta_star: f64,
    /// Shift a kernel with zero shift by its centering constant before scanning.
    #[serde(default = "default_true")]
    pub auto_center: bool,
    #[serde(default)]
    pub scan: Option<KernelScan>,
    #[serde(default = "default_delta_grid")]
    pub delta_grid: Vec<f64>,
    #[serde(default = "default_eps_grid")]
    pub eps_grid: Vec<f64>,
    #[serde(default = "default_qtilde")]
    pub qtilde: QTilde,
    #[serde(default = "default_eta1")]
    pub eta1: f64,
    /// Grid unit for `B`; defaults to the grid step, else 0.01.
    #[serde(default)]
    pub b_unit: Option<f64>,
}

fn default_delta0() -> f64 {
    0.05
}
fn default_c_star() -> f64 {
    2.0
}
fn default_theta_star() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_delta_grid() -> Vec<f64> {
    vec![0.1, 0.25, 0.5]
}
fn default_eps_grid() -> Vec<f64> {
    vec![0.001, 0.01, 0.05, 0.1]
}
fn default_qtilde() -> QTilde {
    QTilde::System
}
fn default_eta1() -> f64 {
    0.01
}

impl Default for ValidationConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all validation fields have defaults")
    }
}

impl ValidationConfig {
    pub fn growth_constant(&self, q: &QTransform) -> f64 {
        self.m.unwrap_or_else(|| (1.0 + 0.8 * (q.m1() - 1.0)).min(2.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Level of the DKW band.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Fixed tolerance replacing the DKW band.
    #[serde(default)]
    pub tolerance: Option<f64>,
}

fn default_alpha() -> f64 {
    1e-3
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig { alpha: default_alpha(), tolerance: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: default_directory(), formats: default_formats() }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    /// Level of the width recorded in traces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width_eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovChoice>,
    #[serde(default)]
    pub lyapunov_check: LyapunovCheck,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<Simulation>,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub command: Option<Command>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub iterations: Option<usize>,
}

fn missing(what: &str, command: Command) -> Error {
    Error::Invalid(format!("command '{}' needs a '{what}' section", command.name()))
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(c) = o.command {
            self.command = c;
        }
        if let Some(d) = &o.out {
            self.outputs.directory = d.clone();
        }
        if o.seed.is_some() || o.reps.is_some() {
            let mc = self.mc.as_mut().ok_or_else(|| Error::Invalid("--seed and --reps need an 'mc' section".into()))?;
            if let Some(s) = o.seed {
                mc.master_seed = s;
            }
            if let Some(r) = o.reps {
                mc.reps = r;
            }
        }
        if let Some(n) = o.iterations {
            match &mut self.simulation {
                Some(Simulation::Brw { n: k }) | Some(Simulation::Beta { n: k }) => *k = n,
                _ => self.iterations = Some(n),
            }
        }
        self.check()
    }

    pub fn system(&self) -> Result<&SystemConfig> {
        self.system.as_ref().ok_or_else(|| missing("system", self.command))
    }

    pub fn mc(&self) -> Result<&McConfig> {
        self.mc.as_ref().ok_or_else(|| missing("mc", self.command))
    }

    pub fn simulation(&self) -> Result<&Simulation> {
        self.simulation.as_ref().ok_or_else(|| missing("simulation", self.command))
    }

    /// Engine configuration for `iterations` steps. The offspring law is
    /// converted here, so a malformed law surfaces from this call.
    pub fn recursion(&self, iterations: usize) -> Result<RecursionConfig> {
        let sys = self.system()?;
        let grid = self.grid.clone().ok_or_else(|| missing("grid", self.command))?;
        let mut diagnostics = Diagnostics::default();
        if let Some(w) = self.width_eps {
            diagnostics.width_eps = w;
        }
        Ok(RecursionConfig {
            mode: sys.mode,
            kernel: sys.kernel.clone(),
            q: QTransform::try_from(sys.q.clone())?,
            grid,
            iterations,
            diagnostics,
        })
    }

    /// Structural checks that do not depend on running anything.
    pub fn check(&self) -> Result<()> {
        let c = self.command;
        match c {
            Command::Iterate | Command::Lyapunov => {
                self.system()?;
                if self.grid.is_none() {
                    return Err(missing("grid", c));
                }
                if self.iterations.is_none() {
                    return Err(missing("iterations", c));
                }
            }
            Command::Validate => {
                self.system()?;
            }
            Command::Simulate => {
                self.mc()?.validate()?;
                if let Simulation::Brw { .. } = self.simulation()? {
                    self.system()?;
                }
            }
            Command::Compare => {
                self.system()?;
                self.mc()?.validate()?;
                if self.grid.is_none() {
                    return Err(missing("grid", c));
                }
                match self.simulation()? {
                    Simulation::Brw { .. } | Simulation::Beta { .. } => {}
                    _ => return Err(Error::Invalid("compare supports 'brw' and 'beta' simulations".into())),
                }
            }
        }
        if let Some(sys) = &self.system {
            sys.kernel.validate()?;
        }
        if let (Some(sys), Some(grid)) = (&self.system, &self.grid) {
            // Grid checks live on the engine configuration; the law is not needed for them.
            let probe = RecursionConfig {
                mode: sys.mode,
                kernel: sys.kernel.clone(),
                q: QTransform::binary(),
                grid: grid.clone(),
                iterations: 0,
                diagnostics: Diagnostics { width_eps: self.width_eps.unwrap_or(0.02), lyapunov: None },
            };
            probe.validate()?;
        }
        if let Some(LyapunovChoice::Params(p)) = &self.lyapunov {
            p.validate()?;
        }
        let v = &self.validation;
        if !(v.eta1 > 0.0 && v.eta1 <= 1.0) {
            return Err(Error::Invalid(format!("eta1 must lie in (0, 1], got {}", v.eta1)));
        }
        if !(self.compare.alpha > 0.0 && self.compare.alpha < 1.0) {
            return Err(Error::Invalid(format!("compare alpha must lie in (0, 1), got {}", self.compare.alpha)));
        }
        if self.outputs.formats.is_empty() {
            return Err(Error::Invalid("at least one output format is required".into()));
        }
        Ok(())
    }
}

/// Parse and check a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text)?;
    cfg.check()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "command": "iterate",
        "system": {"kernel": {"kind": "translation_invariant", "law": {"family": "gaussian", "sigma": 1.0}}, "q": {"kind": "binary"}},
        "grid": {"step": 0.05},
        "iterations": 3
    }"#;

    #[test]
    fn minimal_round_trip() {
        let a = parse_config(MINIMAL).unwrap();
        let text = serde_json::to_string(&a).unwrap();
        assert_eq!(parse_config(&text).unwrap(), a);
        assert_eq!(a.outputs.directory, PathBuf::from("out"));
        assert_eq!(a.system.as_ref().unwrap().mode, Mode::MoveFirst);
    }

    #[test]
    fn unknown_key_named() {
        let bad = MINIMAL.replace("\"system\"", "\"kernell\": 1, \"system\"");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("kernell"), "{err}");
    }

    #[test]
    fn auto_and_explicit_lyapunov_parse() {
        let auto = MINIMAL.replace("\"iterations\": 3", "\"iterations\": 3, \"lyapunov\": \"auto\"");
        assert_eq!(parse_config(&auto).unwrap().lyapunov, Some(LyapunovChoice::Auto(Auto::Auto)));
        let bad = MINIMAL.replace("\"iterations\": 3", "\"iterations\": 3, \"lyapunov\": \"manual\"");
        assert!(parse_config(&bad).is_err());
    }

    #[test]
    fn missing_sections_rejected() {
        let no_grid = MINIMAL.replace("\"grid\": {\"step\": 0.05},", "");
        assert!(matches!(parse_config(&no_grid), Err(Error::Invalid(_))));
        assert!(parse_config(r#"{"command": "simulate"}"#).is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let mut c = parse_config(
            r#"{"command": "simulate", "mc": {"reps": 10, "master_seed": 1},
                "simulation": {"kind": "beta", "n": 3}}"#,
        )
        .unwrap();
        c.apply(&Overrides { seed: Some(9), reps: Some(5), iterations: Some(4), ..Default::default() }).unwrap();
        let mc = c.mc.as_ref().unwrap();
        assert_eq!((mc.master_seed, mc.reps), (9, 5));
        assert_eq!(c.simulation, Some(Simulation::Beta { n: 4 }));
    }
}
