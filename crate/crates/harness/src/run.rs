//! Command dispatch.

use serde::Serialize;
use serde_json::{json, Value};
use tightwave_core::assumptions::{
    estimate_b, moment_report, validate_kernel, validate_q, validate_qtilde, AssumptionReport, ConditionRecord,
    KernelScan,
};
use tightwave_core::lyapunov::{self, select_params, LyapunovParams};
use tightwave_core::mc::{
    return_time_moments, simulate_beta_chain, simulate_brw_max, simulate_cover_time, simulate_return_epochs,
    simulate_torus_cover, OffspringLaw, SampleSet,
};
use tightwave_core::operators::{iterate, iterate_observed, write_trace_csv};
use tightwave_core::stats::{dkw_epsilon, ks_samples_vs_curve};
use tightwave_core::{Error, ErrorKind, KernelSpec, QTransform, RecursionConfig, Result, TailCurve, TraceRecord, TreeSpec};

use crate::config::{Command, Format, LyapunovChoice, RunConfig, Simulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    ValidationFailure,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::ValidationFailure => 1,
        }
    }
}

/// Everything a run produced, held in memory until it is written out.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub status: Status,
    /// File name and contents, in write order.
    pub tables: Vec<(String, Vec<u8>)>,
    /// Headline numbers echoed into the manifest.
    pub metrics: Value,
}

impl RunOutput {
    pub fn table(&self, name: &str) -> Option<&[u8]> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }
}

/// Exit code for a failed run: 1 for a rejected model, 2 for numeric or
/// resource failures, 3 for configuration errors and 4 for I/O.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Iteration { source, .. } => exit_code_for(source),
        Error::Degenerate(_) | Error::Infeasible(_) => 1,
        e => match e.kind() {
            ErrorKind::Input => 3,
            ErrorKind::Numeric | ErrorKind::Resource => 2,
            ErrorKind::Io => 4,
        },
    }
}

struct Tables<'a> {
    cfg: &'a RunConfig,
    out: Vec<(String, Vec<u8>)>,
}

impl<'a> Tables<'a> {
    fn new(cfg: &'a RunConfig) -> Self {
        Tables { cfg, out: Vec::new() }
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        if self.cfg.outputs.wants(Format::Json) {
            let mut text = serde_json::to_vec_pretty(value)?;
            text.push(b'\n');
            self.out.push((name.to_string(), text));
        }
        Ok(())
    }

    fn csv<F: FnOnce(&mut Vec<u8>) -> Result<()>>(&mut self, name: &str, write: F) -> Result<()> {
        if self.cfg.outputs.wants(Format::Csv) {
            let mut buf = Vec::new();
            write(&mut buf)?;
            self.out.push((name.to_string(), buf));
        }
        Ok(())
    }

    fn finish(self, status: Status, metrics: Value) -> RunOutput {
        RunOutput { status, tables: self.out, metrics }
    }
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.check()?;
    match cfg.command {
        Command::Iterate => run_iterate(cfg),
        Command::Lyapunov => run_lyapunov(cfg),
        Command::Validate => run_validate(cfg),
        Command::Simulate => run_simulate(cfg),
        Command::Compare => run_compare(cfg),
    }
}

/// Kernel scanned by the validators: the system kernel, shifted by its
/// centering constant when requested and unshifted.
fn validated_kernel(cfg: &RunConfig, q: &QTransform) -> Result<(KernelSpec, Option<f64>)> {
    let kernel = cfg.system()?.kernel.clone();
    if cfg.validation.auto_center && kernel.shift() == 0.0 {
        let l = kernel.centering_shift(cfg.validation.growth_constant(q))?;
        return Ok((kernel.with_shift(l), Some(l)));
    }
    Ok((kernel, None))
}

fn scan_for(cfg: &RunConfig, kernel: &KernelSpec, m: f64) -> KernelScan {
    cfg.validation.scan.clone().unwrap_or_else(|| KernelScan::default_for(kernel, m))
}

/// Parameters for the Lyapunov diagnostic, or the failing kernel report
/// when `"auto"` cannot find tail-domination constants.
fn resolve_lyapunov(cfg: &RunConfig, rc: &RecursionConfig) -> Result<std::result::Result<LyapunovParams, AssumptionReport>> {
    match cfg.lyapunov.as_ref().unwrap_or(&LyapunovChoice::Auto(crate::config::Auto::Auto)) {
        LyapunovChoice::Params(p) => Ok(Ok(p.clone())),
        LyapunovChoice::Auto(_) => {
            let m = cfg.validation.growth_constant(&rc.q);
            let report = validate_kernel(&rc.kernel, &scan_for(cfg, &rc.kernel, m))?;
            match report.get("kernel_exp_domination") {
                Some(r) if r.pass => {
                    let p = select_params(r.constants["a"], r.constants["M0"], m, cfg.validation.theta_star, rc.grid.step)?;
                    Ok(Ok(p))
                }
                _ => Ok(Err(report)),
            }
        }
    }
}

fn trace_metrics(trace: &[TraceRecord]) -> Value {
    let n = trace.len() - 1;
    let widths: Vec<f64> = trace.iter().map(|r| r.width).collect();
    let tail = &trace[n / 2..];
    let speed = if tail.len() > 1 {
        (tail[tail.len() - 1].median - tail[0].median) / (tail.len() - 1) as f64
    } else {
        f64::NAN
    };
    json!({
        "iterations": n,
        "final_median": trace[n].median,
        "final_width": trace[n].width,
        "max_width": widths.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        "speed_second_half": speed,
        "max_clipped_mass": trace.iter().map(|r| r.clipped_mass).fold(0.0, f64::max),
    })
}

fn write_curve(t: &mut Tables, name: &str, u: &TailCurve) -> Result<()> {
    t.csv(name, |buf| u.write_csv(buf))
}

fn run_iterate(cfg: &RunConfig) -> Result<RunOutput> {
    let mut rc = cfg.recursion(cfg.iterations.unwrap_or(0))?;
    let mut t = Tables::new(cfg);
    if cfg.lyapunov.is_some() {
        match resolve_lyapunov(cfg, &rc)? {
            Ok(p) => rc.diagnostics.lyapunov = Some(p),
            Err(report) => {
                t.json("assumptions.json", &report)?;
                return Ok(t.finish(Status::ValidationFailure, json!({"reason": "kernel_exp_domination failed"})));
            }
        }
    }
    let u0 = rc.initial_step()?;
    let (trace, last) = iterate(&rc, &u0)?;
    t.csv("trace.csv", |buf| write_trace_csv(&trace, buf))?;
    write_curve(&mut t, "final_curve.csv", &last)?;
    let metrics = trace_metrics(&trace);
    t.json("summary.json", &metrics)?;
    Ok(t.finish(Status::Success, metrics))
}

#[derive(Serialize)]
struct LyapunovSummary<'a> {
    params: &'a LyapunovParams,
    burn_in: usize,
    tol: f64,
    burn_in_max: f64,
    max_after_burn_in: f64,
    bounded: bool,
    /// Iterations with at least one grid point in `(floor, δ₀)` where `ℓ` is finite.
    finite_iterations: usize,
    /// Largest number of flat tail points (at level `δ₀`, lag `M`) in any iterate.
    max_flat_points: usize,
}

fn run_lyapunov(cfg: &RunConfig) -> Result<RunOutput> {
    let mut rc = cfg.recursion(cfg.iterations.unwrap_or(0))?;
    let mut t = Tables::new(cfg);
    let params = match resolve_lyapunov(cfg, &rc)? {
        Ok(p) => p,
        Err(report) => {
            t.json("assumptions.json", &report)?;
            return Ok(t.finish(Status::ValidationFailure, json!({"reason": "kernel_exp_domination failed"})));
        }
    };
    rc.diagnostics.lyapunov = Some(params.clone());
    let u0 = rc.initial_step()?;
    let lag = params.lag_on_grid(rc.grid.step);
    let mut flat = 0usize;
    let (trace, _) = iterate_observed(&rc, &u0, |_, u| {
        flat = flat.max(lyapunov::flatness_check(u, params.delta0, lag, params.eps1, params.floor).len());
    })?;
    let values: Vec<f64> = trace.iter().map(|r| r.lyapunov.unwrap_or(f64::NEG_INFINITY)).collect();
    let check = &cfg.lyapunov_check;
    let cap = lyapunov::burn_in_max(&values, check.burn_in + 1);
    let after = values.iter().skip(check.burn_in).copied().fold(f64::NEG_INFINITY, f64::max);
    let bounded = after <= cap + check.tol;
    let summary = LyapunovSummary {
        params: &params,
        burn_in: check.burn_in,
        tol: check.tol,
        burn_in_max: cap,
        max_after_burn_in: after,
        bounded,
        finite_iterations: values.iter().filter(|v| v.is_finite()).count(),
        max_flat_points: flat,
    };
    t.csv("trace.csv", |buf| write_trace_csv(&trace, buf))?;
    t.json("lyapunov.json", &summary)?;
    let metrics = json!({
        "burn_in_max": fmt_inf(cap),
        "max_after_burn_in": fmt_inf(after),
        "bounded": bounded,
        "finite_iterations": summary.finite_iterations,
        "max_flat_points": flat,
        "M": params.m_lag,
    });
    Ok(t.finish(if bounded { Status::Success } else { Status::ValidationFailure }, metrics))
}

/// JSON has no infinities; they travel as strings.
fn fmt_inf(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(v.to_string())
    }
}

fn run_validate(cfg: &RunConfig) -> Result<RunOutput> {
    let sys = cfg.system()?;
    let mut t = Tables::new(cfg);
    let v = &cfg.validation;
    let q = match QTransform::try_from(sys.q.clone()) {
        Ok(q) => q,
        Err(Error::Degenerate(_)) => {
            let probs = match &sys.q {
                tightwave_core::operators::QSpec::Offspring { probs, .. } => probs.clone(),
                tightwave_core::operators::QSpec::Binary => vec![0.0, 1.0],
            };
            let mut report = AssumptionReport::default();
            report.push(moment_report(&probs, 2.0));
            t.json("assumptions.json", &report)?;
            return Ok(t.finish(Status::ValidationFailure, summary_of(&report)));
        }
        Err(e) => return Err(e),
    };
    let m = v.growth_constant(&q);
    let mut report = validate_q(&q, v.delta0, m, v.c_star, v.theta_star);
    report.push(moment_report(&q.probs(), q.theta()));
    let (kernel, shift) = validated_kernel(cfg, &q)?;
    let mut kr = validate_kernel(&kernel, &scan_for(cfg, &kernel, m))?;
    if let (Some(l), Some(c)) = (shift, kr.entries.iter_mut().find(|e| e.condition == "kernel_centering")) {
        c.constants.insert("L".into(), l);
        c.note = Some("kernel shifted by its centering constant L before scanning".into());
    }
    let g2 = kr.get("kernel_exp_domination").cloned();
    report.extend(kr);
    report.extend(validate_qtilde(&v.qtilde, &q, &v.delta_grid, &v.eps_grid)?);
    let unit = v.b_unit.or(cfg.grid.as_ref().map(|g| g.step)).unwrap_or(0.01);
    match g2 {
        Some(g) if g.pass => report.push(estimate_b(&kernel, &q, v.eta1, g.constants["a"], unit)?),
        _ => {
            let mut r: ConditionRecord = serde_json::from_value(json!({
                "condition": "operator_sandwich", "pass": false, "margin": f64::MIN,
                "witnesses": [], "constants": {}, "grid": "not scanned"
            }))?;
            r.note = Some("needs the decay rate from kernel_exp_domination".into());
            report.push(r);
        }
    }
    t.json("assumptions.json", &report)?;
    let status = if report.all_pass() { Status::Success } else { Status::ValidationFailure };
    Ok(t.finish(status, summary_of(&report)))
}

fn summary_of(report: &AssumptionReport) -> Value {
    let conditions: serde_json::Map<String, Value> =
        report.entries.iter().map(|e| (e.condition.clone(), json!(e.pass))).collect();
    json!({ "all_pass": report.all_pass(), "conditions": conditions })
}

fn simulate(cfg: &RunConfig) -> Result<(SampleSet, Option<Value>)> {
    let mc = cfg.mc()?;
    Ok(match cfg.simulation()? {
        Simulation::Brw { n } => {
            let sys = cfg.system()?;
            let law = OffspringLaw::from_q(&QTransform::try_from(sys.q.clone())?)?;
            (simulate_brw_max(&law, &sys.kernel, *n, mc)?, None)
        }
        Simulation::Cover { tree } => (simulate_cover_time(tree, mc)?, None),
        Simulation::ReturnEpochs { tree } => {
            let set = simulate_return_epochs(tree, mc)?;
            let exact = match tree {
                TreeSpec::KAry { arity: 2, depth, .. } => Some(serde_json::to_value(return_time_moments(*depth)?)?),
                _ => None,
            };
            (set, exact)
        }
        Simulation::Beta { n } => (simulate_beta_chain(*n, mc)?, None),
        Simulation::Torus { side } => (simulate_torus_cover(*side, mc)?, None),
    })
}

fn run_simulate(cfg: &RunConfig) -> Result<RunOutput> {
    let (set, exact) = simulate(cfg)?;
    let mut t = Tables::new(cfg);
    let summary = set.summary();
    let mut doc = serde_json::to_value(&summary)?;
    if let Some(e) = &exact {
        doc["exact"] = e.clone();
    }
    t.json("summary.json", &doc)?;
    if cfg.mc()?.dump {
        t.csv("samples.csv", |buf| set.write_csv(buf))?;
    }
    let mut metrics = json!({
        "count": summary.count,
        "mean": summary.mean,
        "variance": summary.variance,
        "iqr": summary.iqr(),
    });
    for (name, s) in &summary.extras {
        metrics[name] = json!({"mean": s.mean, "variance": s.variance, "iqr": s.iqr()});
    }
    if let Some(e) = exact {
        metrics["exact"] = e;
    }
    Ok(t.finish(Status::Success, metrics))
}

fn run_compare(cfg: &RunConfig) -> Result<RunOutput> {
    let n = match cfg.simulation()? {
        Simulation::Brw { n } | Simulation::Beta { n } => *n,
        _ => return Err(Error::Invalid("compare supports 'brw' and 'beta' simulations".into())),
    };
    let rc = cfg.recursion(n)?;
    let u0 = rc.initial_step()?;
    let (_, curve) = iterate(&rc, &u0)?;
    let (set, _) = simulate(cfg)?;
    let distance = ks_samples_vs_curve(&set.values, &curve)?;
    let dkw = dkw_epsilon(set.len(), cfg.compare.alpha)?;
    let band = cfg.compare.tolerance.unwrap_or(dkw);
    let within = distance <= band;
    let mut t = Tables::new(cfg);
    let metrics = json!({
        "n": n,
        "reps": set.len(),
        "kolmogorov_distance": distance,
        "dkw_band": dkw,
        "alpha": cfg.compare.alpha,
        "band": band,
        "within_band": within,
    });
    t.json("compare.json", &metrics)?;
    t.json("mc_summary.json", &set.summary())?;
    write_curve(&mut t, "engine_curve.csv", &curve)?;
    if cfg.mc()?.dump {
        t.csv("samples.csv", |buf| set.write_csv(buf))?;
    }
    Ok(t.finish(if within { Status::Success } else { Status::ValidationFailure }, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code_for(&Error::Degenerate("x".into())), 1);
        assert_eq!(exit_code_for(&Error::Numeric("x".into())), 2);
        assert_eq!(exit_code_for(&Error::Resource("x".into())), 2);
        assert_eq!(exit_code_for(&Error::Invalid("x".into())), 3);
        let io = Error::Io(std::io::Error::other("x"));
        assert_eq!(exit_code_for(&io), 4);
        let wrapped = Error::Iteration { iteration: 3, source: Box::new(Error::WindowOverflow("x".into())) };
        assert_eq!(exit_code_for(&wrapped), 2);
    }

    #[test]
    fn zero_iterations_single_row() {
        let cfg = parse_config(
            r#"{"command": "iterate",
                "system": {"kernel": {"kind": "translation_invariant", "law": {"family": "gaussian", "sigma": 1.0}}, "q": {"kind": "binary"}},
                "grid": {"step": 0.05}, "iterations": 0}"#,
        )
        .unwrap();
        let out = run(&cfg).unwrap();
        let trace = String::from_utf8(out.table("trace.csv").unwrap().to_vec()).unwrap();
        assert_eq!(trace.lines().count(), 2);
        assert_eq!(out.status, Status::Success);
    }

    #[test]
    fn degenerate_law_is_a_validation_failure() {
        let cfg = parse_config(
            r#"{"command": "validate",
                "system": {"kernel": {"kind": "translation_invariant", "law": {"family": "gaussian", "sigma": 1.0}},
                           "q": {"kind": "offspring", "probs": [1.0]}}}"#,
        )
        .unwrap();
        let out = run(&cfg).unwrap();
        assert_eq!(out.status, Status::ValidationFailure);
        assert_eq!(out.metrics["conditions"]["offspring_moment"], json!(false));
    }

    #[test]
    fn auto_lyapunov_with_pareto_fails_at_run_time() {
        let cfg = parse_config(
            r#"{"command": "lyapunov",
                "system": {"kernel": {"kind": "translation_invariant", "law": {"family": "pareto", "alpha": 2.0}}, "q": {"kind": "binary"}},
                "grid": {"step": 0.1}, "iterations": 2, "lyapunov": "auto"}"#,
        )
        .unwrap();
        let out = run(&cfg).unwrap();
        assert_eq!(out.status, Status::ValidationFailure);
        assert!(out.table("assumptions.json").is_some());
    }
}
