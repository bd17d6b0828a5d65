//! Offspring transforms, the ⊗ convolution and the recursion driver.
//!
//! One step of the recursion is `T_n u = Ḡ_n ⊗ Q(u)` (move-first) or
//! `Q(Ḡ_n ⊗ u)` (branch-first), where
//! `(Ḡ ⊗ u)(x) = −∫ Ḡ(y, x − y) du(y)` is evaluated as a Stieltjes sum over
//! the grid increments of `u`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{clamp_edges, GridMode, TailCurve, TraceRecord, CLIP_BUDGET, EDGE_TOL, TAIL_FLOOR};
use crate::error::{Error, Result};
use crate::kernels::{cover_survival_grid, KernelSpec};
use crate::lyapunov::{self, LyapunovParams};

/// Offspring law as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QSpec {
    /// Exactly two children: `Q(u) = 2u − u²`.
    Binary,
    /// `probs[i]` is the probability of `i + 1` children.
    Offspring {
        probs: Vec<f64>,
        #[serde(default = "default_theta")]
        theta: f64,
    },
}

fn default_theta() -> f64 {
    2.0
}

/// The generating transform `Q(u) = 1 − Σ p_k (1 − u)^k`: the tail of the
/// maximum over the children when each child has tail `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QSpec", into = "QSpec")]
pub struct QTransform {
    spec: QSpec,
    m1: f64,
    theta: f64,
    m_theta: f64,
}

impl TryFrom<QSpec> for QTransform {
    type Error = Error;

    fn try_from(spec: QSpec) -> Result<Self> {
        match spec {
            QSpec::Binary => Ok(QTransform::binary()),
            QSpec::Offspring { probs, theta } => QTransform::offspring(probs, theta),
        }
    }
}

impl From<QTransform> for QSpec {
    fn from(q: QTransform) -> QSpec {
        q.spec
    }
}

/// Check a probability vector over `k ≥ 1` (index `i` holds `p_{i+1}`).
pub fn check_offspring_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Invalid("offspring probabilities are empty".into()));
    }
    if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::Invalid(format!("offspring probability p_{} = {p} is not in [0, 1]", i + 1)));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Invalid(format!("offspring probabilities sum to {total}, not 1")));
    }
    if probs[0] >= 1.0 - 1e-12 {
        return Err(Error::Degenerate("p_1 = 1: every particle has exactly one child".into()));
    }
    Ok(())
}

impl QTransform {
    pub fn binary() -> Self {
        QTransform { spec: QSpec::Binary, m1: 2.0, theta: 2.0, m_theta: 4.0 }
    }

    /// General offspring law; `probs[i]` is `p_{i+1}` and `theta ∈ (1, 2]`
    /// selects the reported moment `m_θ = Σ k^θ p_k`.
    pub fn offspring(probs: Vec<f64>, theta: f64) -> Result<Self> {
        check_offspring_probs(&probs)?;
        if !(theta > 1.0 && theta <= 2.0) {
            return Err(Error::Invalid(format!("moment exponent theta must lie in (1, 2], got {theta}")));
        }
        let m1 = probs.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
        let m_theta = probs.iter().enumerate().map(|(i, p)| ((i + 1) as f64).powf(theta) * p).sum();
        Ok(QTransform { spec: QSpec::Offspring { probs, theta }, m1, theta, m_theta })
    }

    pub fn spec(&self) -> &QSpec {
        &self.spec
    }

    /// Mean offspring number `m₁`.
    pub fn m1(&self) -> f64 {
        self.m1
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `Σ k^θ p_k`.
    pub fn m_theta(&self) -> f64 {
        self.m_theta
    }

    /// Offspring probabilities with index `i` holding `p_{i+1}`.
    pub fn probs(&self) -> Vec<f64> {
        match &self.spec {
            QSpec::Binary => vec![0.0, 1.0],
            QSpec::Offspring { probs, .. } => probs.clone(),
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        match &self.spec {
            QSpec::Binary => u * (2.0 - u),
            QSpec::Offspring { probs, .. } => {
                // 1 − (1 − u)^k without cancellation for small u.
                let l = (-u).ln_1p();
                let s: f64 = probs
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(i, p)| p * -((i + 1) as f64 * l).exp_m1())
                    .sum();
                s.min(1.0)
            }
        }
    }

    /// Apply `Q` to a nonincreasing sequence, keeping it nonincreasing
    /// under rounding.
    fn apply_values(&self, values: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = values.iter().map(|&v| self.eval(v)).collect();
        enforce_monotone(&mut out);
        out
    }
}

/// Pointwise `Q(u)`. The right edge may grow by the factor `Q'(0) = m₁`, so
/// the result is accepted with the edge tolerance scaled accordingly.
pub fn apply_q(q: &QTransform, u: &TailCurve) -> Result<TailCurve> {
    let values = q.apply_values(u.values());
    TailCurve::from_parts(
        u.anchor(),
        u.start_index(),
        u.step(),
        values,
        u.mode(),
        q.eval(EDGE_TOL).max(EDGE_TOL),
    )
}

/// Order in which the walk step and the branching act within one generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `F̄_{n+1} = Ḡ ⊗ Q(F̄_n)`: displace, then take the max over children.
    MoveFirst,
    /// `F̄_{n+1} = Q(Ḡ ⊗ F̄_n)`: branch at the start of each step.
    BranchFirst,
}

fn default_clip_budget() -> f64 {
    CLIP_BUDGET
}

fn default_edge_tol() -> f64 {
    EDGE_TOL
}

fn default_grid_mode() -> GridMode {
    GridMode::Continuous
}

/// Default window half-width in units of the kernel scale.
pub const DEFAULT_WINDOW_SCALES: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub step: f64,
    /// Half-width of the window kept around the median after each step;
    /// defaults to 40 kernel scales.
    #[serde(default)]
    pub half_width: Option<f64>,
    #[serde(default = "default_clip_budget")]
    pub clip_budget: f64,
    #[serde(default = "default_edge_tol")]
    pub edge_tol: f64,
    #[serde(default = "default_grid_mode")]
    pub mode: GridMode,
}

impl GridSpec {
    pub fn new(step: f64, mode: GridMode) -> Self {
        GridSpec { step, half_width: None, clip_budget: CLIP_BUDGET, edge_tol: EDGE_TOL, mode }
    }

    pub fn with_half_width(mut self, half_width: f64) -> Self {
        self.half_width = Some(half_width);
        self
    }

    pub fn half_width_for(&self, kernel: &KernelSpec) -> f64 {
        self.half_width.unwrap_or(DEFAULT_WINDOW_SCALES * kernel.scale())
    }

    fn validate(&self, kernel: &KernelSpec) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::Invalid(format!("grid step must be positive, got {}", self.step)));
        }
        let hw = self.half_width_for(kernel);
        if !(hw.is_finite() && hw >= 10.0 * kernel.scale()) {
            return Err(Error::Invalid(format!(
                "window half-width {hw} is below 10 kernel scales ({})",
                10.0 * kernel.scale()
            )));
        }
        if hw / self.step > 5e7 {
            return Err(Error::Invalid(format!("window of {} grid points is too large", 2.0 * hw / self.step)));
        }
        if !(self.clip_budget >= 0.0 && self.clip_budget < 1.0) {
            return Err(Error::Invalid(format!("clip budget must lie in [0, 1), got {}", self.clip_budget)));
        }
        if !(self.edge_tol > 0.0 && self.edge_tol < 0.5) {
            return Err(Error::Invalid(format!("edge tolerance must lie in (0, 0.5), got {}", self.edge_tol)));
        }
        Ok(())
    }
}

fn default_width_eps() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diagnostics {
    /// Level ε of the width `A_ε` recorded per iteration.
    #[serde(default = "default_width_eps")]
    pub width_eps: f64,
    #[serde(default)]
    pub lyapunov: Option<LyapunovParams>,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Diagnostics { width_eps: default_width_eps(), lyapunov: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecursionConfig {
    pub mode: Mode,
    pub kernel: KernelSpec,
    pub q: QTransform,
    pub grid: GridSpec,
    pub iterations: usize,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

impl RecursionConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.grid.validate(&self.kernel)?;
        let eps = self.diagnostics.width_eps;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Invalid(format!("width level must lie in (0, 1), got {eps}")));
        }
        if let Some(p) = &self.diagnostics.lyapunov {
            p.validate()?;
        }
        Ok(())
    }

    /// The step initial condition `1_{x < 0}` on this configuration's grid.
    pub fn initial_step(&self) -> Result<TailCurve> {
        TailCurve::point_mass(0.0, self.grid.step, self.grid.half_width_for(&self.kernel), self.grid.mode)
    }
}

/// Masses of the Stieltjes measure `−du` and the grid positions carrying them.
///
/// `cells[j]` sits at index `j + frac` (relative to the curve's first grid
/// point); `atoms` are extra masses at integer indices.
struct Masses {
    cells: Vec<f64>,
    frac: f64,
    atoms: Vec<(i64, f64)>,
}

fn masses(u: &TailCurve) -> Masses {
    let v = u.values();
    let n = v.len();
    match u.mode() {
        // Right-continuous steps: atom at x_j is v[j−1] − v[j]; the mass left
        // of the window joins x_0 and the mass right of it sits at x_N.
        GridMode::Lattice => {
            let mut cells = Vec::with_capacity(n + 1);
            cells.push(1.0 - v[0]);
            cells.extend(v.windows(2).map(|w| w[0] - w[1]));
            cells.push(v[n - 1]);
            Masses { cells, frac: 0.0, atoms: Vec::new() }
        }
        // Linear pieces: each cell's drop sits at its midpoint; boundary
        // masses are atoms at the window edges.
        GridMode::Continuous => {
            let cells = v.windows(2).map(|w| w[0] - w[1]).collect();
            let atoms = vec![(0, 1.0 - v[0]), (n as i64 - 1, v[n - 1])];
            Masses { cells, frac: 0.5, atoms }
        }
    }
}

fn enforce_monotone(values: &mut [f64]) {
    let mut prev = 1.0f64;
    for v in values.iter_mut() {
        *v = v.clamp(0.0, prev);
        prev = *v;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn floored(t: f64) -> f64 {
    if t < TAIL_FLOOR {
        0.0
    } else {
        t
    }
}

/// `Ḡ_n ⊗ u`, returned on a window of the grid's half-width around the
/// result's median together with the mass clipped at the window edges.
pub fn convolve(kernel: &KernelSpec, n: usize, u: &TailCurve, grid: &GridSpec) -> Result<(TailCurve, f64)> {
    let half = (grid.half_width_for(kernel) / u.step()).ceil().max(1.0) as i64;
    let m = masses(u);
    let (k_start, values) = match kernel {
        KernelSpec::TranslationInvariant { .. } => convolve_invariant(kernel, &m, u, half)?,
        KernelSpec::CoverTime { shift } => convolve_cover(*shift, n, &m, u, half)?,
    };
    finish(u, k_start, values, grid)
}

fn finish(u: &TailCurve, k_start: i64, mut values: Vec<f64>, grid: &GridSpec) -> Result<(TailCurve, f64)> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("convolution produced a non-finite value".into()));
    }
    enforce_monotone(&mut values);
    for v in values.iter_mut() {
        if *v < TAIL_FLOOR {
            *v = 0.0;
        }
    }
    let clipped = clamp_edges(&mut values, grid.edge_tol);
    if clipped > grid.clip_budget {
        return Err(Error::WindowOverflow(format!(
            "convolution result leaves mass {clipped:e} outside a window of half-width {} (budget {:e})",
            grid.half_width.map_or_else(|| "default".to_string(), |h| h.to_string()),
            grid.clip_budget
        )));
    }
    let curve = TailCurve::from_parts(
        u.anchor(),
        u.start_index() + k_start,
        u.step(),
        values,
        u.mode(),
        grid.edge_tol,
    )?;
    Ok((curve, clipped))
}

/// Translation-invariant kernels: a discrete convolution of the masses with
/// the taps `T[d] = Ḡ((d − frac)·h − L)`, `d` the index distance from mass
/// to target. Output indices are relative to the input's first grid point.
fn convolve_invariant(kernel: &KernelSpec, m: &Masses, u: &TailCurve, half: i64) -> Result<(i64, Vec<f64>)> {
    let h = u.step();
    let tap = |d: f64| -> f64 {
        let g = kernel.tail(0, 0.0, d * h).unwrap_or(0.0);
        floored(g)
    };
    let cells = &m.cells;
    let ncell = cells.len() as i64;
    let point = |k: i64| -> f64 {
        let mut s = 0.0;
        for (j, w) in cells.iter().enumerate() {
            if *w > 0.0 {
                s += w * tap((k - j as i64) as f64 - m.frac);
            }
        }
        for &(idx, w) in &m.atoms {
            if w > 0.0 {
                s += w * tap((k - idx) as f64);
            }
        }
        s
    };
    let k_med = first_at_most_half(point, ncell)?;
    let k_start = k_med - half;
    let k_end = k_med + half;

    // Taps over every distance that can occur in the window.
    let d_first = k_start - (ncell - 1);
    let taps: Vec<f64> = (d_first..=k_end).map(|d| tap(d as f64 - m.frac)).collect();
    let n_one = taps.partition_point(|&t| t >= 1.0) as i64;
    let n_pos = taps.partition_point(|&t| t > 0.0) as i64;
    let d_one = d_first + n_one - 1;
    let d_zero = d_first + n_pos;
    let rev: Vec<f64> = taps.iter().rev().copied().collect();
    let tlen = taps.len() as i64;
    let mut suffix = vec![0.0; cells.len() + 1];
    for j in (0..cells.len()).rev() {
        suffix[j] = suffix[j + 1] + cells[j];
    }

    let values: Vec<f64> = (k_start..=k_end)
        .into_par_iter()
        .map(|k| {
            let js = (k - d_one).clamp(0, ncell);
            let mut s = suffix[js as usize];
            let ja = (k - d_zero + 1).max(0);
            let jb = (k - d_one - 1).min(ncell - 1);
            if ja <= jb {
                let off = tlen - 1 - k + d_first;
                let (ja, jb) = (ja as usize, jb as usize);
                let (ra, rb) = ((ja as i64 + off) as usize, (jb as i64 + off) as usize);
                s += dot(&cells[ja..=jb], &rev[ra..=rb]);
            }
            for &(idx, w) in &m.atoms {
                if w > 0.0 {
                    s += w * tap((k - idx) as f64);
                }
            }
            s
        })
        .collect();
    Ok((k_start, values))
}

/// Least index `k` with `f(k) ≤ 1/2` for a nonincreasing `f` that starts
/// near 1 and ends near 0.
fn first_at_most_half<F: Fn(i64) -> f64>(f: F, span: i64) -> Result<i64> {
    let limit = 1i64 << 50;
    let mut hi = span.max(1);
    while f(hi) > 0.5 {
        hi = hi.saturating_mul(2);
        if hi > limit {
            return Err(Error::Numeric("median of the convolution is out of range".into()));
        }
    }
    let mut lo = -1i64;
    while f(lo) <= 0.5 {
        lo = lo.saturating_mul(2);
        if lo < -limit {
            return Err(Error::Numeric("median of the convolution is out of range".into()));
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if f(mid) <= 0.5 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Number of masses handled per parallel task in the cover convolution.
const COVER_CHUNK: usize = 32;

/// Cover kernel with shift `L`: result(x) = Σ Δu · S_{y'}(x − (n+1)L) with
/// `y' = y − nL`, where `S_y` is the survival function of `k(y, ·)`. A mass
/// with `y' < 0` moves like one at 0, displaced by `y'`. The result is first
/// computed on every index it can differ from 0 or 1, then cut around its
/// median.
fn convolve_cover(shift: f64, n: usize, m: &Masses, u: &TailCurve, half: i64) -> Result<(i64, Vec<f64>)> {
    let h = u.step();
    let x0 = u.offset();
    let level = n as f64 * shift;
    let lift = (n + 1) as f64 * shift;
    let mut points: Vec<(f64, f64)> = m
        .cells
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(j, w)| (x0 + (j as f64 + m.frac) * h, *w))
        .collect();
    points.extend(m.atoms.iter().filter(|(_, w)| *w > 0.0).map(|&(i, w)| (x0 + i as f64 * h, w)));
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    if points.is_empty() {
        return Err(Error::Numeric("tail curve carries no mass".into()));
    }
    let y_lo = points[0].0 - level;
    let y_hi = (points[points.len() - 1].0 - level).max(0.0);
    let z_lo = if y_lo < 0.0 { y_lo } else { (y_lo - 12.0).max(0.0) };
    let k_lo = ((z_lo + lift - x0) / h).floor() as i64 - 1;
    let k_hi = ((y_hi + 28.0 + lift - x0) / h).ceil() as i64 + 1;
    let len = (k_hi - k_lo + 1) as usize;
    let z0 = x0 + k_lo as f64 * h - lift;

    let partials: Vec<Vec<f64>> = points
        .par_chunks(COVER_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; len];
            for &(y, w) in chunk {
                let yr = y - level;
                let s = if yr >= 0.0 {
                    cover_survival_grid(yr, z0, h, len)
                } else {
                    cover_survival_grid(0.0, z0 - yr, h, len)
                };
                for (a, si) in acc.iter_mut().zip(&s) {
                    *a += w * si;
                }
            }
            acc
        })
        .collect();
    let mut full = vec![0.0; len];
    for p in &partials {
        for (a, b) in full.iter_mut().zip(p) {
            *a += b;
        }
    }
    let read = |k: i64| -> f64 {
        if k < k_lo {
            1.0
        } else if k > k_hi {
            0.0
        } else {
            full[(k - k_lo) as usize]
        }
    };
    let k_med = k_lo + full.partition_point(|&v| v > 0.5) as i64;
    let k_start = k_med - half;
    let values = (k_start..=k_med + half).map(read).collect();
    Ok((k_start, values))
}

/// One application of `T_n`; returns the new curve and the clipped mass.
pub fn step(config: &RecursionConfig, u: &TailCurve, n: usize) -> Result<(TailCurve, f64)> {
    match config.mode {
        Mode::MoveFirst => convolve(&config.kernel, n, &apply_q(&config.q, u)?, &config.grid),
        Mode::BranchFirst => {
            let (c, clipped) = convolve(&config.kernel, n, u, &config.grid)?;
            Ok((apply_q(&config.q, &c)?, clipped))
        }
    }
}

/// Run `config.iterations` steps from `u0`, recording one trace row per
/// curve (`n = 0` is `u0` itself).
pub fn iterate(config: &RecursionConfig, u0: &TailCurve) -> Result<(Vec<TraceRecord>, TailCurve)> {
    iterate_observed(config, u0, |_, _| {})
}

/// [`iterate`], additionally handing every curve `F̄_n` to `observe`.
pub fn iterate_observed<F: FnMut(usize, &TailCurve)>(
    config: &RecursionConfig,
    u0: &TailCurve,
    mut observe: F,
) -> Result<(Vec<TraceRecord>, TailCurve)> {
    config.validate()?;
    let record = |n: usize, u: &TailCurve, clipped: f64| -> Result<TraceRecord> {
        let lyap = config.diagnostics.lyapunov.as_ref().map(|p| lyapunov::lyap(u, p));
        TraceRecord::from_curve(n, u, config.diagnostics.width_eps, lyap, clipped)
    };
    let wrap = |n: usize| move |e: Error| Error::Iteration { iteration: n, source: Box::new(e) };
    let mut trace = Vec::with_capacity(config.iterations + 1);
    trace.push(record(0, u0, 0.0).map_err(wrap(0))?);
    observe(0, u0);
    let mut u = u0.clone();
    for n in 0..config.iterations {
        let (next, clipped) = step(config, &u, n).map_err(wrap(n + 1))?;
        trace.push(record(n + 1, &next, clipped).map_err(wrap(n + 1))?);
        observe(n + 1, &next);
        u = next;
    }
    Ok((trace, u))
}

/// Header of the trace table.
pub const TRACE_COLUMNS: [&str; 12] =
    ["n", "median", "q01", "q05", "q25", "q50", "q75", "q95", "q99", "width", "lyapunov", "clipped_mass"];

pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for r in trace {
        let mut row = vec![r.n.to_string(), r.median.to_string()];
        row.extend(r.quantiles.iter().map(|q| q.to_string()));
        row.push(r.width.to_string());
        row.push(r.lyapunov.map_or_else(String::new, |l| l.to_string()));
        row.push(r.clipped_mass.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::kolmogorov;
    use crate::special::normal_tail;
    use proptest::prelude::*;

    fn lattice_config(iterations: usize, mode: Mode) -> RecursionConfig {
        RecursionConfig {
            mode,
            kernel: KernelSpec::two_point(0.5),
            q: QTransform::binary(),
            grid: GridSpec::new(1.0, GridMode::Lattice).with_half_width(30.0),
            iterations,
            diagnostics: Diagnostics { width_eps: 0.1, lyapunov: None },
        }
    }

    /// Distribution of `M_n` for binary branching with ±1 steps, move-first,
    /// by direct manipulation of integer CDFs: `M_{k+1} = X + max(M_k, M_k')`.
    fn lattice_dp(n: usize) -> Vec<(i64, f64)> {
        let off = n as i64;
        let size = 2 * n + 1;
        let mut pmf = vec![0.0; size];
        pmf[off as usize] = 1.0;
        for _ in 0..n {
            let mut cdf = 0.0;
            let mut max_pmf = vec![0.0; size];
            for (i, p) in pmf.iter().enumerate() {
                let prev = cdf;
                cdf += p;
                max_pmf[i] = cdf * cdf - prev * prev;
            }
            let mut next = vec![0.0; size];
            for (i, p) in max_pmf.iter().enumerate() {
                if *p == 0.0 {
                    continue;
                }
                if i + 1 < size {
                    next[i + 1] += 0.5 * p;
                }
                if i >= 1 {
                    next[i - 1] += 0.5 * p;
                }
            }
            pmf = next;
        }
        pmf.iter().enumerate().map(|(i, p)| (i as i64 - off, *p)).collect()
    }

    #[test]
    fn binary_q_values() {
        let q = QTransform::binary();
        assert_eq!(q.eval(0.5), 0.75);
        assert_eq!(q.eval(0.0), 0.0);
        assert_eq!(q.eval(1.0), 1.0);
        let three = QTransform::offspring(vec![0.0, 0.0, 1.0], 2.0).unwrap();
        assert!((three.eval(0.5) - 0.875).abs() < 1e-15);
        assert_eq!(three.m1(), 3.0);
        assert_eq!(three.m_theta(), 9.0);
    }

    #[test]
    fn offspring_matches_binary() {
        let two = QTransform::offspring(vec![0.0, 1.0], 2.0).unwrap();
        let b = QTransform::binary();
        for i in 0..=100 {
            let u = i as f64 / 100.0;
            assert!((two.eval(u) - b.eval(u)).abs() < 1e-15);
        }
        assert!((two.eval(1e-20) - 2e-20).abs() < 1e-34);
    }

    #[test]
    fn q_rejects_bad_laws() {
        assert!(matches!(QTransform::offspring(vec![1.0], 2.0), Err(Error::Degenerate(_))));
        assert!(QTransform::offspring(vec![0.5, 0.4], 2.0).is_err());
        assert!(QTransform::offspring(vec![-0.5, 1.5], 2.0).is_err());
        assert!(QTransform::offspring(vec![0.5, 0.5], 2.5).is_err());
        let json = r#"{"kind":"offspring","probs":[1.0]}"#;
        assert!(serde_json::from_str::<QTransform>(json).is_err());
        let ok: QTransform = serde_json::from_str(r#"{"kind":"offspring","probs":[0.25,0.75]}"#).unwrap();
        assert_eq!(ok.m1(), 1.75);
    }

    #[test]
    fn q_preserves_step() {
        let step = TailCurve::point_mass(0.0, 0.1, 5.0, GridMode::Continuous).unwrap();
        let q = QTransform::offspring(vec![0.2, 0.3, 0.5], 2.0).unwrap();
        assert_eq!(apply_q(&q, &step).unwrap().values(), step.values());
    }

    #[test]
    fn convolving_a_point_mass_returns_the_kernel() {
        let grid = GridSpec::new(0.01, GridMode::Continuous).with_half_width(12.0);
        let k = KernelSpec::gaussian(1.0);
        for a in [0.0, 3.7] {
            let u = TailCurve::point_mass(a, 0.01, 12.0, GridMode::Continuous).unwrap();
            let (r, clipped) = convolve(&k, 0, &u, &grid).unwrap();
            assert!(clipped < 1e-20);
            for x in [-2.0, -0.5, 0.0, 0.3, 1.0, 2.5] {
                assert!((r.eval(a + x) - normal_tail(x, 1.0)).abs() < 1e-4, "a = {a}, x = {x}");
            }
        }
    }

    #[test]
    fn cover_kernel_on_a_point_mass() {
        let grid = GridSpec::new(0.01, GridMode::Lattice).with_half_width(10.0);
        let u = TailCurve::point_mass(0.0, 0.01, 10.0, GridMode::Lattice).unwrap();
        let (r, _) = convolve(&KernelSpec::cover(0.0), 0, &u, &grid).unwrap();
        for x in [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0] {
            assert!((r.eval(x) - (-x * x).exp()).abs() < 1e-10, "x = {x}");
        }
        assert_eq!(r.eval(-0.01), 1.0);
    }

    #[test]
    fn two_point_hand_values() {
        let cfg = lattice_config(2, Mode::MoveFirst);
        let u0 = cfg.initial_step().unwrap();
        let (one, _) = step(&cfg, &u0, 0).unwrap();
        assert_eq!(one.eval(0.0), 0.5);
        assert_eq!(one.eval(-1.0), 0.5);
        assert_eq!(one.eval(-1.5), 1.0);
        let (two, _) = step(&cfg, &one, 1).unwrap();
        // P(M₂ = 2) = 3/8, P(M₂ = 0) = 1/2, P(M₂ = −2) = 1/8.
        assert!((two.eval(1.0) - 3.0 / 8.0).abs() < 1e-15);
        assert!((two.eval(-1.0) - two.eval(1.0) - 0.5).abs() < 1e-15);
        assert!((1.0 - two.eval(-2.0) - 1.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn lattice_engine_matches_dp_oracle() {
        let cfg = lattice_config(10, Mode::MoveFirst);
        let (_, fin) = iterate(&cfg, &cfg.initial_step().unwrap()).unwrap();
        let pmf = lattice_dp(10);
        let mut tail = 1.0;
        let mut worst = 0.0f64;
        for &(x, p) in &pmf {
            tail -= p;
            worst = worst.max((fin.eval(x as f64) - tail.max(0.0)).abs());
        }
        assert!(worst <= 1e-12, "worst gap {worst}");
    }

    #[test]
    fn branch_first_is_q_of_move_first() {
        let move_cfg = lattice_config(12, Mode::MoveFirst);
        let branch_cfg = lattice_config(12, Mode::BranchFirst);
        let u0 = move_cfg.initial_step().unwrap();
        let mut moves = Vec::new();
        iterate_observed(&move_cfg, &u0, |_, c| moves.push(c.clone())).unwrap();
        let mut branches = Vec::new();
        iterate_observed(&branch_cfg, &apply_q(&branch_cfg.q, &u0).unwrap(), |_, c| branches.push(c.clone()))
            .unwrap();
        for (m, b) in moves.iter().zip(&branches) {
            let qm = apply_q(&move_cfg.q, m).unwrap();
            assert!(kolmogorov(&qm, b) <= 1e-12);
        }
    }

    #[test]
    fn iterate_with_no_steps_traces_the_start() {
        let cfg = lattice_config(0, Mode::MoveFirst);
        let u0 = cfg.initial_step().unwrap();
        let (trace, fin) = iterate(&cfg, &u0).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(fin, u0);
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,median,q01,q05,q25,q50,q75,q95,q99,width,lyapunov,clipped_mass\n"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn narrow_window_overflows() {
        let u = TailCurve::point_mass(0.0, 0.01, 10.0, GridMode::Continuous).unwrap();
        let k = KernelSpec::gaussian(1.0);
        let wide = GridSpec::new(0.01, GridMode::Continuous).with_half_width(10.0);
        assert!(convolve(&k, 0, &u, &wide).is_ok());
        let narrow = GridSpec::new(0.01, GridMode::Continuous).with_half_width(3.0);
        assert!(matches!(convolve(&k, 0, &u, &narrow), Err(Error::WindowOverflow(_))));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = lattice_config(1, Mode::MoveFirst);
        cfg.grid.half_width = Some(5.0);
        assert!(matches!(cfg.validate(), Err(Error::Invalid(_))));
        let err = iterate(&cfg, &TailCurve::point_mass(0.0, 1.0, 30.0, GridMode::Lattice).unwrap());
        assert!(err.is_err());
    }

    fn arb_lattice_curve() -> impl Strategy<Value = TailCurve> {
        prop::collection::vec(0.0f64..1.0, 4..20).prop_map(|mut drops| {
            let total: f64 = drops.iter().sum::<f64>() + 1e-9;
            drops.iter_mut().for_each(|d| *d /= total);
            let mut v = vec![1.0; 3];
            let mut level = 1.0f64;
            for d in drops {
                level = (level - d).max(0.0);
                v.push(level);
            }
            v.extend([0.0; 3]);
            TailCurve::new(-3.0, 1.0, v, GridMode::Lattice).unwrap()
        })
    }

    proptest! {
        #[test]
        fn monotone_coupling(a in arb_lattice_curve(), b in arb_lattice_curve()) {
            // The pointwise maximum of two tails is again a tail, and dominates both.
            let lo_x = a.offset().min(b.offset()) - 1.0;
            let hi_x = a.last_x().max(b.last_x()) + 1.0;
            let n = (hi_x - lo_x) as usize + 1;
            let upper = TailCurve::from_fn(lo_x, 1.0, n, GridMode::Lattice, |x| a.eval(x).max(b.eval(x))).unwrap();
            let cfg = lattice_config(1, Mode::MoveFirst);
            let (sa, _) = step(&cfg, &a, 0).unwrap();
            let (su, _) = step(&cfg, &upper, 0).unwrap();
            for i in -40..40 {
                let x = i as f64;
                prop_assert!(sa.eval(x) <= su.eval(x) + 1e-15);
            }
        }

        #[test]
        fn translation_equivariance(u in arb_lattice_curve(), c in -20i64..20) {
            let cfg = lattice_config(1, Mode::MoveFirst);
            let (a, _) = step(&cfg, &u.shifted_slots(c), 0).unwrap();
            let (b, _) = step(&cfg, &u, 0).unwrap();
            let b = b.shifted_slots(c);
            prop_assert_eq!(kolmogorov(&a, &b), 0.0);
        }

        #[test]
        fn step_conserves_mass(u in arb_lattice_curve()) {
            let cfg = lattice_config(1, Mode::MoveFirst);
            let (s, clipped) = step(&cfg, &u, 0).unwrap();
            prop_assert!(clipped <= 1e-12);
            prop_assert!(s.values()[0] >= 1.0 - 1e-12 && *s.values().last().unwrap() <= 1e-12);
        }
    }
}
