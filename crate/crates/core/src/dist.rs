//! Discretized tail functions `F̄(x) = P(X > x)` on a uniform grid.
//!
//! A [`TailCurve`] stores its grid position as an anchor plus an integer
//! start index, so shifting a window by whole grid steps never touches the
//! floating-point anchor. Recentering a curve hundreds of times therefore
//! accumulates no positional drift.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for the edge conditions `v[0] ≥ 1 − tol`, `v[N−1] ≤ tol`.
pub const EDGE_TOL: f64 = 1e-12;
/// Default bound on the mass a single regrid may discard.
pub const CLIP_BUDGET: f64 = 1e-10;
/// Tail values below this are stored as exact zeros.
pub const TAIL_FLOOR: f64 = 1e-300;
/// Probability levels reported in every trace record.
pub const TRACE_LEVELS: [f64; 7] = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99];

/// How values between grid points are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    /// Right-continuous step function with atoms on the grid. Exact for
    /// lattice step laws whose support lies on the grid.
    Lattice,
    /// Piecewise-linear interpolation between grid points.
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailCurve {
    anchor: f64,
    start: i64,
    step: f64,
    values: Vec<f64>,
    mode: GridMode,
}

/// Snap `t` to the nearest integer when it is within rounding noise of it.
fn snapped_floor(t: f64) -> f64 {
    let r = t.round();
    if (t - r).abs() < 1e-9 {
        r
    } else {
        t.floor()
    }
}

impl TailCurve {
    /// Build a curve whose first grid point sits at `offset`.
    pub fn new(offset: f64, step: f64, values: Vec<f64>, mode: GridMode) -> Result<Self> {
        Self::with_edge_tol(offset, step, values, mode, EDGE_TOL)
    }

    pub fn with_edge_tol(
        offset: f64,
        step: f64,
        values: Vec<f64>,
        mode: GridMode,
        edge_tol: f64,
    ) -> Result<Self> {
        Self::from_parts(offset, 0, step, values, mode, edge_tol)
    }

    pub(crate) fn from_parts(
        anchor: f64,
        start: i64,
        step: f64,
        mut values: Vec<f64>,
        mode: GridMode,
        edge_tol: f64,
    ) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidCurve(format!("grid step must be positive, got {step}")));
        }
        if !anchor.is_finite() {
            return Err(Error::InvalidCurve(format!("offset must be finite, got {anchor}")));
        }
        if values.len() < 2 {
            return Err(Error::InvalidCurve(format!(
                "need at least two grid values, got {}",
                values.len()
            )));
        }
        for (i, v) in values.iter_mut().enumerate() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::InvalidCurve(format!("value {v} at index {i} outside [0, 1]")));
            }
            if *v < TAIL_FLOOR {
                *v = 0.0;
            }
        }
        if let Some(i) = values.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::InvalidCurve(format!(
                "values increase at index {}: {} -> {}",
                i + 1,
                values[i],
                values[i + 1]
            )));
        }
        let first = values[0];
        let last = values[values.len() - 1];
        if first < 1.0 - edge_tol {
            return Err(Error::InvalidCurve(format!(
                "left edge value {first} below 1 - {edge_tol}: window misses mass on the left"
            )));
        }
        if last > edge_tol {
            return Err(Error::InvalidCurve(format!(
                "right edge value {last} above {edge_tol}: window misses mass on the right"
            )));
        }
        Ok(TailCurve { anchor, start, step, values, mode })
    }

    /// The tail `1_{x < location}` of a point mass, on a window of
    /// `half_width` either side of it.
    ///
    /// In lattice mode the atom sits on a grid point. In continuous mode the
    /// grid is offset by half a step so the mass fills the single cell
    /// centred on `location`, which keeps its median exactly at `location`.
    pub fn point_mass(location: f64, step: f64, half_width: f64, mode: GridMode) -> Result<Self> {
        let k = (half_width / step).ceil().max(1.0) as i64;
        let values = (-k..=k).map(|i| if i < 0 { 1.0 } else { 0.0 }).collect();
        let anchor = match mode {
            GridMode::Lattice => location,
            GridMode::Continuous => location + 0.5 * step,
        };
        Self::from_parts(anchor, -k, step, values, mode, EDGE_TOL)
    }

    /// Sample `tail` at `len` grid points starting from `offset`.
    pub fn from_fn<F: Fn(f64) -> f64>(
        offset: f64,
        step: f64,
        len: usize,
        mode: GridMode,
        tail: F,
    ) -> Result<Self> {
        let values = (0..len).map(|i| tail(offset + i as f64 * step)).collect();
        Self::new(offset, step, values, mode)
    }

    pub fn offset(&self) -> f64 {
        self.x(0)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self) -> GridMode {
        self.mode
    }

    /// Grid origin shared by every curve derived from this one by whole-step shifts.
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    /// Index of the first stored value relative to the anchor.
    pub fn start_index(&self) -> i64 {
        self.start
    }

    /// Absolute coordinate of the `i`-th stored value.
    pub fn x(&self, i: usize) -> f64 {
        self.anchor + (self.start + i as i64) as f64 * self.step
    }

    pub fn last_x(&self) -> f64 {
        self.x(self.len() - 1)
    }

    /// Value at anchor-relative grid index `idx`, with the implied 1/0 outside the window.
    pub fn value_at_index(&self, idx: i64) -> f64 {
        let local = idx - self.start;
        if local < 0 {
            1.0
        } else if local as usize >= self.values.len() {
            0.0
        } else {
            self.values[local as usize]
        }
    }

    /// Pointwise read of the tail function.
    pub fn eval(&self, x: f64) -> f64 {
        let t = (x - self.offset()) / self.step;
        let i = snapped_floor(t);
        if i < 0.0 {
            return 1.0;
        }
        let n = self.values.len();
        if i >= n as f64 {
            return 0.0;
        }
        let i = i as usize;
        match self.mode {
            GridMode::Lattice => self.values[i],
            GridMode::Continuous => {
                let frac = t - i as f64;
                if i + 1 >= n {
                    if frac.abs() < 1e-9 {
                        self.values[n - 1]
                    } else {
                        0.0
                    }
                } else if frac <= 0.0 {
                    self.values[i]
                } else {
                    let a = self.values[i];
                    let b = self.values[i + 1];
                    a + frac * (b - a)
                }
            }
        }
    }

    /// Generalized inverse `inf{x : 1 − F̄(x) ≥ p}`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {p}")));
        }
        let target = 1.0 - p;
        let i = self.values.partition_point(|&v| v > target);
        Ok(match self.mode {
            GridMode::Lattice => {
                if i == self.values.len() {
                    self.last_x() + self.step
                } else {
                    self.x(i)
                }
            }
            GridMode::Continuous => {
                if i == 0 {
                    self.offset()
                } else if i == self.values.len() {
                    self.last_x()
                } else {
                    let hi = self.values[i - 1];
                    let lo = self.values[i];
                    self.x(i - 1) + self.step * (hi - target) / (hi - lo)
                }
            }
        })
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5).expect("0.5 is a valid level")
    }

    /// Translate by `delta` (absolute units); values are untouched.
    pub fn shifted(&self, delta: f64) -> TailCurve {
        TailCurve { anchor: self.anchor + delta, ..self.clone() }
    }

    /// Translate by a whole number of grid steps, exactly.
    pub fn shifted_slots(&self, slots: i64) -> TailCurve {
        TailCurve { start: self.start + slots, ..self.clone() }
    }

    /// Translate so the median sits at the origin.
    pub fn center(&self) -> TailCurve {
        self.shifted(-self.median())
    }

    /// Smallest grid multiple `A ≥ 0` with `F̄ˢ(−A) − F̄ˢ(A) > 1 − eps` for the centered curve.
    pub fn width(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Domain(format!("width level must lie in (0, 1), got {eps}")));
        }
        let centered = self.center();
        let lo = centered.offset();
        let hi = centered.last_x();
        let limit = lo.abs().max(hi.abs());
        let mut k = 0u64;
        loop {
            let a = k as f64 * self.step;
            if centered.eval(-a) - centered.eval(a) > 1.0 - eps {
                // Implied values outside the window are only trusted when
                // the stored edges are tight.
                let slack = 1e-9 * self.step;
                let loose_left = -a < lo - slack && 1.0 - self.values[0] > EDGE_TOL;
                let loose_right = a > hi + slack && self.values[self.len() - 1] > EDGE_TOL;
                if loose_left || loose_right {
                    break;
                }
                return Ok(a);
            }
            if a > limit {
                break;
            }
            k += 1;
        }
        Err(Error::WindowOverflow(format!(
            "window [{lo}, {hi}] around the median does not hold 1 - {eps} of the mass"
        )))
    }

    /// Resample onto `len` points starting at `offset`, keeping the step.
    pub fn regrid(&self, offset: f64, len: usize) -> Result<(TailCurve, f64)> {
        self.resample(offset, self.step, len, CLIP_BUDGET)
    }

    /// Resample onto a new uniform grid.
    ///
    /// Returns the new curve together with the mass that fell outside the
    /// new window; more than `clip_budget` is a window overflow.
    pub fn resample(
        &self,
        offset: f64,
        step: f64,
        len: usize,
        clip_budget: f64,
    ) -> Result<(TailCurve, f64)> {
        if len < 2 || !(step > 0.0) {
            return Err(Error::Domain(format!("invalid target grid: {len} points, step {step}")));
        }
        let k = (offset - self.anchor) / self.step;
        let aligned = (step - self.step).abs() <= 1e-12 * self.step && (k - k.round()).abs() < 1e-9;
        let (anchor, start, mut values) = if aligned {
            let start = k.round() as i64;
            let values = (0..len as i64).map(|i| self.value_at_index(start + i)).collect();
            (self.anchor, start, values)
        } else {
            let values: Vec<f64> = (0..len).map(|i| self.eval(offset + i as f64 * step)).collect();
            (offset, 0, values)
        };
        let clipped = clamp_edges(&mut values, EDGE_TOL);
        if clipped > clip_budget {
            return Err(Error::WindowOverflow(format!(
                "regrid to [{}, {}] discards mass {clipped:e} > budget {clip_budget:e}",
                offset,
                offset + (len - 1) as f64 * step
            )));
        }
        let curve = TailCurve::from_parts(anchor, start, step, values, self.mode, EDGE_TOL)?;
        Ok((curve, clipped))
    }

    /// Grid points of the tail, `x,tail` with a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "tail"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([self.x(i).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, mode: GridMode) -> Result<TailCurve> {
        let (xs, values) = read_xy_csv(input, "tail")?;
        if xs.len() < 2 {
            return Err(Error::InvalidCurve("CSV needs at least two rows".into()));
        }
        let step = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
        for (i, w) in xs.windows(2).enumerate() {
            if ((w[1] - w[0]) - step).abs() > 1e-9 * step.abs().max(1.0) {
                return Err(Error::InvalidCurve(format!("non-uniform grid at row {}", i + 2)));
            }
        }
        TailCurve::new(xs[0], step, values, mode)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<TailCurve> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Force the edge values to 1 and 0 when they violate the edge tolerance,
/// returning the mass lost outside the window.
pub(crate) fn clamp_edges(values: &mut [f64], edge_tol: f64) -> f64 {
    let n = values.len();
    let clipped = (1.0 - values[0]) + values[n - 1];
    if 1.0 - values[0] > edge_tol {
        values[0] = 1.0;
    }
    if values[n - 1] > edge_tol {
        values[n - 1] = 0.0;
    }
    clipped
}

/// Read a two-column CSV with header `x,<value_name>`.
pub(crate) fn read_xy_csv<R: Read>(input: R, value_name: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != value_name {
        return Err(Error::Invalid(format!(
            "expected CSV header `x,{value_name}`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Invalid(format!("row {}: cannot parse `{s}`: {e}", row + 2)))
        };
        xs.push(parse(&rec[0])?);
        ys.push(parse(&rec[1])?);
    }
    Ok((xs, ys))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurveJson {
    offset: f64,
    step: f64,
    values: Vec<f64>,
    mode: GridMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start_index: Option<i64>,
}

impl Serialize for TailCurve {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CurveJson {
            offset: self.offset(),
            step: self.step,
            values: self.values.clone(),
            mode: self.mode,
            anchor: Some(self.anchor),
            start_index: Some(self.start),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TailCurve {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = CurveJson::deserialize(d)?;
        let (anchor, start) = match (raw.anchor, raw.start_index) {
            (Some(a), Some(s)) => (a, s),
            _ => (raw.offset, 0),
        };
        TailCurve::from_parts(anchor, start, raw.step, raw.values, raw.mode, EDGE_TOL)
            .map_err(serde::de::Error::custom)
    }
}

/// Sup-distance between two tails over the union of their grids.
pub fn kolmogorov(a: &TailCurve, b: &TailCurve) -> f64 {
    let over = |c: &TailCurve| {
        (0..c.len())
            .map(|i| {
                let x = c.x(i);
                (a.eval(x) - b.eval(x)).abs()
            })
            .fold(0.0f64, f64::max)
    };
    over(a).max(over(b))
}

/// Per-iteration diagnostics of a recursion run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub n: usize,
    /// Median in absolute coordinates.
    pub median: f64,
    /// Centered quantiles at [`TRACE_LEVELS`].
    pub quantiles: [f64; 7],
    pub width: f64,
    pub lyapunov: Option<f64>,
    pub clipped_mass: f64,
}

impl TraceRecord {
    pub fn from_curve(
        n: usize,
        curve: &TailCurve,
        width_eps: f64,
        lyapunov: Option<f64>,
        clipped_mass: f64,
    ) -> Result<Self> {
        let median = curve.median();
        let mut quantiles = [0.0; 7];
        for (q, &p) in quantiles.iter_mut().zip(TRACE_LEVELS.iter()) {
            *q = curve.quantile(p)? - median;
        }
        Ok(TraceRecord { n, median, quantiles, width: curve.width(width_eps)?, lyapunov, clipped_mass })
    }
}
