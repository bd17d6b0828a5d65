use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Levels reported in every summary.
pub const SUMMARY_LEVELS: [f64; 9] = [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99];

const HISTOGRAM_BINS: usize = 64;

/// Raw per-replica output of a simulator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleSet {
    /// One value per replica, in replica order.
    pub values: Vec<f64>,
    /// Auxiliary series. Entries named in `per_replica` have one value per replica.
    pub extras: BTreeMap<String, Vec<f64>>,
    pub per_replica: Vec<String>,
}

impl SampleSet {
    pub fn new(values: Vec<f64>) -> Self {
        SampleSet { values, ..Default::default() }
    }

    pub(crate) fn with_replica_extra(mut self, name: &str, values: Vec<f64>) -> Self {
        self.extras.insert(name.to_string(), values);
        self.per_replica.push(name.to_string());
        self
    }

    pub(crate) fn with_extra(mut self, name: &str, values: Vec<f64>) -> Self {
        self.extras.insert(name.to_string(), values);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn summary(&self) -> SampleSummary {
        let mut s = SampleSummary::from_values(&self.values);
        for (name, v) in &self.extras {
            if !v.is_empty() {
                s.extras.insert(name.clone(), SampleSummary::from_values(v));
            }
        }
        s
    }

    /// Per-sample CSV: `replica,value` plus `R_n` when recorded.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let r = self.extras.get("R_n").filter(|_| self.per_replica.iter().any(|n| n == "R_n"));
        if r.is_some() {
            w.write_record(["replica", "value", "R_n"])?;
        } else {
            w.write_record(["replica", "value"])?;
        }
        for (i, v) in self.values.iter().enumerate() {
            let mut row = vec![i.to_string(), v.to_string()];
            if let Some(r) = r {
                row.push(r[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fraction of samples strictly above `x`.
    pub fn tail_at(&self, x: f64) -> f64 {
        self.values.iter().filter(|v| **v > x).count() as f64 / self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileEntry {
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub start: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance; 0 for a single sample.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub quantiles: Vec<QuantileEntry>,
    pub histogram: Histogram,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, SampleSummary>,
}

impl SampleSummary {
    /// Welford accumulation in input order, then a full sort for quantiles.
    pub fn from_values(values: &[f64]) -> Self {
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (i, &v) in values.iter().enumerate() {
            let d = v - mean;
            mean += d / (i + 1) as f64;
            m2 += d * (v - mean);
        }
        let n = values.len();
        let variance = if n > 1 { (m2 / (n - 1) as f64).max(0.0) } else { 0.0 };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (min, max) = match (sorted.first(), sorted.last()) {
            (Some(a), Some(b)) => (*a, *b),
            _ => (f64::NAN, f64::NAN),
        };
        let quantiles = SUMMARY_LEVELS
            .iter()
            .map(|&p| QuantileEntry { p, value: sorted_quantile(&sorted, p) })
            .collect();
        let bin_width = if max > min { (max - min) / HISTOGRAM_BINS as f64 } else { 1.0 };
        let mut counts = vec![0u64; if n == 0 { 0 } else { HISTOGRAM_BINS }];
        for &v in &sorted {
            let b = (((v - min) / bin_width) as usize).min(HISTOGRAM_BINS - 1);
            counts[b] += 1;
        }
        SampleSummary {
            count: n,
            mean: if n > 0 { mean } else { f64::NAN },
            variance,
            min,
            max,
            quantiles,
            histogram: Histogram { start: min, bin_width, counts },
            extras: BTreeMap::new(),
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        (self.variance / self.count as f64).sqrt()
    }

    pub fn quantile(&self, p: f64) -> Option<f64> {
        self.quantiles.iter().find(|q| (q.p - p).abs() < 1e-12).map(|q| q.value)
    }

    pub fn iqr(&self) -> f64 {
        self.quantile(0.75).unwrap_or(f64::NAN) - self.quantile(0.25).unwrap_or(f64::NAN)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(Error::from)
    }
}

/// Linear interpolation between order statistics of sorted data.
pub fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_summary() {
        let s = SampleSummary::from_values(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.count, 4);
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.quantile(0.5), Some(2.5));
        assert_eq!(s.histogram.counts.iter().sum::<u64>(), 4);
    }

    #[test]
    fn csv_dump_has_r_column_only_when_recorded() {
        let set = SampleSet::new(vec![3.0, 5.0]);
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "replica,value\n0,3\n1,5\n");
        let set = set.with_replica_extra("R_n", vec![1.0, 2.0]);
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "replica,value,R_n\n0,3,1\n1,5,2\n");
    }

    proptest! {
        #[test]
        fn summary_invariants(v in proptest::collection::vec(-1e6f64..1e6, 1..200)) {
            let s = SampleSummary::from_values(&v);
            prop_assert_eq!(s.count, v.len());
            prop_assert!(s.variance >= 0.0);
            prop_assert!(s.quantiles.windows(2).all(|w| w[0].value <= w[1].value));
            let direct = v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!((s.mean - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
        }
    }
}
