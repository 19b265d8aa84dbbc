use serde::{Deserialize, Serialize};

use super::{FreezeStrategy, Histogram, IntervalStats, OverApproxReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl From<&Histogram> for HistogramReport {
    fn from(h: &Histogram) -> Self {
        Self {
            edges: h.edges.clone(),
            counts: h.counts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverApproxSummary {
    pub trials: u32,
    pub seed: u64,
    pub fraction: f64,
}

impl From<&OverApproxReport> for OverApproxSummary {
    fn from(r: &OverApproxReport) -> Self {
        Self {
            trials: r.trials,
            seed: r.seed,
            fraction: r.fraction,
        }
    }
}

/// One row of an interval analysis: which types, how intervals were built,
/// and what came out. No timestamps, so equal inputs give equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    /// A single type name, or several joined by `+` for an intersection.
    #[serde(rename = "type")]
    pub qtype: String,
    /// `None` when the intervals came from a file of unknown provenance.
    pub freeze: Option<FreezeStrategy>,
    /// `None` when the intervals were not expanded.
    pub lambda: Option<String>,
    pub nonzero_fraction: f64,
    pub mean_width: f64,
    pub histogram: HistogramReport,
    pub overapprox: Option<OverApproxSummary>,
    /// Type the over-approximation was measured against, when it differs
    /// from the type the intervals were built for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub tool_version: String,
}

impl AnalysisReport {
    pub fn new(
        qtype: impl Into<String>,
        freeze: Option<FreezeStrategy>,
        lambda: Option<String>,
        stats: &IntervalStats,
    ) -> Self {
        Self {
            qtype: qtype.into(),
            freeze,
            lambda,
            nonzero_fraction: stats.nonzero_fraction,
            mean_width: stats.mean_width,
            histogram: (&stats.histogram).into(),
            overapprox: None,
            target: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn with_overapprox(mut self, r: &OverApproxReport) -> Self {
        self.overapprox = Some(r.into());
        self
    }

    pub fn with_target(mut self, target: impl Into<String>) -> Self {
        self.target = Some(target.into());
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intervals::{interval_stats, IntervalSet};

    #[test]
    fn json_field_names() {
        let iv = IntervalSet::from_dequantized(&[0.0, 1.0], &[0.5, 1.0], &[false, false]).unwrap();
        let r = AnalysisReport::new("q4_k", Some(FreezeStrategy::Both), None, &interval_stats(&iv));
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in [
            "type",
            "freeze",
            "lambda",
            "nonzero_fraction",
            "mean_width",
            "histogram",
            "overapprox",
            "tool_version",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["freeze"], "both");
        let back: AnalysisReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
