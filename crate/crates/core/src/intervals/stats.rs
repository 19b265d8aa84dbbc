use serde::{Deserialize, Serialize};

use super::{Interval, IntervalSet};

/// Smallest histogram edge, as a power of ten.
const HIST_MIN_EXP: i32 = -9;
const HIST_MAX_EXP: i32 = 0;
const BINS_PER_DECADE: i32 = 4;

/// Log-spaced histogram of nonzero widths. Widths outside the edge range are
/// counted in the first or last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn log_spaced() -> Self {
        let n = (HIST_MAX_EXP - HIST_MIN_EXP) * BINS_PER_DECADE;
        let edges = (0..=n)
            .map(|k| 10f64.powf(HIST_MIN_EXP as f64 + k as f64 / BINS_PER_DECADE as f64))
            .collect();
        Self {
            edges,
            counts: vec![0; n as usize],
        }
    }

    fn add(&mut self, v: f64) {
        let last = self.counts.len() - 1;
        let bin = self.edges.partition_point(|&e| e <= v).saturating_sub(1).min(last);
        self.counts[bin] += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub count: usize,
    pub frozen: usize,
    /// Fraction of intervals with positive width.
    pub nonzero_fraction: f64,
    /// Mean width over the nonzero intervals; 0 when there are none.
    pub mean_width: f64,
    pub max_width: f64,
    pub histogram: Histogram,
}

pub fn interval_stats(iv: &IntervalSet) -> IntervalStats {
    let mut hist = Histogram::log_spaced();
    let (mut nonzero, mut sum, mut max) = (0usize, 0.0f64, 0.0f64);
    for w in iv.bounds().iter().map(Interval::width).filter(|&w| w > 0.0) {
        nonzero += 1;
        sum += w;
        max = max.max(w);
        hist.add(w);
    }
    let count = iv.len();
    IntervalStats {
        count,
        frozen: iv.frozen_count(),
        nonzero_fraction: if count == 0 { 0.0 } else { nonzero as f64 / count as f64 },
        mean_width: if nonzero == 0 { 0.0 } else { sum / nonzero as f64 },
        max_width: max,
        histogram: hist,
    }
}
