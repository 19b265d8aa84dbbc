use serde::{Deserialize, Serialize};

/// Two-weight, one-level quantizer showing that staying inside the
/// error-based intervals does not keep the optimal representative fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDemo {
    pub x: [f64; 2],
    pub q: f64,
    pub error: f64,
    /// `[min(x_i, q), max(x_i, q)]` per weight.
    pub intervals: [[f64; 2]; 2],
    pub x_perturbed: [f64; 2],
    pub perturbed_inside: bool,
    /// Error of the original representative on the perturbed weights.
    pub error_at_q: f64,
    pub q_perturbed: f64,
    pub error_perturbed: f64,
}

const SCAN_STEPS: i64 = 20_000;

pub fn mean_l1(x: &[f64], q: f64) -> f64 {
    x.iter().map(|v| (v - q).abs()).sum::<f64>() / x.len() as f64
}

/// Brute-force L1 optimum on a 1e-4 grid over [-1, 1]. A flat optimum
/// resolves to the midpoint of the minimizing grid points.
fn scan_optimum(x: &[f64]) -> (f64, f64) {
    let qs: Vec<f64> = (0..=SCAN_STEPS)
        .map(|k| -1.0 + 2.0 * k as f64 / SCAN_STEPS as f64)
        .collect();
    let errs: Vec<f64> = qs.iter().map(|&q| mean_l1(x, q)).collect();
    let best = errs.iter().copied().fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = (0..qs.len()).filter(|&i| errs[i] <= best + 1e-12).collect();
    let q = (qs[tied[0]] + qs[*tied.last().unwrap()]) / 2.0;
    (q, mean_l1(x, q))
}

pub fn nonsoundness_toy() -> ToyDemo {
    let x = [-1.0, 1.0];
    let (q, error) = scan_optimum(&x);
    let intervals = x.map(|v| [v.min(q), v.max(q)]);
    let x_perturbed = [-0.2, 0.4];
    let perturbed_inside = x_perturbed
        .iter()
        .zip(&intervals)
        .all(|(v, [lo, hi])| lo <= v && v <= hi);
    let (q_perturbed, error_perturbed) = scan_optimum(&x_perturbed);
    ToyDemo {
        x,
        q,
        error,
        intervals,
        x_perturbed,
        perturbed_inside,
        error_at_q: mean_l1(&x_perturbed, q),
        q_perturbed,
        error_perturbed,
    }
}
