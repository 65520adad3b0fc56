//! Empirical margins of the rotated factors: ranks, triweight kernel density,
//! leave-one-out entropy and quantile mapping.

use serde::{Deserialize, Serialize};

use crate::numeric::sample_sd;
use crate::Matrix;

/// Floor applied to density values before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginModel {
    pub sample: Vec<f64>,
    pub bandwidth: f64,
    pub sorted_sample: Vec<f64>,
}

impl MarginModel {
    pub fn new(sample: Vec<f64>) -> Self {
        let bandwidth = default_bandwidth(&sample);
        let mut sorted_sample = sample.clone();
        sorted_sample.sort_by(f64::total_cmp);
        MarginModel { sample, bandwidth, sorted_sample }
    }

    pub fn ecdf(&self, x: f64) -> f64 {
        ecdf_sorted(&self.sorted_sample, x)
    }

    pub fn quantile(&self, u: f64) -> f64 {
        empirical_quantile(&self.sorted_sample, u)
    }

    pub fn density(&self, x: f64) -> f64 {
        kde(&self.sample, self.bandwidth, x)
    }

    pub fn entropy(&self) -> f64 {
        loo_entropy(&self.sample, self.bandwidth)
    }
}

/// `σ̂ T^(-1/4)` with the `1/(T-1)` standard deviation.
pub fn default_bandwidth(sample: &[f64]) -> f64 {
    sample_sd(sample) * (sample.len() as f64).powf(-0.25)
}

/// Triweight kernel `(35/32)(1-u²)³` on `[-1, 1]`.
pub fn triweight(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let s = 1.0 - u * u;
        35.0 / 32.0 * s * s * s
    }
}

/// `#{sample ≤ x} / (T + 1)`.
pub fn ecdf(sample: &[f64], x: f64) -> f64 {
    sample.iter().filter(|&&s| s <= x).count() as f64 / (sample.len() + 1) as f64
}

/// [`ecdf`] on an ascending sample.
pub fn ecdf_sorted(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&s| s <= x) as f64 / (sorted.len() + 1) as f64
}

/// Column-wise `rank / (T + 1)`, ties given the maximum rank.
pub fn pseudo_observations(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        let col: Vec<f64> = m.column(j).iter().copied().collect();
        for (i, u) in ranks_max(&col).into_iter().enumerate() {
            out[(i, j)] = u;
        }
    }
    out
}

/// `rank / (T + 1)` for one series, ties given the maximum rank.
pub fn ranks_max(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; n];
    let denom = (n + 1) as f64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..j] {
            out[k] = j as f64 / denom;
        }
        i = j;
    }
    out
}

/// Kernel density estimate at `x`.
pub fn kde(sample: &[f64], bandwidth: f64, x: f64) -> f64 {
    let s: f64 = sample.iter().map(|&v| triweight((v - x) / bandwidth)).sum();
    s / (sample.len() as f64 * bandwidth)
}

/// Mean log leave-one-out density at the sample points, each density floored
/// at [`DENSITY_FLOOR`].
pub fn loo_entropy(sample: &[f64], bandwidth: f64) -> f64 {
    let n = sample.len();
    assert!(n >= 2, "loo_entropy needs at least two points");
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let norm = 1.0 / ((n - 1) as f64 * bandwidth);
    let mut total = 0.0;
    for i in 0..n {
        let xi = sorted[i];
        let mut acc = 0.0;
        for &xj in sorted[..i].iter().rev() {
            let u = (xi - xj) / bandwidth;
            if u >= 1.0 {
                break;
            }
            acc += triweight(u);
        }
        for &xj in &sorted[i + 1..] {
            let u = (xj - xi) / bandwidth;
            if u >= 1.0 {
                break;
            }
            acc += triweight(u);
        }
        total += (acc * norm).max(DENSITY_FLOOR).ln();
    }
    total / n as f64
}

/// Inverse of the `rank/(T+1)` step ECDF with linear interpolation between
/// consecutive order statistics, clamped outside `[1/(T+1), T/(T+1)]`.
pub fn empirical_quantile(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    assert!(n >= 1);
    let pos = u * (n + 1) as f64;
    let near = pos.round();
    let pos = if (pos - near).abs() < 1e-9 { near } else { pos };
    if pos <= 1.0 {
        return sorted[0];
    }
    if pos >= n as f64 {
        return sorted[n - 1];
    }
    let lo = pos.floor();
    let frac = pos - lo;
    let i = lo as usize - 1;
    if frac == 0.0 {
        sorted[i]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}
