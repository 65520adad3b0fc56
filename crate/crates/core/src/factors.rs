//! Principal-component estimation of the approximate factor model.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::dataio::{rowmajor, PanelData};
use crate::error::{Result, SvfError};
use crate::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDecomposition {
    /// `T × K`, normalized so that `F'F / T = I`.
    #[serde(with = "rowmajor")]
    pub factors: Matrix,
    /// `N × K`, `X'F / T`.
    #[serde(with = "rowmajor")]
    pub loadings: Matrix,
    /// Leading eigenvalues of `XX' / (TN)`, descending.
    pub eigenvalues: Vec<f64>,
    /// `T × N`, `X - F Λ'`.
    #[serde(with = "rowmajor")]
    pub residuals: Matrix,
    pub k: usize,
}

/// Estimate `k` factors from the panel.
pub fn pca_factors(data: &PanelData, k: usize) -> Result<FactorDecomposition> {
    pca_matrix(&data.values, k)
}

pub fn pca_matrix(x: &Matrix, k: usize) -> Result<FactorDecomposition> {
    let (t, n) = x.shape();
    if k == 0 || k > t.min(n) {
        return Err(SvfError::InvalidArgument(format!("k exceeds min(T,N): k={k}, T={t}, N={n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SvfError::Numerical("non-finite input to eigensolver".into()));
    }
    let (vectors, values) = leading_eigenvectors(x, k)?;
    let sqrt_t = (t as f64).sqrt();
    let factors = vectors * sqrt_t;
    let loadings = x.transpose() * &factors / t as f64;
    let residuals = x - &factors * loadings.transpose();
    Ok(FactorDecomposition { factors, loadings, eigenvalues: values, residuals, k })
}

/// Unit-norm eigenvectors of `XX'/(TN)` for the `k` largest eigenvalues,
/// sign-fixed and ordered.
fn leading_eigenvectors(x: &Matrix, k: usize) -> Result<(Matrix, Vec<f64>)> {
    let (t, n) = x.shape();
    let scale = 1.0 / (t as f64 * n as f64);
    let mut pairs: Vec<(f64, Vec<f64>)> = if t <= n {
        let gram = x * x.transpose() * scale;
        let eig = SymmetricEigen::new(gram);
        (0..t).map(|j| (eig.eigenvalues[j], eig.eigenvectors.column(j).iter().copied().collect())).collect()
    } else {
        let cov = x.transpose() * x * scale;
        let eig = SymmetricEigen::new(cov);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        idx.truncate(k);
        idx.into_iter()
            .map(|j| {
                let lambda = eig.eigenvalues[j];
                let u = x * eig.eigenvectors.column(j);
                let norm = u.norm();
                let u: Vec<f64> = if norm > 0.0 { u.iter().map(|v| v / norm).collect() } else { u.iter().copied().collect() };
                (lambda, u)
            })
            .collect()
    };
    for (_, v) in pairs.iter_mut() {
        sign_fix(v);
    }
    pairs.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= 1e-12 {
            lexicographic(&b.1, &a.1)
        } else {
            b.0.total_cmp(&a.0)
        }
    });
    pairs.truncate(k);
    if pairs.iter().any(|(l, v)| !l.is_finite() || v.iter().any(|x| !x.is_finite())) {
        return Err(SvfError::Numerical("eigensolver produced non-finite values".into()));
    }
    let values = pairs.iter().map(|p| p.0).collect();
    let vectors = Matrix::from_fn(t, k, |i, j| pairs[j].1[i]);
    Ok((vectors, values))
}

fn sign_fix(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let thresh = 1e-12 * norm.max(f64::MIN_POSITIVE);
    if let Some(first) = v.iter().copied().find(|x| x.abs() > thresh) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Information criterion value for each `k` in `1..=k_max`.
pub fn ic_values(x: &Matrix, k_max: usize) -> Result<Vec<f64>> {
    let (t, n) = x.shape();
    if k_max == 0 || k_max > t.min(n) {
        return Err(SvfError::InvalidArgument(format!("k_max must lie in 1..=min(T,N), got {k_max}")));
    }
    let dec = pca_matrix(x, k_max)?;
    let (tf, nf) = (t as f64, n as f64);
    let penalty = (tf + nf) / (tf * nf) * tf.min(nf).ln();
    let mut resid = x.clone();
    let mut out = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let f = dec.factors.column(k);
        let l = dec.loadings.column(k);
        resid -= f * l.transpose();
        let ssr = resid.norm_squared().max(1e-300);
        out.push(ssr.ln() + (k + 1) as f64 * penalty);
    }
    Ok(out)
}

/// Number of factors minimizing the information criterion.
pub fn select_k(data: &PanelData, k_max: usize) -> Result<usize> {
    let ic = ic_values(&data.values, k_max)?;
    let mut best = 0;
    for (i, v) in ic.iter().enumerate() {
        if *v < ic[best] {
            best = i;
        }
    }
    Ok(best + 1)
}
