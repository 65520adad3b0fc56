//! Spherical-angle parameterization of the oblique rotation matrix `H`.
//!
//! Column `i` of `H` is the unit vector
//! `(sin θ_i1, cos θ_i1 sin θ_i2, …, cos θ_i1 ⋯ cos θ_i,K-1)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dataio::rowmajor;
use crate::error::{Result, SvfError};
use crate::Matrix;

pub const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationAngles {
    pub k: usize,
    /// `K × (K-1)`; row `i` holds the angles of column `i` of `H`.
    #[serde(with = "rowmajor")]
    pub angles: Matrix,
}

impl RotationAngles {
    /// Angles from a row-major vector of length `K(K-1)`, without reduction.
    pub fn from_raw(k: usize, raw: &[f64]) -> Result<Self> {
        let m = k.saturating_sub(1);
        if raw.len() != k * m {
            return Err(SvfError::DimensionMismatch { expected: k * m, got: raw.len() });
        }
        Ok(RotationAngles { k, angles: Matrix::from_row_slice(k, m, raw) })
    }

    /// Angles for which `H` is the identity.
    pub fn identity(k: usize) -> Self {
        let m = k.saturating_sub(1);
        let mut angles = Matrix::zeros(k, m);
        for i in 0..k.min(m) {
            angles[(i, i)] = PI / 2.0;
        }
        RotationAngles { k, angles }
    }

    /// Row-major flattening.
    pub fn to_raw(&self) -> Vec<f64> {
        (0..self.k).flat_map(|i| self.angles.row(i).iter().copied().collect::<Vec<_>>()).collect()
    }

    /// Reduce into `θ_i1 ∈ [0, π]`, `θ_ij ∈ [0, 2π)`. Returns the reduced
    /// angles and the column signs `s` with `H(raw) = H(reduced) · diag(s)`.
    pub fn canonicalize(&self) -> (RotationAngles, Vec<f64>) {
        let mut out = self.clone();
        let mut signs = vec![1.0; self.k];
        for i in 0..self.k {
            for j in 0..self.angles.ncols() {
                let mut a = self.angles[(i, j)].rem_euclid(2.0 * PI);
                if j == 0 && a > PI {
                    a -= PI;
                    signs[i] = -1.0;
                }
                if a >= 2.0 * PI {
                    a = 0.0;
                }
                out.angles[(i, j)] = a;
            }
        }
        (out, signs)
    }

    pub fn is_canonical(&self) -> bool {
        (0..self.k).all(|i| {
            (0..self.angles.ncols()).all(|j| {
                let a = self.angles[(i, j)];
                if j == 0 {
                    (0.0..=PI).contains(&a)
                } else {
                    (0.0..2.0 * PI).contains(&a)
                }
            })
        })
    }
}

/// The `K × K` matrix `H(θ)`.
pub fn build_h(angles: &RotationAngles) -> Matrix {
    let k = angles.k;
    let mut h = Matrix::zeros(k, k);
    for i in 0..k {
        let mut prod = 1.0;
        for r in 0..k {
            if r + 1 < k {
                let a = angles.angles[(i, r)];
                h[(r, i)] = prod * a.sin();
                prod *= a.cos();
            } else {
                h[(r, i)] = prod;
            }
        }
    }
    h
}

/// `log |det H|`, or an error when `|det H| < 1e-12`.
pub fn log_det_h(angles: &RotationAngles) -> Result<f64> {
    let det = build_h(angles).determinant();
    if det.abs() < SINGULAR_TOL {
        return Err(SvfError::Singular(det.abs()));
    }
    Ok(det.abs().ln())
}

/// `F H`.
pub fn apply_rotation(factors: &Matrix, angles: &RotationAngles) -> Result<Matrix> {
    let h = build_h(angles);
    let det = h.determinant();
    if det.abs() < SINGULAR_TOL {
        return Err(SvfError::Singular(det.abs()));
    }
    Ok(factors * h)
}

/// Companion loadings `Λ (H⁻¹)'`, so that `(F H)(Λ (H⁻¹)')' = F Λ'`.
pub fn rotate_loadings(loadings: &Matrix, angles: &RotationAngles) -> Result<Matrix> {
    let h = build_h(angles);
    let inv = h.clone().try_inverse().ok_or(SvfError::Singular(h.determinant().abs()))?;
    if h.determinant().abs() < SINGULAR_TOL {
        return Err(SvfError::Singular(h.determinant().abs()));
    }
    Ok(loadings * inv.transpose())
}

/// All `2^K` sign vectors, starting with all `+1`.
pub fn enumerate_sign_flips(k: usize) -> Vec<Vec<f64>> {
    (0..1usize << k)
        .map(|mask| (0..k).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect())
        .collect()
}

/// Multiply column `j` of `m` by `signs[j]`.
pub fn apply_signs(m: &Matrix, signs: &[f64]) -> Matrix {
    let mut out = m.clone();
    for (j, s) in signs.iter().enumerate() {
        if *s < 0.0 {
            out.column_mut(j).neg_mut();
        }
    }
    out
}
