use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value tolerance for declaring a design rank deficient.
pub(crate) const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub(crate) struct LeastSquares {
    pub coef: Vec<f64>,
    pub residuals: Vec<f64>,
    /// (XᵀX)⁻¹
    pub xtx_inv: DMatrix<f64>,
    pub rss: f64,
}

/// Least squares on the column-equilibrated design: SVD rank test, QR solve.
///
/// Columns are scaled to unit norm before the rank test so the tolerance
/// measures collinearity rather than units.
pub(crate) fn lstsq(x: &DMatrix<f64>, y: &[f64], labels: &[String]) -> Result<LeastSquares> {
    let (n, k) = x.shape();
    debug_assert_eq!(y.len(), n);
    let norms: Vec<f64> = (0..k).map(|j| x.column(j).norm()).collect();
    let zero: Vec<String> = norms
        .iter()
        .enumerate()
        .filter(|(_, v)| !(**v > 0.0) || !v.is_finite())
        .map(|(j, _)| labels[j].clone())
        .collect();
    if !zero.is_empty() {
        return Err(Error::RankDeficient {
            columns: zero,
            detail: "column is identically zero or non-finite".into(),
        });
    }
    let mut scaled = x.clone();
    for (j, s) in norms.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / s);
    }
    // the SVD decides rank; its solution is not accurate to working precision
    // in nalgebra, so coefficients come from a Householder QR
    let sv = scaled.clone().svd(false, true);
    let v_t = sv.v_t.unwrap();
    let sv = sv.singular_values;
    let s_max = sv.max();
    let null: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] <= RANK_TOL * s_max).collect();
    if !null.is_empty() {
        let mut cols: Vec<usize> = Vec::new();
        for &i in &null {
            let row = v_t.row(i);
            let peak = row.amax();
            for j in 0..k {
                if row[j].abs() > 1e-3 * peak && !cols.contains(&j) {
                    cols.push(j);
                }
            }
        }
        cols.sort_unstable();
        return Err(Error::RankDeficient {
            columns: cols.into_iter().map(|j| labels[j].clone()).collect(),
            detail: format!(
                "smallest singular value {:.3e} below {RANK_TOL:e} x largest",
                sv.min() / s_max
            ),
        });
    }

    let qr = scaled.qr();
    let r = qr.r();
    let qty = qr.q().transpose() * DVector::from_column_slice(y);
    let beta_scaled = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient {
            columns: labels.to_vec(),
            detail: "triangular factor is singular".into(),
        })?;
    let coef: Vec<f64> = (0..k).map(|j| beta_scaled[j] / norms[j]).collect();

    let fitted = x * DVector::from_column_slice(&coef);
    let residuals: Vec<f64> = (0..n).map(|t| y[t] - fitted[t]).collect();
    let rss = residuals.iter().map(|e| e * e).sum();

    // (XᵀX)⁻¹ = D⁻¹ R⁻¹ R⁻ᵀ D⁻¹
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .expect("checked above");
    let mut xtx_inv = &r_inv * r_inv.transpose();
    for a in 0..k {
        for b in 0..k {
            xtx_inv[(a, b)] /= norms[a] * norms[b];
        }
    }

    Ok(LeastSquares {
        coef,
        residuals,
        xtx_inv,
        rss,
    })
}

/// Centered coefficient of determination; 0 when `y` has no variation.
pub(crate) fn r_squared(y: &[f64], rss: f64) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if tss <= 0.0 {
        return 0.0;
    }
    (1.0 - rss / tss).clamp(0.0, 1.0)
}

pub(crate) fn matrix_from_columns(columns: &[Vec<f64>]) -> DMatrix<f64> {
    let n = columns.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, columns.len(), |t, j| columns[j][t])
}
