//! Ordinary least squares on a validated design.

use nalgebra::{DMatrix, DVector};

use super::DesignMatrix;
use crate::error::{Error, Result};

/// Least-squares coefficients of `y` on the design, via thin QR.
pub fn fit_ols(design: &DesignMatrix, y: &[f64]) -> Result<DVector<f64>> {
    let n = design.rows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "ols outcome",
            expected: n,
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "ols outcome" });
    }
    design.check_full_rank()?;
    let yv = DVector::from_column_slice(y);
    solve_ls(design.as_matrix(), &yv)
}

pub(crate) fn solve_ls(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r()
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { threshold: super::RANK_TOLERANCE })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn intercept_only_is_the_mean() {
        let d = DesignMatrix::new(DMatrix::from_element(3, 1, 1.0)).unwrap();
        let beta = fit_ols(&d, &[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(beta[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_linear_fit_has_zero_residuals() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let d = DesignMatrix::new(x.clone()).unwrap();
        let y: Vec<f64> = (0..4).map(|i| 2.0 - 0.5 * i as f64).collect();
        let beta = fit_ols(&d, &y).unwrap();
        let resid = DVector::from_column_slice(&y) - &x * &beta;
        assert!(resid.amax() < 1e-12);
    }

    #[test]
    fn residuals_are_orthogonal_to_design() {
        let x = DMatrix::from_row_slice(6, 2, &[
            1.0, 0.4, 1.0, -1.0, 1.0, 2.2, 1.0, 0.1, 1.0, -0.7, 1.0, 1.5,
        ]);
        let d = DesignMatrix::new(x.clone()).unwrap();
        let y = [0.2, -1.1, 3.0, 0.5, -0.4, 2.2];
        let beta = fit_ols(&d, &y).unwrap();
        let resid = DVector::from_column_slice(&y) - &x * &beta;
        let g = x.transpose() * resid;
        let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(g.amax() <= 1e-8 * 6.0 * (1.0 + scale));
    }
}
