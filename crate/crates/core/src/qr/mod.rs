//! Deterministic solvers for check-loss (quantile) regression, ordinary
//! least squares, and two-stage least squares on dense designs.

mod checkloss;
mod ols;
mod tsls;

pub use checkloss::{fit_check_loss, fit_check_loss_with, FitOptions, QuantileFit};
pub use ols::fit_ols;
pub use tsls::{fit_tsls, fit_tsls_multi, TslsFit, TslsOptions};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative pivot threshold below which a column-pivoted factorization
/// declares rank deficiency.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Tolerance under which a residual counts as a tie (zero residual):
/// `|r| <= 1e-8 * (1 + |y_i|)`.
pub const TIE_TOLERANCE: f64 = 1e-8;

/// A validated dense design matrix, one row per observation.
///
/// When produced by the basis module, column 0 is the intercept column of
/// ones. Construction checks: `n >= p >= 1`, all entries finite, and no
/// identically-zero column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (n, p) = (matrix.nrows(), matrix.ncols());
        if p < 1 || n < p {
            return Err(Error::InvalidArgument(format!(
                "design must satisfy n >= p >= 1, got n = {n}, p = {p}"
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "design matrix" });
        }
        for j in 0..p {
            if matrix.column(j).iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "design column {j} is identically zero"
                )));
            }
        }
        Ok(DesignMatrix { matrix })
    }

    /// Intercept-prefixed design `[1 | x]` from a raw data matrix.
    pub fn with_intercept(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        let mut m = DMatrix::zeros(n, x.ncols() + 1);
        m.column_mut(0).fill(1.0);
        m.view_mut((0, 1), (n, x.ncols())).copy_from(x);
        Self::new(m)
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Numerical rank from a column-pivoted QR with relative pivot
    /// threshold [`RANK_TOLERANCE`].
    pub fn rank(&self) -> usize {
        numerical_rank(&self.matrix, RANK_TOLERANCE)
    }

    pub fn check_full_rank(&self) -> Result<()> {
        if self.rank() < self.cols() {
            return Err(Error::RankDeficient { threshold: RANK_TOLERANCE });
        }
        Ok(())
    }
}

/// Rank of `m` by inspecting the R diagonal of a column-pivoted QR.
pub(crate) fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let qr = m.clone().col_piv_qr();
    let r = qr.r();
    let k = r.nrows().min(r.ncols());
    let lead = r[(0, 0)].abs();
    if lead == 0.0 {
        return 0;
    }
    (0..k).take_while(|&i| r[(i, i)].abs() > rel_tol * lead).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_column() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert!(matches!(DesignMatrix::new(m), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rejects_non_finite() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(matches!(
            DesignMatrix::new(m),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn rank_detects_collinearity() {
        let m = DMatrix::from_row_slice(4, 3, &[
            1.0, 2.0, 4.0, //
            1.0, 3.0, 6.0, //
            1.0, 4.0, 8.0, //
            1.0, 5.0, 10.0,
        ]);
        let d = DesignMatrix::new(m).unwrap();
        assert_eq!(d.rank(), 2);
        assert!(d.check_full_rank().is_err());
    }
}
