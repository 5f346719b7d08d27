//! Observational dataset container.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A rectangular dataset: outcome `y`, exposure matrix `x` (n rows, d
/// columns), optional candidate-IV matrix `z`, optional cluster ids.
///
/// Invariants (enforced by [`Dataset::new`]): all lengths agree, every value
/// is finite, and `n >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub z: Option<DMatrix<f64>>,
    pub cluster_id: Option<Vec<i64>>,
    pub y_name: String,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, z: Option<DMatrix<f64>>) -> Result<Self> {
        let d = x.ncols();
        let dz = z.as_ref().map_or(0, |m| m.ncols());
        let ds = Dataset {
            y,
            x,
            z,
            cluster_id: None,
            y_name: "y".to_string(),
            x_names: (0..d).map(|j| format!("x{}", j + 1)).collect(),
            z_names: (0..dz).map(|j| format!("z{}", j + 1)).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Convenience constructor for the common scalar-exposure case.
    pub fn from_columns(y: Vec<f64>, x_col: Vec<f64>) -> Result<Self> {
        let n = x_col.len();
        Self::new(y, DMatrix::from_vec(n, 1, x_col), None)
    }

    pub fn with_cluster_ids(mut self, ids: Vec<i64>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "cluster ids",
                expected: self.n(),
                got: ids.len(),
            });
        }
        self.cluster_id = Some(ids);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::InvalidArgument("dataset is empty".to_string()));
        }
        if self.x.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "exposure rows",
                expected: n,
                got: self.x.nrows(),
            });
        }
        if let Some(z) = &self.z {
            if z.nrows() != n {
                return Err(Error::DimensionMismatch {
                    context: "instrument rows",
                    expected: n,
                    got: z.nrows(),
                });
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { context: "instrument matrix" });
            }
        }
        if let Some(ids) = &self.cluster_id {
            if ids.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "cluster ids",
                    expected: n,
                    got: ids.len(),
                });
            }
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "outcome" });
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "exposure matrix" });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Exposure dimension d.
    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn d_z(&self) -> usize {
        self.z.as_ref().map_or(0, |m| m.ncols())
    }

    /// Column means of the exposure matrix.
    pub fn x_means(&self) -> Vec<f64> {
        (0..self.d())
            .map(|j| self.x.column(j).iter().sum::<f64>() / self.n() as f64)
            .collect()
    }

    /// Rebuild the dataset from a multiset of row indices (bootstrap draw).
    pub fn resample_rows(&self, idx: &[usize]) -> Dataset {
        let m = idx.len();
        let y = idx.iter().map(|&i| self.y[i]).collect();
        let mut x = DMatrix::zeros(m, self.d());
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).copy_from(&self.x.row(i));
        }
        let z = self.z.as_ref().map(|zm| {
            let mut out = DMatrix::zeros(m, zm.ncols());
            for (r, &i) in idx.iter().enumerate() {
                out.row_mut(r).copy_from(&zm.row(i));
            }
            out
        });
        Dataset {
            y,
            x,
            z,
            cluster_id: None,
            y_name: self.y_name.clone(),
            x_names: self.x_names.clone(),
            z_names: self.z_names.clone(),
        }
    }
}
