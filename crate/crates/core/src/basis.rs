//! Basis construction: expand a raw exposure vector into the feature vector
//! used by the series quantile regression. The first basis function is
//! always the constant 1.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qr::DesignMatrix;

/// Declarative basis recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisKind {
    /// `[1, x_1, ..., x_d]`
    IdentityLinear,
    /// All monomials of total degree <= `degree` (graded lexicographic
    /// order); for d = 1 this is `[1, x, x^2, ...]`.
    Polynomial { degree: usize },
    /// Tensor products of per-dimension B-splines of the given degree with
    /// `knots_per_dim` interior knots placed at empirical quantiles,
    /// prefixed by an intercept. The spline block is a partition of unity.
    TensorSpline { degree: usize, knots_per_dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    #[serde(flatten)]
    pub kind: BasisKind,
    pub input_dim: usize,
}

impl BasisSpec {
    pub fn identity_linear(input_dim: usize) -> Self {
        BasisSpec { kind: BasisKind::IdentityLinear, input_dim }
    }

    pub fn polynomial(degree: usize, input_dim: usize) -> Self {
        BasisSpec { kind: BasisKind::Polynomial { degree }, input_dim }
    }

    pub fn tensor_spline(degree: usize, knots_per_dim: usize, input_dim: usize) -> Self {
        BasisSpec {
            kind: BasisKind::TensorSpline { degree, knots_per_dim },
            input_dim,
        }
    }

    /// Conventional default knot count for a sample of size n:
    /// `max(2, floor(n^{1/5}))`.
    pub fn default_knots_per_dim(n: usize) -> usize {
        ((n as f64).powf(0.2).floor() as usize).max(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("basis input_dim must be >= 1".into()));
        }
        match self.kind {
            BasisKind::IdentityLinear => Ok(()),
            BasisKind::Polynomial { degree } => {
                if degree < 1 {
                    Err(Error::InvalidArgument("polynomial degree must be >= 1".into()))
                } else {
                    Ok(())
                }
            }
            BasisKind::TensorSpline { degree, knots_per_dim } => {
                if degree < 1 {
                    Err(Error::InvalidArgument("spline degree must be >= 1".into()))
                } else if knots_per_dim < 1 {
                    Err(Error::InvalidArgument("knots_per_dim must be >= 1".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Basis dimension p, including the intercept.
    pub fn output_dim(&self) -> usize {
        let d = self.input_dim;
        match self.kind {
            BasisKind::IdentityLinear => d + 1,
            BasisKind::Polynomial { degree } => n_monomials(d, degree),
            BasisKind::TensorSpline { degree, knots_per_dim } => {
                1 + (knots_per_dim + degree + 1).pow(d as u32)
            }
        }
    }

    /// Place data-dependent pieces (spline knots) and return an evaluator.
    /// `x` is only inspected for the spline kind.
    pub fn place(&self, x: &DMatrix<f64>) -> Result<Basis> {
        self.validate()?;
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "basis input columns",
                expected: self.input_dim,
                got: x.ncols(),
            });
        }
        let knots = match self.kind {
            BasisKind::TensorSpline { degree, knots_per_dim } => {
                let mut per_dim = Vec::with_capacity(self.input_dim);
                for j in 0..self.input_dim {
                    let col: Vec<f64> = x.column(j).iter().copied().collect();
                    per_dim.push(knot_vector(&col, degree, knots_per_dim)?);
                }
                Some(per_dim)
            }
            _ => None,
        };
        Ok(Basis { spec: self.clone(), knots })
    }
}

/// A basis with any data-dependent pieces already placed.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    spec: BasisSpec,
    /// Full (clamped) knot vector per dimension, spline kind only.
    knots: Option<Vec<Vec<f64>>>,
}

/// Result of evaluating the basis at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisValue {
    pub values: Vec<f64>,
    /// Set when a spline evaluation was clamped to the knot span instead of
    /// extrapolating.
    pub clamped: bool,
}

/// An expanded design with the count of clamped evaluations.
#[derive(Debug, Clone)]
pub struct ExpandedDesign {
    pub design: DesignMatrix,
    pub clamped: usize,
}

impl Basis {
    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Evaluate the basis vector at `x`; `values[0] == 1` always.
    pub fn evaluate(&self, x: &[f64]) -> Result<BasisValue> {
        let d = self.spec.input_dim;
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                context: "basis evaluation point",
                expected: d,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "basis evaluation point" });
        }
        match self.spec.kind {
            BasisKind::IdentityLinear => {
                let mut values = Vec::with_capacity(d + 1);
                values.push(1.0);
                values.extend_from_slice(x);
                Ok(BasisValue { values, clamped: false })
            }
            BasisKind::Polynomial { degree } => {
                Ok(BasisValue { values: monomials(x, degree), clamped: false })
            }
            BasisKind::TensorSpline { degree, .. } => {
                let knots = self.knots.as_ref().expect("spline basis placed");
                let mut clamped = false;
                let mut per_dim: Vec<Vec<f64>> = Vec::with_capacity(d);
                for j in 0..d {
                    let (vals, cl) = bspline_row(&knots[j], degree, x[j]);
                    clamped |= cl;
                    per_dim.push(vals);
                }
                let mut values = Vec::with_capacity(self.output_dim());
                values.push(1.0);
                tensor_product(&per_dim, &mut values);
                Ok(BasisValue { values, clamped })
            }
        }
    }

    /// Expand a raw data matrix row-wise into a design matrix.
    pub fn expand(&self, x: &DMatrix<f64>) -> Result<ExpandedDesign> {
        let n = x.nrows();
        if x.ncols() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "basis expansion columns",
                expected: self.spec.input_dim,
                got: x.ncols(),
            });
        }
        let p = self.output_dim();
        let mut out = DMatrix::zeros(n, p);
        let mut clamped = 0usize;
        let mut row_buf = vec![0.0; self.spec.input_dim];
        for i in 0..n {
            for j in 0..self.spec.input_dim {
                row_buf[j] = x[(i, j)];
            }
            let v = self.evaluate(&row_buf)?;
            if v.clamped {
                clamped += 1;
            }
            for j in 0..p {
                out[(i, j)] = v.values[j];
            }
        }
        Ok(ExpandedDesign { design: DesignMatrix::new(out)?, clamped })
    }
}

fn n_monomials(d: usize, degree: usize) -> usize {
    // C(d + degree, d)
    let mut num = 1usize;
    for k in 1..=d {
        num = num * (degree + k) / k;
    }
    num
}

/// Monomials of total degree <= `degree`, graded lexicographic, constant
/// first.
fn monomials(x: &[f64], degree: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_monomials(x.len(), degree));
    for total in 0..=degree {
        emit_monomials(x, 0, total, 1.0, &mut out);
    }
    out
}

fn emit_monomials(x: &[f64], dim: usize, remaining: usize, acc: f64, out: &mut Vec<f64>) {
    if dim == x.len() - 1 {
        out.push(acc * x[dim].powi(remaining as i32));
        return;
    }
    for e in (0..=remaining).rev() {
        emit_monomials(x, dim + 1, remaining - e, acc * x[dim].powi(e as i32), out);
    }
}

/// Clamped knot vector: boundary knots at the data min/max with full
/// multiplicity, interior knots at empirical quantiles j/(m+1).
fn knot_vector(col: &[f64], degree: usize, interior: usize) -> Result<Vec<f64>> {
    let mut sorted = col.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    if !(hi > lo) {
        return Err(Error::InvalidArgument(
            "spline column has zero range; cannot place knots".into(),
        ));
    }
    let mut knots = Vec::with_capacity(interior + 2 * (degree + 1));
    knots.extend(std::iter::repeat(lo).take(degree + 1));
    for j in 1..=interior {
        let q = empirical_quantile(&sorted, j as f64 / (interior + 1) as f64);
        knots.push(q.clamp(lo, hi));
    }
    knots.extend(std::iter::repeat(hi).take(degree + 1));
    // Enforce a non-decreasing sequence; duplicate interior knots are
    // handled by the zero-width-span guards in the recurrence.
    for i in 1..knots.len() {
        if knots[i] < knots[i - 1] {
            knots[i] = knots[i - 1];
        }
    }
    Ok(knots)
}

/// Type-7 empirical quantile (linear interpolation) of pre-sorted data.
pub(crate) fn empirical_quantile(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = prob.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// All B-spline basis values at `x` by Cox-de Boor; returns the basis row
/// and whether `x` was clamped into the knot span.
fn bspline_row(knots: &[f64], degree: usize, x: f64) -> (Vec<f64>, bool) {
    let n_basis = knots.len() - degree - 1;
    let lo = knots[degree];
    let hi = knots[knots.len() - degree - 1];
    let mut clamped = false;
    let mut t = x;
    if t < lo {
        t = lo;
        clamped = true;
    }
    if t > hi {
        t = hi;
        clamped = true;
    }

    // Zero-degree indicators on half-open spans, closing the last span.
    let mut prev: Vec<f64> = (0..knots.len() - 1)
        .map(|i| {
            let last = knots[i] < hi && knots[i + 1] >= hi;
            let inside = (t >= knots[i] && t < knots[i + 1]) || (t >= hi && last);
            if inside {
                1.0
            } else {
                0.0
            }
        })
        .collect();

    for k in 1..=degree {
        let m = prev.len() - 1;
        let mut next = vec![0.0; m];
        for i in 0..m {
            let mut v = 0.0;
            let den1 = knots[i + k] - knots[i];
            if den1 > 0.0 {
                v += (t - knots[i]) / den1 * prev[i];
            }
            let den2 = knots[i + k + 1] - knots[i + 1];
            if den2 > 0.0 {
                v += (knots[i + k + 1] - t) / den2 * prev[i + 1];
            }
            next[i] = v;
        }
        prev = next;
    }
    prev.truncate(n_basis);
    (prev, clamped)
}

/// Append the tensor product of per-dimension rows to `out`.
fn tensor_product(per_dim: &[Vec<f64>], out: &mut Vec<f64>) {
    fn rec(per_dim: &[Vec<f64>], dim: usize, acc: f64, out: &mut Vec<f64>) {
        if dim == per_dim.len() {
            out.push(acc);
            return;
        }
        for &v in &per_dim[dim] {
            rec(per_dim, dim + 1, acc * v, out);
        }
    }
    rec(per_dim, 0, 1.0, out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_linear_matches_definition() {
        let spec = BasisSpec::identity_linear(2);
        let b = spec.place(&DMatrix::zeros(1, 2)).unwrap();
        let v = b.evaluate(&[3.0, -1.0]).unwrap();
        assert_eq!(v.values, vec![1.0, 3.0, -1.0]);
    }

    #[test]
    fn univariate_polynomial_is_the_monomial_ladder() {
        let spec = BasisSpec::polynomial(2, 1);
        let b = spec.place(&DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(b.evaluate(&[2.0]).unwrap().values, vec![1.0, 2.0, 4.0]);
        assert_eq!(b.evaluate(&[0.0]).unwrap().values, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn polynomial_dimension_counts() {
        assert_eq!(BasisSpec::polynomial(2, 1).output_dim(), 3);
        assert_eq!(BasisSpec::polynomial(2, 2).output_dim(), 6);
        assert_eq!(BasisSpec::polynomial(3, 2).output_dim(), 10);
    }

    #[test]
    fn identity_round_trip_recovers_input() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let b = BasisSpec::identity_linear(1).place(&x).unwrap();
        let e = b.expand(&x).unwrap();
        let m = e.design.as_matrix();
        assert_eq!(m.nrows(), 3);
        for i in 0..3 {
            assert_eq!(m[(i, 0)], 1.0);
            assert_eq!(m[(i, 1)], x[(i, 0)]);
        }
    }

    #[test]
    fn spline_block_is_a_partition_of_unity() {
        let n = 200;
        let col: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7919).fract()).collect();
        let x = DMatrix::from_column_slice(n, 1, &col);
        let spec = BasisSpec::tensor_spline(3, 5, 1);
        let b = spec.place(&x).unwrap();
        for k in 0..50 {
            let t = 0.01 + 0.98 * (k as f64 * 0.619).fract();
            let v = b.evaluate(&[t]).unwrap();
            assert_eq!(v.values[0], 1.0);
            let s: f64 = v.values[1..].iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-10);
        }
        let e = b.expand(&x).unwrap();
        for i in 0..n {
            let s: f64 = e.design.as_matrix().row(i).iter().sum();
            assert_abs_diff_eq!(s, 2.0, epsilon = 1e-10);
        }
        assert_eq!(e.clamped, 0);
    }

    #[test]
    fn spline_clamps_outside_the_span() {
        let col: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let x = DMatrix::from_column_slice(50, 1, &col);
        let b = BasisSpec::tensor_spline(3, 4, 1).place(&x).unwrap();
        let inside = b.evaluate(&[1.0]).unwrap();
        assert!(!inside.clamped);
        let out = b.evaluate(&[1.5]).unwrap();
        assert!(out.clamped);
        assert_eq!(out.values, inside.values);
    }
}
