//! Orthonormal frames spanning the distribution, and the working domain.
//!
//! The metric is never given explicitly: a [`Frame`] is declared orthonormal,
//! so `g(X_i, X_j) = delta_ij` and the energy of a trajectory is half the
//! squared L2 norm of its control.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::all_finite;
use crate::poly::PolynomialField;

/// Default threshold on the smallest singular value of the frame matrix.
pub const RANK_TOL: f64 = 1e-10;

/// `k` polynomial vector fields on `R^n`, declared orthonormal.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    n: usize,
    fields: Vec<PolynomialField>,
}

impl Frame {
    pub fn new(fields: Vec<PolynomialField>) -> Result<Self> {
        let k = fields.len();
        let n = fields
            .first()
            .map(PolynomialField::dim)
            .ok_or_else(|| Error::InvalidFrame("frame needs at least one field".into()))?;
        if k > n {
            return Err(Error::InvalidFrame(format!(
                "rank {k} exceeds dimension {n}"
            )));
        }
        if let Some(bad) = fields.iter().find(|f| f.dim() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: bad.dim(),
            });
        }
        Ok(Self { n, fields })
    }

    /// Constant coordinate fields `d/dq^1, ..., d/dq^n`.
    pub fn euclidean(n: usize) -> Self {
        let fields = (0..n)
            .map(|i| {
                let mut e = alloc::vec![0.0; n];
                e[i] = 1.0;
                PolynomialField::constant(&e).expect("non-empty")
            })
            .collect();
        Self::new(fields).expect("valid by construction")
    }

    /// `X_1 = d/dx - (y/2) d/dz`, `X_2 = d/dy + (x/2) d/dz` on `R^3`.
    pub fn heisenberg() -> Self {
        let x1 = PolynomialField::from_terms(3, &[(0, &[0, 0, 0], 1.0), (2, &[0, 1, 0], -0.5)])
            .expect("valid");
        let x2 = PolynomialField::from_terms(3, &[(1, &[0, 0, 0], 1.0), (2, &[1, 0, 0], 0.5)])
            .expect("valid");
        Self::new(alloc::vec![x1, x2]).expect("valid")
    }

    /// `X_1 = d/dx + (y^2/2) d/dz`, `X_2 = d/dy` on `R^3`.
    pub fn martinet() -> Self {
        let x1 = PolynomialField::from_terms(3, &[(0, &[0, 0, 0], 1.0), (2, &[0, 2, 0], 0.5)])
            .expect("valid");
        let x2 = PolynomialField::from_terms(3, &[(1, &[0, 0, 0], 1.0)]).expect("valid");
        Self::new(alloc::vec![x1, x2]).expect("valid")
    }

    /// State dimension `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Rank `k` of the distribution.
    pub fn k(&self) -> usize {
        self.fields.len()
    }

    pub fn fields(&self) -> &[PolynomialField] {
        &self.fields
    }

    fn check_point(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: q.len(),
            });
        }
        if !all_finite(q) {
            return Err(Error::NonFinite("state"));
        }
        Ok(())
    }

    fn field(&self, i: usize) -> Result<&PolynomialField> {
        self.fields.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: self.fields.len(),
        })
    }

    /// `X_i(q)` for the zero-based field index `i`.
    pub fn eval_field(&self, i: usize, q: &[f64]) -> Result<DVector<f64>> {
        self.check_point(q)?;
        Ok(self.field(i)?.eval(q))
    }

    /// `dX_i/dq` at `q`, entry `(a, b) = d X_i^a / d q^b`.
    pub fn eval_jacobian(&self, i: usize, q: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(q)?;
        Ok(self.field(i)?.jacobian(q))
    }

    /// The control vector field `f_u(q) = sum_i u^i X_i(q)`.
    pub fn velocity(&self, u: &[f64], q: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(self.n);
        for (ui, field) in u.iter().zip(&self.fields) {
            if *ui != 0.0 {
                v += field.eval(q) * *ui;
            }
        }
        v
    }

    /// `d f_u / dq` at `q`.
    pub fn velocity_jacobian(&self, u: &[f64], q: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (ui, field) in u.iter().zip(&self.fields) {
            if *ui != 0.0 {
                m += field.jacobian(q) * *ui;
            }
        }
        m
    }

    /// The `n x k` matrix whose columns are `X_1(q), ..., X_k(q)`.
    pub fn frame_matrix(&self, q: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.k());
        for (i, field) in self.fields.iter().enumerate() {
            m.set_column(i, &field.eval(q));
        }
        m
    }

    /// Checks linear independence on a sampled grid of `domain` and returns
    /// the smallest singular value seen.
    pub fn check_independence(&self, domain: &Domain, per_axis: usize, tol: f64) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for q in domain.grid(per_axis) {
            let sv = self.frame_matrix(&q).singular_values();
            let min = sv.iter().fold(f64::INFINITY, |a, s| a.min(*s));
            if min <= tol {
                return Err(Error::InvalidFrame(format!(
                    "fields are linearly dependent near {q:?} (smallest singular value {min:e})"
                )));
            }
            worst = worst.min(min);
        }
        Ok(worst)
    }
}

/// Axis-aligned box, open and convex.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::InvalidDomain("empty box".into()));
        }
        if !all_finite(&lower) || !all_finite(&upper) {
            return Err(Error::InvalidDomain("box must be bounded".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l >= u) {
            return Err(Error::InvalidDomain(
                "lower must be < upper componentwise".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[-r, r]^n`.
    pub fn cube(n: usize, r: f64) -> Result<Self> {
        Self::new(alloc::vec![-r; n], alloc::vec![r; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        q.len() == self.dim()
            && q.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *l < *x && *x < *u)
    }

    /// Euclidean distance from an interior point to the boundary of the box;
    /// negative outside.
    pub fn distance_to_boundary(&self, q: &[f64]) -> f64 {
        q.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (l, u))| (x - l).min(u - x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Tensor grid with `per_axis` points per axis, endpoints included.
    /// A single point per axis samples the centre.
    pub fn grid(&self, per_axis: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
        let n = self.dim();
        let total = if per_axis == 0 {
            0
        } else {
            per_axis.pow(n as u32)
        };
        (0..total).map(move |mut idx| {
            let mut q = Vec::with_capacity(n);
            for a in 0..n {
                let i = idx % per_axis;
                idx /= per_axis;
                let (l, u) = (self.lower[a], self.upper[a]);
                q.push(if per_axis == 1 {
                    0.5 * (l + u)
                } else {
                    l + (u - l) * (i as f64) / ((per_axis - 1) as f64)
                });
            }
            q
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_field_is_constant() {
        let f = Frame::euclidean(2);
        assert_eq!(
            f.eval_field(0, &[3.7, -1.2]).unwrap().as_slice(),
            &[1.0, 0.0]
        );
        assert!(f
            .eval_jacobian(1, &[0.3, 0.1])
            .unwrap()
            .iter()
            .all(|x| *x == 0.0));
    }

    #[test]
    fn heisenberg_fields() {
        let f = Frame::heisenberg();
        assert_eq!(
            f.eval_field(1, &[2.0, 0.0, 0.0]).unwrap().as_slice(),
            &[0.0, 1.0, 1.0]
        );
        assert_eq!(
            f.eval_field(0, &[0.0, 0.0, 0.0]).unwrap().as_slice(),
            &[1.0, 0.0, 0.0]
        );

        let j1 = f.eval_jacobian(0, &[0.4, -2.0, 7.0]).unwrap();
        let j2 = f.eval_jacobian(1, &[0.4, -2.0, 7.0]).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let e1 = if (a, b) == (2, 1) { -0.5 } else { 0.0 };
                let e2 = if (a, b) == (2, 0) { 0.5 } else { 0.0 };
                assert_eq!(j1[(a, b)], e1);
                assert_eq!(j2[(a, b)], e2);
            }
        }
    }

    #[test]
    fn eval_errors() {
        let f = Frame::heisenberg();
        assert!(matches!(
            f.eval_field(2, &[0.0; 3]),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
        assert!(matches!(
            f.eval_field(0, &[f64::NAN, 0.0, 0.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            f.eval_jacobian(0, &[0.0; 2]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn frame_rank_checks() {
        let long = PolynomialField::constant(&[1.0, 0.0]).unwrap();
        let fields = alloc::vec![long.clone(), long.clone(), long];
        assert!(Frame::new(fields).is_err());

        let d = Domain::cube(3, 2.0).unwrap();
        assert!(
            Frame::heisenberg()
                .check_independence(&d, 5, RANK_TOL)
                .unwrap()
                > 0.5
        );

        let x = PolynomialField::from_terms(2, &[(0, &[1, 0], 1.0)]).unwrap();
        let y = PolynomialField::constant(&[0.0, 1.0]).unwrap();
        let degenerate = Frame::new(alloc::vec![x, y]).unwrap();
        let d2 = Domain::cube(2, 1.0).unwrap();
        assert!(degenerate.check_independence(&d2, 3, RANK_TOL).is_err());
    }

    #[test]
    fn domain_basics() {
        assert!(Domain::new(alloc::vec![0.0, 1.0], alloc::vec![1.0, 1.0]).is_err());
        let d = Domain::cube(2, 1.0).unwrap();
        assert!(d.contains(&[0.5, -0.9]));
        assert!(!d.contains(&[1.0, 0.0]));
        assert_eq!(d.distance_to_boundary(&[0.5, 0.0]), 0.5);
        let pts: Vec<_> = d.grid(3).collect();
        assert_eq!(pts.len(), 9);
        assert!(pts.contains(&alloc::vec![-1.0, 1.0]));
        assert_eq!(d.grid(1).next().unwrap(), alloc::vec![0.0, 0.0]);
    }
}
