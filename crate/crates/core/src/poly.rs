//! Polynomial vector fields on `R^n` with exact first and second derivatives.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::powi;

/// One term `coeff * q1^e1 * ... * qn^en`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

impl Monomial {
    /// Value of the (optionally differentiated) monomial. `d1`/`d2` name the
    /// variables to differentiate by; both `None` is plain evaluation.
    fn value(&self, q: &[f64], d1: Option<usize>, d2: Option<usize>) -> f64 {
        let mut v = self.coeff;
        for (c, (&e, &x)) in self.exponents.iter().zip(q).enumerate() {
            let d = u32::from(d1 == Some(c)) + u32::from(d2 == Some(c));
            if d > e {
                return 0.0;
            }
            let mut falling = 1.0;
            for i in 0..d {
                falling *= f64::from(e - i);
            }
            v *= falling * powi(x, e - d);
        }
        v
    }
}

/// A vector field whose every output coordinate is a multivariate polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialField {
    dim: usize,
    components: Vec<Vec<Monomial>>,
}

impl PolynomialField {
    /// Builds a field from one term list per output coordinate.
    pub fn new(dim: usize, components: Vec<Vec<Monomial>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidFrame(
                "state dimension must be positive".into(),
            ));
        }
        if components.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: components.len(),
            });
        }
        for terms in &components {
            for m in terms {
                if m.exponents.len() != dim {
                    return Err(Error::InvalidFrame(format!(
                        "exponent tuple of length {} in a {dim}-dimensional field",
                        m.exponents.len()
                    )));
                }
                if !m.coeff.is_finite() {
                    return Err(Error::NonFinite("polynomial coefficient"));
                }
            }
        }
        Ok(Self { dim, components })
    }

    /// Convenience constructor from `(output coordinate, exponents, coefficient)` triples.
    pub fn from_terms(dim: usize, terms: &[(usize, &[u32], f64)]) -> Result<Self> {
        let mut components = alloc::vec![Vec::new(); dim];
        for &(a, exps, coeff) in terms {
            if a >= dim {
                return Err(Error::IndexOutOfRange { index: a, len: dim });
            }
            components[a].push(Monomial {
                exponents: exps.to_vec(),
                coeff,
            });
        }
        Self::new(dim, components)
    }

    /// The constant field `v`.
    pub fn constant(v: &[f64]) -> Result<Self> {
        let dim = v.len();
        let components = v
            .iter()
            .map(|&c| {
                if c == 0.0 {
                    Vec::new()
                } else {
                    alloc::vec![Monomial {
                        exponents: alloc::vec![0; dim],
                        coeff: c,
                    }]
                }
            })
            .collect();
        Self::new(dim, components)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Vec<Monomial>] {
        &self.components
    }

    /// Highest total degree over all terms.
    pub fn degree(&self) -> u32 {
        self.components
            .iter()
            .flatten()
            .map(|m| m.exponents.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, q: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.dim,
            self.components
                .iter()
                .map(|terms| terms.iter().map(|m| m.value(q, None, None)).sum()),
        )
    }

    /// Jacobian with entry `(a, b) = d X^a / d q^b`.
    pub fn jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |a, b| {
            self.components[a]
                .iter()
                .map(|m| m.value(q, Some(b), None))
                .sum()
        })
    }

    /// Hessian of output coordinate `a`: entry `(b, c) = d^2 X^a / d q^b d q^c`.
    pub fn hessian(&self, a: usize, q: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |b, c| {
            self.components[a]
                .iter()
                .map(|m| m.value(q, Some(b), Some(c)))
                .sum()
        })
    }

    /// Jacobian of the column `d X / d q^a`, i.e. entry `(c, b) = d^2 X^c / d q^a d q^b`.
    pub fn column_jacobian(&self, a: usize, q: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |c, b| {
            self.components[c]
                .iter()
                .map(|m| m.value(q, Some(a), Some(b)))
                .sum()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic() -> PolynomialField {
        // X = (x^2 y - 3 z, y^3 + x z, 2 x y z + 1)
        PolynomialField::from_terms(
            3,
            &[
                (0, &[2, 1, 0], 1.0),
                (0, &[0, 0, 1], -3.0),
                (1, &[0, 3, 0], 1.0),
                (1, &[1, 0, 1], 1.0),
                (2, &[1, 1, 1], 2.0),
                (2, &[0, 0, 0], 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn evaluates_exactly() {
        let f = cubic();
        let v = f.eval(&[2.0, -1.0, 0.5]);
        assert_eq!(v.as_slice(), &[-4.0 - 1.5, -1.0 + 1.0, -2.0 + 1.0]);
        assert_eq!(f.degree(), 3);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let f = cubic();
        let q = [0.7, -1.3, 0.4];
        let h = 1e-5;
        let jac = f.jacobian(&q);
        for b in 0..3 {
            let mut qp = q;
            let mut qm = q;
            qp[b] += h;
            qm[b] -= h;
            let fd = (f.eval(&qp) - f.eval(&qm)) / (2.0 * h);
            let jp = f.jacobian(&qp);
            let jm = f.jacobian(&qm);
            for a in 0..3 {
                let exact = jac[(a, b)];
                assert!((fd[a] - exact).abs() <= 1e-6 * exact.abs().max(1.0));
                for c in 0..3 {
                    let second = (jp[(a, c)] - jm[(a, c)]) / (2.0 * h);
                    let exact2 = f.hessian(a, &q)[(c, b)];
                    assert!((second - exact2).abs() <= 1e-6 * exact2.abs().max(1.0));
                    assert_eq!(f.column_jacobian(c, &q)[(a, b)], exact2);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_exponent_length() {
        let err = PolynomialField::from_terms(2, &[(0, &[1, 0, 0], 1.0)]).unwrap_err();
        assert!(matches!(err, Error::InvalidFrame(_)));
    }

    #[test]
    fn constant_field_has_zero_jacobian() {
        let f = PolynomialField::constant(&[1.0, 0.0]).unwrap();
        assert_eq!(f.eval(&[3.7, -1.2]).as_slice(), &[1.0, 0.0]);
        assert!(f.jacobian(&[3.7, -1.2]).iter().all(|x| *x == 0.0));
    }
}
