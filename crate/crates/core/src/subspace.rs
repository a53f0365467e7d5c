//! Numerical spans, projections and principal angles.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

/// Orthonormal basis of the numerical column span of `a`.
///
/// Returns the basis (columns sorted by decreasing singular value) and the
/// full singular spectrum. Directions with `sigma <= rel_tol * sigma_max`
/// are dropped.
pub fn numerical_span(a: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, Vec<f64>) {
    let n = a.nrows();
    if a.ncols() == 0 {
        return (DMatrix::zeros(n, 0), Vec::new());
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let spectrum: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let max = spectrum.first().copied().unwrap_or(0.0);
    let keep: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| max > 0.0 && svd.singular_values[i] > rel_tol * max)
        .collect();
    let mut basis = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        basis.set_column(c, &u.column(i));
    }
    (basis, spectrum)
}

/// `v - Q Q^T v` for an orthonormal `Q`.
pub fn projection_residual(basis: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    if basis.ncols() == 0 {
        return v.clone();
    }
    v - basis * (basis.transpose() * v)
}

/// Largest deviation of `Q^T Q` from the identity.
pub fn gram_deviation(basis: &DMatrix<f64>) -> f64 {
    let r = basis.ncols();
    if r == 0 {
        return 0.0;
    }
    (basis.transpose() * basis - DMatrix::identity(r, r)).amax()
}

/// Sines of the principal angles between span(`a`) and span(`b`), measured
/// from `a` into `b`: the singular values of `(I - Q_b Q_b^T) Q_a`.
///
/// Working with sines keeps resolution for tiny angles, where `acos` of the
/// cosines loses all digits.
pub fn principal_angle_sines(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    if a.ncols() == 0 {
        return Vec::new();
    }
    let residual = if b.ncols() == 0 {
        a.clone()
    } else {
        a - b * (b.transpose() * a)
    };
    residual.singular_values().iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_of_rank_deficient_matrix() {
        let a = DMatrix::from_row_slice(
            3,
            4,
            &[
                1.0, 2.0, 0.0, 3.0, //
                0.0, 0.0, 0.0, 0.0, //
                1.0, 2.0, 1.0, 4.0,
            ],
        );
        let (basis, spectrum) = numerical_span(&a, 1e-8);
        assert_eq!(basis.ncols(), 2);
        assert_eq!(spectrum.len(), 3);
        assert!(gram_deviation(&basis) < 1e-12);
        for j in 0..4 {
            let col = a.column(j).into_owned();
            assert!(projection_residual(&basis, &col).norm() < 1e-12);
        }
        let e2 = DVector::from_column_slice(&[0.0, 1.0, 0.0]);
        assert!((projection_residual(&basis, &e2).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn principal_angles() {
        let xy = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let z = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]);
        assert!(principal_angle_sines(&x, &xy)[0] < 1e-15);
        assert!((principal_angle_sines(&z, &xy)[0] - 1.0).abs() < 1e-15);
        let empty = DMatrix::zeros(3, 0);
        assert!(numerical_span(&empty, 1e-8).0.ncols() == 0);
    }
}
