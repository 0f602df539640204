//! Small dense symmetric-matrix helpers backed by nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub(crate) fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigen-decomposition of a symmetric matrix: `(eigenvalues, eigenvectors)`
/// with eigenvectors stored as columns.
pub fn sym_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    check_square(a)?;
    let sym = to_dmatrix(a);
    let sym = (&sym + sym.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    Ok((
        Array1::from_iter(eig.eigenvalues.iter().copied()),
        from_dmatrix(&eig.eigenvectors),
    ))
}

/// `Q diag(f(λ)) Qᵀ` for a symmetric `a = Q diag(λ) Qᵀ`.
pub fn sym_matrix_fn(a: &Array2<f64>, f: impl Fn(f64) -> f64) -> Result<Array2<f64>> {
    let (vals, vecs) = sym_eigen(a)?;
    let scaled = &vecs * &vals.mapv(f);
    Ok(scaled.dot(&vecs.t()))
}

pub fn check_square(a: &Array2<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::dim(format!("expected a square matrix, got {:?}", a.dim())));
    }
    Ok(())
}

/// Symmetric with strictly positive eigenvalues.
pub fn check_spd(a: &Array2<f64>, what: &str) -> Result<()> {
    check_square(a)?;
    let n = a.nrows();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-10 * scale {
                return Err(Error::config(format!("{what} is not symmetric")));
            }
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::config(format!("{what} has non-finite entries")));
    }
    let (vals, _) = sym_eigen(a)?;
    if vals.iter().any(|&v| v <= 0.0) {
        return Err(Error::config(format!("{what} is not positive definite")));
    }
    Ok(())
}

pub fn sym_sqrt(a: &Array2<f64>) -> Result<Array2<f64>> {
    sym_matrix_fn(a, |v| v.max(0.0).sqrt())
}

pub fn sym_inv_sqrt(a: &Array2<f64>) -> Result<Array2<f64>> {
    sym_matrix_fn(a, |v| 1.0 / v.sqrt())
}

pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let chol = nalgebra::Cholesky::new(to_dmatrix(a))
        .ok_or_else(|| Error::config("matrix is not positive definite"))?;
    Ok(from_dmatrix(&chol.l()))
}

pub fn solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let lu = to_dmatrix(a).lu();
    let rhs = nalgebra::DVector::from_iterator(b.len(), b.iter().copied());
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular system".into()))?;
    Ok(Array1::from_iter(x.iter().copied()))
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix column signs so the distribution is Haar.
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    from_dmatrix(&q)
}

/// Random SPD matrix with eigenvalues log-uniform in `[lo, lo * cond]`, so the
/// condition number is at most `cond`.
pub fn random_spd<R: Rng + ?Sized>(n: usize, lo: f64, cond: f64, rng: &mut R) -> Array2<f64> {
    let q = random_orthogonal(n, rng);
    let eig = Array1::from_shape_fn(n, |_| lo * cond.powf(rng.random::<f64>()));
    let qd = &q * &eig;
    let a = qd.dot(&q.t());
    (&a + &a.t()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed_rng;
    use ndarray::array;

    #[test]
    fn sqrt_squares_back() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let s = sym_sqrt(&a).unwrap();
        let back = s.dot(&s);
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn random_spd_respects_condition_bound() {
        let mut rng = keyed_rng(3, &[]);
        for n in [2, 4, 8] {
            let a = random_spd(n, 0.5, 10.0, &mut rng);
            let (vals, _) = sym_eigen(&a).unwrap();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(0.0, f64::max);
            assert!(lo > 0.0 && hi / lo <= 10.0 + 1e-9);
        }
    }

    #[test]
    fn non_spd_rejected() {
        assert!(check_spd(&array![[1.0, 0.0], [0.0, -1.0]], "cov").is_err());
        assert!(check_spd(&array![[1.0, 2.0], [0.0, 1.0]], "cov").is_err());
        assert!(check_spd(&array![[2.0, 0.5], [0.5, 1.0]], "cov").is_ok());
    }
}
