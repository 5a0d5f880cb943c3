//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, Schur};

use crate::scalar::Real;

/// Minimum-norm least-squares solution with its numerical rank.
#[derive(Debug, Clone)]
pub struct LeastSquares<T: Real> {
    pub solution: DVector<T>,
    pub rank: usize,
    pub residual: T,
}

/// Solves `min |M x - c|` and returns the minimum-norm minimizer, i.e.
/// `x = M^+ c`.
///
/// Tall systems are first reduced with a Householder QR so the SVD only sees
/// the square factor. Singular values at or below
/// `eps * max(rows, cols) * sigma_max` count as zero.
pub fn min_norm_lstsq<T: Real>(m: &DMatrix<T>, c: &DVector<T>) -> LeastSquares<T> {
    let (rows, cols) = m.shape();
    assert_eq!(rows, c.len(), "right-hand side length");
    let scale = T::lit(rows.max(cols) as f64) * T::default_epsilon();

    if rows >= cols && cols > 0 {
        let qr = m.clone().qr();
        let mut rhs = c.clone();
        qr.q_tr_mul(&mut rhs);
        let svd = qr.r().svd(true, true);
        let tol = threshold(&svd.singular_values, scale);
        let rank = count_above(&svd.singular_values, tol);
        let x = svd
            .solve(&rhs.rows(0, cols).into_owned(), tol)
            .expect("U and V were computed");
        return finish(m, c, x, rank);
    }
    let svd = m.clone().svd(true, true);
    let tol = threshold(&svd.singular_values, scale);
    let rank = count_above(&svd.singular_values, tol);
    let x = svd.solve(c, tol).expect("U and V were computed");
    finish(m, c, x, rank)
}

fn threshold<T: Real>(sv: &DVector<T>, scale: T) -> T {
    let max = sv.iter().copied().fold(T::zero(), |a, b| a.max(b));
    max * scale
}

fn count_above<T: Real>(sv: &DVector<T>, tol: T) -> usize {
    sv.iter().filter(|&&s| s > tol).count()
}

fn finish<T: Real>(m: &DMatrix<T>, c: &DVector<T>, x: DVector<T>, rank: usize) -> LeastSquares<T> {
    let residual = (m * &x - c).norm();
    LeastSquares {
        solution: x,
        rank,
        residual,
    }
}

/// Largest singular value.
pub fn spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(T::zero(), |a, b| a.max(b))
}

/// Largest eigenvalue modulus of a square matrix.
///
/// Uses a real Schur decomposition with a bounded number of sweeps. If that
/// fails to converge, falls back to Gelfand's formula on repeated squares.
pub fn spectral_radius<T: Real>(m: &DMatrix<T>) -> T {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    if m.is_empty() {
        return T::zero();
    }
    match Schur::try_new(m.clone(), T::default_epsilon(), 10_000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|z| (z.re * z.re + z.im * z.im).sqrt())
            .fold(T::zero(), |a, b| a.max(b)),
        None => gelfand_radius(m),
    }
}

/// `|M^(2^k)|^(1/2^k)` for `k = 40`, rescaling as it goes.
fn gelfand_radius<T: Real>(m: &DMatrix<T>) -> T {
    let mut p = m.clone();
    let mut log_scale = 0.0f64;
    let mut weight = 1.0f64;
    for _ in 0..40 {
        let norm = p.norm();
        if norm == T::zero() {
            return T::zero();
        }
        p /= norm;
        log_scale += weight * norm.as_f64().ln();
        p = &p * &p;
        weight *= 0.5;
    }
    T::lit((log_scale + weight * p.norm().as_f64().ln()).exp())
}

/// `sigma_max / sigma_min`; infinite for singular input.
pub fn condition_number<T: Real>(m: &DMatrix<T>) -> T {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let min = sv.iter().copied().fold(max, |a, b| a.min(b));
    if min <= T::zero() {
        T::lit(f64::INFINITY)
    } else {
        max / min
    }
}

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn overdetermined_consistent() {
        let m = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let x = DVector::from_row_slice(&[0.5, -2.0]);
        let ls = min_norm_lstsq(&m, &(&m * &x));
        assert_eq!(ls.rank, 2);
        assert_relative_eq!(ls.solution, x, epsilon = 1e-12);
        assert!(ls.residual < 1e-12);
    }

    #[test]
    fn duplicated_columns_split_evenly() {
        // Columns 1 and 2 identical: the minimum-norm answer shares the weight.
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 2.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let c = DVector::from_row_slice(&[5.0, 2.0, 1.0]);
        let ls = min_norm_lstsq(&m, &c);
        assert_eq!(ls.rank, 2);
        assert_relative_eq!(ls.solution, DVector::from_row_slice(&[1.0, 1.0, 1.0]), epsilon = 1e-12);
    }

    #[test]
    fn underdetermined_min_norm() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let ls = min_norm_lstsq(&m, &DVector::from_row_slice(&[2.0]));
        assert_eq!(ls.rank, 1);
        assert_relative_eq!(ls.solution, DVector::from_row_slice(&[1.0, 1.0]), epsilon = 1e-12);
    }

    #[test]
    fn norms_and_conditioning() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -0.5]);
        assert_relative_eq!(spectral_norm(&m), 3.0, epsilon = 1e-12);
        assert_relative_eq!(condition_number(&m), 6.0, epsilon = 1e-12);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.9, 0.9, 0.0]);
        assert_relative_eq!(spectral_radius(&rot), 0.9, epsilon = 1e-12);
        assert!(condition_number(&DMatrix::<f64>::zeros(2, 2)).is_infinite());
        assert_eq!(spectral_radius(&DMatrix::<f64>::zeros(3, 3)), 0.0);
    }

    #[test]
    fn gelfand_fallback_agrees() {
        let m = DMatrix::from_row_slice(3, 3, &[0.5, 1.0, 0.0, 0.0, -0.7, 2.0, 0.1, 0.0, 0.3]);
        assert_relative_eq!(gelfand_radius(&m), spectral_radius(&m), epsilon = 1e-6);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.9, 0.9, 0.0]);
        assert_relative_eq!(gelfand_radius(&rot), 0.9, epsilon = 1e-6);
    }
}
