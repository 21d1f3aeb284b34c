//! Thin wrappers over `faer` for the few dense factorizations the crate needs.

use faer::prelude::*;
use faer::{Mat, Scale};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub(crate) fn real_mat(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Mat<f64> {
    Mat::from_fn(nrows, ncols, |i, j| rows[i][j])
}

/// Ratio of extreme singular values; `inf` for an exactly singular matrix.
pub(crate) fn condition_number(a: &Mat<f64>) -> Result<f64> {
    let sv = a
        .singular_values()
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let max = sv.iter().cloned().fold(0.0f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 || !min.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

pub(crate) fn solve_real(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    a.partial_piv_lu().solve(b)
}

pub(crate) fn solve_complex(a: &Mat<c64>, b: &Mat<c64>) -> Result<Mat<c64>> {
    let x = a.partial_piv_lu().solve(b);
    if x.col_iter().any(|c| c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
        return Err(Error::LinearAlgebra("singular system".into()));
    }
    Ok(x)
}

pub(crate) fn inverse_complex(a: &Mat<c64>) -> Result<Mat<c64>> {
    let n = a.nrows();
    solve_complex(a, &Mat::<c64>::identity(n, n))
}

/// Eigenvalues and right eigenvectors (as columns) of a real square matrix.
pub(crate) fn eig_real(a: &Mat<f64>) -> Result<(Vec<Complex64>, Mat<c64>)> {
    let evd = a
        .eigen()
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let values = (0..a.nrows()).map(|i| evd.S()[i]).collect();
    Ok((values, evd.U().to_owned()))
}

/// Eigenvalues and right eigenvectors of a complex square matrix.
pub(crate) fn eig_complex(a: &Mat<c64>) -> Result<(Vec<Complex64>, Mat<c64>)> {
    let evd = a
        .eigen()
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let values = (0..a.nrows()).map(|i| evd.S()[i]).collect();
    Ok((values, evd.U().to_owned()))
}

pub(crate) fn condition_number_complex(a: &Mat<c64>) -> Result<f64> {
    let sv = a
        .singular_values()
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let max = sv.iter().cloned().fold(0.0f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 || !min.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

/// Solves `A P + P Aᵀ + Q = 0` for stable `A` with the scaled matrix sign
/// iteration. Avoids any eigenvector basis, so it stays accurate for
/// realizations whose modal form is badly conditioned.
pub(crate) fn lyapunov(a: &Mat<f64>, q: &Mat<f64>) -> Result<Mat<f64>> {
    let n = a.nrows();
    let mut ak = a.to_owned();
    let mut qk = q.to_owned();
    let eye = Mat::<f64>::identity(n, n);
    for _ in 0..100 {
        let inv = ak.partial_piv_lu().solve(&eye);
        let c = (inv.norm_l2() / ak.norm_l2()).sqrt();
        if !c.is_finite() || c == 0.0 {
            return Err(Error::LinearAlgebra("singular iterate in Lyapunov solve".into()));
        }
        let next_a = (&ak * Scale(c) + &inv * Scale(1.0 / c)) * Scale(0.5);
        let next_q = (&qk * Scale(c) + &inv * &qk * inv.transpose() * Scale(1.0 / c)) * Scale(0.5);
        let step = (&next_a - &ak).norm_l1();
        let scale = next_a.norm_l1();
        ak = next_a;
        qk = next_q;
        if step <= 1e-13 * scale && (&ak + &eye).norm_l1() <= 1e-10 * n as f64 {
            return Ok(qk * Scale(0.5));
        }
    }
    Err(Error::LinearAlgebra("Lyapunov sign iteration did not converge".into()))
}
