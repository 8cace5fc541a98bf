//! Dense symmetric eigenvalues by cyclic Jacobi rotations.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Stop once the off-diagonal Frobenius norm drops below this (or the
/// scalar type's precision floor, whichever is larger).
pub const JACOBI_TOLERANCE: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues of the symmetric `n×n` row-major matrix `a`, in the order
/// they appear on the diagonal after convergence (unsorted).
///
/// Only the symmetric part is meaningful; the caller guarantees symmetry.
pub fn jacobi_eigenvalues<T: Real>(a: &[T], n: usize) -> Result<Vec<T>> {
    if a.len() != n * n {
        return Err(Error::input(format!("matrix has {} entries, expected {}", a.len(), n * n)));
    }
    let mut m = a.to_vec();
    // 1e-12 for f64-sized problems; relaxed to the precision floor for f32
    let frob = a.iter().map(|x| *x * *x).sum::<T>().sqrt();
    let tol = T::lit(JACOBI_TOLERANCE).max(T::epsilon() * frob * T::lit(n as f64));
    let off_norm = |m: &[T]| -> T {
        let mut s = T::zero();
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += m[p * n + q] * m[p * n + q];
                }
            }
        }
        s.sqrt()
    };

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&m) < tol {
            return Ok((0..n).map(|i| m[i * n + i]).collect());
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (apq + apq);
                let t = if theta.abs() > T::lit(1e150) {
                    T::one() / (theta + theta)
                } else {
                    let sign = if theta < T::zero() { -T::one() } else { T::one() };
                    sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = T::zero();
                m[q * n + p] = T::zero();
            }
        }
    }
    if off_norm(&m) < tol {
        return Ok((0..n).map(|i| m[i * n + i]).collect());
    }
    Err(Error::Numeric(format!(
        "Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps (off-diagonal norm {:e})",
        off_norm(&m).value()
    )))
}
