//! Preconditioned conjugate gradient for symmetric systems given as a
//! (possibly fallible) black-box operator.

use std::fmt;

use crate::error::Error;
use crate::field::{axpy, dot};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CgError {
    /// Search direction with nonpositive curvature: the operator is not
    /// positive definite.
    Indefinite { iteration: usize, curvature: f64 },
    MaxIterations { iterations: usize, relative_residual: f64 },
    /// Residual failed to shrink over a full stall window.
    Stalled { iterations: usize, relative_residual: f64 },
    Apply(Error),
}

impl fmt::Display for CgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CgError::Indefinite { iteration, curvature } => {
                write!(f, "nonpositive curvature {curvature:e} at iteration {iteration}")
            }
            CgError::MaxIterations {
                iterations,
                relative_residual,
            } => write!(f, "no convergence in {iterations} iterations (residual {relative_residual:e})"),
            CgError::Stalled {
                iterations,
                relative_residual,
            } => write!(f, "stalled after {iterations} iterations (residual {relative_residual:e})"),
            CgError::Apply(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Declare a stall when the best residual has not improved by a factor
    /// of two within this many iterations. `None` disables the check.
    pub stall_window: Option<usize>,
}

impl CgSettings {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        CgSettings {
            tol,
            max_iter,
            stall_window: None,
        }
    }
}

/// Solves `A x = b` starting from the contents of `x`. `inv_diag` is an
/// optional Jacobi preconditioner (reciprocal diagonal). Convergence is
/// `|b - A x| <= tol |b|`.
pub fn conjugate_gradient<F>(
    mut apply: F,
    inv_diag: Option<&[f64]>,
    b: &[f64],
    x: &mut [f64],
    settings: CgSettings,
) -> Result<CgReport, CgError>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<(), Error>,
{
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let precondition = |r: &[f64], z: &mut [f64]| match inv_diag {
        Some(d) => {
            for i in 0..r.len() {
                z[i] = d[i] * r[i];
            }
        }
        None => z.copy_from_slice(r),
    };

    let mut ap = vec![0.0; n];
    apply(x, &mut ap).map_err(CgError::Apply)?;
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    let mut rel = dot(&r, &r).sqrt() / b_norm;
    if rel <= settings.tol {
        return Ok(CgReport {
            iterations: 0,
            relative_residual: rel,
        });
    }
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut best = rel;
    let mut best_at = 0usize;

    for it in 1..=settings.max_iter {
        apply(&p, &mut ap).map_err(CgError::Apply)?;
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(CgError::Indefinite {
                iteration: it,
                curvature,
            });
        }
        let alpha = rz / curvature;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= settings.tol {
            return Ok(CgReport {
                iterations: it,
                relative_residual: rel,
            });
        }
        if rel < 0.5 * best {
            best = rel;
            best_at = it;
        } else if let Some(window) = settings.stall_window {
            if it - best_at >= window {
                return Err(CgError::Stalled {
                    iterations: it,
                    relative_residual: rel,
                });
            }
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(CgError::MaxIterations {
        iterations: settings.max_iter,
        relative_residual: rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::Csr;

    fn laplacian_1d(n: usize) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        Csr::from_triplets(n, t)
    }

    #[test]
    fn solves_spd_system() {
        let a = laplacian_1d(50);
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul(&xs);
        let mut x = vec![0.0; 50];
        let inv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
        let rep = conjugate_gradient(
            |v, out| {
                a.apply(v, out);
                Ok(())
            },
            Some(&inv),
            &b,
            &mut x,
            CgSettings::new(1e-12, 200),
        )
        .unwrap();
        assert!(rep.relative_residual <= 1e-12);
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn detects_indefinite_operator() {
        let a = laplacian_1d(20).shifted(-3.0);
        let b = vec![1.0; 20];
        let mut x = vec![0.0; 20];
        let err = conjugate_gradient(
            |v, out| {
                a.apply(v, out);
                Ok(())
            },
            None,
            &b,
            &mut x,
            CgSettings::new(1e-12, 200),
        )
        .unwrap_err();
        assert!(matches!(err, CgError::Indefinite { .. }));
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = laplacian_1d(5);
        let mut x = vec![1.0; 5];
        let rep = conjugate_gradient(
            |v, out| {
                a.apply(v, out);
                Ok(())
            },
            None,
            &[0.0; 5],
            &mut x,
            CgSettings::new(1e-10, 10),
        )
        .unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
