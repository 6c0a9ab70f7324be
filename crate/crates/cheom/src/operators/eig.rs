//! Hermitian spectral routines: cyclic complex Jacobi diagonalization.
//!
//! Matrices here are small (atom-space dimension, <= ~128), where Jacobi is
//! robust and plenty fast. Eigenvalues come out ascending.

use super::{C64, OperatorMatrix};
use crate::{Error, Result};

const HERM_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Ascending eigenvalues of a Hermitian matrix.
///
/// Errors if the input is non-Hermitian beyond 1e-10 relative to the
/// largest entry magnitude.
pub fn hermitian_eigvals(m: &OperatorMatrix) -> Result<Vec<f64>> {
    let (vals, _) = jacobi(m, false)?;
    Ok(vals)
}

/// Ascending eigenvalues plus the unitary of eigenvectors (column k pairs
/// with eigenvalue k).
pub fn hermitian_eig(m: &OperatorMatrix) -> Result<(Vec<f64>, OperatorMatrix)> {
    let (vals, vecs) = jacobi(m, true)?;
    Ok((vals, vecs.expect("vectors requested")))
}

fn jacobi(m: &OperatorMatrix, want_vectors: bool) -> Result<(Vec<f64>, Option<OperatorMatrix>)> {
    let scale = m.max_abs().max(1.0);
    let defect = m.hermitian_defect();
    if defect > HERM_TOL * scale {
        return Err(Error::NotHermitian { defect, tol: HERM_TOL * scale });
    }
    let n = m.dim();
    let mut w = m.clone();
    w.symmetrize_mut();
    let mut v = want_vectors.then(|| OperatorMatrix::identity(n));

    let off = |w: &OperatorMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += w[(i, j)].norm_sqr();
            }
        }
        s.sqrt()
    };
    let frob = w.frobenius().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        if off(&w) <= 1e-15 * frob * (n as f64) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let wpq = w[(p, q)];
                let r = wpq.norm();
                if r <= 1e-300 {
                    continue;
                }
                let phase = wpq / r;
                let app = w[(p, p)].re;
                let aqq = w[(q, q)].re;
                let tau = (aqq - app) / (2.0 * r);
                // smaller-magnitude root of t^2 - 2 tau t - 1 = 0
                let t = if tau >= 0.0 {
                    -1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // 2x2 unitary U = [[c*phase, -s*phase], [s, c]], applied as
                // W <- U^dagger W U, V <- V U.
                let ce = phase.scale(c);
                let se = phase.scale(s);
                for i in 0..n {
                    let wip = w[(i, p)];
                    let wiq = w[(i, q)];
                    w[(i, p)] = ce * wip + wiq.scale(s);
                    w[(i, q)] = -se * wip + wiq.scale(c);
                }
                for j in 0..n {
                    let wpj = w[(p, j)];
                    let wqj = w[(q, j)];
                    w[(p, j)] = ce.conj() * wpj + wqj.scale(s);
                    w[(q, j)] = -se.conj() * wpj + wqj.scale(c);
                }
                if let Some(vm) = v.as_mut() {
                    for i in 0..n {
                        let vip = vm[(i, p)];
                        let viq = vm[(i, q)];
                        vm[(i, p)] = ce * vip + viq.scale(s);
                        vm[(i, q)] = -se * vip + viq.scale(c);
                    }
                }
                // keep the working matrix exactly Hermitian where it matters
                w[(p, q)] = C64::new(0.0, 0.0);
                w[(q, p)] = C64::new(0.0, 0.0);
                w[(p, p)] = C64::new(w[(p, p)].re, 0.0);
                w[(q, q)] = C64::new(w[(q, q)].re, 0.0);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| w[(i, i)].re).collect();
    order.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]));
    let vals: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let vecs = v.map(|vm| {
        let mut sorted = OperatorMatrix::zeros(n);
        for (new_col, &old_col) in order.iter().enumerate() {
            for i in 0..n {
                sorted[(i, new_col)] = vm[(i, old_col)];
            }
        }
        sorted
    });
    Ok((vals, vecs))
}
