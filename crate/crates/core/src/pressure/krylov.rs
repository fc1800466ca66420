//! Restarted GMRES with right preconditioning.

use crate::error::{MuskatError, Result};

pub(crate) struct KrylovOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve `A x = b` to relative residual `tol`, with `precond ≈ A⁻¹`.
pub(crate) fn gmres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Vec<f64>,
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<KrylovOutcome> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = x0;
    if bnorm == 0.0 {
        return Ok(KrylovOutcome {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut total = 0;
    let mut best = f64::INFINITY;
    let mut stalled_cycles = 0;
    loop {
        let ax = apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        let rel = beta / bnorm;
        if rel <= tol {
            return Ok(KrylovOutcome {
                x,
                iterations: total,
                residual: rel,
            });
        }
        if total >= max_iter || !rel.is_finite() {
            return Err(MuskatError::SolverDivergence {
                residual: rel,
                iterations: total,
            });
        }
        if rel > 0.5 * best {
            stalled_cycles += 1;
            if stalled_cycles >= 3 {
                return Err(MuskatError::SolverDivergence {
                    residual: rel,
                    iterations: total,
                });
            }
        } else {
            stalled_cycles = 0;
        }
        best = best.min(rel);

        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::new();
        let mut hess = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut used = 0;
        for k in 0..restart {
            let zk = precond(&v[k]);
            let mut wv = apply(&zk);
            z.push(zk);
            // modified Gram-Schmidt
            for (i, vi) in v.iter().enumerate() {
                let hik = dot(&wv, vi);
                hess[i][k] = hik;
                for (wj, vj) in wv.iter_mut().zip(vi) {
                    *wj -= hik * vj;
                }
            }
            let hnext = norm(&wv);
            hess[k + 1][k] = hnext;
            for i in 0..k {
                let t = cs[i] * hess[i][k] + sn[i] * hess[i + 1][k];
                hess[i + 1][k] = -sn[i] * hess[i][k] + cs[i] * hess[i + 1][k];
                hess[i][k] = t;
            }
            let denom = hess[k][k].hypot(hess[k + 1][k]);
            if denom == 0.0 {
                used = k;
                break;
            }
            cs[k] = hess[k][k] / denom;
            sn[k] = hess[k + 1][k] / denom;
            hess[k][k] = denom;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            used = k + 1;
            total += 1;
            if g[k + 1].abs() / bnorm <= 0.5 * tol || hnext == 0.0 || total >= max_iter {
                break;
            }
            v.push(wv.iter().map(|w| w / hnext).collect());
        }
        // back substitution for the least-squares coefficients
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for j in i + 1..used {
                s -= hess[i][j] * y[j];
            }
            y[i] = s / hess[i][i];
        }
        for (yi, zi) in y.iter().zip(&z) {
            for (xj, zj) in x.iter_mut().zip(zi) {
                *xj += yi * zj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_nonsymmetric_system() {
        let a = [[4.0, 1.0, 0.0], [-1.0, 3.0, 0.5], [0.0, 2.0, 5.0]];
        let apply = |x: &[f64]| -> Vec<f64> {
            (0..3).map(|i| (0..3).map(|j| a[i][j] * x[j]).sum()).collect()
        };
        let b = [1.0, 2.0, 3.0];
        let out = gmres(apply, |x| x.to_vec(), &b, vec![0.0; 3], 1e-12, 5, 50).unwrap();
        let r = apply(&out.x);
        for i in 0..3 {
            assert!((r[i] - b[i]).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let out = gmres(|x| x.to_vec(), |x| x.to_vec(), &[0.0; 4], vec![1.0; 4], 1e-10, 3, 10).unwrap();
        assert_eq!(out.x, vec![0.0; 4]);
    }
}
