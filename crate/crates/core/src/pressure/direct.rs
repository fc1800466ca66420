//! Block Gaussian elimination for the level-banded pressure matrix.
//!
//! Diagonal blocks are inverted densely (partial pivoting inside the block);
//! no pivoting across levels. The matrix is a small perturbation of a
//! negative-definite symmetric one, so block pivots stay well conditioned
//! while `J` is bounded below.

use nalgebra::{DMatrix, DVector};

use super::operator::BlockBand;
use crate::error::{MuskatError, Result};

pub(crate) struct BlockFactor {
    n1: usize,
    /// Inverted (Schur-complemented) diagonal blocks.
    dinv: Vec<DMatrix<f64>>,
    /// `D_k⁻¹ U_{k,j}` for `j = k+1, k+2`.
    upper: Vec<[Option<DMatrix<f64>>; 2]>,
    /// Original sub-diagonal blocks `B_{i,k}` for `i = k+1, k+2`.
    lower: Vec<[Option<DMatrix<f64>>; 2]>,
}

impl BlockFactor {
    pub fn factor(mut band: BlockBand) -> Result<Self> {
        let n1 = band.n1;
        let levels = band.levels();
        let mut dinv = Vec::with_capacity(levels);
        let mut upper = Vec::with_capacity(levels);
        let mut lower: Vec<[Option<DMatrix<f64>>; 2]> = (0..levels).map(|_| [None, None]).collect();

        for k in 0..levels {
            let d = band
                .take(k, k)
                .ok_or_else(|| MuskatError::NonSpdSystem(format!("missing diagonal block {k}")))?;
            let inv = d
                .lu()
                .try_inverse()
                .ok_or_else(|| MuskatError::NonSpdSystem(format!("singular pivot block at level {k}")))?;
            if inv.iter().any(|v| !v.is_finite()) {
                return Err(MuskatError::NonSpdSystem(format!(
                    "non-finite pivot inverse at level {k}"
                )));
            }
            let mut xs: [Option<DMatrix<f64>>; 2] = [None, None];
            for (slot, j) in (k + 1..=k + 2).enumerate() {
                if j < levels {
                    if let Some(u) = band.take(k, j) {
                        xs[slot] = Some(&inv * u);
                    }
                }
            }
            for (islot, i) in (k + 1..=k + 2).enumerate() {
                if i >= levels {
                    continue;
                }
                let Some(b_ik) = band.take(i, k) else { continue };
                for (jslot, j) in (k + 1..=k + 2).enumerate() {
                    if let Some(x) = &xs[jslot] {
                        let update = &b_ik * x;
                        match band.get(i, j) {
                            Some(_) => {
                                let mut cur = band.take(i, j).unwrap();
                                cur -= update;
                                band.put(i, j, cur);
                            }
                            None => band.put(i, j, -update),
                        }
                    }
                }
                lower[k][islot] = Some(b_ik);
            }
            dinv.push(inv);
            upper.push(xs);
        }
        Ok(Self {
            n1,
            dinv,
            upper,
            lower,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n1 = self.n1;
        let levels = self.dinv.len();
        let mut b: Vec<DVector<f64>> = (0..levels)
            .map(|k| DVector::from_column_slice(&rhs[k * n1..(k + 1) * n1]))
            .collect();
        let mut z: Vec<DVector<f64>> = Vec::with_capacity(levels);
        for k in 0..levels {
            let zk = &self.dinv[k] * &b[k];
            for (islot, i) in (k + 1..=k + 2).enumerate() {
                if let Some(l) = &self.lower[k][islot] {
                    b[i] -= l * &zk;
                }
            }
            z.push(zk);
        }
        for k in (0..levels).rev() {
            for (jslot, j) in (k + 1..=k + 2).enumerate() {
                if let Some(x) = &self.upper[k][jslot] {
                    let corr = x * &z[j];
                    z[k] -= corr;
                }
            }
        }
        let mut out = Vec::with_capacity(levels * n1);
        for zk in z {
            out.extend(zk.iter());
        }
        out
    }
}
