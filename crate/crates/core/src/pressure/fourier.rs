//! Exact solver for the constant-coefficient operator `L(βI)`.
//!
//! With `K = β±I` the cross terms vanish and every Fourier mode decouples
//! into a tridiagonal system over the global levels.

use rustfft::num_complex::Complex64;

use super::operator::{Layout, Side};
use crate::spectral::{wavenumber, FourierOps};

#[derive(Debug, Clone)]
pub(crate) struct LaplaceSolver {
    layout: Layout,
    ops: FourierOps,
    /// Per-mode tridiagonal coefficients `(sub, diag, sup)` over levels.
    sub: Vec<f64>,
    sup: Vec<f64>,
    /// Mode-independent part of the diagonal and the `-λ` weight.
    diag0: Vec<f64>,
    mass: Vec<f64>,
}

impl LaplaceSolver {
    pub fn new(layout: Layout, beta_plus: f64, beta_minus: f64) -> Self {
        let levels = layout.levels();
        let mut sub = vec![0.0; levels];
        let mut sup = vec![0.0; levels];
        let mut diag0 = vec![0.0; levels];
        let mut mass = vec![0.0; levels];
        for (side, beta) in [(Side::Lower, beta_minus), (Side::Upper, beta_plus)] {
            let g = layout.grid(side);
            let c = beta / g.dx2();
            for m in 0..g.n2 {
                let Some(l) = layout.global(side, m) else { continue };
                mass[l] += beta * layout.weight(side, m);
                if m + 1 < g.n2 {
                    diag0[l] -= c;
                    sup[l] += c;
                }
                if m > 0 {
                    diag0[l] -= c;
                    sub[l] += c;
                }
            }
        }
        Self {
            layout,
            ops: FourierOps::new(layout.n1()),
            sub,
            sup,
            diag0,
            mass,
        }
    }

    /// Solve `L(βI) u = r` with homogeneous top data.
    pub fn solve(&self, r: &[f64]) -> Vec<f64> {
        let n1 = self.layout.n1();
        let levels = self.layout.levels();
        let spectra: Vec<Vec<Complex64>> = (0..levels)
            .map(|l| self.ops.forward(&r[l * n1..(l + 1) * n1]))
            .collect();
        let mut sol = vec![vec![Complex64::new(0.0, 0.0); n1]; levels];
        let mut cp = vec![0.0; levels];
        let mut dp = vec![Complex64::new(0.0, 0.0); levels];
        for idx in 0..n1 {
            let k = wavenumber(idx, n1);
            // S² has symbol -k², with the Nyquist mode annihilated.
            let lambda = if idx == n1 / 2 { 0.0 } else { (k * k) as f64 };
            // Thomas algorithm.
            for l in 0..levels {
                let d = self.diag0[l] - lambda * self.mass[l];
                let a = self.sub[l];
                let denom = if l == 0 { d } else { d - a * cp[l - 1] };
                cp[l] = self.sup[l] / denom;
                let rhs = spectra[l][idx];
                dp[l] = if l == 0 {
                    rhs / denom
                } else {
                    (rhs - dp[l - 1] * a) / denom
                };
            }
            let mut x = dp[levels - 1];
            sol[levels - 1][idx] = x;
            for l in (0..levels - 1).rev() {
                x = dp[l] - x * cp[l];
                sol[l][idx] = x;
            }
        }
        let mut out = Vec::with_capacity(levels * n1);
        for spec in sol {
            out.extend(self.ops.inverse(spec));
        }
        out
    }
}
