//! Conservative discretization of `div(K∇P) = 0` on the two stacked strips.
//!
//! Every row is a flux balance over a control volume: full cells of height
//! `Δx₂` in the interior, half cells at the bottom, and a combined half-cell
//! pair straddling the permeability curve. Horizontal fluxes live at nodes and
//! are differentiated spectrally; vertical fluxes live on faces `m + ½`.
//! Summing any set of rows telescopes, so the discrete top flux has zero
//! mean up to the linear-solver residual.

use nalgebra::DMatrix;

use crate::diffeo::{MatField, StripField, StripGrid};
use crate::spectral::FourierOps;

/// Level bookkeeping for the coupled unknown vector.
///
/// Global level `ℓ` runs bottom to top: lower strip levels `0..nl`, then
/// upper strip levels `1..nu-1`. Upper level 0 is the shared permeability
/// level; the upper top level carries Dirichlet data and is not an unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub upper: StripGrid,
    pub lower: StripGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    Upper,
    Lower,
}

impl Layout {
    pub fn n1(&self) -> usize {
        self.upper.n1
    }

    pub fn levels(&self) -> usize {
        self.lower.n2 + self.upper.n2 - 2
    }

    pub fn unknowns(&self) -> usize {
        self.levels() * self.n1()
    }

    pub(crate) fn grid(&self, side: Side) -> StripGrid {
        match side {
            Side::Upper => self.upper,
            Side::Lower => self.lower,
        }
    }

    /// Global level of strip level `m`, `None` for the Dirichlet top.
    pub(crate) fn global(&self, side: Side, m: usize) -> Option<usize> {
        match side {
            Side::Lower => Some(m),
            Side::Upper if m + 1 == self.upper.n2 => None,
            Side::Upper => Some(self.lower.n2 - 1 + m),
        }
    }

    /// Control-volume height attached to strip level `m`.
    pub(crate) fn weight(&self, side: Side, m: usize) -> f64 {
        let g = self.grid(side);
        if m == 0 || m + 1 == g.n2 {
            0.5 * g.dx2()
        } else {
            g.dx2()
        }
    }

    /// Expand an unknown vector plus top data into full strip fields.
    pub fn scatter(&self, u: &[f64], top: &[f64]) -> (StripField, StripField) {
        let n1 = self.n1();
        let mut pu = StripField::zeros(self.upper);
        let mut pl = StripField::zeros(self.lower);
        for m in 0..self.lower.n2 {
            pl.row_mut(m).copy_from_slice(&u[m * n1..(m + 1) * n1]);
        }
        for m in 0..self.upper.n2 {
            match self.global(Side::Upper, m) {
                Some(l) => pu.row_mut(m).copy_from_slice(&u[l * n1..(l + 1) * n1]),
                None => pu.row_mut(m).copy_from_slice(top),
            }
        }
        (pu, pl)
    }
}

/// Fluxes `F = K∇P` for one strip. `w = -F`.
#[derive(Debug, Clone)]
pub(crate) struct StripFluxes {
    /// `∂₁P` at nodes.
    pub dp1: StripField,
    /// `F₁ = K₁₁∂₁P + K₁₂∂₂P` at nodes.
    pub f1: StripField,
    /// `∂₁F₁` at nodes.
    pub div1: StripField,
    /// `F₂` on faces `m + ½`, `(n2 - 1) * n1` values.
    pub f2: Vec<f64>,
}

impl StripFluxes {
    pub fn face(&self, m: usize) -> &[f64] {
        let n1 = self.dp1.grid.n1;
        &self.f2[m * n1..(m + 1) * n1]
    }
}

pub(crate) fn strip_fluxes(p: &StripField, k: &MatField, ops: &FourierOps) -> StripFluxes {
    let g = p.grid;
    let n1 = g.n1;
    let dx2 = g.dx2();
    let dp1 = p.d_dx1(ops, 1);
    let dp2 = p.d_dx2();
    let f1 = StripField {
        grid: g,
        values: (0..g.len())
            .map(|i| k.xx.values[i] * dp1.values[i] + k.xy.values[i] * dp2.values[i])
            .collect(),
    };
    let div1 = f1.d_dx1(ops, 1);
    let mut f2 = vec![0.0; (g.n2 - 1) * n1];
    for m in 0..g.n2 - 1 {
        for j in 0..n1 {
            let lo = g.idx(m, j);
            let hi = g.idx(m + 1, j);
            let k22 = 0.5 * (k.yy.values[lo] + k.yy.values[hi]);
            let k21 = 0.5 * (k.yx.values[lo] + k.yx.values[hi]);
            f2[m * n1 + j] = k22 * (p.values[hi] - p.values[lo]) / dx2
                + k21 * 0.5 * (dp1.values[lo] + dp1.values[hi]);
        }
    }
    StripFluxes { dp1, f1, div1, f2 }
}

/// Row residuals of the full affine system for given strip fields.
pub(crate) fn residual(
    layout: &Layout,
    pu: &StripField,
    pl: &StripField,
    ku: &MatField,
    kl: &MatField,
    ops: &FourierOps,
) -> Vec<f64> {
    let n1 = layout.n1();
    let mut rows = vec![0.0; layout.unknowns()];
    for (side, p, k) in [(Side::Lower, pl, kl), (Side::Upper, pu, ku)] {
        let fx = strip_fluxes(p, k, ops);
        let g = layout.grid(side);
        for m in 0..g.n2 {
            let Some(l) = layout.global(side, m) else {
                continue;
            };
            let w = layout.weight(side, m);
            let row = &mut rows[l * n1..(l + 1) * n1];
            let div1 = fx.div1.row(m);
            for j in 0..n1 {
                row[j] += w * div1[j];
            }
            if m + 1 < g.n2 {
                for (r, f) in row.iter_mut().zip(fx.face(m)) {
                    *r += f;
                }
            }
            if m > 0 {
                for (r, f) in row.iter_mut().zip(fx.face(m - 1)) {
                    *r -= f;
                }
            }
        }
    }
    rows
}

/// Constant-coefficient tensor `K = βI` on a strip.
pub(crate) fn isotropic(grid: StripGrid, beta: f64) -> MatField {
    let c = |v: f64| StripField {
        grid,
        values: vec![v; grid.len()],
    };
    MatField {
        xx: c(beta),
        xy: c(0.0),
        yx: c(0.0),
        yy: c(beta),
    }
}

/// Block-banded matrix with dense `n1 × n1` blocks and block offsets `-2..=2`.
#[derive(Debug, Clone)]
pub(crate) struct BlockBand {
    pub n1: usize,
    pub rows: Vec<[Option<DMatrix<f64>>; 5]>,
}

impl BlockBand {
    fn new(levels: usize, n1: usize) -> Self {
        Self {
            n1,
            rows: (0..levels).map(|_| Default::default()).collect(),
        }
    }

    pub fn levels(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, r: usize, c: usize) -> Option<&DMatrix<f64>> {
        let off = c as isize - r as isize + 2;
        if !(0..5).contains(&off) {
            return None;
        }
        self.rows[r][off as usize].as_ref()
    }

    pub fn take(&mut self, r: usize, c: usize) -> Option<DMatrix<f64>> {
        let off = c as isize - r as isize + 2;
        if !(0..5).contains(&off) {
            return None;
        }
        self.rows[r][off as usize].take()
    }

    pub fn put(&mut self, r: usize, c: usize, block: DMatrix<f64>) {
        let off = (c as isize - r as isize + 2) as usize;
        self.rows[r][off] = Some(block);
    }

    fn add(&mut self, r: usize, c: usize, block: &DMatrix<f64>) {
        let off = c as isize - r as isize + 2;
        assert!((0..5).contains(&off), "block ({r},{c}) outside band");
        let n1 = self.n1;
        let slot = &mut self.rows[r][off as usize];
        match slot {
            Some(b) => *b += block,
            None => {
                let mut b = DMatrix::zeros(n1, n1);
                b += block;
                *slot = Some(b);
            }
        }
    }

    #[cfg(test)]
    pub fn mul_vec(&self, u: &[f64]) -> Vec<f64> {
        let n1 = self.n1;
        let mut out = vec![0.0; u.len()];
        for r in 0..self.levels() {
            for off in 0..5 {
                let Some(b) = &self.rows[r][off] else { continue };
                let c = r + off - 2;
                let x = nalgebra::DVectorView::from_slice(&u[c * n1..(c + 1) * n1], n1);
                let y = b * x;
                for (o, v) in out[r * n1..(r + 1) * n1].iter_mut().zip(y.iter()) {
                    *o += v;
                }
            }
        }
        out
    }
}

/// Vertical derivative stencil at strip level `m`: `∂₂P(m) ≈ Σ c_q P(q)`.
fn dx2_stencil(g: StripGrid, m: usize) -> Vec<(usize, f64)> {
    let h2 = 2.0 * g.dx2();
    let n = g.n2;
    if m == 0 {
        vec![(0, -3.0 / h2), (1, 4.0 / h2), (2, -1.0 / h2)]
    } else if m + 1 == n {
        vec![(n - 1, 3.0 / h2), (n - 2, -4.0 / h2), (n - 3, 1.0 / h2)]
    } else {
        vec![(m + 1, 1.0 / h2), (m - 1, -1.0 / h2)]
    }
}

/// `diag(d) * S`
fn diag_left(d: &[f64], s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = s.clone();
    for (i, &v) in d.iter().enumerate() {
        out.row_mut(i).scale_mut(v);
    }
    out
}

/// `S * diag(d)`
fn diag_right(s: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut out = s.clone();
    for (i, &v) in d.iter().enumerate() {
        out.column_mut(i).scale_mut(v);
    }
    out
}

fn diag(d: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d))
}

/// Assemble the block matrix and the right-hand side carrying the top data.
pub(crate) fn assemble(
    layout: &Layout,
    ku: &MatField,
    kl: &MatField,
    top: &[f64],
    s: &DMatrix<f64>,
) -> (BlockBand, Vec<f64>) {
    let n1 = layout.n1();
    let mut band = BlockBand::new(layout.levels(), n1);
    let mut rhs = vec![0.0; layout.unknowns()];
    let top_vec = nalgebra::DVector::from_column_slice(top);

    for (side, k) in [(Side::Lower, kl), (Side::Upper, ku)] {
        let g = layout.grid(side);
        let dx2 = g.dx2();
        let level = |f: &StripField, m: usize| f.row(m).to_vec();
        let face = |f: &StripField, m: usize| -> Vec<f64> {
            f.row(m).iter().zip(f.row(m + 1)).map(|(a, b)| 0.5 * (a + b)).collect()
        };
        let mut emit = |r: usize, q: usize, block: DMatrix<f64>, rhs: &mut Vec<f64>| {
            match layout.global(side, q) {
                Some(c) => band.add(r, c, &block),
                None => {
                    let y = &block * &top_vec;
                    for (o, v) in rhs[r * n1..(r + 1) * n1].iter_mut().zip(y.iter()) {
                        *o -= v;
                    }
                }
            }
        };
        for m in 0..g.n2 {
            let Some(r) = layout.global(side, m) else {
                continue;
            };
            let w = layout.weight(side, m);
            // w S (K11 S P_m + K12 Σ c_q P_q)
            let k11 = level(&k.xx, m);
            let k12 = level(&k.xy, m);
            let sk11s = diag_right(s, &k11) * s;
            emit(r, m, sk11s * w, &mut rhs);
            let sk12 = diag_right(s, &k12);
            for (q, c) in dx2_stencil(g, m) {
                emit(r, q, &sk12 * (w * c), &mut rhs);
            }
            // + F2(m + ½)
            if m + 1 < g.n2 {
                let k22 = face(&k.yy, m);
                let k21 = face(&k.yx, m);
                let half = diag_left(&k21, s) * 0.5;
                emit(r, m, &half - diag(&k22) / dx2, &mut rhs);
                emit(r, m + 1, &half + diag(&k22) / dx2, &mut rhs);
            }
            // - F2(m - ½)
            if m > 0 {
                let k22 = face(&k.yy, m - 1);
                let k21 = face(&k.yx, m - 1);
                let half = diag_left(&k21, s) * 0.5;
                emit(r, m - 1, -(&half - diag(&k22) / dx2), &mut rhs);
                emit(r, m, -(&half + diag(&k22) / dx2), &mut rhs);
            }
        }
    }
    (band, rhs)
}
