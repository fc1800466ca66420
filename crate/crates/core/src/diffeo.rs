//! Semi-ALE mappings `ψ± = e + (0, δψ±)` of the reference strips.
//!
//! `δψ` is the harmonic extension of the interface height `h` and the
//! permeability-curve offset `f`. The vertical direction is solved exactly
//! per Fourier mode; the metric terms use the same discrete calculus as the
//! pressure solver (spectral in `x₁`, second-order differences in `x₂`).

use rustfft::num_complex::Complex64;

use crate::error::{MuskatError, Result};
use crate::spectral::{wavenumber, FourierOps, PeriodicField1D};

pub const DEFAULT_J_MIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strip {
    /// `𝕊¹ × (-1, 0)`, below the free interface.
    Upper,
    /// `𝕊¹ × (-2, -1)`, below the permeability curve.
    Lower,
}

impl Strip {
    pub fn bottom(self) -> f64 {
        match self {
            Strip::Upper => -1.0,
            Strip::Lower => -2.0,
        }
    }

    pub fn top(self) -> f64 {
        self.bottom() + 1.0
    }
}

/// Tensor grid on one reference strip; levels include both strip boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StripGrid {
    pub strip: Strip,
    pub n1: usize,
    pub n2: usize,
}

impl StripGrid {
    pub fn new(strip: Strip, n1: usize, n2: usize) -> Result<Self> {
        if n2 < 3 {
            return Err(MuskatError::InvalidInput(format!(
                "strip needs at least 3 vertical levels, got {n2}"
            )));
        }
        if n1 < 4 || !n1.is_multiple_of(2) {
            return Err(MuskatError::InvalidInput(format!(
                "horizontal resolution must be even and >= 4, got {n1}"
            )));
        }
        Ok(Self { strip, n1, n2 })
    }

    pub fn dx2(&self) -> f64 {
        1.0 / (self.n2 - 1) as f64
    }

    pub fn dx1(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.n1 as f64
    }

    /// Height of level `m` (level 0 is the strip bottom).
    pub fn level(&self, m: usize) -> f64 {
        self.strip.bottom() + m as f64 * self.dx2()
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, m: usize, j: usize) -> usize {
        m * self.n1 + j
    }
}

/// Scalar on a strip grid, stored level by level (`values[m * n1 + j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct StripField {
    pub grid: StripGrid,
    pub values: Vec<f64>,
}

impl StripField {
    pub fn zeros(grid: StripGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: StripGrid, g: impl Fn(f64, f64) -> f64) -> Self {
        let x1 = crate::spectral::grid_nodes(grid.n1);
        let mut values = Vec::with_capacity(grid.len());
        for m in 0..grid.n2 {
            let x2 = grid.level(m);
            values.extend(x1.iter().map(|&x| g(x, x2)));
        }
        Self { grid, values }
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let n1 = self.grid.n1;
        &self.values[m * n1..(m + 1) * n1]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [f64] {
        let n1 = self.grid.n1;
        &mut self.values[m * n1..(m + 1) * n1]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Spectral `x₁`-derivative of every level.
    pub fn d_dx1(&self, ops: &FourierOps, order: u32) -> Self {
        let mut out = Self::zeros(self.grid);
        for m in 0..self.grid.n2 {
            let d = ops.deriv(self.row(m), order);
            out.row_mut(m).copy_from_slice(&d);
        }
        out
    }

    /// Second-order `x₂`-derivative: central inside, one-sided 3-point at the strip ends.
    pub fn d_dx2(&self) -> Self {
        let g = self.grid;
        let h = g.dx2();
        let n2 = g.n2;
        let mut out = Self::zeros(g);
        for j in 0..g.n1 {
            let v = |m: usize| self.values[g.idx(m, j)];
            out.values[g.idx(0, j)] = (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * h);
            for m in 1..n2 - 1 {
                out.values[g.idx(m, j)] = (v(m + 1) - v(m - 1)) / (2.0 * h);
            }
            out.values[g.idx(n2 - 1, j)] =
                (3.0 * v(n2 - 1) - 4.0 * v(n2 - 2) + v(n2 - 3)) / (2.0 * h);
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `∫ v² dx` with exact quadrature in `x₁` and trapezoid in `x₂`.
    pub fn l2_norm_sq(&self) -> f64 {
        let g = self.grid;
        let w1 = g.dx1();
        let mut total = 0.0;
        for m in 0..g.n2 {
            let wt = if m == 0 || m == g.n2 - 1 { 0.5 } else { 1.0 } * g.dx2();
            total += wt * w1 * self.row(m).iter().map(|v| v * v).sum::<f64>();
        }
        total
    }
}

/// Pointwise 2×2 matrix field.
#[derive(Debug, Clone, PartialEq)]
pub struct MatField {
    pub xx: StripField,
    pub xy: StripField,
    pub yx: StripField,
    pub yy: StripField,
}

impl MatField {
    pub fn at(&self, i: usize) -> [[f64; 2]; 2] {
        [
            [self.xx.values[i], self.xy.values[i]],
            [self.yx.values[i], self.yy.values[i]],
        ]
    }

    pub fn max_abs(&self) -> f64 {
        self.xx
            .max_abs()
            .max(self.xy.max_abs())
            .max(self.yx.max_abs())
            .max(self.yy.max_abs())
    }
}

/// Permeability curve `x₂ = -1 + f(x₁)` and the two conductivities.
#[derive(Debug, Clone)]
pub struct PermeabilityProfile {
    pub f: PeriodicField1D,
    pub beta_plus: f64,
    pub beta_minus: f64,
}

impl PermeabilityProfile {
    pub fn new(f: PeriodicField1D, beta_plus: f64, beta_minus: f64, gap_tol: f64) -> Result<Self> {
        if !(beta_plus > 0.0 && beta_minus > 0.0 && beta_plus.is_finite() && beta_minus.is_finite()) {
            return Err(MuskatError::InvalidInput(format!(
                "permeabilities must be positive, got ({beta_plus}, {beta_minus})"
            )));
        }
        if f.min() <= -1.0 + gap_tol {
            return Err(MuskatError::InvalidInput(format!(
                "permeability curve touches the bottom: min f = {}",
                f.min()
            )));
        }
        Ok(Self {
            f,
            beta_plus,
            beta_minus,
        })
    }

    /// Flat curve `f ≡ 0`.
    pub fn flat(n1: usize, beta_plus: f64, beta_minus: f64) -> Result<Self> {
        Self::new(PeriodicField1D::zeros(n1)?, beta_plus, beta_minus, 0.0)
    }

    pub fn beta(&self, strip: Strip) -> f64 {
        match strip {
            Strip::Upper => self.beta_plus,
            Strip::Lower => self.beta_minus,
        }
    }
}

/// Vertical profile factors `(bottom weight, top weight)` of the Dirichlet
/// solution of `(∂₂² - k²)φ = 0` on `s ∈ [0, 1]`, and their `s`-derivatives.
fn mode_profile(k: f64, s: f64) -> (f64, f64, f64, f64) {
    if k == 0.0 {
        return (1.0 - s, s, -1.0, 1.0);
    }
    // sinh(k a)/sinh(k) = e^{-k(1-a)} (1 - e^{-2ka}) / (1 - e^{-2k})
    let denom = 1.0 - (-2.0 * k).exp();
    let top = (-k * (1.0 - s)).exp() * (1.0 - (-2.0 * k * s).exp()) / denom;
    let bot = (-k * s).exp() * (1.0 - (-2.0 * k * (1.0 - s)).exp()) / denom;
    let dtop = k * (-k * (1.0 - s)).exp() * (1.0 + (-2.0 * k * s).exp()) / denom;
    let dbot = -k * (-k * s).exp() * (1.0 + (-2.0 * k * (1.0 - s)).exp()) / denom;
    (bot, top, dbot, dtop)
}

fn strip_traces<'a>(
    h: &'a PeriodicField1D,
    f: &'a PeriodicField1D,
    strip: Strip,
) -> (&'a PeriodicField1D, Option<&'a PeriodicField1D>) {
    match strip {
        Strip::Upper => (f, Some(h)),
        Strip::Lower => (f, None),
    }
}

fn extend(
    h: &PeriodicField1D,
    f: &PeriodicField1D,
    grid: StripGrid,
    derivative: bool,
) -> Result<StripField> {
    if h.n_modes() != grid.n1 || f.n_modes() != grid.n1 {
        return Err(MuskatError::ResolutionMismatch(format!(
            "h has {} nodes, f has {}, grid has {}",
            h.n_modes(),
            f.n_modes(),
            grid.n1
        )));
    }
    let ops = FourierOps::new(grid.n1);
    let n1 = grid.n1;
    // Dirichlet data: (bottom, top) of the strip.
    let (bottom_data, top_data): (Vec<Complex64>, Vec<Complex64>) = match strip_traces(h, f, grid.strip) {
        (perm, Some(iface)) => (ops.forward(perm.values()), ops.forward(iface.values())),
        (perm, None) => (vec![Complex64::new(0.0, 0.0); n1], ops.forward(perm.values())),
    };
    let mut out = StripField::zeros(grid);
    let mut spec = vec![Complex64::new(0.0, 0.0); n1];
    for m in 0..grid.n2 {
        let s = m as f64 * grid.dx2();
        for idx in 0..n1 {
            let k = wavenumber(idx, n1).unsigned_abs() as f64;
            let (b, t, db, dt) = mode_profile(k, s);
            spec[idx] = if derivative {
                bottom_data[idx] * db + top_data[idx] * dt
            } else {
                bottom_data[idx] * b + top_data[idx] * t
            };
        }
        out.row_mut(m).copy_from_slice(&ops.inverse(spec.clone()));
    }
    Ok(out)
}

/// Harmonic extension of the strip's Dirichlet traces onto its grid.
///
/// Upper strip: `h` at `x₂ = 0`, `f` at `x₂ = -1`. Lower strip: `f` at
/// `x₂ = -1`, zero at `x₂ = -2`.
pub fn harmonic_extension(
    h: &PeriodicField1D,
    f: &PeriodicField1D,
    grid: StripGrid,
) -> Result<StripField> {
    extend(h, f, grid, false)
}

/// Exact (mode-analytic) vertical derivative of the harmonic extension.
pub fn harmonic_extension_dx2(
    h: &PeriodicField1D,
    f: &PeriodicField1D,
    grid: StripGrid,
) -> Result<StripField> {
    extend(h, f, grid, true)
}

/// Pulled-back geometry on one strip.
#[derive(Debug, Clone)]
pub struct MetricPack {
    pub grid: StripGrid,
    pub beta: f64,
    pub delta_psi: StripField,
    /// `δψ,₁`
    pub d1: StripField,
    /// `δψ,₂`
    pub d2: StripField,
    /// `J = 1 + δψ,₂`
    pub j: StripField,
    /// `A = (∇ψ)⁻¹`
    pub a: MatField,
    /// `K = β J A Aᵀ`
    pub k: MatField,
}

/// Assemble `J`, `A` and `K = βJAAᵀ` from `δψ`.
pub fn metric_terms(
    delta_psi: &StripField,
    profile: &PermeabilityProfile,
    j_min: f64,
) -> Result<MetricPack> {
    let grid = delta_psi.grid;
    if delta_psi.values.iter().any(|v| !v.is_finite()) {
        return Err(MuskatError::InvalidInput("δψ has non-finite entries".into()));
    }
    let ops = FourierOps::new(grid.n1);
    let d1 = delta_psi.d_dx1(&ops, 1);
    let d2 = delta_psi.d_dx2();
    metric_from_derivatives(delta_psi.clone(), d1, d2, profile.beta(grid.strip), j_min)
}

pub(crate) fn metric_from_derivatives(
    delta_psi: StripField,
    d1: StripField,
    d2: StripField,
    beta: f64,
    j_min: f64,
) -> Result<MetricPack> {
    let grid = delta_psi.grid;
    let j = d2.map(|s| 1.0 + s);
    let min_j = j.min();
    if min_j <= j_min || !min_j.is_finite() {
        return Err(MuskatError::DiffeoDegenerate { min_j, j_min });
    }
    let a = MatField {
        xx: StripField {
            grid,
            values: vec![1.0; grid.len()],
        },
        xy: StripField::zeros(grid),
        yx: d1.zip_with(&j, |p, jj| -p / jj),
        yy: j.map(|jj| 1.0 / jj),
    };
    // K = β [[J, -δψ,₁], [-δψ,₁, (1 + δψ,₁²)/J]]
    let k = MatField {
        xx: j.map(|jj| beta * jj),
        xy: d1.map(|p| -beta * p),
        yx: d1.map(|p| -beta * p),
        yy: d1.zip_with(&j, |p, jj| beta * (1.0 + p * p) / jj),
    };
    Ok(MetricPack {
        grid,
        beta,
        delta_psi,
        d1,
        d2,
        j,
        a,
        k,
    })
}

impl MetricPack {
    /// Uniform pack with `δψ ≡ 0` (`K = βI`).
    pub fn identity(grid: StripGrid, beta: f64) -> Self {
        let z = StripField::zeros(grid);
        metric_from_derivatives(z.clone(), z.clone(), z, beta, 0.0)
            .expect("identity metric is non-degenerate")
    }

    pub fn min_j(&self) -> f64 {
        self.j.min()
    }

    /// `max |(J A^k_i),_k|` with the pack's own stencils.
    pub fn piola_residual(&self) -> f64 {
        let ops = FourierOps::new(self.grid.n1);
        let ja = |m: &StripField| m.zip_with(&self.j, |a, jj| a * jj);
        // column i: ∂₁(J A^1_i) + ∂₂(J A^2_i)
        let c1 = ja(&self.a.xx).d_dx1(&ops, 1).zip_with(&ja(&self.a.yx).d_dx2(), |a, b| a + b);
        let c2 = ja(&self.a.xy).d_dx1(&ops, 1).zip_with(&ja(&self.a.yy).d_dx2(), |a, b| a + b);
        c1.max_abs().max(c2.max_abs())
    }

    /// `Id - (∇ψ)ᵀ∇ψ / J`: the nonlinear part of the pulled-back Darcy law.
    pub fn nonlinear_gap(&self) -> MatField {
        let g = self.grid;
        let mut out = MatField {
            xx: StripField::zeros(g),
            xy: StripField::zeros(g),
            yx: StripField::zeros(g),
            yy: StripField::zeros(g),
        };
        for i in 0..g.len() {
            let p1 = self.d1.values[i];
            let p2 = self.d2.values[i];
            let jj = self.j.values[i];
            out.xx.values[i] = (p2 - p1 * p1) / jj;
            out.xy.values[i] = -p1;
            out.yx.values[i] = -p1;
            out.yy.values[i] = -p2;
        }
        out
    }

    /// `Id - J A Aᵀ`, the coefficient perturbation driving the fixed-point form.
    pub fn coefficient_gap(&self) -> MatField {
        let b = self.beta;
        MatField {
            xx: self.k.xx.map(|v| 1.0 - v / b),
            xy: self.k.xy.map(|v| -v / b),
            yx: self.k.yx.map(|v| -v / b),
            yy: self.k.yy.map(|v| 1.0 - v / b),
        }
    }
}

/// Both strips' geometry for a given interface.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub upper: MetricPack,
    pub lower: MetricPack,
}

impl Geometry {
    pub fn build(
        h: &PeriodicField1D,
        profile: &PermeabilityProfile,
        n2_plus: usize,
        n2_minus: usize,
        j_min: f64,
    ) -> Result<Self> {
        let n1 = h.n_modes();
        let gu = StripGrid::new(Strip::Upper, n1, n2_plus)?;
        let gl = StripGrid::new(Strip::Lower, n1, n2_minus)?;
        let upper = metric_terms(&harmonic_extension(h, &profile.f, gu)?, profile, j_min)?;
        let lower = metric_terms(&harmonic_extension(h, &profile.f, gl)?, profile, j_min)?;
        Ok(Self { upper, lower })
    }
}
