//! Periodic fields on the circle `[-π, π)` with nodal and Fourier views.
//!
//! Nodes sit at `x_j = -π + 2πj/N` with `N` even. Fourier coefficients are
//! normalized so that `h(x) = Σ_k ĥ_k e^{ikx}`, which makes the zeroth
//! Sobolev norm agree with `∫ |h|² dx` (Parseval).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{MuskatError, Result};

type PlanCache = Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>;

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<PlanCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// Signed wavenumber of FFT slot `idx` for a transform of length `n`.
#[inline]
pub fn wavenumber(idx: usize, n: usize) -> i64 {
    if idx <= n / 2 {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

/// Reusable forward/inverse transforms for one grid size.
///
/// Works on raw FFT-ordered spectra (`Σ_j h_j e^{-2πijk/N}` scaled by `1/N`);
/// the grid phase `(-1)^k` is irrelevant for multipliers and is only applied
/// when coefficients are exposed through [`PeriodicField1D::coeffs`].
#[derive(Clone)]
pub struct FourierOps {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FourierOps {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierOps").field("n", &self.n).finish()
    }
}

impl FourierOps {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            fwd: plan(n, false),
            inv: plan(n, true),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(values.len(), self.n);
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        for c in &mut buf {
            *c *= scale;
        }
        buf
    }

    pub fn inverse(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        debug_assert_eq!(spectrum.len(), self.n);
        self.inv.process(&mut spectrum);
        spectrum.into_iter().map(|c| c.re).collect()
    }

    /// Apply a real even multiplier `m(k)` (symmetric in k) to a real signal.
    pub fn multiply(&self, values: &[f64], symbol: impl Fn(i64) -> f64) -> Vec<f64> {
        let mut spec = self.forward(values);
        for (idx, c) in spec.iter_mut().enumerate() {
            *c *= symbol(wavenumber(idx, self.n));
        }
        self.inverse(spec)
    }

    /// Spectral derivative of the given order; the Nyquist mode is dropped
    /// for odd orders.
    pub fn deriv(&self, values: &[f64], order: u32) -> Vec<f64> {
        if order == 0 {
            return values.to_vec();
        }
        let mut spec = self.forward(values);
        self.deriv_spectrum(&mut spec, order);
        self.inverse(spec)
    }

    pub fn deriv_spectrum(&self, spec: &mut [Complex64], order: u32) {
        let n = self.n;
        for (idx, c) in spec.iter_mut().enumerate() {
            let k = wavenumber(idx, n);
            if order % 2 == 1 && idx == n / 2 {
                *c = Complex64::new(0.0, 0.0);
                continue;
            }
            *c *= Complex64::new(0.0, k as f64).powu(order);
        }
    }

    /// Dense matrix of the first spectral derivative, `S[j][l] = ∂(e_l)/∂x (x_j)`.
    pub fn deriv_matrix(&self) -> Vec<f64> {
        let n = self.n;
        let mut mat = vec![0.0; n * n];
        let mut unit = vec![0.0; n];
        for l in 0..n {
            unit.iter_mut().for_each(|v| *v = 0.0);
            unit[l] = 1.0;
            let col = self.deriv(&unit, 1);
            for j in 0..n {
                mat[j * n + l] = col[j];
            }
        }
        mat
    }
}

/// Sobolev exponent `s ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SobolevIndex(f64);

impl SobolevIndex {
    pub const L2: Self = Self(0.0);

    pub fn new(s: f64) -> Result<Self> {
        if s.is_finite() && s >= 0.0 {
            Ok(Self(s))
        } else {
            Err(MuskatError::InvalidInput(format!(
                "Sobolev index must be finite and non-negative, got {s}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Real scalar field on the periodic interval, sampled at `N` equispaced nodes.
#[derive(Debug, Clone)]
pub struct PeriodicField1D {
    values: Vec<f64>,
    coeffs: OnceLock<Vec<Complex64>>,
}

impl PartialEq for PeriodicField1D {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl PeriodicField1D {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 2 || !n.is_multiple_of(2) {
            return Err(MuskatError::InvalidInput(format!(
                "periodic field needs an even number of nodes >= 2, got {n}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MuskatError::InvalidInput(
                "periodic field has non-finite samples".into(),
            ));
        }
        Ok(Self {
            values,
            coeffs: OnceLock::new(),
        })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::from_values(vec![0.0; n])
    }

    /// Sample `g` at the grid nodes.
    pub fn from_fn(n: usize, g: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_values(grid_nodes(n).into_iter().map(g).collect())
    }

    /// Build from coefficients given in FFT order (`ĥ_k` at slot `k mod N`).
    pub fn from_coeffs(coeffs: &[Complex64]) -> Result<Self> {
        let n = coeffs.len();
        let ops = FourierOps::new(n);
        let raw: Vec<Complex64> = coeffs
            .iter()
            .enumerate()
            .map(|(idx, &c)| c * phase(wavenumber(idx, n)))
            .collect();
        Self::from_values(ops.inverse(raw))
    }

    pub fn n_modes(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn nodes(&self) -> Vec<f64> {
        grid_nodes(self.n_modes())
    }

    pub fn dx(&self) -> f64 {
        2.0 * PI / self.n_modes() as f64
    }

    fn ops(&self) -> FourierOps {
        FourierOps::new(self.n_modes())
    }

    /// Fourier coefficients `ĥ_k` in FFT order (slot `k mod N`).
    pub fn coeffs(&self) -> &[Complex64] {
        self.coeffs.get_or_init(|| {
            let n = self.n_modes();
            let raw = self.ops().forward(&self.values);
            raw.into_iter()
                .enumerate()
                .map(|(idx, c)| c * phase(wavenumber(idx, n)))
                .collect()
        })
    }

    pub fn deriv(&self, order: u32) -> Result<Self> {
        if order > 4 {
            return Err(MuskatError::InvalidInput(format!(
                "derivative order {order} exceeds 4"
            )));
        }
        Self::from_values(self.ops().deriv(&self.values, order))
    }

    pub fn sobolev_norm(&self, s: SobolevIndex) -> f64 {
        let n = self.n_modes();
        let sum: f64 = self
            .coeffs()
            .iter()
            .enumerate()
            .map(|(idx, c)| {
                let k = wavenumber(idx, n) as f64;
                (1.0 + k * k).powf(s.value()) * c.norm_sqr()
            })
            .sum();
        (2.0 * PI * sum).sqrt()
    }

    /// Gaussian Fourier mollifier `ĥ_k ↦ e^{-δ²k²} ĥ_k`.
    pub fn mollify(&self, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(MuskatError::InvalidInput(format!(
                "mollifier width must be positive, got {delta}"
            )));
        }
        let d2 = delta * delta;
        let out = self
            .ops()
            .multiply(&self.values, |k| (-(d2) * (k * k) as f64).exp());
        Self::from_values(out)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.n_modes() as f64
    }

    pub fn project_zero_mean(&self) -> Self {
        let m = self.mean();
        Self {
            values: self.values.iter().map(|v| v - m).collect(),
            coeffs: OnceLock::new(),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Trapezoidal (spectrally exact) integral over the period.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx()
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| a * v).collect(),
            coeffs: OnceLock::new(),
        }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self> {
        if other.n_modes() != self.n_modes() {
            return Err(MuskatError::ResolutionMismatch(format!(
                "{} vs {} nodes",
                self.n_modes(),
                other.n_modes()
            )));
        }
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
            coeffs: OnceLock::new(),
        })
    }

    /// Amplitude of the `cos(kx)`/`sin(kx)` content at wavenumber `k ≥ 1`, i.e. `2|ĥ_k|`.
    pub fn mode_amplitude(&self, k: usize) -> f64 {
        let n = self.n_modes();
        let c = self.coeffs()[k % n];
        if k == n / 2 {
            c.norm()
        } else {
            2.0 * c.norm()
        }
    }
}

/// `e^{-ikπ}`: shift between grid-origin and `x = 0` coefficients.
fn phase(k: i64) -> f64 {
    if k.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn grid_nodes(n: usize) -> Vec<f64> {
    (0..n).map(|j| -PI + 2.0 * PI * j as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const N: usize = 32;

    fn field(g: impl Fn(f64) -> f64) -> PeriodicField1D {
        PeriodicField1D::from_fn(N, g).unwrap()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn derivative_of_cosine() {
        let d = field(f64::cos).deriv(1).unwrap();
        let expect = field(|x| -x.sin());
        assert!(max_diff(d.values(), expect.values()) < 1e-13);
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let d = field(|_| 3.5).deriv(1).unwrap();
        assert!(d.max_abs() < 1e-14);
    }

    #[test]
    fn second_derivative_eigenfunction() {
        let d = field(|x| (3.0 * x).sin()).deriv(2).unwrap();
        let expect = field(|x| -9.0 * (3.0 * x).sin());
        assert!(max_diff(d.values(), expect.values()) < 1e-12);
    }

    #[test]
    fn derivative_order_limit() {
        assert!(field(f64::cos).deriv(5).is_err());
    }

    #[test]
    fn odd_derivative_drops_nyquist() {
        let nyq = field(|x| (16.0 * x).cos());
        assert!(nyq.deriv(1).unwrap().max_abs() < 1e-12);
        let d2 = nyq.deriv(2).unwrap();
        assert!((d2.max_abs() - 256.0).abs() < 1e-9);
    }

    #[test]
    fn sobolev_norms_of_cosine() {
        let c = field(f64::cos);
        let s0 = c.sobolev_norm(SobolevIndex::new(0.0).unwrap());
        let s1 = c.sobolev_norm(SobolevIndex::new(1.0).unwrap());
        assert!((s0 * s0 - PI).abs() < 1e-12);
        assert!((s1 * s1 - 2.0 * PI).abs() < 1e-12);
        let z = field(|_| 0.0).sobolev_norm(SobolevIndex::new(2.5).unwrap());
        assert_eq!(z, 0.0);
    }

    #[test]
    fn sobolev_index_validation() {
        assert!(SobolevIndex::new(-0.5).is_err());
        assert!(SobolevIndex::new(f64::NAN).is_err());
    }

    #[test]
    fn mollifier_examples() {
        let c = field(|_| 2.0).mollify(0.3).unwrap();
        assert!(max_diff(c.values(), &[2.0; N]) < 1e-14);
        let m = field(f64::cos).mollify(0.4).unwrap();
        let expect = field(|x| (-0.16f64).exp() * x.cos());
        assert!(max_diff(m.values(), expect.values()) < 1e-14);
        let h = field(|x| (x.sin()).exp());
        let tiny = h.mollify(1e-12).unwrap();
        assert!(max_diff(tiny.values(), h.values()) < 1e-14);
        assert!(field(f64::cos).mollify(0.0).is_err());
    }

    #[test]
    fn mean_and_projection() {
        assert!(field(f64::cos).mean().abs() < 1e-15);
        let f = field(|x| 1.0 + x.cos());
        assert!((f.mean() - 1.0).abs() < 1e-15);
        let p = f.project_zero_mean();
        assert!(max_diff(p.values(), field(f64::cos).values()) < 1e-15);
    }

    #[test]
    fn coefficients_of_shifted_grid() {
        let c = field(f64::cos).coeffs().to_vec();
        assert!((c[1].re - 0.5).abs() < 1e-14 && c[1].im.abs() < 1e-14);
        assert!((c[N - 1].re - 0.5).abs() < 1e-14);
        let s = field(f64::sin).coeffs().to_vec();
        assert!((s[1].im + 0.5).abs() < 1e-14);
        let back = PeriodicField1D::from_coeffs(&c).unwrap();
        assert!(max_diff(back.values(), field(f64::cos).values()) < 1e-14);
    }

    #[test]
    fn rejects_odd_resolution() {
        assert!(PeriodicField1D::from_values(vec![0.0; 7]).is_err());
    }

    #[test]
    fn derivative_matrix_matches_fft() {
        let ops = FourierOps::new(16);
        let s = ops.deriv_matrix();
        let h: Vec<f64> = grid_nodes(16).iter().map(|x| (2.0 * x).sin() + x.cos()).collect();
        let via_fft = ops.deriv(&h, 1);
        for j in 0..16 {
            let row: f64 = (0..16).map(|l| s[j * 16 + l] * h[l]).sum();
            assert!((row - via_fft[j]).abs() < 1e-12);
        }
        // antisymmetric
        for j in 0..16 {
            for l in 0..16 {
                assert!((s[j * 16 + l] + s[l * 16 + j]).abs() < 1e-12);
            }
        }
    }

    fn band_limited() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, 2 * 10).prop_map(|ab| {
            grid_nodes(N)
                .iter()
                .map(|&x| {
                    (0..10)
                        .map(|k| {
                            let kk = (k + 1) as f64;
                            ab[2 * k] * (kk * x).cos() + ab[2 * k + 1] * (kk * x).sin()
                        })
                        .sum()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn round_trip_nodal_spectral(vals in prop::collection::vec(-5.0f64..5.0, N)) {
            let f = PeriodicField1D::from_values(vals.clone()).unwrap();
            let back = PeriodicField1D::from_coeffs(f.coeffs()).unwrap();
            let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            prop_assert!(max_diff(back.values(), &vals) <= 10.0 * f64::EPSILON * scale * 8.0);
        }

        #[test]
        fn hermitian_symmetry(vals in prop::collection::vec(-5.0f64..5.0, N)) {
            let f = PeriodicField1D::from_values(vals).unwrap();
            let c = f.coeffs();
            for k in 1..N {
                prop_assert!((c[k] - c[N - k].conj()).norm() < 1e-12);
            }
        }

        #[test]
        fn parseval(vals in band_limited()) {
            let f = PeriodicField1D::from_values(vals.clone()).unwrap();
            let s0 = f.sobolev_norm(SobolevIndex::new(0.0).unwrap());
            let quad: f64 = vals.iter().map(|v| v * v).sum::<f64>() * f.dx();
            prop_assert!((s0 * s0 - quad).abs() <= 1e-12 * quad.max(1e-300));
        }

        #[test]
        fn first_derivative_twice(vals in band_limited()) {
            let f = PeriodicField1D::from_values(vals).unwrap();
            let a = f.deriv(1).unwrap().deriv(1).unwrap();
            let b = f.deriv(2).unwrap();
            prop_assert!(max_diff(a.values(), b.values()) < 1e-10);
        }

        #[test]
        fn mollifier_contracts_and_commutes(vals in band_limited(), delta in 0.01f64..1.0, s in 0.0f64..3.0) {
            let f = PeriodicField1D::from_values(vals).unwrap();
            let m = f.mollify(delta).unwrap();
            let idx = SobolevIndex::new(s).unwrap();
            prop_assert!(m.sobolev_norm(idx) <= f.sobolev_norm(idx) * (1.0 + 1e-12));
            let a = m.deriv(1).unwrap();
            let b = f.deriv(1).unwrap().mollify(delta).unwrap();
            prop_assert!(max_diff(a.values(), b.values()) < 1e-11);
            prop_assert!((m.mean() - f.mean()).abs() < 1e-14);
        }
    }
}
