//! Scalar observers of a run and the linearized decay oracle.

use nalgebra::{Matrix4, Vector4};
use serde::Serialize;

use crate::diffeo::{Geometry, MetricPack, PermeabilityProfile, StripField};
use crate::error::{MuskatError, Result};
use crate::pressure::{HeadSolution, VelocityField};
use crate::spectral::{FourierOps, PeriodicField1D, SobolevIndex};

/// Snapshot of every tracked quantity at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub t: f64,
    /// `|h|₀`
    pub l2_h: f64,
    /// `|h|₂`
    pub h2_h: f64,
    /// `|h|_{2.5}`
    pub h2p5_h: f64,
    /// `max_s |h|₂² + ∫₀ᵗ (‖v‖²_{2,±} + |h|²_{2.5}) ds`
    pub e_running: f64,
    /// `ℰ = |h''|₀²`
    pub script_e: f64,
    /// `𝒟 = ‖w''‖²_{0,±}`, tangential derivatives only.
    pub script_d: f64,
    /// `min_Γ (w₂⁺ + 1)`
    pub rt_margin: f64,
    /// `(|h|₀² + 2∫₀ᵗ ‖√(J/β) v‖²_{0,±} ds - |h₀|₀²) / |h₀|₀²`, or the
    /// unnormalized value when `h₀ = 0`.
    pub l2_law_residual: f64,
    /// `|h''|_{0.5} / ‖w''‖_{0,±}`; zero when both vanish.
    pub coupling_ratio: f64,
    /// `‖√(J/β) v‖²_{0,±}`
    pub dissipation: f64,
    /// `mean(h)`
    pub mean_h: f64,
    /// `∫_Γ w₂⁺ dx₁`
    pub top_flux: f64,
}

/// Running-integral state that `report` needs from earlier samples.
#[derive(Debug, Clone)]
pub struct EnergyHistory {
    h0_l2_sq: f64,
    max_h2_sq: f64,
    integral: f64,
    last: Option<(f64, f64)>,
}

impl EnergyHistory {
    pub fn new(h0: &PeriodicField1D) -> Self {
        Self {
            h0_l2_sq: h0.sobolev_norm(SobolevIndex::L2).powi(2),
            max_h2_sq: 0.0,
            integral: 0.0,
            last: None,
        }
    }

    pub fn initial_l2_sq(&self) -> f64 {
        self.h0_l2_sq
    }
}

fn sobolev(h: &PeriodicField1D, s: f64) -> f64 {
    h.sobolev_norm(SobolevIndex::new(s).expect("constant index is valid"))
}

/// Velocity `v = ∇ψ w / J` in the reference frame of one strip.
fn eulerian_velocity(pack: &MetricPack, w: &VelocityField) -> (StripField, StripField) {
    let v1 = w.w1.zip_with(&pack.j, |a, j| a / j);
    let mut v2 = w.w2.clone();
    for i in 0..v2.values.len() {
        v2.values[i] += pack.d1.values[i] * v1.values[i];
    }
    (v1, v2)
}

/// `‖√(J/β) v‖²_{0,±}`, the dissipation in the basic energy law.
pub fn l2_dissipation(geo: &Geometry, head: &HeadSolution) -> f64 {
    [&geo.upper, &geo.lower]
        .into_iter()
        .map(|pack| {
            let (v1, v2) = eulerian_velocity(pack, head.velocity(pack.grid.strip));
            let dens = StripField {
                grid: pack.grid,
                values: (0..v1.values.len())
                    .map(|i| {
                        let sq = v1.values[i].powi(2) + v2.values[i].powi(2);
                        (pack.j.values[i] * sq / pack.beta).sqrt()
                    })
                    .collect(),
            };
            dens.l2_norm_sq()
        })
        .sum()
}

/// `‖u‖²_{2}` over all derivatives `∂₁ᵃ∂₂ᵇ`, `a + b ≤ 2`.
fn h2_norm_sq(u: &StripField, ops: &FourierOps) -> f64 {
    let u1 = u.d_dx1(ops, 1);
    let u2 = u.d_dx2();
    [
        u.l2_norm_sq(),
        u1.l2_norm_sq(),
        u2.l2_norm_sq(),
        u.d_dx1(ops, 2).l2_norm_sq(),
        u1.d_dx2().l2_norm_sq(),
        u2.d_dx2().l2_norm_sq(),
    ]
    .iter()
    .sum()
}

/// Compute the report at time `t` and advance the running integrals.
///
/// `dissipation_integral` is `∫₀ᵗ ‖√(J/β) v‖² ds` as accumulated by the
/// time stepper.
pub fn report(
    t: f64,
    h: &PeriodicField1D,
    head: &HeadSolution,
    geo: &Geometry,
    dissipation_integral: f64,
    history: &mut EnergyHistory,
) -> EnergyReport {
    let ops = FourierOps::new(h.n_modes());
    let l2_h = sobolev(h, 0.0);
    let h2_h = sobolev(h, 2.0);
    let h2p5_h = sobolev(h, 2.5);
    let hpp = h.deriv(2).expect("order 2 is supported");
    let script_e = sobolev(&hpp, 0.0).powi(2);

    let mut script_d = 0.0;
    let mut v_h2 = 0.0;
    for pack in [&geo.upper, &geo.lower] {
        let w = head.velocity(pack.grid.strip);
        script_d += w.w1.d_dx1(&ops, 2).l2_norm_sq() + w.w2.d_dx1(&ops, 2).l2_norm_sq();
        let (v1, v2) = eulerian_velocity(pack, w);
        v_h2 += h2_norm_sq(&v1, &ops) + h2_norm_sq(&v2, &ops);
    }

    let hpp_half = sobolev(&hpp, 0.5);
    let coupling_ratio = if script_d > 0.0 {
        hpp_half / script_d.sqrt()
    } else if hpp_half == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };

    let rt_margin = head.gamma_trace_w2.min() + 1.0;
    let dissipation = l2_dissipation(geo, head);

    let integrand = v_h2 + h2p5_h * h2p5_h;
    if let Some((t0, f0)) = history.last {
        history.integral += 0.5 * (t - t0) * (f0 + integrand);
    }
    history.last = Some((t, integrand));
    history.max_h2_sq = history.max_h2_sq.max(h2_h * h2_h);

    let defect = l2_h * l2_h + 2.0 * dissipation_integral - history.h0_l2_sq;
    let l2_law_residual = if history.h0_l2_sq > 0.0 {
        defect / history.h0_l2_sq
    } else {
        defect
    };

    EnergyReport {
        t,
        l2_h,
        h2_h,
        h2p5_h,
        e_running: history.max_h2_sq + history.integral,
        script_e,
        script_d,
        rt_margin,
        l2_law_residual,
        coupling_ratio,
        dissipation,
        mean_h: h.mean(),
        top_flux: head.gamma_trace_w2.integral(),
    }
}

/// Exponential fit to `|h''(t)|₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// `-2 ×` the least-squares slope of `log|h''|₀`.
    pub gamma_fit: f64,
    pub r_squared: f64,
}

impl DecayFit {
    /// Growth instead of decay points at a Rayleigh–Taylor unstable setup.
    pub fn rt_suspect(&self) -> bool {
        self.gamma_fit < 0.0
    }
}

/// Fit `|h''(t)|₀ ≈ C e^{-γt/2}` to `(t, |h''|₀)` samples.
pub fn decay_fit(samples: &[(f64, f64)]) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(t, y)| t.is_finite() && y.is_finite() && *y > 0.0)
        .map(|&(t, y)| (t, y.ln()))
        .collect();
    if pts.len() < 10 {
        return Err(MuskatError::InsufficientData(format!(
            "need at least 10 positive samples, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ym).powi(2)).sum();
    if stt == 0.0 {
        return Err(MuskatError::InsufficientData("all samples share one time".into()));
    }
    let slope = sty / stt;
    let r_squared = if syy == 0.0 { 1.0 } else { sty * sty / (stt * syy) };
    Ok(DecayFit {
        gamma_fit: -2.0 * slope,
        r_squared,
    })
}

/// `σ(k)` for `k = 1..=k_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionTable {
    pub modes: Vec<usize>,
    pub sigma: Vec<f64>,
}

impl DispersionTable {
    pub fn compute(k_max: usize, beta_plus: f64, beta_minus: f64) -> Result<Self> {
        if k_max == 0 {
            return Err(MuskatError::InvalidInput("k_max must be at least 1".into()));
        }
        let modes: Vec<usize> = (1..=k_max).collect();
        let sigma = modes
            .iter()
            .map(|&k| dispersion_rate_flat(k, beta_plus, beta_minus))
            .collect::<Result<_>>()?;
        Ok(Self { modes, sigma })
    }
}

/// Decay rate `σ(k)` of mode `k` for the flat two-layer configuration.
///
/// Solves the per-mode boundary-value problem for the head,
/// `P̂(x₂) = a⁺cosh kx₂ + b⁺sinh kx₂` above the permeability level and a
/// `cosh`/`sinh` pair about `x₂ = -2` below, with unit interface data,
/// continuity and `β`-weighted flux continuity at `x₂ = -1`, and no flux
/// through the bottom. Returns `-β⁺ P̂,₂(0)`.
pub fn dispersion_rate(k: usize, profile: &PermeabilityProfile) -> Result<f64> {
    if profile.f.max_abs() != 0.0 {
        return Err(MuskatError::InvalidInput(
            "dispersion relation is only available for a flat permeability curve".into(),
        ));
    }
    dispersion_rate_flat(k, profile.beta_plus, profile.beta_minus)
}

pub fn dispersion_rate_flat(k: usize, beta_plus: f64, beta_minus: f64) -> Result<f64> {
    if k == 0 {
        return Err(MuskatError::InvalidInput(
            "mode 0 is conserved; its rate is undefined".into(),
        ));
    }
    if !(beta_plus > 0.0 && beta_minus > 0.0) {
        return Err(MuskatError::InvalidInput("permeabilities must be positive".into()));
    }
    let kf = k as f64;
    let t = kf.tanh();
    // The rate is homogeneous of degree one in (β⁺, β⁻); solve with β⁺ = 1.
    let ratio = beta_minus / beta_plus;
    // Unknowns [a⁺, b⁺, α, γ] with the lower profile written as
    // (α cosh k(x₂+2) + γ sinh k(x₂+2)) / cosh k; continuity and flux rows
    // are divided by cosh k to stay finite for large k.
    #[rustfmt::skip]
    let m = Matrix4::new(
        1.0,               0.0,        0.0,              0.0,
        1.0,               -t,         -1.0,             -t,
        -t,                1.0,        -ratio * t,       -ratio,
        0.0,               0.0,        0.0,              1.0,
    );
    let rhs = Vector4::new(1.0, 0.0, 0.0, 0.0);
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| MuskatError::InvalidInput("singular per-mode system".into()))?;
    Ok(-beta_plus * kf * sol[1])
}
