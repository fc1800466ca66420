//! Pulled-back hydraulic head `P = Q + δψ` and the semi-ALE velocity `w = -K∇P`.
//!
//! `P` solves `div(K∇P) = 0` in both strips with `P = h` on the interface,
//! continuity of `P` and of the normal flux `K∇P·e₂` across the permeability
//! level, and `∂₂P = 0` on the bottom. Working with `P` instead of `Q` turns
//! every boundary and jump condition into a homogeneous or Dirichlet one.

mod direct;
mod fourier;
mod krylov;
pub(crate) mod operator;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diffeo::{MatField, MetricPack, PermeabilityProfile, Strip, StripField};
use crate::error::{MuskatError, Result};
use crate::spectral::{FourierOps, PeriodicField1D};

pub use operator::Layout;
use operator::{isotropic, residual, strip_fluxes, Side, StripFluxes};

/// Relative residual every linear solve must reach.
pub const SOLVER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Block-banded Gaussian elimination.
    #[default]
    Direct,
    /// GMRES preconditioned by the exact constant-coefficient solve.
    #[serde(rename = "cg", alias = "iterative")]
    Iterative,
}

/// Semi-ALE velocity on one strip.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub w1: StripField,
    pub w2: StripField,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct HeadSolution {
    pub p_plus: StripField,
    pub p_minus: StripField,
    pub w_plus: VelocityField,
    pub w_minus: VelocityField,
    /// `w₂⁺` on the interface: the discrete conservative flux through the top.
    pub gamma_trace_w2: PeriodicField1D,
    /// Discrete dissipation `Σ ∫ ∇P·K∇P` in the summation-by-parts form matched
    /// to the flux balances; `∫ h w₂⁺ = -discrete_dissipation` up to the solve residual.
    pub discrete_dissipation: f64,
    pub stats: SolveStats,
}

impl HeadSolution {
    /// Modified pressure `Q = P - δψ` on a strip.
    pub fn q(&self, pack: &MetricPack) -> StripField {
        let p = match pack.grid.strip {
            Strip::Upper => &self.p_plus,
            Strip::Lower => &self.p_minus,
        };
        p.zip_with(&pack.delta_psi, |a, b| a - b)
    }

    pub fn max_abs_w(&self) -> f64 {
        [
            &self.w_plus.w1,
            &self.w_plus.w2,
            &self.w_minus.w1,
            &self.w_minus.w2,
        ]
        .iter()
        .fold(0.0, |m, f| m.max(f.max_abs()))
    }

    pub fn velocity(&self, strip: Strip) -> &VelocityField {
        match strip {
            Strip::Upper => &self.w_plus,
            Strip::Lower => &self.w_minus,
        }
    }
}

fn deriv_matrix(n1: usize) -> Arc<DMatrix<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<DMatrix<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("derivative matrix cache poisoned");
    guard
        .entry(n1)
        .or_insert_with(|| {
            let flat = FourierOps::new(n1).deriv_matrix();
            Arc::new(DMatrix::from_row_slice(n1, n1, &flat))
        })
        .clone()
}

fn validate(
    upper: &MetricPack,
    lower: &MetricPack,
    h: &PeriodicField1D,
    profile: &PermeabilityProfile,
) -> Result<Layout> {
    if upper.grid.strip != Strip::Upper || lower.grid.strip != Strip::Lower {
        return Err(MuskatError::InvalidInput(
            "metric packs must be (upper, lower)".into(),
        ));
    }
    let n1 = upper.grid.n1;
    if lower.grid.n1 != n1 || h.n_modes() != n1 || profile.f.n_modes() != n1 {
        return Err(MuskatError::ResolutionMismatch(format!(
            "upper n1 = {n1}, lower n1 = {}, h has {}, f has {}",
            lower.grid.n1,
            h.n_modes(),
            profile.f.n_modes()
        )));
    }
    if upper.beta != profile.beta_plus || lower.beta != profile.beta_minus {
        return Err(MuskatError::InvalidInput(
            "metric packs were built for a different permeability profile".into(),
        ));
    }
    for pack in [upper, lower] {
        let mj = pack.min_j();
        if !(mj > 0.0) {
            return Err(MuskatError::NonSpdSystem(format!(
                "Jacobian not positive (min J = {mj})"
            )));
        }
    }
    Ok(Layout {
        upper: upper.grid,
        lower: lower.grid,
    })
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Full affine residual for unknowns `u` and interface data `h`.
fn full_residual(
    layout: &Layout,
    u: &[f64],
    h: &[f64],
    ku: &MatField,
    kl: &MatField,
    ops: &FourierOps,
) -> Vec<f64> {
    let (pu, pl) = layout.scatter(u, h);
    residual(layout, &pu, &pl, ku, kl, ops)
}

/// Solve the coupled head system.
pub fn solve_head(
    upper: &MetricPack,
    lower: &MetricPack,
    h: &PeriodicField1D,
    profile: &PermeabilityProfile,
    solver: SolverKind,
) -> Result<HeadSolution> {
    let layout = validate(upper, lower, h, profile)?;
    let ops = FourierOps::new(layout.n1());
    let n = layout.unknowns();
    let zero = vec![0.0; n];
    let hv = h.values();
    let b: Vec<f64> = full_residual(&layout, &zero, hv, &upper.k, &lower.k, &ops)
        .into_iter()
        .map(|v| -v)
        .collect();
    let bnorm = norm2(&b);
    let (u, stats) = if bnorm == 0.0 {
        (zero, SolveStats::default())
    } else {
        match solver {
            SolverKind::Direct => {
                let s = deriv_matrix(layout.n1());
                let (band, rhs) = operator::assemble(&layout, &upper.k, &lower.k, hv, &s);
                let factor = direct::BlockFactor::factor(band)?;
                let mut u = factor.solve(&rhs);
                let mut rel = f64::INFINITY;
                let mut refinements = 0;
                for _ in 0..4 {
                    let r = full_residual(&layout, &u, hv, &upper.k, &lower.k, &ops);
                    rel = norm2(&r) / bnorm;
                    if rel <= SOLVER_TOL || !rel.is_finite() {
                        break;
                    }
                    let neg: Vec<f64> = r.iter().map(|v| -v).collect();
                    let du = factor.solve(&neg);
                    for (ui, di) in u.iter_mut().zip(&du) {
                        *ui += di;
                    }
                    refinements += 1;
                }
                if !(rel <= SOLVER_TOL) {
                    return Err(MuskatError::NonSpdSystem(format!(
                        "direct solve reached only relative residual {rel:.3e}"
                    )));
                }
                (
                    u,
                    SolveStats {
                        iterations: refinements,
                        residual: rel,
                    },
                )
            }
            SolverKind::Iterative => {
                let pre = fourier::LaplaceSolver::new(layout, upper.beta, lower.beta);
                let zeros_top = vec![0.0; layout.n1()];
                let apply = |x: &[f64]| full_residual(&layout, x, &zeros_top, &upper.k, &lower.k, &ops);
                let out = krylov::gmres(apply, |r| pre.solve(r), &b, vec![0.0; n], SOLVER_TOL, 60, 600)?;
                (
                    out.x,
                    SolveStats {
                        iterations: out.iterations,
                        residual: out.residual,
                    },
                )
            }
        }
    };
    recover(&layout, &u, h, upper, lower, &ops, stats)
}

/// Fixed-point form: constant-coefficient solves `L(βI) Pₙ₊₁ = L(β(I - JAAᵀ)) Pₙ`
/// with `P = h` on the interface.
pub fn picard_head(
    upper: &MetricPack,
    lower: &MetricPack,
    h: &PeriodicField1D,
    profile: &PermeabilityProfile,
    max_iter: usize,
    tol: f64,
) -> Result<HeadSolution> {
    let layout = validate(upper, lower, h, profile)?;
    let ops = FourierOps::new(layout.n1());
    let n = layout.unknowns();
    let hv = h.values();
    let laplace = fourier::LaplaceSolver::new(layout, upper.beta, lower.beta);
    let iso_u = isotropic(layout.upper, upper.beta);
    let iso_l = isotropic(layout.lower, lower.beta);
    let gap = |p: &MetricPack| {
        let g = p.coefficient_gap();
        MatField {
            xx: g.xx.map(|v| p.beta * v),
            xy: g.xy.map(|v| p.beta * v),
            yx: g.yx.map(|v| p.beta * v),
            yy: g.yy.map(|v| p.beta * v),
        }
    };
    let gap_u = gap(upper);
    let gap_l = gap(lower);
    let zero = vec![0.0; n];
    let base: Vec<f64> = full_residual(&layout, &zero, hv, &iso_u, &iso_l, &ops)
        .into_iter()
        .map(|v| -v)
        .collect();

    let mut u = zero;
    let mut prev_step = f64::INFINITY;
    let mut growth = 0;
    for iteration in 1..=max_iter {
        let forcing = full_residual(&layout, &u, hv, &gap_u, &gap_l, &ops);
        let rhs: Vec<f64> = base.iter().zip(&forcing).map(|(a, b)| a + b).collect();
        let next = laplace.solve(&rhs);
        let step = next
            .iter()
            .zip(&u)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        u = next;
        if !step.is_finite() {
            return Err(MuskatError::NoContraction {
                ratio: f64::INFINITY,
                iteration,
            });
        }
        if step <= tol {
            let r = full_residual(&layout, &u, hv, &upper.k, &lower.k, &ops);
            let bnorm = norm2(&base).max(f64::MIN_POSITIVE);
            let stats = SolveStats {
                iterations: iteration,
                residual: norm2(&r) / bnorm,
            };
            return recover(&layout, &u, h, upper, lower, &ops, stats);
        }
        let ratio = step / prev_step;
        if iteration > 1 && ratio >= 1.0 {
            growth += 1;
            if growth >= 2 {
                return Err(MuskatError::NoContraction { ratio, iteration });
            }
        } else {
            growth = 0;
        }
        prev_step = step;
    }
    Err(MuskatError::NoContraction {
        ratio: f64::NAN,
        iteration: max_iter,
    })
}

fn velocity(layout: &Layout, side: Side, fx: &StripFluxes) -> VelocityField {
    let g = layout.grid(side);
    let n1 = g.n1;
    let w1 = fx.f1.map(|v| -v);
    let mut w2 = StripField::zeros(g);
    let half = 0.5 * g.dx2();
    for m in 0..g.n2 {
        let row = w2.row_mut(m);
        if m == 0 {
            if side == Side::Upper {
                // flux into the permeability level from above
                for j in 0..n1 {
                    row[j] = -(fx.face(0)[j] + half * fx.div1.row(0)[j]);
                }
            }
            // bottom: impermeable, w₂ = 0
        } else if m + 1 == g.n2 {
            for j in 0..n1 {
                row[j] = -(fx.face(m - 1)[j] - half * fx.div1.row(m)[j]);
            }
        } else {
            for j in 0..n1 {
                row[j] = -0.5 * (fx.face(m - 1)[j] + fx.face(m)[j]);
            }
        }
    }
    VelocityField { w1, w2 }
}

fn dissipation(layout: &Layout, side: Side, p: &StripField, fx: &StripFluxes) -> f64 {
    let g = layout.grid(side);
    let dx1 = g.dx1();
    let mut total = 0.0;
    for m in 0..g.n2 {
        let wt = layout.weight(side, m);
        let s: f64 = fx.dp1.row(m).iter().zip(fx.f1.row(m)).map(|(a, b)| a * b).sum();
        total += wt * dx1 * s;
        if m + 1 < g.n2 {
            let s2: f64 = p
                .row(m + 1)
                .iter()
                .zip(p.row(m))
                .zip(fx.face(m))
                .map(|((hi, lo), f)| (hi - lo) * f)
                .sum();
            total += dx1 * s2;
        }
    }
    total
}

fn recover(
    layout: &Layout,
    u: &[f64],
    h: &PeriodicField1D,
    upper: &MetricPack,
    lower: &MetricPack,
    ops: &FourierOps,
    stats: SolveStats,
) -> Result<HeadSolution> {
    let (pu, pl) = layout.scatter(u, h.values());
    let fu = strip_fluxes(&pu, &upper.k, ops);
    let fl = strip_fluxes(&pl, &lower.k, ops);
    let w_plus = velocity(layout, Side::Upper, &fu);
    let w_minus = velocity(layout, Side::Lower, &fl);
    let top = w_plus.w2.row(layout.upper.n2 - 1).to_vec();
    let gamma_trace_w2 = PeriodicField1D::from_values(top)
        .map_err(|_| MuskatError::NonSpdSystem("non-finite interface velocity".into()))?;
    let discrete_dissipation =
        dissipation(layout, Side::Upper, &pu, &fu) + dissipation(layout, Side::Lower, &pl, &fl);
    Ok(HeadSolution {
        p_plus: pu,
        p_minus: pl,
        w_plus,
        w_minus,
        gamma_trace_w2,
        discrete_dissipation,
        stats,
    })
}

#[cfg(test)]
mod tests;
