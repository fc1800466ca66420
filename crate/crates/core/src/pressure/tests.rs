use super::*;
use crate::diagnostics::dispersion_rate_flat;
use crate::diffeo::{Geometry, StripGrid, DEFAULT_J_MIN};
use std::f64::consts::PI;

fn pf(n1: usize, g: impl Fn(f64) -> f64) -> PeriodicField1D {
    PeriodicField1D::from_fn(n1, g).unwrap()
}

struct Case {
    geo: Geometry,
    h: PeriodicField1D,
    profile: PermeabilityProfile,
}

fn case(
    n1: usize,
    n2p: usize,
    n2m: usize,
    h: impl Fn(f64) -> f64,
    f: impl Fn(f64) -> f64,
    bp: f64,
    bm: f64,
) -> Case {
    let h = pf(n1, h);
    let profile = PermeabilityProfile::new(pf(n1, f), bp, bm, 0.05).unwrap();
    let geo = Geometry::build(&h, &profile, n2p, n2m, DEFAULT_J_MIN).unwrap();
    Case { geo, h, profile }
}

impl Case {
    fn solve(&self, kind: SolverKind) -> HeadSolution {
        solve_head(&self.geo.upper, &self.geo.lower, &self.h, &self.profile, kind).unwrap()
    }

    fn layout(&self) -> Layout {
        Layout {
            upper: self.geo.upper.grid,
            lower: self.geo.lower.grid,
        }
    }
}

/// Least-squares rate `w₂ ≈ σ h` on the interface.
fn projected_rate(s: &HeadSolution, h: &PeriodicField1D) -> f64 {
    let hv = h.values();
    let num: f64 = s.gamma_trace_w2.values().iter().zip(hv).map(|(a, b)| a * b).sum();
    num / hv.iter().map(|v| v * v).sum::<f64>()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn flat_interface_flat_curve_is_at_rest() {
    let c = case(16, 9, 9, |_| 0.0, |_| 0.0, 1.0, 1.0);
    for kind in [SolverKind::Direct, SolverKind::Iterative] {
        let s = c.solve(kind);
        assert_eq!(s.max_abs_w(), 0.0);
        assert_eq!(s.discrete_dissipation, 0.0);
        assert_eq!(s.gamma_trace_w2.max_abs(), 0.0);
    }
}

#[test]
fn flat_interface_over_curved_permeability_is_at_rest() {
    let c = case(32, 17, 17, |_| 0.0, |x| 0.2 * x.cos(), 1.0, 0.3);
    let s = c.solve(SolverKind::Direct);
    assert!(s.max_abs_w() < 1e-12, "{}", s.max_abs_w());
    // P = 0, so Q = -δψ
    let q = s.q(&c.geo.upper);
    let d = q.zip_with(&c.geo.upper.delta_psi, |a, b| a + b);
    assert!(d.max_abs() < 1e-12);
}

#[test]
fn single_mode_matches_dispersion_relation() {
    for (k, bp, bm) in [(1usize, 1.0, 1.0), (2, 1.0, 0.25), (3, 0.5, 2.0)] {
        let eps = 1e-6;
        let c = case(32, 65, 65, |x| eps * (k as f64 * x).cos(), |_| 0.0, bp, bm);
        let s = c.solve(SolverKind::Direct);
        let sigma = dispersion_rate_flat(k, bp, bm).unwrap();
        let measured = projected_rate(&s, &c.h);
        let rel = (measured - sigma).abs() / sigma.abs();
        assert!(rel < 1e-3, "k={k}: {measured} vs {sigma}");
    }
}

#[test]
fn direct_and_iterative_agree() {
    let c = case(
        32,
        17,
        13,
        |x| 0.15 * x.cos() + 0.05 * (3.0 * x).sin(),
        |x| 0.2 * (2.0 * x).cos(),
        1.0,
        0.4,
    );
    let a = c.solve(SolverKind::Direct);
    let b = c.solve(SolverKind::Iterative);
    assert!(max_diff(&a.p_plus.values, &b.p_plus.values) < 1e-8);
    assert!(max_diff(&a.p_minus.values, &b.p_minus.values) < 1e-8);
    assert!(max_diff(a.gamma_trace_w2.values(), b.gamma_trace_w2.values()) < 1e-7);
    assert!(b.stats.iterations > 0);
}

#[test]
fn assembled_matrix_reproduces_matrix_free_residual() {
    let c = case(8, 5, 4, |x| 0.1 * x.sin(), |x| 0.1 * x.cos(), 1.5, 0.5);
    let layout = c.layout();
    let ops = FourierOps::new(8);
    let s = deriv_matrix(8);
    let (band, rhs) = operator::assemble(&layout, &c.geo.upper.k, &c.geo.lower.k, c.h.values(), &s);
    let u: Vec<f64> = (0..layout.unknowns()).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.1).collect();
    let lhs = band.mul_vec(&u);
    let affine: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let free = full_residual(&layout, &u, c.h.values(), &c.geo.upper.k, &c.geo.lower.k, &ops);
    assert!(max_diff(&affine, &free) < 1e-10);
}

#[test]
fn laplace_solver_inverts_constant_operator() {
    let layout = Layout {
        upper: StripGrid::new(Strip::Upper, 16, 7).unwrap(),
        lower: StripGrid::new(Strip::Lower, 16, 5).unwrap(),
    };
    let ops = FourierOps::new(16);
    let (bp, bm) = (2.0, 0.5);
    let solver = fourier::LaplaceSolver::new(layout, bp, bm);
    let u: Vec<f64> = (0..layout.unknowns()).map(|i| ((i * 13 % 7) as f64).sin()).collect();
    let top = vec![0.0; 16];
    let ku = isotropic(layout.upper, bp);
    let kl = isotropic(layout.lower, bm);
    // remove the Nyquist component, which the spectral derivative cannot see
    let mut u = u;
    for l in 0..layout.levels() {
        let row = &mut u[l * 16..(l + 1) * 16];
        let nyq: f64 = row.iter().enumerate().map(|(j, v)| if j % 2 == 0 { *v } else { -v }).sum::<f64>() / 16.0;
        for (j, v) in row.iter_mut().enumerate() {
            *v -= if j % 2 == 0 { nyq } else { -nyq };
        }
    }
    let r = full_residual(&layout, &u, &top, &ku, &kl, &ops);
    let back = solver.solve(&r);
    assert!(max_diff(&back, &u) < 1e-10, "{}", max_diff(&back, &u));
}

#[test]
fn boundary_and_interface_conditions_hold() {
    let c = case(
        32,
        17,
        11,
        |x| 0.2 * x.cos() - 0.1 * (2.0 * x).sin(),
        |x| 0.15 * (x + 0.3).cos(),
        1.0,
        0.2,
    );
    let s = c.solve(SolverKind::Direct);
    let top = c.geo.upper.grid.n2 - 1;
    assert_eq!(s.p_plus.row(top), c.h.values());
    let nl = c.geo.lower.grid.n2;
    assert_eq!(s.p_plus.row(0), s.p_minus.row(nl - 1));
    // flux continuity across the permeability curve
    let jump = max_diff(s.w_plus.w2.row(0), s.w_minus.w2.row(nl - 1));
    assert!(jump < 1e-10, "{jump}");
    assert!(s.w_minus.w2.row(0).iter().all(|v| *v == 0.0));
    // conservation: no net flux through the interface
    assert!(s.gamma_trace_w2.integral().abs() < 1e-10);
}

#[test]
fn interface_work_balances_dissipation() {
    let c = case(
        32,
        17,
        17,
        |x| 0.25 * x.cos() + 0.1 * (2.0 * x).sin(),
        |x| 0.1 * (3.0 * x).cos(),
        1.0,
        0.5,
    );
    let s = c.solve(SolverKind::Direct);
    let dx = 2.0 * PI / 32.0;
    let work: f64 = c
        .h
        .values()
        .iter()
        .zip(s.gamma_trace_w2.values())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * dx;
    assert!(s.discrete_dissipation > 0.0);
    let rel = (work + s.discrete_dissipation).abs() / s.discrete_dissipation;
    assert!(rel < 1e-8, "{rel}");
}

#[test]
fn even_data_gives_even_head() {
    let n1 = 32;
    let c = case(n1, 13, 9, |x| 0.2 * x.cos(), |x| 0.1 * (2.0 * x).cos(), 1.0, 3.0);
    let s = c.solve(SolverKind::Direct);
    for m in 0..13 {
        let row = s.p_plus.row(m);
        for j in 1..n1 {
            assert!((row[j] - row[n1 - j]).abs() < 1e-11);
        }
    }
}

#[test]
fn uneven_vertical_resolutions_are_supported() {
    let c = case(16, 5, 21, |x| 0.1 * x.cos(), |_| 0.0, 1.0, 1.0);
    let s = c.solve(SolverKind::Direct);
    assert_eq!(s.p_plus.grid.n2, 5);
    assert_eq!(s.p_minus.grid.n2, 21);
    let sigma = dispersion_rate_flat(1, 1.0, 1.0).unwrap();
    assert!((projected_rate(&s, &c.h) - sigma).abs() < 0.05);
}

#[test]
fn picard_from_rest_takes_one_iteration() {
    let c = case(16, 9, 9, |_| 0.0, |_| 0.0, 1.0, 1.0);
    let s = picard_head(&c.geo.upper, &c.geo.lower, &c.h, &c.profile, 50, 1e-12).unwrap();
    assert_eq!(s.stats.iterations, 1);
    assert_eq!(s.max_abs_w(), 0.0);
}

#[test]
fn picard_agrees_with_direct_for_small_data() {
    let c = case(32, 17, 17, |x| 0.05 * x.cos(), |x| 0.05 * (2.0 * x).cos(), 1.0, 0.7);
    let a = c.solve(SolverKind::Direct);
    let b = picard_head(&c.geo.upper, &c.geo.lower, &c.h, &c.profile, 200, 1e-13).unwrap();
    assert!(max_diff(&a.p_plus.values, &b.p_plus.values) < 1e-9);
    assert!(max_diff(a.gamma_trace_w2.values(), b.gamma_trace_w2.values()) < 1e-8);
}

#[test]
fn picard_reports_lack_of_contraction_where_direct_succeeds() {
    let c = case(64, 33, 17, |x| 0.5 * x.cos(), |_| 0.0, 1.0, 1.0);
    let err = picard_head(&c.geo.upper, &c.geo.lower, &c.h, &c.profile, 200, 1e-12).unwrap_err();
    assert!(matches!(err, MuskatError::NoContraction { .. }), "{err:?}");
    c.solve(SolverKind::Direct);
}

#[test]
fn mismatched_resolutions_are_rejected() {
    let c = case(16, 9, 9, |x| 0.1 * x.cos(), |_| 0.0, 1.0, 1.0);
    let h = pf(32, |x| 0.1 * x.cos());
    let err = solve_head(&c.geo.upper, &c.geo.lower, &h, &c.profile, SolverKind::Direct).unwrap_err();
    assert!(matches!(err, MuskatError::ResolutionMismatch(_)));
    let err = solve_head(&c.geo.lower, &c.geo.upper, &c.h, &c.profile, SolverKind::Direct).unwrap_err();
    assert!(matches!(err, MuskatError::InvalidInput(_)));
}

#[test]
fn solver_kind_parses_config_names() {
    let d: SolverKind = serde_json::from_str("\"direct\"").unwrap();
    let i: SolverKind = serde_json::from_str("\"cg\"").unwrap();
    assert_eq!(d, SolverKind::Direct);
    assert_eq!(i, SolverKind::Iterative);
    assert!(serde_json::from_str::<SolverKind>("\"lu\"").is_err());
}
