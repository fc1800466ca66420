//! Interface evolution `h_t = w₂⁺` and the simulation loop.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{l2_dissipation, report, EnergyHistory, EnergyReport};
use crate::diffeo::{Geometry, MetricPack, PermeabilityProfile, Strip, StripGrid, DEFAULT_J_MIN};
use crate::error::{MuskatError, Result};
use crate::pressure::{solve_head, HeadSolution, SolverKind};
use crate::spectral::PeriodicField1D;

pub const DEFAULT_DT_SAFETY: f64 = 0.5;
pub const DEFAULT_GAP_TOL: f64 = 0.05;
/// Classical RK4 is stable for `λ dt` up to this value on the negative real axis.
pub const RK4_REAL_LIMIT: f64 = 2.785;

/// One term `cos·cos(kx₁) + sin·sin(kx₁)` of a Fourier series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierMode {
    pub k: u32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Sample a finite Fourier series on `n1` nodes.
pub fn series(n1: usize, modes: &[FourierMode]) -> Result<PeriodicField1D> {
    PeriodicField1D::from_fn(n1, |x| {
        modes
            .iter()
            .map(|m| {
                let kx = m.k as f64 * x;
                m.cos * kx.cos() + m.sin * kx.sin()
            })
            .sum()
    })
}

fn default_dt_safety() -> f64 {
    DEFAULT_DT_SAFETY
}

fn default_gap_tol() -> f64 {
    DEFAULT_GAP_TOL
}

fn default_j_min() -> f64 {
    DEFAULT_J_MIN
}

fn default_report_every() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("muskat-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n1: usize,
    pub n2_plus: usize,
    pub n2_minus: usize,
    pub beta_plus: f64,
    pub beta_minus: f64,
    #[serde(default = "default_dt_safety")]
    pub dt_safety: f64,
    pub t_end: f64,
    #[serde(default = "default_gap_tol")]
    pub gap_tol: f64,
    #[serde(default = "default_j_min")]
    pub j_min: f64,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default = "default_report_every")]
    pub report_every: usize,
    /// Initial interface; the mean is projected out.
    #[serde(default)]
    pub h0: Vec<FourierMode>,
    /// Permeability curve `x₂ = -1 + f(x₁)`.
    #[serde(default)]
    pub f: Vec<FourierMode>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Write a snapshot every this many reports; 0 keeps only the first and last.
    #[serde(default)]
    pub snapshot_every: usize,
}

impl SimConfig {
    /// Config with defaults for everything but the grid, permeabilities and horizon.
    pub fn new(n1: usize, n2: usize, beta_plus: f64, beta_minus: f64, t_end: f64) -> Self {
        Self {
            n1,
            n2_plus: n2,
            n2_minus: n2,
            beta_plus,
            beta_minus,
            dt_safety: DEFAULT_DT_SAFETY,
            t_end,
            gap_tol: DEFAULT_GAP_TOL,
            j_min: DEFAULT_J_MIN,
            solver: SolverKind::default(),
            report_every: 1,
            h0: Vec::new(),
            f: Vec::new(),
            output_dir: default_output_dir(),
            snapshot_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MuskatError::Config(msg));
        if self.n1 < 4 || !self.n1.is_multiple_of(2) {
            return bad(format!("n1 must be even and at least 4, got {}", self.n1));
        }
        if self.n2_plus < 3 || self.n2_minus < 3 {
            return bad(format!(
                "n2_plus and n2_minus must be at least 3, got {} and {}",
                self.n2_plus, self.n2_minus
            ));
        }
        for (name, b) in [("beta_plus", self.beta_plus), ("beta_minus", self.beta_minus)] {
            if !(b.is_finite() && b > 0.0) {
                return bad(format!("{name} must be positive, got {b}"));
            }
        }
        if !(self.dt_safety > 0.0 && self.dt_safety <= 1.0) {
            return bad(format!("dt_safety must lie in (0, 1], got {}", self.dt_safety));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return bad(format!("t_end must be finite and non-negative, got {}", self.t_end));
        }
        if !(self.gap_tol > 0.0 && self.gap_tol < 1.0) {
            return bad(format!("gap_tol must lie in (0, 1), got {}", self.gap_tol));
        }
        if !(self.j_min >= 0.0 && self.j_min < 1.0) {
            return bad(format!("j_min must lie in [0, 1), got {}", self.j_min));
        }
        if self.report_every == 0 {
            return bad("report_every must be at least 1".into());
        }
        for (name, modes) in [("h0", &self.h0), ("f", &self.f)] {
            for m in modes.iter() {
                if 2 * m.k as usize >= self.n1 {
                    return bad(format!(
                        "{name} mode k = {} is not resolved by n1 = {}",
                        m.k, self.n1
                    ));
                }
                if !(m.cos.is_finite() && m.sin.is_finite()) {
                    return bad(format!("{name} mode k = {} has non-finite amplitude", m.k));
                }
            }
        }
        Ok(())
    }

    /// Sampled `(h₀, f)`.
    pub fn initial_data(&self) -> Result<(PeriodicField1D, PeriodicField1D)> {
        Ok((series(self.n1, &self.h0)?, series(self.n1, &self.f)?))
    }

    pub fn profile(&self, f: PeriodicField1D) -> Result<PermeabilityProfile> {
        PermeabilityProfile::new(f, self.beta_plus, self.beta_minus, self.gap_tol)
    }

    pub fn discretization(&self) -> Discretization {
        Discretization {
            n2_plus: self.n2_plus,
            n2_minus: self.n2_minus,
            j_min: self.j_min,
            solver: self.solver,
        }
    }

    /// Step size bound `dt_safety · Δx₁ / max β`.
    pub fn dt_max(&self) -> f64 {
        self.dt_safety * (2.0 * std::f64::consts::PI / self.n1 as f64)
            / self.beta_plus.max(self.beta_minus)
    }

    /// `λ_max dt / 2.785` for the flat linearization; above 1 the explicit
    /// scheme amplifies the stiffest mode.
    pub fn stability_number(&self) -> Result<f64> {
        let lambda = stiffness(
            self.n1,
            &self.discretization(),
            self.beta_plus,
            self.beta_minus,
        )?;
        Ok(lambda * self.dt_max() / RK4_REAL_LIMIT)
    }
}

/// Decay rate of the highest resolved mode about the flat rest state.
///
/// On coarse vertical grids the discrete rate exceeds `β|k|` by roughly
/// `βΔx₂k²/2`, which is what limits the explicit step there.
pub fn stiffness(n1: usize, disc: &Discretization, beta_plus: f64, beta_minus: f64) -> Result<f64> {
    let upper = MetricPack::identity(StripGrid::new(Strip::Upper, n1, disc.n2_plus)?, beta_plus);
    let lower = MetricPack::identity(StripGrid::new(Strip::Lower, n1, disc.n2_minus)?, beta_minus);
    let profile = PermeabilityProfile::flat(n1, beta_plus, beta_minus)?;
    let k = (n1 / 2 - 1) as f64;
    let h = PeriodicField1D::from_fn(n1, |x| (k * x).cos())?;
    let head = solve_head(&upper, &lower, &h, &profile, disc.solver)?;
    let num: f64 = head
        .gamma_trace_w2
        .values()
        .iter()
        .zip(h.values())
        .map(|(a, b)| a * b)
        .sum();
    let den: f64 = h.values().iter().map(|v| v * v).sum();
    Ok(-num / den)
}

/// Vertical resolution and solver choices for one interface velocity evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    pub n2_plus: usize,
    pub n2_minus: usize,
    pub j_min: f64,
    pub solver: SolverKind,
}

/// Everything computed on the way from `h` to `h_t`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub geometry: Geometry,
    pub head: HeadSolution,
    /// `w₂⁺` on the interface with the mean projected out.
    pub velocity: PeriodicField1D,
    /// `‖√(J/β) v‖²_{0,±}`
    pub dissipation: f64,
}

pub fn evaluate(
    h: &PeriodicField1D,
    profile: &PermeabilityProfile,
    disc: &Discretization,
) -> Result<Evaluation> {
    let geometry = Geometry::build(h, profile, disc.n2_plus, disc.n2_minus, disc.j_min)?;
    let head = solve_head(&geometry.upper, &geometry.lower, h, profile, disc.solver)?;
    let velocity = head.gamma_trace_w2.project_zero_mean();
    let dissipation = l2_dissipation(&geometry, &head);
    Ok(Evaluation {
        geometry,
        head,
        velocity,
        dissipation,
    })
}

/// `h_t = w₂⁺`.
pub fn rhs(
    h: &PeriodicField1D,
    profile: &PermeabilityProfile,
    disc: &Discretization,
) -> Result<PeriodicField1D> {
    Ok(evaluate(h, profile, disc)?.velocity)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub h: PeriodicField1D,
    pub t: f64,
    pub step_count: usize,
    /// `∫₀ᵗ ‖√(J/β) v‖² ds`, integrated with the same stages as `h`.
    pub dissipation_integral: f64,
    pub last_report: Option<EnergyReport>,
}

impl SimState {
    pub fn new(h0: &PeriodicField1D) -> Self {
        Self {
            h: h0.project_zero_mean(),
            t: 0.0,
            step_count: 0,
            dissipation_integral: 0.0,
            last_report: None,
        }
    }
}

/// `min(h + 1 - f)` must stay above `gap_tol`.
pub fn check_gap(h: &PeriodicField1D, profile: &PermeabilityProfile, gap_tol: f64, t: f64) -> Result<()> {
    let min_gap = h
        .values()
        .iter()
        .zip(profile.f.values())
        .map(|(hh, ff)| hh + 1.0 - ff)
        .fold(f64::INFINITY, f64::min);
    if min_gap <= gap_tol || !min_gap.is_finite() {
        return Err(MuskatError::GapViolation { t, min_gap, gap_tol });
    }
    Ok(())
}

/// One classical RK4 step.
pub fn step(
    state: &SimState,
    profile: &PermeabilityProfile,
    disc: &Discretization,
    dt: f64,
    gap_tol: f64,
) -> Result<SimState> {
    let k1 = evaluate(&state.h, profile, disc)?;
    advance(state, &k1, profile, disc, dt, gap_tol)
}

fn advance(
    state: &SimState,
    k1: &Evaluation,
    profile: &PermeabilityProfile,
    disc: &Discretization,
    dt: f64,
    gap_tol: f64,
) -> Result<SimState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(MuskatError::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    let h = &state.h;
    let k2 = evaluate(&h.axpy(0.5 * dt, &k1.velocity)?, profile, disc)?;
    let k3 = evaluate(&h.axpy(0.5 * dt, &k2.velocity)?, profile, disc)?;
    let k4 = evaluate(&h.axpy(dt, &k3.velocity)?, profile, disc)?;
    let next = h
        .axpy(dt / 6.0, &k1.velocity)?
        .axpy(dt / 3.0, &k2.velocity)?
        .axpy(dt / 3.0, &k3.velocity)?
        .axpy(dt / 6.0, &k4.velocity)?
        .project_zero_mean();
    let d = (k1.dissipation + 2.0 * k2.dissipation + 2.0 * k3.dissipation + k4.dissipation) / 6.0;
    let t = state.t + dt;
    check_gap(&next, profile, gap_tol, t)?;
    Ok(SimState {
        h: next,
        t,
        step_count: state.step_count + 1,
        dissipation_integral: state.dissipation_integral + dt * d,
        last_report: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    GapViolation,
    DiffeoDegenerate,
    SolverFailure,
}

impl Termination {
    pub fn from_error(err: &MuskatError) -> Self {
        match err {
            MuskatError::GapViolation { .. } => Self::GapViolation,
            MuskatError::DiffeoDegenerate { .. } => Self::DiffeoDegenerate,
            _ => Self::SolverFailure,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Completed => "completed",
            Self::GapViolation => "gap_violation",
            Self::DiffeoDegenerate => "diffeo_degenerate",
            Self::SolverFailure => "solver_failure",
        }
    }
}

/// Reported sample of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub step: usize,
    pub h: PeriodicField1D,
    pub report: EnergyReport,
}

#[derive(Debug)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub termination: Termination,
    /// The error that stopped the run and the time it happened.
    pub error: Option<(f64, MuskatError)>,
    pub steps: usize,
    pub dt: f64,
    /// `max |mean h|` over every step, reported or not.
    pub max_mean_drift: f64,
    /// `max |∫ w₂⁺|` over every step, before projection.
    pub max_top_flux: f64,
}

/// Run without side outputs.
pub fn run(config: &SimConfig, h0: &PeriodicField1D, f: &PeriodicField1D) -> Result<Trajectory> {
    run_with(config, h0, f, |_, _| Ok(()))
}

/// Run the time loop, calling `observer` at every reported sample.
///
/// Returns `Err` only for inputs that cannot start a run; physical and solver
/// failures end the trajectory and are recorded in it.
pub fn run_with(
    config: &SimConfig,
    h0: &PeriodicField1D,
    f: &PeriodicField1D,
    mut observer: impl FnMut(&Sample, &Evaluation) -> Result<()>,
) -> Result<Trajectory> {
    config.validate()?;
    if h0.n_modes() != config.n1 || f.n_modes() != config.n1 {
        return Err(MuskatError::ResolutionMismatch(format!(
            "config n1 = {}, h0 has {}, f has {}",
            config.n1,
            h0.n_modes(),
            f.n_modes()
        )));
    }
    let profile = config.profile(f.clone())?;
    let disc = config.discretization();
    let n_steps = (config.t_end / config.dt_max() - 1e-9).ceil().max(0.0) as usize;
    let dt = if n_steps == 0 { 0.0 } else { config.t_end / n_steps as f64 };

    let mut traj = Trajectory {
        samples: Vec::new(),
        termination: Termination::Completed,
        error: None,
        steps: 0,
        dt,
        max_mean_drift: 0.0,
        max_top_flux: 0.0,
    };
    let mut state = SimState::new(h0);
    let fail = |traj: &mut Trajectory, t: f64, e: MuskatError| {
        traj.termination = Termination::from_error(&e);
        traj.error = Some((t, e));
    };
    if let Err(e) = check_gap(&state.h, &profile, config.gap_tol, 0.0) {
        fail(&mut traj, 0.0, e);
        return Ok(traj);
    }
    let mut history = EnergyHistory::new(&state.h);
    loop {
        let eval = match evaluate(&state.h, &profile, &disc) {
            Ok(e) => e,
            Err(e) => {
                fail(&mut traj, state.t, e);
                break;
            }
        };
        traj.max_mean_drift = traj.max_mean_drift.max(state.h.mean().abs());
        traj.max_top_flux = traj
            .max_top_flux
            .max(eval.head.gamma_trace_w2.integral().abs());
        let last = state.step_count == n_steps;
        if state.step_count.is_multiple_of(config.report_every) || last {
            let r = report(
                state.t,
                &state.h,
                &eval.head,
                &eval.geometry,
                state.dissipation_integral,
                &mut history,
            );
            state.last_report = Some(r);
            let sample = Sample {
                step: state.step_count,
                h: state.h.clone(),
                report: r,
            };
            observer(&sample, &eval)?;
            traj.samples.push(sample);
        }
        if last {
            break;
        }
        match advance(&state, &eval, &profile, &disc, dt, config.gap_tol) {
            Ok(next) => {
                state = next;
                traj.steps = state.step_count;
            }
            Err(e) => {
                fail(&mut traj, state.t + dt, e);
                break;
            }
        }
    }
    Ok(traj)
}
