//! Command implementations, configuration loading and on-disk formats.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{dispersion_rate_flat, DispersionTable, EnergyReport};
use crate::diffeo::{Geometry, PermeabilityProfile};
use crate::error::{MuskatError, Result};
use crate::evolution::{self, evaluate, run_with, FourierMode, SimConfig, Termination, Trajectory};
use crate::pressure::HeadSolution;
use crate::spectral::PeriodicField1D;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PHYSICAL: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

pub const CSV_HEADER: &str =
    "t,l2_h,h2_h,h2p5_h,scriptE,scriptD,rt_margin,l2_law_residual,coupling_ratio";

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"MSKT";
pub const SNAPSHOT_VERSION: u32 = 1;

pub const THREADS_ENV: &str = "MUSKAT_THREADS";

/// Size the global worker pool from `MUSKAT_THREADS` (unset or 0 = one per core).
pub fn init_threads() {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) => n,
            Err(_) => {
                eprintln!("warning: ignoring {THREADS_ENV}={v:?}, expected a non-negative integer");
                0
            }
        },
        Err(_) => 0,
    };
    // A second initialization in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| MuskatError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: SimConfig = serde_json::from_str(&text)
        .map_err(|e| MuskatError::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

/// One timeseries line with 17 significant digits per value.
pub fn csv_row(r: &EnergyReport) -> String {
    [
        r.t,
        r.l2_h,
        r.h2_h,
        r.h2p5_h,
        r.script_e,
        r.script_d,
        r.rt_margin,
        r.l2_law_residual,
        r.coupling_ratio,
    ]
    .iter()
    .map(|v| format!("{v:.16e}"))
    .collect::<Vec<_>>()
    .join(",")
}

/// Binary dump of one state: interface, permeability curve, head and velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub n1: u32,
    pub n2_plus: u32,
    pub n2_minus: u32,
    pub t: f64,
    pub h: Vec<f64>,
    pub f: Vec<f64>,
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
    pub w1_plus: Vec<f64>,
    pub w2_plus: Vec<f64>,
    pub w1_minus: Vec<f64>,
    pub w2_minus: Vec<f64>,
}

impl Snapshot {
    pub fn capture(t: f64, h: &PeriodicField1D, f: &PeriodicField1D, head: &HeadSolution) -> Self {
        Self {
            n1: h.n_modes() as u32,
            n2_plus: head.p_plus.grid.n2 as u32,
            n2_minus: head.p_minus.grid.n2 as u32,
            t,
            h: h.values().to_vec(),
            f: f.values().to_vec(),
            p_plus: head.p_plus.values.clone(),
            p_minus: head.p_minus.values.clone(),
            w1_plus: head.w_plus.w1.values.clone(),
            w2_plus: head.w_plus.w2.values.clone(),
            w1_minus: head.w_minus.w1.values.clone(),
            w2_minus: head.w_minus.w2.values.clone(),
        }
    }

    fn arrays(&self) -> [&Vec<f64>; 8] {
        [
            &self.h,
            &self.f,
            &self.p_plus,
            &self.p_minus,
            &self.w1_plus,
            &self.w2_plus,
            &self.w1_minus,
            &self.w2_minus,
        ]
    }

    fn lengths(n1: usize, n2p: usize, n2m: usize) -> [usize; 8] {
        [n1, n1, n1 * n2p, n1 * n2m, n1 * n2p, n1 * n2p, n1 * n2m, n1 * n2m]
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        let expected = Self::lengths(self.n1 as usize, self.n2_plus as usize, self.n2_minus as usize);
        for (a, n) in self.arrays().iter().zip(expected) {
            if a.len() != n {
                return Err(MuskatError::Format(format!(
                    "snapshot array has {} values, header implies {n}",
                    a.len()
                )));
            }
        }
        out.write_all(SNAPSHOT_MAGIC)?;
        for v in [SNAPSHOT_VERSION, self.n1, self.n2_plus, self.n2_minus] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.t.to_le_bytes())?;
        for a in self.arrays() {
            for v in a.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(MuskatError::Format("not a snapshot file (bad magic)".into()));
        }
        let mut u32s = [0u32; 4];
        for v in u32s.iter_mut() {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b);
        }
        let [version, n1, n2_plus, n2_minus] = u32s;
        if version != SNAPSHOT_VERSION {
            return Err(MuskatError::Format(format!("unsupported snapshot version {version}")));
        }
        let read_f64 = |input: &mut dyn Read| -> Result<f64> {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let t = read_f64(input)?;
        let mut arrays: Vec<Vec<f64>> = Vec::with_capacity(8);
        for n in Self::lengths(n1 as usize, n2_plus as usize, n2_minus as usize) {
            arrays.push((0..n).map(|_| read_f64(input)).collect::<Result<_>>()?);
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(MuskatError::Format("trailing bytes after snapshot".into()));
        }
        let mut it = arrays.into_iter();
        let mut next = || it.next().expect("eight arrays were read");
        Ok(Self {
            n1,
            n2_plus,
            n2_minus,
            t,
            h: next(),
            f: next(),
            p_plus: next(),
            p_minus: next(),
            w1_plus: next(),
            w2_plus: next(),
            w1_minus: next(),
            w2_minus: next(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut input = std::io::BufReader::new(File::open(path)?);
        Self::read_from(&mut input)
    }
}

/// Record of one `run` invocation, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: SimConfig,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub start_time: f64,
    pub end_time: f64,
    pub termination: Termination,
    pub error: Option<String>,
    pub error_time: Option<f64>,
    pub steps: usize,
    pub dt: f64,
    pub files: Vec<PathBuf>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn exit_code(termination: Termination) -> i32 {
    match termination {
        Termination::Completed => EXIT_OK,
        Termination::GapViolation | Termination::DiffeoDegenerate => EXIT_PHYSICAL,
        Termination::SolverFailure => EXIT_SOLVER,
    }
}

fn warn_if_stiff(config: &SimConfig) {
    if let Ok(s) = config.stability_number() {
        if s > 1.0 {
            eprintln!(
                "warning: time step exceeds the explicit stability limit by a factor {s:.2}; \
                 refine n2_plus/n2_minus or lower dt_safety"
            );
        }
    }
}

/// Writes the timeseries and snapshots as samples arrive.
struct RunWriter {
    dir: PathBuf,
    csv: Option<BufWriter<File>>,
    files: Vec<PathBuf>,
    snapshot_every: usize,
    reports: usize,
    pending: Option<Snapshot>,
}

impl RunWriter {
    fn new(dir: &Path, snapshot_every: usize) -> Self {
        Self {
            dir: dir.to_path_buf(),
            csv: None,
            files: Vec::new(),
            snapshot_every,
            reports: 0,
            pending: None,
        }
    }

    fn sample(&mut self, report: &EnergyReport, snapshot: Snapshot, step: usize) -> Result<()> {
        if self.csv.is_none() {
            let path = self.dir.join("timeseries.csv");
            let mut w = BufWriter::new(File::create(&path)?);
            w.write_all(CSV_HEADER.as_bytes())?;
            w.write_all(b"\n")?;
            self.files.push(path);
            self.csv = Some(w);
        }
        let csv = self.csv.as_mut().expect("created above");
        csv.write_all(csv_row(report).as_bytes())?;
        csv.write_all(b"\n")?;
        let due = self.reports == 0
            || (self.snapshot_every > 0 && self.reports.is_multiple_of(self.snapshot_every));
        self.reports += 1;
        if due {
            self.snapshot(&snapshot, step)?;
            self.pending = None;
        } else {
            self.pending = Some(snapshot);
        }
        Ok(())
    }

    fn snapshot(&mut self, snap: &Snapshot, step: usize) -> Result<()> {
        let path = self.dir.join(format!("snapshot_{step:06}.bin"));
        snap.save(&path)?;
        self.files.push(path);
        Ok(())
    }

    fn finish(mut self, last_step: usize) -> Result<Vec<PathBuf>> {
        if let Some(s) = self.pending.take() {
            self.snapshot(&s, last_step)?;
        }
        if let Some(mut c) = self.csv.take() {
            c.flush()?;
        }
        Ok(self.files)
    }
}

fn usage_error(e: &MuskatError) -> i32 {
    eprintln!("error: {e}");
    eprintln!("usage: muskat run|check|convergence <config.json>");
    eprintln!("       muskat dispersion <beta_plus> <beta_minus> <k_max>");
    EXIT_USAGE
}

/// `run <config.json>`
pub fn cmd_run(config_path: &Path) -> i32 {
    let config = match load_config(config_path) {
        Ok(c) => c,
        Err(e) => return usage_error(&e),
    };
    match run_to_dir(&config) {
        Ok(manifest) => {
            if let Some(e) = &manifest.error {
                eprintln!("run stopped at t = {}: {e}", manifest.error_time.unwrap_or(f64::NAN));
            }
            println!(
                "{}: {} steps, outputs in {}",
                manifest.termination.as_str(),
                manifest.steps,
                config.output_dir.display()
            );
            exit_code(manifest.termination)
        }
        Err(e @ (MuskatError::Config(_) | MuskatError::InvalidInput(_))) => usage_error(&e),
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_SOLVER
        }
    }
}

/// Execute a validated config and write every output into its directory.
pub fn run_to_dir(config: &SimConfig) -> Result<RunManifest> {
    let start_time = now();
    let (h0, f) = config.initial_data()?;
    // reject an inadmissible permeability curve before touching the disk
    config.profile(f.clone())?;
    warn_if_stiff(config);
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let mut writer = RunWriter::new(dir, config.snapshot_every);
    let mut last_step = 0;
    let traj = run_with(config, &h0, &f, |sample, eval| {
        last_step = sample.step;
        let snap = Snapshot::capture(sample.report.t, &sample.h, &f, &eval.head);
        writer.sample(&sample.report, snap, sample.step)
    })?;
    let mut files = writer.finish(last_step)?;
    let manifest_path = dir.join("manifest.json");
    files.push(manifest_path.clone());
    let manifest = RunManifest {
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        start_time,
        end_time: now(),
        termination: traj.termination,
        error: traj.error.as_ref().map(|(_, e)| e.to_string()),
        error_time: traj.error.as_ref().map(|(t, _)| *t),
        steps: traj.steps,
        dt: traj.dt,
        files,
    };
    let mut out = BufWriter::new(File::create(&manifest_path)?);
    serde_json::to_writer_pretty(&mut out, &manifest)
        .map_err(|e| MuskatError::Format(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(manifest)
}

/// Table of `k,sigma` lines with a header.
pub fn dispersion_csv(beta_plus: f64, beta_minus: f64, k_max: usize) -> Result<String> {
    let table = DispersionTable::compute(k_max, beta_plus, beta_minus)?;
    let mut s = String::from("k,sigma\n");
    for (k, sigma) in table.modes.iter().zip(&table.sigma) {
        s.push_str(&format!("{k},{sigma}\n"));
    }
    Ok(s)
}

/// `dispersion <β⁺> <β⁻> <k_max>`
pub fn cmd_dispersion(beta_plus: f64, beta_minus: f64, k_max: usize) -> i32 {
    match dispersion_csv(beta_plus, beta_minus, k_max) {
        Ok(s) => {
            print!("{s}");
            EXIT_OK
        }
        Err(e) => usage_error(&e),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, r: Result<(bool, String)>) -> CheckOutcome {
    match r {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn with_modes(config: &SimConfig, h0: Vec<FourierMode>, t_end: f64) -> SimConfig {
    let mut c = config.clone();
    c.h0 = h0;
    c.t_end = t_end;
    c
}

/// The invariant suite behind `check`.
pub fn check_suite(config: &SimConfig) -> Vec<CheckOutcome> {
    let disc = config.discretization();
    let n1 = config.n1;
    let mut out = Vec::new();

    out.push(outcome("rest_state", (|| {
        let z = PeriodicField1D::zeros(n1)?;
        let flat = PermeabilityProfile::flat(n1, config.beta_plus, config.beta_minus)?;
        let w = evaluate(&z, &flat, &disc)?.head.max_abs_w();
        Ok((w <= 1e-12, format!("max |w| = {w:.3e}")))
    })()));

    let f_modes = if config.f.is_empty() {
        vec![FourierMode { k: 1, cos: 0.2, sin: 0.0 }]
    } else {
        config.f.clone()
    };
    let f = evolution::series(n1, &f_modes);

    out.push(outcome("flat_steady_with_f", (|| {
        let profile = config.profile(f.as_ref().map_err(|e| MuskatError::Config(e.to_string()))?.clone())?;
        let z = PeriodicField1D::zeros(n1)?;
        let w = evaluate(&z, &profile, &disc)?.head.max_abs_w();
        Ok((w <= 1e-9, format!("max |w| = {w:.3e}")))
    })()));

    out.push(outcome("piola_residual", (|| {
        let profile = config.profile(f.as_ref().map_err(|e| MuskatError::Config(e.to_string()))?.clone())?;
        let h0 = if config.h0.is_empty() {
            evolution::series(n1, &[FourierMode { k: 1, cos: 0.1, sin: 0.0 }])?
        } else {
            config.initial_data()?.0
        };
        let geo = Geometry::build(&h0, &profile, config.n2_plus, config.n2_minus, config.j_min)?;
        let r = geo.upper.piola_residual().max(geo.lower.piola_residual());
        Ok((r <= 1e-10, format!("max |div(JA)| = {r:.3e}")))
    })()));

    out.push(outcome("dispersion_consistency", (|| {
        let coarse = evolution::Discretization {
            n2_plus: 33,
            n2_minus: 33,
            ..disc
        };
        let m = 32;
        let flat = PermeabilityProfile::flat(m, config.beta_plus, config.beta_minus)?;
        let mut worst: f64 = 0.0;
        for k in 1..=3 {
            let h = evolution::series(m, &[FourierMode { k, cos: 1e-6, sin: 0.0 }])?;
            let v = evolution::rhs(&h, &flat, &coarse)?;
            let num: f64 = v.values().iter().zip(h.values()).map(|(a, b)| a * b).sum();
            let den: f64 = h.values().iter().map(|x| x * x).sum();
            let sigma = dispersion_rate_flat(k as usize, config.beta_plus, config.beta_minus)?;
            worst = worst.max((num / den - sigma).abs() / sigma.abs());
        }
        Ok((worst <= 1e-2, format!("worst relative rate error {worst:.3e}")))
    })()));

    out.push(outcome("l2_energy_law", (|| {
        let h0 = if config.h0.is_empty() {
            vec![FourierMode { k: 1, cos: 0.05, sin: 0.0 }]
        } else {
            config.h0.clone()
        };
        let mut c = with_modes(config, h0, config.t_end.min(0.5));
        c.f = f_modes.clone();
        let (h0, f) = c.initial_data()?;
        let traj = evolution::run(&c, &h0, &f)?;
        if let Some((t, e)) = traj.error {
            return Ok((false, format!("run stopped at t = {t}: {e}")));
        }
        let worst = traj
            .samples
            .iter()
            .map(|s| s.report.l2_law_residual.abs())
            .fold(0.0, f64::max);
        Ok((worst <= 1e-3, format!("worst relative residual {worst:.3e}")))
    })()));

    out.push(outcome("temporal_stability", (|| {
        let s = config.stability_number()?;
        let k = (n1 / 2 - 1) as u32;
        let amp = 1e-8;
        let steps = 20.0;
        let mut c = with_modes(config, vec![FourierMode { k, cos: amp, sin: 0.0 }], 0.0);
        c.f = Vec::new();
        c.t_end = steps * c.dt_max();
        let (h0, f) = c.initial_data()?;
        let traj = evolution::run(&c, &h0, &f)?;
        if let Some((t, e)) = traj.error {
            return Ok((false, format!("run stopped at t = {t}: {e}")));
        }
        let last = traj.samples.last().map(|s| s.h.max_abs()).unwrap_or(f64::NAN);
        let growth = last / h0.max_abs();
        Ok((
            growth <= 1.0 && s <= 1.0,
            format!("stability number {s:.3}, highest-mode growth over 20 steps {growth:.3e}"),
        ))
    })()));

    out
}

/// `check <config.json>`
pub fn cmd_check(config_path: &Path) -> i32 {
    let config = match load_config(config_path) {
        Ok(c) => c,
        Err(e) => return usage_error(&e),
    };
    if let Err(e) = config.initial_data().and_then(|(_, f)| config.profile(f)) {
        return usage_error(&e);
    }
    let results = check_suite(&config);
    let mut all = true;
    for r in &results {
        all &= r.passed;
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if all {
        EXIT_OK
    } else {
        EXIT_CHECK
    }
}

/// Observed orders from the three-level study behind `convergence`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// `None` when the differences vanish (the data is reproduced exactly).
    pub spatial_order: Option<f64>,
    pub temporal_order: Option<f64>,
    pub spatial_differences: [f64; 2],
    pub temporal_differences: [f64; 2],
    pub warnings: Vec<String>,
}

fn final_h(config: &SimConfig) -> Result<PeriodicField1D> {
    let (h0, f) = config.initial_data()?;
    let traj: Trajectory = evolution::run(config, &h0, &f)?;
    if let Some((t, e)) = traj.error {
        return Err(MuskatError::InvalidInput(format!("run stopped at t = {t}: {e}")));
    }
    Ok(traj.samples.last().expect("a completed run has samples").h.clone())
}

fn order(d: [f64; 2]) -> Option<f64> {
    if d[0] == 0.0 && d[1] == 0.0 {
        None
    } else {
        Some((d[0] / d[1]).log2())
    }
}

/// Fraction of the interface spectrum above `n1/3`.
fn spectral_tail(h: &PeriodicField1D) -> f64 {
    let n = h.n_modes();
    let total: f64 = (1..n / 2).map(|k| h.mode_amplitude(k).powi(2)).sum();
    let tail: f64 = (n / 3..n / 2).map(|k| h.mode_amplitude(k).powi(2)).sum();
    if total > 0.0 {
        (tail / total).sqrt()
    } else {
        0.0
    }
}

pub fn convergence_study(config: &SimConfig) -> Result<ConvergenceReport> {
    let refine = |n: usize, levels: u32| (n - 1) * 2usize.pow(levels) + 1;
    let mut variants = Vec::new();
    for l in 0..3 {
        let mut c = config.clone();
        c.n2_plus = refine(config.n2_plus, l);
        c.n2_minus = refine(config.n2_minus, l);
        variants.push(c);
    }
    for l in 1..3 {
        let mut c = config.clone();
        c.dt_safety = config.dt_safety / 2f64.powi(l);
        variants.push(c);
    }
    let finals: Vec<PeriodicField1D> = variants
        .par_iter()
        .map(final_h)
        .collect::<Result<_>>()?;
    let diff = |a: &PeriodicField1D, b: &PeriodicField1D| -> Result<f64> { Ok(a.axpy(-1.0, b)?.max_abs()) };
    let spatial = [diff(&finals[0], &finals[1])?, diff(&finals[1], &finals[2])?];
    let temporal = [diff(&finals[0], &finals[3])?, diff(&finals[3], &finals[4])?];

    let mut warnings = Vec::new();
    let (h0, _) = config.initial_data()?;
    for (label, h) in [("initial", &h0), ("final", &finals[2])] {
        let tail = spectral_tail(h);
        if tail > 1e-6 {
            warnings.push(format!(
                "n1 = {} under-resolves the {label} interface (spectral tail {tail:.2e})",
                config.n1
            ));
        }
    }
    if let Ok(s) = config.stability_number() {
        if s > 1.0 {
            warnings.push(format!("base time step is beyond the stability limit (factor {s:.2})"));
        }
    }
    Ok(ConvergenceReport {
        spatial_order: order(spatial),
        temporal_order: order(temporal),
        spatial_differences: spatial,
        temporal_differences: temporal,
        warnings,
    })
}

/// `convergence <config.json>`
pub fn cmd_convergence(config_path: &Path) -> i32 {
    let config = match load_config(config_path) {
        Ok(c) => c,
        Err(e) => return usage_error(&e),
    };
    match convergence_study(&config) {
        Ok(r) => {
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            let fmt = |o: Option<f64>| o.map_or("exact".to_string(), |v| format!("{v:.3}"));
            println!(
                "spatial (n2 x1, x2, x4): differences {:.3e} {:.3e}, observed order {}",
                r.spatial_differences[0],
                r.spatial_differences[1],
                fmt(r.spatial_order)
            );
            println!(
                "temporal (dt x1, x1/2, x1/4): differences {:.3e} {:.3e}, observed order {}",
                r.temporal_differences[0],
                r.temporal_differences[1],
                fmt(r.temporal_order)
            );
            EXIT_OK
        }
        Err(e @ (MuskatError::Config(_) | MuskatError::InvalidInput(_))) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_SOLVER
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffeo::DEFAULT_J_MIN;
    use crate::pressure::{solve_head, SolverKind};

    fn small_config(dir: &Path) -> SimConfig {
        let mut c = SimConfig::new(16, 9, 1.0, 0.5, 0.3);
        c.h0 = vec![FourierMode { k: 1, cos: 0.05, sin: 0.0 }];
        c.f = vec![FourierMode { k: 2, cos: 0.1, sin: 0.0 }];
        c.output_dir = dir.to_path_buf();
        c
    }

    #[test]
    fn csv_row_has_seventeen_significant_digits() {
        let r = EnergyReport {
            t: 0.1,
            l2_h: 1.0 / 3.0,
            h2_h: 0.0,
            h2p5_h: 2.0,
            e_running: 0.0,
            script_e: 1e-300,
            script_d: 5.0,
            rt_margin: 1.0,
            l2_law_residual: -1e-7,
            coupling_ratio: 0.25,
            dissipation: 0.0,
            mean_h: 0.0,
            top_flux: 0.0,
        };
        let row = csv_row(&r);
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), CSV_HEADER.split(',').count());
        assert_eq!(fields[1], "3.3333333333333331e-1");
        assert_eq!(fields[1].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(fields[0].parse::<f64>().unwrap(), 0.1);
        assert!(!row.contains('\r'));
    }

    fn sample_snapshot() -> Snapshot {
        let h = PeriodicField1D::from_fn(8, |x| 0.1 * x.cos()).unwrap();
        let f = PeriodicField1D::from_fn(8, |x| 0.05 * x.sin()).unwrap();
        let profile = PermeabilityProfile::new(f.clone(), 1.0, 2.0, 0.05).unwrap();
        let geo = Geometry::build(&h, &profile, 5, 4, DEFAULT_J_MIN).unwrap();
        let head = solve_head(&geo.upper, &geo.lower, &h, &profile, SolverKind::Direct).unwrap();
        Snapshot::capture(0.75, &h, &f, &head)
    }

    #[test]
    fn snapshot_layout() {
        let s = sample_snapshot();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MSKT");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(buf[20..28].try_into().unwrap()), 0.75);
        assert_eq!(f64::from_le_bytes(buf[28..36].try_into().unwrap()), s.h[0]);
        let floats = 8 + 8 + 3 * 40 + 3 * 32;
        assert_eq!(buf.len(), 28 + 8 * floats);
        // P⁺ starts after h and f, row-major by level
        let p0 = 28 + 8 * 16;
        assert_eq!(f64::from_le_bytes(buf[p0..p0 + 8].try_into().unwrap()), s.p_plus[0]);
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let s = sample_snapshot();
        let mut a = Vec::new();
        s.write_to(&mut a).unwrap();
        let back = Snapshot::read_from(&mut a.as_slice()).unwrap();
        assert_eq!(back, s);
        let mut b = Vec::new();
        back.write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_snapshots_are_rejected() {
        let s = sample_snapshot();
        let mut a = Vec::new();
        s.write_to(&mut a).unwrap();
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(matches!(Snapshot::read_from(&mut bad.as_slice()), Err(MuskatError::Format(_))));
        let mut bad = a.clone();
        bad[4] = 2;
        assert!(matches!(Snapshot::read_from(&mut bad.as_slice()), Err(MuskatError::Format(_))));
        let short = &a[..a.len() - 3];
        assert!(matches!(Snapshot::read_from(&mut &short[..]), Err(MuskatError::Io(_))));
        let mut long = a.clone();
        long.push(0);
        assert!(Snapshot::read_from(&mut long.as_slice()).is_err());
    }

    #[test]
    fn dispersion_table_text() {
        let s = dispersion_csv(1.0, 1.0, 2).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "k,sigma");
        assert!(lines[1].starts_with("1,-0.96402"));
        let one: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
        let two = dispersion_csv(2.0, 2.0, 1).unwrap();
        let doubled: f64 = two.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(doubled, 2.0 * one);
        assert!(dispersion_csv(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn run_writes_outputs_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_config(dir.path());
        c.report_every = 2;
        c.snapshot_every = 2;
        let m = run_to_dir(&c).unwrap();
        assert_eq!(m.termination, Termination::Completed);
        for f in &m.files {
            assert!(f.exists(), "{}", f.display());
        }
        let csv = fs::read_to_string(dir.path().join("timeseries.csv")).unwrap();
        assert!(csv.starts_with(&format!("{CSV_HEADER}\n")));
        let rows = csv.lines().count() - 1;
        assert_eq!(rows, m.steps / 2 + 1 + usize::from(!m.steps.is_multiple_of(2)));
        let snaps: Vec<_> = m.files.iter().filter(|p| p.extension().is_some_and(|e| e == "bin")).collect();
        assert!(snaps.len() >= 2);
        let last = Snapshot::load(snaps.last().unwrap()).unwrap();
        assert!((last.t - c.t_end).abs() < 1e-12);
        let manifests = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name() == "manifest.json")
            .count();
        assert_eq!(manifests, 1);
    }

    #[test]
    fn replay_is_bit_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_to_dir(&small_config(a.path())).unwrap();
        run_to_dir(&small_config(b.path())).unwrap();
        let read = |d: &Path| fs::read(d.join("timeseries.csv")).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }

    #[test]
    fn gap_violation_writes_only_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_config(dir.path());
        c.h0 = vec![FourierMode { k: 1, cos: 0.9, sin: 0.0 }];
        c.f = vec![FourierMode { k: 1, cos: -0.1, sin: 0.0 }];
        let m = run_to_dir(&c).unwrap();
        assert_eq!(m.termination, Termination::GapViolation);
        assert_eq!(exit_code(m.termination), EXIT_PHYSICAL);
        assert_eq!(m.files, vec![dir.path().join("manifest.json")]);
        assert!(!dir.path().join("timeseries.csv").exists());
    }

    #[test]
    fn config_loading_reports_problems() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.json");
        assert!(matches!(load_config(&missing), Err(MuskatError::Config(_))));
        let bad = dir.path().join("bad.json");
        fs::write(&bad, r#"{"n1": 16, "n2_plus": 9, "n2_minus": 9, "beta_plus": -1.0, "beta_minus": 1.0, "t_end": 1.0}"#).unwrap();
        assert!(matches!(load_config(&bad), Err(MuskatError::Config(_))));
        let typo = dir.path().join("typo.json");
        fs::write(&typo, r#"{"n1": 16, "n2_plus": 9, "n2_minus": 9, "beta_plus": 1.0, "beta_minus": 1.0, "t_end": 1.0, "dt": 0.1}"#).unwrap();
        assert!(load_config(&typo).is_err());
    }

    #[test]
    fn convergence_of_rest_state_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_config(dir.path());
        c.h0.clear();
        c.t_end = 0.2;
        let r = convergence_study(&c).unwrap();
        assert_eq!(r.spatial_order, None);
        assert_eq!(r.temporal_order, None);
    }

    #[test]
    fn convergence_warns_when_n1_is_too_small() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_config(dir.path());
        c.h0 = vec![FourierMode { k: 7, cos: 0.002, sin: 0.0 }];
        c.t_end = 0.05;
        let r = convergence_study(&c).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("under-resolves")));
    }
}
