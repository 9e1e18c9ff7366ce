//! Subcommand orchestration behind the `nsllg` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::calc::{arr, cross3, dot3, norm3};
use crate::config::{ConfigError, HExtSpec, ModelKind, RunConfig};
use crate::deformation;
use crate::energetics::{coeff_minors, coeff_search, quadratic_form_min, CoeffMinors, SampleSpec, SearchLimits, SearchOutcome};
use crate::grid::{sobolev_norm_sq, spatial_mean, Field, Grid, Rank};
use crate::io::{self, IoError, Snapshot};
use crate::mms::{forced_full_system, forced_perturb_system, spatial_study, temporal_study, ConvergenceRow, Manufactured, Model};
use crate::model_full::{effective_field, full_rhs, llg_rhs, tangency_residual, LlgForm, RhsOptions};
use crate::model_perturb::{dbar_rhs, perturb_rhs, psi_wave_residual, sphere_constraint_residual, PerturbOptions};
use crate::state::{sphere_drift, ExternalField, FullState, Params, Tolerances};
use crate::stepper::{advance, Cadence, FullSystem, OdeSystem, PerturbSystem, RunRecord, StepConfig, Termination};
use crate::varcheck::{angular_momentum_balance_residual, dissipation_equivalence_residual, energy_rate_check, free_energy_variation_check};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    CheckInvariants,
    Varcheck,
    Coeffs,
    Mms(Model),
    OracleMacrospin,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] crate::Error),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(IoError::Io(e))
    }
}

/// A check that missed its tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub check: String,
    pub value: f64,
    pub tol: f64,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FAIL check={} value={:e} tol={:e}", self.check, self.value, self.tol)
    }
}

/// Human-readable report plus the failures that decide the exit status.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub report: String,
    pub failures: Vec<Failure>,
}

impl Outcome {
    /// Records `value ≤ tol` as a table row and a failure when violated.
    fn check(&mut self, name: &str, value: f64, tol: f64) {
        let ok = value <= tol;
        let _ = writeln!(self.report, "{:<34} {:>14.6e} {:>12.3e}  {}", name, value, tol, if ok { "pass" } else { "FAIL" });
        if !ok {
            self.failures.push(Failure { check: name.to_string(), value, tol });
        }
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.report.push_str(s.as_ref());
        self.report.push('\n');
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn run(cmd: Command, cfg: &RunConfig, out: Option<&Path>) -> Result<Outcome, RunError> {
    match cmd {
        Command::Simulate => simulate(cfg, out),
        Command::CheckInvariants => check_invariants(cfg),
        Command::Varcheck => varcheck(cfg),
        Command::Coeffs => coeffs(&cfg.params),
        Command::Mms(model) => mms(model, cfg),
        Command::OracleMacrospin => oracle_macrospin(cfg),
    }
}

fn sample_spec(cfg: &RunConfig) -> SampleSpec {
    SampleSpec { s_order: cfg.s_order, m_e: cfg.m_e, coeffs: cfg.coeff_choice() }
}

fn full_system(cfg: &RunConfig, grid: &Grid) -> Result<FullSystem, RunError> {
    match cfg.manufactured() {
        Some(mf) => Ok(FullSystem { sample_spec: sample_spec(cfg), ..forced_full_system(mf, cfg.params, grid, grid)? }),
        None => Ok(FullSystem::new(cfg.params, cfg.external_field(grid)?, sample_spec(cfg))),
    }
}

fn perturb_system(cfg: &RunConfig, grid: &Grid) -> Result<PerturbSystem, RunError> {
    match cfg.manufactured() {
        Some(mf) => Ok(PerturbSystem { sample_spec: sample_spec(cfg), ..forced_perturb_system(mf, cfg.params, grid, grid)? }),
        None => Ok(PerturbSystem::new(cfg.params, sample_spec(cfg))),
    }
}

fn output_dir(cfg: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn summarize<S>(outcome: &mut Outcome, run: &RunRecord<S>) {
    outcome.line(format!("termination = {:?}", run.termination));
    outcome.line(format!("steps = {}", run.steps));
    outcome.line(format!("final_time = {}", run.final_time));
    outcome.line(format!("samples = {}", run.samples.len()));
    outcome.line(format!("max_constraint_drift = {:e}", run.max_drift));
    if let Some(max) = run.picard_iterations.iter().max() {
        outcome.line(format!("picard_max_iterations = {max}"));
    }
    if let Some(e) = &run.failure {
        outcome.line(format!("failure = {e}"));
    }
    for w in &run.warnings {
        outcome.line(format!("warning = {w}"));
    }
    if run.termination != Termination::Completed {
        outcome.failures.push(Failure { check: format!("termination:{:?}", run.termination), value: run.final_time, tol: f64::NAN });
    }
}

fn write_run<S: Clone>(dir: &Path, run: &RunRecord<S>, wrap: impl Fn(S) -> Snapshot) -> Result<(), RunError> {
    fs::create_dir_all(dir)?;
    io::write_series_file(&dir.join("series.csv"), &run.samples)?;
    for (k, (_, s)) in run.snapshots.iter().enumerate() {
        io::write_snapshot(&dir.join(format!("snap_{k:05}.nslg")), &wrap(s.clone()))?;
    }
    io::write_snapshot(&dir.join("final.nslg"), &wrap(run.final_state.clone()))?;
    Ok(())
}

fn simulate(cfg: &RunConfig, out: Option<&Path>) -> Result<Outcome, RunError> {
    let dir = output_dir(cfg, out);
    let grid = cfg.grid.build()?;
    let step = cfg.step_config();
    let cadence = Cadence { sample_every: cfg.sample_every, snapshot_every: cfg.snapshot_every };
    let mut outcome = Outcome::default();
    match cfg.initial_state()? {
        Snapshot::Full(s0) => {
            let sys = full_system(cfg, &grid)?;
            let run = advance(&sys, s0, cfg.t_end, &step, cadence)?;
            write_run(&dir, &run, Snapshot::Full)?;
            summarize(&mut outcome, &run);
        }
        Snapshot::Perturb(s0) => {
            let sys = perturb_system(cfg, &grid)?;
            let run = advance(&sys, s0, cfg.t_end, &step, cadence)?;
            write_run(&dir, &run, Snapshot::Perturb)?;
            summarize(&mut outcome, &run);
        }
    }
    fs::write(dir.join("summary.txt"), &outcome.report)?;
    Ok(outcome)
}

fn curl_scale(u: &Field) -> f64 {
    1.0 + sobolev_norm_sq(u, 1, None).map(f64::sqrt).unwrap_or(f64::INFINITY)
}

fn check_full_state(outcome: &mut Outcome, tag: &str, s: &FullState, h: Option<&Field>, p: &Params, tol: &Tolerances) -> Result<(), RunError> {
    outcome.check(&format!("{tag}.sphere"), sphere_drift(&s.m), tol.sphere_tol);
    outcome.check(&format!("{tag}.rho_detF"), s.det_residual(), 1e-8);
    let u = deformation::inverse_fluctuation(&s.f)?;
    outcome.check(&format!("{tag}.curl_U"), deformation::curl_residual(&u), tol.curl_tol * curl_scale(&u));
    outcome.check(&format!("{tag}.rho_floor_margin"), tol.rho_floor - s.min_rho(), 0.0);
    outcome.check(&format!("{tag}.detF_floor_margin"), tol.det_floor - s.min_det_f(), 0.0);
    let r = full_rhs(s, h, p, &RhsOptions::default())?;
    let scale = r.d_m.max_abs();
    outcome.check(&format!("{tag}.tangency"), tangency_residual(&s.m, &r.d_m), 1e-11 * scale.max(f64::MIN_POSITIVE));
    let mult = llg_rhs(&s.m, &s.v, h, p, LlgForm::Multiplier);
    outcome.check(&format!("{tag}.llg_form_difference"), mult.max_diff(&r.d_m), 1e-9);
    Ok(())
}

fn check_perturb_state(outcome: &mut Outcome, tag: &str, s: &crate::state::PerturbState, p: &Params, tol: &Tolerances) -> Result<(), RunError> {
    outcome.check(&format!("{tag}.sphere"), sphere_constraint_residual(s), tol.sphere_tol);
    outcome.check(&format!("{tag}.compat"), s.compat_residual(), tol.compat_tol);
    let u = s.grad_psi();
    outcome.check(&format!("{tag}.curl_U"), deformation::curl_residual(&u), tol.curl_tol * curl_scale(&u));
    let r = perturb_rhs(s, p, &PerturbOptions::default())?;
    let scale = 1.0 + r.d_psi.max_abs() + s.psi.max_abs() + s.u.max_abs();
    outcome.check(&format!("{tag}.psi_wave"), psi_wave_residual(s, &r, p), 1e-10 * scale);
    let mean = spatial_mean(&r.d_d);
    let split = dbar_rhs(s, p);
    let diff = (0..3).map(|i| (mean[i] - split[i]).abs()).fold(0.0, f64::max);
    outcome.check(&format!("{tag}.dbar_split"), diff, 1e-10);
    Ok(())
}

fn check_samples(outcome: &mut Outcome, run_final: &crate::energetics::FunctionalSample, model: ModelKind, tol: &Tolerances) {
    outcome.check("final.res_sphere", run_final.res_sphere, tol.sphere_tol);
    outcome.check("final.res_det", run_final.res_det, if model == ModelKind::Full { 1e-8 } else { tol.compat_tol });
    outcome.check("final.res_curl", run_final.res_curl, 1e-8);
    outcome.check("final.res_compat", run_final.res_compat, tol.compat_tol);
}

fn check_invariants(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let grid = cfg.grid.build()?;
    let tol = Tolerances::default();
    let mut outcome = Outcome::default();
    outcome.line(format!("{:<34} {:>14} {:>12}", "check", "value", "tol"));
    let step = cfg.step_config();
    let cadence = Cadence { sample_every: usize::MAX, snapshot_every: None };
    match cfg.initial_state()? {
        Snapshot::Full(s0) => {
            let sys = full_system(cfg, &grid)?;
            let h = sys.h_ext.at(0.0, &grid);
            check_full_state(&mut outcome, "initial", &s0, h.as_ref(), &cfg.params, &tol)?;
            let run = advance(&sys, s0, cfg.t_end, &step, cadence)?;
            let h = sys.h_ext.at(run.final_time, &grid);
            check_full_state(&mut outcome, "final", &run.final_state, h.as_ref(), &cfg.params, &tol)?;
            check_samples(&mut outcome, run.samples.last().expect("final sample"), cfg.model, &tol);
        }
        Snapshot::Perturb(s0) => {
            let sys = perturb_system(cfg, &grid)?;
            check_perturb_state(&mut outcome, "initial", &s0, &cfg.params, &tol)?;
            let run = advance(&sys, s0, cfg.t_end, &step, cadence)?;
            check_perturb_state(&mut outcome, "final", &run.final_state, &cfg.params, &tol)?;
            check_samples(&mut outcome, run.samples.last().expect("final sample"), cfg.model, &tol);
        }
    }
    Ok(outcome)
}

fn varcheck(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let grid = cfg.grid.build()?;
    let p = &cfg.params;
    let mut outcome = Outcome::default();
    outcome.line(format!("{:<34} {:>14} {:>12}", "check", "value", "tol"));
    let (m, v, full) = match cfg.initial_state()? {
        Snapshot::Full(s) => (s.m.clone(), s.v.clone(), Some(s)),
        Snapshot::Perturb(s) => (s.magnetization(), s.u.clone(), None),
    };
    let h_ext = cfg.external_field(&grid)?;
    let h = h_ext.at(0.0, &grid);
    let var = free_energy_variation_check(&m, h.as_ref(), p, 10, 1e-5, 0)?;
    outcome.check("free_energy_variation.relative", var.relative_mismatch, 1e-6);
    let heff = effective_field(&m, h.as_ref(), p);
    outcome.check("angular_momentum_balance", angular_momentum_balance_residual(&m, &v, h.as_ref(), p), 1e-10 * (1.0 + heff.max_abs()));
    outcome.check("dissipation_equivalence", dissipation_equivalence_residual(&m, h.as_ref(), p), 1e-10);
    if let Some(s0) = full {
        let sys = FullSystem::new(*p, h_ext, sample_spec(cfg));
        let rows = energy_rate_check(&sys, &s0, cfg.t_end, &[cfg.dt, cfg.dt / 2.0, cfg.dt / 4.0])?;
        for r in &rows {
            outcome.line(format!(
                "energy balance dt={:e} residual={:e} order={}",
                r.dt,
                r.residual,
                r.observed_order.map_or("-".into(), |o| format!("{o:.2}"))
            ));
        }
        let last = rows.last().expect("three rows");
        outcome.check("energy_balance.relative", last.residual.abs() / last.e0.abs(), 1e-6);
    } else {
        outcome.line("energy balance: full model only (skipped)");
    }
    Ok(outcome)
}

fn minors_table(outcome: &mut Outcome, m: &CoeffMinors) {
    outcome.line(format!("M1 = {:e}", m.m1));
    outcome.line(format!("M2 = {:e}", m.m2));
    outcome.line(format!("M3 = {:e}  (cubic closed form {:e}, factored {:e})", m.m3, m.m3_closed, m.m3_factored));
    outcome.line(format!("M4 = {:e}  (closed form {:e}, factored {:e})", m.m4, m.m4_closed, m.m4_factored));
    outcome.line(format!("Xi0 = {:e}  Xi1 = {:e}  Xi2 = {:e}  u_det = {:e}  c_sharp = {:e}", m.xi0, m.xi1, m.xi2, m.u_det, m.c_sharp));
}

/// Runs the coefficient search; succeeds only when an admissible `(δ, η, ε)` exists.
pub fn coeffs(p: &Params) -> Result<Outcome, RunError> {
    let mut outcome = Outcome::default();
    match coeff_search(p, &SearchLimits::default()) {
        SearchOutcome::Found { choice, minors } => {
            outcome.line(format!("delta = {:e}  eta = {:e}  epsilon = {:e}", choice.delta, choice.eta, choice.epsilon));
            minors_table(&mut outcome, &minors);
            let q = quadratic_form_min(p, &choice, 10_000, 0);
            outcome.check("quadratic_form_min_negated", -q, 0.0);
        }
        SearchOutcome::Failed { nearest, minors, score, evaluated } => {
            outcome.line(format!("no admissible point among {evaluated} grid points"));
            outcome.line(format!(
                "nearest miss: delta = {:e}  eta = {:e}  epsilon = {:e}  (min/max eigenvalue {score:e})",
                nearest.delta, nearest.eta, nearest.epsilon
            ));
            minors_table(&mut outcome, &minors);
            let again = coeff_minors(p, &nearest);
            let first_bad = [again.m1, again.m2, again.m3, again.m4].iter().position(|v| *v <= 0.0).map_or(0, |i| i + 1);
            outcome.failures.push(Failure { check: format!("coeff_search:M{first_bad}"), value: score, tol: 0.0 });
        }
    }
    Ok(outcome)
}

fn table(outcome: &mut Outcome, title: &str, rows: &[ConvergenceRow]) {
    outcome.line(title);
    for r in rows {
        outcome.line(format!("  {:>10.4e}  {:>14.6e}  {}", r.h, r.error, r.order.map_or("-".into(), |o| format!("{o:.2}"))));
    }
}

/// Settings of the manufactured-solution convergence study.
pub const MMS_SPATIAL_NS: [usize; 4] = [8, 12, 16, 24];
pub const MMS_REFERENCE_N: usize = 48;
pub const MMS_SPATIAL_T: f64 = 0.1;
pub const MMS_SPATIAL_DT: f64 = 1e-3;
pub const MMS_TEMPORAL_N: usize = 16;
pub const MMS_TEMPORAL_T: f64 = 0.2;
pub const MMS_TEMPORAL_DTS: [f64; 3] = [4e-3, 2e-3, 1e-3];
/// Error level treated as converged in the spatial study.
pub const MMS_FLOOR: f64 = 1e-9;

fn mms(model: Model, cfg: &RunConfig) -> Result<Outcome, RunError> {
    let dim = cfg.grid.dim;
    let mf = Manufactured { m_e: cfg.m_e, ..Manufactured::default() };
    let mut outcome = Outcome::default();
    let spatial = spatial_study(model, mf, cfg.params, dim, &MMS_SPATIAL_NS, MMS_REFERENCE_N, MMS_SPATIAL_T, MMS_SPATIAL_DT)?;
    table(&mut outcome, "spatial (n, error, order)", &spatial);
    let temporal = temporal_study(model, mf, cfg.params, dim, MMS_TEMPORAL_N, MMS_TEMPORAL_T, &MMS_TEMPORAL_DTS)?;
    table(&mut outcome, "temporal (dt, error, order)", &temporal);
    // spectral: each refinement either reaches the floor or gains at least fourth order
    for r in spatial.iter().skip(1) {
        let ok = r.error <= MMS_FLOOR || r.order.is_some_and(|o| o >= 4.0);
        outcome.check(&format!("spatial.n{}", r.h), if ok { 0.0 } else { r.error }, 0.0);
    }
    for r in temporal.iter().skip(1) {
        let o = r.order.unwrap_or(f64::NAN);
        outcome.check(&format!("temporal.order_dt{:e}", r.h), (o - 4.0).abs(), 0.5);
    }
    Ok(outcome)
}

/// Simulated uniform-magnetization run of the full model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacrospinRun {
    /// `M·Ĥ` at the final time.
    pub m_parallel: f64,
    /// Azimuth of `M` about `Ĥ`, measured from `M₀` towards `Ĥ×M₀`, unwrapped over the run.
    pub phase: f64,
    pub t_end: f64,
}

/// Integrates a spatially uniform state with `M₀ ⟂ H` under a constant field.
pub fn macrospin_run(grid: &Grid, p: &Params, h: [f64; 3], m0: [f64; 3], dt: f64, t_end: f64) -> Result<MacrospinRun, RunError> {
    let hn = norm3(h);
    if !(hn > 0.0) || dot3(h, m0).abs() > 1e-12 * hn || (norm3(m0) - 1.0).abs() > 1e-12 {
        return Err(RunError::Model(crate::Error::Argument("macrospin needs a unit M0 orthogonal to a nonzero H".into())));
    }
    let mut s = crate::state::equilibrium_state(grid, m0)?;
    s.m = Field::constant(grid, Rank::Vector, &m0);
    let sys = FullSystem::new(*p, ExternalField::uniform(grid, h), SampleSpec { s_order: 0, m_e: m0, coeffs: None });
    let hh = [h[0] / hn, h[1] / hn, h[2] / hn];
    let e2 = cross3(hh, m0);
    let cfg = StepConfig::rk4(dt);
    let n = crate::stepper::step_count(t_end, dt);
    let (mut state, mut t, mut phase, mut prev) = (s, 0.0, 0.0, 0.0f64);
    for k in 1..=n {
        let t_next = if k == n { t_end } else { k as f64 * dt };
        state = crate::stepper::rk4_step(&sys, t, &state, t_next - t)?;
        if cfg.renormalize_m {
            sys.project(&mut state)?;
        }
        t = t_next;
        let m = arr(state.m.at(0));
        let ang = dot3(m, e2).atan2(dot3(m, m0));
        let mut delta = ang - prev;
        while delta > std::f64::consts::PI {
            delta -= 2.0 * std::f64::consts::PI;
        }
        while delta < -std::f64::consts::PI {
            delta += 2.0 * std::f64::consts::PI;
        }
        phase += delta;
        prev = ang;
    }
    let m = arr(state.m.at(0));
    Ok(MacrospinRun { m_parallel: dot3(m, hh), phase, t_end })
}

fn oracle_macrospin(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let grid = cfg.grid.build()?;
    let h = match cfg.h_ext {
        HExtSpec::Constant { value } => value,
        HExtSpec::Zero => [0.0, 0.0, 1.0],
        HExtSpec::File { .. } => {
            return Err(RunError::Config(ConfigError::Invalid { key: "h_ext".into(), message: "the macrospin oracle needs a constant field".into() }))
        }
    };
    let hn = norm3(h);
    let hh = [h[0] / hn, h[1] / hn, h[2] / hn];
    let trial = if hh[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let proj = dot3(trial, hh);
    let raw = [trial[0] - proj * hh[0], trial[1] - proj * hh[1], trial[2] - proj * hh[2]];
    let rn = norm3(raw);
    let m0 = [raw[0] / rn, raw[1] / rn, raw[2] / rn];
    let p = &cfg.params;
    let run = macrospin_run(&grid, p, h, m0, cfg.dt, cfg.t_end)?;
    let rate = p.mu0 * hn;
    let exact_par = (p.lambda_d * rate * cfg.t_end).tanh();
    let exact_phase = p.gamma_g * rate * cfg.t_end;
    let mut outcome = Outcome::default();
    outcome.line(format!("M.H: simulated {:.15} closed form {:.15}", run.m_parallel, exact_par));
    outcome.line(format!("phase: simulated {:.15} closed form {:.15}", run.phase, exact_phase));
    outcome.check("macrospin.polar", (run.m_parallel - exact_par).abs(), 1e-8);
    outcome.check("macrospin.phase", (run.phase - exact_phase).abs(), 1e-8);
    Ok(outcome)
}
