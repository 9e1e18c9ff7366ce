//! Time integration: classical RK4 for both models, a per-step Picard iteration for
//! the full model, constraint projection and run bookkeeping.

use std::sync::Arc;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use crate::calc::{self, arr, norm3};
use crate::energetics::{dissipation_rate, sample_full, sample_perturb, FunctionalSample, SampleSpec};
use crate::error::{Error, Result};
use crate::grid::{spatial_mean, Field, Grid, Rank};
use crate::model_full::{full_rhs, RhsOptions};
use crate::model_perturb::{perturb_rhs, sphere_constraint_residual, PerturbOptions};
use crate::state::{normalize_in_place, project_sphere, sphere_drift, ExternalField, FullState, Params, PerturbState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Rk4,
    Picard,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    pub cfl_safety: f64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub renormalize_m: bool,
    pub scheme: Scheme,
}

impl StepConfig {
    pub fn rk4(dt: f64) -> Self {
        Self { dt, cfl_safety: 0.2, picard_tol: 1e-10, picard_max_iters: 50, renormalize_m: true, scheme: Scheme::Rk4 }
    }

    pub fn picard(dt: f64) -> Self {
        Self { scheme: Scheme::Picard, ..Self::rk4(dt) }
    }
}

/// Advisory step limit `cfl_safety · min(h²/ν_max, h/|v|_max)`, `ν_max = max(μ, μ+ξ, 2Aλ)`.
pub fn cfl_limit(grid: &Grid, p: &Params, max_speed: f64, safety: f64) -> f64 {
    let h = grid.min_spacing();
    let nu = p.mu.max(p.mu + p.xi).max(2.0 * p.exchange * p.lambda_d);
    let diff = h * h / nu;
    let adv = if max_speed > 0.0 { h / max_speed } else { f64::INFINITY };
    safety * diff.min(adv)
}

/// An evolution problem the stepper can integrate.
pub trait OdeSystem {
    type State: Clone;

    /// Time derivative, packed in the state type.
    fn rate(&self, t: f64, s: &Self::State) -> Result<Self::State>;

    /// `s + h·k`.
    fn axpy(&self, s: &Self::State, k: &Self::State, h: f64) -> Self::State;

    /// Projects onto the constraint manifold and returns the drift seen before projection.
    fn project(&self, s: &mut Self::State) -> Result<f64>;

    /// Constraint drift without projecting.
    fn drift(&self, s: &Self::State) -> f64;

    fn sample(&self, t: f64, s: &Self::State) -> Result<FunctionalSample>;

    fn grid<'a>(&self, s: &'a Self::State) -> &'a Grid;

    fn params(&self) -> &Params;

    /// Density and velocity fields.
    fn density_velocity(&self, s: &Self::State) -> (Field, Field);

    /// One Picard step, for systems that support it.
    fn picard_step(&self, _t: f64, _s: &Self::State, _cfg: &StepConfig) -> Option<Result<(Self::State, PicardInfo)>> {
        None
    }
}

/// Rate injected on top of the model right-hand side, for manufactured solutions.
pub type Forcing<S> = Arc<dyn Fn(f64) -> S + Send + Sync>;

/// Full model with an external field and optional forcing.
#[derive(Clone)]
pub struct FullSystem {
    pub params: Params,
    pub h_ext: ExternalField,
    pub opts: RhsOptions,
    pub sample_spec: SampleSpec,
    pub forcing: Option<Forcing<FullState>>,
}

impl FullSystem {
    pub fn new(params: Params, h_ext: ExternalField, sample_spec: SampleSpec) -> Self {
        Self { params, h_ext, opts: RhsOptions::default(), sample_spec, forcing: None }
    }
}

fn axpy_field(a: &Field, b: &Field, h: f64) -> Field {
    a.add_scaled(b, h)
}

impl OdeSystem for FullSystem {
    type State = FullState;

    fn rate(&self, t: f64, s: &FullState) -> Result<FullState> {
        let h = self.h_ext.at(t, s.grid());
        let r = full_rhs(s, h.as_ref(), &self.params, &self.opts)?;
        let mut out = FullState { rho: r.d_rho, v: r.d_v, f: r.d_f, m: r.d_m };
        if let Some(force) = &self.forcing {
            out = self.axpy(&out, &force(t), 1.0);
        }
        Ok(out)
    }

    fn axpy(&self, s: &FullState, k: &FullState, h: f64) -> FullState {
        FullState {
            rho: axpy_field(&s.rho, &k.rho, h),
            v: axpy_field(&s.v, &k.v, h),
            f: axpy_field(&s.f, &k.f, h),
            m: axpy_field(&s.m, &k.m, h),
        }
    }

    fn project(&self, s: &mut FullState) -> Result<f64> {
        normalize_in_place(&mut s.m)
    }

    fn drift(&self, s: &FullState) -> f64 {
        sphere_drift(&s.m)
    }

    fn sample(&self, t: f64, s: &FullState) -> Result<FunctionalSample> {
        let h = self.h_ext.at(t, s.grid());
        sample_full(t, s, h.as_ref(), &self.params, &self.sample_spec)
    }

    fn grid<'a>(&self, s: &'a FullState) -> &'a Grid {
        s.grid()
    }

    fn params(&self) -> &Params {
        &self.params
    }

    fn density_velocity(&self, s: &FullState) -> (Field, Field) {
        (s.rho.clone(), s.v.clone())
    }

    fn picard_step(&self, t: f64, s: &FullState, cfg: &StepConfig) -> Option<Result<(FullState, PicardInfo)>> {
        Some(picard_step(self, t, s, cfg))
    }
}

/// Perturbation model with optional forcing.
#[derive(Clone)]
pub struct PerturbSystem {
    pub params: Params,
    pub opts: PerturbOptions,
    pub sample_spec: SampleSpec,
    pub forcing: Option<Forcing<PerturbState>>,
}

impl PerturbSystem {
    pub fn new(params: Params, sample_spec: SampleSpec) -> Self {
        Self { params, opts: PerturbOptions::default(), sample_spec, forcing: None }
    }
}

impl OdeSystem for PerturbSystem {
    type State = PerturbState;

    fn rate(&self, t: f64, s: &PerturbState) -> Result<PerturbState> {
        let r = perturb_rhs(s, &self.params, &self.opts)?;
        let mut out = PerturbState { theta: r.d_theta, u: r.d_u, psi: r.d_psi, d: r.d_d, m_e: s.m_e };
        if let Some(force) = &self.forcing {
            out = self.axpy(&out, &force(t), 1.0);
        }
        Ok(out)
    }

    fn axpy(&self, s: &PerturbState, k: &PerturbState, h: f64) -> PerturbState {
        PerturbState {
            theta: axpy_field(&s.theta, &k.theta, h),
            u: axpy_field(&s.u, &k.u, h),
            psi: axpy_field(&s.psi, &k.psi, h),
            d: axpy_field(&s.d, &k.d, h),
            m_e: s.m_e,
        }
    }

    fn project(&self, s: &mut PerturbState) -> Result<f64> {
        let drift = sphere_drift(&s.magnetization());
        project_sphere(s)?;
        Ok(drift)
    }

    fn drift(&self, s: &PerturbState) -> f64 {
        sphere_constraint_residual(s)
    }

    fn sample(&self, t: f64, s: &PerturbState) -> Result<FunctionalSample> {
        sample_perturb(t, s, &self.params, &self.sample_spec)
    }

    fn grid<'a>(&self, s: &'a PerturbState) -> &'a Grid {
        s.grid()
    }

    fn params(&self) -> &Params {
        &self.params
    }

    fn density_velocity(&self, s: &PerturbState) -> (Field, Field) {
        (s.theta.map_to_scalar(|x| 1.0 + x[0]), s.u.clone())
    }
}

/// Full model augmented with `q′ = D`, so that `E(t) + q(t)` is conserved.
pub struct DissipationAugmented<'a> {
    pub inner: &'a FullSystem,
}

impl OdeSystem for DissipationAugmented<'_> {
    type State = (FullState, f64);

    fn rate(&self, t: f64, s: &Self::State) -> Result<Self::State> {
        let h = self.inner.h_ext.at(t, s.0.grid());
        let d = dissipation_rate(&s.0, h.as_ref(), &self.inner.params);
        Ok((self.inner.rate(t, &s.0)?, d))
    }

    fn axpy(&self, s: &Self::State, k: &Self::State, h: f64) -> Self::State {
        (self.inner.axpy(&s.0, &k.0, h), s.1 + h * k.1)
    }

    fn project(&self, s: &mut Self::State) -> Result<f64> {
        self.inner.project(&mut s.0)
    }

    fn drift(&self, s: &Self::State) -> f64 {
        self.inner.drift(&s.0)
    }

    fn sample(&self, t: f64, s: &Self::State) -> Result<FunctionalSample> {
        self.inner.sample(t, &s.0)
    }

    fn grid<'a>(&self, s: &'a Self::State) -> &'a Grid {
        s.0.grid()
    }

    fn params(&self) -> &Params {
        &self.inner.params
    }

    fn density_velocity(&self, s: &Self::State) -> (Field, Field) {
        self.inner.density_velocity(&s.0)
    }
}

/// One classical RK4 step without projection.
pub fn rk4_step<S: OdeSystem>(sys: &S, t: f64, s: &S::State, dt: f64) -> Result<S::State> {
    let k1 = sys.rate(t, s)?;
    let k2 = sys.rate(t + 0.5 * dt, &sys.axpy(s, &k1, 0.5 * dt))?;
    let k3 = sys.rate(t + 0.5 * dt, &sys.axpy(s, &k2, 0.5 * dt))?;
    let k4 = sys.rate(t + dt, &sys.axpy(s, &k3, dt))?;
    let mut out = sys.axpy(s, &k1, dt / 6.0);
    out = sys.axpy(&out, &k2, dt / 3.0);
    out = sys.axpy(&out, &k3, dt / 3.0);
    Ok(sys.axpy(&out, &k4, dt / 6.0))
}

/// `M ← M/|M|`; returns the drift before projection.
pub fn renormalize_m(s: &mut FullState) -> Result<f64> {
    normalize_in_place(&mut s.m)
}

/// Convergence history of one Picard step.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardInfo {
    pub iterations: usize,
    /// Max-norm difference between successive iterates.
    pub updates: Vec<f64>,
}

/// Applies `(I − dt·L)⁻¹(b − dt·L·v)` per Fourier mode, with
/// `L̂v̂ = −μ|k|²v̂ − (μ+ξ)k̃(k̃·v̂)`.
fn velocity_solve(b: &Field, v: &Field, dt: f64, p: &Params) -> Field {
    let grid = b.grid();
    let bh: Vec<Vec<Complex64>> = (0..3).map(|c| grid.fft(&b.component(c))).collect();
    let vh: Vec<Vec<Complex64>> = (0..3).map(|c| grid.fft(&v.component(c))).collect();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); grid.total_points()]; 3];
    let (mu, mpx) = (p.mu, p.mu + p.xi);
    grid.for_each_bin(|idx, bin| {
        let (k, k2) = grid.symbol(bin);
        let kv: Complex64 = (0..3).map(|c| vh[c][idx] * k[c]).sum();
        let rhs: Vec<Complex64> = (0..3).map(|c| bh[c][idx] + dt * (mu * k2 * vh[c][idx] + mpx * k[c] * kv)).collect();
        let alpha = 1.0 + dt * mu * k2;
        let kk = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        let kr: Complex64 = (0..3).map(|c| rhs[c] * k[c]).sum();
        let coef = dt * mpx * kr / (alpha * (alpha + dt * mpx * kk));
        for c in 0..3 {
            out[c][idx] = rhs[c] / alpha - k[c] * coef;
        }
    });
    let comps: Vec<Vec<f64>> = out.into_iter().map(|s| grid.ifft(s)).collect();
    Field::from_components(grid, Rank::Vector, &comps)
}

/// Implicit exchange step about the mean direction `m̄`:
/// `(I − dt·A)⁻¹(b − dt·A·m)` with `Â = −2Aλ|k|² I + 2Aγ_g|k|²[m̄×]`.
fn magnetization_solve(b: &Field, m: &Field, dt: f64, p: &Params) -> Field {
    let grid = b.grid();
    let mbar = arr(&spatial_mean(m));
    let skew = Matrix3::new(0.0, -mbar[2], mbar[1], mbar[2], 0.0, -mbar[0], -mbar[1], mbar[0], 0.0);
    let bh: Vec<Vec<Complex64>> = (0..3).map(|c| grid.fft(&b.component(c))).collect();
    let mh: Vec<Vec<Complex64>> = (0..3).map(|c| grid.fft(&m.component(c))).collect();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); grid.total_points()]; 3];
    let (lam, prec) = (2.0 * p.exchange * p.lambda_d, 2.0 * p.exchange * p.gamma_g);
    grid.for_each_bin(|idx, bin| {
        let (_, k2) = grid.symbol(bin);
        let a = Matrix3::identity() * (-lam * k2) + skew * (prec * k2);
        let system = Matrix3::identity() - a * dt;
        let inv = system.try_inverse().expect("exchange operator is invertible");
        for part in 0..2 {
            let pick = |z: Complex64| if part == 0 { z.re } else { z.im };
            let mv = nalgebra::Vector3::new(pick(mh[0][idx]), pick(mh[1][idx]), pick(mh[2][idx]));
            let bv = nalgebra::Vector3::new(pick(bh[0][idx]), pick(bh[1][idx]), pick(bh[2][idx]));
            let x = inv * (bv - a * mv * dt);
            for c in 0..3 {
                if part == 0 {
                    out[c][idx].re = x[c];
                } else {
                    out[c][idx].im = x[c];
                }
            }
        }
    });
    let comps: Vec<Vec<f64>> = out.into_iter().map(|s| grid.ifft(s)).collect();
    Field::from_components(grid, Rank::Vector, &comps)
}

fn state_diff(a: &FullState, b: &FullState) -> f64 {
    a.rho.max_diff(&b.rho).max(a.v.max_diff(&b.v)).max(a.f.max_diff(&b.f)).max(a.m.max_diff(&b.m))
}

/// Backward-Euler step solved by fixed-point iteration with coefficients frozen at the
/// previous iterate. Viscous and exchange terms are implicit with constant coefficients;
/// the remainder of each rate is evaluated at the previous iterate.
pub fn picard_step(sys: &FullSystem, t: f64, s: &FullState, cfg: &StepConfig) -> Result<(FullState, PicardInfo)> {
    let dt = cfg.dt;
    let p = &sys.params;
    let mut iterate = s.clone();
    let mut updates = Vec::new();
    for iter in 1..=cfg.picard_max_iters {
        let r = sys.rate(t + dt, &iterate)?;
        let rho = s.rho.add_scaled(&r.rho, dt);
        let f = s.f.add_scaled(&r.f, dt);
        let v = velocity_solve(&s.v.add_scaled(&r.v, dt), &iterate.v, dt, p);
        let m = magnetization_solve(&s.m.add_scaled(&r.m, dt), &iterate.m, dt, p);
        let next = FullState { rho, v, f, m };
        let diff = state_diff(&next, &iterate);
        updates.push(diff);
        iterate = next;
        if !diff.is_finite() {
            break;
        }
        if diff < cfg.picard_tol {
            return Ok((iterate, PicardInfo { iterations: iter, updates }));
        }
    }
    Err(Error::PicardDiverged { iters: cfg.picard_max_iters, last_update: updates.last().copied().unwrap_or(f64::NAN) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Completed,
    Vacuum,
    Degenerate,
    PicardDiverged,
}

#[derive(Debug, Clone)]
pub struct RunRecord<S> {
    pub samples: Vec<FunctionalSample>,
    pub final_state: S,
    pub final_time: f64,
    pub termination: Termination,
    /// Error that ended the run early.
    pub failure: Option<Error>,
    pub steps: usize,
    pub picard_iterations: Vec<usize>,
    /// Largest constraint drift seen before a projection.
    pub max_drift: f64,
    /// States at the requested snapshot cadence, with their times.
    pub snapshots: Vec<(f64, S)>,
    pub warnings: Vec<String>,
}

/// Output cadence of `advance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cadence {
    pub sample_every: usize,
    pub snapshot_every: Option<usize>,
}

impl Default for Cadence {
    fn default() -> Self {
        Self { sample_every: 1, snapshot_every: None }
    }
}

fn termination_for(e: &Error) -> Option<Termination> {
    match e {
        Error::Vacuum { .. } => Some(Termination::Vacuum),
        Error::DegenerateDeformation { .. } => Some(Termination::Degenerate),
        Error::PicardDiverged { .. } => Some(Termination::PicardDiverged),
        _ => None,
    }
}

/// Number of steps to reach `t_end`; the last step is shortened when `t_end` is not a
/// multiple of `dt`.
pub fn step_count(t_end: f64, dt: f64) -> usize {
    let n = t_end / dt;
    let r = n.round();
    if (n - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        n.ceil() as usize
    }
}

/// Integrates from `t = 0` to `t_end`, sampling the functionals at `t = 0`, every
/// `sample_every` steps and at the final time.
pub fn advance<S: OdeSystem>(
    sys: &S,
    initial: S::State,
    t_end: f64,
    cfg: &StepConfig,
    cadence: Cadence,
) -> Result<RunRecord<S::State>> {
    if !(t_end > 0.0) || !(cfg.dt > 0.0) {
        return Err(Error::Argument(format!("t_end and dt must be positive (t_end={t_end}, dt={})", cfg.dt)));
    }
    let mut warnings = Vec::new();
    let (_, v0) = sys.density_velocity(&initial);
    let speed = v0.values().chunks(3).fold(0.0f64, |m, x| m.max(norm3(arr(x))));
    let limit = cfl_limit(sys.grid(&initial), sys.params(), speed, cfg.cfl_safety);
    if cfg.dt > limit {
        warnings.push(format!("dt = {:e} exceeds the advisory limit {:e}", cfg.dt, limit));
    }
    let n_steps = step_count(t_end, cfg.dt);
    let sample_every = cadence.sample_every.max(1);
    let mut state = initial;
    let mut samples = vec![sys.sample(0.0, &state)?];
    let mut snapshots = Vec::new();
    if cadence.snapshot_every.is_some() {
        snapshots.push((0.0, state.clone()));
    }
    let mut picard_iterations = Vec::new();
    let mut max_drift = 0.0f64;
    let mut t = 0.0;
    let mut termination = Termination::Completed;
    let mut failure = None;
    let mut steps = 0;
    for step in 1..=n_steps {
        let t_next = if step == n_steps { t_end } else { step as f64 * cfg.dt };
        let dt = t_next - t;
        let stepped = match cfg.scheme {
            Scheme::Rk4 => rk4_step(sys, t, &state, dt),
            Scheme::Picard => {
                let local = StepConfig { dt, ..*cfg };
                match sys.picard_step(t, &state, &local) {
                    Some(r) => r.map(|(s, info)| {
                        picard_iterations.push(info.iterations);
                        s
                    }),
                    None => return Err(Error::Argument("the picard scheme is available for the full model only".into())),
                }
            }
        };
        let mut next = match stepped {
            Ok(s) => s,
            Err(e) => match termination_for(&e) {
                Some(kind) => {
                    termination = kind;
                    failure = Some(e);
                    break;
                }
                None => return Err(e),
            },
        };
        if cfg.renormalize_m {
            max_drift = max_drift.max(sys.project(&mut next)?);
        } else {
            max_drift = max_drift.max(sys.drift(&next));
        }
        state = next;
        t = t_next;
        steps = step;
        if let Some(every) = cadence.snapshot_every {
            if step % every.max(1) == 0 || step == n_steps {
                snapshots.push((t, state.clone()));
            }
        }
        if step % sample_every == 0 || step == n_steps {
            match sys.sample(t, &state) {
                Ok(s) => samples.push(s),
                Err(e) => match termination_for(&e) {
                    Some(kind) => {
                        termination = kind;
                        failure = Some(e);
                        break;
                    }
                    None => return Err(e),
                },
            }
        }
    }
    if termination != Termination::Completed && samples.last().map(|s| s.t) != Some(t) {
        if let Ok(s) = sys.sample(t, &state) {
            samples.push(s);
        }
    }
    Ok(RunRecord {
        samples,
        final_state: state,
        final_time: t,
        termination,
        failure,
        steps,
        picard_iterations,
        max_drift,
        snapshots,
        warnings,
    })
}

struct VelocitySpectra {
    comps: Vec<Vec<Complex64>>,
    div: Vec<Complex64>,
}

impl VelocitySpectra {
    fn new(v: &Field) -> Self {
        let grid = v.grid();
        let div = calc::div(v);
        Self { comps: (0..3).map(|c| grid.fft(&v.component(c))).collect(), div: grid.fft(div.values()) }
    }

    fn eval(&self, grid: &Grid, x: [f64; 3]) -> ([f64; 3], f64) {
        let mut v = [0.0; 3];
        for (c, slot) in v.iter_mut().enumerate().take(grid.dim()) {
            *slot = grid.interpolate(&self.comps[c], x);
        }
        (v, grid.interpolate(&self.div, x))
    }
}

/// Integrates particle paths `Ẋ = v(t, X)` through the stored snapshots together with
/// `∫(∇·v)(τ, X(τ)) dτ`, and compares `ρ(t, X(t))` with `ρ₀(x₀)·exp(−∫∇·v)`.
/// Returns the largest relative mismatch.
///
/// Uses RK4 with step `2Δ` so that every stage lands on a snapshot; snapshots must be
/// evenly spaced, and a trailing odd snapshot is ignored.
pub fn trajectory_density_check<S: OdeSystem>(
    sys: &S,
    run: &RunRecord<S::State>,
    n_particles: usize,
    seed: u64,
) -> Result<f64> {
    let snaps = &run.snapshots;
    if snaps.len() < 3 {
        return Err(Error::Snapshots(format!("need at least 3 snapshots, have {}", snaps.len())));
    }
    let usable = if (snaps.len() - 1) % 2 == 0 { snaps.len() } else { snaps.len() - 1 };
    let spacing = snaps[1].0 - snaps[0].0;
    for w in snaps[..usable].windows(2) {
        if ((w[1].0 - w[0].0) - spacing).abs() > 1e-9 * spacing {
            return Err(Error::Snapshots("snapshots are not evenly spaced".into()));
        }
    }
    let grid = sys.grid(&snaps[0].1).clone();
    let spectra: Vec<VelocitySpectra> = snaps[..usable].iter().map(|(_, s)| VelocitySpectra::new(&sys.density_velocity(s).1)).collect();
    let (rho0, _) = sys.density_velocity(&snaps[0].1);
    let (rho_end, _) = sys.density_velocity(&snaps[usable - 1].1);
    let rho0_hat = grid.fft(rho0.values());
    let rho_end_hat = grid.fft(rho_end.values());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut worst = 0.0f64;
    for _ in 0..n_particles {
        let mut x = [0.0; 3];
        for slot in x.iter_mut().take(grid.dim()) {
            *slot = rng.gen_range(0.0..two_pi);
        }
        let x0 = x;
        let mut q = 0.0;
        let h = 2.0 * spacing;
        let shift = |x: [f64; 3], k: [f64; 3], a: f64| [x[0] + a * k[0], x[1] + a * k[1], x[2] + a * k[2]];
        for i in (0..usable - 1).step_by(2) {
            let (k1, q1) = spectra[i].eval(&grid, x);
            let (k2, q2) = spectra[i + 1].eval(&grid, shift(x, k1, 0.5 * h));
            let (k3, q3) = spectra[i + 1].eval(&grid, shift(x, k2, 0.5 * h));
            let (k4, q4) = spectra[i + 2].eval(&grid, shift(x, k3, h));
            for a in 0..3 {
                x[a] += h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
            }
            q += h / 6.0 * (q1 + 2.0 * q2 + 2.0 * q3 + q4);
        }
        let predicted = grid.interpolate(&rho0_hat, x0) * (-q).exp();
        let actual = grid.interpolate(&rho_end_hat, x);
        worst = worst.max((predicted - actual).abs() / actual.abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{equilibrium_state, random_full_state};

    const ME: [f64; 3] = [0.0, 0.0, 1.0];

    fn spec() -> SampleSpec {
        SampleSpec { s_order: 2, m_e: ME, coeffs: None }
    }

    struct Decay;

    impl OdeSystem for Decay {
        type State = f64;
        fn rate(&self, _t: f64, s: &f64) -> Result<f64> {
            Ok(-s)
        }
        fn axpy(&self, s: &f64, k: &f64, h: f64) -> f64 {
            s + h * k
        }
        fn project(&self, _s: &mut f64) -> Result<f64> {
            Ok(0.0)
        }
        fn drift(&self, _s: &f64) -> f64 {
            0.0
        }
        fn sample(&self, _t: f64, _s: &f64) -> Result<FunctionalSample> {
            unimplemented!()
        }
        fn grid<'a>(&self, _s: &'a f64) -> &'a Grid {
            unimplemented!()
        }
        fn params(&self) -> &Params {
            unimplemented!()
        }
        fn density_velocity(&self, _s: &f64) -> (Field, Field) {
            unimplemented!()
        }
    }

    #[test]
    fn rk4_scalar_order() {
        let err = |dt: f64| (rk4_step(&Decay, 0.0, &1.0, dt).unwrap() - (-dt).exp()).abs();
        let (e1, e2) = (err(0.1), err(0.05));
        assert!(e1 < 1e-6);
        let order = (e1 / e2).log2();
        assert!((order - 5.0).abs() < 0.2, "order {order}");
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let g = Grid::uniform(2, 16).unwrap();
        let s = equilibrium_state(&g, ME).unwrap();
        let sys = FullSystem::new(Params::default(), ExternalField::Zero, spec());
        let run = advance(&sys, s.clone(), 3e-3, &StepConfig::rk4(1e-3), Cadence::default()).unwrap();
        assert_eq!(run.samples.len(), 4);
        assert_eq!(run.termination, Termination::Completed);
        assert!(state_diff(&run.final_state, &s) < 1e-14);
        for smp in &run.samples {
            assert!(smp.d_total.abs() < 1e-20 && smp.ds_local.abs() < 1e-20);
            assert!(smp.res_sphere <= 1e-12 && smp.res_det <= 1e-12 && smp.res_curl <= 1e-12 && smp.res_compat <= 1e-12);
        }
        let times: Vec<f64> = run.samples.iter().map(|s| s.t).collect();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn picard_equilibrium_one_iteration() {
        let g = Grid::uniform(2, 16).unwrap();
        let s = equilibrium_state(&g, ME).unwrap();
        let sys = FullSystem::new(Params::default(), ExternalField::Zero, spec());
        let (out, info) = picard_step(&sys, 0.0, &s, &StepConfig::picard(1e-3)).unwrap();
        assert_eq!(info.iterations, 1);
        assert!(state_diff(&out, &s) < 1e-14);
    }

    #[test]
    fn picard_contracts_on_small_data() {
        let g = Grid::uniform(2, 16).unwrap();
        let s = random_full_state(&g, ME, 1e-2, 3).unwrap();
        let sys = FullSystem::new(Params::default(), ExternalField::Zero, spec());
        let (_, info) = picard_step(&sys, 0.0, &s, &StepConfig::picard(1e-3)).unwrap();
        assert!(info.iterations <= 10, "{info:?}");
        let u = &info.updates;
        assert!(u.windows(2).take(4).all(|w| w[1] < w[0]), "{u:?}");
    }

    #[test]
    fn renormalize_examples() {
        let g = Grid::uniform(2, 8).unwrap();
        let mut s = equilibrium_state(&g, ME).unwrap();
        let before = s.m.clone();
        assert_eq!(renormalize_m(&mut s).unwrap(), 0.0);
        assert_eq!(s.m, before);
        s.m.scale(1.1);
        let drift = renormalize_m(&mut s).unwrap();
        assert!((drift - 0.1).abs() < 1e-14);
        assert!(s.m.max_diff(&before) < 1e-15);
        s.m = Field::zeros(&g, Rank::Vector);
        assert!(matches!(renormalize_m(&mut s), Err(Error::ZeroMagnetization { index: 0 })));
    }

    #[test]
    fn step_counting() {
        assert_eq!(step_count(3e-3, 1e-3), 3);
        assert_eq!(step_count(0.5, 2e-4), 2500);
        assert_eq!(step_count(0.0105, 1e-3), 11);
    }

    #[test]
    fn frozen_density_without_flow() {
        let g = Grid::uniform(2, 16).unwrap();
        let theta = Field::from_fn(&g, Rank::Scalar, |x| vec![0.1 * x[0].sin()]);
        let ps = PerturbState { theta, ..PerturbState::zero(&g, ME).unwrap() };
        let sys = PerturbSystem::new(Params::default(), spec());
        let rec = RunRecord {
            samples: vec![],
            final_state: ps.clone(),
            final_time: 0.2,
            termination: Termination::Completed,
            failure: None,
            steps: 2,
            picard_iterations: vec![],
            max_drift: 0.0,
            snapshots: vec![(0.0, ps.clone()), (0.1, ps.clone()), (0.2, ps)],
            warnings: vec![],
        };
        assert_eq!(trajectory_density_check(&sys, &rec, 10, 1).unwrap(), 0.0);
    }

    #[test]
    fn too_few_snapshots() {
        let g = Grid::uniform(1, 8).unwrap();
        let ps = PerturbState::zero(&g, ME).unwrap();
        let sys = PerturbSystem::new(Params::default(), spec());
        let rec = advance(&sys, ps, 1e-3, &StepConfig::rk4(1e-3), Cadence::default()).unwrap();
        assert!(matches!(trajectory_density_check(&sys, &rec, 4, 0), Err(Error::Snapshots(_))));
    }
}
