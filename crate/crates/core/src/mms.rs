//! Manufactured solutions: smooth time-dependent fields for both models, the forcing
//! that makes them exact, and the convergence studies built on them.

use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::calc::{cross3, norm3};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Rank};
use crate::state::{ExternalField, FullState, Params, PerturbState};
use crate::stepper::{advance, Cadence, FullSystem, OdeSystem, PerturbSystem, StepConfig};
use crate::energetics::SampleSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Full,
    Perturb,
}

/// Amplitudes of the manufactured fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Manufactured {
    pub alpha: f64,
    pub beta: f64,
    pub m_e: [f64; 3],
}

impl Default for Manufactured {
    fn default() -> Self {
        Self { alpha: 0.05, beta: 0.2, m_e: [0.0, 0.0, 1.0] }
    }
}

fn active(x: [f64; 3], dim: usize, a: usize) -> f64 {
    if a < dim {
        x[a]
    } else {
        0.0
    }
}

fn s1(x: [f64; 3], dim: usize) -> f64 {
    active(x, dim, 0).sin() + 0.5 * active(x, dim, 1).cos() + 0.25 * active(x, dim, 2).sin()
}

fn s2(x: [f64; 3], dim: usize) -> f64 {
    (active(x, dim, 0) + active(x, dim, 1)).cos() - 0.5 * active(x, dim, 2).cos()
}

fn s3(x: [f64; 3], dim: usize) -> f64 {
    (2.0 * active(x, dim, 0)).sin() * 0.5 + (active(x, dim, 1) - active(x, dim, 2)).sin()
}

fn b_entry(x: [f64; 3], dim: usize, i: usize, j: usize) -> f64 {
    let w = 0.3 * (i + 1) as f64 / (j + 1) as f64;
    if (i + j) % 2 == 0 {
        w * (active(x, dim, 0) + i as f64).sin()
    } else {
        w * (active(x, dim, dim - 1) + j as f64).cos()
    }
}

impl Manufactured {
    fn frame(&self) -> ([f64; 3], [f64; 3]) {
        let me = self.m_e;
        let trial = if me[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let c = cross3(me, trial);
        let n = norm3(c);
        let e1 = [c[0] / n, c[1] / n, c[2] / n];
        (e1, cross3(me, e1))
    }

    /// `M = cos φ M_e + sin φ (cos χ e₁ + sin χ e₂)` and its time derivative, with
    /// `φ = β cos t (s₁ + 1.5)` and `χ = x₁ + t`.
    fn magnetization(&self, t: f64, x: [f64; 3], dim: usize) -> ([f64; 3], [f64; 3]) {
        let (e1, e2) = self.frame();
        let me = self.m_e;
        let base = s1(x, dim) + 1.5;
        let phi = self.beta * t.cos() * base;
        let phi_t = -self.beta * t.sin() * base;
        let chi = active(x, dim, 0) + t;
        let (sp, cp, sc, cc) = (phi.sin(), phi.cos(), chi.sin(), chi.cos());
        let mut m = [0.0; 3];
        let mut dm = [0.0; 3];
        for i in 0..3 {
            let ring = cc * e1[i] + sc * e2[i];
            let ring_t = -sc * e1[i] + cc * e2[i];
            m[i] = cp * me[i] + sp * ring;
            dm[i] = phi_t * (-sp * me[i] + cp * ring) + sp * ring_t;
        }
        (m, dm)
    }

    fn velocity(&self, t: f64, x: [f64; 3], dim: usize) -> ([f64; 3], [f64; 3]) {
        let a = self.alpha;
        let (s, c) = (t.sin(), t.cos());
        let (f1, f2, f3) = (s1(x, dim), s2(x, dim), s3(x, dim));
        ([a * s * f2, a * c * f1, 0.5 * a * s * f3], [a * c * f2, -a * s * f1, 0.5 * a * c * f3])
    }

    /// Full-model state and its exact time derivative at `t`.
    pub fn full(&self, grid: &Grid, t: f64) -> (FullState, FullState) {
        let dim = grid.dim();
        let a = self.alpha;
        let (s, c) = (t.sin(), t.cos());
        let rho = Field::from_fn(grid, Rank::Scalar, |x| vec![1.0 + a * c * s1(x, dim)]);
        let d_rho = Field::from_fn(grid, Rank::Scalar, |x| vec![-a * s * s1(x, dim)]);
        let v = Field::from_fn(grid, Rank::Vector, |x| self.velocity(t, x, dim).0.to_vec());
        let d_v = Field::from_fn(grid, Rank::Vector, |x| self.velocity(t, x, dim).1.to_vec());
        let f = Field::from_fn(grid, Rank::Matrix, |x| {
            (0..9).map(|k| if k % 4 == 0 { 1.0 } else { 0.0 } + a * c * b_entry(x, dim, k / 3, k % 3)).collect()
        });
        let d_f = Field::from_fn(grid, Rank::Matrix, |x| (0..9).map(|k| -a * s * b_entry(x, dim, k / 3, k % 3)).collect());
        let m = Field::from_fn(grid, Rank::Vector, |x| self.magnetization(t, x, dim).0.to_vec());
        let d_m = Field::from_fn(grid, Rank::Vector, |x| self.magnetization(t, x, dim).1.to_vec());
        (FullState { rho, v, f, m }, FullState { rho: d_rho, v: d_v, f: d_f, m: d_m })
    }

    /// Perturbation state and its exact time derivative at `t`.
    pub fn perturb(&self, grid: &Grid, t: f64) -> (PerturbState, PerturbState) {
        let dim = grid.dim();
        let a = self.alpha;
        let (s, c) = (t.sin(), t.cos());
        let me = self.m_e;
        let theta = Field::from_fn(grid, Rank::Scalar, |x| vec![a * c * s1(x, dim)]);
        let d_theta = Field::from_fn(grid, Rank::Scalar, |x| vec![-a * s * s1(x, dim)]);
        let u = Field::from_fn(grid, Rank::Vector, |x| self.velocity(t, x, dim).0.to_vec());
        let d_u = Field::from_fn(grid, Rank::Vector, |x| self.velocity(t, x, dim).1.to_vec());
        let psi_at = |x: [f64; 3], w: f64| vec![0.5 * a * w * s2(x, dim), 0.5 * a * w * s3(x, dim), 0.5 * a * w * s1(x, dim)];
        let psi = Field::from_fn(grid, Rank::Vector, |x| psi_at(x, c));
        let d_psi = Field::from_fn(grid, Rank::Vector, |x| psi_at(x, -s));
        let d = Field::from_fn(grid, Rank::Vector, |x| {
            let m = self.magnetization(t, x, dim).0;
            vec![m[0] - me[0], m[1] - me[1], m[2] - me[2]]
        });
        let d_d = Field::from_fn(grid, Rank::Vector, |x| self.magnetization(t, x, dim).1.to_vec());
        (
            PerturbState { theta, u, psi, d, m_e: me },
            PerturbState { theta: d_theta, u: d_u, psi: d_psi, d: d_d, m_e: me },
        )
    }
}

/// Samples a field given on `fine` at the points of `coarse`; every coarse axis must
/// divide the fine one.
pub fn restrict(fine: &Field, coarse: &Grid) -> Result<Field> {
    let fg = fine.grid();
    if fg.dim() != coarse.dim() || fg.n_per_axis().iter().zip(coarse.n_per_axis()).any(|(f, c)| f % c != 0) {
        return Err(Error::Shape(format!(
            "cannot restrict {:?} to {:?}",
            fg.n_per_axis(),
            coarse.n_per_axis()
        )));
    }
    let ratio: Vec<usize> = fg.n_per_axis().iter().zip(coarse.n_per_axis()).map(|(f, c)| f / c).collect();
    let nc = fine.n_components();
    let mut values = Vec::with_capacity(coarse.total_points() * nc);
    for idx in 0..coarse.total_points() {
        let mut p = coarse.point_index(idx);
        for (a, r) in ratio.iter().enumerate() {
            p[a] *= r;
        }
        values.extend_from_slice(fine.at(fg.flat_index(p)));
    }
    Field::from_values(coarse, fine.rank(), values)
}

fn restrict_full(s: &FullState, g: &Grid) -> Result<FullState> {
    Ok(FullState { rho: restrict(&s.rho, g)?, v: restrict(&s.v, g)?, f: restrict(&s.f, g)?, m: restrict(&s.m, g)? })
}

fn restrict_perturb(s: &PerturbState, g: &Grid) -> Result<PerturbState> {
    Ok(PerturbState {
        theta: restrict(&s.theta, g)?,
        u: restrict(&s.u, g)?,
        psi: restrict(&s.psi, g)?,
        d: restrict(&s.d, g)?,
        m_e: s.m_e,
    })
}

/// Caches the most recent forcing evaluation; RK4 asks twice for each midpoint.
fn memoize<S: Clone + Send + 'static>(f: impl Fn(f64) -> S + Send + Sync + 'static) -> Arc<dyn Fn(f64) -> S + Send + Sync> {
    let cache: Mutex<Option<(f64, S)>> = Mutex::new(None);
    Arc::new(move |t| {
        let mut guard = cache.lock().expect("forcing cache");
        if let Some((tc, s)) = guard.as_ref() {
            if *tc == t {
                return s.clone();
            }
        }
        let s = f(t);
        *guard = Some((t, s.clone()));
        s
    })
}

/// Full system whose exact solution is the manufactured one. The forcing
/// `∂ₜq − RHS(q)` is evaluated on `reference` and sampled on `grid`.
pub fn forced_full_system(mf: Manufactured, p: Params, grid: &Grid, reference: &Grid) -> Result<FullSystem> {
    let spec = SampleSpec { s_order: 1, m_e: mf.m_e, coeffs: None };
    let base = FullSystem::new(p, ExternalField::Zero, spec);
    let mut sys = base.clone();
    let (g, r) = (grid.clone(), reference.clone());
    restrict(&Field::zeros(&r, Rank::Scalar), &g)?;
    sys.forcing = Some(memoize(move |t| {
        let (q, dq) = mf.full(&r, t);
        let rate = base.rate(t, &q).expect("manufactured state is admissible");
        restrict_full(&base.axpy(&dq, &rate, -1.0), &g).expect("restriction")
    }));
    Ok(sys)
}

/// Perturbation system whose exact solution is the manufactured one.
pub fn forced_perturb_system(mf: Manufactured, p: Params, grid: &Grid, reference: &Grid) -> Result<PerturbSystem> {
    let spec = SampleSpec { s_order: 1, m_e: mf.m_e, coeffs: None };
    let base = PerturbSystem::new(p, spec);
    let mut sys = base.clone();
    let (g, r) = (grid.clone(), reference.clone());
    restrict(&Field::zeros(&r, Rank::Scalar), &g)?;
    sys.forcing = Some(memoize(move |t| {
        let (q, dq) = mf.perturb(&r, t);
        let rate = base.rate(t, &q).expect("manufactured state is admissible");
        restrict_perturb(&base.axpy(&dq, &rate, -1.0), &g).expect("restriction")
    }));
    Ok(sys)
}

fn full_error(a: &FullState, b: &FullState) -> f64 {
    a.rho.max_diff(&b.rho).max(a.v.max_diff(&b.v)).max(a.f.max_diff(&b.f)).max(a.m.max_diff(&b.m))
}

fn perturb_error(a: &PerturbState, b: &PerturbState) -> f64 {
    a.theta.max_diff(&b.theta).max(a.u.max_diff(&b.u)).max(a.psi.max_diff(&b.psi)).max(a.d.max_diff(&b.d))
}

/// Max-norm error at `t_end` of a forced run against the manufactured solution.
pub fn mms_error(model: Model, mf: Manufactured, p: Params, grid: &Grid, reference: &Grid, t_end: f64, dt: f64) -> Result<f64> {
    let cfg = StepConfig { renormalize_m: false, ..StepConfig::rk4(dt) };
    let cadence = Cadence { sample_every: usize::MAX, snapshot_every: None };
    match model {
        Model::Full => {
            let sys = forced_full_system(mf, p, grid, reference)?;
            let run = advance(&sys, mf.full(grid, 0.0).0, t_end, &cfg, cadence)?;
            Ok(full_error(&run.final_state, &mf.full(grid, t_end).0))
        }
        Model::Perturb => {
            let sys = forced_perturb_system(mf, p, grid, reference)?;
            let run = advance(&sys, mf.perturb(grid, 0.0).0, t_end, &cfg, cadence)?;
            Ok(perturb_error(&run.final_state, &mf.perturb(grid, t_end).0))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    /// Points per axis (spatial study) or step size (temporal study).
    pub h: f64,
    pub error: f64,
    pub order: Option<f64>,
}

fn with_orders(rows: Vec<(f64, f64)>, spatial: bool) -> Vec<ConvergenceRow> {
    let mut out: Vec<ConvergenceRow> = Vec::new();
    for (h, error) in rows {
        let order = out.last().map(|prev| {
            let ratio = if spatial { h / prev.h } else { prev.h / h };
            (prev.error / error).ln() / ratio.ln()
        });
        out.push(ConvergenceRow { h, error, order });
    }
    out
}

/// Errors on grids with `ns` points per axis, with the forcing taken from a grid with
/// `n_ref` points per axis.
pub fn spatial_study(
    model: Model,
    mf: Manufactured,
    p: Params,
    dim: usize,
    ns: &[usize],
    n_ref: usize,
    t_end: f64,
    dt: f64,
) -> Result<Vec<ConvergenceRow>> {
    let reference = Grid::uniform(dim, n_ref)?;
    let rows = ns
        .par_iter()
        .map(|&n| Ok((n as f64, mms_error(model, mf, p, &Grid::uniform(dim, n)?, &reference, t_end, dt)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(with_orders(rows, true))
}

/// Errors for each `dt` on one grid, where the forced semi-discrete solution is exact.
pub fn temporal_study(model: Model, mf: Manufactured, p: Params, dim: usize, n: usize, t_end: f64, dts: &[f64]) -> Result<Vec<ConvergenceRow>> {
    let g = Grid::uniform(dim, n)?;
    let rows = dts.par_iter().map(|&dt| Ok((dt, mms_error(model, mf, p, &g, &g, t_end, dt)?))).collect::<Result<Vec<_>>>()?;
    Ok(with_orders(rows, false))
}
