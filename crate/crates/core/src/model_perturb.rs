//! Right-hand side of the fluctuation system in `(θ, u, ψ, d)` about `(1, 0, I, M_e)`,
//! with no external field.

use crate::calc::{self, arr, cross3, scale_by, zip_map};
use crate::deformation;
use crate::error::{Error, Result};
use crate::grid::{spatial_mean, Field, Rank};
use crate::model_full::eos;
use crate::state::{Params, PerturbState, Tolerances};

/// Time derivatives of a perturbation state.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbRhs {
    pub d_theta: Field,
    pub d_u: Field,
    pub d_psi: Field,
    pub d_d: Field,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbOptions {
    /// Apply the 2/3 mask to the assembled `θ` and `u` rates.
    pub dealias: bool,
    pub rho_floor: f64,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        Self { dealias: true, rho_floor: Tolerances::default().rho_floor }
    }
}

/// Rates of the fluctuation system. `d_u` is divided by `1+θ`, and the elastic force
/// uses the exact rewriting in terms of `θ`, `ψ` and `U = ∇ψ`.
pub fn perturb_rhs(s: &PerturbState, p: &Params, opts: &PerturbOptions) -> Result<PerturbRhs> {
    let min_rho = s.theta.values().iter().fold(f64::INFINITY, |m, t| m.min(1.0 + t));
    if !(min_rho > opts.rho_floor) {
        return Err(Error::Vacuum { min_rho, floor: opts.rho_floor });
    }
    let one_plus = s.theta.map_to_scalar(|x| 1.0 + x[0]);
    let div_u = calc::div(&s.u);

    let mut d_theta = calc::advect(&s.u, &s.theta).add_scaled(&scale_by(&one_plus, &div_u), 1.0);
    d_theta.scale(-1.0);

    let (pressure, _) = eos(&one_plus, p)?;
    let grad_d = calc::grad(&s.d);
    let grad_sq = grad_d.map_to_scalar(|g| g.iter().map(|v| v * v).sum());
    let mut force = calc::grad(&pressure.add_scaled(&grad_sq, -p.exchange));
    force.scale(-1.0);
    force = force.add_scaled(&calc::lap(&s.u), p.mu);
    force = force.add_scaled(&calc::grad(&div_u), p.mu + p.xi);
    let u_mat = calc::grad(&s.psi);
    force = force.add_scaled(&deformation::reformulated_unchecked(&s.theta, &s.psi, &u_mat)?, 1.0);
    force = force.add_scaled(&calc::div_matrix(&calc::gram(&grad_d)), -2.0 * p.exchange);
    let inv = one_plus.map_to_scalar(|x| 1.0 / x[0]);
    let mut d_u = scale_by(&inv, &force).add_scaled(&calc::advect(&s.u, &s.u), -1.0);

    let mut d_psi = calc::advect(&s.u, &s.psi);
    d_psi = d_psi.add_scaled(&s.u, 1.0);
    d_psi.scale(-1.0);

    let d_d = d_rate(s, p, &grad_sq);
    if opts.dealias {
        calc::dealias(&mut d_theta);
        calc::dealias(&mut d_u);
    }
    Ok(PerturbRhs { d_theta, d_u, d_psi, d_d })
}

/// `−u·∇d + 2AλΔd + 2Aλ|∇d|²(d+M_e) − 2Aγ_g(d+M_e)×Δd`.
fn d_rate(s: &PerturbState, p: &Params, grad_sq: &Field) -> Field {
    let m = s.magnetization();
    let lap_d = calc::lap(&s.d);
    let two_a = 2.0 * p.exchange;
    let mut out = lap_d.clone();
    out.scale(two_a * p.lambda_d);
    out = out.add_scaled(&scale_by(grad_sq, &m), two_a * p.lambda_d);
    let prec = zip_map(&m, &lap_d, Rank::Vector, |mx, lx| cross3(arr(mx), arr(lx)).to_vec());
    out = out.add_scaled(&prec, -two_a * p.gamma_g);
    out.add_scaled(&calc::advect(&s.u, &s.d), -1.0)
}

/// `w = μ(u − ū) − (ψ − ψ̄)`.
pub fn aux_w(s: &PerturbState, p: &Params) -> Field {
    let mut w = s.u.minus_mean();
    w.scale(p.mu);
    w.add_scaled(&s.psi.minus_mean(), -1.0)
}

/// `max |Δ(∂ₜψ) + Δψ/μ + Δw/μ + Δ(u·∇ψ)|`, which vanishes identically when `∂ₜψ = −u − u·∇ψ`.
pub fn psi_wave_residual(s: &PerturbState, s_dot: &PerturbRhs, p: &Params) -> f64 {
    let mut r = calc::lap(&s_dot.d_psi);
    r = r.add_scaled(&calc::lap(&s.psi), 1.0 / p.mu);
    r = r.add_scaled(&calc::lap(&aux_w(s, p)), 1.0 / p.mu);
    r = r.add_scaled(&calc::lap(&calc::advect(&s.u, &s.psi)), 1.0);
    r.max_abs()
}

/// Rate of the mean `d̄`: `(1/|𝕋|)∫(∇·u)(d−d̄) + (2Aλ/|𝕋|)∫|∇d|²(d+M_e)`.
pub fn dbar_rhs(s: &PerturbState, p: &Params) -> [f64; 3] {
    let div_u = calc::div(&s.u);
    let first = spatial_mean(&scale_by(&div_u, &s.d.minus_mean()));
    let grad_sq = calc::grad_sq(&s.d);
    let second = spatial_mean(&scale_by(&grad_sq, &s.magnetization()));
    let c = 2.0 * p.exchange * p.lambda_d;
    [first[0] + c * second[0], first[1] + c * second[1], first[2] + c * second[2]]
}

/// `max | |d|² + 2M_e·d |`.
pub fn sphere_constraint_residual(s: &PerturbState) -> f64 {
    let me = s.m_e;
    s.d.values().chunks(3).fold(0.0, |acc, x| {
        let r = x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + 2.0 * (me[0] * x[0] + me[1] * x[1] + me[2] * x[2]);
        acc.max(r.abs())
    })
}
