//! Right-hand side of the full magnetoelastic system in `(ρ, v, F, M)`.

use crate::calc::{self, arr, cross3, dot3, scale_by, zip_map, zip_to_scalar};
use crate::error::{Error, Result};
use crate::grid::{Field, Rank};
use crate::state::{FullState, Params, Tolerances};

/// Which algebraic form of the magnetization equation to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LlgForm {
    /// `−v·∇M − γ_g M×H_eff − λ M×(M×H_eff)`.
    #[default]
    Cross,
    /// `−v·∇M + 2AλΔM + λμ₀H + Γ(M)M − γ_g M×H_eff`.
    Multiplier,
}

/// Time derivatives of the full state.
#[derive(Debug, Clone, PartialEq)]
pub struct FullRhs {
    pub d_rho: Field,
    pub d_v: Field,
    pub d_f: Field,
    pub d_m: Field,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhsOptions {
    /// Apply the 2/3 mask to the assembled `ρ`, `v`, `F` rates. The magnetization
    /// rate is never masked so that it stays pointwise tangent to `M`.
    pub dealias: bool,
    pub llg_form: LlgForm,
    pub rho_floor: f64,
    pub det_floor: f64,
}

impl Default for RhsOptions {
    fn default() -> Self {
        let tol = Tolerances::default();
        Self { dealias: true, llg_form: LlgForm::Cross, rho_floor: tol.rho_floor, det_floor: tol.det_floor }
    }
}

/// Pressure `P = aρ^γ` and internal energy density `w = a/(γ−1) ρ^γ`.
pub fn eos(rho: &Field, p: &Params) -> Result<(Field, Field)> {
    let min_rho = rho.values().iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_rho > 0.0) {
        return Err(Error::Vacuum { min_rho, floor: 0.0 });
    }
    let pressure = rho.map_to_scalar(|r| p.a * r[0].powf(p.gamma_p));
    let w = rho.map_to_scalar(|r| p.a / (p.gamma_p - 1.0) * r[0].powf(p.gamma_p));
    Ok((pressure, w))
}

/// `H_eff = 2AΔM + μ₀H`.
pub fn effective_field(m: &Field, h_ext: Option<&Field>, p: &Params) -> Field {
    let mut heff = calc::lap(m);
    heff.scale(2.0 * p.exchange);
    if let Some(h) = h_ext {
        heff = heff.add_scaled(h, p.mu0);
    }
    heff
}

/// `Γ(M) = 2λA|∇M|² − λμ₀ M·H`.
pub fn lagrange_multiplier(m: &Field, grad_m: &Field, h_ext: Option<&Field>, p: &Params) -> Field {
    let mut gamma = grad_m.map_to_scalar(|g| 2.0 * p.lambda_d * p.exchange * g.iter().map(|v| v * v).sum::<f64>());
    if let Some(h) = h_ext {
        gamma = gamma.add_scaled(&calc::dot(m, h), -p.lambda_d * p.mu0);
    }
    gamma
}

/// Magnetization rate in the chosen form.
///
/// The cross form writes transport as `M×(M×(v·∇M))`, which equals `−v·∇M` on the
/// sphere and keeps the rate exactly orthogonal to `M` at every grid point.
pub fn llg_rhs(m: &Field, v: &Field, h_ext: Option<&Field>, p: &Params, form: LlgForm) -> Field {
    let heff = effective_field(m, h_ext, p);
    let transport = calc::advect(v, m);
    match form {
        LlgForm::Cross => {
            let (gg, lam) = (p.gamma_g, p.lambda_d);
            let mh = zip_map(m, &heff, Rank::Vector, |mx, hx| {
                let (mv, hv) = (arr(mx), arr(hx));
                let c = cross3(mv, hv);
                let cc = cross3(mv, c);
                (0..3).map(|i| -gg * c[i] - lam * cc[i]).collect()
            });
            let tr = zip_map(m, &transport, Rank::Vector, |mx, tx| {
                let mv = arr(mx);
                cross3(mv, cross3(mv, arr(tx))).to_vec()
            });
            mh.add_scaled(&tr, 1.0)
        }
        LlgForm::Multiplier => {
            let grad_m = calc::grad(m);
            let gamma = lagrange_multiplier(m, &grad_m, h_ext, p);
            let mut out = calc::lap(m);
            out.scale(2.0 * p.exchange * p.lambda_d);
            if let Some(h) = h_ext {
                out = out.add_scaled(h, p.lambda_d * p.mu0);
            }
            out = out.add_scaled(&scale_by(&gamma, m), 1.0);
            out = out.add_scaled(&calc::cross(m, &heff), -p.gamma_g);
            out.add_scaled(&transport, -1.0)
        }
    }
}

/// `∇·(ρFFᵀ)` with `(∇·G)_i = ∂_j G^{ji}`.
pub fn stress_divergence_elastic(rho: &Field, f: &Field) -> Field {
    let stress = zip_map(f, rho, Rank::Matrix, |fx, r| {
        let fm = calc::mat3(fx);
        calc::mat3_to_vec(&(fm * fm.transpose() * r[0]))
    });
    calc::div_matrix(&stress)
}

/// Hookean stress in its undivided form `W′(F)Fᵀ/det F = FFᵀ/det F`, `W = ½|F|²`.
pub fn hookean_stress_over_det(f: &Field) -> Field {
    f.map_components(|fx| {
        let fm = calc::mat3(fx);
        calc::mat3_to_vec(&(fm * fm.transpose() / fm.determinant()))
    })
}

/// Magnetic body force `((∇H)ᵀM)_i = Σ_k ∂_i H_k M_k`.
fn field_gradient_force(m: &Field, h: &Field) -> Field {
    let gh = calc::grad(h);
    zip_map(&gh, m, Rank::Vector, |g, mx| (0..3).map(|i| (0..3).map(|k| g[3 * k + i] * mx[k]).sum()).collect())
}

fn check_floors(s: &FullState, opts: &RhsOptions) -> Result<()> {
    let min_rho = s.min_rho();
    if !(min_rho > opts.rho_floor) {
        return Err(Error::Vacuum { min_rho, floor: opts.rho_floor });
    }
    let min_det = s.min_det_f();
    if !(min_det > opts.det_floor) {
        return Err(Error::DegenerateDeformation { min_det, floor: opts.det_floor });
    }
    Ok(())
}

/// Momentum balance (undivided) without the inertial term `−ρv·∇v`.
fn momentum_forces(s: &FullState, h_ext: Option<&Field>, p: &Params) -> Result<Field> {
    let (pressure, _) = eos(&s.rho, p)?;
    let grad_m = calc::grad(&s.m);
    let grad_sq = grad_m.map_to_scalar(|g| g.iter().map(|v| v * v).sum());
    let mut potential = pressure.add_scaled(&grad_sq, -p.exchange);
    if let Some(h) = h_ext {
        potential = potential.add_scaled(&calc::dot(&s.m, h), p.mu0);
    }
    let mut force = calc::grad(&potential);
    force.scale(-1.0);
    force = force.add_scaled(&calc::lap(&s.v), p.mu);
    force = force.add_scaled(&calc::grad(&calc::div(&s.v)), p.mu + p.xi);
    force = force.add_scaled(&stress_divergence_elastic(&s.rho, &s.f), 1.0);
    force = force.add_scaled(&calc::div_matrix(&calc::gram(&grad_m)), -2.0 * p.exchange);
    if let Some(h) = h_ext {
        force = force.add_scaled(&field_gradient_force(&s.m, h), p.mu0);
    }
    Ok(force)
}

/// `(∇v F)_{ij} = Σ_k ∂_k v_i F^{kj}`.
fn stretch(grad_v: &Field, f: &Field) -> Field {
    zip_map(grad_v, f, Rank::Matrix, |g, fx| calc::mat3_to_vec(&(calc::mat3(g) * calc::mat3(fx))))
}

/// Rates of the full system. `d_v` is the momentum balance divided by `ρ`.
pub fn full_rhs(s: &FullState, h_ext: Option<&Field>, p: &Params, opts: &RhsOptions) -> Result<FullRhs> {
    check_floors(s, opts)?;
    let momentum = scale_by(&s.rho, &s.v);
    let mut d_rho = calc::div(&momentum);
    d_rho.scale(-1.0);

    let forces = momentum_forces(s, h_ext, p)?;
    let inv_rho = s.rho.map_to_scalar(|r| 1.0 / r[0]);
    let mut d_v = scale_by(&inv_rho, &forces).add_scaled(&calc::advect(&s.v, &s.v), -1.0);

    let grad_v = calc::grad(&s.v);
    let mut d_f = stretch(&grad_v, &s.f).add_scaled(&calc::advect(&s.v, &s.f), -1.0);

    let d_m = llg_rhs(&s.m, &s.v, h_ext, p, opts.llg_form);
    if opts.dealias {
        calc::dealias(&mut d_rho);
        calc::dealias(&mut d_v);
        calc::dealias(&mut d_f);
    }
    Ok(FullRhs { d_rho, d_v, d_f, d_m })
}

/// `max |M·d_M|` over the grid.
pub fn tangency_residual(m: &Field, d_m: &Field) -> f64 {
    zip_to_scalar(m, d_m, |a, b| dot3(arr(a), arr(b))).max_abs()
}
