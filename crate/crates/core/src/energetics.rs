//! Energy and dissipation functionals, and the coefficient matrix that controls
//! the instant dissipation rate.

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calc::{self, arr, cross3, dot3};
use crate::deformation;
use crate::error::Result;
use crate::grid::{sobolev_inner, sobolev_norm_sq, spatial_mean, Field, Rank};
use crate::model_full::{eos, effective_field};
use crate::model_perturb::sphere_constraint_residual;
use crate::state::{recompose, sphere_drift, FullState, Params, PerturbState};

/// Physical energy `E = K + F` and dissipation rate `D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub e: f64,
    pub k: f64,
    pub f_helm: f64,
    pub d: f64,
}

/// `K = ∫½ρ|v|²`, `F = ∫ w(ρ) + A|∇M|² + ½|F|²/det F − μ₀M·H`,
/// `D = ∫ μ|∇v|² + (μ+ξ)|∇·v|² + λ|M×H_eff|²`.
pub fn total_energy_dissipation(s: &FullState, h_ext: Option<&Field>, p: &Params) -> Result<EnergyBreakdown> {
    let grid = s.grid();
    let kin = calc::zip_to_scalar(&s.rho, &s.v, |r, v| 0.5 * r[0] * dot3(arr(v), arr(v)));
    let k = grid.integrate(kin.values());
    let (_, w) = eos(&s.rho, p)?;
    let exchange = calc::grad_sq(&s.m);
    let elastic = s.f.map_to_scalar(|x| {
        let m = calc::mat3(x);
        0.5 * m.norm_squared() / m.determinant()
    });
    let mut density = w.add_scaled(&exchange, p.exchange).add_scaled(&elastic, 1.0);
    if let Some(h) = h_ext {
        density = density.add_scaled(&calc::dot(&s.m, h), -p.mu0);
    }
    let f_helm = grid.integrate(density.values());
    let d = dissipation_rate(s, h_ext, p);
    Ok(EnergyBreakdown { e: k + f_helm, k, f_helm, d })
}

/// The dissipation rate `D` alone.
pub fn dissipation_rate(s: &FullState, h_ext: Option<&Field>, p: &Params) -> f64 {
    let grid = s.grid();
    let grad_v = calc::grad(&s.v).map_to_scalar(|g| g.iter().map(|x| x * x).sum());
    let div_v = calc::div(&s.v).map_to_scalar(|x| x[0] * x[0]);
    let heff = effective_field(&s.m, h_ext, p);
    let torque = calc::zip_to_scalar(&s.m, &heff, |m, h| {
        let c = cross3(arr(m), arr(h));
        dot3(c, c)
    });
    let density = grad_v.add_scaled(&div_v, (p.mu + p.xi) / p.mu);
    p.mu * grid.integrate(density.values()) + p.lambda_d * grid.integrate(torque.values())
}

fn hs(f: &Field, s: usize) -> Result<f64> {
    sobolev_norm_sq(f, s, None)
}

fn hs_w(f: &Field, s: usize, w: &Field) -> Result<f64> {
    sobolev_norm_sq(f, s, Some(w))
}

/// `𝓔ₛ = ‖ρ‖²_{Hˢ} + ‖F‖²_{Hˢ} + ‖v‖²_{Hˢ_ρ} + ‖∇M‖²_{Hˢ}` and
/// `𝓓ₛ = μ‖∇v‖²_{Hˢ} + (μ+ξ)‖∇·v‖²_{Hˢ} + 2λA‖ΔM‖²_{Hˢ}`.
pub fn local_functionals(s: &FullState, p: &Params, s_order: usize) -> Result<(f64, f64)> {
    let es = hs(&s.rho, s_order)? + hs(&s.f, s_order)? + hs_w(&s.v, s_order, &s.rho)? + hs(&calc::grad(&s.m), s_order)?;
    let ds = p.mu * hs(&calc::grad(&s.v), s_order)?
        + (p.mu + p.xi) * hs(&calc::div(&s.v), s_order)?
        + 2.0 * p.lambda_d * p.exchange * hs(&calc::lap(&s.m), s_order)?;
    Ok((es, ds))
}

/// `𝓔ₛ^in` evaluated on initial data.
pub fn local_initial_energy(s0: &FullState, p: &Params, s_order: usize) -> Result<f64> {
    Ok(local_functionals(s0, p, s_order)?.0)
}

fn global_from_parts(theta: &Field, u: &Field, d: &Field, grad_psi: &Field, s_order: usize) -> Result<(f64, f64)> {
    let dbar = spatial_mean(d);
    let grad_d = calc::grad(d);
    let es = hs(theta, s_order)?
        + hs(u, s_order)?
        + dot3(arr(&dbar), arr(&dbar))
        + hs(&d.minus_mean(), s_order)?
        + hs(&grad_d, s_order)?
        + hs(grad_psi, s_order)?;
    let ds = hs(&calc::grad(u), s_order)?
        + hs(&calc::grad(theta), s_order.saturating_sub(1))?
        + hs(grad_psi, s_order)?
        + hs(&grad_d, s_order)?
        + hs(&calc::lap(d), s_order)?
        + hs(&calc::div(u), s_order)?;
    Ok((es, ds))
}

/// `𝐄ₛ = ‖θ‖² + ‖u‖² + |d̄|² + ‖d−d̄‖² + ‖∇d‖² + ‖∇ψ‖²` (all `Hˢ`) and
/// `𝐃ₛ = ‖∇u‖²_{Hˢ} + ‖∇θ‖²_{H^{s−1}} + ‖∇ψ‖²_{Hˢ} + ‖∇d‖²_{Hˢ} + ‖Δd‖²_{Hˢ} + ‖∇·u‖²_{Hˢ}`.
pub fn global_functionals(s: &PerturbState, _p: &Params, s_order: usize) -> Result<(f64, f64)> {
    global_from_parts(&s.theta, &s.u, &s.d, &s.grad_psi(), s_order)
}

/// Global functionals of a full state about `(1, 0, I, M_e)`, with `∇ψ` replaced by `F⁻¹ − I`.
pub fn global_functionals_full(s: &FullState, m_e: [f64; 3], s_order: usize) -> Result<(f64, f64)> {
    let (theta, d, u_mat) = fluctuation_parts(s, m_e)?;
    global_from_parts(&theta, &s.v, &d, &u_mat, s_order)
}

fn fluctuation_parts(s: &FullState, m_e: [f64; 3]) -> Result<(Field, Field, Field)> {
    let theta = s.rho.map_to_scalar(|x| x[0] - 1.0);
    let d = s.m.map_to(Rank::Vector, |x| vec![x[0] - m_e[0], x[1] - m_e[1], x[2] - m_e[2]]);
    let u_mat = deformation::inverse_fluctuation(&s.f)?;
    Ok((theta, d, u_mat))
}

/// `𝐄ₛ^in = ‖ρ₀−1‖² + ‖v₀‖² + |mean(M₀−M_e)|² + ‖M₀−M̄₀‖² + ‖∇M₀‖² + ‖F₀⁻¹−I‖²` (all `Hˢ`).
pub fn global_initial_energy(s0: &FullState, m_e: [f64; 3], s_order: usize) -> Result<f64> {
    Ok(global_functionals_full(s0, m_e, s_order)?.0)
}

/// `𝔴(θ) = (1+θ)^{γ−2}`, so that `aγ𝔴(θ) = P′(1+θ)/(1+θ)`.
pub fn weight_w(theta: &Field, p: &Params) -> Result<Field> {
    let rho = theta.map_to_scalar(|x| 1.0 + x[0]);
    eos(&rho, p)?;
    Ok(rho.map_to_scalar(|r| r[0].powf(p.gamma_p - 2.0)))
}

/// Weights `(δ, η, ε)` of the instant functionals and the constants they involve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoeffChoice {
    pub delta: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub c0: f64,
    pub c1: f64,
    /// Poincaré constant for zero-mean fields on `[0, 2π)^dim`.
    pub c_p: f64,
}

impl CoeffChoice {
    /// Choice with the equilibrium constants `c₀ = c₁ = c_p = 1`.
    pub fn at_equilibrium(delta: f64, eta: f64, epsilon: f64) -> Self {
        Self { delta, eta, epsilon, c0: 1.0, c1: 1.0, c_p: 1.0 }
    }

    /// Replaces `c₀ = sup(1+θ)^{−γ/2}` and `c₁ = sup(1+θ)^{(2−γ)/2}` by their values on `θ`.
    pub fn with_state_constants(mut self, theta: &Field, p: &Params) -> Self {
        let g = p.gamma_p;
        let sup = |e: f64| theta.values().iter().fold(f64::NEG_INFINITY, |m, t| m.max((1.0 + t).powf(e)));
        self.c0 = sup(-g / 2.0);
        self.c1 = sup((2.0 - g) / 2.0);
        self
    }
}

/// Instant functionals with each term reported separately.
#[derive(Debug, Clone, PartialEq)]
pub struct InstantFunctionals {
    pub e: f64,
    pub d: f64,
    pub e_terms: Vec<(&'static str, f64)>,
    pub d_terms: Vec<(&'static str, f64)>,
}

/// The instant energy `𝔼_{s;δ,η,ε}` and dissipation `𝔻_{s;δ,η,ε}`.
pub fn instant_functionals(s: &PerturbState, p: &Params, s_order: usize, c: &CoeffChoice) -> Result<InstantFunctionals> {
    let so = s_order;
    let sm = so.saturating_sub(1);
    let (eps, eta, delta) = (c.epsilon, c.eta, c.delta);
    let ag = p.a * p.gamma_p;
    let w = weight_w(&s.theta, p)?;
    let rho = s.theta.map_to_scalar(|x| 1.0 + x[0]);
    let grad_theta = calc::grad(&s.theta);
    let grad_u = calc::grad(&s.u);
    let div_u = calc::div(&s.u);
    let grad_psi = s.grad_psi();
    let div_psi = calc::div(&s.psi);
    let dbar = spatial_mean(&s.d);
    let grad_d = calc::grad(&s.d);

    let e_terms = vec![
        ("eps_ag_theta_w", eps * ag * hs_w(&s.theta, so, &w)?),
        ("eps_u_rho", eps * hs_w(&s.u, so, &rho)?),
        ("eps_eta_u_plus_grad_theta", eps * eta * hs(&s.u.add_scaled(&grad_theta, 1.0), sm)?),
        ("minus_eps_eta_u", -eps * eta * hs(&s.u, sm)?),
        ("minus_eps_eta_grad_theta", -eps * eta * hs(&grad_theta, sm)?),
        ("dbar_sq", dot3(arr(&dbar), arr(&dbar))),
        ("d_minus_dbar", hs(&s.d.minus_mean(), so)?),
        ("grad_d", hs(&grad_d, so)?),
        ("delta_grad_psi", delta * hs(&grad_psi, so)?),
        ("delta_u_minus_ubar", delta * hs(&s.u.minus_mean(), so)?),
        ("psi_u_cross", -2.0 * delta / p.mu * sobolev_inner(&s.psi.minus_mean(), &s.u, so, None)?),
    ];

    let n_grad_u = hs(&grad_u, so)?.sqrt();
    let n_div_u = hs(&div_u, so)?.sqrt();
    let n_grad_psi = hs(&grad_psi, so)?.sqrt();
    let n_grad_theta_w = hs_w(&grad_theta, sm, &w)?.sqrt();
    let mpx = p.mu + p.xi;
    let d_terms = vec![
        ("grad_u", (eps * p.mu + delta * p.mu - delta * c.c_p / p.mu) * n_grad_u * n_grad_u),
        ("div_u", (eps + delta) * mpx * n_div_u * n_div_u),
        ("eps_eta_ag_grad_theta_w", eps * eta * ag * hs_w(&grad_theta, so, &w)?),
        ("delta_grad_psi", delta / p.mu * n_grad_psi * n_grad_psi),
        ("grad_psi_grad_u", -(eps + delta) * sobolev_inner(&grad_psi, &grad_u, so, None)?),
        ("div_psi_div_u", -mpx / p.mu * delta * sobolev_inner(&div_psi, &div_u, so, None)?),
        ("c0_product", -c.c0 * eps * eta * (p.mu * n_grad_u + mpx * n_div_u + n_grad_psi) * n_grad_theta_w),
        ("c1_product", -c.c1 * delta * ag * (p.mu * n_grad_u + n_grad_psi) * n_grad_theta_w),
        ("grad_d", 2.0 * p.exchange * p.lambda_d * hs(&grad_d, so)?),
        ("lap_d", 2.0 * p.exchange * p.lambda_d * hs(&calc::lap(&s.d), so)?),
    ];
    Ok(InstantFunctionals {
        e: e_terms.iter().map(|t| t.1).sum(),
        d: d_terms.iter().map(|t| t.1).sum(),
        e_terms,
        d_terms,
    })
}

/// The symmetric 4×4 matrix whose positivity controls the instant dissipation rate,
/// acting on `(‖∇u‖, ‖∇·u‖, ‖∇ψ‖, ‖∇θ‖)`.
pub fn coeff_matrix(p: &Params, c: &CoeffChoice) -> Matrix4<f64> {
    let (e, d, eta) = (c.epsilon, c.delta, c.eta);
    let (mu, mpx, ag) = (p.mu, p.mu + p.xi, p.a * p.gamma_p);
    let m11 = e * mu + d * mu - d * c.c_p / mu;
    let m13 = -(1.0 + d) / 2.0;
    let m14 = -0.5 * (c.c0 * e * eta * mu + c.c1 * d * mu * ag);
    let m22 = (e + d) * mpx;
    let m23 = -d * mpx / (2.0 * mu);
    let m24 = -0.5 * c.c0 * e * eta * mpx;
    let m33 = d / mu;
    let m34 = -0.5 * (c.c0 * e * eta + c.c1 * d * ag);
    let m44 = e * eta * ag;
    Matrix4::new(
        m11, 0.0, m13, m14, //
        0.0, m22, m23, m24, //
        m13, m23, m33, m34, //
        m14, m24, m34, m44,
    )
}

/// Leading principal minors of the coefficient matrix, computed directly and from the
/// closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoeffMinors {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    /// `M3` from its cubic-in-`δ` closed form.
    pub m3_closed: f64,
    /// `M4` from the closed form in `Ξ₀, Ξ₁, Ξ₂`.
    pub m4_closed: f64,
    /// `M3 = M2 · u_det`, the factorization of the direct determinant.
    pub m3_factored: f64,
    /// `M4` from `Ξ₂, Ξ₁` and the sign-corrected constant term `−Ξ₀`.
    pub m4_factored: f64,
    pub xi0: f64,
    pub xi1: f64,
    pub xi2: f64,
    /// The scalar `δ/μ − μ(1+δ)²/(4S) − δ²(μ+ξ)/(4μ²(ε+δ))`, `S = μ²(ε+δ) − δc_p`.
    pub u_det: f64,
    /// `c_# = min{δ/2, ε − 4c_p²δ/μ²}`.
    pub c_sharp: f64,
}

fn leading_minor(m: &Matrix4<f64>, k: usize) -> f64 {
    m.view((0, 0), (k, k)).clone_owned().determinant()
}

pub fn coeff_minors(p: &Params, c: &CoeffChoice) -> CoeffMinors {
    let mat = coeff_matrix(p, c);
    let (e, d, eta) = (c.epsilon, c.delta, c.eta);
    let (mu, mpx, ag, cp) = (p.mu, p.mu + p.xi, p.a * p.gamma_p, c.c_p);
    let (c0, c1) = (c.c0, c.c1);

    let m3_closed = mpx
        * (((1.0 - cp / (mu * mu)) * (1.0 - mpx / 4.0) - 0.25) * d.powi(3)
            + (e * (2.0 - cp / (mu * mu) - mpx / 4.0) - 0.75) * d * d
            + (e * e - 0.75) * d
            - 0.25);
    let s = mu * mu * (e + d) - d * cp;
    let u_det = d / mu - mu * (1.0 + d).powi(2) / (4.0 * s) - d * d * mpx / (4.0 * mu * mu * (e + d));
    let bq = 0.5 + mu * mu * (1.0 + d) / (4.0 * s);
    let bc = bq + d * mpx / (4.0 * mu * (e + d));
    let xi2 = c0 * c0 * e * e * (-0.25 * (mu.powi(3) / s + mpx / (e + d)) * u_det - bc * bc);
    let xi1 = e * (u_det * (ag - mu.powi(3) * c0 * c1 * d * ag / (2.0 * s)) - 2.0 * c0 * c1 * d * ag * bq * bc);
    let xi0 = (c1 * d * ag).powi(2) * (mu.powi(3) * u_det / (4.0 * s) + bq * bq);
    let prefactor = (e + d) * mpx / mu * s;
    let m2 = leading_minor(&mat, 2);
    CoeffMinors {
        m1: mat[(0, 0)],
        m2,
        m3: leading_minor(&mat, 3),
        m4: mat.determinant(),
        m3_closed,
        m4_closed: prefactor * (xi2 * eta * eta + xi1 * eta + xi0),
        m3_factored: m2 * u_det,
        m4_factored: prefactor * (xi2 * eta * eta + xi1 * eta - xi0),
        xi0,
        xi1,
        xi2,
        u_det,
        c_sharp: (d / 2.0).min(e - 4.0 * cp * cp * d / (mu * mu)),
    }
}

/// Smallest over largest absolute eigenvalue of the coefficient matrix; positive iff
/// the matrix is positive definite.
pub fn definiteness_score(p: &Params, c: &CoeffChoice) -> f64 {
    let eig = SymmetricEigen::new(coeff_matrix(p, c)).eigenvalues;
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Log-grid search ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchLimits {
    pub epsilon: (f64, f64),
    pub delta: (f64, f64),
    pub eta: (f64, f64),
    pub points_per_decade: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        Self { epsilon: (1.0, 1e4), delta: (1e-6, 1.0), eta: (1e-8, 1.0), points_per_decade: 8 }
    }
}

fn log_grid(range: (f64, f64), per_decade: usize) -> Vec<f64> {
    let (lo, hi) = (range.0.log10(), range.1.log10());
    let n = ((hi - lo) * per_decade as f64).round().max(0.0) as usize;
    (0..=n).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / n.max(1) as f64)).collect()
}

/// Result of the coefficient search.
#[derive(Debug, Clone, PartialEq)]
pub enum SearchOutcome {
    Found { choice: CoeffChoice, minors: CoeffMinors },
    /// No admissible point; reports the grid point with the largest definiteness score.
    Failed { nearest: CoeffChoice, minors: CoeffMinors, score: f64, evaluated: usize },
}

impl SearchOutcome {
    pub fn choice(&self) -> Option<CoeffChoice> {
        match self {
            SearchOutcome::Found { choice, .. } => Some(*choice),
            SearchOutcome::Failed { .. } => None,
        }
    }
}

fn admissible(m: &CoeffMinors) -> bool {
    m.m1 > 0.0 && m.m2 > 0.0 && m.m3 > 0.0 && m.m4 > 0.0 && m.xi0 > 0.0 && m.c_sharp > 0.0
}

/// Scans `(ε, δ, η)` on a log grid for the first point where all direct minors,
/// `Ξ₀` and `c_#` are positive, with `c₀ = c₁ = c_p = 1`.
pub fn coeff_search(p: &Params, limits: &SearchLimits) -> SearchOutcome {
    let eps_grid = log_grid(limits.epsilon, limits.points_per_decade);
    let delta_grid = log_grid(limits.delta, limits.points_per_decade);
    let eta_grid = log_grid(limits.eta, limits.points_per_decade);
    let mut best: Option<(f64, CoeffChoice)> = None;
    let mut evaluated = 0;
    for &epsilon in &eps_grid {
        for &delta in &delta_grid {
            for &eta in &eta_grid {
                let c = CoeffChoice::at_equilibrium(delta, eta, epsilon);
                let m = coeff_minors(p, &c);
                evaluated += 1;
                if admissible(&m) {
                    return SearchOutcome::Found { choice: c, minors: m };
                }
                let score = definiteness_score(p, &c);
                if best.map_or(true, |(b, _)| score > b) {
                    best = Some((score, c));
                }
            }
        }
    }
    let (score, nearest) = best.expect("search grid is never empty");
    SearchOutcome::Failed { nearest, minors: coeff_minors(p, &nearest), score, evaluated }
}

/// Samples `V𝓜Vᵀ/|V|²` on random unit directions; returns the minimum seen.
pub fn quadratic_form_min(p: &Params, c: &CoeffChoice, samples: usize, seed: u64) -> f64 {
    let m = coeff_matrix(p, c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            let v = Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            (v.transpose() * m * v)[(0, 0)] / v.norm_squared()
        })
        .fold(f64::INFINITY, f64::min)
}

/// One time-row of every functional and structural residual. Entries that do not
/// apply to a model are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    pub t: f64,
    pub e_total: f64,
    pub k: f64,
    pub f_helm: f64,
    pub d_total: f64,
    pub es_local: f64,
    pub ds_local: f64,
    pub es_global: f64,
    pub ds_global: f64,
    pub e_instant: f64,
    pub d_instant: f64,
    pub res_sphere: f64,
    pub res_det: f64,
    pub res_curl: f64,
    pub res_compat: f64,
    pub dbar: [f64; 3],
    pub ubar: [f64; 3],
    pub psibar: [f64; 3],
}

impl FunctionalSample {
    pub const COLUMNS: [&'static str; 18] = [
        "t", "E_total", "K", "F_helm", "D_total", "Es_local", "Ds_local", "Es_global", "Ds_global", "E_instant",
        "D_instant", "res_sphere", "res_det", "res_curl", "res_compat", "dbar_x", "dbar_y", "dbar_z",
    ];

    /// Values in `COLUMNS` order.
    pub fn row(&self) -> [f64; 18] {
        [
            self.t,
            self.e_total,
            self.k,
            self.f_helm,
            self.d_total,
            self.es_local,
            self.ds_local,
            self.es_global,
            self.ds_global,
            self.e_instant,
            self.d_instant,
            self.res_sphere,
            self.res_det,
            self.res_curl,
            self.res_compat,
            self.dbar[0],
            self.dbar[1],
            self.dbar[2],
        ]
    }
}

/// What to include when sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub s_order: usize,
    pub m_e: [f64; 3],
    pub coeffs: Option<CoeffChoice>,
}

fn mean3(f: &Field) -> [f64; 3] {
    arr(&spatial_mean(f))
}

/// Samples a full state. `∇ψ` is taken as `F⁻¹ − I`, and `ψ` (needed by the instant
/// functionals) is its potential with the mean of `U` ignored.
pub fn sample_full(t: f64, s: &FullState, h_ext: Option<&Field>, p: &Params, spec: &SampleSpec) -> Result<FunctionalSample> {
    let en = total_energy_dissipation(s, h_ext, p)?;
    let (es_local, ds_local) = local_functionals(s, p, spec.s_order)?;
    let (theta, d, u_mat) = fluctuation_parts(s, spec.m_e)?;
    let (es_global, ds_global) = global_from_parts(&theta, &s.v, &d, &u_mat, spec.s_order)?;
    let psi = deformation::recover_psi_with(&u_mat, f64::INFINITY)?;
    let (e_instant, d_instant) = match spec.coeffs {
        Some(c) => {
            let ps = PerturbState { theta: theta.clone(), u: s.v.clone(), psi: psi.clone(), d: d.clone(), m_e: spec.m_e };
            let inst = instant_functionals(&ps, p, spec.s_order, &c.with_state_constants(&theta, p))?;
            (inst.e, inst.d)
        }
        None => (f64::NAN, f64::NAN),
    };
    let det_u = calc::det_field(&u_mat.add_scaled(&calc::identity_field(s.grid()), 1.0));
    let res_compat = theta.values().iter().zip(det_u.values()).fold(0.0f64, |m, (t, d)| m.max((1.0 + t - d).abs()));
    Ok(FunctionalSample {
        t,
        e_total: en.e,
        k: en.k,
        f_helm: en.f_helm,
        d_total: en.d,
        es_local,
        ds_local,
        es_global,
        ds_global,
        e_instant,
        d_instant,
        res_sphere: sphere_drift(&s.m),
        res_det: s.det_residual(),
        res_curl: deformation::curl_residual(&u_mat),
        res_compat,
        dbar: mean3(&d),
        ubar: mean3(&s.v),
        psibar: mean3(&psi),
    })
}

/// Samples a perturbation state; the physical energy is that of the recomposed full state.
pub fn sample_perturb(t: f64, s: &PerturbState, p: &Params, spec: &SampleSpec) -> Result<FunctionalSample> {
    let full = recompose(s)?;
    let en = total_energy_dissipation(&full, None, p)?;
    let (es_local, ds_local) = local_functionals(&full, p, spec.s_order)?;
    let (es_global, ds_global) = global_functionals(s, p, spec.s_order)?;
    let (e_instant, d_instant) = match spec.coeffs {
        Some(c) => {
            let inst = instant_functionals(s, p, spec.s_order, &c.with_state_constants(&s.theta, p))?;
            (inst.e, inst.d)
        }
        None => (f64::NAN, f64::NAN),
    };
    Ok(FunctionalSample {
        t,
        e_total: en.e,
        k: en.k,
        f_helm: en.f_helm,
        d_total: en.d,
        es_local,
        ds_local,
        es_global,
        ds_global,
        e_instant,
        d_instant,
        res_sphere: sphere_constraint_residual(s),
        res_det: full.det_residual(),
        res_curl: deformation::curl_residual(&s.grad_psi()),
        res_compat: s.compat_residual(),
        dbar: mean3(&s.d),
        ubar: mean3(&s.u),
        psibar: mean3(&s.psi),
    })
}
