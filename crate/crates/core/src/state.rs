//! Parameters, full and perturbation states, and conversions between them.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calc::{self, arr, det_field, identity_field, mat3, norm3};
use crate::deformation;
use crate::error::{Error, Result};
use crate::grid::{sobolev_norm_sq, Field, Grid, Rank};

/// Physical coefficients. `gamma_p` is the adiabatic exponent of the pressure
/// law, `gamma_g` the gyromagnetic constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Pressure coefficient in `P = a ρ^γ`.
    pub a: f64,
    pub gamma_p: f64,
    /// Exchange constant.
    #[serde(rename = "A")]
    pub exchange: f64,
    /// Gilbert damping.
    pub lambda_d: f64,
    pub gamma_g: f64,
    /// Shear viscosity.
    pub mu: f64,
    /// Second viscosity.
    pub xi: f64,
    /// Permeability.
    pub mu0: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self { a: 1.0, gamma_p: 2.0, exchange: 1.0, lambda_d: 1.0, gamma_g: 1.0, mu: 1.0, xi: 0.0, mu0: 1.0 }
    }
}

/// Returns every violated coefficient condition (empty when all hold).
pub fn validate_params(p: &Params) -> Vec<String> {
    let checks = [
        (p.a > 0.0, "a>0"),
        (p.gamma_p > 1.0, "gamma_p>1"),
        (p.exchange > 0.0, "A>0"),
        (p.lambda_d > 0.0, "lambda_d>0"),
        (p.gamma_g >= 0.0, "gamma_g>=0"),
        (p.mu > 0.0, "mu>0"),
        (p.mu + p.xi > 0.0, "mu+xi>0"),
        (p.mu0 >= 0.0, "mu0>=0"),
    ];
    let mut out: Vec<String> =
        checks.iter().filter(|(ok, _)| !ok).map(|(_, name)| name.to_string()).collect();
    let all = [p.a, p.gamma_p, p.exchange, p.lambda_d, p.gamma_g, p.mu, p.xi, p.mu0];
    if all.iter().any(|v| !v.is_finite()) {
        out.push("finite".into());
    }
    out
}

/// Thresholds for state validation and structural checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub sphere_tol: f64,
    pub det_floor: f64,
    pub rho_floor: f64,
    /// Curl tolerance, multiplied by `1 + ‖U‖_{H¹}`.
    pub curl_tol: f64,
    pub mean_tol: f64,
    /// Allowed `max |1+θ − det(I+U)|` for the reformulated elastic force.
    pub compat_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { sphere_tol: 1e-8, det_floor: 1e-6, rho_floor: 1e-6, curl_tol: 1e-8, mean_tol: 1e-10, compat_tol: 1e-6 }
    }
}

/// `(ρ, v, F, M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub rho: Field,
    pub v: Field,
    pub f: Field,
    pub m: Field,
}

impl FullState {
    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }

    pub fn min_rho(&self) -> f64 {
        self.rho.values().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn min_det_f(&self) -> f64 {
        det_field(&self.f).values().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `max | |M| − 1 |`.
    pub fn sphere_residual(&self) -> f64 {
        sphere_drift(&self.m)
    }

    /// `max |ρ det F − 1|`.
    pub fn det_residual(&self) -> f64 {
        deformation::det_constraint_residual(&self.rho, &self.f)
    }

    /// Checks ranks, grids, finiteness and the hard floors.
    pub fn validate(&self, tol: &Tolerances) -> Result<()> {
        let g = self.grid();
        let ranks = [
            (&self.rho, Rank::Scalar, "rho"),
            (&self.v, Rank::Vector, "v"),
            (&self.f, Rank::Matrix, "F"),
            (&self.m, Rank::Vector, "M"),
        ];
        for (f, r, name) in ranks {
            if f.grid() != g || f.rank() != r {
                return Err(Error::Shape(format!("field {name} has wrong grid or rank")));
            }
            if !f.is_finite() {
                return Err(Error::Argument(format!("field {name} has non-finite entries")));
            }
        }
        let min_rho = self.min_rho();
        if min_rho <= tol.rho_floor {
            return Err(Error::Vacuum { min_rho, floor: tol.rho_floor });
        }
        let min_det = self.min_det_f();
        if min_det <= tol.det_floor {
            return Err(Error::DegenerateDeformation { min_det, floor: tol.det_floor });
        }
        Ok(())
    }
}

/// Fluctuations `(θ, u, ψ, d)` about `(1, 0, I, M_e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbState {
    pub theta: Field,
    pub u: Field,
    pub psi: Field,
    pub d: Field,
    pub m_e: [f64; 3],
}

impl PerturbState {
    pub fn zero(grid: &Grid, m_e: [f64; 3]) -> Result<Self> {
        check_unit(m_e)?;
        Ok(Self {
            theta: Field::zeros(grid, Rank::Scalar),
            u: Field::zeros(grid, Rank::Vector),
            psi: Field::zeros(grid, Rank::Vector),
            d: Field::zeros(grid, Rank::Vector),
            m_e,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.theta.grid()
    }

    /// `U = ∇ψ`.
    pub fn grad_psi(&self) -> Field {
        calc::grad(&self.psi)
    }

    /// `M = d + M_e` as a field.
    pub fn magnetization(&self) -> Field {
        let me = self.m_e;
        self.d.map_to(Rank::Vector, |x| vec![x[0] + me[0], x[1] + me[1], x[2] + me[2]])
    }

    /// `max |1 + θ − det(I + ∇ψ)|`.
    pub fn compat_residual(&self) -> f64 {
        let u = self.grad_psi();
        let det = det_field(&u.add_scaled(&identity_field(self.grid()), 1.0));
        self.theta
            .values()
            .iter()
            .zip(det.values())
            .fold(0.0, |m, (t, d)| m.max((1.0 + t - d).abs()))
    }
}

/// External magnetic field, static or sampled in time.
#[derive(Clone, Default)]
pub enum ExternalField {
    #[default]
    Zero,
    Static(Field),
    TimeDependent(Arc<dyn Fn(f64, &Grid) -> Field + Send + Sync>),
}

impl fmt::Debug for ExternalField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExternalField::Zero => write!(f, "Zero"),
            ExternalField::Static(h) => write!(f, "Static(max {:e})", h.max_abs()),
            ExternalField::TimeDependent(_) => write!(f, "TimeDependent"),
        }
    }
}

impl ExternalField {
    /// Uniform static field.
    pub fn uniform(grid: &Grid, h: [f64; 3]) -> Self {
        if h == [0.0; 3] {
            ExternalField::Zero
        } else {
            ExternalField::Static(Field::constant(grid, Rank::Vector, &h))
        }
    }

    /// Field at time `t`, or `None` when identically zero.
    pub fn at(&self, t: f64, grid: &Grid) -> Option<Field> {
        match self {
            ExternalField::Zero => None,
            ExternalField::Static(h) => Some(h.clone()),
            ExternalField::TimeDependent(gen) => Some(gen(t, grid)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ExternalField::Zero)
    }

    pub fn time_dependent(&self) -> bool {
        matches!(self, ExternalField::TimeDependent(_))
    }
}

fn check_unit(m_e: [f64; 3]) -> Result<()> {
    if !((norm3(m_e) - 1.0).abs() <= 1e-12) {
        return Err(Error::Argument(format!("M_e = {m_e:?} is not a unit vector")));
    }
    Ok(())
}

/// `max | |M| − 1 |` over the grid.
pub fn sphere_drift(m: &Field) -> f64 {
    m.values().chunks(3).fold(0.0, |acc, x| acc.max((norm3(arr(x)) - 1.0).abs()))
}

/// The constant equilibrium `(1, 0, I, M_e)`.
pub fn equilibrium_state(grid: &Grid, m_e: [f64; 3]) -> Result<FullState> {
    check_unit(m_e)?;
    Ok(FullState {
        rho: Field::constant(grid, Rank::Scalar, &[1.0]),
        v: Field::zeros(grid, Rank::Vector),
        f: identity_field(grid),
        m: Field::constant(grid, Rank::Vector, &m_e),
    })
}

/// Splits a full state into fluctuations about `(1, 0, I, M_e)`. `ψ` is recovered from
/// `U = F⁻¹ − I` with zero mean.
pub fn decompose(full: &FullState, m_e: [f64; 3], tol: &Tolerances) -> Result<PerturbState> {
    check_unit(m_e)?;
    let u_mat = deformation::inverse_fluctuation_with(&full.f, tol.det_floor)?;
    let residual = deformation::curl_residual(&u_mat);
    let scale = 1.0 + sobolev_norm_sq(&u_mat, 1, None)?.sqrt();
    if residual > tol.curl_tol * scale {
        return Err(Error::IncompatibleDeformation { residual, tol: tol.curl_tol * scale });
    }
    let psi = deformation::recover_psi_with(&u_mat, tol.mean_tol)?;
    let theta = full.rho.map_to_scalar(|x| x[0] - 1.0);
    let d = full.m.map_to(Rank::Vector, |x| vec![x[0] - m_e[0], x[1] - m_e[1], x[2] - m_e[2]]);
    Ok(PerturbState { theta, u: full.v.clone(), psi, d, m_e })
}

/// Rebuilds `(ρ, v, F, M) = (1+θ, u, (I+∇ψ)⁻¹, d+M_e)`.
pub fn recompose(p: &PerturbState) -> Result<FullState> {
    let u_mat = p.grad_psi();
    let f = deformation::deformation_from_fluctuation(&u_mat, Tolerances::default().det_floor)?;
    Ok(FullState {
        rho: p.theta.map_to_scalar(|x| 1.0 + x[0]),
        v: p.u.clone(),
        f,
        m: p.magnetization(),
    })
}

/// Largest wavenumber used for random data on this grid.
fn random_kmax(grid: &Grid) -> usize {
    let n_min = *grid.n_per_axis().iter().min().unwrap();
    3.min(n_min / 3)
}

/// Order of the Sobolev norm used to scale random data.
pub const RANDOM_NORM_ORDER: usize = 3;

fn scaled_random(grid: &Grid, rng: &mut ChaCha8Rng, rank: Rank, amplitude: f64) -> Field {
    let kmax = random_kmax(grid);
    let comps: Vec<Vec<f64>> = (0..rank.components()).map(|_| grid.random_trig(rng, kmax)).collect();
    let mut f = Field::from_components(grid, rank, &comps);
    let norm = sobolev_norm_sq(&f, RANDOM_NORM_ORDER, None).expect("order within cap").sqrt();
    if norm > 0.0 {
        f.scale(amplitude / norm);
    }
    f
}

/// Band-limited random fluctuation. `θ`, `u`, `ψ` and the raw `d` each have
/// `H³` norm `amplitude`; `d` is then projected so that `d + M_e` is a unit field.
pub fn random_perturbation(grid: &Grid, m_e: [f64; 3], amplitude: f64, seed: u64) -> Result<PerturbState> {
    check_unit(m_e)?;
    if !(amplitude >= 0.0) {
        return Err(Error::Argument(format!("amplitude must be >= 0, got {amplitude}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = scaled_random(grid, &mut rng, Rank::Scalar, amplitude);
    let u = scaled_random(grid, &mut rng, Rank::Vector, amplitude);
    let psi = scaled_random(grid, &mut rng, Rank::Vector, amplitude);
    let d_raw = scaled_random(grid, &mut rng, Rank::Vector, amplitude);
    let mut s = PerturbState { theta, u, psi, d: d_raw, m_e };
    project_sphere(&mut s)?;
    Ok(s)
}

/// Replaces `θ` by `det(I + ∇ψ) − 1`, so that `ρ det F = 1` after recomposition.
pub fn make_compatible(s: &PerturbState) -> PerturbState {
    let mut out = s.clone();
    let u = s.grad_psi();
    out.theta = u.map_to_scalar(|x| (mat3(x) + nalgebra::Matrix3::identity()).determinant() - 1.0);
    out
}

/// Random full state with `ρ det F = 1` and curl-free `F⁻¹ − I`.
pub fn random_full_state(grid: &Grid, m_e: [f64; 3], amplitude: f64, seed: u64) -> Result<FullState> {
    recompose(&make_compatible(&random_perturbation(grid, m_e, amplitude, seed)?))
}

/// `d ← (d + M_e)/|d + M_e| − M_e`.
pub fn project_sphere(s: &mut PerturbState) -> Result<()> {
    let me = s.m_e;
    let mut m = s.magnetization();
    normalize_in_place(&mut m)?;
    s.d = m.map_to(Rank::Vector, |x| vec![x[0] - me[0], x[1] - me[1], x[2] - me[2]]);
    Ok(())
}

/// `M ← M/|M|` pointwise; returns the drift `max | |M| − 1 |` seen before projection.
pub fn normalize_in_place(m: &mut Field) -> Result<f64> {
    let drift = sphere_drift(m);
    for (idx, x) in m.values_mut().chunks_mut(3).enumerate() {
        let n = norm3(arr(x));
        if !(n > 0.0) {
            return Err(Error::ZeroMagnetization { index: idx });
        }
        x.iter_mut().for_each(|v| *v /= n);
    }
    Ok(drift)
}
