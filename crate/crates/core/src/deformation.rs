//! Inverse-deformation algebra: `U = F⁻¹ − I`, its potential `ψ`, the exact
//! remainders `g(U)`, `g̃(U)` and the rewritten elastic force.

use nalgebra::Matrix3;
use rustfft::num_complex::Complex64;

use crate::calc::{self, det_field, identity_field, mat3, mat3_to_vec, scale_by};
use crate::error::{Error, Result};
use crate::grid::{spatial_mean, Field, Rank};
use crate::model_full::stress_divergence_elastic;
use crate::state::Tolerances;

/// Structural diagnostics of a deformation field.
#[derive(Debug, Clone)]
pub struct DeformationReport {
    pub curl_residual_max: f64,
    /// `max |ρ det F − 1|`.
    pub det_constraint_max: f64,
    /// Zero-mean potential with `∇ψ = F⁻¹ − I`.
    pub psi: Field,
    /// `max |∇·(ρFFᵀ) − reformulated force|`.
    pub identity_residual_max: f64,
}

fn invert_all(m: &Field, shift: f64, floor: f64) -> Result<Field> {
    let mut min_det = f64::INFINITY;
    let mut values = Vec::with_capacity(m.values().len());
    for x in m.values().chunks(9) {
        let a = mat3(x) + Matrix3::identity() * shift;
        let det = a.determinant();
        min_det = min_det.min(det);
        match a.try_inverse() {
            Some(inv) if det > floor => values.extend(mat3_to_vec(&inv)),
            _ => values.extend([f64::NAN; 9]),
        }
    }
    if !(min_det > floor) {
        return Err(Error::DegenerateDeformation { min_det, floor });
    }
    Field::from_values(m.grid(), Rank::Matrix, values)
}

/// `U = F⁻¹ − I` with the default determinant floor.
pub fn inverse_fluctuation(f: &Field) -> Result<Field> {
    inverse_fluctuation_with(f, Tolerances::default().det_floor)
}

pub fn inverse_fluctuation_with(f: &Field, det_floor: f64) -> Result<Field> {
    let inv = invert_all(f, 0.0, det_floor)?;
    Ok(inv.add_scaled(&identity_field(f.grid()), -1.0))
}

/// `F = (I + U)⁻¹`.
pub fn deformation_from_fluctuation(u: &Field, det_floor: f64) -> Result<Field> {
    invert_all(u, 1.0, det_floor)
}

/// `max_{i,j,k} |∂_i U^{jk} − ∂_k U^{ji}|`.
pub fn curl_residual(u: &Field) -> f64 {
    let grad_u: Vec<[Vec<f64>; 3]> = u.components().iter().map(|c| u.grid().grad(c)).collect();
    let mut worst: f64 = 0.0;
    for j in 0..3 {
        for i in 0..3 {
            for k in (i + 1)..3 {
                let a = &grad_u[3 * j + k][i];
                let b = &grad_u[3 * j + i][k];
                for (x, y) in a.iter().zip(b) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    worst
}

/// Zero-mean `ψ` with `∇ψ^j = (U^{j1}, U^{j2}, U^{j3})`.
pub fn recover_psi(u: &Field) -> Result<Field> {
    recover_psi_with(u, Tolerances::default().mean_tol)
}

pub fn recover_psi_with(u: &Field, mean_tol: f64) -> Result<Field> {
    if u.rank() != Rank::Matrix {
        return Err(Error::Shape("recover_psi expects a matrix field".into()));
    }
    let mean = spatial_mean(u).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if mean > mean_tol {
        return Err(Error::NonGradientMean { mean, tol: mean_tol });
    }
    let grid = u.grid();
    let comps = u.components();
    let rows: Vec<Vec<f64>> = (0..3)
        .map(|j| {
            let spectra: Vec<Vec<Complex64>> = (0..grid.dim()).map(|a| grid.fft(&comps[3 * j + a])).collect();
            let mut out = vec![Complex64::new(0.0, 0.0); grid.total_points()];
            grid.for_each_bin(|idx, bin| {
                let (k, _) = grid.symbol(bin);
                let k2: f64 = k.iter().map(|v| v * v).sum();
                if k2 == 0.0 {
                    return;
                }
                let mut dot = Complex64::new(0.0, 0.0);
                for (a, s) in spectra.iter().enumerate() {
                    dot += s[idx] * k[a];
                }
                out[idx] = Complex64::new(0.0, -1.0) * dot / k2;
            });
            grid.ifft(out)
        })
        .collect();
    Ok(Field::from_components(grid, Rank::Vector, &rows))
}

/// `g(U) = (I+U)⁻¹(I+U)⁻ᵀ − I + U + Uᵀ`, exact.
pub fn g_remainder(u: &Field) -> Result<Field> {
    let floor = Tolerances::default().det_floor;
    let inv = invert_all(u, 1.0, floor)?;
    Ok(calc::zip_map(&inv, u, Rank::Matrix, |gi, ux| {
        let g = mat3(gi);
        let um = mat3(ux);
        mat3_to_vec(&(g * g.transpose() - Matrix3::identity() + um + um.transpose()))
    }))
}

/// `g̃(U) = 1 + tr U − det(I+U)`, exact. With `1 + θ = det(I+U)` this gives `tr U = θ + g̃(U)`.
pub fn gtilde_remainder(u: &Field) -> Result<Field> {
    let floor = Tolerances::default().det_floor;
    let det = det_field(&u.add_scaled(&identity_field(u.grid()), 1.0));
    let min_det = det.values().iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_det > floor) {
        return Err(Error::DegenerateDeformation { min_det, floor });
    }
    Ok(calc::zip_to_scalar(u, &det, |x, d| 1.0 + x[0] + x[4] + x[8] - d[0]))
}

fn compat_check(theta: &Field, u: &Field, tol: f64) -> Result<()> {
    let det = det_field(&u.add_scaled(&identity_field(u.grid()), 1.0));
    let residual = theta
        .values()
        .iter()
        .zip(det.values())
        .fold(0.0f64, |m, (t, d)| m.max((1.0 + t - d).abs()));
    if !(residual <= tol) {
        return Err(Error::Compatibility { residual, tol });
    }
    Ok(())
}

/// `(U + Uᵀ)∇θ` or, with `symmetric = false`, `2U∇θ`.
fn u_grad_theta(u: &Field, grad_theta: &Field, symmetric: bool) -> Field {
    calc::zip_map(u, grad_theta, Rank::Vector, |um, gt| {
        (0..3)
            .map(|i| {
                (0..3)
                    .map(|j| {
                        let c = if symmetric { um[3 * i + j] + um[3 * j + i] } else { 2.0 * um[3 * i + j] };
                        c * gt[j]
                    })
                    .sum()
            })
            .collect()
    })
}

/// Terms shared by both forms: `−(1+θ)Δψ − ∇g̃ − θ∇(θ+g̃)`.
fn common_terms(theta: &Field, psi: &Field, gt: &Field) -> Field {
    let one_plus = theta.map_to_scalar(|x| 1.0 + x[0]);
    let mut out = scale_by(&one_plus, &calc::lap(psi));
    out.scale(-1.0);
    out = out.add_scaled(&calc::grad(gt), -1.0);
    let sum = theta.add_scaled(gt, 1.0);
    out.add_scaled(&scale_by(theta, &calc::grad(&sum)), -1.0)
}

/// Exact rewriting of `∇·(ρFFᵀ)` for `ρ = 1+θ`, `F = (I+U)⁻¹`, `U = ∇ψ`:
/// `−(1+θ)Δψ − (U+Uᵀ)∇θ − ∇g̃ − θ∇(θ+g̃) + ∇·((1+θ)g(U))`.
pub fn reformulated_elastic_div(theta: &Field, psi: &Field, u: &Field) -> Result<Field> {
    reformulated_elastic_div_with(theta, psi, u, Tolerances::default().compat_tol)
}

pub fn reformulated_elastic_div_with(theta: &Field, psi: &Field, u: &Field, compat_tol: f64) -> Result<Field> {
    compat_check(theta, u, compat_tol)?;
    reformulated_unchecked(theta, psi, u)
}

/// Same expression without the compatibility check; used by the perturbation model,
/// which evolves `θ` and `ψ` independently.
pub(crate) fn reformulated_unchecked(theta: &Field, psi: &Field, u: &Field) -> Result<Field> {
    let gt = gtilde_remainder(u)?;
    let g = g_remainder(u)?;
    let one_plus = theta.map_to_scalar(|x| 1.0 + x[0]);
    let grad_theta = calc::grad(theta);
    let out = common_terms(theta, psi, &gt).add_scaled(&u_grad_theta(u, &grad_theta, true), -1.0);
    Ok(out.add_scaled(&calc::div_matrix(&scale_by(&one_plus, &g)), 1.0))
}

/// The truncated form `−(1+θ)Δψ − 2∇ψ·∇θ − ∇g̃ − θ∇(θ+g̃)`, which drops quadratic
/// terms of the exact identity.
pub fn reformulated_elastic_div_truncated(theta: &Field, psi: &Field, u: &Field) -> Result<Field> {
    let gt = gtilde_remainder(u)?;
    let grad_theta = calc::grad(theta);
    Ok(common_terms(theta, psi, &gt).add_scaled(&u_grad_theta(u, &grad_theta, false), -1.0))
}

/// `max |ρ det F − 1|`.
pub fn det_constraint_residual(rho: &Field, f: &Field) -> f64 {
    let det = det_field(f);
    rho.values().iter().zip(det.values()).fold(0.0, |m, (r, d)| m.max((r * d - 1.0).abs()))
}

/// Full structural report for `(ρ, F)`.
pub fn deformation_report(rho: &Field, f: &Field, tol: &Tolerances) -> Result<DeformationReport> {
    let u = inverse_fluctuation_with(f, tol.det_floor)?;
    let psi = recover_psi_with(&u, tol.mean_tol)?;
    let theta = rho.map_to_scalar(|x| x[0] - 1.0);
    let reform = reformulated_elastic_div_with(&theta, &psi, &u, tol.compat_tol)?;
    let direct = stress_divergence_elastic(rho, f);
    Ok(DeformationReport {
        curl_residual_max: curl_residual(&u),
        det_constraint_max: det_constraint_residual(rho, f),
        psi,
        identity_residual_max: reform.max_diff(&direct),
    })
}
