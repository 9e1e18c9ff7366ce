//! Discrete checks of the energetic-variational structure: free-energy variation,
//! the angular-momentum balance, the two forms of the magnetic dissipation and the
//! energy-dissipation balance along trajectories.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::calc::{self, arr, cross3, dot3};
use crate::energetics::total_energy_dissipation;
use crate::error::{Error, Result};
use crate::grid::{Field, Rank};
use crate::model_full::{effective_field, llg_rhs, LlgForm};
use crate::state::{FullState, Params};
use crate::stepper::{rk4_step, step_count, DissipationAugmented, FullSystem, OdeSystem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationReport {
    pub max_abs_mismatch: f64,
    pub relative_mismatch: f64,
    pub probe_count: usize,
}

fn relative(abs: f64, scale: f64) -> f64 {
    if abs == 0.0 {
        0.0
    } else {
        abs / scale.max(f64::MIN_POSITIVE)
    }
}

/// The `M`-dependent part of the free energy, `∫ A|∇M|² − μ₀M·H`.
pub fn magnetic_free_energy(m: &Field, h_ext: Option<&Field>, p: &Params) -> f64 {
    let grid = m.grid();
    let mut density = calc::grad_sq(m);
    density.scale(p.exchange);
    if let Some(h) = h_ext {
        density = density.add_scaled(&calc::dot(m, h), -p.mu0);
    }
    grid.integrate(density.values())
}

/// Probe directions used by the variation check: band-limited random vector fields,
/// optionally projected onto the tangent space of `M`.
pub fn probe_directions(m: &Field, count: usize, seed: u64, tangent: bool) -> Vec<Field> {
    let grid = m.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kmax = 3.min(grid.n_per_axis().iter().min().copied().unwrap_or(1) / 3).max(1);
    (0..count)
        .map(|_| {
            let comps: Vec<Vec<f64>> = (0..3).map(|_| grid.random_trig(&mut rng, kmax)).collect();
            let phi = Field::from_components(grid, Rank::Vector, &comps);
            if tangent {
                calc::zip_map(m, &phi, Rank::Vector, |mx, px| {
                    let (mv, pv) = (arr(mx), arr(px));
                    let s = dot3(mv, pv);
                    (0..3).map(|i| pv[i] - s * mv[i]).collect()
                })
            } else {
                phi
            }
        })
        .collect()
}

/// Compares the central difference `[𝓕(M+εφ) − 𝓕(M−εφ)]/(2ε)` with `⟨h, φ⟩`,
/// `h = −(2AΔM + μ₀H)`, over random band-limited probes.
pub fn free_energy_variation_check(
    m: &Field,
    h_ext: Option<&Field>,
    p: &Params,
    probe_count: usize,
    fd_eps: f64,
    seed: u64,
) -> Result<VariationReport> {
    if !(1e-8..=1e-4).contains(&fd_eps) {
        return Err(Error::Argument(format!("fd_eps = {fd_eps:e} outside [1e-8, 1e-4]")));
    }
    let grid = m.grid();
    let mut h = effective_field(m, h_ext, p);
    h.scale(-1.0);
    let mut max_abs = 0.0f64;
    let mut scale = 0.0f64;
    for phi in probe_directions(m, probe_count, seed, false) {
        let plus = magnetic_free_energy(&m.add_scaled(&phi, fd_eps), h_ext, p);
        let minus = magnetic_free_energy(&m.add_scaled(&phi, -fd_eps), h_ext, p);
        let fd = (plus - minus) / (2.0 * fd_eps);
        let exact = grid.integrate(calc::dot(&h, &phi).values());
        max_abs = max_abs.max((fd - exact).abs());
        scale = scale.max(exact.abs());
    }
    Ok(VariationReport { max_abs_mismatch: max_abs, relative_mismatch: relative(max_abs, scale), probe_count })
}

/// Max-norm residual of `(1/λ)M̊ = (h·M)M − h`, where `M̊ = d_M + T − γ_g M×h` and
/// `T = −M×(M×(v·∇M))` is the transport carried by the cross-form rate (the tangential
/// part of `v·∇M`).
pub fn angular_momentum_balance_residual(m: &Field, v: &Field, h_ext: Option<&Field>, p: &Params) -> f64 {
    let d_m = llg_rhs(m, v, h_ext, p, LlgForm::Cross);
    let transport = calc::advect(v, m);
    let mut h = effective_field(m, h_ext, p);
    h.scale(-1.0);
    let lam = p.lambda_d;
    let n = m.grid().total_points();
    let (mv, dv, tv, hv) = (m.values(), d_m.values(), transport.values(), h.values());
    (0..n)
        .map(|i| {
            let r = 3 * i..3 * i + 3;
            let (mm, dm, tr, hh) = (arr(&mv[r.clone()]), arr(&dv[r.clone()]), arr(&tv[r.clone()]), arr(&hv[r]));
            let tangential = cross3(mm, cross3(mm, tr));
            let prec = cross3(mm, hh);
            let hm = dot3(hh, mm);
            (0..3)
                .map(|k| {
                    let ring = dm[k] - tangential[k] - p.gamma_g * prec[k];
                    (ring / lam - (hm * mm[k] - hh[k])).abs()
                })
                .fold(0.0f64, f64::max)
        })
        .fold(0.0f64, f64::max)
}

/// Relative residual between `(1/λ)∫|M×M̊|²` with `M̊ = λM×(M×h)` and `λ∫|M×H_eff|²`.
pub fn dissipation_equivalence_residual(m: &Field, h_ext: Option<&Field>, p: &Params) -> f64 {
    let grid = m.grid();
    let heff = effective_field(m, h_ext, p);
    let lam = p.lambda_d;
    let lhs = calc::zip_to_scalar(m, &heff, |mx, hx| {
        let mm = arr(mx);
        let h = [-hx[0], -hx[1], -hx[2]];
        let ring = cross3(mm, cross3(mm, h)).map(|x| lam * x);
        let c = cross3(mm, ring);
        dot3(c, c)
    });
    let rhs = calc::zip_to_scalar(m, &heff, |mx, hx| {
        let c = cross3(arr(mx), arr(hx));
        dot3(c, c)
    });
    let l = grid.integrate(lhs.values()) / lam;
    let r = lam * grid.integrate(rhs.values());
    relative((l - r).abs(), r.abs())
}

/// One row of the energy-balance convergence table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRateRow {
    pub dt: f64,
    /// `E(T) − E(0) + ∫₀ᵀ D dt`.
    pub residual: f64,
    pub e0: f64,
    /// `log₂` of the residual ratio to the previous row, scaled by the dt ratio.
    pub observed_order: Option<f64>,
}

/// Runs RK4 on the dissipation-augmented full model for each `dt` and reports the
/// energy-balance defect at `t_end`. `H_ext` must be static.
pub fn energy_rate_check(sys: &FullSystem, initial: &FullState, t_end: f64, dt_list: &[f64]) -> Result<Vec<EnergyRateRow>> {
    if sys.h_ext.time_dependent() {
        return Err(Error::Argument("energy balance needs a static external field".into()));
    }
    if dt_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Argument("dt_list must be decreasing".into()));
    }
    let h = sys.h_ext.at(0.0, initial.grid());
    let e0 = total_energy_dissipation(initial, h.as_ref(), &sys.params)?.e;
    let aug = DissipationAugmented { inner: sys };
    let mut rows: Vec<EnergyRateRow> = Vec::new();
    for &dt in dt_list {
        let n = step_count(t_end, dt);
        let mut st = (initial.clone(), 0.0);
        let mut t = 0.0;
        for k in 1..=n {
            let t_next = if k == n { t_end } else { k as f64 * dt };
            st = rk4_step(&aug, t, &st, t_next - t)?;
            aug.project(&mut st)?;
            t = t_next;
        }
        let e = total_energy_dissipation(&st.0, h.as_ref(), &sys.params)?.e;
        let residual = e - e0 + st.1;
        let observed_order = rows.last().map(|prev| (prev.residual.abs() / residual.abs()).ln() / (prev.dt / dt).ln());
        rows.push(EnergyRateRow { dt, residual, e0, observed_order });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energetics::SampleSpec;
    use crate::grid::Grid;
    use crate::state::{equilibrium_state, normalize_in_place, random_full_state, ExternalField};
    use std::f64::consts::PI;

    fn normalized_field(g: &Grid, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let comps: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                let base = if c == 2 { 1.0 } else { 0.0 };
                g.random_trig(&mut rng, 2).into_iter().map(|x| base + 0.1 * x).collect()
            })
            .collect();
        let mut m = Field::from_components(g, Rank::Vector, &comps);
        normalize_in_place(&mut m).unwrap();
        m
    }

    #[test]
    fn variation_of_constant_field_vanishes() {
        let g = Grid::uniform(2, 16).unwrap();
        let m = Field::constant(&g, Rank::Vector, &[0.0, 0.0, 1.0]);
        let r = free_energy_variation_check(&m, None, &Params::default(), 5, 1e-6, 0).unwrap();
        assert!(r.max_abs_mismatch < 1e-12);
        assert_eq!(r.probe_count, 5);
    }

    #[test]
    fn exchange_variation() {
        let g = Grid::uniform(2, 16).unwrap();
        let m = normalized_field(&g, 2);
        let r = free_energy_variation_check(&m, None, &Params::default(), 10, 1e-5, 1).unwrap();
        assert!(r.relative_mismatch < 1e-7, "{r:?}");
    }

    #[test]
    fn external_field_variation_is_linear() {
        let g = Grid::uniform(2, 16).unwrap();
        let m = normalized_field(&g, 4);
        let h = Field::from_fn(&g, Rank::Vector, |x| vec![x[0].sin(), 0.5 * x[1].cos(), 0.3 * (x[0] + x[1]).sin()]);
        let p = Params { exchange: 0.0, mu0: 1.7, ..Params::default() };
        let phi = &probe_directions(&m, 1, 9, false)[0];
        let eps = 1e-5;
        let fd = (magnetic_free_energy(&m.add_scaled(phi, eps), Some(&h), &p)
            - magnetic_free_energy(&m.add_scaled(phi, -eps), Some(&h), &p))
            / (2.0 * eps);
        let exact = -1.7 * g.integrate(calc::dot(&h, phi).values());
        assert!((fd - exact).abs() < 1e-9 * exact.abs());
    }

    #[test]
    fn fd_eps_range() {
        let g = Grid::uniform(1, 8).unwrap();
        let m = Field::constant(&g, Rank::Vector, &[1.0, 0.0, 0.0]);
        assert!(free_energy_variation_check(&m, None, &Params::default(), 1, 1e-2, 0).is_err());
    }

    #[test]
    fn angular_momentum_uniform_and_random() {
        let g = Grid::uniform(2, 8).unwrap();
        let m = Field::constant(&g, Rank::Vector, &[1.0, 0.0, 0.0]);
        let h = Field::constant(&g, Rank::Vector, &[0.0, 0.0, 1.0]);
        let v = Field::zeros(&g, Rank::Vector);
        let p = Params { lambda_d: 0.1, ..Params::default() };
        assert!(angular_momentum_balance_residual(&m, &v, Some(&h), &p) <= 1e-13);
        // brute-force 3-vector algebra: d_M = −γM×H − λM×(M×H), h = −H
        let (mm, hf, lam, gam) = ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], 0.1, 1.0);
        let c = cross3(mm, hf);
        let cc = cross3(mm, c);
        let d_m = [-gam * c[0] - lam * cc[0], -gam * c[1] - lam * cc[1], -gam * c[2] - lam * cc[2]];
        let h = [-hf[0], -hf[1], -hf[2]];
        let prec = cross3(mm, h);
        let hm = dot3(h, mm);
        for k in 0..3 {
            let ring = d_m[k] - gam * prec[k];
            assert!((ring / lam - (hm * mm[k] - h[k])).abs() < 1e-15);
        }

        let g = Grid::uniform(2, 16).unwrap();
        let s = random_full_state(&g, [0.0, 0.0, 1.0], 0.05, 6).unwrap();
        let heff = effective_field(&s.m, None, &p);
        let r = angular_momentum_balance_residual(&s.m, &s.v, None, &p);
        assert!(r <= 1e-10 * (1.0 + heff.max_abs()), "{r:e}");
    }

    #[test]
    fn dissipation_forms_agree() {
        let g = Grid::uniform(2, 8).unwrap();
        let p = Params { lambda_d: 1.0, mu0: 1.0, ..Params::default() };
        let m = Field::constant(&g, Rank::Vector, &[0.0, 0.0, 1.0]);
        assert_eq!(dissipation_equivalence_residual(&m, None, &p), 0.0);
        let m = Field::constant(&g, Rank::Vector, &[1.0, 0.0, 0.0]);
        let h = Field::constant(&g, Rank::Vector, &[0.0, 0.0, 1.0]);
        assert!(dissipation_equivalence_residual(&m, Some(&h), &p) < 1e-15);
        let heff = effective_field(&m, Some(&h), &p);
        let both = g.integrate(calc::zip_to_scalar(&m, &heff, |a, b| {
            let c = cross3(arr(a), arr(b));
            dot3(c, c)
        })
        .values());
        assert!((both - (2.0 * PI).powi(2)).abs() < 1e-12);
        let g = Grid::uniform(2, 16).unwrap();
        let m = normalized_field(&g, 8);
        let h = Field::constant(&g, Rank::Vector, &[0.0, 0.0, 1.0]);
        assert!(dissipation_equivalence_residual(&m, Some(&h), &p) < 1e-10);
    }

    #[test]
    fn energy_balance_at_equilibrium() {
        let g = Grid::uniform(2, 8).unwrap();
        let me = [0.0, 0.0, 1.0];
        let s = equilibrium_state(&g, me).unwrap();
        let sys = FullSystem::new(Params::default(), ExternalField::Zero, SampleSpec { s_order: 1, m_e: me, coeffs: None });
        let rows = energy_rate_check(&sys, &s, 2e-3, &[1e-3, 5e-4]).unwrap();
        assert!(rows.iter().all(|r| r.residual == 0.0));
        assert!(energy_rate_check(&sys, &s, 2e-3, &[5e-4, 1e-3]).is_err());
    }
}
