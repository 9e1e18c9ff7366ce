//! Acceptance criteria 1–12. Runs as a plain binary: every criterion runs on its own
//! thread, then one PASS/FAIL line per criterion is printed in order, followed by
//! indented detail lines. The process fails if any criterion fails.

use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nsllg::config::parse_config;
use nsllg::deformation::{recover_psi, reformulated_elastic_div};
use nsllg::energetics::{
    coeff_matrix, coeff_minors, coeff_search, global_functionals, instant_functionals, quadratic_form_min, CoeffChoice, SampleSpec,
    SearchLimits, SearchOutcome,
};
use nsllg::grid::{Field, Grid, Rank};
use nsllg::io::{decode_snapshot, encode_snapshot, Snapshot};
use nsllg::model_full::{full_rhs, llg_rhs, LlgForm, RhsOptions};
use nsllg::model_perturb::{dbar_rhs, perturb_rhs, psi_wave_residual, PerturbOptions};
use nsllg::runner::{macrospin_run, run, Command};
use nsllg::state::{equilibrium_state, make_compatible, random_full_state, random_perturbation, ExternalField, FullState, Params, PerturbState};
use nsllg::stepper::{advance, picard_step, rk4_step, trajectory_density_check, Cadence, FullSystem, PerturbSystem, StepConfig};
use nsllg::varcheck::{dissipation_equivalence_residual, free_energy_variation_check};

const ME: [f64; 3] = [0.0, 0.0, 1.0];

struct Verdict {
    pass: bool,
    details: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Self { pass: true, details: Vec::new() }
    }

    /// Records a sub-check; the criterion fails if any sub-check fails.
    fn require(&mut self, ok: bool, what: String) {
        self.pass &= ok;
        self.details.push(format!("{} {what}", if ok { "ok  " } else { "MISS" }));
    }

    fn note(&mut self, what: String) {
        self.details.push(format!("     {what}"));
    }
}

fn nomag() -> SampleSpec {
    SampleSpec { s_order: 1, m_e: ME, coeffs: None }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Least-squares slope of `log err` against `log dt`.
fn fitted_order(dts: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

// ---------------------------------------------------------------------------
// Independent evaluations used as oracles.

fn integrate(g: &Grid, density: &[f64]) -> f64 {
    density.iter().sum::<f64>() * g.cell_volume()
}

/// `E = ∫ ½ρ|v|² + a/(γ−1)ρ^γ + A|∇M|² + ½|F|²/det F` with `H_ext = 0`.
fn oracle_energy(s: &FullState, p: &Params) -> f64 {
    let g = s.rho.grid();
    let n = g.total_points();
    let mut dens = vec![0.0; n];
    for (i, d) in dens.iter_mut().enumerate() {
        let r = s.rho.values()[i];
        let v = s.v.at(i);
        let f = Matrix3::from_row_slice(s.f.at(i));
        *d = 0.5 * r * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
            + p.a / (p.gamma_p - 1.0) * r.powf(p.gamma_p)
            + 0.5 * f.norm_squared() / f.determinant();
    }
    for c in 0..3 {
        let mc = s.m.component(c);
        for a in 0..g.dim() {
            for (d, x) in dens.iter_mut().zip(g.d(&mc, a)) {
                *d += p.exchange * x * x;
            }
        }
    }
    integrate(g, &dens)
}

/// `D = ∫ μ|∇v|² + (μ+ξ)|∇·v|² + λ|M×2AΔM|²`.
fn oracle_dissipation(s: &FullState, p: &Params) -> f64 {
    let g = s.rho.grid();
    let n = g.total_points();
    let mut dens = vec![0.0; n];
    let mut div = vec![0.0; n];
    for c in 0..3 {
        let vc = s.v.component(c);
        for a in 0..g.dim() {
            let dv = g.d(&vc, a);
            for i in 0..n {
                dens[i] += p.mu * dv[i] * dv[i];
            }
            if a == c {
                for i in 0..n {
                    div[i] += dv[i];
                }
            }
        }
    }
    let lap: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let mc = s.m.component(c);
            let mut out = vec![0.0; n];
            for a in 0..g.dim() {
                for (o, x) in out.iter_mut().zip(g.d(&g.d(&mc, a), a)) {
                    *o += x;
                }
            }
            out
        })
        .collect();
    for i in 0..n {
        let m = s.m.at(i);
        let h = [2.0 * p.exchange * lap[0][i], 2.0 * p.exchange * lap[1][i], 2.0 * p.exchange * lap[2][i]];
        let c = [m[1] * h[2] - m[2] * h[1], m[2] * h[0] - m[0] * h[2], m[0] * h[1] - m[1] * h[0]];
        dens[i] += (p.mu + p.xi) * div[i] * div[i] + p.lambda_d * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
    }
    integrate(g, &dens)
}

/// `|E(T) − E(0) + ∫D|` with RK4 steps of `dt` and composite Simpson for `∫D`.
fn balance_residual(sys: &FullSystem, s0: &FullState, t_end: f64, dt: f64) -> (f64, f64) {
    let n = (t_end / dt).round() as usize;
    assert!(n % 2 == 0 && ((n as f64) * dt - t_end).abs() < 1e-12, "need an even step count");
    let p = &sys.params;
    let e0 = oracle_energy(s0, p);
    let mut s = s0.clone();
    let mut d = vec![oracle_dissipation(&s, p)];
    for k in 0..n {
        s = rk4_step(sys, k as f64 * dt, &s, dt).expect("rk4");
        d.push(oracle_dissipation(&s, p));
    }
    let mut integral = d[0] + d[n];
    for (k, x) in d.iter().enumerate().take(n).skip(1) {
        integral += if k % 2 == 1 { 4.0 * x } else { 2.0 * x };
    }
    integral *= dt / 3.0;
    ((oracle_energy(&s, p) - e0 + integral).abs(), e0)
}

/// `(I + U)⁻¹` pointwise, `U^{jk} = ∂_k ψ^j` by spectral differentiation.
fn oracle_gradient(psi: &Field) -> Field {
    let g = psi.grid();
    let mut comps = vec![vec![0.0; g.total_points()]; 9];
    for j in 0..3 {
        let pj = psi.component(j);
        for k in 0..g.dim() {
            comps[3 * j + k] = g.d(&pj, k);
        }
    }
    Field::from_components(g, Rank::Matrix, &comps)
}

fn oracle_curl(u: &Field) -> f64 {
    let g = u.grid();
    let mut worst: f64 = 0.0;
    for j in 0..3 {
        for i in 0..g.dim() {
            for k in (i + 1)..g.dim() {
                let a = g.d(&u.component(3 * j + k), i);
                let b = g.d(&u.component(3 * j + i), k);
                worst = a.iter().zip(&b).fold(worst, |m, (x, y)| m.max((x - y).abs()));
            }
        }
    }
    worst
}

fn inverse_minus_identity(f: &Field) -> Field {
    let values = f
        .values()
        .chunks(9)
        .flat_map(|x| {
            let inv = Matrix3::from_row_slice(x).try_inverse().expect("invertible F") - Matrix3::identity();
            (0..9).map(move |k| inv[(k / 3, k % 3)])
        })
        .collect();
    Field::from_values(f.grid(), Rank::Matrix, values).unwrap()
}

fn det_residual(s: &FullState) -> f64 {
    s.f.values()
        .chunks(9)
        .zip(s.rho.values())
        .fold(0.0, |m, (x, r)| m.max((r * Matrix3::from_row_slice(x).determinant() - 1.0).abs()))
}

/// `∇·(ρFFᵀ)` with `(∇·G)^i = Σ_j ∂_j G^{ij}`.
fn oracle_elastic_div(rho: &Field, f: &Field) -> Field {
    let g = rho.grid();
    let n = g.total_points();
    let mut stress = vec![vec![0.0; n]; 9];
    for p in 0..n {
        let fm = Matrix3::from_row_slice(f.at(p));
        let b = fm * fm.transpose() * rho.values()[p];
        for k in 0..9 {
            stress[k][p] = b[(k / 3, k % 3)];
        }
    }
    let mut out = vec![vec![0.0; n]; 3];
    for i in 0..3 {
        for j in 0..g.dim() {
            for (o, x) in out[i].iter_mut().zip(g.d(&stress[3 * i + j], j)) {
                *o += x;
            }
        }
    }
    Field::from_components(g, Rank::Vector, &out)
}

fn state_diff(a: &FullState, b: &FullState) -> f64 {
    a.rho.max_diff(&b.rho).max(a.v.max_diff(&b.v)).max(a.f.max_diff(&b.f)).max(a.m.max_diff(&b.m))
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Verdict {
    let mut v = Verdict::new();
    let p = Params::default();
    let g = Grid::uniform(2, 32).unwrap();
    let sys = FullSystem::new(p, ExternalField::Zero, nomag());
    let s0 = random_full_state(&g, ME, 1e-2, 11).unwrap();
    let (res, e0) = balance_residual(&sys, &s0, 0.5, 2e-4);
    v.require(res <= 1e-6 * e0, format!("amplitude 1e-2, dt=2e-4, T=0.5: |ΔE+∫D| = {res:.3e}, 1e-6·E(0) = {:.3e}", 1e-6 * e0));
    let floor = 1e-12;
    let mut prev: Option<f64> = None;
    for dt in [1e-3, 5e-4] {
        let (r, _) = balance_residual(&sys, &s0, 0.5, dt);
        let ok = match prev {
            Some(q) if q > floor => q / r >= 12.0 || r <= floor,
            _ => true,
        };
        v.require(ok, format!("amplitude 1e-2, dt={dt:e}: residual {r:.3e} (floor {floor:e})"));
        prev = Some(r);
    }
    // larger data puts the residual above the floor so that the halving ratio is visible
    let s1 = random_full_state(&g, ME, 0.1, 11).unwrap();
    let mut prev: Option<f64> = None;
    for dt in [2e-3, 1e-3, 5e-4] {
        let (r, _) = balance_residual(&sys, &s1, 0.1, dt);
        match prev {
            Some(q) if q > floor => v.require(q / r >= 12.0 || r <= floor, format!("amplitude 0.1, T=0.1, dt={dt:e}: residual {r:.3e}, ratio {:.2}", q / r)),
            _ => v.note(format!("amplitude 0.1, T=0.1, dt={dt:e}: residual {r:.3e}")),
        }
        prev = Some(r);
    }
    v
}

fn criterion_2() -> Verdict {
    let mut v = Verdict::new();
    let p = Params::default();
    let g = Grid::uniform(2, 16).unwrap();
    let mut worst: f64 = 0.0;
    let mut h_rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..100 {
        let amp = 10f64.powf(h_rng.gen_range(-3.0..0.0));
        let s = random_full_state(&g, ME, amp, seed).unwrap();
        let h = Field::from_fn(&g, Rank::Vector, |x| vec![(x[0] + seed as f64).sin(), 0.5 * x[1].cos(), 1.0]);
        let r = full_rhs(&s, Some(&h), &p, &RhsOptions::default()).unwrap();
        let scale = r.d_m.max_abs();
        let tang = (0..g.total_points()).fold(0.0f64, |m, i| {
            let (a, b) = (s.m.at(i), r.d_m.at(i));
            m.max((a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).abs())
        });
        worst = worst.max(tang / scale);
    }
    v.require(worst <= 1e-11, format!("100 random states: max |M·d_M| / ‖d_M‖∞ = {worst:.3e}"));

    let sys = FullSystem::new(p, ExternalField::Zero, nomag());
    let s0 = random_full_state(&g, ME, 1.0, 5).unwrap();
    let dts = [4e-3, 2e-3, 1e-3];
    let drifts: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let mut s = s0.clone();
            for k in 0..100 {
                s = rk4_step(&sys, k as f64 * dt, &s, dt).unwrap();
            }
            max_abs(&s.m.values().chunks(3).map(|m| (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt() - 1.0).collect::<Vec<_>>())
        })
        .collect();
    let order = fitted_order(&dts, &drifts);
    v.require((order - 4.0).abs() <= 0.5, format!("|M| drift after 100 steps {} for dt {dts:?}: fitted order {order:.3}", sci(&drifts)));
    v
}

fn criterion_3() -> Verdict {
    let mut v = Verdict::new();
    let p = Params { gamma_g: 1.3, lambda_d: 0.7, exchange: 0.8, ..Params::default() };
    let g = Grid::uniform(2, 32).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let s = random_full_state(&g, ME, 0.5, seed).unwrap();
        let h = Field::from_fn(&g, Rank::Vector, |x| vec![x[1].sin(), (x[0] - x[1]).cos(), 0.3]);
        let a = llg_rhs(&s.m, &s.v, Some(&h), &p, LlgForm::Cross);
        let b = llg_rhs(&s.m, &s.v, Some(&h), &p, LlgForm::Multiplier);
        worst = worst.max(a.max_diff(&b));
    }
    v.require(worst <= 1e-9, format!("20 band-limited unit fields: max |cross − multiplier| = {worst:.3e}"));
    v
}

fn criterion_4() -> Verdict {
    let mut v = Verdict::new();
    let p = Params { mu0: 1.0, lambda_d: 0.1, gamma_g: 1.0, ..Params::default() };
    let g = Grid::uniform(2, 8).unwrap();
    let r = macrospin_run(&g, &p, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 1e-3, 1.0).unwrap();
    let mz = (0.1f64).tanh();
    v.require((r.m_parallel - mz).abs() <= 1e-8, format!("M_z(1) = {:.15}, tanh(0.1) = {mz:.15}", r.m_parallel));
    // azimuth of M about z: ∂ₜM = −γ_g M×H rotates x towards y
    let two_pi = 2.0 * std::f64::consts::PI;
    let wrap = |x: f64| (x + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    let expected = p.gamma_g * p.mu0 * 1.0;
    let miss = wrap(r.phase - expected).abs();
    v.require(miss <= 1e-8, format!("azimuth {:.15}, γ_g μ₀|H| t = {expected:.15} (mod 2π difference {miss:.2e})", r.phase));
    v.note(format!("difference to the opposite rotation sense −γ_g t: {:.3e}", wrap(r.phase + expected).abs()));
    v
}

fn criterion_5() -> Verdict {
    let mut v = Verdict::new();
    let p = Params::default();
    let g = Grid::uniform(2, 32).unwrap();
    let sys = FullSystem::new(p, ExternalField::Zero, nomag());
    let s0 = random_full_state(&g, ME, 1e-2, 21).unwrap();
    let run = advance(&sys, s0, 0.2, &StepConfig::rk4(1e-3), Cadence { sample_every: usize::MAX, snapshot_every: Some(20) }).unwrap();
    let (mut curl, mut det) = (0.0f64, 0.0f64);
    for (_, s) in &run.snapshots {
        curl = curl.max(oracle_curl(&inverse_minus_identity(&s.f)));
        det = det.max(det_residual(s));
    }
    v.require(curl <= 1e-8, format!("(a) max curl of F⁻¹−I over t ∈ [0, 0.2]: {curl:.3e}"));
    v.require(det <= 1e-8, format!("(b) max |ρ det F − 1| over t ∈ [0, 0.2]: {det:.3e}"));

    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let s = make_compatible(&random_perturbation(&g, ME, 1e-2, seed).unwrap());
        let u = oracle_gradient(&s.psi);
        let fmat: Vec<f64> = u
            .values()
            .chunks(9)
            .flat_map(|x| {
                let f = (Matrix3::from_row_slice(x) + Matrix3::identity()).try_inverse().unwrap();
                (0..9).map(move |k| f[(k / 3, k % 3)])
            })
            .collect();
        let f = Field::from_values(&g, Rank::Matrix, fmat).unwrap();
        let rho = s.theta.map_components(|x| vec![1.0 + x[0]]);
        let direct = oracle_elastic_div(&rho, &f);
        worst = worst.max(reformulated_elastic_div(&s.theta, &s.psi, &u).unwrap().max_diff(&direct));
    }
    v.require(worst <= 1e-8, format!("(c) 32 modes, ε = 1e-2: max |direct − reformulated elastic force| = {worst:.3e}"));

    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let psi = random_perturbation(&g, ME, 0.1, 100 + seed).unwrap().psi;
        let means: Vec<f64> = (0..3).map(|c| psi.component(c).iter().sum::<f64>() / g.total_points() as f64).collect();
        let psi0 = psi.map_components(|x| (0..3).map(|c| x[c] - means[c]).collect());
        worst = worst.max(recover_psi(&oracle_gradient(&psi0)).unwrap().max_diff(&psi0));
    }
    v.require(worst <= 1e-10, format!("(d) ψ → ∇ψ → ψ roundtrip: {worst:.3e}"));
    v
}

fn criterion_6() -> Verdict {
    let mut v = Verdict::new();
    let p = Params { a: 1.3, gamma_p: 1.7, mu: 0.8, xi: 0.4, ..Params::default() };
    let g = Grid::uniform(2, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let s = random_perturbation(&g, ME, 10f64.powf(rng.gen_range(-3.0..-0.5)), seed).unwrap();
        let r = perturb_rhs(&s, &p, &PerturbOptions::default()).unwrap();
        let scale = 1.0 + r.d_psi.max_abs() + s.psi.max_abs() + s.u.max_abs();
        worst = worst.max(psi_wave_residual(&s, &r, &p) / scale);
    }
    v.require(worst <= 1e-10, format!("100 random states: max residual/scale = {worst:.3e}"));
    v
}

fn leading_det(m: &nalgebra::Matrix4<f64>, k: usize) -> f64 {
    m.view((0, 0), (k, k)).clone_owned().determinant()
}

fn criterion_7() -> Verdict {
    let mut v = Verdict::new();
    let p = Params { mu: 1.0, xi: 0.0, a: 1.0, gamma_p: 2.0, ..Params::default() };
    let fallback = match coeff_search(&p, &SearchLimits::default()) {
        SearchOutcome::Found { choice, minors } => {
            v.require(true, format!("(a) δ={:e} η={:e} ε={:e}, minors {:e} {:e} {:e} {:e}", choice.delta, choice.eta, choice.epsilon, minors.m1, minors.m2, minors.m3, minors.m4));
            choice
        }
        SearchOutcome::Failed { nearest, minors, score, evaluated } => {
            v.require(
                false,
                format!(
                    "(a) no admissible (δ,η,ε) among {evaluated} points; nearest δ={:e} η={:e} ε={:e}: minors {:.3e} {:.3e} {:.3e} {:.3e}, λmin/|λ|max = {score:.3e}",
                    nearest.delta, nearest.eta, nearest.epsilon, minors.m1, minors.m2, minors.m3, minors.m4
                ),
            );
            nearest
        }
    };
    // the ∇ψ/∇θ block has determinant ≤ εηδaγ(1/μ − c₀c₁), never positive at μ = c₀ = c₁ = 1
    let mut block_max = f64::NEG_INFINITY;
    for i in 0..=32 {
        for j in 0..=32 {
            for k in 0..=32 {
                let c = CoeffChoice::at_equilibrium(10f64.powf(-6.0 + 6.0 * i as f64 / 32.0), 10f64.powf(-8.0 + 8.0 * j as f64 / 32.0), 10f64.powf(4.0 * k as f64 / 32.0));
                let m = coeff_matrix(&p, &c);
                block_max = block_max.max(m[(2, 2)] * m[(3, 3)] - m[(2, 3)] * m[(3, 2)]);
            }
        }
    }
    v.note(format!("obstruction: largest ∇ψ/∇θ 2×2 block determinant over a 33³ sweep of the search box is {block_max:.3e}"));
    match coeff_search(&Params { mu: 0.3, ..p }, &SearchLimits::default()) {
        SearchOutcome::Found { choice, .. } => {
            v.note(format!("control: μ=0.3 admits δ={:e} η={:e} ε={:e}", choice.delta, choice.eta, choice.epsilon))
        }
        SearchOutcome::Failed { .. } => v.note("control: μ=0.3 also fails".into()),
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut printed3, mut printed4, mut fact3, mut fact4): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..50 {
        let c = CoeffChoice {
            delta: 10f64.powf(rng.gen_range(-4.0..-1.0)),
            eta: 10f64.powf(rng.gen_range(-6.0..-2.0)),
            epsilon: 10f64.powf(rng.gen_range(0.0..3.0)),
            c0: rng.gen_range(0.8..1.2),
            c1: rng.gen_range(0.8..1.2),
            c_p: 1.0,
        };
        let m = coeff_matrix(&p, &c);
        let (d3, d4) = (leading_det(&m, 3), leading_det(&m, 4));
        let cm = coeff_minors(&p, &c);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
        printed3 = printed3.max(rel(cm.m3_closed, d3));
        printed4 = printed4.max(rel(cm.m4_closed, d4));
        fact3 = fact3.max(rel(cm.m3_factored, d3));
        fact4 = fact4.max(rel(cm.m4_factored, d4));
    }
    v.require(printed3 <= 1e-10 && printed4 <= 1e-10, format!("(b) closed-form M3 (cubic in δ) and M4 (with Ξ₀) vs determinants: max rel {printed3:.3e}, {printed4:.3e}"));
    v.note(format!("(b) corrected forms M2·U and (ε+δ)(μ+ξ)S/μ·(Ξ₂η²+Ξ₁η−Ξ₀): max rel {fact3:.3e}, {fact4:.3e}"));

    let q = quadratic_form_min(&p, &fallback, 10_000, 9);
    v.require(q > 0.0, format!("(c) min of V𝓜Vᵀ/|V|² over 1e4 random V at the nearest miss: {q:.3e}"));

    let g = Grid::uniform(2, 16).unwrap();
    let (mut rmin_e, mut rmin_d) = (f64::INFINITY, f64::INFINITY);
    for seed in 0..100 {
        let s = random_perturbation(&g, ME, 10f64.powf(rng.gen_range(-4.0..-2.0)), seed).unwrap();
        let c = fallback.with_state_constants(&s.theta, &p);
        let inst = instant_functionals(&s, &p, 2, &c).unwrap();
        let (eg, dg) = global_functionals(&s, &p, 2).unwrap();
        rmin_e = rmin_e.min(inst.e / eg);
        rmin_d = rmin_d.min(inst.d / dg);
    }
    v.require(rmin_e > 0.0 && rmin_d > 0.0, format!("(d) 100 small states: min 𝔼/𝐄 = {rmin_e:.3e}, min 𝔻/𝐃 = {rmin_d:.3e}"));
    v
}

fn criterion_8() -> Verdict {
    let mut v = Verdict::new();
    let p = Params::default();
    let g = Grid::uniform(2, 32).unwrap();
    let s0 = random_perturbation(&g, ME, 1.5e-3, 8).unwrap();
    let s_order = 3;
    let (es_in, _) = global_functionals(&s0, &p, s_order).unwrap();
    v.require(es_in <= 1e-4, format!("𝐄ₛ^in = {es_in:.3e} (s = {s_order})"));
    let sys = PerturbSystem::new(p, SampleSpec { s_order, m_e: ME, coeffs: None });
    let run = advance(&sys, s0, 1.0, &StepConfig::rk4(1e-3), Cadence { sample_every: 50, snapshot_every: Some(50) }).unwrap();
    let series: Vec<(f64, f64, f64)> = run
        .snapshots
        .iter()
        .map(|(t, s): &(f64, PerturbState)| {
            let (e, d) = global_functionals(s, &p, s_order).unwrap();
            (*t, e, d)
        })
        .collect();
    let max_ratio = series.iter().fold(0.0f64, |m, x| m.max(x.1 / es_in));
    v.require(max_ratio <= 1.05, format!("max 𝐄ₛ(t)/𝐄ₛ^in over {} samples = {max_ratio:.4}", series.len()));
    let integral: f64 = series.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].2 + w[1].2)).sum();
    v.require(integral.is_finite(), format!("∫₀¹ 𝐃ₛ dt ≈ {integral:.3e}"));
    let (first, last) = (series[0], series[series.len() - 1]);
    v.require((last.0 - 1.0).abs() < 1e-12 && last.1 < first.1, format!("𝐄ₛ(1) = {:.3e} < 𝐄ₛ(0) = {:.3e}", last.1, first.1));
    v
}

fn criterion_9() -> Verdict {
    let mut v = Verdict::new();
    let p = Params::default();
    let g = Grid::uniform(2, 32).unwrap();
    let sys = FullSystem::new(p, ExternalField::Zero, nomag());
    let cfg = StepConfig { picard_tol: 1e-10, picard_max_iters: 10, ..StepConfig::picard(1e-3) };
    let eq = equilibrium_state(&g, ME).unwrap();
    let (next, info) = picard_step(&sys, 0.0, &eq, &cfg).unwrap();
    v.require(info.iterations == 1 && state_diff(&next, &eq) == 0.0, format!("equilibrium: {} iteration(s), change {:.1e}", info.iterations, state_diff(&next, &eq)));

    let s0 = random_full_state(&g, ME, 1e-2, 9).unwrap();
    let cadence = Cadence { sample_every: usize::MAX, snapshot_every: None };
    let run = advance(&sys, s0.clone(), 0.1, &cfg, cadence).unwrap();
    let most = run.picard_iterations.iter().copied().max().unwrap_or(0);
    v.require(run.failure.is_none() && most <= 10, format!("small data, dt=1e-3, tol 1e-10: at most {most} iterations per step over {} steps", run.steps));

    let reference = advance(&sys, s0.clone(), 0.1, &StepConfig::rk4(2.5e-4), cadence).unwrap().final_state;
    let dts = [2e-3, 1e-3, 5e-4];
    let diffs: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let c = StepConfig { picard_tol: 1e-10, ..StepConfig::picard(dt) };
            state_diff(&advance(&sys, s0.clone(), 0.1, &c, cadence).unwrap().final_state, &reference)
        })
        .collect();
    let order = fitted_order(&dts, &diffs);
    v.require((0.8..=1.5).contains(&order), format!("|Picard − RK4| at t=0.1: {} for dt {dts:?}, fitted order {order:.3}", sci(&diffs)));
    v
}

fn criterion_10() -> Verdict {
    let mut v = Verdict::new();
    let p = Params::default();
    let g = Grid::uniform(2, 32).unwrap();
    let s = random_full_state(&g, ME, 0.3, 10).unwrap();
    let h = Field::from_fn(&g, Rank::Vector, |x| vec![x[0].sin(), (x[1] + 0.3).cos(), 0.5 + 0.2 * (x[0] - x[1]).sin()]);
    let var = free_energy_variation_check(&s.m, Some(&h), &p, 10, 1e-5, 10).unwrap();
    v.require(var.relative_mismatch <= 1e-6, format!("free-energy variation vs −h: relative {:.3e} over {} probes", var.relative_mismatch, var.probe_count));
    let dis = dissipation_equivalence_residual(&s.m, Some(&h), &p);
    v.require(dis <= 1e-10, format!("dissipation forms: relative {dis:.3e}"));
    let sys = FullSystem::new(p, ExternalField::Zero, nomag());
    let s0 = random_full_state(&g, ME, 0.1, 12).unwrap();
    let run = advance(&sys, s0, 0.1, &StepConfig::rk4(1e-3), Cadence { sample_every: usize::MAX, snapshot_every: Some(1) }).unwrap();
    let traj = trajectory_density_check(&sys, &run, 64, 10).unwrap();
    v.require(traj <= 1e-4, format!("ρ(t,X(t)) vs ρ₀ exp(−∫∇·v) along 64 paths: relative {traj:.3e}"));
    v
}

fn criterion_11() -> Verdict {
    let mut v = Verdict::new();
    let p = Params { gamma_g: 1.4, lambda_d: 0.6, ..Params::default() };
    let g = Grid::uniform(2, 16).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let s = random_perturbation(&g, [0.6, 0.0, 0.8], 0.05 + 0.003 * seed as f64, seed).unwrap();
        let r = perturb_rhs(&s, &p, &PerturbOptions::default()).unwrap();
        let split = dbar_rhs(&s, &p);
        for c in 0..3 {
            let mean = r.d_d.component(c).iter().sum::<f64>() / g.total_points() as f64;
            worst = worst.max((mean - split[c]).abs());
        }
    }
    v.require(worst <= 1e-10, format!("100 random states: max |mean(d_d) − split form| = {worst:.3e}"));
    v
}

fn criterion_12() -> Verdict {
    let mut v = Verdict::new();
    let cfg_text = "model = \"full\"\nT_end = 0.02\ndt = 1e-3\nsample_every = 5\nsnapshot_every = 10\ndeterministic = true\n\
                    [grid]\ndim = 2\nn = 16\n[initial]\nkind = \"random\"\namplitude = 0.05\nseed = 4\n";
    let cfg = parse_config(cfg_text).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run(Command::Simulate, &cfg, Some(d.path())).unwrap();
    }
    let mut names: Vec<String> = std::fs::read_dir(dirs[0].path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    let identical = names.iter().all(|n| std::fs::read(dirs[0].path().join(n)).unwrap() == std::fs::read(dirs[1].path().join(n)).unwrap());
    v.require(identical && names.len() >= 4, format!("two deterministic runs: {} files byte-identical ({})", names.len(), names.join(", ")));

    let g = Grid::uniform(2, 16).unwrap();
    let snaps = [
        Snapshot::Full(random_full_state(&g, ME, 0.1, 1).unwrap()),
        Snapshot::Perturb(random_perturbation(&g, [0.6, 0.0, 0.8], 0.1, 2).unwrap()),
    ];
    let bits = |s: &Snapshot| -> Vec<u64> {
        match s {
            Snapshot::Full(x) => [&x.rho, &x.v, &x.f, &x.m].iter().flat_map(|f| f.values().iter().map(|v| v.to_bits())).collect(),
            Snapshot::Perturb(x) => [&x.theta, &x.u, &x.psi, &x.d]
                .iter()
                .flat_map(|f| f.values().iter().map(|v| v.to_bits()))
                .chain(x.m_e.iter().map(|v| v.to_bits()))
                .collect(),
        }
    };
    let exact = snaps.iter().all(|s| bits(&decode_snapshot(&encode_snapshot(s)).unwrap()) == bits(s));
    v.require(exact, "snapshot encode/decode is bit-exact for both models".into());
    v
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 12] = [
        ("energy-dissipation identity", criterion_1),
        ("sphere tangency and constraint drift", criterion_2),
        ("LLG form equivalence", criterion_3),
        ("macrospin closed form", criterion_4),
        ("deformation structure identities", criterion_5),
        ("psi-equation telescoping form", criterion_6),
        ("coefficient positivity conditions", criterion_7),
        ("near-equilibrium dissipation trend", criterion_8),
        ("Picard scheme", criterion_9),
        ("variational checks", criterion_10),
        ("mean-field split", criterion_11),
        ("determinism and snapshot I/O", criterion_12),
    ];
    let results: Vec<(Verdict, f64)> = std::thread::scope(|scope| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|(_, f)| {
                let f = *f;
                scope.spawn(move || {
                    let start = Instant::now();
                    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
                        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
                        Verdict { pass: false, details: vec![format!("MISS panicked: {msg}")] }
                    });
                    (verdict, start.elapsed().as_secs_f64())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("criterion thread")).collect()
    });
    let mut out = String::new();
    for (k, ((name, _), (verdict, secs))) in criteria.iter().zip(&results).enumerate() {
        let _ = writeln!(out, "criterion {:>2} {:<40} {}  ({secs:.1} s)", k + 1, name, if verdict.pass { "PASS" } else { "FAIL" });
        for d in &verdict.details {
            let _ = writeln!(out, "        {d}");
        }
    }
    print!("{out}");
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, r)| !r.0.pass).map(|(k, _)| k + 1).collect();
    if failed.is_empty() {
        println!("acceptance: all 12 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
