//! Periodic tensor-product grids on `[0, 2π)^dim` and fields over them.
//!
//! Differentiation is pseudo-spectral: the trigonometric interpolant of the
//! grid values is differentiated exactly. Quadrature is the rectangle rule,
//! which is spectrally accurate on the torus.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Largest Sobolev order accepted by the norm routines.
pub const MAX_SOBOLEV_ORDER: usize = 6;

struct GridInner {
    dim: usize,
    n: Vec<usize>,
    spacing: Vec<f64>,
    total: usize,
    /// Stride (in points) of each active axis in the row-major layout.
    strides: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

/// Periodic grid on the flat torus `𝕋^dim` with side length `2π`.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.inner.dim)
            .field("n", &self.inner.n)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.dim == other.inner.dim && self.inner.n == other.inner.n)
    }
}

impl Grid {
    /// Builds a grid with `n_per_axis.len()` active axes.
    ///
    /// Every axis needs an even number of points, at least 8.
    pub fn new(n_per_axis: &[usize]) -> Result<Self> {
        let dim = n_per_axis.len();
        if !(1..=3).contains(&dim) {
            return Err(Error::Argument(format!("grid dimension must be 1, 2 or 3, got {dim}")));
        }
        for (axis, &n) in n_per_axis.iter().enumerate() {
            if n < 8 || n % 2 != 0 {
                return Err(Error::Argument(format!(
                    "axis {axis}: point count must be even and >= 8, got {n}"
                )));
            }
        }
        let mut planner = FftPlanner::<f64>::new();
        let forward = n_per_axis.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = n_per_axis.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let mut strides = vec![1; dim];
        for a in (0..dim.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * n_per_axis[a + 1];
        }
        Ok(Self {
            inner: Arc::new(GridInner {
                dim,
                n: n_per_axis.to_vec(),
                spacing: n_per_axis.iter().map(|&n| 2.0 * PI / n as f64).collect(),
                total: n_per_axis.iter().product(),
                strides,
                forward,
                inverse,
            }),
        })
    }

    /// Uniform grid with `n` points along each of `dim` axes.
    pub fn uniform(dim: usize, n: usize) -> Result<Self> {
        Self::new(&vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn n_per_axis(&self) -> &[usize] {
        &self.inner.n
    }

    pub fn spacing(&self) -> &[f64] {
        &self.inner.spacing
    }

    pub fn total_points(&self) -> usize {
        self.inner.total
    }

    /// Smallest grid spacing.
    pub fn min_spacing(&self) -> f64 {
        self.inner.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Quadrature weight of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.inner.spacing.iter().product()
    }

    /// `|𝕋^dim| = (2π)^dim`.
    pub fn volume(&self) -> f64 {
        (2.0 * PI).powi(self.inner.dim as i32)
    }

    /// Multi-index of a flat point index (inactive axes are 0).
    pub fn point_index(&self, idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for a in 0..self.inner.dim {
            out[a] = (idx / self.inner.strides[a]) % self.inner.n[a];
        }
        out
    }

    /// Flat index of a multi-index; inverse of `point_index`.
    pub fn flat_index(&self, p: [usize; 3]) -> usize {
        (0..self.inner.dim).map(|a| p[a] * self.inner.strides[a]).sum()
    }

    /// Physical coordinates of a grid point; coordinates of inactive axes are 0.
    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let p = self.point_index(idx);
        let mut x = [0.0; 3];
        for a in 0..self.inner.dim {
            x[a] = p[a] as f64 * self.inner.spacing[a];
        }
        x
    }

    /// Signed integer wavenumber of FFT bin `j` along `axis`.
    fn wavenumber(&self, axis: usize, j: usize) -> i64 {
        let n = self.inner.n[axis];
        if j <= n / 2 {
            j as i64
        } else {
            j as i64 - n as i64
        }
    }

    fn is_nyquist(&self, axis: usize, j: usize) -> bool {
        j == self.inner.n[axis] / 2
    }

    /// Complex forward transform of a real scalar array (unnormalized).
    pub fn fft(&self, data: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(data.len(), self.inner.total);
        let mut buf: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut buf, true);
        buf
    }

    /// Inverse transform keeping the real part, normalized by the point count.
    pub fn ifft(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spec, false);
        let scale = 1.0 / self.inner.total as f64;
        spec.into_iter().map(|c| c.re * scale).collect()
    }

    fn transform(&self, buf: &mut [Complex64], forward: bool) {
        let g = &*self.inner;
        for a in 0..g.dim {
            let plan = if forward { &g.forward[a] } else { &g.inverse[a] };
            let n = g.n[a];
            let stride = g.strides[a];
            if stride == 1 {
                plan.process(buf);
                continue;
            }
            let block = n * stride;
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            for start in (0..g.total).step_by(block) {
                for offset in 0..stride {
                    let base = start + offset;
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = buf[base + j * stride];
                    }
                    plan.process(&mut line);
                    for (j, v) in line.iter().enumerate() {
                        buf[base + j * stride] = *v;
                    }
                }
            }
        }
    }

    /// Calls `f(flat_index, [j0, j1, j2])` for every Fourier bin.
    pub(crate) fn for_each_bin(&self, mut f: impl FnMut(usize, [usize; 3])) {
        for idx in 0..self.inner.total {
            f(idx, self.point_index(idx));
        }
    }

    /// Wavevector seen by first derivatives (Nyquist entries zeroed) and the
    /// full `|k|²` seen by the Laplacian, for Fourier bin `bin`.
    pub(crate) fn symbol(&self, bin: [usize; 3]) -> ([f64; 3], f64) {
        let mut k = [0.0; 3];
        let mut k2 = 0.0;
        for a in 0..self.inner.dim {
            let ka = self.wavenumber(a, bin[a]) as f64;
            k2 += ka * ka;
            if !self.is_nyquist(a, bin[a]) {
                k[a] = ka;
            }
        }
        (k, k2)
    }

    /// Spectral multiplier of `∂^m` at bin `j`.
    fn multiplier(&self, bin: [usize; 3], m: [usize; 3]) -> Complex64 {
        let mut factor = Complex64::new(1.0, 0.0);
        for a in 0..3 {
            if m[a] == 0 {
                continue;
            }
            if a >= self.inner.dim {
                return Complex64::new(0.0, 0.0);
            }
            if m[a] % 2 == 1 && self.is_nyquist(a, bin[a]) {
                return Complex64::new(0.0, 0.0);
            }
            let k = self.wavenumber(a, bin[a]) as f64;
            factor *= Complex64::new(0.0, k).powu(m[a] as u32);
        }
        factor
    }

    /// Applies `∂^m` to a spectrum.
    pub fn apply_multi(&self, spec: &[Complex64], m: [usize; 3]) -> Vec<f64> {
        if m.iter().enumerate().any(|(a, &ma)| ma > 0 && a >= self.inner.dim) {
            return vec![0.0; self.inner.total];
        }
        let mut out = spec.to_vec();
        self.for_each_bin(|idx, bin| out[idx] *= self.multiplier(bin, m));
        self.ifft(out)
    }

    /// First derivative along `axis`; zero along inactive axes.
    pub fn d(&self, f: &[f64], axis: usize) -> Vec<f64> {
        if axis >= self.inner.dim {
            return vec![0.0; self.inner.total];
        }
        let mut m = [0; 3];
        m[axis] = 1;
        self.apply_multi(&self.fft(f), m)
    }

    /// Derivatives of a scalar array along all three axes (inactive ones are zero).
    pub fn grad(&self, f: &[f64]) -> [Vec<f64>; 3] {
        Spectrum::new(self, f).grad()
    }

    /// Spectral Laplacian.
    pub fn lap(&self, f: &[f64]) -> Vec<f64> {
        Spectrum::new(self, f).lap()
    }

    /// Applies the 2/3-rule mask: modes with `|k_a| > n_a/3` on any axis are removed.
    pub fn dealias(&self, f: &mut [f64]) {
        let mut spec = self.fft(f);
        self.for_each_bin(|idx, bin| {
            for a in 0..self.inner.dim {
                let k = self.wavenumber(a, bin[a]).unsigned_abs() as usize;
                if 3 * k > self.inner.n[a] {
                    spec[idx] = Complex64::new(0.0, 0.0);
                    return;
                }
            }
        });
        let out = self.ifft(spec);
        f.copy_from_slice(&out);
    }

    /// Evaluates the trigonometric interpolant of `spec` at an arbitrary point.
    pub fn interpolate(&self, spec: &[Complex64], x: [f64; 3]) -> f64 {
        let g = &*self.inner;
        let phases: Vec<Vec<Complex64>> = (0..g.dim)
            .map(|a| {
                (0..g.n[a])
                    .map(|j| {
                        let k = self.wavenumber(a, j) as f64;
                        Complex64::from_polar(1.0, k * x[a])
                    })
                    .collect()
            })
            .collect();
        let mut sum = Complex64::new(0.0, 0.0);
        self.for_each_bin(|idx, bin| {
            let mut ph = spec[idx];
            for a in 0..g.dim {
                ph *= phases[a][bin[a]];
            }
            sum += ph;
        });
        sum.re / g.total as f64
    }

    /// Sum `Σ f_i` in a fixed pairwise order, independent of thread count.
    pub fn pairwise_sum(values: &[f64]) -> f64 {
        match values.len() {
            0 => 0.0,
            1 => values[0],
            n if n <= 8 => values.iter().sum(),
            n => {
                let (a, b) = values.split_at(n / 2);
                Self::pairwise_sum(a) + Self::pairwise_sum(b)
            }
        }
    }

    /// Rectangle-rule integral of a scalar array.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        Self::pairwise_sum(f) * self.cell_volume()
    }

    /// Spatial mean of a scalar array.
    pub fn mean(&self, f: &[f64]) -> f64 {
        Self::pairwise_sum(f) / self.inner.total as f64
    }

    /// Band-limited random scalar array: random cosine/sine amplitudes in
    /// `[-1, 1]` for every nonzero wavevector with `|k_a| <= kmax`.
    pub fn random_trig<R: Rng>(&self, rng: &mut R, kmax: usize) -> Vec<f64> {
        let dim = self.inner.dim;
        let km = kmax as i64;
        let range = |a: usize| if a < dim { -km..=km } else { 0..=0 };
        let mut modes = Vec::new();
        for k0 in range(0) {
            for k1 in range(1) {
                for k2 in range(2) {
                    if (k0, k1, k2) == (0, 0, 0) {
                        continue;
                    }
                    let c: f64 = rng.gen_range(-1.0..1.0);
                    let s: f64 = rng.gen_range(-1.0..1.0);
                    modes.push(([k0 as f64, k1 as f64, k2 as f64], c, s));
                }
            }
        }
        (0..self.inner.total)
            .map(|idx| {
                let x = self.coords(idx);
                modes
                    .iter()
                    .map(|(k, c, s)| {
                        let phase = k[0] * x[0] + k[1] * x[1] + k[2] * x[2];
                        c * phase.cos() + s * phase.sin()
                    })
                    .sum()
            })
            .collect()
    }
}

/// Forward transform of one scalar array, reused for several derivatives.
pub struct Spectrum<'g> {
    grid: &'g Grid,
    coeffs: Vec<Complex64>,
}

impl<'g> Spectrum<'g> {
    pub fn new(grid: &'g Grid, f: &[f64]) -> Self {
        Self { grid, coeffs: grid.fft(f) }
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn d(&self, axis: usize) -> Vec<f64> {
        let mut m = [0; 3];
        if axis >= 3 {
            return vec![0.0; self.grid.total_points()];
        }
        m[axis] = 1;
        self.grid.apply_multi(&self.coeffs, m)
    }

    pub fn grad(&self) -> [Vec<f64>; 3] {
        [self.d(0), self.d(1), self.d(2)]
    }

    pub fn lap(&self) -> Vec<f64> {
        let g = self.grid;
        let mut out = self.coeffs.clone();
        g.for_each_bin(|idx, bin| {
            let mut k2 = 0.0;
            for a in 0..g.dim() {
                let k = g.wavenumber(a, bin[a]) as f64;
                k2 += k * k;
            }
            out[idx] *= -k2;
        });
        g.ifft(out)
    }

    pub fn multi(&self, m: [usize; 3]) -> Vec<f64> {
        self.grid.apply_multi(&self.coeffs, m)
    }
}

/// Sums `Σ_a ∂_a f_a` directly in spectral space (one inverse transform).
pub fn divergence_of(grid: &Grid, comps: [&[f64]; 3]) -> Vec<f64> {
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.total_points()];
    for (a, f) in comps.iter().enumerate().take(grid.dim()) {
        let spec = grid.fft(f);
        let mut m = [0; 3];
        m[a] = 1;
        grid.for_each_bin(|idx, bin| acc[idx] += spec[idx] * grid.multiplier(bin, m));
    }
    grid.ifft(acc)
}

/// All multi-indices `m` over the active axes with `|m| <= s`.
pub fn multi_indices(dim: usize, s: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    let lim = |a: usize| if a < dim { s } else { 0 };
    for m0 in 0..=lim(0) {
        for m1 in 0..=lim(1) {
            for m2 in 0..=lim(2) {
                if m0 + m1 + m2 <= s {
                    out.push([m0, m1, m2]);
                }
            }
        }
    }
    out.sort_by_key(|m| (m[0] + m[1] + m[2], std::cmp::Reverse(*m)));
    out
}

/// Tensor rank of a field's values at each point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    Scalar,
    Vector,
    Matrix,
}

impl Rank {
    pub fn components(self) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => 3,
            Rank::Matrix => 9,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Rank::Scalar => 0,
            Rank::Vector => 1,
            Rank::Matrix => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Rank::Scalar),
            1 => Some(Rank::Vector),
            2 => Some(Rank::Matrix),
            _ => None,
        }
    }
}

/// Scalar, ℝ³- or ℝ³ˣ³-valued grid function. Values are point-major with the
/// component index innermost; matrices are stored row-major (`F^{ij}` at `3i+j`).
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    rank: Rank,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid, rank: Rank) -> Self {
        Self { grid: grid.clone(), rank, values: vec![0.0; grid.total_points() * rank.components()] }
    }

    pub fn from_values(grid: &Grid, rank: Rank, values: Vec<f64>) -> Result<Self> {
        let want = grid.total_points() * rank.components();
        if values.len() != want {
            return Err(Error::Shape(format!("expected {want} values, got {}", values.len())));
        }
        Ok(Self { grid: grid.clone(), rank, values })
    }

    /// Samples `f(x)` at every grid point; `f` must return `rank.components()` values.
    pub fn from_fn(grid: &Grid, rank: Rank, f: impl Fn([f64; 3]) -> Vec<f64>) -> Self {
        let nc = rank.components();
        let mut values = Vec::with_capacity(grid.total_points() * nc);
        for idx in 0..grid.total_points() {
            let v = f(grid.coords(idx));
            assert_eq!(v.len(), nc, "sampler returned wrong component count");
            values.extend(v);
        }
        Self { grid: grid.clone(), rank, values }
    }

    pub fn constant(grid: &Grid, rank: Rank, value: &[f64]) -> Self {
        assert_eq!(value.len(), rank.components());
        Self { grid: grid.clone(), rank, values: value.repeat(grid.total_points()) }
    }

    /// Builds a field from per-component scalar arrays.
    pub fn from_components(grid: &Grid, rank: Rank, comps: &[Vec<f64>]) -> Self {
        let nc = rank.components();
        assert_eq!(comps.len(), nc);
        let mut values = vec![0.0; grid.total_points() * nc];
        for (c, comp) in comps.iter().enumerate() {
            for (p, v) in comp.iter().enumerate() {
                values[p * nc + c] = *v;
            }
        }
        Self { grid: grid.clone(), rank, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn n_components(&self) -> usize {
        self.rank.components()
    }

    /// Values at one grid point.
    pub fn at(&self, idx: usize) -> &[f64] {
        let nc = self.n_components();
        &self.values[idx * nc..(idx + 1) * nc]
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        let nc = self.n_components();
        self.values.iter().skip(c).step_by(nc).copied().collect()
    }

    pub fn components(&self) -> Vec<Vec<f64>> {
        (0..self.n_components()).map(|c| self.component(c)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_same(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid || self.rank != other.rank {
            return Err(Error::Shape(format!(
                "fields differ: {:?}/{:?} vs {:?}/{:?}",
                self.grid, self.rank, other.grid, other.rank
            )));
        }
        Ok(())
    }

    /// `self + h·other`.
    pub fn add_scaled(&self, other: &Field, h: f64) -> Field {
        debug_assert!(self.check_same(other).is_ok());
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += h * b;
        }
        out
    }

    pub fn scale(&mut self, h: f64) {
        self.values.iter_mut().for_each(|v| *v *= h);
    }

    /// Max-norm distance.
    pub fn max_diff(&self, other: &Field) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn map_components(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Field {
        let nc = self.n_components();
        let values = self.values.chunks(nc).flat_map(f).collect();
        Field { grid: self.grid.clone(), rank: self.rank, values }
    }
}

/// Derivative of order `order` along `axis` of every component.
///
/// Odd orders drop the Nyquist mode so the discrete operator stays skew.
pub fn spectral_derivative(f: &Field, axis: usize, order: usize) -> Result<Field> {
    let grid = f.grid();
    if axis >= grid.dim() {
        return Err(Error::Argument(format!("axis {axis} out of range for a {}-d grid", grid.dim())));
    }
    if order == 0 {
        return Err(Error::Argument("derivative order must be >= 1".into()));
    }
    let mut m = [0; 3];
    m[axis] = order;
    let comps: Vec<Vec<f64>> =
        f.components().iter().map(|c| grid.apply_multi(&grid.fft(c), m)).collect();
    Ok(Field::from_components(grid, f.rank(), &comps))
}

fn check_weight(f: &Field, weight: Option<&Field>) -> Result<()> {
    if let Some(w) = weight {
        if w.rank() != Rank::Scalar || w.grid() != f.grid() {
            return Err(Error::Shape("weight must be a scalar field on the same grid".into()));
        }
        if w.values().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Argument("weight must be strictly positive".into()));
        }
    }
    Ok(())
}

/// Weighted inner product of per-point component arrays.
pub(crate) fn inner_arrays(grid: &Grid, f: &[f64], g: &[f64], weight: Option<&[f64]>) -> f64 {
    let terms: Vec<f64> = match weight {
        Some(w) => f.iter().zip(g).zip(w).map(|((a, b), w)| a * b * w).collect(),
        None => f.iter().zip(g).map(|(a, b)| a * b).collect(),
    };
    grid.integrate(&terms)
}

/// `⟨f, g⟩ = ∫ f·g w dx` summed over components.
pub fn inner_product_l2(f: &Field, g: &Field, weight: Option<&Field>) -> Result<f64> {
    f.check_same(g)?;
    check_weight(f, weight)?;
    let grid = f.grid();
    let w = weight.map(|w| w.values());
    Ok((0..f.n_components())
        .map(|c| inner_arrays(grid, &f.component(c), &g.component(c), w))
        .sum())
}

/// `Σ_{|m|≤s} ⟨∂^m f, ∂^m g⟩_w` over the scalar components given.
pub(crate) fn sobolev_inner_arrays(
    grid: &Grid,
    f: &[Vec<f64>],
    g: &[Vec<f64>],
    s: usize,
    weight: Option<&[f64]>,
) -> f64 {
    let mis = multi_indices(grid.dim(), s);
    let mut total = 0.0;
    for (fc, gc) in f.iter().zip(g) {
        let fs = grid.fft(fc);
        let gs = grid.fft(gc);
        for &m in &mis {
            let a = grid.apply_multi(&fs, m);
            let b = grid.apply_multi(&gs, m);
            total += inner_arrays(grid, &a, &b, weight);
        }
    }
    total
}

/// `‖f‖²_{H^s}` over the scalar components given.
pub(crate) fn sobolev_norm_sq_arrays(
    grid: &Grid,
    f: &[Vec<f64>],
    s: usize,
    weight: Option<&[f64]>,
) -> f64 {
    let mis = multi_indices(grid.dim(), s);
    let mut total = 0.0;
    for fc in f {
        let fs = grid.fft(fc);
        for &m in &mis {
            let a = grid.apply_multi(&fs, m);
            total += inner_arrays(grid, &a, &a, weight);
        }
    }
    total
}

fn check_order(s: usize) -> Result<()> {
    if s > MAX_SOBOLEV_ORDER {
        return Err(Error::Argument(format!("Sobolev order {s} exceeds cap {MAX_SOBOLEV_ORDER}")));
    }
    Ok(())
}

/// `‖f‖²_{H^s} = Σ_{|m|≤s} ‖∂^m f‖²_{L²}`, optionally with measure `w dx`.
pub fn sobolev_norm_sq(f: &Field, s: usize, weight: Option<&Field>) -> Result<f64> {
    check_order(s)?;
    check_weight(f, weight)?;
    Ok(sobolev_norm_sq_arrays(f.grid(), &f.components(), s, weight.map(|w| w.values())))
}

/// `Σ_{|m|≤s} ⟨∂^m f, ∂^m g⟩`, optionally weighted.
pub fn sobolev_inner(f: &Field, g: &Field, s: usize, weight: Option<&Field>) -> Result<f64> {
    check_order(s)?;
    f.check_same(g)?;
    check_weight(f, weight)?;
    Ok(sobolev_inner_arrays(f.grid(), &f.components(), &g.components(), s, weight.map(|w| w.values())))
}

/// Per-component spatial average.
pub fn spatial_mean(f: &Field) -> Vec<f64> {
    (0..f.n_components()).map(|c| f.grid().mean(&f.component(c))).collect()
}
