//! Vector calculus on fields and pointwise 3-vector / 3×3 algebra.
//!
//! Conventions: `(∇v)_{ik} = ∂_k v_i`, `(∇·G)_i = ∂_j G^{ji}`.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::grid::{divergence_of, Field, Grid, Rank};

/// Gradient: scalar → vector, vector → matrix with `(∇v)_{ik} = ∂_k v_i`.
pub fn grad(f: &Field) -> Field {
    let grid = f.grid();
    let comps = f.components();
    let per_comp: Vec<[Vec<f64>; 3]> = comps.par_iter().map(|c| grid.grad(c)).collect();
    let rank = match f.rank() {
        Rank::Scalar => Rank::Vector,
        Rank::Vector => Rank::Matrix,
        Rank::Matrix => panic!("gradient of a matrix field is not represented"),
    };
    let flat: Vec<Vec<f64>> = per_comp.into_iter().flat_map(|g| g.into_iter()).collect();
    Field::from_components(grid, rank, &flat)
}

/// Componentwise Laplacian.
pub fn lap(f: &Field) -> Field {
    let grid = f.grid();
    let comps: Vec<Vec<f64>> = f.components().par_iter().map(|c| grid.lap(c)).collect();
    Field::from_components(grid, f.rank(), &comps)
}

/// `∇·v` of a vector field.
pub fn div(v: &Field) -> Field {
    assert_eq!(v.rank(), Rank::Vector);
    let grid = v.grid();
    let c = v.components();
    let d = divergence_of(grid, [&c[0], &c[1], &c[2]]);
    Field::from_components(grid, Rank::Scalar, &[d])
}

/// `(∇·G)_i = Σ_j ∂_j G^{ji}` of a matrix field.
pub fn div_matrix(g: &Field) -> Field {
    assert_eq!(g.rank(), Rank::Matrix);
    let grid = g.grid();
    let c = g.components();
    let out: Vec<Vec<f64>> = (0..3)
        .into_par_iter()
        .map(|i| divergence_of(grid, [&c[i], &c[3 + i], &c[6 + i]]))
        .collect();
    Field::from_components(grid, Rank::Vector, &out)
}

/// `(v·∇)f` applied to every component of `f`.
pub fn advect(v: &Field, f: &Field) -> Field {
    assert_eq!(v.rank(), Rank::Vector);
    let grid = f.grid();
    let vc = v.components();
    let out: Vec<Vec<f64>> = f
        .components()
        .par_iter()
        .map(|c| {
            let g = grid.grad(c);
            let mut acc = vec![0.0; c.len()];
            for k in 0..grid.dim() {
                for (p, a) in acc.iter_mut().enumerate() {
                    *a += vc[k][p] * g[k][p];
                }
            }
            acc
        })
        .collect();
    Field::from_components(grid, f.rank(), &out)
}

/// `|∇f|² = Σ_{c,k} (∂_k f_c)²` pointwise.
pub fn grad_sq(f: &Field) -> Field {
    let g = grad(f);
    g.map_to_scalar(|x| x.iter().map(|v| v * v).sum())
}

/// Gram matrix of first derivatives: `(∇M⊙∇M)_{ij} = ∂_iM·∂_jM`.
pub fn gram(grad_m: &Field) -> Field {
    assert_eq!(grad_m.rank(), Rank::Matrix);
    grad_m.map_components(|g| {
        let mut out = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                out[3 * i + j] = (0..3).map(|c| g[3 * c + i] * g[3 * c + j]).sum();
            }
        }
        out
    })
}

/// Removes aliased modes from every component.
pub fn dealias(f: &mut Field) {
    let grid = f.grid().clone();
    let mut comps = f.components();
    comps.par_iter_mut().for_each(|c| grid.dealias(c));
    *f = Field::from_components(&grid, f.rank(), &comps);
}

/// Pointwise product of a scalar field with any field.
pub fn scale_by(s: &Field, f: &Field) -> Field {
    assert_eq!(s.rank(), Rank::Scalar);
    let nc = f.n_components();
    let mut out = f.clone();
    for (p, chunk) in out.values_mut().chunks_mut(nc).enumerate() {
        let w = s.values()[p];
        chunk.iter_mut().for_each(|v| *v *= w);
    }
    out
}

/// Pointwise dot product of two vector fields.
pub fn dot(a: &Field, b: &Field) -> Field {
    zip_to_scalar(a, b, |x, y| x.iter().zip(y).map(|(p, q)| p * q).sum())
}

/// Pointwise cross product of two vector fields.
pub fn cross(a: &Field, b: &Field) -> Field {
    zip_map(a, b, Rank::Vector, |x, y| cross3(arr(x), arr(y)).to_vec())
}

pub(crate) fn zip_to_scalar(a: &Field, b: &Field, f: impl Fn(&[f64], &[f64]) -> f64) -> Field {
    zip_map(a, b, Rank::Scalar, |x, y| vec![f(x, y)])
}

pub(crate) fn zip_map(
    a: &Field,
    b: &Field,
    rank: Rank,
    f: impl Fn(&[f64], &[f64]) -> Vec<f64>,
) -> Field {
    let na = a.n_components();
    let nb = b.n_components();
    let values: Vec<f64> =
        a.values().chunks(na).zip(b.values().chunks(nb)).flat_map(|(x, y)| f(x, y)).collect();
    Field::from_values(a.grid(), rank, values).expect("zip_map produced wrong size")
}

impl Field {
    /// Pointwise map to a scalar field.
    pub fn map_to_scalar(&self, f: impl Fn(&[f64]) -> f64) -> Field {
        let nc = self.n_components();
        let values = self.values().chunks(nc).map(f).collect();
        Field::from_values(self.grid(), Rank::Scalar, values).expect("scalar map")
    }

    /// Pointwise map to a field of another rank.
    pub fn map_to(&self, rank: Rank, f: impl Fn(&[f64]) -> Vec<f64>) -> Field {
        let nc = self.n_components();
        let values = self.values().chunks(nc).flat_map(f).collect();
        Field::from_values(self.grid(), rank, values).expect("rank map")
    }

    /// Subtracts the spatial mean of every component.
    pub fn minus_mean(&self) -> Field {
        let means = crate::grid::spatial_mean(self);
        let nc = self.n_components();
        let mut out = self.clone();
        for chunk in out.values_mut().chunks_mut(nc) {
            for (v, m) in chunk.iter_mut().zip(&means) {
                *v -= m;
            }
        }
        out
    }
}

pub fn arr(x: &[f64]) -> [f64; 3] {
    [x[0], x[1], x[2]]
}

pub fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

pub fn mat3(x: &[f64]) -> Matrix3<f64> {
    Matrix3::from_row_slice(&x[..9])
}

pub fn mat3_to_vec(m: &Matrix3<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(9);
    for i in 0..3 {
        for j in 0..3 {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// The 3×3 identity as a constant matrix field.
pub fn identity_field(grid: &Grid) -> Field {
    Field::constant(grid, Rank::Matrix, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
}

/// Pointwise determinant of a matrix field.
pub fn det_field(m: &Field) -> Field {
    m.map_to_scalar(|x| mat3(x).determinant())
}
