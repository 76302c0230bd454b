//! Wasserstein steepest-ascent direction for `λ_min(M_ρ)` when the smallest
//! eigenvalue may be repeated.
//!
//! Pipeline: band the eigenvalues at the bottom of the spectrum, build the
//! candidate fields `ψ_ij(x) = ∇f(x)ᵀ v_i · v_jᵀ f(x)`, orthonormalise them in
//! `L²(ρ)`, assemble `A_k(i, j) = ⟨φ_k, ψ_ij + ψ_ji⟩_ρ` and hand the family
//! `{A_k}` to [`crate::subsolver`]. The direction is `u* Σ_k w*_k φ_k`.

use nalgebra::{DMatrix, DVector};

use crate::design::{info_matrix, DesignMeasure, InfoMatrix};
use crate::error::Result;
use crate::models::{ActiveSet, RegressionModel};
use crate::subsolver::{self, SubsolverConfig};

pub const DEFAULT_TOL_MULT: f64 = 1e-6;
pub const DEFAULT_RANK_TOL: f64 = 1e-8;
pub const DEFAULT_STOP_TOL: f64 = 1e-6;

/// Orthonormal basis of the (numerically) smallest eigenspace.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSubspace {
    pub lambda_min: f64,
    pub s1: usize,
    /// `m × s1`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// The banded eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
}

/// Eigenvalues within `tol_mult · max(1, λ_max)` of `λ_min` count as one cluster.
pub fn multiplicity(info: &InfoMatrix, tol_mult: f64) -> EigenSubspace {
    let vals = info.eigenvalues();
    let band = vals[0] + tol_mult * info.lambda_max().max(1.0);
    let s1 = vals.iter().take_while(|l| **l <= band).count().max(1);
    EigenSubspace {
        lambda_min: vals[0],
        s1,
        basis: info.eigenvectors().columns(0, s1).into_owned(),
        eigenvalues: vals.iter().take(s1).copied().collect(),
    }
}

/// Per-particle vector fields (each stored row-major, `N × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct BasisFields {
    pub d: usize,
    pub s1: usize,
    /// `psi[i * s1 + j]` is `ψ_ij`.
    pub psi: Vec<Vec<f64>>,
    /// Orthonormal in `L²(ρ)`.
    pub phi: Vec<Vec<f64>>,
}

impl BasisFields {
    pub fn s(&self) -> usize {
        self.phi.len()
    }

    pub fn psi(&self, i: usize, j: usize) -> &[f64] {
        &self.psi[i * self.s1 + j]
    }
}

/// `⟨a, b⟩_ρ = (1/N) Σ_i a(x_i)ᵀ b(x_i)`.
pub fn inner_rho(a: &[f64], b: &[f64], n: usize) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / n as f64
}

pub fn build_basis(
    measure: &DesignMeasure,
    model: &RegressionModel,
    sub: &EigenSubspace,
    rank_tol: f64,
) -> BasisFields {
    build_basis_in(measure, model, sub, rank_tol, &ActiveSet::default())
}

/// Like [`build_basis`], with every candidate field restricted to the
/// tangent directions left free by `active`.
pub fn build_basis_in(
    measure: &DesignMeasure,
    model: &RegressionModel,
    sub: &EigenSubspace,
    rank_tol: f64,
    active: &ActiveSet,
) -> BasisFields {
    let n = measure.n();
    let d = model.d();
    let s1 = sub.s1;
    let mut psi = vec![vec![0.0; n * d]; s1 * s1];

    let mut f = DVector::zeros(model.m());
    let mut jac = DMatrix::zeros(model.m(), d);
    for (p, x) in measure.points().enumerate() {
        model.features_into(x, f.as_mut_slice());
        model.jacobian_into(x, &mut jac);
        // grad[i] = ∇fᵀ v_i, proj[j] = v_jᵀ f
        let grad = jac.tr_mul(&sub.basis);
        let proj = sub.basis.tr_mul(&f);
        for i in 0..s1 {
            for j in 0..s1 {
                let out = &mut psi[i * s1 + j][p * d..(p + 1) * d];
                for (c, o) in out.iter_mut().enumerate() {
                    *o = grad[(c, i)] * proj[j];
                }
            }
        }
    }
    for field in &mut psi {
        active.restrict(field, d);
    }

    let max_norm = psi
        .iter()
        .map(|c| inner_rho(c, c, n).sqrt())
        .fold(0.0, f64::max);
    let mut phi: Vec<Vec<f64>> = Vec::new();
    if max_norm > 0.0 {
        for cand in &psi {
            let mut r = cand.clone();
            // modified Gram–Schmidt, two passes
            for _ in 0..2 {
                for q in &phi {
                    let c = inner_rho(&r, q, n);
                    r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= c * qi);
                }
            }
            let norm = inner_rho(&r, &r, n).sqrt();
            if norm > rank_tol * max_norm {
                r.iter_mut().for_each(|v| *v /= norm);
                phi.push(r);
            }
        }
    }
    BasisFields { d, s1, psi, phi }
}

/// The matrices `A_k`, one per retained basis field.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemData {
    pub a: Vec<DMatrix<f64>>,
}

pub fn assemble_a(measure: &DesignMeasure, basis: &BasisFields, sub: &EigenSubspace) -> SubproblemData {
    let n = measure.n();
    let s1 = sub.s1;
    let a = basis
        .phi
        .iter()
        .map(|phi_k| {
            let mut ak = DMatrix::zeros(s1, s1);
            for i in 0..s1 {
                for j in i..s1 {
                    let v = inner_rho(phi_k, basis.psi(i, j), n) + inner_rho(phi_k, basis.psi(j, i), n);
                    ak[(i, j)] = v;
                    ak[(j, i)] = v;
                }
            }
            ak
        })
        .collect();
    SubproblemData { a }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsteepConfig {
    pub tol_mult: f64,
    pub rank_tol: f64,
    pub stop_tol: f64,
    pub subsolver: SubsolverConfig,
}

impl Default for EsteepConfig {
    fn default() -> Self {
        Self {
            tol_mult: DEFAULT_TOL_MULT,
            rank_tol: DEFAULT_RANK_TOL,
            stop_tol: DEFAULT_STOP_TOL,
            subsolver: SubsolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentDirection {
    pub d: usize,
    /// `u* Σ_k w*_k φ_k` at the particles, row-major.
    pub velocity: Vec<f64>,
    pub u_star: f64,
    pub w_star: DVector<f64>,
    pub stop: bool,
    pub s1: usize,
    pub s: usize,
}

impl AscentDirection {
    pub fn at(&self, i: usize) -> &[f64] {
        &self.velocity[i * self.d..(i + 1) * self.d]
    }

    /// `‖velocity‖_ρ`.
    pub fn norm_rho(&self) -> f64 {
        let n = (self.velocity.len() / self.d).max(1);
        inner_rho(&self.velocity, &self.velocity, n).sqrt()
    }
}

pub fn steepest_direction(
    measure: &DesignMeasure,
    model: &RegressionModel,
    cfg: &EsteepConfig,
) -> Result<AscentDirection> {
    let info = info_matrix(measure, model)?;
    steepest_direction_with(&info, measure, model, cfg, &ActiveSet::default())
}

/// Steepest ascent among velocity fields that keep the constraints in
/// `active` fixed.
pub fn steepest_direction_in(
    measure: &DesignMeasure,
    model: &RegressionModel,
    cfg: &EsteepConfig,
    active: &ActiveSet,
) -> Result<AscentDirection> {
    let info = info_matrix(measure, model)?;
    steepest_direction_with(&info, measure, model, cfg, active)
}

pub(crate) fn steepest_direction_with(
    info: &InfoMatrix,
    measure: &DesignMeasure,
    model: &RegressionModel,
    cfg: &EsteepConfig,
    active: &ActiveSet,
) -> Result<AscentDirection> {
    let sub = multiplicity(info, cfg.tol_mult);
    let basis = build_basis_in(measure, model, &sub, cfg.rank_tol, active);
    let d = model.d();
    let n = measure.n();
    if basis.s() == 0 {
        return Ok(AscentDirection {
            d,
            velocity: vec![0.0; n * d],
            u_star: 0.0,
            w_star: DVector::zeros(0),
            stop: true,
            s1: sub.s1,
            s: 0,
        });
    }
    let data = assemble_a(measure, &basis, &sub);
    let sol = subsolver::solve(&data.a, &cfg.subsolver)?;
    let mut velocity = vec![0.0; n * d];
    for (wk, phi_k) in sol.w_star.iter().zip(&basis.phi) {
        let c = sol.u_star * wk;
        velocity.iter_mut().zip(phi_k).for_each(|(v, p)| *v += c * p);
    }
    Ok(AscentDirection {
        d,
        velocity,
        u_star: sol.u_star,
        stop: sol.u_star <= cfg.stop_tol,
        w_star: sol.w_star,
        s1: sub.s1,
        s: basis.s(),
    })
}
