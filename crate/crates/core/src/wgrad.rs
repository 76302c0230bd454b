//! Closed-form Wasserstein gradients evaluated at the particles of an
//! empirical design.
//!
//! For an empirical measure the Wasserstein gradient at `x_i` equals `N`
//! times the Euclidean gradient of the criterion with respect to `x_i`, so
//! these fields drive the particle flow directly.

use nalgebra::{DMatrix, DVector};

use crate::design::{info_matrix, Criterion, CriterionKind, DesignMeasure, InfoMatrix};
use crate::error::{DesignError, Result};
use crate::esteep::{multiplicity, DEFAULT_TOL_MULT};
use crate::models::RegressionModel;

/// One velocity vector per particle, stored row-major (`N × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub d: usize,
    pub vectors: Vec<f64>,
    pub kind: CriterionKind,
    /// `sqrt((1/N) Σ ‖g_i‖²)`.
    pub norm_rho: f64,
}

impl GradientField {
    pub(crate) fn new(d: usize, vectors: Vec<f64>, kind: CriterionKind) -> Result<Self> {
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(DesignError::NonFinite("gradient field".into()));
        }
        let n = (vectors.len() / d).max(1);
        let norm_rho = (vectors.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        Ok(Self {
            d,
            vectors,
            kind,
            norm_rho,
        })
    }

    pub fn n(&self) -> usize {
        self.vectors.len() / self.d
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.d..(i + 1) * self.d]
    }

    pub(crate) fn negated(mut self) -> Self {
        self.vectors.iter_mut().for_each(|v| *v = -*v);
        self
    }
}

/// Evaluates `g(f(x_i), ∇f(x_i))` for every particle.
fn map_particles<F>(measure: &DesignMeasure, model: &RegressionModel, mut g: F) -> Vec<f64>
where
    F: FnMut(&DVector<f64>, &DMatrix<f64>) -> DVector<f64>,
{
    let d = model.d();
    let mut f = DVector::zeros(model.m());
    let mut jac = DMatrix::zeros(model.m(), d);
    let mut out = Vec::with_capacity(measure.n() * d);
    for x in measure.points() {
        model.features_into(x, f.as_mut_slice());
        model.jacobian_into(x, &mut jac);
        out.extend_from_slice(g(&f, &jac).as_slice());
    }
    out
}

fn checked_info(measure: &DesignMeasure, model: &RegressionModel) -> Result<InfoMatrix> {
    let info = info_matrix(measure, model)?;
    if info.is_singular() {
        return Err(DesignError::Singular {
            lambda_min: info.lambda_min(),
            threshold: info.singular_threshold(),
        });
    }
    Ok(info)
}

/// `-2 ∇f(x)ᵀ M⁻¹ L M⁻¹ f(x)`: Wasserstein gradient of `tr(L M⁻¹)`.
pub fn grad_l(
    measure: &DesignMeasure,
    model: &RegressionModel,
    l: &DMatrix<f64>,
) -> Result<GradientField> {
    let info = checked_info(measure, model)?;
    grad_l_with(&info, measure, model, l, CriterionKind::L)
}

fn grad_l_with(
    info: &InfoMatrix,
    measure: &DesignMeasure,
    model: &RegressionModel,
    l: &DMatrix<f64>,
    kind: CriterionKind,
) -> Result<GradientField> {
    if l.nrows() != model.m() || l.ncols() != model.m() {
        return Err(DesignError::DimensionMismatch {
            expected: model.m(),
            got: l.nrows(),
        });
    }
    let inv = info.inverse()?;
    let kernel = &inv * l * &inv;
    let vectors = map_particles(measure, model, |f, jac| jac.tr_mul(&(&kernel * f)) * -2.0);
    GradientField::new(model.d(), vectors, kind)
}

/// A-optimality: `grad_l` with `L = I`.
pub fn grad_a(measure: &DesignMeasure, model: &RegressionModel) -> Result<GradientField> {
    let info = checked_info(measure, model)?;
    grad_l_with(&info, measure, model, &DMatrix::identity(model.m(), model.m()), CriterionKind::A)
}

/// c-optimality: `grad_l` with `L = c cᵀ`.
pub fn grad_c(
    measure: &DesignMeasure,
    model: &RegressionModel,
    c: &DVector<f64>,
) -> Result<GradientField> {
    let info = checked_info(measure, model)?;
    grad_l_with(&info, measure, model, &(c * c.transpose()), CriterionKind::C)
}

/// `2 ∇f(x)ᵀ M⁻¹ f(x)`: Wasserstein gradient of `log det M`.
pub fn grad_d(measure: &DesignMeasure, model: &RegressionModel) -> Result<GradientField> {
    let info = checked_info(measure, model)?;
    grad_d_with(&info, measure, model)
}

fn grad_d_with(
    info: &InfoMatrix,
    measure: &DesignMeasure,
    model: &RegressionModel,
) -> Result<GradientField> {
    let inv = info.inverse()?;
    let vectors = map_particles(measure, model, |f, jac| jac.tr_mul(&(&inv * f)) * 2.0);
    GradientField::new(model.d(), vectors, CriterionKind::D)
}

/// `2 (vᵀf(x)) ∇f(x)ᵀ v` with `v` the unit eigenvector of a simple `λ_min`.
pub fn grad_e_simple(measure: &DesignMeasure, model: &RegressionModel) -> Result<GradientField> {
    let info = info_matrix(measure, model)?;
    grad_e_simple_with(&info, measure, model, DEFAULT_TOL_MULT)
}

pub(crate) fn grad_e_simple_with(
    info: &InfoMatrix,
    measure: &DesignMeasure,
    model: &RegressionModel,
    tol_mult: f64,
) -> Result<GradientField> {
    let sub = multiplicity(info, tol_mult);
    if sub.s1 != 1 {
        return Err(DesignError::Multiplicity(sub.s1));
    }
    let v = info.eigenvectors().column(0).into_owned();
    let vectors = map_particles(measure, model, |f, jac| jac.tr_mul(&v) * (2.0 * v.dot(f)));
    GradientField::new(model.d(), vectors, CriterionKind::E)
}

/// Ascent field for a smooth criterion under the maximise convention.
///
/// For `E` this requires a simple smallest eigenvalue; otherwise the
/// steepest-ascent direction from [`crate::esteep`] must be used.
pub fn ascent_field(
    measure: &DesignMeasure,
    model: &RegressionModel,
    crit: &Criterion,
) -> Result<GradientField> {
    let info = info_matrix(measure, model)?;
    ascent_field_with(&info, measure, model, crit, DEFAULT_TOL_MULT)
}

pub(crate) fn ascent_field_with(
    info: &InfoMatrix,
    measure: &DesignMeasure,
    model: &RegressionModel,
    crit: &Criterion,
    tol_mult: f64,
) -> Result<GradientField> {
    crit.check_dim(model.m())?;
    if crit.needs_inverse() && info.is_singular() {
        return Err(DesignError::Singular {
            lambda_min: info.lambda_min(),
            threshold: info.singular_threshold(),
        });
    }
    let m = model.m();
    match crit {
        Criterion::E => grad_e_simple_with(info, measure, model, tol_mult),
        Criterion::D => grad_d_with(info, measure, model),
        Criterion::A => {
            grad_l_with(info, measure, model, &DMatrix::identity(m, m), CriterionKind::A)
                .map(GradientField::negated)
        }
        Criterion::L(l) => {
            grad_l_with(info, measure, model, l, CriterionKind::L).map(GradientField::negated)
        }
        Criterion::C(c) => grad_l_with(info, measure, model, &(c * c.transpose()), CriterionKind::C)
            .map(GradientField::negated),
    }
}
