//! Empirical design measures, information matrices and design criteria.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{DesignError, Result};
use crate::models::RegressionModel;

/// Uniformly weighted empirical measure `(1/N) Σ δ_{x_i}`.
///
/// Points are stored row-major in one flat buffer of length `N·d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMeasure {
    d: usize,
    coords: Vec<f64>,
}

impl DesignMeasure {
    pub fn new(d: usize, coords: Vec<f64>) -> Result<Self> {
        if d == 0 || coords.is_empty() || !coords.len().is_multiple_of(d) {
            return Err(DesignError::InvalidArgument(format!(
                "cannot split {} coordinates into points of dimension {d}",
                coords.len()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(DesignError::NonFinite("design point coordinates".into()));
        }
        Ok(Self { d, coords })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let d = points.first().map(|p| p.len()).unwrap_or(0);
        if let Some(bad) = points.iter().find(|p| p.len() != d) {
            return Err(DesignError::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Self::new(d, points.concat())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of particles.
    pub fn n(&self) -> usize {
        self.coords.len() / self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.d)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub(crate) fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }
}

/// Symmetric information matrix with its eigen-decomposition.
///
/// Eigenvalues are sorted ascending; eigenvector columns follow the same
/// order and are sign-canonicalised (first non-negligible entry positive).
#[derive(Debug, Clone)]
pub struct InfoMatrix {
    matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl InfoMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(DesignError::InvalidArgument(
                "information matrix must be square and non-empty".into(),
            ));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(DesignError::NonFinite("information matrix".into()));
        }
        let matrix = (&m + m.transpose()) * 0.5;
        let (eigenvalues, eigenvectors) = sorted_symmetric_eigen(&matrix);
        Ok(Self {
            matrix,
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// Eigenvalues at or below this are treated as zero by inverse-based criteria.
    pub fn singular_threshold(&self) -> f64 {
        1e-10 * self.lambda_max().max(1.0)
    }

    pub fn is_singular(&self) -> bool {
        self.lambda_min() <= self.singular_threshold()
    }

    fn check_nonsingular(&self) -> Result<()> {
        if self.is_singular() {
            Err(DesignError::Singular {
                lambda_min: self.lambda_min(),
                threshold: self.singular_threshold(),
            })
        } else {
            Ok(())
        }
    }

    /// `M⁻¹ b` through the eigenbasis.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_nonsingular()?;
        let mut coeffs = self.eigenvectors.tr_mul(b);
        coeffs.component_div_assign(&self.eigenvalues);
        Ok(&self.eigenvectors * coeffs)
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        self.check_nonsingular()?;
        let inv_vals = self.eigenvalues.map(|l| 1.0 / l);
        let scaled = &self.eigenvectors * DMatrix::from_diagonal(&inv_vals);
        Ok(scaled * self.eigenvectors.transpose())
    }

    pub fn log_det(&self) -> Result<f64> {
        self.check_nonsingular()?;
        Ok(self.eigenvalues.iter().map(|l| l.ln()).sum())
    }
}

/// Eigen-decomposition of a symmetric matrix, ascending, sign-canonicalised.
pub(crate) fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        canonicalize_sign(&mut v);
        vectors.set_column(col, &v);
    }
    (values, vectors)
}

/// Flips `v` so that its first entry of non-negligible magnitude is positive.
pub(crate) fn canonicalize_sign(v: &mut DVector<f64>) {
    let scale = v.amax();
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * scale) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

/// `(1/N) Σ f(x_i) f(x_i)ᵀ` for a flat buffer of points.
pub(crate) fn moment_matrix(model: &RegressionModel, coords: &[f64]) -> DMatrix<f64> {
    let d = model.d();
    let m = model.m();
    let n = coords.len() / d;
    let mut acc = vec![0.0; m * m];
    let mut f = vec![0.0; m];
    for x in coords.chunks_exact(d) {
        model.features_into(x, &mut f);
        for j in 0..m {
            let fj = f[j];
            let col = &mut acc[j * m..(j + 1) * m];
            for i in j..m {
                col[i] += f[i] * fj;
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    let mut out = DMatrix::zeros(m, m);
    for j in 0..m {
        for i in j..m {
            let v = acc[j * m + i] * inv_n;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn info_matrix(measure: &DesignMeasure, model: &RegressionModel) -> Result<InfoMatrix> {
    if measure.d() != model.d() {
        return Err(DesignError::DimensionMismatch {
            expected: model.d(),
            got: measure.d(),
        });
    }
    let m = moment_matrix(model, measure.coords());
    if m.iter().any(|v| !v.is_finite()) {
        return Err(DesignError::NonFinite("feature values".into()));
    }
    InfoMatrix::from_matrix(m)
}

/// Design criterion. Every variant is maximised internally.
#[derive(Debug, Clone, PartialEq)]
pub enum Criterion {
    /// `λ_min(M)`.
    E,
    /// `log det M`.
    D,
    /// `-tr(L M⁻¹)` for a symmetric PSD weight matrix `L`.
    L(DMatrix<f64>),
    /// `-tr(M⁻¹)`.
    A,
    /// `-cᵀ M⁻¹ c`.
    C(DVector<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CriterionKind {
    E,
    D,
    L,
    A,
    C,
}

impl CriterionKind {
    pub fn name(self) -> &'static str {
        match self {
            CriterionKind::E => "E",
            CriterionKind::D => "D",
            CriterionKind::L => "L",
            CriterionKind::A => "A",
            CriterionKind::C => "c",
        }
    }
}

impl Criterion {
    pub fn l_weighted(l: DMatrix<f64>) -> Result<Self> {
        if !l.is_square() {
            return Err(DesignError::InvalidArgument("L must be square".into()));
        }
        let asym = (&l - l.transpose()).amax();
        if asym > 1e-12 * l.amax().max(1.0) {
            return Err(DesignError::InvalidArgument("L must be symmetric".into()));
        }
        let (vals, _) = sorted_symmetric_eigen(&l);
        if vals[0] < -1e-10 * vals[vals.len() - 1].abs().max(1.0) {
            return Err(DesignError::InvalidArgument(
                "L must be positive semidefinite".into(),
            ));
        }
        Ok(Criterion::L(l))
    }

    pub fn c_vector(c: DVector<f64>) -> Result<Self> {
        if c.iter().all(|v| *v == 0.0) || c.iter().any(|v| !v.is_finite()) {
            return Err(DesignError::InvalidArgument(
                "c must be finite and nonzero".into(),
            ));
        }
        Ok(Criterion::C(c))
    }

    pub fn kind(&self) -> CriterionKind {
        match self {
            Criterion::E => CriterionKind::E,
            Criterion::D => CriterionKind::D,
            Criterion::L(_) => CriterionKind::L,
            Criterion::A => CriterionKind::A,
            Criterion::C(_) => CriterionKind::C,
        }
    }

    /// Whether the criterion needs a nonsingular information matrix.
    pub fn needs_inverse(&self) -> bool {
        !matches!(self, Criterion::E)
    }

    pub(crate) fn check_dim(&self, m: usize) -> Result<()> {
        let got = match self {
            Criterion::L(l) => l.nrows(),
            Criterion::C(c) => c.len(),
            _ => return Ok(()),
        };
        if got != m {
            return Err(DesignError::DimensionMismatch { expected: m, got });
        }
        Ok(())
    }

    /// Value under the maximise convention; `-∞` for a singular matrix when
    /// the criterion needs an inverse.
    pub fn value(&self, info: &InfoMatrix) -> Result<f64> {
        self.check_dim(info.dim())?;
        if self.needs_inverse() && info.is_singular() {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(match self {
            Criterion::E => info.lambda_min(),
            Criterion::D => info.log_det()?,
            Criterion::A => -info.eigenvalues().iter().map(|l| 1.0 / l).sum::<f64>(),
            Criterion::L(l) => -(l * info.inverse()?).trace(),
            Criterion::C(c) => -c.dot(&info.solve(c)?),
        })
    }

    /// Converts a maximise-convention value to the usual reporting orientation:
    /// `tr(L M⁻¹)`, `tr(M⁻¹)` and `cᵀM⁻¹c` are reported as positive quantities
    /// to be minimised; `λ_min` and `log det` are unchanged.
    pub fn reported(&self, value: f64) -> f64 {
        match self {
            Criterion::E | Criterion::D => value,
            _ => -value,
        }
    }
}

pub fn criterion_value(
    measure: &DesignMeasure,
    model: &RegressionModel,
    crit: &Criterion,
) -> Result<f64> {
    let info = info_matrix(measure, model)?;
    crit.value(&info)
}
