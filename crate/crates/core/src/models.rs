//! Regression model families and compact design spaces.
//!
//! A [`RegressionModel`] maps a design point `x ∈ R^d` to its regression
//! vector `f(x) ∈ R^m` and the Jacobian `∇f(x) ∈ R^{m×d}`. A [`DesignSpace`]
//! is the compact region particles live in, with a Euclidean projection.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DesignError, Result};

/// Weighting of the logistic regression vector.
///
/// `Paper` uses `f = ∂μ/∂θ = μ(1-μ) v(x)`, so the information matrix carries
/// the weight `μ²(1-μ)²`. `Fisher` uses `f = sqrt(μ(1-μ)) v(x)`, which gives
/// the classical GLM Fisher information with weight `μ(1-μ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GlmWeight {
    Paper,
    Fisher,
}

impl GlmWeight {
    pub fn name(self) -> &'static str {
        match self {
            GlmWeight::Paper => "paper",
            GlmWeight::Fisher => "fisher",
        }
    }
}

impl std::str::FromStr for GlmWeight {
    type Err = DesignError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(GlmWeight::Paper),
            "fisher" => Ok(GlmWeight::Fisher),
            other => Err(DesignError::InvalidArgument(format!(
                "unknown glm weight '{other}' (expected paper|fisher)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelFamily {
    /// Full quadratic response surface in `k` variables.
    SecondOrderSurface { k: usize },
    /// Logistic regression linearised at a nominal parameter `theta_star`
    /// (intercept first, length `d + 1`).
    Logistic {
        theta_star: Vec<f64>,
        weight: GlmWeight,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    family: ModelFamily,
    d: usize,
    m: usize,
}

/// Number of regression functions of the full quadratic model in `k` variables.
pub fn second_order_feature_count(k: usize) -> usize {
    1 + 2 * k + k * k.saturating_sub(1) / 2
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl RegressionModel {
    pub fn second_order(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(DesignError::InvalidArgument(
                "second-order model needs k >= 1".into(),
            ));
        }
        Ok(Self {
            family: ModelFamily::SecondOrderSurface { k },
            d: k,
            m: second_order_feature_count(k),
        })
    }

    pub fn logistic(theta_star: Vec<f64>, weight: GlmWeight) -> Result<Self> {
        if theta_star.len() < 2 {
            return Err(DesignError::InvalidArgument(
                "logistic model needs an intercept and at least one slope".into(),
            ));
        }
        if theta_star.iter().any(|t| !t.is_finite()) {
            return Err(DesignError::NonFinite("theta_star".into()));
        }
        let d = theta_star.len() - 1;
        Ok(Self {
            family: ModelFamily::Logistic { theta_star, weight },
            d,
            m: d + 1,
        })
    }

    pub fn family(&self) -> &ModelFamily {
        &self.family
    }

    /// Input dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Feature dimension.
    pub fn m(&self) -> usize {
        self.m
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(DesignError::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DesignError::InvalidArgument(
                "design point has non-finite coordinates".into(),
            ));
        }
        Ok(())
    }

    pub fn eval_features(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let mut out = DVector::zeros(self.m);
        self.features_into(x, out.as_mut_slice());
        Ok(out)
    }

    pub fn eval_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let mut out = DMatrix::zeros(self.m, self.d);
        self.jacobian_into(x, &mut out);
        Ok(out)
    }

    /// Writes `f(x)` into `out` (length `m`). No dimension checks.
    pub(crate) fn features_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.family {
            ModelFamily::SecondOrderSurface { k } => {
                let k = *k;
                out[0] = 1.0;
                for i in 0..k {
                    out[1 + i] = x[i];
                    out[1 + k + i] = x[i] * x[i];
                }
                let mut idx = 1 + 2 * k;
                for i in 0..k {
                    for j in (i + 1)..k {
                        out[idx] = x[i] * x[j];
                        idx += 1;
                    }
                }
            }
            ModelFamily::Logistic { theta_star, weight } => {
                let (a, _) = logistic_weight(theta_star, *weight, x);
                out[0] = a;
                for i in 0..self.d {
                    out[1 + i] = a * x[i];
                }
            }
        }
    }

    /// Writes `∇f(x)` into the `m × d` matrix `out`. No dimension checks.
    pub(crate) fn jacobian_into(&self, x: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        match &self.family {
            ModelFamily::SecondOrderSurface { k } => {
                let k = *k;
                for i in 0..k {
                    out[(1 + i, i)] = 1.0;
                    out[(1 + k + i, i)] = 2.0 * x[i];
                }
                let mut idx = 1 + 2 * k;
                for i in 0..k {
                    for j in (i + 1)..k {
                        out[(idx, i)] = x[j];
                        out[(idx, j)] = x[i];
                        idx += 1;
                    }
                }
            }
            ModelFamily::Logistic { theta_star, weight } => {
                // f = a(x) v(x), ∇f = v (∇a)ᵀ + a ∇v, ∇a = a·c·θ̃
                let (a, c) = logistic_weight(theta_star, *weight, x);
                let slope = &theta_star[1..];
                for col in 0..self.d {
                    let da = a * c * slope[col];
                    out[(0, col)] = da;
                    for row in 0..self.d {
                        out[(1 + row, col)] = x[row] * da;
                    }
                    out[(1 + col, col)] += a;
                }
            }
        }
    }
}

/// Returns the scalar weight `a(x)` multiplying `v(x)` and the factor `c`
/// with `∇a = a·c·θ̃`.
fn logistic_weight(theta: &[f64], weight: GlmWeight, x: &[f64]) -> (f64, f64) {
    let eta = theta[0] + theta[1..].iter().zip(x).map(|(t, xi)| t * xi).sum::<f64>();
    let mu = sigmoid(eta);
    let var = mu * (1.0 - mu);
    match weight {
        GlmWeight::Paper => (var, 1.0 - 2.0 * mu),
        GlmWeight::Fisher => (var.sqrt(), 0.5 * (1.0 - 2.0 * mu)),
    }
}

/// Compact design region.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignSpace {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { radius: f64, dim: usize },
}

impl DesignSpace {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(DesignError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(DesignError::InvalidArgument("empty box".into()));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
        {
            return Err(DesignError::InvalidArgument(
                "box bounds must be finite with lower < upper".into(),
            ));
        }
        Ok(DesignSpace::Box { lower, upper })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new_box(vec![lo; dim], vec![hi; dim])
    }

    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        if dim == 0 {
            return Err(DesignError::InvalidArgument("empty ball".into()));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(DesignError::InvalidArgument(
                "ball radius must be positive".into(),
            ));
        }
        Ok(DesignSpace::Ball { radius, dim })
    }

    pub fn dim(&self) -> usize {
        match self {
            DesignSpace::Box { lower, .. } => lower.len(),
            DesignSpace::Ball { dim, .. } => *dim,
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            DesignSpace::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
            DesignSpace::Ball { radius, .. } => norm(x) <= radius + tol,
        }
    }

    /// Euclidean projection onto the space.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.project_in_place(&mut y);
        y
    }

    pub fn project_in_place(&self, x: &mut [f64]) {
        match self {
            DesignSpace::Box { lower, upper } => {
                for (v, (l, u)) in x.iter_mut().zip(lower.iter().zip(upper)) {
                    *v = v.clamp(*l, *u);
                }
            }
            DesignSpace::Ball { radius, .. } => {
                let n = norm(x);
                if n > *radius {
                    let s = radius / n;
                    x.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
    }

    /// Outward unit normals of the constraints that are active at `x` and
    /// that the velocity `v` pushes against. The normals are orthonormal.
    pub fn binding_normals(&self, x: &[f64], v: &[f64], tol: f64) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        match self {
            DesignSpace::Box { lower, upper } => {
                for c in 0..x.len() {
                    let sign = if x[c] >= upper[c] - tol && v[c] > 0.0 {
                        1.0
                    } else if x[c] <= lower[c] + tol && v[c] < 0.0 {
                        -1.0
                    } else {
                        continue;
                    };
                    let mut e = vec![0.0; x.len()];
                    e[c] = sign;
                    out.push(e);
                }
            }
            DesignSpace::Ball { radius, .. } => {
                let n = norm(x);
                let outward: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
                if n > 0.0 && n >= radius - tol && outward > 0.0 {
                    out.push(x.iter().map(|a| a / n).collect());
                }
            }
        }
        out
    }

    /// Width of the space along coordinate `j`.
    pub fn coordinate_span(&self, j: usize) -> f64 {
        match self {
            DesignSpace::Box { lower, upper } => upper[j] - lower[j],
            DesignSpace::Ball { radius, .. } => 2.0 * radius,
        }
    }

    /// Draws one point uniformly from the space into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            DesignSpace::Box { lower, upper } => {
                for (v, (l, u)) in out.iter_mut().zip(lower.iter().zip(upper)) {
                    *v = rng.random_range(*l..*u);
                }
            }
            DesignSpace::Ball { radius, dim } => loop {
                for v in out.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
                let n = norm(out);
                if n == 0.0 {
                    continue;
                }
                let u: f64 = rng.random();
                let r = radius * u.powf(1.0 / *dim as f64);
                out.iter_mut().for_each(|v| *v *= r / n);
                break;
            },
        }
    }
}

/// Per-particle constraint normals held fixed while computing a direction.
/// Velocity fields restricted to the active set have no component along
/// any of these normals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActiveSet {
    /// `(particle, orthonormal normals)`, particles in increasing order.
    pub normals: Vec<(usize, Vec<Vec<f64>>)>,
}

impl ActiveSet {
    /// Constraints binding against `velocity` (row-major, `N × d`).
    pub fn binding(space: &DesignSpace, coords: &[f64], velocity: &[f64]) -> Self {
        let d = space.dim();
        let tol = 1e-10 * (0..d).map(|j| space.coordinate_span(j)).fold(1.0, f64::max);
        let normals = coords
            .chunks_exact(d)
            .zip(velocity.chunks_exact(d))
            .enumerate()
            .filter_map(|(p, (x, v))| {
                let ns = space.binding_normals(x, v, tol);
                (!ns.is_empty()).then_some((p, ns))
            })
            .collect();
        Self { normals }
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    /// Adds the normals of `other` not already present.
    pub fn merge(&mut self, other: &ActiveSet) {
        for (p, ns) in &other.normals {
            match self.normals.iter_mut().find(|(q, _)| q == p) {
                Some((_, mine)) => {
                    for n in ns {
                        // box normals are axes and the ball has one normal, so
                        // a new normal is either a duplicate or orthogonal
                        let dup = mine
                            .iter()
                            .any(|m| m.iter().zip(n).map(|(a, b)| a * b).sum::<f64>().abs() > 0.5);
                        if !dup {
                            mine.push(n.clone());
                        }
                    }
                }
                None => self.normals.push((*p, ns.clone())),
            }
        }
        self.normals.sort_by_key(|(p, _)| *p);
    }

    /// Removes the normal components from a row-major field.
    pub fn restrict(&self, field: &mut [f64], d: usize) {
        for (p, ns) in &self.normals {
            let v = &mut field[p * d..(p + 1) * d];
            for n in ns {
                let c: f64 = v.iter().zip(n).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(n).for_each(|(a, b)| *a -= c * b);
            }
        }
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn quadratic_k2_at_origin() {
        let m = RegressionModel::second_order(2).unwrap();
        assert_eq!(m.m(), 6);
        let f = m.eval_features(&[0.0, 0.0]).unwrap();
        assert_eq!(f.as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let j = m.eval_jacobian(&[0.0, 0.0]).unwrap();
        for row in 3..6 {
            assert_eq!(j[(row, 0)], 0.0);
            assert_eq!(j[(row, 1)], 0.0);
        }
    }

    #[test]
    fn quadratic_feature_ordering() {
        let m = RegressionModel::second_order(3).unwrap();
        let f = m.eval_features(&[2.0, 3.0, 5.0]).unwrap();
        assert_eq!(
            f.as_slice(),
            &[1.0, 2.0, 3.0, 5.0, 4.0, 9.0, 25.0, 6.0, 10.0, 15.0]
        );
    }

    #[test]
    fn quadratic_feature_count() {
        assert_eq!(RegressionModel::second_order(5).unwrap().m(), 21);
        for k in 1..=8 {
            let m = RegressionModel::second_order(k).unwrap();
            let f = m.eval_features(&vec![0.5; k]).unwrap();
            assert_eq!(f.len(), 1 + 2 * k + k * (k - 1) / 2);
            assert_eq!(m.m(), f.len());
        }
    }

    #[test]
    fn quadratic_jacobian_rows_at_ones() {
        let m = RegressionModel::second_order(2).unwrap();
        let j = m.eval_jacobian(&[1.0, 1.0]).unwrap();
        // x1² row
        assert_eq!((j[(3, 0)], j[(3, 1)]), (2.0, 0.0));
        // x1x2 row
        assert_eq!((j[(5, 0)], j[(5, 1)]), (1.0, 1.0));
    }

    #[test]
    fn logistic_at_origin() {
        let theta = vec![
            -0.4926, -0.6280, -0.3283, 0.4378, 0.5283, -0.6120, -0.6837, -0.2061,
        ];
        let m = RegressionModel::logistic(theta, GlmWeight::Paper).unwrap();
        assert_eq!((m.d(), m.m()), (7, 8));
        let mu = 1.0 / (1.0 + 0.4926f64.exp());
        let w = mu * (1.0 - mu);
        // μ = 0.3792813, μ(1-μ) = 0.2354270
        assert!(close(mu, 0.379_281_3, 1e-6));
        assert!(close(w, 0.235_427_0, 1e-6));
        let f = m.eval_features(&[0.0; 7]).unwrap();
        assert!(close(f[0], w, 1e-15));
        assert!(f.iter().skip(1).all(|v| *v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = RegressionModel::second_order(2).unwrap();
        assert!(matches!(
            m.eval_features(&[1.0]),
            Err(DesignError::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(m.eval_jacobian(&[1.0, 2.0, 3.0]).is_err());
        assert!(m.eval_features(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn projection_examples() {
        let cube = DesignSpace::cube(2, -1.0, 1.0).unwrap();
        assert_eq!(cube.project(&[2.0, -3.0]), vec![1.0, -1.0]);
        let ball = DesignSpace::ball(2, 1.0).unwrap();
        let p = ball.project(&[3.0, 4.0]);
        assert!(close(p[0], 0.6, 1e-15) && close(p[1], 0.8, 1e-15));
        assert_eq!(ball.project(&[0.3, 0.1]), vec![0.3, 0.1]);
    }

    #[test]
    fn invalid_spaces() {
        assert!(DesignSpace::new_box(vec![1.0], vec![1.0]).is_err());
        assert!(DesignSpace::new_box(vec![0.0], vec![1.0, 2.0]).is_err());
        assert!(DesignSpace::ball(2, 0.0).is_err());
    }

    /// Central differences of `eval_features`, independent of the analytic Jacobian.
    fn fd_jacobian(model: &RegressionModel, x: &[f64], h: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(model.m(), model.d());
        for j in 0..model.d() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let fp = model.eval_features(&xp).unwrap();
            let fm = model.eval_features(&xm).unwrap();
            out.set_column(j, &((fp - fm) / (2.0 * h)));
        }
        out
    }

    fn check_jacobian(model: &RegressionModel, scale: f64, seed: u64) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let x: Vec<f64> = (0..model.d())
                .map(|_| rng.random_range(-scale..scale))
                .collect();
            let analytic = model.eval_jacobian(&x).unwrap();
            let fd = fd_jacobian(model, &x, 1e-5);
            let err = (&analytic - &fd).amax();
            let rel = err / analytic.amax().max(1e-12);
            assert!(rel <= 1e-6, "relative error {rel:e} at {x:?}");
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        for k in 1..=5 {
            check_jacobian(&RegressionModel::second_order(k).unwrap(), 1.0, k as u64);
        }
        let theta = vec![
            -0.4926, -0.6280, -0.3283, 0.4378, 0.5283, -0.6120, -0.6837, -0.2061,
        ];
        for w in [GlmWeight::Paper, GlmWeight::Fisher] {
            check_jacobian(&RegressionModel::logistic(theta.clone(), w).unwrap(), 3.0, 7);
        }
    }

    proptest! {
        #[test]
        fn projection_idempotent_and_nonexpansive(
            x in prop::collection::vec(-5.0f64..5.0, 3),
            y in prop::collection::vec(-5.0f64..5.0, 3),
            use_ball in any::<bool>(),
        ) {
            let space = if use_ball {
                DesignSpace::ball(3, 1.0).unwrap()
            } else {
                DesignSpace::new_box(vec![-1.0, 0.0, -2.0], vec![1.0, 0.5, 3.0]).unwrap()
            };
            let px = space.project(&x);
            let py = space.project(&y);
            prop_assert!(space.contains(&px, 1e-12));
            let ppx = space.project(&px);
            for (a, b) in px.iter().zip(&ppx) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
            let dxy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let dp: Vec<f64> = px.iter().zip(&py).map(|(a, b)| a - b).collect();
            prop_assert!(norm(&dp) <= norm(&dxy) + 1e-12);
        }
    }

    #[test]
    fn binding_normals_and_restriction() {
        let cube = DesignSpace::cube(3, -1.0, 1.0).unwrap();
        let x = [1.0, 0.2, -1.0];
        assert_eq!(
            cube.binding_normals(&x, &[0.5, 0.5, -0.5], 1e-12),
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, -1.0]]
        );
        // moving inward is not blocked
        assert!(cube.binding_normals(&x, &[-0.5, 0.5, 0.5], 1e-12).is_empty());

        let ball = DesignSpace::ball(2, 2.0).unwrap();
        let y = [0.0, 2.0];
        assert_eq!(ball.binding_normals(&y, &[1.0, 1.0], 1e-12), vec![vec![0.0, 1.0]]);
        assert!(ball.binding_normals(&y, &[1.0, -1.0], 1e-12).is_empty());
        assert!(ball.binding_normals(&[0.0, 1.0], &[0.0, 1.0], 1e-12).is_empty());

        let coords = [1.0, 0.2, -1.0, 0.0, 0.0, 0.0];
        let mut field = vec![0.5, 0.5, -0.5, 0.3, 0.3, 0.3];
        let active = ActiveSet::binding(&cube, &coords, &field);
        assert_eq!(active.normals.len(), 1);
        active.restrict(&mut field, 3);
        assert_eq!(field, vec![0.0, 0.5, 0.0, 0.3, 0.3, 0.3]);

        let mut merged = active.clone();
        merged.merge(&active);
        assert_eq!(merged, active);
        let other = ActiveSet { normals: vec![(0, vec![vec![0.0, 1.0, 0.0]]), (1, vec![vec![1.0, 0.0, 0.0]])] };
        merged.merge(&other);
        assert_eq!(merged.normals[0].1.len(), 3);
        assert_eq!(merged.normals[1].0, 1);
    }
}
