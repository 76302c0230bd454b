//! Numerical cross-checks of the solver stack against independent oracles:
//! finite differences for the gradients, brute-force search for the
//! subproblem, and difference quotients for the steepest-ascent gain.

use nalgebra::{DMatrix, DVector};
use oedflow::esteep::{multiplicity, DEFAULT_TOL_MULT};
use oedflow::subsolver::objective;
use oedflow::wgrad::{grad_c, grad_d, grad_e_simple, grad_l, GradientField};
use oedflow::{
    brute_oracle, info_matrix, solve, steepest_direction, DesignMeasure, EsteepConfig, GlmWeight, RegressionModel,
    SubsolverConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

/// Outcome of one oracle suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub cases: usize,
    /// Largest observed error in the suite's own metric.
    pub worst: f64,
    pub tolerance: f64,
    pub failures: Vec<String>,
}

impl CheckReport {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            cases: 0,
            worst: 0.0,
            tolerance,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, err: f64, what: impl FnOnce() -> String) {
        self.cases += 1;
        self.worst = self.worst.max(err);
        if !(err <= self.tolerance) {
            self.failures.push(what());
        }
    }

    pub fn passed(&self) -> bool {
        self.cases > 0 && self.failures.is_empty()
    }
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&g + g.transpose()) * 0.5
}

/// Commuting family: the maximiser ties several eigenvalues.
fn degenerate_family(rng: &mut ChaCha8Rng, s: usize, s1: usize) -> Vec<DMatrix<f64>> {
    let g = DMatrix::from_fn(s1, s1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    (0..s)
        .map(|_| {
            let d = DVector::from_fn(s1, |_, _| rng.random_range(-1.0..1.0));
            &q * DMatrix::from_diagonal(&d) * q.transpose()
        })
        .collect()
}

/// Random subproblem families with `s, s1 ≤ 3`, a quarter of them built so
/// that the optimum has a repeated smallest eigenvalue and another quarter
/// with the identity in the span (every eigenvalue ties).
pub fn subproblem_instances(count: usize, seed: u64) -> Vec<Vec<DMatrix<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let s = rng.random_range(1..=3);
            let s1 = rng.random_range(1..=3);
            match i % 4 {
                0 => (0..s).map(|_| random_symmetric(&mut rng, s1)).collect(),
                1 => degenerate_family(&mut rng, s, s1),
                2 => {
                    let mut a: Vec<_> = (0..s).map(|_| random_symmetric(&mut rng, s1)).collect();
                    let shift = a[0].symmetric_eigenvalues().min().abs() + rng.random_range(0.1..1.0);
                    a[0] += DMatrix::identity(s1, s1) * shift;
                    a
                }
                _ => {
                    let mut a = degenerate_family(&mut rng, s, s1);
                    a[0] = DMatrix::identity(s1, s1);
                    a
                }
            }
        })
        .collect()
}

/// `solve` against the brute-force oracle. The relaxation over the unit
/// ball attains `max(0, sphere optimum)`.
pub fn subsolver_check(instances: usize, seed: u64, resolution: usize) -> Result<CheckReport> {
    let cfg = SubsolverConfig::default();
    let mut report = CheckReport::new("subsolver vs brute oracle, |Δu*|", 1e-3);
    for (i, a) in subproblem_instances(instances, seed).iter().enumerate() {
        let sol = solve(a, &cfg)?;
        let oracle = brute_oracle(a, resolution)?;
        let expected = oracle.u_star.max(0.0);
        let mut err = (sol.u_star - expected).abs();
        if sol.u_star > 1e-6 {
            err = err.max((objective(a, &sol.w_star) - oracle.u_star).abs());
        }
        report.record(err, || format!("instance {i}: solve {} oracle {}", sol.u_star, oracle.u_star));
    }
    Ok(report)
}

const FD_STEP: f64 = 1e-5;

fn moment(model: &RegressionModel, coords: &[f64]) -> Result<DMatrix<f64>> {
    let d = model.d();
    let mut m = DMatrix::zeros(model.m(), model.m());
    for x in coords.chunks_exact(d) {
        let f = model.eval_features(x)?;
        m += &f * f.transpose();
    }
    Ok(m / (coords.len() / d) as f64)
}

/// `N ·` central difference of `F_N` in every particle coordinate.
fn fd_field(model: &RegressionModel, coords: &[f64], f: &dyn Fn(DMatrix<f64>) -> f64) -> Result<Vec<f64>> {
    let n = (coords.len() / model.d()) as f64;
    let mut x = coords.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let orig = x[j];
        x[j] = orig + FD_STEP;
        let up = f(moment(model, &x)?);
        x[j] = orig - FD_STEP;
        let down = f(moment(model, &x)?);
        x[j] = orig;
        out.push(n * (up - down) / (2.0 * FD_STEP));
    }
    Ok(out)
}

fn rel_err(g: &GradientField, fd: &[f64]) -> f64 {
    let num: f64 = g.vectors.iter().zip(fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn log_det(m: DMatrix<f64>) -> f64 {
    match m.cholesky() {
        Some(ch) => 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
        None => f64::NAN,
    }
}

fn trace_weighted_inverse(m: DMatrix<f64>, l: &DMatrix<f64>) -> f64 {
    m.try_inverse().map(|inv| (l * inv).trace()).unwrap_or(f64::NAN)
}

fn oracle_models() -> Result<Vec<RegressionModel>> {
    let theta = vec![0.3, -0.8, 0.5];
    Ok(vec![
        RegressionModel::second_order(1)?,
        RegressionModel::second_order(2)?,
        RegressionModel::second_order(3)?,
        RegressionModel::logistic(theta.clone(), GlmWeight::Paper)?,
        RegressionModel::logistic(theta, GlmWeight::Fisher)?,
    ])
}

fn uniform_measure(rng: &mut ChaCha8Rng, d: usize, n: usize, half_width: f64) -> Result<DesignMeasure> {
    let coords = (0..n * d).map(|_| rng.random_range(-half_width..half_width)).collect();
    Ok(DesignMeasure::new(d, coords)?)
}

/// Gradient suites for D, L = I, random c and simple-eigenvalue E, each on
/// `per_criterion` random measures cycling through several models.
pub fn gradient_checks(per_criterion: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let models = oracle_models()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = CheckReport::new("grad D vs finite differences", 1e-5);
    let mut l = CheckReport::new("grad L(=I) vs finite differences", 1e-5);
    let mut c = CheckReport::new("grad c vs finite differences", 1e-5);
    let mut e = CheckReport::new("grad E (simple) vs finite differences", 1e-4);

    for i in 0..per_criterion {
        let model = &models[i % models.len()];
        let n = rng.random_range(2 * model.m()..4 * model.m());
        let mu = uniform_measure(&mut rng, model.d(), n, 1.0)?;
        let err = rel_err(&grad_d(&mu, model)?, &fd_field(model, mu.coords(), &log_det)?);
        d.record(err, || format!("D case {i}: rel err {err:e}"));

        let mu = uniform_measure(&mut rng, model.d(), n, 1.0)?;
        let id = DMatrix::identity(model.m(), model.m());
        let fd = fd_field(model, mu.coords(), &|m| trace_weighted_inverse(m, &id))?;
        let err = rel_err(&grad_l(&mu, model, &id)?, &fd);
        l.record(err, || format!("L case {i}: rel err {err:e}"));

        let mu = uniform_measure(&mut rng, model.d(), n, 1.0)?;
        let cv = DVector::from_fn(model.m(), |_, _| rng.random_range(-1.0..1.0));
        let cc = &cv * cv.transpose();
        let fd = fd_field(model, mu.coords(), &|m| trace_weighted_inverse(m, &cc))?;
        let err = rel_err(&grad_c(&mu, model, &cv)?, &fd);
        c.record(err, || format!("c case {i}: rel err {err:e}"));

        // simple E needs a spectral gap above 1e-4
        let mu = loop {
            let cand = uniform_measure(&mut rng, model.d(), n, 1.0)?;
            let mut vals: Vec<f64> = moment(model, cand.coords())?.symmetric_eigenvalues().iter().copied().collect();
            vals.sort_by(f64::total_cmp);
            if vals[1] - vals[0] > 1e-4 {
                break cand;
            }
        };
        let fd = fd_field(model, mu.coords(), &|m| m.symmetric_eigenvalues().min())?;
        let err = rel_err(&grad_e_simple(&mu, model)?, &fd);
        e.record(err, || format!("E case {i}: rel err {err:e}"));
    }
    Ok(vec![d, l, c, e])
}

/// On measures with a simple `λ_min` the steepest-ascent velocity is a
/// positive multiple of the simple gradient. Reports the spread of the
/// per-particle ratios.
pub fn simple_case_check(measures: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("esteep ∥ grad E (simple), ratio spread", 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = [(1, 12), (2, 30), (3, 50), (5, 100)];
    let mut attempt = 0;
    while report.cases < measures {
        let (k, n) = shapes[attempt % shapes.len()];
        attempt += 1;
        let model = RegressionModel::second_order(k)?;
        let mu = uniform_measure(&mut rng, k, n, 1.0)?;
        if multiplicity(&info_matrix(&mu, &model)?, DEFAULT_TOL_MULT).s1 != 1 {
            continue;
        }
        let dir = steepest_direction(&mu, &model, &EsteepConfig::default())?;
        let g = grad_e_simple(&mu, &model)?;
        let scale = g.vectors.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let ratios: Vec<f64> = dir
            .velocity
            .iter()
            .zip(&g.vectors)
            .filter(|(_, gv)| gv.abs() > 1e-6 * scale)
            .map(|(v, gv)| v / gv)
            .collect();
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let err = if lo > 0.0 { hi - lo } else { f64::INFINITY };
        report.record(err, || format!("k = {k}: ratios in [{lo}, {hi}]"));
    }
    Ok(report)
}

/// Orbit of random base points under the symmetries of the square, which
/// makes the eigenvalue of the linear features double.
fn symmetric_measure(rng: &mut ChaCha8Rng, n_base: usize) -> Result<DesignMeasure> {
    let mut coords = Vec::new();
    for _ in 0..n_base {
        let a: f64 = rng.random_range(1.5..3.0);
        let b: f64 = rng.random_range(1.5..3.0);
        for (x, y) in [(a, b), (b, a)] {
            for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                coords.push(sx * x);
                coords.push(sy * y);
            }
        }
    }
    Ok(DesignMeasure::new(2, coords)?)
}

/// Stepping `ε` along the unit steepest-ascent direction raises `λ_min`
/// by `ε u*` to first order. Half the measures have a doubled `λ_min`.
/// The error metric is the Richardson-extrapolated slope minus `u*`,
/// relative to `1 + u*`; a residual that fails to shrink quadratically
/// counts as a failure.
pub fn first_order_gain_check(measures: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("first-order gain vs u*, Richardson", 1e-5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = RegressionModel::second_order(2)?;
    let mut list = Vec::new();
    for _ in 0..measures - measures / 2 {
        list.push(uniform_measure(&mut rng, 2, 30, 1.0)?);
    }
    while list.len() < measures {
        let mu = symmetric_measure(&mut rng, 3)?;
        if multiplicity(&info_matrix(&mu, &model)?, DEFAULT_TOL_MULT).s1 == 2 {
            list.push(mu);
        }
    }
    let lambda = |mu: &DesignMeasure| info_matrix(mu, &model).map(|i| i.lambda_min());
    for mu in &list {
        let dir = steepest_direction(mu, &model, &EsteepConfig::default())?;
        let norm = dir.norm_rho();
        if !(dir.u_star > 1e-3) {
            report.record(f64::INFINITY, || "measure is stationary".into());
            continue;
        }
        let base = lambda(mu)?;
        let eps = [1e-3, 5e-4, 2.5e-4];
        let mut q = [0.0; 3];
        for (qj, e) in q.iter_mut().zip(eps) {
            let coords = mu.coords().iter().zip(&dir.velocity).map(|(x, v)| x + e * v / norm).collect();
            *qj = (lambda(&DesignMeasure::new(2, coords)?)? - base) / e;
        }
        let r1 = 2.0 * q[1] - q[0];
        let r2 = 2.0 * q[2] - q[1];
        let extrapolated = (4.0 * r2 - r1) / 3.0;
        let mut err = (extrapolated - dir.u_star).abs() / (1.0 + dir.u_star);
        let resid = [0, 2].map(|j| (eps[j] * (q[j] - dir.u_star)).abs());
        if resid[1] > resid[0] / 8.0 + 1e-13 {
            err = f64::INFINITY;
        }
        report.record(err, || format!("s1 = {}: u* = {}, quotients {q:?}", dir.s1, dir.u_star));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        assert!(subsolver_check(12, 1, 360).unwrap().passed());
        for r in gradient_checks(3, 2).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
        assert!(simple_case_check(3, 3).unwrap().passed());
        assert!(first_order_gain_check(2, 4).unwrap().passed());
    }

    #[test]
    fn instances_cover_degenerate_families() {
        let inst = subproblem_instances(8, 0);
        assert_eq!(inst.len(), 8);
        let id = &inst[3][0];
        assert_eq!(id, &DMatrix::identity(id.nrows(), id.nrows()));
        assert!(inst.iter().all(|a| a.len() <= 3 && a[0].nrows() <= 3));
    }

    #[test]
    fn report_bookkeeping() {
        let mut r = CheckReport::new("x", 1.0);
        assert!(!r.passed());
        r.record(0.5, || unreachable!());
        assert!(r.passed());
        r.record(f64::NAN, || "nan".into());
        assert!(!r.passed());
        assert_eq!(r.cases, 2);
    }
}
