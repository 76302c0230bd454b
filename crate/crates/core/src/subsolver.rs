//! Solver for the eigenvalue subproblem `max_{‖w‖=1} λ_min(Σ_k w_k A_k)`.
//!
//! The sphere constraint is relaxed to the unit ball, which turns the problem
//! into the convex minimisation of `h(w) = λ_max(-Σ_k w_k A_k)` over
//! `‖w‖ ≤ 1`. Because `h` is positively homogeneous, the relaxation is tight
//! whenever the optimum is negative (the minimiser then sits on the sphere);
//! otherwise the optimum is `h(0) = 0` and the caller should stop.
//!
//! `h` is minimised by projected subgradient descent with exact eigenvector
//! subgradients and a Polyak step towards an adaptively lowered target level.
//!
//! Before that, a short log-barrier path-following phase solves the
//! equivalent program `max t` s.t. `Σ w_k A_k ⪰ t I`, `‖w‖ ≤ 1`. Its duality
//! gap bound `ν/τ` certifies the result; the subgradient method only runs
//! when that phase breaks down numerically.

use nalgebra::{DMatrix, DVector};

use crate::design::sorted_symmetric_eigen;
use crate::error::{DesignError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsolverConfig {
    pub max_iters: usize,
    /// The solver stops once the target-level gap falls below this.
    pub tol_sub: f64,
}

impl Default for SubsolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol_sub: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub w_star: DVector<f64>,
    pub u_star: f64,
    /// True when the optimum is strictly positive and the relaxation is tight.
    pub tight: bool,
    pub iterations: usize,
    pub converged: bool,
}

/// `Σ_k w_k A_k`.
pub fn combine(a: &[DMatrix<f64>], w: &DVector<f64>) -> DMatrix<f64> {
    let n = a[0].nrows();
    let mut out = DMatrix::zeros(n, n);
    for (ak, wk) in a.iter().zip(w.iter()) {
        if *wk != 0.0 {
            out += ak * *wk;
        }
    }
    out
}

/// `u(w) = λ_min(Σ_k w_k A_k)`.
pub fn objective(a: &[DMatrix<f64>], w: &DVector<f64>) -> f64 {
    combine(a, w).symmetric_eigenvalues().min()
}

fn validate(a: &[DMatrix<f64>]) -> Result<(usize, f64)> {
    let first = a
        .first()
        .ok_or_else(|| DesignError::InvalidArgument("empty matrix family".into()))?;
    let n = first.nrows();
    if n == 0 {
        return Err(DesignError::InvalidArgument("empty matrices".into()));
    }
    let mut scale = 0.0f64;
    for ak in a {
        if ak.nrows() != n || ak.ncols() != n {
            return Err(DesignError::InvalidArgument(
                "matrices must be square and of equal size".into(),
            ));
        }
        if ak.iter().any(|v| !v.is_finite()) {
            return Err(DesignError::NonFinite("subproblem matrix".into()));
        }
        let asym = (ak - ak.transpose()).amax();
        if asym > 1e-10 * ak.amax().max(1.0) {
            return Err(DesignError::InvalidArgument(format!(
                "matrix is not symmetric (asymmetry {asym:e})"
            )));
        }
        scale = scale.max(ak.norm());
    }
    Ok((n, scale))
}

/// Value and a subgradient of `h(w) = λ_max(-Σ w_k A_k)`.
fn h_and_subgradient(a: &[DMatrix<f64>], w: &DVector<f64>) -> (f64, DVector<f64>) {
    let s = -combine(a, w);
    let (vals, vecs) = sorted_symmetric_eigen(&s);
    let top = vals.len() - 1;
    let u = vecs.column(top);
    let g = DVector::from_iterator(a.len(), a.iter().map(|ak| -(u.transpose() * ak * u)[(0, 0)]));
    (vals[top], g)
}

fn project_ball(w: &mut DVector<f64>) {
    let n = w.norm();
    if n > 1.0 {
        *w /= n;
    }
}

struct BarrierResult {
    /// Last central point, `λ_min(Σ w_k A_k) ≥ t`.
    w: DVector<f64>,
    t: f64,
    /// Upper bound on `t* - t` (zero-gap certificate when small).
    gap: f64,
    iterations: usize,
    converged: bool,
}

/// The inverse Cholesky factor `L⁻¹` of `S = Σ w_k A_k - t I` and
/// `log det S`, or `None` when `S` is not positive definite.
fn slack(a: &[DMatrix<f64>], w: &DVector<f64>, t: f64) -> Option<(DMatrix<f64>, f64)> {
    let n = a[0].nrows();
    let s = combine(a, w) - DMatrix::identity(n, n) * t;
    let l = s.cholesky()?.unpack();
    let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if !log_det.is_finite() {
        return None;
    }
    let linv = l.solve_lower_triangular(&DMatrix::identity(n, n))?;
    Some((linv, log_det))
}

/// Barrier function `-τ t - log det S - log(1 - ‖w‖²)`, `+∞` outside the domain.
fn barrier_value(a: &[DMatrix<f64>], w: &DVector<f64>, t: f64, tau: f64) -> f64 {
    let r = 1.0 - w.norm_squared();
    if r <= 0.0 {
        return f64::INFINITY;
    }
    match slack(a, w, t) {
        Some((_, log_det)) => -tau * t - log_det - r.ln(),
        None => f64::INFINITY,
    }
}

/// Rewrites the family in an orthonormal basis of its span: returns at most
/// `n(n+1)/2` matrices `Ã_j` and `V` with orthonormal columns such that
/// `Σ_j y_j Ã_j = Σ_k (V y)_k A_k`. Components of `w` outside the row space
/// of the family only waste norm, so the reduced problem is equivalent.
fn reduce_family(a: &[DMatrix<f64>]) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let n = a[0].nrows();
    let mut stacked = DMatrix::zeros(n * n, a.len());
    for (k, ak) in a.iter().enumerate() {
        stacked.column_mut(k).copy_from_slice(ak.as_slice());
    }
    let svd = stacked.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let smax = svd.singular_values.max();
    let mut reduced = Vec::new();
    let mut cols = Vec::new();
    for (j, sv) in svd.singular_values.iter().enumerate() {
        if *sv > 1e-12 * smax {
            let m = DMatrix::from_column_slice(n, n, u.column(j).as_slice()) * *sv;
            reduced.push((&m + m.transpose()) * 0.5);
            cols.push(vt.row(j).transpose());
        }
    }
    (reduced, DMatrix::from_columns(&cols))
}

/// Path-following Newton method for `max t` s.t. `Σ w_k A_k ⪰ t I`,
/// `‖w‖ ≤ 1`. The matrices are assumed scaled to unit size.
fn barrier_phase(a: &[DMatrix<f64>], max_iters: usize, tol: f64) -> BarrierResult {
    let n = a[0].nrows();
    let s = a.len();
    let nu = n as f64 + 1.0;
    let mut w = DVector::zeros(s);
    let mut t = -1.0;
    let mut tau = 1.0;
    let mut iterations = 0;
    loop {
        // centering
        for _ in 0..60 {
            if iterations >= max_iters {
                return BarrierResult { w, t, gap: f64::INFINITY, iterations, converged: false };
            }
            iterations += 1;
            let Some((linv, _)) = slack(a, &w, t) else {
                return BarrierResult { w, t, gap: f64::INFINITY, iterations, converged: false };
            };
            let r = 1.0 - w.norm_squared();
            // With S = LLᵀ and C_k = L⁻¹ A_k L⁻ᵀ, E = L⁻¹ L⁻ᵀ:
            // tr(S⁻¹A_k S⁻¹A_l) = ⟨C_k, C_l⟩, tr(S⁻¹A_k S⁻¹) = ⟨C_k, E⟩, tr(S⁻²) = ⟨E, E⟩.
            let nn = n * n;
            let mut cols = DMatrix::zeros(nn, s + 1);
            for (k, ak) in a.iter().enumerate() {
                let ck = &linv * ak * linv.transpose();
                cols.column_mut(k).copy_from_slice(ck.as_slice());
            }
            let e = &linv * linv.transpose();
            cols.column_mut(s).copy_from_slice((-&e).as_slice());
            let mut hess = cols.tr_mul(&cols);
            let mut grad = DVector::zeros(s + 1);
            for k in 0..s {
                grad[k] = -(0..n).map(|i| cols[(i * n + i, k)]).sum::<f64>() + 2.0 * w[k] / r;
                for l in 0..s {
                    hess[(k, l)] += 4.0 * w[k] * w[l] / (r * r);
                }
                hess[(k, k)] += 2.0 / r;
            }
            grad[s] = -tau + e.trace();
            let Some(chol) = hess.cholesky() else {
                return BarrierResult { w, t, gap: f64::INFINITY, iterations, converged: false };
            };
            let step = -chol.solve(&grad);
            let decrement = -grad.dot(&step);
            if decrement <= 1e-10 {
                break;
            }
            let f0 = barrier_value(a, &w, t, tau);
            let mut alpha = 1.0;
            loop {
                let w1 = &w + step.rows(0, s) * alpha;
                let t1 = t + alpha * step[s];
                let f1 = barrier_value(a, &w1, t1, tau);
                if f1 <= f0 - 0.25 * alpha * decrement {
                    w = w1;
                    t = t1;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-12 {
                    return BarrierResult { w, t, gap: f64::INFINITY, iterations, converged: false };
                }
            }
        }
        let gap = nu / tau;
        if gap <= tol {
            return BarrierResult { w, t, gap, iterations, converged: true };
        }
        tau *= 10.0;
    }
}

/// Solves the relaxed subproblem.
pub fn solve(a: &[DMatrix<f64>], cfg: &SubsolverConfig) -> Result<SubproblemSolution> {
    let (_, scale) = validate(a)?;
    let s = a.len();
    if scale == 0.0 {
        return Ok(SubproblemSolution {
            w_star: DVector::zeros(s),
            u_star: 0.0,
            tight: false,
            iterations: 0,
            converged: true,
        });
    }

    // Interior-point phase on the scaled problem. Its certified gap lets the
    // subgradient method be skipped in the common case.
    let (reduced, basis) = reduce_family(a);
    let scaled: Vec<DMatrix<f64>> = reduced.iter().map(|ak| ak / scale).collect();
    let mut ip = barrier_phase(&scaled, cfg.max_iters, cfg.tol_sub / scale);
    ip.w = &basis * &ip.w;
    if ip.converged {
        if ip.t <= 0.0 {
            return Ok(SubproblemSolution {
                w_star: DVector::zeros(s),
                u_star: 0.0,
                tight: false,
                iterations: ip.iterations,
                converged: true,
            });
        }
        let w_star = &ip.w / ip.w.norm();
        let u_star = objective(a, &w_star);
        if u_star >= scale * (ip.t - ip.gap) {
            return Ok(SubproblemSolution {
                w_star,
                u_star,
                tight: true,
                iterations: ip.iterations,
                converged: true,
            });
        }
    }

    // Start from the best of a few cheap candidates: the interior-point
    // iterate, the coordinate directions (both signs) and the trace direction.
    let mut candidates: Vec<DVector<f64>> = Vec::with_capacity(2 * s + 2);
    if ip.w.norm() > 0.0 {
        candidates.push(&ip.w / ip.w.norm());
    }
    for k in 0..s {
        for sign in [1.0, -1.0] {
            let mut e = DVector::zeros(s);
            e[k] = sign;
            candidates.push(e);
        }
    }
    let traces = DVector::from_iterator(s, a.iter().map(|ak| ak.trace()));
    if traces.norm() > 0.0 {
        candidates.push(&traces / traces.norm());
    }
    let mut w = DVector::zeros(s);
    let mut h_best = 0.0;
    let mut w_best = w.clone();
    for c in candidates {
        let (h, _) = h_and_subgradient(a, &c);
        if h < h_best {
            h_best = h;
            w_best = c.clone();
        }
    }
    w.copy_from(&w_best);

    // Target-level Polyak steps: aim at h_best - delta; halve delta when the
    // iterates travel a fixed path length without reaching half of it.
    let path_bound = 1.0;
    let mut delta = 0.5 * scale;
    let mut path = 0.0;
    let mut h_ref = h_best;
    let mut iterations = ip.iterations;
    let mut converged = false;
    let max_iters = iterations + cfg.max_iters;
    while iterations < max_iters {
        iterations += 1;
        let (h, g) = h_and_subgradient(a, &w);
        if h < h_best {
            h_best = h;
            w_best.copy_from(&w);
        }
        if h_best <= h_ref - 0.5 * delta {
            h_ref = h_best;
            path = 0.0;
        } else if path > path_bound {
            delta *= 0.5;
            path = 0.0;
            h_ref = h_best;
            w.copy_from(&w_best);
            if delta < cfg.tol_sub {
                converged = true;
                break;
            }
            continue;
        }
        let gnorm2 = g.norm_squared();
        if gnorm2 == 0.0 {
            converged = true;
            break;
        }
        let level = h_best - delta;
        let step = (h - level) / gnorm2;
        let prev = w.clone();
        w.axpy(-step, &g, 1.0);
        project_ball(&mut w);
        path += (&w - prev).norm();
    }

    let mut u_star = -h_best;
    let mut w_star = w_best;
    let tight = u_star > 0.0;
    if tight {
        let n = w_star.norm();
        w_star /= n;
        u_star = objective(a, &w_star);
    }
    Ok(SubproblemSolution {
        w_star,
        u_star,
        tight,
        iterations,
        converged,
    })
}

/// Exhaustive search of `u(w)` over the unit sphere for `s ≤ 3`, refined by
/// successive zooming around the best grid points. Verification only.
pub fn brute_oracle(a: &[DMatrix<f64>], grid_resolution: usize) -> Result<SubproblemSolution> {
    validate(a)?;
    let s = a.len();
    let res = grid_resolution.max(8);
    let eval = |w: &DVector<f64>| objective(a, w);
    let (w_star, u_star) = match s {
        1 => {
            let p = DVector::from_element(1, 1.0);
            let m = DVector::from_element(1, -1.0);
            let (up, um) = (eval(&p), eval(&m));
            if up >= um {
                (p, up)
            } else {
                (m, um)
            }
        }
        2 => {
            let circle = |t: f64| DVector::from_vec(vec![t.cos(), t.sin()]);
            let step = std::f64::consts::TAU / res as f64;
            let mut scored: Vec<(f64, f64)> = (0..res)
                .map(|j| {
                    let t = j as f64 * step;
                    (eval(&circle(t)), t)
                })
                .collect();
            scored.sort_by(|x, y| y.0.total_cmp(&x.0));
            let mut best = (f64::NEG_INFINITY, 0.0);
            for &(u0, t0) in scored.iter().take(4) {
                let (mut u, mut t) = (u0, t0);
                let mut half = step;
                for _ in 0..40 {
                    for j in -10..=10 {
                        let tt = t + half * j as f64 / 10.0;
                        let uu = eval(&circle(tt));
                        if uu > u {
                            u = uu;
                            t = tt;
                        }
                    }
                    half *= 0.5;
                }
                if u > best.0 {
                    best = (u, t);
                }
            }
            (circle(best.1), best.0)
        }
        3 => {
            let sphere = |th: f64, ph: f64| {
                DVector::from_vec(vec![th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()])
            };
            let n_th = res / 2;
            let mut scored = Vec::with_capacity(n_th * res + 2);
            for i in 0..=n_th {
                let th = std::f64::consts::PI * i as f64 / n_th as f64;
                let n_ph = if i == 0 || i == n_th { 1 } else { res };
                for j in 0..n_ph {
                    let ph = std::f64::consts::TAU * j as f64 / res as f64;
                    let w = sphere(th, ph);
                    scored.push((eval(&w), w));
                }
            }
            scored.sort_by(|x, y| y.0.total_cmp(&x.0));
            let spacing = std::f64::consts::TAU / res as f64;
            let mut best = (f64::NEG_INFINITY, DVector::zeros(3));
            for (u0, w0) in scored.into_iter().take(6) {
                let (u, w) = zoom_sphere(&eval, u0, w0, spacing);
                if u > best.0 {
                    best = (u, w);
                }
            }
            (best.1, best.0)
        }
        _ => {
            return Err(DesignError::Unsupported(format!(
                "grid oracle supports s <= 3, got s = {s}"
            )))
        }
    };
    Ok(SubproblemSolution {
        w_star,
        u_star,
        tight: true,
        iterations: 0,
        converged: true,
    })
}

fn zoom_sphere<F: Fn(&DVector<f64>) -> f64>(
    eval: &F,
    mut u: f64,
    mut w: DVector<f64>,
    spacing: f64,
) -> (f64, DVector<f64>) {
    let mut half = spacing;
    for _ in 0..40 {
        // tangent basis at w
        let pivot = if w[0].abs() < 0.9 {
            DVector::from_vec(vec![1.0, 0.0, 0.0])
        } else {
            DVector::from_vec(vec![0.0, 1.0, 0.0])
        };
        let t1 = {
            let t = &pivot - &w * w.dot(&pivot);
            &t / t.norm()
        };
        let t2 = w.cross(&t1);
        let center = w.clone();
        for i in -5..=5 {
            for j in -5..=5 {
                let cand = &center + &t1 * (half * i as f64 / 5.0) + &t2 * (half * j as f64 / 5.0);
                let cand = &cand / cand.norm();
                let uu = eval(&cand);
                if uu > u {
                    u = uu;
                    w = cand;
                }
            }
        }
        half *= 0.5;
    }
    (u, w)
}

/// Parses oracle regression fixtures: one or more instances, each a header
/// line `s s1` followed by `s` blocks of `s1 × s1` whitespace-separated
/// numbers. Lines starting with `#` are ignored.
pub fn parse_fixture(text: &str) -> Result<Vec<Vec<DMatrix<f64>>>> {
    let mut tokens = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split_whitespace())
        .peekable();
    let mut next_num = |what: &str| -> Result<f64> {
        let tok = tokens
            .next()
            .ok_or_else(|| DesignError::InvalidArgument(format!("fixture truncated reading {what}")))?;
        tok.parse::<f64>()
            .map_err(|_| DesignError::InvalidArgument(format!("bad number '{tok}' in fixture")))
    };
    let mut instances = Vec::new();
    loop {
        let s = match next_num("header") {
            Ok(v) => v,
            Err(_) if !instances.is_empty() => break,
            Err(e) => return Err(e),
        };
        let s1 = next_num("header")?;
        if s < 1.0 || s1 < 1.0 || s.fract() != 0.0 || s1.fract() != 0.0 {
            return Err(DesignError::InvalidArgument(format!(
                "bad fixture header '{s} {s1}'"
            )));
        }
        let (s, s1) = (s as usize, s1 as usize);
        let mut mats = Vec::with_capacity(s);
        for _ in 0..s {
            let mut vals = Vec::with_capacity(s1 * s1);
            for _ in 0..s1 * s1 {
                vals.push(next_num("matrix entry")?);
            }
            mats.push(DMatrix::from_row_slice(s1, s1, &vals));
        }
        instances.push(mats);
    }
    Ok(instances)
}

pub fn write_fixture(instances: &[Vec<DMatrix<f64>>]) -> String {
    let mut out = String::new();
    for mats in instances {
        let s1 = mats.first().map(|m| m.nrows()).unwrap_or(0);
        out.push_str(&format!("{} {}\n", mats.len(), s1));
        for m in mats {
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn scalar_weight_positive_definite() {
        let sol = solve(&[diag(&[1.0, 2.0])], &SubsolverConfig::default()).unwrap();
        assert!((sol.u_star - 1.0).abs() < 1e-9);
        assert!((sol.w_star[0] - 1.0).abs() < 1e-9);
        assert!(sol.tight);
    }

    #[test]
    fn scalar_weight_negative_definite() {
        let sol = solve(&[diag(&[-1.0, -2.0])], &SubsolverConfig::default()).unwrap();
        assert!((sol.u_star - 1.0).abs() < 1e-9);
        assert!((sol.w_star[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_and_signature() {
        // u(w) = w₁ - |w₂| on the circle, maximised at (1, 0).
        let a = [DMatrix::identity(2, 2), diag(&[1.0, -1.0])];
        let sol = solve(&a, &SubsolverConfig::default()).unwrap();
        assert!((sol.u_star - 1.0).abs() < 1e-6, "u* = {}", sol.u_star);
        assert!((sol.w_star[0] - 1.0).abs() < 1e-3 && sol.w_star[1].abs() < 1e-3);
        let oracle = brute_oracle(&a, 10_000).unwrap();
        assert!((oracle.u_star - 1.0).abs() < 1e-9);
    }

    #[test]
    fn grid_of_circle_agrees_with_closed_form() {
        // independent check of the example: direct 1e4-point grid of w₁ - |w₂|
        let best = (0..10_000)
            .map(|j| {
                let t = std::f64::consts::TAU * j as f64 / 10_000.0;
                t.cos() - t.sin().abs()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((best - 1.0).abs() < 1e-12);
    }

    #[test]
    fn indefinite_scalar_case_stops() {
        let sol = solve(&[diag(&[1.0, -1.0])], &SubsolverConfig::default()).unwrap();
        assert!(!sol.tight);
        assert!(sol.u_star.abs() < 1e-8);
        let oracle = brute_oracle(&[diag(&[1.0, -1.0])], 100).unwrap();
        assert!((oracle.u_star + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrices() {
        let a = vec![DMatrix::zeros(2, 2); 3];
        assert_eq!(solve(&a, &SubsolverConfig::default()).unwrap().u_star, 0.0);
        assert_eq!(brute_oracle(&a, 50).unwrap().u_star, 0.0);
    }

    #[test]
    fn identity_with_zero_partner() {
        let a = [DMatrix::identity(2, 2), DMatrix::zeros(2, 2)];
        let oracle = brute_oracle(&a, 1000).unwrap();
        assert!((oracle.u_star - 1.0).abs() < 1e-12);
        assert!((oracle.w_star[0].abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            solve(&[asym], &SubsolverConfig::default()),
            Err(DesignError::InvalidArgument(_))
        ));
        assert!(solve(&[], &SubsolverConfig::default()).is_err());
        assert!(solve(&[DMatrix::identity(2, 2), DMatrix::identity(3, 3)], &SubsolverConfig::default()).is_err());
        let four = vec![DMatrix::identity(2, 2); 4];
        assert!(matches!(brute_oracle(&four, 10), Err(DesignError::Unsupported(_))));
    }

    #[test]
    fn fixture_round_trip() {
        let inst = vec![
            vec![diag(&[1.0, 2.0]), DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, -1.0])],
            vec![diag(&[3.0])],
        ];
        let text = format!("# two instances\n{}", write_fixture(&inst));
        let parsed = parse_fixture(&text).unwrap();
        assert_eq!(parsed, inst);
        assert!(parse_fixture("2 2\n1 0 0 1\n").is_err());
        assert!(parse_fixture("x y").is_err());
    }
}
