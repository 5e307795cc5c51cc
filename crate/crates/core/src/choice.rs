//! The regularized argmax: for a penalty `h` and a score vector `y`, the
//! unique maximizer of `<y, x> - h(x)` over the simplex, together with the
//! conjugate value and a canonical inverse.
//!
//! Dispatch: Gibbs uses the closed-form logit, the quadratic penalty the
//! sort-based simplex projection, other decomposable kernels a monotone
//! bisection on the equality multiplier, and Renyi the generic active-set
//! solver. The active-set solver also doubles as an independent oracle for
//! the closed forms.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::ext::Extended;
use crate::penalty::{PenaltyError, PenaltyKind, PenaltySpec};

#[derive(Debug, Error)]
pub enum ChoiceError {
    #[error("score vector has non-finite entry at index {0}")]
    NonFiniteScore(usize),
    #[error("score vector of length {got} does not match penalty dimension {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("solver failed to converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },
    #[error("inverse choice needs strictly positive weights on the support of a steep penalty")]
    BoundaryForSteep,
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
}

/// A dual-space score vector; entries are cumulative utilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(y: Vec<f64>) -> Result<Self, ChoiceError> {
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(ChoiceError::NonFiniteScore(i));
        }
        Ok(ScoreVector(y))
    }

    pub fn zeros(n: usize) -> Self {
        ScoreVector(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<ScoreVector> for Vec<f64> {
    fn from(y: ScoreVector) -> Vec<f64> {
        y.0
    }
}

fn check_scores(h: &PenaltySpec, y: &[f64]) -> Result<(), ChoiceError> {
    if y.len() != h.n {
        return Err(ChoiceError::Dimension {
            got: y.len(),
            expected: h.n,
        });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(ChoiceError::NonFiniteScore(i));
    }
    Ok(())
}

/// Bisection tolerance on the equality multiplier.
const MU_TOL: f64 = 1e-13;
/// KKT residual tolerance for the active-set Newton solver.
const KKT_TOL: f64 = 1e-11;
const NEWTON_MAX_ITER: usize = 100;

/// The choice map `Q(y)`: unique maximizer of `<y, x> - h(x)` over the
/// simplex.
pub fn choice_map(h: &PenaltySpec, y: &[f64]) -> Result<Vec<f64>, ChoiceError> {
    check_scores(h, y)?;
    match effective_kind(h) {
        PenaltyKind::Gibbs => Ok(logit(y)),
        PenaltyKind::Quadratic => Ok(simplex_projection(y)),
        PenaltyKind::Renyi { .. } => choice_map_active_set(h, y),
        _ => choice_map_bisection(h, y),
    }
}

fn effective_kind(h: &PenaltySpec) -> PenaltyKind {
    match h.kind {
        PenaltyKind::Tsallis { q } if (q - 1.0).abs() < crate::penalty::TSALLIS_GIBBS_TOL => {
            PenaltyKind::Gibbs
        }
        k => k,
    }
}

/// Closed-form logit map with max-subtraction for overflow safety.
pub fn logit(y: &[f64]) -> Vec<f64> {
    let m = y.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut x: Vec<f64> = y.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= s);
    x
}

/// Sort-based Euclidean projection onto the simplex.
pub fn simplex_projection(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut rho = 0;
    let mut mu = 0.0;
    for (j, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (1.0 - cumsum) / (j + 1) as f64;
        if v + candidate > 0.0 {
            rho = j + 1;
            mu = candidate;
        }
    }
    debug_assert!(rho > 0);
    let mut x = vec![0.0; n];
    for i in 0..n {
        x[i] = (y[i] + mu).max(0.0);
    }
    x
}

/// Bisection on the equality multiplier for decomposable kernels:
/// `x_a = clamp((theta')^{-1}(y_a - mu))` with `sum x = 1`.
fn choice_map_bisection(h: &PenaltySpec, y: &[f64]) -> Result<Vec<f64>, ChoiceError> {
    let (_, hi) = h.kernel_derivative_bounds()?;
    let theta1 = hi
        .finite()
        .expect("decomposable kernels used here have finite theta'(1-)");
    let y_max = y.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let sum_at = |mu: f64| -> Result<f64, ChoiceError> {
        let mut s = 0.0;
        for &v in y {
            s += h.inverse_kernel_derivative(v - mu)?;
        }
        Ok(s)
    };
    // At mu_lo the best coordinate saturates at 1, so the sum is >= 1.
    let mut lo = y_max - theta1;
    let mut step = 1.0;
    let mut hi_mu = lo + step;
    let mut iterations = 0;
    while sum_at(hi_mu)? > 1.0 {
        step *= 2.0;
        hi_mu = lo + step;
        iterations += 1;
        if iterations > 200 {
            return Err(ChoiceError::NonConvergence {
                residual: sum_at(hi_mu)? - 1.0,
                iterations,
            });
        }
    }
    while hi_mu - lo > MU_TOL {
        let mid = 0.5 * (lo + hi_mu);
        if sum_at(mid)? >= 1.0 {
            lo = mid;
        } else {
            hi_mu = mid;
        }
        iterations += 1;
        if iterations > 500 {
            break;
        }
    }
    let mu = 0.5 * (lo + hi_mu);
    let mut x: Vec<f64> = Vec::with_capacity(y.len());
    for &v in y {
        x.push(h.inverse_kernel_derivative(v - mu)?);
    }
    let s: f64 = x.iter().sum();
    if !(s > 0.0) {
        return Err(ChoiceError::NonConvergence {
            residual: 1.0,
            iterations,
        });
    }
    x.iter_mut().for_each(|v| *v /= s);
    Ok(x)
}

/// Generic active-set solver: enumerate candidate supports (largest first),
/// solve the equality-constrained stationarity system on each face with a
/// damped Newton method, and return the first KKT-feasible candidate.
///
/// Works for every penalty kind through the face gradient and Hessian; used
/// as the Renyi solver and as an independent oracle for the closed forms.
pub fn choice_map_active_set(h: &PenaltySpec, y: &[f64]) -> Result<Vec<f64>, ChoiceError> {
    check_scores(h, y)?;
    let n = h.n;
    let mut supports: Vec<Vec<usize>> = Vec::new();
    for mask in 1u32..(1 << n) {
        let s: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        supports.push(s);
    }
    // interior candidate first
    supports.sort_by_key(|s| std::cmp::Reverse(s.len()));

    let mut best_residual = f64::INFINITY;
    for support in &supports {
        let Some((x, mu, residual)) = newton_on_face(h, y, support) else {
            continue;
        };
        best_residual = best_residual.min(residual);
        if residual > KKT_TOL {
            continue;
        }
        // Off-support KKT feasibility: y_b - dh_b <= mu, where dh_b is the
        // one-sided derivative at 0 (minus infinity for steep penalties, so
        // only the full support can ever pass).
        let feasible = (0..n).filter(|i| !support.contains(i)).all(|b| {
            let dh_b = off_support_derivative(h, &x, support, b);
            match dh_b {
                Extended::NegInf => false,
                Extended::Finite(v) => y[b] - v <= mu + 1e-9,
                Extended::PosInf => true,
            }
        });
        if feasible {
            let mut out = x;
            let s: f64 = out.iter().sum();
            out.iter_mut().for_each(|v| *v /= s);
            return Ok(out);
        }
    }
    Err(ChoiceError::NonConvergence {
        residual: best_residual,
        iterations: NEWTON_MAX_ITER,
    })
}

/// One-sided derivative of `h` at a face point in the direction of an
/// off-support coordinate `b`, needed for the complementary-slackness test.
fn off_support_derivative(h: &PenaltySpec, _x: &[f64], _support: &[usize], _b: usize) -> Extended {
    if h.is_steep() {
        return Extended::NegInf;
    }
    match h.kind {
        PenaltyKind::Quadratic => Extended::Finite(0.0),
        PenaltyKind::Tsallis { q } if q > 1.0 => Extended::Finite(1.0 / (q * (1.0 - q))),
        _ => Extended::NegInf,
    }
}

/// Damped Newton on the stationarity system of a face: find `x > 0` on the
/// support and a multiplier `mu` with `dh(x) - y + mu = 0` and `sum x = 1`.
/// Returns `(x, mu, kkt_residual)` in ambient coordinates.
fn newton_on_face(h: &PenaltySpec, y: &[f64], support: &[usize]) -> Option<(Vec<f64>, f64, f64)> {
    let m = support.len();
    let n = h.n;
    let mut x = vec![0.0; n];
    for &a in support {
        x[a] = 1.0 / m as f64;
    }
    let mut mu = {
        // initial multiplier from the stationarity equations at the start
        let grad = h.face_gradient(&x, support).ok()?;
        support.iter().map(|&a| y[a] - grad[a]).sum::<f64>() / m as f64
    };

    let residual_of = |x: &[f64], mu: f64| -> Option<f64> {
        let grad = h.face_gradient(x, support).ok()?;
        let mut r: f64 = 0.0;
        for &a in support {
            r = r.max((grad[a] - y[a] + mu).abs());
        }
        let sum: f64 = support.iter().map(|&a| x[a]).sum();
        Some(r.max((sum - 1.0).abs()))
    };

    let mut res = residual_of(&x, mu)?;
    for _ in 0..NEWTON_MAX_ITER {
        if res <= KKT_TOL * 0.1 {
            break;
        }
        let grad = h.face_gradient(&x, support).ok()?;
        let hess = h.face_hessian(&x, support).ok()?;
        // saddle system [[H, 1], [1^T, 0]] [dx; dmu] = -[r; s]
        let mut a = DMatrix::zeros(m + 1, m + 1);
        let mut b = DVector::zeros(m + 1);
        for i in 0..m {
            for j in 0..m {
                a[(i, j)] = hess[(i, j)];
            }
            a[(i, m)] = 1.0;
            a[(m, i)] = 1.0;
            b[i] = -(grad[support[i]] - y[support[i]] + mu);
        }
        let sum: f64 = support.iter().map(|&a| x[a]).sum();
        b[m] = 1.0 - sum;
        let lu = a.lu();
        let delta = lu.solve(&b)?;

        // backtracking: keep the face coordinates strictly positive and
        // insist on residual decrease
        let mut step: f64 = 1.0;
        for (i, &a_idx) in support.iter().enumerate() {
            if delta[i] < 0.0 {
                step = step.min(-0.95 * x[a_idx] / delta[i]);
            }
        }
        step = step.min(1.0);
        let mut improved = false;
        for _ in 0..60 {
            let mut x_new = x.clone();
            for (i, &a_idx) in support.iter().enumerate() {
                x_new[a_idx] = x[a_idx] + step * delta[i];
            }
            let mu_new = mu + step * delta[m];
            if support.iter().all(|&a| x_new[a] > 0.0) {
                if let Some(r_new) = residual_of(&x_new, mu_new) {
                    if r_new < res {
                        x = x_new;
                        mu = mu_new;
                        res = r_new;
                        improved = true;
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Some((x, mu, res))
}

/// Convex conjugate `h*(y) = <y, Q(y)> - h(Q(y))`.
pub fn conjugate_value(h: &PenaltySpec, y: &[f64]) -> Result<f64, ChoiceError> {
    let x = choice_map(h, y)?;
    conjugate_value_at(h, y, &x)
}

/// Conjugate value when the maximizer is already known.
pub fn conjugate_value_at(h: &PenaltySpec, y: &[f64], x: &[f64]) -> Result<f64, ChoiceError> {
    let pairing: f64 = y.iter().zip(x).map(|(a, b)| a * b).sum();
    match h.value_unchecked(x) {
        Extended::Finite(v) => Ok(pairing - v),
        // interior images keep the barrier finite; anything else is a
        // solver artifact
        _ => Err(ChoiceError::NonConvergence {
            residual: f64::INFINITY,
            iterations: 0,
        }),
    }
}

/// A canonical score vector with `choice_map(h, y) = x`.
///
/// On the support the entries are the face gradient, gauge-fixed to sum to
/// zero there; off the support (nonsteep penalties only) the entries sit
/// strictly below the KKT cutoff.
pub fn inverse_choice(h: &PenaltySpec, x: &[f64]) -> Result<ScoreVector, ChoiceError> {
    if x.len() != h.n {
        return Err(ChoiceError::Dimension {
            got: x.len(),
            expected: h.n,
        });
    }
    let support: Vec<usize> = (0..h.n).filter(|&i| x[i] > 0.0).collect();
    if support.len() < x.len() && h.is_steep() {
        return Err(ChoiceError::BoundaryForSteep);
    }
    let grad = h.face_gradient(x, &support)?;
    let mean: f64 = support.iter().map(|&a| grad[a]).sum::<f64>() / support.len() as f64;
    let mut y = vec![0.0; h.n];
    for &a in &support {
        y[a] = grad[a] - mean;
    }
    if support.len() < h.n {
        // KKT multiplier after the gauge shift
        let mu = -mean;
        let (lo, _) = h.kernel_derivative_bounds()?;
        let cutoff = lo
            .finite()
            .expect("nonsteep kernels have finite theta'(0+)");
        for b in 0..h.n {
            if !support.contains(&b) {
                y[b] = mu + cutoff - 1.0;
            }
        }
    }
    ScoreVector::new(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn assert_simplex(x: &[f64]) {
        assert!(x.iter().all(|&v| v >= 0.0));
        assert_abs_diff_eq!(x.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    fn all_kinds(n: usize) -> Vec<PenaltySpec> {
        vec![
            PenaltySpec::gibbs(n),
            PenaltySpec::quadratic(n),
            PenaltySpec::tsallis(0.5, n).unwrap(),
            PenaltySpec::tsallis(1.5, n).unwrap(),
            PenaltySpec::tsallis(2.0, n).unwrap(),
            PenaltySpec::renyi(0.5, n).unwrap(),
            PenaltySpec::log_barrier(n),
        ]
    }

    #[test]
    fn gibbs_uniform_and_logit_point() {
        let h = PenaltySpec::gibbs(3);
        let x = choice_map(&h, &[0.0, 0.0, 0.0]).unwrap();
        for &v in &x {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let h2 = PenaltySpec::gibbs(2);
        let x = choice_map(&h2, &[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(x[0], e / (1.0 + e), epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 1.0 / (1.0 + e), epsilon = 1e-12);
    }

    #[test]
    fn quadratic_projection_support_enumeration_example() {
        let h = PenaltySpec::quadratic(3);
        let x = choice_map(&h, &[0.4, 0.1, -0.3]).unwrap();
        assert_abs_diff_eq!(x[0], 0.65, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 0.35, epsilon = 1e-12);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn logit_overflow_safe() {
        let h = PenaltySpec::gibbs(2);
        let x = choice_map(&h, &[800.0, 0.0]).unwrap();
        assert!(x[0] > 0.999999);
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_bad_scores() {
        let h = PenaltySpec::gibbs(2);
        assert!(choice_map(&h, &[f64::NAN, 0.0]).is_err());
        assert!(choice_map(&h, &[0.0]).is_err());
    }

    #[test]
    fn bisection_solves_tsallis_and_logbar() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for spec in [
            PenaltySpec::tsallis(0.5, 3).unwrap(),
            PenaltySpec::tsallis(1.5, 3).unwrap(),
            PenaltySpec::log_barrier(3),
        ] {
            for _ in 0..200 {
                let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let x = choice_map(&spec, &y).unwrap();
                assert_simplex(&x);
                // stationarity on the support
                let support: Vec<usize> = (0..3).filter(|&i| x[i] > 1e-9).collect();
                let grad = spec.face_gradient(&x, &support).unwrap();
                let mu0 = y[support[0]] - grad[support[0]];
                for &a in &support {
                    assert_abs_diff_eq!(y[a] - grad[a], mu0, epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn tsallis_q2_matches_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ts2 = PenaltySpec::tsallis(2.0, 4).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..500 {
            let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let a = choice_map(&ts2, &y).unwrap();
            let b = simplex_projection(&y);
            for (u, v) in a.iter().zip(&b) {
                worst = worst.max((u - v).abs());
            }
        }
        assert!(worst <= 1e-10, "max deviation {worst}");
    }

    #[test]
    fn active_set_agrees_with_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2usize, 3, 4] {
            let gibbs = PenaltySpec::gibbs(n);
            let quad = PenaltySpec::quadratic(n);
            let mut worst: f64 = 0.0;
            for _ in 0..250 {
                let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let a = choice_map_active_set(&gibbs, &y).unwrap();
                let b = logit(&y);
                for (u, v) in a.iter().zip(&b) {
                    worst = worst.max((u - v).abs());
                }
                let a = choice_map_active_set(&quad, &y).unwrap();
                let b = simplex_projection(&y);
                for (u, v) in a.iter().zip(&b) {
                    worst = worst.max((u - v).abs());
                }
            }
            assert!(worst <= 1e-8, "n={n}: max deviation {worst}");
        }
    }

    #[test]
    fn renyi_solution_satisfies_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = PenaltySpec::renyi(0.5, 3).unwrap();
        for _ in 0..100 {
            let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let x = choice_map(&h, &y).unwrap();
            assert_simplex(&x);
            assert!(x.iter().all(|&v| v > 0.0), "steep penalty keeps interior");
            let grad = h.face_gradient(&x, &[0, 1, 2]).unwrap();
            let mu = y[0] - grad[0];
            for a in 1..3 {
                assert_abs_diff_eq!(y[a] - grad[a], mu, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for spec in all_kinds(3) {
            for _ in 0..50 {
                let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect();
                let c: f64 = rng.gen_range(-10.0..10.0);
                let y_shift: Vec<f64> = y.iter().map(|v| v + c).collect();
                let a = choice_map(&spec, &y).unwrap();
                let b = choice_map(&spec, &y_shift).unwrap();
                for (u, v) in a.iter().zip(&b) {
                    assert!((u - v).abs() <= 1e-10, "{:?}: {u} vs {v}", spec.kind);
                }
            }
        }
    }

    #[test]
    fn dead_coordinate_invariance() {
        // only meaningful for nonsteep penalties, which reach the boundary
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for spec in [
            PenaltySpec::quadratic(3),
            PenaltySpec::tsallis(1.5, 3).unwrap(),
        ] {
            let mut tested = 0;
            while tested < 20 {
                let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let x = choice_map(&spec, &y).unwrap();
                let Some(beta) = (0..3).find(|&i| x[i] == 0.0) else {
                    continue;
                };
                tested += 1;
                for t in [0.5, 5.0, 50.0] {
                    let mut y2 = y.clone();
                    y2[beta] -= t;
                    let x2 = choice_map(&spec, &y2).unwrap();
                    for (u, v) in x.iter().zip(&x2) {
                        assert!((u - v).abs() <= 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn vanishing_share_at_large_gap() {
        let gibbs = PenaltySpec::gibbs(2);
        let x = choice_map(&gibbs, &[0.0, 40.0]).unwrap();
        assert!(x[0] <= 1e-12);
        let quad = PenaltySpec::quadratic(2);
        let x = choice_map(&quad, &[0.0, 40.0]).unwrap();
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn conjugate_examples() {
        let gibbs = PenaltySpec::gibbs(2);
        assert_abs_diff_eq!(
            conjugate_value(&gibbs, &[0.0, 0.0]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        let quad = PenaltySpec::quadratic(2);
        assert_abs_diff_eq!(
            conjugate_value(&quad, &[2.0, 0.0]).unwrap(),
            1.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn conjugate_shift_identity() {
        // h*(y + c 1) = h*(y) + c
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for spec in all_kinds(3) {
            for _ in 0..20 {
                let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let c: f64 = rng.gen_range(-5.0..5.0);
                let y2: Vec<f64> = y.iter().map(|v| v + c).collect();
                let a = conjugate_value(&spec, &y).unwrap();
                let b = conjugate_value(&spec, &y2).unwrap();
                assert_abs_diff_eq!(b, a + c, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn conjugate_gradient_is_choice_map() {
        // central finite differences of h* recover Q
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let step = 1e-6;
        for spec in all_kinds(3) {
            for _ in 0..25 {
                let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let x = choice_map(&spec, &y).unwrap();
                for a in 0..3 {
                    let mut yp = y.clone();
                    let mut ym = y.clone();
                    yp[a] += step;
                    ym[a] -= step;
                    let fd = (conjugate_value(&spec, &yp).unwrap()
                        - conjugate_value(&spec, &ym).unwrap())
                        / (2.0 * step);
                    assert!(
                        (fd - x[a]).abs() <= 2e-5,
                        "{:?} coord {a}: fd {fd} vs {}",
                        spec.kind,
                        x[a]
                    );
                }
            }
        }
    }

    #[test]
    fn lipschitz_bound_from_convexity_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for spec in all_kinds(3) {
            let k = spec.convexity_constant();
            let mut worst: f64 = 0.0;
            for _ in 0..10_000 {
                let y1: Vec<f64> = (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect();
                let y2: Vec<f64> = (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect();
                let x1 = choice_map(&spec, &y1).unwrap();
                let x2 = choice_map(&spec, &y2).unwrap();
                let dx: f64 = x1
                    .iter()
                    .zip(&x2)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let dy: f64 = y1
                    .iter()
                    .zip(&y2)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(dx - dy / k);
            }
            assert!(worst <= 1e-9, "{:?}: excess {worst}", spec.kind);
        }
    }

    #[test]
    fn inverse_choice_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        // steep penalties: interior points
        for spec in all_kinds(3) {
            for _ in 0..50 {
                let mut x: Vec<f64> = (0..3).map(|_| -(rng.gen::<f64>()).ln()).collect();
                let s: f64 = x.iter().sum();
                x.iter_mut().for_each(|v| *v /= s);
                if x.iter().any(|&v| v < 1e-3) {
                    continue;
                }
                let y = inverse_choice(&spec, &x).unwrap();
                let back = choice_map(&spec, y.as_slice()).unwrap();
                for (u, v) in x.iter().zip(&back) {
                    assert!((u - v).abs() <= 1e-8, "{:?}: {x:?} -> {back:?}", spec.kind);
                }
                // canonical gauge: zero sum on the support
                let s: f64 = y.as_slice().iter().sum();
                assert_abs_diff_eq!(s, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn inverse_choice_boundary_cases() {
        let quad = PenaltySpec::quadratic(3);
        let x = [0.65, 0.35, 0.0];
        let y = inverse_choice(&quad, &x).unwrap();
        let back = choice_map(&quad, y.as_slice()).unwrap();
        for (u, v) in x.iter().zip(&back) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-12);
        }
        let gibbs = PenaltySpec::gibbs(3);
        assert!(matches!(
            inverse_choice(&gibbs, &x),
            Err(ChoiceError::BoundaryForSteep)
        ));
    }

    #[test]
    fn solvers_survive_extreme_score_gaps() {
        for spec in [
            PenaltySpec::tsallis(0.5, 3).unwrap(),
            PenaltySpec::tsallis(1.5, 3).unwrap(),
            PenaltySpec::log_barrier(3),
        ] {
            for y in [
                [100.0, 0.0, -100.0],
                [-300.0, -300.0, 250.0],
                [1e-14, 0.0, -1e-14],
            ] {
                let x = choice_map(&spec, &y).unwrap();
                assert_simplex(&x);
                let best = (0..3)
                    .max_by(|&a, &b| y[a].partial_cmp(&y[b]).unwrap())
                    .unwrap();
                assert!(x[best] >= 1.0 / 3.0 - 1e-9);
            }
        }
        // the active-set oracle handles a large gap on the steep side too
        let renyi = PenaltySpec::renyi(0.5, 3).unwrap();
        let x = choice_map(&renyi, &[6.0, 0.0, -6.0]).unwrap();
        assert_simplex(&x);
        assert!(x[0] > x[1] && x[1] > x[2]);
    }

    #[test]
    fn inverse_choice_nonsteep_boundary_round_trip() {
        // Tsallis above 1 reaches the boundary; the canonical inverse puts
        // dead coordinates strictly below the complementarity cutoff
        let ts = PenaltySpec::tsallis(1.5, 3).unwrap();
        let x = [0.7, 0.3, 0.0];
        let y = inverse_choice(&ts, &x).unwrap();
        let back = choice_map(&ts, y.as_slice()).unwrap();
        for (u, v) in x.iter().zip(&back) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-9);
        }
        assert_eq!(back[2], 0.0);
    }

    #[test]
    fn inverse_choice_gibbs_examples() {
        let gibbs = PenaltySpec::gibbs(2);
        let y = inverse_choice(&gibbs, &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(y.as_slice()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y.as_slice()[1], 0.0, epsilon = 1e-12);

        let e = std::f64::consts::E;
        let x = [e / (1.0 + e), 1.0 / (1.0 + e)];
        let y = inverse_choice(&gibbs, &x).unwrap();
        assert_abs_diff_eq!(y.as_slice()[0] - y.as_slice()[1], 1.0, epsilon = 1e-10);
    }
}
