//! The penalty-function zoo: values, face-restricted derivatives, kernel
//! derivatives with their clamped inverses, steepness data, and strong
//! convexity constants.
//!
//! A penalty here is continuous on the simplex, smooth on the relative
//! interior of every face, and strongly convex. The log barrier is admitted
//! as well even though it is infinite on the boundary; callers keep it to
//! interior states.
//!
//! Adding a kind means extending [`PenaltyKind`] and supplying its kernel
//! (value, first and second derivative, derivative bounds) or, for a
//! non-decomposable penalty, its face gradient and Hessian; everything
//! downstream dispatches through those.

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ext::Extended;

#[derive(Debug, Error)]
pub enum PenaltyError {
    #[error("Tsallis exponent must be positive, got {0}")]
    BadTsallisExponent(f64),
    #[error("Renyi exponent must lie in (0, 1), got {0}")]
    BadRenyiExponent(f64),
    #[error("input of length {got} does not match penalty dimension {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("negative entry {0} in simplex vector")]
    NegativeEntry(f64),
    #[error("vector sums to {0}, not 1 within 1e-9")]
    NotOnSimplex(f64),
    #[error("zero entry at index {0} inside the requested support")]
    ZeroOnSupport(usize),
    #[error("kernel operations are not available for the non-decomposable Renyi penalty")]
    NotDecomposable,
    #[error("kernel derivative requested outside (0, 1]: {0}")]
    KernelDomain(f64),
    #[error("unknown penalty selector `{0}`")]
    UnknownSelector(String),
}

/// Dispatch tolerance: Tsallis collapses to Gibbs when `|q - 1|` is below
/// this, avoiding the 0/0 in its kernel.
pub const TSALLIS_GIBBS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PenaltyKind {
    /// Negative Gibbs entropy `sum x ln x`; induces the logit choice map.
    Gibbs,
    /// Quadratic penalty `1/2 sum x^2`; induces the Euclidean projection.
    Quadratic,
    /// Tsallis entropy with kernel `(x - x^q) / (q (1-q))`.
    Tsallis { q: f64 },
    /// Renyi entropy `-(1-q)^{-1} ln sum x^q`, `q` in (0, 1).
    Renyi { q: f64 },
    /// Logarithmic barrier `-sum ln x`; infinite on the boundary.
    LogBarrier,
}

/// A penalty function on the simplex of a fixed dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub n: usize,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, n: usize) -> Result<Self, PenaltyError> {
        match kind {
            PenaltyKind::Tsallis { q } if !(q > 0.0) => Err(PenaltyError::BadTsallisExponent(q)),
            PenaltyKind::Renyi { q } if !(q > 0.0 && q < 1.0) => {
                Err(PenaltyError::BadRenyiExponent(q))
            }
            _ => Ok(PenaltySpec { kind, n }),
        }
    }

    pub fn gibbs(n: usize) -> Self {
        PenaltySpec::new(PenaltyKind::Gibbs, n).unwrap()
    }

    pub fn quadratic(n: usize) -> Self {
        PenaltySpec::new(PenaltyKind::Quadratic, n).unwrap()
    }

    pub fn tsallis(q: f64, n: usize) -> Result<Self, PenaltyError> {
        PenaltySpec::new(PenaltyKind::Tsallis { q }, n)
    }

    pub fn renyi(q: f64, n: usize) -> Result<Self, PenaltyError> {
        PenaltySpec::new(PenaltyKind::Renyi { q }, n)
    }

    pub fn log_barrier(n: usize) -> Self {
        PenaltySpec::new(PenaltyKind::LogBarrier, n).unwrap()
    }

    /// Effective kind after the Tsallis `q -> 1` dispatch to Gibbs.
    fn effective(&self) -> PenaltyKind {
        match self.kind {
            PenaltyKind::Tsallis { q } if (q - 1.0).abs() < TSALLIS_GIBBS_TOL => PenaltyKind::Gibbs,
            k => k,
        }
    }

    /// Steep penalties confine the choice map to the simplex interior.
    pub fn is_steep(&self) -> bool {
        match self.effective() {
            PenaltyKind::Gibbs | PenaltyKind::Renyi { .. } | PenaltyKind::LogBarrier => true,
            PenaltyKind::Quadratic => false,
            PenaltyKind::Tsallis { q } => q <= 1.0,
        }
    }

    /// Decomposable penalties are coordinate sums of a scalar kernel.
    pub fn is_decomposable(&self) -> bool {
        !matches!(self.kind, PenaltyKind::Renyi { .. })
    }

    /// Penalty selection grammar: `gibbs | quad | tsallis:<q> | renyi:<q> | logbar`.
    pub fn parse(s: &str, n: usize) -> Result<Self, PenaltyError> {
        let s = s.trim();
        if let Some(q) = s.strip_prefix("tsallis:") {
            let q: f64 = q
                .parse()
                .map_err(|_| PenaltyError::UnknownSelector(s.to_string()))?;
            return PenaltySpec::tsallis(q, n);
        }
        if let Some(q) = s.strip_prefix("renyi:") {
            let q: f64 = q
                .parse()
                .map_err(|_| PenaltyError::UnknownSelector(s.to_string()))?;
            return PenaltySpec::renyi(q, n);
        }
        match s {
            "gibbs" => Ok(PenaltySpec::gibbs(n)),
            "quad" => Ok(PenaltySpec::quadratic(n)),
            "logbar" => Ok(PenaltySpec::log_barrier(n)),
            other => Err(PenaltyError::UnknownSelector(other.to_string())),
        }
    }

    /// Canonical selection string (inverse of [`PenaltySpec::parse`]).
    pub fn selector(&self) -> String {
        match self.kind {
            PenaltyKind::Gibbs => "gibbs".to_string(),
            PenaltyKind::Quadratic => "quad".to_string(),
            PenaltyKind::Tsallis { q } => format!("tsallis:{q}"),
            PenaltyKind::Renyi { q } => format!("renyi:{q}"),
            PenaltyKind::LogBarrier => "logbar".to_string(),
        }
    }

    fn check_simplex(&self, x: &[f64]) -> Result<(), PenaltyError> {
        if x.len() != self.n {
            return Err(PenaltyError::Dimension {
                got: x.len(),
                expected: self.n,
            });
        }
        for &v in x {
            if !(v >= 0.0) {
                return Err(PenaltyError::NegativeEntry(v));
            }
        }
        let sum: f64 = x.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PenaltyError::NotOnSimplex(sum));
        }
        Ok(())
    }

    /// Penalty value `h(x)` as an extended real; only the log barrier ever
    /// returns `+inf` (on the boundary).
    pub fn value(&self, x: &[f64]) -> Result<Extended, PenaltyError> {
        self.check_simplex(x)?;
        Ok(self.value_unchecked(x))
    }

    /// `h(x)` without the simplex check; used internally where `x` comes
    /// from a solver and may sit slightly off the simplex.
    pub fn value_unchecked(&self, x: &[f64]) -> Extended {
        match self.effective() {
            PenaltyKind::Gibbs => Extended::Finite(
                x.iter()
                    .map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 })
                    .sum(),
            ),
            PenaltyKind::Quadratic => Extended::Finite(0.5 * x.iter().map(|&v| v * v).sum::<f64>()),
            PenaltyKind::Tsallis { q } => {
                Extended::Finite(x.iter().map(|&v| (v - v.powf(q)) / (q * (1.0 - q))).sum())
            }
            PenaltyKind::Renyi { q } => {
                let s: f64 = x.iter().map(|&v| v.powf(q)).sum();
                Extended::Finite(-s.ln() / (1.0 - q))
            }
            PenaltyKind::LogBarrier => {
                if x.iter().any(|&v| v <= 0.0) {
                    Extended::PosInf
                } else {
                    Extended::Finite(-x.iter().map(|&v| v.ln()).sum::<f64>())
                }
            }
        }
    }

    /// Finite penalty value, for callers that guarantee interior states.
    pub fn finite_value(&self, x: &[f64]) -> Result<f64, PenaltyError> {
        match self.value(x)? {
            Extended::Finite(v) => Ok(v),
            _ => Err(PenaltyError::ZeroOnSupport(0)),
        }
    }

    /// Kernel derivative `theta'(x)` for decomposable penalties, `x` in (0, 1].
    pub fn kernel_derivative(&self, x: f64) -> Result<f64, PenaltyError> {
        if !(x > 0.0 && x <= 1.0) {
            return Err(PenaltyError::KernelDomain(x));
        }
        match self.effective() {
            PenaltyKind::Gibbs => Ok(1.0 + x.ln()),
            PenaltyKind::Quadratic => Ok(x),
            PenaltyKind::Tsallis { q } => Ok((1.0 - q * x.powf(q - 1.0)) / (q * (1.0 - q))),
            PenaltyKind::LogBarrier => Ok(-1.0 / x),
            PenaltyKind::Renyi { .. } => Err(PenaltyError::NotDecomposable),
        }
    }

    /// Kernel second derivative `theta''(x)` for decomposable penalties.
    pub fn kernel_second_derivative(&self, x: f64) -> Result<f64, PenaltyError> {
        if !(x > 0.0 && x <= 1.0) {
            return Err(PenaltyError::KernelDomain(x));
        }
        match self.effective() {
            PenaltyKind::Gibbs => Ok(1.0 / x),
            PenaltyKind::Quadratic => Ok(1.0),
            PenaltyKind::Tsallis { q } => Ok(x.powf(q - 2.0)),
            PenaltyKind::LogBarrier => Ok(1.0 / (x * x)),
            PenaltyKind::Renyi { .. } => Err(PenaltyError::NotDecomposable),
        }
    }

    /// One-sided kernel derivative bounds `(theta'(0+), theta'(1-))`.
    pub fn kernel_derivative_bounds(&self) -> Result<(Extended, Extended), PenaltyError> {
        match self.effective() {
            PenaltyKind::Gibbs => Ok((Extended::NegInf, Extended::Finite(1.0))),
            PenaltyKind::Quadratic => Ok((Extended::Finite(0.0), Extended::Finite(1.0))),
            PenaltyKind::Tsallis { q } => {
                let hi = Extended::Finite(1.0 / q);
                if q < 1.0 {
                    Ok((Extended::NegInf, hi))
                } else {
                    Ok((Extended::Finite(1.0 / (q * (1.0 - q))), hi))
                }
            }
            PenaltyKind::LogBarrier => Ok((Extended::NegInf, Extended::Finite(-1.0))),
            PenaltyKind::Renyi { .. } => Err(PenaltyError::NotDecomposable),
        }
    }

    /// Inverse of the kernel derivative, clamped into [0, 1]: below
    /// `theta'(0+)` it returns 0, above `theta'(1-)` it returns 1.
    pub fn inverse_kernel_derivative(&self, z: f64) -> Result<f64, PenaltyError> {
        let (lo, hi) = self.kernel_derivative_bounds()?;
        if let Extended::Finite(l) = lo {
            if z <= l {
                return Ok(0.0);
            }
        }
        if let Extended::Finite(h) = hi {
            if z >= h {
                return Ok(1.0);
            }
        }
        let x = match self.effective() {
            PenaltyKind::Gibbs => (z - 1.0).exp(),
            PenaltyKind::Quadratic => z,
            PenaltyKind::Tsallis { q } => {
                // theta'(x) = (1 - q x^{q-1}) / (q (1-q)); solve for x
                let base = 1.0 / q + (q - 1.0) * z;
                base.powf(1.0 / (q - 1.0))
            }
            PenaltyKind::LogBarrier => -1.0 / z,
            PenaltyKind::Renyi { .. } => unreachable!("bounds already errored"),
        };
        Ok(x.clamp(0.0, 1.0))
    }

    /// Extinction-rate function: 0 below `theta'(0+)`, 1 above `theta'(1-)`,
    /// the inverse kernel derivative in between.
    pub fn rate_function(&self, z: f64) -> Result<f64, PenaltyError> {
        self.inverse_kernel_derivative(z)
    }

    /// Partial derivatives of the restriction of `h` to the face spanned by
    /// `support`, in ambient coordinates (zero off the support).
    ///
    /// For steep penalties every supported coordinate must be strictly
    /// positive; nonsteep kernels admit one-sided derivatives at 0.
    pub fn face_gradient(&self, x: &[f64], support: &[usize]) -> Result<Vec<f64>, PenaltyError> {
        if x.len() != self.n {
            return Err(PenaltyError::Dimension {
                got: x.len(),
                expected: self.n,
            });
        }
        let mut out = vec![0.0; self.n];
        match self.effective() {
            PenaltyKind::Renyi { q } => {
                for &a in support {
                    if x[a] <= 0.0 {
                        return Err(PenaltyError::ZeroOnSupport(a));
                    }
                }
                let s: f64 = support.iter().map(|&a| x[a].powf(q)).sum();
                for &a in support {
                    let xi = q * x[a].powf(q - 1.0) / s;
                    out[a] = xi / (q - 1.0);
                }
            }
            _ => {
                for &a in support {
                    if x[a] <= 0.0 {
                        if self.is_steep() {
                            return Err(PenaltyError::ZeroOnSupport(a));
                        }
                        let (lo, _) = self.kernel_derivative_bounds()?;
                        out[a] = lo.finite().expect("nonsteep kernel has finite theta'(0+)");
                    } else {
                        out[a] = self.kernel_derivative(x[a].min(1.0))?;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Hessian of the restriction of `h` to the face spanned by `support`,
    /// as a dense matrix indexed by the support (in the order given).
    pub fn face_hessian(&self, x: &[f64], support: &[usize]) -> Result<DMatrix<f64>, PenaltyError> {
        if x.len() != self.n {
            return Err(PenaltyError::Dimension {
                got: x.len(),
                expected: self.n,
            });
        }
        let m = support.len();
        for &a in support {
            if x[a] <= 0.0 {
                return Err(PenaltyError::ZeroOnSupport(a));
            }
        }
        match self.effective() {
            PenaltyKind::Renyi { q } => {
                let s: f64 = support.iter().map(|&a| x[a].powf(q)).sum();
                let xi: Vec<f64> = support
                    .iter()
                    .map(|&a| q * x[a].powf(q - 1.0) / s)
                    .collect();
                let mut h = DMatrix::zeros(m, m);
                for i in 0..m {
                    for j in 0..m {
                        let mut v = xi[i] * xi[j] / (1.0 - q);
                        if i == j {
                            v += xi[i] / x[support[i]];
                        }
                        h[(i, j)] = v;
                    }
                }
                Ok(h)
            }
            _ => {
                let mut h = DMatrix::zeros(m, m);
                for i in 0..m {
                    h[(i, i)] = self.kernel_second_derivative(x[support[i]].min(1.0))?;
                }
                Ok(h)
            }
        }
    }

    /// Closed-form inverse of the Renyi face Hessian on a face where all
    /// coordinates are positive: `g^{ab} = -x_a x_b + delta_{ab} x_a / xi_a`.
    pub fn renyi_inverse_face_hessian(
        &self,
        x: &[f64],
        support: &[usize],
    ) -> Result<DMatrix<f64>, PenaltyError> {
        let PenaltyKind::Renyi { q } = self.kind else {
            return Err(PenaltyError::NotDecomposable);
        };
        for &a in support {
            if x[a] <= 0.0 {
                return Err(PenaltyError::ZeroOnSupport(a));
            }
        }
        let m = support.len();
        let s: f64 = support.iter().map(|&a| x[a].powf(q)).sum();
        let xi: Vec<f64> = support
            .iter()
            .map(|&a| q * x[a].powf(q - 1.0) / s)
            .collect();
        let mut g = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let mut v = -x[support[i]] * x[support[j]];
                if i == j {
                    v += x[support[i]] / xi[i];
                }
                g[(i, j)] = v;
            }
        }
        Ok(g)
    }

    /// Lower bound on the strong convexity constant of `h` over the simplex.
    ///
    /// Closed-form kernels with `theta'' >= 1` on (0, 1] return the certified
    /// value 1. Tsallis with `q > 2` and Renyi return a sampled estimate of
    /// the smallest restricted-Hessian eigenvalue over face interiors,
    /// scaled down by 0.9 and floored at 1e-6; an underestimate keeps every
    /// inequality that consumes it sound.
    pub fn convexity_constant(&self) -> f64 {
        match self.effective() {
            PenaltyKind::Gibbs | PenaltyKind::Quadratic | PenaltyKind::LogBarrier => 1.0,
            PenaltyKind::Tsallis { q } if q <= 2.0 => 1.0,
            _ => self.estimate_convexity_constant(),
        }
    }

    fn estimate_convexity_constant(&self) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de);
        let mut min_eig = f64::INFINITY;
        // Faces of a fixed size are interchangeable for the kinds that reach
        // here (coordinate-symmetric penalties), so one representative face
        // per size suffices.
        for m in 2..=self.n {
            let support: Vec<usize> = (0..m).collect();
            for _ in 0..10_000 {
                let mut x = vec![0.0; self.n];
                let mut sum = 0.0;
                for &a in &support {
                    let e = -(rng.gen::<f64>()).ln();
                    x[a] = e;
                    sum += e;
                }
                for &a in &support {
                    x[a] /= sum;
                }
                if support.iter().any(|&a| x[a] < 1e-12) {
                    continue;
                }
                let h = match self.face_hessian(&x, &support) {
                    Ok(h) => h,
                    Err(_) => continue,
                };
                min_eig = min_eig.min(restricted_min_eigenvalue(&h));
            }
        }
        (0.9 * min_eig).max(1e-6)
    }
}

/// Orthonormal basis of the tangent space `{z : sum z = 0}` of an
/// m-dimensional face, as the columns of an m x (m-1) matrix.
pub fn tangent_basis(m: usize) -> DMatrix<f64> {
    let mut basis = DMatrix::zeros(m, m - 1);
    for j in 0..m - 1 {
        // Gram-Schmidt closed form on e_0 + ... + e_j - (j+1) e_{j+1}
        let scale = 1.0 / (((j + 1) * (j + 2)) as f64).sqrt();
        for i in 0..=j {
            basis[(i, j)] = scale;
        }
        basis[(j + 1, j)] = -((j + 1) as f64) * scale;
    }
    basis
}

/// Project an ambient symmetric matrix onto the tangent space of the face
/// and return its smallest eigenvalue.
pub fn restricted_min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    let m = h.nrows();
    if m < 2 {
        return f64::INFINITY;
    }
    let basis = tangent_basis(m);
    let restricted = basis.transpose() * h * &basis;
    restricted
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
}

/// Euclidean norm of the tangential component of a face gradient; this is
/// the quantity that blows up near the boundary for steep penalties.
pub fn tangential_gradient_norm(grad: &[f64], support: &[usize]) -> f64 {
    let m = support.len() as f64;
    let mean: f64 = support.iter().map(|&a| grad[a]).sum::<f64>() / m;
    support
        .iter()
        .map(|&a| (grad[a] - mean).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn parse_penalty(s: &str, n: usize) -> Result<PenaltySpec, PenaltyError> {
    PenaltySpec::parse(s, n)
}
