//! Bregman divergence and Fenchel coupling: the primal and primal-dual
//! proximity measures driving the stability analysis.
//!
//! The directional derivative inside the Bregman divergence is classified in
//! closed form per penalty kind, so the steep/nonsteep dichotomy yields an
//! exact finite / `+inf` answer instead of a floating-point overflow.

use thiserror::Error;

use crate::choice::{self, ChoiceError};
use crate::ext::Extended;
use crate::game::StrategyProfile;
use crate::penalty::{PenaltyError, PenaltyKind, PenaltySpec};

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("simplex vector of length {got} does not match penalty dimension {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("per-player lists have mismatched lengths")]
    ProfileMismatch,
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error(transparent)]
    Choice(#[from] ChoiceError),
}

/// The face set `D_p`: simplex points whose support contains the support of
/// the base point `p`. The Bregman divergence from `p` is finite exactly
/// there (for steep penalties).
#[derive(Debug, Clone)]
pub struct FaceSet {
    base: Vec<f64>,
}

impl FaceSet {
    pub fn new(p: &[f64]) -> Self {
        FaceSet { base: p.to_vec() }
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// Membership: `supp(x)` contains `supp(p)` (exact zero test, matching
    /// the closed-form derivative classification below).
    pub fn contains(&self, x: &[f64]) -> bool {
        self.base.iter().zip(x).all(|(&p, &v)| p <= 0.0 || v > 0.0)
    }
}

/// One-sided derivative `h'(x; p - x)` as an extended real, computed in
/// closed form on the smallest face containing `x` and `x + eps (p - x)`.
fn directional_derivative(
    h: &PenaltySpec,
    x: &[f64],
    p: &[f64],
) -> Result<Extended, CouplingError> {
    match h.kind {
        PenaltyKind::Renyi { q } => {
            // steep: -inf whenever p needs a coordinate that x lacks
            for i in 0..x.len() {
                if x[i] <= 0.0 && p[i] > 0.0 {
                    return Ok(Extended::NegInf);
                }
            }
            let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] > 0.0).collect();
            let s: f64 = support.iter().map(|&a| x[a].powf(q)).sum();
            let mut acc = 0.0;
            for &a in &support {
                let xi = q * x[a].powf(q - 1.0) / s;
                acc += xi / (q - 1.0) * (p[a] - x[a]);
            }
            Ok(Extended::Finite(acc))
        }
        _ => {
            let mut acc = 0.0;
            for i in 0..x.len() {
                let z = p[i] - x[i];
                if x[i] > 0.0 {
                    acc += h.kernel_derivative(x[i].min(1.0))? * z;
                } else if z > 0.0 {
                    let (lo, _) = h.kernel_derivative_bounds()?;
                    match lo {
                        Extended::NegInf => return Ok(Extended::NegInf),
                        Extended::Finite(v) => acc += v * z,
                        Extended::PosInf => unreachable!("theta'(0+) is never +inf"),
                    }
                }
                // z == 0 on a dead coordinate contributes nothing even when
                // theta'(0+) = -inf: the segment stays on the face
            }
            Ok(Extended::Finite(acc))
        }
    }
}

/// Bregman divergence `D_h(p, x) = h(p) - h(x) - h'(x; p - x)`, extended
/// real valued: `+inf` when the derivative is `-inf` (steep penalty, `x`
/// outside the face set of `p`), or when the log barrier is pinned to the
/// boundary.
pub fn bregman(h: &PenaltySpec, p: &[f64], x: &[f64]) -> Result<Extended, CouplingError> {
    if p.len() != h.n || x.len() != h.n {
        return Err(CouplingError::Dimension {
            got: p.len().max(x.len()),
            expected: h.n,
        });
    }
    let hp = h.value(p)?;
    let hx = h.value(x)?;
    let (Extended::Finite(hp), Extended::Finite(hx)) = (hp, hx) else {
        // only the log barrier lands here; boundary states are infinitely
        // far in its geometry
        return Ok(Extended::PosInf);
    };
    match directional_derivative(h, x, p)? {
        Extended::NegInf => Ok(Extended::PosInf),
        Extended::Finite(d) => Ok(Extended::Finite(hp - hx - d)),
        Extended::PosInf => unreachable!("directional derivative is never +inf"),
    }
}

/// Fenchel coupling `F_h(p, y) = h(p) + h*(y) - <y, p>`; finite and
/// nonnegative for every finite score vector.
pub fn fenchel(h: &PenaltySpec, p: &[f64], y: &[f64]) -> Result<f64, CouplingError> {
    if p.len() != h.n {
        return Err(CouplingError::Dimension {
            got: p.len(),
            expected: h.n,
        });
    }
    let hp = h.finite_value(p)?;
    let conj = choice::conjugate_value(h, y)?;
    let pairing: f64 = y.iter().zip(p).map(|(a, b)| a * b).sum();
    Ok(hp + conj - pairing)
}

/// Fenchel coupling when `Q(y)` has already been computed.
pub fn fenchel_at(
    h: &PenaltySpec,
    p: &[f64],
    y: &[f64],
    x_of_y: &[f64],
) -> Result<f64, CouplingError> {
    let hp = h.finite_value(p)?;
    let conj = choice::conjugate_value_at(h, y, x_of_y)?;
    let pairing: f64 = y.iter().zip(p).map(|(a, b)| a * b).sum();
    Ok(hp + conj - pairing)
}

/// Sum of per-player Fenchel couplings.
pub fn fenchel_profile(
    penalties: &[PenaltySpec],
    p: &StrategyProfile,
    scores: &[Vec<f64>],
) -> Result<f64, CouplingError> {
    if penalties.len() != p.strategies().len() || penalties.len() != scores.len() {
        return Err(CouplingError::ProfileMismatch);
    }
    let mut total = 0.0;
    for (k, h) in penalties.iter().enumerate() {
        total += fenchel(h, p.player(k), &scores[k])?;
    }
    Ok(total)
}
