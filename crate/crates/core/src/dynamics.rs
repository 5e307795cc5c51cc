//! Vector fields and integrators: score-space learning dynamics driven by
//! regularized choice maps, the induced strategy-space fields with their
//! named special cases, related score-based models, and the unpenalized
//! exact-argmax process.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::choice::{self, ChoiceError};
use crate::game::{self, Game, StrategyProfile, SUPPORT_THRESHOLD};
use crate::penalty::{PenaltyError, PenaltySpec, TSALLIS_GIBBS_TOL};
use crate::trajectory::{
    RunMetadata, SelectionEvent, SupportEvent, Trajectory, TrajectoryError, UrlData,
};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("spec expects {expected} players, game has {got}")]
    PlayerCount { expected: usize, got: usize },
    #[error("rate gamma_{0} must be positive, got {1}")]
    BadRate(usize, f64),
    #[error("variant requires per-player penalties")]
    MissingPenalties,
    #[error("penalty for player {0} has dimension {1}, game expects {2}")]
    PenaltyDimension(usize, usize, usize),
    #[error("discount factor must lie in (0, 1], got {0}")]
    BadDiscount(f64),
    #[error("warm-up length tau must be positive, got {0}")]
    BadTau(f64),
    #[error("variant requires {0} as its initial state")]
    WrongInitKind(&'static str),
    #[error("initial condition for player {0} has length {1}, game expects {2}")]
    InitDimension(usize, usize, usize),
    #[error("score of player {player} became non-positive at t = {t}")]
    NonPositiveScore { player: usize, t: f64 },
    #[error("payoffs must lie strictly inside (0, 1) for this model")]
    PayoffsNotNormalized,
    #[error("interior initial strategies required for this variant")]
    NotInterior,
    #[error("non-finite state at t = {0}")]
    NonFiniteState(f64),
    #[error("step rejected at t = {t}: simplex drift {drift:.3e} exceeds 1e-7")]
    SimplexDrift { t: f64, drift: f64 },
    #[error("step rejected at t = {t}: negative overshoot {overshoot:.3e} beyond the clamp bound")]
    Overshoot { t: f64, overshoot: f64 },
    #[error("time step must be positive and horizon nonnegative")]
    BadTimeGrid,
    #[error("singular face system for player {0}")]
    SingularFace(usize),
    #[error(transparent)]
    Choice(#[from] ChoiceError),
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error(transparent)]
    Game(#[from] game::GameError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Tie breaking for the exact argmax correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    LowestIndex,
    UniformMix,
}

/// Ties in the exact argmax use this tolerance on score differences.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Strategy-space vector fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Inverse-face-Hessian field of the per-player penalties.
    GenericRld,
    Replicator,
    Projection,
    QReplicator {
        q: f64,
    },
    Renyi {
        q: f64,
    },
    LogBarrier,
}

impl FieldKind {
    /// Nonsteep fields can drive orbits into the boundary; their direct
    /// integration runs in extended-solution mode.
    pub fn is_nonsteep(&self) -> bool {
        match self {
            FieldKind::Projection => true,
            FieldKind::QReplicator { q } => *q > 1.0 + TSALLIS_GIBBS_TOL,
            _ => false,
        }
    }
}

/// Which learning process to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Score aggregation through per-player choice maps.
    ScoreRl,
    /// Exponentially discounted score aggregation.
    Discounted { lambda: f64 },
    /// Score-proportional choice with play-weighted score updates.
    ErevRoth,
    /// Direct probability adjustment with payoffs in (0, 1).
    CrossBs,
    /// Exact argmax of the scores (a differential inclusion; the tie rule
    /// selects).
    Unpenalized { tie: TieRule, tau: f64 },
    /// Integrate a strategy-space field directly.
    DirectField { kind: FieldKind },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    pub variant: Variant,
    /// Per-player penalties; required by the score and generic-field
    /// variants, ignored by the others.
    pub penalties: Option<Vec<PenaltySpec>>,
    /// Per-player rates `gamma_k`.
    pub rates: Vec<f64>,
}

impl DynamicsSpec {
    pub fn score_rl(penalties: Vec<PenaltySpec>) -> Self {
        let n = penalties.len();
        DynamicsSpec {
            variant: Variant::ScoreRl,
            penalties: Some(penalties),
            rates: vec![1.0; n],
        }
    }

    pub fn direct(kind: FieldKind, num_players: usize) -> Self {
        DynamicsSpec {
            variant: Variant::DirectField { kind },
            penalties: None,
            rates: vec![1.0; num_players],
        }
    }

    pub fn validate(&self, game: &Game) -> Result<(), DynamicsError> {
        let n = game.num_players();
        if self.rates.len() != n {
            return Err(DynamicsError::PlayerCount {
                expected: self.rates.len(),
                got: n,
            });
        }
        for (k, &g) in self.rates.iter().enumerate() {
            if !(g > 0.0) {
                return Err(DynamicsError::BadRate(k, g));
            }
        }
        let needs_penalties = matches!(
            self.variant,
            Variant::ScoreRl
                | Variant::Discounted { .. }
                | Variant::DirectField {
                    kind: FieldKind::GenericRld
                }
        );
        if needs_penalties {
            let Some(ps) = &self.penalties else {
                return Err(DynamicsError::MissingPenalties);
            };
            if ps.len() != n {
                return Err(DynamicsError::PlayerCount {
                    expected: ps.len(),
                    got: n,
                });
            }
            for (k, p) in ps.iter().enumerate() {
                if p.n != game.num_actions(k) {
                    return Err(DynamicsError::PenaltyDimension(k, p.n, game.num_actions(k)));
                }
            }
        }
        match self.variant {
            Variant::Discounted { lambda } if !(lambda > 0.0 && lambda <= 1.0) => {
                Err(DynamicsError::BadDiscount(lambda))
            }
            Variant::Unpenalized { tau, .. } if !(tau > 0.0) => Err(DynamicsError::BadTau(tau)),
            _ => Ok(()),
        }
    }

    /// True when the integrated trajectory carries score vectors.
    pub fn stores_scores(&self) -> bool {
        !matches!(self.variant, Variant::DirectField { .. } | Variant::CrossBs)
    }

    pub fn extended_solution(&self) -> bool {
        matches!(self.variant, Variant::DirectField { kind } if kind.is_nonsteep())
    }
}

/// Initial state: scores for the score-driven variants, strategies for
/// direct fields (and for unpenalized runs, a constant warm-up profile).
#[derive(Debug, Clone)]
pub enum Init {
    Scores(Vec<Vec<f64>>),
    Strategies(Vec<Vec<f64>>),
}

impl Init {
    pub fn zeros(game: &Game) -> Self {
        Init::Scores(game.action_counts().iter().map(|&n| vec![0.0; n]).collect())
    }

    pub fn uniform(game: &Game) -> Self {
        Init::Strategies(
            game.action_counts()
                .iter()
                .map(|&n| vec![1.0 / n as f64; n])
                .collect(),
        )
    }

    fn check_dims(&self, game: &Game) -> Result<(), DynamicsError> {
        let parts = match self {
            Init::Scores(v) | Init::Strategies(v) => v,
        };
        if parts.len() != game.num_players() {
            return Err(DynamicsError::PlayerCount {
                expected: parts.len(),
                got: game.num_players(),
            });
        }
        for (k, p) in parts.iter().enumerate() {
            if p.len() != game.num_actions(k) {
                return Err(DynamicsError::InitDimension(
                    k,
                    p.len(),
                    game.num_actions(k),
                ));
            }
        }
        Ok(())
    }
}

/// Flat-state layout shared by the integrators.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub counts: Vec<usize>,
    pub offsets: Vec<usize>,
    pub dim: usize,
}

impl Layout {
    pub fn of(game: &Game) -> Self {
        let counts = game.action_counts().to_vec();
        let mut offsets = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0;
        for &c in &counts {
            offsets.push(acc);
            acc += c;
        }
        offsets.push(acc);
        Layout {
            counts,
            offsets,
            dim: acc,
        }
    }

    pub fn player<'a>(&self, flat: &'a [f64], k: usize) -> &'a [f64] {
        &flat[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn player_mut<'a>(&self, flat: &'a mut [f64], k: usize) -> &'a mut [f64] {
        &mut flat[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn flatten(&self, parts: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim);
        for p in parts {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn split(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        (0..self.counts.len())
            .map(|k| flat[self.offsets[k]..self.offsets[k + 1]].to_vec())
            .collect()
    }
}

/// Allocation-free payoff vectors for all players from a flat strategy
/// state; precomputes the pure-profile table once.
pub(crate) struct PayoffEval<'g> {
    game: &'g Game,
    layout: Layout,
    profiles: Vec<Vec<usize>>,
}

impl<'g> PayoffEval<'g> {
    pub fn new(game: &'g Game) -> Self {
        PayoffEval {
            game,
            layout: Layout::of(game),
            profiles: game.profiles().collect(),
        }
    }

    /// Write all players' payoff vectors (flat layout) into `out`.
    pub fn payoff_vectors_into(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let n = self.layout.counts.len();
        for (idx, profile) in self.profiles.iter().enumerate() {
            for k in 0..n {
                let mut w = 1.0;
                for (l, &a) in profile.iter().enumerate() {
                    if l != k {
                        w *= x[self.layout.offsets[l] + a];
                    }
                }
                if w != 0.0 {
                    out[self.layout.offsets[k] + profile[k]] += w * self.game.payoff_tensor(k)[idx];
                }
            }
        }
    }
}

/// Score-space field: plain aggregation scales the payoff vector by each
/// player's rate; the discounted variant adds `ln(lambda) y`.
pub fn score_field(
    game: &Game,
    spec: &DynamicsSpec,
    scores: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, DynamicsError> {
    spec.validate(game)?;
    let (Variant::ScoreRl | Variant::Discounted { .. }) = spec.variant else {
        return Err(DynamicsError::WrongInitKind("scores"));
    };
    let layout = Layout::of(game);
    let y = layout.flatten(scores);
    if y.len() != layout.dim {
        return Err(DynamicsError::InitDimension(0, y.len(), layout.dim));
    }
    let penalties = spec.penalties.as_ref().expect("validated");
    let mut x = vec![0.0; layout.dim];
    for k in 0..game.num_players() {
        let xk = choice::choice_map(&penalties[k], layout.player(&y, k))?;
        layout.player_mut(&mut x, k).copy_from_slice(&xk);
    }
    let eval = PayoffEval::new(game);
    let mut v = vec![0.0; layout.dim];
    eval.payoff_vectors_into(&x, &mut v);
    let mut dy = vec![0.0; layout.dim];
    for k in 0..game.num_players() {
        let g = spec.rates[k];
        for i in layout.offsets[k]..layout.offsets[k + 1] {
            dy[i] = g * v[i];
        }
    }
    if let Variant::Discounted { lambda } = spec.variant {
        if lambda < 1.0 {
            let ln_l = lambda.ln();
            for i in 0..layout.dim {
                dy[i] += ln_l * y[i];
            }
        }
    }
    Ok(layout.split(&dy))
}

/// Replicator field on one simplex: `x_a (v_a - <x, v>)`.
pub fn replicator_field(x: &[f64], v: &[f64]) -> Vec<f64> {
    let mean: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
    x.iter().zip(v).map(|(a, b)| a * (b - mean)).collect()
}

/// Projection field on one simplex: payoff minus its mean over the support,
/// zero off the support.
pub fn projection_field(x: &[f64], v: &[f64]) -> Vec<f64> {
    let support = game::support_of(x);
    let mean: f64 = support.iter().map(|&a| v[a]).sum::<f64>() / support.len() as f64;
    let mut dx = vec![0.0; x.len()];
    for &a in &support {
        dx[a] = v[a] - mean;
    }
    dx
}

/// Deformed replicator field with weights `x^{2-q}`; dispatches to the
/// replicator at `q = 1` and the projection at `q = 2`, which are the same
/// fields on shared arithmetic paths.
pub fn q_replicator_field(x: &[f64], v: &[f64], q: f64) -> Vec<f64> {
    if (q - 1.0).abs() < TSALLIS_GIBBS_TOL {
        return replicator_field(x, v);
    }
    if (q - 2.0).abs() < TSALLIS_GIBBS_TOL {
        return projection_field(x, v);
    }
    let support = game::support_of(x);
    let mut dx = vec![0.0; x.len()];
    let mut wsum = 0.0;
    let mut wv = 0.0;
    for &a in &support {
        let w = x[a].powf(2.0 - q);
        wsum += w;
        wv += w * v[a];
    }
    let mean = wv / wsum;
    for &a in &support {
        dx[a] = x[a].powf(2.0 - q) * (v[a] - mean);
    }
    dx
}

/// Log-barrier field: weights `x^2` (the `q -> 0` member of the deformed
/// family).
pub fn log_barrier_field(x: &[f64], v: &[f64]) -> Vec<f64> {
    let support = game::support_of(x);
    let mut dx = vec![0.0; x.len()];
    let mut wsum = 0.0;
    let mut wv = 0.0;
    for &a in &support {
        let w = x[a] * x[a];
        wsum += w;
        wv += w * v[a];
    }
    let mean = wv / wsum;
    for &a in &support {
        dx[a] = x[a] * x[a] * (v[a] - mean);
    }
    dx
}

/// Field induced by the Renyi penalty; the formula extends algebraically to
/// any `q != 1` and collapses to the replicator in the `q -> 1` limit.
pub fn renyi_field(x: &[f64], v: &[f64], q: f64) -> Vec<f64> {
    if (q - 1.0).abs() < TSALLIS_GIBBS_TOL {
        return replicator_field(x, v);
    }
    let support = game::support_of(x);
    let mut dx = vec![0.0; x.len()];
    let sq: f64 = support.iter().map(|&a| x[a].powf(q)).sum();
    let s2q: f64 = support.iter().map(|&a| x[a].powf(2.0 - q)).sum();
    let s_agg = sq * s2q / q;
    let xi = |a: usize| q * x[a].powf(q - 1.0) / sq;
    let xv: f64 = support.iter().map(|&a| x[a] * v[a]).sum();
    let xv_xi: f64 = support.iter().map(|&a| x[a] / xi(a) * v[a]).sum();
    for &a in &support {
        let xia = xi(a);
        dx[a] = x[a] / xia * v[a] + x[a] * (s_agg - 1.0 / xia) / (1.0 - s_agg) * xv
            - x[a] * (1.0 - 1.0 / xia) / (1.0 - s_agg) * xv_xi;
    }
    dx
}

/// Inverse-face-Hessian field of an arbitrary penalty (the matrix route):
/// `dx = (Ginv - g g^T / G) v` on the support face.
pub fn generic_rld_field(h: &PenaltySpec, x: &[f64], v: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    let support = game::support_of(x);
    let m = support.len();
    let hess = h.face_hessian(x, &support)?;
    let inv = hess
        .clone()
        .try_inverse()
        .ok_or(DynamicsError::SingularFace(0))?;
    let mut row_sums = vec![0.0; m];
    let mut grand = 0.0;
    for i in 0..m {
        for j in 0..m {
            row_sums[i] += inv[(i, j)];
        }
        grand += row_sums[i];
    }
    let mut dx = vec![0.0; x.len()];
    for i in 0..m {
        let mut acc = 0.0;
        for j in 0..m {
            acc += (inv[(i, j)] - row_sums[i] * row_sums[j] / grand) * v[support[j]];
        }
        dx[support[i]] = acc;
    }
    Ok(dx)
}

/// Harmonic-aggregate form of the same field for decomposable penalties
/// (the kernel route): `dx_a = w_a (v_a - sum w v / sum w)` with
/// `w_a = 1 / theta''(x_a)`. Kept separate from [`generic_rld_field`] so
/// the two routes can check each other.
pub fn decomposable_rld_field(
    h: &PenaltySpec,
    x: &[f64],
    v: &[f64],
) -> Result<Vec<f64>, DynamicsError> {
    let support = game::support_of(x);
    let mut w = vec![0.0; x.len()];
    let mut wsum = 0.0;
    let mut wv = 0.0;
    for &a in &support {
        let wa = 1.0 / h.kernel_second_derivative(x[a].min(1.0))?;
        w[a] = wa;
        wsum += wa;
        wv += wa * v[a];
    }
    let mean = wv / wsum;
    let mut dx = vec![0.0; x.len()];
    for &a in &support {
        dx[a] = w[a] * (v[a] - mean);
    }
    Ok(dx)
}

/// Strategy-space field of the requested kind at a profile; off-support
/// components are zero.
pub fn strategy_field(
    game: &Game,
    kind: &FieldKind,
    penalties: Option<&[PenaltySpec]>,
    x: &StrategyProfile,
) -> Result<Vec<Vec<f64>>, DynamicsError> {
    let mut out = Vec::with_capacity(game.num_players());
    for k in 0..game.num_players() {
        let v = game::payoff_vector(game, k, x)?;
        let xk = x.player(k);
        let dx = match kind {
            FieldKind::Replicator => replicator_field(xk, &v),
            FieldKind::Projection => projection_field(xk, &v),
            FieldKind::QReplicator { q } => q_replicator_field(xk, &v, *q),
            FieldKind::Renyi { q } => renyi_field(xk, &v, *q),
            FieldKind::LogBarrier => log_barrier_field(xk, &v),
            FieldKind::GenericRld => {
                let ps = penalties.ok_or(DynamicsError::MissingPenalties)?;
                generic_rld_field(&ps[k], xk, &v)?
            }
        };
        out.push(dx);
    }
    Ok(out)
}

/// Play-weighted score field: `dy_a = x_a v_a` with `x = y / sum y`.
pub fn erev_roth_field(game: &Game, scores: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, DynamicsError> {
    let layout = Layout::of(game);
    let mut x = vec![0.0; layout.dim];
    for (k, yk) in scores.iter().enumerate() {
        if yk.len() != layout.counts[k] {
            return Err(DynamicsError::InitDimension(k, yk.len(), layout.counts[k]));
        }
        let s: f64 = yk.iter().sum();
        if yk.iter().any(|&v| !(v > 0.0)) {
            return Err(DynamicsError::NonPositiveScore { player: k, t: 0.0 });
        }
        for (a, &v) in yk.iter().enumerate() {
            x[layout.offsets[k] + a] = v / s;
        }
    }
    let eval = PayoffEval::new(game);
    let mut v = vec![0.0; layout.dim];
    eval.payoff_vectors_into(&x, &mut v);
    let mut dy = vec![0.0; layout.dim];
    for i in 0..layout.dim {
        dy[i] = x[i] * v[i];
    }
    Ok(layout.split(&dy))
}

/// Direct probability-adjustment field; requires payoffs in (0, 1). Equals
/// the replicator field after expanding the cross terms.
pub fn cross_bs_field(game: &Game, x: &StrategyProfile) -> Result<Vec<Vec<f64>>, DynamicsError> {
    check_cross_payoffs(game)?;
    let mut out = Vec::with_capacity(game.num_players());
    for k in 0..game.num_players() {
        let v = game::payoff_vector(game, k, x)?;
        let xk = x.player(k);
        let n = xk.len();
        let mut dx = vec![0.0; n];
        for a in 0..n {
            let mut acc = xk[a] * (1.0 - xk[a]) * v[a];
            for b in 0..n {
                if b != a {
                    acc -= xk[b] * xk[a] * v[b];
                }
            }
            dx[a] = acc;
        }
        out.push(dx);
    }
    Ok(out)
}

fn check_cross_payoffs(game: &Game) -> Result<(), DynamicsError> {
    for k in 0..game.num_players() {
        if game.payoff_tensor(k).iter().any(|&u| !(u > 0.0 && u < 1.0)) {
            return Err(DynamicsError::PayoffsNotNormalized);
        }
    }
    Ok(())
}

fn rk4_step<F>(f: &mut F, state: &mut [f64], t: f64, dt: f64, scratch: &mut Rk4Scratch)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = state.len();
    let Rk4Scratch {
        k1,
        k2,
        k3,
        k4,
        tmp,
    } = scratch;
    f(t, state, k1);
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * dt * k1[i];
    }
    f(t + 0.5 * dt, tmp, k2);
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * dt * k2[i];
    }
    f(t + 0.5 * dt, tmp, k3);
    for i in 0..n {
        tmp[i] = state[i] + dt * k3[i];
    }
    f(t + dt, tmp, k4);
    for i in 0..n {
        state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Rk4Scratch {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

fn metadata_for(
    game: &Game,
    spec: &DynamicsSpec,
    t_end: f64,
    dt: f64,
    integrator: &str,
) -> RunMetadata {
    RunMetadata {
        game_hash: game.hash(),
        action_counts: game.action_counts().to_vec(),
        spec: spec.clone(),
        t_end,
        dt,
        integrator: integrator.to_string(),
        has_scores: spec.stores_scores(),
        extended_solution: spec.extended_solution(),
    }
}

fn time_steps(t_end: f64, dt: f64) -> Result<usize, DynamicsError> {
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(DynamicsError::BadTimeGrid);
    }
    Ok((t_end / dt).round() as usize)
}

/// Integrate the configured dynamics with a fixed-step classical
/// Runge-Kutta scheme (the unpenalized variant uses its own stepper).
///
/// Score variants require `Init::Scores`; direct fields require
/// `Init::Strategies` (interior for steep kinds). The unpenalized variant
/// accepts scores (arbitrary initialization) or a constant warm-up profile.
pub fn integrate(
    game: &Game,
    spec: &DynamicsSpec,
    init: &Init,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, DynamicsError> {
    spec.validate(game)?;
    init.check_dims(game)?;
    match spec.variant {
        Variant::ScoreRl | Variant::Discounted { .. } => {
            integrate_scores(game, spec, init, t_end, dt)
        }
        Variant::ErevRoth => integrate_erev_roth(game, spec, init, t_end, dt),
        Variant::CrossBs => integrate_cross(game, spec, init, t_end, dt),
        Variant::DirectField { kind } => integrate_direct(game, spec, kind, init, t_end, dt),
        Variant::Unpenalized { tie, tau } => {
            integrate_unpenalized(game, spec, tie, tau, init, t_end, dt)
        }
    }
}

fn integrate_scores(
    game: &Game,
    spec: &DynamicsSpec,
    init: &Init,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, DynamicsError> {
    let Init::Scores(y0) = init else {
        return Err(DynamicsError::WrongInitKind("scores"));
    };
    let layout = Layout::of(game);
    let penalties = spec.penalties.clone().expect("validated");
    let rates = spec.rates.clone();
    let lambda_ln = match spec.variant {
        Variant::Discounted { lambda } if lambda < 1.0 => Some(lambda.ln()),
        _ => None,
    };
    let steps = time_steps(t_end, dt)?;
    let eval = PayoffEval::new(game);

    let mut y = layout.flatten(y0);
    let mut x = vec![0.0; layout.dim];
    let n_players = game.num_players();

    let choice_into = |y: &[f64], x: &mut [f64]| -> Result<(), DynamicsError> {
        for k in 0..n_players {
            let xk =
                choice::choice_map(&penalties[k], &y[layout.offsets[k]..layout.offsets[k + 1]])?;
            x[layout.offsets[k]..layout.offsets[k + 1]].copy_from_slice(&xk);
        }
        Ok(())
    };

    let mut traj = Trajectory::new(
        layout.counts.clone(),
        true,
        metadata_for(game, spec, t_end, dt, "rk4"),
    );
    choice_into(&y, &mut x)?;
    traj.push(0.0, &x, Some(&y))?;

    let mut scratch = Rk4Scratch::new(layout.dim);
    let mut solver_error: Option<DynamicsError> = None;
    for step in 0..steps {
        let t = step as f64 * dt;
        {
            let mut field = |_t: f64, y_state: &[f64], dy: &mut [f64]| {
                let mut xs = vec![0.0; layout.dim];
                for k in 0..n_players {
                    match choice::choice_map(
                        &penalties[k],
                        &y_state[layout.offsets[k]..layout.offsets[k + 1]],
                    ) {
                        Ok(xk) => xs[layout.offsets[k]..layout.offsets[k + 1]].copy_from_slice(&xk),
                        Err(e) => {
                            solver_error.get_or_insert(DynamicsError::Choice(e));
                            dy.fill(0.0);
                            return;
                        }
                    }
                }
                let mut vs = vec![0.0; layout.dim];
                eval.payoff_vectors_into(&xs, &mut vs);
                for k in 0..n_players {
                    let g = rates[k];
                    for i in layout.offsets[k]..layout.offsets[k + 1] {
                        dy[i] = g * vs[i];
                    }
                }
                if let Some(ln_l) = lambda_ln {
                    for i in 0..dy.len() {
                        dy[i] += ln_l * y_state[i];
                    }
                }
            };
            rk4_step(&mut field, &mut y, t, dt, &mut scratch);
        }
        if let Some(e) = solver_error.take() {
            return Err(e);
        }
        let t_next = (step + 1) as f64 * dt;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteState(t_next));
        }
        choice_into(&y, &mut x)?;
        traj.push(t_next, &x, Some(&y))?;
    }
    Ok(traj)
}

fn integrate_erev_roth(
    game: &Game,
    spec: &DynamicsSpec,
    init: &Init,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, DynamicsError> {
    let Init::Scores(y0) = init else {
        return Err(DynamicsError::WrongInitKind("positive scores"));
    };
    let layout = Layout::of(game);
    for (k, yk) in y0.iter().enumerate() {
        if yk.iter().any(|&v| !(v > 0.0)) {
            return Err(DynamicsError::NonPositiveScore { player: k, t: 0.0 });
        }
    }
    let steps = time_steps(t_end, dt)?;
    let eval = PayoffEval::new(game);
    let rates = spec.rates.clone();
    let n_players = game.num_players();

    let normalize = |y: &[f64], x: &mut [f64]| {
        for k in 0..n_players {
            let yk = &y[layout.offsets[k]..layout.offsets[k + 1]];
            let s: f64 = yk.iter().sum();
            for (i, &v) in yk.iter().enumerate() {
                x[layout.offsets[k] + i] = v / s;
            }
        }
    };

    let mut y = layout.flatten(y0);
    let mut x = vec![0.0; layout.dim];
    let mut traj = Trajectory::new(
        layout.counts.clone(),
        true,
        metadata_for(game, spec, t_end, dt, "rk4"),
    );
    normalize(&y, &mut x);
    traj.push(0.0, &x, Some(&y))?;

    let mut scratch = Rk4Scratch::new(layout.dim);
    for step in 0..steps {
        let t = step as f64 * dt;
        let mut field = |_t: f64, y_state: &[f64], dy: &mut [f64]| {
            let mut xs = vec![0.0; layout.dim];
            normalize(y_state, &mut xs);
            let mut vs = vec![0.0; layout.dim];
            eval.payoff_vectors_into(&xs, &mut vs);
            for k in 0..n_players {
                let g = rates[k];
                for i in layout.offsets[k]..layout.offsets[k + 1] {
                    dy[i] = g * xs[i] * vs[i];
                }
            }
        };
        rk4_step(&mut field, &mut y, t, dt, &mut scratch);
        let t_next = (step + 1) as f64 * dt;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteState(t_next));
        }
        for k in 0..n_players {
            if layout.player(&y, k).iter().any(|&v| !(v > 0.0)) {
                return Err(DynamicsError::NonPositiveScore {
                    player: k,
                    t: t_next,
                });
            }
        }
        normalize(&y, &mut x);
        traj.push(t_next, &x, Some(&y))?;
    }
    Ok(traj)
}

fn integrate_cross(
    game: &Game,
    spec: &DynamicsSpec,
    init: &Init,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, DynamicsError> {
    check_cross_payoffs(game)?;
    let Init::Strategies(x0) = init else {
        return Err(DynamicsError::WrongInitKind("interior strategies"));
    };
    if x0.iter().flatten().any(|&v| !(v > 0.0)) {
        return Err(DynamicsError::NotInterior);
    }
    integrate_field_state(
        game,
        spec,
        init,
        t_end,
        dt,
        move |eval, layout, x, dx, rates| {
            let mut vs = vec![0.0; layout.dim];
            eval.payoff_vectors_into(x, &mut vs);
            for k in 0..layout.counts.len() {
                let xk = layout.player(x, k);
                let vk = &vs[layout.offsets[k]..layout.offsets[k + 1]];
                let n = xk.len();
                for a in 0..n {
                    let mut acc = xk[a] * (1.0 - xk[a]) * vk[a];
                    for b in 0..n {
                        if b != a {
                            acc -= xk[b] * xk[a] * vk[b];
                        }
                    }
                    dx[layout.offsets[k] + a] = rates[k] * acc;
                }
            }
        },
    )
}

fn integrate_direct(
    game: &Game,
    spec: &DynamicsSpec,
    kind: FieldKind,
    init: &Init,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, DynamicsError> {
    let Init::Strategies(x0) = init else {
        return Err(DynamicsError::WrongInitKind("strategies"));
    };
    let steep_kind = !kind.is_nonsteep();
    if steep_kind && x0.iter().flatten().any(|&v| !(v > 0.0)) {
        return Err(DynamicsError::NotInterior);
    }
    let penalties = spec.penalties.clone();
    integrate_field_state(
        game,
        spec,
        init,
        t_end,
        dt,
        move |eval, layout, x, dx, rates| {
            let mut vs = vec![0.0; layout.dim];
            eval.payoff_vectors_into(x, &mut vs);
            for k in 0..layout.counts.len() {
                let xk = layout.player(x, k);
                let vk = &vs[layout.offsets[k]..layout.offsets[k + 1]];
                let dxk = match kind {
                    FieldKind::Replicator => replicator_field(xk, vk),
                    FieldKind::Projection => projection_field(xk, vk),
                    FieldKind::QReplicator { q } => q_replicator_field(xk, vk, q),
                    FieldKind::Renyi { q } => renyi_field(xk, vk, q),
                    FieldKind::LogBarrier => log_barrier_field(xk, vk),
                    FieldKind::GenericRld => {
                        let ps = penalties.as_ref().expect("validated");
                        generic_rld_field(&ps[k], xk, vk).unwrap_or_else(|_| vec![0.0; xk.len()])
                    }
                };
                for (i, d) in dxk.iter().enumerate() {
                    dx[layout.offsets[k] + i] = rates[k] * d;
                }
            }
        },
    )
}

/// Shared strategy-state integrator: RK4 plus the extended-solution clamp.
/// Small negative overshoots (up to `dt` times a payoff-scale bound) are
/// clamped to the face and recorded; larger ones reject the step.
fn integrate_field_state<F>(
    game: &Game,
    spec: &DynamicsSpec,
    init: &Init,
    t_end: f64,
    dt: f64,
    mut field: F,
) -> Result<Trajectory, DynamicsError>
where
    F: FnMut(&PayoffEval, &Layout, &[f64], &mut [f64], &[f64]),
{
    let Init::Strategies(x0) = init else {
        return Err(DynamicsError::WrongInitKind("strategies"));
    };
    let layout = Layout::of(game);
    let steps = time_steps(t_end, dt)?;
    let eval = PayoffEval::new(game);
    let rates = spec.rates.clone();
    let max_rate = rates.iter().fold(0.0f64, |m, &g| m.max(g));
    let clamp_bound = dt * max_rate * (2.0 * game.payoff_bound() + 1.0);

    let mut x = layout.flatten(x0);
    // normalize away input rounding
    for k in 0..layout.counts.len() {
        let s: f64 = layout.player(&x, k).iter().sum();
        for v in layout.player_mut(&mut x, k) {
            *v /= s;
        }
    }
    let mut traj = Trajectory::new(
        layout.counts.clone(),
        false,
        metadata_for(game, spec, t_end, dt, "rk4"),
    );
    traj.push(0.0, &x, None)?;

    let mut scratch = Rk4Scratch::new(layout.dim);
    for step in 0..steps {
        let t = step as f64 * dt;
        let prev = x.clone();
        {
            let mut f = |_t: f64, state: &[f64], out: &mut [f64]| {
                // stage states may carry harmless negative round-off; the
                // fields only read supported coordinates
                field(&eval, &layout, state, out, &rates);
            };
            rk4_step(&mut f, &mut x, t, dt, &mut scratch);
        }
        let t_next = (step + 1) as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteState(t_next));
        }
        for k in 0..layout.counts.len() {
            let sum: f64 = layout.player(&x, k).iter().sum();
            if (sum - 1.0).abs() > 1e-7 {
                return Err(DynamicsError::SimplexDrift {
                    t: t_next,
                    drift: (sum - 1.0).abs(),
                });
            }
            let range = layout.offsets[k]..layout.offsets[k + 1];
            let mut clamped = false;
            for i in range.clone() {
                if x[i] < 0.0 {
                    if -x[i] > clamp_bound {
                        return Err(DynamicsError::Overshoot {
                            t: t_next,
                            overshoot: -x[i],
                        });
                    }
                    if prev[i] > SUPPORT_THRESHOLD {
                        traj.support_events.push(SupportEvent {
                            time: t_next,
                            player: k,
                            action: i - layout.offsets[k],
                        });
                    }
                    x[i] = 0.0;
                    clamped = true;
                }
            }
            if clamped {
                let s: f64 = x[range.clone()].iter().sum();
                for i in range {
                    x[i] /= s;
                }
            }
        }
        traj.push(t_next, &x, None)?;
    }
    Ok(traj)
}

/// Exact-argmax selection for one player under a tie rule.
pub fn argmax_selection(y: &[f64], tie: TieRule) -> (Vec<usize>, Vec<f64>) {
    let m = y.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let maximizers: Vec<usize> = (0..y.len())
        .filter(|&i| y[i] >= m - TIE_TOLERANCE)
        .collect();
    let mut x = vec![0.0; y.len()];
    match tie {
        TieRule::LowestIndex => x[maximizers[0]] = 1.0,
        TieRule::UniformMix => {
            let w = 1.0 / maximizers.len() as f64;
            for &i in &maximizers {
                x[i] = w;
            }
        }
    }
    (maximizers, x)
}

/// State of the unpenalized process: per-player scores, the running joint
/// average of play (warm-up mass included), and elapsed time.
#[derive(Debug, Clone)]
pub struct UrlState {
    pub scores: Vec<Vec<f64>>,
    /// Flat joint distribution over pure profiles, row-major.
    pub chi_bar: Vec<f64>,
    pub t: f64,
}

impl UrlState {
    /// Initialize from a constant warm-up profile played over `[-tau, 0)`;
    /// the initial scores are the warm-up payoff aggregates, so the
    /// marginal-payoff identity holds exactly from the start.
    pub fn from_warmup(
        game: &Game,
        rates: &[f64],
        tau: f64,
        profile: &StrategyProfile,
    ) -> Result<Self, DynamicsError> {
        let layout = Layout::of(game);
        let chi = game::CorrelatedStrategy::from_product(game, profile);
        let x_flat = layout.flatten(profile.strategies());
        let eval = PayoffEval::new(game);
        let mut v = vec![0.0; layout.dim];
        eval.payoff_vectors_into(&x_flat, &mut v);
        let mut y = vec![0.0; layout.dim];
        for k in 0..game.num_players() {
            for i in layout.offsets[k]..layout.offsets[k + 1] {
                y[i] = rates[k] * tau * v[i];
            }
        }
        Ok(UrlState {
            scores: layout.split(&y),
            chi_bar: chi.joint().to_vec(),
            t: 0.0,
        })
    }

    /// Initialize from explicit scores. The joint average starts at the
    /// uniform product, which in general breaks the marginal-payoff
    /// identity, so callers should not assert it in this mode.
    pub fn from_scores(game: &Game, scores: Vec<Vec<f64>>) -> Self {
        let uniform = StrategyProfile::uniform(game);
        let chi = game::CorrelatedStrategy::from_product(game, &uniform);
        UrlState {
            scores,
            chi_bar: chi.joint().to_vec(),
            t: 0.0,
        }
    }
}

/// What one unpenalized step observed before advancing.
#[derive(Debug, Clone)]
pub struct UrlStepInfo {
    /// Per player, the argmax set of the pre-step scores.
    pub maximizers: Vec<Vec<usize>>,
    /// The mixed strategies actually played (vertex or uniform over ties).
    pub played: Vec<Vec<f64>>,
    /// Deviation of the payoff against the averaged joint play from
    /// `y / (gamma (tau + t))` at the pre-step state.
    pub identity_gap: f64,
}

/// Advance the unpenalized process by one step: select from the argmax of
/// the scores under the tie rule, fold the played joint distribution into
/// the running average, and aggregate payoffs into the scores.
pub fn unpenalized_step(
    game: &Game,
    rates: &[f64],
    tie: TieRule,
    tau: f64,
    state: &mut UrlState,
    dt: f64,
) -> Result<UrlStepInfo, DynamicsError> {
    let layout = Layout::of(game);
    let n_players = game.num_players();
    let eval = PayoffEval::new(game);
    let joint_profiles: Vec<Vec<usize>> = game.profiles().collect();

    let mut x = vec![0.0; layout.dim];
    let mut maximizers = Vec::with_capacity(n_players);
    let mut played = Vec::with_capacity(n_players);
    for k in 0..n_players {
        let (m, xk) = argmax_selection(&state.scores[k], tie);
        x[layout.offsets[k]..layout.offsets[k + 1]].copy_from_slice(&xk);
        maximizers.push(m);
        played.push(xk);
    }
    let identity_gap = url_identity_gap(game, rates, tau, state, &joint_profiles);

    let mut v = vec![0.0; layout.dim];
    eval.payoff_vectors_into(&x, &mut v);
    let scale_old = tau + state.t;
    let scale_new = tau + state.t + dt;
    for (idx, profile) in joint_profiles.iter().enumerate() {
        let mut w = 1.0;
        for (k, &a) in profile.iter().enumerate() {
            w *= x[layout.offsets[k] + a];
        }
        state.chi_bar[idx] = (state.chi_bar[idx] * scale_old + w * dt) / scale_new;
    }
    for k in 0..n_players {
        for (a, yka) in state.scores[k].iter_mut().enumerate() {
            *yka += rates[k] * v[layout.offsets[k] + a] * dt;
        }
        if state.scores[k].iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteState(state.t + dt));
        }
    }
    state.t += dt;
    Ok(UrlStepInfo {
        maximizers,
        played,
        identity_gap,
    })
}

/// `max |v^c(chi_bar) - y / (gamma (tau + t))|` over players and actions.
fn url_identity_gap(
    game: &Game,
    rates: &[f64],
    tau: f64,
    state: &UrlState,
    joint_profiles: &[Vec<usize>],
) -> f64 {
    let denom = tau + state.t;
    let mut worst: f64 = 0.0;
    for k in 0..game.num_players() {
        for a in 0..game.num_actions(k) {
            let mut acc = 0.0;
            for (idx, profile) in joint_profiles.iter().enumerate() {
                if state.chi_bar[idx] == 0.0 {
                    continue;
                }
                let mut shifted = profile.clone();
                shifted[k] = a;
                acc += state.chi_bar[idx] * game.pure_payoff(k, &shifted);
            }
            let rhs = state.scores[k][a] / (rates[k] * denom);
            worst = worst.max((acc - rhs).abs());
        }
    }
    worst
}

fn integrate_unpenalized(
    game: &Game,
    spec: &DynamicsSpec,
    tie: TieRule,
    tau: f64,
    init: &Init,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, DynamicsError> {
    let layout = Layout::of(game);
    let steps = time_steps(t_end, dt)?;
    let rates = spec.rates.clone();

    // Warm-up pins scores and the joint average together; explicit scores
    // skip the identity tracking.
    let (mut state, track_identity) = match init {
        Init::Strategies(x_w) => {
            let profile = StrategyProfile::new(x_w.clone())?;
            (UrlState::from_warmup(game, &rates, tau, &profile)?, true)
        }
        Init::Scores(y0) => (UrlState::from_scores(game, y0.clone()), false),
    };

    let mut traj = Trajectory::new(
        layout.counts.clone(),
        true,
        metadata_for(game, spec, t_end, dt, "url-euler"),
    );
    let mut selection_events: Vec<SelectionEvent> = Vec::new();
    let mut identity_max_err: f64 = 0.0;
    let mut prev_maximizers: Option<Vec<Vec<usize>>> = None;

    for step in 0..=steps {
        let t = state.t;
        if step < steps {
            let y_flat = layout.flatten(&state.scores);
            let info = unpenalized_step(game, &rates, tie, tau, &mut state, dt)?;
            let x_flat = layout.flatten(&info.played);
            if prev_maximizers.as_ref() != Some(&info.maximizers) {
                selection_events.push(SelectionEvent {
                    time: t,
                    maximizers: info.maximizers.clone(),
                });
                prev_maximizers = Some(info.maximizers);
            }
            if track_identity {
                identity_max_err = identity_max_err.max(info.identity_gap);
            }
            traj.push(t, &x_flat, Some(&y_flat))?;
        } else {
            // final sample: selection from the terminal scores
            let y_flat = layout.flatten(&state.scores);
            let mut x_flat = vec![0.0; layout.dim];
            let mut maximizers = Vec::with_capacity(game.num_players());
            for k in 0..game.num_players() {
                let (m, xk) = argmax_selection(&state.scores[k], tie);
                x_flat[layout.offsets[k]..layout.offsets[k + 1]].copy_from_slice(&xk);
                maximizers.push(m);
            }
            if prev_maximizers.as_ref() != Some(&maximizers) {
                selection_events.push(SelectionEvent {
                    time: t,
                    maximizers,
                });
            }
            if track_identity {
                let joint_profiles: Vec<Vec<usize>> = game.profiles().collect();
                identity_max_err = identity_max_err.max(url_identity_gap(
                    game,
                    &rates,
                    tau,
                    &state,
                    &joint_profiles,
                ));
            }
            traj.push(t, &x_flat, Some(&y_flat))?;
        }
    }

    traj.url = Some(UrlData {
        chi_bar: state.chi_bar,
        selection_events,
        identity_max_err: if track_identity {
            Some(identity_max_err)
        } else {
            None
        },
        tau,
    });
    Ok(traj)
}
