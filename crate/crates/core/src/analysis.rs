//! Trajectory diagnostics: time averages, extinction and rate envelopes,
//! zero-sum conservation, score-gap and best-response tracking, strict
//! convergence, and weak-dominance classification.

use serde::Serialize;
use thiserror::Error;

use crate::coupling::{self, CouplingError};
use crate::dynamics::DynamicsError;
use crate::game::{self, Game, GameError, StrategyProfile};
use crate::penalty::{PenaltyError, PenaltySpec};
use crate::trajectory::Trajectory;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("trajectory does not store score vectors")]
    NoScores,
    #[error("check requires a 2-player game, got {0} players")]
    NotTwoPlayer(usize),
    #[error("game is not zero-sum")]
    NotZeroSum,
    #[error("reference point is not an interior Nash equilibrium (max violation {0:.3e})")]
    NotInteriorNash(f64),
    #[error("profile is not a strict Nash equilibrium")]
    NotStrictNash,
    #[error("pair is not weakly dominated")]
    NotWeaklyDominated,
    #[error("rate envelopes require a decomposable penalty")]
    NotDecomposable,
    #[error("player {0} action {1} out of range")]
    BadIndex(usize, usize),
    #[error("trajectory and game have different action counts")]
    Mismatch,
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

fn check_nonempty(traj: &Trajectory) -> Result<(), AnalysisError> {
    if traj.is_empty() {
        Err(AnalysisError::EmptyTrajectory)
    } else {
        Ok(())
    }
}

fn check_game(traj: &Trajectory, game: &Game) -> Result<(), AnalysisError> {
    if traj.action_counts() != game.action_counts() {
        Err(AnalysisError::Mismatch)
    } else {
        Ok(())
    }
}

/// Running time average `xbar(t) = t^{-1} int_0^t x(s) ds` by trapezoidal
/// cumulative integration; `xbar(0) = x(0)`.
pub fn time_average(traj: &Trajectory) -> Result<Trajectory, AnalysisError> {
    check_nonempty(traj)?;
    let dim = traj.dim();
    let mut out = Trajectory::new(traj.action_counts().to_vec(), false, traj.metadata.clone());
    let times = traj.times();
    let mut avg = traj.x_at(0).to_vec();
    let mut span = 0.0;
    out.push(times[0], &avg, None).ok();
    for i in 1..traj.len() {
        let dt = times[i] - times[i - 1];
        span += dt;
        // incremental trapezoid mean: exact fixed point on constant data
        let (xi, xp) = (traj.x_at(i), traj.x_at(i - 1));
        for j in 0..dim {
            let midpoint = 0.5 * (xi[j] + xp[j]);
            avg[j] += dt * (midpoint - avg[j]) / span;
        }
        out.push(times[i], &avg, None)
            .map_err(DynamicsError::Trajectory)?;
    }
    Ok(out)
}

/// Extinction status of one pure strategy.
#[derive(Debug, Clone, Serialize)]
pub struct ExtinctionReport {
    pub extinct: bool,
    /// First time the weight drops to the threshold and stays there through
    /// the end of the horizon.
    pub first_time: Option<f64>,
    pub threshold: f64,
    pub final_weight: f64,
}

pub fn extinction_report(
    traj: &Trajectory,
    k: usize,
    action: usize,
    threshold: f64,
) -> Result<ExtinctionReport, AnalysisError> {
    check_nonempty(traj)?;
    if k >= traj.num_players() || action >= traj.action_counts()[k] {
        return Err(AnalysisError::BadIndex(k, action));
    }
    let mut first: Option<f64> = None;
    for i in 0..traj.len() {
        let w = traj.x_player(i, k)[action];
        if w <= threshold {
            if first.is_none() {
                first = Some(traj.times()[i]);
            }
        } else {
            first = None;
        }
    }
    let final_weight = traj.x_player(traj.len() - 1, k)[action];
    Ok(ExtinctionReport {
        extinct: first.is_some(),
        first_time: first,
        threshold,
        final_weight,
    })
}

/// Fitted extinction envelope for a dominated strategy.
#[derive(Debug, Clone, Serialize)]
pub struct RateEnvelopeReport {
    /// Smallest constant such that `x(t) <= phi(c - gamma delta t) + 1e-9`
    /// on every sample.
    pub c_fit: f64,
    /// Violations of the fitted envelope (0 by construction unless the fit
    /// saturated).
    pub violations: usize,
    pub gamma_delta: f64,
}

/// Fit the envelope constant by the supremum of the inverse-transformed
/// samples: wherever `0 < x < 1` the rate function inverts to the kernel
/// derivative, so `c >= theta'(x(t)) + gamma delta t`.
pub fn rate_envelope_check(
    traj: &Trajectory,
    k: usize,
    action: usize,
    penalty: &PenaltySpec,
    gamma: f64,
    delta: f64,
) -> Result<RateEnvelopeReport, AnalysisError> {
    check_nonempty(traj)?;
    if !penalty.is_decomposable() {
        return Err(AnalysisError::NotDecomposable);
    }
    if k >= traj.num_players() || action >= traj.action_counts()[k] {
        return Err(AnalysisError::BadIndex(k, action));
    }
    let gd = gamma * delta;
    let mut c_fit = f64::NEG_INFINITY;
    for i in 0..traj.len() {
        let x = traj.x_player(i, k)[action];
        let t = traj.times()[i];
        if x > 0.0 {
            let c = penalty.kernel_derivative(x.min(1.0))? + gd * t;
            c_fit = c_fit.max(c);
        }
    }
    if !c_fit.is_finite() {
        // the strategy was extinct from the start; any constant works
        c_fit = 0.0;
    }
    let mut violations = 0;
    for i in 0..traj.len() {
        let x = traj.x_player(i, k)[action];
        let t = traj.times()[i];
        let bound = penalty.rate_function(c_fit - gd * t)?;
        if x > bound + 1e-9 {
            violations += 1;
        }
    }
    Ok(RateEnvelopeReport {
        c_fit,
        violations,
        gamma_delta: gd,
    })
}

/// Conservation report for zero-sum games with an interior equilibrium.
#[derive(Debug, Clone, Serialize)]
pub struct ConservationReport {
    pub max_drift: f64,
    pub initial_value: f64,
}

/// Track the primal-dual coupling between an interior equilibrium and the
/// score trajectory; in zero-sum games it is a constant of motion.
pub fn zero_sum_conservation(
    traj: &Trajectory,
    game: &Game,
    penalties: &[PenaltySpec],
    p: &StrategyProfile,
    stride: usize,
) -> Result<ConservationReport, AnalysisError> {
    check_nonempty(traj)?;
    check_game(traj, game)?;
    if !game.is_zero_sum() {
        return Err(AnalysisError::NotZeroSum);
    }
    let check = game::is_nash(game, p, 1e-9)?;
    let interior = p.strategies().iter().all(|s| s.iter().all(|&v| v > 0.0));
    if !check.is_nash || !interior {
        return Err(AnalysisError::NotInteriorNash(check.max_violation()));
    }
    let scores0 = traj.scores_at(0).ok_or(AnalysisError::NoScores)?;
    let f0 = coupling::fenchel_profile(penalties, p, &scores0)?;
    let mut max_drift: f64 = 0.0;
    let stride = stride.max(1);
    let mut i = 0;
    while i < traj.len() {
        let scores = traj.scores_at(i).ok_or(AnalysisError::NoScores)?;
        let f = coupling::fenchel_profile(penalties, p, &scores)?;
        max_drift = max_drift.max((f - f0).abs());
        i += stride;
    }
    // always include the final sample
    let scores = traj
        .scores_at(traj.len() - 1)
        .ok_or(AnalysisError::NoScores)?;
    let f = coupling::fenchel_profile(penalties, p, &scores)?;
    max_drift = max_drift.max((f - f0).abs());
    Ok(ConservationReport {
        max_drift,
        initial_value: f0,
    })
}

/// Per-player maximum score gap over time.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreGapReport {
    /// `max_t max_{a,b} |y_a(t) - y_b(t)|` per player.
    pub max_gap: Vec<f64>,
    /// Gap at the final sample per player.
    pub final_gap: Vec<f64>,
}

pub fn score_gap_series(traj: &Trajectory) -> Result<ScoreGapReport, AnalysisError> {
    check_nonempty(traj)?;
    if !traj.has_scores() {
        return Err(AnalysisError::NoScores);
    }
    let players = traj.num_players();
    let mut max_gap = vec![0.0f64; players];
    let mut final_gap = vec![0.0f64; players];
    for i in 0..traj.len() {
        for k in 0..players {
            let y = traj.y_player(i, k).unwrap();
            let hi = y.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lo = y.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            let gap = hi - lo;
            max_gap[k] = max_gap[k].max(gap);
            if i == traj.len() - 1 {
                final_gap[k] = gap;
            }
        }
    }
    Ok(ScoreGapReport { max_gap, final_gap })
}

/// Best-response tracking gap of the play against the running average.
#[derive(Debug, Clone, Serialize)]
pub struct TrackingReport {
    pub final_gap: f64,
    pub first_decade_mean: f64,
    pub last_decade_mean: f64,
    pub decreasing: bool,
}

/// `delta(t) = max_k [ max_a v_ka(xbar(t)) - <v_k(xbar(t)), x_k(t)> ]`,
/// summarized by comparing the first and last tenth of the horizon.
pub fn br_tracking_gap(traj: &Trajectory, game: &Game) -> Result<TrackingReport, AnalysisError> {
    check_nonempty(traj)?;
    check_game(traj, game)?;
    if game.num_players() != 2 {
        return Err(AnalysisError::NotTwoPlayer(game.num_players()));
    }
    let avg = time_average(traj)?;
    let n = traj.len();
    let mut gaps = Vec::with_capacity(n);
    for i in 0..n {
        let xbar = avg.profile_at(i);
        let mut worst = f64::NEG_INFINITY;
        for k in 0..2 {
            let v = game::payoff_vector(game, k, &xbar)?;
            let best = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let got: f64 = v.iter().zip(traj.x_player(i, k)).map(|(a, b)| a * b).sum();
            worst = worst.max(best - got);
        }
        gaps.push(worst);
    }
    let tenth = (n / 10).max(1);
    let first_decade_mean = gaps[..tenth].iter().sum::<f64>() / tenth as f64;
    let last_decade_mean = gaps[n - tenth..].iter().sum::<f64>() / tenth as f64;
    Ok(TrackingReport {
        final_gap: *gaps.last().unwrap(),
        first_decade_mean,
        last_decade_mean,
        decreasing: last_decade_mean < first_decade_mean,
    })
}

/// Convergence-to-strict-equilibrium report.
#[derive(Debug, Clone, Serialize)]
pub struct StrictConvergenceReport {
    /// Sup-distance to the vertex stays below 1e-6 over the last tenth of
    /// the horizon.
    pub converged: bool,
    pub final_residual: f64,
    /// Envelope `1 - x_{a*}(t) <= sum_mu phi(c_mu - (1-eps) gamma delta_mu t)`
    /// holds on every sample with the fitted constants.
    pub envelope_ok: bool,
    pub c_fit: Vec<Vec<f64>>,
}

pub fn strict_convergence_report(
    traj: &Trajectory,
    game: &Game,
    x_star: &[usize],
    penalties: &[PenaltySpec],
    rates: &[f64],
    epsilon: f64,
) -> Result<StrictConvergenceReport, AnalysisError> {
    check_nonempty(traj)?;
    check_game(traj, game)?;
    let star = StrategyProfile::pure(game, x_star);
    // strictness: the equilibrium action must beat every alternative
    let mut deltas: Vec<Vec<f64>> = Vec::new();
    for k in 0..game.num_players() {
        let v = game::payoff_vector(game, k, &star)?;
        let best = v[x_star[k]];
        let mut dk = Vec::new();
        for (a, &va) in v.iter().enumerate() {
            if a != x_star[k] {
                if best - va <= 0.0 {
                    return Err(AnalysisError::NotStrictNash);
                }
                dk.push(best - va);
            }
        }
        deltas.push(dk);
    }

    let n = traj.len();
    let tail_start = n - (n / 10).max(1);
    let mut converged = true;
    for i in tail_start..n {
        let mut residual = 0.0f64;
        for k in 0..game.num_players() {
            residual = residual.max(1.0 - traj.x_player(i, k)[x_star[k]]);
        }
        if residual > 1e-6 {
            converged = false;
        }
    }
    let final_residual = (0..game.num_players())
        .map(|k| 1.0 - traj.x_player(n - 1, k)[x_star[k]])
        .fold(0.0f64, f64::max);

    // per-strategy envelope constants by the sup transform
    let mut c_fit = Vec::new();
    let mut envelope_ok = true;
    for k in 0..game.num_players() {
        if !penalties[k].is_decomposable() {
            return Err(AnalysisError::NotDecomposable);
        }
        let mut ck = Vec::new();
        let mut mu_idx = 0;
        for a in 0..game.num_actions(k) {
            if a == x_star[k] {
                continue;
            }
            let gd = (1.0 - epsilon) * rates[k] * deltas[k][mu_idx];
            let mut c = f64::NEG_INFINITY;
            for i in 0..n {
                let x = traj.x_player(i, k)[a];
                if x > 0.0 {
                    c = c.max(penalties[k].kernel_derivative(x.min(1.0))? + gd * traj.times()[i]);
                }
            }
            if !c.is_finite() {
                c = 0.0;
            }
            ck.push(c);
            mu_idx += 1;
        }
        c_fit.push(ck);
    }
    // verify the summed envelope
    for i in 0..n {
        let t = traj.times()[i];
        for k in 0..game.num_players() {
            let mut bound = 0.0;
            let mut mu_idx = 0;
            for a in 0..game.num_actions(k) {
                if a == x_star[k] {
                    continue;
                }
                let gd = (1.0 - epsilon) * rates[k] * deltas[k][mu_idx];
                bound += penalties[k].rate_function(c_fit[k][mu_idx] - gd * t)?;
                mu_idx += 1;
            }
            if 1.0 - traj.x_player(i, k)[x_star[k]] > bound + 1e-9 {
                envelope_ok = false;
            }
        }
    }
    Ok(StrictConvergenceReport {
        converged,
        final_residual,
        envelope_ok,
        c_fit,
    })
}

/// Which clause of the conditional weak-dominance elimination holds on a
/// finite horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WeakDominanceOutcome {
    /// The weakly dominated strategy itself went extinct.
    DominatedExtinct,
    /// Every opponent profile with a strict payoff gap went extinct.
    WitnessesExtinct,
    /// Both of the above.
    Both,
    /// Neither observed by the horizon.
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeakDominanceReport {
    pub outcome: WeakDominanceOutcome,
    pub dominated_min_weight: f64,
    /// Final joint weight of each witnessing opponent profile.
    pub witness_weights: Vec<f64>,
}

/// Classify the finite-horizon outcome for a weakly dominated pair
/// `p` vs `p_prime` of player `k`. The disjunction is asymptotic, so a
/// short horizon may legitimately be inconclusive.
pub fn weak_dominance_report(
    traj: &Trajectory,
    game: &Game,
    k: usize,
    p: &[f64],
    p_prime: &[f64],
    threshold: f64,
) -> Result<WeakDominanceReport, AnalysisError> {
    check_nonempty(traj)?;
    check_game(traj, game)?;
    // verify p is weakly dominated by p_prime: all pure-profile margins
    // nonnegative, at least one strictly positive
    let opponents = game::opponent_profiles(game, k);
    let mut witnesses: Vec<Vec<usize>> = Vec::new();
    for opp in &opponents {
        let mut margin = 0.0;
        for a in 0..game.num_actions(k) {
            let u = game.pure_payoff(k, &game::full_profile(k, a, opp));
            margin += (p_prime[a] - p[a]) * u;
        }
        if margin < -1e-12 {
            return Err(AnalysisError::NotWeaklyDominated);
        }
        if margin > 1e-12 {
            witnesses.push(opp.clone());
        }
    }
    if witnesses.is_empty() {
        return Err(AnalysisError::NotWeaklyDominated);
    }

    let last = traj.len() - 1;
    // extinction of the mixed strategy p: min supported weight at the end
    let support: Vec<usize> = (0..game.num_actions(k))
        .filter(|&a| p[a] > game::SUPPORT_THRESHOLD)
        .collect();
    let dominated_min_weight = support
        .iter()
        .map(|&a| traj.x_player(last, k)[a])
        .fold(f64::INFINITY, f64::min);
    let p_extinct = dominated_min_weight <= threshold;

    // extinction of each witnessing opponent profile: its joint weight
    let witness_weights: Vec<f64> = witnesses
        .iter()
        .map(|opp| {
            let mut w = 1.0;
            let mut opp_iter = opp.iter();
            for l in 0..game.num_players() {
                if l == k {
                    continue;
                }
                let a = *opp_iter.next().unwrap();
                w *= traj.x_player(last, l)[a];
            }
            w
        })
        .collect();
    let witnesses_extinct = witness_weights.iter().all(|&w| w <= threshold);

    let outcome = match (p_extinct, witnesses_extinct) {
        (true, true) => WeakDominanceOutcome::Both,
        (true, false) => WeakDominanceOutcome::DominatedExtinct,
        (false, true) => WeakDominanceOutcome::WitnessesExtinct,
        (false, false) => WeakDominanceOutcome::Inconclusive,
    };
    Ok(WeakDominanceReport {
        outcome,
        dominated_min_weight,
        witness_weights,
    })
}

/// Stability contradiction probe: a trajectory that lingers in a small ball
/// around a point which is not an equilibrium contradicts the stability
/// theory, so flag it.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityProbe {
    pub stayed_in_ball: bool,
    pub center_is_nash: bool,
    pub contradiction: bool,
    pub dwell_time: f64,
}

pub fn stability_contradiction_check(
    traj: &Trajectory,
    game: &Game,
    center: &StrategyProfile,
    radius: f64,
    min_duration: f64,
) -> Result<StabilityProbe, AnalysisError> {
    check_nonempty(traj)?;
    check_game(traj, game)?;
    let flat: Vec<f64> = center.strategies().iter().flatten().copied().collect();
    let mut dwell_start: Option<f64> = None;
    let mut best_dwell = 0.0f64;
    for i in 0..traj.len() {
        let dist = traj
            .x_at(i)
            .iter()
            .zip(&flat)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if dist <= radius {
            dwell_start.get_or_insert(traj.times()[i]);
            best_dwell = best_dwell.max(traj.times()[i] - dwell_start.unwrap());
        } else {
            dwell_start = None;
        }
    }
    let stayed = best_dwell >= min_duration;
    let nash = game::is_nash(game, center, 1e-6)?.is_nash;
    Ok(StabilityProbe {
        stayed_in_ball: stayed,
        center_is_nash: nash,
        contradiction: stayed && !nash,
        dwell_time: best_dwell,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, DynamicsSpec, FieldKind, Init, TieRule, Variant};
    use crate::trajectory::RunMetadata;
    use approx::assert_abs_diff_eq;

    fn matching_pennies() -> Game {
        game::builtin("matching_pennies").unwrap()
    }

    fn dominated_game() -> Game {
        Game::from_bimatrix(
            &[vec![1.0, 1.0], vec![0.0, 0.0]],
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap()
    }

    fn gibbs_spec(game: &Game) -> DynamicsSpec {
        DynamicsSpec::score_rl(
            game.action_counts()
                .iter()
                .map(|&n| PenaltySpec::gibbs(n))
                .collect(),
        )
    }

    fn quad_spec(game: &Game) -> DynamicsSpec {
        DynamicsSpec::score_rl(
            game.action_counts()
                .iter()
                .map(|&n| PenaltySpec::quadratic(n))
                .collect(),
        )
    }

    fn synthetic_metadata(counts: Vec<usize>) -> RunMetadata {
        RunMetadata {
            game_hash: String::new(),
            action_counts: counts,
            spec: DynamicsSpec {
                variant: Variant::DirectField {
                    kind: FieldKind::Replicator,
                },
                penalties: None,
                rates: vec![1.0, 1.0],
            },
            t_end: 0.0,
            dt: 0.0,
            integrator: "synthetic".into(),
            has_scores: false,
            extended_solution: false,
        }
    }

    #[test]
    fn time_average_of_constant_is_identity() {
        let mut traj = Trajectory::new(vec![2], false, synthetic_metadata(vec![2]));
        for i in 0..10 {
            traj.push(i as f64 * 0.1, &[0.3, 0.7], None).unwrap();
        }
        let avg = time_average(&traj).unwrap();
        for i in 0..avg.len() {
            assert_eq!(avg.x_at(i), &[0.3, 0.7]);
        }
    }

    #[test]
    fn time_average_of_sawtooth_matches_closed_form() {
        // x_1(t) = 1/2 + a sin(w t): average = 1/2 + a (1 - cos(w t))/(w t)
        let mut traj = Trajectory::new(vec![2], false, synthetic_metadata(vec![2]));
        let (a, w, dt) = (0.25, 3.0, 1e-3);
        let steps = 5000;
        for i in 0..=steps {
            let t = i as f64 * dt;
            let x1: f64 = 0.5 + a * (w * t).sin();
            traj.push(t, &[x1, 1.0 - x1], None).unwrap();
        }
        let avg = time_average(&traj).unwrap();
        let t_end = steps as f64 * dt;
        let expected = 0.5 + a * (1.0 - (w * t_end).cos()) / (w * t_end);
        let got = avg.x_at(avg.len() - 1)[0];
        assert_abs_diff_eq!(got, expected, epsilon = 10.0 * dt * dt);
    }

    #[test]
    fn matching_pennies_time_average_converges() {
        let mp = matching_pennies();
        let spec = gibbs_spec(&mp);
        let init = Init::Scores(vec![vec![0.5, 0.0], vec![0.0, 0.0]]);
        let traj = integrate(&mp, &spec, &init, 200.0, 1e-2).unwrap();
        let avg = time_average(&traj).unwrap();
        let last = avg.x_at(avg.len() - 1);
        for &v in last {
            assert!((v - 0.5).abs() <= 2e-2, "time average component {v}");
        }
    }

    #[test]
    fn extinction_in_dominated_game() {
        let dom = dominated_game();
        let traj = integrate(&dom, &quad_spec(&dom), &Init::zeros(&dom), 2.0, 1e-3).unwrap();
        let rep = extinction_report(&traj, 0, 1, 1e-9).unwrap();
        assert!(rep.extinct);
        let t = rep.first_time.unwrap();
        assert!((t - 1.0).abs() <= 2e-3, "extinction at {t}");

        // Gibbs decays exponentially: above 1e-12 but below 1e-8 by T=20
        let traj = integrate(&dom, &gibbs_spec(&dom), &Init::zeros(&dom), 20.0, 1e-3).unwrap();
        let rep12 = extinction_report(&traj, 0, 1, 1e-12).unwrap();
        assert!(!rep12.extinct);
        let rep8 = extinction_report(&traj, 0, 1, 1e-8).unwrap();
        assert!(rep8.extinct);

        // cycling games never go extinct
        let mp = matching_pennies();
        let init = Init::Scores(vec![vec![0.5, 0.0], vec![0.0, 0.0]]);
        let traj = integrate(&mp, &gibbs_spec(&mp), &init, 50.0, 1e-2).unwrap();
        for k in 0..2 {
            for a in 0..2 {
                assert!(!extinction_report(&traj, k, a, 1e-9).unwrap().extinct);
            }
        }
    }

    #[test]
    fn rate_envelope_quadratic_closed_form() {
        let dom = dominated_game();
        let traj = integrate(&dom, &quad_spec(&dom), &Init::zeros(&dom), 2.0, 1e-3).unwrap();
        let rep = rate_envelope_check(&traj, 0, 1, &PenaltySpec::quadratic(2), 1.0, 1.0).unwrap();
        assert_eq!(rep.violations, 0);
        // closed form x(t) = (1-t)/2: the sup transform tightens to
        // c = sup_t [(1+t)/2] over the surviving samples, approaching 1
        assert!((rep.c_fit - 1.0).abs() <= 2e-3, "c_fit = {}", rep.c_fit);
    }

    #[test]
    fn rate_envelope_gibbs_and_tsallis() {
        let dom = dominated_game();
        let traj = integrate(&dom, &gibbs_spec(&dom), &Init::zeros(&dom), 10.0, 1e-3).unwrap();
        let rep = rate_envelope_check(&traj, 0, 1, &PenaltySpec::gibbs(2), 1.0, 1.0).unwrap();
        assert_eq!(rep.violations, 0);

        let ts = PenaltySpec::tsallis(1.5, 2).unwrap();
        let spec = DynamicsSpec::score_rl(vec![ts, ts]);
        let traj = integrate(&dom, &spec, &Init::zeros(&dom), 10.0, 1e-3).unwrap();
        let rep = rate_envelope_check(&traj, 0, 1, &ts, 1.0, 1.0).unwrap();
        assert_eq!(rep.violations, 0);
        assert!(extinction_report(&traj, 0, 1, 1e-9).unwrap().extinct);

        let renyi = PenaltySpec::renyi(0.5, 2).unwrap();
        assert!(matches!(
            rate_envelope_check(&traj, 0, 1, &renyi, 1.0, 1.0),
            Err(AnalysisError::NotDecomposable)
        ));
    }

    #[test]
    fn conservation_on_matching_pennies() {
        let mp = matching_pennies();
        let spec = gibbs_spec(&mp);
        let init = Init::Scores(vec![vec![0.5, 0.0], vec![0.0, 0.0]]);
        let traj = integrate(&mp, &spec, &init, 20.0, 1e-3).unwrap();
        let p = StrategyProfile::uniform(&mp);
        let penalties = vec![PenaltySpec::gibbs(2), PenaltySpec::gibbs(2)];
        let rep = zero_sum_conservation(&traj, &mp, &penalties, &p, 10).unwrap();
        assert!(rep.max_drift <= 1e-7, "drift {}", rep.max_drift);

        // guard: non-zero-sum games rejected
        let coord = game::builtin("coord2").unwrap();
        let traj2 =
            integrate(&coord, &gibbs_spec(&coord), &Init::zeros(&coord), 1.0, 1e-2).unwrap();
        assert!(matches!(
            zero_sum_conservation(
                &traj2,
                &coord,
                &penalties,
                &StrategyProfile::uniform(&coord),
                1
            ),
            Err(AnalysisError::NotZeroSum)
        ));
        // guard: non-interior reference rejected
        let vertex = StrategyProfile::pure(&mp, &[0, 0]);
        assert!(matches!(
            zero_sum_conservation(&traj, &mp, &penalties, &vertex, 1),
            Err(AnalysisError::NotInteriorNash(_))
        ));
    }

    #[test]
    fn score_gaps_bounded_in_zero_sum_linear_in_dominated() {
        let mp = matching_pennies();
        let init = Init::Scores(vec![vec![0.5, 0.0], vec![0.0, 0.0]]);
        let traj = integrate(&mp, &gibbs_spec(&mp), &init, 100.0, 1e-2).unwrap();
        let rep = score_gap_series(&traj).unwrap();
        assert!(rep.max_gap.iter().all(|&g| g < 5.0), "{:?}", rep.max_gap);

        let dom = dominated_game();
        let traj = integrate(&dom, &gibbs_spec(&dom), &Init::zeros(&dom), 50.0, 1e-2).unwrap();
        let rep = score_gap_series(&traj).unwrap();
        // gap grows like gamma delta t = t
        assert_abs_diff_eq!(rep.final_gap[0], 50.0, epsilon = 0.5);

        // direct-field trajectories carry no scores
        let spec = DynamicsSpec::direct(FieldKind::Replicator, 2);
        let traj = integrate(
            &mp,
            &spec,
            &Init::Strategies(vec![vec![0.6, 0.4], vec![0.5, 0.5]]),
            1.0,
            1e-2,
        )
        .unwrap();
        assert!(matches!(
            score_gap_series(&traj),
            Err(AnalysisError::NoScores)
        ));
    }

    #[test]
    fn conservation_on_rps_with_solver_backed_penalties() {
        // three actions, interior equilibrium at (1/3, 1/3, 1/3); the
        // Tsallis run exercises the bisection solver inside the coupling
        // loop and the quadratic run touches the boundary
        let rps = game::builtin("rps").unwrap();
        let p = StrategyProfile::uniform(&rps);
        for h in [
            PenaltySpec::tsallis(0.5, 3).unwrap(),
            PenaltySpec::quadratic(3),
        ] {
            let spec = DynamicsSpec::score_rl(vec![h, h]);
            let init = Init::Scores(vec![vec![0.9, 0.0, 0.0], vec![0.0, 0.4, 0.0]]);
            let traj = integrate(&rps, &spec, &init, 20.0, 1e-3).unwrap();
            let rep = zero_sum_conservation(&traj, &rps, &[h, h], &p, 5).unwrap();
            assert!(
                rep.max_drift <= 1e-7,
                "{:?}: drift {}",
                h.kind,
                rep.max_drift
            );
        }
    }

    #[test]
    fn score_gap_constant_in_constant_payoff_game() {
        // equal payoffs everywhere: scores move in lockstep, gaps frozen
        let g = Game::from_bimatrix(
            &[vec![1.0, 1.0], vec![1.0, 1.0]],
            &[vec![1.0, 1.0], vec![1.0, 1.0]],
        )
        .unwrap();
        let init = Init::Scores(vec![vec![0.7, 0.1], vec![0.0, 0.3]]);
        let traj = integrate(&g, &gibbs_spec(&g), &init, 10.0, 1e-2).unwrap();
        let rep = score_gap_series(&traj).unwrap();
        assert_abs_diff_eq!(rep.max_gap[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.final_gap[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.max_gap[1], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn thm_average_payoff_spread_bound() {
        // bounded score gaps force the payoff spread at the time average to
        // vanish like 1/T
        let mp = matching_pennies();
        let init = Init::Scores(vec![vec![0.5, 0.0], vec![0.0, 0.0]]);
        let traj = integrate(&mp, &gibbs_spec(&mp), &init, 200.0, 1e-2).unwrap();
        let gaps = score_gap_series(&traj).unwrap();
        let avg = time_average(&traj).unwrap();
        let xbar = avg.profile_at(avg.len() - 1);
        let t_end = *traj.times().last().unwrap();
        for k in 0..2 {
            let v = game::payoff_vector(&mp, k, &xbar).unwrap();
            let spread = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
                - v.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            let c0 = {
                let y0 = traj.y_player(0, k).unwrap();
                y0.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
                    - y0.iter().fold(f64::INFINITY, |a, &b| a.min(b))
            };
            assert!(
                spread <= (gaps.max_gap[k] + c0) / t_end + 1e-6,
                "player {k}: spread {spread}"
            );
        }
    }

    #[test]
    fn br_tracking_on_matching_pennies() {
        let mp = matching_pennies();
        let init = Init::Scores(vec![vec![0.5, 0.0], vec![0.0, 0.0]]);
        let traj = integrate(&mp, &gibbs_spec(&mp), &init, 500.0, 1e-2).unwrap();
        let rep = br_tracking_gap(&traj, &mp).unwrap();
        assert!(rep.decreasing);
        assert!(rep.last_decade_mean < 0.1, "{}", rep.last_decade_mean);
    }

    #[test]
    fn br_tracking_zero_for_synthetic_exact_tracker() {
        // constant play at the equilibrium tracks its own average exactly
        let mp = matching_pennies();
        let mut traj = Trajectory::new(vec![2, 2], false, synthetic_metadata(vec![2, 2]));
        for i in 0..100 {
            traj.push(i as f64 * 0.1, &[0.5, 0.5, 0.5, 0.5], None)
                .unwrap();
        }
        let rep = br_tracking_gap(&traj, &mp).unwrap();
        assert_abs_diff_eq!(rep.final_gap, 0.0, epsilon = 1e-12);
        assert!(matches!(
            br_tracking_gap(
                &traj,
                &Game::new(vec![2, 2, 2], vec![vec![0.0; 8]; 3]).unwrap()
            ),
            Err(AnalysisError::Mismatch)
        ));

        // parked at a strict equilibrium the gap is identically zero too
        let coord = game::builtin("coord2").unwrap();
        let mut traj = Trajectory::new(vec![2, 2], false, synthetic_metadata(vec![2, 2]));
        for i in 0..100 {
            traj.push(i as f64 * 0.1, &[1.0, 0.0, 1.0, 0.0], None)
                .unwrap();
        }
        let rep = br_tracking_gap(&traj, &coord).unwrap();
        assert_eq!(rep.final_gap, 0.0);
        assert_eq!(rep.last_decade_mean, 0.0);
    }

    #[test]
    fn strict_convergence_coord2() {
        let coord = game::builtin("coord2").unwrap();
        let x0 = [vec![0.9, 0.1], vec![0.9, 0.1]];

        // quadratic: exact finite-time convergence
        let spec = quad_spec(&coord);
        let y0: Vec<Vec<f64>> = x0
            .iter()
            .map(|xk| {
                crate::choice::inverse_choice(&PenaltySpec::quadratic(2), xk)
                    .unwrap()
                    .into()
            })
            .collect();
        let traj = integrate(&coord, &spec, &Init::Scores(y0), 10.0, 1e-3).unwrap();
        let rep = strict_convergence_report(
            &traj,
            &coord,
            &[0, 0],
            &[PenaltySpec::quadratic(2), PenaltySpec::quadratic(2)],
            &[1.0, 1.0],
            0.1,
        )
        .unwrap();
        assert!(rep.converged);
        assert_eq!(rep.final_residual, 0.0);
        assert!(rep.envelope_ok);

        // starting at the mixed equilibrium: stationary, never converges to
        // the vertex
        let uniform_init = Init::zeros(&coord);
        let traj = integrate(&coord, &quad_spec(&coord), &uniform_init, 10.0, 1e-2).unwrap();
        let rep = strict_convergence_report(
            &traj,
            &coord,
            &[0, 0],
            &[PenaltySpec::quadratic(2), PenaltySpec::quadratic(2)],
            &[1.0, 1.0],
            0.1,
        )
        .unwrap();
        assert!(!rep.converged);

        // non-strict profile rejected
        let mp = matching_pennies();
        let traj_mp = integrate(&mp, &gibbs_spec(&mp), &Init::zeros(&mp), 1.0, 1e-2).unwrap();
        assert!(matches!(
            strict_convergence_report(
                &traj_mp,
                &mp,
                &[0, 0],
                &[PenaltySpec::gibbs(2), PenaltySpec::gibbs(2)],
                &[1.0, 1.0],
                0.1
            ),
            Err(AnalysisError::NotStrictNash)
        ));
    }

    #[test]
    fn weak_dominance_classification() {
        // player 1 rows (1,1) vs (1,0); player 2's second column strictly
        // dominated so the witness goes extinct in finite time under the
        // quadratic penalty
        let g = Game::from_bimatrix(
            &[vec![1.0, 1.0], vec![1.0, 0.0]],
            &[vec![1.0, 0.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let spec = quad_spec(&g);
        let traj = integrate(&g, &spec, &Init::zeros(&g), 5.0, 1e-3).unwrap();
        let rep = weak_dominance_report(&traj, &g, 0, &[0.0, 1.0], &[1.0, 0.0], 1e-9).unwrap();
        assert!(matches!(
            rep.outcome,
            WeakDominanceOutcome::WitnessesExtinct | WeakDominanceOutcome::Both
        ));

        // a strictly dominated pair always lands in the first clause
        let dom = dominated_game();
        let traj = integrate(&dom, &quad_spec(&dom), &Init::zeros(&dom), 3.0, 1e-3).unwrap();
        let rep = weak_dominance_report(&traj, &dom, 0, &[0.0, 1.0], &[1.0, 0.0], 1e-9).unwrap();
        assert!(matches!(
            rep.outcome,
            WeakDominanceOutcome::DominatedExtinct | WeakDominanceOutcome::Both
        ));

        // horizon too short: inconclusive flag rather than a guess
        let g2 = Game::from_bimatrix(
            &[vec![1.0, 1.0], vec![1.0, 0.0]],
            &[vec![1.0, 0.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let traj = integrate(&g2, &gibbs_spec(&g2), &Init::zeros(&g2), 0.5, 1e-3).unwrap();
        let rep = weak_dominance_report(&traj, &g2, 0, &[0.0, 1.0], &[1.0, 0.0], 1e-9).unwrap();
        assert_eq!(rep.outcome, WeakDominanceOutcome::Inconclusive);

        // pair that is not weakly dominated is rejected
        let mp = matching_pennies();
        let traj_mp = integrate(&mp, &gibbs_spec(&mp), &Init::zeros(&mp), 1.0, 1e-2).unwrap();
        assert!(matches!(
            weak_dominance_report(&traj_mp, &mp, 0, &[0.0, 1.0], &[1.0, 0.0], 1e-9),
            Err(AnalysisError::NotWeaklyDominated)
        ));
    }

    #[test]
    fn stability_probe_flags_synthetic_contradiction() {
        let mp = matching_pennies();
        // synthetic data parked at a non-equilibrium point
        let mut traj = Trajectory::new(vec![2, 2], false, synthetic_metadata(vec![2, 2]));
        for i in 0..=200 {
            traj.push(i as f64, &[0.9, 0.1, 0.5, 0.5], None).unwrap();
        }
        let center = StrategyProfile::new(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let probe = stability_contradiction_check(&traj, &mp, &center, 0.05, 100.0).unwrap();
        assert!(probe.stayed_in_ball);
        assert!(!probe.center_is_nash);
        assert!(probe.contradiction);

        // a genuine equilibrium does not trip the flag
        let eq = StrategyProfile::uniform(&mp);
        let mut traj = Trajectory::new(vec![2, 2], false, synthetic_metadata(vec![2, 2]));
        for i in 0..=200 {
            traj.push(i as f64, &[0.5, 0.5, 0.5, 0.5], None).unwrap();
        }
        let probe = stability_contradiction_check(&traj, &mp, &eq, 0.05, 100.0).unwrap();
        assert!(!probe.contradiction);
    }

    #[test]
    fn url_time_average_reaches_equilibrium() {
        let mp = matching_pennies();
        let spec = DynamicsSpec {
            variant: Variant::Unpenalized {
                tie: TieRule::LowestIndex,
                tau: 1.0,
            },
            penalties: None,
            rates: vec![1.0, 1.0],
        };
        let traj = integrate(&mp, &spec, &Init::uniform(&mp), 300.0, 1e-2).unwrap();
        let url = traj.url.as_ref().unwrap();
        // marginals of the averaged joint play approach the equilibrium
        let chi = crate::game::CorrelatedStrategy::new(&mp, url.chi_bar.clone()).unwrap();
        for k in 0..2 {
            for &v in &chi.marginal(k) {
                assert!((v - 0.5).abs() <= 2e-2, "marginal component {v}");
            }
        }
    }
}
