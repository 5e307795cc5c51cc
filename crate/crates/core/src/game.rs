//! Normal-form games: payoff tensors, payoff vectors, Nash verification,
//! dominance queries, and restrictions.
//!
//! Payoff tensors are stored as row-major flattened arrays with the player-1
//! index slowest, which fixes a deterministic file format.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lp::{self, Sense};

/// Support membership threshold used everywhere a support set is derived
/// from floating-point strategy weights.
pub const SUPPORT_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("game must have at least one player")]
    NoPlayers,
    #[error("player {0} has {1} actions; at least 2 are required")]
    TooFewActions(usize, usize),
    #[error("payoff tensor for player {player} has {got} entries, expected {expected}")]
    TensorSize {
        player: usize,
        got: usize,
        expected: usize,
    },
    #[error("payoff tensor for player {0} contains a non-finite entry")]
    NonFinitePayoff(usize),
    #[error("dimension mismatch: expected per-player lengths {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("player index {0} out of range")]
    PlayerIndex(usize),
    #[error("strategy vector for player {0} has negative entry {1}")]
    NegativeWeight(usize, f64),
    #[error("strategy vector for player {0} sums to {1}, outside tolerance of 1")]
    NotNormalized(usize, f64),
    #[error("restriction leaves player {0} with an empty action set")]
    EmptySupport(usize),
    #[error("restriction references action {1} of player {0}, which does not exist")]
    BadActionIndex(usize, usize),
    #[error("correlated strategy has wrong number of entries: got {got}, expected {expected}")]
    JointSize { got: usize, expected: usize },
    #[error("unknown builtin game `{0}`")]
    UnknownBuiltin(String),
    #[error("internal LP failure: {0:?}")]
    Lp(lp::LpError),
}

/// A finite game in normal form: per-player action counts and one payoff
/// tensor per player over pure action profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Game {
    #[serde(rename = "players")]
    num_players: usize,
    #[serde(rename = "actions")]
    action_counts: Vec<usize>,
    #[serde(rename = "payoffs")]
    payoff_tensors: Vec<Vec<f64>>,
}

impl Game {
    pub fn new(
        action_counts: Vec<usize>,
        payoff_tensors: Vec<Vec<f64>>,
    ) -> Result<Self, GameError> {
        let n = action_counts.len();
        if n == 0 {
            return Err(GameError::NoPlayers);
        }
        for (k, &c) in action_counts.iter().enumerate() {
            if c < 2 {
                return Err(GameError::TooFewActions(k, c));
            }
        }
        let profile_count: usize = action_counts.iter().product();
        if payoff_tensors.len() != n {
            return Err(GameError::TensorSize {
                player: payoff_tensors.len(),
                got: payoff_tensors.len(),
                expected: n,
            });
        }
        for (k, tensor) in payoff_tensors.iter().enumerate() {
            if tensor.len() != profile_count {
                return Err(GameError::TensorSize {
                    player: k,
                    got: tensor.len(),
                    expected: profile_count,
                });
            }
            if tensor.iter().any(|v| !v.is_finite()) {
                return Err(GameError::NonFinitePayoff(k));
            }
        }
        Ok(Game {
            num_players: n,
            action_counts,
            payoff_tensors,
        })
    }

    /// Two-player game from bimatrix payoffs `a[i][j]`, `b[i][j]`.
    pub fn from_bimatrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self, GameError> {
        let rows = a.len();
        let cols = a.first().map(|r| r.len()).unwrap_or(0);
        let flat = |m: &[Vec<f64>]| -> Vec<f64> { m.iter().flatten().copied().collect() };
        Game::new(vec![rows, cols], vec![flat(a), flat(b)])
    }

    pub fn num_players(&self) -> usize {
        self.num_players
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn num_actions(&self, k: usize) -> usize {
        self.action_counts[k]
    }

    /// Flat index of a pure profile (player-1 index slowest).
    pub fn profile_index(&self, profile: &[usize]) -> usize {
        debug_assert_eq!(profile.len(), self.num_players);
        let mut idx = 0usize;
        for (k, &a) in profile.iter().enumerate() {
            idx = idx * self.action_counts[k] + a;
        }
        idx
    }

    /// Payoff of player `k` at a pure profile.
    pub fn pure_payoff(&self, k: usize, profile: &[usize]) -> f64 {
        self.payoff_tensors[k][self.profile_index(profile)]
    }

    pub fn payoff_tensor(&self, k: usize) -> &[f64] {
        &self.payoff_tensors[k]
    }

    /// Iterate over all pure profiles in row-major order.
    pub fn profiles(&self) -> ProfileIter {
        ProfileIter::new(self.action_counts.clone())
    }

    /// Largest absolute payoff entry; bounds every payoff vector component.
    pub fn payoff_bound(&self) -> f64 {
        self.payoff_tensors
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// True iff the game has two players with `u_1 = -u_2` entrywise.
    pub fn is_zero_sum(&self) -> bool {
        self.num_players == 2
            && self.payoff_tensors[0]
                .iter()
                .zip(&self.payoff_tensors[1])
                .all(|(a, b)| a + b == 0.0)
    }

    fn check_profile(&self, x: &StrategyProfile) -> Result<(), GameError> {
        let got: Vec<usize> = x.strategies().iter().map(|s| s.len()).collect();
        if got != self.action_counts {
            return Err(GameError::DimensionMismatch {
                expected: self.action_counts.clone(),
                got,
            });
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, as a hex string.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("game serialization");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Iterator over pure profiles of a product action space.
pub struct ProfileIter {
    counts: Vec<usize>,
    current: Vec<usize>,
    done: bool,
}

impl ProfileIter {
    pub fn new(counts: Vec<usize>) -> Self {
        let n = counts.len();
        ProfileIter {
            done: counts.is_empty() || counts.contains(&0),
            counts,
            current: vec![0; n],
        }
    }
}

impl Iterator for ProfileIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        // odometer increment, last player fastest
        for k in (0..self.counts.len()).rev() {
            self.current[k] += 1;
            if self.current[k] < self.counts[k] {
                return Some(out);
            }
            self.current[k] = 0;
        }
        self.done = true;
        Some(out)
    }
}

/// A mixed strategy profile: one simplex vector per player.
///
/// Construction validates nonnegativity and normalizes each player's vector,
/// so stored weights sum to 1 within 1e-12.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile(Vec<Vec<f64>>);

impl StrategyProfile {
    pub fn new(strategies: Vec<Vec<f64>>) -> Result<Self, GameError> {
        let mut out = Vec::with_capacity(strategies.len());
        for (k, s) in strategies.into_iter().enumerate() {
            out.push(normalize_simplex(k, s)?);
        }
        Ok(StrategyProfile(out))
    }

    /// Uniform profile for a game.
    pub fn uniform(game: &Game) -> Self {
        StrategyProfile(
            game.action_counts()
                .iter()
                .map(|&n| vec![1.0 / n as f64; n])
                .collect(),
        )
    }

    /// Pure profile concentrated on the given action indices.
    pub fn pure(game: &Game, actions: &[usize]) -> Self {
        StrategyProfile(
            game.action_counts()
                .iter()
                .zip(actions)
                .map(|(&n, &a)| {
                    let mut v = vec![0.0; n];
                    v[a] = 1.0;
                    v
                })
                .collect(),
        )
    }

    pub fn strategies(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn player(&self, k: usize) -> &[f64] {
        &self.0[k]
    }

    /// Support of player `k`'s strategy under [`SUPPORT_THRESHOLD`].
    pub fn support(&self, k: usize) -> Vec<usize> {
        support_of(&self.0[k])
    }
}

/// Indices with weight above the support threshold.
pub fn support_of(x: &[f64]) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter(|(_, &v)| v > SUPPORT_THRESHOLD)
        .map(|(i, _)| i)
        .collect()
}

fn normalize_simplex(k: usize, mut s: Vec<f64>) -> Result<Vec<f64>, GameError> {
    for &v in &s {
        if !(v >= 0.0) {
            return Err(GameError::NegativeWeight(k, v));
        }
    }
    let sum: f64 = s.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(GameError::NotNormalized(k, sum));
    }
    for v in s.iter_mut() {
        *v /= sum;
    }
    Ok(s)
}

/// A correlated strategy: a joint distribution over pure profiles, stored
/// flattened in the same row-major order as the payoff tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedStrategy {
    joint: Vec<f64>,
    action_counts: Vec<usize>,
}

impl CorrelatedStrategy {
    pub fn new(game: &Game, joint: Vec<f64>) -> Result<Self, GameError> {
        let expected: usize = game.action_counts().iter().product();
        if joint.len() != expected {
            return Err(GameError::JointSize {
                got: joint.len(),
                expected,
            });
        }
        let mut joint = joint;
        for &v in &joint {
            if !(v >= 0.0) {
                return Err(GameError::NegativeWeight(usize::MAX, v));
            }
        }
        let sum: f64 = joint.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(GameError::NotNormalized(usize::MAX, sum));
        }
        for v in joint.iter_mut() {
            *v /= sum;
        }
        Ok(CorrelatedStrategy {
            joint,
            action_counts: game.action_counts().to_vec(),
        })
    }

    /// Product distribution induced by a mixed profile.
    pub fn from_product(game: &Game, x: &StrategyProfile) -> Self {
        let mut joint = Vec::with_capacity(game.action_counts().iter().product());
        for profile in game.profiles() {
            let w: f64 = profile
                .iter()
                .enumerate()
                .map(|(k, &a)| x.player(k)[a])
                .product();
            joint.push(w);
        }
        CorrelatedStrategy {
            joint,
            action_counts: game.action_counts().to_vec(),
        }
    }

    pub fn joint(&self) -> &[f64] {
        &self.joint
    }

    pub fn joint_mut(&mut self) -> &mut [f64] {
        &mut self.joint
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    /// Marginal distribution of player `k`.
    pub fn marginal(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.action_counts[k]];
        for (idx, profile) in ProfileIter::new(self.action_counts.clone()).enumerate() {
            out[profile[k]] += self.joint[idx];
        }
        out
    }
}

/// Payoff vector `v_k(x)`: component `a` is player `k`'s payoff for playing
/// pure action `a` against the mixed profile of the opponents.
pub fn payoff_vector(game: &Game, k: usize, x: &StrategyProfile) -> Result<Vec<f64>, GameError> {
    if k >= game.num_players() {
        return Err(GameError::PlayerIndex(k));
    }
    game.check_profile(x)?;
    let mut v = vec![0.0; game.num_actions(k)];
    for (idx, profile) in game.profiles().enumerate() {
        let mut w = 1.0;
        for (l, &a) in profile.iter().enumerate() {
            if l != k {
                w *= x.player(l)[a];
            }
        }
        if w != 0.0 {
            v[profile[k]] += w * game.payoff_tensor(k)[idx];
        }
    }
    Ok(v)
}

/// Expected payoff `u_k(x) = <v_k(x), x_k>`.
pub fn expected_payoff(game: &Game, k: usize, x: &StrategyProfile) -> Result<f64, GameError> {
    let v = payoff_vector(game, k, x)?;
    Ok(v.iter().zip(x.player(k)).map(|(a, b)| a * b).sum())
}

/// Outcome of a Nash verification.
#[derive(Debug, Clone, Serialize)]
pub struct NashCheck {
    pub is_nash: bool,
    /// Per player, the largest payoff shortfall of a supported action
    /// against the best available action (0 when none).
    pub violations: Vec<f64>,
}

impl NashCheck {
    pub fn max_violation(&self) -> f64 {
        self.violations.iter().fold(0.0, |m, &v| m.max(v))
    }
}

/// Verify the equilibrium condition: every supported action of every player
/// earns within `tol` of that player's best action.
pub fn is_nash(game: &Game, x: &StrategyProfile, tol: f64) -> Result<NashCheck, GameError> {
    game.check_profile(x)?;
    let mut violations = Vec::with_capacity(game.num_players());
    let mut ok = true;
    for k in 0..game.num_players() {
        let v = payoff_vector(game, k, x)?;
        let best = v.iter().fold(f64::NEG_INFINITY, |m, &a| m.max(a));
        let mut worst = 0.0f64;
        for &a in &x.support(k) {
            worst = worst.max(best - v[a]);
        }
        if worst > tol {
            ok = false;
        }
        violations.push(worst);
    }
    Ok(NashCheck {
        is_nash: ok,
        violations,
    })
}

/// One dominated action found by [`find_dominated`].
#[derive(Debug, Clone, Serialize)]
pub struct DominanceRecord {
    pub action: usize,
    /// Mixed strategy that dominates it (max-margin LP solution).
    pub dominator: Vec<f64>,
    /// Guaranteed payoff margin over every pure opponent profile (strict
    /// case); min margin (0 allowed) in the weak case.
    pub margin: f64,
    /// Opponent profiles (as full profiles with the dominated action filled
    /// in) with a strictly positive margin; populated in the weak case where
    /// it witnesses the strict part of the definition.
    pub strict_profiles: Vec<Vec<usize>>,
}

/// Pure profiles of everyone but player `k`.
pub fn opponent_profiles(game: &Game, k: usize) -> Vec<Vec<usize>> {
    let counts: Vec<usize> = game
        .action_counts()
        .iter()
        .enumerate()
        .filter(|(l, _)| *l != k)
        .map(|(_, &c)| c)
        .collect();
    ProfileIter::new(counts).collect()
}

/// Insert `action` for player `k` into an opponent profile.
pub fn full_profile(k: usize, action: usize, opp: &[usize]) -> Vec<usize> {
    let mut profile = Vec::with_capacity(opp.len() + 1);
    profile.extend_from_slice(&opp[..k]);
    profile.push(action);
    profile.extend_from_slice(&opp[k..]);
    profile
}

/// Find pure strategies of player `k` that are dominated by some mixed
/// strategy.
///
/// Each candidate action is tested with a small LP that maximizes the
/// minimum payoff margin over pure opponent profiles; by multilinearity this
/// is equivalent to domination against every mixed opponent profile. With
/// `strict = false`, the LP instead maximizes the total margin subject to
/// all margins being nonnegative, and reports the witnessing strict
/// profiles.
pub fn find_dominated(
    game: &Game,
    k: usize,
    strict: bool,
) -> Result<Vec<DominanceRecord>, GameError> {
    if k >= game.num_players() {
        return Err(GameError::PlayerIndex(k));
    }
    let n = game.num_actions(k);
    let opponents = opponent_profiles(game, k);
    let mut out = Vec::new();
    for alpha in 0..n {
        let base: Vec<f64> = opponents
            .iter()
            .map(|opp| game.pure_payoff(k, &full_profile(k, alpha, opp)))
            .collect();
        // one row per opponent profile, columns over own actions
        let payoff_rows: Vec<Vec<f64>> = opponents
            .iter()
            .map(|opp| {
                (0..n)
                    .map(|a| game.pure_payoff(k, &full_profile(k, a, opp)))
                    .collect()
            })
            .collect();

        if strict {
            // vars: p (n), delta+, delta-
            let mut rows = Vec::new();
            let mut senses = Vec::new();
            let mut rhs = Vec::new();
            let mut simplex_row = vec![1.0; n];
            simplex_row.extend_from_slice(&[0.0, 0.0]);
            rows.push(simplex_row);
            senses.push(Sense::Eq);
            rhs.push(1.0);
            for (j, row) in payoff_rows.iter().enumerate() {
                let mut r = row.clone();
                r.push(-1.0);
                r.push(1.0);
                rows.push(r);
                senses.push(Sense::Ge);
                rhs.push(base[j]);
            }
            let mut c = vec![0.0; n];
            c.extend_from_slice(&[1.0, -1.0]);
            let sol = lp::solve_max(&c, &rows, &senses, &rhs).map_err(GameError::Lp)?;
            let delta = sol.x[n] - sol.x[n + 1];
            if delta > SUPPORT_THRESHOLD {
                out.push(DominanceRecord {
                    action: alpha,
                    dominator: sol.x[..n].to_vec(),
                    margin: delta,
                    strict_profiles: Vec::new(),
                });
            }
        } else {
            // vars: p (n); maximize total margin with every margin >= 0
            let mut rows = Vec::new();
            let mut senses = Vec::new();
            let mut rhs = Vec::new();
            rows.push(vec![1.0; n]);
            senses.push(Sense::Eq);
            rhs.push(1.0);
            for (j, row) in payoff_rows.iter().enumerate() {
                rows.push(row.clone());
                senses.push(Sense::Ge);
                rhs.push(base[j]);
            }
            let c: Vec<f64> = (0..n)
                .map(|a| payoff_rows.iter().map(|row| row[a]).sum::<f64>())
                .collect();
            let sol = lp::solve_max(&c, &rows, &senses, &rhs).map_err(GameError::Lp)?;
            let total: f64 = sol.objective - base.iter().sum::<f64>();
            if total > SUPPORT_THRESHOLD {
                let p = &sol.x[..n];
                let margins: Vec<f64> = payoff_rows
                    .iter()
                    .zip(&base)
                    .map(|(row, b)| row.iter().zip(p).map(|(u, pi)| u * pi).sum::<f64>() - b)
                    .collect();
                let strict_profiles: Vec<Vec<usize>> = opponents
                    .iter()
                    .zip(&margins)
                    .filter(|(_, &m)| m > SUPPORT_THRESHOLD)
                    .map(|(opp, _)| full_profile(k, alpha, opp))
                    .collect();
                let min_margin = margins
                    .iter()
                    .fold(f64::INFINITY, |m, &v| m.min(v))
                    .max(0.0);
                out.push(DominanceRecord {
                    action: alpha,
                    dominator: p.to_vec(),
                    margin: min_margin,
                    strict_profiles,
                });
            }
        }
    }
    Ok(out)
}

/// A restricted game together with the index maps back into the original
/// action sets.
#[derive(Debug, Clone)]
pub struct Restriction {
    pub game: Game,
    /// `kept[k][i]` is the original index of restricted action `i`.
    pub kept: Vec<Vec<usize>>,
}

/// Restrict the game to per-player action subsets.
pub fn restrict(game: &Game, supports: &[Vec<usize>]) -> Result<Restriction, GameError> {
    if supports.len() != game.num_players() {
        return Err(GameError::DimensionMismatch {
            expected: game.action_counts().to_vec(),
            got: supports.iter().map(|s| s.len()).collect(),
        });
    }
    let mut kept = Vec::with_capacity(supports.len());
    for (k, s) in supports.iter().enumerate() {
        if s.is_empty() {
            return Err(GameError::EmptySupport(k));
        }
        let mut s = s.clone();
        s.sort_unstable();
        s.dedup();
        for &a in &s {
            if a >= game.num_actions(k) {
                return Err(GameError::BadActionIndex(k, a));
            }
        }
        kept.push(s);
    }
    let counts: Vec<usize> = kept.iter().map(|s| s.len()).collect();
    let mut tensors = vec![Vec::new(); game.num_players()];
    for sub_profile in ProfileIter::new(counts.clone()) {
        let orig: Vec<usize> = sub_profile
            .iter()
            .enumerate()
            .map(|(k, &i)| kept[k][i])
            .collect();
        for k in 0..game.num_players() {
            tensors[k].push(game.pure_payoff(k, &orig));
        }
    }
    // Restrictions may legitimately pin a player to a single action, so
    // bypass the two-action floor enforced for fresh games.
    Ok(Restriction {
        game: Game {
            num_players: game.num_players(),
            action_counts: counts,
            payoff_tensors: tensors,
        },
        kept,
    })
}

/// Payoff vector of player `k` against the opponents' marginal of a
/// correlated strategy.
pub fn marginal_payoff_vector(
    game: &Game,
    k: usize,
    chi: &CorrelatedStrategy,
) -> Result<Vec<f64>, GameError> {
    if k >= game.num_players() {
        return Err(GameError::PlayerIndex(k));
    }
    if chi.action_counts != game.action_counts() {
        return Err(GameError::DimensionMismatch {
            expected: game.action_counts().to_vec(),
            got: chi.action_counts.clone(),
        });
    }
    let mut v = vec![0.0; game.num_actions(k)];
    for opp in opponent_profiles(game, k) {
        // chi_{-k}(a_{-k}): sum the joint over player k's own action
        let mut weight = 0.0;
        for own in 0..game.num_actions(k) {
            weight += chi.joint[game.profile_index(&full_profile(k, own, &opp))];
        }
        if weight != 0.0 {
            for (a, va) in v.iter_mut().enumerate() {
                *va += weight * game.pure_payoff(k, &full_profile(k, a, &opp));
            }
        }
    }
    Ok(v)
}

/// Builtin named games for the CLI.
pub fn builtin(name: &str) -> Result<Game, GameError> {
    match name {
        "matching_pennies" => Game::from_bimatrix(
            &[vec![1.0, -1.0], vec![-1.0, 1.0]],
            &[vec![-1.0, 1.0], vec![1.0, -1.0]],
        ),
        "rps" => {
            // rock, paper, scissors; win 1 / lose -1 / tie 0
            let a = vec![
                vec![0.0, -1.0, 1.0],
                vec![1.0, 0.0, -1.0],
                vec![-1.0, 1.0, 0.0],
            ];
            let b: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
            Game::from_bimatrix(&a, &b)
        }
        "coord2" => Game::from_bimatrix(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
        ),
        other => Err(GameError::UnknownBuiltin(other.to_string())),
    }
}

pub fn builtin_names() -> &'static [&'static str] {
    &["matching_pennies", "rps", "coord2"]
}
