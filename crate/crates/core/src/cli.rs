//! Command-line front end: load games, configure dynamics, run
//! integrations and parameter sweeps, and evaluate trajectory checks.
//!
//! Exit codes: 0 success, 1 a requested check failed, 2 usage or IO error.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::choice;
use crate::dynamics::{self, DynamicsSpec, FieldKind, Init, TieRule, Variant};
use crate::game::{self, Game, StrategyProfile};
use crate::penalty::PenaltySpec;
use crate::trajectory::{read_metadata, RunMetadata, Trajectory};

/// Exit code carrier for check failures (exit 1, not a usage error).
#[derive(Debug)]
pub struct CheckFailure(pub String);

impl std::fmt::Display for CheckFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for CheckFailure {}

#[derive(Parser)]
#[command(
    name = "gamedyn",
    about = "Learning dynamics in finite games: simulate, analyze, sweep"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a learning process and write the trajectory CSV.
    Simulate(SimulateArgs),
    /// Run diagnostics on a stored trajectory.
    Analyze(AnalyzeArgs),
    /// Run a grid of simulations in parallel.
    Sweep(SweepArgs),
    /// List builtin games.
    Games,
    /// Evaluate a choice map at a score vector (debugging aid).
    Choice(ChoiceArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON run configuration; other flags are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Builtin name (matching_pennies, rps, coord2) or a game JSON path.
    #[arg(long)]
    game: Option<String>,
    /// Penalty selector(s): one for all players or a comma list.
    /// Grammar: gibbs | quad | tsallis:<q> | renyi:<q> | logbar.
    #[arg(long)]
    penalty: Option<String>,
    /// Process: score | discount:<lambda> | er | cross | url | field:<kind>
    /// with kind one of rld | replicator | projection | qrep:<q> |
    /// renyi:<q> | logbar.
    #[arg(long, default_value = "score")]
    variant: String,
    /// Per-player rates, comma separated (default all 1).
    #[arg(long)]
    gamma: Option<String>,
    /// Initial scores: `zeros` or a flat comma list (player-major).
    #[arg(long)]
    y0: Option<String>,
    /// Initial strategies: `uniform` or a flat comma list; mapped through
    /// the inverse choice map for score-driven variants.
    #[arg(long)]
    x0: Option<String>,
    /// Tie rule for the unpenalized variant.
    #[arg(long, default_value = "lowest")]
    tie: String,
    /// Warm-up length for the unpenalized variant.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long = "T", default_value_t = 100.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Trajectory CSV path.
    #[arg(long, default_value = "traj.csv")]
    out: PathBuf,
    /// Metadata sidecar path (default `<out>.meta.json`).
    #[arg(long)]
    meta: Option<PathBuf>,
}

/// JSON-loadable run configuration mirroring the simulate flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub game: String,
    #[serde(default)]
    pub penalty: Option<String>,
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    #[serde(default)]
    pub y0: Option<String>,
    #[serde(default)]
    pub x0: Option<String>,
    #[serde(default = "default_tie")]
    pub tie: String,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub meta: Option<PathBuf>,
}

fn default_variant() -> String {
    "score".into()
}

fn default_tie() -> String {
    "lowest".into()
}

fn default_tau() -> f64 {
    1.0
}

impl RunConfig {
    fn from_flags(run: &RunFlags) -> Result<Self> {
        Ok(RunConfig {
            game: run
                .game
                .clone()
                .ok_or_else(|| anyhow!("--game is required (or use --config)"))?,
            penalty: run.penalty.clone(),
            variant: run.variant.clone(),
            gamma: match &run.gamma {
                Some(s) => Some(parse_csv_floats(s)?),
                None => None,
            },
            y0: run.y0.clone(),
            x0: run.x0.clone(),
            tie: run.tie.clone(),
            tau: run.tau,
            t_end: run.t_end,
            dt: run.dt,
            out: Some(run.out.clone()),
            meta: run.meta.clone(),
        })
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trajectory CSV produced by `simulate`.
    #[arg(long)]
    traj: PathBuf,
    /// Metadata sidecar (default `<traj>.meta.json`).
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Game to check against; must match the metadata hash.
    #[arg(long)]
    game: String,
    /// Comma-separated checks, e.g.
    /// `conservation,extinction:0:1,rate-envelope:0:1:1.0,score-gap:5,
    /// br-tracking:0.05,time-average:0.5,0.5,0.5,0.5:0.01,stationary:1e-9`.
    #[arg(long)]
    check: String,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep configuration JSON: `{ "template": <run config>, "grid": {...} }`.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for per-run CSVs and the index.
    #[arg(long, default_value = "sweep-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ChoiceArgs {
    #[arg(long)]
    penalty: String,
    /// Comma-separated score vector.
    #[arg(long)]
    y: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub template: RunConfig,
    #[serde(default)]
    pub grid: SweepGrid,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(default)]
    pub q: Vec<f64>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub dt: Vec<f64>,
    #[serde(default)]
    pub y0_seeds: Vec<u64>,
}

pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            if e.is::<CheckFailure>() {
                eprintln!("check failed: {e}");
                1
            } else {
                eprintln!("error: {e:#}");
                2
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            let config = match args.config {
                Some(path) => {
                    let raw = fs::read_to_string(&path)
                        .with_context(|| format!("reading config {}", path.display()))?;
                    serde_json::from_str(&raw).context("parsing run config")?
                }
                None => RunConfig::from_flags(&args.run)?,
            };
            cmd_simulate(&config)?;
            Ok(())
        }
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Games => {
            for name in game::builtin_names() {
                let g = game::builtin(name).expect("builtin");
                println!(
                    "{name}: {} players, actions {:?}{}",
                    g.num_players(),
                    g.action_counts(),
                    if g.is_zero_sum() { ", zero-sum" } else { "" }
                );
            }
            Ok(())
        }
        Command::Choice(args) => {
            let y = parse_csv_floats(&args.y)?;
            let spec = PenaltySpec::parse(&args.penalty, y.len())?;
            let x = choice::choice_map(&spec, &y)?;
            let rendered: Vec<String> = x.iter().map(|v| format!("{v:.16e}")).collect();
            println!("{}", rendered.join(","));
            Ok(())
        }
    }
}

fn parse_csv_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number `{p}`"))
        })
        .collect()
}

pub fn load_game(source: &str) -> Result<Game> {
    if game::builtin_names().contains(&source) {
        return Ok(game::builtin(source)?);
    }
    let raw = fs::read_to_string(source)
        .with_context(|| format!("game `{source}` is not a builtin and not a readable file"))?;
    let g: Game = serde_json::from_str(&raw).context("parsing game JSON")?;
    // round-trip through the constructor to enforce invariants
    Ok(Game::new(
        g.action_counts().to_vec(),
        (0..g.num_players())
            .map(|k| g.payoff_tensor(k).to_vec())
            .collect(),
    )?)
}

fn parse_penalties(selector: &str, game: &Game) -> Result<Vec<PenaltySpec>> {
    let parts: Vec<&str> = selector.split(',').map(|s| s.trim()).collect();
    let n = game.num_players();
    if parts.len() == 1 {
        return (0..n)
            .map(|k| Ok(PenaltySpec::parse(parts[0], game.num_actions(k))?))
            .collect();
    }
    if parts.len() != n {
        bail!("penalty list has {} entries for {} players", parts.len(), n);
    }
    parts
        .iter()
        .enumerate()
        .map(|(k, p)| Ok(PenaltySpec::parse(p, game.num_actions(k))?))
        .collect()
}

fn parse_variant(s: &str, tie: &str, tau: f64) -> Result<Variant> {
    if let Some(l) = s.strip_prefix("discount:") {
        return Ok(Variant::Discounted { lambda: l.parse()? });
    }
    if let Some(kind) = s.strip_prefix("field:") {
        let kind = match kind {
            "rld" => FieldKind::GenericRld,
            "replicator" => FieldKind::Replicator,
            "projection" => FieldKind::Projection,
            "logbar" => FieldKind::LogBarrier,
            other => {
                if let Some(q) = other.strip_prefix("qrep:") {
                    FieldKind::QReplicator { q: q.parse()? }
                } else if let Some(q) = other.strip_prefix("renyi:") {
                    FieldKind::Renyi { q: q.parse()? }
                } else {
                    bail!("unknown field kind `{other}`");
                }
            }
        };
        return Ok(Variant::DirectField { kind });
    }
    match s {
        "score" => Ok(Variant::ScoreRl),
        "er" => Ok(Variant::ErevRoth),
        "cross" => Ok(Variant::CrossBs),
        "url" => {
            let tie = match tie {
                "lowest" => TieRule::LowestIndex,
                "uniform" => TieRule::UniformMix,
                other => bail!("unknown tie rule `{other}`"),
            };
            Ok(Variant::Unpenalized { tie, tau })
        }
        other => bail!("unknown variant `{other}`"),
    }
}

fn split_flat(game: &Game, flat: &[f64]) -> Result<Vec<Vec<f64>>> {
    let total: usize = game.action_counts().iter().sum();
    if flat.len() != total {
        bail!(
            "initial condition has {} entries, game needs {total}",
            flat.len()
        );
    }
    let mut out = Vec::with_capacity(game.num_players());
    let mut at = 0;
    for &c in game.action_counts() {
        out.push(flat[at..at + c].to_vec());
        at += c;
    }
    Ok(out)
}

/// Build the dynamics spec and initial state from a run configuration.
pub fn build_run(config: &RunConfig, game: &Game) -> Result<(DynamicsSpec, Init)> {
    let variant = parse_variant(&config.variant, &config.tie, config.tau)?;
    let needs_penalty = matches!(
        variant,
        Variant::ScoreRl
            | Variant::Discounted { .. }
            | Variant::DirectField {
                kind: FieldKind::GenericRld
            }
    );
    let penalties = match (&config.penalty, needs_penalty) {
        (Some(sel), _) => Some(parse_penalties(sel, game)?),
        (None, true) => bail!("variant `{}` requires --penalty", config.variant),
        (None, false) => None,
    };
    let rates = match &config.gamma {
        Some(g) if g.len() == 1 => vec![g[0]; game.num_players()],
        Some(g) => g.clone(),
        None => vec![1.0; game.num_players()],
    };
    let spec = DynamicsSpec {
        variant,
        penalties: penalties.clone(),
        rates,
    };

    let init = match (&config.y0, &config.x0) {
        (Some(_), Some(_)) => bail!("give either y0 or x0, not both"),
        (Some(y0), None) => {
            if y0 == "zeros" {
                Init::zeros(game)
            } else {
                Init::Scores(split_flat(game, &parse_csv_floats(y0)?)?)
            }
        }
        (None, Some(x0)) => {
            let strategies = if x0 == "uniform" {
                game.action_counts()
                    .iter()
                    .map(|&n| vec![1.0 / n as f64; n])
                    .collect()
            } else {
                split_flat(game, &parse_csv_floats(x0)?)?
            };
            match variant {
                Variant::ScoreRl | Variant::Discounted { .. } => {
                    // map through the inverse choice map per player
                    let ps = penalties.as_ref().expect("checked above");
                    let scores = strategies
                        .iter()
                        .enumerate()
                        .map(|(k, xk)| Ok(choice::inverse_choice(&ps[k], xk)?.into()))
                        .collect::<Result<Vec<Vec<f64>>>>()?;
                    Init::Scores(scores)
                }
                _ => Init::Strategies(strategies),
            }
        }
        (None, None) => match variant {
            Variant::ScoreRl | Variant::Discounted { .. } => Init::zeros(game),
            Variant::ErevRoth => {
                Init::Scores(game.action_counts().iter().map(|&n| vec![1.0; n]).collect())
            }
            _ => Init::uniform(game),
        },
    };
    Ok((spec, init))
}

pub fn cmd_simulate(config: &RunConfig) -> Result<Trajectory> {
    let game = load_game(&config.game)?;
    let (spec, init) = build_run(config, &game)?;
    let traj = dynamics::integrate(&game, &spec, &init, config.t_end, config.dt)?;
    if let Some(out) = &config.out {
        traj.write_csv(out)?;
        let meta_path = config.meta.clone().unwrap_or_else(|| sidecar_path(out));
        traj.write_metadata(&meta_path)?;
        println!(
            "wrote {} rows to {} (metadata {})",
            traj.len(),
            out.display(),
            meta_path.display()
        );
    }
    Ok(traj)
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    csv.with_file_name(name)
}

#[derive(Debug, Serialize)]
struct CheckResult {
    check: String,
    pass: bool,
    details: serde_json::Value,
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let meta_path = args
        .meta
        .clone()
        .unwrap_or_else(|| sidecar_path(&args.traj));
    let metadata: RunMetadata = read_metadata(&meta_path)
        .with_context(|| format!("reading metadata {}", meta_path.display()))?;
    let game = load_game(&args.game)?;
    if game.hash() != metadata.game_hash {
        bail!(
            "game hash mismatch: metadata {} vs --game {}",
            metadata.game_hash,
            game.hash()
        );
    }
    let traj = Trajectory::read_csv(&args.traj, metadata.clone())?;

    let mut results = Vec::new();
    for spec in split_checks(&args.check) {
        results.push(run_check(&spec, &traj, &game, &metadata)?);
    }

    for r in &results {
        println!(
            "{} {} {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.check,
            compact(&r.details)
        );
    }
    let report = serde_json::to_string_pretty(&results)?;
    match &args.report {
        Some(path) => fs::write(path, report)?,
        None => println!("{report}"),
    }
    if results.iter().any(|r| !r.pass) {
        return Err(CheckFailure("one or more checks failed".into()).into());
    }
    Ok(())
}

/// Split the check list on commas that are not inside a `name:args` payload
/// containing commas (time-average targets); a check starts at an
/// alphabetic character following a comma.
fn split_checks(s: &str) -> Vec<String> {
    let known = [
        "conservation",
        "extinction",
        "rate-envelope",
        "score-gap",
        "br-tracking",
        "time-average",
        "stationary",
    ];
    let mut out: Vec<String> = Vec::new();
    for piece in s.split(',') {
        let starts_new = known.iter().any(|k| piece.trim_start().starts_with(k));
        if starts_new {
            out.push(piece.trim().to_string());
        } else if let Some(last) = out.last_mut() {
            last.push(',');
            last.push_str(piece.trim());
        }
    }
    out
}

fn compact(v: &serde_json::Value) -> String {
    serde_json::to_string(v).unwrap_or_default()
}

fn run_check(
    spec: &str,
    traj: &Trajectory,
    game: &Game,
    metadata: &RunMetadata,
) -> Result<CheckResult> {
    let (name, rest) = match spec.split_once(':') {
        Some((n, r)) => (n, Some(r)),
        None => (spec, None),
    };
    match name {
        "conservation" => {
            let tol: f64 = rest.map(|r| r.parse()).transpose()?.unwrap_or(1e-6);
            if !metadata.has_scores {
                bail!("conservation is a score-based check; this trajectory stores no scores");
            }
            let penalties = metadata
                .spec
                .penalties
                .clone()
                .ok_or_else(|| anyhow!("metadata carries no penalties"))?;
            let p = StrategyProfile::uniform(game);
            let rep = analysis::zero_sum_conservation(traj, game, &penalties, &p, 1)?;
            Ok(CheckResult {
                check: spec.into(),
                pass: rep.max_drift <= tol,
                details: serde_json::to_value(&rep)?,
            })
        }
        "extinction" => {
            let parts: Vec<&str> = rest.unwrap_or("").split(':').collect();
            if parts.len() < 2 {
                bail!("extinction:<player>:<action>[:threshold]");
            }
            let k: usize = parts[0].parse()?;
            let a: usize = parts[1].parse()?;
            let threshold: f64 = parts.get(2).map(|s| s.parse()).transpose()?.unwrap_or(1e-9);
            let rep = analysis::extinction_report(traj, k, a, threshold)?;
            Ok(CheckResult {
                check: spec.into(),
                pass: rep.extinct,
                details: serde_json::to_value(&rep)?,
            })
        }
        "rate-envelope" => {
            let parts: Vec<&str> = rest.unwrap_or("").split(':').collect();
            if parts.len() < 3 {
                bail!("rate-envelope:<player>:<action>:<delta>[:gamma]");
            }
            let k: usize = parts[0].parse()?;
            let a: usize = parts[1].parse()?;
            let delta: f64 = parts[2].parse()?;
            // default to the rate the run was actually integrated with
            let gamma: f64 = match parts.get(3) {
                Some(s) => s.parse()?,
                None => metadata.spec.rates[k],
            };
            let penalties = metadata
                .spec
                .penalties
                .clone()
                .ok_or_else(|| anyhow!("metadata carries no penalties"))?;
            let rep = analysis::rate_envelope_check(traj, k, a, &penalties[k], gamma, delta)?;
            Ok(CheckResult {
                check: spec.into(),
                pass: rep.violations == 0,
                details: serde_json::to_value(&rep)?,
            })
        }
        "score-gap" => {
            if !metadata.has_scores {
                bail!("score-gap is a score-based check; this trajectory stores no scores");
            }
            let rep = analysis::score_gap_series(traj)?;
            let pass = match rest {
                Some(bound) => {
                    let b: f64 = bound.parse()?;
                    rep.max_gap.iter().all(|&g| g <= b)
                }
                None => true,
            };
            Ok(CheckResult {
                check: spec.into(),
                pass,
                details: serde_json::to_value(&rep)?,
            })
        }
        "br-tracking" => {
            let bound: f64 = rest.map(|r| r.parse()).transpose()?.unwrap_or(0.05);
            let rep = analysis::br_tracking_gap(traj, game)?;
            Ok(CheckResult {
                check: spec.into(),
                pass: rep.decreasing && rep.last_decade_mean <= bound,
                details: serde_json::to_value(&rep)?,
            })
        }
        "time-average" => {
            // time-average:<flat csv target>[:tol]
            let payload = rest.ok_or_else(|| anyhow!("time-average:<target csv>[:tol]"))?;
            let (target_str, tol) = match payload.rsplit_once(':') {
                Some((t, tol)) => (t, tol.parse()?),
                None => (payload, 1e-2),
            };
            let target = parse_csv_floats(target_str)?;
            if target.len() != traj.dim() {
                bail!("target has {} entries, need {}", target.len(), traj.dim());
            }
            let avg = analysis::time_average(traj)?;
            let last = avg.x_at(avg.len() - 1);
            let err = last
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok(CheckResult {
                check: spec.into(),
                pass: err <= tol,
                details: serde_json::json!({ "sup_error": err, "tolerance": tol }),
            })
        }
        "stationary" => {
            let tol: f64 = rest.map(|r| r.parse()).transpose()?.unwrap_or(1e-9);
            let x0 = traj.x_at(0).to_vec();
            let mut drift: f64 = 0.0;
            for i in 0..traj.len() {
                for (a, b) in traj.x_at(i).iter().zip(&x0) {
                    drift = drift.max((a - b).abs());
                }
            }
            Ok(CheckResult {
                check: spec.into(),
                pass: drift <= tol,
                details: serde_json::json!({ "max_drift": drift, "tolerance": tol }),
            })
        }
        other => bail!("unknown check `{other}`"),
    }
}

#[derive(Debug, Serialize)]
struct SweepEntry {
    run_id: String,
    q: Option<f64>,
    gamma: Option<f64>,
    dt: Option<f64>,
    y0_seed: Option<u64>,
    csv: PathBuf,
    meta: PathBuf,
    status: String,
    rows: usize,
}

fn override_q(selector: &str, q: f64) -> Result<String> {
    let parts: Vec<String> = selector
        .split(',')
        .map(|p| {
            let p = p.trim();
            if p.starts_with("tsallis:") {
                Ok(format!("tsallis:{q}"))
            } else if p.starts_with("renyi:") {
                Ok(format!("renyi:{q}"))
            } else {
                bail!("penalty `{p}` has no exponent to sweep")
            }
        })
        .collect::<Result<_>>()?;
    Ok(parts.join(","))
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let raw = fs::read_to_string(&args.config)
        .with_context(|| format!("reading sweep config {}", args.config.display()))?;
    let config: SweepConfig = serde_json::from_str(&raw).context("parsing sweep config")?;
    let grid = &config.grid;

    // cartesian product over the populated axes; an absent axis contributes
    // a single "no override" point, a present-but-empty grid is a no-op
    let axis = |v: &Vec<f64>| -> Vec<Option<f64>> {
        if v.is_empty() {
            vec![None]
        } else {
            v.iter().map(|&x| Some(x)).collect()
        }
    };
    let seeds: Vec<Option<u64>> = if grid.y0_seeds.is_empty() {
        vec![None]
    } else {
        grid.y0_seeds.iter().map(|&s| Some(s)).collect()
    };
    let qs = axis(&grid.q);
    let gammas = axis(&grid.gamma);
    let dts = axis(&grid.dt);

    let empty_grid = grid.q.is_empty()
        && grid.gamma.is_empty()
        && grid.dt.is_empty()
        && grid.y0_seeds.is_empty();
    if empty_grid {
        println!("empty grid: nothing to do");
        return Ok(());
    }

    fs::create_dir_all(&args.out_dir)?;
    let mut points = Vec::new();
    for &q in &qs {
        for &g in &gammas {
            for &dt in &dts {
                for &seed in &seeds {
                    points.push((q, g, dt, seed));
                }
            }
        }
    }

    let game = load_game(&config.template.game)?;
    let dim: usize = game.action_counts().iter().sum();

    let entries: Vec<Result<SweepEntry>> = points
        .par_iter()
        .enumerate()
        .map(|(idx, &(q, g, dt, seed))| {
            let mut cfg = config.template.clone();
            if let Some(q) = q {
                let sel = cfg
                    .penalty
                    .clone()
                    .ok_or_else(|| anyhow!("q sweep needs a penalty in the template"))?;
                cfg.penalty = Some(override_q(&sel, q)?);
            }
            if let Some(g) = g {
                cfg.gamma = Some(vec![g]);
            }
            if let Some(dt) = dt {
                cfg.dt = dt;
            }
            if let Some(seed) = seed {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let y0: Vec<String> = (0..dim)
                    .map(|_| format!("{:.16e}", rng.gen_range(-1.0..1.0)))
                    .collect();
                cfg.y0 = Some(y0.join(","));
                cfg.x0 = None;
            }
            let run_id = format!("run_{idx:04}");
            let csv = args.out_dir.join(format!("{run_id}.csv"));
            let meta = sidecar_path(&csv);
            cfg.out = Some(csv.clone());
            cfg.meta = Some(meta.clone());
            let traj = cmd_simulate(&cfg).with_context(|| {
                format!("{run_id} (q={q:?}, gamma={g:?}, dt={dt:?}, seed={seed:?})")
            })?;
            Ok(SweepEntry {
                run_id,
                q,
                gamma: g,
                dt,
                y0_seed: seed,
                csv,
                meta,
                status: "ok".into(),
                rows: traj.len(),
            })
        })
        .collect();

    let mut ok_entries = Vec::new();
    let mut failures = Vec::new();
    for e in entries {
        match e {
            Ok(entry) => ok_entries.push(entry),
            Err(err) => failures.push(format!("{err:#}")),
        }
    }
    let index = serde_json::json!({
        "runs": ok_entries,
        "failures": failures,
    });
    fs::write(
        args.out_dir.join("index.json"),
        serde_json::to_string_pretty(&index)?,
    )?;
    println!(
        "sweep complete: {} ok, {} failed, index at {}",
        ok_entries.len(),
        failures.len(),
        args.out_dir.join("index.json").display()
    );
    if !failures.is_empty() {
        return Err(CheckFailure(format!("{} sweep runs failed", failures.len())).into());
    }
    Ok(())
}
