//! Time-stamped integration output: strategy (and optionally score)
//! profiles per sample, plus the CSV / metadata formats the CLI emits.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::DynamicsSpec;
use crate::game::StrategyProfile;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory is empty")]
    Empty,
    #[error("times must be strictly increasing at sample {0}")]
    NonMonotoneTime(usize),
    #[error("sample {0} leaves the simplex by more than 1e-9")]
    OffSimplex(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("csv layout does not match metadata: {0}")]
    LayoutMismatch(String),
    #[error("metadata parse error: {0}")]
    Metadata(#[from] serde_json::Error),
}

/// Run provenance stored next to every trajectory file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub game_hash: String,
    pub action_counts: Vec<usize>,
    pub spec: DynamicsSpec,
    pub t_end: f64,
    pub dt: f64,
    pub integrator: String,
    pub has_scores: bool,
    /// True when a nonsteep direct field was integrated: the orbit is an
    /// extended solution that may touch and re-enter faces.
    pub extended_solution: bool,
}

/// A support-change event recorded by direct-field integration when a
/// coordinate is clamped to zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportEvent {
    pub time: f64,
    pub player: usize,
    pub action: usize,
}

/// A change of the selected pure profile in unpenalized runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionEvent {
    pub time: f64,
    /// Per player, the set of maximizing actions at this time.
    pub maximizers: Vec<Vec<usize>>,
}

/// Extra state carried by unpenalized (exact argmax) runs.
#[derive(Debug, Clone)]
pub struct UrlData {
    /// Time-averaged joint play including the warm-up interval.
    pub chi_bar: Vec<f64>,
    pub selection_events: Vec<SelectionEvent>,
    /// Largest deviation of `v^c(chi_bar)` from `y / (gamma (tau + t))`
    /// seen along the run; `None` when the initial score was supplied
    /// explicitly and the identity is not tracked.
    pub identity_max_err: Option<f64>,
    pub tau: f64,
}

/// Integration output: strictly increasing times with one strategy profile
/// (and optionally one score profile) per sample, stored flat.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    action_counts: Vec<usize>,
    offsets: Vec<usize>,
    dim: usize,
    x_data: Vec<f64>,
    y_data: Option<Vec<f64>>,
    pub metadata: RunMetadata,
    pub support_events: Vec<SupportEvent>,
    pub url: Option<UrlData>,
}

impl Trajectory {
    pub fn new(action_counts: Vec<usize>, store_scores: bool, metadata: RunMetadata) -> Self {
        let mut offsets = Vec::with_capacity(action_counts.len() + 1);
        let mut acc = 0;
        for &c in &action_counts {
            offsets.push(acc);
            acc += c;
        }
        offsets.push(acc);
        Trajectory {
            times: Vec::new(),
            action_counts,
            offsets,
            dim: acc,
            x_data: Vec::new(),
            y_data: if store_scores { Some(Vec::new()) } else { None },
            metadata,
            support_events: Vec::new(),
            url: None,
        }
    }

    pub fn push(&mut self, t: f64, x: &[f64], y: Option<&[f64]>) -> Result<(), TrajectoryError> {
        debug_assert_eq!(x.len(), self.dim);
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(TrajectoryError::NonMonotoneTime(self.times.len()));
            }
        }
        for k in 0..self.action_counts.len() {
            let s: f64 = x[self.offsets[k]..self.offsets[k + 1]].iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(TrajectoryError::OffSimplex(self.times.len()));
            }
        }
        self.times.push(t);
        self.x_data.extend_from_slice(x);
        if let Some(store) = &mut self.y_data {
            let y = y.expect("trajectory stores scores but none supplied");
            debug_assert_eq!(y.len(), self.dim);
            store.extend_from_slice(y);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn num_players(&self) -> usize {
        self.action_counts.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_scores(&self) -> bool {
        self.y_data.is_some()
    }

    /// Flat strategy state at sample `i`.
    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x_data[i * self.dim..(i + 1) * self.dim]
    }

    /// Player `k`'s strategy at sample `i`.
    pub fn x_player(&self, i: usize, k: usize) -> &[f64] {
        let base = i * self.dim;
        &self.x_data[base + self.offsets[k]..base + self.offsets[k + 1]]
    }

    /// Flat score state at sample `i`, if stored.
    pub fn y_at(&self, i: usize) -> Option<&[f64]> {
        self.y_data
            .as_ref()
            .map(|d| &d[i * self.dim..(i + 1) * self.dim])
    }

    pub fn y_player(&self, i: usize, k: usize) -> Option<&[f64]> {
        self.y_data.as_ref().map(|d| {
            let base = i * self.dim;
            &d[base + self.offsets[k]..base + self.offsets[k + 1]]
        })
    }

    /// Per-player score vectors at sample `i` as owned vectors.
    pub fn scores_at(&self, i: usize) -> Option<Vec<Vec<f64>>> {
        self.y_at(i).map(|flat| self.split(flat))
    }

    /// Split a flat state into per-player vectors.
    pub fn split(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        (0..self.action_counts.len())
            .map(|k| flat[self.offsets[k]..self.offsets[k + 1]].to_vec())
            .collect()
    }

    pub fn profile_at(&self, i: usize) -> StrategyProfile {
        StrategyProfile::new(self.split(self.x_at(i))).expect("stored samples stay on the simplex")
    }

    /// CSV serialization: header `t,x_<k>_<a>...,y_<k>_<a>...` with 1-based
    /// indices and 17-significant-digit floats for lossless round trips.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push('t');
        for (k, &c) in self.action_counts.iter().enumerate() {
            for a in 0..c {
                let _ = write!(out, ",x_{}_{}", k + 1, a + 1);
            }
        }
        if self.has_scores() {
            for (k, &c) in self.action_counts.iter().enumerate() {
                for a in 0..c {
                    let _ = write!(out, ",y_{}_{}", k + 1, a + 1);
                }
            }
        }
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(out, "{:.16e}", self.times[i]);
            for v in self.x_at(i) {
                let _ = write!(out, ",{v:.16e}");
            }
            if let Some(y) = self.y_at(i) {
                for v in y {
                    let _ = write!(out, ",{v:.16e}");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Write the CSV atomically (temp file + rename).
    pub fn write_csv(&self, path: &Path) -> Result<(), TrajectoryError> {
        let tmp = path.with_extension("csv.tmp");
        fs::write(&tmp, self.to_csv())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Write the metadata sidecar atomically.
    pub fn write_metadata(&self, path: &Path) -> Result<(), TrajectoryError> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(&self.metadata)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Read a trajectory back from CSV plus its metadata sidecar.
    pub fn read_csv(csv_path: &Path, metadata: RunMetadata) -> Result<Self, TrajectoryError> {
        let file = fs::File::open(csv_path)?;
        let mut lines = BufReader::new(file).lines();
        let header = lines.next().ok_or(TrajectoryError::Empty)??;
        let cols: Vec<&str> = header.trim().split(',').collect();

        let mut expected = vec!["t".to_string()];
        for (k, &c) in metadata.action_counts.iter().enumerate() {
            for a in 0..c {
                expected.push(format!("x_{}_{}", k + 1, a + 1));
            }
        }
        if metadata.has_scores {
            for (k, &c) in metadata.action_counts.iter().enumerate() {
                for a in 0..c {
                    expected.push(format!("y_{}_{}", k + 1, a + 1));
                }
            }
        }
        if cols != expected.iter().map(|s| s.as_str()).collect::<Vec<_>>() {
            return Err(TrajectoryError::LayoutMismatch(format!(
                "header {header:?} does not match metadata layout"
            )));
        }

        let mut traj = Trajectory::new(
            metadata.action_counts.clone(),
            metadata.has_scores,
            metadata,
        );
        let dim = traj.dim;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let parse = |s: Option<&str>, lineno: usize| -> Result<f64, TrajectoryError> {
                s.ok_or_else(|| TrajectoryError::Parse {
                    line: lineno + 2,
                    reason: "missing field".into(),
                })?
                .parse()
                .map_err(|e| TrajectoryError::Parse {
                    line: lineno + 2,
                    reason: format!("{e}"),
                })
            };
            let t = parse(fields.next(), lineno)?;
            let mut x = Vec::with_capacity(dim);
            for _ in 0..dim {
                x.push(parse(fields.next(), lineno)?);
            }
            let y = if traj.has_scores() {
                let mut y = Vec::with_capacity(dim);
                for _ in 0..dim {
                    y.push(parse(fields.next(), lineno)?);
                }
                Some(y)
            } else {
                None
            };
            if fields.next().is_some() {
                return Err(TrajectoryError::Parse {
                    line: lineno + 2,
                    reason: "trailing fields".into(),
                });
            }
            traj.push(t, &x, y.as_deref())?;
        }
        if traj.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        Ok(traj)
    }
}

pub fn read_metadata(path: &Path) -> Result<RunMetadata, TrajectoryError> {
    let raw = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&raw)?)
}
