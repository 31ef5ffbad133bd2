//! Trajectory text format and train/val/test splitting.
//!
//! A trajectory file is plain text:
//!
//! ```text
//! kerule-trajectories 1
//! state_dim 4
//! obs_dim 2
//! benchmark lidar
//! begin id=0 seed=17 benchmark=lidar
//! 0,1e0,2e0,5e-1,0e0,1.1e0,1.9e0
//! ...
//! end
//! ```
//!
//! Each row is `t, state..., obs...`. Observation-only blocks leave the
//! state cells empty. Numbers use the shortest representation that reads
//! back to the same `f64`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::linalg::Vector;
use crate::rng;
use crate::statespace::{StateError, Trajectory, TrajectoryMeta};

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "kerule-trajectories";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("block {block}: row width or state presence does not match the header")]
    DimensionMismatch { block: usize },
    #[error("block {block}: time is not increasing")]
    NonMonotoneTime { block: usize },
    #[error("bad split: {0}")]
    Split(String),
    #[error("label `{0}` contains whitespace")]
    Label(String),
    #[error("trajectories disagree on dimensions")]
    Mixed,
    #[error(transparent)]
    State(#[from] StateError),
}

/// Serializes trajectories. All must share state and observation sizes;
/// observation-only trajectories are allowed next to ones with states.
pub fn write_text(trajs: &[Trajectory]) -> Result<String, DatasetError> {
    let obs_dim = trajs.first().map_or(0, Trajectory::obs_dim);
    let state_dim = trajs.iter().find_map(Trajectory::state_dim).unwrap_or(0);
    if trajs.iter().any(|t| t.obs_dim() != obs_dim || t.state_dim().is_some_and(|n| n != state_dim)) {
        return Err(DatasetError::Mixed);
    }
    let label = trajs.first().map_or("", |t| t.meta.benchmark.as_str());
    for t in trajs {
        if t.meta.benchmark.is_empty() || t.meta.benchmark.chars().any(char::is_whitespace) {
            return Err(DatasetError::Label(t.meta.benchmark.clone()));
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {SCHEMA_VERSION}");
    let _ = writeln!(s, "state_dim {state_dim}");
    let _ = writeln!(s, "obs_dim {obs_dim}");
    let _ = writeln!(s, "benchmark {}", if label.is_empty() { "-" } else { label });
    for tr in trajs {
        let _ = writeln!(s, "begin id={} seed={} benchmark={}", tr.meta.id, tr.meta.seed, tr.meta.benchmark);
        for t in 0..tr.len() {
            let _ = write!(s, "{t}");
            match tr.states() {
                Some(st) => st[t].iter().for_each(|v| {
                    let _ = write!(s, ",{v:e}");
                }),
                None => (0..state_dim).for_each(|_| s.push(',')),
            }
            for v in tr.observations()[t].iter() {
                let _ = write!(s, ",{v:e}");
            }
            s.push('\n');
        }
        s.push_str("end\n");
    }
    Ok(s)
}

fn schema(line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Schema { line, message: message.into() }
}

fn header_value<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<(usize, &'a str), DatasetError> {
    let (no, l) = lines.next().ok_or_else(|| schema(0, format!("missing `{key}`")))?;
    match l.split_once(' ') {
        Some((k, v)) if k == key => Ok((no, v.trim())),
        _ => Err(schema(no, format!("expected `{key} <value>`"))),
    }
}

fn parse_num<T: core::str::FromStr>(line: usize, s: &str) -> Result<T, DatasetError> {
    s.trim().parse().map_err(|_| schema(line, format!("bad number `{s}`")))
}

pub fn read_text(text: &str) -> Result<Vec<Trajectory>, DatasetError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (no, v) = header_value(&mut lines, MAGIC)?;
    if parse_num::<u32>(no, v)? != SCHEMA_VERSION {
        return Err(schema(no, format!("unsupported schema version {v}")));
    }
    let (no, v) = header_value(&mut lines, "state_dim")?;
    let state_dim: usize = parse_num(no, v)?;
    let (no, v) = header_value(&mut lines, "obs_dim")?;
    let obs_dim: usize = parse_num(no, v)?;
    if obs_dim == 0 {
        return Err(schema(no, "obs_dim must be positive"));
    }
    let (_, default_label) = header_value(&mut lines, "benchmark")?;
    let width = 1 + state_dim + obs_dim;

    let mut out = Vec::new();
    while let Some((no, l)) = lines.next() {
        let block = out.len();
        let rest = l
            .strip_prefix("begin")
            .ok_or_else(|| schema(no, "expected `begin`"))?;
        let mut meta = TrajectoryMeta { benchmark: default_label.to_string(), id: block as u64, seed: 0 };
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("id", v)) => meta.id = parse_num(no, v)?,
                Some(("seed", v)) => meta.seed = parse_num(no, v)?,
                Some(("benchmark", v)) => meta.benchmark = v.to_string(),
                _ => return Err(schema(no, format!("bad block field `{kv}`"))),
            }
        }
        let mut states: Vec<Vector> = Vec::new();
        let mut obs: Vec<Vector> = Vec::new();
        let mut has_states: Option<bool> = None;
        let mut last_t: Option<f64> = None;
        loop {
            let (no, l) = lines.next().ok_or_else(|| schema(no, "block without `end`"))?;
            if l.trim() == "end" {
                break;
            }
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() != width {
                return Err(DatasetError::DimensionMismatch { block });
            }
            let t: f64 = parse_num(no, cells[0])?;
            if last_t.is_some_and(|p| !(t > p)) {
                return Err(DatasetError::NonMonotoneTime { block });
            }
            last_t = Some(t);
            let sc = &cells[1..1 + state_dim];
            let present = state_dim > 0 && sc.iter().all(|c| !c.trim().is_empty());
            let absent = sc.iter().all(|c| c.trim().is_empty());
            if !present && !absent {
                return Err(DatasetError::DimensionMismatch { block });
            }
            if *has_states.get_or_insert(present) != present {
                return Err(DatasetError::DimensionMismatch { block });
            }
            if present {
                let v = sc.iter().map(|c| parse_num(no, c)).collect::<Result<Vec<f64>, _>>()?;
                states.push(Vector::from_vec(v));
            }
            let v = cells[1 + state_dim..].iter().map(|c| parse_num(no, c)).collect::<Result<Vec<f64>, _>>()?;
            obs.push(Vector::from_vec(v));
        }
        let states = (has_states == Some(true)).then_some(states);
        out.push(Trajectory::new(states, obs, meta)?);
    }
    Ok(out)
}

/// Split sizes, either as counts that sum to the number of trajectories
/// or as fractions that sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSizes {
    Counts { train: usize, val: usize, test: usize },
    Fractions { train: f64, val: f64, test: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub sizes: SplitSizes,
    pub seed: u64,
}

impl SplitSpec {
    fn counts(&self, total: usize) -> Result<(usize, usize, usize), DatasetError> {
        match self.sizes {
            SplitSizes::Counts { train, val, test } => {
                if train + val + test != total {
                    return Err(DatasetError::Split(format!(
                        "counts {train}+{val}+{test} do not sum to {total}"
                    )));
                }
                Ok((train, val, test))
            }
            SplitSizes::Fractions { train, val, test } => {
                let fr = [train, val, test];
                if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || ((train + val + test) - 1.0).abs() > 1e-9 {
                    return Err(DatasetError::Split("fractions must lie in [0, 1] and sum to 1".into()));
                }
                let n = total as f64;
                let v = libm::round(val * n) as usize;
                let t = (libm::round(test * n) as usize).min(total - v);
                Ok((total - v - t, v, t))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

/// Seeded shuffle, then consecutive slices. Each part keeps the input order.
pub fn split(trajs: &[Trajectory], spec: &SplitSpec) -> Result<DataSplit, DatasetError> {
    let (n_train, n_val, _) = spec.counts(trajs.len())?;
    let mut idx: Vec<usize> = (0..trajs.len()).collect();
    let mut r = rng::named(spec.seed, "split");
    for k in (1..idx.len()).rev() {
        idx.swap(k, r.random_range(0..=k));
    }
    let part = |ix: &[usize]| {
        let mut ix = ix.to_vec();
        ix.sort_unstable();
        ix.into_iter().map(|i| trajs[i].clone()).collect::<Vec<_>>()
    };
    Ok(DataSplit {
        train: part(&idx[..n_train]),
        val: part(&idx[n_train..n_train + n_val]),
        test: part(&idx[n_train + n_val..]),
    })
}
