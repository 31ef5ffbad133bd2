//! Import of external trajectory exports from CSV.

use std::path::Path;

use kerule_core::statespace::{Trajectory, TrajectoryMeta};
use kerule_core::Vector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which CSV columns hold what. Rows of one trajectory must appear in
/// increasing time; rows of different trajectories may interleave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub time: String,
    /// Trajectory key column; without it the whole file is one trajectory.
    #[serde(default)]
    pub trajectory: Option<String>,
    /// Ground-truth state columns, possibly none.
    #[serde(default)]
    pub state: Vec<String>,
    pub obs: Vec<String>,
    #[serde(default = "default_label")]
    pub benchmark: String,
    /// Fill interior ground-truth gaps linearly in time instead of
    /// splitting the trajectory there.
    #[serde(default)]
    pub interpolate: bool,
}

fn default_label() -> String {
    "external".into()
}

struct Row {
    t: f64,
    state: Option<Vec<f64>>,
    obs: Option<Vec<f64>>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Mapping(format!("no column named `{name}`")))
}

/// All cells present, all empty (`None`), or an error for a partial row.
fn cells(rec: &csv::StringRecord, idx: &[usize], line: u64, names: &[String]) -> Result<Option<Vec<f64>>> {
    let raw: Vec<&str> = idx.iter().map(|&i| rec.get(i).unwrap_or("").trim()).collect();
    if raw.iter().all(|c| c.is_empty()) {
        return Ok(None);
    }
    raw.iter()
        .zip(names)
        .map(|(c, n)| {
            c.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Mapping(format!("line {line}: column `{n}` holds `{c}`, not a finite number")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn fill_gaps(rows: &mut [Row]) {
    let known: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].state.is_some()).collect();
    for w in known.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b == a + 1 {
            continue;
        }
        let (sa, sb) = (rows[a].state.clone().unwrap(), rows[b].state.clone().unwrap());
        let (ta, tb) = (rows[a].t, rows[b].t);
        for row in &mut rows[a + 1..b] {
            let u = (row.t - ta) / (tb - ta);
            row.state = Some(sa.iter().zip(&sb).map(|(x, y)| x + u * (y - x)).collect());
        }
    }
}

pub fn ingest_csv(path: &Path, map: &ColumnMap) -> Result<Vec<Trajectory>> {
    if map.obs.is_empty() {
        return Err(Error::Mapping("at least one observation column is required".into()));
    }
    let csv_err = |source| Error::Csv { path: path.into(), source };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let t_col = column(&headers, &map.time)?;
    let key_col = map.trajectory.as_deref().map(|k| column(&headers, k)).transpose()?;
    let s_cols = map.state.iter().map(|c| column(&headers, c)).collect::<Result<Vec<_>>>()?;
    let o_cols = map.obs.iter().map(|c| column(&headers, c)).collect::<Result<Vec<_>>>()?;

    let mut groups: Vec<(String, Vec<Row>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let key = key_col.map_or(String::new(), |k| rec.get(k).unwrap_or("").to_string());
        let t_raw = rec.get(t_col).unwrap_or("");
        let t: f64 = t_raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::Mapping(format!("line {line}: time `{t_raw}` is not a finite number")))?;
        let state = if s_cols.is_empty() { None } else { cells(&rec, &s_cols, line, &map.state)? };
        let obs = cells(&rec, &o_cols, line, &map.obs)?;
        let gi = match groups.iter().position(|g| g.0 == key) {
            Some(i) => i,
            None => {
                groups.push((key.clone(), Vec::new()));
                groups.len() - 1
            }
        };
        let rows = &mut groups[gi].1;
        if rows.last().is_some_and(|r| t <= r.t) {
            return Err(Error::NonMonotoneTime { trajectory: key, line });
        }
        rows.push(Row { t, state, obs });
    }

    let mut out = Vec::new();
    for (key, mut rows) in groups {
        if map.interpolate && !s_cols.is_empty() {
            fill_gaps(&mut rows);
        }
        let usable = |r: &Row| r.obs.is_some() && (s_cols.is_empty() || r.state.is_some());
        let mut start = 0;
        while start < rows.len() {
            if !usable(&rows[start]) {
                start += 1;
                continue;
            }
            let mut end = start;
            while end < rows.len() && usable(&rows[end]) {
                end += 1;
            }
            if end - start >= 2 {
                let seg = &rows[start..end];
                let obs = seg.iter().map(|r| Vector::from_vec(r.obs.clone().unwrap())).collect();
                let states = (!s_cols.is_empty())
                    .then(|| seg.iter().map(|r| Vector::from_vec(r.state.clone().unwrap())).collect());
                let meta = TrajectoryMeta { benchmark: map.benchmark.clone(), id: out.len() as u64, seed: 0 };
                out.push(Trajectory::new(states, obs, meta)?);
            } else {
                log::warn!("trajectory `{key}`: dropping a {}-row segment between gaps", end - start);
            }
            start = end;
        }
    }
    Ok(out)
}
