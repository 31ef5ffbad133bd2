//! On-disk layout of a finished search.

use std::path::{Path, PathBuf};

use kerule_core::evolve::{CandidateRecord, IslandState, SearchHistory};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::files;

/// Database export entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramEntry {
    pub name: String,
    pub fitness: f64,
    pub cycle: usize,
    pub island: usize,
    pub program_text: String,
}

impl From<&CandidateRecord> for ProgramEntry {
    fn from(r: &CandidateRecord) -> Self {
        ProgramEntry {
            name: format!("{:016x}", r.id),
            fitness: r.fitness,
            cycle: r.cycle,
            island: r.island,
            program_text: r.text.clone(),
        }
    }
}

/// Writes `best.kerule`, `history.csv` and `island-<i>.json`, returning
/// the paths written.
pub fn write_search_output(dir: &Path, best: &CandidateRecord, history: &SearchHistory, islands: &[IslandState]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let best_path = dir.join("best.kerule");
    files::write_rule(&best.program, &best_path)?;
    out.push(best_path);
    let hist = dir.join("history.csv");
    files::write_string(&hist, &history.to_csv())?;
    out.push(hist);
    for isl in islands {
        let entries: Vec<ProgramEntry> = isl.database().iter().map(ProgramEntry::from).collect();
        let p = dir.join(format!("island-{}.json", isl.id));
        files::write_json(&entries, &p)?;
        out.push(p);
    }
    Ok(out)
}
