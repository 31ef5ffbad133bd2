//! The calibration result file.

use std::path::Path;

use kerule_core::calibration::{estimate_qr_least_squares, okf_optimize, CalibrationConfig};
use kerule_core::filters::Task;
use kerule_core::statespace::{CovMat, ModelFamily, StateSpaceModel, Trajectory};
use kerule_core::{Executor, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CalibMethod {
    Lsq,
    Okf,
}

/// `Q` and `R` are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub family: ModelFamily,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    pub method: CalibMethod,
    pub task: Task,
    pub loss_history: Vec<f64>,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<CovMat> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("{what} must be a nonempty square list of rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(CovMat::new(Matrix::from_row_slice(n, n, &flat))?)
}

impl CalibrationFile {
    pub fn new(family: ModelFamily, q: &CovMat, r: &CovMat, method: CalibMethod, task: Task, loss_history: Vec<f64>) -> Self {
        CalibrationFile { family, q: rows(q.matrix()), r: rows(r.matrix()), method, task, loss_history }
    }

    pub fn covariances(&self) -> Result<(CovMat, CovMat)> {
        Ok((from_rows(&self.q, "Q")?, from_rows(&self.r, "R")?))
    }

    /// The family's model with this file's noise.
    pub fn model(&self) -> Result<StateSpaceModel> {
        let (q, r) = self.covariances()?;
        Ok(self.family.model(q, r)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = files::read_string(path)?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        files::write_json(self, path)
    }
}

/// Runs either calibration on `train`. The least-squares loss history is
/// the single loss of its estimate.
pub fn calibrate<E: Executor>(
    train: &[Trajectory],
    family: ModelFamily,
    method: CalibMethod,
    config: &CalibrationConfig,
    exec: &E,
) -> Result<CalibrationFile> {
    let base = family.model(CovMat::identity(family.state_dim()), CovMat::identity(family.obs_dim()))?;
    match method {
        CalibMethod::Lsq => {
            let (q, r) = estimate_qr_least_squares(train, &base)?;
            let p = kerule_core::calibration::CholeskyParams::from_covariances(&q, &r)?;
            let loss = kerule_core::calibration::okf_loss(&p, train, &base, config.task, exec);
            Ok(CalibrationFile::new(family, &q, &r, method, config.task, vec![loss]))
        }
        CalibMethod::Okf => {
            let res = okf_optimize(train, &base, config, exec)?;
            if res.no_improvement {
                log::warn!("okf: no step improved on the least-squares initialisation");
            }
            Ok(CalibrationFile::new(family, &res.params.q(), &res.params.r(), method, config.task, res.loss_history))
        }
    }
}
