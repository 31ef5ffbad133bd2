//! Noise covariance estimation: sample covariances of residuals, and
//! gradient descent on Cholesky factors against the filtering loss.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::exec::Executor;
use crate::filters::{squared_errors, CanonicalKf, Task};
use crate::linalg::{self, Matrix, Vector};
use crate::statespace::{CovMat, StateError, StateSpaceModel, Trajectory};

/// Lower bound on Cholesky diagonal entries.
pub const MIN_DIAG: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibError {
    #[error("{got} residuals, need at least {need}")]
    InsufficientData { got: usize, need: usize },
    #[error("trajectory {0} has no ground-truth states")]
    MissingStates(usize),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("initial parameters give a non-finite loss")]
    NonFiniteInitialLoss,
    #[error("invalid calibration config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyParams {
    pub lq: Matrix,
    pub lr: Matrix,
}

fn lower_factor(c: &CovMat) -> Result<Matrix, CalibError> {
    let m = linalg::nearest_spd(c.matrix()).map_err(StateError::from)?;
    let n = m.nrows();
    let mut l = match m.clone().cholesky() {
        Some(ch) => ch.l(),
        None => {
            // fall back to the square roots of the diagonal
            Matrix::from_diagonal(&m.diagonal().map(|v| libm::sqrt(v.max(0.0))))
        }
    };
    for i in 0..n {
        if l[(i, i)] < MIN_DIAG {
            l[(i, i)] = MIN_DIAG;
        }
    }
    Ok(l)
}

impl CholeskyParams {
    pub fn from_covariances(q: &CovMat, r: &CovMat) -> Result<Self, CalibError> {
        Ok(CholeskyParams { lq: lower_factor(q)?, lr: lower_factor(r)? })
    }

    pub fn q(&self) -> CovMat {
        CovMat::repaired(&(&self.lq * self.lq.transpose())).expect("finite factor")
    }

    pub fn r(&self) -> CovMat {
        CovMat::repaired(&(&self.lr * self.lr.transpose())).expect("finite factor")
    }

    /// `(which, row, col)` of every free entry.
    fn slots(&self, diagonal_only: bool) -> Vec<(u8, usize, usize)> {
        let mut v = Vec::new();
        for (which, l) in [(0u8, &self.lq), (1u8, &self.lr)] {
            for i in 0..l.nrows() {
                for j in 0..=i {
                    if !diagonal_only || i == j {
                        v.push((which, i, j));
                    }
                }
            }
        }
        v
    }

    fn get(&self, s: (u8, usize, usize)) -> f64 {
        if s.0 == 0 {
            self.lq[(s.1, s.2)]
        } else {
            self.lr[(s.1, s.2)]
        }
    }

    fn set(&mut self, s: (u8, usize, usize), v: f64) {
        let v = if s.1 == s.2 { v.max(MIN_DIAG) } else { v };
        if s.0 == 0 {
            self.lq[(s.1, s.2)] = v;
        } else {
            self.lr[(s.1, s.2)] = v;
        }
    }
}

fn sample_cov(rows: &[Vector]) -> Matrix {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = Vector::zeros(d);
    for r in rows {
        mean += r;
    }
    mean /= n;
    let mut c = Matrix::zeros(d, d);
    for r in rows {
        let e = r - &mean;
        c += &e * e.transpose();
    }
    c / (n - 1.0).max(1.0)
}

/// Sample covariances of the process residuals `x' - F x` and observation
/// residuals `z - H x`, each repaired to SPD.
pub fn estimate_qr_least_squares(
    trajs: &[Trajectory],
    model: &StateSpaceModel,
) -> Result<(CovMat, CovMat), CalibError> {
    let mut w = Vec::new();
    let mut v = Vec::new();
    for (k, tr) in trajs.iter().enumerate() {
        let states = tr.states().ok_or(CalibError::MissingStates(k))?;
        for t in 0..tr.len() {
            let z = &tr.observations()[t];
            let h = model.observe().resolve(z)?;
            v.push(z - h * &states[t]);
            if t + 1 < tr.len() {
                w.push(&states[t + 1] - model.transition() * &states[t]);
            }
        }
    }
    let need = model.state_dim() + 1;
    if w.len() < need {
        return Err(CalibError::InsufficientData { got: w.len(), need });
    }
    let q = CovMat::repaired(&sample_cov(&w))?;
    let r = CovMat::repaired(&sample_cov(&v))?;
    Ok((q, r))
}

/// Mean squared position error of the canonical filter over every step of
/// every trajectory. A filter failure makes the loss infinite.
pub fn okf_loss<E: Executor>(
    params: &CholeskyParams,
    trajs: &[Trajectory],
    model: &StateSpaceModel,
    task: Task,
    exec: &E,
) -> f64 {
    let m = match model.with_noise(params.q(), params.r()) {
        Ok(m) => m,
        Err(_) => return f64::INFINITY,
    };
    let per: Vec<Option<(f64, usize)>> = exec.map_indexed(trajs.len(), |i| {
        squared_errors(&trajs[i], &m, &CanonicalKf, task)
            .ok()
            .map(|e| (e.iter().sum::<f64>(), e.len()))
    });
    let mut total = 0.0;
    let mut count = 0usize;
    for p in per {
        match p {
            Some((s, c)) => {
                total += s;
                count += c;
            }
            None => return f64::INFINITY,
        }
    }
    if count == 0 {
        f64::INFINITY
    } else {
        total / count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub task: Task,
    pub max_iterations: usize,
    /// Largest relative change of any entry in one step.
    pub step_size: f64,
    /// `None` picks diagonal-only when the state has 6 or more dimensions.
    pub diagonal_only: Option<bool>,
    /// Stop when the relative loss decrease of an accepted step is below this.
    pub tolerance: f64,
    /// Central differences use `h = fd_step * (1 + |entry|)`.
    pub fd_step: f64,
    pub max_halvings: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            task: Task::Se,
            max_iterations: 40,
            step_size: 0.5,
            diagonal_only: None,
            tolerance: 1e-6,
            fd_step: 1e-4,
            max_halvings: 20,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), CalibError> {
        if !(self.step_size > 0.0 && self.tolerance > 0.0 && self.fd_step > 0.0) {
            return Err(CalibError::Config("step size, tolerance and fd step must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OkfResult {
    pub params: CholeskyParams,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Loss after initialisation and after every accepted step.
    pub loss_history: Vec<f64>,
    pub accepted_steps: usize,
    /// Set when no step was ever accepted; `params` is then the initialisation.
    pub no_improvement: bool,
}

/// OKF: least-squares initialisation, then [`okf_optimize_from`].
pub fn okf_optimize<E: Executor>(
    trajs: &[Trajectory],
    model: &StateSpaceModel,
    config: &CalibrationConfig,
    exec: &E,
) -> Result<OkfResult, CalibError> {
    if trajs.is_empty() {
        return Err(CalibError::EmptyTrainingSet);
    }
    let (q, r) = estimate_qr_least_squares(trajs, model)?;
    let init = CholeskyParams::from_covariances(&q, &r)?;
    okf_optimize_from(init, trajs, model, config, exec)
}

/// Projected, diagonally scaled gradient descent with backtracking. A step
/// is kept only if it lowers the training loss.
pub fn okf_optimize_from<E: Executor>(
    init: CholeskyParams,
    trajs: &[Trajectory],
    model: &StateSpaceModel,
    config: &CalibrationConfig,
    exec: &E,
) -> Result<OkfResult, CalibError> {
    config.validate()?;
    if trajs.is_empty() {
        return Err(CalibError::EmptyTrainingSet);
    }
    let diagonal_only = config.diagonal_only.unwrap_or(model.state_dim() >= 6);
    let slots = init.slots(diagonal_only);
    let loss0 = okf_loss(&init, trajs, model, config.task, exec);
    if !loss0.is_finite() {
        return Err(CalibError::NonFiniteInitialLoss);
    }
    let mut params = init;
    let mut loss = loss0;
    let mut history = alloc::vec![loss0];
    let mut accepted = 0usize;
    let mut alpha = config.step_size;

    for _ in 0..config.max_iterations {
        let theta: Vec<f64> = slots.iter().map(|s| params.get(*s)).collect();
        // reference magnitude per factor keeps off-diagonal entries movable
        let diag_ref = |which: u8| {
            let l = if which == 0 { &params.lq } else { &params.lr };
            l.diagonal().iter().map(|v| v.abs()).sum::<f64>() / l.nrows() as f64
        };
        let scale: Vec<f64> = slots
            .iter()
            .zip(&theta)
            .map(|(s, t)| if s.1 == s.2 { t.abs() } else { t.abs() + 1e-2 * diag_ref(s.0) })
            .collect();
        let probes = exec.map_indexed(2 * slots.len(), |k| {
            let i = k / 2;
            let h = config.fd_step * (1.0 + theta[i].abs());
            let mut p = params.clone();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            p.set(slots[i], theta[i] + sign * h);
            // the plus and minus probes may sit asymmetrically after clamping
            let actual = p.get(slots[i]) - theta[i];
            (okf_loss(&p, trajs, model, config.task, &crate::exec::Sequential), actual)
        });
        let grad: Vec<f64> = (0..slots.len())
            .map(|i| {
                let (lp, dp) = probes[2 * i];
                let (lm, dm) = probes[2 * i + 1];
                if lp.is_finite() && lm.is_finite() && dp != dm {
                    (lp - lm) / (dp - dm)
                } else {
                    0.0
                }
            })
            .collect();
        let u: Vec<f64> = grad.iter().zip(&scale).map(|(g, s)| g * s).collect();
        let umax = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if umax == 0.0 || !umax.is_finite() {
            break;
        }
        let mut step = alpha;
        let mut taken = None;
        for _ in 0..=config.max_halvings {
            let mut cand = params.clone();
            for (i, s) in slots.iter().enumerate() {
                cand.set(*s, theta[i] - step * scale[i] * u[i] / umax);
            }
            let l = okf_loss(&cand, trajs, model, config.task, exec);
            if l < loss {
                taken = Some((cand, l, step));
                break;
            }
            step *= 0.5;
        }
        match taken {
            Some((cand, l, s)) => {
                let rel = (loss - l) / loss.max(f64::MIN_POSITIVE);
                params = cand;
                loss = l;
                history.push(l);
                accepted += 1;
                alpha = (2.0 * s).min(config.step_size);
                if rel < config.tolerance {
                    break;
                }
            }
            None => break,
        }
    }
    Ok(OkfResult {
        params,
        initial_loss: loss0,
        final_loss: loss,
        loss_history: history,
        accepted_steps: accepted,
        no_improvement: accepted == 0,
    })
}
