//! Kalman predict/update and the two pipelines (state estimation and
//! next-state prediction) that drive a step rule over a trajectory.

use alloc::boxed::Box;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, LinalgError, Matrix, Vector};
use crate::statespace::{BeliefState, CovMat, ObservationMap, StateError, StateSpaceModel, Trajectory};

/// Innovation covariances beyond this condition number are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;
/// Diagonal of the initial covariance under `FirstObservationLifted`.
pub const INITIAL_VARIANCE: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FilterError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("innovation covariance is singular (condition {condition:e})")]
    SingularInnovation { condition: f64 },
    #[error("non-finite value at node {node}")]
    NumericalFault { node: usize },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error(transparent)]
    State(#[from] StateError),
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<FilterError>,
    },
}

impl From<LinalgError> for FilterError {
    fn from(e: LinalgError) -> Self {
        FilterError::State(e.into())
    }
}

impl FilterError {
    /// Strips step annotations.
    pub fn root(&self) -> &FilterError {
        match self {
            FilterError::AtStep { source, .. } => source.root(),
            e => e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Se,
    Nsp,
}

/// Order in which a rule applies its two halves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepOrder {
    /// Input is the prior for `t`; outputs the posterior at `t` and the
    /// prediction for `t + 1`.
    UpdatePredict,
    /// Input is the posterior at `t - 1`; outputs the prediction for `t` and
    /// the posterior at `t`.
    PredictUpdate,
}

pub struct FilterContext<'a> {
    pub model: &'a StateSpaceModel,
    pub belief: &'a BeliefState,
    pub observation: &'a Vector,
    pub h: Matrix,
}

impl<'a> FilterContext<'a> {
    pub fn new(
        model: &'a StateSpaceModel,
        belief: &'a BeliefState,
        observation: &'a Vector,
    ) -> Result<Self, FilterError> {
        if belief.mean.len() != model.state_dim() {
            return Err(FilterError::DimensionMismatch("belief vs model state"));
        }
        if observation.len() != model.obs_dim() {
            return Err(FilterError::DimensionMismatch("observation vs model"));
        }
        let h = model.observe().resolve(observation)?;
        Ok(FilterContext { model, belief, observation, h })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub posterior: BeliefState,
    /// For update-predict rules the prior of the next step; for
    /// predict-update rules the prior this step's update started from.
    pub prediction: BeliefState,
}

pub trait StepRule: Sync {
    fn order(&self) -> StepOrder;
    fn step(&self, ctx: &FilterContext<'_>) -> Result<StepOutput, FilterError>;
}

pub fn kf_predict(belief: &BeliefState, model: &StateSpaceModel) -> Result<BeliefState, FilterError> {
    if belief.mean.len() != model.state_dim() {
        return Err(FilterError::DimensionMismatch("belief vs transition"));
    }
    let f = model.transition();
    let mean = f * &belief.mean;
    let cov = (f * belief.cov.matrix()) * f.transpose() + model.process_noise().matrix();
    Ok(BeliefState {
        mean,
        cov: CovMat::repaired(&cov)?,
        time_index: belief.time_index + 1,
    })
}

pub fn innovation_condition(s: &Matrix) -> f64 {
    linalg::symmetric_condition(s)
}

pub fn kf_update(
    belief: &BeliefState,
    z: &Vector,
    h: &Matrix,
    r: &CovMat,
) -> Result<BeliefState, FilterError> {
    let n = belief.mean.len();
    let m = z.len();
    if h.shape() != (m, n) || r.dim() != m {
        return Err(FilterError::DimensionMismatch("update operands"));
    }
    let p = belief.cov.matrix();
    let s = (h * p) * h.transpose() + r.matrix();
    let condition = innovation_condition(&s);
    if !(condition <= MAX_INNOVATION_CONDITION) {
        return Err(FilterError::SingularInnovation { condition });
    }
    let k = linalg::mrdiv_spd(&(p * h.transpose()), &s)
        .map_err(|_| FilterError::SingularInnovation { condition })?;
    let y = z - h * &belief.mean;
    let mean = &belief.mean + &k * y;
    let cov = (Matrix::identity(n, n) - &k * h) * p;
    Ok(BeliefState {
        mean,
        cov: CovMat::repaired(&cov)?,
        time_index: belief.time_index,
    })
}

/// The textbook filter, implemented directly on matrices.
#[derive(Debug, Clone, Copy, Default)]
pub struct CanonicalKf;

impl StepRule for CanonicalKf {
    fn order(&self) -> StepOrder {
        StepOrder::UpdatePredict
    }

    fn step(&self, ctx: &FilterContext<'_>) -> Result<StepOutput, FilterError> {
        let posterior = kf_update(ctx.belief, ctx.observation, &ctx.h, ctx.model.obs_noise())?;
        let prediction = kf_predict(&posterior, ctx.model)?;
        Ok(StepOutput { posterior, prediction })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InitPolicy {
    #[default]
    FirstObservationLifted,
    GroundTruthFirstState,
}

pub fn initial_belief(
    traj: &Trajectory,
    model: &StateSpaceModel,
    policy: InitPolicy,
) -> Result<BeliefState, FilterError> {
    if traj.is_empty() {
        return Err(FilterError::EmptyTrajectory);
    }
    let n = model.state_dim();
    match policy {
        InitPolicy::FirstObservationLifted => {
            let z0 = &traj.observations()[0];
            if z0.len() != model.obs_dim() {
                return Err(FilterError::DimensionMismatch("observation vs model"));
            }
            let mean = match model.observe() {
                ObservationMap::DopplerFromObservation => {
                    let mut v = Vector::zeros(n);
                    for i in 0..3 {
                        v[i] = z0[i];
                    }
                    v
                }
                ObservationMap::Static(h) => h.transpose() * z0,
            };
            Ok(BeliefState::new(mean, CovMat::scaled_identity(n, INITIAL_VARIANCE), 0)?)
        }
        InitPolicy::GroundTruthFirstState => {
            let states = traj.states().ok_or(FilterError::EmptyTrajectory)?;
            if states[0].len() != n {
                return Err(FilterError::DimensionMismatch("state vs model"));
            }
            Ok(BeliefState::new(states[0].clone(), CovMat::scaled_identity(n, INITIAL_VARIANCE), 0)?)
        }
    }
}

/// Euclidean distance over the leading `k` coordinates.
pub fn position_error(estimate: &Vector, truth: &Vector, k: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..k {
        let d = estimate[i] - truth[i];
        acc += d * d;
    }
    libm::sqrt(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub task: Task,
    pub posteriors: Vec<BeliefState>,
    /// `run_se`: prediction made after step `t` (for `t + 1`).
    /// `run_nsp`: prediction held before `z_t` arrived.
    pub predictions: Vec<BeliefState>,
    /// Position errors of the task's estimate; `None` without ground truth.
    pub errors: Option<Vec<f64>>,
}

struct Pass {
    posteriors: Vec<BeliefState>,
    priors: Vec<BeliefState>,
    next: Vec<BeliefState>,
}

fn drive<R: StepRule + ?Sized>(
    traj: &Trajectory,
    model: &StateSpaceModel,
    rule: &R,
    init: BeliefState,
) -> Result<Pass, FilterError> {
    let t_len = traj.len();
    let mut pass = Pass {
        posteriors: Vec::with_capacity(t_len),
        priors: Vec::with_capacity(t_len),
        next: Vec::with_capacity(t_len),
    };
    let at = |step: usize| move |e: FilterError| FilterError::AtStep { step, source: Box::new(e) };
    match rule.order() {
        StepOrder::UpdatePredict => {
            let mut prior = init;
            for (t, z) in traj.observations().iter().enumerate() {
                let ctx = FilterContext::new(model, &prior, z).map_err(at(t))?;
                let out = rule.step(&ctx).map_err(at(t))?;
                pass.posteriors.push(out.posterior);
                pass.next.push(out.prediction.clone());
                pass.priors.push(core::mem::replace(&mut prior, out.prediction));
            }
        }
        StepOrder::PredictUpdate => {
            // the initial belief already is the prior for t = 0
            let n = model.state_dim();
            let first = model
                .with_transition(Matrix::identity(n, n))?
                .with_noise(CovMat::zeros(n), model.obs_noise().clone())?;
            let mut post = init;
            for (t, z) in traj.observations().iter().enumerate() {
                let m = if t == 0 { &first } else { model };
                let ctx = FilterContext::new(m, &post, z).map_err(at(t))?;
                let out = rule.step(&ctx).map_err(at(t))?;
                if t > 0 {
                    pass.next.push(out.prediction.clone());
                }
                pass.priors.push(out.prediction);
                post = out.posterior.clone();
                pass.posteriors.push(out.posterior);
            }
            let last = kf_predict(&post, model).map_err(at(t_len))?;
            pass.next.push(last);
        }
    }
    Ok(pass)
}

fn errors_against(traj: &Trajectory, est: &[BeliefState], k: usize) -> Option<Vec<f64>> {
    traj.states()
        .map(|s| s.iter().zip(est).map(|(x, b)| position_error(&b.mean, x, k)).collect())
}

pub fn run_se<R: StepRule + ?Sized>(
    traj: &Trajectory,
    model: &StateSpaceModel,
    rule: &R,
    init: BeliefState,
) -> Result<RunResult, FilterError> {
    let pass = drive(traj, model, rule, init)?;
    let errors = errors_against(traj, &pass.posteriors, model.position_dims());
    Ok(RunResult { task: Task::Se, posteriors: pass.posteriors, predictions: pass.next, errors })
}

pub fn run_nsp<R: StepRule + ?Sized>(
    traj: &Trajectory,
    model: &StateSpaceModel,
    rule: &R,
    init: BeliefState,
) -> Result<RunResult, FilterError> {
    let pass = drive(traj, model, rule, init)?;
    let errors = errors_against(traj, &pass.priors, model.position_dims());
    Ok(RunResult { task: Task::Nsp, posteriors: pass.posteriors, predictions: pass.priors, errors })
}

pub fn run_task<R: StepRule + ?Sized>(
    traj: &Trajectory,
    model: &StateSpaceModel,
    rule: &R,
    init: BeliefState,
    task: Task,
) -> Result<RunResult, FilterError> {
    match task {
        Task::Se => run_se(traj, model, rule, init),
        Task::Nsp => run_nsp(traj, model, rule, init),
    }
}

/// Squared position errors of one run with the default initialisation.
pub fn squared_errors<R: StepRule + ?Sized>(
    traj: &Trajectory,
    model: &StateSpaceModel,
    rule: &R,
    task: Task,
) -> Result<Vec<f64>, FilterError> {
    let init = initial_belief(traj, model, InitPolicy::FirstObservationLifted)?;
    let res = run_task(traj, model, rule, init, task)?;
    let errs = res.errors.ok_or(FilterError::DimensionMismatch("trajectory has no ground truth"))?;
    Ok(errs.into_iter().map(|e| e * e).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::TrajectoryMeta;

    fn scalar_model(f: f64, q: f64, r: f64) -> StateSpaceModel {
        StateSpaceModel::new(
            Matrix::from_element(1, 1, f),
            ObservationMap::Static(Matrix::from_element(1, 1, 1.0)),
            CovMat::diagonal(&[q]).unwrap(),
            CovMat::diagonal(&[r]).unwrap(),
        )
        .unwrap()
    }

    fn belief(mean: &[f64], cov: Matrix) -> BeliefState {
        BeliefState::new(Vector::from_row_slice(mean), CovMat::new(cov).unwrap(), 0).unwrap()
    }

    #[test]
    fn scalar_update() {
        let b = belief(&[0.0], Matrix::from_element(1, 1, 2.0));
        let r = CovMat::diagonal(&[1.0]).unwrap();
        let u = kf_update(&b, &Vector::from_element(1, 3.0), &Matrix::identity(1, 1), &r).unwrap();
        assert!((u.mean[0] - 2.0).abs() < 1e-15);
        assert!((u.cov.matrix()[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn equal_confidence_is_midpoint() {
        let b = belief(&[1.0, -1.0], Matrix::identity(2, 2) * 4.0);
        let r = CovMat::scaled_identity(2, 4.0);
        let z = Vector::from_row_slice(&[3.0, 1.0]);
        let u = kf_update(&b, &z, &Matrix::identity(2, 2), &r).unwrap();
        assert!((u.mean[0] - 2.0).abs() < 1e-14 && (u.mean[1]).abs() < 1e-14);
    }

    #[test]
    fn uninformative_measurement() {
        let b = belief(&[1.0, 2.0], Matrix::identity(2, 2));
        let r = CovMat::scaled_identity(2, 1e12);
        let z = Vector::from_row_slice(&[100.0, -100.0]);
        let u = kf_update(&b, &z, &Matrix::identity(2, 2), &r).unwrap();
        assert!((u.mean[0] - 1.0).abs() < 1e-6 && (u.mean[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn singular_innovation() {
        let b = belief(&[0.0, 0.0], Matrix::zeros(2, 2));
        let r = CovMat::diagonal(&[1.0, 0.0]).unwrap();
        let e = kf_update(&b, &Vector::zeros(2), &Matrix::identity(2, 2), &r).unwrap_err();
        assert!(matches!(e, FilterError::SingularInnovation { .. }));
    }

    #[test]
    fn predict_identity_and_cv() {
        let m = StateSpaceModel::new(
            Matrix::identity(2, 2),
            ObservationMap::Static(Matrix::identity(2, 2)),
            CovMat::zeros(2),
            CovMat::identity(2),
        )
        .unwrap();
        let b = belief(&[1.0, 2.0], Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        let p = kf_predict(&b, &m).unwrap();
        assert_eq!(p.mean, b.mean);
        assert_eq!(p.cov, b.cov);
        assert_eq!(p.time_index, 1);
        let cv = m.with_transition(Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])).unwrap();
        let p = kf_predict(&b, &cv).unwrap();
        assert_eq!(p.mean.as_slice(), &[3.0, 2.0]);
    }

    #[test]
    fn predict_update_order_starts_from_initial_belief() {
        struct PU;
        impl StepRule for PU {
            fn order(&self) -> StepOrder {
                StepOrder::PredictUpdate
            }
            fn step(&self, ctx: &FilterContext<'_>) -> Result<StepOutput, FilterError> {
                let prediction = kf_predict(ctx.belief, ctx.model)?;
                let posterior = kf_update(&prediction, ctx.observation, &ctx.h, ctx.model.obs_noise())?;
                Ok(StepOutput { posterior, prediction })
            }
        }
        let model = scalar_model(0.9, 0.1, 0.5);
        let zs: Vec<Vector> = [1.0, 0.5, 0.2, 0.9].iter().map(|v| Vector::from_element(1, *v)).collect();
        let xs = zs.clone();
        let traj = Trajectory::new(Some(xs), zs, TrajectoryMeta::default()).unwrap();
        let init = belief(&[0.0], Matrix::from_element(1, 1, 3.0));
        let a = run_se(&traj, &model, &CanonicalKf, init.clone()).unwrap();
        let b = run_se(&traj, &model, &PU, init).unwrap();
        for (x, y) in a.posteriors.iter().zip(&b.posteriors) {
            assert!((x.mean[0] - y.mean[0]).abs() < 1e-12);
        }
        for (x, y) in a.predictions.iter().zip(&b.predictions) {
            assert!((x.mean[0] - y.mean[0]).abs() < 1e-12);
        }
    }
}
