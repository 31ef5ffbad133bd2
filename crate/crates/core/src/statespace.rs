//! Numeric domain types shared by the filters, simulators and search.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, LinalgError, Matrix, Vector, SYMMETRY_TOL};

/// Range below which the Doppler observation matrix is undefined.
pub const ZERO_RANGE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("observation position has zero range")]
    ZeroRange,
    #[error("non-finite entries")]
    NonFinite,
    #[error("dimension mismatch in {what}: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("matrix is not a covariance: {0}")]
    NotCovariance(&'static str),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(&'static str),
}

impl From<LinalgError> for StateError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NonFinite => StateError::NonFinite,
            LinalgError::DimensionMismatch { expected, got } => StateError::DimensionMismatch {
                what: "matrix",
                expected,
                got,
            },
            LinalgError::Singular => StateError::NotCovariance("singular"),
        }
    }
}

/// Symmetric positive semidefinite matrix (up to roundoff).
#[derive(Debug, Clone, PartialEq)]
pub struct CovMat(Matrix);

impl CovMat {
    /// Validates symmetry (relative `1e-9`) and eigenvalues `>= -1e-9 * trace`.
    pub fn new(m: Matrix) -> Result<Self, StateError> {
        if !m.is_square() {
            return Err(StateError::NotCovariance("not square"));
        }
        if !linalg::all_finite(&m) {
            return Err(StateError::NonFinite);
        }
        if !linalg::is_symmetric(&m, SYMMETRY_TOL) {
            return Err(StateError::NotCovariance("not symmetric"));
        }
        if m.nrows() > 0 {
            let trace = m.trace().abs();
            let min_eig = linalg::symmetrize(&m)
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |a, v| a.min(*v));
            if min_eig < -1e-9 * trace.max(f64::MIN_POSITIVE) {
                return Err(StateError::NotCovariance("negative eigenvalue"));
            }
        }
        Ok(CovMat(m))
    }

    /// Repairs an arbitrary finite square matrix into a covariance.
    pub fn repaired(m: &Matrix) -> Result<Self, StateError> {
        Ok(CovMat(linalg::nearest_spd(m)?))
    }

    pub fn identity(n: usize) -> Self {
        CovMat(Matrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        CovMat(Matrix::zeros(n, n))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        CovMat(Matrix::identity(n, n) * s)
    }

    pub fn diagonal(d: &[f64]) -> Result<Self, StateError> {
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(StateError::NotCovariance("negative diagonal"));
        }
        Ok(CovMat(Matrix::from_diagonal(&Vector::from_row_slice(d))))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

/// Builds `H(z)` for the 6-state / 4-observation Doppler model: identity on
/// position, and the unit line-of-sight vector on the velocity block.
pub fn build_doppler_h(z: &Vector) -> Result<Matrix, StateError> {
    if z.len() != 4 {
        return Err(StateError::DimensionMismatch {
            what: "doppler observation",
            expected: (4, 1),
            got: (z.len(), 1),
        });
    }
    if !z.iter().all(|v| v.is_finite()) {
        return Err(StateError::NonFinite);
    }
    let r = libm::sqrt(z[0] * z[0] + z[1] * z[1] + z[2] * z[2]);
    if r <= ZERO_RANGE_EPS {
        return Err(StateError::ZeroRange);
    }
    let mut h = Matrix::zeros(4, 6);
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h[(2, 2)] = 1.0;
    h[(3, 3)] = z[0] / r;
    h[(3, 4)] = z[1] / r;
    h[(3, 5)] = z[2] / r;
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservationMap {
    Static(Matrix),
    /// `H(z)` rebuilt from each (Cartesian-transformed) observation.
    DopplerFromObservation,
}

impl ObservationMap {
    pub fn resolve(&self, z: &Vector) -> Result<Matrix, StateError> {
        match self {
            ObservationMap::Static(h) => {
                if z.len() != h.nrows() {
                    return Err(StateError::DimensionMismatch {
                        what: "observation",
                        expected: (h.nrows(), 1),
                        got: (z.len(), 1),
                    });
                }
                Ok(h.clone())
            }
            ObservationMap::DopplerFromObservation => build_doppler_h(z),
        }
    }
}

/// Which of the three model families a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Doppler,
    Lidar,
    Pedestrian,
}

impl ModelFamily {
    pub fn state_dim(self) -> usize {
        match self {
            ModelFamily::Doppler => 6,
            ModelFamily::Lidar => 4,
            ModelFamily::Pedestrian => 6,
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            ModelFamily::Doppler => 4,
            ModelFamily::Lidar => 2,
            ModelFamily::Pedestrian => 4,
        }
    }

    /// Number of leading state coordinates scored as position.
    pub fn position_dims(self) -> usize {
        match self {
            ModelFamily::Doppler => 3,
            ModelFamily::Lidar | ModelFamily::Pedestrian => 2,
        }
    }

    /// Constant-velocity transition for this family.
    pub fn transition(self) -> Matrix {
        let n = self.state_dim();
        let mut f = Matrix::identity(n, n);
        match self {
            ModelFamily::Doppler => {
                for i in 0..3 {
                    f[(i, i + 3)] = 1.0;
                }
            }
            ModelFamily::Lidar => {
                f[(0, 2)] = 1.0;
                f[(1, 3)] = 1.0;
            }
            ModelFamily::Pedestrian => {
                f[(0, 4)] = 1.0;
                f[(1, 5)] = 1.0;
            }
        }
        f
    }

    pub fn observation_map(self) -> ObservationMap {
        match self {
            ModelFamily::Doppler => ObservationMap::DopplerFromObservation,
            ModelFamily::Lidar | ModelFamily::Pedestrian => {
                let (m, n) = (self.obs_dim(), self.state_dim());
                let mut h = Matrix::zeros(m, n);
                for i in 0..m {
                    h[(i, i)] = 1.0;
                }
                ObservationMap::Static(h)
            }
        }
    }

    pub fn model(self, q: CovMat, r: CovMat) -> Result<StateSpaceModel, StateError> {
        Ok(StateSpaceModel::new(self.transition(), self.observation_map(), q, r)?
            .with_position_dims(self.position_dims()))
    }

    /// Maps a benchmark label onto its family.
    pub fn from_label(label: &str) -> Option<Self> {
        let l = label.to_ascii_lowercase();
        match l.as_str() {
            "toy" | "close" | "const_v" | "const-v" | "const_a" | "const-a" | "free" | "doppler" => {
                Some(ModelFamily::Doppler)
            }
            "lidar" | "nclt" => Some(ModelFamily::Lidar),
            "pedestrian" | "mot" | "mot20" => Some(ModelFamily::Pedestrian),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    transition: Matrix,
    observe: ObservationMap,
    process_noise: CovMat,
    obs_noise: CovMat,
    state_dim: usize,
    obs_dim: usize,
    position_dims: usize,
}

impl StateSpaceModel {
    pub fn new(
        transition: Matrix,
        observe: ObservationMap,
        process_noise: CovMat,
        obs_noise: CovMat,
    ) -> Result<Self, StateError> {
        let n = transition.nrows();
        if !transition.is_square() {
            return Err(StateError::DimensionMismatch {
                what: "transition",
                expected: (n, n),
                got: transition.shape(),
            });
        }
        if !linalg::all_finite(&transition) {
            return Err(StateError::NonFinite);
        }
        let m = obs_noise.dim();
        match &observe {
            ObservationMap::Static(h) => {
                if h.shape() != (m, n) {
                    return Err(StateError::DimensionMismatch {
                        what: "observation matrix",
                        expected: (m, n),
                        got: h.shape(),
                    });
                }
            }
            ObservationMap::DopplerFromObservation => {
                if n != 6 || m != 4 {
                    return Err(StateError::DimensionMismatch {
                        what: "doppler model",
                        expected: (4, 6),
                        got: (m, n),
                    });
                }
            }
        }
        if process_noise.dim() != n {
            return Err(StateError::DimensionMismatch {
                what: "process noise",
                expected: (n, n),
                got: (process_noise.dim(), process_noise.dim()),
            });
        }
        Ok(StateSpaceModel {
            transition,
            observe,
            process_noise,
            obs_noise,
            state_dim: n,
            obs_dim: m,
            position_dims: (n / 2).max(1),
        })
    }

    /// Sets how many leading state coordinates count as position.
    pub fn with_position_dims(mut self, k: usize) -> Self {
        self.position_dims = k.clamp(1, self.state_dim);
        self
    }

    pub fn position_dims(&self) -> usize {
        self.position_dims
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }
    pub fn observe(&self) -> &ObservationMap {
        &self.observe
    }
    pub fn process_noise(&self) -> &CovMat {
        &self.process_noise
    }
    pub fn obs_noise(&self) -> &CovMat {
        &self.obs_noise
    }
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    /// Same dynamics and observation map with different noise covariances.
    pub fn with_noise(&self, q: CovMat, r: CovMat) -> Result<Self, StateError> {
        Ok(StateSpaceModel::new(self.transition.clone(), self.observe.clone(), q, r)?
            .with_position_dims(self.position_dims))
    }

    pub fn with_transition(&self, f: Matrix) -> Result<Self, StateError> {
        Ok(StateSpaceModel::new(
            f,
            self.observe.clone(),
            self.process_noise.clone(),
            self.obs_noise.clone(),
        )?
        .with_position_dims(self.position_dims))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub mean: Vector,
    pub cov: CovMat,
    pub time_index: usize,
}

impl BeliefState {
    pub fn new(mean: Vector, cov: CovMat, time_index: usize) -> Result<Self, StateError> {
        if mean.len() != cov.dim() {
            return Err(StateError::DimensionMismatch {
                what: "belief",
                expected: (cov.dim(), 1),
                got: (mean.len(), 1),
            });
        }
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(StateError::NonFinite);
        }
        Ok(BeliefState { mean, cov, time_index })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub benchmark: String,
    pub id: u64,
    pub seed: u64,
}

/// Ground-truth states (optional) plus observations for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Option<Vec<Vector>>,
    observations: Vec<Vector>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn new(
        states: Option<Vec<Vector>>,
        observations: Vec<Vector>,
        meta: TrajectoryMeta,
    ) -> Result<Self, StateError> {
        if observations.len() < 2 {
            return Err(StateError::InvalidTrajectory("fewer than 2 steps"));
        }
        let m = observations[0].len();
        if observations.iter().any(|z| z.len() != m) {
            return Err(StateError::InvalidTrajectory("ragged observations"));
        }
        if let Some(s) = &states {
            if s.len() != observations.len() {
                return Err(StateError::InvalidTrajectory("states/observations length differ"));
            }
            let n = s[0].len();
            if s.iter().any(|x| x.len() != n) {
                return Err(StateError::InvalidTrajectory("ragged states"));
            }
        }
        Ok(Trajectory { states, observations, meta })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn states(&self) -> Option<&[Vector]> {
        self.states.as_deref()
    }

    pub fn observations(&self) -> &[Vector] {
        &self.observations
    }

    pub fn obs_dim(&self) -> usize {
        self.observations[0].len()
    }

    pub fn state_dim(&self) -> Option<usize> {
        self.states.as_ref().map(|s| s[0].len())
    }

    /// First `len` steps (at least 2).
    pub fn truncated(&self, len: usize) -> Trajectory {
        let len = len.max(2).min(self.len());
        Trajectory {
            states: self.states.as_ref().map(|s| s[..len].to_vec()),
            observations: self.observations[..len].to_vec(),
            meta: self.meta.clone(),
        }
    }

    /// Drops the ground truth.
    pub fn observation_only(&self) -> Trajectory {
        Trajectory {
            states: None,
            observations: self.observations.clone(),
            meta: self.meta.clone(),
        }
    }
}
