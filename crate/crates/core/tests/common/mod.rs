#![allow(dead_code)]

pub mod refs;

use kerule_core::linalg::{Matrix, Vector};
use kerule_core::statespace::{BeliefState, CovMat, ModelFamily, StateSpaceModel};
use rand::Rng as _;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

pub fn rand_vec(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| scale * normal(r))
}

pub fn rand_mat(r: &mut ChaCha8Rng, a: usize, b: usize) -> Matrix {
    Matrix::from_fn(a, b, |_, _| normal(r))
}

/// `A Aᵀ / n + floor I`, well conditioned.
pub fn rand_spd(r: &mut ChaCha8Rng, n: usize, floor: f64) -> Matrix {
    let a = rand_mat(r, n, n);
    let m = &a * a.transpose() / n as f64 + Matrix::identity(n, n) * floor;
    (&m + m.transpose()) * 0.5
}

pub fn family(i: usize) -> ModelFamily {
    [ModelFamily::Doppler, ModelFamily::Lidar, ModelFamily::Pedestrian][i % 3]
}

pub fn rand_model(r: &mut ChaCha8Rng, fam: ModelFamily) -> StateSpaceModel {
    let n = fam.state_dim();
    let m = fam.obs_dim();
    let q = CovMat::new(rand_spd(r, n, 0.05)).unwrap();
    let rr = CovMat::new(rand_spd(r, m, 0.2)).unwrap();
    fam.model(q, rr).unwrap()
}

pub fn rand_belief(r: &mut ChaCha8Rng, n: usize) -> BeliefState {
    BeliefState::new(rand_vec(r, n, 3.0), CovMat::new(rand_spd(r, n, 0.1)).unwrap(), 0).unwrap()
}

/// Observation whose Cartesian position is away from the origin.
pub fn rand_obs(r: &mut ChaCha8Rng, m: usize) -> Vector {
    let mut z = rand_vec(r, m, 2.0);
    z[0] += 5.0 + r.random::<f64>();
    z
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

pub fn max_abs_diff_v(a: &Vector, b: &Vector) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

pub fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    max_abs_diff(a, b) / (1.0 + a.amax().max(b.amax()))
}

pub fn rel_diff_v(a: &Vector, b: &Vector) -> f64 {
    max_abs_diff_v(a, b) / (1.0 + a.amax().max(b.amax()))
}

/// Straight-line Kalman loop used as an oracle: LU solve for the gain, plain
/// `(I - K H) P`, symmetrised. Returns posterior means and the next-step
/// predicted means.
pub fn reference_kf(
    model: &StateSpaceModel,
    obs: &[Vector],
    x0: &Vector,
    p0: &Matrix,
) -> (Vec<Vector>, Vec<Vector>) {
    let n = model.state_dim();
    let f = model.transition();
    let q = model.process_noise().matrix();
    let r = model.obs_noise().matrix();
    let mut x = x0.clone();
    let mut p = p0.clone();
    let mut post = Vec::new();
    let mut pred = Vec::new();
    for z in obs {
        let h = model.observe().resolve(z).unwrap();
        let s = &h * &p * h.transpose() + r;
        // S is symmetric, so K = (S⁻¹ H P)ᵀ
        let k = s.lu().solve(&(&h * &p)).unwrap().transpose();
        let xu = &x + &k * (z - &h * &x);
        let pu = (Matrix::identity(n, n) - &k * &h) * &p;
        let pu = (&pu + pu.transpose()) * 0.5;
        post.push(xu.clone());
        x = f * &xu;
        p = f * &pu * f.transpose() + q;
        p = (&p + p.transpose()) * 0.5;
        pred.push(x.clone());
    }
    (post, pred)
}

/// A short trajectory of the family from its own simulator.
pub fn sim_trajectory(fam: ModelFamily, seed: u64) -> kerule_core::statespace::Trajectory {
    use kerule_core::simulators::*;
    match fam {
        ModelFamily::Doppler => {
            let spec = DopplerBenchmarkSpec::new(DopplerBenchmark::Free);
            gen_doppler(&spec, 1, seed).unwrap().remove(0)
        }
        ModelFamily::Lidar => lidar_trajectory(&LidarSimSpec::default(), seed, 0).unwrap(),
        ModelFamily::Pedestrian => gen_pedestrian_like(1, seed, &PedestrianSpec::default()).unwrap().remove(0),
    }
}

/// Trajectories from a static linear-Gaussian model.
pub fn simulate_linear(
    model: &StateSpaceModel,
    x0_sd: f64,
    count: usize,
    len: usize,
    seed: u64,
) -> Vec<kerule_core::statespace::Trajectory> {
    use kerule_core::statespace::{Trajectory, TrajectoryMeta};
    let mut r = rng(seed);
    let n = model.state_dim();
    let m = model.obs_dim();
    let lq = model.process_noise().matrix().clone().cholesky().map(|c| c.l()).unwrap_or(Matrix::zeros(n, n));
    let lr = model.obs_noise().matrix().clone().cholesky().map(|c| c.l()).unwrap_or(Matrix::zeros(m, m));
    (0..count)
        .map(|k| {
            let mut x = rand_vec(&mut r, n, x0_sd);
            let mut states = Vec::new();
            let mut obs = Vec::new();
            for t in 0..len {
                if t > 0 {
                    x = model.transition() * &x + &lq * rand_vec(&mut r, n, 1.0);
                }
                let h = model.observe().resolve(&Vector::zeros(m)).unwrap();
                obs.push(&h * &x + &lr * rand_vec(&mut r, m, 1.0));
                states.push(x.clone());
            }
            let meta = TrajectoryMeta { benchmark: "linear".into(), id: k as u64, seed };
            Trajectory::new(Some(states), obs, meta).unwrap()
        })
        .collect()
}
