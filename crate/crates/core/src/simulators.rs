//! Synthetic trajectory generators. Every generator is a pure function of its
//! spec and seed; trajectory `i` draws from its own stream
//! `splitmix(seed, i)`.

use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::Vector;
use crate::rng::{self, Rng};
use crate::statespace::{StateError, Trajectory, TrajectoryMeta};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    Config(&'static str),
    #[error("velocity stayed degenerate after {0} redraws")]
    DegenerateVelocity(usize),
    #[error(transparent)]
    State(#[from] StateError),
}

/// Redraws allowed before a degenerate LiDAR trajectory is reported.
pub const MAX_REDRAWS: usize = 100;
pub const MIN_SPEED: f64 = 1e-9;

fn gauss(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal(rng: &mut Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        sd * gauss(rng)
    }
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        lo + (hi - lo) * rng.random::<f64>()
    }
}

fn uniform_int(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DopplerBenchmark {
    Toy,
    Close,
    #[serde(rename = "Const_v")]
    ConstV,
    #[serde(rename = "Const_a")]
    ConstA,
    Free,
}

impl DopplerBenchmark {
    pub const ALL: [DopplerBenchmark; 5] = [
        DopplerBenchmark::Toy,
        DopplerBenchmark::Close,
        DopplerBenchmark::ConstV,
        DopplerBenchmark::ConstA,
        DopplerBenchmark::Free,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DopplerBenchmark::Toy => "toy",
            DopplerBenchmark::Close => "close",
            DopplerBenchmark::ConstV => "const_v",
            DopplerBenchmark::ConstA => "const_a",
            DopplerBenchmark::Free => "free",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        let l = s.to_ascii_lowercase().replace('-', "_");
        DopplerBenchmark::ALL.iter().copied().find(|b| b.label() == l)
    }

    /// Property flags, one row of the benchmark table each.
    pub fn flags(self) -> DopplerFlags {
        let f = |a, p, u, acc, t| DopplerFlags {
            anisotropic: a,
            polar_noise: p,
            uncentered: u,
            acceleration: acc,
            turns: t,
        };
        match self {
            DopplerBenchmark::Toy => f(false, false, false, false, false),
            DopplerBenchmark::Close => f(true, true, false, false, false),
            DopplerBenchmark::ConstV => f(true, true, true, false, false),
            DopplerBenchmark::ConstA => f(true, true, true, true, false),
            DopplerBenchmark::Free => f(true, true, true, true, true),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DopplerFlags {
    pub anisotropic: bool,
    pub polar_noise: bool,
    pub uncentered: bool,
    pub acceleration: bool,
    pub turns: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DopplerBenchmarkSpec {
    pub name: DopplerBenchmark,
    pub flags: DopplerFlags,
    pub length: usize,
    /// Polar noise, used when `polar_noise` is set.
    pub sigma_range: f64,
    pub sigma_azimuth: f64,
    pub sigma_elevation: f64,
    pub sigma_doppler: f64,
    /// Per-axis position noise when `polar_noise` is off.
    pub sigma_cartesian: f64,
    /// Spread of initial positions around their centre.
    pub position_spread: f64,
    /// Distance of the centre from the origin when `uncentered` is set.
    pub center_distance: f64,
    /// Per-axis initial velocity standard deviation.
    pub speed: f64,
    /// Vertical velocity and acceleration factor when `anisotropic` is set.
    pub vertical_factor: f64,
    /// Per-axis acceleration standard deviation for each segment.
    pub accel_sd: f64,
    /// Largest heading rate (radians/step) for each segment.
    pub max_turn_rate: f64,
    pub segment_min: usize,
    pub segment_max: usize,
}

impl DopplerBenchmarkSpec {
    pub fn new(name: DopplerBenchmark) -> Self {
        DopplerBenchmarkSpec {
            name,
            flags: name.flags(),
            length: 100,
            sigma_range: 10.0,
            sigma_azimuth: 0.02,
            sigma_elevation: 0.02,
            sigma_doppler: 1.0,
            sigma_cartesian: 10.0,
            position_spread: 150.0,
            center_distance: 1000.0,
            speed: 5.0,
            vertical_factor: 0.2,
            accel_sd: 0.3,
            max_turn_rate: 0.08,
            segment_min: 10,
            segment_max: 30,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let sds = [
            self.sigma_range,
            self.sigma_azimuth,
            self.sigma_elevation,
            self.sigma_doppler,
            self.sigma_cartesian,
            self.position_spread,
            self.center_distance,
            self.speed,
            self.vertical_factor,
            self.accel_sd,
            self.max_turn_rate,
        ];
        if sds.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SimError::Config("scales must be finite and nonnegative"));
        }
        if self.length < 2 {
            return Err(SimError::Config("trajectory length must be at least 2"));
        }
        if self.segment_min == 0 || self.segment_min > self.segment_max {
            return Err(SimError::Config("segment bounds"));
        }
        Ok(())
    }

    /// Same spec with every noise scale set to zero.
    pub fn noiseless(mut self) -> Self {
        self.sigma_range = 0.0;
        self.sigma_azimuth = 0.0;
        self.sigma_elevation = 0.0;
        self.sigma_doppler = 0.0;
        self.sigma_cartesian = 0.0;
        self
    }
}

/// Cartesian observation (x, y, z, radial velocity) of a 6-dim state.
fn doppler_observe(spec: &DopplerBenchmarkSpec, s: &[f64; 6], rng: &mut Rng) -> Vector {
    let (px, py, pz) = (s[0], s[1], s[2]);
    let r = libm::sqrt(px * px + py * py + pz * pz);
    let radial = if r > 0.0 { (px * s[3] + py * s[4] + pz * s[5]) / r } else { 0.0 };
    let d = radial + normal(rng, spec.sigma_doppler);
    if spec.flags.polar_noise {
        let rho = libm::hypot(px, py);
        let range = r + normal(rng, spec.sigma_range);
        let az = libm::atan2(py, px) + normal(rng, spec.sigma_azimuth);
        let el = libm::atan2(pz, rho) + normal(rng, spec.sigma_elevation);
        let ce = libm::cos(el);
        Vector::from_vec(alloc::vec![
            range * ce * libm::cos(az),
            range * ce * libm::sin(az),
            range * libm::sin(el),
            d
        ])
    } else {
        let sc = spec.sigma_cartesian;
        Vector::from_vec(alloc::vec![px + normal(rng, sc), py + normal(rng, sc), pz + normal(rng, sc), d])
    }
}

fn doppler_one(spec: &DopplerBenchmarkSpec, rng: &mut Rng) -> (Vec<Vector>, Vec<Vector>) {
    let fl = spec.flags;
    let vf = if fl.anisotropic { spec.vertical_factor } else { 1.0 };
    let mut s = [0.0f64; 6];
    let center = if fl.uncentered {
        // random direction near the horizontal plane
        let az = uniform(rng, -core::f64::consts::PI, core::f64::consts::PI);
        let el = uniform(rng, -0.3, 0.3);
        let d = spec.center_distance;
        [d * libm::cos(el) * libm::cos(az), d * libm::cos(el) * libm::sin(az), d * libm::sin(el)]
    } else {
        [0.0; 3]
    };
    for i in 0..3 {
        s[i] = center[i] + normal(rng, spec.position_spread);
    }
    s[3] = normal(rng, spec.speed);
    s[4] = normal(rng, spec.speed);
    s[5] = normal(rng, spec.speed * vf);

    let mut states = Vec::with_capacity(spec.length);
    let mut obs = Vec::with_capacity(spec.length);
    let mut left = 0usize;
    let mut acc = [0.0f64; 3];
    let mut omega = 0.0f64;
    for t in 0..spec.length {
        if t > 0 {
            if left == 0 {
                left = uniform_int(rng, spec.segment_min, spec.segment_max);
                if fl.acceleration {
                    acc = [
                        normal(rng, spec.accel_sd),
                        normal(rng, spec.accel_sd),
                        normal(rng, spec.accel_sd * vf),
                    ];
                }
                if fl.turns {
                    omega = uniform(rng, -spec.max_turn_rate, spec.max_turn_rate);
                }
            }
            left -= 1;
            for i in 0..3 {
                s[i] += s[i + 3] + 0.5 * acc[i];
                s[i + 3] += acc[i];
            }
            if omega != 0.0 {
                let (c, sn) = (libm::cos(omega), libm::sin(omega));
                let (vx, vy) = (s[3], s[4]);
                s[3] = c * vx - sn * vy;
                s[4] = sn * vx + c * vy;
            }
        }
        states.push(Vector::from_row_slice(&s));
        obs.push(doppler_observe(spec, &s, rng));
    }
    (states, obs)
}

pub fn gen_doppler(spec: &DopplerBenchmarkSpec, count: usize, seed: u64) -> Result<Vec<Trajectory>, SimError> {
    spec.validate()?;
    if count == 0 {
        return Err(SimError::Config("count must be at least 1"));
    }
    (0..count)
        .map(|i| {
            let tseed = rng::derive_seed(seed, i as u64);
            let mut r = rng::stream(seed, i as u64);
            let (states, obs) = doppler_one(spec, &mut r);
            let meta = TrajectoryMeta { benchmark: String::from(spec.name.label()), id: i as u64, seed: tseed };
            Ok(Trajectory::new(Some(states), obs, meta)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarSimSpec {
    pub count: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub length: usize,
    pub segment_min: usize,
    pub segment_max: usize,
    pub accel_radial: (f64, f64),
    pub accel_tangential: (f64, f64),
    pub sigma_r: f64,
    pub sigma_theta: f64,
    /// Initial positions are uniform in `[-region, region]²`.
    pub region: f64,
    pub speed_min: f64,
    pub speed_max: f64,
}

impl Default for LidarSimSpec {
    fn default() -> Self {
        LidarSimSpec {
            count: 2000,
            train: 1200,
            val: 300,
            test: 500,
            length: 100,
            segment_min: 10,
            segment_max: 40,
            accel_radial: (-0.5, 0.5),
            accel_tangential: (-0.5, 0.5),
            sigma_r: 1.0,
            sigma_theta: 0.05,
            region: 200.0,
            speed_min: 1.0,
            speed_max: 8.0,
        }
    }
}

impl LidarSimSpec {
    /// Same scenario with the given split sizes.
    pub fn with_splits(mut self, train: usize, val: usize, test: usize) -> Self {
        self.train = train;
        self.val = val;
        self.test = test;
        self.count = train + val + test;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.train + self.val + self.test != self.count {
            return Err(SimError::Config("split sizes must sum to the trajectory count"));
        }
        if self.count == 0 || self.length < 2 {
            return Err(SimError::Config("need at least one trajectory of length 2"));
        }
        if self.segment_min == 0 || self.segment_min > self.segment_max {
            return Err(SimError::Config("segment bounds"));
        }
        let vals = [
            self.accel_radial.0,
            self.accel_radial.1,
            self.accel_tangential.0,
            self.accel_tangential.1,
            self.sigma_r,
            self.sigma_theta,
            self.region,
            self.speed_min,
            self.speed_max,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Config("non-finite parameter"));
        }
        if self.sigma_r < 0.0 || self.sigma_theta < 0.0 || self.region < 0.0 {
            return Err(SimError::Config("noise scales and region must be nonnegative"));
        }
        if self.accel_radial.0 > self.accel_radial.1 || self.accel_tangential.0 > self.accel_tangential.1 {
            return Err(SimError::Config("acceleration bounds"));
        }
        if self.speed_min < MIN_SPEED || self.speed_min > self.speed_max {
            return Err(SimError::Config("speed bounds"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

/// Acceleration for the given per-segment `(a_r, a_t)` at velocity `v`.
pub fn lidar_acceleration(vx: f64, vy: f64, a_r: f64, a_t: f64) -> (f64, f64) {
    let v = libm::hypot(vx, vy);
    (a_r * vx / v - a_t * vy / v, a_r * vy / v + a_t * vx / v)
}

fn lidar_observe(spec: &LidarSimSpec, px: f64, py: f64, rng: &mut Rng) -> Vector {
    let r = libm::hypot(px, py) + normal(rng, spec.sigma_r);
    let th = libm::atan2(py, px) + normal(rng, spec.sigma_theta);
    Vector::from_vec(alloc::vec![r * libm::cos(th), r * libm::sin(th)])
}

fn lidar_one(spec: &LidarSimSpec, rng: &mut Rng) -> Option<(Vec<Vector>, Vec<Vector>)> {
    let mut px = uniform(rng, -spec.region, spec.region);
    let mut py = uniform(rng, -spec.region, spec.region);
    let speed = uniform(rng, spec.speed_min, spec.speed_max);
    let heading = uniform(rng, -core::f64::consts::PI, core::f64::consts::PI);
    let mut vx = speed * libm::cos(heading);
    let mut vy = speed * libm::sin(heading);
    let mut states = Vec::with_capacity(spec.length);
    let mut obs = Vec::with_capacity(spec.length);
    let mut left = 0usize;
    let (mut a_r, mut a_t) = (0.0, 0.0);
    for t in 0..spec.length {
        if t > 0 {
            if left == 0 {
                left = uniform_int(rng, spec.segment_min, spec.segment_max);
                a_r = uniform(rng, spec.accel_radial.0, spec.accel_radial.1);
                a_t = uniform(rng, spec.accel_tangential.0, spec.accel_tangential.1);
            }
            left -= 1;
            if libm::hypot(vx, vy) < MIN_SPEED {
                return None;
            }
            let (ax, ay) = lidar_acceleration(vx, vy, a_r, a_t);
            px += vx + 0.5 * ax;
            py += vy + 0.5 * ay;
            vx += ax;
            vy += ay;
        }
        states.push(Vector::from_vec(alloc::vec![px, py, vx, vy]));
        obs.push(lidar_observe(spec, px, py, rng));
    }
    Some((states, obs))
}

/// One LiDAR trajectory from its own seed, redrawing degenerate velocity.
pub fn lidar_trajectory(spec: &LidarSimSpec, seed: u64, id: u64) -> Result<Trajectory, SimError> {
    for attempt in 0..MAX_REDRAWS {
        let mut r = rng::stream(seed, attempt as u64);
        if let Some((states, obs)) = lidar_one(spec, &mut r) {
            let meta = TrajectoryMeta { benchmark: String::from("lidar"), id, seed };
            return Ok(Trajectory::new(Some(states), obs, meta)?);
        }
    }
    Err(SimError::DegenerateVelocity(MAX_REDRAWS))
}

pub fn gen_lidar(spec: &LidarSimSpec, seed: u64) -> Result<Splits, SimError> {
    spec.validate()?;
    let mut all = (0..spec.count)
        .map(|i| lidar_trajectory(spec, rng::derive_seed(seed, i as u64), i as u64))
        .collect::<Result<Vec<_>, _>>()?;
    let test = all.split_off(spec.train + spec.val);
    let val = all.split_off(spec.train);
    Ok(Splits { train: all, val, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianSpec {
    pub length: usize,
    /// Positions uniform in `[0, width] x [0, height]`.
    pub frame: (f64, f64),
    pub size_range: (f64, f64),
    pub speed_sd: f64,
    /// Per-step standard deviation of the size random walk.
    pub size_walk_sd: f64,
    /// Sizes are reflected into this interval.
    pub size_bounds: (f64, f64),
    pub obs_sd: f64,
}

impl Default for PedestrianSpec {
    fn default() -> Self {
        PedestrianSpec {
            length: 60,
            frame: (1920.0, 1080.0),
            size_range: (20.0, 80.0),
            speed_sd: 3.0,
            size_walk_sd: 0.5,
            size_bounds: (5.0, 200.0),
            obs_sd: 4.0,
        }
    }
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    if v < lo {
        (2.0 * lo - v).min(hi)
    } else if v > hi {
        (2.0 * hi - v).max(lo)
    } else {
        v
    }
}

pub fn gen_pedestrian_like(count: usize, seed: u64, spec: &PedestrianSpec) -> Result<Vec<Trajectory>, SimError> {
    if count == 0 || spec.length < 2 {
        return Err(SimError::Config("need at least one trajectory of length 2"));
    }
    if spec.size_bounds.0 > spec.size_bounds.1 || spec.obs_sd < 0.0 || spec.size_walk_sd < 0.0 || spec.speed_sd < 0.0 {
        return Err(SimError::Config("pedestrian scales"));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let tseed = rng::derive_seed(seed, i as u64);
        let mut r = rng::stream(seed, i as u64);
        let mut s = [
            uniform(&mut r, 0.0, spec.frame.0),
            uniform(&mut r, 0.0, spec.frame.1),
            uniform(&mut r, spec.size_range.0, spec.size_range.1),
            uniform(&mut r, spec.size_range.0, spec.size_range.1),
            normal(&mut r, spec.speed_sd),
            normal(&mut r, spec.speed_sd),
        ];
        let mut states = Vec::with_capacity(spec.length);
        let mut obs = Vec::with_capacity(spec.length);
        for t in 0..spec.length {
            if t > 0 {
                s[0] += s[4];
                s[1] += s[5];
                if spec.size_walk_sd > 0.0 {
                    s[2] = reflect(s[2] + normal(&mut r, spec.size_walk_sd), spec.size_bounds.0, spec.size_bounds.1);
                    s[3] = reflect(s[3] + normal(&mut r, spec.size_walk_sd), spec.size_bounds.0, spec.size_bounds.1);
                }
            }
            states.push(Vector::from_row_slice(&s));
            obs.push(Vector::from_vec(alloc::vec![
                s[0] + normal(&mut r, spec.obs_sd),
                s[1] + normal(&mut r, spec.obs_sd),
                s[2] + normal(&mut r, spec.obs_sd),
                s[3] + normal(&mut r, spec.obs_sd),
            ]));
        }
        let meta = TrajectoryMeta { benchmark: String::from("pedestrian"), id: i as u64, seed: tseed };
        out.push(Trajectory::new(Some(states), obs, meta)?);
    }
    Ok(out)
}
