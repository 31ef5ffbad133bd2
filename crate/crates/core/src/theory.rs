//! Monte-Carlo checks of the structural claims: the affine-estimator gap
//! under Doppler and polar sensing, the two radial slope limits of the
//! LiDAR posterior mean, and the next-state prediction error bound under
//! model mismatch.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::exec::Executor;
use crate::linalg::{spectral_norm, stable_sum, symmetric_condition, Matrix, Vector};
use crate::rng::{self, Rng};
use crate::statespace::CovMat;

/// Condition number past which the observation second moments are
/// treated as singular.
pub const MOMENT_CONDITION_LIMIT: f64 = 1e12;
pub const BOOTSTRAP_RESAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TheoryError {
    #[error("observation moments are singular (condition {condition:e})")]
    SingularMoments { condition: f64 },
    #[error("invalid parameters: {0}")]
    Config(&'static str),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
}

fn gauss(r: &mut Rng) -> f64 {
    StandardNormal.sample(r)
}

/// Paired (target, observation) draws stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub target_dim: usize,
    pub obs_dim: usize,
    targets: Vec<f64>,
    obs: Vec<f64>,
}

impl Samples {
    pub fn new(target_dim: usize, obs_dim: usize) -> Self {
        Samples { target_dim, obs_dim, targets: Vec::new(), obs: Vec::new() }
    }

    pub fn push(&mut self, target: &[f64], obs: &[f64]) {
        debug_assert!(target.len() == self.target_dim && obs.len() == self.obs_dim);
        self.targets.extend_from_slice(target);
        self.obs.extend_from_slice(obs);
    }

    pub fn len(&self) -> usize {
        self.targets.len() / self.target_dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.target_dim..(i + 1) * self.target_dim]
    }

    pub fn obs(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    /// First and second halves.
    pub fn split_half(&self) -> (Samples, Samples) {
        let h = self.len() / 2;
        let (ta, tb) = self.targets.split_at(h * self.target_dim);
        let (oa, ob) = self.obs.split_at(h * self.obs_dim);
        (
            Samples { target_dim: self.target_dim, obs_dim: self.obs_dim, targets: ta.to_vec(), obs: oa.to_vec() },
            Samples { target_dim: self.target_dim, obs_dim: self.obs_dim, targets: tb.to_vec(), obs: ob.to_vec() },
        )
    }
}

/// `f(z) = a + B z`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFit {
    pub a: Vector,
    pub b: Matrix,
}

impl AffineFit {
    pub fn predict(&self, z: &[f64]) -> Vector {
        &self.a + &self.b * Vector::from_column_slice(z)
    }
}

fn mean_rows(data: &[f64], dim: usize, n: usize) -> Vector {
    Vector::from_iterator(dim, (0..dim).map(|j| stable_sum((0..n).map(|i| data[i * dim + j])) / n as f64))
}

/// Least-squares affine estimator from sample moments:
/// `B = Σ_TZ Σ_ZZ⁻¹`, `a = μ_T − B μ_Z`.
pub fn fit_affine(train: &Samples) -> Result<AffineFit, TheoryError> {
    let n = train.len();
    let (dt, dz) = (train.target_dim, train.obs_dim);
    if n < dz + 2 {
        return Err(TheoryError::TooFewSamples { got: n, need: dz + 2 });
    }
    let mt = mean_rows(&train.targets, dt, n);
    let mz = mean_rows(&train.obs, dz, n);
    let mut szz = Matrix::zeros(dz, dz);
    let mut stz = Matrix::zeros(dt, dz);
    for i in 0..n {
        let z = Vector::from_column_slice(train.obs(i)) - &mz;
        let t = Vector::from_column_slice(train.target(i)) - &mt;
        szz += &z * z.transpose();
        stz += &t * z.transpose();
    }
    szz /= n as f64;
    stz /= n as f64;
    let condition = symmetric_condition(&szz);
    if !(condition <= MOMENT_CONDITION_LIMIT) {
        return Err(TheoryError::SingularMoments { condition });
    }
    // B Σ_ZZ = Σ_TZ, solved through Σ_ZZ's Cholesky factor
    let chol = szz.clone().cholesky().ok_or(TheoryError::SingularMoments { condition })?;
    let b = chol.solve(&stz.transpose()).transpose();
    let a = &mt - &b * &mz;
    Ok(AffineFit { a, b })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn affine_errors(fit: &AffineFit, test: &Samples) -> Vec<f64> {
    (0..test.len())
        .map(|i| {
            let p = fit.predict(test.obs(i));
            sq_dist(p.as_slice(), test.target(i))
        })
        .collect()
}

/// Held-out mean squared error of the affine estimator fitted on `train`.
pub fn best_affine_mse(train: &Samples, test: &Samples) -> Result<f64, TheoryError> {
    let fit = fit_affine(train)?;
    let e = affine_errors(&fit, test);
    Ok(stable_sum(e.iter().copied()) / e.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Neighbor {
    d: f64,
    i: usize,
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, o: &Self) -> Ordering {
        self.d.total_cmp(&o.d).then(self.i.cmp(&o.i))
    }
}

const LEAF: usize = 8;

/// Static kd-tree over row-major points; the median of each range is the
/// node, split along the axis of widest spread.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    order: Vec<usize>,
    axis: Vec<u8>,
}

impl KdTree {
    pub fn build(points: &[f64], dim: usize) -> Self {
        assert!(dim > 0 && dim < 256 && points.len() % dim == 0);
        let n = points.len() / dim;
        let mut t = KdTree { dim, points: points.to_vec(), order: (0..n).collect(), axis: vec![0; n] };
        t.split(0, n);
        t
    }

    fn coord(&self, i: usize, a: usize) -> f64 {
        self.points[i * self.dim + a]
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn split(&mut self, lo: usize, hi: usize) {
        if hi - lo <= LEAF {
            return;
        }
        let mut best = (0usize, -1.0f64);
        for a in 0..self.dim {
            let (mn, mx) = self.order[lo..hi]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), &i| {
                    let v = self.coord(i, a);
                    (mn.min(v), mx.max(v))
                });
            if mx - mn > best.1 {
                best = (a, mx - mn);
            }
        }
        let a = best.0;
        let mid = (lo + hi) / 2;
        let (pts, dim) = (&self.points, self.dim);
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&x, &y| {
            pts[x * dim + a].total_cmp(&pts[y * dim + a]).then(x.cmp(&y))
        });
        self.axis[mid] = a as u8;
        self.split(lo, mid);
        self.split(mid + 1, hi);
    }

    /// Indices of the `k` nearest points, closest first; ties go to the
    /// lower index.
    pub fn nearest(&self, q: &[f64], k: usize) -> Vec<usize> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.search(0, self.order.len(), q, k, &mut heap);
        }
        let mut v = heap.into_vec();
        v.sort();
        v.into_iter().map(|nb| nb.i).collect()
    }

    fn offer(&self, i: usize, q: &[f64], k: usize, heap: &mut BinaryHeap<Neighbor>) {
        let nb = Neighbor { d: sq_dist(self.point(i), q), i };
        if heap.len() < k {
            heap.push(nb);
        } else if nb < *heap.peek().unwrap() {
            heap.pop();
            heap.push(nb);
        }
    }

    fn search(&self, lo: usize, hi: usize, q: &[f64], k: usize, heap: &mut BinaryHeap<Neighbor>) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                self.offer(i, q, k, heap);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let p = self.order[mid];
        let a = self.axis[mid] as usize;
        let diff = q[a] - self.coord(p, a);
        self.offer(p, q, k, heap);
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(near.0, near.1, q, k, heap);
        if heap.len() < k || diff * diff <= heap.peek().unwrap().d {
            self.search(far.0, far.1, q, k, heap);
        }
    }
}

/// Default neighbour count, `round(sqrt(n_train))`.
pub fn default_k(n_train: usize) -> usize {
    (libm::round(libm::sqrt(n_train as f64)) as usize).max(1)
}

/// Conditional-mean estimate by k nearest observations in `train`,
/// scored on `test`.
pub fn mc_bayes_mse_knn<E: Executor>(train: &Samples, test: &Samples, k: Option<usize>, exec: &E) -> Result<f64, TheoryError> {
    if train.is_empty() || test.is_empty() {
        return Err(TheoryError::TooFewSamples { got: train.len().min(test.len()), need: 1 });
    }
    let k = k.unwrap_or_else(|| default_k(train.len())).min(train.len());
    let tree = KdTree::build(&train.obs, train.obs_dim);
    let dt = train.target_dim;
    let errs = exec.map_indexed(test.len(), |i| {
        let nb = tree.nearest(test.obs(i), k);
        let mut m = vec![0.0; dt];
        for &j in &nb {
            for (a, v) in m.iter_mut().zip(train.target(j)) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= k as f64);
        sq_dist(&m, test.target(i))
    });
    Ok(stable_sum(errs.iter().copied()) / errs.len() as f64)
}

/// Position `P`, velocity `V = γP + U`, observation `(Y, S)` with
/// `Y = P + N` and `S = u(P)ᵀV + ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DopplerTheoryParams {
    pub sigma_p: f64,
    pub sigma_v: f64,
    pub rho: f64,
    pub sigma_n: f64,
    pub sigma_eps: f64,
}

impl Default for DopplerTheoryParams {
    fn default() -> Self {
        DopplerTheoryParams { sigma_p: 1.0, sigma_v: 1.0, rho: 0.5, sigma_n: 1.0, sigma_eps: 0.1 }
    }
}

impl DopplerTheoryParams {
    pub fn gamma(&self) -> f64 {
        self.rho / (self.sigma_p * self.sigma_p)
    }

    /// Variance of the velocity part independent of position.
    pub fn sigma_u2(&self) -> f64 {
        self.sigma_v * self.sigma_v - self.rho * self.rho / (self.sigma_p * self.sigma_p)
    }

    pub fn tau2(&self) -> f64 {
        self.sigma_u2() + self.sigma_eps * self.sigma_eps
    }

    /// `ρ = 0` is accepted: it is the affine-optimal control.
    pub fn validate(&self) -> Result<(), TheoryError> {
        let v = [self.sigma_p, self.sigma_v, self.rho, self.sigma_n, self.sigma_eps];
        if v.iter().any(|x| !x.is_finite()) || self.sigma_p <= 0.0 || self.sigma_n < 0.0 || self.sigma_eps < 0.0 {
            return Err(TheoryError::Config("Doppler scales must be finite and positive"));
        }
        if !(self.sigma_u2() > 0.0) {
            return Err(TheoryError::Config("position/velocity covariance is not positive definite"));
        }
        Ok(())
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Samples, TheoryError> {
        self.validate()?;
        let mut r = rng::named(seed, "doppler-theory");
        let mut s = Samples::new(3, 4);
        let su = libm::sqrt(self.sigma_u2());
        let g = self.gamma();
        for _ in 0..n {
            let p = [gauss(&mut r) * self.sigma_p, gauss(&mut r) * self.sigma_p, gauss(&mut r) * self.sigma_p];
            let v: [f64; 3] = core::array::from_fn(|j| g * p[j] + su * gauss(&mut r));
            let y: [f64; 3] = core::array::from_fn(|j| p[j] + self.sigma_n * gauss(&mut r));
            let np = libm::sqrt(p.iter().map(|x| x * x).sum());
            let radial: f64 = (0..3).map(|j| p[j] / np * v[j]).sum();
            let sv = radial + self.sigma_eps * gauss(&mut r);
            s.push(&p, &[y[0], y[1], y[2], sv]);
        }
        Ok(s)
    }
}

/// Isotropic Gaussian position observed in range and bearing, then mapped
/// to Cartesian coordinates. `linear` replaces the polar noise with
/// additive Cartesian noise of scale `sigma_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarTheoryParams {
    pub sigma_x: f64,
    pub sigma_r: f64,
    pub sigma_theta: f64,
    pub linear: bool,
}

impl Default for LidarTheoryParams {
    fn default() -> Self {
        LidarTheoryParams { sigma_x: 1.0, sigma_r: 1.0, sigma_theta: 0.3, linear: false }
    }
}

impl LidarTheoryParams {
    pub fn kappa(&self) -> f64 {
        libm::exp(-self.sigma_theta * self.sigma_theta / 2.0)
    }

    fn alpha(&self) -> f64 {
        let (x2, r2) = (self.sigma_x * self.sigma_x, self.sigma_r * self.sigma_r);
        x2 / (x2 + r2)
    }

    /// Closed-form `lim q(R)/R` as `R → 0`.
    pub fn predicted_small_slope(&self) -> f64 {
        2.0 * self.kappa() * self.alpha()
    }

    /// Closed-form `lim q(R)/R` as `R → ∞`.
    pub fn predicted_large_slope(&self) -> f64 {
        self.kappa() * self.alpha()
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        let ok = self.sigma_x > 0.0 && self.sigma_r > 0.0 && self.sigma_theta >= 0.0;
        if !ok || !(self.sigma_x + self.sigma_r + self.sigma_theta).is_finite() {
            return Err(TheoryError::Config("need sigma_x, sigma_r > 0 and sigma_theta >= 0"));
        }
        Ok(())
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Samples, TheoryError> {
        self.validate()?;
        let mut r = rng::named(seed, "lidar-theory");
        let mut s = Samples::new(2, 2);
        for _ in 0..n {
            let x = [gauss(&mut r) * self.sigma_x, gauss(&mut r) * self.sigma_x];
            let z = if self.linear {
                [x[0] + self.sigma_r * gauss(&mut r), x[1] + self.sigma_r * gauss(&mut r)]
            } else {
                let rz = libm::hypot(x[0], x[1]) + self.sigma_r * gauss(&mut r);
                let th = libm::atan2(x[1], x[0]) + self.sigma_theta * gauss(&mut r);
                [rz * libm::cos(th), rz * libm::sin(th)]
            };
            s.push(&x, &z);
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "setting", rename_all = "lowercase")]
pub enum GapSetting {
    Doppler(DopplerTheoryParams),
    Lidar(LidarTheoryParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub affine_mse: f64,
    pub bayes_mse_estimate: f64,
    pub gap: f64,
    /// Bootstrap standard error of `gap`.
    pub gap_se: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub k: usize,
}

impl GapReport {
    pub fn z(&self) -> f64 {
        self.gap / self.gap_se
    }
}

/// Symmetry reduction: the conditional mean is `m(f) e`, with `e` the unit
/// direction of the position part of the observation and `f` its invariant
/// features. Returns per-sample (features, direction, radial target).
fn reduce(setting: &GapSetting, s: &Samples) -> (Vec<f64>, usize, Vec<[f64; 3]>, Vec<f64>) {
    let n = s.len();
    let d = s.target_dim;
    let mut feats = Vec::new();
    let mut dirs = Vec::with_capacity(n);
    let mut rad = Vec::with_capacity(n);
    for i in 0..n {
        let z = s.obs(i);
        let norm = libm::sqrt(z[..d].iter().map(|v| v * v).sum());
        let mut e = [0.0; 3];
        for j in 0..d {
            e[j] = z[j] / norm;
        }
        feats.push(norm);
        if let GapSetting::Doppler(_) = setting {
            feats.push(z[3]);
        }
        rad.push((0..d).map(|j| s.target(i)[j] * e[j]).sum());
        dirs.push(e);
    }
    let fd = if matches!(setting, GapSetting::Doppler(_)) { 2 } else { 1 };
    (feats, fd, dirs, rad)
}

/// Local linear fit of `targets` over the neighbours `nb` of `x`. Returns
/// the fitted value at `x` and its own variance, `s² e₁ᵀ(XᵀX)⁻¹e₁`, which
/// inflates the squared error it is scored with. A plain neighbour mean
/// is biased wherever the feature density slopes across the neighbourhood;
/// the linear term absorbs that. Degenerate neighbourhoods fall back to
/// the mean and `variance / k`.
fn local_linear(nb: &[usize], feats: &[f64], fd: usize, targets: &[f64], x: &[f64]) -> (f64, f64) {
    let k = nb.len();
    let p = fd + 1;
    let mean = stable_sum(nb.iter().map(|&j| targets[j])) / k as f64;
    let fallback = || {
        let var = stable_sum(nb.iter().map(|&j| (targets[j] - mean) * (targets[j] - mean))) / (k - 1).max(1) as f64;
        (mean, var / k as f64)
    };
    if k <= p + 1 {
        return fallback();
    }
    let row = |j: usize| -> Vector { Vector::from_fn(p, |a, _| if a == 0 { 1.0 } else { feats[j * fd + a - 1] - x[a - 1] }) };
    let mut xtx = Matrix::zeros(p, p);
    let mut xty = Vector::zeros(p);
    for &j in nb {
        let r = row(j);
        xtx += &r * r.transpose();
        xty += &r * targets[j];
    }
    let Some(chol) = xtx.cholesky() else { return fallback() };
    let beta = chol.solve(&xty);
    let rss = stable_sum(nb.iter().map(|&j| {
        let e = targets[j] - row(j).dot(&beta);
        e * e
    }));
    let s2 = rss / (k - p) as f64;
    let mut e1 = Vector::zeros(p);
    e1[0] = 1.0;
    let leverage = chol.solve(&e1)[0];
    (beta[0], s2 * leverage)
}

/// Affine MSE minus a k-NN estimate of the Bayes MSE, both on the held-out
/// half. The k-NN regression is local linear on the rotation-invariant
/// features and subtracts its own variance; the standard error comes from
/// a paired bootstrap over test samples.
pub fn affine_gap_check<E: Executor>(setting: &GapSetting, n_samples: usize, seed: u64, exec: &E) -> Result<GapReport, TheoryError> {
    let all = match setting {
        GapSetting::Doppler(p) => p.sample(n_samples, seed)?,
        GapSetting::Lidar(p) => p.sample(n_samples, seed)?,
    };
    let (train, test) = all.split_half();
    if train.len() < 16 || test.len() < 2 {
        return Err(TheoryError::TooFewSamples { got: n_samples, need: 34 });
    }
    let fit = fit_affine(&train)?;
    let ea = affine_errors(&fit, &test);

    let (mut ftr, fd, _, rtr) = reduce(setting, &train);
    let (mut fte, _, dte, _) = reduce(setting, &test);
    // standardize features by the training spread
    for a in 0..fd {
        let col: Vec<f64> = (0..train.len()).map(|i| ftr[i * fd + a]).collect();
        let m = stable_sum(col.iter().copied()) / col.len() as f64;
        let sd = libm::sqrt(stable_sum(col.iter().map(|v| (v - m) * (v - m))) / col.len() as f64).max(1e-300);
        ftr.iter_mut().skip(a).step_by(fd).for_each(|v| *v /= sd);
        fte.iter_mut().skip(a).step_by(fd).for_each(|v| *v /= sd);
    }
    let k = default_k(train.len());
    let tree = KdTree::build(&ftr, fd);
    let d = test.target_dim;
    let ek = exec.map_indexed(test.len(), |i| {
        let x = &fte[i * fd..(i + 1) * fd];
        let nb = tree.nearest(x, k);
        let (m, inflation) = local_linear(&nb, &ftr, fd, &rtr, x);
        let t = test.target(i);
        let err: f64 = (0..d).map(|j| (t[j] - m * dte[i][j]) * (t[j] - m * dte[i][j])).sum();
        err - inflation
    });
    let diffs: Vec<f64> = ea.iter().zip(&ek).map(|(a, b)| a - b).collect();
    let n = diffs.len() as f64;
    let affine_mse = stable_sum(ea.iter().copied()) / n;
    let bayes = stable_sum(ek.iter().copied()) / n;
    let gap_se = bootstrap_se(&diffs, seed, |v| stable_sum(v.iter().copied()) / v.len() as f64);
    Ok(GapReport {
        affine_mse,
        bayes_mse_estimate: bayes,
        gap: affine_mse - bayes,
        gap_se,
        n_train: train.len(),
        n_test: test.len(),
        k,
    })
}

/// Standard deviation (ddof 1) of `stat` over bootstrap resamples.
fn bootstrap_se<T: Clone>(data: &[T], seed: u64, stat: impl Fn(&[T]) -> f64) -> f64 {
    let mut r = rng::named(seed, "bootstrap");
    let mut buf = Vec::with_capacity(data.len());
    let stats: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            buf.clear();
            for _ in 0..data.len() {
                buf.push(data[r.random_range(0..data.len())].clone());
            }
            stat(&buf)
        })
        .collect();
    let m = stable_sum(stats.iter().copied()) / stats.len() as f64;
    libm::sqrt(stable_sum(stats.iter().map(|s| (s - m) * (s - m))) / (stats.len() - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    pub radius: f64,
    pub slope: f64,
    pub se: f64,
    pub predicted: f64,
    /// Samples that landed in the annulus.
    pub n_annulus: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub small: SlopeEstimate,
    pub large: SlopeEstimate,
}

impl SlopeReport {
    /// `(small − large) / combined standard error`.
    pub fn separation(&self) -> f64 {
        (self.small.slope - self.large.slope) / libm::hypot(self.small.se, self.large.se)
    }
}

fn normal_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    let u = (x - mu) / sd;
    libm::exp(-0.5 * u * u) / (sd * libm::sqrt(2.0 * PI))
}

/// Annulus width relative to `sigma_x`.
pub const ANNULUS_WIDTH: f64 = 0.02;

/// `q(R)/R` near one radius by importance-weighted regression of the
/// radial component `Xᵀu_Z` on `‖Z‖` within a thin annulus. Range noise
/// is drawn from a narrow proposal that lands `‖Z‖` near `R` on either
/// sign branch of `r_z`; for `R ≥ σ_x` positions are drawn around the
/// posterior radius rather than from the prior.
fn slope_at(p: &LidarTheoryParams, radius: f64, n: usize, seed: u64) -> (f64, f64, usize) {
    let mut r = rng::named(seed, "lidar-slope");
    let w = ANNULUS_WIDTH * p.sigma_x;
    let s = w / 4.0;
    let mu = radius * p.alpha();
    let sh = p.sigma_x.max(p.sigma_r);
    let x2 = p.sigma_x * p.sigma_x;
    // (weight, radial component, |Z|)
    let mut kept: Vec<(f64, f64, f64)> = Vec::new();
    for _ in 0..n {
        let (x, rho, wx) = if radius < p.sigma_x {
            let x = [gauss(&mut r) * p.sigma_x, gauss(&mut r) * p.sigma_x];
            (x, libm::hypot(x[0], x[1]), 1.0)
        } else {
            let rho = (mu + sh * gauss(&mut r)).abs();
            let phi = r.random_range(0.0..2.0 * PI);
            let prior = rho / x2 * libm::exp(-rho * rho / (2.0 * x2));
            let prop = normal_pdf(rho, mu, sh) + normal_pdf(-rho, mu, sh);
            ([rho * libm::cos(phi), rho * libm::sin(phi)], rho, prior / prop)
        };
        let th = libm::atan2(x[1], x[0]) + p.sigma_theta * gauss(&mut r);
        let (ct, st) = (libm::cos(th), libm::sin(th));
        for centre in [radius, -radius] {
            let vr = centre - rho + s * gauss(&mut r);
            let h = 0.5 * (normal_pdf(vr, radius - rho, s) + normal_pdf(vr, -radius - rho, s));
            let wt = 0.5 * normal_pdf(vr, 0.0, p.sigma_r) / h * wx;
            let rz = rho + vr;
            let nz = rz.abs();
            if (nz - radius).abs() < w / 2.0 {
                let radial = (x[0] * rz * ct + x[1] * rz * st) / nz;
                kept.push((wt, radial, nz));
            }
        }
    }
    let est = |v: &[(f64, f64, f64)]| {
        let num = stable_sum(v.iter().map(|(w, q, z)| w * q * z));
        let den = stable_sum(v.iter().map(|(w, _, z)| w * z * z));
        num / den
    };
    let slope = est(&kept);
    let se = bootstrap_se(&kept, seed, est);
    (slope, se, kept.len())
}

/// Monte-Carlo `q(R)/R` at `R = 0.05 σ_x` and `R = 10 σ_x`, next to the
/// closed-form small- and large-radius limits.
pub fn lidar_slope_limits(params: &LidarTheoryParams, n_samples: usize, seed: u64) -> Result<SlopeReport, TheoryError> {
    params.validate()?;
    if params.linear {
        return Err(TheoryError::Config("slope limits need the polar model"));
    }
    let mk = |radius: f64, predicted: f64, sub: u64| {
        let (slope, se, n_annulus) = slope_at(params, radius, n_samples, rng::derive_seed(seed, sub));
        SlopeEstimate { radius, slope, se, predicted, n_annulus }
    };
    Ok(SlopeReport {
        small: mk(0.05 * params.sigma_x, params.predicted_small_slope(), 0),
        large: mk(10.0 * params.sigma_x, params.predicted_large_slope(), 1),
    })
}

/// Linear system `x' = F x + w` predicted with a mismatched `F̃`, with
/// `‖Fʲ‖ ≤ C λʲ` checked up to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchSpec {
    f: Matrix,
    f_tilde: Matrix,
    q: CovMat,
    x0_cov: CovMat,
    e0_cov: CovMat,
    c: f64,
    lambda: f64,
    horizon: usize,
}

/// Smallest `C` with `‖Fʲ‖ ≤ C λʲ` for `j ≤ horizon`.
pub fn decay_constant(f: &Matrix, lambda: f64, horizon: usize) -> f64 {
    let mut pw = Matrix::identity(f.nrows(), f.ncols());
    let mut c: f64 = 0.0;
    for j in 0..=horizon {
        c = c.max(spectral_norm(&pw) / libm::pow(lambda, j as f64));
        pw = &pw * f;
    }
    c
}

impl MismatchSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        f: Matrix,
        f_tilde: Matrix,
        q: CovMat,
        x0_cov: CovMat,
        e0_cov: CovMat,
        c: f64,
        lambda: f64,
        horizon: usize,
    ) -> Result<Self, TheoryError> {
        let n = f.nrows();
        if f.ncols() != n || f_tilde.shape() != (n, n) || q.dim() != n || x0_cov.dim() != n || e0_cov.dim() != n {
            return Err(TheoryError::Config("matrix sizes disagree"));
        }
        if !(lambda > 0.0 && lambda < 1.0) || !(c > 0.0) || !c.is_finite() {
            return Err(TheoryError::Config("need 0 < lambda < 1 and C > 0"));
        }
        let need = decay_constant(&f, lambda, horizon);
        if need > c * (1.0 + 1e-12) {
            return Err(TheoryError::Config("‖F^j‖ ≤ C λ^j fails within the horizon"));
        }
        Ok(MismatchSpec { f, f_tilde, q, x0_cov, e0_cov, c, lambda, horizon })
    }

    /// Same, with the tightest valid `C`.
    pub fn fitted(f: Matrix, f_tilde: Matrix, q: CovMat, x0_cov: CovMat, e0_cov: CovMat, lambda: f64, horizon: usize) -> Result<Self, TheoryError> {
        let c = decay_constant(&f, lambda, horizon).max(f64::MIN_POSITIVE);
        Self::new(f, f_tilde, q, x0_cov, e0_cov, c, lambda, horizon)
    }

    pub fn f(&self) -> &Matrix {
        &self.f
    }
    pub fn f_tilde(&self) -> &Matrix {
        &self.f_tilde
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// How the posterior `x̂_{k|k}` is produced between predictions.
#[derive(Debug, Clone, PartialEq)]
pub enum LemmaFilter {
    /// No measurements: `x̂_{k+1|k+1} = x̂_{k+1|k}`, so
    /// `e_{k+1} = F e_k + η_k` holds exactly.
    OpenLoop,
    /// Kalman update with `F̃`, the true `Q`, and observations `H x + v`.
    Kalman { h: Matrix, r: CovMat },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    /// `E‖x_{k+1} − x̂_{k+1|k}‖²` for `k = 0..horizon`.
    pub empirical: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub bound: Vec<f64>,
    pub m_eta: f64,
    pub e0_sq: f64,
    pub violated: bool,
    pub first_violation: Option<usize>,
}

/// Symmetric square root through the eigendecomposition; works for
/// semidefinite (even zero) covariances.
fn psd_sqrt(m: &Matrix) -> Matrix {
    let eig = m.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|v| libm::sqrt(v.max(0.0)));
    &eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

fn draw(r: &mut Rng, root: &Matrix) -> Vector {
    let g = Vector::from_iterator(root.nrows(), (0..root.nrows()).map(|_| gauss(r)));
    root * g
}

/// Simulates `n_runs` independent runs and compares the per-step
/// prediction error against the bound. A step violates it when the
/// empirical mean exceeds the bound by more than three standard errors.
pub fn lemma1_bound_check<E: Executor>(
    spec: &MismatchSpec,
    filter: &LemmaFilter,
    horizon: usize,
    n_runs: usize,
    seed: u64,
    exec: &E,
) -> Result<LemmaReport, TheoryError> {
    if n_runs < 2 || horizon == 0 {
        return Err(TheoryError::TooFewSamples { got: n_runs, need: 2 });
    }
    if horizon > spec.horizon {
        return Err(TheoryError::Config("horizon exceeds the one C was verified for"));
    }
    if let LemmaFilter::Kalman { h, r } = filter {
        if h.ncols() != spec.f.nrows() || h.nrows() != r.dim() {
            return Err(TheoryError::Config("observation model sizes disagree"));
        }
    }
    let qs = psd_sqrt(spec.q.matrix());
    let xs = psd_sqrt(spec.x0_cov.matrix());
    let es = psd_sqrt(spec.e0_cov.matrix());
    let rs = match filter {
        LemmaFilter::Kalman { r, .. } => Some(psd_sqrt(r.matrix())),
        LemmaFilter::OpenLoop => None,
    };
    // per run: (‖e0‖², [‖err_k‖²], [‖η_k‖²])
    let runs = exec.map_indexed(n_runs, |run| {
        let mut rg = rng::stream(seed, run as u64);
        let mut x = draw(&mut rg, &xs);
        let e0 = draw(&mut rg, &es);
        let mut xh = &x - &e0;
        let mut p = spec.e0_cov.matrix().clone();
        let mut err = Vec::with_capacity(horizon);
        let mut eta = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let w = draw(&mut rg, &qs);
            let pred = &spec.f_tilde * &xh;
            let x_next = &spec.f * &x + &w;
            eta.push(((&spec.f - &spec.f_tilde) * &xh + &w).norm_squared());
            err.push((&x_next - &pred).norm_squared());
            x = x_next;
            xh = match (filter, &rs) {
                (LemmaFilter::Kalman { h, r }, Some(rs)) => {
                    let pp = &spec.f_tilde * &p * spec.f_tilde.transpose() + spec.q.matrix();
                    let z = h * &x + draw(&mut rg, rs);
                    let s = h * &pp * h.transpose() + r.matrix();
                    let k = crate::linalg::mrdiv_spd(&(&pp * h.transpose()), &s).unwrap_or_else(|_| Matrix::zeros(pp.nrows(), h.nrows()));
                    let n = pp.nrows();
                    p = crate::linalg::nearest_spd(&((Matrix::identity(n, n) - &k * h) * &pp)).unwrap_or(pp);
                    &pred + &k * (z - h * &pred)
                }
                _ => pred,
            };
        }
        (e0.norm_squared(), err, eta)
    });
    let n = n_runs as f64;
    let e0_sq = stable_sum(runs.iter().map(|r| r.0)) / n;
    let mut empirical = Vec::with_capacity(horizon);
    let mut ses = Vec::with_capacity(horizon);
    let mut m_eta: f64 = 0.0;
    for k in 0..horizon {
        let m = stable_sum(runs.iter().map(|r| r.1[k])) / n;
        let v = stable_sum(runs.iter().map(|r| (r.1[k] - m) * (r.1[k] - m))) / (n - 1.0);
        empirical.push(m);
        ses.push(libm::sqrt(v / n));
        m_eta = m_eta.max(stable_sum(runs.iter().map(|r| r.2[k])) / n);
    }
    let fn2 = {
        let s = spectral_norm(&spec.f);
        s * s
    };
    let c2 = spec.c * spec.c;
    let persistent = (4.0 * fn2 * c2 / ((1.0 - spec.lambda) * (1.0 - spec.lambda)) + 2.0) * m_eta;
    let bound: Vec<f64> = (0..horizon)
        .map(|k| 4.0 * fn2 * c2 * libm::pow(spec.lambda, 2.0 * k as f64) * e0_sq + persistent)
        .collect();
    let first_violation = (0..horizon).find(|&k| empirical[k] > bound[k] + 3.0 * ses[k]);
    Ok(LemmaReport {
        empirical,
        standard_errors: ses,
        bound,
        m_eta,
        e0_sq,
        violated: first_violation.is_some(),
        first_violation,
    })
}

/// A random stable system for the lemma check: entries of `F` uniform in
/// `±0.6` (rescaled to spectral radius 0.9 when larger), `F̃` the raw draw
/// plus `U(±0.2)`, decay rate halfway between the spectral
/// radius of `F` and 1, and either open-loop prediction or a Kalman filter
/// with `H = I`, `R = 0.5 I`.
pub fn random_mismatch_case(dim: usize, kalman: bool, horizon: usize, seed: u64) -> Result<(MismatchSpec, LemmaFilter), TheoryError> {
    if dim == 0 {
        return Err(TheoryError::Config("dimension must be positive"));
    }
    let mut r = rng::named(seed, "mismatch-case");
    let raw = Matrix::from_fn(dim, dim, |_, _| r.random_range(-0.6..0.6));
    let f_tilde = &raw + Matrix::from_fn(dim, dim, |_, _| r.random_range(-0.2..0.2));
    let rho = |m: &Matrix| m.clone().complex_eigenvalues().iter().map(|c| libm::hypot(c.re, c.im)).fold(0.0, f64::max);
    // two-dimensional draws can leave the unit disc; pull those back to 0.9
    let f = match rho(&raw) {
        v if v > 0.9 => raw * (0.9 / v),
        _ => raw,
    };
    let radius = rho(&f);
    let lambda = (radius + 0.5 * (1.0 - radius)).max(0.05);
    let q = CovMat::scaled_identity(dim, r.random_range(0.01..1.0));
    let spec = MismatchSpec::fitted(
        f,
        f_tilde,
        q,
        CovMat::scaled_identity(dim, 4.0),
        CovMat::scaled_identity(dim, 1.0),
        lambda,
        horizon,
    )?;
    let filter = if kalman {
        LemmaFilter::Kalman { h: Matrix::identity(dim, dim), r: CovMat::scaled_identity(dim, 0.5) }
    } else {
        LemmaFilter::OpenLoop
    };
    Ok((spec, filter))
}
