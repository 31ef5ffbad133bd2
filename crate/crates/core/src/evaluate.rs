//! Error series, RMSE, the paired z-test and the table builders.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::exec::Executor;
use crate::filters::{initial_belief, run_task, FilterError, InitPolicy, StepRule, Task};
use crate::linalg::stable_sum;
use crate::statespace::{CovMat, ModelFamily, StateSpaceModel, Trajectory};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("errors must be finite and nonnegative")]
    InvalidErrors,
    #[error("need at least {0} paired trajectories")]
    TooFewTrajectories(usize),
    #[error("series are not paired: trajectory {0} missing from one side")]
    Unpaired(u64),
    #[error("paired differences have zero variance")]
    ZeroVariance,
    #[error("quantile {0} outside [0, 1]")]
    BadQuantile(f64),
    #[error("series is empty")]
    Empty,
    #[error("method `{0}`: {1}")]
    Method(String, String),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Per-trajectory, per-step position errors for one method on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub method: String,
    pub task: Task,
    pub dataset: String,
    ids: Vec<u64>,
    errors: Vec<Vec<f64>>,
}

impl ErrorSeries {
    pub fn new(
        method: &str,
        task: Task,
        dataset: &str,
        ids: Vec<u64>,
        errors: Vec<Vec<f64>>,
    ) -> Result<Self, EvalError> {
        if ids.len() != errors.len() {
            return Err(EvalError::InvalidErrors);
        }
        if errors.iter().flatten().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(EvalError::InvalidErrors);
        }
        Ok(ErrorSeries { method: method.into(), task, dataset: dataset.into(), ids, errors })
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn errors(&self) -> &[Vec<f64>] {
        &self.errors
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn step_count(&self) -> usize {
        self.errors.iter().map(Vec::len).sum()
    }

    /// Mean squared error of each trajectory.
    pub fn per_trajectory_mse(&self) -> Vec<f64> {
        self.errors
            .iter()
            .map(|e| stable_sum(e.iter().map(|v| v * v)) / e.len().max(1) as f64)
            .collect()
    }

    pub fn squared(&self) -> impl Iterator<Item = f64> + '_ {
        self.errors.iter().flatten().map(|e| e * e)
    }
}

/// Runs `rule` over every trajectory and records its task errors.
pub fn error_series<R: StepRule + ?Sized, E: Executor>(
    method: &str,
    dataset: &str,
    trajs: &[Trajectory],
    model: &StateSpaceModel,
    rule: &R,
    task: Task,
    exec: &E,
) -> Result<ErrorSeries, EvalError> {
    let runs: Vec<Result<Vec<f64>, FilterError>> = exec.map_indexed(trajs.len(), |i| {
        let tr = &trajs[i];
        let init = initial_belief(tr, model, InitPolicy::FirstObservationLifted)?;
        let res = run_task(tr, model, rule, init, task)?;
        res.errors.ok_or(FilterError::DimensionMismatch("trajectory has no ground truth"))
    });
    let mut errors = Vec::with_capacity(trajs.len());
    for r in runs {
        errors.push(r?);
    }
    ErrorSeries::new(method, task, dataset, trajs.iter().map(|t| t.meta.id).collect(), errors)
}

/// `sqrt` of the mean squared error over every step of every trajectory.
pub fn rmse(series: &ErrorSeries) -> f64 {
    let n = series.step_count();
    if n == 0 {
        return 0.0;
    }
    libm::sqrt(stable_sum(series.squared()) / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZTestResult {
    pub z: f64,
    /// Two-sided standard normal tail probability.
    pub p: f64,
    pub n: usize,
    pub mean_delta: f64,
    pub std_delta: f64,
}

/// Paired z-test on per-trajectory MSE differences `A - B`.
pub fn z_test(a: &ErrorSeries, b: &ErrorSeries) -> Result<ZTestResult, EvalError> {
    let ma = a.per_trajectory_mse();
    let mb = b.per_trajectory_mse();
    let mut pa: Vec<(u64, f64)> = a.ids.iter().copied().zip(ma).collect();
    let mut pb: Vec<(u64, f64)> = b.ids.iter().copied().zip(mb).collect();
    pa.sort_by_key(|p| p.0);
    pb.sort_by_key(|p| p.0);
    if pa.len() != pb.len() {
        let missing = pa
            .iter()
            .find(|(id, _)| pb.binary_search_by_key(id, |p| p.0).is_err())
            .or_else(|| pb.iter().find(|(id, _)| pa.binary_search_by_key(id, |p| p.0).is_err()))
            .map(|p| p.0)
            .unwrap_or(0);
        return Err(EvalError::Unpaired(missing));
    }
    let mut deltas = Vec::with_capacity(pa.len());
    for ((ia, va), (ib, vb)) in pa.iter().zip(&pb) {
        if ia != ib {
            return Err(EvalError::Unpaired(*ia.min(ib)));
        }
        deltas.push(va - vb);
    }
    z_from_deltas(&deltas)
}

/// The z statistic of a set of paired differences.
pub fn z_from_deltas(deltas: &[f64]) -> Result<ZTestResult, EvalError> {
    let n = deltas.len();
    if n < 2 {
        return Err(EvalError::TooFewTrajectories(2));
    }
    let mean = stable_sum(deltas.iter().copied()) / n as f64;
    let var = stable_sum(deltas.iter().map(|d| (d - mean) * (d - mean))) / (n - 1) as f64;
    let sd = libm::sqrt(var);
    if !(sd >= 1e-15) {
        return Err(EvalError::ZeroVariance);
    }
    let z = mean / sd * libm::sqrt(n as f64);
    let p = libm::erfc(z.abs() / core::f64::consts::SQRT_2).clamp(0.0, 1.0);
    Ok(ZTestResult { z, p, n, mean_delta: mean, std_delta: sd })
}

/// Linearly interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantiles of the per-step squared errors.
pub fn quantile_curve(series: &ErrorSeries, quantiles: &[f64]) -> Result<Vec<(f64, f64)>, EvalError> {
    let mut v: Vec<f64> = series.squared().collect();
    if v.is_empty() {
        return Err(EvalError::Empty);
    }
    v.sort_by(f64::total_cmp);
    quantiles
        .iter()
        .map(|&q| {
            if !(0.0..=1.0).contains(&q) {
                Err(EvalError::BadQuantile(q))
            } else {
                Ok((q, quantile_sorted(&v, q)))
            }
        })
        .collect()
}

/// A rule together with the noise it was calibrated with.
pub struct TrainedRule<'a> {
    pub name: String,
    pub rule: &'a (dyn StepRule + 'a),
    pub q: CovMat,
    pub r: CovMat,
}

/// A test scenario and the OKF noise calibrated on it.
pub struct Scenario<'a> {
    pub name: String,
    pub test: &'a [Trajectory],
    pub okf_q: CovMat,
    pub okf_r: CovMat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// `ratios[i][j]` = RMSE(rule i on scenario j) / RMSE(OKF of j on j).
    pub ratios: Vec<Vec<f64>>,
}

pub fn ood_matrix<E: Executor>(
    programs: &[TrainedRule<'_>],
    scenarios: &[Scenario<'_>],
    family: ModelFamily,
    task: Task,
    exec: &E,
) -> Result<OodMatrix, EvalError> {
    let mut base = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let m = family.model(s.okf_q.clone(), s.okf_r.clone()).map_err(FilterError::from)?;
        let e = error_series("okf", &s.name, s.test, &m, &crate::filters::CanonicalKf, task, exec)?;
        base.push(rmse(&e));
    }
    let mut ratios = Vec::with_capacity(programs.len());
    for p in programs {
        let m = family.model(p.q.clone(), p.r.clone()).map_err(FilterError::from)?;
        let mut row = Vec::with_capacity(scenarios.len());
        for (s, b) in scenarios.iter().zip(&base) {
            let e = error_series(&p.name, &s.name, s.test, &m, p.rule, task, exec)?;
            row.push(rmse(&e) / b);
        }
        ratios.push(row);
    }
    Ok(OodMatrix {
        rows: programs.iter().map(|p| p.name.clone()).collect(),
        cols: scenarios.iter().map(|s| s.name.clone()).collect(),
        ratios,
    })
}

/// A fitted filter: step rule plus the model it runs under.
pub type Fitted = (Box<dyn StepRule + Send + Sync>, StateSpaceModel);

/// Something that can be fitted on a training prefix.
pub trait Method: Sync {
    fn name(&self) -> String;
    fn fit(&self, train: &[Trajectory], task: Task) -> Result<Fitted, String>;
}

impl<F> Method for (&str, F)
where
    F: Fn(&[Trajectory], Task) -> Result<Fitted, String> + Sync,
{
    fn name(&self) -> String {
        self.0.into()
    }
    fn fit(&self, train: &[Trajectory], task: Task) -> Result<Fitted, String> {
        (self.1)(train, task)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub samples: usize,
    pub rmse: f64,
}

/// RMSE on `test` of each method fitted on the first `n` training
/// trajectories, for every `n`.
pub fn sample_efficiency_sweep<E: Executor>(
    methods: &[&dyn Method],
    train: &[Trajectory],
    test: &[Trajectory],
    sizes: &[usize],
    task: Task,
    exec: &E,
) -> Result<Vec<SweepRow>, EvalError> {
    let mut rows = Vec::new();
    for m in methods {
        for &n in sizes {
            let n = n.min(train.len());
            let (rule, model) = m.fit(&train[..n], task).map_err(|e| EvalError::Method(m.name(), e))?;
            let e = error_series(&m.name(), "test", test, &model, rule.as_ref(), task, exec)?;
            rows.push(SweepRow { method: m.name(), samples: n, rmse: rmse(&e) });
        }
    }
    Ok(rows)
}

/// Cumulative minimum of the per-cycle best fitness.
pub fn best_so_far_curve(history: &crate::evolve::SearchHistory) -> Vec<(usize, f64)> {
    history.global_best.iter().copied().enumerate().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn series(errs: Vec<Vec<f64>>) -> ErrorSeries {
        let ids = (0..errs.len() as u64).collect();
        ErrorSeries::new("m", Task::Se, "d", ids, errs).unwrap()
    }

    #[test]
    fn rmse_basic() {
        assert_eq!(rmse(&series(vec![vec![0.0, 0.0]])), 0.0);
        let r = rmse(&series(vec![vec![3.0, 4.0]]));
        assert!((r - 12.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn identical_series_have_zero_variance() {
        let a = series(vec![vec![1.0, 2.0], vec![3.0]]);
        assert_eq!(z_test(&a, &a), Err(EvalError::ZeroVariance));
    }

    #[test]
    fn quantile_endpoints() {
        let a = series(vec![vec![1.0, 2.0], vec![3.0, 0.5]]);
        let q = quantile_curve(&a, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(q[0].1, 0.25);
        assert_eq!(q[2].1, 9.0);
        assert!((q[1].1 - 2.5).abs() < 1e-15);
        assert!(quantile_curve(&a, &[1.5]).is_err());
    }

    #[test]
    fn unpaired_series() {
        let a = series(vec![vec![1.0], vec![2.0]]);
        let b = ErrorSeries::new("m", Task::Se, "d", vec![0, 7], vec![vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(z_test(&a, &b), Err(EvalError::Unpaired(_))));
    }
}
