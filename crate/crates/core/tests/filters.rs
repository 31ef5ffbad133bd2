mod common;

use common::*;
use kerule_core::filters::*;
use kerule_core::linalg::{Matrix, Vector};
use kerule_core::ruledsl::canonical_kf_program;
use kerule_core::statespace::*;
use proptest::prelude::*;

fn belief(mean: &[f64], cov: Matrix) -> BeliefState {
    BeliefState::new(Vector::from_row_slice(mean), CovMat::new(cov).unwrap(), 0).unwrap()
}

fn static_model(f: Matrix, h: Matrix, q: Matrix, r: Matrix) -> StateSpaceModel {
    StateSpaceModel::new(f, ObservationMap::Static(h), CovMat::new(q).unwrap(), CovMat::new(r).unwrap()).unwrap()
}

#[test]
fn predict_identity_dynamics() {
    let m = static_model(Matrix::identity(2, 2), Matrix::identity(2, 2), Matrix::zeros(2, 2), Matrix::identity(2, 2));
    let b = belief(&[1.0, -2.0], Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]));
    let p = kf_predict(&b, &m).unwrap();
    assert_eq!(p.mean, b.mean);
    assert_eq!(p.cov, b.cov);
    assert_eq!(p.time_index, 1);
}

#[test]
fn predict_constant_velocity() {
    let f = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let m = static_model(f, Matrix::identity(2, 2), Matrix::zeros(2, 2), Matrix::identity(2, 2));
    let p = kf_predict(&belief(&[1.0, 2.0], Matrix::identity(2, 2)), &m).unwrap();
    assert_eq!(p.mean.as_slice(), &[3.0, 2.0]);
}

#[test]
fn predict_matches_triple_product() {
    let mut r = rng(11);
    for _ in 0..50 {
        let f = rand_mat(&mut r, 4, 4);
        let q = rand_spd(&mut r, 4, 0.1);
        let m = static_model(f.clone(), Matrix::identity(4, 4), q.clone(), Matrix::identity(4, 4));
        let b = rand_belief(&mut r, 4);
        let p = kf_predict(&b, &m).unwrap();
        // element by element triple sum
        let pc = b.cov.matrix();
        let oracle = Matrix::from_fn(4, 4, |i, j| {
            let mut acc = q[(i, j)];
            for a in 0..4 {
                for c in 0..4 {
                    acc += f[(i, a)] * pc[(a, c)] * f[(j, c)];
                }
            }
            acc
        });
        assert!(rel_diff(p.cov.matrix(), &oracle) < 1e-10);
    }
}

#[test]
fn update_equal_confidence_is_midpoint() {
    let s2 = 3.0;
    let b = belief(&[0.0, 4.0], Matrix::identity(2, 2) * s2);
    let z = Vector::from_row_slice(&[2.0, 0.0]);
    let u = kf_update(&b, &z, &Matrix::identity(2, 2), &CovMat::scaled_identity(2, s2)).unwrap();
    assert!((u.mean[0] - 1.0).abs() < 1e-14 && (u.mean[1] - 2.0).abs() < 1e-14);
    assert!(rel_diff(u.cov.matrix(), &(Matrix::identity(2, 2) * (s2 / 2.0))) < 1e-14);
}

#[test]
fn update_uninformative_measurement() {
    let b = belief(&[1.0, 2.0], Matrix::identity(2, 2));
    let z = Vector::from_row_slice(&[100.0, -100.0]);
    let u = kf_update(&b, &z, &Matrix::identity(2, 2), &CovMat::scaled_identity(2, 1e12)).unwrap();
    assert!(max_abs_diff_v(&u.mean, &b.mean) < 1e-6);
}

#[test]
fn update_scalar_oracle() {
    let b = belief(&[0.0], Matrix::from_element(1, 1, 2.0));
    let u = kf_update(&b, &Vector::from_element(1, 3.0), &Matrix::identity(1, 1), &CovMat::diagonal(&[1.0]).unwrap()).unwrap();
    // K = 2/3
    assert!((u.mean[0] - 2.0).abs() < 1e-15);
    assert!((u.cov.matrix()[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn update_rejects_singular_innovation() {
    let b = belief(&[0.0, 0.0], Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-300]));
    let h = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
    let err = kf_update(&b, &Vector::zeros(2), &h, &CovMat::zeros(2)).unwrap_err();
    assert!(matches!(err, FilterError::SingularInnovation { .. }));
}

#[test]
fn canonical_matches_reference_loop() {
    let mut r = rng(5);
    for i in 0..300 {
        let fam = family(i);
        let model = rand_model(&mut r, fam);
        let traj = sim_trajectory(fam, i as u64).truncated(10);
        let init = initial_belief(&traj, &model, InitPolicy::FirstObservationLifted).unwrap();
        let (post, pred) = reference_kf(&model, traj.observations(), &init.mean, init.cov.matrix());
        for rule in [&CanonicalKf as &dyn StepRule, &canonical_kf_program()] {
            let res = run_se(&traj, &model, rule, init.clone()).unwrap();
            for t in 0..traj.len() {
                let d = rel_diff_v(&res.posteriors[t].mean, &post[t]);
                assert!(d < 1e-12, "family {fam:?} step {t} diff {d:e}");
                assert!(rel_diff_v(&res.predictions[t].mean, &pred[t]) < 1e-12);
            }
        }
    }
}

#[test]
fn static_noiseless_filter_converges() {
    // constant state observed without noise
    let m = static_model(Matrix::identity(2, 2), Matrix::identity(2, 2), Matrix::zeros(2, 2), Matrix::identity(2, 2) * 1e-6);
    let truth = Vector::from_row_slice(&[3.0, -1.0]);
    let obs = vec![truth.clone(); 20];
    let meta = TrajectoryMeta { benchmark: "static".into(), id: 0, seed: 0 };
    let traj = Trajectory::new(Some(obs.clone()), obs, meta).unwrap();
    let init = belief(&[0.0, 0.0], Matrix::identity(2, 2) * 1e4);
    let res = run_se(&traj, &m, &CanonicalKf, init).unwrap();
    let traces: Vec<f64> = res.posteriors.iter().map(|b| b.cov.trace()).collect();
    assert!(traces.windows(2).all(|w| w[1] <= w[0]));
    let errs = res.errors.unwrap();
    assert!(errs.last().unwrap() < &1e-6);
}

#[test]
fn initial_belief_policies() {
    let lidar = sim_trajectory(ModelFamily::Lidar, 3);
    let m = ModelFamily::Lidar.model(CovMat::identity(4), CovMat::identity(2)).unwrap();
    let b = initial_belief(&lidar, &m, InitPolicy::FirstObservationLifted).unwrap();
    let z0 = &lidar.observations()[0];
    assert_eq!(b.mean.as_slice(), &[z0[0], z0[1], 0.0, 0.0]);
    assert_eq!(b.cov.matrix(), &(Matrix::identity(4, 4) * 1e4));

    let dop = sim_trajectory(ModelFamily::Doppler, 3);
    let m = ModelFamily::Doppler.model(CovMat::identity(6), CovMat::identity(4)).unwrap();
    let b = initial_belief(&dop, &m, InitPolicy::FirstObservationLifted).unwrap();
    let z0 = &dop.observations()[0];
    assert_eq!(b.mean.len(), 6);
    assert_eq!(&b.mean.as_slice()[..3], &z0.as_slice()[..3]);
    assert!(b.mean.as_slice()[3..].iter().all(|v| *v == 0.0));

    let g = initial_belief(&dop, &m, InitPolicy::GroundTruthFirstState).unwrap();
    assert_eq!(g.mean, dop.states().unwrap()[0]);
}

#[test]
fn run_lengths_and_errors() {
    let traj = sim_trajectory(ModelFamily::Pedestrian, 1);
    let m = ModelFamily::Pedestrian.model(CovMat::identity(6), CovMat::scaled_identity(4, 16.0)).unwrap();
    let init = initial_belief(&traj, &m, InitPolicy::FirstObservationLifted).unwrap();
    for task in [Task::Se, Task::Nsp] {
        let res = run_task(&traj, &m, &CanonicalKf, init.clone(), task).unwrap();
        assert_eq!(res.posteriors.len(), traj.len());
        assert_eq!(res.predictions.len(), traj.len());
        assert_eq!(res.errors.as_ref().unwrap().len(), traj.len());
    }
    let res = run_nsp(&traj.observation_only(), &m, &CanonicalKf, init.clone()).unwrap();
    assert!(res.errors.is_none());
    // the first next-state prediction is the initial belief
    let res = run_nsp(&traj, &m, &CanonicalKf, init.clone()).unwrap();
    assert_eq!(res.predictions[0].mean, init.mean);
}

#[test]
fn step_errors_carry_the_step() {
    let traj = sim_trajectory(ModelFamily::Lidar, 2);
    let m = ModelFamily::Lidar.model(CovMat::identity(4), CovMat::zeros(2)).unwrap();
    let init = BeliefState::new(Vector::zeros(4), CovMat::zeros(4), 0).unwrap();
    match run_se(&traj, &m, &CanonicalKf, init) {
        Err(FilterError::AtStep { step, source }) => {
            assert_eq!(step, 0);
            assert!(matches!(*source, FilterError::SingularInnovation { .. }));
        }
        other => panic!("expected a step error, got {other:?}"),
    }
}

fn rotation(theta: f64) -> Matrix {
    let (s, c) = theta.sin_cos();
    Matrix::from_row_slice(2, 2, &[c, -s, s, c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn update_never_increases_trace(seed in 0u64..10_000, fam in 0usize..3) {
        let mut r = rng(seed);
        let model = rand_model(&mut r, family(fam));
        let b = rand_belief(&mut r, model.state_dim());
        let z = rand_obs(&mut r, model.obs_dim());
        let h = model.observe().resolve(&z).unwrap();
        let u = kf_update(&b, &z, &h, model.obs_noise()).unwrap();
        prop_assert!(u.cov.trace() <= b.cov.trace() * (1.0 + 1e-12));
    }

    #[test]
    fn se_predictions_are_shifted_nsp_predictions(seed in 0u64..10_000, fam in 0usize..3) {
        let mut r = rng(seed);
        let model = rand_model(&mut r, family(fam));
        let traj = sim_trajectory(family(fam), seed).truncated(15);
        let init = initial_belief(&traj, &model, InitPolicy::FirstObservationLifted).unwrap();
        for rule in [canonical_kf_program(), kerule_core::ruledsl::builtin("free-se").unwrap()] {
            let se = run_se(&traj, &model, &rule, init.clone()).unwrap();
            let nsp = run_nsp(&traj, &model, &rule, init.clone()).unwrap();
            for t in 0..traj.len() - 1 {
                prop_assert_eq!(&se.predictions[t].mean, &nsp.predictions[t + 1].mean);
            }
        }
    }

    #[test]
    fn orthogonal_change_of_basis(seed in 0u64..10_000, theta in -3.1f64..3.1) {
        let mut r = rng(seed);
        let model = rand_model(&mut r, ModelFamily::Lidar);
        let traj = sim_trajectory(ModelFamily::Lidar, seed).truncated(20);
        let init = initial_belief(&traj, &model, InitPolicy::FirstObservationLifted).unwrap();
        let u = rotation(theta);
        let mut t = Matrix::zeros(4, 4);
        t.view_mut((0, 0), (2, 2)).copy_from(&u);
        t.view_mut((2, 2), (2, 2)).copy_from(&u);
        let h = model.observe().resolve(&traj.observations()[0]).unwrap();
        let rot = StateSpaceModel::new(
            &t * model.transition() * t.transpose(),
            ObservationMap::Static(&u * &h * t.transpose()),
            CovMat::repaired(&(&t * model.process_noise().matrix() * t.transpose())).unwrap(),
            CovMat::repaired(&(&u * model.obs_noise().matrix() * u.transpose())).unwrap(),
        ).unwrap();
        let obs: Vec<Vector> = traj.observations().iter().map(|z| &u * z).collect();
        let rt = Trajectory::new(None, obs, traj.meta.clone()).unwrap();
        let rinit = BeliefState::new(&t * &init.mean, CovMat::repaired(&(&t * init.cov.matrix() * t.transpose())).unwrap(), 0).unwrap();
        let a = run_se(&traj, &model, &CanonicalKf, init).unwrap();
        let b = run_se(&rt, &rot, &CanonicalKf, rinit).unwrap();
        for (pa, pb) in a.posteriors.iter().zip(&b.posteriors) {
            prop_assert!(rel_diff_v(&(&t * &pa.mean), &pb.mean) < 1e-8);
        }
    }
}
