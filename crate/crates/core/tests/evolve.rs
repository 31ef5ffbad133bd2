mod common;

use common::*;
use kerule_core::evolve::*;
use kerule_core::exec::Sequential;
use kerule_core::filters::Task;
use kerule_core::linalg::Matrix;
use kerule_core::rng::{self, Rng};
use kerule_core::ruledsl::{canonical_kf_program, serialize, validate, RuleProgram};
use kerule_core::simulators::{gen_lidar, LidarSimSpec};
use kerule_core::statespace::*;
use proptest::prelude::*;

#[test]
fn ten_thousand_mutations_validate() {
    let canon = canonical_kf_program();
    let mut r = rng::stream(1, 0);
    let mut distinct = std::collections::BTreeSet::new();
    for _ in 0..1000 {
        let out = rule_based_mutate(std::slice::from_ref(&canon), 10, &mut r);
        assert_eq!(out.len(), 10);
        for p in out {
            let rep = validate(&p);
            assert!(rep.ok, "{:?}\n{}", rep.violations, serialize(&p));
            distinct.insert(serialize(&p));
        }
    }
    assert!(distinct.len() > 1000, "only {} distinct mutants", distinct.len());
}

#[test]
fn mutants_of_canonical_stay_close() {
    let canon = canonical_kf_program();
    let mut r = rng::stream(2, 0);
    let out = rule_based_mutate(std::slice::from_ref(&canon), 5, &mut r);
    assert_eq!(out.len(), 5);
    for p in &out {
        assert!(validate(p).ok);
        // each edit adds at most one binding
        assert!(p.bindings.len() <= canon.bindings.len() + 3);
    }
}

#[test]
fn crossover_of_identical_parents_is_identity() {
    let canon = canonical_kf_program();
    let mut r = rng::stream(3, 0);
    for _ in 0..50 {
        let mut p = canon.clone();
        crossover(&mut p, &canon, &mut r);
        assert_eq!(p, canon);
    }
}

fn record(text: &str, fitness: f64, cycle: usize) -> CandidateRecord {
    CandidateRecord {
        id: 0,
        program: canonical_kf_program(),
        text: text.into(),
        fitness,
        island: 0,
        cycle,
        parents: vec![],
        provider: "test".into(),
    }
}

proptest! {
    #[test]
    fn database_invariants(ops in prop::collection::vec((0u8..12, prop_oneof![Just(f64::NAN), Just(f64::INFINITY), 0.0f64..10.0], 0usize..4), 1..80)) {
        let mut isl = IslandState::new(0, 5, 0);
        for (name, fit, cycle) in ops {
            let kept = update_database(&mut isl, record(&format!("p{name}"), fit, cycle));
            if !fit.is_finite() {
                prop_assert!(!kept);
            }
            let db = isl.database();
            prop_assert!(db.len() <= 5);
            prop_assert!(db.iter().all(|r| r.fitness.is_finite()));
            prop_assert!(db.windows(2).all(|w| (w[0].fitness, w[0].cycle) <= (w[1].fitness, w[1].cycle)));
            let mut texts: Vec<_> = db.iter().map(|r| &r.text).collect();
            texts.sort();
            texts.dedup();
            prop_assert_eq!(texts.len(), db.len());
        }
    }
}

#[test]
fn duplicates_only_replace_when_better() {
    let mut isl = IslandState::new(0, 3, 0);
    assert!(update_database(&mut isl, record("a", 2.0, 0)));
    assert!(!update_database(&mut isl, record("a", 2.0, 1)));
    assert!(!update_database(&mut isl, record("a", 3.0, 1)));
    assert!(update_database(&mut isl, record("a", 1.0, 1)));
    assert_eq!(isl.database().len(), 1);
    assert_eq!(isl.database()[0].fitness, 1.0);
    // ties go to the earlier cycle, then text
    update_database(&mut isl, record("c", 1.0, 0));
    update_database(&mut isl, record("b", 1.0, 1));
    let order: Vec<_> = isl.database().iter().map(|r| r.text.as_str()).collect();
    assert_eq!(order, ["c", "a", "b"]);
    assert!(!update_database(&mut isl, record("d", 5.0, 0)));
}

#[test]
fn parent_sampling() {
    let mut isl = IslandState::new(0, 10, 7);
    assert!(matches!(sample_parents(&mut isl, 2, 1.0), Err(SearchError::EmptyDatabase)));
    update_database(&mut isl, record("only", 1.0, 0));
    assert_eq!(sample_parents(&mut isl, 3, 1.0).unwrap().len(), 3);
}

fn lidar_setup(q_scale: f64) -> (Vec<Trajectory>, StateSpaceModel) {
    let data = gen_lidar(&LidarSimSpec::default().with_splits(12, 0, 0), 3).unwrap().train;
    let data: Vec<_> = data.iter().map(|t| t.truncated(40)).collect();
    let model = ModelFamily::Lidar
        .model(CovMat::scaled_identity(4, q_scale), CovMat::scaled_identity(2, 1.0))
        .unwrap();
    (data, model)
}

fn small_config(seed: u64) -> SearchConfig {
    SearchConfig { islands: 2, cycles: 2, iterations: 2, candidates: 4, seed, ..SearchConfig::default() }
}

#[test]
fn seeded_search_is_deterministic() {
    let (data, model) = lidar_setup(1.0);
    let run = || {
        let problem = SearchProblem::new(&data, &model, Task::Se);
        run_search(small_config(5), problem, &[], &RuleBased, &Sequential).unwrap()
    };
    let (b1, h1) = run();
    let (b2, h2) = run();
    assert_eq!(b1, b2);
    assert_eq!(h1, h2);
    assert!(h1.global_best.windows(2).all(|w| w[1] <= w[0]));
    assert!(h1.accepted.iter().all(|r| r.fitness.is_finite()));
    assert_eq!(h1.per_island.len(), 3);
}

struct Copies;

impl MutationProvider for Copies {
    fn name(&self) -> &str {
        "copies"
    }
    fn propose(&self, _: &str, _: &[RuleProgram], count: usize, _: &mut Rng) -> Result<Vec<RuleProgram>, ProviderError> {
        Ok(vec![canonical_kf_program(); count])
    }
}

#[test]
fn copy_provider_leaves_canonical_best() {
    let (data, model) = lidar_setup(1.0);
    let cfg = SearchConfig { islands: 1, cycles: 1, ..small_config(0) };
    let (best, hist) = run_search(cfg, SearchProblem::new(&data, &model, Task::Se), &[], &Copies, &Sequential).unwrap();
    assert_eq!(best.text, serialize(&canonical_kf_program()));
    assert_eq!(hist.global_best[0], hist.global_best[1]);
    assert_eq!(hist.per_island[0], hist.per_island[1]);
}

#[test]
fn evaluation_rejects_faulting_programs() {
    let (data, model) = lidar_setup(1.0);
    let mut bad = canonical_kf_program();
    bad.outputs.x_post = kerule_core::ruledsl::build::c(f64::NAN);
    let f = evaluate_candidate(&bad, &data, &model, Task::Se, &Sequential);
    assert_eq!(f, f64::INFINITY);
}

#[test]
fn matched_system_search_cannot_beat_kf_meaningfully() {
    // constant velocity in 2-d with the true noise
    let f = ModelFamily::Lidar.transition();
    let h = Matrix::from_row_slice(2, 4, &[1., 0., 0., 0., 0., 1., 0., 0.]);
    let model = StateSpaceModel::new(
        f,
        ObservationMap::Static(h),
        CovMat::diagonal(&[0.05, 0.05, 0.1, 0.1]).unwrap(),
        CovMat::scaled_identity(2, 4.0),
    )
    .unwrap();
    let data = simulate_linear(&model, 20.0, 40, 50, 9);
    let canonical = evaluate_candidate(&canonical_kf_program(), &data, &model, Task::Se, &Sequential);
    let cfg = SearchConfig { cycles: 3, ..small_config(1) };
    let (best, _) = run_search(cfg, SearchProblem::new(&data, &model, Task::Se), &[], &RuleBased, &Sequential).unwrap();
    assert!(best.fitness <= canonical);
    assert!(best.fitness >= 0.99 * canonical, "best {} canonical {canonical}", best.fitness);
}

#[test]
fn mismatched_model_search_improves() {
    let (data, model) = lidar_setup(100.0);
    let canonical = evaluate_candidate(&canonical_kf_program(), &data, &model, Task::Se, &Sequential);
    let (best, _) = run_search(small_config(2), SearchProblem::new(&data, &model, Task::Se), &[], &RuleBased, &Sequential).unwrap();
    assert!(best.fitness < canonical, "best {} canonical {canonical}", best.fitness);
}

#[test]
fn validation_split_is_eighty_twenty() {
    let (data, _) = lidar_setup(1.0);
    let (fit, val) = internal_validation_split(&data, 4);
    assert_eq!(fit.len() + val.len(), data.len());
    assert_eq!(val.len(), data.len() / 5);
    assert_eq!((fit.clone(), val.clone()), internal_validation_split(&data, 4));
    let ids = |v: &[Trajectory]| v.iter().map(|t| t.meta.id).collect::<Vec<_>>();
    assert!(ids(&fit).windows(2).all(|w| w[0] < w[1]));
    assert!(ids(&fit).iter().all(|i| !ids(&val).contains(i)));
}

#[test]
fn config_validation() {
    assert!(SearchConfig::default().validate().is_ok());
    assert!(SearchConfig { islands: 0, ..SearchConfig::default() }.validate().is_err());
    assert!(SearchConfig { temperature: 0.0, ..SearchConfig::default() }.validate().is_err());
}

#[test]
fn prompt_and_extraction() {
    let canon = canonical_kf_program();
    let p = build_prompt("track a target", &[canon.clone()]);
    assert!(p.len() <= MAX_PROMPT_BYTES);
    assert!(p.contains(&serialize(&canon)));
    let reply = format!("here:\n```lisp\n{}\n```\nand\n```\n(rule broken\n```\n", serialize(&canon));
    let got = extract_candidates(&reply);
    assert_eq!(got.len(), 2);
    assert_eq!(got[0].as_ref().unwrap(), &canon);
    assert!(got[1].is_err());
}
