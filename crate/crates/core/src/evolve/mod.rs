//! Island-model search over rule programs.

mod mutate;
mod prompt;

pub use mutate::{crossover, rule_based_mutate, MAX_RETRIES};
pub use prompt::{build_prompt, extract_candidates, MAX_PROMPT_BYTES};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::evaluate::{error_series, rmse};
use crate::exec::Executor;
use crate::filters::Task;
use crate::rng::{self, Rng};
use crate::ruledsl::{canonical_kf_program, validate, RuleProgram};
use crate::statespace::{StateSpaceModel, Trajectory};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("island database is empty")]
    EmptyDatabase,
    #[error("invalid search config: {0}")]
    Config(&'static str),
    #[error("no evaluation trajectories")]
    NoData,
    #[error("seed program `{0}` did not evaluate to a finite fitness")]
    SeedRejected(String),
}

/// Reasons a provider returned nothing usable. None of them stop a search.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("transport failure (status {0})")]
    Transport(u16),
    #[error("request timed out")]
    Timeout,
    #[error("no valid candidates in response")]
    NoValidCandidates,
}

pub trait MutationProvider: Sync {
    fn name(&self) -> &str;
    /// At most `count` candidates derived from `parents`.
    fn propose(
        &self,
        problem: &str,
        parents: &[RuleProgram],
        count: usize,
        rng: &mut Rng,
    ) -> Result<Vec<RuleProgram>, ProviderError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBased;

impl MutationProvider for RuleBased {
    fn name(&self) -> &str {
        "rule-based"
    }
    fn propose(&self, _: &str, parents: &[RuleProgram], count: usize, rng: &mut Rng) -> Result<Vec<RuleProgram>, ProviderError> {
        Ok(rule_based_mutate(parents, count, rng))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub id: u64,
    pub program: RuleProgram,
    /// Canonical serialization, used for dedupe and tie breaks.
    pub text: String,
    pub fitness: f64,
    pub island: usize,
    pub cycle: usize,
    pub parents: Vec<u64>,
    pub provider: String,
}

fn record_order(a: &CandidateRecord, b: &CandidateRecord) -> Ordering {
    a.fitness
        .total_cmp(&b.fitness)
        .then(a.cycle.cmp(&b.cycle))
        .then_with(|| a.text.cmp(&b.text))
}

#[derive(Debug, Clone)]
pub struct IslandState {
    pub id: usize,
    database: Vec<CandidateRecord>,
    capacity: usize,
    rng: Rng,
    next_seq: u64,
}

impl IslandState {
    pub fn new(id: usize, capacity: usize, seed: u64) -> Self {
        IslandState {
            id,
            database: Vec::new(),
            capacity,
            rng: rng::stream(rng::named_seed(seed, "island"), id as u64),
            next_seq: 0,
        }
    }

    pub fn database(&self) -> &[CandidateRecord] {
        &self.database
    }

    pub fn best(&self) -> Option<&CandidateRecord> {
        self.database.first()
    }

    fn next_id(&mut self, cycle: usize) -> u64 {
        let id = ((cycle as u64) << 40) | ((self.id as u64) << 24) | self.next_seq;
        self.next_seq += 1;
        id
    }
}

/// Inserts `rec` keeping the database sorted and within capacity. A
/// program already present is replaced only by a strictly better fitness.
/// Non-finite fitness is never stored. Returns whether `rec` was kept.
pub fn update_database(island: &mut IslandState, rec: CandidateRecord) -> bool {
    if !rec.fitness.is_finite() {
        return false;
    }
    if let Some(pos) = island.database.iter().position(|r| r.text == rec.text) {
        if rec.fitness < island.database[pos].fitness {
            island.database.remove(pos);
        } else {
            return false;
        }
    }
    let at = island
        .database
        .binary_search_by(|r| record_order(r, &rec))
        .unwrap_or_else(|e| e);
    island.database.insert(at, rec);
    island.database.truncate(island.capacity);
    at < island.capacity
}

/// Samples `k` parents with weight `exp(-rank / temperature)`, without
/// replacement while the database allows it.
pub fn sample_parents(island: &mut IslandState, k: usize, temperature: f64) -> Result<Vec<RuleProgram>, SearchError> {
    if island.database.is_empty() {
        return Err(SearchError::EmptyDatabase);
    }
    let n = island.database.len();
    let mut weights: Vec<f64> = (0..n).map(|r| libm::exp(-(r as f64) / temperature)).collect();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            weights = (0..n).map(|r| libm::exp(-(r as f64) / temperature)).collect();
        }
        let total: f64 = weights.iter().sum();
        let mut u = island.rng.random::<f64>() * total;
        let mut idx = n - 1;
        for (j, w) in weights.iter().enumerate() {
            if u < *w {
                idx = j;
                break;
            }
            u -= w;
        }
        out.push(island.database[idx].program.clone());
        weights[idx] = 0.0;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    RuleBased,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub islands: usize,
    pub iterations: usize,
    pub cycles: usize,
    pub capacity: usize,
    pub parents: usize,
    pub migration: usize,
    pub temperature: f64,
    /// Candidates requested per iteration.
    pub candidates: usize,
    pub provider: ProviderKind,
    pub max_steps: Option<usize>,
    pub max_trajectories: Option<usize>,
    pub seed: u64,
    pub llm_timeout_secs: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            islands: 4,
            iterations: 10,
            cycles: 20,
            capacity: 50,
            parents: 2,
            migration: 1,
            temperature: 1.0,
            candidates: 10,
            provider: ProviderKind::RuleBased,
            max_steps: None,
            max_trajectories: None,
            seed: 0,
            llm_timeout_secs: 120,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.islands == 0 {
            return Err(SearchError::Config("need at least one island"));
        }
        if self.parents == 0 {
            return Err(SearchError::Config("need at least one parent"));
        }
        // a single island has nothing to migrate between, so any count is moot
        if self.islands > 1 && self.migration >= self.islands {
            return Err(SearchError::Config("migration count must be below the island count"));
        }
        if self.capacity == 0 {
            return Err(SearchError::Config("database capacity must be positive"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(SearchError::Config("temperature must be positive"));
        }
        Ok(())
    }
}

/// What candidates are scored against.
pub struct SearchProblem<'a> {
    pub eval: &'a [Trajectory],
    pub model: &'a StateSpaceModel,
    pub task: Task,
    pub description: String,
}

impl<'a> SearchProblem<'a> {
    pub fn new(eval: &'a [Trajectory], model: &'a StateSpaceModel, task: Task) -> Self {
        let description = format!(
            "Minimize the position RMSE of {} on trajectories with a {}-dimensional state and \
             {}-dimensional observations. The transition F, observation map H and calibrated \
             noise Q, R are given as inputs.",
            match task {
                Task::Se => "state estimation (posterior after each observation)",
                Task::Nsp => "next-state prediction (before each observation)",
            },
            model.state_dim(),
            model.obs_dim(),
        );
        SearchProblem { eval, model, task, description }
    }
}

/// Task RMSE on `eval`, or `+inf` when any trajectory faults.
pub fn evaluate_candidate<E: Executor>(
    program: &RuleProgram,
    eval: &[Trajectory],
    model: &StateSpaceModel,
    task: Task,
    exec: &E,
) -> f64 {
    if !validate(program).ok {
        return f64::INFINITY;
    }
    match error_series("candidate", "eval", eval, model, program, task, exec) {
        Ok(s) => {
            let v = rmse(&s);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        }
        Err(_) => f64::INFINITY,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchHistory {
    /// `per_island[c][i]`: best fitness of island `i` at the end of cycle
    /// `c`, with cycle 0 the seeded state.
    pub per_island: Vec<Vec<f64>>,
    /// Best fitness seen so far, per cycle.
    pub global_best: Vec<f64>,
    /// Every stored candidate, in cycle then island order.
    pub accepted: Vec<CandidateRecord>,
    pub evaluations: usize,
}

impl SearchHistory {
    /// `cycle,island,best_fitness,global_best` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cycle,island,best_fitness,global_best\n");
        for (c, row) in self.per_island.iter().enumerate() {
            for (i, f) in row.iter().enumerate() {
                let _ = writeln!(s, "{c},{i},{f:e},{:e}", self.global_best[c]);
            }
        }
        s
    }
}

pub struct SearchState<'a> {
    pub config: SearchConfig,
    pub islands: Vec<IslandState>,
    pub history: SearchHistory,
    problem: SearchProblem<'a>,
    cycle: usize,
}

impl<'a> SearchState<'a> {
    pub fn best(&self) -> Option<&CandidateRecord> {
        self.islands
            .iter()
            .filter_map(IslandState::best)
            .min_by(|a, b| record_order(a, b))
    }

    pub fn problem(&self) -> &SearchProblem<'a> {
        &self.problem
    }
}

fn budgeted(eval: &[Trajectory], cfg: &SearchConfig) -> Vec<Trajectory> {
    let take = cfg.max_trajectories.unwrap_or(eval.len()).min(eval.len());
    eval[..take]
        .iter()
        .map(|t| match cfg.max_steps {
            Some(s) if s < t.len() => t.truncated(s.max(1)),
            _ => t.clone(),
        })
        .collect()
}

/// Seeds every island with the canonical filter plus `seeds`, all scored
/// under the calibrated model in `problem`.
pub fn init_search<'a, E: Executor>(
    seeds: &[RuleProgram],
    problem: SearchProblem<'a>,
    config: SearchConfig,
    exec: &E,
) -> Result<SearchState<'a>, SearchError> {
    config.validate()?;
    if problem.eval.is_empty() {
        return Err(SearchError::NoData);
    }
    let eval = budgeted(problem.eval, &config);
    let mut programs = alloc::vec![canonical_kf_program()];
    programs.extend(seeds.iter().cloned());
    let fits = exec.map_indexed(programs.len(), |k| {
        evaluate_candidate(&programs[k], &eval, problem.model, problem.task, &crate::exec::Sequential)
    });
    if !fits[0].is_finite() {
        return Err(SearchError::SeedRejected("kf-canonical".into()));
    }
    let mut islands: Vec<IslandState> = (0..config.islands)
        .map(|i| IslandState::new(i, config.capacity, config.seed))
        .collect();
    let mut history = SearchHistory { evaluations: programs.len(), ..Default::default() };
    for isl in islands.iter_mut() {
        for (p, f) in programs.iter().zip(&fits) {
            let rec = CandidateRecord {
                id: isl.next_id(0),
                text: p.to_string(),
                program: p.clone(),
                fitness: *f,
                island: isl.id,
                cycle: 0,
                parents: Vec::new(),
                provider: "seed".into(),
            };
            if update_database(isl, rec.clone()) {
                history.accepted.push(rec);
            }
        }
    }
    let row: Vec<f64> = islands.iter().map(|i| i.best().map_or(f64::INFINITY, |r| r.fitness)).collect();
    history.global_best.push(row.iter().copied().fold(f64::INFINITY, f64::min));
    history.per_island.push(row);
    Ok(SearchState { config, islands, history, problem, cycle: 0 })
}

struct CycleOutcome {
    island: IslandState,
    accepted: Vec<CandidateRecord>,
    evaluations: usize,
}

fn island_cycle<E: Executor>(
    mut island: IslandState,
    cycle: usize,
    cfg: &SearchConfig,
    problem: &SearchProblem<'_>,
    eval: &[Trajectory],
    provider: &dyn MutationProvider,
    exec: &E,
) -> CycleOutcome {
    let mut accepted = Vec::new();
    let mut evaluations = 0;
    for _ in 0..cfg.iterations {
        let Ok(parents) = sample_parents(&mut island, cfg.parents, cfg.temperature) else { break };
        let parent_ids: Vec<u64> = parents
            .iter()
            .filter_map(|p| island.database.iter().find(|r| r.program == *p).map(|r| r.id))
            .collect();
        let (mut cands, by) = match provider.propose(&problem.description, &parents, cfg.candidates, &mut island.rng) {
            Ok(c) if !c.is_empty() => (c, provider.name().to_string()),
            Ok(_) | Err(_) => {
                log::debug!("island {} falling back to rule-based mutation", island.id);
                (rule_based_mutate(&parents, cfg.candidates, &mut island.rng), String::from("rule-based"))
            }
        };
        cands.truncate(cfg.candidates);
        let fits = exec.map_indexed(cands.len(), |k| {
            evaluate_candidate(&cands[k], eval, problem.model, problem.task, &crate::exec::Sequential)
        });
        evaluations += cands.len();
        for (p, f) in cands.into_iter().zip(fits) {
            if !f.is_finite() {
                continue;
            }
            let rec = CandidateRecord {
                id: island.next_id(cycle),
                text: p.to_string(),
                program: p,
                fitness: f,
                island: island.id,
                cycle,
                parents: parent_ids.clone(),
                provider: by.clone(),
            };
            if update_database(&mut island, rec.clone()) {
                accepted.push(rec);
            }
        }
    }
    CycleOutcome { island, accepted, evaluations }
}

/// Resets the `m` weakest islands to the global best record.
pub fn migrate(state: &mut SearchState<'_>, m: usize) {
    let Some(best) = state.best().cloned() else { return };
    let mut order: Vec<usize> = (0..state.islands.len()).collect();
    let fit = |i: &IslandState| i.best().map_or(f64::INFINITY, |r| r.fitness);
    order.sort_by(|&a, &b| fit(&state.islands[b]).total_cmp(&fit(&state.islands[a])).then(b.cmp(&a)));
    for &i in order.iter().take(m) {
        let isl = &mut state.islands[i];
        if isl.best().map(|r| r.id) == Some(best.id) {
            continue;
        }
        isl.database.clear();
        let mut rec = best.clone();
        rec.island = isl.id;
        isl.database.push(rec);
    }
}

/// One full cycle: every island in parallel, then migration.
pub fn step_cycle<E: Executor>(state: &mut SearchState<'_>, provider: &dyn MutationProvider, exec: &E) {
    state.cycle += 1;
    let cycle = state.cycle;
    let eval = budgeted(state.problem.eval, &state.config);
    let islands = core::mem::take(&mut state.islands);
    let cfg = &state.config;
    let problem = &state.problem;
    let outcomes = exec.map_indexed(islands.len(), |i| {
        island_cycle(islands[i].clone(), cycle, cfg, problem, &eval, provider, exec)
    });
    let mut row = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        row.push(o.island.best().map_or(f64::INFINITY, |r| r.fitness));
        state.history.accepted.extend(o.accepted);
        state.history.evaluations += o.evaluations;
        state.islands.push(o.island);
    }
    let prev = *state.history.global_best.last().unwrap_or(&f64::INFINITY);
    state.history.global_best.push(row.iter().copied().fold(prev, f64::min));
    state.history.per_island.push(row);
    let m = state.config.migration;
    migrate(state, m);
}

/// Seeds, runs every cycle, and returns the best record with the history.
pub fn run_search<E: Executor>(
    config: SearchConfig,
    problem: SearchProblem<'_>,
    seeds: &[RuleProgram],
    provider: &dyn MutationProvider,
    exec: &E,
) -> Result<(CandidateRecord, SearchHistory), SearchError> {
    let cycles = config.cycles;
    let mut state = init_search(seeds, problem, config, exec)?;
    for _ in 0..cycles {
        step_cycle(&mut state, provider, exec);
    }
    let best = state.best().cloned().ok_or(SearchError::EmptyDatabase)?;
    Ok((best, state.history))
}

/// Deterministic 80/20 split of a training set into fit and validation
/// parts, for when no separate validation split exists.
pub fn internal_validation_split(train: &[Trajectory], seed: u64) -> (Vec<Trajectory>, Vec<Trajectory>) {
    let mut idx: Vec<usize> = (0..train.len()).collect();
    let mut r = rng::named(seed, "validation");
    for k in (1..idx.len()).rev() {
        idx.swap(k, r.random_range(0..=k));
    }
    let n_val = (train.len() / 5).max(usize::from(train.len() > 1));
    let (val, fit) = idx.split_at(n_val);
    let mut fit: Vec<usize> = fit.to_vec();
    let mut val: Vec<usize> = val.to_vec();
    fit.sort_unstable();
    val.sort_unstable();
    (fit.iter().map(|&i| train[i].clone()).collect(), val.iter().map(|&i| train[i].clone()).collect())
}
