//! Model-assisted algorithm configurator.
//!
//! Each iteration gives the incumbent one more instance-seed pair, proposes a
//! challenger (alternating uniform samples and the best of many random
//! samples under the performance model), and races it against the incumbent
//! on the incumbent's pairs in doubling batches. Challenger runs are capped
//! at a multiple of the incumbent's time on the same pair; a challenger that
//! survives all pairs has its capped runs redone at the full cutoff and
//! replaces the incumbent only when strictly better.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::epm::{ForestParams, PerfModel};
use crate::error::Result;
use crate::model::{Instance, Metric, Outcome, RunRecord};
use crate::rundata::{RunStore, StoredRun};
use crate::runner::{Backend, BudgetLedger, Stage};
use crate::seed;
use crate::space::{ConfigId, Configuration, ParameterSpace};

/// Evaluation of one configuration on one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub outcome: Outcome,
    /// Solver time consumed.
    pub cost: f64,
    /// Component runs performed.
    pub runs: u64,
}

/// What the configurator optimizes: configurations of [`space`](Self::space)
/// evaluated on single instances.
pub trait Evaluator: Send + Sync {
    fn space(&self) -> &ParameterSpace;
    fn is_deterministic(&self) -> bool;
    fn evaluate(&self, config: &Configuration, instance: &Instance, cutoff: f64, seed: u64) -> Result<Evaluation>;
}

/// Plain configuration: one run of one configuration.
pub struct SingleRun<'a> {
    pub backend: &'a dyn Backend,
    pub space: &'a ParameterSpace,
}

impl Evaluator for SingleRun<'_> {
    fn space(&self) -> &ParameterSpace {
        self.space
    }

    fn is_deterministic(&self) -> bool {
        self.backend.is_deterministic()
    }

    fn evaluate(&self, config: &Configuration, instance: &Instance, cutoff: f64, seed: u64) -> Result<Evaluation> {
        let outcome = self.backend.run(config, instance, cutoff, seed)?;
        Ok(Evaluation {
            outcome,
            cost: outcome.runtime,
            runs: 1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfiguratorSettings {
    /// Refit the model after this many new runs, or after a
    /// `1/refit_fraction` share of the current training rows if larger.
    pub refit_every: usize,
    pub refit_fraction: usize,
    /// Candidates scored by the model after each fit; a fifth are
    /// neighbours of the incumbent.
    pub candidates: usize,
    /// Instances the model marginalizes over when scoring candidates.
    pub marginal_instances: usize,
    /// Challenger cap as a multiple of the incumbent's time on the pair.
    pub cap_factor: f64,
    pub capping: bool,
    /// Stop after this many consecutive iterations without a new run.
    pub max_stall: usize,
    pub forest: ForestParams,
}

impl Default for ConfiguratorSettings {
    fn default() -> Self {
        ConfiguratorSettings {
            refit_every: 10,
            refit_fraction: 40,
            candidates: 250,
            marginal_instances: 10,
            cap_factor: 2.0,
            capping: true,
            max_stall: 100,
            forest: ForestParams::default(),
        }
    }
}

/// One configure call.
#[derive(Debug, Clone)]
pub struct ConfigureRequest<'a> {
    pub instances: &'a [Instance],
    pub feature_dimension: usize,
    /// Solver-time budget in seconds.
    pub budget: f64,
    pub cutoff: f64,
    pub metric: Metric,
    /// Warm start; the default configuration otherwise.
    pub initial: Option<Configuration>,
    pub seed: u64,
    /// Tags recorded with every run.
    pub phase: u32,
    pub subset_index: Option<usize>,
    /// Ledger key for the consumed time.
    pub ledger_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub consumed: f64,
    pub config_id: ConfigId,
    /// Mean penalized score on the shared pairs at replacement time.
    pub estimate: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigureResult {
    pub incumbent: Configuration,
    /// Mean penalized score of the incumbent on its pairs, if it ran at all.
    pub estimate: Option<f64>,
    pub consumed: f64,
    pub runs: usize,
    pub iterations: usize,
    pub trajectory: Vec<TrajectoryPoint>,
}

#[derive(Clone, Copy)]
struct Pair {
    instance: usize,
    seed: u64,
}

struct Engine<'a> {
    evaluator: &'a dyn Evaluator,
    store: &'a RunStore,
    ledger: &'a BudgetLedger,
    request: &'a ConfigureRequest<'a>,
    settings: &'a ConfiguratorSettings,
    penalty: u32,
    pairs: Vec<Pair>,
    max_pairs: Option<usize>,
    order: Vec<usize>,
    cache: HashMap<(ConfigId, usize), Outcome>,
    configs: HashMap<ConfigId, Arc<Configuration>>,
    consumed: f64,
    runs: usize,
    runs_at_fit: usize,
    /// Training rows of the current model.
    rows_at_fit: usize,
    model: Option<PerfModel>,
    fits: u64,
    pool: Vec<(f64, Configuration)>,
    pool_fit: u64,
}

enum RaceEnd {
    Accepted(f64),
    Rejected,
    OutOfBudget,
}

impl<'a> Engine<'a> {
    fn exhausted(&self) -> bool {
        self.consumed >= self.request.budget
    }

    fn pair(&mut self, j: usize) -> Pair {
        while self.pairs.len() <= j {
            let n = self.order.len();
            let idx = self.pairs.len();
            let round = idx / n;
            if idx.is_multiple_of(n) && round > 0 {
                self.order.shuffle(&mut seed::rng(seed::derive(self.request.seed, &[1, round as u64])));
            }
            let instance = self.order[idx % n];
            self.pairs.push(Pair {
                instance,
                seed: seed::derive(self.request.seed, &[2, idx as u64]),
            });
        }
        self.pairs[j]
    }

    fn score(&self, o: &Outcome) -> f64 {
        o.penalized(self.request.cutoff, self.penalty)
    }

    /// Outcome of `config` on pair `j` with at least `cap` seconds of cutoff.
    /// Returns `None` when the budget ran out before the run.
    fn outcome(&mut self, config: &Configuration, j: usize, cap: f64) -> Result<Option<Outcome>> {
        let cutoff = self.request.cutoff;
        let cap = cap.min(cutoff);
        let key = (config.id(), j);
        if let Some(o) = self.cache.get(&key) {
            if o.is_solved() || !o.is_capped(cutoff) || o.runtime >= cap {
                return Ok(Some(*o));
            }
        }
        let pair = self.pair(j);
        let instance = &self.request.instances[pair.instance];
        if self.evaluator.is_deterministic() {
            let reuse = self
                .store
                .runs_of(config.id(), &instance.id)
                .into_iter()
                .map(|r| r.outcome())
                .find(|o| o.is_solved() || !o.is_capped(cutoff));
            if let Some(o) = reuse {
                self.cache.insert(key, o);
                return Ok(Some(o));
            }
        }
        if self.exhausted() {
            return Ok(None);
        }
        let eval = self.evaluator.evaluate(config, instance, cap, pair.seed)?;
        self.consumed += eval.cost;
        self.runs += 1;
        self.ledger
            .charge(Stage::Configuration, &self.request.ledger_key, eval.cost, eval.runs);
        let shared = self
            .configs
            .entry(config.id())
            .or_insert_with(|| Arc::new(config.clone()))
            .clone();
        self.store.record_run(StoredRun {
            record: RunRecord::new(config.id(), &instance.id, pair.seed, eval.outcome, "configurator"),
            config: shared,
            phase: self.request.phase,
            subset_index: self.request.subset_index,
        })?;
        self.cache.insert(key, eval.outcome);
        Ok(Some(eval.outcome))
    }

    fn mean_on(&self, config: ConfigId, pairs: &[usize]) -> f64 {
        let sum: f64 = pairs.iter().map(|j| self.score(&self.cache[&(config, *j)])).sum();
        sum / pairs.len() as f64
    }

    fn race(&mut self, incumbent: &Configuration, inc_pairs: &[usize], challenger: &Configuration, race_seed: u64) -> Result<RaceEnd> {
        let mut order = inc_pairs.to_vec();
        order.shuffle(&mut seed::rng(race_seed));
        let inc = incumbent.id();
        let ch = challenger.id();
        let mut done = 0;
        let mut batch = 1;
        while done < order.len() {
            let end = (done + batch).min(order.len());
            for &j in &order[done..end] {
                let inc_outcome = self.cache[&(inc, j)];
                let cap = if self.settings.capping && inc_outcome.is_solved() {
                    (self.settings.cap_factor * inc_outcome.runtime).max(f64::MIN_POSITIVE)
                } else {
                    self.request.cutoff
                };
                if self.outcome(challenger, j, cap)?.is_none() {
                    return Ok(RaceEnd::OutOfBudget);
                }
            }
            done = end;
            batch *= 2;
            if self.mean_on(ch, &order[..done]) > self.mean_on(inc, &order[..done]) {
                return Ok(RaceEnd::Rejected);
            }
        }
        // Capped scores are lower bounds; settle them before deciding.
        for &j in &order {
            if self.cache[&(ch, j)].is_capped(self.request.cutoff)
                && self.outcome(challenger, j, self.request.cutoff)?.is_none()
            {
                return Ok(RaceEnd::OutOfBudget);
            }
        }
        let ch_mean = self.mean_on(ch, &order);
        if ch_mean < self.mean_on(inc, &order) {
            Ok(RaceEnd::Accepted(ch_mean))
        } else {
            Ok(RaceEnd::Rejected)
        }
    }

    fn refit(&mut self) {
        let every = self.settings.refit_every.max(self.rows_at_fit / self.settings.refit_fraction.max(1));
        if self.model.is_some() && self.runs < self.runs_at_fit + every {
            return;
        }
        let ids: HashMap<&str, &[f64]> = self
            .request
            .instances
            .iter()
            .map(|i| (i.id.as_str(), i.features.as_slice()))
            .collect();
        let runs = self.store.snapshot_filtered(|id| ids.contains_key(id));
        let features = ids.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect();
        self.fits += 1;
        let rows = runs.len();
        match PerfModel::fit(
            &runs,
            self.evaluator.space(),
            &features,
            self.request.feature_dimension,
            self.request.cutoff,
            self.penalty,
            self.settings.forest,
            seed::derive(self.request.seed, &[3, self.fits]),
        ) {
            Ok(m) => {
                self.model = Some(m);
                self.rows_at_fit = rows;
            }
            Err(e) => log::debug!("model fit skipped: {e}"),
        }
        self.runs_at_fit = self.runs;
    }

    fn propose(
        &mut self,
        iteration: usize,
        incumbent: &Configuration,
        rng: &mut seed::Rng,
        skip: &dyn Fn(&Configuration) -> bool,
    ) -> Configuration {
        let space = self.evaluator.space();
        if iteration % 2 == 1 {
            self.refit();
            if self.model.is_some() && self.pool_fit != self.fits {
                self.rank_pool(incumbent, rng);
            }
            while let Some((_, c)) = self.pool.pop() {
                if !skip(&c) {
                    return c;
                }
            }
        }
        let mut c = space.sample_with(rng);
        for _ in 0..20 {
            if !skip(&c) {
                break;
            }
            c = space.sample_with(rng);
        }
        c
    }

    /// Scores random configurations and neighbours of the incumbent with the
    /// current model; proposals are then taken best first until the next fit.
    fn rank_pool(&mut self, incumbent: &Configuration, rng: &mut seed::Rng) {
        let Some(model) = &self.model else { return };
        let space = self.evaluator.space();
        let n = self.request.instances.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        idx.truncate(self.settings.marginal_instances.max(1));
        let feats: Vec<&[f64]> = idx.iter().map(|&i| self.request.instances[i].features.as_slice()).collect();
        let total = self.settings.candidates;
        let local = total / 5;
        let mut seen = HashSet::new();
        let mut pool = Vec::with_capacity(total);
        for i in 0..total {
            let c = if i < local {
                space.neighbour(incumbent, rng)
            } else {
                space.sample_with(rng)
            };
            if !seen.insert(c.id()) {
                continue;
            }
            if let Ok(p) = model.predict_marginal(space, &c, &feats) {
                pool.push((p, c));
            }
        }
        // Worst first, so `pop` yields the best.
        pool.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| b.1.id().cmp(&a.1.id())));
        self.pool = pool;
        self.pool_fit = self.fits;
    }
}

/// Searches the evaluator's space for the configuration with the best mean
/// penalized score on `request.instances` within the solver-time budget.
pub fn configure(
    evaluator: &dyn Evaluator,
    store: &RunStore,
    ledger: &BudgetLedger,
    request: &ConfigureRequest,
    settings: &ConfiguratorSettings,
) -> Result<ConfigureResult> {
    let space = evaluator.space();
    let mut incumbent = match &request.initial {
        Some(c) => {
            space.validate(c)?;
            c.clone()
        }
        None => space.default_config(),
    };
    let untouched = |incumbent: Configuration| ConfigureResult {
        incumbent,
        estimate: None,
        consumed: 0.0,
        runs: 0,
        iterations: 0,
        trajectory: Vec::new(),
    };
    if request.instances.is_empty() {
        return Err(crate::Error::NoInstances);
    }
    if request.budget < request.cutoff {
        log::warn!(
            "budget {:.1}s is below one cutoff ({:.1}s); keeping the initial configuration",
            request.budget,
            request.cutoff
        );
        return Ok(untouched(incumbent));
    }
    if space.enumerate(2).is_some_and(|all| all.len() == 1) {
        return Ok(untouched(incumbent));
    }

    let n = request.instances.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(request.seed, &[1, 0])));
    let mut engine = Engine {
        evaluator,
        store,
        ledger,
        request,
        settings,
        penalty: request.metric.penalty(),
        pairs: Vec::new(),
        max_pairs: evaluator.is_deterministic().then_some(n),
        order,
        cache: HashMap::new(),
        configs: HashMap::new(),
        consumed: 0.0,
        runs: 0,
        runs_at_fit: 0,
        rows_at_fit: 0,
        model: None,
        fits: 0,
        pool: Vec::new(),
        pool_fit: 0,
    };
    let mut rng = seed::rng(seed::derive(request.seed, &[4]));
    let mut inc_pairs: Vec<usize> = Vec::new();
    let mut trajectory = Vec::new();
    // Challengers that lost against the current incumbent with this many pairs.
    let mut rejected: HashMap<ConfigId, usize> = HashMap::new();
    let mut stall = 0;
    let mut iterations = 0;

    while !engine.exhausted() && stall < settings.max_stall {
        iterations += 1;
        let before = engine.runs;
        let next = inc_pairs.len();
        if engine.max_pairs.is_none_or(|m| next < m) {
            match engine.outcome(&incumbent, next, request.cutoff)? {
                Some(_) => inc_pairs.push(next),
                None => break,
            }
        }
        let inc_id = incumbent.id();
        let pairs_now = inc_pairs.len();
        let challenger = {
            let rejected = &rejected;
            engine.propose(iterations, &incumbent, &mut rng, &|c: &Configuration| {
                c.id() == inc_id || rejected.get(&c.id()) == Some(&pairs_now)
            })
        };
        if challenger.id() != inc_id && rejected.get(&challenger.id()) != Some(&pairs_now) {
            let race_seed = seed::derive(request.seed, &[5, iterations as u64]);
            match engine.race(&incumbent, &inc_pairs, &challenger, race_seed)? {
                RaceEnd::Accepted(estimate) => {
                    log::debug!("new incumbent {} ({estimate:.3}) after {:.1}s", challenger, engine.consumed);
                    incumbent = challenger;
                    rejected.clear();
                    trajectory.push(TrajectoryPoint {
                        consumed: engine.consumed,
                        config_id: incumbent.id(),
                        estimate,
                        pairs: inc_pairs.len(),
                    });
                }
                RaceEnd::Rejected => {
                    rejected.insert(challenger.id(), pairs_now);
                }
                RaceEnd::OutOfBudget => break,
            }
        }
        stall = if engine.runs == before { stall + 1 } else { 0 };
    }

    let estimate = (!inc_pairs.is_empty()).then(|| engine.mean_on(incumbent.id(), &inc_pairs));
    Ok(ConfigureResult {
        incumbent,
        estimate,
        consumed: engine.consumed,
        runs: engine.runs,
        iterations,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RunStatus;
    use crate::space::parse_space;
    use crate::synthetic::{generate, SynthParams, SyntheticBackend};

    fn request<'a>(instances: &'a [Instance], budget: f64, seed: u64) -> ConfigureRequest<'a> {
        ConfigureRequest {
            instances,
            feature_dimension: instances[0].features.len(),
            budget,
            cutoff: 10.0,
            metric: Metric::Par10,
            initial: None,
            seed,
            phase: 1,
            subset_index: Some(0),
            ledger_key: "test".into(),
        }
    }

    #[test]
    fn tiny_budget_keeps_initial() {
        let sc = generate(&SynthParams::default()).unwrap();
        let backend = SyntheticBackend::new(Arc::new(sc.space.clone()), Arc::new(sc.model.clone()));
        let ev = SingleRun {
            backend: &backend,
            space: &sc.space,
        };
        let init = sc.space.parse_config("heuristic=h2 alpha=0.3").unwrap();
        let mut req = request(&sc.train, 5.0, 0);
        req.initial = Some(init.clone());
        let store = RunStore::new();
        let r = configure(&ev, &store, &BudgetLedger::new(), &req, &ConfiguratorSettings::default()).unwrap();
        assert_eq!(r.incumbent, init);
        assert!(store.is_empty());
    }

    #[test]
    fn single_configuration_space() {
        let space = parse_space("h categorical {only} [only]").unwrap();
        let sc = generate(&SynthParams::default()).unwrap();
        let backend = SyntheticBackend::new(Arc::new(sc.space.clone()), Arc::new(sc.model.clone()));
        let ev = SingleRun {
            backend: &backend,
            space: &space,
        };
        let r = configure(&ev, &RunStore::new(), &BudgetLedger::new(), &request(&sc.train, 1e4, 0), &ConfiguratorSettings::default())
            .unwrap();
        assert_eq!(r.incumbent, space.default_config());
    }

    #[test]
    fn finds_dominant_configuration() {
        // One family: one heuristic dominates on every instance.
        let mut hits = 0;
        for s in 0..10 {
            let sc = generate(&SynthParams {
                families: 1,
                configs: 8,
                instances: 20,
                numeric: false,
                seed: 100 + s,
                ..SynthParams::default()
            })
            .unwrap();
            let best = sc.optimal_heuristic(0).unwrap().to_string();
            let backend = SyntheticBackend::new(Arc::new(sc.space.clone()), Arc::new(sc.model.clone()));
            let ev = SingleRun {
                backend: &backend,
                space: &sc.space,
            };
            let ledger = BudgetLedger::new();
            let store = RunStore::new();
            let budget = 60.0 * 10.0;
            let r = configure(&ev, &store, &ledger, &request(&sc.train, budget, s), &ConfiguratorSettings::default()).unwrap();
            assert!(r.consumed <= budget + 10.0);
            assert_eq!(store.len(), r.runs);
            assert!((ledger.snapshot().configuration_time_used - r.consumed).abs() < 1e-9);
            if r.incumbent.get("heuristic").unwrap().to_string() == best {
                hits += 1;
            }
        }
        assert!(hits >= 9, "dominant configuration found in {hits}/10 seeds");
    }

    #[test]
    fn trajectory_strictly_improves_on_shared_pairs() {
        let sc = generate(&SynthParams {
            families: 2,
            configs: 6,
            instances: 30,
            noise: 0.2,
            seed: 4,
            ..SynthParams::default()
        })
        .unwrap();
        let backend = SyntheticBackend::new(Arc::new(sc.space.clone()), Arc::new(sc.model.clone()));
        let ev = SingleRun {
            backend: &backend,
            space: &sc.space,
        };
        let store = RunStore::new();
        let r = configure(&ev, &store, &BudgetLedger::new(), &request(&sc.train, 400.0, 1), &ConfiguratorSettings::default())
            .unwrap();
        assert!(r.consumed <= 410.0);
        for run in store.snapshot() {
            assert!(run.record.is_well_formed());
            assert!(run.record.runtime <= run.record.cutoff);
            if run.record.status == RunStatus::Timeout {
                assert_eq!(run.record.runtime, run.record.cutoff);
            }
        }
        assert!(r.estimate.is_some());
    }

    #[test]
    fn deterministic_given_seed() {
        let sc = generate(&SynthParams {
            seed: 9,
            ..SynthParams::default()
        })
        .unwrap();
        let backend = SyntheticBackend::new(Arc::new(sc.space.clone()), Arc::new(sc.model.clone()));
        let ev = SingleRun {
            backend: &backend,
            space: &sc.space,
        };
        let run = || {
            configure(&ev, &RunStore::new(), &BudgetLedger::new(), &request(&sc.train, 300.0, 3), &ConfiguratorSettings::default())
                .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.incumbent, b.incumbent);
        assert_eq!(a.consumed, b.consumed);
        assert_eq!(a.trajectory, b.trajectory);
    }
}
