//! GLOBAL and PARHYDRA_b. Both configure blocks of components jointly over a
//! product space; GLOBAL is the single-block case `b = k`.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;

use super::{describe, CallLog, Construction, ConstructionLog, Constructor, RepetitionLog, StageLog, ValidationLog};
use crate::configurator::{configure, ConfigureRequest, Evaluation, Evaluator};
use crate::construct::{validate_and_select, BudgetPlan, Method};
use crate::error::Result;
use crate::model::{Instance, Outcome, Portfolio};
use crate::runner::{component_seed, Backend, BudgetLedger};
use crate::seed;
use crate::space::{Configuration, ParameterSpace};

/// Scores a block of new components, given as one product-space
/// configuration, by the runtime of the portfolio `fixed ++ block`.
///
/// Results of the fixed components are computed once per instance and seed
/// at the full cutoff and charged only the first time.
pub struct PortfolioEvaluator<'a> {
    backend: &'a dyn Backend,
    base: ParameterSpace,
    product: ParameterSpace,
    width: usize,
    fixed: Vec<Configuration>,
    cutoff: f64,
    cache: Mutex<HashMap<(String, u64), Option<f64>>>,
}

impl<'a> PortfolioEvaluator<'a> {
    pub fn new(
        backend: &'a dyn Backend,
        space: &ParameterSpace,
        width: usize,
        fixed: Vec<Configuration>,
        cutoff: f64,
    ) -> Result<Self> {
        Ok(PortfolioEvaluator {
            backend,
            base: space.clone(),
            product: space.compose_product_space(width)?,
            width,
            fixed,
            cutoff,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// The new components encoded by a product-space configuration.
    pub fn split(&self, config: &Configuration) -> Result<Vec<Configuration>> {
        self.base.split_product(config, self.width)
    }

    /// Fastest solve among the fixed components, and the cost if it had to
    /// be computed now.
    fn fixed_best(&self, instance: &Instance, seed: u64) -> Result<(Option<f64>, f64, u64)> {
        if self.fixed.is_empty() {
            return Ok((None, 0.0, 0));
        }
        let key_seed = if self.backend.is_deterministic() { 0 } else { seed };
        let key = (instance.id.clone(), key_seed);
        if let Some(best) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok((*best, 0.0, 0));
        }
        let mut best: Option<f64> = None;
        let mut cost = 0.0;
        for (i, c) in self.fixed.iter().enumerate() {
            let o = self.backend.run(c, instance, self.cutoff, component_seed(seed, i))?;
            cost += o.runtime;
            if o.is_solved() && best.is_none_or(|b| o.runtime < b) {
                best = Some(o.runtime);
            }
        }
        self.cache.lock().expect("cache poisoned").insert(key, best);
        Ok((best, cost, self.fixed.len() as u64))
    }
}

impl Evaluator for PortfolioEvaluator<'_> {
    fn space(&self) -> &ParameterSpace {
        &self.product
    }

    fn is_deterministic(&self) -> bool {
        self.backend.is_deterministic()
    }

    fn evaluate(&self, config: &Configuration, instance: &Instance, cutoff: f64, seed: u64) -> Result<Evaluation> {
        let block = self.split(config)?;
        let (fixed_best, fixed_cost, fixed_runs) = self.fixed_best(instance, seed)?;
        // The block runs until the first solve, fixed components included.
        let stop = fixed_best.map_or(cutoff, |b| b.min(cutoff));
        let race = self
            .backend
            .race(&block, instance, stop, seed::derive(seed, &[self.fixed.len() as u64]))?;
        let outcome = match fixed_best {
            Some(b) if b <= cutoff && !(race.outcome.is_solved() && race.outcome.runtime < b) => Outcome::solved(b, cutoff),
            _ if race.outcome.is_solved() => Outcome::solved(race.outcome.runtime, cutoff),
            _ => Outcome::timeout(cutoff),
        };
        Ok(Evaluation {
            outcome,
            cost: race.cost + fixed_cost,
            runs: block.len() as u64 + fixed_runs,
        })
    }
}

impl Constructor<'_> {
    /// Builds the portfolio block by block: `k / b` iterations, each
    /// configuring `b` new components jointly on top of the components
    /// chosen so far. GLOBAL is a single block of `k`.
    pub fn construct_greedy(&self, plan: &BudgetPlan, seed: u64) -> Result<Construction> {
        let sc = self.scenario;
        let k = sc.k;
        let block = if plan.method == Method::Global { k } else { plan.block };
        let iterations = k / block;
        let ledger = BudgetLedger::new();
        let mut fixed: Vec<Configuration> = Vec::new();
        let mut logs: Vec<RepetitionLog> = (0..plan.repetitions)
            .map(|rep| RepetitionLog {
                index: rep,
                seed: seed::derive(seed, &[rep as u64]),
                stages: Vec::new(),
                final_grouping: None,
                components: Vec::new(),
                error: None,
            })
            .collect();
        let mut validations = Vec::new();
        for it in 1..=iterations {
            let budget = plan.stage_cpu.get(it - 1).copied().unwrap_or(plan.stage_cpu[0]);
            let results: Vec<Result<(Vec<Configuration>, CallLog)>> = (0..plan.repetitions)
                .into_par_iter()
                .map(|rep| {
                    let evaluator = PortfolioEvaluator::new(self.backend, &sc.space, block, fixed.clone(), sc.cutoff)?;
                    let store = self.store(&format!("rundata-iter{it}-rep{rep}.jsonl"))?;
                    let request = ConfigureRequest {
                        instances: &sc.train_instances,
                        feature_dimension: sc.feature_dimension,
                        budget,
                        cutoff: sc.cutoff,
                        metric: sc.metric,
                        initial: None,
                        seed: seed::derive(seed, &[rep as u64, it as u64]),
                        phase: it as u32,
                        subset_index: None,
                        ledger_key: format!("rep{rep}/iteration{it}"),
                    };
                    let r = configure(&evaluator, &store, &ledger, &request, &self.settings)?;
                    let log = CallLog::new(None, sc.train_instances.len(), &r);
                    Ok((evaluator.split(&r.incumbent)?, log))
                })
                .collect();
            let mut candidates = Vec::new();
            let mut origin = Vec::new();
            let mut first_error = None;
            for (rep, r) in results.into_iter().enumerate() {
                match r {
                    Ok((new, call)) => {
                        logs[rep].stages.push(StageLog {
                            stage: it,
                            budget_cpu: budget,
                            calls: vec![call],
                            transfer: None,
                            grouping_sizes: Vec::new(),
                        });
                        logs[rep].components = describe(&new);
                        let mut cand = fixed.clone();
                        cand.extend(new);
                        candidates.push(cand);
                        origin.push(rep);
                    }
                    Err(e) => {
                        log::warn!("iteration {it}, repetition {rep} failed and is excluded: {e}");
                        logs[rep].error = Some(e.to_string());
                        first_error.get_or_insert(e);
                    }
                }
            }
            if candidates.is_empty() {
                return Err(first_error.expect("no candidates implies an error"));
            }
            let report = validate_and_select(
                self.backend,
                &candidates,
                &sc.train_instances,
                plan.validation_cpu.get(it - 1).copied().unwrap_or(plan.validation_cpu[0]),
                sc.cutoff,
                sc.penalty(),
                seed::derive(seed, &[u64::MAX, it as u64]),
                &ledger,
                &format!("validation{it}"),
            )?;
            fixed = candidates.swap_remove(report.selected);
            validations.push(ValidationLog {
                stage: it,
                candidates: origin,
                report,
            });
        }
        let snapshot = ledger.snapshot();
        Ok(Construction {
            portfolio: Portfolio {
                components: fixed,
                method_label: plan.method.to_string(),
                seeds: vec![seed],
                consumed_cpu_time: snapshot.total(),
            },
            log: ConstructionLog {
                method: plan.method.to_string(),
                scenario: sc.name.clone(),
                k,
                seed,
                plan: plan.clone(),
                repetitions: logs,
                validations,
                selected: None,
                ledger: snapshot,
            },
        })
    }
}
