use rayon::prelude::*;

use super::{describe, CallLog, Construction, ConstructionLog, Constructor, RepetitionLog, StageLog, ValidationLog};
use crate::configurator::{configure, ConfigureRequest, SingleRun};
use crate::construct::{validate_and_select, BudgetPlan};
use crate::error::{Error, Result};
use crate::model::{split_random_even, subset_bounds, InstanceGrouping, Portfolio};
use crate::runner::BudgetLedger;
use crate::seed;
use crate::space::Configuration;
use crate::transfer::{transfer_instances, TransferContext};

impl Constructor<'_> {
    /// Phased configuration with instance transfer. A plan with a single
    /// phase is PCRS: one configuration stage on a random grouping.
    pub fn construct_pcit(&self, plan: &BudgetPlan, seed: u64) -> Result<Construction> {
        let ledger = BudgetLedger::new();
        let reps: Vec<(RepetitionLog, Result<Vec<Configuration>>)> = (0..plan.repetitions)
            .into_par_iter()
            .map(|rep| {
                let rep_seed = seed::derive(seed, &[rep as u64]);
                let mut log = RepetitionLog {
                    index: rep,
                    seed: rep_seed,
                    stages: Vec::new(),
                    final_grouping: None,
                    components: Vec::new(),
                    error: None,
                };
                let result = self.pcit_repetition(plan, rep, rep_seed, &ledger, &mut log);
                match &result {
                    Ok(c) => log.components = describe(c),
                    Err(e) => {
                        log::warn!("repetition {rep} failed and is excluded: {e}");
                        log.error = Some(e.to_string());
                    }
                }
                (log, result)
            })
            .collect();
        self.finish(plan, seed, ledger, reps)
    }

    fn pcit_repetition(
        &self,
        plan: &BudgetPlan,
        rep: usize,
        rep_seed: u64,
        ledger: &BudgetLedger,
        log: &mut RepetitionLog,
    ) -> Result<Vec<Configuration>> {
        let sc = self.scenario;
        let k = sc.k;
        let ids = sc.train_ids();
        let split = split_random_even(&ids, k, seed::derive(rep_seed, &[0]))?;
        let (lower, upper) = subset_bounds(ids.len(), k)?;
        let mut grouping = InstanceGrouping::new(split.subsets, lower, upper)?;
        let store = self.store(&format!("rundata-rep{rep}.jsonl"))?;
        let space = &sc.space;
        let evaluator = SingleRun {
            backend: self.backend,
            space,
        };
        let phases = plan.stage_budgets.len();
        let mut incumbents: Vec<Option<Configuration>> = vec![None; k];
        for (p, &budget) in plan.stage_budgets.iter().enumerate() {
            let phase = p + 1;
            let subsets: Vec<_> = grouping
                .subsets
                .iter()
                .map(|ids| self.instances_of(ids))
                .collect::<Result<_>>()?;
            let results: Vec<_> = (0..k)
                .into_par_iter()
                .map(|j| {
                    let request = ConfigureRequest {
                        instances: &subsets[j],
                        feature_dimension: sc.feature_dimension,
                        budget,
                        cutoff: sc.cutoff,
                        metric: sc.metric,
                        initial: incumbents[j].clone(),
                        seed: seed::derive(rep_seed, &[1, phase as u64, j as u64]),
                        phase: phase as u32,
                        subset_index: Some(j),
                        ledger_key: format!("rep{rep}/phase{phase}"),
                    };
                    configure(&evaluator, &store, ledger, &request, &self.settings)
                })
                .collect::<Result<_>>()?;
            let calls = results
                .iter()
                .enumerate()
                .map(|(j, r)| CallLog::new(Some(j), subsets[j].len(), r))
                .collect();
            incumbents = results.into_iter().map(|r| Some(r.incumbent)).collect();
            let transfer = if phase < phases {
                let current: Vec<Configuration> = incumbents.iter().flatten().cloned().collect();
                let ctx = TransferContext {
                    space,
                    instances: &sc.train_instances,
                    feature_dimension: sc.feature_dimension,
                    store: &store,
                    cutoff: sc.cutoff,
                    penalty: sc.penalty(),
                    forest: self.settings.forest,
                };
                let report = transfer_instances(&mut grouping, &current, &ctx, seed::derive(rep_seed, &[2, phase as u64]))?;
                log::debug!(
                    "rep {rep} phase {phase}: {} candidates, {} moves in {} rounds",
                    report.candidates,
                    report.moves.len(),
                    report.rounds
                );
                Some(report)
            } else {
                None
            };
            log.stages.push(StageLog {
                stage: phase,
                budget_cpu: budget,
                calls,
                transfer,
                grouping_sizes: grouping.sizes(),
            });
        }
        log.final_grouping = Some(grouping);
        incumbents
            .into_iter()
            .map(|c| c.ok_or_else(|| Error::invalid("phase produced no incumbent")))
            .collect()
    }

    /// Validation over repetitions that produced a portfolio.
    pub(super) fn finish(
        &self,
        plan: &BudgetPlan,
        seed: u64,
        ledger: BudgetLedger,
        reps: Vec<(RepetitionLog, Result<Vec<Configuration>>)>,
    ) -> Result<Construction> {
        let sc = self.scenario;
        let mut logs = Vec::with_capacity(reps.len());
        let mut candidates = Vec::new();
        let mut origin = Vec::new();
        let mut first_error = None;
        for (log, result) in reps {
            match result {
                Ok(c) => {
                    origin.push(log.index);
                    candidates.push(c);
                }
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
            logs.push(log);
        }
        if candidates.is_empty() {
            return Err(first_error.unwrap_or_else(|| Error::invalid("no repetitions")));
        }
        let report = validate_and_select(
            self.backend,
            &candidates,
            &sc.train_instances,
            plan.validation_cpu[0],
            sc.cutoff,
            sc.penalty(),
            seed::derive(seed, &[u64::MAX]),
            &ledger,
            "validation",
        )?;
        let selected = origin[report.selected];
        let snapshot = ledger.snapshot();
        let portfolio = Portfolio {
            components: candidates.swap_remove(report.selected),
            method_label: plan.method.to_string(),
            seeds: vec![seed, logs[selected].seed],
            consumed_cpu_time: snapshot.total(),
        };
        Ok(Construction {
            portfolio,
            log: ConstructionLog {
                method: plan.method.to_string(),
                scenario: sc.name.clone(),
                k: sc.k,
                seed,
                plan: plan.clone(),
                repetitions: logs,
                validations: vec![ValidationLog {
                    stage: 1,
                    candidates: origin,
                    report,
                }],
                selected: Some(selected),
                ledger: snapshot,
            },
        })
    }
}
