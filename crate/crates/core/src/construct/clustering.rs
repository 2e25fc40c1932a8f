use rayon::prelude::*;

use super::{describe, kmeans, normalize, CallLog, Construction, Constructor, Normalization, RepetitionLog, StageLog};
use crate::configurator::{configure, ConfigureRequest, SingleRun};
use crate::construct::BudgetPlan;
use crate::error::Result;
use crate::model::InstanceGrouping;
use crate::runner::BudgetLedger;
use crate::seed;

/// Iteration limit of the k-means run.
const MAX_ITERATIONS: usize = 300;

impl Constructor<'_> {
    /// Clusters the training instances by features into `k` groups and
    /// configures one component per cluster.
    pub fn construct_clustering(&self, plan: &BudgetPlan, normalization: Normalization, seed: u64) -> Result<Construction> {
        let sc = self.scenario;
        let k = sc.k;
        let points: Vec<Vec<f64>> = sc.train_instances.iter().map(|i| i.features.clone()).collect();
        let clusters = kmeans(&normalize(&points, normalization), k, MAX_ITERATIONS, seed::derive(seed, &[0]))?;
        let subsets: Vec<Vec<String>> = (0..k)
            .map(|c| {
                clusters
                    .members(c)
                    .into_iter()
                    .map(|i| sc.train_instances[i].id.clone())
                    .collect()
            })
            .collect();
        let grouping = InstanceGrouping {
            lower_bound: subsets.iter().map(Vec::len).min().unwrap_or(0),
            upper_bound: subsets.iter().map(Vec::len).max().unwrap_or(0),
            subsets,
        };
        let instances: Vec<_> = grouping
            .subsets
            .iter()
            .map(|ids| self.instances_of(ids))
            .collect::<Result<_>>()?;
        let ledger = BudgetLedger::new();
        let budget = plan.stage_cpu[0];
        let evaluator = SingleRun {
            backend: self.backend,
            space: &sc.space,
        };
        let reps = (0..plan.repetitions)
            .into_par_iter()
            .map(|rep| {
                let rep_seed = seed::derive(seed, &[1, rep as u64]);
                let mut log = RepetitionLog {
                    index: rep,
                    seed: rep_seed,
                    stages: Vec::new(),
                    final_grouping: Some(grouping.clone()),
                    components: Vec::new(),
                    error: None,
                };
                let result = self.store(&format!("rundata-rep{rep}.jsonl")).and_then(|store| {
                    (0..k)
                        .into_par_iter()
                        .map(|j| {
                            let request = ConfigureRequest {
                                instances: &instances[j],
                                feature_dimension: sc.feature_dimension,
                                budget,
                                cutoff: sc.cutoff,
                                metric: sc.metric,
                                initial: None,
                                seed: seed::derive(rep_seed, &[j as u64]),
                                phase: 1,
                                subset_index: Some(j),
                                ledger_key: format!("rep{rep}/cluster{j}"),
                            };
                            configure(&evaluator, &store, &ledger, &request, &self.settings)
                        })
                        .collect::<Result<Vec<_>>>()
                });
                let result = result.map(|results| {
                    log.stages.push(StageLog {
                        stage: 1,
                        budget_cpu: budget,
                        calls: results
                            .iter()
                            .enumerate()
                            .map(|(j, r)| CallLog::new(Some(j), instances[j].len(), r))
                            .collect(),
                        transfer: None,
                        grouping_sizes: grouping.sizes(),
                    });
                    results.into_iter().map(|r| r.incumbent).collect::<Vec<_>>()
                });
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
}
