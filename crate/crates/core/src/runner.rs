//! Executing configurations on instances, racing whole portfolios, and
//! metering consumed solver time.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{portfolio_runtime, Instance, Outcome, RunRecord};
use crate::seed;
use crate::space::Configuration;

/// Something that can run a configuration on an instance.
pub trait Backend: Send + Sync {
    fn label(&self) -> &str;

    /// True when repeated runs with different seeds give identical results.
    fn is_deterministic(&self) -> bool;

    /// One run under `cutoff`. The returned outcome never exceeds the cutoff.
    fn run(&self, config: &Configuration, instance: &Instance, cutoff: f64, seed: u64) -> Result<Outcome>;

    /// Runs all components on one instance until the first one solves it.
    ///
    /// The default evaluates each component independently and derives what a
    /// parallel race would have observed: losers are cut off at the winner's
    /// runtime.
    fn race(
        &self,
        components: &[Configuration],
        instance: &Instance,
        cutoff: f64,
        seed: u64,
    ) -> Result<Race> {
        let raw = components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                self.run(c, instance, cutoff, component_seed(seed, i))
                    .unwrap_or_else(|e| {
                        log::warn!("component {i} failed on {}: {e}", instance.id);
                        Outcome::crashed(0.0, cutoff)
                    })
            })
            .collect::<Vec<_>>();
        Ok(Race::settle(raw, cutoff))
    }
}

pub(crate) fn component_seed(seed: u64, component: usize) -> u64 {
    seed::derive(seed, &[component as u64])
}

/// What a parallel portfolio run on one instance observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Race {
    /// The portfolio result: the first component to solve, else timeout.
    pub outcome: Outcome,
    /// Per-component outcomes as observed in the race; components still
    /// running when the winner finished appear as timeouts at the winner's time.
    pub components: Vec<Outcome>,
    /// Solver time consumed by all components together.
    pub cost: f64,
}

impl Race {
    /// Builds a race from independent full-length component outcomes.
    pub fn settle(raw: Vec<Outcome>, cutoff: f64) -> Race {
        let outcome = portfolio_runtime(&raw, cutoff).unwrap_or(Outcome::timeout(cutoff));
        let stop = outcome.runtime;
        let components: Vec<Outcome> = raw
            .into_iter()
            .map(|o| {
                if o.runtime <= stop {
                    o
                } else {
                    Outcome::timeout(stop.max(f64::MIN_POSITIVE))
                }
            })
            .collect();
        let cost = components.iter().map(|o| o.runtime).sum();
        Race {
            outcome,
            components,
            cost,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Configuration,
    Validation,
    Testing,
}

/// Serializable view of a [`BudgetLedger`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub configuration_time_used: f64,
    pub validation_time_used: f64,
    pub testing_time_used: f64,
    pub component_runs: u64,
    pub per_phase: BTreeMap<String, f64>,
}

impl LedgerSnapshot {
    pub fn total(&self) -> f64 {
        self.configuration_time_used + self.validation_time_used
    }
}

/// Thread-safe meter of consumed solver time. Totals only ever grow.
#[derive(Debug, Default)]
pub struct BudgetLedger {
    inner: Mutex<LedgerSnapshot>,
}

impl BudgetLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Charges `seconds` for `runs` component runs.
    pub fn charge(&self, stage: Stage, phase: &str, seconds: f64, runs: u64) {
        let seconds = seconds.max(0.0);
        let mut s = self.inner.lock().expect("ledger poisoned");
        match stage {
            Stage::Configuration => s.configuration_time_used += seconds,
            Stage::Validation => s.validation_time_used += seconds,
            Stage::Testing => s.testing_time_used += seconds,
        }
        s.component_runs += runs;
        *s.per_phase.entry(phase.to_string()).or_insert(0.0) += seconds;
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        self.inner.lock().expect("ledger poisoned").clone()
    }
}

/// Runs `config` on `instance` and charges the ledger.
pub fn execute_run(
    backend: &dyn Backend,
    config: &Configuration,
    instance: &Instance,
    cutoff: f64,
    seed: u64,
    ledger: &BudgetLedger,
    stage: Stage,
    phase: &str,
) -> Result<RunRecord> {
    let outcome = backend.run(config, instance, cutoff, seed)?;
    ledger.charge(stage, phase, outcome.runtime, 1);
    Ok(RunRecord::new(config.id(), &instance.id, seed, outcome, backend.label()))
}

/// Per-instance result of [`evaluate_portfolio`].
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub instance_id: String,
    pub race: Race,
}

/// Races the portfolio on every instance. Failures become crashed results.
pub fn evaluate_portfolio(
    backend: &dyn Backend,
    components: &[Configuration],
    instances: &[Instance],
    cutoff: f64,
    seed: u64,
    ledger: &BudgetLedger,
    stage: Stage,
    phase: &str,
) -> Vec<InstanceResult> {
    instances
        .iter()
        .map(|inst| {
            let s = seed::derive_str(seed, &inst.id);
            let race = backend.race(components, inst, cutoff, s).unwrap_or_else(|e| {
                log::warn!("portfolio run on {} failed: {e}", inst.id);
                Race::settle(vec![Outcome::crashed(0.0, cutoff); components.len()], cutoff)
            });
            ledger.charge(stage, phase, race.cost, components.len() as u64);
            InstanceResult {
                instance_id: inst.id.clone(),
                race,
            }
        })
        .collect()
}
