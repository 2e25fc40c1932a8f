//! Portfolio constructors: PCIT, PCRS, GLOBAL, CLUSTERING and PARHYDRA_b.

mod budget;
mod clustering;
mod greedy;
mod kmeans;
mod pcit;
mod validation;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use budget::{
    parse_duration, pcit_phase_budgets, plan_budget, BudgetPlan, Method, DEFAULT_PHASES, DEFAULT_REPETITIONS,
};
pub use greedy::PortfolioEvaluator;
pub use kmeans::{kmeans, normalize, Clustering, Normalization};
pub use validation::{validate_and_select, ValidationReport};

use crate::configurator::{ConfigureResult, ConfiguratorSettings};
use crate::error::{Error, Result};
use crate::model::{Instance, InstanceGrouping, Portfolio, Scenario};
use crate::rundata::RunStore;
use crate::runner::{Backend, LedgerSnapshot};
use crate::space::{Configuration, ParameterSpace};
use crate::transfer::TransferReport;

/// Options beyond the budget plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstructOptions {
    pub normalization: Normalization,
    pub seed: u64,
}

impl Default for ConstructOptions {
    fn default() -> Self {
        ConstructOptions {
            normalization: Normalization::Linear,
            seed: 0,
        }
    }
}

/// Record of one configure call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallLog {
    pub subset: Option<usize>,
    pub instances: usize,
    pub incumbent: String,
    pub estimate: Option<f64>,
    pub consumed: f64,
    pub runs: usize,
}

impl CallLog {
    fn new(subset: Option<usize>, instances: usize, r: &ConfigureResult) -> Self {
        CallLog {
            subset,
            instances,
            incumbent: r.incumbent.to_string(),
            estimate: r.estimate,
            consumed: r.consumed,
            runs: r.runs,
        }
    }
}

/// One phase (PCIT), the single stage (PCRS, CLUSTERING) or one
/// configurator run of an iteration (GLOBAL, PARHYDRA).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: usize,
    pub budget_cpu: f64,
    pub calls: Vec<CallLog>,
    pub transfer: Option<TransferReport>,
    pub grouping_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionLog {
    pub index: usize,
    pub seed: u64,
    pub stages: Vec<StageLog>,
    pub final_grouping: Option<InstanceGrouping>,
    pub components: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationLog {
    pub stage: usize,
    pub candidates: Vec<usize>,
    pub report: ValidationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionLog {
    pub method: String,
    pub scenario: String,
    pub k: usize,
    pub seed: u64,
    pub plan: BudgetPlan,
    pub repetitions: Vec<RepetitionLog>,
    pub validations: Vec<ValidationLog>,
    /// Index of the repetition whose portfolio was selected (PCIT, PCRS,
    /// CLUSTERING).
    pub selected: Option<usize>,
    pub ledger: LedgerSnapshot,
}

impl ConstructionLog {
    /// The final grouping of the selected repetition, when there is one.
    pub fn selected_grouping(&self) -> Option<&InstanceGrouping> {
        self.repetitions.get(self.selected?)?.final_grouping.as_ref()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Construction {
    pub portfolio: Portfolio,
    pub log: ConstructionLog,
}

/// On-disk form of a portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioFile {
    pub scenario: String,
    pub method: String,
    pub components: Vec<String>,
    pub component_ids: Vec<String>,
    pub seeds: Vec<u64>,
    pub consumed_cpu_time: f64,
}

impl PortfolioFile {
    pub fn new(scenario: &str, portfolio: &Portfolio) -> Self {
        PortfolioFile {
            scenario: scenario.to_string(),
            method: portfolio.method_label.clone(),
            components: portfolio.components.iter().map(ToString::to_string).collect(),
            component_ids: portfolio.components.iter().map(|c| c.id().to_string()).collect(),
            seeds: portfolio.seeds.clone(),
            consumed_cpu_time: portfolio.consumed_cpu_time,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Parses the components in `space`, checking their recorded ids.
    pub fn to_portfolio(&self, space: &ParameterSpace) -> Result<Portfolio> {
        let mut components = Vec::with_capacity(self.components.len());
        for (i, text) in self.components.iter().enumerate() {
            let c = space.parse_config(text)?;
            if let Some(id) = self.component_ids.get(i) {
                if c.id().to_string() != *id {
                    return Err(Error::Parse(format!("component {i}: id {id} does not match `{text}`")));
                }
            }
            components.push(c);
        }
        Ok(Portfolio {
            components,
            method_label: self.method.clone(),
            seeds: self.seeds.clone(),
            consumed_cpu_time: self.consumed_cpu_time,
        })
    }
}

/// Runs constructions for one scenario on one backend.
pub struct Constructor<'a> {
    scenario: &'a Scenario,
    backend: &'a dyn Backend,
    settings: ConfiguratorSettings,
    rundata_dir: Option<PathBuf>,
    by_id: HashMap<&'a str, &'a Instance>,
}

impl<'a> Constructor<'a> {
    pub fn new(scenario: &'a Scenario, backend: &'a dyn Backend) -> Result<Self> {
        scenario.validate()?;
        Ok(Constructor {
            scenario,
            backend,
            settings: ConfiguratorSettings::default(),
            rundata_dir: None,
            by_id: scenario.train_instances.iter().map(|i| (i.id.as_str(), i)).collect(),
        })
    }

    pub fn with_settings(mut self, settings: ConfiguratorSettings) -> Self {
        self.settings = settings;
        self
    }

    /// Mirrors every repetition's run data to a log file in `dir`.
    pub fn with_rundata_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.rundata_dir = Some(dir.into());
        self
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    pub fn construct(&self, plan: &BudgetPlan, options: ConstructOptions) -> Result<Construction> {
        if plan.k != self.scenario.k {
            return Err(Error::invalid(format!(
                "plan is for k = {}, scenario has k = {}",
                plan.k, self.scenario.k
            )));
        }
        let c = match plan.method {
            Method::Pcit | Method::Pcrs => self.construct_pcit(plan, options.seed),
            Method::Global | Method::Parhydra => self.construct_greedy(plan, options.seed),
            Method::Clustering => self.construct_clustering(plan, options.normalization, options.seed),
        }?;
        c.portfolio.validate(&self.scenario.space, self.scenario.k)?;
        Ok(c)
    }

    fn store(&self, name: &str) -> Result<RunStore> {
        match &self.rundata_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
                let path = dir.join(name);
                // A fresh log per construction.
                if path.exists() {
                    fs::remove_file(&path).map_err(|e| Error::file(&path, e))?;
                }
                RunStore::with_log(&path)
            }
            None => Ok(RunStore::new()),
        }
    }

    fn instances_of(&self, ids: &[String]) -> Result<Vec<Instance>> {
        ids.iter()
            .map(|id| {
                self.by_id
                    .get(id.as_str())
                    .map(|i| (*i).clone())
                    .ok_or_else(|| Error::UnknownInstance(id.clone()))
            })
            .collect()
    }
}

fn describe(components: &[Configuration]) -> Vec<String> {
    components.iter().map(ToString::to_string).collect()
}
