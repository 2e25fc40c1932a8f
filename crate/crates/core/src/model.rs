//! Shared domain types, runtime metrics and instance grouping primitives.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::space::{Configuration, ParameterSpace};

/// A problem instance with its feature row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_path: Option<String>,
}

impl Instance {
    pub fn new(id: impl Into<String>, features: Vec<f64>) -> Self {
        Instance {
            id: id.into(),
            features,
            source_path: None,
        }
    }

    pub fn with_path(mut self, path: impl Into<String>) -> Self {
        self.source_path = Some(path.into());
        self
    }

    /// Path handed to an external wrapper; falls back to the id.
    pub fn locator(&self) -> &str {
        self.source_path.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RunStatus {
    Solved,
    Timeout,
    /// Scored like a timeout, but kept distinct for reporting.
    Crashed,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Solved => "SOLVED",
            RunStatus::Timeout => "TIMEOUT",
            RunStatus::Crashed => "CRASHED",
        })
    }
}

impl FromStr for RunStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SOLVED" | "SAT" | "UNSAT" | "SUCCESS" => Ok(RunStatus::Solved),
            "TIMEOUT" => Ok(RunStatus::Timeout),
            "CRASHED" | "CRASH" | "ABORT" => Ok(RunStatus::Crashed),
            other => Err(Error::Parse(format!("unknown run status `{other}`"))),
        }
    }
}

/// Result of one run (or one portfolio race) under a given cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub status: RunStatus,
    pub runtime: f64,
    pub cutoff: f64,
}

impl Outcome {
    /// Builds an outcome, clamping anything that ran past the cutoff to a timeout.
    pub fn new(status: RunStatus, runtime: f64, cutoff: f64) -> Self {
        let runtime = if runtime.is_finite() { runtime.max(0.0) } else { cutoff };
        match status {
            RunStatus::Solved if runtime <= cutoff => Outcome {
                status,
                runtime,
                cutoff,
            },
            RunStatus::Solved | RunStatus::Timeout => Outcome::timeout(cutoff),
            RunStatus::Crashed => Outcome {
                status,
                runtime: runtime.min(cutoff),
                cutoff,
            },
        }
    }

    pub fn solved(runtime: f64, cutoff: f64) -> Self {
        Outcome::new(RunStatus::Solved, runtime, cutoff)
    }

    pub fn timeout(cutoff: f64) -> Self {
        Outcome {
            status: RunStatus::Timeout,
            runtime: cutoff,
            cutoff,
        }
    }

    pub fn crashed(runtime: f64, cutoff: f64) -> Self {
        Outcome::new(RunStatus::Crashed, runtime, cutoff)
    }

    pub fn is_solved(&self) -> bool {
        self.status == RunStatus::Solved
    }

    /// True when the run was stopped early by a cap below `cutoff`.
    pub fn is_capped(&self, cutoff: f64) -> bool {
        !self.is_solved() && self.status != RunStatus::Crashed && self.cutoff < cutoff * (1.0 - 1e-9)
    }

    /// Penalized score against the scenario `cutoff`.
    ///
    /// Unsolved runs at the full cutoff cost `penalty * cutoff`. A run cut
    /// short by an adaptive cap only tells us its runtime exceeds the cap, so
    /// it scores the cap itself.
    pub fn penalized(&self, cutoff: f64, penalty: u32) -> f64 {
        if self.is_solved() {
            self.runtime
        } else if self.is_capped(cutoff) {
            self.cutoff
        } else {
            f64::from(penalty) * cutoff
        }
    }
}

/// One observed (configuration, instance, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_id: crate::space::ConfigId,
    pub instance_id: String,
    pub seed: u64,
    pub status: RunStatus,
    pub runtime: f64,
    pub cutoff: f64,
    pub backend_label: String,
}

impl RunRecord {
    pub fn new(
        config_id: crate::space::ConfigId,
        instance_id: impl Into<String>,
        seed: u64,
        outcome: Outcome,
        backend_label: impl Into<String>,
    ) -> Self {
        RunRecord {
            config_id,
            instance_id: instance_id.into(),
            seed,
            status: outcome.status,
            runtime: outcome.runtime,
            cutoff: outcome.cutoff,
            backend_label: backend_label.into(),
        }
    }

    pub fn outcome(&self) -> Outcome {
        Outcome {
            status: self.status,
            runtime: self.runtime,
            cutoff: self.cutoff,
        }
    }

    /// Checks `runtime <= cutoff` and `TIMEOUT => runtime == cutoff`.
    pub fn is_well_formed(&self) -> bool {
        self.cutoff > 0.0
            && self.runtime >= 0.0
            && self.runtime <= self.cutoff
            && (self.status != RunStatus::Timeout || self.runtime == self.cutoff)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Metric {
    #[default]
    #[serde(rename = "PAR10")]
    Par10,
    #[serde(rename = "PAR1")]
    Par1,
}

impl Metric {
    pub fn penalty(self) -> u32 {
        match self {
            Metric::Par10 => 10,
            Metric::Par1 => 1,
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "").as_str() {
            "PAR10" => Ok(Metric::Par10),
            "PAR1" => Ok(Metric::Par1),
            other => Err(Error::Parse(format!("unknown metric `{other}`"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Par10 => "PAR10",
            Metric::Par1 => "PAR1",
        })
    }
}

/// Penalized average runtime: solved runs count their runtime, everything
/// else counts `penalty * cutoff`.
pub fn par_score(outcomes: &[Outcome], cutoff: f64, penalty: u32) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::NoInstances);
    }
    if penalty < 1 {
        return Err(Error::invalid("penalty must be at least 1"));
    }
    if let Some(o) = outcomes
        .iter()
        .find(|o| (o.cutoff - cutoff).abs() > 1e-9 * cutoff.max(1.0))
    {
        return Err(Error::invalid(format!(
            "record cutoff {} differs from scoring cutoff {cutoff}",
            o.cutoff
        )));
    }
    let total: f64 = outcomes
        .iter()
        .map(|o| {
            if o.is_solved() {
                o.runtime
            } else {
                f64::from(penalty) * cutoff
            }
        })
        .sum();
    Ok(total / outcomes.len() as f64)
}

/// Result of running all components in parallel until the first one solves.
///
/// Returns the fastest solved entry; otherwise a timeout, or a crash when
/// every component crashed.
pub fn portfolio_runtime(components: &[Outcome], cutoff: f64) -> Result<Outcome> {
    if components.is_empty() {
        return Err(Error::invalid("portfolio has no components"));
    }
    let best = components
        .iter()
        .filter(|o| o.is_solved())
        .map(|o| o.runtime)
        .fold(f64::INFINITY, f64::min);
    if best.is_finite() {
        Ok(Outcome::solved(best, cutoff))
    } else if components.iter().all(|o| o.status == RunStatus::Crashed) {
        Ok(Outcome::crashed(cutoff, cutoff))
    } else {
        Ok(Outcome::timeout(cutoff))
    }
}

/// A partition of instances into `k` ordered subsets with size bounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceGrouping {
    pub subsets: Vec<Vec<String>>,
    pub lower_bound: usize,
    pub upper_bound: usize,
}

impl InstanceGrouping {
    pub fn new(subsets: Vec<Vec<String>>, lower_bound: usize, upper_bound: usize) -> Result<Self> {
        let grouping = InstanceGrouping {
            subsets,
            lower_bound,
            upper_bound,
        };
        grouping.validate()?;
        Ok(grouping)
    }

    /// Builds a grouping with bounds from [`subset_bounds`].
    pub fn with_default_bounds(subsets: Vec<Vec<String>>) -> Result<Self> {
        let total: usize = subsets.iter().map(Vec::len).sum();
        let (l, u) = subset_bounds(total, subsets.len())?;
        InstanceGrouping::new(subsets, l, u)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower_bound > self.upper_bound {
            return Err(Error::invalid("lower bound exceeds upper bound"));
        }
        let mut seen = HashSet::new();
        for id in self.subsets.iter().flatten() {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("instance `{id}` in more than one subset")));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.subsets.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.subsets.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.subsets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset_of(&self, id: &str) -> Option<usize> {
        self.subsets.iter().position(|s| s.iter().any(|x| x == id))
    }

    /// Map from instance id to subset index.
    pub fn membership(&self) -> BTreeMap<String, usize> {
        self.subsets
            .iter()
            .enumerate()
            .flat_map(|(j, s)| s.iter().map(move |id| (id.clone(), j)))
            .collect()
    }

    /// Moves `id` from `from` to `to`. Returns false if `id` is not in `from`.
    pub fn move_instance(&mut self, id: &str, from: usize, to: usize) -> bool {
        let Some(pos) = self.subsets[from].iter().position(|x| x == id) else {
            return false;
        };
        let moved = self.subsets[from].remove(pos);
        self.subsets[to].push(moved);
        true
    }

    /// Sorted list of every grouped instance id.
    pub fn all_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.subsets.iter().flatten().cloned().collect();
        ids.sort();
        ids
    }

    pub fn within_bounds(&self) -> bool {
        self.subsets
            .iter()
            .all(|s| s.len() >= self.lower_bound && s.len() <= self.upper_bound)
    }
}

/// Randomly and evenly splits `instances` into `k` subsets. The first
/// `n mod k` subsets receive the extra instance.
pub fn split_random_even(instances: &[String], k: usize, seed: u64) -> Result<InstanceGrouping> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if instances.len() < k {
        return Err(Error::invalid(format!(
            "cannot split {} instances into {k} subsets",
            instances.len()
        )));
    }
    let mut ids = instances.to_vec();
    // Canonical order first so the result depends only on the set and seed.
    ids.sort();
    ids.shuffle(&mut seed::rng(seed));
    let base = ids.len() / k;
    let extra = ids.len() % k;
    let mut subsets = Vec::with_capacity(k);
    let mut iter = ids.into_iter();
    for j in 0..k {
        let size = base + usize::from(j < extra);
        subsets.push(iter.by_ref().take(size).collect());
    }
    InstanceGrouping::with_default_bounds(subsets)
}

/// Subset size bounds `(L, U) = (ceil(0.8 n/k), ceil(1.2 n/k))`.
///
/// `L` is additionally capped at `floor(n/k)`: for small `n/k` the raw
/// formula can exceed the smaller side of a balanced split (n=14, k=8 gives
/// 2 > 1), which would put a fresh random split out of bounds.
pub fn subset_bounds(total: usize, k: usize) -> Result<(usize, usize)> {
    if k == 0 || total < k {
        return Err(Error::invalid(format!("need total >= k >= 1, got total={total}, k={k}")));
    }
    let lower = (4 * total).div_ceil(5 * k).min(total / k);
    let upper = (6 * total).div_ceil(5 * k);
    Ok((lower, upper))
}

/// A parallel portfolio `(c_1, ..., c_k)` with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    pub components: Vec<Configuration>,
    pub method_label: String,
    pub seeds: Vec<u64>,
    pub consumed_cpu_time: f64,
}

impl Portfolio {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self, space: &ParameterSpace, k: usize) -> Result<()> {
        if self.components.len() != k {
            return Err(Error::invalid(format!(
                "portfolio has {} components, scenario expects {k}",
                self.components.len()
            )));
        }
        self.components.iter().try_for_each(|c| space.validate(c))
    }
}

/// Everything a constructor needs to know about the problem.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub space: ParameterSpace,
    pub train_instances: Vec<Instance>,
    pub test_instances: Vec<Instance>,
    pub cutoff: f64,
    pub test_cutoff: f64,
    pub metric: Metric,
    pub k: usize,
    pub feature_dimension: usize,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Scenario("k must be at least 1".into()));
        }
        if !(self.cutoff > 0.0 && self.test_cutoff > 0.0) {
            return Err(Error::Scenario("cutoff must be positive".into()));
        }
        if self.train_instances.is_empty() {
            return Err(Error::Scenario("no training instances".into()));
        }
        let mut seen = HashSet::new();
        for inst in self.train_instances.iter().chain(&self.test_instances) {
            if inst.features.len() != self.feature_dimension {
                return Err(Error::Scenario(format!(
                    "instance `{}` has {} features, expected {}",
                    inst.id,
                    inst.features.len(),
                    self.feature_dimension
                )));
            }
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::Scenario(format!("duplicate instance id `{}`", inst.id)));
            }
        }
        Ok(())
    }

    pub fn penalty(&self) -> u32 {
        self.metric.penalty()
    }

    pub fn train_ids(&self) -> Vec<String> {
        self.train_instances.iter().map(|i| i.id.clone()).collect()
    }

    pub fn train_instance(&self, id: &str) -> Option<&Instance> {
        self.train_instances.iter().find(|i| i.id == id)
    }
}
