//! Planted synthetic scenarios.
//!
//! Every instance belongs to a family. A family has a base runtime and, for
//! each parameter, a target: categorical parameters carry a log-penalty per
//! value, numeric ones an optimum position in `[0, 1]` (in the parameter's
//! normalized scale) and a weight. The virtual runtime of a configuration is
//!
//! ```text
//! base * hardness * exp(sum of penalties) * noise
//! ```
//!
//! where inactive parameters contribute nothing and `noise` is a seeded
//! log-normal factor (exactly 1 when the scenario is noise-free).

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Instance, Metric, Outcome, Scenario};
use crate::runner::Backend;
use crate::seed;
use crate::space::{Configuration, Parameter, ParameterSpace, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Target {
    Numeric { optimum: f64, weight: f64 },
    Categorical { penalties: BTreeMap<String, f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub name: String,
    pub base_runtime: f64,
    pub targets: BTreeMap<String, Target>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedInstance {
    pub family: usize,
    pub hardness: f64,
}

/// Ground truth of a synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub families: Vec<Family>,
    pub instances: BTreeMap<String, PlantedInstance>,
    /// Standard deviation of the log-normal runtime noise.
    #[serde(default)]
    pub noise: f64,
}

impl SyntheticModel {
    pub fn family_of(&self, instance_id: &str) -> Option<usize> {
        self.instances.get(instance_id).map(|p| p.family)
    }

    /// Noise-free virtual runtime, before any cutoff.
    pub fn base_runtime(&self, space: &ParameterSpace, config: &Configuration, instance_id: &str) -> Result<f64> {
        let planted = self
            .instances
            .get(instance_id)
            .ok_or_else(|| Error::UnknownInstance(instance_id.to_string()))?;
        let family = self
            .families
            .get(planted.family)
            .ok_or_else(|| Error::Scenario(format!("instance `{instance_id}` has unknown family")))?;
        let mut exponent = 0.0;
        for (name, value) in config.assignments() {
            let Some(target) = family.targets.get(name) else { continue };
            exponent += match (target, value) {
                (Target::Categorical { penalties }, Value::Cat(v)) => penalties.get(v).copied().unwrap_or(0.0),
                (Target::Numeric { optimum, weight }, v) => {
                    let p: &Parameter = space
                        .parameter(name)
                        .ok_or_else(|| Error::InvalidConfiguration(format!("unknown parameter `{name}`")))?;
                    weight * (p.encode(v) - optimum).abs()
                }
                _ => 0.0,
            };
        }
        Ok(family.base_runtime * planted.hardness * exponent.exp())
    }

    pub fn runtime(&self, space: &ParameterSpace, config: &Configuration, instance_id: &str, seed: u64) -> Result<f64> {
        let base = self.base_runtime(space, config, instance_id)?;
        if self.noise <= 0.0 {
            return Ok(base);
        }
        let s = seed::derive(seed::derive_str(seed, instance_id), &[config.id().0]);
        let z: f64 = Normal::new(0.0, self.noise)
            .expect("noise is finite")
            .sample(&mut seed::rng(s));
        Ok(base * z.exp())
    }
}

/// Backend evaluating the planted runtime functions in virtual time.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    space: Arc<ParameterSpace>,
    model: Arc<SyntheticModel>,
}

impl SyntheticBackend {
    pub fn new(space: Arc<ParameterSpace>, model: Arc<SyntheticModel>) -> Self {
        SyntheticBackend { space, model }
    }

    pub fn model(&self) -> &SyntheticModel {
        &self.model
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }
}

impl Backend for SyntheticBackend {
    fn label(&self) -> &str {
        "synthetic"
    }

    fn is_deterministic(&self) -> bool {
        self.model.noise <= 0.0
    }

    fn run(&self, config: &Configuration, instance: &Instance, cutoff: f64, seed: u64) -> Result<Outcome> {
        let t = self.model.runtime(&self.space, config, &instance.id, seed)?;
        Ok(Outcome::solved(t, cutoff))
    }
}

/// Parameters of [`generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub families: usize,
    /// Number of values of the `heuristic` parameter.
    pub configs: usize,
    /// Training instances; the test set has the same size.
    pub instances: usize,
    pub feature_dimension: usize,
    /// Adds a real parameter `alpha` whose optimum differs per family.
    pub numeric: bool,
    pub cutoff: f64,
    pub noise: f64,
    /// Range of log-penalties for a non-optimal heuristic.
    pub penalty_range: (f64, f64),
    /// Standard deviation of features around the family centroid.
    pub feature_spread: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            families: 4,
            configs: 4,
            instances: 80,
            feature_dimension: 4,
            numeric: true,
            cutoff: 10.0,
            noise: 0.0,
            penalty_range: (1.5, 3.5),
            feature_spread: 0.6,
            seed: 0,
        }
    }
}

/// A generated scenario: space, ground truth and instance sets.
#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub space: ParameterSpace,
    pub model: SyntheticModel,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
    pub cutoff: f64,
}

impl SyntheticScenario {
    /// The scenario as seen by constructors, scored by PAR-10.
    pub fn scenario(&self, name: &str, k: usize) -> Scenario {
        Scenario {
            name: name.to_string(),
            space: self.space.clone(),
            train_instances: self.train.clone(),
            test_instances: self.test.clone(),
            cutoff: self.cutoff,
            test_cutoff: self.cutoff,
            metric: Metric::Par10,
            k,
            feature_dimension: self.train.first().map_or(0, |i| i.features.len()),
        }
    }

    pub fn backend(&self) -> SyntheticBackend {
        SyntheticBackend::new(Arc::new(self.space.clone()), Arc::new(self.model.clone()))
    }

    /// The heuristic value that is optimal for `family`.
    pub fn optimal_heuristic(&self, family: usize) -> Option<&str> {
        match self.model.families.get(family)?.targets.get("heuristic")? {
            Target::Categorical { penalties } => penalties
                .iter()
                .find(|(_, p)| **p == 0.0)
                .map(|(v, _)| v.as_str()),
            Target::Numeric { .. } => None,
        }
    }
}

/// Generates a planted scenario with families dealt round-robin over the
/// instances, so every family has (almost) the same size.
pub fn generate(params: &SynthParams) -> Result<SyntheticScenario> {
    if params.families == 0 || params.configs == 0 || params.instances == 0 {
        return Err(Error::invalid("families, configs and instances must be positive"));
    }
    if !(params.cutoff > 0.0) {
        return Err(Error::invalid("cutoff must be positive"));
    }
    let mut rng = seed::rng(params.seed);
    let values: Vec<String> = (0..params.configs).map(|i| format!("h{i}")).collect();
    let names: Vec<&str> = values.iter().map(String::as_str).collect();
    let mut parameters = vec![Parameter::categorical("heuristic", &names, &values[0])];
    if params.numeric {
        parameters.push(Parameter::real("alpha", 0.0, 1.0, 0.5, false));
    }
    let space = ParameterSpace::new(parameters, vec![], None)?;

    let mut order: Vec<usize> = (0..params.configs).collect();
    order.shuffle(&mut rng);
    let (lo, hi) = params.penalty_range;
    let mut families = Vec::with_capacity(params.families);
    let mut centroids = Vec::with_capacity(params.families);
    for f in 0..params.families {
        let best = order[f % params.configs];
        let penalties = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let p = if i == best { 0.0 } else { rng.random_range(lo..=hi) };
                (v.clone(), p)
            })
            .collect();
        let mut targets = BTreeMap::new();
        targets.insert("heuristic".to_string(), Target::Categorical { penalties });
        if params.numeric {
            targets.insert(
                "alpha".to_string(),
                Target::Numeric {
                    optimum: rng.random_range(0.1..0.9),
                    weight: 2.0,
                },
            );
        }
        families.push(Family {
            name: format!("family{f}"),
            base_runtime: params.cutoff / 10.0 * rng.random_range(0.5..1.5),
            targets,
        });
        centroids.push(
            (0..params.feature_dimension)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect::<Vec<f64>>(),
        );
    }

    let spread = Normal::new(0.0, params.feature_spread.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let hardness = Normal::new(0.0, 0.3).expect("constant parameters");
    let mut planted = BTreeMap::new();
    let mut make = |prefix: &str, rng: &mut seed::Rng| -> Vec<Instance> {
        (0..params.instances)
            .map(|i| {
                let family = i % params.families;
                let id = format!("{prefix}{i:04}");
                let features = centroids[family].iter().map(|c| c + spread.sample(rng)).collect();
                let h: f64 = hardness.sample(rng);
                planted.insert(
                    id.clone(),
                    PlantedInstance {
                        family,
                        hardness: h.clamp(-0.9, 0.9).exp(),
                    },
                );
                Instance::new(id, features)
            })
            .collect()
    };
    let train = make("train", &mut rng);
    let test = make("test", &mut rng);
    Ok(SyntheticScenario {
        space,
        model: SyntheticModel {
            families,
            instances: planted,
            noise: params.noise,
        },
        train,
        test,
        cutoff: params.cutoff,
    })
}
