//! Scenario files.
//!
//! A scenario is a TOML document; relative paths are resolved against the
//! directory containing it:
//!
//! ```toml
//! name = "demo"
//! space = "space.pcs"
//! train = "train.txt"          # one instance per line
//! test = "test.txt"
//! features = "features.csv"    # header: instance_id,f1,...,fm
//! cutoff = 10.0
//! test_cutoff = 10.0           # optional, defaults to cutoff
//! metric = "PAR10"             # or PAR1
//! k = 4
//! backend = "synthetic"        # or "external"
//! synthetic_model = "model.json"
//! wrapper = "./wrapper.sh"     # external backend command
//!
//! [defaults]                   # optional construction defaults
//! t_c = "600s"
//! t_v = "60s"
//! repetitions = 10
//! phases = 4
//! block = 1
//! normalization = "linear"
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Instance, Metric, Scenario};
use crate::runner::Backend;
use crate::space::parse_space;
use crate::synthetic::{SyntheticBackend, SyntheticModel, SyntheticScenario};
use crate::wrapper::WrapperBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Synthetic,
    External,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_c: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_v: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phases: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub space: String,
    pub train: String,
    pub test: String,
    pub features: String,
    pub cutoff: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_cutoff: Option<f64>,
    #[serde(default)]
    pub metric: Metric,
    pub k: usize,
    pub backend: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic_model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wrapper: Option<String>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub defaults: Defaults,
}

fn is_default(d: &Defaults) -> bool {
    *d == Defaults::default()
}

/// A scenario ready to run.
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub backend: Box<dyn Backend>,
    pub defaults: Defaults,
    pub file: ScenarioFile,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

/// Reads `instance_id,f1,...,fm` rows.
pub fn parse_features(text: &str) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Scenario("feature file is empty".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"instance_id") {
        return Err(Error::Scenario("feature header must start with `instance_id`".into()));
    }
    let dim = cols.len() - 1;
    let mut out = HashMap::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 1 {
            return Err(Error::Scenario(format!(
                "feature line {}: expected {} values, found {}",
                n + 1,
                dim,
                fields.len().saturating_sub(1)
            )));
        }
        let values = fields[1..]
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Scenario(format!("feature line {}: invalid number `{v}`", n + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if out.insert(fields[0].to_string(), values).is_some() {
            return Err(Error::Scenario(format!("duplicate features for `{}`", fields[0])));
        }
    }
    Ok((dim, out))
}

fn instance_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario> {
    let file: ScenarioFile = toml::from_str(&read(path)?)
        .map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let space = parse_space(&read(&resolve(base, &file.space))?)?;
    let (dim, features) = parse_features(&read(&resolve(base, &file.features))?)?;
    let load = |list: &str| -> Result<Vec<Instance>> {
        instance_list(&read(&resolve(base, list))?)
            .into_iter()
            .map(|id| {
                let f = features
                    .get(&id)
                    .ok_or_else(|| Error::Scenario(format!("instance `{id}` has no features")))?;
                let located = resolve(base, &id);
                let inst = Instance::new(id.clone(), f.clone());
                Ok(if located.exists() {
                    inst.with_path(located.to_string_lossy())
                } else {
                    inst
                })
            })
            .collect()
    };
    let scenario = Scenario {
        name: file.name.clone(),
        space,
        train_instances: load(&file.train)?,
        test_instances: load(&file.test)?,
        cutoff: file.cutoff,
        test_cutoff: file.test_cutoff.unwrap_or(file.cutoff),
        metric: file.metric,
        k: file.k,
        feature_dimension: dim,
    };
    scenario.validate()?;
    let backend: Box<dyn Backend> = match file.backend {
        BackendKind::Synthetic => {
            let model_path = file
                .synthetic_model
                .as_deref()
                .ok_or_else(|| Error::Scenario("synthetic backend needs `synthetic_model`".into()))?;
            let model: SyntheticModel = serde_json::from_str(&read(&resolve(base, model_path))?)?;
            for inst in scenario.train_instances.iter().chain(&scenario.test_instances) {
                if model.family_of(&inst.id).is_none() {
                    return Err(Error::UnknownInstance(inst.id.clone()));
                }
            }
            Box::new(SyntheticBackend::new(Arc::new(scenario.space.clone()), Arc::new(model)))
        }
        BackendKind::External => {
            let command = file
                .wrapper
                .as_deref()
                .ok_or_else(|| Error::Scenario("external backend needs `wrapper`".into()))?;
            let mut words = command.split_whitespace();
            let program = words.next().unwrap_or_default();
            // A relative wrapper path is relative to the scenario file.
            let program = if program.contains('/') && Path::new(program).is_relative() {
                resolve(base, program).to_string_lossy().into_owned()
            } else {
                program.to_string()
            };
            let full: Vec<String> = std::iter::once(program).chain(words.map(str::to_string)).collect();
            Box::new(WrapperBackend::new(&full.join(" "))?)
        }
    };
    Ok(LoadedScenario {
        defaults: file.defaults.clone(),
        scenario,
        backend,
        file,
    })
}

/// Writes a generated synthetic scenario as a scenario directory.
pub fn write_synthetic(dir: &Path, name: &str, generated: &SyntheticScenario, k: usize, defaults: Defaults) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let write = |file: &str, text: String| -> Result<()> {
        let p = dir.join(file);
        fs::write(&p, text).map_err(|e| Error::file(&p, e))
    };
    write("space.pcs", generated.space.to_string())?;
    let ids = |v: &[Instance]| v.iter().map(|i| format!("{}\n", i.id)).collect::<String>();
    write("train.txt", ids(&generated.train))?;
    write("test.txt", ids(&generated.test))?;
    let dim = generated.train.first().map_or(0, |i| i.features.len());
    let mut csv = String::from("instance_id");
    for j in 1..=dim {
        csv.push_str(&format!(",f{j}"));
    }
    csv.push('\n');
    for inst in generated.train.iter().chain(&generated.test) {
        csv.push_str(&inst.id);
        for f in &inst.features {
            csv.push_str(&format!(",{f}"));
        }
        csv.push('\n');
    }
    write("features.csv", csv)?;
    write("model.json", serde_json::to_string_pretty(&generated.model)?)?;
    let file = ScenarioFile {
        name: name.to_string(),
        space: "space.pcs".into(),
        train: "train.txt".into(),
        test: "test.txt".into(),
        features: "features.csv".into(),
        cutoff: generated.cutoff,
        test_cutoff: None,
        metric: Metric::Par10,
        k,
        backend: BackendKind::Synthetic,
        synthetic_model: Some("model.json".into()),
        wrapper: None,
        defaults,
    };
    let text = toml::to_string(&file).map_err(|e| Error::Scenario(e.to_string()))?;
    write("scenario.toml", text)?;
    Ok(dir.join("scenario.toml"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SynthParams};

    #[test]
    fn features_csv() {
        let (d, f) = parse_features("instance_id,f1,f2\na,1,2\nb, 3.5 ,-1\n").unwrap();
        assert_eq!(d, 2);
        assert_eq!(f["b"], vec![3.5, -1.0]);
        assert!(parse_features("id,f1\na,1\n").is_err());
        assert!(parse_features("instance_id,f1\na,1,2\n").is_err());
        assert!(parse_features("instance_id,f1\na,x\n").is_err());
    }

    #[test]
    fn synthetic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = generate(&SynthParams {
            instances: 12,
            ..SynthParams::default()
        })
        .unwrap();
        let path = write_synthetic(dir.path(), "t", &g, 4, Defaults::default()).unwrap();
        let loaded = load_scenario(&path).unwrap();
        assert_eq!(loaded.scenario.train_instances, g.train);
        assert_eq!(loaded.scenario.test_instances, g.test);
        assert_eq!(loaded.scenario.space, g.space);
        assert_eq!(loaded.scenario.k, 4);
        assert_eq!(loaded.backend.label(), "synthetic");
    }

    #[test]
    fn missing_features_name_the_instance() {
        let dir = tempfile::tempdir().unwrap();
        let g = generate(&SynthParams {
            instances: 6,
            ..SynthParams::default()
        })
        .unwrap();
        let path = write_synthetic(dir.path(), "t", &g, 2, Defaults::default()).unwrap();
        let csv = fs::read_to_string(dir.path().join("features.csv")).unwrap();
        let trimmed: String = csv.lines().filter(|l| !l.starts_with("train0003")).map(|l| format!("{l}\n")).collect();
        fs::write(dir.path().join("features.csv"), trimmed).unwrap();
        let err = load_scenario(&path).err().unwrap().to_string();
        assert!(err.contains("train0003"), "{err}");
    }
}
