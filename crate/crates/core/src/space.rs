//! Configuration spaces: typed parameters, membership conditions and an
//! optional top-level solver selector.
//!
//! The text format follows the usual PCS conventions:
//!
//! ```text
//! # comment
//! alpha    real        [0, 1]      [0.5]
//! restarts integer     [1, 1000]   [10]   log
//! heur     categorical {greedy, lazy, random} [greedy]
//!
//! [conditions]
//! restarts | heur in {greedy, random}
//!
//! [selector]
//! heur
//! ```
//!
//! Legacy PCS lines (`x [0,1] [0.5]l`, `n [1,9] [3]i`, `c {a,b} [a]`) and a
//! `default <v>` form are accepted too. A child with several conditions is
//! active only when every condition holds and every parent is active.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;

/// Encoding slot used for parameters that are inactive in a configuration.
pub const INACTIVE: f64 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Int(i64),
    Cat(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Real(v) => write!(f, "{v}"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Cat(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Real { lower: f64, upper: f64, log: bool },
    Integer { lower: i64, upper: i64, log: bool },
    Categorical(Vec<String>),
}

impl Domain {
    pub fn contains(&self, value: &Value) -> bool {
        match (self, value) {
            (Domain::Real { lower, upper, .. }, Value::Real(v)) => v.is_finite() && lower <= v && v <= upper,
            (Domain::Integer { lower, upper, .. }, Value::Int(v)) => lower <= v && v <= upper,
            (Domain::Categorical(values), Value::Cat(v)) => values.contains(v),
            _ => false,
        }
    }

    /// Parses a textual value according to this domain's type.
    pub fn parse_value(&self, text: &str) -> Result<Value> {
        let text = text.trim();
        let value = match self {
            Domain::Real { .. } => Value::Real(
                text.parse()
                    .map_err(|_| Error::Parse(format!("`{text}` is not a real number")))?,
            ),
            Domain::Integer { .. } => Value::Int(parse_int(text)?),
            Domain::Categorical(_) => Value::Cat(text.to_string()),
        };
        Ok(value)
    }

    /// Number of distinct values, `None` for real domains.
    pub fn cardinality(&self) -> Option<u128> {
        match self {
            Domain::Real { .. } => None,
            Domain::Integer { lower, upper, .. } => Some((upper - lower) as u128 + 1),
            Domain::Categorical(v) => Some(v.len() as u128),
        }
    }
}

fn parse_int(text: &str) -> Result<i64> {
    if let Ok(v) = text.parse::<i64>() {
        return Ok(v);
    }
    // Accept integral reals such as `10.0`.
    match text.parse::<f64>() {
        Ok(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => Ok(f as i64),
        _ => Err(Error::Parse(format!("`{text}` is not an integer"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub domain: Domain,
    pub default: Value,
}

impl Parameter {
    pub fn real(name: &str, lower: f64, upper: f64, default: f64, log: bool) -> Self {
        Parameter {
            name: name.into(),
            domain: Domain::Real { lower, upper, log },
            default: Value::Real(default),
        }
    }

    pub fn integer(name: &str, lower: i64, upper: i64, default: i64, log: bool) -> Self {
        Parameter {
            name: name.into(),
            domain: Domain::Integer { lower, upper, log },
            default: Value::Int(default),
        }
    }

    pub fn categorical(name: &str, values: &[&str], default: &str) -> Self {
        Parameter {
            name: name.into(),
            domain: Domain::Categorical(values.iter().map(|s| s.to_string()).collect()),
            default: Value::Cat(default.into()),
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        match &self.domain {
            Domain::Real { lower, upper, log } => {
                if !(lower < upper) {
                    return Err(format!("`{}`: lower bound must be below upper bound", self.name));
                }
                if *log && *lower <= 0.0 {
                    return Err(format!("`{}`: log scale needs a positive lower bound", self.name));
                }
            }
            Domain::Integer { lower, upper, log } => {
                if lower >= upper {
                    return Err(format!("`{}`: lower bound must be below upper bound", self.name));
                }
                if *log && *lower <= 0 {
                    return Err(format!("`{}`: log scale needs a positive lower bound", self.name));
                }
            }
            Domain::Categorical(values) => {
                if values.is_empty() {
                    return Err(format!("`{}`: empty categorical domain", self.name));
                }
                let unique: BTreeSet<_> = values.iter().collect();
                if unique.len() != values.len() {
                    return Err(format!("`{}`: duplicate categorical value", self.name));
                }
            }
        }
        if !self.domain.contains(&self.default) {
            return Err(format!("`{}`: default {} outside domain", self.name, self.default));
        }
        if !valid_name(&self.name) {
            return Err(format!("`{}`: invalid parameter name", self.name));
        }
        if let Domain::Categorical(values) = &self.domain {
            if let Some(v) = values.iter().find(|v| !valid_name(v)) {
                return Err(format!("`{}`: invalid categorical value `{v}`", self.name));
            }
        }
        Ok(())
    }

    /// Position of `value` in `[0, 1]` (numeric) or its category code.
    pub fn encode(&self, value: &Value) -> f64 {
        match (&self.domain, value) {
            (Domain::Real { lower, upper, log }, Value::Real(v)) => normalize(*v, *lower, *upper, *log),
            (Domain::Integer { lower, upper, log }, Value::Int(v)) => {
                normalize(*v as f64, *lower as f64, *upper as f64, *log)
            }
            (Domain::Categorical(values), Value::Cat(v)) => {
                values.iter().position(|x| x == v).map_or(INACTIVE, |p| p as f64)
            }
            _ => INACTIVE,
        }
    }

    /// A nearby value, never equal to `current` for categorical domains.
    fn step<R: Rng>(&self, current: &Value, rng: &mut R) -> Value {
        let jitter = |u: f64, rng: &mut R| -> f64 {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            (u + 0.2 * z).clamp(0.0, 1.0)
        };
        match (&self.domain, current) {
            (Domain::Categorical(values), Value::Cat(v)) => {
                let others: Vec<&String> = values.iter().filter(|x| *x != v).collect();
                match others.len() {
                    0 => current.clone(),
                    n => Value::Cat(others[rng.random_range(0..n)].clone()),
                }
            }
            (Domain::Real { lower, upper, log }, Value::Real(_)) => {
                let u = jitter(self.encode(current), rng);
                Value::Real(denormalize(u, *lower, *upper, *log).clamp(*lower, *upper))
            }
            (Domain::Integer { lower, upper, log }, Value::Int(_)) => {
                let u = jitter(self.encode(current), rng);
                let v = denormalize(u, *lower as f64, *upper as f64, *log).round() as i64;
                Value::Int(v.clamp(*lower, *upper))
            }
            _ => self.sample(rng),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Value {
        match &self.domain {
            Domain::Real { lower, upper, log } => {
                let u: f64 = rng.random();
                let v = if *log {
                    (lower.ln() + u * (upper.ln() - lower.ln())).exp()
                } else {
                    lower + u * (upper - lower)
                };
                Value::Real(v.clamp(*lower, *upper))
            }
            Domain::Integer { lower, upper, log } => {
                if *log {
                    let lo = (*lower as f64).ln();
                    let hi = ((*upper + 1) as f64).ln();
                    let u: f64 = rng.random();
                    let v = (lo + u * (hi - lo)).exp().floor() as i64;
                    Value::Int(v.clamp(*lower, *upper))
                } else {
                    Value::Int(rng.random_range(*lower..=*upper))
                }
            }
            Domain::Categorical(values) => Value::Cat(values[rng.random_range(0..values.len())].clone()),
        }
    }
}

fn normalize(v: f64, lower: f64, upper: f64, log: bool) -> f64 {
    if log {
        (v.ln() - lower.ln()) / (upper.ln() - lower.ln())
    } else {
        (v - lower) / (upper - lower)
    }
}

fn denormalize(u: f64, lower: f64, upper: f64, log: bool) -> f64 {
    if log {
        (lower.ln() + u * (upper.ln() - lower.ln())).exp()
    } else {
        lower + u * (upper - lower)
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| !c.is_whitespace() && !matches!(c, '=' | ',' | '{' | '}' | '[' | ']' | '|' | '#'))
}

/// `child` is active only while `parent` is active and takes one of `values`.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub child: String,
    pub parent: String,
    pub values: Vec<Value>,
}

/// Kind of an encoded column, used by the performance model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Numeric,
    /// Category codes `0..n`; the inactive sentinel is mapped to code `n`.
    Categorical(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpace {
    parameters: Vec<Parameter>,
    conditions: Vec<Condition>,
    selector: Option<String>,
    index: HashMap<String, usize>,
    // Parameter indices, parents before children.
    topo: Vec<usize>,
    // Per parameter: indices into `conditions` where it is the child.
    conditions_of: Vec<Vec<usize>>,
}

impl ParameterSpace {
    pub fn new(
        parameters: Vec<Parameter>,
        conditions: Vec<Condition>,
        selector: Option<String>,
    ) -> Result<Self> {
        build_space(parameters, conditions, selector, &|_| 0)
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.parameters
    }

    pub fn conditions(&self) -> &[Condition] {
        &self.conditions
    }

    pub fn selector(&self) -> Option<&str> {
        self.selector.as_deref()
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.parameters[i])
    }

    pub fn len(&self) -> usize {
        self.parameters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parameters.is_empty()
    }

    /// Names of parameters without any condition.
    pub fn unconditional(&self) -> Vec<&str> {
        self.parameters
            .iter()
            .enumerate()
            .filter(|(i, _)| self.conditions_of[*i].is_empty())
            .map(|(_, p)| p.name.as_str())
            .collect()
    }

    fn is_active(&self, idx: usize, assignments: &BTreeMap<String, Value>) -> bool {
        self.conditions_of[idx].iter().all(|&c| {
            let cond = &self.conditions[c];
            assignments
                .get(&cond.parent)
                .is_some_and(|v| cond.values.contains(v))
        })
    }

    /// Builds a configuration by visiting parameters parent-first and
    /// asking `pick` for a value of each active one.
    fn build_with(&self, mut pick: impl FnMut(&Parameter) -> Value) -> Configuration {
        let mut assignments = BTreeMap::new();
        for &i in &self.topo {
            if self.is_active(i, &assignments) {
                let p = &self.parameters[i];
                assignments.insert(p.name.clone(), pick(p));
            }
        }
        Configuration::from_assignments(assignments)
    }

    pub fn default_config(&self) -> Configuration {
        self.build_with(|p| p.default.clone())
    }

    /// Draws a configuration uniformly over the active structure.
    pub fn sample(&self, seed: u64) -> Configuration {
        self.sample_with(&mut seed::rng(seed))
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> Configuration {
        self.build_with(|p| p.sample(rng))
    }

    /// Changes one active parameter of `config`: a categorical one to another
    /// value, a numeric one by a Gaussian step of 0.2 in its normalized
    /// scale. Parameters activated by the change are sampled.
    pub fn neighbour<R: Rng>(&self, config: &Configuration, rng: &mut R) -> Configuration {
        let active: Vec<usize> = self
            .topo
            .iter()
            .copied()
            .filter(|&i| config.assignments.contains_key(&self.parameters[i].name))
            .filter(|&i| !matches!(&self.parameters[i].domain, Domain::Categorical(v) if v.len() < 2))
            .collect();
        let Some(&target) = active.get(rng.random_range(0..active.len().max(1))) else {
            return config.clone();
        };
        let changed = self.parameters[target].step(&config.assignments[&self.parameters[target].name], rng);
        let name = &self.parameters[target].name;
        self.build_with(|p| {
            if &p.name == name {
                changed.clone()
            } else {
                config.assignments.get(&p.name).cloned().unwrap_or_else(|| p.sample(rng))
            }
        })
    }

    /// Checks that exactly the active parameters are assigned, with domain values.
    pub fn validate(&self, config: &Configuration) -> Result<()> {
        for name in config.assignments.keys() {
            if !self.index.contains_key(name) {
                return Err(Error::InvalidConfiguration(format!("unknown parameter `{name}`")));
            }
        }
        for &i in &self.topo {
            let p = &self.parameters[i];
            let active = self.is_active(i, &config.assignments);
            match (active, config.assignments.get(&p.name)) {
                (true, Some(v)) if p.domain.contains(v) => {}
                (true, Some(v)) => {
                    return Err(Error::InvalidConfiguration(format!(
                        "`{}={v}` outside its domain",
                        p.name
                    )))
                }
                (true, None) => {
                    return Err(Error::InvalidConfiguration(format!(
                        "active parameter `{}` unassigned",
                        p.name
                    )))
                }
                (false, Some(_)) => {
                    return Err(Error::InvalidConfiguration(format!(
                        "inactive parameter `{}` assigned",
                        p.name
                    )))
                }
                (false, None) => {}
            }
        }
        Ok(())
    }

    /// Parses the `name=value ...` serialization of a configuration.
    pub fn parse_config(&self, text: &str) -> Result<Configuration> {
        let mut assignments = BTreeMap::new();
        for token in text.split_whitespace() {
            let (name, value) = token
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected name=value, got `{token}`")))?;
            let p = self
                .parameter(name)
                .ok_or_else(|| Error::InvalidConfiguration(format!("unknown parameter `{name}`")))?;
            assignments.insert(name.to_string(), p.domain.parse_value(value)?);
        }
        let config = Configuration::from_assignments(assignments);
        self.validate(&config)?;
        Ok(config)
    }

    /// Column kinds of [`encode_config`](Self::encode_config) output, without features.
    pub fn column_kinds(&self) -> Vec<ColumnKind> {
        self.parameters
            .iter()
            .map(|p| match &p.domain {
                Domain::Categorical(v) => ColumnKind::Categorical(v.len()),
                _ => ColumnKind::Numeric,
            })
            .collect()
    }

    /// Fixed-length numeric encoding of `config`, followed by `features`.
    pub fn encode_config(
        &self,
        config: &Configuration,
        features: &[f64],
        feature_dimension: usize,
    ) -> Result<Vec<f64>> {
        if features.len() != feature_dimension {
            return Err(Error::FeatureDimension {
                expected: feature_dimension,
                actual: features.len(),
            });
        }
        let mut row = Vec::with_capacity(self.parameters.len() + features.len());
        self.encode_into(config, &mut row);
        row.extend_from_slice(features);
        Ok(row)
    }

    pub(crate) fn encode_into(&self, config: &Configuration, row: &mut Vec<f64>) {
        for p in &self.parameters {
            row.push(config.get(&p.name).map_or(INACTIVE, |v| p.encode(v)));
        }
    }

    /// All configurations of a space without real parameters, or `None` when
    /// the space is continuous or larger than `limit`.
    pub fn enumerate(&self, limit: usize) -> Option<Vec<Configuration>> {
        if self.parameters.iter().any(|p| matches!(p.domain, Domain::Real { .. })) {
            return None;
        }
        let mut out = Vec::new();
        let mut partial = BTreeMap::new();
        if self.enumerate_from(0, &mut partial, &mut out, limit) {
            Some(out)
        } else {
            None
        }
    }

    fn enumerate_from(
        &self,
        pos: usize,
        partial: &mut BTreeMap<String, Value>,
        out: &mut Vec<Configuration>,
        limit: usize,
    ) -> bool {
        if pos == self.topo.len() {
            if out.len() >= limit {
                return false;
            }
            out.push(Configuration::from_assignments(partial.clone()));
            return true;
        }
        let i = self.topo[pos];
        if !self.is_active(i, partial) {
            return self.enumerate_from(pos + 1, partial, out, limit);
        }
        let p = &self.parameters[i];
        let values: Vec<Value> = match &p.domain {
            Domain::Integer { lower, upper, .. } => {
                if (upper - lower) as usize >= limit {
                    return false;
                }
                (*lower..=*upper).map(Value::Int).collect()
            }
            Domain::Categorical(v) => v.iter().cloned().map(Value::Cat).collect(),
            Domain::Real { .. } => unreachable!("checked by enumerate"),
        };
        for v in values {
            partial.insert(p.name.clone(), v);
            if !self.enumerate_from(pos + 1, partial, out, limit) {
                return false;
            }
        }
        partial.remove(&p.name);
        true
    }

    /// `k` disjoint copies of this space; copy `i` (1-based) prefixes every
    /// name with `c{i}.`. Conditions never cross copies.
    pub fn compose_product_space(&self, k: usize) -> Result<ParameterSpace> {
        if k == 0 {
            return Err(Error::invalid("product space needs k >= 1"));
        }
        let mut parameters = Vec::with_capacity(self.parameters.len() * k);
        let mut conditions = Vec::with_capacity(self.conditions.len() * k);
        for i in 1..=k {
            let prefix = copy_prefix(i);
            parameters.extend(self.parameters.iter().map(|p| Parameter {
                name: format!("{prefix}{}", p.name),
                ..p.clone()
            }));
            conditions.extend(self.conditions.iter().map(|c| Condition {
                child: format!("{prefix}{}", c.child),
                parent: format!("{prefix}{}", c.parent),
                values: c.values.clone(),
            }));
        }
        ParameterSpace::new(parameters, conditions, None)
    }

    /// Joins component configurations of this space into one configuration
    /// of `compose_product_space(components.len())`.
    pub fn join_product(&self, components: &[Configuration]) -> Configuration {
        let mut assignments = BTreeMap::new();
        for (i, c) in components.iter().enumerate() {
            let prefix = copy_prefix(i + 1);
            for (name, v) in &c.assignments {
                assignments.insert(format!("{prefix}{name}"), v.clone());
            }
        }
        Configuration::from_assignments(assignments)
    }

    /// Splits a product-space configuration back into `k` components.
    pub fn split_product(&self, config: &Configuration, k: usize) -> Result<Vec<Configuration>> {
        let mut parts = vec![BTreeMap::new(); k];
        for (name, v) in &config.assignments {
            let (copy, rest) = name
                .strip_prefix('c')
                .and_then(|s| s.split_once('.'))
                .and_then(|(i, rest)| i.parse::<usize>().ok().map(|i| (i, rest)))
                .ok_or_else(|| Error::InvalidConfiguration(format!("`{name}` is not a product parameter")))?;
            if copy == 0 || copy > k {
                return Err(Error::InvalidConfiguration(format!("`{name}` refers to copy {copy} of {k}")));
            }
            parts[copy - 1].insert(rest.to_string(), v.clone());
        }
        parts
            .into_iter()
            .map(|a| {
                let c = Configuration::from_assignments(a);
                self.validate(&c).map(|_| c)
            })
            .collect()
    }

    /// Composes sub-spaces under a categorical selector whose value
    /// activates exactly one of them. Parameters of sub-space `label` are
    /// renamed `label.name`.
    pub fn compose_with_selector(selector: &str, parts: &[(&str, &ParameterSpace)]) -> Result<ParameterSpace> {
        if parts.is_empty() {
            return Err(Error::invalid("selector composition needs at least one sub-space"));
        }
        let labels: Vec<&str> = parts.iter().map(|(l, _)| *l).collect();
        let mut parameters = vec![Parameter::categorical(selector, &labels, labels[0])];
        let mut conditions = Vec::new();
        for (label, space) in parts {
            let rename = |n: &str| format!("{label}.{n}");
            for (i, p) in space.parameters.iter().enumerate() {
                parameters.push(Parameter {
                    name: rename(&p.name),
                    ..p.clone()
                });
                if space.conditions_of[i].is_empty() {
                    conditions.push(Condition {
                        child: rename(&p.name),
                        parent: selector.to_string(),
                        values: vec![Value::Cat(label.to_string())],
                    });
                }
            }
            conditions.extend(space.conditions.iter().map(|c| Condition {
                child: rename(&c.child),
                parent: rename(&c.parent),
                values: c.values.clone(),
            }));
        }
        ParameterSpace::new(parameters, conditions, Some(selector.to_string()))
    }
}

fn copy_prefix(i: usize) -> String {
    format!("c{i}.")
}

fn build_space(
    parameters: Vec<Parameter>,
    conditions: Vec<Condition>,
    selector: Option<String>,
    line_of: &dyn Fn(&str) -> usize,
) -> Result<ParameterSpace> {
    let err = |name: &str, message: String| Error::SpaceParse {
        line: line_of(name),
        message,
    };
    let mut index = HashMap::new();
    for (i, p) in parameters.iter().enumerate() {
        p.check().map_err(|m| err(&p.name, m))?;
        if index.insert(p.name.clone(), i).is_some() {
            return Err(err(&p.name, format!("duplicate parameter `{}`", p.name)));
        }
    }
    let mut conditions_of = vec![Vec::new(); parameters.len()];
    for (ci, c) in conditions.iter().enumerate() {
        let key = format!("{}|", c.child);
        let child = *index
            .get(&c.child)
            .ok_or_else(|| err(&key, format!("condition on unknown parameter `{}`", c.child)))?;
        let parent = *index
            .get(&c.parent)
            .ok_or_else(|| err(&key, format!("condition refers to unknown parent `{}`", c.parent)))?;
        if child == parent {
            return Err(err(&key, format!("`{}` conditioned on itself", c.child)));
        }
        if let Some(v) = c.values.iter().find(|v| !parameters[parent].domain.contains(v)) {
            return Err(err(&key, format!("activating value {v} outside domain of `{}`", c.parent)));
        }
        conditions_of[child].push(ci);
    }
    // Kahn's algorithm; ties resolved by declaration order.
    let mut indegree: Vec<usize> = conditions_of.iter().map(Vec::len).collect();
    let mut topo = Vec::with_capacity(parameters.len());
    let mut ready: BTreeSet<usize> = (0..parameters.len()).filter(|&i| indegree[i] == 0).collect();
    while let Some(i) = ready.pop_first() {
        topo.push(i);
        for c in &conditions {
            if index[&c.parent] == i {
                let child = index[&c.child];
                indegree[child] -= 1;
                if indegree[child] == 0 {
                    ready.insert(child);
                }
            }
        }
    }
    if topo.len() != parameters.len() {
        let stuck = (0..parameters.len()).find(|i| !topo.contains(i)).unwrap();
        let name = &parameters[stuck].name;
        return Err(err(&format!("{name}|"), format!("conditionality cycle through `{name}`")));
    }
    if let Some(sel) = &selector {
        let i = *index
            .get(sel)
            .ok_or_else(|| err("[selector]", format!("selector `{sel}` is not a parameter")))?;
        if !matches!(parameters[i].domain, Domain::Categorical(_)) || !conditions_of[i].is_empty() {
            return Err(err(
                "[selector]",
                format!("selector `{sel}` must be an unconditional categorical parameter"),
            ));
        }
    }
    Ok(ParameterSpace {
        parameters,
        conditions,
        selector,
        index,
        topo,
        conditions_of,
    })
}

impl FromStr for ParameterSpace {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        parse_space(text)
    }
}

impl fmt::Display for ParameterSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.parameters {
            match &p.domain {
                Domain::Real { lower, upper, log } => {
                    write!(f, "{} real [{lower}, {upper}] [{}]", p.name, p.default)?;
                    if *log {
                        f.write_str(" log")?;
                    }
                }
                Domain::Integer { lower, upper, log } => {
                    write!(f, "{} integer [{lower}, {upper}] [{}]", p.name, p.default)?;
                    if *log {
                        f.write_str(" log")?;
                    }
                }
                Domain::Categorical(values) => {
                    write!(f, "{} categorical {{{}}} [{}]", p.name, values.join(", "), p.default)?;
                }
            }
            writeln!(f)?;
        }
        if !self.conditions.is_empty() {
            writeln!(f, "\n[conditions]")?;
            for c in &self.conditions {
                let values: Vec<String> = c.values.iter().map(Value::to_string).collect();
                writeln!(f, "{} | {} in {{{}}}", c.child, c.parent, values.join(", "))?;
            }
        }
        if let Some(sel) = &self.selector {
            writeln!(f, "\n[selector]\n{sel}")?;
        }
        Ok(())
    }
}

/// Parses the space-definition text format described in the module docs.
pub fn parse_space(text: &str) -> Result<ParameterSpace> {
    #[derive(PartialEq)]
    enum Section {
        Parameters,
        Conditions,
        Selector,
    }
    let mut section = Section::Parameters;
    let mut parameters = Vec::new();
    let mut raw_conditions: Vec<(usize, String, String, Vec<String>)> = Vec::new();
    let mut selector = None;
    let mut lines: HashMap<String, usize> = HashMap::new();

    for (n, raw) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| Error::SpaceParse { line: lineno, message };
        match line.to_ascii_lowercase().as_str() {
            "[parameters]" => {
                section = Section::Parameters;
                continue;
            }
            "[conditions]" => {
                section = Section::Conditions;
                continue;
            }
            "[selector]" => {
                section = Section::Selector;
                continue;
            }
            _ => {}
        }
        if section == Section::Selector {
            if selector.is_some() {
                return Err(perr("only one selector may be declared".into()));
            }
            selector = Some(line.to_string());
            lines.insert("[selector]".into(), lineno);
            continue;
        }
        if line.contains('|') {
            let (child, parent, values) = parse_condition_line(line).map_err(perr)?;
            lines.entry(format!("{child}|")).or_insert(lineno);
            raw_conditions.push((lineno, child, parent, values));
            continue;
        }
        if section == Section::Conditions {
            return Err(perr(format!("expected `child | parent in {{...}}`, got `{line}`")));
        }
        let p = parse_parameter_line(line).map_err(perr)?;
        if lines.contains_key(&p.name) {
            return Err(perr(format!("duplicate parameter `{}`", p.name)));
        }
        lines.insert(p.name.clone(), lineno);
        parameters.push(p);
    }

    let by_name: HashMap<&str, &Parameter> = parameters.iter().map(|p| (p.name.as_str(), p)).collect();
    let mut conditions = Vec::with_capacity(raw_conditions.len());
    for (lineno, child, parent, values) in raw_conditions {
        let perr = |message: String| Error::SpaceParse { line: lineno, message };
        if !by_name.contains_key(child.as_str()) {
            return Err(perr(format!("condition on unknown parameter `{child}`")));
        }
        let parent_param = by_name
            .get(parent.as_str())
            .ok_or_else(|| perr(format!("condition refers to unknown parent `{parent}`")))?;
        let values = values
            .iter()
            .map(|v| parent_param.domain.parse_value(v))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| perr(e.to_string()))?;
        conditions.push(Condition { child, parent, values });
    }
    build_space(parameters, conditions, selector, &|key| lines.get(key).copied().unwrap_or(0))
}

fn parse_condition_line(line: &str) -> std::result::Result<(String, String, Vec<String>), String> {
    let (child, rest) = line.split_once('|').expect("caller checked for `|`");
    let child = child.trim();
    let rest = rest.trim();
    let (parent, values) = rest
        .split_once(" in ")
        .ok_or_else(|| format!("expected `parent in {{...}}` after `|`, got `{rest}`"))?;
    let values = values.trim();
    let inner = values
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| format!("activating values must be in braces, got `{values}`"))?;
    let values: Vec<String> = inner
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if values.is_empty() {
        return Err("empty activating value set".into());
    }
    if child.is_empty() || parent.trim().is_empty() {
        return Err("condition needs a child and a parent".into());
    }
    Ok((child.to_string(), parent.trim().to_string(), values))
}

fn take_bracketed(s: &str, open: char, close: char) -> Option<(&str, &str)> {
    let s = s.trim_start();
    let rest = s.strip_prefix(open)?;
    let end = rest.find(close)?;
    Some((&rest[..end], &rest[end + close.len_utf8()..]))
}

fn parse_parameter_line(line: &str) -> std::result::Result<Parameter, String> {
    let (name, mut rest) = line
        .split_once(char::is_whitespace)
        .ok_or_else(|| format!("parameter line needs a domain: `{line}`"))?;
    rest = rest.trim_start();
    let mut kind = None;
    for kw in ["real", "integer", "categorical", "ordinal"] {
        if let Some(r) = rest.strip_prefix(kw) {
            if r.starts_with(char::is_whitespace) || r.starts_with('[') || r.starts_with('{') {
                kind = Some(kw);
                rest = r.trim_start();
                break;
            }
        }
    }
    if kind == Some("ordinal") {
        return Err("ordinal parameters are not supported".into());
    }

    let (domain_text, after_domain, categorical) = if let Some((inner, r)) = take_bracketed(rest, '{', '}') {
        (inner, r, true)
    } else if let Some((inner, r)) = take_bracketed(rest, '[', ']') {
        (inner, r, false)
    } else {
        return Err(format!("`{name}`: missing domain"));
    };
    if categorical && matches!(kind, Some("real") | Some("integer")) {
        return Err(format!("`{name}`: numeric parameter with a value list"));
    }
    if !categorical && kind == Some("categorical") {
        return Err(format!("`{name}`: categorical parameter needs `{{...}}`"));
    }

    let after_domain = after_domain.trim_start();
    let (default_text, flags) = if let Some((inner, r)) = take_bracketed(after_domain, '[', ']') {
        (inner.trim().to_string(), r.trim().to_string())
    } else if let Some(r) = after_domain.strip_prefix("default") {
        let r = r.trim_start();
        let (v, f) = r.split_once(char::is_whitespace).unwrap_or((r, ""));
        (v.trim().to_string(), f.trim().to_string())
    } else {
        return Err(format!("`{name}`: missing default"));
    };
    if default_text.is_empty() {
        return Err(format!("`{name}`: empty default"));
    }

    let mut log = false;
    let mut legacy_int = false;
    for flag in flags.split_whitespace() {
        match flag {
            "log" | "l" => log = true,
            "i" => legacy_int = true,
            "il" | "li" => {
                legacy_int = true;
                log = true;
            }
            other => return Err(format!("`{name}`: unexpected token `{other}`")),
        }
    }

    if categorical {
        if log || legacy_int {
            return Err(format!("`{name}`: categorical parameters take no flags"));
        }
        let values: Vec<String> = domain_text
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        return Ok(Parameter {
            name: name.to_string(),
            domain: Domain::Categorical(values),
            default: Value::Cat(default_text),
        });
    }

    let bounds: Vec<&str> = domain_text.split(',').map(str::trim).collect();
    if bounds.len() != 2 {
        return Err(format!("`{name}`: numeric domain needs `[lower, upper]`"));
    }
    let integer = kind == Some("integer") || legacy_int;
    let domain = if integer {
        let lo = parse_int(bounds[0]).map_err(|e| format!("`{name}`: {e}"))?;
        let hi = parse_int(bounds[1]).map_err(|e| format!("`{name}`: {e}"))?;
        Domain::Integer { lower: lo, upper: hi, log }
    } else {
        let lo: f64 = bounds[0].parse().map_err(|_| format!("`{name}`: bad lower bound"))?;
        let hi: f64 = bounds[1].parse().map_err(|_| format!("`{name}`: bad upper bound"))?;
        Domain::Real { lower: lo, upper: hi, log }
    };
    let default = domain
        .parse_value(&default_text)
        .map_err(|e| format!("`{name}`: {e}"))?;
    Ok(Parameter {
        name: name.to_string(),
        domain,
        default,
    })
}

/// Stable identifier of a configuration: a hash of its canonical text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConfigId(pub u64);

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for ConfigId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        u64::from_str_radix(s, 16)
            .map(ConfigId)
            .map_err(|_| Error::Parse(format!("bad config id `{s}`")))
    }
}

impl Serialize for ConfigId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConfigId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One point of a configuration space. Only active parameters are assigned.
#[derive(Debug, Clone)]
pub struct Configuration {
    assignments: BTreeMap<String, Value>,
    id: ConfigId,
}

impl Configuration {
    /// Wraps raw assignments. Validity is checked by [`ParameterSpace::validate`].
    pub fn from_assignments(assignments: BTreeMap<String, Value>) -> Self {
        let text = canonical(&assignments);
        let digest = Sha256::digest(text.as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        Configuration {
            assignments,
            id: ConfigId(u64::from_be_bytes(head)),
        }
    }

    pub fn id(&self) -> ConfigId {
        self.id
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.assignments.get(name)
    }

    pub fn assignments(&self) -> &BTreeMap<String, Value> {
        &self.assignments
    }

    /// Returns a copy with `name` set to `value` (no validation).
    pub fn with(&self, name: &str, value: Value) -> Configuration {
        let mut a = self.assignments.clone();
        a.insert(name.to_string(), value);
        Configuration::from_assignments(a)
    }
}

fn canonical(assignments: &BTreeMap<String, Value>) -> String {
    let parts: Vec<String> = assignments.iter().map(|(k, v)| format!("{k}={v}")).collect();
    parts.join(" ")
}

impl PartialEq for Configuration {
    fn eq(&self, other: &Self) -> bool {
        self.assignments == other.assignments
    }
}

impl fmt::Display for Configuration {
    /// `name=value` pairs sorted by name, space separated.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonical(&self.assignments))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SOLVER: &str = "\
# toy solver
heur categorical {greedy, lazy, random} [greedy]
alpha real [0, 1] [0.5]
restarts integer [1, 1000] [10] log
depth integer [1, 8] [2]

[conditions]
restarts | heur in {greedy, random}
depth | restarts in {1, 2, 3}
";

    fn space() -> ParameterSpace {
        SOLVER.parse().unwrap()
    }

    #[test]
    fn parses_single_real_parameter() {
        let s = parse_space("alpha [0,1] default 0.5").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.parameter("alpha").unwrap().default, Value::Real(0.5));
        let s = parse_space("alpha real [0, 1] [0.5]").unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn legacy_flags() {
        let s = parse_space("n [1, 100] [10]il\nx [0.1, 10] [1]l").unwrap();
        assert_eq!(
            s.parameter("n").unwrap().domain,
            Domain::Integer { lower: 1, upper: 100, log: true }
        );
        assert!(matches!(s.parameter("x").unwrap().domain, Domain::Real { log: true, .. }));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_space("a real [0,1] [0.5]\n[conditions]\nb | a in {0.5}").unwrap_err();
        assert!(matches!(err, Error::SpaceParse { line: 3, .. }), "{err}");
        let err = parse_space("a real [0,1] [0.5]\nb categorical {x} [x]\n\n[conditions]\nb | missing in {1}")
            .unwrap_err();
        assert!(matches!(err, Error::SpaceParse { line: 5, .. }), "{err}");
        let err = parse_space("a real [0,1] [0.5]\na real [0,1] [0.5]").unwrap_err();
        assert!(matches!(err, Error::SpaceParse { line: 2, .. }), "{err}");
        let err = parse_space("# c\na real [0,1] [1.5]").unwrap_err();
        assert!(matches!(err, Error::SpaceParse { line: 2, .. }), "{err}");
        assert!(parse_space("c categorical {} [x]").is_err());
        assert!(parse_space("a real [1,0] [0.5]").is_err());
    }

    #[test]
    fn rejects_cycles() {
        let text = "a categorical {x,y} [x]\nb categorical {x,y} [x]\n[conditions]\na | b in {x}\nb | a in {x}";
        assert!(matches!(parse_space(text), Err(Error::SpaceParse { .. })));
    }

    #[test]
    fn display_round_trips() {
        let s = space();
        let again: ParameterSpace = s.to_string().parse().unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn default_respects_activation() {
        let s = space();
        let d = s.default_config();
        s.validate(&d).unwrap();
        assert!(d.get("restarts").is_some());
        // restarts=10 does not activate depth
        assert!(d.get("depth").is_none());
    }

    #[test]
    fn selector_composition_has_only_selector_unconditional() {
        let a = parse_space("x real [0,1] [0.5]\ny categorical {p,q} [p]\nz integer [1,5] [1]\n[conditions]\nz | y in {q}")
            .unwrap();
        let b = parse_space("w integer [0,10] [3]").unwrap();
        let c = parse_space("u categorical {on,off} [on]\nv real [1,100] [10] log").unwrap();
        let composed = ParameterSpace::compose_with_selector("solver", &[("a", &a), ("b", &b), ("c", &c)]).unwrap();
        assert_eq!(composed.unconditional(), vec!["solver"]);
        assert_eq!(composed.selector(), Some("solver"));
        assert_eq!(composed.len(), 1 + 3 + 1 + 2);
        let round: ParameterSpace = composed.to_string().parse().unwrap();
        assert_eq!(round, composed);
        for seed in 0..200 {
            let cfg = composed.sample(seed);
            let chosen = match cfg.get("solver").unwrap() {
                Value::Cat(s) => s.clone(),
                _ => unreachable!(),
            };
            for name in cfg.assignments().keys().filter(|n| *n != "solver") {
                assert!(name.starts_with(&format!("{chosen}.")), "{name} active under {chosen}");
            }
            if chosen == "a" {
                let nested = cfg.get("a.y") == Some(&Value::Cat("q".into()));
                assert_eq!(cfg.get("a.z").is_some(), nested);
            }
        }
    }

    #[test]
    fn categorical_sampling_is_uniform() {
        let s = parse_space("c categorical {a, b} [a]").unwrap();
        let n = 10_000;
        let a = (0..n)
            .filter(|&seed| s.sample(seed) .get("c") == Some(&Value::Cat("a".into())))
            .count();
        let freq = a as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 0.05, "freq {freq}");
    }

    #[test]
    fn single_parameter_always_assigned() {
        let s = parse_space("x integer [0, 3] [0]").unwrap();
        for seed in 0..50 {
            assert!(s.sample(seed).get("x").is_some());
        }
    }

    #[test]
    fn unsatisfiable_child_never_appears() {
        let s = parse_space("p categorical {a, b} [a]\nq categorical {x} [x]\nchild real [0,1] [0]\n[conditions]\nchild | q in {x}\nchild | p in {a}\nq | p in {b}")
            .unwrap();
        for seed in 0..500 {
            assert!(s.sample(seed).get("child").is_none());
        }
    }

    #[test]
    fn encoding_examples() {
        let s = parse_space("x real [0, 100] [0]").unwrap();
        let c = s.parse_config("x=25").unwrap();
        assert_eq!(s.encode_config(&c, &[], 0).unwrap(), vec![0.25]);
        let s = space();
        let c1 = s.parse_config("alpha=0.5 heur=lazy").unwrap();
        let c2 = s.parse_config("alpha=0.1 heur=lazy").unwrap();
        let e1 = s.encode_config(&c1, &[7.0], 1).unwrap();
        let e2 = s.encode_config(&c2, &[7.0], 1).unwrap();
        assert_eq!(e1[2], INACTIVE);
        assert_eq!(e1[2], e2[2]);
        assert_eq!(e1[4], 7.0);
        assert!(matches!(
            s.encode_config(&c1, &[1.0, 2.0], 1),
            Err(Error::FeatureDimension { expected: 1, actual: 2 })
        ));
    }

    #[test]
    fn log_encoding_in_log_space() {
        let s = parse_space("x real [1, 100] [10] log").unwrap();
        let c = s.parse_config("x=10").unwrap();
        let e = s.encode_config(&c, &[], 0).unwrap();
        assert!((e[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn distinct_configs_encode_distinctly() {
        // Exhaustive over a small conditional space.
        let s = parse_space("a categorical {p, q, r} [p]\nb integer [0, 4] [0]\n[conditions]\nb | a in {q, r}").unwrap();
        let all = s.enumerate(1000).unwrap();
        assert_eq!(all.len(), 1 + 5 + 5);
        for (i, x) in all.iter().enumerate() {
            for y in &all[i + 1..] {
                assert_ne!(
                    s.encode_config(x, &[], 0).unwrap(),
                    s.encode_config(y, &[], 0).unwrap()
                );
            }
        }
    }

    #[test]
    fn product_space() {
        let s = parse_space("a real [0,1] [0]\nb integer [0,3] [0]\nc categorical {x,y} [x]").unwrap();
        let p = s.compose_product_space(8).unwrap();
        assert_eq!(p.len(), 24);
        let comps: Vec<Configuration> = (0..8).map(|i| s.sample(i)).collect();
        let joined = s.join_product(&comps);
        p.validate(&joined).unwrap();
        assert_eq!(s.split_product(&joined, 8).unwrap(), comps);

        let six = parse_space("h categorical {h0,h1,h2,h3,h4,h5} [h0]").unwrap();
        assert_eq!(six.enumerate(100).unwrap().len(), 6);
        assert_eq!(six.compose_product_space(2).unwrap().enumerate(100).unwrap().len(), 36);
    }

    #[test]
    fn product_keeps_conditions_within_copies() {
        let s = space();
        let p = s.compose_product_space(3).unwrap();
        for c in p.conditions() {
            let copy = |n: &str| n.split_once('.').unwrap().0.to_string();
            assert_eq!(copy(&c.child), copy(&c.parent));
        }
        for seed in 0..100 {
            let cfg = p.sample(seed);
            p.validate(&cfg).unwrap();
            for part in s.split_product(&cfg, 3).unwrap() {
                s.validate(&part).unwrap();
            }
        }
    }

    #[test]
    fn config_text_round_trip_and_id() {
        let s = space();
        let c = s.parse_config("heur=greedy restarts=2 depth=5 alpha=0.25").unwrap();
        assert_eq!(c.to_string(), "alpha=0.25 depth=5 heur=greedy restarts=2");
        let same = s.parse_config("restarts=2 alpha=0.25 depth=5 heur=greedy").unwrap();
        assert_eq!(c.id(), same.id());
        assert!(s.parse_config("heur=lazy alpha=0.1 restarts=3").is_err());
        assert!(s.parse_config("heur=greedy alpha=0.1").is_err());
    }

    proptest! {
        #[test]
        fn sampled_configs_satisfy_activation_closure(seed in any::<u64>()) {
            let s = space();
            let c = s.sample(seed);
            prop_assert!(s.validate(&c).is_ok());
            let restarts_active = matches!(c.get("heur"), Some(Value::Cat(h)) if h != "lazy");
            prop_assert_eq!(c.get("restarts").is_some(), restarts_active);
            let depth_active = matches!(c.get("restarts"), Some(Value::Int(r)) if *r <= 3);
            prop_assert_eq!(c.get("depth").is_some(), depth_active);
            let text = c.to_string();
            prop_assert_eq!(s.parse_config(&text).unwrap(), c);
        }

        #[test]
        fn neighbours_are_valid_and_differ_in_one_active_parameter(seed in any::<u64>()) {
            let s = space();
            let mut rng = crate::seed::rng(seed);
            let c = s.sample_with(&mut rng);
            let n = s.neighbour(&c, &mut rng);
            prop_assert!(s.validate(&n).is_ok());
            // Parameters active in both keep their values except the stepped one.
            let changed = c
                .assignments()
                .iter()
                .filter(|(k, v)| n.get(k).is_some_and(|w| w != *v))
                .count();
            prop_assert!(changed <= 1);
        }
    }
}
