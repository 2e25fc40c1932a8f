//! Budget planning: how much solver time each method may spend.
//!
//! Budgets `t_c` and `t_v` are wall-clock allowances for a machine with `k`
//! cores; the plan converts them into the CPU time the whole construction
//! consumes. Units are whatever the caller passes (hours in the examples).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pcit,
    Pcrs,
    Global,
    Clustering,
    Parhydra,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Pcit, Method::Pcrs, Method::Global, Method::Clustering, Method::Parhydra];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pcit => "pcit",
            Method::Pcrs => "pcrs",
            Method::Global => "global",
            Method::Clustering => "clustering",
            Method::Parhydra => "parhydra",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

/// Parameters and derived budgets of one construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub method: Method,
    pub k: usize,
    /// Configuration budget; for PARHYDRA this is the per-iteration `t_c^b`.
    pub t_c: f64,
    /// Validation budget per candidate; for PARHYDRA the per-iteration `t_v^b`.
    pub t_v: f64,
    /// Independent repetitions (construction runs or configurator runs).
    pub repetitions: usize,
    /// Phase count (PCIT).
    pub phases: usize,
    /// Block size (PARHYDRA).
    pub block: usize,
    /// Wall budget of each configure call per phase (PCIT, PCRS) or per
    /// iteration (PARHYDRA, where it is `t_c^b`); a single entry otherwise.
    pub stage_budgets: Vec<f64>,
    /// CPU time of each configure call per stage.
    pub stage_cpu: Vec<f64>,
    /// CPU time one validation of one candidate may use, per stage.
    pub validation_cpu: Vec<f64>,
    pub total_cpu: f64,
}

/// Default repetitions, both for construction and configurator runs.
pub const DEFAULT_REPETITIONS: usize = 10;
/// Default PCIT phase count.
pub const DEFAULT_PHASES: usize = 4;

pub fn plan_budget(method: Method, k: usize, t_c: f64, t_v: f64, r: usize, n: usize, b: usize) -> Result<BudgetPlan> {
    if k == 0 || r == 0 {
        return Err(Error::invalid("k and r must be positive"));
    }
    if !(t_c > 0.0 && t_c.is_finite()) || !(t_v >= 0.0 && t_v.is_finite()) {
        return Err(Error::invalid("t_c must be positive and t_v non-negative"));
    }
    let kf = k as f64;
    let rf = r as f64;
    let flat = |stage_budgets: Vec<f64>, stage_cpu: Vec<f64>| BudgetPlan {
        method,
        k,
        t_c,
        t_v,
        repetitions: r,
        phases: n,
        block: b,
        stage_budgets,
        stage_cpu,
        validation_cpu: vec![kf * t_v],
        total_cpu: rf * kf * (t_c + t_v),
    };
    Ok(match method {
        Method::Pcit => {
            if n == 0 {
                return Err(Error::invalid("phase count must be positive"));
            }
            let budgets = pcit_phase_budgets(t_c, n);
            flat(budgets.clone(), budgets)
        }
        Method::Pcrs | Method::Clustering => flat(vec![t_c], vec![t_c]),
        // One configure call over the product space, k cores wide.
        Method::Global => flat(vec![t_c], vec![kf * t_c]),
        Method::Parhydra => {
            if b == 0 || !k.is_multiple_of(b) {
                return Err(Error::invalid(format!("block size {b} does not divide k = {k}")));
            }
            let iterations = k / b;
            let width = |i: usize| (i * b) as f64;
            let stage_cpu: Vec<f64> = (1..=iterations).map(|i| width(i) * t_c).collect();
            let validation_cpu: Vec<f64> = (1..=iterations).map(|i| width(i) * t_v).collect();
            let total = rf * (1..=iterations).map(|i| width(i) * (t_c + t_v)).sum::<f64>();
            BudgetPlan {
                method,
                k,
                t_c,
                t_v,
                repetitions: r,
                phases: n,
                block: b,
                stage_budgets: vec![t_c; iterations],
                stage_cpu,
                validation_cpu,
                total_cpu: total,
            }
        }
    })
}

/// `t_c / (2(n-1))` for each of the first `n-1` phases and `t_c / 2` for the
/// last; a single phase gets all of `t_c`.
pub fn pcit_phase_budgets(t_c: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![t_c];
    }
    let mut v = vec![t_c / (2.0 * (n - 1) as f64); n - 1];
    v.push(t_c / 2.0);
    v
}

/// Parses `36h`, `90m`, `20s` or a bare number of seconds.
pub fn parse_duration(text: &str) -> Result<f64> {
    let t = text.trim();
    let (num, scale) = match t.char_indices().last() {
        Some((i, 'h')) => (&t[..i], 3600.0),
        Some((i, 'm')) => (&t[..i], 60.0),
        Some((i, 's')) => (&t[..i], 1.0),
        _ => (t, 1.0),
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("invalid duration `{text}`")))?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("invalid duration `{text}`")));
    }
    Ok(v * scale)
}
