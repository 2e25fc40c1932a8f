//! Test-set protocol: median-of-repetitions testing, reports and the paired
//! permutation test.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Instance, Outcome, RunStatus};
use crate::runner::Backend;
use crate::seed;
use crate::space::Configuration;

/// Per-instance result: the median of the repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub instance_id: String,
    pub status: RunStatus,
    pub runtime: f64,
    pub par10: f64,
    pub par1: f64,
    /// All repetitions as `(status, runtime)`.
    pub repetitions: Vec<(RunStatus, f64)>,
}

impl InstanceRow {
    pub fn timed_out(&self) -> bool {
        self.status != RunStatus::Solved
    }
}

/// The reported columns: number of timeouts, PAR-10 and PAR-1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub instances: usize,
    #[serde(rename = "#TOs")]
    pub timeouts: usize,
    #[serde(rename = "PAR-10")]
    pub par10: f64,
    #[serde(rename = "PAR-1")]
    pub par1: f64,
    /// Timeouts among `timeouts` that were crashes.
    pub crashed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub scenario: String,
    pub method: String,
    pub cutoff: f64,
    pub repetitions: usize,
    pub seed: u64,
    pub summary: Summary,
    pub instances: Vec<InstanceRow>,
    /// Solver time spent testing.
    pub cpu_time: f64,
}

/// Runs the portfolio `repetitions` times on each test instance and keeps,
/// per instance, the median repetition ordered by penalized score.
pub fn test_portfolio(
    backend: &dyn Backend,
    components: &[Configuration],
    instances: &[Instance],
    cutoff: f64,
    repetitions: usize,
    seed: u64,
) -> Result<TestReport> {
    if repetitions == 0 || repetitions.is_multiple_of(2) {
        return Err(Error::invalid("repetitions must be odd"));
    }
    if instances.is_empty() {
        return Err(Error::NoInstances);
    }
    if components.is_empty() {
        return Err(Error::invalid("empty portfolio"));
    }
    let rows: Vec<(InstanceRow, f64)> = instances
        .par_iter()
        .map(|inst| {
            let mut outcomes = Vec::with_capacity(repetitions);
            let mut cost = 0.0;
            for rep in 0..repetitions {
                let s = seed::derive_str(seed::derive(seed, &[rep as u64]), &inst.id);
                let race = backend.race(components, inst, cutoff, s).unwrap_or_else(|e| {
                    log::warn!("test run on {} failed: {e}", inst.id);
                    crate::runner::Race::settle(vec![Outcome::crashed(0.0, cutoff); components.len()], cutoff)
                });
                cost += race.cost;
                outcomes.push(race.outcome);
            }
            let median = median_outcome(&outcomes, cutoff);
            let row = InstanceRow {
                instance_id: inst.id.clone(),
                status: median.status,
                runtime: median.runtime,
                par10: median.penalized(cutoff, 10),
                par1: median.penalized(cutoff, 1),
                repetitions: outcomes.iter().map(|o| (o.status, o.runtime)).collect(),
            };
            (row, cost)
        })
        .collect();
    let cpu_time = rows.iter().map(|r| r.1).sum();
    let mut rows: Vec<InstanceRow> = rows.into_iter().map(|r| r.0).collect();
    rows.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    Ok(TestReport {
        scenario: String::new(),
        method: String::new(),
        cutoff,
        repetitions,
        seed,
        summary: summarize(&rows),
        instances: rows,
        cpu_time,
    })
}

/// Middle outcome when ordered by PAR-10 score; timeouts sort last.
pub fn median_outcome(outcomes: &[Outcome], cutoff: f64) -> Outcome {
    let mut sorted = outcomes.to_vec();
    sorted.sort_by(|a, b| a.penalized(cutoff, 10).total_cmp(&b.penalized(cutoff, 10)));
    sorted[sorted.len() / 2]
}

pub fn summarize(rows: &[InstanceRow]) -> Summary {
    let n = rows.len().max(1) as f64;
    Summary {
        instances: rows.len(),
        timeouts: rows.iter().filter(|r| r.timed_out()).count(),
        par10: rows.iter().map(|r| r.par10).sum::<f64>() / n,
        par1: rows.iter().map(|r| r.par1).sum::<f64>() / n,
        crashed: rows.iter().filter(|r| r.status == RunStatus::Crashed).count(),
    }
}

impl TestReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Plain-text table with the `#TOs`, `PAR-10` and `PAR-1` columns.
    pub fn table(reports: &[&TestReport]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:>6} {:>10} {:>10} {:>8}", "Method", "#TOs", "PAR-10", "PAR-1", "crashed");
        for r in reports {
            let s = &r.summary;
            let _ = writeln!(
                out,
                "{:<14} {:>6} {:>10.2} {:>10.2} {:>8}",
                r.method, s.timeouts, s.par10, s.par1, s.crashed
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub p_value: f64,
    pub significant: bool,
    /// Mean of `a - b`.
    pub mean_difference: f64,
}

const BATCH: usize = 4096;

/// Two-sided paired sign-flip permutation test on the mean difference.
pub fn permutation_test(a: &[f64], b: &[f64], permutations: usize, alpha: f64, seed: u64) -> Result<PermutationResult> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::NoInstances);
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let sum: f64 = d.iter().sum();
    let observed = sum.abs();
    // Absorbs rounding differences between equal sums taken in other orders.
    let tol = 1e-9 * d.iter().map(|x| x.abs()).sum::<f64>();
    let batches = permutations.div_ceil(BATCH);
    let count: usize = (0..batches)
        .into_par_iter()
        .map(|bi| {
            let mut rng = seed::rng(seed::derive(seed, &[bi as u64]));
            let todo = BATCH.min(permutations - bi * BATCH);
            let mut hits = 0;
            for _ in 0..todo {
                let mut s = 0.0;
                let mut bits = 0u64;
                for (i, x) in d.iter().enumerate() {
                    if i % 64 == 0 {
                        bits = rng.random();
                    }
                    if bits & 1 == 1 {
                        s += x;
                    } else {
                        s -= x;
                    }
                    bits >>= 1;
                }
                if s.abs() >= observed - tol {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let p_value = (1 + count) as f64 / (1 + permutations) as f64;
    Ok(PermutationResult {
        p_value,
        significant: p_value < alpha,
        mean_difference: sum / n,
    })
}

/// Per-metric permutation tests between two reports on the same instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub instances: usize,
    pub timeouts: PermutationResult,
    pub par10: PermutationResult,
    pub par1: PermutationResult,
}

pub fn compare_reports(a: &TestReport, b: &TestReport, permutations: usize, alpha: f64, seed: u64) -> Result<Comparison> {
    let rows_b: HashMap<&str, &InstanceRow> = b.instances.iter().map(|r| (r.instance_id.as_str(), r)).collect();
    let mut paired = Vec::with_capacity(a.instances.len());
    for ra in &a.instances {
        let rb = rows_b
            .get(ra.instance_id.as_str())
            .ok_or_else(|| Error::UnknownInstance(ra.instance_id.clone()))?;
        paired.push((ra, *rb));
    }
    if paired.len() != b.instances.len() {
        return Err(Error::invalid("reports cover different instance sets"));
    }
    let col = |f: &dyn Fn(&InstanceRow) -> f64| -> (Vec<f64>, Vec<f64>) {
        paired.iter().map(|(x, y)| (f(x), f(y))).unzip()
    };
    let test = |f: &dyn Fn(&InstanceRow) -> f64| {
        let (x, y) = col(f);
        permutation_test(&x, &y, permutations, alpha, seed)
    };
    Ok(Comparison {
        a: a.method.clone(),
        b: b.method.clone(),
        instances: paired.len(),
        timeouts: test(&|r| if r.timed_out() { 1.0 } else { 0.0 })?,
        par10: test(&|r| r.par10)?,
        par1: test(&|r| r.par1)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn median_of_three() {
        let o = [Outcome::solved(2.0, 60.0), Outcome::solved(3.0, 60.0), Outcome::timeout(60.0)];
        assert_eq!(median_outcome(&o, 60.0), Outcome::solved(3.0, 60.0));
        let o = [Outcome::timeout(60.0), Outcome::solved(1.0, 60.0), Outcome::timeout(60.0)];
        assert_eq!(median_outcome(&o, 60.0).status, RunStatus::Timeout);
    }

    #[test]
    fn identical_samples_give_p_one() {
        let a: Vec<f64> = (0..50).map(|i| i as f64 * 0.7).collect();
        let r = permutation_test(&a, &a, 10_000, 0.05, 1).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant);
    }

    #[test]
    fn swap_symmetric_and_deterministic() {
        let mut rng = seed::rng(2);
        let a: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..40).map(|_| rng.random::<f64>() + 0.1).collect();
        let ab = permutation_test(&a, &b, 20_000, 0.05, 9).unwrap();
        let ba = permutation_test(&b, &a, 20_000, 0.05, 9).unwrap();
        assert_eq!(ab.p_value, ba.p_value);
        assert_eq!(ab, permutation_test(&a, &b, 20_000, 0.05, 9).unwrap());
    }

    #[test]
    fn detects_shift() {
        let mut rng = seed::rng(3);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let b: Vec<f64> = (0..100).map(|_| 50.0 + noise.sample(&mut rng)).collect();
        let a: Vec<f64> = b.iter().map(|x| x - 10.0 + noise.sample(&mut rng)).collect();
        let r = permutation_test(&a, &b, 10_000, 0.05, 0).unwrap();
        assert!(r.significant && r.p_value < 0.05);
    }

    #[test]
    fn length_mismatch() {
        assert!(permutation_test(&[1.0], &[1.0, 2.0], 10, 0.05, 0).is_err());
    }

    #[test]
    fn summary_identity() {
        let rows: Vec<InstanceRow> = [Outcome::solved(5.0, 20.0), Outcome::timeout(20.0), Outcome::crashed(1.0, 20.0)]
            .iter()
            .enumerate()
            .map(|(i, o)| InstanceRow {
                instance_id: format!("i{i}"),
                status: o.status,
                runtime: o.runtime,
                par10: o.penalized(20.0, 10),
                par1: o.penalized(20.0, 1),
                repetitions: vec![],
            })
            .collect();
        let s = summarize(&rows);
        assert_eq!((s.timeouts, s.crashed), (2, 1));
        assert!((s.par10 - (s.par1 + 9.0 * 20.0 * 2.0 / 3.0)).abs() < 1e-9);
    }
}
