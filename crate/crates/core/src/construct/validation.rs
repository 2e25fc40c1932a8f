use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Instance, Outcome};
use crate::runner::{Backend, BudgetLedger, Stage};
use crate::seed;
use crate::space::Configuration;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub selected: usize,
    /// Penalized mean of each candidate on the shared instance prefix.
    pub scores: Vec<Option<f64>>,
    /// Length of the prefix all candidates were evaluated on.
    pub instances_used: usize,
    pub consumed: Vec<f64>,
}

/// Picks the candidate portfolio with the best penalized mean on the
/// training instances.
///
/// All candidates visit instances in one shared seeded order and each may
/// spend up to `budget_cpu` of solver time; they are compared on the prefix
/// every candidate completed. Ties go to the lower index, and a single
/// candidate is returned without running anything.
pub fn validate_and_select(
    backend: &dyn Backend,
    candidates: &[Vec<Configuration>],
    instances: &[Instance],
    budget_cpu: f64,
    cutoff: f64,
    penalty: u32,
    seed: u64,
    ledger: &BudgetLedger,
    ledger_key: &str,
) -> Result<ValidationReport> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate portfolios"));
    }
    if candidates.len() == 1 {
        return Ok(ValidationReport {
            selected: 0,
            scores: vec![None],
            instances_used: 0,
            consumed: vec![0.0],
        });
    }
    let mut order: Vec<&Instance> = instances.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    order.shuffle(&mut seed::rng(seed));

    let runs: Vec<(Vec<Outcome>, f64)> = candidates
        .par_iter()
        .map(|components| {
            let mut outcomes = Vec::new();
            let mut spent = 0.0;
            for inst in &order {
                if spent >= budget_cpu {
                    break;
                }
                let s = seed::derive_str(seed, &inst.id);
                let race = backend.race(components, inst, cutoff, s).unwrap_or_else(|e| {
                    log::warn!("validation run on {} failed: {e}", inst.id);
                    crate::runner::Race::settle(vec![Outcome::crashed(0.0, cutoff); components.len()], cutoff)
                });
                spent += race.cost;
                ledger.charge(Stage::Validation, ledger_key, race.cost, components.len() as u64);
                outcomes.push(race.outcome);
            }
            (outcomes, spent)
        })
        .collect();

    let used = runs.iter().map(|r| r.0.len()).min().unwrap_or(0);
    let scores: Vec<Option<f64>> = runs
        .iter()
        .map(|(o, _)| {
            (used > 0).then(|| o[..used].iter().map(|x| x.penalized(cutoff, penalty)).sum::<f64>() / used as f64)
        })
        .collect();
    let mut selected = 0;
    for (i, s) in scores.iter().enumerate() {
        if let (Some(s), Some(best)) = (s, scores[selected]) {
            if *s < best {
                selected = i;
            }
        }
    }
    Ok(ValidationReport {
        selected,
        scores,
        instances_used: used,
        consumed: runs.iter().map(|r| r.1).collect(),
    })
}
