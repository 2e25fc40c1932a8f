//! Instance transfer between subsets.
//!
//! Instances on which their subset's incumbent scores above the median of
//! all measured scores are candidates. Each round visits the remaining
//! candidates in a seeded random order and moves an instance to the subset
//! whose incumbent is predicted best on it, provided the prediction is no
//! worse than for the current subset and both subsets stay within the size
//! bounds. Rounds continue while some instance moved and some did not.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::epm::{ForestParams, PerfModel};
use crate::error::{Error, Result};
use crate::model::{Instance, InstanceGrouping};
use crate::rundata::RunStore;
use crate::seed;
use crate::space::{Configuration, ParameterSpace};

/// Candidates for transfer and the measured scores behind the choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidates {
    /// Instances scoring strictly above the median, in grouping order.
    pub instances: Vec<String>,
    /// Median of all measured scores; `None` when nothing was measured.
    pub threshold: Option<f64>,
    /// Measured score of each instance's own incumbent.
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub instance: String,
    pub from: usize,
    pub to: usize,
    pub predicted_from: f64,
    pub predicted_to: f64,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub threshold: Option<f64>,
    pub candidates: usize,
    pub measured: usize,
    pub rounds: usize,
    pub moves: Vec<Move>,
    /// Candidates whose own subset ranked first among the admissible ones.
    #[serde(default)]
    pub stayed: Vec<String>,
    /// Candidates that found no admissible subset.
    pub remaining: Vec<String>,
}

/// Median with the two middle values averaged for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Applies the median rule to measured scores given per subset.
pub fn candidates_from_scores(grouping: &InstanceGrouping, scores: &BTreeMap<String, f64>) -> Candidates {
    let values: Vec<f64> = scores.values().copied().collect();
    let threshold = median(&values);
    let instances = match threshold {
        Some(v) => grouping
            .subsets
            .iter()
            .flatten()
            .filter(|id| scores.get(*id).is_some_and(|p| *p > v))
            .cloned()
            .collect(),
        None => Vec::new(),
    };
    Candidates {
        instances,
        threshold,
        scores: scores.clone(),
    }
}

/// Measures every instance under its own subset's incumbent. Instances that
/// incumbent never ran on are left out entirely.
pub fn select_transfer_candidates(
    grouping: &InstanceGrouping,
    incumbents: &[Configuration],
    store: &RunStore,
    cutoff: f64,
    penalty: u32,
) -> Result<Candidates> {
    if incumbents.len() != grouping.k() {
        return Err(Error::invalid(format!(
            "{} incumbents for {} subsets",
            incumbents.len(),
            grouping.k()
        )));
    }
    let mut scores = BTreeMap::new();
    for (j, subset) in grouping.subsets.iter().enumerate() {
        for id in subset {
            if let Some(p) = store.incumbent_performance(incumbents[j].id(), id, cutoff, penalty) {
                scores.insert(id.clone(), p);
            }
        }
    }
    Ok(candidates_from_scores(grouping, &scores))
}

/// Moves candidates using `predict(subset, instance)`, the predicted score of
/// subset `subset`'s incumbent on `instance`.
pub fn transfer_with(
    grouping: &mut InstanceGrouping,
    candidates: &Candidates,
    predict: &mut dyn FnMut(usize, &str) -> Result<f64>,
    seed: u64,
) -> Result<TransferReport> {
    let (lower, upper) = (grouping.lower_bound, grouping.upper_bound);
    let k = grouping.k();
    let mut remaining = candidates.instances.clone();
    let mut moves = Vec::new();
    let mut stayed = Vec::new();
    let mut rounds = 0;
    while !remaining.is_empty() {
        rounds += 1;
        remaining.shuffle(&mut seed::rng(seed::derive(seed, &[rounds as u64])));
        let mut progressed = false;
        let mut unmoved = Vec::new();
        for id in remaining {
            let Some(from) = grouping.subset_of(&id) else {
                continue;
            };
            let mut predicted = Vec::with_capacity(k);
            for j in 0..k {
                predicted.push((predict(j, &id)?, j));
            }
            let e_from = predicted[from].0;
            predicted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let sizes = grouping.sizes();
            // The source itself takes part in the scan; reaching it first
            // keeps the instance where it is and counts as a success.
            let target = predicted
                .iter()
                .find(|&&(e, j)| e <= e_from && sizes[j] < upper && sizes[from] > lower);
            match target {
                Some(&(_, to)) if to == from => {
                    stayed.push(id);
                    progressed = true;
                }
                Some(&(e_to, to)) => {
                    grouping.move_instance(&id, from, to);
                    moves.push(Move {
                        instance: id,
                        from,
                        to,
                        predicted_from: e_from,
                        predicted_to: e_to,
                        round: rounds,
                    });
                    progressed = true;
                }
                None => unmoved.push(id),
            }
        }
        remaining = unmoved;
        if !progressed {
            break;
        }
    }
    remaining.sort();
    stayed.sort();
    Ok(TransferReport {
        threshold: candidates.threshold,
        candidates: candidates.instances.len(),
        measured: candidates.scores.len(),
        rounds,
        moves,
        stayed,
        remaining,
    })
}

/// Everything [`transfer_instances`] needs besides the grouping.
pub struct TransferContext<'a> {
    pub space: &'a ParameterSpace,
    pub instances: &'a [Instance],
    pub feature_dimension: usize,
    pub store: &'a RunStore,
    pub cutoff: f64,
    pub penalty: u32,
    pub forest: ForestParams,
}

/// Fits a model on all run data, then transfers instances between subsets.
pub fn transfer_instances(
    grouping: &mut InstanceGrouping,
    incumbents: &[Configuration],
    ctx: &TransferContext,
    seed: u64,
) -> Result<TransferReport> {
    let candidates = select_transfer_candidates(grouping, incumbents, ctx.store, ctx.cutoff, ctx.penalty)?;
    if candidates.instances.is_empty() {
        return transfer_with(grouping, &candidates, &mut |_, _| Ok(0.0), seed);
    }
    let features: HashMap<String, Vec<f64>> = ctx
        .instances
        .iter()
        .map(|i| (i.id.clone(), i.features.clone()))
        .collect();
    let model = PerfModel::fit(
        &ctx.store.snapshot(),
        ctx.space,
        &features,
        ctx.feature_dimension,
        ctx.cutoff,
        ctx.penalty,
        ctx.forest,
        seed::derive(seed, &[0]),
    )?;
    let mut predict = |j: usize, id: &str| -> Result<f64> {
        let f = features.get(id).ok_or_else(|| Error::UnknownInstance(id.to_string()))?;
        model.predict_cost(ctx.space, &incumbents[j], f)
    };
    transfer_with(grouping, &candidates, &mut predict, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::model::{Outcome, RunRecord};
    use crate::rundata::StoredRun;
    use crate::space::parse_space;

    fn grouping(subsets: &[&[&str]], l: usize, u: usize) -> InstanceGrouping {
        InstanceGrouping::new(
            subsets.iter().map(|s| s.iter().map(|x| x.to_string()).collect()).collect(),
            l,
            u,
        )
        .unwrap()
    }

    fn scores(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn median_rule() {
        let g = grouping(&[&["a", "b"], &["c", "d"]], 1, 3);
        let c = candidates_from_scores(&g, &scores(&[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0)]));
        assert_eq!(c.threshold, Some(2.5));
        assert_eq!(c.instances, vec!["c", "d"]);

        let c = candidates_from_scores(&g, &scores(&[("a", 7.0), ("b", 7.0), ("c", 7.0)]));
        assert!(c.instances.is_empty());

        // "d" was never run by its incumbent.
        let c = candidates_from_scores(&g, &scores(&[("a", 1.0), ("b", 1.0), ("c", 9.0)]));
        assert_eq!(c.instances, vec!["c"]);
        assert!(!c.scores.contains_key("d"));
    }

    #[test]
    fn empty_candidates_leave_grouping_unchanged() {
        let mut g = grouping(&[&["a", "b"], &["c", "d"]], 1, 3);
        let before = g.clone();
        let c = candidates_from_scores(&g, &BTreeMap::new());
        let r = transfer_with(&mut g, &c, &mut |_, _| unreachable!(), 1).unwrap();
        assert_eq!(g, before);
        assert_eq!(r.rounds, 0);
    }

    #[test]
    fn blocked_by_upper_bound() {
        let mut g = grouping(&[&["a", "b"], &["c", "d"]], 1, 2);
        let c = candidates_from_scores(&g, &scores(&[("a", 1.0), ("b", 9.0), ("c", 1.0), ("d", 1.0)]));
        assert_eq!(c.instances, vec!["b"]);
        let r = transfer_with(&mut g, &c, &mut |j, _| Ok(if j == 1 { 1.0 } else { 5.0 }), 0).unwrap();
        assert!(r.moves.is_empty());
        assert_eq!(r.remaining, vec!["b"]);
        assert_eq!(r.rounds, 1);
    }

    #[test]
    fn planted_instance_moves_to_its_family() {
        // Subset 0 incumbent is fast on family 1, subset 1 incumbent on family 2.
        let space = parse_space("h categorical {x, y} [x]").unwrap();
        let cx = space.parse_config("h=x").unwrap();
        let cy = space.parse_config("h=y").unwrap();
        let fam = |id: &str| if id.starts_with('p') { 0.0 } else { 1.0 };
        let ids = ["p0", "p1", "p2", "p3", "q0", "q1", "q2", "q3", "q4"];
        let instances: Vec<Instance> = ids.iter().map(|id| Instance::new(*id, vec![fam(id)])).collect();
        let store = RunStore::new();
        for id in ids {
            for (c, fast) in [(&cx, 0.0), (&cy, 1.0)] {
                let t = if fam(id) == fast { 1.0 } else { 100.0 };
                store
                    .record_run(StoredRun {
                        record: RunRecord::new(c.id(), id, 0, Outcome::solved(t, 200.0), "t"),
                        config: Arc::new(c.clone()),
                        phase: 1,
                        subset_index: None,
                    })
                    .unwrap();
            }
        }
        // q0 (family 2) starts in subset 0.
        let mut g = grouping(&[&["p0", "p1", "p2", "p3", "q0"], &["q1", "q2", "q3", "q4"]], 4, 6);
        let ctx = TransferContext {
            space: &space,
            instances: &instances,
            feature_dimension: 1,
            store: &store,
            cutoff: 200.0,
            penalty: 10,
            forest: ForestParams::default(),
        };
        let r = transfer_instances(&mut g, &[cx, cy], &ctx, 7).unwrap();
        assert_eq!(r.moves.len(), 1);
        assert_eq!((r.moves[0].instance.as_str(), r.moves[0].from, r.moves[0].to), ("q0", 0, 1));
        assert_eq!(g.subset_of("q0"), Some(1));
    }

    #[test]
    fn source_ranked_first_keeps_the_instance() {
        let mut g = grouping(&[&["a", "b"], &["c", "d"]], 1, 3);
        let c = candidates_from_scores(&g, &scores(&[("a", 9.0), ("b", 1.0), ("c", 1.0), ("d", 1.0)]));
        let r = transfer_with(&mut g, &c, &mut |_, _| Ok(2.0), 0).unwrap();
        assert!(r.moves.is_empty());
        assert_eq!(r.stayed, vec!["a".to_string()]);
        assert_eq!(r.rounds, 1);
        assert_eq!(g.subset_of("a"), Some(0));
    }

    #[test]
    fn ties_prefer_lower_subset_index() {
        let mut g = grouping(&[&["a", "b", "c"], &["d"], &["e"]], 1, 3);
        let c = candidates_from_scores(&g, &scores(&[("a", 9.0), ("b", 1.0), ("c", 1.0), ("d", 1.0), ("e", 1.0)]));
        let r = transfer_with(&mut g, &c, &mut |_, _| Ok(2.0), 0).unwrap();
        assert_eq!((r.moves[0].from, r.moves[0].to), (0, 1));
    }
}
