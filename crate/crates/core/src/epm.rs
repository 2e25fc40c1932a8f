//! Random-forest empirical performance model.
//!
//! Rows are `encode_config(config) ++ features(instance)`; targets are
//! `log10` of the penalized score, capped at `penalty * cutoff`. Predictions
//! are averaged over trees in log space and transformed back to seconds.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rundata::StoredRun;
use crate::seed;
use crate::space::{ColumnKind, Configuration, ParameterSpace};

/// Smallest score fed into the log transform.
pub const MIN_SCORE: f64 = 1e-3;

const FORMAT_VERSION: u32 = 1;

/// Forest hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Columns examined per split; `None` means `ceil(d / 3)`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    /// Up to this many present categories, all two-way partitions are tried.
    pub exhaustive_categories: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 40,
            min_leaf: 3,
            max_features: None,
            bootstrap: true,
            exhaustive_categories: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Numeric {
        column: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Codes listed in `left_codes` go left; everything else goes right.
    Categorical {
        column: usize,
        left_codes: Vec<u32>,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64], kinds: &[ColumnKind]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Numeric {
                    column,
                    threshold,
                    left,
                    right,
                } => at = if row[*column] <= *threshold { *left } else { *right },
                Node::Categorical {
                    column,
                    left_codes,
                    left,
                    right,
                } => {
                    let code = category_code(row[*column], kinds[*column]);
                    at = if left_codes.binary_search(&code).is_ok() { *left } else { *right };
                }
            }
        }
    }
}

fn category_code(value: f64, kind: ColumnKind) -> u32 {
    match kind {
        ColumnKind::Categorical(n) if value < 0.0 => n as u32,
        _ => value.max(0.0) as u32,
    }
}

/// A fitted forest. Immutable and cheap to share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfModel {
    version: u32,
    params: ForestParams,
    kinds: Vec<ColumnKind>,
    feature_dimension: usize,
    cutoff: f64,
    penalty: u32,
    /// Range of training targets in log10 space.
    y_min: f64,
    y_max: f64,
    trees: Vec<Tree>,
}

/// Maps a penalized score to the model's target space.
pub fn transform(score: f64, cutoff: f64, penalty: u32) -> f64 {
    score.clamp(MIN_SCORE, penalty as f64 * cutoff).log10()
}

impl PerfModel {
    /// Fits a forest on the given runs. Instances without features are skipped.
    pub fn fit(
        runs: &[StoredRun],
        space: &ParameterSpace,
        features: &HashMap<String, Vec<f64>>,
        feature_dimension: usize,
        cutoff: f64,
        penalty: u32,
        params: ForestParams,
        seed: u64,
    ) -> Result<PerfModel> {
        let mut rows = Vec::with_capacity(runs.len());
        for run in runs {
            let Some(f) = features.get(&run.record.instance_id) else {
                continue;
            };
            let x = space.encode_config(&run.config, f, feature_dimension)?;
            let y = transform(run.record.outcome().penalized(cutoff, penalty), cutoff, penalty);
            rows.push((x, y));
        }
        let mut kinds = space.column_kinds();
        kinds.extend(std::iter::repeat_n(ColumnKind::Numeric, feature_dimension));
        Self::fit_rows(rows, kinds, feature_dimension, cutoff, penalty, params, seed)
    }

    /// Fits on already encoded rows with targets in log10 space.
    pub fn fit_rows(
        mut rows: Vec<(Vec<f64>, f64)>,
        kinds: Vec<ColumnKind>,
        feature_dimension: usize,
        cutoff: f64,
        penalty: u32,
        params: ForestParams,
        seed: u64,
    ) -> Result<PerfModel> {
        if rows.is_empty() {
            return Err(Error::NoTrainingData);
        }
        if params.n_trees == 0 || params.min_leaf == 0 {
            return Err(Error::invalid("forest needs at least one tree and a positive leaf size"));
        }
        if let Some((x, _)) = rows.iter().find(|(x, _)| x.len() != kinds.len()) {
            return Err(Error::FeatureDimension {
                expected: kinds.len(),
                actual: x.len(),
            });
        }
        // A canonical row order makes the forest independent of input order.
        rows.sort_by(cmp_rows);
        let y_min = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        let y_max = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
        let data = Data {
            xs: rows.iter().map(|r| r.0.as_slice()).collect(),
            ys: rows.iter().map(|r| r.1).collect(),
            kinds: &kinds,
        };
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| grow_tree(&data, &params, seed::derive(seed, &[t as u64])))
            .collect();
        Ok(PerfModel {
            version: FORMAT_VERSION,
            params,
            kinds,
            feature_dimension,
            cutoff,
            penalty,
            y_min,
            y_max,
            trees,
        })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Training target range in log10 space.
    pub fn target_range(&self) -> (f64, f64) {
        (self.y_min, self.y_max)
    }

    /// Mean tree prediction in log10 space for an encoded row.
    pub fn predict_log(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.kinds.len() {
            return Err(Error::FeatureDimension {
                expected: self.kinds.len(),
                actual: row.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(row, &self.kinds)).sum();
        Ok((sum / self.trees.len() as f64).clamp(self.y_min, self.y_max))
    }

    /// Predicted penalized score of `config` on an instance with `features`.
    pub fn predict_cost(&self, space: &ParameterSpace, config: &Configuration, features: &[f64]) -> Result<f64> {
        let row = space.encode_config(config, features, self.feature_dimension)?;
        Ok(10f64.powf(self.predict_log(&row)?))
    }

    /// Mean log10 prediction of `config` across several instances.
    pub fn predict_marginal(&self, space: &ParameterSpace, config: &Configuration, features: &[&[f64]]) -> Result<f64> {
        if features.is_empty() {
            return Err(Error::NoInstances);
        }
        let mut row = Vec::with_capacity(self.kinds.len());
        space.encode_into(config, &mut row);
        let n_params = row.len();
        let mut sum = 0.0;
        for f in features {
            if f.len() != self.feature_dimension {
                return Err(Error::FeatureDimension {
                    expected: self.feature_dimension,
                    actual: f.len(),
                });
            }
            row.truncate(n_params);
            row.extend_from_slice(f);
            sum += self.predict_log(&row)?;
        }
        Ok(sum / features.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<PerfModel> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let model: PerfModel = serde_json::from_str(&text)?;
        if model.version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "{}: unsupported model version {}",
                path.display(),
                model.version
            )));
        }
        Ok(model)
    }
}

fn cmp_rows(a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)) -> Ordering {
    a.0.iter()
        .zip(&b.0)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then(a.1.total_cmp(&b.1))
}

struct Data<'a> {
    xs: Vec<&'a [f64]>,
    ys: Vec<f64>,
    kinds: &'a [ColumnKind],
}

enum Split {
    Numeric(f64),
    Categorical(Vec<u32>),
}

struct Candidate {
    column: usize,
    split: Split,
    sse: f64,
}

fn grow_tree(data: &Data, params: &ForestParams, seed: u64) -> Tree {
    let mut rng = seed::rng(seed);
    let n = data.ys.len();
    let sample: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let d = data.kinds.len();
    let max_features = params.max_features.unwrap_or(d.div_ceil(3)).clamp(1, d.max(1));
    let mut nodes = Vec::new();
    build(data, params, max_features, sample, &mut rng, &mut nodes);
    Tree { nodes }
}

fn mean(data: &Data, idx: &[usize]) -> f64 {
    idx.iter().map(|&i| data.ys[i]).sum::<f64>() / idx.len() as f64
}

fn build(
    data: &Data,
    params: &ForestParams,
    max_features: usize,
    idx: Vec<usize>,
    rng: &mut seed::Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    let at = nodes.len();
    nodes.push(Node::Leaf(mean(data, &idx)));
    if idx.len() < 2 * params.min_leaf {
        return at;
    }
    let first = data.ys[idx[0]];
    if idx.iter().all(|&i| data.ys[i] == first) {
        return at;
    }
    let Some(best) = find_split(data, params, max_features, &idx, rng) else {
        return at;
    };
    let kind = data.kinds[best.column];
    let goes_left = |i: usize| -> bool {
        let v = data.xs[i][best.column];
        match &best.split {
            Split::Numeric(t) => v <= *t,
            Split::Categorical(codes) => codes.binary_search(&category_code(v, kind)).is_ok(),
        }
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| goes_left(i));
    let left = build(data, params, max_features, left_idx, rng, nodes);
    let right = build(data, params, max_features, right_idx, rng, nodes);
    nodes[at] = match best.split {
        Split::Numeric(threshold) => Node::Numeric {
            column: best.column,
            threshold,
            left,
            right,
        },
        Split::Categorical(left_codes) => Node::Categorical {
            column: best.column,
            left_codes,
            left,
            right,
        },
    };
    at
}

/// Examines a random subset of columns, continuing past it until at least
/// one valid split is found.
fn find_split(
    data: &Data,
    params: &ForestParams,
    max_features: usize,
    idx: &[usize],
    rng: &mut seed::Rng,
) -> Option<Candidate> {
    let mut columns: Vec<usize> = (0..data.kinds.len()).collect();
    columns.shuffle(rng);
    let mut best: Option<Candidate> = None;
    for (tried, &column) in columns.iter().enumerate() {
        if tried >= max_features && best.is_some() {
            break;
        }
        let found = match data.kinds[column] {
            ColumnKind::Numeric => numeric_split(data, params, idx, column),
            ColumnKind::Categorical(_) => categorical_split(data, params, idx, column),
        };
        if let Some(c) = found {
            if best.as_ref().is_none_or(|b| c.sse < b.sse) {
                best = Some(c);
            }
        }
    }
    best
}

fn numeric_split(data: &Data, params: &ForestParams, idx: &[usize], column: usize) -> Option<Candidate> {
    let mut pairs: Vec<(f64, f64)> = idx.iter().map(|&i| (data.xs[i][column], data.ys[i])).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len();
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
    let (mut sum, mut sq) = (0.0, 0.0);
    let mut best: Option<(f64, f64)> = None;
    for i in 0..n - 1 {
        sum += pairs[i].1;
        sq += pairs[i].1 * pairs[i].1;
        let nl = i + 1;
        if pairs[i].0 == pairs[i + 1].0 || nl < params.min_leaf || n - nl < params.min_leaf {
            continue;
        }
        let sse = sse_of(sum, sq, nl) + sse_of(total - sum, total_sq - sq, n - nl);
        if best.is_none_or(|(b, _)| sse < b) {
            best = Some((sse, 0.5 * (pairs[i].0 + pairs[i + 1].0)));
        }
    }
    best.map(|(sse, t)| Candidate {
        column,
        split: Split::Numeric(t),
        sse,
    })
}

fn sse_of(sum: f64, sq: f64, n: usize) -> f64 {
    (sq - sum * sum / n as f64).max(0.0)
}

fn categorical_split(data: &Data, params: &ForestParams, idx: &[usize], column: usize) -> Option<Candidate> {
    let kind = data.kinds[column];
    // Per present code: (sum, sum of squares, count), ordered by code.
    let mut stats: Vec<(u32, f64, f64, usize)> = Vec::new();
    let mut by_code: HashMap<u32, usize> = HashMap::new();
    for &i in idx {
        let code = category_code(data.xs[i][column], kind);
        let y = data.ys[i];
        let slot = *by_code.entry(code).or_insert_with(|| {
            stats.push((code, 0.0, 0.0, 0));
            stats.len() - 1
        });
        let s = &mut stats[slot];
        s.1 += y;
        s.2 += y * y;
        s.3 += 1;
    }
    let m = stats.len();
    if m < 2 {
        return None;
    }
    stats.sort_by_key(|s| s.0);
    let total = stats.iter().fold((0.0, 0.0, 0), |a, s| (a.0 + s.1, a.1 + s.2, a.2 + s.3));
    let evaluate = |members: &[usize]| -> Option<f64> {
        let (mut sum, mut sq, mut cnt) = (0.0, 0.0, 0);
        for &j in members {
            sum += stats[j].1;
            sq += stats[j].2;
            cnt += stats[j].3;
        }
        if cnt < params.min_leaf || total.2 - cnt < params.min_leaf {
            return None;
        }
        Some(sse_of(sum, sq, cnt) + sse_of(total.0 - sum, total.1 - sq, total.2 - cnt))
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut consider = |members: Vec<usize>| {
        if let Some(sse) = evaluate(&members) {
            if best.as_ref().is_none_or(|(b, _)| sse < *b) {
                best = Some((sse, members));
            }
        }
    };
    if m <= params.exhaustive_categories {
        // Fixing the first category on the left enumerates each partition once.
        for mask in 0u32..(1 << (m - 1)) {
            let mut members = vec![0];
            members.extend((1..m).filter(|j| mask & (1 << (j - 1)) != 0));
            if members.len() < m {
                consider(members);
            }
        }
    } else {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            (stats[a].1 / stats[a].3 as f64)
                .total_cmp(&(stats[b].1 / stats[b].3 as f64))
                .then(stats[a].0.cmp(&stats[b].0))
        });
        for cut in 1..m {
            consider(order[..cut].to_vec());
        }
    }
    best.map(|(sse, members)| {
        let mut codes: Vec<u32> = members.iter().map(|&j| stats[j].0).collect();
        codes.sort_unstable();
        Candidate {
            column,
            split: Split::Categorical(codes),
            sse,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kinds(n: usize) -> Vec<ColumnKind> {
        vec![ColumnKind::Numeric; n]
    }

    #[test]
    fn constant_target_predicts_constant() {
        let rows: Vec<_> = (0..30).map(|i| (vec![i as f64, (i % 3) as f64], 1.25)).collect();
        let m = PerfModel::fit_rows(rows, kinds(2), 1, 10.0, 10, ForestParams::default(), 3).unwrap();
        for q in [[0.0, 0.0], [100.0, -5.0]] {
            assert_eq!(m.predict_log(&q).unwrap(), 1.25);
        }
    }

    #[test]
    fn single_row_predicts_its_target() {
        let m = PerfModel::fit_rows(vec![(vec![0.5], 0.7)], kinds(1), 0, 10.0, 10, ForestParams::default(), 0).unwrap();
        assert_eq!(m.predict_log(&[0.1]).unwrap(), 0.7);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let r = PerfModel::fit_rows(vec![], kinds(1), 0, 10.0, 10, ForestParams::default(), 0);
        assert!(matches!(r, Err(Error::NoTrainingData)));
    }

    #[test]
    fn two_clusters_are_separated() {
        // One configuration; family by feature sign; 1s versus 100s.
        let mut rows = Vec::new();
        for i in 0..40 {
            let f = if i % 2 == 0 { -1.0 - (i as f64) * 0.01 } else { 1.0 + (i as f64) * 0.01 };
            let y = if i % 2 == 0 { 0.0 } else { 2.0 };
            rows.push((vec![0.0, f], y));
        }
        let m = PerfModel::fit_rows(rows, kinds(2), 1, 100.0, 10, ForestParams::default(), 1).unwrap();
        let a = m.predict_log(&[0.0, -1.3]).unwrap();
        let b = m.predict_log(&[0.0, 1.3]).unwrap();
        assert!((a - 0.0).abs() < (a - 2.0).abs());
        assert!((b - 2.0).abs() < (b - 0.0).abs());
    }

    #[test]
    fn categorical_partition_is_learned() {
        // Codes 0 and 2 are fast, 1 and 3 slow: not separable by one threshold.
        let k = vec![ColumnKind::Categorical(4)];
        let rows: Vec<_> = (0..80)
            .map(|i| {
                let code = (i % 4) as f64;
                (vec![code], if i % 2 == 0 { 0.0 } else { 1.0 })
            })
            .collect();
        let params = ForestParams {
            bootstrap: false,
            ..ForestParams::default()
        };
        let m = PerfModel::fit_rows(rows, k, 0, 10.0, 10, params, 0).unwrap();
        assert_eq!(m.predict_log(&[0.0]).unwrap(), 0.0);
        assert_eq!(m.predict_log(&[2.0]).unwrap(), 0.0);
        assert_eq!(m.predict_log(&[3.0]).unwrap(), 1.0);
    }

    #[test]
    fn many_categories_use_ordered_splits() {
        let k = vec![ColumnKind::Categorical(12)];
        let rows: Vec<_> = (0..120).map(|i| (vec![(i % 12) as f64], ((i % 12) % 3) as f64)).collect();
        let params = ForestParams {
            bootstrap: false,
            ..ForestParams::default()
        };
        let m = PerfModel::fit_rows(rows, k, 0, 10.0, 10, params, 0).unwrap();
        for c in 0..12 {
            assert!((m.predict_log(&[c as f64]).unwrap() - (c % 3) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn serialization_round_trip() {
        let rows: Vec<_> = (0..20).map(|i| (vec![i as f64], (i as f64).sqrt())).collect();
        let m = PerfModel::fit_rows(rows, kinds(1), 0, 10.0, 10, ForestParams::default(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(PerfModel::load(&path).unwrap(), m);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = PerfModel::fit_rows(vec![(vec![0.0, 1.0], 0.0)], kinds(2), 1, 10.0, 10, ForestParams::default(), 0).unwrap();
        assert!(matches!(m.predict_log(&[0.0]), Err(Error::FeatureDimension { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn predictions_within_training_range(
            rows in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 3), -2.0f64..3.0), 1..60),
            query in prop::collection::vec(-10.0f64..10.0, 3),
            seed in any::<u64>(),
        ) {
            let lo = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
            let m = PerfModel::fit_rows(rows, kinds(3), 1, 100.0, 10, ForestParams::default(), seed).unwrap();
            let p = m.predict_log(&query).unwrap();
            prop_assert!(p >= lo && p <= hi);
        }

        #[test]
        fn deterministic_and_order_invariant(
            rows in prop::collection::vec((prop::collection::vec(0.0f64..1.0, 2), -1.0f64..2.0), 2..40),
            seed in any::<u64>(),
            shuffle_seed in any::<u64>(),
        ) {
            let a = PerfModel::fit_rows(rows.clone(), kinds(2), 1, 10.0, 10, ForestParams::default(), seed).unwrap();
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut seed::rng(shuffle_seed));
            let b = PerfModel::fit_rows(shuffled, kinds(2), 1, 10.0, 10, ForestParams::default(), seed).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
