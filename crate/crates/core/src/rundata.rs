//! Append-only store of every run made during one construction.
//!
//! The store can mirror itself to a line-delimited JSON log so an
//! interrupted construction can be inspected or resumed.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RunRecord, RunStatus};
use crate::space::{ConfigId, Configuration, ParameterSpace};

/// A run together with the configuration it used and where it happened.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRun {
    pub record: RunRecord,
    pub config: Arc<Configuration>,
    pub phase: u32,
    pub subset_index: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LogLine {
    config_id: ConfigId,
    config: String,
    instance_id: String,
    seed: u64,
    status: RunStatus,
    runtime: f64,
    cutoff: f64,
    phase: u32,
    subset_index: Option<usize>,
    #[serde(default)]
    backend: String,
}

impl From<&StoredRun> for LogLine {
    fn from(r: &StoredRun) -> Self {
        LogLine {
            config_id: r.record.config_id,
            config: r.config.to_string(),
            instance_id: r.record.instance_id.clone(),
            seed: r.record.seed,
            status: r.record.status,
            runtime: r.record.runtime,
            cutoff: r.record.cutoff,
            phase: r.phase,
            subset_index: r.subset_index,
            backend: r.record.backend_label.clone(),
        }
    }
}

#[derive(Debug, Default)]
struct Inner {
    runs: Vec<StoredRun>,
    by_pair: HashMap<(ConfigId, String), Vec<usize>>,
}

#[derive(Debug, Default)]
pub struct RunStore {
    inner: RwLock<Inner>,
    log: Option<Mutex<BufWriter<File>>>,
}

impl RunStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// A store that appends every record to `path` as it arrives.
    pub fn with_log(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::file(path, e))?;
        Ok(RunStore {
            inner: RwLock::default(),
            log: Some(Mutex::new(BufWriter::new(file))),
        })
    }

    pub fn record_run(&self, run: StoredRun) -> Result<()> {
        if let Some(log) = &self.log {
            let line = serde_json::to_string(&LogLine::from(&run))?;
            let mut w = log.lock().expect("log poisoned");
            writeln!(w, "{line}")?;
            w.flush()?;
        }
        let mut inner = self.inner.write().expect("store poisoned");
        let idx = inner.runs.len();
        inner
            .by_pair
            .entry((run.record.config_id, run.record.instance_id.clone()))
            .or_default()
            .push(idx);
        inner.runs.push(run);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("store poisoned").runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy of all records at call time.
    pub fn snapshot(&self) -> Vec<StoredRun> {
        self.inner.read().expect("store poisoned").runs.clone()
    }

    /// Records whose instance satisfies `keep`.
    pub fn snapshot_filtered(&self, keep: impl Fn(&str) -> bool) -> Vec<StoredRun> {
        self.inner
            .read()
            .expect("store poisoned")
            .runs
            .iter()
            .filter(|r| keep(&r.record.instance_id))
            .cloned()
            .collect()
    }

    pub fn runs_of(&self, config: ConfigId, instance_id: &str) -> Vec<RunRecord> {
        let inner = self.inner.read().expect("store poisoned");
        inner
            .by_pair
            .get(&(config, instance_id.to_string()))
            .map(|idx| idx.iter().map(|&i| inner.runs[i].record.clone()).collect())
            .unwrap_or_default()
    }

    /// Mean penalized score of `config` on `instance_id`, or `None` when the
    /// pair was never run.
    pub fn incumbent_performance(&self, config: ConfigId, instance_id: &str, cutoff: f64, penalty: u32) -> Option<f64> {
        let runs = self.runs_of(config, instance_id);
        if runs.is_empty() {
            return None;
        }
        let total: f64 = runs.iter().map(|r| r.outcome().penalized(cutoff, penalty)).sum();
        Some(total / runs.len() as f64)
    }

    /// Writes every record as one JSON line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(file);
        for run in self.inner.read().expect("store poisoned").runs.iter() {
            writeln!(w, "{}", serde_json::to_string(&LogLine::from(run))?)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a log written by [`save`](Self::save) or [`with_log`](Self::with_log).
    pub fn load(path: &Path, space: &ParameterSpace) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        let store = RunStore::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: LogLine = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
            let config = space.parse_config(&l.config)?;
            if config.id() != l.config_id {
                return Err(Error::Parse(format!(
                    "{}:{}: config id {} does not match its configuration",
                    path.display(),
                    n + 1,
                    l.config_id
                )));
            }
            store.record_run(StoredRun {
                record: RunRecord {
                    config_id: l.config_id,
                    instance_id: l.instance_id,
                    seed: l.seed,
                    status: l.status,
                    runtime: l.runtime,
                    cutoff: l.cutoff,
                    backend_label: l.backend,
                },
                config: Arc::new(config),
                phase: l.phase,
                subset_index: l.subset_index,
            })?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Outcome;
    use crate::space::parse_space;

    fn stored(config: &Configuration, inst: &str, seed: u64, outcome: Outcome) -> StoredRun {
        StoredRun {
            record: RunRecord::new(config.id(), inst, seed, outcome, "test"),
            config: Arc::new(config.clone()),
            phase: 1,
            subset_index: Some(0),
        }
    }

    fn config() -> (ParameterSpace, Configuration) {
        let space = parse_space("x integer [0, 9] [3]").unwrap();
        let c = space.default_config();
        (space, c)
    }

    #[test]
    fn append_and_query() {
        let (_, c) = config();
        let store = RunStore::new();
        store.record_run(stored(&c, "i1", 1, Outcome::solved(10.0, 60.0))).unwrap();
        store.record_run(stored(&c, "i1", 2, Outcome::solved(20.0, 60.0))).unwrap();
        assert_eq!(store.runs_of(c.id(), "i1").len(), 2);
        assert_eq!(store.incumbent_performance(c.id(), "i1", 60.0, 10), Some(15.0));
        assert_eq!(store.incumbent_performance(c.id(), "i2", 60.0, 10), None);
    }

    #[test]
    fn timeout_is_penalized() {
        let (_, c) = config();
        let store = RunStore::new();
        store.record_run(stored(&c, "i", 1, Outcome::timeout(60.0))).unwrap();
        assert_eq!(store.incumbent_performance(c.id(), "i", 60.0, 10), Some(600.0));
    }

    #[test]
    fn order_does_not_matter() {
        let (space, c) = config();
        let d = space.parse_config("x=5").unwrap();
        let runs = vec![
            stored(&c, "i", 1, Outcome::solved(1.0, 60.0)),
            stored(&d, "i", 1, Outcome::solved(3.0, 60.0)),
            stored(&c, "i", 2, Outcome::timeout(60.0)),
        ];
        let a = RunStore::new();
        let b = RunStore::new();
        for r in &runs {
            a.record_run(r.clone()).unwrap();
        }
        for r in runs.iter().rev() {
            b.record_run(r.clone()).unwrap();
        }
        assert_eq!(
            a.incumbent_performance(c.id(), "i", 60.0, 10),
            b.incumbent_performance(c.id(), "i", 60.0, 10)
        );
    }

    #[test]
    fn persist_and_reload() {
        let (space, c) = config();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        let store = RunStore::with_log(&path).unwrap();
        store.record_run(stored(&c, "i1", 1, Outcome::solved(1.5, 60.0))).unwrap();
        store.record_run(stored(&c, "i2", 9, Outcome::crashed(0.25, 60.0))).unwrap();
        let reloaded = RunStore::load(&path, &space).unwrap();
        assert_eq!(reloaded.snapshot(), store.snapshot());

        let saved = dir.path().join("saved.jsonl");
        store.save(&saved).unwrap();
        assert_eq!(RunStore::load(&saved, &space).unwrap().snapshot(), store.snapshot());
    }
}
