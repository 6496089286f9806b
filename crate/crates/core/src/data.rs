//! Multi-task tabular datasets: loading, validation, normalization,
//! augmentation, splitting, and a synthetic generator with known grouping.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::partition::{GroupKey, Partition};
use crate::util::{self, rng_for};

pub const TASKSET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

/// One supervised task: a feature matrix with a target per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    /// Row-per-sample feature matrix, `n_samples x d`.
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Task {
    pub fn n_samples(&self) -> usize {
        self.targets.len()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Population std of the target attribute.
    pub fn target_sigma(&self) -> f64 {
        util::population_std(&self.targets)
    }

    /// Population variance of the target attribute.
    pub fn target_var(&self) -> f64 {
        util::population_variance(&self.targets)
    }

    pub fn target_mean(&self) -> f64 {
        util::mean(&self.targets)
    }

    /// True when every feature value is 0 or 1 (Hamming distance domain).
    pub fn has_binary_features(&self) -> bool {
        self.features
            .iter()
            .all(|row| row.iter().all(|&v| v == 0.0 || v == 1.0))
    }
}

/// An ordered collection of tasks sharing a feature dimension and a kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub kind: TaskKind,
    pub d: usize,
    pub tasks: Vec<Task>,
}

impl TaskSet {
    pub fn new(kind: TaskKind, tasks: Vec<Task>) -> Result<Self> {
        if tasks.len() < 2 {
            return Err(Error::InvalidTaskSet(format!(
                "need at least 2 tasks, got {}",
                tasks.len()
            )));
        }
        let d = tasks[0].dim();
        if d == 0 {
            return Err(Error::InvalidTaskSet("feature dimension is 0".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &tasks {
            if !seen.insert(t.id.clone()) {
                return Err(Error::InvalidTaskSet(format!("duplicate task id `{}`", t.id)));
            }
            if t.n_samples() < 2 {
                return Err(Error::TaskTooSmall(t.id.clone()));
            }
            if t.features.len() != t.targets.len() {
                return Err(Error::InvalidTaskSet(format!(
                    "task `{}`: {} feature rows vs {} targets",
                    t.id,
                    t.features.len(),
                    t.targets.len()
                )));
            }
            for (i, row) in t.features.iter().enumerate() {
                if row.len() != d {
                    return Err(Error::InconsistentDimensions {
                        expected: d,
                        found: row.len(),
                        row: i,
                    });
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidTaskSet(format!(
                        "task `{}` has a non-finite feature value",
                        t.id
                    )));
                }
            }
            if t.targets.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidTaskSet(format!(
                    "task `{}` has a non-finite target",
                    t.id
                )));
            }
            if kind == TaskKind::Classification
                && t.targets.iter().any(|&v| v != 0.0 && v != 1.0)
            {
                return Err(Error::InvalidTaskSet(format!(
                    "task `{}`: classification targets must be 0 or 1",
                    t.id
                )));
            }
        }
        Ok(TaskSet { kind, d, tasks })
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.id.clone()).collect()
    }

    /// True when every feature of every task is 0/1; selects the Hamming
    /// feature catalog.
    pub fn has_binary_features(&self) -> bool {
        self.tasks.iter().all(Task::has_binary_features)
    }
}

/// Per-attribute normalization statistics, pooled over all tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Attributes whose pooled std is zero; mapped to 0 after normalization.
    pub constant: Vec<bool>,
}

/// Holdout split fractions plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        let s = SplitSpec {
            train_frac,
            val_frac,
            test_frac,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|&f| f <= 0.0) {
            return Err(Error::InvalidSpec("split fractions must be positive".into()));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec("split fractions must sum to 1".into()));
        }
        Ok(())
    }

    pub fn min_frac(&self) -> f64 {
        self.train_frac.min(self.val_frac).min(self.test_frac)
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.7,
            val_frac: 0.15,
            test_frac: 0.15,
            seed: 0,
        }
    }
}

/// Train/val/test rows for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSplit {
    pub train: Task,
    pub val: Task,
    pub test: Task,
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub id_col: String,
    pub target_col: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id_col: "task_id".into(),
            target_col: "target".into(),
        }
    }
}

/// Loads a task set from CSV: one row per sample, `id_col` names the task,
/// `target_col` the label, and every remaining column is a numeric feature.
///
/// Task kind is inferred from the targets (all values in {0,1} means
/// classification) unless `kind_override` is given.
pub fn load_taskset(
    path: &Path,
    schema: &CsvSchema,
    kind_override: Option<TaskKind>,
) -> Result<TaskSet> {
    let file = std::fs::File::open(path)?;
    load_taskset_from_reader(file, schema, kind_override)
}

pub fn load_taskset_from_reader<R: Read>(
    reader: R,
    schema: &CsvSchema,
    kind_override: Option<TaskKind>,
) -> Result<TaskSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let id_idx = headers
        .iter()
        .position(|h| h == &schema.id_col)
        .ok_or_else(|| Error::MissingColumn(schema.id_col.clone()))?;
    let target_idx = headers
        .iter()
        .position(|h| h == &schema.target_col)
        .ok_or_else(|| Error::MissingColumn(schema.target_col.clone()))?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != id_idx && i != target_idx)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::InvalidTaskSet("no feature columns".into()));
    }

    // first-appearance order of task ids, row order preserved within a task
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, (Vec<Vec<f64>>, Vec<f64>)> = BTreeMap::new();
    for (row_no, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |idx: usize| -> Result<f64> {
            let cell = record.get(idx).unwrap_or("");
            cell.trim().parse::<f64>().map_err(|_| Error::NonNumericCell {
                row: row_no,
                col: headers[idx].clone(),
            })
        };
        let id = record.get(id_idx).unwrap_or("").to_owned();
        let target = parse(target_idx)?;
        let mut row = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            row.push(parse(c)?);
        }
        if !by_id.contains_key(&id) {
            order.push(id.clone());
        }
        let entry = by_id.entry(id).or_default();
        entry.0.push(row);
        entry.1.push(target);
    }
    if order.is_empty() {
        return Err(Error::EmptyFile);
    }

    let tasks: Vec<Task> = order
        .into_iter()
        .map(|id| {
            let (features, targets) = by_id.remove(&id).unwrap();
            Task {
                id,
                features,
                targets,
            }
        })
        .collect();

    let kind = kind_override.unwrap_or_else(|| infer_kind(&tasks));
    TaskSet::new(kind, tasks)
}

fn infer_kind(tasks: &[Task]) -> TaskKind {
    let binary = tasks
        .iter()
        .all(|t| t.targets.iter().all(|&v| v == 0.0 || v == 1.0));
    if binary {
        TaskKind::Classification
    } else {
        TaskKind::Regression
    }
}

#[derive(Serialize, Deserialize)]
struct TaskSetFile {
    schema_version: u32,
    kind: TaskKind,
    d: usize,
    tasks: Vec<Task>,
}

pub fn save_taskset(ts: &TaskSet, path: &Path) -> Result<()> {
    let doc = TaskSetFile {
        schema_version: TASKSET_SCHEMA_VERSION,
        kind: ts.kind,
        d: ts.d,
        tasks: ts.tasks.clone(),
    };
    let json = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_taskset_json(path: &Path) -> Result<TaskSet> {
    let raw = std::fs::read_to_string(path)?;
    let doc: TaskSetFile = serde_json::from_str(&raw)?;
    TaskSet::new(doc.kind, doc.tasks)
}

/// Z-scores every attribute with mean/std pooled over all tasks
/// (population std). Constant attributes map to 0 and are flagged.
pub fn normalize_features(ts: &TaskSet) -> (TaskSet, NormalizationStats) {
    let d = ts.d;
    let mut sums = vec![0.0; d];
    let mut count = 0usize;
    for t in &ts.tasks {
        for row in &t.features {
            for (j, v) in row.iter().enumerate() {
                sums[j] += v;
            }
        }
        count += t.n_samples();
    }
    let means: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; d];
    for t in &ts.tasks {
        for row in &t.features {
            for (j, v) in row.iter().enumerate() {
                let dlt = v - means[j];
                sq[j] += dlt * dlt;
            }
        }
    }
    let stds: Vec<f64> = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
    let constant: Vec<bool> = stds.iter().map(|&s| s == 0.0).collect();

    let tasks = ts
        .tasks
        .iter()
        .map(|t| Task {
            id: t.id.clone(),
            features: t
                .features
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .map(|(j, v)| {
                            if constant[j] {
                                0.0
                            } else {
                                (v - means[j]) / stds[j]
                            }
                        })
                        .collect()
                })
                .collect(),
            targets: t.targets.clone(),
        })
        .collect();

    let out = TaskSet {
        kind: ts.kind,
        d,
        tasks,
    };
    (
        out,
        NormalizationStats {
            mean: means,
            std: stds,
            constant,
        },
    )
}

/// Cyclically repeats each task's rows up to the set-wide maximum sample
/// size. Intended for training rows; evaluation splits are never passed
/// through this.
pub fn augment_to_max(ts: &TaskSet) -> TaskSet {
    let max = ts.tasks.iter().map(Task::n_samples).max().unwrap_or(0);
    let tasks = ts.tasks.iter().map(|t| augment_task(t, max)).collect();
    TaskSet {
        kind: ts.kind,
        d: ts.d,
        tasks,
    }
}

/// Cyclic repetition of one task's rows to exactly `target_len`.
pub fn augment_task(t: &Task, target_len: usize) -> Task {
    let n = t.n_samples();
    if n >= target_len {
        return t.clone();
    }
    let mut features = Vec::with_capacity(target_len);
    let mut targets = Vec::with_capacity(target_len);
    for i in 0..target_len {
        features.push(t.features[i % n].clone());
        targets.push(t.targets[i % n]);
    }
    Task {
        id: t.id.clone(),
        features,
        targets,
    }
}

/// Seeded holdout split. Val/test sizes are floored, the remainder goes to
/// train.
pub fn split_task(t: &Task, spec: &SplitSpec) -> Result<TaskSplit> {
    spec.validate()?;
    let n = t.n_samples();
    if (n as f64) * spec.min_frac() < 1.0 {
        return Err(Error::TooFewSamples {
            n,
            min_frac: spec.min_frac(),
        });
    }
    let n_val = ((n as f64) * spec.val_frac).floor() as usize;
    let n_test = ((n as f64) * spec.test_frac).floor() as usize;
    let n_train = n - n_val - n_test;

    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(spec.seed, &["split", &t.id]);
    idx.shuffle(&mut rng);

    let take = |range: std::ops::Range<usize>| -> Task {
        let mut features = Vec::with_capacity(range.len());
        let mut targets = Vec::with_capacity(range.len());
        for &i in &idx[range] {
            features.push(t.features[i].clone());
            targets.push(t.targets[i]);
        }
        Task {
            id: t.id.clone(),
            features,
            targets,
        }
    };

    Ok(TaskSplit {
        train: take(0..n_train),
        val: take(n_train..n_train + n_val),
        test: take(n_train + n_val..n),
    })
}

/// Synthetic multi-task generator with a known ground-truth grouping.
///
/// Tasks in the same cluster share a latent `linear + tanh` target function;
/// clusters draw their generators independently. Returns the task set and
/// the true partition.
pub fn synth_taskset(
    n_tasks: usize,
    n_clusters: usize,
    d: usize,
    samples_per_task: usize,
    noise: f64,
    seed: u64,
) -> Result<(TaskSet, Partition)> {
    if n_clusters == 0 || n_tasks < 2 || n_clusters > n_tasks {
        return Err(Error::InvalidSpec(format!(
            "need 1 <= n_clusters <= n_tasks and n_tasks >= 2, got {n_tasks}/{n_clusters}"
        )));
    }
    if d == 0 || samples_per_task < 2 {
        return Err(Error::InvalidSpec(
            "need d >= 1 and samples_per_task >= 2".into(),
        ));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidSpec("noise must be >= 0".into()));
    }

    struct Generator {
        w_tanh: Vec<f64>,
        b_tanh: f64,
        scale: f64,
        w_lin: Vec<f64>,
    }

    let generators: Vec<Generator> = (0..n_clusters)
        .map(|c| {
            let mut rng = rng_for(seed, &["synth-gen", &c.to_string()]);
            let inv = 1.0 / (d as f64).sqrt();
            Generator {
                w_tanh: (0..d).map(|_| normal(&mut rng) * 2.0 * inv).collect(),
                b_tanh: normal(&mut rng) * 0.5,
                scale: 1.5 + rng.random::<f64>(),
                w_lin: (0..d).map(|_| normal(&mut rng) * inv).collect(),
            }
        })
        .collect();

    let width = (n_tasks as f64).log10().floor() as usize + 1;
    let mut tasks = Vec::with_capacity(n_tasks);
    let mut groups: Vec<Vec<String>> = vec![Vec::new(); n_clusters];
    for t in 0..n_tasks {
        // contiguous blocks, remainder spread over the first clusters
        let cluster = t * n_clusters / n_tasks;
        let id = format!("t{t:0width$}");
        groups[cluster].push(id.clone());
        let g = &generators[cluster];
        let mut rng = rng_for(seed, &["synth-task", &id]);
        let mut features = Vec::with_capacity(samples_per_task);
        let mut targets = Vec::with_capacity(samples_per_task);
        for _ in 0..samples_per_task {
            let x: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let z: f64 = x.iter().zip(&g.w_tanh).map(|(a, b)| a * b).sum::<f64>() + g.b_tanh;
            let lin: f64 = x.iter().zip(&g.w_lin).map(|(a, b)| a * b).sum();
            let y = g.scale * z.tanh() + lin + noise * normal(&mut rng);
            features.push(x);
            targets.push(y);
        }
        tasks.push(Task {
            id,
            features,
            targets,
        });
    }

    let ts = TaskSet::new(TaskKind::Regression, tasks)?;
    let partition = Partition::new(
        groups
            .into_iter()
            .filter(|g| !g.is_empty())
            .map(GroupKey::new)
            .collect(),
        &ts.task_ids(),
    )?;
    Ok((ts, partition))
}

/// Standard normal via Box-Muller; two uniform draws per call keeps the
/// stream layout independent of any cached spare.
fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
