//! Implementations of the eight pipeline stages.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    load_taskset, normalize_features, split_task, synth_taskset, NormalizationStats, Task,
    TaskKind, TaskSet, TaskSplit,
};
use crate::error::{Error, Result};
use crate::features::{
    self, pair_features, CatalogKind, DistanceKind, PairInputs, PairTable, SharedPairStats,
};
use crate::mtl::{self, MtlOptions, MtlResult};
use crate::nn::{self, metrics::Metric};
use crate::predictor::{self, PredictionContext, TrainingRecord};
use crate::search::{
    self, cache::{EvalCache, GroupEval}, cluster, GroupKey, Partition, PartitionEvaluator,
};
use crate::stl::{run_stl, StlResult};
use crate::util::{derive_seed, rng_for, sha256_hex};

use super::{config::RunConfig, report::MethodRow, Artifact, Paths, Stage};

/// Planned pairwise trainings for `n` tasks: C(n, 2).
pub fn planned_pair_count(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Per-task mean and optimal pairing totals from the pairwise models.
///
/// `per_task_losses` maps each unordered pair to the two per-task losses
/// measured when that pair was trained together.
pub fn pairwise_summary(
    per_task_losses: &BTreeMap<String, BTreeMap<String, f64>>,
    task_ids: &[String],
) -> Result<(f64, f64)> {
    let mut all_pairs_total = 0.0;
    let mut optimal_total = 0.0;
    for id in task_ids {
        let mut losses = Vec::new();
        for partner in task_ids {
            if partner == id {
                continue;
            }
            let key = pair_key(id, partner);
            let entry = per_task_losses
                .get(&key)
                .ok_or_else(|| Error::MissingPairGain(id.clone(), partner.clone()))?;
            let l = entry.get(id).ok_or_else(|| {
                Error::MissingPairGain(id.clone(), partner.clone())
            })?;
            losses.push(*l);
        }
        if losses.is_empty() {
            return Err(Error::MissingPairGain(id.clone(), "<any>".into()));
        }
        all_pairs_total += crate::util::mean(&losses);
        optimal_total += losses.iter().cloned().fold(f64::INFINITY, f64::min);
    }
    Ok((all_pairs_total, optimal_total))
}

pub(crate) fn pair_key(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a}\x1f{b}")
    } else {
        format!("{b}\x1f{a}")
    }
}

// ---------------------------------------------------------------- loading

pub(crate) struct LoadedData {
    pub raw: TaskSet,
    /// Representation models train on (scaled when normalization is on).
    pub train_ts: TaskSet,
    pub scaled: Option<TaskSet>,
    pub catalog: CatalogKind,
    pub splits: BTreeMap<String, TaskSplit>,
}

impl LoadedData {
    pub fn group_distance(&self) -> DistanceKind {
        self.catalog.group_distance()
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.train_ts.task_ids()
    }
}

fn load_data(cfg: &RunConfig, stage: Stage) -> Result<LoadedData> {
    let paths = Paths::new(cfg);
    let raw: Artifact<TaskSet> =
        Artifact::load(&paths.taskset_raw(), cfg, stage, Stage::Ingest)?;
    let scaled = Artifact::<TaskSet>::load_if_current(&paths.taskset_scaled(), cfg)
        .map(|a| a.data);
    let raw = raw.data;
    let catalog = CatalogKind::for_binary_features(raw.has_binary_features());
    let train_ts = scaled.clone().unwrap_or_else(|| raw.clone());

    let spec = cfg.split_spec();
    let splits: BTreeMap<String, TaskSplit> = train_ts
        .tasks
        .iter()
        .map(|t| Ok((t.id.clone(), split_task(t, &spec)?)))
        .collect::<Result<_>>()?;

    Ok(LoadedData {
        raw,
        train_ts,
        scaled,
        catalog,
        splits,
    })
}

fn load_stl(cfg: &RunConfig, stage: Stage) -> Result<BTreeMap<String, StlResult>> {
    let paths = Paths::new(cfg);
    let art: Artifact<Vec<StlResult>> =
        Artifact::load(&paths.stl_results(), cfg, stage, Stage::Stl)?;
    Ok(art
        .data
        .into_iter()
        .map(|r| (r.task_id.clone(), r))
        .collect())
}

fn stl_losses(stl: &BTreeMap<String, StlResult>) -> BTreeMap<String, f64> {
    stl.iter().map(|(id, r)| (id.clone(), r.final_loss)).collect()
}

/// Cache namespace: dataset + splits + model + seed. Search-parameter
/// tweaks keep the trained-group cache valid.
fn mtl_context_hash(cfg: &RunConfig) -> String {
    let key = format!(
        "{}|{}|{}|{}",
        serde_json::to_string(&cfg.dataset).unwrap(),
        serde_json::to_string(&cfg.splits).unwrap(),
        serde_json::to_string(&cfg.model).unwrap(),
        cfg.seed
    );
    sha256_hex(&key)[..16].to_string()
}

fn open_cache(cfg: &RunConfig, stl: &BTreeMap<String, f64>) -> Result<EvalCache> {
    let paths = Paths::new(cfg);
    let mut cache = EvalCache::with_dir(paths.mtl_cache_dir(), &mtl_context_hash(cfg))?;
    cache.seed_singletons(stl);
    Ok(cache)
}

fn train_group(data: &LoadedData, cfg: &RunConfig, key: &GroupKey) -> Result<GroupEval> {
    let arch = cfg.mtl_arch(data.train_ts.kind);
    let tc = cfg.train_config(data.train_ts.kind);
    let result = mtl::train_mtl(&data.splits, key, &arch, &tc, &MtlOptions::default())?;
    Ok(GroupEval {
        group: key.clone(),
        total_loss: result.total_loss,
        per_task: result.per_task_loss,
    })
}

fn prediction_context<'a>(
    data: &'a LoadedData,
    stl: &'a BTreeMap<String, f64>,
    pairs: &'a PairsData,
) -> PredictionContext<'a> {
    PredictionContext {
        taskset: &data.train_ts,
        stl_losses: stl,
        pair_gains: &pairs.gains,
        wdots: &pairs.wdots,
        group_distance: data.group_distance(),
    }
}

// ---------------------------------------------------------------- stages

pub(crate) fn ingest(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    let raw = if let Some(csv) = &cfg.dataset.csv {
        load_taskset(&csv.path, &csv.schema(), cfg.dataset.kind_override)?
    } else {
        let s = cfg.dataset.synth.as_ref().expect("validated");
        let (ts, truth) = synth_taskset(
            s.n_tasks,
            s.n_clusters,
            s.d,
            s.samples_per_task,
            s.noise,
            derive_seed(cfg.seed, &["synth"]),
        )?;
        Artifact::new(cfg, truth).write(&paths.true_partition())?;
        ts
    };

    let binary = raw.has_binary_features();
    let normalize = cfg.dataset.normalize.unwrap_or(!binary);
    if normalize && binary {
        // scaling would break the 0/1 domain the Hamming features need
        return Err(Error::ConfigInvalid(
            "normalize=true is invalid for binary-feature datasets".into(),
        ));
    }

    let (scaled, stats): (Option<TaskSet>, Option<NormalizationStats>) = if normalize {
        let (s, st) = normalize_features(&raw);
        (Some(s), Some(st))
    } else {
        (None, None)
    };

    Artifact::new(cfg, raw).write(&paths.taskset_raw())?;
    if let Some(s) = scaled {
        Artifact::new(cfg, s).write(&paths.taskset_scaled())?;
    }
    Artifact::new(cfg, stats).write(&paths.norm_stats())?;
    Ok(())
}

pub(crate) fn stl(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    if Artifact::<Vec<StlResult>>::load_if_current(&paths.stl_results(), cfg).is_some() {
        return Ok(());
    }
    let data = load_data(cfg, Stage::Stl)?;
    let kind = data.train_ts.kind;
    let tc = cfg.train_config(kind);
    let results: Vec<StlResult> = data
        .train_ts
        .tasks
        .par_iter()
        .map(|task| {
            let spec = cfg.stl_spec(data.train_ts.d, kind);
            let split = data
                .splits
                .get(&task.id)
                .expect("split exists for every task");
            // dataset-level statistics come from the raw representation
            let full = data.raw.task(&task.id).expect("raw task exists");
            let mut r = run_stl(task, split, &spec, &tc)?;
            r.target_sigma = full.target_sigma();
            r.target_var = full.target_var();
            Ok(r)
        })
        .collect::<Result<_>>()?;
    Artifact::new(cfg, results).write(&paths.stl_results())?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct PairsData {
    pub planned: usize,
    pub gains: PairTable,
    pub wdots: PairTable,
    pub z: PairTable,
    /// Unordered pair key -> per-task losses in that pair model.
    pub per_task_losses: BTreeMap<String, BTreeMap<String, f64>>,
    pub fresh_trainings: usize,
}

pub(crate) fn pairs(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    if Artifact::<PairsData>::load_if_current(&paths.pairs(), cfg).is_some() {
        return Ok(());
    }
    let data = load_data(cfg, Stage::Pairs)?;
    let stl = load_stl(cfg, Stage::Pairs)?;
    let losses = stl_losses(&stl);
    let ids = data.task_ids();
    let kind = data.train_ts.kind;

    // all-task model: head vectors and the inter-task affinity matrix
    let simple = {
        let arch = cfg.mtl_arch(kind);
        let tc = cfg.train_config(kind);
        let opts = MtlOptions {
            compute_z: true,
            z_every: cfg.model.z_every,
            z_rate: None,
        };
        mtl::train_mtl(&data.splits, &GroupKey::new(ids.clone()), &arch, &tc, &opts)?
    };
    let mut wdots = PairTable::new();
    let mut z = PairTable::new();
    let zm = simple.z_matrix.as_ref().expect("z requested");
    let order = simple.group.ids();
    for i in 0..order.len() {
        for j in (i + 1)..order.len() {
            let wi = &simple.task_vectors[&order[i]];
            let wj = &simple.task_vectors[&order[j]];
            let dot: f64 = wi.iter().zip(wj).map(|(a, b)| a * b).sum();
            wdots.insert(&order[i], &order[j], dot);
            z.insert(&order[i], &order[j], 0.5 * (zm[i][j] + zm[j][i]));
        }
    }

    // every unordered pair trains through the shared cache
    let mut cache = open_cache(cfg, &losses)?;
    let mut pair_keys: Vec<(String, String)> = Vec::with_capacity(planned_pair_count(ids.len()));
    for i in 0..ids.len() {
        for j in (i + 1)..ids.len() {
            pair_keys.push((ids[i].clone(), ids[j].clone()));
        }
    }
    let missing: Vec<GroupKey> = pair_keys
        .iter()
        .map(|(a, b)| GroupKey::new([a.clone(), b.clone()]))
        .filter(|k| !cache.contains(k))
        .collect();
    let trained: Vec<GroupEval> = missing
        .par_iter()
        .map(|k| train_group(&data, cfg, k))
        .collect::<Result<_>>()?;
    let fresh = trained.len();
    for eval in trained {
        cache.insert(eval);
    }

    let mut gains = PairTable::new();
    let mut per_task_losses = BTreeMap::new();
    for (a, b) in &pair_keys {
        let key = GroupKey::new([a.clone(), b.clone()]);
        let eval = cache.get(&key).expect("pair just trained");
        let mut stl_pair = BTreeMap::new();
        stl_pair.insert(a.clone(), losses[a]);
        stl_pair.insert(b.clone(), losses[b]);
        gains.insert(a, b, mtl::relative_mtl_gain(&stl_pair, eval.total_loss)?);
        per_task_losses.insert(pair_key(a, b), eval.per_task.clone());
    }

    // feature table and its schema
    write_pair_features_csv(cfg, &data, &stl, &wdots, &z, &pair_keys)?;
    let schema = serde_json::json!({
        "schema_version": super::ARTIFACT_SCHEMA_VERSION,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "catalog": data.catalog,
        "count": features::feature_names(data.catalog).len(),
        "names": features::feature_names(data.catalog),
    });
    std::fs::write(
        paths.features_schema(),
        serde_json::to_string_pretty(&schema)?,
    )?;

    Artifact::new(cfg, simple).write(&paths.simple_mtl())?;
    Artifact::new(
        cfg,
        PairsData {
            planned: planned_pair_count(ids.len()),
            gains,
            wdots,
            z,
            per_task_losses,
            fresh_trainings: fresh,
        },
    )
    .write(&paths.pairs())?;
    Ok(())
}

fn write_pair_features_csv(
    cfg: &RunConfig,
    data: &LoadedData,
    stl: &BTreeMap<String, StlResult>,
    wdots: &PairTable,
    z: &PairTable,
    pair_keys: &[(String, String)],
) -> Result<()> {
    let paths = Paths::new(cfg);
    let names = features::feature_names(data.catalog);
    let mut out = String::new();
    out.push_str(&format!(
        "# schema_version={} config_hash={} seed={}\n",
        super::ARTIFACT_SCHEMA_VERSION,
        cfg.config_hash(),
        cfg.seed
    ));
    out.push_str("task_i,task_j,");
    out.push_str(&names.join(","));
    out.push('\n');

    let rows: Vec<String> = pair_keys
        .par_iter()
        .map(|(a, b)| {
            let fi = build_pair_inputs(data, stl, wdots, z, a, b)?;
            let pf = pair_features(&fi)?;
            let mut row = format!("{a},{b}");
            for name in &names {
                row.push(',');
                row.push_str(&format!("{}", pf.get(name).unwrap()));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    std::fs::write(paths.pair_features_csv(), out)?;
    Ok(())
}

fn build_pair_inputs<'a>(
    data: &'a LoadedData,
    stl: &'a BTreeMap<String, StlResult>,
    wdots: &PairTable,
    z: &PairTable,
    a: &str,
    b: &str,
) -> Result<PairInputs<'a>> {
    let get_task = |ts: &'a TaskSet, id: &str| -> Result<&'a Task> {
        ts.task(id)
            .ok_or_else(|| Error::MissingPrerequisite(format!("unknown task `{id}`")))
    };
    Ok(PairInputs {
        task_i: get_task(&data.raw, a)?,
        task_j: get_task(&data.raw, b)?,
        scaled_i: data.scaled.as_ref().map(|s| get_task(s, a)).transpose()?,
        scaled_j: data.scaled.as_ref().map(|s| get_task(s, b)).transpose()?,
        stl_i: stl
            .get(a)
            .ok_or_else(|| Error::MissingPrerequisite(format!("no STL result for `{a}`")))?,
        stl_j: stl
            .get(b)
            .ok_or_else(|| Error::MissingPrerequisite(format!("no STL result for `{b}`")))?,
        shared: SharedPairStats {
            z_affinity: z.require(a, b)?,
            w_dot: wdots.require(a, b)?,
        },
        catalog: data.catalog,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct SampleData {
    pub partitions: Vec<(Partition, f64)>,
    pub fresh_trainings: usize,
}

pub(crate) fn sample(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    if Artifact::<SampleData>::load_if_current(&paths.sample(), cfg).is_some() {
        return Ok(());
    }
    let data = load_data(cfg, Stage::Sample)?;
    let stl = load_stl(cfg, Stage::Sample)?;
    let losses = stl_losses(&stl);
    let ids = data.task_ids();
    let n_partitions = cfg.sample.resolve(ids.len());

    let sampler = search::BlockCountSampler::new(ids.len());
    let mut rng = rng_for(cfg.seed, &["sample-draw"]);
    let drawn: Vec<Partition> = (0..n_partitions)
        .map(|_| search::sample_uniform_with(&sampler, &ids, &mut rng))
        .collect();

    let mut cache = open_cache(cfg, &losses)?;
    let mut missing: BTreeSet<GroupKey> = BTreeSet::new();
    for p in &drawn {
        for g in p.groups() {
            if g.len() >= 2 && !cache.contains(g) {
                missing.insert(g.clone());
            }
        }
    }
    let missing: Vec<GroupKey> = missing.into_iter().collect();
    let trained: Vec<GroupEval> = missing
        .par_iter()
        .map(|k| train_group(&data, cfg, k))
        .collect::<Result<_>>()?;
    let fresh = trained.len();
    for eval in trained {
        cache.insert(eval);
    }

    let partitions: Vec<(Partition, f64)> = drawn
        .into_iter()
        .map(|p| {
            let total: f64 = p
                .groups()
                .iter()
                .map(|g| cache.get(g).expect("evaluated").total_loss)
                .sum();
            (p, total)
        })
        .collect();

    Artifact::new(
        cfg,
        SampleData {
            partitions,
            fresh_trainings: fresh,
        },
    )
    .write(&paths.sample())?;
    Ok(())
}

fn sample_records(
    cfg: &RunConfig,
    data: &LoadedData,
    stl: &BTreeMap<String, f64>,
    pairs: &PairsData,
) -> Result<Vec<TrainingRecord>> {
    let cache = open_cache(cfg, stl)?;
    let ctx = prediction_context(data, stl, pairs);
    let mut records = Vec::new();
    for (key, eval) in cache.iter() {
        if key.len() < 3 {
            continue;
        }
        let stl_sum: f64 = key.ids().iter().map(|id| stl[id]).sum();
        if !(stl_sum > 0.0) {
            return Err(Error::ZeroStlSum);
        }
        records.push(TrainingRecord {
            group: key.clone(),
            features: ctx.group_features(key)?,
            observed_gain: (stl_sum - eval.total_loss) / stl_sum,
        });
    }
    Ok(records)
}

pub(crate) fn predictor(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    let data = load_data(cfg, Stage::Predictor)?;
    let stl = stl_losses(&load_stl(cfg, Stage::Predictor)?);
    let pairs: Artifact<PairsData> =
        Artifact::load(&paths.pairs(), cfg, Stage::Predictor, Stage::Pairs)?;
    // the sample stage must have populated the cache
    let _: Artifact<SampleData> =
        Artifact::load(&paths.sample(), cfg, Stage::Predictor, Stage::Sample)?;

    let records = sample_records(cfg, &data, &stl, &pairs.data)?;
    let pcfg = cfg.predictor_config(derive_seed(cfg.seed, &["predictor"]));
    let model = predictor::train_predictor(&records, &pcfg)?;
    let train_mse = predictor::training_mse(&model, &records)?;

    let mut log = String::new();
    log.push_str(&format!(
        "# schema_version={} config_hash={} seed={}\n",
        super::ARTIFACT_SCHEMA_VERSION,
        cfg.config_hash(),
        cfg.seed
    ));
    log.push_str("records,train_mse\n");
    log.push_str(&format!("{},{}\n", records.len(), train_mse));
    std::fs::write(paths.predictor_log(), log)?;

    Artifact::new(cfg, model).write(&paths.predictor())?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct SearchRunRow {
    pub repeat: usize,
    pub best_partition: Partition,
    pub total_loss: f64,
    pub fresh_trainings: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct SearchRuns {
    pub runs: Vec<SearchRunRow>,
    pub sample_trainings: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ResultData {
    pub best_partition: Partition,
    pub total_loss: f64,
    pub mtl_trainings: usize,
}

pub(crate) fn search(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    let data = load_data(cfg, Stage::Search)?;
    let stl = stl_losses(&load_stl(cfg, Stage::Search)?);
    let pairs: Artifact<PairsData> =
        Artifact::load(&paths.pairs(), cfg, Stage::Search, Stage::Pairs)?;
    let sample: Artifact<SampleData> =
        Artifact::load(&paths.sample(), cfg, Stage::Search, Stage::Sample)?;

    let ctx = prediction_context(&data, &stl, &pairs.data);
    let trainer = |key: &GroupKey| train_group(&data, cfg, key);

    let mut runs = Vec::with_capacity(cfg.report.repeats);
    let mut total_fresh = 0usize;
    for repeat in 0..cfg.report.repeats {
        let mut cache = open_cache(cfg, &stl)?;
        let mut evaluator = PartitionEvaluator::new(&mut cache, &trainer);
        let mut scfg = cfg.search_config(derive_seed(cfg.seed, &["search", &repeat.to_string()]));
        // executions start from different sample ranks, cycling 1..=3
        scfg.start_rank = ((cfg.search.start_rank - 1 + repeat) % 3) + 1;
        let pcfg = cfg.predictor_config(derive_seed(cfg.seed, &["predictor"]));
        let outcome = search::search_with_predictor(
            &ctx,
            &sample.data.partitions,
            &mut evaluator,
            &pcfg,
            &scfg,
        )?;
        write_trace(cfg, repeat, &outcome.trace)?;
        total_fresh += outcome.fresh_trainings;
        runs.push(SearchRunRow {
            repeat,
            best_partition: outcome.best,
            total_loss: outcome.best_loss,
            fresh_trainings: outcome.fresh_trainings,
        });
    }

    let best = runs
        .iter()
        .min_by(|a, b| {
            a.total_loss
                .partial_cmp(&b.total_loss)
                .unwrap()
                .then_with(|| a.repeat.cmp(&b.repeat))
        })
        .expect("at least one repeat");
    Artifact::new(
        cfg,
        ResultData {
            best_partition: best.best_partition.clone(),
            total_loss: best.total_loss,
            mtl_trainings: total_fresh,
        },
    )
    .write(&paths.result())?;
    Artifact::new(
        cfg,
        SearchRuns {
            runs,
            sample_trainings: sample.data.fresh_trainings,
        },
    )
    .write(&paths.search_runs())?;
    Ok(())
}

fn write_trace(cfg: &RunConfig, repeat: usize, trace: &search::SearchTrace) -> Result<()> {
    let paths = Paths::new(cfg);
    let mut f = std::fs::File::create(paths.trace(repeat))?;
    let header = serde_json::json!({
        "schema_version": super::ARTIFACT_SCHEMA_VERSION,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "repeat": repeat,
    });
    writeln!(f, "{header}")?;
    for record in &trace.records {
        writeln!(f, "{}", serde_json::to_string(record)?)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct BaselineRow {
    pub method: String,
    pub losses: Vec<f64>,
    pub mtl_trainings: f64,
    pub representative: Option<Partition>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct BaselinesData {
    pub rows: Vec<BaselineRow>,
}

pub(crate) fn baselines(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    let data = load_data(cfg, Stage::Baselines)?;
    let stl_full = load_stl(cfg, Stage::Baselines)?;
    let stl = stl_losses(&stl_full);
    let pairs: Artifact<PairsData> =
        Artifact::load(&paths.pairs(), cfg, Stage::Baselines, Stage::Pairs)?;
    let simple: Artifact<MtlResult> =
        Artifact::load(&paths.simple_mtl(), cfg, Stage::Baselines, Stage::Search)?;
    let search_runs: Artifact<SearchRuns> =
        Artifact::load(&paths.search_runs(), cfg, Stage::Baselines, Stage::Search)?;

    let ids = data.task_ids();
    let kind = data.train_ts.kind;
    let mut rows = Vec::new();

    // STL
    let stl_total: f64 = stl.values().sum();
    rows.push(BaselineRow {
        method: "STL".into(),
        losses: vec![stl_total],
        mtl_trainings: 0.0,
        representative: Some(Partition::singletons(&ids)),
    });

    // Pairwise MTL rows
    let (all_pairs, optimal) = pairwise_summary(&pairs.data.per_task_losses, &ids)?;
    rows.push(BaselineRow {
        method: "PairwiseAll".into(),
        losses: vec![all_pairs],
        mtl_trainings: pairs.data.planned as f64,
        representative: None,
    });
    rows.push(BaselineRow {
        method: "PairwiseOptimal".into(),
        losses: vec![optimal],
        mtl_trainings: pairs.data.planned as f64,
        representative: None,
    });

    // Simple MTL: per-repeat training seeds give honest variance
    let mut simple_losses = Vec::with_capacity(cfg.report.repeats);
    for repeat in 0..cfg.report.repeats {
        let loss = if repeat == 0 {
            simple.data.total_loss
        } else {
            let arch = cfg.mtl_arch(kind);
            let mut tc = cfg.train_config(kind);
            tc.seed = derive_seed(cfg.seed, &["simple-mtl", &repeat.to_string()]);
            mtl::train_mtl(
                &data.splits,
                &GroupKey::new(ids.clone()),
                &arch,
                &tc,
                &MtlOptions::default(),
            )?
            .total_loss
        };
        simple_losses.push(loss);
    }
    rows.push(BaselineRow {
        method: "SimpleMTL".into(),
        losses: simple_losses,
        mtl_trainings: cfg.report.repeats as f64,
        representative: Some(Partition::one_group(&ids)),
    });

    let trainer = |key: &GroupKey| train_group(&data, cfg, key);
    let k_max = cfg.baselines.cluster_k_max.min(ids.len());
    let k_range: Vec<usize> = (cfg.baselines.cluster_k_min..=k_max).collect();

    // Hierarchical clustering over transformed pairwise gains
    if cfg.baselines.hierarchical {
        let mut losses = Vec::new();
        let mut best: Option<(f64, Partition)> = None;
        let mut cache = open_cache(cfg, &stl)?;
        let mut evaluator = PartitionEvaluator::new(&mut cache, &trainer);
        for &k in &k_range {
            let p = cluster::hierarchical_baseline(
                &ids,
                &pairs.data.gains,
                cfg.baselines.hierarchical_transform,
                cfg.baselines.linkage,
                k,
            )?;
            let loss = evaluator.evaluate(&p)?;
            if best.as_ref().is_none_or(|(bl, _)| loss < *bl) {
                best = Some((loss, p.clone()));
            }
            losses.push(loss);
        }
        let fresh = evaluator.fresh_trainings;
        rows.push(BaselineRow {
            method: "Hierarchical".into(),
            losses,
            mtl_trainings: fresh as f64,
            representative: best.map(|(_, p)| p),
        });
    }

    // k-means over task head vectors with elbow selection
    if cfg.baselines.kmeans {
        let outcome = cluster::kmeans_baseline(
            &simple.data.task_vectors,
            &k_range,
            derive_seed(cfg.seed, &["kmeans"]),
        )?;
        let mut losses = Vec::new();
        let mut elbow_partition = None;
        let mut cache = open_cache(cfg, &stl)?;
        let mut evaluator = PartitionEvaluator::new(&mut cache, &trainer);
        for run in &outcome.runs {
            let loss = evaluator.evaluate(&run.partition)?;
            if run.k == outcome.elbow_k {
                elbow_partition = Some(run.partition.clone());
            }
            losses.push(loss);
        }
        let fresh = evaluator.fresh_trainings;
        rows.push(BaselineRow {
            method: "KMeans".into(),
            losses,
            mtl_trainings: fresh as f64,
            representative: elbow_partition,
        });
    }

    // budget-paired random search, one run per search repeat
    if cfg.baselines.random_search {
        let mut losses = Vec::new();
        let mut fresh_total = 0usize;
        let mut best: Option<(f64, Partition)> = None;
        for run in &search_runs.data.runs {
            let budget = search_runs.data.sample_trainings + run.fresh_trainings;
            let mut cache = open_cache(cfg, &stl)?;
            let mut evaluator = PartitionEvaluator::new(&mut cache, &trainer);
            let (p, loss) = search::random_search_baseline(
                &ids,
                &mut evaluator,
                budget,
                derive_seed(cfg.seed, &["random", &run.repeat.to_string()]),
                cfg.baselines.random_max_draws,
            )?;
            fresh_total += evaluator.fresh_trainings.max(budget);
            if best.as_ref().is_none_or(|(bl, _)| loss < *bl) {
                best = Some((loss, p.clone()));
            }
            losses.push(loss);
        }
        let n_runs = search_runs.data.runs.len().max(1);
        rows.push(BaselineRow {
            method: "RandomSearch".into(),
            losses,
            mtl_trainings: fresh_total as f64 / n_runs as f64,
            representative: best.map(|(_, p)| p),
        });
    }

    Artifact::new(cfg, BaselinesData { rows }).write(&paths.baselines())?;
    Ok(())
}

pub(crate) fn report(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    let data = load_data(cfg, Stage::Report)?;
    let baselines: Artifact<BaselinesData> =
        Artifact::load(&paths.baselines(), cfg, Stage::Report, Stage::Baselines)?;
    let search_runs: Artifact<SearchRuns> =
        Artifact::load(&paths.search_runs(), cfg, Stage::Report, Stage::Search)?;
    let result: Artifact<ResultData> =
        Artifact::load(&paths.result(), cfg, Stage::Report, Stage::Search)?;

    let mut rows: Vec<MethodRow> = Vec::new();
    let classification = data.train_ts.kind == TaskKind::Classification;
    for b in &baselines.data.rows {
        let (auc, err) = if classification {
            match &b.representative {
                Some(p) => partition_metrics(cfg, &data, p)?,
                None => (None, None),
            }
        } else {
            (None, None)
        };
        rows.push(MethodRow {
            method: b.method.clone(),
            losses: b.losses.clone(),
            auc,
            error_rate: err,
            mtl_trainings: b.mtl_trainings,
        });
    }

    // our approach
    let ours_losses: Vec<f64> = search_runs
        .data
        .runs
        .iter()
        .map(|r| r.total_loss)
        .collect();
    let mean_fresh = search_runs
        .data
        .runs
        .iter()
        .map(|r| r.fresh_trainings as f64)
        .sum::<f64>()
        / search_runs.data.runs.len().max(1) as f64;
    let (auc, err) = if classification {
        partition_metrics(cfg, &data, &result.data.best_partition)?
    } else {
        (None, None)
    };
    rows.push(MethodRow {
        method: "Ours".into(),
        losses: ours_losses,
        auc,
        error_rate: err,
        mtl_trainings: search_runs.data.sample_trainings as f64 + mean_fresh,
    });

    let report = super::report::ComparisonReport { rows };
    report.write_csv(&paths.report_csv(), cfg)?;
    report.write_markdown(&paths.report_md())?;
    Ok(())
}

/// Mean per-task AUC and error rate of a partition's models, retrained
/// deterministically; tasks with single-class test labels are skipped for
/// AUC.
fn partition_metrics(
    cfg: &RunConfig,
    data: &LoadedData,
    partition: &Partition,
) -> Result<(Option<f64>, Option<f64>)> {
    let kind = data.train_ts.kind;
    let mut aucs = Vec::new();
    let mut errs = Vec::new();
    for group in partition.groups() {
        let preds: BTreeMap<String, Vec<f64>> = if group.len() == 1 {
            let id = &group.ids()[0];
            let task = data.train_ts.task(id).expect("task exists");
            let split = &data.splits[id];
            let spec = cfg.stl_spec(data.train_ts.d, kind);
            let tc = cfg.train_config(kind);
            let mut m = BTreeMap::new();
            m.insert(id.clone(), crate::stl::stl_test_predictions(task, split, &spec, &tc)?);
            m
        } else {
            let arch = cfg.mtl_arch(kind);
            let tc = cfg.train_config(kind);
            let r = mtl::train_mtl(&data.splits, group, &arch, &tc, &MtlOptions::default())?;
            r.per_task_test_pred
        };
        for (id, pred) in preds {
            let y = &data.splits[&id].test.targets;
            if let Ok(a) = nn::metrics::metric(Metric::Auc, &pred, y) {
                aucs.push(a);
            }
            errs.push(nn::metrics::metric(Metric::ErrorRate, &pred, y)?);
        }
    }
    let auc = (!aucs.is_empty()).then(|| crate::util::mean(&aucs));
    let err = (!errs.is_empty()).then(|| crate::util::mean(&errs));
    Ok((auc, err))
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
struct RunMeta {
    wall_seconds: BTreeMap<String, f64>,
}

/// Wall-clock bookkeeping lives outside result.json so end-to-end runs stay
/// byte-reproducible.
pub(crate) fn record_wall_time(cfg: &RunConfig, stage: Stage, secs: f64) -> Result<()> {
    let paths = Paths::new(cfg);
    let mut meta: RunMeta = std::fs::read_to_string(paths.run_meta())
        .ok()
        .and_then(|raw| serde_json::from_str(&raw).ok())
        .unwrap_or_default();
    meta.wall_seconds.insert(stage.to_string(), secs);
    std::fs::write(paths.run_meta(), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planned_pairs_match_benchmark_counts() {
        assert_eq!(planned_pair_count(139), 9591);
        assert_eq!(planned_pair_count(35), 595);
        assert_eq!(planned_pair_count(29), 406);
        assert_eq!(planned_pair_count(42), 861);
        assert_eq!(planned_pair_count(2), 1);
    }

    #[test]
    fn pairwise_summary_mean_and_min() {
        // t1 pairs: loss 1.0 with t2, 3.0 with t3
        let ids: Vec<String> = ["t1", "t2", "t3"].iter().map(|s| s.to_string()).collect();
        let mut per = BTreeMap::new();
        let mut e12 = BTreeMap::new();
        e12.insert("t1".to_string(), 1.0);
        e12.insert("t2".to_string(), 2.0);
        per.insert(pair_key("t1", "t2"), e12);
        let mut e13 = BTreeMap::new();
        e13.insert("t1".to_string(), 3.0);
        e13.insert("t3".to_string(), 1.0);
        per.insert(pair_key("t1", "t3"), e13);
        let mut e23 = BTreeMap::new();
        e23.insert("t2".to_string(), 2.0);
        e23.insert("t3".to_string(), 1.0);
        per.insert(pair_key("t2", "t3"), e23);

        let (all, opt) = pairwise_summary(&per, &ids).unwrap();
        // t1: mean(1,3)=2 min 1; t2: mean(2,2)=2 min 2; t3: mean(1,1)=1 min 1
        assert!((all - 5.0).abs() < 1e-12);
        assert!((opt - 4.0).abs() < 1e-12);
        assert!(opt <= all);
    }

    #[test]
    fn pairwise_summary_single_pair_equal() {
        let ids: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let mut per = BTreeMap::new();
        let mut e = BTreeMap::new();
        e.insert("a".to_string(), 1.5);
        e.insert("b".to_string(), 2.5);
        per.insert(pair_key("a", "b"), e);
        let (all, opt) = pairwise_summary(&per, &ids).unwrap();
        assert_eq!(all, opt);
    }
}
