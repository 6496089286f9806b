//! Groupwise relative-gain predictor: training, querying, and the
//! gain-to-loss conversion used to estimate whole-partition losses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Task, TaskSet};
use crate::error::{Error, Result};
use crate::features::{group_features, DistanceKind, GroupFeatures, PairTable, GROUP_FEATURE_NAMES};
use crate::nn::{
    self, Activation, DataRef, LossKind, NetSpec, OutputActivation, Params, TrainConfig,
};
use crate::search::cache::EvalCache;
use crate::search::partition::{GroupKey, Partition};

pub const MIN_TRAINING_RECORDS: usize = 10;

/// One observed (group, gain) outcome from a completed MTL training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub group: GroupKey,
    pub features: GroupFeatures,
    pub observed_gain: f64,
}

/// Architecture and training knobs for the predictor net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub hidden_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Input feature subset; `None` means the full groupwise catalog.
    pub feature_names: Option<Vec<String>>,
    /// Retraining continues from the current parameters when true.
    pub warm_start: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            hidden_widths: vec![16, 12, 16, 12],
            hidden_activation: Activation::Tanh,
            learning_rate: 1.2e-3,
            epochs: 200,
            seed: 0,
            feature_names: None,
            warm_start: true,
        }
    }
}

/// Trained gain predictor: feature order, input normalization, and net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub feature_names: Vec<String>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub spec: NetSpec,
    pub params: Params,
    pub trained_on: usize,
}

impl PredictorModel {
    fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(i, v)| {
                if self.input_std[i] == 0.0 {
                    0.0
                } else {
                    (v - self.input_mean[i]) / self.input_std[i]
                }
            })
            .collect()
    }

    fn feature_vector(&self, gf: &GroupFeatures) -> Result<Vec<f64>> {
        self.feature_names
            .iter()
            .map(|name| {
                gf.get(name)
                    .ok_or_else(|| Error::MissingFeature(name.clone()))
            })
            .collect()
    }
}

/// Keeps the latest record per group.
fn dedup_records(records: &[TrainingRecord]) -> Vec<&TrainingRecord> {
    let mut by_group: BTreeMap<String, &TrainingRecord> = BTreeMap::new();
    for r in records {
        by_group.insert(r.group.canonical(), r);
    }
    by_group.into_values().collect()
}

fn build_matrix(
    records: &[&TrainingRecord],
    names: &[String],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut x = Vec::with_capacity(records.len() * names.len());
    let mut y = Vec::with_capacity(records.len());
    for r in records {
        for name in names {
            x.push(
                r.features
                    .get(name)
                    .ok_or_else(|| Error::MissingFeature(name.clone()))?,
            );
        }
        y.push(r.observed_gain);
    }
    Ok((x, y))
}

fn column_stats(x: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for c in 0..d {
            mean[c] += x[r * d + c];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for r in 0..n {
        for c in 0..d {
            let dv = x[r * d + c] - mean[c];
            var[c] += dv * dv;
        }
    }
    let std = var.iter().map(|v| (v / n as f64).sqrt()).collect();
    (mean, std)
}

fn apply_norm(x: &mut [f64], n: usize, mean: &[f64], std: &[f64]) {
    let d = mean.len();
    for r in 0..n {
        for c in 0..d {
            let v = &mut x[r * d + c];
            *v = if std[c] == 0.0 { 0.0 } else { (*v - mean[c]) / std[c] };
        }
    }
}

/// Trains the predictor from scratch on deduplicated records.
pub fn train_predictor(
    records: &[TrainingRecord],
    config: &PredictorConfig,
) -> Result<PredictorModel> {
    let deduped = dedup_records(records);
    if deduped.len() < MIN_TRAINING_RECORDS {
        return Err(Error::TooFewRecords {
            min: MIN_TRAINING_RECORDS,
            got: deduped.len(),
        });
    }
    let names: Vec<String> = config
        .feature_names
        .clone()
        .unwrap_or_else(|| GROUP_FEATURE_NAMES.iter().map(|s| s.to_string()).collect());
    let (mut x, y) = build_matrix(&deduped, &names)?;
    let n = deduped.len();
    let (mean, std) = column_stats(&x, n, names.len());
    apply_norm(&mut x, n, &mean, &std);

    let mut widths = vec![names.len()];
    widths.extend_from_slice(&config.hidden_widths);
    widths.push(1);
    let spec = NetSpec::new(
        widths,
        config.hidden_activation,
        OutputActivation::Linear,
        config.learning_rate,
    )?;
    let tc = TrainConfig::new(config.epochs, config.seed, LossKind::Mse);
    let out = nn::train(
        &spec,
        &tc,
        DataRef::new(&x, &y, n),
        DataRef::new(&x, &y, n),
    )?;
    Ok(PredictorModel {
        feature_names: names,
        input_mean: mean,
        input_std: std,
        spec,
        params: out.params,
        trained_on: n,
    })
}

/// Retrains on the full record set. With warm start the current parameters
/// and input normalization are kept; otherwise this is a fresh fit.
pub fn update_predictor(
    model: &PredictorModel,
    all_records: &[TrainingRecord],
    config: &PredictorConfig,
) -> Result<PredictorModel> {
    if !config.warm_start {
        return train_predictor(all_records, config);
    }
    let deduped = dedup_records(all_records);
    let names = model.feature_names.clone();
    let (mut x, y) = build_matrix(&deduped, &names)?;
    let n = deduped.len();
    // normalization is frozen at initial-training statistics so the warm
    // parameters stay consistent with their inputs
    apply_norm(&mut x, n, &model.input_mean, &model.input_std);
    let tc = TrainConfig::new(config.epochs, config.seed, LossKind::Mse);
    let out = nn::train_with_init(
        &model.spec,
        &tc,
        Some(model.params.clone()),
        DataRef::new(&x, &y, n),
        DataRef::new(&x, &y, n),
    )?;
    Ok(PredictorModel {
        feature_names: names,
        input_mean: model.input_mean.clone(),
        input_std: model.input_std.clone(),
        spec: model.spec.clone(),
        params: out.params,
        trained_on: n.max(model.trained_on),
    })
}

/// Predicted relative gain for one group's features; unclamped.
pub fn predict_gain(model: &PredictorModel, gf: &GroupFeatures) -> Result<f64> {
    let raw = model.feature_vector(gf)?;
    let x = model.normalize(&raw);
    let out = nn::forward(&model.spec, &model.params, &x, 1)?;
    Ok(out[0])
}

/// Training-set MSE of a model over records, for retraining diagnostics.
pub fn training_mse(model: &PredictorModel, records: &[TrainingRecord]) -> Result<f64> {
    let deduped = dedup_records(records);
    let (mut x, y) = build_matrix(&deduped, &model.feature_names)?;
    let n = deduped.len();
    apply_norm(&mut x, n, &model.input_mean, &model.input_std);
    let pred = nn::forward(&model.spec, &model.params, &x, n)?;
    nn::loss(LossKind::Mse, &pred, &y)
}

/// Coefficient of determination, `1 - SSE/SST`.
pub fn r_squared(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() || pred.len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "r_squared needs equal-length vectors of >= 2, got {} and {}",
            pred.len(),
            actual.len()
        )));
    }
    let mean = crate::util::mean(actual);
    let sst: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if sst == 0.0 {
        return Err(Error::ZeroVariance("actual".into()));
    }
    let sse: f64 = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok(1.0 - sse / sst)
}

/// Everything needed to estimate a partition's loss without training.
pub struct PredictionContext<'a> {
    pub taskset: &'a TaskSet,
    pub stl_losses: &'a BTreeMap<String, f64>,
    pub pair_gains: &'a PairTable,
    pub wdots: &'a PairTable,
    pub group_distance: DistanceKind,
}

impl<'a> PredictionContext<'a> {
    fn task(&self, id: &str) -> Result<&'a Task> {
        self.taskset
            .task(id)
            .ok_or_else(|| Error::MissingPrerequisite(format!("unknown task `{id}`")))
    }

    fn stl(&self, id: &str) -> Result<f64> {
        self.stl_losses
            .get(id)
            .copied()
            .ok_or_else(|| Error::MissingPrerequisite(format!("no STL loss for `{id}`")))
    }

    /// Groupwise features of an arbitrary group of >= 3 tasks.
    pub fn group_features(&self, group: &GroupKey) -> Result<GroupFeatures> {
        let tasks: Vec<&Task> = group
            .ids()
            .iter()
            .map(|id| self.task(id))
            .collect::<Result<_>>()?;
        group_features(&tasks, self.pair_gains, self.wdots, self.group_distance)
    }
}

/// Estimated total loss of a partition: exact STL losses for singletons,
/// observed pairwise gains for pairs, the predictor for larger groups, and
/// cached true losses whenever a group has already been trained.
pub fn predict_partition_loss(
    model: &PredictorModel,
    partition: &Partition,
    ctx: &PredictionContext<'_>,
    cache: &EvalCache,
) -> Result<f64> {
    let mut total = 0.0;
    for group in partition.groups() {
        total += predict_group_loss(model, group, ctx, cache)?;
    }
    Ok(total)
}

fn predict_group_loss(
    model: &PredictorModel,
    group: &GroupKey,
    ctx: &PredictionContext<'_>,
    cache: &EvalCache,
) -> Result<f64> {
    if let Some(eval) = cache.get(group) {
        return Ok(eval.total_loss);
    }
    let ids = group.ids();
    match ids.len() {
        1 => ctx.stl(&ids[0]),
        2 => {
            let gain = ctx.pair_gains.require(&ids[0], &ids[1])?;
            let stl_sum = ctx.stl(&ids[0])? + ctx.stl(&ids[1])?;
            Ok((1.0 - gain) * stl_sum)
        }
        _ => {
            let gf = ctx.group_features(group)?;
            let gain = predict_gain(model, &gf)?;
            let stl_sum: f64 = ids.iter().map(|id| ctx.stl(id)).sum::<Result<f64>>()?;
            Ok((1.0 - gain) * stl_sum)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{median, rng_for};
    use rand::Rng;

    fn record(id: usize, gf: GroupFeatures, gain: f64) -> TrainingRecord {
        TrainingRecord {
            group: GroupKey::new([format!("g{id}a"), format!("g{id}b"), format!("g{id}c")]),
            features: gf,
            observed_gain: gain,
        }
    }

    fn synth_features<R: Rng>(rng: &mut R) -> GroupFeatures {
        GroupFeatures {
            n_tasks: rng.random_range(3..8) as f64,
            mean_sample_size: rng.random_range(50.0..150.0),
            mean_target_var: rng.random_range(0.5..2.0),
            mean_target_sigma: rng.random_range(0.7..1.4),
            mean_group_distance: rng.random_range(1.0..4.0),
            pair_gain_mean: rng.random_range(-0.3..0.4),
            pair_gain_var: rng.random_range(0.0..0.05),
            pair_gain_std: 0.0,
            pair_wdot_mean: rng.random_range(-1.0..1.0),
        }
    }

    fn linear_records(n: usize, noise: f64, seed: u64) -> Vec<TrainingRecord> {
        let mut rng = rng_for(seed, &["pred-records"]);
        (0..n)
            .map(|i| {
                let mut gf = synth_features(&mut rng);
                gf.pair_gain_std = gf.pair_gain_var.sqrt();
                let gain = 0.8 * gf.pair_gain_mean - 0.05 * (gf.n_tasks - 5.0)
                    + 0.1 * (gf.mean_target_sigma - 1.0)
                    + noise * (rng.random::<f64>() - 0.5);
                record(i, gf, gain)
            })
            .collect()
    }

    #[test]
    fn constant_gain_is_learned() {
        let mut rng = rng_for(1, &["const"]);
        let records: Vec<TrainingRecord> = (0..30)
            .map(|i| record(i, synth_features(&mut rng), 0.25))
            .collect();
        let model = train_predictor(&records, &PredictorConfig::default()).unwrap();
        for r in &records {
            let p = predict_gain(&model, &r.features).unwrap();
            assert!((p - 0.25).abs() < 1e-2, "predicted {p}");
        }
    }

    #[test]
    fn too_few_records_is_an_error() {
        let mut rng = rng_for(2, &["few"]);
        let records: Vec<TrainingRecord> = (0..5)
            .map(|i| record(i, synth_features(&mut rng), 0.1))
            .collect();
        assert!(matches!(
            train_predictor(&records, &PredictorConfig::default()),
            Err(Error::TooFewRecords { .. })
        ));
    }

    #[test]
    fn duplicate_records_dedup_to_identical_model() {
        let records = linear_records(20, 0.0, 3);
        let mut doubled = records.clone();
        doubled.extend(records.iter().cloned());
        let cfg = PredictorConfig::default();
        let m1 = train_predictor(&records, &cfg).unwrap();
        let m2 = train_predictor(&doubled, &cfg).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn linear_signal_reaches_high_heldout_r2() {
        let train = linear_records(220, 0.01, 7);
        let held = linear_records(60, 0.01, 8);
        let cfg = PredictorConfig {
            epochs: 400,
            ..PredictorConfig::default()
        };
        let model = train_predictor(&train, &cfg).unwrap();
        let preds: Vec<f64> = held
            .iter()
            .map(|r| predict_gain(&model, &r.features).unwrap())
            .collect();
        let actual: Vec<f64> = held.iter().map(|r| r.observed_gain).collect();
        let r2 = r_squared(&preds, &actual).unwrap();
        assert!(r2 >= 0.9, "held-out R^2 {r2}");
    }

    #[test]
    fn predictions_are_deterministic() {
        let records = linear_records(40, 0.05, 9);
        let model = train_predictor(&records, &PredictorConfig::default()).unwrap();
        let a = predict_gain(&model, &records[0].features).unwrap();
        let b = predict_gain(&model, &records[0].features).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn update_keeps_or_improves_training_fit() {
        let cfg = PredictorConfig::default();
        let mut improved = 0;
        for seed in 0..10 {
            let records = linear_records(60, 0.05, 100 + seed);
            let mut c = cfg.clone();
            c.seed = seed;
            let model = train_predictor(&records[..40], &c).unwrap();
            let before = training_mse(&model, &records).unwrap();
            let updated = update_predictor(&model, &records, &c).unwrap();
            let after = training_mse(&updated, &records).unwrap();
            assert!(updated.trained_on >= model.trained_on);
            if after <= before {
                improved += 1;
            }
        }
        // 10-seed median improvement
        assert!(improved >= 5, "only {improved}/10 improved");
    }

    #[test]
    fn r_squared_definition() {
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        let mean_pred = [2.0, 2.0, 2.0];
        assert_eq!(r_squared(&mean_pred, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let bad = [3.0, 1.0, 5.0];
        assert!(r_squared(&bad, &[1.0, 2.0, 3.0]).unwrap() < 0.0);
        assert!(matches!(
            r_squared(&[1.0, 2.0], &[5.0, 5.0]),
            Err(Error::ZeroVariance(_))
        ));
        // brute-force cross-check
        let pred = [0.4, 1.1, 2.7, 3.3];
        let act = [0.5, 1.0, 2.5, 3.5];
        let m = act.iter().sum::<f64>() / 4.0;
        let sse: f64 = pred.iter().zip(&act).map(|(p, a)| (p - a) * (p - a)).sum();
        let sst: f64 = act.iter().map(|a| (a - m) * (a - m)).sum();
        assert!((r_squared(&pred, &act).unwrap() - (1.0 - sse / sst)).abs() < 1e-12);
    }

    #[test]
    fn update_is_monotone_in_record_count_over_seeds() {
        // warm-start retraining on the same data: loss non-increasing in
        // the 10-seed median
        let mut deltas = Vec::new();
        for seed in 0..10 {
            let records = linear_records(50, 0.05, 200 + seed);
            let cfg = PredictorConfig {
                seed,
                ..PredictorConfig::default()
            };
            let model = train_predictor(&records, &cfg).unwrap();
            let before = training_mse(&model, &records).unwrap();
            let updated = update_predictor(&model, &records, &cfg).unwrap();
            let after = training_mse(&updated, &records).unwrap();
            deltas.push(before - after);
        }
        assert!(median(&deltas) >= 0.0, "median delta {}", median(&deltas));
    }
}
