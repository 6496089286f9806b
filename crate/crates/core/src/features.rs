//! Pairwise and groupwise task features feeding the affinity predictors.
//!
//! The catalog is fixed per dataset kind: 70 names when features are
//! real-valued (Euclidean/Manhattan distances plus their feature-scaled
//! variants) and 64 when features are binary (Hamming distances join,
//! scaled variants drop out, and per-task class balance joins). The exact
//! name list is what `feature_names` returns and `features_schema.json`
//! documents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::stl::StlResult;
use crate::util::{self, rng_for};

/// Guard for nS/nP denominators.
pub const NORM_EPS: f64 = 1e-12;

/// Row cap above which distance means use a seeded uniform subsample.
pub const DISTANCE_ROW_CAP: usize = 512;

/// Checkpoints whose curve gradients enter the catalog (the 100% gradient
/// is identically zero and carries nothing).
pub const FEATURE_CHECKPOINTS: [f64; 5] = [0.1, 0.2, 0.3, 0.5, 0.7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Euclidean,
    Manhattan,
    Hamming,
}

/// Which feature catalog a dataset uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogKind {
    /// Euclidean + Manhattan blocks, raw and feature-scaled: 70 features.
    RealValued,
    /// Euclidean + Manhattan + Hamming blocks, no scaled variants, plus
    /// per-task class balance: 64 features.
    Binary,
}

impl CatalogKind {
    pub fn for_binary_features(binary: bool) -> Self {
        if binary {
            CatalogKind::Binary
        } else {
            CatalogKind::RealValued
        }
    }

    /// Distance kind used for the groupwise mean distance.
    pub fn group_distance(self) -> DistanceKind {
        match self {
            CatalogKind::RealValued => DistanceKind::Euclidean,
            CatalogKind::Binary => DistanceKind::Hamming,
        }
    }
}

fn row_distance(kind: DistanceKind, a: &[f64], b: &[f64]) -> f64 {
    match kind {
        DistanceKind::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        DistanceKind::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        DistanceKind::Hamming => {
            a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
        }
    }
}

fn check_hamming(kind: DistanceKind, tasks: &[&Task]) -> Result<()> {
    if kind == DistanceKind::Hamming && !tasks.iter().all(|t| t.has_binary_features()) {
        return Err(Error::NonBinaryForHamming);
    }
    Ok(())
}

/// Deterministic subsample of `cap` row indices out of `n`. The seed
/// depends only on `n`, so equal-sized tasks pick the same index set and
/// clone symmetry survives capping.
fn capped_indices(n: usize, cap: usize) -> Option<Vec<usize>> {
    if n <= cap {
        return None;
    }
    use rand::seq::SliceRandom;
    let mut rng = rng_for(0x5eed_d157, &["distance-cap", &n.to_string()]);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(cap);
    idx.sort_unstable();
    Some(idx)
}

fn capped_rows<'a>(rows: &'a [Vec<f64>], cap: usize) -> Vec<&'a [f64]> {
    match capped_indices(rows.len(), cap) {
        Some(idx) => idx.into_iter().map(|i| rows[i].as_slice()).collect(),
        None => rows.iter().map(Vec::as_slice).collect(),
    }
}

fn mean_over_within_pairs(rows: &[&[f64]], kind: DistanceKind) -> f64 {
    let n = rows.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += row_distance(kind, rows[i], rows[j]);
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

/// Mean distance over all unordered row pairs within one task's sample.
pub fn avg_within_distance(task: &Task, kind: DistanceKind) -> Result<f64> {
    avg_within_distance_capped(task, kind, DISTANCE_ROW_CAP)
}

pub fn avg_within_distance_capped(task: &Task, kind: DistanceKind, cap: usize) -> Result<f64> {
    check_hamming(kind, &[task])?;
    if task.n_samples() < 2 {
        return Err(Error::ShapeMismatch(
            "within-distance needs at least 2 rows".into(),
        ));
    }
    let rows = capped_rows(&task.features, cap);
    Ok(mean_over_within_pairs(&rows, kind))
}

/// Mean distance over all cross pairs, one row from each task.
pub fn avg_between_distance(ti: &Task, tj: &Task, kind: DistanceKind) -> Result<f64> {
    avg_between_distance_capped(ti, tj, kind, DISTANCE_ROW_CAP)
}

pub fn avg_between_distance_capped(
    ti: &Task,
    tj: &Task,
    kind: DistanceKind,
    cap: usize,
) -> Result<f64> {
    check_hamming(kind, &[ti, tj])?;
    let a = capped_rows(&ti.features, cap);
    let b = capped_rows(&tj.features, cap);
    let mut sum = 0.0;
    for ra in &a {
        for rb in &b {
            sum += row_distance(kind, ra, rb);
        }
    }
    Ok(sum / (a.len() * b.len()) as f64)
}

/// Within-distance of the union of both samples. The union is formed in
/// canonical task-id order so the result is symmetric in the arguments.
pub fn avg_combined_distance(ti: &Task, tj: &Task, kind: DistanceKind) -> Result<f64> {
    avg_combined_distance_capped(ti, tj, kind, DISTANCE_ROW_CAP)
}

pub fn avg_combined_distance_capped(
    ti: &Task,
    tj: &Task,
    kind: DistanceKind,
    cap: usize,
) -> Result<f64> {
    check_hamming(kind, &[ti, tj])?;
    let (first, second) = if ti.id <= tj.id { (ti, tj) } else { (tj, ti) };
    let union: Vec<Vec<f64>> = first
        .features
        .iter()
        .chain(&second.features)
        .cloned()
        .collect();
    let rows = capped_rows(&union, cap);
    Ok(mean_over_within_pairs(&rows, kind))
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "pearson needs equal-length vectors of >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let mx = util::mean(x);
    let my = util::mean(y);
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x".into()));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Symmetric lookup table keyed by unordered task-id pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairTable {
    values: BTreeMap<String, f64>,
}

impl PairTable {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(a: &str, b: &str) -> String {
        if a <= b {
            format!("{a}\x1f{b}")
        } else {
            format!("{b}\x1f{a}")
        }
    }

    pub fn insert(&mut self, a: &str, b: &str, value: f64) {
        self.values.insert(Self::key(a, b), value);
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        self.values.get(&Self::key(a, b)).copied()
    }

    pub fn require(&self, a: &str, b: &str) -> Result<f64> {
        self.get(a, b)
            .ok_or_else(|| Error::MissingPairGain(a.to_string(), b.to_string()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Named numeric features of one task pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFeatures {
    values: BTreeMap<String, f64>,
}

impl PairFeatures {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &BTreeMap<String, f64> {
        &self.values
    }
}

/// Shared quantities from the all-task model entering the pair catalog.
#[derive(Debug, Clone, Copy)]
pub struct SharedPairStats {
    /// Symmetrized inter-task affinity entry for the pair.
    pub z_affinity: f64,
    /// Dot product of the two head vectors.
    pub w_dot: f64,
}

/// Everything `pair_features` consumes for one pair.
pub struct PairInputs<'a> {
    pub task_i: &'a Task,
    pub task_j: &'a Task,
    /// Feature-scaled rows; required for the real-valued catalog.
    pub scaled_i: Option<&'a Task>,
    pub scaled_j: Option<&'a Task>,
    pub stl_i: &'a StlResult,
    pub stl_j: &'a StlResult,
    pub shared: SharedPairStats,
    pub catalog: CatalogKind,
}

fn ns(value: f64, part_i: f64, part_j: f64) -> f64 {
    value / (part_i.abs() + part_j.abs()).max(NORM_EPS)
}

fn np(value: f64, part_i: f64, part_j: f64) -> f64 {
    value * value / (part_i * part_j).max(NORM_EPS)
}

fn checkpoint_tag(f: f64) -> String {
    format!("{:02}", (f * 100.0).round() as u32)
}

/// The full pairwise feature catalog. Entry names and count are fixed by
/// the catalog kind; every value is finite.
pub fn pair_features(inp: &PairInputs<'_>) -> Result<PairFeatures> {
    let mut v: BTreeMap<String, f64> = BTreeMap::new();
    let (ti, tj) = (inp.task_i, inp.task_j);
    let (si, sj) = (inp.stl_i, inp.stl_j);

    // per-task singles
    for (suffix, task, stl) in [("i", ti, si), ("j", tj, sj)] {
        for f in FEATURE_CHECKPOINTS {
            let g = stl.curve_grad(f).ok_or(Error::MissingCheckpoint(f))?;
            v.insert(format!("curve_grad_{}_{suffix}", checkpoint_tag(f)), g);
        }
        v.insert(format!("fit_a_{suffix}"), stl.fit_a);
        v.insert(format!("fit_b_{suffix}"), stl.fit_b);
        v.insert(format!("target_sigma_{suffix}"), stl.target_sigma);
        v.insert(format!("target_var_{suffix}"), stl.target_var);
        v.insert(format!("sample_size_{suffix}"), stl.sample_size as f64);
        if inp.catalog == CatalogKind::Binary {
            v.insert(format!("target_mean_{suffix}"), task.target_mean());
        }
    }

    // sample-size relation
    let (di, dj) = (si.sample_size as f64, sj.sample_size as f64);
    v.insert("size_diff_ns".into(), ns((di - dj).abs(), di, dj));

    // target spread relations; combined statistics pool both target vectors
    let union_targets: Vec<f64> = ti
        .targets
        .iter()
        .chain(&tj.targets)
        .copied()
        .collect();
    let sigma_u = util::population_std(&union_targets);
    let var_u = util::population_variance(&union_targets);
    v.insert(
        "target_sigma_mean".into(),
        0.5 * (si.target_sigma + sj.target_sigma),
    );
    v.insert(
        "target_sigma_diff_ns".into(),
        ns(
            (si.target_sigma - sj.target_sigma).abs(),
            si.target_sigma,
            sj.target_sigma,
        ),
    );
    v.insert(
        "target_sigma_combined_ns".into(),
        ns(sigma_u, si.target_sigma, sj.target_sigma),
    );
    v.insert(
        "target_sigma_combined_np".into(),
        np(sigma_u, si.target_sigma, sj.target_sigma),
    );
    v.insert(
        "target_var_mean".into(),
        0.5 * (si.target_var + sj.target_var),
    );
    v.insert(
        "target_var_diff_ns".into(),
        ns(
            (si.target_var - sj.target_var).abs(),
            si.target_var,
            sj.target_var,
        ),
    );
    v.insert(
        "target_var_combined_ns".into(),
        ns(var_u, si.target_var, sj.target_var),
    );
    v.insert(
        "target_var_combined_np".into(),
        np(var_u, si.target_var, sj.target_var),
    );

    // curve relations
    for f in FEATURE_CHECKPOINTS {
        let gi = si.curve_grad(f).ok_or(Error::MissingCheckpoint(f))?;
        let gj = sj.curve_grad(f).ok_or(Error::MissingCheckpoint(f))?;
        let diff = (gi - gj).abs() / (gi.abs() + gj.abs() + NORM_EPS);
        v.insert(format!("curve_grad_diff_{}", checkpoint_tag(f)), diff);
    }
    v.insert(
        "fit_a_diff_ns".into(),
        ns((si.fit_a - sj.fit_a).abs(), si.fit_a, sj.fit_a),
    );
    v.insert(
        "fit_b_diff_ns".into(),
        ns((si.fit_b - sj.fit_b).abs(), si.fit_b, sj.fit_b),
    );

    // shared-model relations
    v.insert("z_affinity".into(), inp.shared.z_affinity);
    v.insert("w_dot".into(), inp.shared.w_dot);

    // distance blocks
    let blocks: Vec<(String, &Task, &Task, DistanceKind)> = match inp.catalog {
        CatalogKind::RealValued => {
            let sci = inp.scaled_i.ok_or_else(|| {
                Error::MissingPrerequisite("scaled rows required for the real-valued catalog".into())
            })?;
            let scj = inp.scaled_j.ok_or_else(|| {
                Error::MissingPrerequisite("scaled rows required for the real-valued catalog".into())
            })?;
            vec![
                ("dist_euclidean".to_string(), ti, tj, DistanceKind::Euclidean),
                ("dist_manhattan".to_string(), ti, tj, DistanceKind::Manhattan),
                (
                    "dist_euclidean_scaled".to_string(),
                    sci,
                    scj,
                    DistanceKind::Euclidean,
                ),
                (
                    "dist_manhattan_scaled".to_string(),
                    sci,
                    scj,
                    DistanceKind::Manhattan,
                ),
            ]
        }
        CatalogKind::Binary => vec![
            ("dist_euclidean".to_string(), ti, tj, DistanceKind::Euclidean),
            ("dist_manhattan".to_string(), ti, tj, DistanceKind::Manhattan),
            ("dist_hamming".to_string(), ti, tj, DistanceKind::Hamming),
        ],
    };
    for (prefix, a, b, kind) in blocks {
        let within_i = avg_within_distance(a, kind)?;
        let within_j = avg_within_distance(b, kind)?;
        let between = avg_between_distance(a, b, kind)?;
        let combined = avg_combined_distance(a, b, kind)?;
        v.insert(format!("{prefix}_within_i"), within_i);
        v.insert(format!("{prefix}_within_j"), within_j);
        v.insert(format!("{prefix}_between"), between);
        v.insert(format!("{prefix}_between_ns"), ns(between, within_i, within_j));
        v.insert(format!("{prefix}_between_np"), np(between, within_i, within_j));
        v.insert(format!("{prefix}_combined"), combined);
        v.insert(
            format!("{prefix}_combined_ns"),
            ns(combined, within_i, within_j),
        );
        v.insert(
            format!("{prefix}_combined_np"),
            np(combined, within_i, within_j),
        );
    }

    let expected = feature_names(inp.catalog);
    debug_assert_eq!(v.len(), expected.len());
    Ok(PairFeatures { values: v })
}

/// Canonical name order of the pairwise catalog for a dataset kind.
pub fn feature_names(catalog: CatalogKind) -> Vec<String> {
    let mut names = Vec::new();
    for suffix in ["i", "j"] {
        for f in FEATURE_CHECKPOINTS {
            names.push(format!("curve_grad_{}_{suffix}", checkpoint_tag(f)));
        }
        names.push(format!("fit_a_{suffix}"));
        names.push(format!("fit_b_{suffix}"));
        names.push(format!("target_sigma_{suffix}"));
        names.push(format!("target_var_{suffix}"));
        names.push(format!("sample_size_{suffix}"));
        if catalog == CatalogKind::Binary {
            names.push(format!("target_mean_{suffix}"));
        }
    }
    names.push("size_diff_ns".into());
    for stat in ["sigma", "var"] {
        names.push(format!("target_{stat}_mean"));
        names.push(format!("target_{stat}_diff_ns"));
        names.push(format!("target_{stat}_combined_ns"));
        names.push(format!("target_{stat}_combined_np"));
    }
    for f in FEATURE_CHECKPOINTS {
        names.push(format!("curve_grad_diff_{}", checkpoint_tag(f)));
    }
    names.push("fit_a_diff_ns".into());
    names.push("fit_b_diff_ns".into());
    names.push("z_affinity".into());
    names.push("w_dot".into());

    let prefixes: Vec<String> = match catalog {
        CatalogKind::RealValued => vec![
            "dist_euclidean".into(),
            "dist_manhattan".into(),
            "dist_euclidean_scaled".into(),
            "dist_manhattan_scaled".into(),
        ],
        CatalogKind::Binary => vec![
            "dist_euclidean".into(),
            "dist_manhattan".into(),
            "dist_hamming".into(),
        ],
    };
    for p in prefixes {
        for part in [
            "within_i",
            "within_j",
            "between",
            "between_ns",
            "between_np",
            "combined",
            "combined_ns",
            "combined_np",
        ] {
            names.push(format!("{p}_{part}"));
        }
    }
    names
}

/// Descriptors of a group of three or more tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFeatures {
    pub n_tasks: f64,
    pub mean_sample_size: f64,
    pub mean_target_var: f64,
    pub mean_target_sigma: f64,
    pub mean_group_distance: f64,
    pub pair_gain_mean: f64,
    pub pair_gain_var: f64,
    pub pair_gain_std: f64,
    pub pair_wdot_mean: f64,
}

pub const GROUP_FEATURE_NAMES: [&str; 9] = [
    "n_tasks",
    "mean_sample_size",
    "mean_target_var",
    "mean_target_sigma",
    "mean_group_distance",
    "pair_gain_mean",
    "pair_gain_var",
    "pair_gain_std",
    "pair_wdot_mean",
];

impl GroupFeatures {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "n_tasks" => Some(self.n_tasks),
            "mean_sample_size" => Some(self.mean_sample_size),
            "mean_target_var" => Some(self.mean_target_var),
            "mean_target_sigma" => Some(self.mean_target_sigma),
            "mean_group_distance" => Some(self.mean_group_distance),
            "pair_gain_mean" => Some(self.pair_gain_mean),
            "pair_gain_var" => Some(self.pair_gain_var),
            "pair_gain_std" => Some(self.pair_gain_std),
            "pair_wdot_mean" => Some(self.pair_wdot_mean),
            _ => None,
        }
    }
}

/// Groupwise feature vector over the C(k,2) unordered pairs of the group.
pub fn group_features(
    member_tasks: &[&Task],
    pair_gains: &PairTable,
    wdots: &PairTable,
    distance: DistanceKind,
) -> Result<GroupFeatures> {
    let k = member_tasks.len();
    if k < 3 {
        return Err(Error::DomainError(format!(
            "group features need >= 3 tasks, got {k}"
        )));
    }
    let mut gains = Vec::with_capacity(k * (k - 1) / 2);
    let mut dots = Vec::with_capacity(k * (k - 1) / 2);
    let mut dists = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            let (a, b) = (member_tasks[i], member_tasks[j]);
            gains.push(pair_gains.require(&a.id, &b.id)?);
            dots.push(wdots.require(&a.id, &b.id)?);
            dists.push(avg_between_distance(a, b, distance)?);
        }
    }
    let sizes: Vec<f64> = member_tasks.iter().map(|t| t.n_samples() as f64).collect();
    let vars: Vec<f64> = member_tasks.iter().map(|t| t.target_var()).collect();
    let sigmas: Vec<f64> = member_tasks.iter().map(|t| t.target_sigma()).collect();

    let pair_gain_var = util::population_variance(&gains);
    Ok(GroupFeatures {
        n_tasks: k as f64,
        mean_sample_size: util::mean(&sizes),
        mean_target_var: util::mean(&vars),
        mean_target_sigma: util::mean(&sigmas),
        mean_group_distance: util::mean(&dists),
        pair_gain_mean: util::mean(&gains),
        pair_gain_var,
        pair_gain_std: pair_gain_var.sqrt(),
        pair_wdot_mean: util::mean(&dots),
    })
}
