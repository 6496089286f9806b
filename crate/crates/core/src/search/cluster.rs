//! Clustering baselines: agglomerative clustering over transformed pairwise
//! gains, and k-means over task head vectors with elbow selection.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::PairTable;
use crate::search::partition::{GroupKey, Partition};
use crate::util::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainTransform {
    /// `d = exp(-gain)`: gains negated before exponentiation.
    Exponential,
    /// `d = 1 / (1 + exp(gain))`: logistic squashing for non-negativity.
    Logistic,
}

impl GainTransform {
    pub fn distance(self, gain: f64) -> f64 {
        match self {
            GainTransform::Exponential => (-gain).exp(),
            GainTransform::Logistic => 1.0 / (1.0 + gain.exp()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Single,
    Average,
    Complete,
}

/// Agglomerative clustering of tasks by transformed pairwise gain, cut at
/// `k` clusters. Merge ties go to the pair with the smaller task ids.
pub fn hierarchical_baseline(
    all_ids: &[String],
    pair_gains: &PairTable,
    transform: GainTransform,
    linkage: Linkage,
    k: usize,
) -> Result<Partition> {
    let n = all_ids.len();
    if k == 0 || k > n {
        return Err(Error::OutOfRange(format!("k must be in [1, {n}], got {k}")));
    }
    let mut base = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let gain = pair_gains.require(&all_ids[i], &all_ids[j])?;
            let d = transform.distance(gain);
            base[i][j] = d;
            base[j][i] = d;
        }
    }

    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let d = cluster_distance(&base, &clusters[a], &clusters[b], linkage);
                let better = match best {
                    None => true,
                    Some((bd, ba, bb)) => {
                        d < bd
                            || (d == bd
                                && tie_key(all_ids, &clusters[a], &clusters[b])
                                    < tie_key(all_ids, &clusters[ba], &clusters[bb]))
                    }
                };
                if better {
                    best = Some((d, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("at least two clusters remain");
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
    }

    let groups: Vec<GroupKey> = clusters
        .into_iter()
        .map(|c| GroupKey::new(c.into_iter().map(|i| all_ids[i].clone())))
        .collect();
    Partition::new(groups, all_ids)
}

fn tie_key(ids: &[String], a: &[usize], b: &[usize]) -> (String, String) {
    let min_a = a.iter().map(|&i| ids[i].clone()).min().unwrap();
    let min_b = b.iter().map(|&i| ids[i].clone()).min().unwrap();
    if min_a <= min_b {
        (min_a, min_b)
    } else {
        (min_b, min_a)
    }
}

fn cluster_distance(base: &[Vec<f64>], a: &[usize], b: &[usize], linkage: Linkage) -> f64 {
    let mut acc: f64 = match linkage {
        Linkage::Single => f64::INFINITY,
        Linkage::Complete => f64::NEG_INFINITY,
        Linkage::Average => 0.0,
    };
    for &i in a {
        for &j in b {
            let d = base[i][j];
            acc = match linkage {
                Linkage::Single => acc.min(d),
                Linkage::Complete => acc.max(d),
                Linkage::Average => acc + d,
            };
        }
    }
    if linkage == Linkage::Average {
        acc / (a.len() * b.len()) as f64
    } else {
        acc
    }
}

/// One k-means run outcome per candidate `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansRun {
    pub k: usize,
    pub partition: Partition,
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansOutcome {
    pub runs: Vec<KmeansRun>,
    /// `k` at the largest second difference of inertia (elbow).
    pub elbow_k: usize,
}

/// Lloyd's algorithm over task head vectors with k-means++ seeding and 20
/// restarts per `k`; the elbow pick is flagged alongside all partitions.
pub fn kmeans_baseline(
    task_vectors: &BTreeMap<String, Vec<f64>>,
    k_range: &[usize],
    seed: u64,
) -> Result<KmeansOutcome> {
    let ids: Vec<String> = task_vectors.keys().cloned().collect();
    let points: Vec<&[f64]> = ids.iter().map(|id| task_vectors[id].as_slice()).collect();
    let n = points.len();
    if n < 2 {
        return Err(Error::ShapeMismatch("k-means needs at least 2 tasks".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::ShapeMismatch("task vectors differ in length".into()));
    }
    if points.iter().all(|p| *p == points[0]) {
        return Err(Error::DegenerateVectors);
    }
    if k_range.is_empty() || k_range.iter().any(|&k| k < 2 || k > n) {
        return Err(Error::OutOfRange(format!(
            "k_range must lie within [2, {n}]"
        )));
    }

    let mut runs = Vec::with_capacity(k_range.len());
    for &k in k_range {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for restart in 0..20 {
            let mut rng = rng_for(seed, &["kmeans", &k.to_string(), &restart.to_string()]);
            let (assign, inertia) = lloyd(&points, k, &mut rng);
            if best.as_ref().is_none_or(|(bi, _)| inertia < *bi) {
                best = Some((inertia, assign));
            }
        }
        let (inertia, assign) = best.unwrap();
        let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (i, &c) in assign.iter().enumerate() {
            groups.entry(c).or_default().push(ids[i].clone());
        }
        let partition = Partition::new(
            groups.into_values().map(GroupKey::new).collect(),
            &ids,
        )?;
        runs.push(KmeansRun {
            k,
            partition,
            inertia,
        });
    }

    let elbow_k = pick_elbow(&runs);
    Ok(KmeansOutcome { runs, elbow_k })
}

/// Largest second difference of inertia over the (sorted) k values; with
/// fewer than 3 candidates the smallest k wins.
fn pick_elbow(runs: &[KmeansRun]) -> usize {
    if runs.len() < 3 {
        return runs.iter().map(|r| r.k).min().unwrap();
    }
    let mut sorted: Vec<&KmeansRun> = runs.iter().collect();
    sorted.sort_by_key(|r| r.k);
    let mut best = (f64::NEG_INFINITY, sorted[1].k);
    for w in sorted.windows(3) {
        let d2 = w[0].inertia - 2.0 * w[1].inertia + w[2].inertia;
        if d2 > best.0 {
            best = (d2, w[1].k);
        }
    }
    best.1
}

fn lloyd<R: Rng>(points: &[&[f64]], k: usize, rng: &mut R) -> (Vec<usize>, f64) {
    let n = points.len();
    let dim = points[0].len();

    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)].to_vec());
    let mut d2: Vec<f64> = vec![0.0; n];
    while centers.len() < k {
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let d = centers
                .iter()
                .map(|c| sq_dist(p, c))
                .fold(f64::INFINITY, f64::min);
            d2[i] = d;
            total += d;
        }
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            // all remaining points coincide with a center
            rng.random_range(0..n)
        };
        centers.push(points[next].to_vec());
    }

    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (mut bc, mut bd) = (0usize, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < bd {
                    bd = d;
                    bc = c;
                }
            }
            if assign[i] != bc {
                assign[i] = bc;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(*p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for s in &mut sums[c] {
                    *s /= counts[c] as f64;
                }
                centers[c] = std::mem::take(&mut sums[c]);
            }
        }
        if !changed {
            break;
        }
    }

    let inertia = points
        .iter()
        .enumerate()
        .map(|(i, p)| sq_dist(p, &centers[assign[i]]))
        .sum();
    (assign, inertia)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    fn block_gains(all: &[String], blocks: &[&[usize]], within: f64, cross: f64) -> PairTable {
        let block_of = |x: usize| blocks.iter().position(|b| b.contains(&x)).unwrap();
        let mut tbl = PairTable::new();
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                let g = if block_of(i) == block_of(j) { within } else { cross };
                tbl.insert(&all[i], &all[j], g);
            }
        }
        tbl
    }

    #[test]
    fn transforms_match_definitions() {
        assert_eq!(GainTransform::Exponential.distance(0.0), 1.0);
        assert!((GainTransform::Exponential.distance(0.5) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((GainTransform::Logistic.distance(0.0) - 0.5).abs() < 1e-15);
        // higher gain means smaller distance under both transforms
        for t in [GainTransform::Exponential, GainTransform::Logistic] {
            assert!(t.distance(1.0) < t.distance(-1.0));
        }
    }

    #[test]
    fn recovers_two_clear_blocks() {
        let all = ids(6);
        let gains = block_gains(&all, &[&[0, 1, 2], &[3, 4, 5]], 0.5, -0.5);
        for linkage in [Linkage::Single, Linkage::Average, Linkage::Complete] {
            let p =
                hierarchical_baseline(&all, &gains, GainTransform::Exponential, linkage, 2)
                    .unwrap();
            assert_eq!(p.n_groups(), 2);
            let g0 = p.group_of("t0").unwrap();
            assert!(g0.contains("t1") && g0.contains("t2"));
            assert!(!g0.contains("t3"));
        }
    }

    #[test]
    fn k_equals_n_gives_singletons_and_ties_are_deterministic() {
        let all = ids(4);
        let gains = block_gains(&all, &[&[0, 1, 2, 3]], 0.0, 0.0);
        let p = hierarchical_baseline(
            &all,
            &gains,
            GainTransform::Exponential,
            Linkage::Average,
            4,
        )
        .unwrap();
        assert_eq!(p, Partition::singletons(&all));

        // all distances 1.0: merges still deterministic under the tie rule
        let p2 = hierarchical_baseline(
            &all,
            &gains,
            GainTransform::Exponential,
            Linkage::Average,
            2,
        )
        .unwrap();
        let p3 = hierarchical_baseline(
            &all,
            &gains,
            GainTransform::Exponential,
            Linkage::Average,
            2,
        )
        .unwrap();
        assert_eq!(p2, p3);
        assert_eq!(p2.n_groups(), 2);
    }

    #[test]
    fn rejects_bad_k_and_missing_gains() {
        let all = ids(3);
        let gains = block_gains(&all, &[&[0, 1, 2]], 0.1, 0.1);
        assert!(hierarchical_baseline(
            &all,
            &gains,
            GainTransform::Logistic,
            Linkage::Single,
            0
        )
        .is_err());
        let empty = PairTable::new();
        assert!(matches!(
            hierarchical_baseline(&all, &empty, GainTransform::Logistic, Linkage::Single, 2),
            Err(Error::MissingPairGain(_, _))
        ));
    }

    fn two_cluster_vectors() -> BTreeMap<String, Vec<f64>> {
        let mut m = BTreeMap::new();
        // two tight, well-separated blobs
        m.insert("a0".into(), vec![0.0, 0.1]);
        m.insert("a1".into(), vec![0.1, 0.0]);
        m.insert("a2".into(), vec![0.05, 0.05]);
        m.insert("b0".into(), vec![10.0, 10.1]);
        m.insert("b1".into(), vec![10.1, 10.0]);
        m.insert("b2".into(), vec![10.05, 10.05]);
        m
    }

    #[test]
    fn kmeans_recovers_separated_clusters() {
        let vectors = two_cluster_vectors();
        let out = kmeans_baseline(&vectors, &[2], 7).unwrap();
        let run = &out.runs[0];
        assert_eq!(run.partition.n_groups(), 2);
        let ga = run.partition.group_of("a0").unwrap();
        assert!(ga.contains("a1") && ga.contains("a2") && !ga.contains("b0"));
    }

    #[test]
    fn kmeans_k_equals_n_gives_zero_inertia_singletons() {
        let vectors = two_cluster_vectors();
        let out = kmeans_baseline(&vectors, &[6], 3).unwrap();
        assert_eq!(out.runs[0].inertia, 0.0);
        assert_eq!(out.runs[0].partition.n_groups(), 6);
    }

    #[test]
    fn duplicate_vectors_share_a_cluster() {
        let mut vectors = two_cluster_vectors();
        vectors.insert("a_dup".into(), vec![0.0, 0.1]);
        let out = kmeans_baseline(&vectors, &[2], 11).unwrap();
        let p = &out.runs[0].partition;
        assert_eq!(
            p.group_of("a_dup").unwrap(),
            p.group_of("a0").unwrap()
        );
    }

    #[test]
    fn identical_vectors_are_degenerate() {
        let mut m = BTreeMap::new();
        for i in 0..4 {
            m.insert(format!("t{i}"), vec![1.0, 2.0]);
        }
        assert!(matches!(
            kmeans_baseline(&m, &[2], 0),
            Err(Error::DegenerateVectors)
        ));
    }

    #[test]
    fn elbow_picks_the_kink() {
        // three tight blobs: inertia is large at k=2 and collapses at k=3,
        // so the interior second difference peaks at 3
        let mut vectors = BTreeMap::new();
        for (prefix, cx) in [("a", 0.0), ("b", 10.0), ("c", 20.0)] {
            for i in 0..3 {
                vectors.insert(
                    format!("{prefix}{i}"),
                    vec![cx + 0.05 * i as f64, cx - 0.05 * i as f64],
                );
            }
        }
        let out = kmeans_baseline(&vectors, &[2, 3, 4, 5, 6], 5).unwrap();
        assert_eq!(out.elbow_k, 3, "elbow {}", out.elbow_k);
    }
}
