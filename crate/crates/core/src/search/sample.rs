//! Exactly uniform sampling over the set partitions of the task set.
//!
//! Uses Stam's construction: draw a box count `k` with weight proportional
//! to the Dobinski terms `k^n / k!`, throw the `n` elements into the `k`
//! boxes independently and uniformly, and reject any outcome that leaves a
//! box empty. Conditional on acceptance the induced partition is uniform
//! over all B(n) set partitions; the acceptance probability is exactly 1/e,
//! so the expected number of redraws is small and independent of `n`.
//! A Chinese-restaurant draw would NOT be uniform, which is why this route
//! exists.

use rand::Rng;

use super::partition::{GroupKey, Partition};

/// Categorical sampler over the truncated Dobinski weights for a fixed `n`.
///
/// Build once per `n` and reuse; the weight table costs O(k_max) and the
/// cumulative search O(log k_max) per draw.
#[derive(Debug, Clone)]
pub struct BlockCountSampler {
    n: usize,
    cumulative: Vec<f64>,
}

impl BlockCountSampler {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "need at least one element");
        // ln w_k = n ln k - ln k!; weights decay superexponentially past
        // ~2n, so truncating at 4n + 16 loses a negligible tail
        let k_max = 4 * n + 16;
        let mut logw = Vec::with_capacity(k_max);
        let mut log_fact = 0.0;
        for k in 1..=k_max {
            log_fact += (k as f64).ln();
            logw.push((n as f64) * (k as f64).ln() - log_fact);
        }
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut cumulative = Vec::with_capacity(k_max);
        let mut acc = 0.0;
        for lw in &logw {
            acc += (lw - max).exp();
            cumulative.push(acc);
        }
        let total = acc;
        for c in &mut cumulative {
            *c /= total;
        }
        BlockCountSampler { n, cumulative }
    }

    fn draw_k<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&u).unwrap())
        {
            Ok(i) | Err(i) => (i + 1).min(self.cumulative.len()),
        }
    }

    /// One uniform set partition of `0..n`, as blocks of element indices.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<Vec<usize>> {
        loop {
            let k = self.draw_k(rng);
            let mut boxes: Vec<Vec<usize>> = vec![Vec::new(); k];
            for e in 0..self.n {
                let b = rng.random_range(0..k);
                boxes[b].push(e);
            }
            if boxes.iter().all(|b| !b.is_empty()) {
                return boxes;
            }
            // empty box: reject the whole outcome and redraw k
        }
    }
}

/// Uniform random partition of the given task ids.
pub fn sample_uniform_partition<R: Rng>(all_ids: &[String], rng: &mut R) -> Partition {
    let sampler = BlockCountSampler::new(all_ids.len());
    sample_uniform_with(&sampler, all_ids, rng)
}

/// Same, reusing a prebuilt block-count sampler.
pub fn sample_uniform_with<R: Rng>(
    sampler: &BlockCountSampler,
    all_ids: &[String],
    rng: &mut R,
) -> Partition {
    let blocks = sampler.sample(rng);
    let groups: Vec<GroupKey> = blocks
        .into_iter()
        .map(|b| GroupKey::new(b.into_iter().map(|i| all_ids[i].clone())))
        .collect();
    Partition::new(groups, all_ids).expect("sampler produced a non-cover")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_for;

    #[test]
    fn n1_is_always_the_single_singleton() {
        let ids = vec!["a".to_string()];
        let mut rng = rng_for(0, &["sample"]);
        for _ in 0..50 {
            let p = sample_uniform_partition(&ids, &mut rng);
            assert_eq!(p.n_groups(), 1);
            assert_eq!(p.groups()[0].len(), 1);
        }
    }

    #[test]
    fn n3_frequencies_are_uniform_over_the_five_partitions() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let sampler = BlockCountSampler::new(3);
        let mut rng = rng_for(7, &["sample"]);
        let mut counts = std::collections::BTreeMap::new();
        let draws = 100_000;
        for _ in 0..draws {
            let p = sample_uniform_with(&sampler, &ids, &mut rng);
            *counts.entry(p.canonical()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 5);
        for (_, c) in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.2).abs() < 0.01, "freq {freq}");
        }
    }

    #[test]
    fn draws_are_deterministic_per_rng_state() {
        let ids: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let mut r1 = rng_for(5, &["s"]);
        let mut r2 = rng_for(5, &["s"]);
        for _ in 0..20 {
            assert_eq!(
                sample_uniform_partition(&ids, &mut r1),
                sample_uniform_partition(&ids, &mut r2)
            );
        }
    }
}
