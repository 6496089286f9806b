//! Random local search over predictor architecture and input features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, NetSpec, OutputActivation};
use crate::predictor::{self, PredictorConfig, TrainingRecord};
use crate::util::sha256_hex;

/// Relative weight of picking each tunable for mutation. Layer changes get
/// a low weight to avoid large jumps in the space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickProbabilities {
    pub layers: f64,
    pub neurons: f64,
    pub learning_rate: f64,
    pub activations: f64,
    pub features: f64,
}

impl Default for PickProbabilities {
    fn default() -> Self {
        PickProbabilities {
            layers: 0.1,
            neurons: 0.3,
            learning_rate: 0.25,
            activations: 0.15,
            features: 0.2,
        }
    }
}

/// The tunables and their mutation magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub pick: PickProbabilities,
    /// Fractional learning-rate change per mutation.
    pub beta_alpha: f64,
    /// Fractional neuron-count change per mutation.
    pub beta_neurons: f64,
    /// Width bounds for newly inserted layers.
    pub new_layer_widths: (usize, usize),
    /// Full feature catalog candidates may draw from.
    pub available_features: Vec<String>,
    /// When false the feature list is frozen.
    pub tune_features: bool,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let p = &self.pick;
        let parts = [
            p.layers,
            p.neurons,
            p.learning_rate,
            p.activations,
            p.features,
        ];
        if parts.iter().any(|&x| x < 0.0) {
            return Err(Error::ConfigInvalid("pick probabilities must be >= 0".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::ConfigInvalid("pick probabilities must sum to 1".into()));
        }
        if !(self.beta_alpha > 0.0 && self.beta_alpha <= 1.0)
            || !(self.beta_neurons > 0.0 && self.beta_neurons <= 1.0)
        {
            return Err(Error::ConfigInvalid("beta values must lie in (0,1]".into()));
        }
        Ok(())
    }
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            pick: PickProbabilities::default(),
            beta_alpha: 0.1,
            beta_neurons: 0.1,
            new_layer_widths: (4, 128),
            available_features: crate::features::GROUP_FEATURE_NAMES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            tune_features: true,
        }
    }
}

/// One point in the search space: a net shape plus its input features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchCandidate {
    pub hidden_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
    pub learning_rate: f64,
    pub features: Vec<String>,
}

impl ArchCandidate {
    pub fn param_count(&self) -> usize {
        self.net_spec().param_count()
    }

    pub fn net_spec(&self) -> NetSpec {
        let mut widths = vec![self.features.len().max(1)];
        widths.extend_from_slice(&self.hidden_widths);
        widths.push(1);
        NetSpec {
            layer_widths: widths,
            hidden_activation: self.hidden_activation,
            output_activation: self.output_activation,
            learning_rate: self.learning_rate,
        }
    }

    /// Short identity for logs.
    pub fn hash(&self) -> String {
        let repr = format!(
            "{:?}|{:?}|{:?}|{}|{:?}",
            self.hidden_widths,
            self.hidden_activation,
            self.output_activation,
            self.learning_rate,
            self.features
        );
        sha256_hex(&repr)[..12].to_string()
    }

    fn predictor_config(&self, epochs: usize, seed: u64) -> PredictorConfig {
        PredictorConfig {
            hidden_widths: self.hidden_widths.clone(),
            hidden_activation: self.hidden_activation,
            learning_rate: self.learning_rate,
            epochs,
            seed,
            feature_names: Some(self.features.clone()),
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tunable {
    Layers,
    Neurons,
    LearningRate,
    Activations,
    Features,
}

fn pick_tunable<R: Rng>(space: &SearchSpace, rng: &mut R) -> Tunable {
    let mut weights = vec![
        (Tunable::Layers, space.pick.layers),
        (Tunable::Neurons, space.pick.neurons),
        (Tunable::LearningRate, space.pick.learning_rate),
        (Tunable::Activations, space.pick.activations),
        (Tunable::Features, space.pick.features),
    ];
    if !space.tune_features {
        weights.retain(|(t, _)| *t != Tunable::Features);
    }
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut u = rng.random::<f64>() * total;
    for (t, w) in &weights {
        if u < *w {
            return *t;
        }
        u -= w;
    }
    weights.last().unwrap().0
}

/// Mutates exactly one tunable of the candidate.
pub fn random_neighbour<R: Rng>(
    a: &ArchCandidate,
    space: &SearchSpace,
    rng: &mut R,
) -> ArchCandidate {
    let mut next = a.clone();
    match pick_tunable(space, rng) {
        Tunable::Layers => {
            let remove = rng.random::<f64>() < 0.5;
            if remove && next.hidden_widths.len() > 1 {
                let at = rng.random_range(0..next.hidden_widths.len());
                next.hidden_widths.remove(at);
            } else {
                // removal of the last hidden layer is rejected; add instead
                let at = rng.random_range(0..=next.hidden_widths.len());
                let (lo, hi) = space.new_layer_widths;
                next.hidden_widths.insert(at, rng.random_range(lo..=hi));
            }
        }
        Tunable::Neurons => {
            let at = rng.random_range(0..next.hidden_widths.len());
            let h = next.hidden_widths[at];
            let delta = ((h as f64) * space.beta_neurons).ceil() as usize;
            let up = rng.random::<f64>() < 0.5;
            next.hidden_widths[at] = if up {
                h + delta
            } else {
                h.saturating_sub(delta).max(1)
            };
        }
        Tunable::LearningRate => {
            let up = rng.random::<f64>() < 0.5;
            let factor = if up {
                1.0 + space.beta_alpha
            } else {
                1.0 - space.beta_alpha
            };
            next.learning_rate = (a.learning_rate * factor).max(1e-9);
        }
        Tunable::Activations => {
            if rng.random::<f64>() < 0.5 {
                next.hidden_activation = match a.hidden_activation {
                    Activation::Relu => Activation::Tanh,
                    Activation::Tanh => Activation::Relu,
                };
            } else {
                // resample among the other output activations
                let options: Vec<OutputActivation> = [
                    OutputActivation::Linear,
                    OutputActivation::Sigmoid,
                    OutputActivation::Tanh,
                ]
                .into_iter()
                .filter(|o| *o != a.output_activation)
                .collect();
                next.output_activation = options[rng.random_range(0..options.len())];
            }
        }
        Tunable::Features => {
            let missing: Vec<&String> = space
                .available_features
                .iter()
                .filter(|f| !next.features.contains(f))
                .collect();
            let removable = next.features.len() > 1;
            let add = if missing.is_empty() {
                false
            } else if !removable {
                // a single remaining feature cannot be removed
                true
            } else {
                rng.random::<f64>() < 0.5
            };
            if add {
                let f = missing[rng.random_range(0..missing.len())].clone();
                next.features.push(f);
                next.features.sort();
            } else if removable {
                let at = rng.random_range(0..next.features.len());
                next.features.remove(at);
            }
        }
    }
    next
}

/// Validation-R^2 score penalized by parameter count:
/// `R^2 - omega * param_count`.
pub fn arch_score(
    a: &ArchCandidate,
    train_records: &[TrainingRecord],
    val_records: &[TrainingRecord],
    omega: f64,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    let cfg = a.predictor_config(epochs, seed);
    let model = predictor::train_predictor(train_records, &cfg)?;
    let preds: Vec<f64> = val_records
        .iter()
        .map(|r| predictor::predict_gain(&model, &r.features))
        .collect::<Result<_>>()?;
    let actual: Vec<f64> = val_records.iter().map(|r| r.observed_gain).collect();
    let r2 = predictor::r_squared(&preds, &actual)?;
    Ok(r2 - omega * a.param_count() as f64)
}

/// One accepted step of the local search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NasLogEntry {
    pub iteration: usize,
    pub score: f64,
    pub accepted: bool,
    pub candidate_hash: String,
}

pub struct NasOutcome {
    pub best: ArchCandidate,
    pub best_score: f64,
    pub log: Vec<NasLogEntry>,
}

/// Random local search: improving scores are always accepted, worse ones
/// with probability `exp((s' - s) * p)`. Returns the best candidate seen
/// (never worse than the start).
pub fn nas_search<R: Rng>(
    start: ArchCandidate,
    space: &SearchSpace,
    iters: usize,
    p: f64,
    eval: &dyn Fn(&ArchCandidate) -> Result<f64>,
    rng: &mut R,
) -> Result<NasOutcome> {
    space.validate()?;
    let start_score = eval(&start)?;
    let mut current = start.clone();
    let mut current_score = start_score;
    let mut best = start;
    let mut best_score = start_score;
    let mut log = Vec::with_capacity(iters);

    for iteration in 0..iters {
        let candidate = random_neighbour(&current, space, rng);
        let score = eval(&candidate)?;
        let accept_p = ((score - current_score) * p).exp().min(1.0);
        let accepted = rng.random::<f64>() < accept_p;
        if score > best_score {
            best = candidate.clone();
            best_score = score;
        }
        log.push(NasLogEntry {
            iteration,
            score,
            accepted,
            candidate_hash: candidate.hash(),
        });
        if accepted {
            current = candidate;
            current_score = score;
        }
    }
    Ok(NasOutcome {
        best,
        best_score,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_for;

    fn base_candidate() -> ArchCandidate {
        ArchCandidate {
            hidden_widths: vec![16, 12],
            hidden_activation: Activation::Tanh,
            output_activation: OutputActivation::Linear,
            learning_rate: 1.2e-3,
            features: vec!["pair_gain_mean".into(), "n_tasks".into()],
        }
    }

    fn diff_count(a: &ArchCandidate, b: &ArchCandidate) -> usize {
        let mut d = 0;
        if a.hidden_widths != b.hidden_widths {
            d += 1;
        }
        if a.hidden_activation != b.hidden_activation
            || a.output_activation != b.output_activation
        {
            d += 1;
        }
        if a.learning_rate != b.learning_rate {
            d += 1;
        }
        let fa: std::collections::BTreeSet<_> = a.features.iter().collect();
        let fb: std::collections::BTreeSet<_> = b.features.iter().collect();
        if fa != fb {
            d += 1;
        }
        d
    }

    #[test]
    fn neighbour_changes_exactly_one_tunable() {
        let space = SearchSpace::default();
        let mut rng = rng_for(1, &["nas"]);
        let mut cur = base_candidate();
        for _ in 0..500 {
            let next = random_neighbour(&cur, &space, &mut rng);
            assert_eq!(diff_count(&cur, &next), 1, "{cur:?} -> {next:?}");
            cur = next;
        }
    }

    #[test]
    fn neuron_mutation_moves_by_ceil_fraction() {
        let space = SearchSpace {
            pick: PickProbabilities {
                layers: 0.0,
                neurons: 1.0,
                learning_rate: 0.0,
                activations: 0.0,
                features: 0.0,
            },
            ..SearchSpace::default()
        };
        let mut cand = base_candidate();
        cand.hidden_widths = vec![30];
        let mut rng = rng_for(2, &["nas"]);
        for _ in 0..50 {
            let next = random_neighbour(&cand, &space, &mut rng);
            assert!(
                next.hidden_widths[0] == 27 || next.hidden_widths[0] == 33,
                "width {}",
                next.hidden_widths[0]
            );
        }
    }

    #[test]
    fn single_layer_removal_becomes_addition() {
        let space = SearchSpace {
            pick: PickProbabilities {
                layers: 1.0,
                neurons: 0.0,
                learning_rate: 0.0,
                activations: 0.0,
                features: 0.0,
            },
            ..SearchSpace::default()
        };
        let mut cand = base_candidate();
        cand.hidden_widths = vec![8];
        let mut rng = rng_for(3, &["nas"]);
        for _ in 0..100 {
            let next = random_neighbour(&cand, &space, &mut rng);
            assert!(!next.hidden_widths.is_empty());
        }
    }

    #[test]
    fn last_feature_removal_becomes_addition() {
        let space = SearchSpace {
            pick: PickProbabilities {
                layers: 0.0,
                neurons: 0.0,
                learning_rate: 0.0,
                activations: 0.0,
                features: 1.0,
            },
            ..SearchSpace::default()
        };
        let mut cand = base_candidate();
        cand.features = vec!["pair_gain_mean".into()];
        let mut rng = rng_for(4, &["nas"]);
        for _ in 0..100 {
            let next = random_neighbour(&cand, &space, &mut rng);
            assert!(!next.features.is_empty());
            assert!(next.features.len() >= 1);
        }
    }

    #[test]
    fn param_count_matches_dense_arithmetic() {
        let mut cand = base_candidate();
        cand.features = vec!["a".into(), "b".into(), "c".into(), "d".into()];
        cand.hidden_widths = vec![3];
        // 4 -> 3 -> 1: 4*3+3 + 3*1+1 = 19
        assert_eq!(cand.param_count(), 19);
    }

    #[test]
    fn zero_iters_returns_start_and_score_never_degrades() {
        let space = SearchSpace::default();
        let eval = |c: &ArchCandidate| Ok(-(c.param_count() as f64));
        let start = base_candidate();
        let mut rng = rng_for(5, &["nas"]);
        let out = nas_search(start.clone(), &space, 0, 5.0, &eval, &mut rng).unwrap();
        assert_eq!(out.best, start);

        let out = nas_search(start.clone(), &space, 60, 5.0, &eval, &mut rng).unwrap();
        assert!(out.best_score >= -(start.param_count() as f64));
    }

    #[test]
    fn improving_moves_are_always_accepted() {
        // score grows with every step: every log entry must be accepted
        let counter = std::cell::Cell::new(0.0f64);
        let eval = |_: &ArchCandidate| {
            counter.set(counter.get() + 1.0);
            Ok(counter.get())
        };
        let mut rng = rng_for(6, &["nas"]);
        let out = nas_search(
            base_candidate(),
            &SearchSpace::default(),
            30,
            1.0,
            &eval,
            &mut rng,
        )
        .unwrap();
        assert!(out.log.iter().all(|e| e.accepted));
    }

    #[test]
    fn omega_prefers_smaller_nets_at_equal_r2() {
        let small = ArchCandidate {
            hidden_widths: vec![4],
            ..base_candidate()
        };
        let large = ArchCandidate {
            hidden_widths: vec![64, 64],
            ..base_candidate()
        };
        // identical R^2 stub: score difference is purely the penalty
        let r2 = 0.5;
        let omega = 1e-4;
        let s_small = r2 - omega * small.param_count() as f64;
        let s_large = r2 - omega * large.param_count() as f64;
        assert!(s_small > s_large);
    }
}
