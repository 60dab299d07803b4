//! Shared domain records, index spaces and the experiment configuration.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// The ten concepts used by the judge annotations, in canonical order.
pub const DEFAULT_CONCEPTS: [&str; 10] = [
    "helpfulness",
    "correctness",
    "coherence",
    "complexity",
    "verbosity",
    "instruction_following",
    "truthfulness",
    "honesty",
    "safety",
    "readability",
];

/// A frozen feature vector standing in for a prompt or a prompt+response text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "embedding coordinate {pos} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// One `(prompt, response, response')` tuple.
///
/// `label == Some(1)` means the second response is preferred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub pair_id: u64,
    pub prompt: Embedding,
    pub resp_a: Embedding,
    pub resp_b: Embedding,
    pub label: Option<u8>,
}

impl PreferencePair {
    pub fn new(
        pair_id: u64,
        prompt: Embedding,
        resp_a: Embedding,
        resp_b: Embedding,
        label: Option<u8>,
    ) -> Result<Self> {
        let d = prompt.dim();
        if resp_a.dim() != d || resp_b.dim() != d {
            return Err(Error::Config(format!(
                "pair {pair_id}: embedding dimensions differ ({}, {}, {})",
                d,
                resp_a.dim(),
                resp_b.dim()
            )));
        }
        if matches!(label, Some(l) if l > 1) {
            return Err(Error::Config(format!("pair {pair_id}: label must be 0 or 1")));
        }
        Ok(Self {
            pair_id,
            prompt,
            resp_a,
            resp_b,
            label,
        })
    }

    pub fn dim(&self) -> usize {
        self.prompt.dim()
    }

    /// The same pair with the two responses exchanged and the label flipped.
    pub fn swapped(&self) -> Self {
        Self {
            pair_id: self.pair_id,
            prompt: self.prompt.clone(),
            resp_a: self.resp_b.clone(),
            resp_b: self.resp_a.clone(),
            label: self.label.map(|l| 1 - l),
        }
    }
}

/// Relative label on one concept: `value == 1` means the second response is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConceptLabel {
    pub pair_id: u64,
    pub concept_idx: usize,
    pub value: u8,
}

/// The set of `(pair index, concept)` queries that have not been asked yet.
///
/// Pair indices here are positions in the training split, not `pair_id`s.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPool {
    n_pairs: usize,
    n_concepts: usize,
    open: Vec<bool>,
    remaining: usize,
}

impl QueryPool {
    pub fn full(n_pairs: usize, n_concepts: usize) -> Self {
        Self {
            n_pairs,
            n_concepts,
            open: vec![true; n_pairs * n_concepts],
            remaining: n_pairs * n_concepts,
        }
    }

    pub fn from_queries(n_pairs: usize, n_concepts: usize, queries: &[(usize, usize)]) -> Self {
        let mut open = vec![false; n_pairs * n_concepts];
        let mut remaining = 0;
        for &(i, k) in queries {
            let slot = &mut open[i * n_concepts + k];
            if !*slot {
                *slot = true;
                remaining += 1;
            }
        }
        Self {
            n_pairs,
            n_concepts,
            open,
            remaining,
        }
    }

    pub fn len(&self) -> usize {
        self.remaining
    }

    pub fn is_empty(&self) -> bool {
        self.remaining == 0
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    pub fn n_concepts(&self) -> usize {
        self.n_concepts
    }

    pub fn contains(&self, pair: usize, concept: usize) -> bool {
        pair < self.n_pairs && concept < self.n_concepts && self.open[pair * self.n_concepts + concept]
    }

    /// Removes a query; returns false if it was not in the pool.
    pub fn remove(&mut self, pair: usize, concept: usize) -> bool {
        if !self.contains(pair, concept) {
            return false;
        }
        self.open[pair * self.n_concepts + concept] = false;
        self.remaining -= 1;
        true
    }

    /// Open queries in ascending `(pair, concept)` order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let k = self.n_concepts;
        self.open
            .iter()
            .enumerate()
            .filter(|(_, open)| **open)
            .map(move |(slot, _)| (slot / k, slot % k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionKind {
    Random,
    Variance,
    Cwis,
    Eig,
}

impl AcquisitionKind {
    pub const ALL: [AcquisitionKind; 4] = [
        AcquisitionKind::Random,
        AcquisitionKind::Variance,
        AcquisitionKind::Cwis,
        AcquisitionKind::Eig,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AcquisitionKind::Random => "random",
            AcquisitionKind::Variance => "variance",
            AcquisitionKind::Cwis => "cwis",
            AcquisitionKind::Eig => "eig",
        }
    }
}

impl fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AcquisitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AcquisitionKind::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy '{s}' (valid: random, variance, cwis, eig)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GatingMode {
    #[default]
    Softmax,
    Unconstrained,
}

impl GatingMode {
    pub fn name(self) -> &'static str {
        match self {
            GatingMode::Softmax => "softmax",
            GatingMode::Unconstrained => "unconstrained",
        }
    }
}

impl FromStr for GatingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(GatingMode::Softmax),
            "unconstrained" => Ok(GatingMode::Unconstrained),
            _ => Err(Error::Config(format!(
                "unknown gating mode '{s}' (valid: softmax, unconstrained)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

/// Parameters of the synthetic benchmark generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Total pool size before the train/val/test split.
    pub n_pairs: usize,
    /// Std-dev of the Gaussian noise added to every true concept score.
    pub concept_noise: f64,
    /// Probability that the oracle flips a relative concept label.
    pub label_flip_prob: f64,
    /// Write the true concept scores into the first K embedding coordinates.
    pub leakage: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_pairs: 28_572,
            concept_noise: 0.1,
            label_flip_prob: 0.05,
            leakage: false,
        }
    }
}

/// Resolved configuration of one experiment. Serialized as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_concepts: usize,
    pub concept_names: Option<Vec<String>>,
    pub embedding_dim: usize,
    pub acquisitions_per_episode: usize,
    pub episodes: usize,
    pub buffer_capacity: usize,
    pub cwis_lambda: f64,
    /// When set, CwIS intervenes with `±tau` per side instead of clamping to 0.
    pub cwis_high_low: Option<f64>,
    pub mc_samples: usize,
    /// Reparameterization samples per concept label per training step.
    pub train_samples: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_episode: usize,
    pub seed: u64,
    pub acquisition: AcquisitionKind,
    pub gating_mode: GatingMode,
    pub split: SplitFractions,
    /// Continue from the current parameters after each episode.
    pub warm_start: bool,
    /// Std-dev of the Gaussian initialization of the mean and gating weights.
    pub init_scale: f64,
    pub synthetic: SyntheticConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_concepts: 10,
            concept_names: None,
            embedding_dim: 64,
            acquisitions_per_episode: 320,
            episodes: 30,
            buffer_capacity: 32_000,
            cwis_lambda: 0.1,
            cwis_high_low: None,
            mc_samples: 64,
            train_samples: 1,
            learning_rate: 1e-3,
            batch_size: 256,
            epochs_per_episode: 1,
            seed: 0,
            acquisition: AcquisitionKind::Eig,
            gating_mode: GatingMode::Softmax,
            split: SplitFractions::default(),
            warm_start: true,
            init_scale: 0.01,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn concept_names(&self) -> Vec<String> {
        match &self.concept_names {
            Some(names) => names.clone(),
            None if self.n_concepts == DEFAULT_CONCEPTS.len() => {
                DEFAULT_CONCEPTS.iter().map(|s| s.to_string()).collect()
            }
            None => (0..self.n_concepts).map(|k| format!("concept_{k}")).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_concepts", self.n_concepts),
            ("embedding_dim", self.embedding_dim),
            ("acquisitions_per_episode", self.acquisitions_per_episode),
            ("episodes", self.episodes),
            ("buffer_capacity", self.buffer_capacity),
            ("mc_samples", self.mc_samples),
            ("train_samples", self.train_samples),
            ("batch_size", self.batch_size),
            ("epochs_per_episode", self.epochs_per_episode),
            ("synthetic.n_pairs", self.synthetic.n_pairs),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.mc_samples < 2 {
            return Err(Error::Config("mc_samples must be at least 2".into()));
        }
        if let Some(names) = &self.concept_names {
            if names.len() != self.n_concepts {
                return Err(Error::Config(format!(
                    "{} concept names given for n_concepts = {}",
                    names.len(),
                    self.n_concepts
                )));
            }
        }
        let SplitFractions { train, val, test } = self.split;
        if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f))
            || (train + val + test - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split fractions must lie in [0, 1] and sum to 1, got {train}/{val}/{test}"
            )));
        }
        if !(self.cwis_lambda >= 0.0) {
            return Err(Error::Config("cwis_lambda must be non-negative".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        let eps = self.synthetic.label_flip_prob;
        if !(0.0..0.5).contains(&eps) {
            return Err(Error::Config(format!(
                "label_flip_prob must lie in [0, 0.5), got {eps}"
            )));
        }
        if !(self.synthetic.concept_noise >= 0.0) {
            return Err(Error::Config("concept_noise must be non-negative".into()));
        }
        if self.synthetic.leakage && self.n_concepts > self.embedding_dim {
            return Err(Error::Config(
                "leakage needs embedding_dim >= n_concepts".into(),
            ));
        }
        Ok(())
    }
}

/// The three disjoint parts of a pool.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<PreferencePair>,
    pub val: Vec<PreferencePair>,
    pub test: Vec<PreferencePair>,
}

/// Seeded partition into `⌊train·N⌋ / ⌊val·N⌋ / remainder`.
pub fn split_pool(pool: &[PreferencePair], config: &ExperimentConfig, seed: u64) -> Result<Split> {
    if pool.is_empty() {
        return Err(Error::Config("cannot split an empty pool".into()));
    }
    let n = pool.len();
    let n_train = (config.split.train * n as f64 + 1e-9).floor() as usize;
    let n_val = ((config.split.val * n as f64 + 1e-9).floor() as usize).min(n - n_train);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_for(seed, tag::SPLIT, 0));

    let take = |range: std::ops::Range<usize>| -> Vec<PreferencePair> {
        let mut idx = order[range].to_vec();
        // keep file order inside each part
        idx.sort_unstable();
        idx.into_iter().map(|i| pool[i].clone()).collect()
    };
    Ok(Split {
        train: take(0..n_train),
        val: take(n_train..n_train + n_val),
        test: take(n_train + n_val..n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_pool(n: usize) -> Vec<PreferencePair> {
        (0..n)
            .map(|i| {
                let e = Embedding::new(vec![i as f32]).unwrap();
                PreferencePair::new(i as u64, e.clone(), e.clone(), e, None).unwrap()
            })
            .collect()
    }

    #[test]
    fn split_sizes_follow_floor_arithmetic() {
        let config = ExperimentConfig::default();
        let s = split_pool(&toy_pool(10), &config, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let config = ExperimentConfig::default();
        let pool = toy_pool(97);
        let a = split_pool(&pool, &config, 11).unwrap();
        let b = split_pool(&pool, &config, 11).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let mut ids: Vec<u64> = a
            .train
            .iter()
            .chain(&a.val)
            .chain(&a.test)
            .map(|p| p.pair_id)
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..97).collect::<Vec<_>>());
    }

    #[test]
    fn split_seeds_change_membership_not_sizes() {
        let config = ExperimentConfig::default();
        let pool = toy_pool(10_000);
        let a = split_pool(&pool, &config, 0).unwrap();
        let b = split_pool(&pool, &config, 1).unwrap();
        assert_eq!(a.train.len(), b.train.len());
        assert_eq!(a.test.len(), b.test.len());
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn empty_pool_is_rejected() {
        let err = split_pool(&[], &ExperimentConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn pool_bookkeeping() {
        let mut pool = QueryPool::full(3, 2);
        assert_eq!(pool.len(), 6);
        assert!(pool.remove(1, 1));
        assert!(!pool.remove(1, 1));
        assert_eq!(pool.len(), 5);
        assert_eq!(
            pool.iter().collect::<Vec<_>>(),
            vec![(0, 0), (0, 1), (1, 0), (2, 0), (2, 1)]
        );
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::default();
        c.validate().unwrap();
        c.synthetic.label_flip_prob = 0.6;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.acquisitions_per_episode = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.split.test = 0.3;
        assert!(c.validate().is_err());
        assert!("bald".parse::<AcquisitionKind>().is_err());
        assert_eq!("cwis".parse::<AcquisitionKind>().unwrap(), AcquisitionKind::Cwis);
    }

    #[test]
    fn mismatched_embedding_dims_rejected() {
        let a = Embedding::new(vec![0.0; 3]).unwrap();
        let b = Embedding::new(vec![0.0; 4]).unwrap();
        assert!(PreferencePair::new(0, a.clone(), a, b, None).is_err());
        assert!(Embedding::new(vec![f32::NAN]).is_err());
    }
}
