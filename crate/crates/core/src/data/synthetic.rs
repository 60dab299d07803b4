//! Linear synthetic world used as the annotation oracle at desk scale.
//!
//! True concept scores are `c*(x, y) = A·e_xy + b + noise`, true weights are
//! `w*(x) = softmax(G·e_x)`, and the true reward is `w*ᵀc*`. Concept noise
//! and label flips are keyed on `(seed, pair_id, ...)`, so asking the same
//! question twice always gets the same answer.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LabelSource;
use crate::datamodel::{Embedding, ExperimentConfig, GatingMode, PreferencePair};
use crate::error::{Error, Result};
use crate::model::{self, ModelParams};
use crate::rng::{self, tag};

/// Std-dev of the gating logits `G·e_x` for standard-normal prompts.
const GATING_LOGIT_SCALE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub n_concepts: usize,
    pub dim: usize,
    /// `K×d`, row-major.
    pub concept_map: Vec<f64>,
    pub concept_bias: Vec<f64>,
    /// `K×d`, row-major.
    pub gating_map: Vec<f64>,
    pub concept_noise: f64,
    pub label_flip_prob: f64,
    pub seed: u64,
}

impl SyntheticWorld {
    /// Draws the maps. With `leakage`, `A = [I | 0]` and `b = 0`, so the
    /// concept scores sit verbatim in the first K embedding coordinates.
    pub fn sample(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (k, d) = (config.n_concepts, config.embedding_dim);
        let mut rng = rng::rng_for(seed, tag::WORLD, 0);
        let mut normal = |scale: f64| -> f64 {
            let z: f64 = rng.sample(StandardNormal);
            scale * z
        };
        let (concept_map, concept_bias) = if config.synthetic.leakage {
            let mut a = vec![0.0; k * d];
            for i in 0..k {
                a[i * d + i] = 1.0;
            }
            (a, vec![0.0; k])
        } else {
            let s = 1.0 / (d as f64).sqrt();
            let a = (0..k * d).map(|_| normal(s)).collect();
            let b = (0..k).map(|_| normal(0.5)).collect();
            (a, b)
        };
        let g_scale = GATING_LOGIT_SCALE / (d as f64).sqrt();
        let gating_map = (0..k * d).map(|_| normal(g_scale)).collect();
        Ok(Self {
            n_concepts: k,
            dim: d,
            concept_map,
            concept_bias,
            gating_map,
            concept_noise: config.synthetic.concept_noise,
            label_flip_prob: config.synthetic.label_flip_prob,
            seed,
        })
    }

    fn check(&self, pair: &PreferencePair) -> Result<()> {
        if pair.dim() != self.dim {
            return Err(Error::Config(format!(
                "pair {} has dimension {} but the world has {}",
                pair.pair_id,
                pair.dim(),
                self.dim
            )));
        }
        Ok(())
    }

    /// True (noisy) concept scores of one side of a pair.
    pub fn true_concepts(&self, pair: &PreferencePair, second: bool) -> Vec<f64> {
        let e = if second { &pair.resp_b } else { &pair.resp_a };
        let x = model::to_f64(e);
        let mut c = vec![0.0; self.n_concepts];
        model::affine(&self.concept_map, &self.concept_bias, &x, &mut c);
        if self.concept_noise > 0.0 {
            for (k, v) in c.iter_mut().enumerate() {
                let eta = rng::keyed_normal(&[
                    self.seed,
                    tag::CONCEPT_NOISE,
                    pair.pair_id,
                    second as u64,
                    k as u64,
                ]);
                *v += self.concept_noise * eta;
            }
        }
        c
    }

    pub fn true_weights(&self, prompt: &Embedding) -> Vec<f64> {
        let x = model::to_f64(prompt);
        let mut z = vec![0.0; self.n_concepts];
        model::matvec(&self.gating_map, &x, &mut z);
        model::weights_from_logits(GatingMode::Softmax, z)
    }

    /// Noise-free comparison on concept `k` (before any label flip).
    pub fn true_relative_label(&self, pair: &PreferencePair, k: usize) -> Result<u8> {
        self.check(pair)?;
        if k >= self.n_concepts {
            return Err(Error::Config(format!(
                "concept index {k} out of range (K = {})",
                self.n_concepts
            )));
        }
        let a = self.true_concepts(pair, false)[k];
        let b = self.true_concepts(pair, true)[k];
        Ok((b > a) as u8)
    }

    /// Relative concept label as the judge would answer it, with keyed flips.
    pub fn oracle_concept_label(&self, pair: &PreferencePair, k: usize) -> Result<u8> {
        let label = self.true_relative_label(pair, k)?;
        let u = rng::keyed_uniform(&[self.seed, tag::FLIP, pair.pair_id, k as u64]);
        Ok(if u < self.label_flip_prob { 1 - label } else { label })
    }

    pub fn oracle_preference(&self, pair: &PreferencePair) -> Result<u8> {
        self.check(pair)?;
        let w = self.true_weights(&pair.prompt);
        let ca = self.true_concepts(pair, false);
        let cb = self.true_concepts(pair, true);
        let ra: f64 = w.iter().zip(&ca).map(|(w, c)| w * c).sum();
        let rb: f64 = w.iter().zip(&cb).map(|(w, c)| w * c).sum();
        Ok((rb > ra) as u8)
    }

    /// A model whose heads are exactly the world's maps.
    pub fn model_params(&self) -> ModelParams {
        let mut p = ModelParams::zeros(self.n_concepts, self.dim, GatingMode::Softmax);
        p.w_mu = self.concept_map.clone();
        p.b_mu = self.concept_bias.clone();
        p.w_g = self.gating_map.clone();
        p
    }
}

impl LabelSource for SyntheticWorld {
    fn n_concepts(&self) -> usize {
        self.n_concepts
    }

    fn concept_label(&self, pair: &PreferencePair, k: usize) -> Result<Option<u8>> {
        self.oracle_concept_label(pair, k).map(Some)
    }

    fn preference(&self, pair: &PreferencePair) -> Result<Option<u8>> {
        self.oracle_preference(pair).map(Some)
    }
}

/// Draws `n_pairs` standard-normal pairs and their world; labels are filled in.
pub fn generate_synthetic(
    n_pairs: usize,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<PreferencePair>, SyntheticWorld)> {
    if n_pairs == 0 {
        return Err(Error::Config("n_pairs must be at least 1".into()));
    }
    let world = SyntheticWorld::sample(config, seed)?;
    let d = config.embedding_dim;
    let mut rng = rng::rng_for(seed, tag::WORLD, 1);
    let mut draw = || -> Result<Embedding> {
        let v: Vec<f32> = (0..d)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z as f32
            })
            .collect();
        Embedding::new(v)
    };
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let (x, a, b) = (draw()?, draw()?, draw()?);
        let mut pair = PreferencePair::new(i as u64, x, a, b, None)?;
        pair.label = Some(world.oracle_preference(&pair)?);
        pairs.push(pair);
    }
    Ok((pairs, world))
}
