//! Forward math of the concept bottleneck reward model.
//!
//! Both heads are single linear layers over frozen embeddings:
//!
//! - concept encoder: `μ = W_mu·e + b_mu`, `σ² = clamp(exp(W_lv·e + b_lv))`
//! - gating head: `w = softmax(W_g·x + b_g)` (or the raw logits)
//!
//! The reward of a response is `wᵀc` with `c` the concept vector (its mean,
//! or a reparameterized sample). Concept scores live in logit space.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Embedding, GatingMode, PreferencePair};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

pub const VAR_MIN: f64 = 1e-6;
pub const VAR_MAX: f64 = 1e2;

const CHECKPOINT_MAGIC: &[u8; 4] = b"CBRM";
const CHECKPOINT_VERSION: u16 = 1;

#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Parameters of both heads. Matrices are `K×d`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_concepts: usize,
    pub dim: usize,
    pub gating_mode: GatingMode,
    pub w_mu: Vec<f64>,
    pub b_mu: Vec<f64>,
    pub w_lv: Vec<f64>,
    pub b_lv: Vec<f64>,
    pub w_g: Vec<f64>,
    pub b_g: Vec<f64>,
}

/// Names of the six parameter blocks, in checkpoint order.
pub const BLOCK_NAMES: [&str; 6] = ["w_mu", "b_mu", "w_lv", "b_lv", "w_g", "b_g"];

impl ModelParams {
    pub fn zeros(n_concepts: usize, dim: usize, gating_mode: GatingMode) -> Self {
        let m = n_concepts * dim;
        Self {
            n_concepts,
            dim,
            gating_mode,
            w_mu: vec![0.0; m],
            b_mu: vec![0.0; n_concepts],
            w_lv: vec![0.0; m],
            b_lv: vec![0.0; n_concepts],
            w_g: vec![0.0; m],
            b_g: vec![0.0; n_concepts],
        }
    }

    /// Gaussian init of the mean and gating matrices; biases and the
    /// log-variance head start at zero (unit variance).
    pub fn init(n_concepts: usize, dim: usize, gating_mode: GatingMode, scale: f64, seed: u64) -> Self {
        let mut p = Self::zeros(n_concepts, dim, gating_mode);
        let mut rng = rng::rng_for(seed, tag::INIT, 0);
        for v in p.w_mu.iter_mut().chain(p.w_g.iter_mut()) {
            let z: f64 = rng.sample(StandardNormal);
            *v = scale * z;
        }
        p
    }

    pub fn blocks(&self) -> [&[f64]; 6] {
        [&self.w_mu, &self.b_mu, &self.w_lv, &self.b_lv, &self.w_g, &self.b_g]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w_mu,
            &mut self.b_mu,
            &mut self.w_lv,
            &mut self.b_lv,
            &mut self.w_g,
            &mut self.b_g,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_dim(&self, e: &Embedding) -> Result<()> {
        if e.dim() != self.dim {
            return Err(Error::Config(format!(
                "embedding has dimension {} but the model expects {}",
                e.dim(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Writes the binary checkpoint (little-endian float32 blocks).
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        write(CHECKPOINT_MAGIC)?;
        write(&CHECKPOINT_VERSION.to_le_bytes())?;
        write(&(self.n_concepts as u32).to_le_bytes())?;
        write(&(self.dim as u32).to_le_bytes())?;
        write(&[match self.gating_mode {
            GatingMode::Softmax => 0u8,
            GatingMode::Unconstrained => 1u8,
        }])?;
        for block in self.blocks() {
            for &v in block {
                write(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut offset = 0u64;
        let mut read = |buf: &mut [u8], what: &str| -> Result<u64> {
            r.read_exact(buf).map_err(|_| Error::Format {
                path: path.to_path_buf(),
                offset,
                message: format!("truncated checkpoint while reading {what}"),
            })?;
            let at = offset;
            offset += buf.len() as u64;
            Ok(at)
        };
        let mut magic = [0u8; 4];
        read(&mut magic, "magic")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: 0,
                message: "bad magic, expected CBRM".into(),
            });
        }
        let mut b2 = [0u8; 2];
        let at = read(&mut b2, "version")?;
        if u16::from_le_bytes(b2) != CHECKPOINT_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: at,
                message: format!("unsupported checkpoint version {}", u16::from_le_bytes(b2)),
            });
        }
        let mut b4 = [0u8; 4];
        read(&mut b4, "K")?;
        let k = u32::from_le_bytes(b4) as usize;
        read(&mut b4, "d")?;
        let d = u32::from_le_bytes(b4) as usize;
        let mut b1 = [0u8; 1];
        let at = read(&mut b1, "gating mode")?;
        let mode = match b1[0] {
            0 => GatingMode::Softmax,
            1 => GatingMode::Unconstrained,
            other => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: at,
                    message: format!("unknown gating mode byte {other}"),
                })
            }
        };
        let mut params = ModelParams::zeros(k, d, mode);
        for (name, block) in BLOCK_NAMES.iter().zip(params.blocks_mut()) {
            for v in block.iter_mut() {
                read(&mut b4, name)?;
                *v = f32::from_le_bytes(b4) as f64;
            }
        }
        Ok(params)
    }
}

/// Diagonal Gaussian over the concept scores of one prompt+response.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConcepts {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatingWeights {
    pub w: Vec<f64>,
}

/// Distribution of `c(x, y) − c(x, y')`. Positive `dmu[k]` favours the first response.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptDelta {
    pub dmu: Vec<f64>,
    pub dvar: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    Mean,
    Sample(u64),
}

/// `out = W·x + b` for a row-major `K×d` matrix.
#[inline]
pub(crate) fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (k, o) in out.iter_mut().enumerate() {
        let row = &w[k * d..(k + 1) * d];
        *o = b[k] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

#[inline]
pub(crate) fn matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = w[k * d..(k + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

pub(crate) fn to_f64(e: &Embedding) -> Vec<f64> {
    e.as_slice().iter().map(|&v| v as f64).collect()
}

/// `exp` of the log-variance, clamped; returns whether the clamp was inactive.
#[inline]
pub(crate) fn clamped_var(log_var: f64) -> (f64, bool) {
    let v = log_var.exp();
    if v < VAR_MIN {
        (VAR_MIN, false)
    } else if v > VAR_MAX {
        (VAR_MAX, false)
    } else {
        (v, true)
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite {what}")))
    }
}

pub fn predict_concepts(params: &ModelParams, emb: &Embedding) -> Result<GaussianConcepts> {
    params.check_dim(emb)?;
    let x = to_f64(emb);
    let k = params.n_concepts;
    let mut mu = vec![0.0; k];
    let mut lv = vec![0.0; k];
    affine(&params.w_mu, &params.b_mu, &x, &mut mu);
    affine(&params.w_lv, &params.b_lv, &x, &mut lv);
    ensure_finite(&mu, "concept means")?;
    ensure_finite(&lv, "concept log-variances")?;
    let var = lv.into_iter().map(|l| clamped_var(l).0).collect();
    Ok(GaussianConcepts { mu, var })
}

pub fn gating_weights(params: &ModelParams, prompt: &Embedding) -> Result<GatingWeights> {
    params.check_dim(prompt)?;
    let x = to_f64(prompt);
    let mut z = vec![0.0; params.n_concepts];
    affine(&params.w_g, &params.b_g, &x, &mut z);
    ensure_finite(&z, "gating logits")?;
    Ok(GatingWeights {
        w: weights_from_logits(params.gating_mode, z),
    })
}

pub fn weights_from_logits(mode: GatingMode, mut z: Vec<f64>) -> Vec<f64> {
    if mode == GatingMode::Softmax {
        softmax_in_place(&mut z);
    }
    z
}

pub fn reward(params: &ModelParams, pair: &PreferencePair, side: Side, mode: RewardMode) -> Result<f64> {
    let w = gating_weights(params, &pair.prompt)?.w;
    let emb = match side {
        Side::A => &pair.resp_a,
        Side::B => &pair.resp_b,
    };
    let c = predict_concepts(params, emb)?;
    let r = match mode {
        RewardMode::Mean => w.iter().zip(&c.mu).map(|(w, m)| w * m).sum(),
        RewardMode::Sample(seed) => {
            let mut rng = rng::rng_for(seed, tag::REPARAM, pair.pair_id);
            w.iter()
                .zip(c.mu.iter().zip(&c.var))
                .map(|(w, (m, v))| {
                    let eta: f64 = rng.sample(StandardNormal);
                    w * (m + v.sqrt() * eta)
                })
                .sum()
        }
    };
    Ok(r)
}

pub fn concept_delta(params: &ModelParams, pair: &PreferencePair) -> Result<ConceptDelta> {
    params.check_dim(&pair.resp_a)?;
    let a = predict_concepts(params, &pair.resp_a)?;
    let b = predict_concepts(params, &pair.resp_b)?;
    // W(e_a − e_b) rather than μ_a − μ_b so the bias cancels exactly
    let diff: Vec<f64> = pair
        .resp_a
        .as_slice()
        .iter()
        .zip(pair.resp_b.as_slice())
        .map(|(&x, &y)| x as f64 - y as f64)
        .collect();
    let mut dmu = vec![0.0; params.n_concepts];
    matvec(&params.w_mu, &diff, &mut dmu);
    let dvar = a.var.iter().zip(&b.var).map(|(x, y)| x + y).collect();
    Ok(ConceptDelta { dmu, dvar })
}

/// `p(ℓ = 1)`: probability that the second response is preferred, from mean rewards.
pub fn preference_prob(params: &ModelParams, pair: &PreferencePair) -> Result<f64> {
    let w = gating_weights(params, &pair.prompt)?.w;
    let delta = concept_delta(params, pair)?;
    Ok(logistic(preference_logit(&w, &delta.dmu)))
}

/// `r(x, y') − r(x, y) = −wᵀ·dmu`.
#[inline]
pub fn preference_logit(w: &[f64], dmu: &[f64]) -> f64 {
    -w.iter().zip(dmu).map(|(a, b)| a * b).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn pair(x: &[f32], a: &[f32], b: &[f32]) -> PreferencePair {
        PreferencePair::new(0, emb(x), emb(a), emb(b), None).unwrap()
    }

    #[test]
    fn zero_params_give_unit_variance() {
        let p = ModelParams::zeros(3, 4, GatingMode::Softmax);
        let c = predict_concepts(&p, &emb(&[1.0, -2.0, 0.5, 3.0])).unwrap();
        assert_eq!(c.mu, vec![0.0; 3]);
        assert_eq!(c.var, vec![1.0; 3]);
    }

    #[test]
    fn variance_lower_clamp() {
        let mut p = ModelParams::zeros(2, 3, GatingMode::Softmax);
        p.b_lv = vec![-20.0; 2];
        let c = predict_concepts(&p, &emb(&[0.3, 0.1, -0.2])).unwrap();
        assert_eq!(c.var, vec![VAR_MIN; 2]);
        p.b_lv = vec![20.0; 2];
        let c = predict_concepts(&p, &emb(&[0.3, 0.1, -0.2])).unwrap();
        assert_eq!(c.var, vec![VAR_MAX; 2]);
    }

    #[test]
    fn mean_matches_hand_computed_product() {
        let mut p = ModelParams::zeros(3, 4, GatingMode::Softmax);
        p.w_mu = vec![
            0.5, -1.0, 0.0, 2.0, //
            1.5, 0.25, -0.5, 0.0, //
            0.0, 0.0, 1.0, -1.0,
        ];
        p.b_mu = vec![0.1, -0.2, 0.3];
        let x = [1.0f32, 2.0, -1.0, 0.5];
        let c = predict_concepts(&p, &emb(&x)).unwrap();
        // rows by hand
        assert_abs_diff_eq!(c.mu[0], 0.1 + 0.5 - 2.0 + 0.0 + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.mu[1], -0.2 + 1.5 + 0.5 + 0.5 + 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.mu[2], 0.3 + 0.0 + 0.0 - 1.0 - 0.5, epsilon = 1e-12);
    }

    #[test]
    fn gating_uniform_and_saturated() {
        let mut p = ModelParams::zeros(4, 2, GatingMode::Softmax);
        let w = gating_weights(&p, &emb(&[1.0, 1.0])).unwrap().w;
        for v in &w {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-15);
        }
        p.b_g = vec![10.0, -10.0, -10.0, -10.0];
        let w = gating_weights(&p, &emb(&[0.0, 0.0])).unwrap().w;
        assert!((w[0] - 1.0).abs() < 1e-4);
        p.gating_mode = GatingMode::Unconstrained;
        let w = gating_weights(&p, &emb(&[0.0, 0.0])).unwrap().w;
        assert_eq!(w, vec![10.0, -10.0, -10.0, -10.0]);
    }

    #[test]
    fn reward_projection_and_cancellation() {
        let mut p = ModelParams::zeros(2, 1, GatingMode::Unconstrained);
        p.b_g = vec![0.0, 1.0];
        p.b_mu = vec![0.9, 0.4];
        let pr = pair(&[0.0], &[0.0], &[0.0]);
        assert_abs_diff_eq!(reward(&p, &pr, Side::A, RewardMode::Mean).unwrap(), 0.4);

        p.b_g = vec![0.5, 0.5];
        p.b_mu = vec![1.0, -1.0];
        assert_abs_diff_eq!(reward(&p, &pr, Side::B, RewardMode::Mean).unwrap(), 0.0);
    }

    #[test]
    fn preference_probability_values() {
        let mut p = ModelParams::zeros(1, 1, GatingMode::Unconstrained);
        p.b_g = vec![1.0];
        p.w_mu = vec![1.0];
        let equal = pair(&[0.0], &[0.3], &[0.3]);
        assert_eq!(preference_prob(&p, &equal).unwrap(), 0.5);
        let pr = pair(&[0.0], &[0.0], &[1.0]);
        assert_abs_diff_eq!(preference_prob(&p, &pr).unwrap(), 0.731_058_578_630_004_9, epsilon = 1e-12);
        let q = preference_prob(&p, &pr.swapped()).unwrap();
        assert_abs_diff_eq!(q, 1.0 - 0.731_058_578_630_004_9, epsilon = 1e-12);
    }

    #[test]
    fn delta_direct_values() {
        let mut p = ModelParams::zeros(1, 1, GatingMode::Softmax);
        // μ(y) = 0.2, μ(y') = −0.1 with e = 1, −0.5
        p.w_mu = vec![0.2];
        p.w_lv = vec![0.0];
        let pr = pair(&[0.0], &[1.0], &[-0.5]);
        p.b_lv = vec![0.0];
        let d = concept_delta(&p, &pr).unwrap();
        assert_abs_diff_eq!(d.dmu[0], 0.3, epsilon = 1e-12);
        // variances 0.1 and 0.3 via a log-variance slope
        let (la, lb) = (0.1f64.ln(), 0.3f64.ln());
        p.w_lv = vec![(la - lb) / 1.5];
        p.b_lv = vec![la - p.w_lv[0]];
        let d = concept_delta(&p, &pr).unwrap();
        assert_abs_diff_eq!(d.dvar[0], 0.4, epsilon = 1e-12);

        let same = pair(&[0.0], &[0.7], &[0.7]);
        let d = concept_delta(&p, &same).unwrap();
        let v = predict_concepts(&p, &same.resp_a).unwrap().var[0];
        assert_eq!(d.dmu[0], 0.0);
        assert_eq!(d.dvar[0], 2.0 * v);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = ModelParams::zeros(2, 3, GatingMode::Softmax);
        assert!(predict_concepts(&p, &emb(&[1.0])).is_err());
    }

    #[test]
    fn non_finite_params_are_numeric_errors() {
        let mut p = ModelParams::zeros(1, 1, GatingMode::Softmax);
        p.w_mu[0] = f64::NAN;
        assert!(matches!(predict_concepts(&p, &emb(&[1.0])), Err(Error::Numeric(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_f32_exact() {
        let p = ModelParams::init(3, 5, GatingMode::Unconstrained, 0.7, 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cbrm");
        p.save(&path).unwrap();
        let q = ModelParams::load(&path).unwrap();
        assert_eq!(q.gating_mode, GatingMode::Unconstrained);
        for (a, b) in p.blocks().iter().zip(q.blocks()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 4 + 4 + 1 + 4 * p.n_params());
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(ModelParams::load(&path), Err(Error::Format { .. })));
    }
}
