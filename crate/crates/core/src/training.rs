//! Joint preference + concept objective with hand-derived gradients.
//!
//! For one item with prompt `x`, responses `a`, `b` and `Δe = e_a − e_b`:
//!
//! ```text
//! dmu   = W_mu·Δe
//! dvar  = clamp(exp(W_lv·e_a + b_lv)) + clamp(exp(W_lv·e_b + b_lv))
//! w     = softmax(W_g·x + b_g)            (or the raw logits)
//! p(ℓ=1)  = σ(−wᵀ·dmu)
//! p(s_k=1) = σ(−(dmu_k + √dvar_k · η_k))  η_k ~ N(0, 1), keyed on (seed, pair, k)
//! ```
//!
//! The loss is the mean BCE over labeled preferences plus the mean BCE over
//! present concept labels. Because the heads are linear, the gradient is
//! closed form; the pathwise term through `√dvar` and the softmax Jacobian
//! are included.

use rand::seq::SliceRandom;

use crate::datamodel::{ExperimentConfig, GatingMode, PreferencePair};
use crate::model::{self, logistic, ConceptDelta, ModelParams};
use crate::rng::{self, tag};

/// How `p(s_k = 1)` is computed from the concept difference distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConceptLink {
    /// Reparameterized draw keyed on `(seed, pair_id, k, sample)`.
    Sample { seed: u64, sample: u64 },
    /// `σ(−dmu / √(1 + π·dvar/8))`.
    Probit,
}

pub fn concept_label_prob(delta: &ConceptDelta, k: usize, pair_id: u64, link: ConceptLink) -> f64 {
    let (dmu, dvar) = (delta.dmu[k], delta.dvar[k]);
    match link {
        ConceptLink::Sample { seed, sample } => {
            let eta = reparam_noise(seed, pair_id, k, sample);
            logistic(-(dmu + dvar.sqrt() * eta))
        }
        ConceptLink::Probit => probit_prob(dmu, dvar),
    }
}

#[inline]
pub fn probit_prob(dmu: f64, dvar: f64) -> f64 {
    logistic(-dmu / (1.0 + std::f64::consts::PI * dvar / 8.0).sqrt())
}

#[inline]
fn reparam_noise(seed: u64, pair_id: u64, k: usize, sample: u64) -> f64 {
    rng::keyed_normal(&[seed, tag::REPARAM, pair_id, k as u64, sample])
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// BCE of a Bernoulli with logit `u` against `target`.
#[inline]
fn bce_logit(u: f64, target: u8) -> f64 {
    if target == 1 {
        softplus(-u)
    } else {
        softplus(u)
    }
}

/// One training example: a pair, its preference label and a masked label row.
#[derive(Debug, Clone)]
pub struct BatchItem<'a> {
    pub pair: &'a PreferencePair,
    pub preference: Option<u8>,
    pub concept_labels: Vec<u8>,
    pub mask: Vec<bool>,
}

impl<'a> BatchItem<'a> {
    pub fn new(pair: &'a PreferencePair, preference: Option<u8>, concepts: &[Option<u8>]) -> Self {
        Self {
            pair,
            preference,
            concept_labels: concepts.iter().map(|c| c.unwrap_or(0)).collect(),
            mask: concepts.iter().map(Option::is_some).collect(),
        }
    }

    pub fn n_labels(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub preference: f64,
    pub concept: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    /// Reparameterization samples per concept label.
    pub samples: usize,
    /// Use the closed-form link instead of sampling (evaluation only).
    pub probit: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            samples: 1,
            probit: false,
        }
    }
}

/// Per-item forward quantities shared by the loss and the gradient.
struct Forward {
    x: Vec<f64>,
    ea: Vec<f64>,
    eb: Vec<f64>,
    diff: Vec<f64>,
    w: Vec<f64>,
    dmu: Vec<f64>,
    va: Vec<(f64, bool)>,
    vb: Vec<(f64, bool)>,
}

impl Forward {
    fn new(params: &ModelParams, pair: &PreferencePair) -> Self {
        let k = params.n_concepts;
        let x = model::to_f64(&pair.prompt);
        let ea = model::to_f64(&pair.resp_a);
        let eb = model::to_f64(&pair.resp_b);
        let diff: Vec<f64> = pair
            .resp_a
            .as_slice()
            .iter()
            .zip(pair.resp_b.as_slice())
            .map(|(&a, &b)| a as f64 - b as f64)
            .collect();
        let mut z = vec![0.0; k];
        model::affine(&params.w_g, &params.b_g, &x, &mut z);
        let w = model::weights_from_logits(params.gating_mode, z);
        let mut dmu = vec![0.0; k];
        model::matvec(&params.w_mu, &diff, &mut dmu);
        let mut lv = vec![0.0; k];
        model::affine(&params.w_lv, &params.b_lv, &ea, &mut lv);
        let va = lv.iter().map(|&l| model::clamped_var(l)).collect();
        model::affine(&params.w_lv, &params.b_lv, &eb, &mut lv);
        let vb = lv.iter().map(|&l| model::clamped_var(l)).collect();
        Self {
            x,
            ea,
            eb,
            diff,
            w,
            dmu,
            va,
            vb,
        }
    }

    fn dvar(&self, k: usize) -> f64 {
        self.va[k].0 + self.vb[k].0
    }
}

fn counts(batch: &[BatchItem]) -> (usize, usize) {
    let n_pref = batch.iter().filter(|i| i.preference.is_some()).count();
    let n_conc = batch.iter().map(BatchItem::n_labels).sum();
    (n_pref, n_conc)
}

pub fn loss(params: &ModelParams, batch: &[BatchItem], seed: u64) -> LossBreakdown {
    loss_with(params, batch, seed, &LossOptions::default())
}

pub fn loss_with(params: &ModelParams, batch: &[BatchItem], seed: u64, opts: &LossOptions) -> LossBreakdown {
    let (n_pref, n_conc) = counts(batch);
    let samples = opts.samples.max(1);
    let mut pref = 0.0;
    let mut conc = 0.0;
    for item in batch {
        let f = Forward::new(params, item.pair);
        if let Some(l) = item.preference {
            pref += bce_logit(model::preference_logit(&f.w, &f.dmu), l);
        }
        for k in 0..params.n_concepts {
            if !item.mask[k] {
                continue;
            }
            let s = item.concept_labels[k];
            let dvar = f.dvar(k);
            if opts.probit {
                let u = -f.dmu[k] / (1.0 + std::f64::consts::PI * dvar / 8.0).sqrt();
                conc += bce_logit(u, s);
            } else {
                let mut acc = 0.0;
                for j in 0..samples {
                    let eta = reparam_noise(seed, item.pair.pair_id, k, j as u64);
                    acc += bce_logit(-(f.dmu[k] + dvar.sqrt() * eta), s);
                }
                conc += acc / samples as f64;
            }
        }
    }
    let preference = if n_pref > 0 { pref / n_pref as f64 } else { 0.0 };
    let concept = if n_conc > 0 { conc / n_conc as f64 } else { 0.0 };
    LossBreakdown {
        total: preference + concept,
        preference,
        concept,
    }
}

pub fn grad(params: &ModelParams, batch: &[BatchItem], seed: u64) -> (ModelParams, LossBreakdown) {
    grad_with(params, batch, seed, 1)
}

/// Exact gradient of [`loss_with`] (sample link) at the same seed.
pub fn grad_with(
    params: &ModelParams,
    batch: &[BatchItem],
    seed: u64,
    samples: usize,
) -> (ModelParams, LossBreakdown) {
    let (kk, d) = (params.n_concepts, params.dim);
    let samples = samples.max(1);
    let mut g = ModelParams::zeros(kk, d, params.gating_mode);
    let (n_pref, n_conc) = counts(batch);
    let pref_scale = if n_pref > 0 { 1.0 / n_pref as f64 } else { 0.0 };
    let conc_scale = if n_conc > 0 { 1.0 / (n_conc * samples) as f64 } else { 0.0 };

    let mut pref_loss = 0.0;
    let mut conc_loss = 0.0;
    let mut g_dmu = vec![0.0; kk];
    let mut g_dvar = vec![0.0; kk];
    let mut g_w = vec![0.0; kk];

    for item in batch {
        let f = Forward::new(params, item.pair);
        g_dmu.iter_mut().for_each(|v| *v = 0.0);
        g_dvar.iter_mut().for_each(|v| *v = 0.0);
        g_w.iter_mut().for_each(|v| *v = 0.0);

        if let Some(l) = item.preference {
            let t = model::preference_logit(&f.w, &f.dmu);
            pref_loss += bce_logit(t, l);
            let dt = (logistic(t) - l as f64) * pref_scale;
            for k in 0..kk {
                g_dmu[k] -= dt * f.w[k];
                g_w[k] -= dt * f.dmu[k];
            }
        }

        for k in 0..kk {
            if !item.mask[k] {
                continue;
            }
            let s = item.concept_labels[k] as f64;
            let dvar = f.dvar(k);
            let sd = dvar.sqrt();
            let mut acc = 0.0;
            for j in 0..samples {
                let eta = reparam_noise(seed, item.pair.pair_id, k, j as u64);
                let dc = f.dmu[k] + sd * eta;
                acc += bce_logit(-dc, item.concept_labels[k]);
                // d BCE / d Δc = s − σ(−Δc)
                let gd = (s - logistic(-dc)) * conc_scale;
                g_dmu[k] += gd;
                g_dvar[k] += gd * eta / (2.0 * sd);
            }
            conc_loss += acc / samples as f64;
        }

        // gating head
        let g_z: Vec<f64> = match params.gating_mode {
            GatingMode::Softmax => {
                let dot: f64 = f.w.iter().zip(&g_w).map(|(a, b)| a * b).sum();
                f.w.iter().zip(&g_w).map(|(w, gw)| w * (gw - dot)).collect()
            }
            GatingMode::Unconstrained => g_w.clone(),
        };
        for k in 0..kk {
            let row = k * d;
            if g_z[k] != 0.0 {
                g.b_g[k] += g_z[k];
                for j in 0..d {
                    g.w_g[row + j] += g_z[k] * f.x[j];
                }
            }
            if g_dmu[k] != 0.0 {
                for j in 0..d {
                    g.w_mu[row + j] += g_dmu[k] * f.diff[j];
                }
            }
            if g_dvar[k] != 0.0 {
                let (va, act_a) = f.va[k];
                let (vb, act_b) = f.vb[k];
                let ga = if act_a { g_dvar[k] * va } else { 0.0 };
                let gb = if act_b { g_dvar[k] * vb } else { 0.0 };
                g.b_lv[k] += ga + gb;
                for j in 0..d {
                    g.w_lv[row + j] += ga * f.ea[j] + gb * f.eb[j];
                }
            }
        }
    }

    let preference = pref_loss * pref_scale;
    let concept = if n_conc > 0 { conc_loss / n_conc as f64 } else { 0.0 };
    (
        g,
        LossBreakdown {
            total: preference + concept,
            preference,
            concept,
        },
    )
}

/// Adam moments for every parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        let zeros = ModelParams::zeros(params.n_concepts, params.dim, params.gating_mode);
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks())
            .zip(self.m.blocks_mut())
            .zip(self.v.blocks_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainReport {
    pub steps: usize,
    pub mean_loss: LossBreakdown,
    /// Set when there was nothing to train on.
    pub empty: bool,
}

/// One shuffled pass over `items` in mini-batches with Adam updates.
pub fn train_epoch(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    items: &[BatchItem],
    config: &ExperimentConfig,
    seed: u64,
) -> TrainReport {
    if items.is_empty() {
        return TrainReport {
            empty: true,
            ..Default::default()
        };
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng::rng_for(seed, tag::TRAIN, 0));

    let mut report = TrainReport::default();
    let mut batch = Vec::with_capacity(config.batch_size);
    for chunk in order.chunks(config.batch_size.max(1)) {
        batch.clear();
        batch.extend(chunk.iter().map(|&i| items[i].clone()));
        let step_seed = rng::derive_seed(seed, tag::REPARAM, report.steps as u64);
        let (g, l) = grad_with(params, &batch, step_seed, config.train_samples);
        opt.update(params, &g);
        report.steps += 1;
        report.mean_loss.total += l.total;
        report.mean_loss.preference += l.preference;
        report.mean_loss.concept += l.concept;
    }
    let n = report.steps as f64;
    report.mean_loss.total /= n;
    report.mean_loss.preference /= n;
    report.mean_loss.concept /= n;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Embedding;
    use approx::assert_abs_diff_eq;

    fn pair(id: u64, x: &[f32], a: &[f32], b: &[f32], label: u8) -> PreferencePair {
        PreferencePair::new(
            id,
            Embedding::new(x.to_vec()).unwrap(),
            Embedding::new(a.to_vec()).unwrap(),
            Embedding::new(b.to_vec()).unwrap(),
            Some(label),
        )
        .unwrap()
    }

    #[test]
    fn probit_symmetry_and_confidence() {
        let d = ConceptDelta {
            dmu: vec![0.0, -5.0],
            dvar: vec![3.0, 1e-6],
        };
        assert_eq!(concept_label_prob(&d, 0, 0, ConceptLink::Probit), 0.5);
        assert!(concept_label_prob(&d, 1, 0, ConceptLink::Probit) > 0.99);
    }

    #[test]
    fn zero_params_give_ln2_preference_loss() {
        let p = ModelParams::zeros(2, 2, GatingMode::Softmax);
        let pairs = [
            pair(0, &[1.0, 0.0], &[0.5, 1.0], &[-1.0, 0.2], 0),
            pair(1, &[0.0, 1.0], &[0.1, 0.3], &[0.4, -0.7], 1),
        ];
        let batch: Vec<_> = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| BatchItem::new(p, p.label, &[Some(i as u8), Some(1 - i as u8)]))
            .collect();
        let l = loss(&p, &batch, 0);
        assert_abs_diff_eq!(l.preference, std::f64::consts::LN_2, epsilon = 1e-12);
        let probit = loss_with(&p, &batch, 0, &LossOptions { samples: 1, probit: true });
        assert_abs_diff_eq!(probit.concept, std::f64::consts::LN_2, epsilon = 1e-12);
        // sampled logits spread around 0, so by convexity the sampled loss is larger
        let sampled = loss_with(&p, &batch, 0, &LossOptions { samples: 4096, probit: false });
        assert!(sampled.concept > std::f64::consts::LN_2 + 0.1, "{}", sampled.concept);
        assert!(l.concept.is_finite());
    }

    #[test]
    fn no_concept_labels_means_no_log_variance_gradient() {
        let p = ModelParams::init(3, 2, GatingMode::Softmax, 0.5, 1);
        let pr = pair(0, &[1.0, 0.5], &[0.5, 1.0], &[-1.0, 0.2], 1);
        let batch = [BatchItem::new(&pr, Some(1), &[None, None, None])];
        let (g, l) = grad(&p, &batch, 3);
        assert_eq!(l.concept, 0.0);
        assert!(g.w_lv.iter().chain(&g.b_lv).all(|v| *v == 0.0));
        assert!(g.w_mu.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn masked_slots_ignore_their_stored_values() {
        let p = ModelParams::init(3, 2, GatingMode::Softmax, 0.5, 2);
        let pr = pair(4, &[1.0, 0.5], &[0.5, 1.0], &[-1.0, 0.2], 0);
        let a = BatchItem::new(&pr, Some(0), &[Some(1), None, Some(0)]);
        let mut b = a.clone();
        b.concept_labels[1] = 1;
        assert_eq!(grad(&p, &[a], 5), grad(&p, &[b], 5));
    }

    #[test]
    fn duplicating_items_keeps_the_gradient() {
        let p = ModelParams::init(2, 3, GatingMode::Unconstrained, 0.5, 3);
        let prs = [
            pair(0, &[1.0, 0.5, 0.0], &[0.5, 1.0, 2.0], &[-1.0, 0.2, 0.0], 0),
            pair(1, &[0.2, -0.5, 1.0], &[0.1, 0.0, -0.3], &[0.0, 0.9, 1.1], 1),
        ];
        let one: Vec<_> = prs.iter().map(|p| BatchItem::new(p, p.label, &[Some(1), None])).collect();
        let two: Vec<_> = one.iter().chain(&one).cloned().collect();
        let (g1, _) = grad(&p, &one, 8);
        let (g2, _) = grad(&p, &two, 8);
        for (a, b) in g1.blocks().iter().zip(g2.blocks()) {
            for (x, y) in a.iter().zip(b) {
                assert_abs_diff_eq!(*x, *y, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn zero_learning_rate_is_a_null_step() {
        let mut p = ModelParams::init(2, 2, GatingMode::Softmax, 0.5, 4);
        let before = p.clone();
        let pr = pair(0, &[1.0, 0.5], &[0.5, 1.0], &[-1.0, 0.2], 1);
        let items = [BatchItem::new(&pr, Some(1), &[Some(0), Some(1)])];
        let mut config = ExperimentConfig::default();
        config.learning_rate = 0.0;
        let mut opt = OptimizerState::new(&p, 0.0);
        let r = train_epoch(&mut p, &mut opt, &items, &config, 0);
        assert_eq!(r.steps, 1);
        assert_eq!(p, before);
    }

    #[test]
    fn empty_buffer_is_flagged() {
        let mut p = ModelParams::zeros(2, 2, GatingMode::Softmax);
        let mut opt = OptimizerState::new(&p, 1e-3);
        let r = train_epoch(&mut p, &mut opt, &[], &ExperimentConfig::default(), 0);
        assert!(r.empty);
        assert_eq!(r.steps, 0);
    }
}
