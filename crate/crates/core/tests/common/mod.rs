#![allow(dead_code)]

use cbrm::model::logistic;
use cbrm::rng::{self, tag};
use cbrm::training::BatchItem;
use cbrm::{Embedding, GatingMode, ModelParams, PreferencePair};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            scale * z
        })
        .collect()
}

pub fn embedding(rng: &mut ChaCha8Rng, d: usize) -> Embedding {
    Embedding::new(normal_vec(rng, d, 1.0).into_iter().map(|v| v as f32).collect()).unwrap()
}

pub fn random_pair(rng: &mut ChaCha8Rng, id: u64, d: usize) -> PreferencePair {
    let label = rng.random_range(0..2u8);
    PreferencePair::new(id, embedding(rng, d), embedding(rng, d), embedding(rng, d), Some(label)).unwrap()
}

pub fn random_params(rng: &mut ChaCha8Rng, k: usize, d: usize, scale: f64, mode: GatingMode) -> ModelParams {
    let mut p = ModelParams::zeros(k, d, mode);
    for block in p.blocks_mut() {
        let n = block.len();
        *block = normal_vec(rng, n, scale);
    }
    p
}

/// Random concept labels with roughly a third missing.
pub fn random_labels(rng: &mut ChaCha8Rng, k: usize) -> Vec<Option<u8>> {
    (0..k)
        .map(|_| match rng.random_range(0..3u8) {
            0 => None,
            v => Some(v - 1),
        })
        .collect()
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Scalar re-implementation of the joint loss, written from the model
/// definitions without sharing any forward code with the library.
pub fn loss_oracle(p: &ModelParams, batch: &[BatchItem], seed: u64) -> f64 {
    let (k, d) = (p.n_concepts, p.dim);
    let dot = |row: &[f64], e: &Embedding| -> f64 {
        row.iter().zip(e.as_slice()).map(|(w, &x)| w * x as f64).sum()
    };
    let mut pref = (0.0, 0usize);
    let mut conc = (0.0, 0usize);
    for item in batch {
        let pair = item.pair;
        let logits: Vec<f64> = (0..k).map(|j| dot(&p.w_g[j * d..(j + 1) * d], &pair.prompt) + p.b_g[j]).collect();
        let w: Vec<f64> = match p.gating_mode {
            GatingMode::Softmax => {
                let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                let s: f64 = logits.iter().map(|z| (z - m).exp()).sum();
                logits.iter().map(|z| (z - m).exp() / s).collect()
            }
            GatingMode::Unconstrained => logits,
        };
        let mu = |e: &Embedding, j: usize| dot(&p.w_mu[j * d..(j + 1) * d], e) + p.b_mu[j];
        let var = |e: &Embedding, j: usize| (dot(&p.w_lv[j * d..(j + 1) * d], e) + p.b_lv[j]).exp().clamp(1e-6, 1e2);
        let ra: f64 = (0..k).map(|j| w[j] * mu(&pair.resp_a, j)).sum();
        let rb: f64 = (0..k).map(|j| w[j] * mu(&pair.resp_b, j)).sum();
        if let Some(l) = item.preference {
            let q = logistic(rb - ra);
            pref.0 += if l == 1 { -q.ln() } else { -(1.0 - q).ln() };
            pref.1 += 1;
        }
        for j in 0..k {
            if !item.mask[j] {
                continue;
            }
            let dmu = mu(&pair.resp_a, j) - mu(&pair.resp_b, j);
            let dvar = var(&pair.resp_a, j) + var(&pair.resp_b, j);
            let eta = rng::keyed_normal(&[seed, tag::REPARAM, pair.pair_id, j as u64, 0]);
            let u = -(dmu + dvar.sqrt() * eta);
            conc.0 += if item.concept_labels[j] == 1 { softplus(-u) } else { softplus(u) };
            conc.1 += 1;
        }
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { s / n as f64 };
    mean(pref) + mean(conc)
}

/// Central finite differences of `f` over every parameter coordinate.
pub fn fd_grad(p: &ModelParams, h: f64, f: impl Fn(&ModelParams) -> f64) -> ModelParams {
    let mut g = ModelParams::zeros(p.n_concepts, p.dim, p.gating_mode);
    let mut work = p.clone();
    for b in 0..6 {
        for i in 0..p.blocks()[b].len() {
            let orig = work.blocks()[b][i];
            work.blocks_mut()[b][i] = orig + h;
            let up = f(&work);
            work.blocks_mut()[b][i] = orig - h;
            let down = f(&work);
            work.blocks_mut()[b][i] = orig;
            g.blocks_mut()[b][i] = (up - down) / (2.0 * h);
        }
    }
    g
}

pub fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (fd.abs() + 1e-8)
}

/// Nodes and weights of `n`-point Gauss–Hermite quadrature for the weight
/// `e^{−x²}`, by Newton iteration on the normalized Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `E[f(X)]` for `X ~ N(mean, var)`.
pub fn gh_expect(nodes: &(Vec<f64>, Vec<f64>), mean: f64, var: f64, f: impl Fn(f64) -> f64) -> f64 {
    let s = (2.0 * var).sqrt();
    nodes.0.iter().zip(&nodes.1).map(|(x, w)| w * f(mean + s * x)).sum::<f64>() / std::f64::consts::PI.sqrt()
}

fn entropy(p: f64) -> f64 {
    let t = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    t(p) + t(1.0 - p)
}

/// Quadrature value of `H(E p) − E H(p)` with `p = σ(−Δc)`, `Δc ~ N(dmu, dvar)`.
pub fn eig_oracle(dmu: f64, dvar: f64) -> f64 {
    let nodes = gauss_hermite(64);
    let mean_p = gh_expect(&nodes, dmu, dvar, |c| logistic(-c));
    let mean_h = gh_expect(&nodes, dmu, dvar, |c| entropy(logistic(-c)));
    entropy(mean_p) - mean_h
}
