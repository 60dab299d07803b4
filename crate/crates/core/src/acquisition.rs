//! Acquisition functions over open `(pair, concept)` queries.
//!
//! Pair coordinates are positions in the training split. All scores use
//! evaluation-mode statistics (concept means and closed-form variances) and
//! depend only on the query itself, never on its position in the pool.

use rayon::prelude::*;

use crate::datamodel::{AcquisitionKind, PreferencePair, QueryPool};
use crate::error::{Error, Result};
use crate::model::{self, logistic, ModelParams};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionScore {
    pub pair: usize,
    pub concept: usize,
    pub score: f64,
}

/// How CwIS intervenes on concept `k` before recomputing the reward gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Intervention {
    /// Set the concept mean to 0 on both sides.
    ClampZero,
    /// Set the side with the larger mean to `+tau` and the other to `−tau`.
    HighLow(f64),
}

/// Everything the model says about one pair, in evaluation mode.
#[derive(Debug, Clone)]
struct PairStats {
    w: Vec<f64>,
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    dmu: Vec<f64>,
    dvar: Vec<f64>,
}

fn pair_stats(params: &ModelParams, pair: &PreferencePair) -> Result<PairStats> {
    let w = model::gating_weights(params, &pair.prompt)?.w;
    let a = model::predict_concepts(params, &pair.resp_a)?;
    let b = model::predict_concepts(params, &pair.resp_b)?;
    let delta = model::concept_delta(params, pair)?;
    Ok(PairStats {
        w,
        mu_a: a.mu,
        mu_b: b.mu,
        dmu: delta.dmu,
        dvar: delta.dvar,
    })
}

/// Stats for every pair that still has an open query (`None` otherwise).
fn open_pair_stats(params: &ModelParams, pairs: &[PreferencePair], pool: &QueryPool) -> Result<Vec<Option<PairStats>>> {
    check_pool(pairs, pool)?;
    let k = pool.n_concepts();
    (0..pairs.len())
        .into_par_iter()
        .map(|i| {
            if (0..k).any(|c| pool.contains(i, c)) {
                pair_stats(params, &pairs[i]).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}

fn check_pool(pairs: &[PreferencePair], pool: &QueryPool) -> Result<()> {
    if pool.n_pairs() != pairs.len() {
        return Err(Error::Config(format!(
            "pool covers {} pairs but {} were given",
            pool.n_pairs(),
            pairs.len()
        )));
    }
    Ok(())
}

fn collect_scores<F>(pool: &QueryPool, stats: &[Option<PairStats>], f: F) -> Vec<AcquisitionScore>
where
    F: Fn(&PairStats, usize) -> f64 + Sync,
{
    let queries: Vec<(usize, usize)> = pool.iter().collect();
    queries
        .par_iter()
        .map(|&(i, k)| AcquisitionScore {
            pair: i,
            concept: k,
            score: f(stats[i].as_ref().expect("stats for open pair"), k),
        })
        .collect()
}

/// Uniform(0, 1) scores keyed on `(seed, pair, concept)`.
pub fn score_random(pool: &QueryPool, seed: u64) -> Vec<AcquisitionScore> {
    pool.iter()
        .map(|(i, k)| AcquisitionScore {
            pair: i,
            concept: k,
            score: rng::keyed_uniform(&[seed, tag::RANDOM_SCORE, i as u64, k as u64]),
        })
        .collect()
}

/// `Var[Δc_k] = σ²_k(x, y) + σ²_k(x, y')`.
pub fn score_variance(params: &ModelParams, pairs: &[PreferencePair], pool: &QueryPool) -> Result<Vec<AcquisitionScore>> {
    let stats = open_pair_stats(params, pairs, pool)?;
    Ok(collect_scores(pool, &stats, |s, k| s.dvar[k]))
}

/// Reward-gap influence of intervening on concept `k`, plus `λ·Var[Δc_k]`.
pub fn score_cwis(
    params: &ModelParams,
    pairs: &[PreferencePair],
    pool: &QueryPool,
    lambda: f64,
    intervention: Intervention,
) -> Result<Vec<AcquisitionScore>> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("CwIS lambda must be non-negative, got {lambda}")));
    }
    let stats = open_pair_stats(params, pairs, pool)?;
    Ok(collect_scores(pool, &stats, |s, k| {
        cwis_influence(s, k, intervention) + lambda * s.dvar[k]
    }))
}

fn cwis_influence(s: &PairStats, k: usize, intervention: Intervention) -> f64 {
    let dot = |mu: &[f64]| -> f64 { s.w.iter().zip(mu).map(|(w, m)| w * m).sum() };
    let gap = dot(&s.mu_a) - dot(&s.mu_b);
    let (va, vb) = match intervention {
        Intervention::ClampZero => (0.0, 0.0),
        Intervention::HighLow(tau) => {
            if s.mu_a[k] >= s.mu_b[k] {
                (tau, -tau)
            } else {
                (-tau, tau)
            }
        }
    };
    let mut ia = s.mu_a.clone();
    let mut ib = s.mu_b.clone();
    ia[k] = va;
    ib[k] = vb;
    let gap_k = dot(&ia) - dot(&ib);
    (gap - gap_k).abs()
}

/// Binary entropy in nats.
#[inline]
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Standard-normal draws shared by every query in one scoring pass, in
/// antithetic pairs `(η, −η)`.
pub fn eig_noise(samples: usize, seed: u64) -> Vec<f64> {
    let half = samples.div_ceil(2) as u64;
    let mut etas = Vec::with_capacity(samples);
    for j in 0..half {
        let eta = rng::keyed_normal(&[seed, tag::EIG, j]);
        etas.push(eta);
        etas.push(-eta);
    }
    etas.truncate(samples);
    etas
}

/// Mutual information between `s` and `Δc ~ N(dmu, dvar)` under
/// `p(s = 1 | Δc) = σ(−Δc)`, estimated on the given standard-normal draws:
/// `H(mean p) − mean H(p)`, clamped at 0.
pub fn eig_from_moments(dmu: f64, dvar: f64, etas: &[f64]) -> f64 {
    let sd = dvar.sqrt();
    let mut p_sum = 0.0;
    let mut h_sum = 0.0;
    for &eta in etas {
        let p = logistic(-(dmu + sd * eta));
        p_sum += p;
        h_sum += binary_entropy(p);
    }
    let n = etas.len() as f64;
    (binary_entropy(p_sum / n) - h_sum / n).max(0.0)
}

pub fn score_eig(
    params: &ModelParams,
    pairs: &[PreferencePair],
    pool: &QueryPool,
    samples: usize,
    seed: u64,
) -> Result<Vec<AcquisitionScore>> {
    if samples < 2 {
        return Err(Error::Config("EIG needs at least 2 samples".into()));
    }
    let etas = eig_noise(samples, seed);
    let stats = open_pair_stats(params, pairs, pool)?;
    Ok(collect_scores(pool, &stats, |s, k| eig_from_moments(s.dmu[k], s.dvar[k], &etas)))
}

/// Settings for [`score`] beyond the strategy itself.
#[derive(Debug, Clone, Copy)]
pub struct ScoringOptions {
    pub lambda: f64,
    pub intervention: Intervention,
    pub mc_samples: usize,
    pub seed: u64,
}

pub fn score(
    kind: AcquisitionKind,
    params: &ModelParams,
    pairs: &[PreferencePair],
    pool: &QueryPool,
    opts: &ScoringOptions,
) -> Result<Vec<AcquisitionScore>> {
    match kind {
        AcquisitionKind::Random => Ok(score_random(pool, opts.seed)),
        AcquisitionKind::Variance => score_variance(params, pairs, pool),
        AcquisitionKind::Cwis => score_cwis(params, pairs, pool, opts.lambda, opts.intervention),
        AcquisitionKind::Eig => score_eig(params, pairs, pool, opts.mc_samples, opts.seed),
    }
}

/// Highest scores first; ties go to the smaller `(pair, concept)`.
pub fn select_top_b(scores: &[AcquisitionScore], b: usize) -> Result<Vec<(usize, usize)>> {
    if b > scores.len() {
        return Err(Error::Size {
            requested: b,
            available: scores.len(),
        });
    }
    let order = |x: &AcquisitionScore, y: &AcquisitionScore| {
        y.score
            .total_cmp(&x.score)
            .then((x.pair, x.concept).cmp(&(y.pair, y.concept)))
    };
    let mut v = scores.to_vec();
    if b == 0 {
        return Ok(Vec::new());
    }
    if b < v.len() {
        v.select_nth_unstable_by(b - 1, order);
        v.truncate(b);
    }
    v.sort_unstable_by(order);
    Ok(v.into_iter().map(|s| (s.pair, s.concept)).collect())
}
