//! Evaluates the concept bottleneck model on one pair: per-concept Gaussians,
//! gating weights, rewards and the preference probability.

use cbrm::data::generate_synthetic;
use cbrm::model::{self, RewardMode, Side};
use cbrm::training::{concept_label_prob, ConceptLink};
use cbrm::ExperimentConfig;

fn main() -> cbrm::Result<()> {
    let mut config = ExperimentConfig::default();
    config.n_concepts = 4;
    config.embedding_dim = 16;
    config.synthetic.concept_noise = 0.0;
    config.synthetic.label_flip_prob = 0.0;
    let (pairs, world) = generate_synthetic(1, &config, 3)?;
    let pair = &pairs[0];

    // the generating world is itself expressible as model parameters
    let params = world.model_params();

    let w = model::gating_weights(&params, &pair.prompt)?.w;
    let a = model::predict_concepts(&params, &pair.resp_a)?;
    let b = model::predict_concepts(&params, &pair.resp_b)?;
    let delta = model::concept_delta(&params, pair)?;

    println!("k   weight   mu_a     mu_b     dvar     P(b better on k)");
    for k in 0..config.n_concepts {
        let p = concept_label_prob(&delta, k, pair.pair_id, ConceptLink::Probit);
        println!(
            "{k}   {:.4}   {:+.4}  {:+.4}  {:.3}    {:.4}",
            w[k], a.mu[k], b.mu[k], delta.dvar[k], p
        );
    }
    let ra = model::reward(&params, pair, Side::A, RewardMode::Mean)?;
    let rb = model::reward(&params, pair, Side::B, RewardMode::Mean)?;
    println!("r_a = {ra:+.4}, r_b = {rb:+.4}");
    println!("P(b preferred) = {:.4}", model::preference_prob(&params, pair)?);
    println!("P(b preferred), swapped pair = {:.4}", model::preference_prob(&params, &pair.swapped())?);
    Ok(())
}
