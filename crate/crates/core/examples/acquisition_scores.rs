//! Scores an open query pool with every acquisition strategy and shows which
//! (pair, concept) queries each one would buy first.

use cbrm::acquisition::{score, select_top_b, Intervention, ScoringOptions};
use cbrm::data::generate_synthetic;
use cbrm::{AcquisitionKind, ExperimentConfig, ModelParams, QueryPool};

fn main() -> cbrm::Result<()> {
    let config = ExperimentConfig::default();
    let (pairs, _) = generate_synthetic(200, &config, 5)?;
    let params = ModelParams::init(config.n_concepts, config.embedding_dim, config.gating_mode, 0.3, 5);
    let mut pool = QueryPool::full(pairs.len(), config.n_concepts);
    pool.remove(0, 0);

    let opts = ScoringOptions {
        lambda: config.cwis_lambda,
        intervention: Intervention::ClampZero,
        mc_samples: config.mc_samples,
        seed: 5,
    };
    for kind in AcquisitionKind::ALL {
        let scores = score(kind, &params, &pairs, &pool, &opts)?;
        let top = select_top_b(&scores, 5)?;
        let shown: Vec<String> = top
            .iter()
            .map(|&(i, k)| {
                let s = scores.iter().find(|s| s.pair == i && s.concept == k).unwrap().score;
                format!("({i},{k})={s:.3}")
            })
            .collect();
        println!("{:9} {}", kind.name(), shown.join("  "));
    }
    Ok(())
}
