//! Draws a synthetic world, writes it in the on-disk formats and reads it back.
//!
//!     cargo run --example synthetic_data -- [out_dir]

use std::path::PathBuf;

use cbrm::data::{generate_synthetic, load_annotations, load_embeddings, LabelSource};
use cbrm::{commands, ExperimentConfig};

fn main() -> cbrm::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("cbrm-synthetic-data"));

    let mut config = ExperimentConfig::default();
    config.synthetic.n_pairs = 2_000;
    config.seed = 11;

    let files = commands::gen(&config, &out)?;
    println!("wrote {}", out.display());

    let pairs = load_embeddings(&files.embeddings)?;
    let judge = load_annotations(&files.annotations, &config.concept_names())?;
    let (original, world) = generate_synthetic(config.synthetic.n_pairs, &config, config.seed)?;
    assert_eq!(pairs.len(), original.len());

    // judge labels are the world's oracle answers, flips included
    let mut flipped = 0;
    let mut total = 0;
    for p in pairs.iter().take(500) {
        for k in 0..config.n_concepts {
            let judged = judge.concept_label(p, k)?.expect("synthetic judges never tie");
            assert_eq!(judged, world.concept_label(p, k)?.unwrap());
            flipped += (judged != world.true_relative_label(p, k)?) as usize;
            total += 1;
        }
    }
    println!(
        "{} pairs, d = {}, K = {}; observed flip rate {:.3} (configured {})",
        pairs.len(),
        pairs[0].dim(),
        config.n_concepts,
        flipped as f64 / total as f64,
        config.synthetic.label_flip_prob
    );
    Ok(())
}
