//! One active-learning run, stepping the episode loop by hand to show what
//! each episode buys.
//!
//!     cargo run --release --example active_learning -- [strategy]

use cbrm::data::generate_synthetic;
use cbrm::datamodel::split_pool;
use cbrm::engine::{init_engine, run_episode};
use cbrm::reporting::{eval_with_truth, GroundTruth};
use cbrm::{AcquisitionKind, ExperimentConfig};

fn main() -> cbrm::Result<()> {
    let mut config = ExperimentConfig::default();
    config.acquisition = match std::env::args().nth(1) {
        Some(s) => s.parse::<AcquisitionKind>()?,
        None => AcquisitionKind::Eig,
    };
    config.synthetic.n_pairs = 5_000;
    config.episodes = 10;
    config.validate()?;

    let seed = 1;
    let (pairs, world) = generate_synthetic(config.synthetic.n_pairs, &config, seed)?;
    let split = split_pool(&pairs, &config, seed)?;
    let truth = GroundTruth::collect(&split.test, &world)?;

    let mut state = init_engine(&split.train, &world, &config, seed)?;
    let m = eval_with_truth(&state.params, &split.test, &truth)?;
    println!("init      labels {:5}  concept {:.4}  pref {:.4}", state.labels_acquired(), m.concept_acc, m.pref_acc);
    for _ in 0..config.episodes {
        let out = run_episode(&mut state, &split.train, &world, &config)?;
        if out.exhausted {
            println!("pool exhausted");
            break;
        }
        let per_concept = (0..config.n_concepts)
            .map(|k| out.selected.iter().filter(|q| q.1 == k).count().to_string())
            .collect::<Vec<_>>()
            .join(",");
        let m = eval_with_truth(&state.params, &split.test, &truth)?;
        println!(
            "episode {:2} labels {:5}  concept {:.4}  pref {:.4}  buffer {:4}  per-concept buys [{per_concept}]",
            state.episode,
            state.labels_acquired(),
            m.concept_acc,
            m.pref_acc,
            state.buffer.len()
        );
    }
    Ok(())
}
