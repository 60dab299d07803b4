//! Trains a fresh model on fully labelled synthetic pairs and reports held-out
//! accuracy after each epoch.

use cbrm::data::{generate_synthetic, LabelSource};
use cbrm::datamodel::split_pool;
use cbrm::reporting::{eval_with_truth, GroundTruth};
use cbrm::training::{train_epoch, BatchItem, OptimizerState};
use cbrm::{ExperimentConfig, ModelParams};

fn main() -> cbrm::Result<()> {
    let mut config = ExperimentConfig::default();
    config.synthetic.n_pairs = 6_000;
    config.learning_rate = 1e-2;
    config.batch_size = 64;
    let (pairs, world) = generate_synthetic(config.synthetic.n_pairs, &config, 0)?;
    let split = split_pool(&pairs, &config, 0)?;
    let truth = GroundTruth::collect(&split.test, &world)?;

    let labels: Vec<Vec<Option<u8>>> = split
        .train
        .iter()
        .map(|p| (0..config.n_concepts).map(|k| world.concept_label(p, k)).collect())
        .collect::<cbrm::Result<_>>()?;
    let prefs: Vec<Option<u8>> = split.train.iter().map(|p| world.preference(p)).collect::<cbrm::Result<_>>()?;
    let items: Vec<BatchItem> = split
        .train
        .iter()
        .zip(&prefs)
        .zip(&labels)
        .map(|((p, &l), c)| BatchItem::new(p, l, c))
        .collect();

    let mut params = ModelParams::init(config.n_concepts, config.embedding_dim, config.gating_mode, config.init_scale, 0);
    let mut opt = OptimizerState::new(&params, config.learning_rate);
    for epoch in 0..10 {
        let report = train_epoch(&mut params, &mut opt, &items, &config, epoch);
        let m = eval_with_truth(&params, &split.test, &truth)?;
        println!(
            "epoch {epoch:2}  loss {:.4}  concept acc {:.4}  pref acc {:.4}",
            report.mean_loss.total, m.concept_acc, m.pref_acc
        );
    }
    Ok(())
}
