//! Runs every strategy over a few seeds, aggregates the curves, writes the
//! plots and prints the comparison verdict of eig against random.
//!
//!     cargo run --release --example compare_strategies -- [out_dir]

use std::path::PathBuf;

use cbrm::commands::{self, DataSource};
use cbrm::{AcquisitionKind, ExperimentConfig};

fn main() -> cbrm::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("cbrm-compare"));

    let mut config = ExperimentConfig::default();
    config.synthetic.n_pairs = 4_000;
    config.episodes = 12;
    config.acquisitions_per_episode = 160;

    for kind in AcquisitionKind::ALL {
        config.acquisition = kind;
        commands::run(&config, &DataSource::Synthetic, 0..=2, &out.join("runs"), false)?;
        println!("finished {}", kind.name());
    }
    let result = commands::compare(&[out.join("runs")], &out.join("compare"), "eig", "random")?;
    for (name, curve) in &result.aggregate.curves {
        println!("{name:9} auc {:.4}  final pref {:.4}", curve.mean_auc(), curve.mean_final_pref());
    }
    print!("{}", result.verdict.report());
    println!("plots in {}", out.join("compare").display());
    Ok(())
}
