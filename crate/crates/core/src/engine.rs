//! The episodic active-learning loop.
//!
//! 1. Seed the labeled set with `B` uniformly random queries and train.
//! 2. Each episode: score the open queries, take the top `B`, ask the label
//!    source, push the touched pairs into the FIFO buffer, drop the queries
//!    from the pool, retrain one epoch on the buffer, evaluate.
//!
//! A pair's preference label is bought the first time any of its concepts is
//! queried. Re-touching a buffered pair merges the new labels into it and
//! moves it to the back of the queue.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::acquisition::{self, AcquisitionScore, Intervention, ScoringOptions};
use crate::data::LabelSource;
use crate::datamodel::{ExperimentConfig, PreferencePair, QueryPool};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::reporting::{self, EpisodeMetrics, GroundTruth};
use crate::rng::{self, tag};
use crate::training::{self, BatchItem, OptimizerState, TrainReport};

/// One buffered pair with every label acquired for it so far.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    /// Position in the training split.
    pub pair: usize,
    pub preference: Option<u8>,
    pub concepts: Vec<Option<u8>>,
    /// Monotone insertion stamp; eviction always takes the smallest.
    pub inserted_at: u64,
}

/// Bounded FIFO of labeled pairs.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: IndexMap<usize, BufferEntry>,
    next_stamp: u64,
    evictions: Vec<u64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: IndexMap::new(),
            next_stamp: 0,
            evictions: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.values()
    }

    /// Insertion stamps of every evicted entry, in eviction order.
    pub fn evictions(&self) -> &[u64] {
        &self.evictions
    }

    /// Appends (or re-appends) a pair with new labels; returns evicted entries.
    pub fn push(
        &mut self,
        pair: usize,
        n_concepts: usize,
        preference: Option<u8>,
        labels: &[(usize, Option<u8>)],
    ) -> Vec<BufferEntry> {
        let mut entry = self.entries.shift_remove(&pair).unwrap_or(BufferEntry {
            pair,
            preference: None,
            concepts: vec![None; n_concepts],
            inserted_at: 0,
        });
        if preference.is_some() {
            entry.preference = preference;
        }
        for &(k, value) in labels {
            if value.is_some() {
                entry.concepts[k] = value;
            }
        }
        entry.inserted_at = self.next_stamp;
        self.next_stamp += 1;
        self.entries.insert(pair, entry);

        let mut evicted = Vec::new();
        while self.entries.len() > self.capacity {
            let (_, old) = self.entries.shift_remove_index(0).expect("non-empty buffer");
            self.evictions.push(old.inserted_at);
            evicted.push(old);
        }
        evicted
    }
}

/// One answered query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryRecord {
    pub episode: usize,
    pub pair: usize,
    pub concept: usize,
    /// `None` when the source had no label (a judge tie).
    pub label: Option<u8>,
}

#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub episode: usize,
    pub pool: QueryPool,
    /// Every query ever answered, in acquisition order.
    pub acquired: Vec<QueryRecord>,
    pub buffer: ReplayBuffer,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    /// Preference label per training pair, filled on first touch.
    pub preferences: Vec<Option<u8>>,
    touched: Vec<bool>,
    pub seed: u64,
}

impl EpisodeState {
    pub fn labels_acquired(&self) -> usize {
        self.acquired.len()
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub selected: Vec<(usize, usize)>,
    pub scores: Vec<AcquisitionScore>,
    pub train: TrainReport,
    /// The pool could not supply a full batch; nothing was done.
    pub exhausted: bool,
}

fn fresh_params(config: &ExperimentConfig, seed: u64) -> ModelParams {
    ModelParams::init(
        config.n_concepts,
        config.embedding_dim,
        config.gating_mode,
        config.init_scale,
        seed,
    )
}

fn check_inputs(train: &[PreferencePair], labels: &dyn LabelSource, config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    if labels.n_concepts() != config.n_concepts {
        return Err(Error::Config(format!(
            "label source has {} concepts, config has {}",
            labels.n_concepts(),
            config.n_concepts
        )));
    }
    if let Some(p) = train.iter().find(|p| p.dim() != config.embedding_dim) {
        return Err(Error::Config(format!(
            "pair {} has dimension {}, config expects {}",
            p.pair_id,
            p.dim(),
            config.embedding_dim
        )));
    }
    Ok(())
}

/// Answers `queries`, updates bookkeeping and the buffer.
fn acquire(
    state: &mut EpisodeState,
    train: &[PreferencePair],
    labels: &dyn LabelSource,
    queries: &[(usize, usize)],
    n_concepts: usize,
) -> Result<()> {
    let mut by_pair: IndexMap<usize, Vec<(usize, Option<u8>)>> = IndexMap::new();
    for &(i, k) in queries {
        if !state.pool.remove(i, k) {
            return Err(Error::Config(format!("query ({i}, {k}) is not in the pool")));
        }
        let label = labels.concept_label(&train[i], k)?;
        state.acquired.push(QueryRecord {
            episode: state.episode,
            pair: i,
            concept: k,
            label,
        });
        by_pair.entry(i).or_default().push((k, label));
    }
    // deterministic buffer order: ascending pair index within an episode
    by_pair.sort_keys();
    for (i, new_labels) in by_pair {
        let preference = if state.touched[i] {
            None
        } else {
            state.touched[i] = true;
            let p = labels.preference(&train[i])?;
            state.preferences[i] = p;
            p
        };
        state.buffer.push(i, n_concepts, preference, &new_labels);
    }
    Ok(())
}

fn retrain(state: &mut EpisodeState, train: &[PreferencePair], config: &ExperimentConfig) -> TrainReport {
    if !config.warm_start {
        state.params = fresh_params(config, state.seed);
        state.optimizer = OptimizerState::new(&state.params, config.learning_rate);
    }
    let items: Vec<BatchItem> = state
        .buffer
        .iter()
        .map(|e| BatchItem::new(&train[e.pair], e.preference, &e.concepts))
        .collect();
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs_per_episode {
        let seed = rng::derive_seed(state.seed, tag::TRAIN, (state.episode * 1000 + epoch) as u64);
        report = training::train_epoch(&mut state.params, &mut state.optimizer, &items, config, seed);
    }
    report
}

/// Builds the initial state: `B` random queries, their pairs' preference
/// labels, and one round of training.
pub fn init_engine(
    train: &[PreferencePair],
    labels: &dyn LabelSource,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<EpisodeState> {
    check_inputs(train, labels, config)?;
    let k = config.n_concepts;
    let b = config.acquisitions_per_episode;
    if train.len() * k < b {
        return Err(Error::Size {
            requested: b,
            available: train.len() * k,
        });
    }
    let params = fresh_params(config, seed);
    let optimizer = OptimizerState::new(&params, config.learning_rate);
    let mut state = EpisodeState {
        episode: 0,
        pool: QueryPool::full(train.len(), k),
        acquired: Vec::new(),
        buffer: ReplayBuffer::new(config.buffer_capacity),
        params,
        optimizer,
        preferences: vec![None; train.len()],
        touched: vec![false; train.len()],
        seed,
    };
    let scores = acquisition::score_random(&state.pool, rng::derive_seed(seed, tag::INIT, 1));
    let queries = acquisition::select_top_b(&scores, b)?;
    acquire(&mut state, train, labels, &queries, k)?;
    retrain(&mut state, train, config);
    if !state.params.is_finite() {
        return Err(Error::Numeric("parameters diverged during initial training".into()));
    }
    Ok(state)
}

/// One acquisition + retrain cycle with the configured strategy.
pub fn run_episode(
    state: &mut EpisodeState,
    train: &[PreferencePair],
    labels: &dyn LabelSource,
    config: &ExperimentConfig,
) -> Result<EpisodeOutcome> {
    let b = config.acquisitions_per_episode;
    if state.pool.len() < b {
        return Ok(EpisodeOutcome {
            selected: Vec::new(),
            scores: Vec::new(),
            train: TrainReport::default(),
            exhausted: true,
        });
    }
    state.episode += 1;
    let opts = ScoringOptions {
        lambda: config.cwis_lambda,
        intervention: match config.cwis_high_low {
            Some(tau) => Intervention::HighLow(tau),
            None => Intervention::ClampZero,
        },
        mc_samples: config.mc_samples,
        seed: rng::derive_seed(state.seed, tag::EPISODE, state.episode as u64),
    };
    let scores = acquisition::score(config.acquisition, &state.params, train, &state.pool, &opts)?;
    let selected = acquisition::select_top_b(&scores, b)?;
    acquire(state, train, labels, &selected, config.n_concepts)?;
    let report = retrain(state, train, config);
    if !state.params.is_finite() {
        return Err(Error::Numeric(format!(
            "parameters diverged in episode {}",
            state.episode
        )));
    }
    Ok(EpisodeOutcome {
        selected,
        scores,
        train: report,
        exhausted: false,
    })
}

/// Train/test data and the label source for one run.
pub struct ExperimentData<'a> {
    pub train: &'a [PreferencePair],
    pub test: &'a [PreferencePair],
    pub labels: &'a dyn LabelSource,
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub config: ExperimentConfig,
    /// Row 0 is after initialization, row `t` after episode `t`.
    pub metrics: Vec<EpisodeMetrics>,
    pub params: ModelParams,
    pub early_stopped: bool,
}

/// Runs `config.episodes` episodes (or until the pool runs dry). When
/// `dump_dir` is given, every episode's scores go to `episode_NNN.csv` there.
pub fn run_experiment(config: &ExperimentConfig, data: &ExperimentData, dump_dir: Option<&Path>) -> Result<RunArtifact> {
    let truth = GroundTruth::collect(data.test, data.labels)?;
    let mut state = init_engine(data.train, data.labels, config, config.seed)?;
    let mut metrics = Vec::with_capacity(config.episodes + 1);
    let row = |state: &EpisodeState| -> Result<EpisodeMetrics> {
        let mut m = reporting::eval_with_truth(&state.params, data.test, &truth)?;
        m.episode = state.episode;
        m.labels_acquired = state.labels_acquired();
        Ok(m)
    };
    metrics.push(row(&state)?);
    if let Some(dir) = dump_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut early_stopped = false;
    for _ in 0..config.episodes {
        let outcome = run_episode(&mut state, data.train, data.labels, config)?;
        if outcome.exhausted {
            early_stopped = true;
            break;
        }
        if let Some(dir) = dump_dir {
            write_scores(dir, state.episode, config, &outcome.scores)?;
        }
        metrics.push(row(&state)?);
    }
    Ok(RunArtifact {
        config: config.clone(),
        metrics,
        params: state.params,
        early_stopped,
    })
}

fn write_scores(dir: &Path, episode: usize, config: &ExperimentConfig, scores: &[AcquisitionScore]) -> Result<()> {
    let path = dir.join(format!("episode_{episode:03}.csv"));
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(&path, e);
    writeln!(w, "episode,i,k,strategy,score").map_err(io)?;
    let name = config.acquisition.name();
    for s in scores {
        writeln!(w, "{episode},{},{},{name},{:e}", s.pair, s.concept, s.score).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Contents of `config.json` plus run status, for `compare`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunStatus {
    early_stopped: bool,
    episodes_completed: usize,
}

/// Writes `config.json`, `metrics.csv`, `status.json` and `checkpoint.cbrm`.
pub fn write_run_dir(dir: &Path, artifact: &RunArtifact) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_path = dir.join("config.json");
    let json = serde_json::to_string_pretty(&artifact.config)?;
    fs::write(&config_path, json + "\n").map_err(|e| Error::io(&config_path, e))?;
    reporting::write_metrics_csv(&dir.join("metrics.csv"), &artifact.metrics, artifact.config.n_concepts)?;
    let status_path = dir.join("status.json");
    let status = RunStatus {
        early_stopped: artifact.early_stopped,
        episodes_completed: artifact.metrics.len().saturating_sub(1),
    };
    fs::write(&status_path, serde_json::to_string_pretty(&status)? + "\n")
        .map_err(|e| Error::io(&status_path, e))?;
    artifact.params.save(&dir.join("checkpoint.cbrm"))?;
    Ok(dir.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_evicts_first_insertion() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..3 {
            assert!(buf.push(i, 2, Some(0), &[(0, Some(1))]).is_empty());
        }
        let ev = buf.push(3, 2, Some(1), &[(1, Some(0))]);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].pair, 0);
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.iter().map(|e| e.pair).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn retouching_merges_and_moves_to_back() {
        let mut buf = ReplayBuffer::new(3);
        buf.push(0, 2, Some(1), &[(0, Some(1))]);
        buf.push(1, 2, Some(0), &[(0, Some(0))]);
        buf.push(0, 2, None, &[(1, Some(0)), (0, None)]);
        let order: Vec<_> = buf.iter().map(|e| e.pair).collect();
        assert_eq!(order, vec![1, 0]);
        let e = buf.iter().last().unwrap();
        assert_eq!(e.preference, Some(1));
        assert_eq!(e.concepts, vec![Some(1), Some(0)]);
        buf.push(2, 2, None, &[]);
        let ev = buf.push(3, 2, None, &[]);
        assert_eq!(ev[0].pair, 1);
    }
}
