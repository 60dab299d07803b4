//! The subcommands behind the `cbrm` binary, usable directly as a library.
//!
//! Configs are JSON files deserialized into [`ExperimentConfig`]; overrides
//! are `key=value` strings with dotted keys (`synthetic.n_pairs=500`), the
//! value parsed as JSON when possible and as a bare string otherwise.

use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::data::{
    self, generate_synthetic, AnnotationRecord, AnnotationSet, LabelSource, SyntheticWorld,
};
use crate::datamodel::{split_pool, ExperimentConfig, PreferencePair, Split};
use crate::engine::{self, ExperimentData, RunArtifact};
use crate::error::{Error, Result};
use crate::reporting::{self, Aggregate, PlotMetric, ProbeReport, Thresholds, Verdict};

pub const EMBEDDINGS_FILE: &str = "embeddings.cbre";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const WORLD_FILE: &str = "world.json";
pub const CONFIG_FILE: &str = "config.json";

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut value = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingFile(p.to_path_buf()),
                _ => Error::io(p, e),
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(ExperimentConfig::default())?,
    };
    for kv in overrides {
        apply_override(&mut value, kv)?;
    }
    let config: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn apply_override(value: &mut Value, kv: &str) -> Result<()> {
    let (key, raw) = kv
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = value;
    for part in key.split('.') {
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override key '{key}' does not name a field")))?;
        slot = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    *slot = parsed;
    Ok(())
}

/// Parses `A..B` (inclusive) or a single seed.
pub fn parse_seeds(s: &str) -> Result<RangeInclusive<u64>> {
    let bad = || Error::Config(format!("seeds must look like 'A..B' or 'N', got '{s}'"));
    match s.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            Ok(a..=b)
        }
        None => {
            let n: u64 = s.trim().parse().map_err(|_| bad())?;
            Ok(n..=n)
        }
    }
}

fn write_config(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, serde_json::to_string_pretty(config)? + "\n").map_err(|e| Error::io(&path, e))
}

/// Paths written by [`gen`].
#[derive(Debug, Clone)]
pub struct GenOutput {
    pub embeddings: PathBuf,
    pub annotations: PathBuf,
    pub world: PathBuf,
}

/// Materializes a synthetic dataset: embeddings, judge annotations carrying the
/// oracle's (noisy) answers as 0/1 scores, and the world maps.
pub fn gen(config: &ExperimentConfig, out: &Path) -> Result<GenOutput> {
    config.validate()?;
    let (pairs, world) = generate_synthetic(config.synthetic.n_pairs, config, config.seed)?;
    write_config(out, config)?;
    let out_paths = GenOutput {
        embeddings: out.join(EMBEDDINGS_FILE),
        annotations: out.join(ANNOTATIONS_FILE),
        world: out.join(WORLD_FILE),
    };
    data::write_embeddings(&out_paths.embeddings, &pairs)?;
    let records = pairs
        .iter()
        .map(|p| {
            let scores = (0..config.n_concepts)
                .map(|k| world.oracle_concept_label(p, k).map(f64::from))
                .collect::<Result<Vec<_>>>()?;
            Ok(AnnotationRecord {
                pair_id: p.pair_id,
                scores,
                preference: world.oracle_preference(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    data::write_annotations(&out_paths.annotations, &config.concept_names(), &records)?;
    fs::write(&out_paths.world, serde_json::to_string(&world)? + "\n")
        .map_err(|e| Error::io(&out_paths.world, e))?;
    Ok(out_paths)
}

/// Where `run` and `probe` get pairs and labels from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Draw a fresh synthetic world per seed from `config.synthetic`.
    Synthetic,
    Files { embeddings: PathBuf, annotations: PathBuf },
}

/// A loaded pool with its label source.
pub enum LoadedData {
    Synthetic { pairs: Vec<PreferencePair>, world: SyntheticWorld },
    Files { pairs: Vec<PreferencePair>, annotations: AnnotationSet },
}

impl LoadedData {
    pub fn pairs(&self) -> &[PreferencePair] {
        match self {
            LoadedData::Synthetic { pairs, .. } | LoadedData::Files { pairs, .. } => pairs,
        }
    }

    pub fn labels(&self) -> &dyn LabelSource {
        match self {
            LoadedData::Synthetic { world, .. } => world,
            LoadedData::Files { annotations, .. } => annotations,
        }
    }
}

pub fn load_data(source: &DataSource, config: &ExperimentConfig, seed: u64) -> Result<LoadedData> {
    match source {
        DataSource::Synthetic => {
            let (pairs, world) = generate_synthetic(config.synthetic.n_pairs, config, seed)?;
            Ok(LoadedData::Synthetic { pairs, world })
        }
        DataSource::Files {
            embeddings,
            annotations,
        } => {
            let pairs = data::load_embeddings(embeddings)?;
            if let Some(p) = pairs.first() {
                if p.dim() != config.embedding_dim {
                    return Err(Error::Config(format!(
                        "{} has dimension {} but embedding_dim = {}",
                        embeddings.display(),
                        p.dim(),
                        config.embedding_dim
                    )));
                }
            }
            let annotations = data::load_annotations(annotations, &config.concept_names())?;
            Ok(LoadedData::Files { pairs, annotations })
        }
    }
}

/// One complete run for `seed`: load or draw data, split, run the engine.
pub fn run_seed(config: &ExperimentConfig, source: &DataSource, seed: u64, dump_dir: Option<&Path>) -> Result<RunArtifact> {
    let mut config = config.clone();
    config.seed = seed;
    config.validate()?;
    let data = load_data(source, &config, seed)?;
    let Split { train, test, .. } = split_pool(data.pairs(), &config, seed)?;
    let exp = ExperimentData {
        train: &train,
        test: &test,
        labels: data.labels(),
    };
    engine::run_experiment(&config, &exp, dump_dir)
}

/// Runs every seed and writes `out/<strategy>/seed_<n>/`. Returns the run dirs.
pub fn run(
    config: &ExperimentConfig,
    source: &DataSource,
    seeds: RangeInclusive<u64>,
    out: &Path,
    dump_scores: bool,
) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for seed in seeds {
        let dir = out.join(config.acquisition.name()).join(format!("seed_{seed}"));
        let dump = dump_scores.then(|| dir.join("scores"));
        let artifact = run_seed(config, source, seed, dump.as_deref())?;
        engine::write_run_dir(&dir, &artifact)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Expands each path into run directories: a directory with `config.json` is
/// a run, anything else is searched recursively.
pub fn find_run_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
        if dir.join(CONFIG_FILE).exists() || dir.join("metrics.csv").exists() {
            found.push(dir.to_path_buf());
            return Ok(());
        }
        let mut children: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        children.sort();
        for c in children {
            walk(&c, found)?;
        }
        Ok(())
    }
    let mut found = Vec::new();
    for p in paths {
        if !p.is_dir() {
            return Err(Error::MissingFile(p.clone()));
        }
        let before = found.len();
        walk(p, &mut found)?;
        if found.len() == before {
            return Err(Error::MissingFile(p.join("metrics.csv")));
        }
    }
    Ok(found)
}

#[derive(Debug, Clone)]
pub struct CompareOutput {
    pub aggregate: Aggregate,
    pub verdict: Verdict,
}

/// Aggregates runs, writes `aggregate.csv`, two SVG plots and `verdict.txt`.
pub fn compare(paths: &[PathBuf], out: &Path, candidate: &str, baseline: &str) -> Result<CompareOutput> {
    let dirs = find_run_dirs(paths)?;
    let aggregate = reporting::aggregate_runs(&dirs)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    reporting::write_aggregate_csv(&out.join("aggregate.csv"), &aggregate)?;
    reporting::emit_plot(&aggregate, PlotMetric::Concept, &out.join("concept_acc.svg"))?;
    reporting::emit_plot(&aggregate, PlotMetric::Preference, &out.join("pref_acc.svg"))?;
    let verdict = reporting::compare_strategies(&aggregate, candidate, baseline, Thresholds::default())?;
    let path = out.join("verdict.txt");
    fs::write(&path, verdict.report()).map_err(|e| Error::io(&path, e))?;
    Ok(CompareOutput { aggregate, verdict })
}

/// Runs the ridge probe on the whole pool with dense oracle/judge labels and
/// writes `probe.json` into `out`.
pub fn probe(
    config: &ExperimentConfig,
    source: &DataSource,
    ridge: f64,
    threshold: f64,
    out: &Path,
) -> Result<ProbeReport> {
    let data = load_data(source, config, config.seed)?;
    let labels = data.labels();
    let dense = data
        .pairs()
        .iter()
        .map(|p| (0..labels.n_concepts()).map(|k| labels.concept_label(p, k)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;
    let report = reporting::probe_diagnostic(data.pairs(), &dense, ridge, threshold)?;
    write_config(out, config)?;
    let path = out.join("probe.json");
    let json = serde_json::json!({
        "ridge": ridge,
        "threshold": threshold,
        "per_concept": report.per_concept,
        "mean": report.mean,
        "leakage_suspected": report.leakage_suspected,
    });
    fs::write(&path, serde_json::to_string_pretty(&json)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// Plots either an `aggregate.csv` or a set of run directories.
pub fn plot(inputs: &[PathBuf], metric: PlotMetric, out: &Path) -> Result<()> {
    let agg = match inputs {
        [single] if single.is_file() => reporting::read_aggregate_csv(single)?,
        _ => reporting::aggregate_runs(&find_run_dirs(inputs)?)?,
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    reporting::emit_plot(&agg, metric, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_inclusive() {
        assert_eq!(parse_seeds("0..4").unwrap().count(), 5);
        assert_eq!(parse_seeds("7").unwrap(), 7..=7);
        assert!(parse_seeds("4..0").is_err());
        assert!(parse_seeds("a..b").is_err());
    }

    #[test]
    fn dotted_overrides() {
        let c = load_config(
            None,
            &["synthetic.n_pairs=500".into(), "acquisition=random".into(), "cwis_high_low=0.5".into()],
        )
        .unwrap();
        assert_eq!(c.synthetic.n_pairs, 500);
        assert_eq!(c.acquisition, crate::AcquisitionKind::Random);
        assert_eq!(c.cwis_high_low, Some(0.5));
        assert!(load_config(None, &["no_such_field=1".into()]).is_err());
        assert!(load_config(None, &["synthetic.label_flip_prob=0.6".into()]).is_err());
    }
}
