//! Accuracy metrics, multi-seed aggregation, plots and the leakage probe.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::LabelSource;
use crate::datamodel::{ExperimentConfig, PreferencePair};
use crate::error::{Error, Result};
use crate::model::{self, ModelParams};
use crate::training::probit_prob;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub labels_acquired: usize,
    /// Exact-match rate over every labeled `(pair, concept)` of the test split.
    pub concept_acc: f64,
    pub pref_acc: f64,
    pub per_concept_acc: Vec<f64>,
}

/// Dense test-split labels, collected once per run.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub concepts: Vec<Vec<Option<u8>>>,
    pub preferences: Vec<Option<u8>>,
}

impl GroundTruth {
    pub fn collect(pairs: &[PreferencePair], labels: &dyn LabelSource) -> Result<Self> {
        let k = labels.n_concepts();
        let rows: Vec<(Vec<Option<u8>>, Option<u8>)> = pairs
            .par_iter()
            .map(|p| {
                let c = (0..k).map(|j| labels.concept_label(p, j)).collect::<Result<Vec<_>>>()?;
                Ok((c, labels.preference(p)?))
            })
            .collect::<Result<_>>()?;
        let (concepts, preferences) = rows.into_iter().unzip();
        Ok(Self {
            concepts,
            preferences,
        })
    }
}

pub fn eval_accuracy(params: &ModelParams, test: &[PreferencePair], labels: &dyn LabelSource) -> Result<EpisodeMetrics> {
    let truth = GroundTruth::collect(test, labels)?;
    eval_with_truth(params, test, &truth)
}

/// Concept prediction is `p(s_k = 1) > 0.5` with the closed-form link,
/// preference prediction is `p(ℓ = 1) > 0.5` from mean rewards.
pub fn eval_with_truth(params: &ModelParams, test: &[PreferencePair], truth: &GroundTruth) -> Result<EpisodeMetrics> {
    if test.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty test split".into()));
    }
    let k = params.n_concepts;
    // per item: (concept hits, concept counts, pref hit, pref count)
    let per_item: Vec<(Vec<u32>, Vec<u32>, u32, u32)> = test
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let w = model::gating_weights(params, &pair.prompt)?.w;
            let delta = model::concept_delta(params, pair)?;
            let mut hits = vec![0u32; k];
            let mut counts = vec![0u32; k];
            for j in 0..k {
                if let Some(s) = truth.concepts[i][j] {
                    let pred = (probit_prob(delta.dmu[j], delta.dvar[j]) > 0.5) as u8;
                    counts[j] += 1;
                    hits[j] += (pred == s) as u32;
                }
            }
            let (ph, pc) = match truth.preferences[i] {
                Some(l) => {
                    let pred = (model::logistic(model::preference_logit(&w, &delta.dmu)) > 0.5) as u8;
                    ((pred == l) as u32, 1)
                }
                None => (0, 0),
            };
            Ok((hits, counts, ph, pc))
        })
        .collect::<Result<_>>()?;

    let mut hits = vec![0u64; k];
    let mut counts = vec![0u64; k];
    let (mut ph, mut pc) = (0u64, 0u64);
    for (h, c, a, b) in per_item {
        for j in 0..k {
            hits[j] += h[j] as u64;
            counts[j] += c[j] as u64;
        }
        ph += a as u64;
        pc += b as u64;
    }
    let rate = |h: u64, c: u64| if c == 0 { f64::NAN } else { h as f64 / c as f64 };
    Ok(EpisodeMetrics {
        episode: 0,
        labels_acquired: 0,
        concept_acc: rate(hits.iter().sum(), counts.iter().sum()),
        pref_acc: rate(ph, pc),
        per_concept_acc: hits.iter().zip(&counts).map(|(&h, &c)| rate(h, c)).collect(),
    })
}

pub fn write_metrics_csv(path: &Path, rows: &[EpisodeMetrics], n_concepts: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "episode".to_string(),
        "n_labels_acquired".into(),
        "concept_acc".into(),
        "pref_acc".into(),
    ];
    header.extend((0..n_concepts).map(|k| format!("concept_acc_{k}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.episode.to_string(),
            r.labels_acquired.to_string(),
            r.concept_acc.to_string(),
            r.pref_acc.to_string(),
        ];
        rec.extend(r.per_concept_acc.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpisodeMetrics>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Validation {
            path: path.to_path_buf(),
            line: line + 2,
            message: format!("cannot parse {what}"),
        };
        let num = |i: usize| -> Result<f64> { rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| bad("number")) };
        rows.push(EpisodeMetrics {
            episode: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("episode"))?,
            labels_acquired: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("n_labels_acquired"))?,
            concept_acc: num(2)?,
            pref_acc: num(3)?,
            per_concept_acc: (4..rec.len()).map(num).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

/// One finished run as read back from its directory.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub strategy: String,
    pub metrics: Vec<EpisodeMetrics>,
}

impl RunRecord {
    /// Mean concept accuracy over all metric rows.
    pub fn auc(&self) -> f64 {
        mean(&self.metrics.iter().map(|m| m.concept_acc).collect::<Vec<_>>())
    }

    pub fn final_pref_acc(&self) -> f64 {
        self.metrics.last().map_or(f64::NAN, |m| m.pref_acc)
    }
}

pub fn read_run_dir(dir: &Path) -> Result<RunRecord> {
    let metrics_path = dir.join("metrics.csv");
    if !metrics_path.exists() {
        return Err(Error::MissingFile(metrics_path));
    }
    let config_path = dir.join("config.json");
    let text = fs::read_to_string(&config_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(config_path.clone()),
        _ => Error::io(&config_path, e),
    })?;
    let config: ExperimentConfig = serde_json::from_str(&text)?;
    Ok(RunRecord {
        dir: dir.to_path_buf(),
        strategy: config.acquisition.name().to_string(),
        metrics: read_metrics_csv(&metrics_path)?,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for a single value.
fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Per-episode mean ± std across the runs of one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyCurve {
    pub episodes: Vec<usize>,
    pub mean_concept: Vec<f64>,
    pub std_concept: Vec<f64>,
    pub mean_pref: Vec<f64>,
    pub std_pref: Vec<f64>,
    pub run_auc: Vec<f64>,
    pub run_final_pref: Vec<f64>,
}

impl StrategyCurve {
    pub fn mean_auc(&self) -> f64 {
        mean(&self.run_auc)
    }

    pub fn mean_final_pref(&self) -> f64 {
        mean(&self.run_final_pref)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub curves: BTreeMap<String, StrategyCurve>,
}

pub fn aggregate_runs(run_dirs: &[PathBuf]) -> Result<Aggregate> {
    let records = run_dirs.iter().map(|d| read_run_dir(d)).collect::<Result<Vec<_>>>()?;
    aggregate_records(&records)
}

pub fn aggregate_records(records: &[RunRecord]) -> Result<Aggregate> {
    if records.is_empty() {
        return Err(Error::Alignment("no runs to aggregate".into()));
    }
    let mut groups: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.strategy.clone()).or_default().push(r);
    }
    let mut curves = BTreeMap::new();
    for (strategy, runs) in groups {
        let n_rows = runs[0].metrics.len();
        if let Some(bad) = runs.iter().find(|r| r.metrics.len() != n_rows) {
            return Err(Error::Alignment(format!(
                "{strategy}: {} has {} episodes but {} has {}",
                bad.dir.display(),
                bad.metrics.len(),
                runs[0].dir.display(),
                n_rows
            )));
        }
        let column = |row: usize, f: fn(&EpisodeMetrics) -> f64| -> Vec<f64> {
            runs.iter().map(|r| f(&r.metrics[row])).collect()
        };
        let mut c = StrategyCurve {
            episodes: runs[0].metrics.iter().map(|m| m.episode).collect(),
            mean_concept: Vec::new(),
            std_concept: Vec::new(),
            mean_pref: Vec::new(),
            std_pref: Vec::new(),
            run_auc: runs.iter().map(|r| r.auc()).collect(),
            run_final_pref: runs.iter().map(|r| r.final_pref_acc()).collect(),
        };
        for row in 0..n_rows {
            let ca = column(row, |m| m.concept_acc);
            let pa = column(row, |m| m.pref_acc);
            c.mean_concept.push(mean(&ca));
            c.std_concept.push(sample_std(&ca));
            c.mean_pref.push(mean(&pa));
            c.std_pref.push(sample_std(&pa));
        }
        curves.insert(strategy, c);
    }
    Ok(Aggregate { curves })
}

pub fn write_aggregate_csv(path: &Path, agg: &Aggregate) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "strategy",
        "episode",
        "mean_concept_acc",
        "std_concept_acc",
        "mean_pref_acc",
        "std_pref_acc",
    ])?;
    for (name, c) in &agg.curves {
        for i in 0..c.episodes.len() {
            w.write_record([
                name.clone(),
                c.episodes[i].to_string(),
                c.mean_concept[i].to_string(),
                c.std_concept[i].to_string(),
                c.mean_pref[i].to_string(),
                c.std_pref[i].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_aggregate_csv(path: &Path) -> Result<Aggregate> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut curves: BTreeMap<String, StrategyCurve> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Validation {
            path: path.to_path_buf(),
            line: line + 2,
            message: "malformed aggregate row".into(),
        };
        let num = |i: usize| -> Result<f64> { rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(bad) };
        let c = curves.entry(rec.get(0).ok_or_else(bad)?.to_string()).or_insert(StrategyCurve {
            episodes: Vec::new(),
            mean_concept: Vec::new(),
            std_concept: Vec::new(),
            mean_pref: Vec::new(),
            std_pref: Vec::new(),
            run_auc: Vec::new(),
            run_final_pref: Vec::new(),
        });
        c.episodes.push(rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?);
        c.mean_concept.push(num(2)?);
        c.std_concept.push(num(3)?);
        c.mean_pref.push(num(4)?);
        c.std_pref.push(num(5)?);
    }
    Ok(Aggregate { curves })
}

/// Pass/fail thresholds for comparing a candidate strategy with a baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Required AUC lead of the candidate over the baseline.
    pub min_auc_margin: f64,
    /// Largest allowed spread of final preference accuracy across strategies.
    pub max_pref_span: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            min_auc_margin: 0.02,
            max_pref_span: 0.04,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    pub margin: f64,
    pub checks: Vec<Check>,
}

impl Verdict {
    pub fn report(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        let _ = writeln!(s, "verdict: {} (AUC margin {:+.4})", if self.pass { "PASS" } else { "FAIL" }, self.margin);
        s
    }
}

/// The candidate must lead the baseline's concept-accuracy AUC by the margin,
/// match or beat every other strategy's AUC, and all strategies' final
/// preference accuracies must lie within the allowed span.
pub fn compare_strategies(agg: &Aggregate, candidate: &str, baseline: &str, t: Thresholds) -> Result<Verdict> {
    let get = |name: &str| {
        agg.curves
            .get(name)
            .ok_or_else(|| Error::Alignment(format!("no runs for strategy '{name}'")))
    };
    let cand = get(candidate)?;
    let base = get(baseline)?;
    let cand_auc = cand.mean_auc();
    let margin = if candidate == baseline { 0.0 } else { cand_auc - base.mean_auc() };

    let mut checks = vec![Check {
        name: format!("{candidate} AUC - {baseline} AUC >= {:.3}", t.min_auc_margin),
        pass: margin >= t.min_auc_margin,
        detail: format!("{cand_auc:.4} vs {:.4}, margin {margin:+.4}", base.mean_auc()),
    }];
    for (name, c) in &agg.curves {
        if name == candidate || name == baseline {
            continue;
        }
        checks.push(Check {
            name: format!("{candidate} AUC >= {name} AUC"),
            pass: cand_auc >= c.mean_auc(),
            detail: format!("{cand_auc:.4} vs {:.4}", c.mean_auc()),
        });
    }
    let finals: Vec<f64> = agg.curves.values().map(|c| c.mean_final_pref()).collect();
    let span = finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - finals.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(Check {
        name: format!("final preference accuracy span <= {:.3}", t.max_pref_span),
        pass: span <= t.max_pref_span,
        detail: agg
            .curves
            .iter()
            .map(|(n, c)| format!("{n}={:.4}", c.mean_final_pref()))
            .collect::<Vec<_>>()
            .join(" ")
            + &format!(" (span {span:.4})"),
    });
    Ok(Verdict {
        pass: checks.iter().all(|c| c.pass),
        margin,
        checks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMetric {
    Concept,
    Preference,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Renders one line and one shaded ±std band per strategy as standalone SVG.
pub fn render_svg(agg: &Aggregate, metric: PlotMetric) -> Result<String> {
    if agg.curves.is_empty() || agg.curves.values().any(|c| c.episodes.is_empty()) {
        return Err(Error::Config("nothing to plot".into()));
    }
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 30.0, 50.0);
    let series: Vec<(&String, &[f64], &[f64], &[usize])> = agg
        .curves
        .iter()
        .map(|(n, c)| match metric {
            PlotMetric::Concept => (n, c.mean_concept.as_slice(), c.std_concept.as_slice(), c.episodes.as_slice()),
            PlotMetric::Preference => (n, c.mean_pref.as_slice(), c.std_pref.as_slice(), c.episodes.as_slice()),
        })
        .collect();
    let max_ep = series.iter().flat_map(|s| s.3.iter()).copied().max().unwrap_or(1).max(1) as f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, m, s, _) in &series {
        for (m, s) in m.iter().zip(s.iter()) {
            lo = lo.min(m - s);
            hi = hi.max(m + s);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Numeric("non-finite values in curves".into()));
    }
    if hi - lo < 1e-6 {
        lo -= 0.05;
        hi += 0.05;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let px = |ep: f64| left + (w - left - right) * ep / max_ep;
    let py = |v: f64| top + (h - top - bottom) * (1.0 - (v - lo) / (hi - lo));

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (left, w - right, h - bottom, top);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.3}</text>"#,
            x0 - 4.0,
            py(v) + 3.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">episode</text>"#,
        (x0 + x1) / 2.0,
        h - 12.0
    );
    let ylabel = match metric {
        PlotMetric::Concept => "concept accuracy",
        PlotMetric::Preference => "preference accuracy",
    };
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">{ylabel}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    for (idx, (name, m, s, eps)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut band = String::new();
        for (e, (m, s)) in eps.iter().zip(m.iter().zip(s.iter())) {
            let _ = write!(band, "{:.2},{:.2} ", px(*e as f64), py(m + s));
        }
        for (e, (m, s)) in eps.iter().zip(m.iter().zip(s.iter())).rev() {
            let _ = write!(band, "{:.2},{:.2} ", px(*e as f64), py(m - s));
        }
        let _ = writeln!(
            svg,
            r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.trim_end()
        );
        let line: Vec<String> = eps
            .iter()
            .zip(m.iter())
            .map(|(e, m)| format!("{:.2},{:.2}", px(*e as f64), py(*m)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = top + 16.0 * idx as f64 + 10.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="12" fill="{color}">{name}</text>"#,
            w - right + 10.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(agg: &Aggregate, metric: PlotMetric, path: &Path) -> Result<()> {
    let svg = render_svg(agg, metric)?;
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub per_concept: Vec<f64>,
    pub mean: f64,
    pub threshold: f64,
    pub leakage_suspected: bool,
}

/// Ridge probe from `e_a − e_b` to `2s − 1`, one per concept, fitted on the
/// first 80% of `pairs` and scored by sign accuracy on the rest. The
/// intercept is not penalized; `ridge = ∞` yields the intercept-only model.
pub fn probe_diagnostic(
    pairs: &[PreferencePair],
    labels: &[Vec<Option<u8>>],
    ridge: f64,
    threshold: f64,
) -> Result<ProbeReport> {
    if pairs.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} pairs but {} label rows",
            pairs.len(),
            labels.len()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Config("ridge must be non-negative".into()));
    }
    let n_concepts = labels.first().map_or(0, Vec::len);
    let n_fit = pairs.len() * 4 / 5;
    if n_fit == 0 || n_fit == pairs.len() {
        return Err(Error::Config("probe needs at least 2 pairs".into()));
    }
    let d = pairs[0].dim();
    let diff = |p: &PreferencePair| -> Vec<f64> {
        p.resp_a
            .as_slice()
            .iter()
            .zip(p.resp_b.as_slice())
            .map(|(&a, &b)| a as f64 - b as f64)
            .collect()
    };
    let feats: Vec<Vec<f64>> = pairs.iter().map(diff).collect();

    let mut per_concept = Vec::with_capacity(n_concepts);
    for k in 0..n_concepts {
        let fit: Vec<usize> = (0..n_fit).filter(|&i| labels[i][k].is_some()).collect();
        let held: Vec<usize> = (n_fit..pairs.len()).filter(|&i| labels[i][k].is_some()).collect();
        if fit.is_empty() || held.is_empty() {
            return Err(Error::Config(format!("concept {k} has no labels in one probe split")));
        }
        let target = |i: usize| 2.0 * labels[i][k].unwrap() as f64 - 1.0;
        let n = fit.len() as f64;
        let x_mean: Vec<f64> = (0..d).map(|j| fit.iter().map(|&i| feats[i][j]).sum::<f64>() / n).collect();
        let y_mean = fit.iter().map(|&i| target(i)).sum::<f64>() / n;

        let weights = if ridge.is_infinite() {
            DVector::zeros(d)
        } else {
            let x = DMatrix::from_fn(fit.len(), d, |r, j| feats[fit[r]][j] - x_mean[j]);
            let y = DVector::from_fn(fit.len(), |r, _| target(fit[r]) - y_mean);
            let mut gram = x.transpose() * &x;
            for j in 0..d {
                gram[(j, j)] += ridge;
            }
            let rhs = x.transpose() * y;
            let singular = || {
                Error::Numeric(format!(
                    "probe system for concept {k} is singular; use a nonzero ridge regularizer"
                ))
            };
            let chol = gram.cholesky().ok_or_else(singular)?;
            let w = chol.solve(&rhs);
            if !w.iter().all(|v| v.is_finite()) {
                return Err(singular());
            }
            w
        };
        let intercept = y_mean - x_mean.iter().zip(weights.iter()).map(|(a, b)| a * b).sum::<f64>();
        let hits = held
            .iter()
            .filter(|&&i| {
                let score = intercept + feats[i].iter().zip(weights.iter()).map(|(a, b)| a * b).sum::<f64>();
                ((score > 0.0) as u8) == labels[i][k].unwrap()
            })
            .count();
        per_concept.push(hits as f64 / held.len() as f64);
    }
    let mean = mean(&per_concept);
    Ok(ProbeReport {
        per_concept,
        mean,
        threshold,
        leakage_suspected: mean > threshold,
    })
}
