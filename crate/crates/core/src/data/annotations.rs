//! Judge annotation files.
//!
//! Newline-delimited JSON. The first line is the array of concept names and
//! fixes concept order; every following line is a flat object:
//!
//! ```text
//! ["helpfulness","correctness",...]
//! {"pair_id":0,"preference":1,"helpfulness":0.0,"correctness":1.0,...}
//! ```
//!
//! Scores are in `[0, 1]` where 0 means the first response is clearly better.
//! They are thresholded at 0.5; an exact 0.5 is a tie and yields no label.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value};

use super::LabelSource;
use crate::datamodel::PreferencePair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub pair_id: u64,
    /// Judge scores in header order.
    pub scores: Vec<f64>,
    pub preference: u8,
}

impl AnnotationRecord {
    pub fn relative_label(&self, k: usize) -> Option<u8> {
        let s = self.scores[k];
        if s < 0.5 {
            Some(0)
        } else if s > 0.5 {
            Some(1)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnnotationSet {
    pub concept_names: Vec<String>,
    pub records: Vec<AnnotationRecord>,
    by_id: HashMap<u64, usize>,
}

impl AnnotationSet {
    pub fn new(concept_names: Vec<String>, records: Vec<AnnotationRecord>) -> Self {
        let by_id = records.iter().enumerate().map(|(i, r)| (r.pair_id, i)).collect();
        Self {
            concept_names,
            records,
            by_id,
        }
    }

    pub fn get(&self, pair_id: u64) -> Option<&AnnotationRecord> {
        self.by_id.get(&pair_id).map(|&i| &self.records[i])
    }
}

impl LabelSource for AnnotationSet {
    fn n_concepts(&self) -> usize {
        self.concept_names.len()
    }

    fn concept_label(&self, pair: &PreferencePair, k: usize) -> Result<Option<u8>> {
        if k >= self.concept_names.len() {
            return Err(Error::Config(format!("concept index {k} out of range")));
        }
        Ok(self.get(pair.pair_id).and_then(|r| r.relative_label(k)))
    }

    fn preference(&self, pair: &PreferencePair) -> Result<Option<u8>> {
        Ok(self.get(pair.pair_id).map(|r| r.preference))
    }
}

pub fn write_annotations(path: &Path, concept_names: &[String], records: &[AnnotationRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, concept_names)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for r in records {
        let mut obj = Map::new();
        obj.insert("pair_id".into(), Value::from(r.pair_id));
        obj.insert("preference".into(), Value::from(r.preference));
        for (name, score) in concept_names.iter().zip(&r.scores) {
            obj.insert(name.clone(), Value::from(*score));
        }
        serde_json::to_writer(&mut w, &Value::Object(obj))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads and validates an annotation file. The header must name exactly the
/// configured concepts (in any order); the returned set follows header order.
pub fn load_annotations(path: &Path, concept_names: &[String]) -> Result<AnnotationSet> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let invalid = |line: usize, message: String| Error::Validation {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = BufReader::new(file).lines().enumerate();
    let header: Vec<String> = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line)
                .map_err(|e| invalid(1, format!("header must be a JSON array of concept names: {e}")))?
        }
        None => return Err(invalid(1, "empty file, missing header".into())),
    };
    let header_set: HashSet<&str> = header.iter().map(String::as_str).collect();
    if header_set.len() != header.len() {
        return Err(invalid(1, "duplicate concept name in header".into()));
    }
    for name in concept_names {
        if !header_set.contains(name.as_str()) {
            return Err(invalid(1, format!("header is missing concept '{name}'")));
        }
    }
    if header.len() != concept_names.len() {
        return Err(invalid(
            1,
            format!("header lists {} concepts, expected {}", header.len(), concept_names.len()),
        ));
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Map<String, Value> =
            serde_json::from_str(&line).map_err(|e| invalid(line_no, format!("malformed record: {e}")))?;

        let pair_id = obj
            .get("pair_id")
            .and_then(Value::as_u64)
            .ok_or_else(|| invalid(line_no, "missing or non-integer 'pair_id'".into()))?;
        if !seen.insert(pair_id) {
            return Err(invalid(line_no, format!("duplicate pair_id {pair_id}")));
        }
        let preference = match obj.get("preference").and_then(Value::as_u64) {
            Some(p @ (0 | 1)) => p as u8,
            _ => return Err(invalid(line_no, "'preference' must be 0 or 1".into())),
        };
        let mut scores = Vec::with_capacity(header.len());
        for name in &header {
            let score = obj
                .get(name)
                .ok_or_else(|| invalid(line_no, format!("missing concept key '{name}'")))?
                .as_f64()
                .ok_or_else(|| invalid(line_no, format!("concept '{name}' is not a number")))?;
            if !(0.0..=1.0).contains(&score) {
                return Err(invalid(line_no, format!("concept '{name}' score {score} outside [0, 1]")));
            }
            scores.push(score);
        }
        if let Some(extra) = obj
            .keys()
            .find(|k| *k != "pair_id" && *k != "preference" && !header_set.contains(k.as_str()))
        {
            return Err(invalid(line_no, format!("unknown key '{extra}'")));
        }
        records.push(AnnotationRecord {
            pair_id,
            scores,
            preference,
        });
    }
    Ok(AnnotationSet::new(header, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["helpfulness".into(), "safety".into()]
    }

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn threshold_and_tie_rule() {
        let f = write(
            "[\"helpfulness\",\"safety\"]\n\
             {\"pair_id\":3,\"preference\":0,\"helpfulness\":0.0,\"safety\":0.5}\n\
             {\"pair_id\":4,\"preference\":1,\"helpfulness\":0.9,\"safety\":1}\n",
        );
        let set = load_annotations(f.path(), &names()).unwrap();
        let r = set.get(3).unwrap();
        assert_eq!(r.relative_label(0), Some(0));
        assert_eq!(r.relative_label(1), None);
        let r = set.get(4).unwrap();
        assert_eq!((r.relative_label(0), r.relative_label(1)), (Some(1), Some(1)));
        assert_eq!(r.preference, 1);
    }

    #[test]
    fn malformed_line_is_cited() {
        let f = write(
            "[\"helpfulness\",\"safety\"]\n\
             {\"pair_id\":0,\"preference\":0,\"helpfulness\":0.0}\n\
             {\"pair_id\":1,\"preference\":0,\"helpfulness\":0.0,\"safety\":1.0}\n",
        );
        match load_annotations(f.path(), &names()).unwrap_err() {
            Error::Validation { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("safety"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn score_range_and_duplicates() {
        let f = write(
            "[\"helpfulness\",\"safety\"]\n\
             {\"pair_id\":0,\"preference\":0,\"helpfulness\":1.5,\"safety\":1.0}\n",
        );
        assert!(matches!(
            load_annotations(f.path(), &names()),
            Err(Error::Validation { line: 2, .. })
        ));
        let f = write(
            "[\"helpfulness\",\"safety\"]\n\
             {\"pair_id\":0,\"preference\":0,\"helpfulness\":1,\"safety\":1.0}\n\
             {\"pair_id\":0,\"preference\":1,\"helpfulness\":0,\"safety\":0.0}\n",
        );
        assert!(matches!(
            load_annotations(f.path(), &names()),
            Err(Error::Validation { line: 3, .. })
        ));
    }

    #[test]
    fn header_must_cover_configured_concepts() {
        let f = write("[\"helpfulness\"]\n");
        assert!(matches!(
            load_annotations(f.path(), &names()),
            Err(Error::Validation { line: 1, .. })
        ));
    }

    #[test]
    fn header_order_wins() {
        let f = write(
            "[\"safety\",\"helpfulness\"]\n\
             {\"pair_id\":0,\"preference\":0,\"helpfulness\":1,\"safety\":0}\n",
        );
        let set = load_annotations(f.path(), &names()).unwrap();
        assert_eq!(set.concept_names, vec!["safety".to_string(), "helpfulness".to_string()]);
        assert_eq!(set.records[0].scores, vec![0.0, 1.0]);
    }

    #[test]
    fn write_then_load() {
        let recs = vec![AnnotationRecord {
            pair_id: 9,
            scores: vec![0.25, 1.0],
            preference: 1,
        }];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_annotations(f.path(), &names(), &recs).unwrap();
        let set = load_annotations(f.path(), &names()).unwrap();
        assert_eq!(set.records, recs);
    }
}
