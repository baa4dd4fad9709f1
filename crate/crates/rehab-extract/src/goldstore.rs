//! Gold-standard corpus: validation, train/test split, sequence-level binary
//! targets, and inter-annotator agreement.
//!
//! The interchange format is JSONL with one record per section:
//!
//! ```json
//! {"section":{"id":"...","text":"...","origin":"enriched"},"split":"train",
//!  "sequences":[{"index":0,"label_number":"1","start":3,"end":20}],
//!  "annotations":[{"seq_index":0,"concept_id":"rom_active","start":0,"end":4}]}
//! ```
//!
//! Sequence text is derived from the section slice, never stored.

use crate::ingest::{Section, Sequence};
use crate::ontology::{CategoryKind, Ontology};
use crate::span::{char_len, OffsetMap};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use thiserror::Error;

pub const GOLD_SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum GoldError {
    #[error("failed to read gold file: {0}")]
    Io(#[from] std::io::Error),
    #[error("gold parse error on line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("gold validation error: {0}")]
    Validation(String),
    #[error("not enough sections in the {origin} stratum: need {need}, have {have}")]
    InsufficientSections {
        origin: Origin,
        need: usize,
        have: usize,
    },
    #[error("rating table shape error: {0}")]
    Shape(String),
    #[error("degenerate rating distribution: all mass in one category with imperfect agreement")]
    DegenerateDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Enriched,
    Random,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Enriched => f.write_str("enriched"),
            Origin::Random => f.write_str("random"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Identifies one sequence inside a corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SequenceKey {
    pub section_id: String,
    pub index: usize,
}

impl SequenceKey {
    pub fn new(section_id: impl Into<String>, index: usize) -> SequenceKey {
        SequenceKey {
            section_id: section_id.into(),
            index,
        }
    }
}

impl fmt::Display for SequenceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.section_id, self.index)
    }
}

/// One concept span inside a sequence; offsets are char offsets into the
/// sequence text. `numeric_value` is present exactly for integer-category
/// concepts (Duration in seconds, Sets and Reps as counts).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub sequence: SequenceKey,
    pub concept_id: String,
    pub start: usize,
    pub end: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub numeric_value: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldCorpus {
    pub sections: Vec<Section>,
    pub sequences: Vec<Sequence>,
    pub annotations: Vec<SpanAnnotation>,
    pub split: BTreeMap<String, Split>,
    pub origin: BTreeMap<String, Origin>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SectionRecord {
    id: String,
    text: String,
    origin: Origin,
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceRecord {
    index: usize,
    label_number: String,
    start: usize,
    end: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRecord {
    seq_index: usize,
    concept_id: String,
    start: usize,
    end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    numeric_value: Option<i64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GoldRecord {
    section: SectionRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
    sequences: Vec<SequenceRecord>,
    annotations: Vec<AnnotationRecord>,
}

impl GoldCorpus {
    pub fn load(path: &Path, ontology: &Ontology) -> Result<GoldCorpus, GoldError> {
        let text = std::fs::read_to_string(path)?;
        GoldCorpus::from_jsonl(&text, ontology)
    }

    pub fn from_jsonl(text: &str, ontology: &Ontology) -> Result<GoldCorpus, GoldError> {
        let mut corpus = GoldCorpus {
            sections: Vec::new(),
            sequences: Vec::new(),
            annotations: Vec::new(),
            split: BTreeMap::new(),
            origin: BTreeMap::new(),
        };
        let placeholder = regex::Regex::new(r"\[[A-Z][A-Z0-9_]*\]").expect("placeholder");
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: GoldRecord = serde_json::from_str(line).map_err(|source| GoldError::Parse {
                line: lineno + 1,
                source,
            })?;
            let map = OffsetMap::new(&rec.section.text);
            let n_chars = map.char_len(&rec.section.text);
            let section = Section {
                doc_id: rec.section.id.clone(),
                text: rec.section.text.clone(),
                source_filename: rec.section.id.clone(),
                placeholder_count: placeholder.find_iter(&rec.section.text).count(),
            };
            for (i, sr) in rec.sequences.iter().enumerate() {
                if sr.index != i {
                    return Err(GoldError::Validation(format!(
                        "section {}: sequence index {} out of order (expected {i})",
                        rec.section.id, sr.index
                    )));
                }
                if sr.start >= sr.end || sr.end > n_chars {
                    return Err(GoldError::Validation(format!(
                        "section {}: sequence {} offsets [{}, {}) out of bounds (len {n_chars})",
                        rec.section.id, sr.index, sr.start, sr.end
                    )));
                }
                corpus.sequences.push(Sequence {
                    section_id: rec.section.id.clone(),
                    index: sr.index,
                    label_number: sr.label_number.clone(),
                    text: map.slice(&rec.section.text, sr.start, sr.end).to_string(),
                    start: sr.start,
                    end: sr.end,
                });
            }
            for ar in &rec.annotations {
                corpus.annotations.push(SpanAnnotation {
                    sequence: SequenceKey::new(rec.section.id.clone(), ar.seq_index),
                    concept_id: ar.concept_id.clone(),
                    start: ar.start,
                    end: ar.end,
                    numeric_value: ar.numeric_value,
                });
            }
            if let Some(split) = rec.split {
                corpus.split.insert(rec.section.id.clone(), split);
            }
            corpus.origin.insert(rec.section.id.clone(), rec.section.origin);
            corpus.sections.push(section);
        }
        corpus.validate(ontology)?;
        Ok(corpus)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for section in &self.sections {
            let sequences: Vec<SequenceRecord> = self
                .sequences
                .iter()
                .filter(|q| q.section_id == section.doc_id)
                .map(|q| SequenceRecord {
                    index: q.index,
                    label_number: q.label_number.clone(),
                    start: q.start,
                    end: q.end,
                })
                .collect();
            let annotations: Vec<AnnotationRecord> = self
                .annotations
                .iter()
                .filter(|a| a.sequence.section_id == section.doc_id)
                .map(|a| AnnotationRecord {
                    seq_index: a.sequence.index,
                    concept_id: a.concept_id.clone(),
                    start: a.start,
                    end: a.end,
                    numeric_value: a.numeric_value,
                })
                .collect();
            let rec = GoldRecord {
                section: SectionRecord {
                    id: section.doc_id.clone(),
                    text: section.text.clone(),
                    origin: *self.origin.get(&section.doc_id).unwrap_or(&Origin::Random),
                },
                split: self.split.get(&section.doc_id).copied(),
                sequences,
                annotations,
            };
            out.push_str(&serde_json::to_string(&rec).expect("gold record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), GoldError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// Check every corpus invariant; errors name the first offender.
    pub fn validate(&self, ontology: &Ontology) -> Result<(), GoldError> {
        let mut ids = BTreeSet::new();
        for s in &self.sections {
            if !ids.insert(s.doc_id.clone()) {
                return Err(GoldError::Validation(format!(
                    "duplicate section id {:?}",
                    s.doc_id
                )));
            }
        }
        let mut by_key: BTreeMap<SequenceKey, &Sequence> = BTreeMap::new();
        let mut last_end: BTreeMap<&str, usize> = BTreeMap::new();
        for q in &self.sequences {
            let section = self
                .sections
                .iter()
                .find(|s| s.doc_id == q.section_id)
                .ok_or_else(|| {
                    GoldError::Validation(format!("sequence references unknown section {:?}", q.section_id))
                })?;
            let n = char_len(&section.text);
            if q.start >= q.end || q.end > n {
                return Err(GoldError::Validation(format!(
                    "sequence {} offsets [{}, {}) out of bounds (section len {n})",
                    SequenceKey::new(q.section_id.clone(), q.index),
                    q.start,
                    q.end
                )));
            }
            if crate::span::char_slice(&section.text, q.start, q.end) != q.text {
                return Err(GoldError::Validation(format!(
                    "sequence {} text does not equal its section slice",
                    SequenceKey::new(q.section_id.clone(), q.index)
                )));
            }
            if let Some(&prev) = last_end.get(q.section_id.as_str()) {
                if q.start < prev {
                    return Err(GoldError::Validation(format!(
                        "sequences overlap or are unordered in section {:?}",
                        q.section_id
                    )));
                }
            }
            last_end.insert(q.section_id.as_str(), q.end);
            by_key.insert(SequenceKey::new(q.section_id.clone(), q.index), q);
        }
        for a in &self.annotations {
            let seq = by_key.get(&a.sequence).ok_or_else(|| {
                GoldError::Validation(format!("annotation references unknown sequence {}", a.sequence))
            })?;
            let n = char_len(&seq.text);
            if a.start >= a.end || a.end > n {
                return Err(GoldError::Validation(format!(
                    "annotation {} {:?} offsets [{}, {}) out of bounds (sequence len {n})",
                    a.sequence, a.concept_id, a.start, a.end
                )));
            }
            let entry = ontology.lookup_concept(&a.concept_id).map_err(|_| {
                GoldError::Validation(format!(
                    "annotation {} references unknown concept {:?}",
                    a.sequence, a.concept_id
                ))
            })?;
            let is_numeric = entry.kind == CategoryKind::Integer;
            match (is_numeric, a.numeric_value) {
                (true, None) => {
                    return Err(GoldError::Validation(format!(
                        "annotation {} {:?} is integer-kind but has no numeric_value",
                        a.sequence, a.concept_id
                    )))
                }
                (false, Some(_)) => {
                    return Err(GoldError::Validation(format!(
                        "annotation {} {:?} is not integer-kind but carries numeric_value",
                        a.sequence, a.concept_id
                    )))
                }
                (true, Some(v)) if v < 0 => {
                    return Err(GoldError::Validation(format!(
                        "annotation {} {:?} has negative numeric_value {v}",
                        a.sequence, a.concept_id
                    )))
                }
                _ => {}
            }
        }
        if !self.split.is_empty() {
            for s in &self.sections {
                if !self.split.contains_key(&s.doc_id) {
                    return Err(GoldError::Validation(format!(
                        "split does not cover section {:?}",
                        s.doc_id
                    )));
                }
            }
        }
        for s in &self.sections {
            if !self.origin.contains_key(&s.doc_id) {
                return Err(GoldError::Validation(format!(
                    "origin missing for section {:?}",
                    s.doc_id
                )));
            }
        }
        Ok(())
    }

    /// Seeded stratified split: `per_origin_train` sections from each origin
    /// go to train, the rest to test.
    pub fn assign_split(&mut self, per_origin_train: usize, seed: u64) -> Result<(), GoldError> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut split = BTreeMap::new();
        for origin in [Origin::Enriched, Origin::Random] {
            let stratum: Vec<&str> = self
                .sections
                .iter()
                .filter(|s| self.origin.get(&s.doc_id) == Some(&origin))
                .map(|s| s.doc_id.as_str())
                .collect();
            if stratum.is_empty() {
                continue;
            }
            if stratum.len() < per_origin_train {
                return Err(GoldError::InsufficientSections {
                    origin,
                    need: per_origin_train,
                    have: stratum.len(),
                });
            }
            let train: BTreeSet<usize> =
                rand::seq::index::sample(&mut rng, stratum.len(), per_origin_train)
                    .into_iter()
                    .collect();
            for (i, id) in stratum.iter().enumerate() {
                let s = if train.contains(&i) { Split::Train } else { Split::Test };
                split.insert(id.to_string(), s);
            }
        }
        self.split = split;
        Ok(())
    }

    pub fn sequences_in_split(&self, split: Split) -> Vec<&Sequence> {
        self.sequences
            .iter()
            .filter(|q| self.split.get(&q.section_id) == Some(&split))
            .collect()
    }

    pub fn sequence(&self, key: &SequenceKey) -> Option<&Sequence> {
        self.sequences
            .iter()
            .find(|q| q.section_id == key.section_id && q.index == key.index)
    }
}

/// Sequence-level binary label assignment over a fixed (sequences x concepts)
/// grid. Equality of two maps requires identical grids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLabels {
    sequences: BTreeSet<SequenceKey>,
    concepts: BTreeSet<String>,
    positives: BTreeSet<(SequenceKey, String)>,
}

impl SequenceLabels {
    pub fn new(
        sequences: impl IntoIterator<Item = SequenceKey>,
        concepts: impl IntoIterator<Item = String>,
    ) -> SequenceLabels {
        SequenceLabels {
            sequences: sequences.into_iter().collect(),
            concepts: concepts.into_iter().collect(),
            positives: BTreeSet::new(),
        }
    }

    /// Mark (sequence, concept) positive. Unknown keys are ignored so span
    /// projections stay within the grid.
    pub fn set_positive(&mut self, seq: &SequenceKey, concept: &str) {
        if self.sequences.contains(seq) && self.concepts.contains(concept) {
            self.positives.insert((seq.clone(), concept.to_string()));
        }
    }

    pub fn is_positive(&self, seq: &SequenceKey, concept: &str) -> bool {
        self.positives.contains(&(seq.clone(), concept.to_string()))
    }

    pub fn sequences(&self) -> &BTreeSet<SequenceKey> {
        &self.sequences
    }

    pub fn concepts(&self) -> &BTreeSet<String> {
        &self.concepts
    }

    pub fn positive_count(&self, concept: &str) -> usize {
        self.positives.iter().filter(|(_, c)| c == concept).count()
    }

    /// Restrict to a subset of sequences (e.g. one split).
    pub fn restricted_to(&self, keep: &BTreeSet<SequenceKey>) -> SequenceLabels {
        SequenceLabels {
            sequences: self.sequences.intersection(keep).cloned().collect(),
            concepts: self.concepts.clone(),
            positives: self
                .positives
                .iter()
                .filter(|(s, _)| keep.contains(s))
                .cloned()
                .collect(),
        }
    }
}

/// Project gold spans to sequence-level binary targets over every non-integer
/// concept. Integer categories (Duration, Sets, Reps) are excluded.
pub fn sequence_targets(corpus: &GoldCorpus, ontology: &Ontology) -> SequenceLabels {
    let mut labels = SequenceLabels::new(
        corpus
            .sequences
            .iter()
            .map(|q| SequenceKey::new(q.section_id.clone(), q.index)),
        ontology.binary_concepts().map(|c| c.id.clone()),
    );
    for a in &corpus.annotations {
        labels.set_positive(&a.sequence, &a.concept_id);
    }
    labels
}

/// Fleiss rating table: N items x K categories, each row summing to the
/// number of raters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingTable {
    pub raters: u32,
    pub counts: Vec<Vec<u32>>,
}

impl RatingTable {
    pub fn items(&self) -> usize {
        self.counts.len()
    }
}

/// Fleiss's kappa over a rating table. Returns exactly 1.0 for perfect
/// agreement; errors when all mass sits in one category with imperfect
/// agreement (expected agreement 1).
pub fn fleiss_kappa(table: &RatingTable) -> Result<f64, GoldError> {
    let n = table.counts.len();
    let r = table.raters;
    if n == 0 {
        return Err(GoldError::Shape("rating table has no items".into()));
    }
    if r < 2 {
        return Err(GoldError::Shape("fleiss kappa needs at least 2 raters".into()));
    }
    let k = table.counts[0].len();
    if k == 0 {
        return Err(GoldError::Shape("rating table has no categories".into()));
    }
    for (i, row) in table.counts.iter().enumerate() {
        if row.len() != k {
            return Err(GoldError::Shape(format!(
                "row {i} has {} categories, expected {k}",
                row.len()
            )));
        }
        let sum: u32 = row.iter().sum();
        if sum != r {
            return Err(GoldError::Shape(format!(
                "row {i} sums to {sum}, expected {r} raters"
            )));
        }
    }

    let nf = n as f64;
    let rf = r as f64;
    let mut p_bar = 0.0;
    for row in &table.counts {
        let sum_sq: f64 = row.iter().map(|&c| (c as f64) * (c as f64)).sum();
        p_bar += (sum_sq - rf) / (rf * (rf - 1.0));
    }
    p_bar /= nf;
    if p_bar >= 1.0 {
        return Ok(1.0);
    }

    let mut pe = 0.0;
    for j in 0..k {
        let col: f64 = table.counts.iter().map(|row| row[j] as f64).sum();
        let pj = col / (nf * rf);
        pe += pj * pj;
    }
    if pe >= 1.0 {
        return Err(GoldError::DegenerateDistribution);
    }
    Ok((p_bar - pe) / (1.0 - pe))
}

/// Build a Fleiss table from several annotators' corpora over the same
/// sections: one item per (sequence, binary concept), two categories
/// (mentioned / not mentioned).
pub fn rating_table_from_annotations(
    corpora: &[GoldCorpus],
    ontology: &Ontology,
) -> Result<RatingTable, GoldError> {
    if corpora.len() < 2 {
        return Err(GoldError::Shape(
            "agreement needs at least two annotators' corpora".into(),
        ));
    }
    let reference = sequence_targets(&corpora[0], ontology);
    let all_labels: Vec<SequenceLabels> = corpora
        .iter()
        .map(|c| sequence_targets(c, ontology))
        .collect();
    for labels in &all_labels[1..] {
        if labels.sequences() != reference.sequences() {
            return Err(GoldError::Shape(
                "annotators cover different sequence sets".into(),
            ));
        }
    }
    let raters = corpora.len() as u32;
    let mut counts = Vec::new();
    for seq in reference.sequences() {
        for concept in reference.concepts() {
            let mentioned = all_labels
                .iter()
                .filter(|l| l.is_positive(seq, concept))
                .count() as u32;
            counts.push(vec![mentioned, raters - mentioned]);
        }
    }
    Ok(RatingTable { raters, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::Ontology;

    fn tiny_gold_jsonl() -> String {
        // section text: "1: AROM left shoulder flexion x10"
        // sequence [3, 33): "AROM left shoulder flexion x10"
        let rec = serde_json::json!({
            "section": {"id": "g1", "text": "1: AROM left shoulder flexion x10", "origin": "enriched"},
            "sequences": [{"index": 0, "label_number": "1", "start": 3, "end": 33}],
            "annotations": [
                {"seq_index": 0, "concept_id": "rom_active", "start": 0, "end": 4},
                {"seq_index": 0, "concept_id": "side_left", "start": 5, "end": 9},
                {"seq_index": 0, "concept_id": "reps", "start": 27, "end": 30, "numeric_value": 10}
            ]
        });
        format!("{rec}\n")
    }

    #[test]
    fn round_trips_and_reconstructs_sequence_text() {
        let ont = Ontology::default_shipped();
        let corpus = GoldCorpus::from_jsonl(&tiny_gold_jsonl(), &ont).unwrap();
        assert_eq!(corpus.sequences[0].text, "AROM left shoulder flexion x10");
        let again = GoldCorpus::from_jsonl(&corpus.to_jsonl(), &ont).unwrap();
        assert_eq!(corpus, again);
    }

    #[test]
    fn annotation_bounds_are_validated() {
        let ont = Ontology::default_shipped();
        let bad = tiny_gold_jsonl().replace("\"end\":4", "\"end\":400");
        assert!(matches!(
            GoldCorpus::from_jsonl(&bad, &ont),
            Err(GoldError::Validation(_))
        ));
    }

    #[test]
    fn numeric_value_on_enumerated_concept_rejected() {
        let ont = Ontology::default_shipped();
        let rec = serde_json::json!({
            "section": {"id": "g1", "text": "1: flexion", "origin": "random"},
            "sequences": [{"index": 0, "label_number": "1", "start": 3, "end": 10}],
            "annotations": [
                {"seq_index": 0, "concept_id": "plane_flexion", "start": 0, "end": 7, "numeric_value": 3}
            ]
        });
        assert!(matches!(
            GoldCorpus::from_jsonl(&format!("{rec}\n"), &ont),
            Err(GoldError::Validation(_))
        ));
    }

    #[test]
    fn unknown_concept_rejected() {
        let ont = Ontology::default_shipped();
        let bad = tiny_gold_jsonl().replace("rom_active", "not_a_concept");
        assert!(matches!(
            GoldCorpus::from_jsonl(&bad, &ont),
            Err(GoldError::Validation(_))
        ));
    }

    fn corpus_with_origins(n_enriched: usize, n_random: usize) -> GoldCorpus {
        let ont = Ontology::default_shipped();
        let mut lines = String::new();
        for i in 0..(n_enriched + n_random) {
            let origin = if i < n_enriched { "enriched" } else { "random" };
            let rec = serde_json::json!({
                "section": {"id": format!("s{i:04}"), "text": "1: rows x10", "origin": origin},
                "sequences": [{"index": 0, "label_number": "1", "start": 3, "end": 11}],
                "annotations": []
            });
            lines.push_str(&format!("{rec}\n"));
        }
        GoldCorpus::from_jsonl(&lines, &ont).unwrap()
    }

    #[test]
    fn split_draws_per_origin_and_is_deterministic() {
        let mut c1 = corpus_with_origins(150, 150);
        c1.assign_split(125, 9).unwrap();
        let train = c1.split.values().filter(|&&s| s == Split::Train).count();
        let test = c1.split.values().filter(|&&s| s == Split::Test).count();
        assert_eq!((train, test), (250, 50));
        for origin in [Origin::Enriched, Origin::Random] {
            let n = c1
                .split
                .iter()
                .filter(|(id, &s)| s == Split::Train && c1.origin[*id] == origin)
                .count();
            assert_eq!(n, 125);
        }
        let mut c2 = corpus_with_origins(150, 150);
        c2.assign_split(125, 9).unwrap();
        assert_eq!(c1.split, c2.split);
    }

    #[test]
    fn split_errors_when_a_stratum_is_exhausted() {
        let mut c = corpus_with_origins(100, 150);
        assert!(matches!(
            c.assign_split(125, 1),
            Err(GoldError::InsufficientSections { .. })
        ));
    }

    #[test]
    fn targets_project_spans_and_exclude_numeric() {
        let ont = Ontology::default_shipped();
        let corpus = GoldCorpus::from_jsonl(&tiny_gold_jsonl(), &ont).unwrap();
        let labels = sequence_targets(&corpus, &ont);
        let key = SequenceKey::new("g1", 0);
        assert!(labels.is_positive(&key, "rom_active"));
        assert!(labels.is_positive(&key, "side_left"));
        assert!(!labels.is_positive(&key, "plane_flexion"));
        // numeric concepts are not targets at all
        assert!(!labels.concepts().contains("reps"));
    }

    #[test]
    fn duplicate_spans_do_not_change_targets() {
        let ont = Ontology::default_shipped();
        let mut corpus = GoldCorpus::from_jsonl(&tiny_gold_jsonl(), &ont).unwrap();
        let before = sequence_targets(&corpus, &ont);
        let dup = corpus.annotations[0].clone();
        corpus.annotations.push(dup);
        let after = sequence_targets(&corpus, &ont);
        assert_eq!(before, after);
    }

    #[test]
    fn kappa_is_exactly_one_for_perfect_agreement() {
        let table = RatingTable {
            raters: 3,
            counts: (0..20)
                .map(|i| if i % 2 == 0 { vec![3, 0] } else { vec![0, 3] })
                .collect(),
        };
        assert_eq!(fleiss_kappa(&table).unwrap(), 1.0);
    }

    #[test]
    fn kappa_matches_hand_computed_value() {
        // rows [3,0] x5 and [1,2] x5 with 3 raters:
        // P_bar = 2/3, Pe = 5/9, kappa = (2/3 - 5/9) / (4/9) = 1/4
        let mut counts = vec![vec![3, 0]; 5];
        counts.extend(vec![vec![1, 2]; 5]);
        let table = RatingTable { raters: 3, counts };
        let k = fleiss_kappa(&table).unwrap();
        assert!((k - 0.25).abs() < 1e-9, "kappa {k}");
    }

    #[test]
    fn kappa_shape_and_degenerate_errors() {
        let bad = RatingTable {
            raters: 3,
            counts: vec![vec![3, 0], vec![2, 0]],
        };
        assert!(matches!(fleiss_kappa(&bad), Err(GoldError::Shape(_))));

        // all mass in one category but not perfect agreement is impossible
        // with K=2; use K=1 with imperfect... K=1 forces perfect. Degenerate
        // needs every rating in one column yet P_bar < 1, which cannot happen;
        // a one-column table is perfect agreement instead.
        let one_col = RatingTable {
            raters: 2,
            counts: vec![vec![2], vec![2]],
        };
        assert_eq!(fleiss_kappa(&one_col).unwrap(), 1.0);
    }

    #[test]
    fn kappa_invariant_under_item_and_category_permutation() {
        let table = RatingTable {
            raters: 3,
            counts: vec![vec![2, 1], vec![0, 3], vec![3, 0], vec![1, 2]],
        };
        let base = fleiss_kappa(&table).unwrap();
        let permuted_items = RatingTable {
            raters: 3,
            counts: vec![vec![3, 0], vec![1, 2], vec![2, 1], vec![0, 3]],
        };
        let permuted_cols = RatingTable {
            raters: 3,
            counts: vec![vec![1, 2], vec![3, 0], vec![0, 3], vec![2, 1]],
        };
        assert!((base - fleiss_kappa(&permuted_items).unwrap()).abs() < 1e-12);
        assert!((base - fleiss_kappa(&permuted_cols).unwrap()).abs() < 1e-12);
    }
}
