//! Scoring: exact-match NER spans, sequence-level binary labels, numeric
//! values, the sparse-concept filter, and the per-concept report.

use crate::goldstore::{sequence_targets, GoldCorpus, SequenceKey, SequenceLabels, Split, SpanAnnotation};
use crate::ontology::{CategoryKind, NumericCategory, Ontology};
use crate::ruletagger::NumericValue;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const REPORT_SCHEMA_VERSION: &str = "1";

/// Minimum positive sequences per split for a concept to be reported.
pub const MIN_SUPPORT: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and gold cover different sequence sets")]
    KeyMismatch,
    #[error("corpus has no train/test split assigned")]
    MissingSplit,
}

/// Precision/recall/F1 with their confusion counts. 0/0 ratios are 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    #[serde(rename = "tp")]
    pub true_pos: u64,
    #[serde(rename = "fp")]
    pub false_pos: u64,
    #[serde(rename = "fn")]
    pub false_neg: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(true_pos: u64, false_pos: u64, false_neg: u64) -> Prf {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(true_pos, true_pos + false_pos);
        let recall = ratio(true_pos, true_pos + false_neg);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            true_pos,
            false_pos,
            false_neg,
            precision,
            recall,
            f1,
        }
    }
}

/// Exact-match NER score for one concept: a prediction is a true positive iff
/// a gold span exists with identical (sequence, concept, start, end), matched
/// one-to-one.
pub fn ner_exact_prf(pred: &[SpanAnnotation], gold: &[SpanAnnotation], concept_id: &str) -> Prf {
    let keys = |spans: &[SpanAnnotation]| {
        let mut m: BTreeMap<(SequenceKey, usize, usize), u64> = BTreeMap::new();
        for s in spans.iter().filter(|s| s.concept_id == concept_id) {
            *m.entry((s.sequence.clone(), s.start, s.end)).or_default() += 1;
        }
        m
    };
    let p = keys(pred);
    let g = keys(gold);
    let total_p: u64 = p.values().sum();
    let total_g: u64 = g.values().sum();
    let mut tp = 0;
    for (k, &np) in &p {
        if let Some(&ng) = g.get(k) {
            tp += np.min(ng);
        }
    }
    Prf::from_counts(tp, total_p - tp, total_g - tp)
}

/// Binary sequence-classification score for one concept over a shared
/// sequence grid.
pub fn sequence_prf(
    pred: &SequenceLabels,
    gold: &SequenceLabels,
    concept_id: &str,
) -> Result<Prf, EvalError> {
    if pred.sequences() != gold.sequences() {
        return Err(EvalError::KeyMismatch);
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for seq in gold.sequences() {
        let p = pred.is_positive(seq, concept_id);
        let g = gold.is_positive(seq, concept_id);
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}

/// A numeric prediction or gold value attached to a sequence.
pub type NumericReading = (SequenceKey, NumericValue);

/// Extract normalized numeric readings from integer-category spans.
pub fn numeric_readings(spans: &[SpanAnnotation], ontology: &Ontology) -> Vec<NumericReading> {
    let mut out = Vec::new();
    for s in spans {
        if let Ok(entry) = ontology.lookup_concept(&s.concept_id) {
            if entry.kind == CategoryKind::Integer {
                if let (Some(cat), Some(value)) = (entry.numeric_category(), s.numeric_value) {
                    out.push((s.sequence.clone(), NumericValue { category: cat, value }));
                }
            }
        }
    }
    out
}

/// Per-category PRF where a true positive needs the same sequence, category,
/// and exact normalized value, matched one-to-one.
pub fn numeric_prf(
    pred: &[NumericReading],
    gold: &[NumericReading],
) -> BTreeMap<NumericCategory, Prf> {
    let mut out = BTreeMap::new();
    for cat in [NumericCategory::Duration, NumericCategory::Sets, NumericCategory::Reps] {
        let keys = |readings: &[NumericReading]| {
            let mut m: BTreeMap<(SequenceKey, i64), u64> = BTreeMap::new();
            for (seq, nv) in readings.iter().filter(|(_, nv)| nv.category == cat) {
                *m.entry((seq.clone(), nv.value)).or_default() += 1;
            }
            m
        };
        let p = keys(pred);
        let g = keys(gold);
        let total_p: u64 = p.values().sum();
        let total_g: u64 = g.values().sum();
        let mut tp = 0;
        for (k, &np) in &p {
            if let Some(&ng) = g.get(k) {
                tp += np.min(ng);
            }
        }
        out.insert(cat, Prf::from_counts(tp, total_p - tp, total_g - tp));
    }
    out
}

/// Positive sequence counts per concept in the train and test splits.
pub fn split_positive_counts(
    corpus: &GoldCorpus,
    ontology: &Ontology,
) -> Result<BTreeMap<String, (usize, usize)>, EvalError> {
    if corpus.split.is_empty() {
        return Err(EvalError::MissingSplit);
    }
    let targets = sequence_targets(corpus, ontology);
    let train_keys = corpus
        .sequences_in_split(Split::Train)
        .iter()
        .map(|q| SequenceKey::new(q.section_id.clone(), q.index))
        .collect();
    let test_keys = corpus
        .sequences_in_split(Split::Test)
        .iter()
        .map(|q| SequenceKey::new(q.section_id.clone(), q.index))
        .collect();
    let train = targets.restricted_to(&train_keys);
    let test = targets.restricted_to(&test_keys);
    let mut out = BTreeMap::new();
    for concept in targets.concepts() {
        out.insert(
            concept.clone(),
            (train.positive_count(concept), test.positive_count(concept)),
        );
    }
    Ok(out)
}

/// Concepts with at least [`MIN_SUPPORT`] positive sequences in both splits
/// ("fewer than ten" excludes; exactly ten keeps), in ontology order.
pub fn reportable_concepts(
    corpus: &GoldCorpus,
    ontology: &Ontology,
) -> Result<Vec<String>, EvalError> {
    let counts = split_positive_counts(corpus, ontology)?;
    Ok(ontology
        .binary_concepts()
        .filter(|c| {
            counts
                .get(&c.id)
                .is_some_and(|&(train, test)| train >= MIN_SUPPORT && test >= MIN_SUPPORT)
        })
        .map(|c| c.id.clone())
        .collect())
}

/// One method's per-concept scores, ready for the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodScores {
    pub name: String,
    /// Whether this column competes for the per-row best-method flag
    /// (span-level scores are reported alongside but not ranked).
    pub rank_eligible: bool,
    pub per_concept: BTreeMap<String, Prf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub category: String,
    pub concept_id: String,
    pub display_name: String,
    pub train_support: usize,
    pub test_support: usize,
    pub scores: BTreeMap<String, Prf>,
    pub best_methods: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OmittedConcept {
    pub concept_id: String,
    pub display_name: String,
    pub train_positives: usize,
    pub test_positives: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: String,
    pub methods: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub macro_average: BTreeMap<String, Prf>,
    pub omitted: Vec<OmittedConcept>,
    pub reference_scores: serde_json::Value,
}

/// Reference values reported by the source study on its private corpus.
/// Stored for context in every report; never asserted by tests.
pub fn reference_scores() -> serde_json::Value {
    serde_json::json!({
        "note": "Values reported by the source study on its private corpus; \
                 not reproducible here and never asserted.",
        "sequence_macro_f1": {
            "rules_ner": 0.878,
            "rules_sequence": 0.891,
            "logreg": 0.861,
            "svm": 0.835,
            "adaboost": 0.875,
            "gradboost": 0.883
        },
        "numeric_f1": {"duration": 0.65, "sets": 0.58, "reps": 0.88},
        "prompt_baseline": {"precision": 0.29, "recall": 0.84, "f1": 0.38, "concepts_tested": 67}
    })
}

/// Assemble the per-concept report: one row per reportable concept with each
/// method's score and support counts, a best-method flag per row, an
/// unweighted macro-average row, and the omitted-concept list.
pub fn build_report(
    methods: &[MethodScores],
    corpus: &GoldCorpus,
    ontology: &Ontology,
) -> Result<EvalReport, EvalError> {
    let counts = split_positive_counts(corpus, ontology)?;
    let reportable = reportable_concepts(corpus, ontology)?;

    let mut rows = Vec::new();
    for concept_id in &reportable {
        let entry = ontology.lookup_concept(concept_id).expect("reportable concept resolves");
        let (train_support, test_support) = counts[concept_id];
        let scores: BTreeMap<String, Prf> = methods
            .iter()
            .map(|m| {
                (
                    m.name.clone(),
                    m.per_concept.get(concept_id).copied().unwrap_or_default(),
                )
            })
            .collect();
        let best = methods
            .iter()
            .filter(|m| m.rank_eligible)
            .map(|m| scores[&m.name].f1)
            .fold(f64::NEG_INFINITY, f64::max);
        let best_methods: Vec<String> = methods
            .iter()
            .filter(|m| m.rank_eligible && scores[&m.name].f1 == best)
            .map(|m| m.name.clone())
            .collect();
        rows.push(ReportRow {
            category: entry.category.clone(),
            concept_id: concept_id.clone(),
            display_name: entry.display_name.clone(),
            train_support,
            test_support,
            scores,
            best_methods,
        });
    }

    let mut macro_average = BTreeMap::new();
    for m in methods {
        let n = rows.len().max(1) as f64;
        let mut acc = (0.0, 0.0, 0.0);
        for row in &rows {
            let prf = row.scores[&m.name];
            acc.0 += prf.precision;
            acc.1 += prf.recall;
            acc.2 += prf.f1;
        }
        macro_average.insert(
            m.name.clone(),
            Prf {
                true_pos: 0,
                false_pos: 0,
                false_neg: 0,
                precision: acc.0 / n,
                recall: acc.1 / n,
                f1: acc.2 / n,
            },
        );
    }

    let omitted = ontology
        .binary_concepts()
        .filter(|c| !reportable.contains(&c.id))
        .map(|c| {
            let (train, test) = counts.get(&c.id).copied().unwrap_or((0, 0));
            OmittedConcept {
                concept_id: c.id.clone(),
                display_name: c.display_name.clone(),
                train_positives: train,
                test_positives: test,
                reason: format!(
                    "fewer than {MIN_SUPPORT} positive sequences in a split (train {train}, test {test})"
                ),
            }
        })
        .collect();

    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        methods: methods.iter().map(|m| m.name.clone()).collect(),
        rows,
        macro_average,
        omitted,
        reference_scores: reference_scores(),
    })
}

/// Render the report as a markdown table grouped by category.
pub fn render_markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("# Per-concept binary F1 on the test set\n\n");
    out.push_str("| Category | Concept |");
    for m in &report.methods {
        out.push_str(&format!(" {m} |"));
    }
    out.push_str(" Train Size | Test Size |\n");
    out.push_str("|---|---|");
    for _ in &report.methods {
        out.push_str("---|");
    }
    out.push_str("---|---|\n");

    let mut last_category = String::new();
    for row in &report.rows {
        let cat = if row.category == last_category {
            String::new()
        } else {
            last_category = row.category.clone();
            row.category.clone()
        };
        out.push_str(&format!("| {cat} | {} |", row.display_name));
        for m in &report.methods {
            let f1 = row.scores[m].f1;
            if row.best_methods.contains(m) {
                out.push_str(&format!(" **{f1:.3}** |"));
            } else {
                out.push_str(&format!(" {f1:.3} |"));
            }
        }
        out.push_str(&format!(" {} | {} |\n", row.train_support, row.test_support));
    }
    out.push_str("| Average | |");
    for m in &report.methods {
        out.push_str(&format!(" {:.3} |", report.macro_average[m].f1));
    }
    let mean = |f: fn(&ReportRow) -> usize| -> f64 {
        if report.rows.is_empty() {
            0.0
        } else {
            report.rows.iter().map(f).sum::<usize>() as f64 / report.rows.len() as f64
        }
    };
    out.push_str(&format!(
        " {:.0} | {:.0} |\n",
        mean(|r| r.train_support),
        mean(|r| r.test_support)
    ));

    if !report.omitted.is_empty() {
        out.push_str("\n## Omitted concepts\n\n");
        for o in &report.omitted {
            out.push_str(&format!(
                "- {} ({}): {}\n",
                o.display_name, o.concept_id, o.reason
            ));
        }
    }
    out.push_str("\nBold marks the best sequence-classification method per row.\n");
    out.push_str(
        "Reference scores from the source study are carried in `reference_scores` for context only.\n",
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goldstore::SequenceKey;

    fn span(seq: &str, idx: usize, concept: &str, start: usize, end: usize) -> SpanAnnotation {
        SpanAnnotation {
            sequence: SequenceKey::new(seq, idx),
            concept_id: concept.into(),
            start,
            end,
            numeric_value: None,
        }
    }

    #[test]
    fn identical_spans_score_perfectly() {
        let gold = vec![
            span("a", 0, "plane_flexion", 0, 4),
            span("a", 1, "plane_flexion", 2, 6),
            span("b", 0, "plane_flexion", 1, 3),
        ];
        let prf = ner_exact_prf(&gold, &gold, "plane_flexion");
        assert_eq!((prf.true_pos, prf.false_pos, prf.false_neg), (3, 0, 0));
        assert_eq!(prf.f1, 1.0);
    }

    #[test]
    fn off_by_one_span_is_both_fp_and_fn() {
        let gold = vec![span("a", 0, "plane_flexion", 0, 7)];
        let pred = vec![span("a", 0, "plane_flexion", 0, 6)];
        let prf = ner_exact_prf(&pred, &gold, "plane_flexion");
        assert_eq!((prf.true_pos, prf.false_pos, prf.false_neg), (0, 1, 1));
        assert_eq!(prf.f1, 0.0);
    }

    #[test]
    fn extra_prediction_halves_precision() {
        let gold = vec![span("a", 0, "side_left", 0, 4)];
        let pred = vec![span("a", 0, "side_left", 0, 4), span("a", 0, "side_left", 8, 12)];
        let prf = ner_exact_prf(&pred, &gold, "side_left");
        assert_eq!((prf.true_pos, prf.false_pos, prf.false_neg), (1, 1, 0));
        assert!((prf.precision - 0.5).abs() < 1e-12);
        assert_eq!(prf.recall, 1.0);
        assert!((prf.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    fn labels(positives: &[(&str, usize, &str)]) -> SequenceLabels {
        let seqs = ["a", "b", "c", "d"]
            .iter()
            .flat_map(|s| (0..2).map(move |i| SequenceKey::new(*s, i)));
        let mut l = SequenceLabels::new(
            seqs,
            ["plane_flexion", "side_left"].iter().map(|s| s.to_string()),
        );
        for (s, i, c) in positives {
            l.set_positive(&SequenceKey::new(*s, *i), c);
        }
        l
    }

    #[test]
    fn sequence_prf_counts_confusions() {
        let gold = labels(&[("a", 0, "plane_flexion"), ("a", 1, "plane_flexion"), ("b", 0, "plane_flexion")]);
        let pred = labels(&[("a", 0, "plane_flexion"), ("a", 1, "plane_flexion"), ("c", 0, "plane_flexion")]);
        let prf = sequence_prf(&pred, &gold, "plane_flexion").unwrap();
        assert_eq!((prf.true_pos, prf.false_pos, prf.false_neg), (2, 1, 1));
        assert!((prf.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_negative_prediction_scores_zero_by_convention() {
        let gold = labels(&[("a", 0, "side_left")]);
        let pred = labels(&[]);
        let prf = sequence_prf(&pred, &gold, "side_left").unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mismatched_sequence_sets_are_rejected() {
        let gold = labels(&[]);
        let mut other = SequenceLabels::new(
            vec![SequenceKey::new("z", 0)],
            vec!["plane_flexion".to_string()],
        );
        other.set_positive(&SequenceKey::new("z", 0), "plane_flexion");
        assert!(matches!(
            sequence_prf(&other, &gold, "plane_flexion"),
            Err(EvalError::KeyMismatch)
        ));
    }

    #[test]
    fn swapping_pred_and_gold_swaps_precision_and_recall() {
        let gold = labels(&[("a", 0, "plane_flexion"), ("b", 0, "plane_flexion")]);
        let pred = labels(&[("a", 0, "plane_flexion"), ("c", 1, "plane_flexion"), ("d", 0, "plane_flexion")]);
        let ab = sequence_prf(&pred, &gold, "plane_flexion").unwrap();
        let ba = sequence_prf(&gold, &pred, "plane_flexion").unwrap();
        assert_eq!(ab.precision, ba.recall);
        assert_eq!(ab.recall, ba.precision);
    }

    #[test]
    fn numeric_prf_requires_exact_normalized_equality() {
        use crate::ontology::NumericCategory::*;
        let key = SequenceKey::new("a", 0);
        let gold = vec![
            (key.clone(), NumericValue { category: Duration, value: 120 }),
            (key.clone(), NumericValue { category: Reps, value: 12 }),
        ];
        let pred = vec![
            (key.clone(), NumericValue { category: Duration, value: 120 }),
            (key.clone(), NumericValue { category: Reps, value: 10 }),
        ];
        let prf = numeric_prf(&pred, &gold);
        assert_eq!(prf[&Duration].true_pos, 1);
        assert_eq!(prf[&Duration].f1, 1.0);
        assert_eq!((prf[&Reps].false_pos, prf[&Reps].false_neg), (1, 1));
        assert_eq!(prf[&Sets].true_pos, 0);
    }
}
