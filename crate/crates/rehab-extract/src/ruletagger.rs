//! Declarative rule-based span tagger.
//!
//! A rules file is JSONL, one rule per line: a concept id, a regular
//! expression (case-insensitive unless `case_sensitive`), an optional
//! priority, and an optional context guard. Guards are regexes tested against
//! a char window before/after the candidate span (anchor with `$` or `^` for
//! adjacency); `require_*` must match, `forbid_*` must not. Negative guards
//! exist because the regex engine has no lookaround, and single-letter
//! abbreviations ("L", "B", "SL", "A") are only safe with context.
//!
//! Overlapping matches for the same concept merge to the widest span;
//! overlapping matches for different concepts are all kept ("ext/flex").
//! Integer-category matches carry a normalized numeric value (Duration in
//! seconds).

use crate::goldstore::{SequenceKey, SequenceLabels, SpanAnnotation};
use crate::ingest::Sequence;
use crate::ontology::{CategoryKind, NumericCategory, Ontology};
use crate::span::OffsetMap;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;
use thiserror::Error;

pub const RULES_SCHEMA_VERSION: &str = "1";

/// Default rule set shipped with the crate.
pub const DEFAULT_RULES_JSONL: &str = include_str!("../assets/rules.jsonl");

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("failed to read rules file: {0}")]
    Io(#[from] std::io::Error),
    #[error("rules parse error on line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("bad pattern on rules line {line}: {source}")]
    Pattern { line: usize, source: regex::Error },
    #[error("rules line {line} names unknown concept {concept:?}")]
    UnknownConcept { line: usize, concept: String },
    #[error("no number in numeric span {0:?}")]
    NoNumber(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextGuardSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub require_preceding: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub require_following: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forbid_preceding: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forbid_following: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub concept_id: String,
    pub pattern: String,
    #[serde(default)]
    pub priority: i32,
    #[serde(default)]
    pub case_sensitive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<ContextGuardSpec>,
}

const DEFAULT_GUARD_WINDOW: usize = 24;

struct CompiledGuard {
    require_preceding: Option<Regex>,
    require_following: Option<Regex>,
    forbid_preceding: Option<Regex>,
    forbid_following: Option<Regex>,
    window: usize,
}

struct CompiledRule {
    concept_id: String,
    regex: Regex,
    priority: i32,
    file_order: usize,
    guard: Option<CompiledGuard>,
}

pub struct CompiledTagger {
    rules: Vec<CompiledRule>,
    numeric_kind: BTreeMap<String, NumericCategory>,
}

fn build_regex(pattern: &str, case_sensitive: bool) -> Result<Regex, regex::Error> {
    RegexBuilder::new(pattern)
        .case_insensitive(!case_sensitive)
        .build()
}

pub fn compile_rules(text: &str, ontology: &Ontology) -> Result<CompiledTagger, RuleError> {
    let mut rules = Vec::new();
    let mut numeric_kind = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let spec: RuleSpec = serde_json::from_str(line).map_err(|source| RuleError::Parse {
            line: lineno + 1,
            source,
        })?;
        let entry =
            ontology
                .lookup_concept(&spec.concept_id)
                .map_err(|_| RuleError::UnknownConcept {
                    line: lineno + 1,
                    concept: spec.concept_id.clone(),
                })?;
        if entry.kind == CategoryKind::Integer {
            if let Some(cat) = entry.numeric_category() {
                numeric_kind.insert(entry.id.clone(), cat);
            } else {
                return Err(RuleError::UnknownConcept {
                    line: lineno + 1,
                    concept: spec.concept_id.clone(),
                });
            }
        }
        let regex = build_regex(&spec.pattern, spec.case_sensitive).map_err(|source| {
            RuleError::Pattern {
                line: lineno + 1,
                source,
            }
        })?;
        let guard = match &spec.context {
            None => None,
            Some(g) => {
                let compile = |p: &Option<String>| -> Result<Option<Regex>, RuleError> {
                    match p {
                        None => Ok(None),
                        Some(p) => build_regex(p, spec.case_sensitive)
                            .map(Some)
                            .map_err(|source| RuleError::Pattern {
                                line: lineno + 1,
                                source,
                            }),
                    }
                };
                Some(CompiledGuard {
                    require_preceding: compile(&g.require_preceding)?,
                    require_following: compile(&g.require_following)?,
                    forbid_preceding: compile(&g.forbid_preceding)?,
                    forbid_following: compile(&g.forbid_following)?,
                    window: g.window.unwrap_or(DEFAULT_GUARD_WINDOW),
                })
            }
        };
        rules.push(CompiledRule {
            concept_id: spec.concept_id,
            regex,
            priority: spec.priority,
            file_order: lineno,
            guard,
        });
    }
    rules.sort_by(|a, b| b.priority.cmp(&a.priority).then(a.file_order.cmp(&b.file_order)));
    Ok(CompiledTagger { rules, numeric_kind })
}

pub fn compile_rules_file(path: &Path, ontology: &Ontology) -> Result<CompiledTagger, RuleError> {
    let text = std::fs::read_to_string(path)?;
    compile_rules(&text, ontology)
}

/// The shipped default rule set.
pub fn default_tagger(ontology: &Ontology) -> CompiledTagger {
    compile_rules(DEFAULT_RULES_JSONL, ontology).expect("shipped rules must compile")
}

impl CompiledTagger {
    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    pub fn concepts_covered(&self) -> BTreeSet<&str> {
        self.rules.iter().map(|r| r.concept_id.as_str()).collect()
    }

    /// All spans produced by the rule set on one sequence.
    pub fn tag_sequence(&self, seq: &Sequence) -> Vec<SpanAnnotation> {
        let text = &seq.text;
        let map = OffsetMap::new(text);
        let n_chars = map.char_len(text);
        let key = SequenceKey::new(seq.section_id.clone(), seq.index);

        let mut per_concept: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
        for rule in &self.rules {
            for m in rule.regex.find_iter(text) {
                if m.start() == m.end() {
                    continue;
                }
                let cs = map.char_of_byte(m.start());
                let ce = map.char_of_byte(m.end());
                if let Some(guard) = &rule.guard {
                    let before = map.slice(text, cs.saturating_sub(guard.window), cs);
                    let after = map.slice(text, ce, (ce + guard.window).min(n_chars));
                    let ok = guard
                        .require_preceding
                        .as_ref()
                        .map_or(true, |g| g.is_match(before))
                        && guard
                            .require_following
                            .as_ref()
                            .map_or(true, |g| g.is_match(after))
                        && !guard
                            .forbid_preceding
                            .as_ref()
                            .is_some_and(|g| g.is_match(before))
                        && !guard
                            .forbid_following
                            .as_ref()
                            .is_some_and(|g| g.is_match(after));
                    if !ok {
                        continue;
                    }
                }
                per_concept
                    .entry(rule.concept_id.as_str())
                    .or_default()
                    .push((cs, ce));
            }
        }

        let mut out = Vec::new();
        for (concept, mut spans) in per_concept {
            spans.sort_unstable();
            let merged = merge_overlapping(&spans);
            for (cs, ce) in merged {
                let numeric_value = match self.numeric_kind.get(concept) {
                    None => None,
                    Some(&cat) => match normalize_numeric(map.slice(text, cs, ce), cat) {
                        Ok(v) => Some(v.value),
                        // a numeric rule that matched no digits asserts nothing
                        Err(_) => continue,
                    },
                };
                out.push(SpanAnnotation {
                    sequence: key.clone(),
                    concept_id: concept.to_string(),
                    start: cs,
                    end: ce,
                    numeric_value,
                });
            }
        }
        out.sort();
        out
    }

    pub fn tag_sequences(&self, sequences: &[Sequence]) -> Vec<SpanAnnotation> {
        let mut out = Vec::new();
        for seq in sequences {
            out.extend(self.tag_sequence(seq));
        }
        out
    }
}

/// Merge overlapping intervals to their union; adjacent intervals stay apart.
fn merge_overlapping(sorted: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for &(s, e) in sorted {
        match merged.last_mut() {
            Some((_, last_end)) if s < *last_end => {
                if e > *last_end {
                    *last_end = e;
                }
            }
            _ => merged.push((s, e)),
        }
    }
    merged
}

/// A normalized numeric reading of a matched span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumericValue {
    pub category: NumericCategory,
    pub value: i64,
}

fn sets_reps_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(\d+)\s*x\s*(\d+)").expect("sets-reps pattern"))
}

fn duration_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        RegexBuilder::new(r#"(\d+)\s*(min(?:ute)?s?|sec(?:ond)?s?|'|")?"#)
            .case_insensitive(true)
            .build()
            .expect("duration pattern")
    })
}

fn first_integer(text: &str) -> Option<i64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\d+").expect("integer pattern"));
    re.find(text).and_then(|m| m.as_str().parse().ok())
}

/// Normalize the number carried by a numeric span. Durations convert to
/// seconds ("min" and "'" read as minutes, "sec" and '"' as seconds, bare
/// numbers as seconds); an "NxM" token reads as Sets=N and Reps=M.
pub fn normalize_numeric(text: &str, category: NumericCategory) -> Result<NumericValue, RuleError> {
    let value = match category {
        NumericCategory::Duration => {
            let caps = duration_regex()
                .captures(text)
                .ok_or_else(|| RuleError::NoNumber(text.to_string()))?;
            let n: i64 = caps[1].parse().map_err(|_| RuleError::NoNumber(text.to_string()))?;
            let unit = caps.get(2).map(|m| m.as_str().to_lowercase());
            match unit.as_deref() {
                Some(u) if u.starts_with("min") || u == "'" => n * 60,
                _ => n,
            }
        }
        NumericCategory::Sets => match sets_reps_regex().captures(text) {
            Some(caps) => caps[1].parse().map_err(|_| RuleError::NoNumber(text.to_string()))?,
            None => first_integer(text).ok_or_else(|| RuleError::NoNumber(text.to_string()))?,
        },
        NumericCategory::Reps => match sets_reps_regex().captures(text) {
            Some(caps) => caps[2].parse().map_err(|_| RuleError::NoNumber(text.to_string()))?,
            None => first_integer(text).ok_or_else(|| RuleError::NoNumber(text.to_string()))?,
        },
    };
    Ok(NumericValue { category, value })
}

/// Project predicted spans to sequence-level binary labels over every
/// non-integer concept; the grid matches [`crate::goldstore::sequence_targets`]
/// so rule-tagger output scores as a sequence classifier.
pub fn project_to_sequences(
    spans: &[SpanAnnotation],
    sequences: &[Sequence],
    ontology: &Ontology,
) -> SequenceLabels {
    let mut labels = SequenceLabels::new(
        sequences
            .iter()
            .map(|q| SequenceKey::new(q.section_id.clone(), q.index)),
        ontology.binary_concepts().map(|c| c.id.clone()),
    );
    for span in spans {
        labels.set_positive(&span.sequence, &span.concept_id);
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::Ontology;

    fn seq(text: &str) -> Sequence {
        Sequence {
            section_id: "s1".into(),
            index: 0,
            label_number: "1".into(),
            text: text.into(),
            start: 0,
            end: crate::span::char_len(text),
        }
    }

    fn spans_of(text: &str) -> Vec<(String, String, Option<i64>)> {
        let ont = Ontology::default_shipped();
        let tagger = default_tagger(&ont);
        let s = seq(text);
        tagger
            .tag_sequence(&s)
            .into_iter()
            .map(|a| {
                (
                    a.concept_id.clone(),
                    crate::span::char_slice(text, a.start, a.end).to_string(),
                    a.numeric_value,
                )
            })
            .collect()
    }

    #[test]
    fn shipped_rules_cover_all_report_concepts() {
        let ont = Ontology::default_shipped();
        let tagger = default_tagger(&ont);
        let covered = tagger.concepts_covered();
        for c in ont.concepts() {
            assert!(covered.contains(c.id.as_str()), "no rule for {}", c.id);
        }
    }

    #[test]
    fn tags_the_wrist_line_exactly() {
        let got = spans_of("AROM Right wrist ext/flex - 20 x");
        let expect = vec![
            ("rom_active", "AROM", None),
            ("side_right", "Right", None),
            ("loc_wrist", "wrist", None),
            ("plane_extension", "ext", None),
            ("plane_flexion", "flex", None),
            ("reps", "20 x", Some(20)),
        ];
        assert_eq!(got.len(), expect.len(), "spans: {got:?}");
        for (c, t, v) in expect {
            assert!(
                got.iter().any(|(gc, gt, gv)| gc == c && gt == t && *gv == v),
                "missing ({c}, {t:?}) in {got:?}"
            );
        }
    }

    #[test]
    fn tags_deferral_and_home_program() {
        let got = spans_of("SLR- 2x10 deferred to HEP");
        assert!(got.iter().any(|(c, t, _)| c == "desc_not_performed" && t == "deferred"));
        assert!(got.iter().any(|(c, t, _)| c == "desc_home_exercise_program" && t == "HEP"));
        assert!(got.iter().any(|(c, t, v)| c == "sets" && t == "2x10" && *v == Some(2)));
        assert!(got.iter().any(|(c, t, v)| c == "reps" && t == "2x10" && *v == Some(10)));
        assert_eq!(got.len(), 4, "no extra spans: {got:?}");
    }

    #[test]
    fn empty_text_yields_no_spans() {
        assert!(spans_of("").is_empty());
    }

    #[test]
    fn compound_abbreviations_emit_side_and_location() {
        let got = spans_of("AROM LUE - 3 rep");
        assert!(got.iter().any(|(c, t, _)| c == "side_left" && t == "LUE"));
        assert!(got.iter().any(|(c, t, _)| c == "loc_upper_extremity" && t == "LUE"));
        assert!(got.iter().any(|(c, t, v)| c == "reps" && t == "3 rep" && *v == Some(3)));
    }

    #[test]
    fn bare_letter_sides_need_a_following_location() {
        let got = spans_of("L shoulder flexion x10");
        assert!(got.iter().any(|(c, t, _)| c == "side_left" && t == "L"));
        let no_guard = spans_of("deferred L today");
        assert!(!no_guard.iter().any(|(c, _, _)| c == "side_left"));
    }

    #[test]
    fn sl_disambiguates_by_following_token() {
        let single = spans_of("SL squats x10");
        assert!(single.iter().any(|(c, t, _)| c == "pos_single_leg" && t == "SL"));
        assert!(!single.iter().any(|(c, _, _)| c == "pos_side_lying"));

        let lying = spans_of("SL hip abd x10");
        assert!(lying.iter().any(|(c, t, _)| c == "pos_side_lying" && t == "SL"));
        assert!(!lying.iter().any(|(c, _, _)| c == "pos_single_leg"));

        let ambiguous = spans_of("SL HS activation x10");
        assert!(!ambiguous.iter().any(|(c, _, _)| c.starts_with("pos_s")));
    }

    #[test]
    fn bare_a_matches_anterior_only_next_to_motion_words() {
        let got = spans_of("A reach to target");
        assert!(got.iter().any(|(c, t, _)| c == "plane_anterior" && t == "A"));
        let art = spans_of("a towel under arm");
        assert!(!art.iter().any(|(c, _, _)| c == "plane_anterior"));
    }

    #[test]
    fn weight_bearing_does_not_fire_inside_non_weight_bearing() {
        let got = spans_of("non-weight bearing at this time");
        assert!(got.iter().any(|(c, t, _)| c == "pos_non_weight_bearing" && t == "non-weight bearing"));
        assert!(!got.iter().any(|(c, _, _)| c == "pos_weight_bearing"));
    }

    #[test]
    fn performed_respects_negation_guard() {
        let got = spans_of("exercises not performed today");
        assert!(got.iter().any(|(c, t, _)| c == "desc_not_performed" && t == "not performed"));
        assert!(!got.iter().any(|(c, _, _)| c == "desc_performed_in_office"));
        let ok = spans_of("rows performed with cues");
        assert!(ok.iter().any(|(c, t, _)| c == "desc_performed_in_office" && t == "performed"));
    }

    #[test]
    fn ext_before_rot_is_external_rotation_not_extension() {
        let got = spans_of("shoulder ext rot stretch");
        assert!(got.iter().any(|(c, t, _)| c == "plane_external_rotation" && t == "ext rot"));
        assert!(!got.iter().any(|(c, _, _)| c == "plane_extension"));
    }

    #[test]
    fn same_concept_overlaps_merge_to_widest() {
        let ont = Ontology::default_shipped();
        let rules = r#"{"concept_id": "plane_flexion", "pattern": "knee flex"}
{"concept_id": "plane_flexion", "pattern": "flexion drill"}"#;
        let tagger = compile_rules(rules, &ont).unwrap();
        let s = seq("knee flexion drill");
        let spans = tagger.tag_sequence(&s);
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].start, spans[0].end), (0, 18));
    }

    #[test]
    fn bad_pattern_reports_line() {
        let ont = Ontology::default_shipped();
        let rules = r#"{"concept_id": "plane_flexion", "pattern": "("}"#;
        match compile_rules(rules, &ont) {
            Err(RuleError::Pattern { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected pattern error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_concept_reports_line() {
        let ont = Ontology::default_shipped();
        let rules = r#"{"concept_id": "xyz", "pattern": "abc"}"#;
        match compile_rules(rules, &ont) {
            Err(RuleError::UnknownConcept { line, concept }) => {
                assert_eq!(line, 1);
                assert_eq!(concept, "xyz");
            }
            other => panic!("expected unknown concept, got {other:?}"),
        }
    }

    #[test]
    fn normalizes_durations_sets_and_reps() {
        use NumericCategory::*;
        assert_eq!(normalize_numeric("2 min", Duration).unwrap().value, 120);
        assert_eq!(normalize_numeric("30 sec", Duration).unwrap().value, 30);
        assert_eq!(normalize_numeric("5 minutes", Duration).unwrap().value, 300);
        assert_eq!(normalize_numeric("30'", Duration).unwrap().value, 1800);
        assert_eq!(normalize_numeric("15\"", Duration).unwrap().value, 15);
        assert_eq!(normalize_numeric("2x10", Sets).unwrap().value, 2);
        assert_eq!(normalize_numeric("2x10", Reps).unwrap().value, 10);
        assert_eq!(normalize_numeric("3 sets", Sets).unwrap().value, 3);
        assert_eq!(normalize_numeric("12 reps", Reps).unwrap().value, 12);
        assert!(matches!(
            normalize_numeric("no digits", Reps),
            Err(RuleError::NoNumber(_))
        ));
    }

    #[test]
    fn projection_marks_each_concept_once() {
        let ont = Ontology::default_shipped();
        let tagger = default_tagger(&ont);
        let s = seq("AROM Right wrist ext/flex - 20 x");
        let spans = tagger.tag_sequence(&s);
        let labels = project_to_sequences(&spans, &[s.clone()], &ont);
        let key = SequenceKey::new("s1", 0);
        for c in ["rom_active", "side_right", "loc_wrist", "plane_extension", "plane_flexion"] {
            assert!(labels.is_positive(&key, c), "{c} should be positive");
        }
        // numeric concepts are not part of the sequence grid
        assert!(!labels.concepts().contains("reps"));
        let empty = project_to_sequences(&[], &[s], &ont);
        assert!(!empty.is_positive(&key, "rom_active"));
    }

    #[test]
    fn tagging_is_deterministic() {
        let ont = Ontology::default_shipped();
        let tagger = default_tagger(&ont);
        let s = seq("AROM left shoulder flexion - 2x10 deferred to HEP");
        let a = serde_json::to_string(&tagger.tag_sequence(&s)).unwrap();
        let b = serde_json::to_string(&tagger.tag_sequence(&s)).unwrap();
        assert_eq!(a, b);
    }
}
