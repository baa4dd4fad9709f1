//! Note filtering, section carving, sequence segmentation, enrichment
//! scoring, and candidate-set selection.

use crate::ontology::Ontology;
use crate::span::OffsetMap;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("section config error: {0}")]
    Config(String),
    #[error("not enough sections: need {need} from a pool of {pool} ({which})")]
    InsufficientSections {
        which: &'static str,
        need: usize,
        pool: usize,
    },
}

/// One note file as read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteFile {
    pub filename: String,
    pub text: String,
}

/// The therapeutic-procedures portion of one note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub doc_id: String,
    pub text: String,
    pub source_filename: String,
    pub placeholder_count: usize,
}

/// One enumerated exercise item within a section. Offsets are char offsets
/// into the section text and `text` equals that slice exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub section_id: String,
    pub index: usize,
    pub label_number: String,
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Keep exactly the files whose filename contains the case-sensitive
/// substring "THERAPY".
pub fn filter_note_files(files: Vec<NoteFile>) -> Vec<NoteFile> {
    files
        .into_iter()
        .filter(|f| f.filename.contains("THERAPY"))
        .collect()
}

/// Header grammar for section carving. The default matches a line reading
/// "THERAPEUTIC PROCEDURES" (any case, optional trailing punctuation); the
/// section runs until the next all-caps header line or end of note.
#[derive(Debug, Clone)]
pub struct SectionExtractor {
    header: Regex,
    terminator: Regex,
    placeholder: Regex,
}

impl Default for SectionExtractor {
    fn default() -> Self {
        SectionExtractor::new(&["THERAPEUTIC\\s+PROCEDURES"]).expect("default header grammar")
    }
}

impl SectionExtractor {
    pub fn new(header_patterns: &[&str]) -> Result<SectionExtractor, IngestError> {
        if header_patterns.is_empty() {
            return Err(IngestError::Config("no header patterns".into()));
        }
        let joined = header_patterns
            .iter()
            .map(|p| format!("(?:{p})"))
            .collect::<Vec<_>>()
            .join("|");
        let header = RegexBuilder::new(&format!(r"(?m)^[ \t]*(?:{joined})[ \t]*[:.\-]?[ \t]*$"))
            .case_insensitive(true)
            .build()
            .map_err(|e| IngestError::Config(e.to_string()))?;
        let terminator = Regex::new(r"(?m)^[ \t]*[A-Z][A-Z \t/&'\-]{2,}:").expect("terminator");
        let placeholder = Regex::new(r"\[[A-Z][A-Z0-9_]*\]").expect("placeholder");
        Ok(SectionExtractor {
            header,
            terminator,
            placeholder,
        })
    }

    /// Extract the therapeutic-procedures section, or `None` when no header
    /// matches. The returned text is a trimmed contiguous slice of the note.
    pub fn extract(&self, note: &NoteFile) -> Option<Section> {
        let m = self.header.find(&note.text)?;
        let after_header = match note.text[m.end()..].find('\n') {
            Some(nl) => m.end() + nl + 1,
            None => note.text.len(),
        };
        let body_end = self
            .terminator
            .find(&note.text[after_header..])
            .map(|t| after_header + t.start())
            .unwrap_or(note.text.len());
        let body = note.text[after_header..body_end].trim();
        let placeholder_count = self.placeholder.find_iter(body).count();
        Some(Section {
            doc_id: doc_id_from_filename(&note.filename),
            text: body.to_string(),
            source_filename: note.filename.clone(),
            placeholder_count,
        })
    }
}

/// File stem used as a section's document id.
pub fn doc_id_from_filename(filename: &str) -> String {
    let base = filename.rsplit(['/', '\\']).next().unwrap_or(filename);
    match base.rsplit_once('.') {
        Some((stem, _)) if !stem.is_empty() => stem.to_string(),
        _ => base.to_string(),
    }
}

/// Split a section into enumerated exercise sequences. The enumerator is a
/// line-initial integer followed by ':', '.', or ')'; items whose body is
/// empty after trimming are skipped. Offsets are char offsets into the
/// section text.
pub fn segment_sequences(section: &Section) -> Vec<Sequence> {
    let enumerator = Regex::new(r"(?m)^[ \t]*(\d+)([:.)])").expect("enumerator");
    let text = &section.text;
    let map = OffsetMap::new(text);
    let matches: Vec<(usize, usize, String)> = enumerator
        .captures_iter(text)
        .map(|c| {
            let whole = c.get(0).unwrap();
            (whole.start(), whole.end(), c[1].to_string())
        })
        .collect();

    let mut out = Vec::new();
    for (i, (_, enum_end, label)) in matches.iter().enumerate() {
        let item_end = matches
            .get(i + 1)
            .map(|next| next.0)
            .unwrap_or(text.len());
        let raw = &text[*enum_end..item_end];
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lead = raw.len() - raw.trim_start().len();
        let body_start_byte = enum_end + lead;
        let body_end_byte = body_start_byte + trimmed.len();
        out.push(Sequence {
            section_id: section.doc_id.clone(),
            index: out.len(),
            label_number: label.clone(),
            text: trimmed.to_string(),
            start: map.char_of_byte(body_start_byte),
            end: map.char_of_byte(body_end_byte),
        });
    }
    out
}

/// True when `keyword` occurs in `lower_text` (already lowercased) with
/// non-letter characters (or string edges) on both sides. Digits count as
/// boundaries so "x" hits "x10".
fn keyword_occurs(lower_text: &str, keyword: &str) -> bool {
    for (at, _) in lower_text.match_indices(keyword) {
        let before_ok = lower_text[..at]
            .chars()
            .next_back()
            .map_or(true, |c| !c.is_alphabetic());
        let after_ok = lower_text[at + keyword.len()..]
            .chars()
            .next()
            .map_or(true, |c| !c.is_alphabetic());
        if before_ok && after_ok {
            return true;
        }
    }
    false
}

/// Count of scoring categories with at least one keyword hit in the section.
pub fn enrichment_score(section: &Section, ontology: &Ontology) -> Result<u32, IngestError> {
    let scoring: Vec<_> = ontology.scoring_categories().collect();
    if scoring.len() != 9 {
        return Err(IngestError::Config(format!(
            "enrichment scoring needs exactly 9 scoring categories, ontology has {}",
            scoring.len()
        )));
    }
    let lower = section.text.to_lowercase();
    let mut score = 0;
    for cat in scoring {
        if cat.keywords.iter().any(|kw| keyword_occurs(&lower, kw)) {
            score += 1;
        }
    }
    Ok(score)
}

/// Pick the enriched and random candidate annotation sets.
///
/// Enriched: every score-9 section plus a seeded draw of score-8 sections up
/// to `n_enriched` (if score-9 sections alone exceed it, a seeded draw of
/// those). Random: a seeded draw of `n_random` sections of length at least
/// `min_len` chars, disjoint from the enriched set.
pub fn select_candidate_sets(
    sections: &[Section],
    ontology: &Ontology,
    n_enriched: usize,
    n_random: usize,
    min_len: usize,
    seed: u64,
) -> Result<(Vec<Section>, Vec<Section>), IngestError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let scores: Vec<u32> = sections
        .iter()
        .map(|s| enrichment_score(s, ontology))
        .collect::<Result<_, _>>()?;

    let nines: Vec<usize> = (0..sections.len()).filter(|&i| scores[i] == 9).collect();
    let eights: Vec<usize> = (0..sections.len()).filter(|&i| scores[i] == 8).collect();

    let mut enriched_idx: Vec<usize> = if nines.len() >= n_enriched {
        sample_sorted(&mut rng, &nines, n_enriched)
    } else {
        let fill = n_enriched - nines.len();
        if eights.len() < fill {
            return Err(IngestError::InsufficientSections {
                which: "enriched (score 9 plus score 8)",
                need: n_enriched,
                pool: nines.len() + eights.len(),
            });
        }
        let mut chosen = nines.clone();
        chosen.extend(sample_sorted(&mut rng, &eights, fill));
        chosen.sort_unstable();
        chosen
    };
    enriched_idx.sort_unstable();

    let taken: std::collections::BTreeSet<usize> = enriched_idx.iter().copied().collect();
    let pool: Vec<usize> = (0..sections.len())
        .filter(|i| !taken.contains(i) && crate::span::char_len(&sections[*i].text) >= min_len)
        .collect();
    if pool.len() < n_random {
        return Err(IngestError::InsufficientSections {
            which: "random (length floor)",
            need: n_random,
            pool: pool.len(),
        });
    }
    let random_idx = sample_sorted(&mut rng, &pool, n_random);

    let enriched = enriched_idx.iter().map(|&i| sections[i].clone()).collect();
    let random = random_idx.iter().map(|&i| sections[i].clone()).collect();
    Ok((enriched, random))
}

/// Seeded k-of-n draw returning the chosen values of `from` in ascending order.
fn sample_sorted(rng: &mut ChaCha12Rng, from: &[usize], k: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, from.len(), k)
        .into_iter()
        .map(|i| from[i])
        .collect();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    fn note(filename: &str, text: &str) -> NoteFile {
        NoteFile {
            filename: filename.into(),
            text: text.into(),
        }
    }

    fn section(text: &str) -> Section {
        Section {
            doc_id: "s1".into(),
            text: text.into(),
            source_filename: "s1.txt".into(),
            placeholder_count: 0,
        }
    }

    #[test]
    fn filename_filter_is_case_sensitive_substring() {
        let files = vec![
            note("PT_THERAPY_001.txt", ""),
            note("CARDIOLOGY_002.txt", ""),
            note("therapy_003.txt", ""),
        ];
        let kept = filter_note_files(files);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].filename, "PT_THERAPY_001.txt");
        assert!(filter_note_files(vec![]).is_empty());
    }

    #[test]
    fn extracts_section_between_header_and_next_header() {
        let ex = SectionExtractor::default();
        let n = note(
            "PT_THERAPY_1.txt",
            "SUBJECTIVE:\nfeeling ok\nTHERAPEUTIC PROCEDURES:\n1: squats 2x10\nASSESSMENT:\nimproving\n",
        );
        let s = ex.extract(&n).expect("section");
        assert_eq!(s.text, "1: squats 2x10");
        assert_eq!(s.doc_id, "PT_THERAPY_1");
    }

    #[test]
    fn missing_header_yields_none() {
        let ex = SectionExtractor::default();
        assert!(ex.extract(&note("a.txt", "PLAN:\nrest\n")).is_none());
    }

    #[test]
    fn section_runs_to_end_of_note_without_terminator() {
        let ex = SectionExtractor::default();
        let n = note("t_THERAPY.txt", "THERAPEUTIC PROCEDURES\n1: rows x10\n2: marching x20\n");
        let s = ex.extract(&n).unwrap();
        assert_eq!(s.text, "1: rows x10\n2: marching x20");
    }

    #[test]
    fn placeholders_are_counted_but_retained() {
        let ex = SectionExtractor::default();
        let n = note(
            "THERAPY.txt",
            "THERAPEUTIC PROCEDURES:\n7: [PERSONALNAME] maze - AROM LUE - 3 rep\n",
        );
        let s = ex.extract(&n).unwrap();
        assert_eq!(s.placeholder_count, 1);
        assert!(s.text.contains("[PERSONALNAME]"));
    }

    #[test]
    fn segments_enumerated_items() {
        let s = section("1: squats 2x10\n2: SLR- 2x10 deferred to HEP");
        let seqs = segment_sequences(&s);
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[1].text, "SLR- 2x10 deferred to HEP");
        assert_eq!(seqs[1].label_number, "2");
        for q in &seqs {
            assert_eq!(crate::span::char_slice(&s.text, q.start, q.end), q.text);
        }
    }

    #[test]
    fn unnumbered_text_has_no_sequences() {
        assert!(segment_sequences(&section("free text with no numbering")).is_empty());
    }

    #[test]
    fn empty_items_are_skipped_and_indices_stay_dense() {
        let seqs = segment_sequences(&section("1:\n2: heel raises x10"));
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].index, 0);
        assert_eq!(seqs[0].label_number, "2");
        assert_eq!(seqs[0].text, "heel raises x10");
    }

    #[test]
    fn multiline_item_bodies_extend_to_next_enumerator() {
        let seqs = segment_sequences(&section("1: rows x10\n   with green band\n2. marching"));
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].text, "rows x10\n   with green band");
        assert_eq!(seqs[1].label_number, "2");
    }

    #[test]
    fn enrichment_score_counts_categories() {
        let ont = Ontology::default_shipped();
        // hand count against the shipped keyword table: Motion (arom),
        // Side (left), Location (shoulder), Plane (flexion), Reps (x) = 5
        let s = section("AROM left shoulder flexion x10");
        assert_eq!(enrichment_score(&s, &ont).unwrap(), 5);
        assert_eq!(enrichment_score(&section(""), &ont).unwrap(), 0);
    }

    #[test]
    fn enrichment_score_hits_all_nine() {
        let ont = Ontology::default_shipped();
        let s = section(
            "AROM left shoulder flexion x10, 2 sets, 5 min, strength work, gait training",
        );
        assert_eq!(enrichment_score(&s, &ont).unwrap(), 9);
    }

    #[test]
    fn enrichment_requires_nine_scoring_categories() {
        let ont = Ontology::from_json(
            r#"{"version":"1","categories":[
                {"name":"Plane of Motion","kind":"enumerated","keywords":["flexion"],
                 "concepts":[{"id":"plane_flexion","display_name":"Flexion"}]}]}"#,
        )
        .unwrap();
        assert!(matches!(
            enrichment_score(&section("flexion"), &ont),
            Err(IngestError::Config(_))
        ));
    }

    #[test]
    fn keyword_match_respects_letter_boundaries() {
        assert!(keyword_occurs("arom x10", "x"));
        assert!(!keyword_occurs("ext/flex", "x"));
        assert!(!keyword_occurs("from the mat", "rom"));
        assert!(keyword_occurs("passive rom today", "rom"));
        assert!(keyword_occurs("range of motion work", "range of motion"));
    }

    fn numbered_sections(n: usize, text: &str) -> Vec<Section> {
        (0..n)
            .map(|i| Section {
                doc_id: format!("s{i}"),
                text: text.to_string(),
                source_filename: format!("s{i}.txt"),
                placeholder_count: 0,
            })
            .collect()
    }

    #[test]
    fn candidate_selection_is_deterministic_and_disjoint() {
        let ont = Ontology::default_shipped();
        let rich = "AROM left shoulder flexion x10, 2 sets, 5 min, strength work, gait training";
        let plain = "1: rows with band, steady pacing and light cueing throughout the session today \
                     plus extra detail to clear the length floor for the random candidate pool.";
        let mut sections = numbered_sections(20, rich);
        for (i, s) in numbered_sections(40, plain).into_iter().enumerate() {
            let mut s = s;
            s.doc_id = format!("p{i}");
            sections.push(s);
        }
        let (e1, r1) = select_candidate_sets(&sections, &ont, 10, 10, 60, 7).unwrap();
        let (e2, r2) = select_candidate_sets(&sections, &ont, 10, 10, 60, 7).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(r1, r2);
        assert_eq!(e1.len(), 10);
        assert_eq!(r1.len(), 10);
        let eids: std::collections::BTreeSet<_> = e1.iter().map(|s| &s.doc_id).collect();
        assert!(r1.iter().all(|s| !eids.contains(&s.doc_id)));
    }

    #[test]
    fn candidate_selection_errors_on_small_pool() {
        let ont = Ontology::default_shipped();
        let rich = "AROM left shoulder flexion x10, 2 sets, 5 min, strength work, gait training";
        let sections = numbered_sections(10, rich);
        let err = select_candidate_sets(&sections, &ont, 300, 0, 200, 1).unwrap_err();
        assert!(matches!(err, IngestError::InsufficientSections { .. }));
    }
}
