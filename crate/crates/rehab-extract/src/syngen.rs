//! Seeded synthetic-corpus generator: therapy-procedure sections assembled
//! from templated exercise items, with gold spans recorded at insertion time.
//!
//! The phrasebook maps concept ids to surface strings; an entry may carry
//! extra nested spans when a surface contains another concept ("UE
//! strengthening" nests an upper-extremity mention). Noise runs after span
//! bookkeeping: word-level typos (dropped final letter, dropped interior
//! letter, first-letter abbreviation) and de-identification placeholders over
//! dedicated name slots, with span offsets adjusted and destroyed spans
//! dropped and logged.

use crate::goldstore::{GoldCorpus, GoldError, Origin, SequenceKey, SpanAnnotation};
use crate::ingest::{Section, Sequence};
use crate::ontology::Ontology;
use crate::span::char_len;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

pub const PHRASEBOOK_SCHEMA_VERSION: &str = "1";

pub const DEFAULT_PHRASEBOOK_JSON: &str = include_str!("../assets/phrasebook.json");
/// Alternative surfaces kept out of the shipped rules, for robustness tests.
pub const HELDOUT_PHRASEBOOK_JSON: &str = include_str!("../assets/phrasebook_heldout.json");

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("generator config error: {0}")]
    Config(String),
    #[error("phrasebook parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("failed to read phrasebook: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Gold(#[from] GoldError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtraSpan {
    pub concept_id: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PhraseEntrySpec {
    Plain(String),
    WithExtras {
        text: String,
        #[serde(default)]
        extra: Vec<ExtraSpan>,
    },
}

#[derive(Debug, Clone)]
pub struct PhraseEntry {
    pub text: String,
    pub extra: Vec<ExtraSpan>,
}

/// Concept id -> surface strings used by the generator.
#[derive(Debug, Clone, Default)]
pub struct Phrasebook {
    entries: BTreeMap<String, Vec<PhraseEntry>>,
}

impl Phrasebook {
    pub fn from_json(text: &str) -> Result<Phrasebook, SynthError> {
        let raw: BTreeMap<String, Vec<PhraseEntrySpec>> = serde_json::from_str(text)?;
        let mut entries = BTreeMap::new();
        for (concept, specs) in raw {
            let list: Vec<PhraseEntry> = specs
                .into_iter()
                .map(|s| match s {
                    PhraseEntrySpec::Plain(text) => PhraseEntry { text, extra: Vec::new() },
                    PhraseEntrySpec::WithExtras { text, extra } => PhraseEntry { text, extra },
                })
                .collect();
            if list.is_empty() {
                return Err(SynthError::Config(format!(
                    "phrasebook concept {concept:?} has no surfaces"
                )));
            }
            entries.insert(concept, list);
        }
        Ok(Phrasebook { entries })
    }

    pub fn load(path: &Path) -> Result<Phrasebook, SynthError> {
        Phrasebook::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn default_shipped() -> Phrasebook {
        Phrasebook::from_json(DEFAULT_PHRASEBOOK_JSON).expect("shipped phrasebook parses")
    }

    /// The shipped phrasebook with held-out variant surfaces swapped in.
    pub fn heldout_shipped() -> Phrasebook {
        let mut pb = Phrasebook::default_shipped();
        let overrides = Phrasebook::from_json(HELDOUT_PHRASEBOOK_JSON).expect("heldout parses");
        for (concept, list) in overrides.entries {
            pb.entries.insert(concept, list);
        }
        pb
    }

    pub fn concepts(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    /// The first surface listed for a concept, if any.
    pub fn first_surface(&self, concept: &str) -> Option<&str> {
        self.entries
            .get(concept)
            .and_then(|v| v.first())
            .map(|e| e.text.as_str())
    }

    pub fn surfaces(&self, concept: &str) -> &[PhraseEntry] {
        self.entries
            .get(concept)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn validate(&self, ontology: &Ontology) -> Result<(), SynthError> {
        for (concept, list) in &self.entries {
            if !ontology.contains(concept) {
                return Err(SynthError::Config(format!(
                    "phrasebook concept {concept:?} not in ontology"
                )));
            }
            for e in list {
                let n = char_len(&e.text);
                if e.text.trim().is_empty() {
                    return Err(SynthError::Config(format!(
                        "empty surface for {concept:?}"
                    )));
                }
                for x in &e.extra {
                    if !ontology.contains(&x.concept_id) {
                        return Err(SynthError::Config(format!(
                            "extra span concept {:?} not in ontology",
                            x.concept_id
                        )));
                    }
                    if x.start >= x.end || x.end > n {
                        return Err(SynthError::Config(format!(
                            "extra span [{}, {}) out of bounds in {:?}",
                            x.start, x.end, e.text
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub typo_rate: f64,
    pub placeholder_rate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            typo_rate: 0.0,
            placeholder_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_sections: usize,
    pub items_min: usize,
    pub items_max: usize,
    pub phrasebook: Phrasebook,
    pub noise: NoiseConfig,
    /// Minimum positive sequences per concept; extra targeted sections are
    /// appended until each is met.
    pub required_support: BTreeMap<String, usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 42,
            n_sections: 300,
            items_min: 4,
            items_max: 8,
            phrasebook: Phrasebook::default_shipped(),
            noise: NoiseConfig::default(),
            required_support: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ItemTrace {
    pub section_id: String,
    pub seq_index: usize,
    pub template: &'static str,
}

#[derive(Debug, Default, Serialize)]
pub struct GenerationTrace {
    pub items: Vec<ItemTrace>,
    pub dropped_spans: Vec<String>,
    pub name_slots_total: usize,
    pub name_slots_replaced: usize,
    pub words_seen: usize,
    pub words_mutated: usize,
}

pub struct SyntheticCorpus {
    pub corpus: GoldCorpus,
    pub trace: GenerationTrace,
}

#[derive(Debug, Clone)]
struct RawSpan {
    concept_id: String,
    start: usize,
    end: usize,
    numeric_value: Option<i64>,
}

#[derive(Debug, Clone, Default)]
struct Fragment {
    text: String,
    chars: usize,
    spans: Vec<RawSpan>,
    name_slots: Vec<(usize, usize)>,
}

impl Fragment {
    fn push_str(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += char_len(s);
    }

    fn push_span(&mut self, concept: &str, s: &str, numeric_value: Option<i64>) {
        let start = self.chars;
        self.push_str(s);
        self.spans.push(RawSpan {
            concept_id: concept.to_string(),
            start,
            end: self.chars,
            numeric_value,
        });
    }

    fn push_entry(&mut self, concept: &str, entry: &PhraseEntry) {
        let base = self.chars;
        self.push_span(concept, &entry.text, None);
        for x in &entry.extra {
            self.spans.push(RawSpan {
                concept_id: x.concept_id.clone(),
                start: base + x.start,
                end: base + x.end,
                numeric_value: None,
            });
        }
    }

    fn push_name_slot(&mut self, s: &str) {
        let start = self.chars;
        self.push_str(s);
        self.name_slots.push((start, self.chars));
    }
}

// slot families and what draws them
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Motion,
    Side,
    Loc,
    Plane,
    Purpose,
    Extype,
    Pos,
    Desc,
    Duration,
    SetsReps,
}

fn family_of(ontology: &Ontology, concept: &str) -> Option<Family> {
    let entry = ontology.lookup_concept(concept).ok()?;
    match entry.category.as_str() {
        "Type of Motion" => Some(Family::Motion),
        "Side of Body" => Some(Family::Side),
        "Location on Body" => Some(Family::Loc),
        "Plane of Motion" => Some(Family::Plane),
        "Exercise Purpose" => Some(Family::Purpose),
        "Exercise Type" => Some(Family::Extype),
        "Body Position" => Some(Family::Pos),
        "Description" => Some(Family::Desc),
        "Duration" => Some(Family::Duration),
        "Sets" | "Reps" => Some(Family::SetsReps),
        _ => None,
    }
}

const MOTION: &[(&str, u32)] = &[
    ("rom_active", 35),
    ("rom_passive", 25),
    ("rom_active_assisted", 20),
    ("rom_general", 20),
];
const SIDE: &[(&str, u32)] = &[
    ("side_right", 30),
    ("side_left", 30),
    ("side_bilateral", 25),
    ("side_unilateral", 6),
    ("side_contralateral", 5),
    ("side_ipsilateral", 4),
];
const LOC: &[(&str, u32)] = &[
    ("loc_shoulder", 12),
    ("loc_knee", 12),
    ("loc_hip", 10),
    ("loc_upper_extremity", 9),
    ("loc_lower_extremity", 9),
    ("loc_wrist", 8),
    ("loc_elbow", 8),
    ("loc_ankle", 8),
    ("loc_hand", 8),
    ("loc_forearm", 6),
    ("loc_scapula", 5),
    ("loc_thigh", 5),
];
const PLANE: &[(&str, u32)] = &[
    ("plane_flexion", 14),
    ("plane_extension", 14),
    ("plane_abduction", 10),
    ("plane_adduction", 8),
    ("plane_internal_rotation", 8),
    ("plane_external_rotation", 8),
    ("plane_anterior", 6),
    ("plane_backward", 8),
    ("plane_forward", 8),
    ("plane_lateral", 8),
    ("plane_supination", 4),
    ("plane_pronation", 4),
];
const PURPOSE: &[(&str, u32)] = &[
    ("purpose_strength", 50),
    ("purpose_fine_motor", 15),
    ("purpose_motor_control", 15),
    ("purpose_perception", 10),
    ("purpose_simulated", 10),
];
const EXTYPE: &[(&str, u32)] = &[
    ("extype_gait_training", 22),
    ("extype_balance_vestibular", 22),
    ("extype_upper_extremity_strength", 13),
    ("extype_lower_extremity_strength", 13),
    ("extype_flexibility_mobility", 8),
    ("extype_functional_mobility", 8),
    ("extype_trunk_core_strength", 7),
    ("extype_scapular_strength", 7),
];
const POS: &[(&str, u32)] = &[
    ("pos_weight_bearing", 26),
    ("pos_non_weight_bearing", 26),
    ("pos_supine", 12),
    ("pos_seated", 12),
    ("pos_prone", 6),
    ("pos_standing", 6),
    ("pos_side_lying", 6),
    ("pos_single_leg", 6),
];

const EXERCISE_NAMES: &[&str] = &[
    "SLR",
    "squats",
    "heel raises",
    "bridges",
    "rows",
    "wall slides",
    "step ups",
    "pegboard task",
    "putty exercises",
    "marching",
    "mini squats",
    "bicep curls",
    "reaching task",
];
const EQUIPMENT: &[&str] = &[
    "theraband",
    "dowel rod",
    "bosu",
    "wobble board",
    "foam roller",
    "weighted ball",
];
const PERSON_NAMES: &[&str] = &["Smith", "Jones", "Garcia", "Chen", "Taylor"];
const PLACEHOLDERS: &[&str] = &["[PERSONALNAME]", "[ADDRESS]", "[DATE]"];

const TEMPLATES: &[(&'static str, u32)] = &[
    ("motion-side-loc-plane", 32),
    ("exercise-sets", 12),
    ("extype-equip-duration", 18),
    ("pos-loc-exercise", 16),
    ("motion-plane", 8),
    ("purpose-exercise", 8),
    ("name-maze", 4),
    ("extype-duration", 2),
];

struct Generator<'a> {
    rng: ChaCha12Rng,
    pb: &'a Phrasebook,
    trace: GenerationTrace,
}

impl<'a> Generator<'a> {
    fn weighted<'t>(&mut self, table: &[(&'t str, u32)]) -> &'t str {
        let total: u32 = table.iter().map(|(_, w)| w).sum();
        let mut roll = self.rng.gen_range(0..total);
        for (item, w) in table {
            if roll < *w {
                return item;
            }
            roll -= w;
        }
        table.last().expect("non-empty table").0
    }

    fn pick<'t>(&mut self, list: &'t [&'t str]) -> &'t str {
        list[self.rng.gen_range(0..list.len())]
    }

    fn slot(&mut self, frag: &mut Fragment, table: &[(&str, u32)], forced: Option<&str>) {
        let concept = match forced {
            Some(c) => c,
            None => self.weighted(table),
        };
        let surfaces = self.pb.surfaces(concept);
        if surfaces.is_empty() {
            return;
        }
        let entry = surfaces[self.rng.gen_range(0..surfaces.len())].clone();
        frag.push_entry(concept, &entry);
    }

    fn sets_reps(&mut self, frag: &mut Fragment) {
        let sets = self.rng.gen_range(2..=4i64);
        let reps = self.rng.gen_range(5..=15i64);
        match self.rng.gen_range(0..100u32) {
            0..=44 => {
                let s = format!("{sets}x{reps}");
                let start = frag.chars;
                frag.push_str(&s);
                frag.spans.push(RawSpan {
                    concept_id: "sets".into(),
                    start,
                    end: frag.chars,
                    numeric_value: Some(sets),
                });
                frag.spans.push(RawSpan {
                    concept_id: "reps".into(),
                    start,
                    end: frag.chars,
                    numeric_value: Some(reps),
                });
            }
            45..=64 => {
                frag.push_span("reps", &format!("x{reps}"), Some(reps));
            }
            65..=84 => {
                let word = if self.rng.gen_bool(0.2) { "rep" } else { "reps" };
                frag.push_span("reps", &format!("{reps} {word}"), Some(reps));
            }
            _ => {
                frag.push_span("sets", &format!("{sets} sets"), Some(sets));
                frag.push_str(" of ");
                frag.push_span("reps", &format!("{reps} reps"), Some(reps));
            }
        }
    }

    fn duration(&mut self, frag: &mut Fragment) {
        let minutes = self.rng.gen_range(1..=15i64);
        let seconds = 5 * self.rng.gen_range(2..=12i64);
        match self.rng.gen_range(0..100u32) {
            0..=39 => frag.push_span("duration", &format!("{minutes} min"), Some(minutes * 60)),
            40..=54 => {
                frag.push_span("duration", &format!("{minutes} minutes"), Some(minutes * 60))
            }
            55..=79 => frag.push_span("duration", &format!("{seconds} sec"), Some(seconds)),
            80..=89 => frag.push_span("duration", &format!("{seconds} seconds"), Some(seconds)),
            90..=94 => frag.push_span("duration", &format!("{minutes}'"), Some(minutes * 60)),
            _ => frag.push_span("duration", &format!("{seconds}\""), Some(seconds)),
        }
    }

    fn entry_of(&mut self, concept: &str) -> Option<PhraseEntry> {
        let surfaces = self.pb.surfaces(concept);
        if surfaces.is_empty() {
            return None;
        }
        Some(surfaces[self.rng.gen_range(0..surfaces.len())].clone())
    }

    /// Performed / deferred / home-program status clause.
    fn status(&mut self, frag: &mut Fragment, forced: Option<&str>) {
        let kind = match forced {
            Some("desc_performed_in_office") => 0,
            Some("desc_not_performed") => 1,
            Some("desc_home_exercise_program") => 2,
            _ => {
                if self.rng.gen_bool(0.55) {
                    0
                } else {
                    match self.rng.gen_range(0..100u32) {
                        0..=39 => 3, // "deferred to HEP" style composite
                        40..=79 => 1,
                        _ => 2,
                    }
                }
            }
        };
        match kind {
            0 => {
                if let Some(e) = self.entry_of("desc_performed_in_office") {
                    frag.push_entry("desc_performed_in_office", &e);
                }
            }
            1 => {
                if let Some(e) = self.entry_of("desc_not_performed") {
                    frag.push_entry("desc_not_performed", &e);
                }
            }
            2 => {
                frag.push_str("issued ");
                if let Some(e) = self.entry_of("desc_home_exercise_program") {
                    frag.push_entry("desc_home_exercise_program", &e);
                }
            }
            _ => {
                if let Some(e) = self.entry_of("desc_not_performed") {
                    frag.push_entry("desc_not_performed", &e);
                }
                frag.push_str(" to ");
                if let Some(e) = self.entry_of("desc_home_exercise_program") {
                    frag.push_entry("desc_home_exercise_program", &e);
                }
            }
        }
    }

    /// One exercise item. `forced` pins one slot to a specific concept and
    /// selects a template that carries that slot.
    fn item(&mut self, ontology: &Ontology, forced: Option<&str>) -> (Fragment, &'static str) {
        let template = match forced.and_then(|c| family_of(ontology, c)) {
            Some(Family::Motion) | Some(Family::Side) | Some(Family::Loc)
            | Some(Family::Plane) | Some(Family::SetsReps) => "motion-side-loc-plane",
            Some(Family::Purpose) => "purpose-exercise",
            Some(Family::Extype) | Some(Family::Duration) => "extype-equip-duration",
            Some(Family::Pos) => "pos-loc-exercise",
            Some(Family::Desc) => "exercise-sets",
            None => self.weighted(TEMPLATES),
        };
        let f = |fam: Family| -> Option<&str> {
            forced.filter(|c| family_of(ontology, c) == Some(fam))
        };

        let mut frag = Fragment::default();
        match template {
            "motion-side-loc-plane" => {
                self.slot(&mut frag, MOTION, f(Family::Motion));
                frag.push_str(" ");
                self.slot(&mut frag, SIDE, f(Family::Side));
                frag.push_str(" ");
                self.slot(&mut frag, LOC, f(Family::Loc));
                frag.push_str(" ");
                self.slot(&mut frag, PLANE, f(Family::Plane));
                frag.push_str(" - ");
                self.sets_reps(&mut frag);
                if self.rng.gen_bool(0.3) {
                    frag.push_str(" ");
                    self.status(&mut frag, None);
                }
            }
            "exercise-sets" => {
                let name = self.pick(EXERCISE_NAMES);
                frag.push_str(name);
                frag.push_str(" - ");
                self.sets_reps(&mut frag);
                if forced.is_some() || self.rng.gen_bool(0.5) {
                    frag.push_str(" ");
                    self.status(&mut frag, f(Family::Desc));
                }
            }
            "extype-equip-duration" => {
                self.slot(&mut frag, EXTYPE, f(Family::Extype));
                frag.push_str(" with ");
                let equip = self.pick(EQUIPMENT);
                frag.push_name_slot(equip);
                frag.push_str(" ");
                self.duration(&mut frag);
            }
            "pos-loc-exercise" => {
                self.slot(&mut frag, POS, f(Family::Pos));
                frag.push_str(" ");
                self.slot(&mut frag, LOC, f(Family::Loc));
                frag.push_str(" ");
                let name = self.pick(EXERCISE_NAMES);
                frag.push_str(name);
                frag.push_str(" ");
                self.sets_reps(&mut frag);
                if self.rng.gen_bool(0.2) {
                    frag.push_str(" ");
                    self.status(&mut frag, None);
                }
            }
            "motion-plane" => {
                self.slot(&mut frag, MOTION, None);
                frag.push_str(" ");
                self.slot(&mut frag, PLANE, None);
                frag.push_str(" ");
                self.sets_reps(&mut frag);
            }
            "purpose-exercise" => {
                self.slot(&mut frag, PURPOSE, f(Family::Purpose));
                frag.push_str(" work - ");
                let name = self.pick(EXERCISE_NAMES);
                frag.push_str(name);
                frag.push_str(" ");
                self.sets_reps(&mut frag);
            }
            "name-maze" => {
                let person = self.pick(PERSON_NAMES);
                frag.push_name_slot(person);
                frag.push_str(" maze - ");
                self.slot(&mut frag, MOTION, None);
                frag.push_str(" ");
                self.slot(&mut frag, SIDE, None);
                frag.push_str(" ");
                self.slot(&mut frag, LOC, None);
                frag.push_str(" - ");
                self.sets_reps(&mut frag);
            }
            "extype-duration" => {
                self.slot(&mut frag, EXTYPE, None);
                frag.push_str(" - ");
                self.duration(&mut frag);
            }
            other => unreachable!("unknown template {other}"),
        }
        (frag, template)
    }

    /// Word-level typos: drop last letter, drop an interior letter, or
    /// abbreviate to the first letter. Alphabetic words of 4+ chars only;
    /// bracketed placeholder tokens are left alone.
    fn apply_typos(&mut self, frag: &mut Fragment, rate: f64) {
        if rate <= 0.0 {
            return;
        }
        let chars: Vec<char> = frag.text.chars().collect();
        let mut edits: Vec<(usize, usize, String)> = Vec::new();
        let mut i = 0;
        let mut depth = 0usize;
        while i < chars.len() {
            let c = chars[i];
            if c == '[' {
                depth += 1;
                i += 1;
                continue;
            }
            if c == ']' {
                depth = depth.saturating_sub(1);
                i += 1;
                continue;
            }
            if c.is_alphabetic() && depth == 0 {
                let start = i;
                while i < chars.len() && chars[i].is_alphabetic() {
                    i += 1;
                }
                let len = i - start;
                if len >= 4 {
                    self.trace.words_seen += 1;
                    if self.rng.gen_bool(rate) {
                        self.trace.words_mutated += 1;
                        let edit = match self.rng.gen_range(0..4u32) {
                            0 | 1 => (i - 1, i, String::new()),
                            2 => {
                                let k = start + self.rng.gen_range(1..len - 1);
                                (k, k + 1, String::new())
                            }
                            _ => (start + 1, i, String::new()),
                        };
                        edits.push(edit);
                    }
                }
                continue;
            }
            i += 1;
        }
        self.apply_edits(frag, &edits);
    }

    fn apply_placeholders(&mut self, frag: &mut Fragment, rate: f64) {
        let slots = frag.name_slots.clone();
        self.trace.name_slots_total += slots.len();
        if rate <= 0.0 {
            return;
        }
        let mut edits = Vec::new();
        for (s, e) in slots {
            if self.rng.gen_bool(rate) {
                let token = self.pick(PLACEHOLDERS);
                edits.push((s, e, token.to_string()));
                self.trace.name_slots_replaced += 1;
            }
        }
        self.apply_edits(frag, &edits);
    }

    /// Apply char-range edits right-to-left, shifting span and slot offsets.
    /// Spans that partially overlap an edit are destroyed and logged.
    fn apply_edits(&mut self, frag: &mut Fragment, edits: &[(usize, usize, String)]) {
        if edits.is_empty() {
            return;
        }
        let mut ordered: Vec<&(usize, usize, String)> = edits.iter().collect();
        ordered.sort_by_key(|(s, _, _)| std::cmp::Reverse(*s));
        let mut chars: Vec<char> = frag.text.chars().collect();
        for (s, e, rep) in ordered {
            let rep_chars: Vec<char> = rep.chars().collect();
            let delta = rep_chars.len() as isize - (*e - *s) as isize;
            chars.splice(*s..*e, rep_chars);
            let mut kept = Vec::with_capacity(frag.spans.len());
            for mut span in frag.spans.drain(..) {
                if span.end <= *s {
                    kept.push(span);
                } else if span.start >= *e {
                    span.start = (span.start as isize + delta) as usize;
                    span.end = (span.end as isize + delta) as usize;
                    kept.push(span);
                } else if *s >= span.start && *e <= span.end {
                    span.end = (span.end as isize + delta) as usize;
                    if span.start < span.end {
                        kept.push(span);
                    } else {
                        self.trace
                            .dropped_spans
                            .push(format!("{} span emptied by an edit", span.concept_id));
                    }
                } else {
                    self.trace.dropped_spans.push(format!(
                        "{} span destroyed by an edit crossing its boundary",
                        span.concept_id
                    ));
                }
            }
            frag.spans = kept;
            let mut slots = Vec::with_capacity(frag.name_slots.len());
            for (mut ss, mut se) in frag.name_slots.drain(..) {
                if se <= *s {
                    slots.push((ss, se));
                } else if ss >= *e {
                    ss = (ss as isize + delta) as usize;
                    se = (se as isize + delta) as usize;
                    slots.push((ss, se));
                } else {
                    // the edit rewrote this slot; keep the rewritten range
                    let ns = ss.min(*s);
                    let ne = (*e as isize + delta).max(ns as isize + 1) as usize;
                    slots.push((ns, ne));
                }
            }
            frag.name_slots = slots;
        }
        frag.text = chars.iter().collect();
        frag.chars = chars.len();
    }
}

/// Generate a synthetic corpus. Deterministic for a given config and seed;
/// the output always passes gold validation.
pub fn generate_corpus(
    config: &GeneratorConfig,
    ontology: &Ontology,
) -> Result<SyntheticCorpus, SynthError> {
    if !(0.0..=1.0).contains(&config.noise.typo_rate)
        || !(0.0..=1.0).contains(&config.noise.placeholder_rate)
    {
        return Err(SynthError::Config("noise rates must lie in [0, 1]".into()));
    }
    if config.items_min == 0 || config.items_min > config.items_max {
        return Err(SynthError::Config(
            "items_per_section range must be non-empty".into(),
        ));
    }
    config.phrasebook.validate(ontology)?;
    for concept in config.required_support.keys() {
        if family_of(ontology, concept).is_none() {
            return Err(SynthError::Config(format!(
                "cannot target support for concept {concept:?}"
            )));
        }
    }

    let mut generator = Generator {
        rng: ChaCha12Rng::seed_from_u64(config.seed),
        pb: &config.phrasebook,
        trace: GenerationTrace::default(),
    };
    let mut corpus = GoldCorpus {
        sections: Vec::new(),
        sequences: Vec::new(),
        annotations: Vec::new(),
        split: BTreeMap::new(),
        origin: BTreeMap::new(),
    };

    for i in 0..config.n_sections {
        let id = format!("synth-{i:04}");
        let n_items = generator
            .rng
            .gen_range(config.items_min..=config.items_max);
        emit_section(&mut generator, &mut corpus, ontology, config, &id, n_items, None);
    }

    // top up requested per-concept support with targeted sections
    let mut extra = 0usize;
    for (concept, want) in &config.required_support {
        loop {
            let have = positive_sequences(&corpus, concept);
            if have >= *want {
                break;
            }
            let id = format!("synth-x{extra:03}");
            extra += 1;
            let n_items = (*want - have).clamp(config.items_min, config.items_max);
            emit_section(
                &mut generator,
                &mut corpus,
                ontology,
                config,
                &id,
                n_items,
                Some(concept),
            );
        }
    }

    corpus.validate(ontology)?;
    Ok(SyntheticCorpus {
        corpus,
        trace: generator.trace,
    })
}

fn positive_sequences(corpus: &GoldCorpus, concept: &str) -> usize {
    let set: BTreeSet<&SequenceKey> = corpus
        .annotations
        .iter()
        .filter(|a| a.concept_id == concept)
        .map(|a| &a.sequence)
        .collect();
    set.len()
}

fn emit_section(
    generator: &mut Generator,
    corpus: &mut GoldCorpus,
    ontology: &Ontology,
    config: &GeneratorConfig,
    id: &str,
    n_items: usize,
    forced: Option<&str>,
) {
    let mut lines: Vec<String> = Vec::new();
    let mut cursor = 0usize;
    let mut sequences = Vec::new();
    let mut annotations = Vec::new();
    let mut seq_index = 0usize;
    let mut enum_no = 1usize;

    for _ in 0..n_items {
        let punct = match generator.rng.gen_range(0..10u32) {
            0 => ".",
            1 => ")",
            _ => ":",
        };
        // the occasional empty enumerated item, skipped downstream
        if forced.is_none() && generator.rng.gen_bool(0.03) {
            let line = format!("{enum_no}{punct}");
            cursor += char_len(&line) + 1;
            lines.push(line);
            enum_no += 1;
            continue;
        }
        let (mut frag, template) = generator.item(ontology, forced);
        generator.apply_typos(&mut frag, config.noise.typo_rate);
        generator.apply_placeholders(&mut frag, config.noise.placeholder_rate);

        let prefix = format!("{enum_no}{punct} ");
        let start = cursor + char_len(&prefix);
        sequences.push(Sequence {
            section_id: id.to_string(),
            index: seq_index,
            label_number: enum_no.to_string(),
            text: frag.text.clone(),
            start,
            end: start + frag.chars,
        });
        let key = SequenceKey::new(id.to_string(), seq_index);
        let mut spans = frag.spans.clone();
        spans.sort_by(|a, b| {
            (a.start, a.end, a.concept_id.as_str()).cmp(&(b.start, b.end, b.concept_id.as_str()))
        });
        for span in spans {
            annotations.push(SpanAnnotation {
                sequence: key.clone(),
                concept_id: span.concept_id,
                start: span.start,
                end: span.end,
                numeric_value: span.numeric_value,
            });
        }
        generator.trace.items.push(ItemTrace {
            section_id: id.to_string(),
            seq_index,
            template,
        });

        let line = format!("{prefix}{}", frag.text);
        cursor += char_len(&line) + 1;
        lines.push(line);
        seq_index += 1;
        enum_no += 1;
    }

    let text = lines.join("\n");
    let placeholder = regex::Regex::new(r"\[[A-Z][A-Z0-9_]*\]").expect("placeholder");
    let origin = if corpus.sections.len() % 2 == 0 {
        Origin::Enriched
    } else {
        Origin::Random
    };
    corpus.origin.insert(id.to_string(), origin);
    corpus.sections.push(Section {
        doc_id: id.to_string(),
        text: text.clone(),
        source_filename: id.to_string(),
        placeholder_count: placeholder.find_iter(&text).count(),
    });
    corpus.sequences.extend(sequences);
    corpus.annotations.extend(annotations);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goldstore::sequence_targets;
    use crate::ontology::Ontology;

    fn small_config(seed: u64, sections: usize, noise: NoiseConfig) -> GeneratorConfig {
        GeneratorConfig {
            seed,
            n_sections: sections,
            noise,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let ont = Ontology::default_shipped();
        let cfg = small_config(7, 20, NoiseConfig { typo_rate: 0.05, placeholder_rate: 0.1 });
        let a = generate_corpus(&cfg, &ont).unwrap();
        let b = generate_corpus(&cfg, &ont).unwrap();
        assert_eq!(a.corpus.to_jsonl(), b.corpus.to_jsonl());
    }

    #[test]
    fn output_passes_gold_validation_and_round_trips() {
        let ont = Ontology::default_shipped();
        let cfg = small_config(3, 12, NoiseConfig { typo_rate: 0.1, placeholder_rate: 0.2 });
        let synth = generate_corpus(&cfg, &ont).unwrap();
        let jsonl = synth.corpus.to_jsonl();
        let reloaded = GoldCorpus::from_jsonl(&jsonl, &ont).unwrap();
        assert_eq!(reloaded, synth.corpus);
    }

    #[test]
    fn spans_slice_to_inserted_phrases() {
        let ont = Ontology::default_shipped();
        let cfg = small_config(11, 10, NoiseConfig::default());
        let synth = generate_corpus(&cfg, &ont).unwrap();
        let pb = Phrasebook::default_shipped();
        let surface_set: BTreeSet<String> = pb
            .entries
            .values()
            .flatten()
            .map(|e| e.text.clone())
            .collect();
        let mut checked = 0;
        for a in &synth.corpus.annotations {
            let seq = synth.corpus.sequence(&a.sequence).unwrap();
            let slice = crate::span::char_slice(&seq.text, a.start, a.end);
            if a.numeric_value.is_none() {
                let entry = ont.lookup_concept(&a.concept_id).unwrap();
                // extras ("UE" inside "UE strengthening") are substrings of surfaces
                assert!(
                    surface_set.contains(slice)
                        || surface_set.iter().any(|s| s.contains(slice)),
                    "slice {slice:?} for {} not from the phrasebook",
                    entry.id
                );
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn typo_noise_leaves_unaffected_span_slices_intact() {
        let ont = Ontology::default_shipped();
        let clean = generate_corpus(&small_config(5, 15, NoiseConfig::default()), &ont).unwrap();
        let noisy = generate_corpus(
            &small_config(5, 15, NoiseConfig { typo_rate: 0.08, placeholder_rate: 0.0 }),
            &ont,
        )
        .unwrap();
        // same seed, same structure: every noisy span either equals the clean
        // slice or sits inside a mutated word; offsets of untouched earlier
        // spans must agree with the clean run
        let clean_first: Vec<_> = clean
            .corpus
            .annotations
            .iter()
            .filter(|a| a.start == 0)
            .collect();
        let noisy_first: Vec<_> = noisy
            .corpus
            .annotations
            .iter()
            .filter(|a| a.start == 0)
            .collect();
        assert_eq!(clean_first.len(), noisy_first.len());
        assert!(!noisy.corpus.annotations.is_empty());
    }

    #[test]
    fn placeholder_rate_hits_roughly_that_many_name_slots() {
        let ont = Ontology::default_shipped();
        let cfg = small_config(200, 120, NoiseConfig { typo_rate: 0.0, placeholder_rate: 0.1 });
        let synth = generate_corpus(&cfg, &ont).unwrap();
        let total = synth.trace.name_slots_total as f64;
        let replaced = synth.trace.name_slots_replaced as f64;
        assert!(total > 50.0, "expected name slots, got {total}");
        let rate = replaced / total;
        assert!((0.04..=0.18).contains(&rate), "rate {rate}");
        let text: String = synth.corpus.sections.iter().map(|s| s.text.clone()).collect();
        assert!(text.contains("[PERSONALNAME]") || text.contains("[ADDRESS]") || text.contains("[DATE]"));
    }

    #[test]
    fn requested_support_is_met() {
        let ont = Ontology::default_shipped();
        let mut cfg = small_config(19, 10, NoiseConfig::default());
        cfg.required_support.insert("plane_supination".into(), 60);
        let synth = generate_corpus(&cfg, &ont).unwrap();
        assert!(positive_sequences(&synth.corpus, "plane_supination") >= 60);
        let targets = sequence_targets(&synth.corpus, &ont);
        assert!(targets.positive_count("plane_supination") >= 60);
    }

    #[test]
    fn invalid_rates_are_rejected() {
        let ont = Ontology::default_shipped();
        let cfg = small_config(1, 2, NoiseConfig { typo_rate: 1.5, placeholder_rate: 0.0 });
        assert!(matches!(generate_corpus(&cfg, &ont), Err(SynthError::Config(_))));
    }

    #[test]
    fn segmentation_reproduces_generated_sequences() {
        let ont = Ontology::default_shipped();
        let synth = generate_corpus(&small_config(23, 15, NoiseConfig::default()), &ont).unwrap();
        for section in &synth.corpus.sections {
            let segmented = crate::ingest::segment_sequences(section);
            let stored: Vec<_> = synth
                .corpus
                .sequences
                .iter()
                .filter(|q| q.section_id == section.doc_id)
                .cloned()
                .collect();
            assert_eq!(segmented, stored, "section {}", section.doc_id);
        }
    }
}
