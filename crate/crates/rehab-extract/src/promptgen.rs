//! Few-shot yes/no prompt harness: builds one prompt per (concept, target
//! sequence) with two positive and two negative training examples, sends it
//! through a pluggable chat backend, parses the yes/no answer, and scores the
//! predictions as a sequence classifier.

use crate::evaluator::{sequence_prf, EvalError, Prf};
use crate::goldstore::{sequence_targets, GoldCorpus, SequenceKey, SequenceLabels, Split};
use crate::ingest::Sequence;
use crate::ontology::{ConceptEntry, Ontology};
use crate::syngen::Phrasebook;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const REPLAY_SCHEMA_VERSION: &str = "1";

const SYSTEM_TEMPLATE: (&str, &str) = (
    "You are an assistant assigned to determine if a given text segment from a medical record contains mentions of ",
    ". You must answer yes or no.",
);

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("concept is ineligible: needs at least two positive and two negative training sequences")]
    Ineligible,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("prompt io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("replay parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend transport failure: {0}")]
    Transport(String),
    #[error("no recorded response for prompt {0}")]
    MissingRecording(String),
    #[error("unusable backend response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    System,
    User,
    Model,
}

impl Role {
    fn label(&self) -> &'static str {
        match self {
            Role::System => "System",
            Role::User => "User",
            Role::Model => "Model",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub concept_id: String,
    pub turns: Vec<Turn>,
    pub target: SequenceKey,
}

impl Prompt {
    /// Printable transcript, one "Role: content" block per turn.
    pub fn transcript(&self) -> String {
        self.turns
            .iter()
            .map(|t| format!("{}: {}", t.role.label(), t.content))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.turns {
            hasher.update(t.role.label().as_bytes());
            hasher.update([0u8]);
            hasher.update(t.content.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}

/// Concepts with at least two positive and two negative training sequences;
/// anything rarer cannot fill the example template.
pub fn eligible_concepts(corpus: &GoldCorpus, ontology: &Ontology) -> Vec<String> {
    let targets = sequence_targets(corpus, ontology);
    let train: Vec<SequenceKey> = corpus
        .sequences_in_split(Split::Train)
        .iter()
        .map(|q| SequenceKey::new(q.section_id.clone(), q.index))
        .collect();
    let n = train.len();
    ontology
        .binary_concepts()
        .filter(|c| {
            let pos = train.iter().filter(|k| targets.is_positive(k, &c.id)).count();
            pos >= 2 && n - pos >= 2
        })
        .map(|c| c.id.clone())
        .collect()
}

fn example_line(seq: &Sequence) -> String {
    format!("{}: {}", seq.label_number, seq.text)
}

/// Seeded draw of k training sequences, returned in corpus order.
fn draw_sorted(rng: &mut ChaCha12Rng, pool: &[&Sequence], k: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, pool.len(), k).into_iter().collect();
    picked.sort_unstable();
    picked
}

/// Build the few-shot prompt for one concept and target sequence: the system
/// instruction, two positive and two negative training examples interleaved
/// positive-first, then the target as the final user turn. Deterministic
/// given the seed; examples never include the target.
pub fn build_prompt(
    concept: &ConceptEntry,
    corpus: &GoldCorpus,
    ontology: &Ontology,
    target: &Sequence,
    seed: u64,
) -> Result<Prompt, PromptError> {
    let labels = sequence_targets(corpus, ontology);
    build_prompt_with_labels(concept, corpus, target, seed, &labels)
}

/// As [`build_prompt`], reusing precomputed gold labels when scoring many
/// prompts.
pub fn build_prompt_with_labels(
    concept: &ConceptEntry,
    corpus: &GoldCorpus,
    target: &Sequence,
    seed: u64,
    labels: &SequenceLabels,
) -> Result<Prompt, PromptError> {
    let target_key = SequenceKey::new(target.section_id.clone(), target.index);
    let train: Vec<&Sequence> = corpus
        .sequences_in_split(Split::Train)
        .into_iter()
        .filter(|q| !(q.section_id == target_key.section_id && q.index == target_key.index))
        .collect();
    let positives: Vec<&Sequence> = train
        .iter()
        .copied()
        .filter(|q| labels.is_positive(&SequenceKey::new(q.section_id.clone(), q.index), &concept.id))
        .collect();
    let negatives: Vec<&Sequence> = train
        .iter()
        .copied()
        .filter(|q| !labels.is_positive(&SequenceKey::new(q.section_id.clone(), q.index), &concept.id))
        .collect();
    if positives.len() < 2 || negatives.len() < 2 {
        return Err(PromptError::Ineligible);
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let pos_idx = draw_sorted(&mut rng, &positives, 2);
    let neg_idx = draw_sorted(&mut rng, &negatives, 2);

    let mut turns = vec![Turn {
        role: Role::System,
        content: format!(
            "{}{}{}",
            SYSTEM_TEMPLATE.0, concept.display_name, SYSTEM_TEMPLATE.1
        ),
    }];
    // fixed example ordering: positive, negative, positive, negative
    for k in 0..2 {
        turns.push(Turn {
            role: Role::User,
            content: example_line(positives[pos_idx[k]]),
        });
        turns.push(Turn {
            role: Role::Model,
            content: "Yes.".to_string(),
        });
        turns.push(Turn {
            role: Role::User,
            content: example_line(negatives[neg_idx[k]]),
        });
        turns.push(Turn {
            role: Role::Model,
            content: "No.".to_string(),
        });
    }
    turns.push(Turn {
        role: Role::User,
        content: example_line(target),
    });
    Ok(Prompt {
        concept_id: concept.id.clone(),
        turns,
        target: target_key,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseClass {
    Positive,
    Negative,
    Unparseable,
}

/// Case-insensitive leading "yes"/"no" after trimming whitespace and
/// punctuation; anything else is unparseable.
pub fn parse_response(text: &str) -> ResponseClass {
    let word: String = text
        .chars()
        .skip_while(|c| !c.is_alphabetic())
        .take_while(|c| c.is_alphabetic())
        .flat_map(|c| c.to_lowercase())
        .collect();
    match word.as_str() {
        "yes" => ResponseClass::Positive,
        "no" => ResponseClass::Negative,
        _ => ResponseClass::Unparseable,
    }
}

pub trait ChatBackend {
    fn send(&mut self, turns: &[Turn]) -> Result<String, BackendError>;
}

/// Offline keyword oracle: answers "Yes." iff the concept's primary keyword
/// occurs in the target line. The concept is read back out of the system
/// turn, so the backend honors the same contract as a live model.
pub struct MockKeywordBackend {
    keyword_by_display: BTreeMap<String, String>,
}

impl MockKeywordBackend {
    /// Primary keyword per concept: its first phrasebook surface, lowercased.
    pub fn from_phrasebook(pb: &Phrasebook, ontology: &Ontology) -> MockKeywordBackend {
        let mut keyword_by_display = BTreeMap::new();
        for concept in pb.concepts() {
            if let Ok(entry) = ontology.lookup_concept(concept) {
                if let Some(first) = pb.first_surface(concept) {
                    keyword_by_display.insert(entry.display_name.clone(), first.to_lowercase());
                }
            }
        }
        MockKeywordBackend { keyword_by_display }
    }

    pub fn keyword_for_display(&self, display: &str) -> Option<&str> {
        self.keyword_by_display.get(display).map(|s| s.as_str())
    }
}

/// Strip a leading "N: " enumerator from a prompt line.
pub fn strip_enumerator(line: &str) -> &str {
    let rest = line.trim_start();
    let digits = rest.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return line;
    }
    let after = &rest[digits..];
    if let Some(stripped) = after.strip_prefix(':').or_else(|| after.strip_prefix('.')).or_else(|| after.strip_prefix(')')) {
        stripped.trim_start()
    } else {
        line
    }
}

impl ChatBackend for MockKeywordBackend {
    fn send(&mut self, turns: &[Turn]) -> Result<String, BackendError> {
        let system = turns
            .first()
            .filter(|t| t.role == Role::System)
            .ok_or_else(|| BackendError::BadResponse("no system turn".into()))?;
        let display = system
            .content
            .strip_prefix(SYSTEM_TEMPLATE.0)
            .and_then(|rest| rest.strip_suffix(SYSTEM_TEMPLATE.1))
            .ok_or_else(|| BackendError::BadResponse("unexpected system template".into()))?;
        let target = turns
            .last()
            .filter(|t| t.role == Role::User)
            .ok_or_else(|| BackendError::BadResponse("no target turn".into()))?;
        let keyword = match self.keyword_by_display.get(display) {
            Some(k) => k,
            None => return Ok("No.".to_string()),
        };
        let haystack = strip_enumerator(&target.content).to_lowercase();
        if haystack.contains(keyword) {
            Ok("Yes.".to_string())
        } else {
            Ok("No.".to_string())
        }
    }
}

/// Replays recorded responses keyed by prompt hash.
pub struct ReplayBackend {
    responses: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReplayRecord {
    prompt_hash: String,
    response: String,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<ReplayBackend, PromptError> {
        let text = std::fs::read_to_string(path)?;
        let mut responses = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: ReplayRecord = serde_json::from_str(line)?;
            responses.insert(rec.prompt_hash, rec.response);
        }
        Ok(ReplayBackend { responses })
    }
}

impl ChatBackend for ReplayBackend {
    fn send(&mut self, turns: &[Turn]) -> Result<String, BackendError> {
        let prompt = Prompt {
            concept_id: String::new(),
            turns: turns.to_vec(),
            target: SequenceKey::new("", 0),
        };
        let hash = prompt.hash();
        self.responses
            .get(&hash)
            .cloned()
            .ok_or(BackendError::MissingRecording(hash))
    }
}

/// Live chat backend speaking the common chat-completions JSON shape, with
/// token-bucket pacing, bounded exponential backoff, and the auth token read
/// from an environment variable.
pub struct LiveBackend {
    pub endpoint: String,
    pub model: String,
    pub token_env: String,
    pub min_interval: std::time::Duration,
    pub max_retries: u32,
    last_call: Option<std::time::Instant>,
    client: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn new(endpoint: String, model: String, token_env: String) -> LiveBackend {
        LiveBackend {
            endpoint,
            model,
            token_env,
            min_interval: std::time::Duration::from_millis(1200),
            max_retries: 5,
            last_call: None,
            client: reqwest::blocking::Client::new(),
        }
    }

    fn role_name(role: Role) -> &'static str {
        match role {
            Role::System => "system",
            Role::User => "user",
            Role::Model => "assistant",
        }
    }
}

impl ChatBackend for LiveBackend {
    fn send(&mut self, turns: &[Turn]) -> Result<String, BackendError> {
        let token = std::env::var(&self.token_env)
            .map_err(|_| BackendError::Transport(format!("{} is not set", self.token_env)))?;
        let messages: Vec<serde_json::Value> = turns
            .iter()
            .map(|t| {
                serde_json::json!({"role": Self::role_name(t.role), "content": t.content})
            })
            .collect();
        let body = serde_json::json!({"model": self.model, "messages": messages});

        let mut backoff = std::time::Duration::from_millis(500);
        for attempt in 0..=self.max_retries {
            if let Some(last) = self.last_call {
                let since = last.elapsed();
                if since < self.min_interval {
                    std::thread::sleep(self.min_interval - since);
                }
            }
            self.last_call = Some(std::time::Instant::now());
            let result = self
                .client
                .post(&self.endpoint)
                .bearer_auth(&token)
                .json(&body)
                .send();
            match result {
                Ok(resp) if resp.status().is_success() => {
                    let value: serde_json::Value = resp
                        .json()
                        .map_err(|e| BackendError::BadResponse(e.to_string()))?;
                    let content = value["choices"][0]["message"]["content"]
                        .as_str()
                        .ok_or_else(|| {
                            BackendError::BadResponse("missing message content".into())
                        })?;
                    return Ok(content.to_string());
                }
                Ok(resp) if resp.status().as_u16() == 429 || resp.status().is_server_error() => {
                    if attempt == self.max_retries {
                        return Err(BackendError::Transport(format!(
                            "gave up after {} attempts (last status {})",
                            attempt + 1,
                            resp.status()
                        )));
                    }
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
                Ok(resp) => {
                    return Err(BackendError::Transport(format!("status {}", resp.status())))
                }
                Err(e) => {
                    if attempt == self.max_retries {
                        return Err(BackendError::Transport(e.to_string()));
                    }
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
        unreachable!("retry loop returns")
    }
}

/// Append-only response cache keyed by prompt hash; doubles as the recording
/// for the replay backend and makes interrupted runs resumable.
pub struct ResponseCache {
    path: PathBuf,
    responses: BTreeMap<String, String>,
}

impl ResponseCache {
    pub fn open(path: &Path) -> Result<ResponseCache, PromptError> {
        let mut responses = BTreeMap::new();
        if path.exists() {
            for line in std::fs::read_to_string(path)?.lines().filter(|l| !l.trim().is_empty()) {
                let rec: ReplayRecord = serde_json::from_str(line)?;
                responses.insert(rec.prompt_hash, rec.response);
            }
        }
        Ok(ResponseCache {
            path: path.to_path_buf(),
            responses,
        })
    }

    pub fn get(&self, hash: &str) -> Option<&str> {
        self.responses.get(hash).map(|s| s.as_str())
    }

    pub fn put(&mut self, hash: String, response: String) -> Result<(), PromptError> {
        let record = ReplayRecord {
            prompt_hash: hash.clone(),
            response: response.clone(),
        };
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        writeln!(file, "{}", serde_json::to_string(&record)?)?;
        self.responses.insert(hash, response);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptEvalReport {
    pub per_concept: BTreeMap<String, Prf>,
    pub macro_average: Prf,
    pub prompts_sent: usize,
    pub cache_hits: usize,
    pub unparseable: usize,
}

/// Derive the per-prompt example-selection seed from the run seed, so
/// resumed runs rebuild byte-identical prompts regardless of order.
pub fn prompt_seed(run_seed: u64, concept_id: &str, key: &SequenceKey) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(run_seed.to_le_bytes());
    hasher.update(concept_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(key.section_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(key.index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// One prompt per (eligible concept, test sequence); unparseable responses
/// count as negative predictions and are tallied. Answers already in the
/// cache are not re-sent, which makes interrupted runs resumable.
pub fn run_prompt_eval(
    backend: &mut dyn ChatBackend,
    corpus: &GoldCorpus,
    ontology: &Ontology,
    eligible: &[String],
    seed: u64,
    mut cache: Option<&mut ResponseCache>,
) -> Result<PromptEvalReport, PromptError> {
    let targets = sequence_targets(corpus, ontology);
    let test_seqs = corpus.sequences_in_split(Split::Test);
    let test_keys: BTreeSet<SequenceKey> = test_seqs
        .iter()
        .map(|q| SequenceKey::new(q.section_id.clone(), q.index))
        .collect();
    let gold = targets.restricted_to(&test_keys);

    let mut pred = SequenceLabels::new(test_keys.iter().cloned(), eligible.iter().cloned());
    let mut prompts_sent = 0;
    let mut cache_hits = 0;
    let mut unparseable = 0;

    for concept_id in eligible {
        let entry = ontology
            .lookup_concept(concept_id)
            .map_err(|_| PromptError::Ineligible)?;
        for seq in &test_seqs {
            let key = SequenceKey::new(seq.section_id.clone(), seq.index);
            let prompt = build_prompt_with_labels(
                entry,
                corpus,
                seq,
                prompt_seed(seed, concept_id, &key),
                &targets,
            )?;
            let hash = prompt.hash();
            let response = match cache.as_ref().and_then(|c| c.get(&hash)) {
                Some(hit) => {
                    cache_hits += 1;
                    hit.to_string()
                }
                None => {
                    let response = backend.send(&prompt.turns)?;
                    prompts_sent += 1;
                    if let Some(c) = cache.as_mut() {
                        c.put(hash, response.clone())?;
                    }
                    response
                }
            };
            match parse_response(&response) {
                ResponseClass::Positive => pred.set_positive(&key, concept_id),
                ResponseClass::Negative => {}
                ResponseClass::Unparseable => unparseable += 1,
            }
        }
    }

    let mut per_concept = BTreeMap::new();
    let restricted_gold = restrict_concepts(&gold, eligible);
    for concept_id in eligible {
        per_concept.insert(
            concept_id.clone(),
            sequence_prf(&pred, &restricted_gold, concept_id)?,
        );
    }
    let n = per_concept.len().max(1) as f64;
    let macro_average = Prf {
        true_pos: 0,
        false_pos: 0,
        false_neg: 0,
        precision: per_concept.values().map(|p| p.precision).sum::<f64>() / n,
        recall: per_concept.values().map(|p| p.recall).sum::<f64>() / n,
        f1: per_concept.values().map(|p| p.f1).sum::<f64>() / n,
    };
    Ok(PromptEvalReport {
        per_concept,
        macro_average,
        prompts_sent,
        cache_hits,
        unparseable,
    })
}

fn restrict_concepts(labels: &SequenceLabels, concepts: &[String]) -> SequenceLabels {
    let mut out = SequenceLabels::new(labels.sequences().iter().cloned(), concepts.iter().cloned());
    for seq in labels.sequences() {
        for c in concepts {
            if labels.is_positive(seq, c) {
                out.set_positive(seq, c);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_yes_and_no_variants() {
        assert_eq!(parse_response("Yes."), ResponseClass::Positive);
        assert_eq!(parse_response("no"), ResponseClass::Negative);
        assert_eq!(parse_response("  \"YES\"  "), ResponseClass::Positive);
        assert_eq!(parse_response("No, it is absent."), ResponseClass::Negative);
        assert_eq!(parse_response("It depends."), ResponseClass::Unparseable);
        assert_eq!(parse_response(""), ResponseClass::Unparseable);
        assert_eq!(parse_response("Note: maybe"), ResponseClass::Unparseable);
    }

    #[test]
    fn strip_enumerator_handles_prefixes() {
        assert_eq!(strip_enumerator("14: SLR- 2x10"), "SLR- 2x10");
        assert_eq!(strip_enumerator("2. rows"), "rows");
        assert_eq!(strip_enumerator("no prefix"), "no prefix");
    }
}
