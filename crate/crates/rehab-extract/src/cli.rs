//! Single-binary pipeline: sections, enrich, synth, gold, tag, train,
//! predict, eval, prompts. Data goes to files or stdout, logs to stderr;
//! every seeded stage is deterministic for a given seed.

use crate::classifiers::{self, ModelBundle, ModelKind, TrainConfig, Vocabulary};
use crate::evaluator::{self, MethodScores};
use crate::goldstore::{self, GoldCorpus, RatingTable, SpanAnnotation};
use crate::ingest::{self, NoteFile, Section};
use crate::ontology::Ontology;
use crate::promptgen::{self, ChatBackend, ResponseCache};
use crate::ruletagger;
use crate::syngen::{self, GeneratorConfig, NoiseConfig, Phrasebook};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nschema versions: ontology=1 gold=1 rules=1 models=1 report=1 replay=1"
);

#[derive(Parser)]
#[command(
    name = "rehab-extract",
    version,
    long_version = LONG_VERSION,
    about = "Extract and score physical-rehabilitation exercise concepts from therapy note text"
)]
struct Cli {
    /// Seed for every stage that draws randomness.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Ontology file; the built-in default when omitted.
    #[arg(long, global = true)]
    ontology: Option<PathBuf>,
    /// JSON config with default paths {"ontology": ..., "rules": ..., "phrasebook": ...}.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Default, Deserialize)]
struct FileConfig {
    ontology: Option<PathBuf>,
    rules: Option<PathBuf>,
    phrasebook: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Filter THERAPY note files and carve out therapeutic-procedure sections.
    Sections(SectionsArgs),
    /// Score sections by keyword enrichment and pick candidate sets.
    Enrich(EnrichArgs),
    /// Generate a synthetic gold corpus.
    Synth(SynthArgs),
    /// Validate, split, or measure agreement on gold files.
    Gold(GoldArgs),
    /// Tag sequences with the rule set.
    Tag(TagArgs),
    /// Train per-concept classifiers on the gold train split.
    Train(TrainArgs),
    /// Predict sequence labels with trained models.
    Predict(PredictArgs),
    /// Score predictions against gold and render the report.
    Eval(EvalArgs),
    /// Build or run few-shot yes/no prompts.
    Prompts(PromptsArgs),
}

#[derive(Args)]
struct SectionsArgs {
    /// Directory of plain-text note files.
    #[arg(long)]
    notes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep files regardless of the THERAPY filename filter.
    #[arg(long)]
    no_filename_filter: bool,
}

#[derive(Args)]
struct EnrichArgs {
    /// sections.jsonl produced by `sections`.
    #[arg(long)]
    sections: PathBuf,
    #[arg(long, default_value_t = 300)]
    n_enriched: usize,
    #[arg(long, default_value_t = 300)]
    n_random: usize,
    #[arg(long, default_value_t = 200)]
    min_len: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    sections: usize,
    #[arg(long, default_value_t = 4)]
    items_min: usize,
    #[arg(long, default_value_t = 8)]
    items_max: usize,
    #[arg(long, default_value_t = 0.0)]
    typo_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    placeholder_rate: f64,
    /// Phrasebook file; the built-in default when omitted.
    #[arg(long)]
    phrasebook: Option<PathBuf>,
    /// concept=N pairs; extra sections are generated until each concept has
    /// at least N positive sequences.
    #[arg(long)]
    require_support: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Optional generation trace (templates, noise bookkeeping).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct GoldArgs {
    #[command(subcommand)]
    command: GoldCommand,
}

#[derive(Subcommand)]
enum GoldCommand {
    /// Check every invariant of a gold file.
    Validate {
        #[arg(long)]
        gold: PathBuf,
    },
    /// Assign the stratified train/test split.
    Split {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value_t = 125)]
        per_origin_train: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fleiss's kappa from a counts table or from several annotators' gold files.
    Kappa {
        /// JSON {"raters": R, "counts": [[...], ...]}.
        #[arg(long, conflicts_with = "gold")]
        table: Option<PathBuf>,
        /// Two or more gold files over the same sections.
        #[arg(long)]
        gold: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct TagArgs {
    /// Rules file; the built-in default when omitted.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// gold.jsonl or sections.jsonl; sections are segmented first.
    #[arg(long)]
    sequences: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// logreg | svm | ada | gb | all
    #[arg(long)]
    kind: String,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Train only concepts with at least this many positive train sequences.
    #[arg(long)]
    min_train_positives: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    /// Model bundle directory written by `train`.
    #[arg(long)]
    models: PathBuf,
    /// logreg | svm | ada | gb; required when the directory holds several kinds.
    #[arg(long)]
    kind: Option<String>,
    /// gold.jsonl or sections.jsonl.
    #[arg(long)]
    sequences: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    /// name=spans.jsonl (from `tag`); scored as exact-span NER and as
    /// projected sequence labels, plus numeric PRF.
    #[arg(long)]
    spans: Vec<String>,
    /// name=labels.jsonl (from `predict`); scored as sequence labels.
    #[arg(long)]
    labels: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PromptsArgs {
    #[command(subcommand)]
    command: PromptsCommand,
}

#[derive(Subcommand)]
enum PromptsCommand {
    /// Build one prompt and print its transcript.
    Build {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        concept: String,
        /// Target sequence as SECTION_ID:INDEX.
        #[arg(long)]
        target: String,
        /// Write the full prompt JSON here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the prompt evaluation over every eligible concept and test sequence.
    Run {
        #[arg(long)]
        gold: PathBuf,
        /// mock | replay | live
        #[arg(long)]
        backend: String,
        /// Recorded responses for the replay backend.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Response cache; answered prompts are never re-sent.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Phrasebook driving the mock backend keyword oracle.
        #[arg(long)]
        phrasebook: Option<PathBuf>,
        #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
        endpoint: String,
        #[arg(long, default_value = "gpt-3.5-turbo")]
        model: String,
        /// Environment variable holding the live-backend auth token.
        #[arg(long, default_value = "REHAB_EXTRACT_API_TOKEN")]
        token_env: String,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 0 for --help/--version and 2 for usage errors
            e.exit();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let file_config: FileConfig = match &cli.config {
        None => FileConfig::default(),
        Some(path) => serde_json::from_str(
            &std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?,
        )
        .context("parsing config")?,
    };
    let ontology = load_ontology(cli.ontology.as_ref().or(file_config.ontology.as_ref()))?;
    match cli.command {
        Command::Sections(args) => cmd_sections(args),
        Command::Enrich(args) => cmd_enrich(args, &ontology, cli.seed),
        Command::Synth(args) => cmd_synth(args, &ontology, cli.seed, file_config.phrasebook.as_ref()),
        Command::Gold(args) => cmd_gold(args.command, &ontology, cli.seed),
        Command::Tag(args) => cmd_tag(args, &ontology, file_config.rules.as_ref()),
        Command::Train(args) => cmd_train(args, &ontology),
        Command::Predict(args) => cmd_predict(args, &ontology),
        Command::Eval(args) => cmd_eval(args, &ontology),
        Command::Prompts(args) => {
            cmd_prompts(args.command, &ontology, cli.seed, file_config.phrasebook.as_ref())
        }
    }
}

fn load_ontology(path: Option<&PathBuf>) -> Result<Ontology> {
    match path {
        None => Ok(Ontology::default_shipped()),
        Some(p) => {
            Ontology::load(p).with_context(|| format!("loading ontology {}", p.display()))
        }
    }
}

fn load_phrasebook(path: Option<&PathBuf>) -> Result<Phrasebook> {
    match path {
        None => Ok(Phrasebook::default_shipped()),
        Some(p) => {
            Phrasebook::load(p).with_context(|| format!("loading phrasebook {}", p.display()))
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_sections(args: SectionsArgs) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&args.notes)
        .with_context(|| format!("reading notes dir {}", args.notes.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    entries.sort();

    let mut notes = Vec::new();
    for path in entries {
        let filename = path
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default();
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading note {}", path.display()))?;
        notes.push(NoteFile { filename, text });
    }
    let total = notes.len();
    let kept = if args.no_filename_filter {
        notes
    } else {
        ingest::filter_note_files(notes)
    };
    let extractor = ingest::SectionExtractor::default();
    let mut out = String::new();
    let mut seen = BTreeMap::new();
    let mut n_sections = 0;
    for note in &kept {
        if let Some(mut section) = extractor.extract(note) {
            let n = seen.entry(section.doc_id.clone()).or_insert(0usize);
            *n += 1;
            if *n > 1 {
                section.doc_id = format!("{}-{}", section.doc_id, n);
            }
            out.push_str(&serde_json::to_string(&section)?);
            out.push('\n');
            n_sections += 1;
        }
    }
    write_file(&args.out, &out)?;
    eprintln!(
        "sections: {total} notes, {} kept by filename filter, {n_sections} sections -> {}",
        kept.len(),
        args.out.display()
    );
    Ok(())
}

fn read_sections(path: &Path) -> Result<Vec<Section>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading sections {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let section: Section = serde_json::from_str(line)
            .with_context(|| format!("sections line {}", i + 1))?;
        out.push(section);
    }
    Ok(out)
}

fn cmd_enrich(args: EnrichArgs, ontology: &Ontology, seed: u64) -> Result<()> {
    let sections = read_sections(&args.sections)?;
    let (enriched, random) = ingest::select_candidate_sets(
        &sections,
        ontology,
        args.n_enriched,
        args.n_random,
        args.min_len,
        seed,
    )?;
    let dump = |list: &[Section]| -> Result<String> {
        let mut s = String::new();
        for section in list {
            s.push_str(&serde_json::to_string(section)?);
            s.push('\n');
        }
        Ok(s)
    };
    std::fs::create_dir_all(&args.out_dir)?;
    write_file(&args.out_dir.join("enriched.jsonl"), &dump(&enriched)?)?;
    write_file(&args.out_dir.join("random.jsonl"), &dump(&random)?)?;
    eprintln!(
        "enrich: {} sections scored, {} enriched + {} random -> {}",
        sections.len(),
        enriched.len(),
        random.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_synth(
    args: SynthArgs,
    ontology: &Ontology,
    seed: u64,
    config_phrasebook: Option<&PathBuf>,
) -> Result<()> {
    let phrasebook = load_phrasebook(args.phrasebook.as_ref().or(config_phrasebook))?;
    let mut required_support = BTreeMap::new();
    for pair in &args.require_support {
        let (concept, count) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("--require-support expects concept=N, got {pair:?}"))?;
        required_support.insert(concept.to_string(), count.parse::<usize>()?);
    }
    let config = GeneratorConfig {
        seed,
        n_sections: args.sections,
        items_min: args.items_min,
        items_max: args.items_max,
        phrasebook,
        noise: NoiseConfig {
            typo_rate: args.typo_rate,
            placeholder_rate: args.placeholder_rate,
        },
        required_support,
    };
    let synth = syngen::generate_corpus(&config, ontology)?;
    write_file(&args.out, &synth.corpus.to_jsonl())?;
    if let Some(trace_path) = &args.trace {
        write_file(trace_path, &serde_json::to_string_pretty(&synth.trace)?)?;
    }
    eprintln!(
        "synth: {} sections, {} sequences, {} annotations -> {}",
        synth.corpus.sections.len(),
        synth.corpus.sequences.len(),
        synth.corpus.annotations.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_gold(command: GoldCommand, ontology: &Ontology, seed: u64) -> Result<()> {
    match command {
        GoldCommand::Validate { gold } => {
            let corpus = GoldCorpus::load(&gold, ontology)?;
            eprintln!(
                "gold: valid ({} sections, {} sequences, {} annotations)",
                corpus.sections.len(),
                corpus.sequences.len(),
                corpus.annotations.len()
            );
            Ok(())
        }
        GoldCommand::Split {
            gold,
            per_origin_train,
            out,
        } => {
            let mut corpus = GoldCorpus::load(&gold, ontology)?;
            corpus.assign_split(per_origin_train, seed)?;
            write_file(&out, &corpus.to_jsonl())?;
            let train = corpus
                .split
                .values()
                .filter(|s| **s == goldstore::Split::Train)
                .count();
            eprintln!(
                "split: {train} train / {} test -> {}",
                corpus.sections.len() - train,
                out.display()
            );
            Ok(())
        }
        GoldCommand::Kappa { table, gold } => {
            let table = match (table, gold.len()) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path)?;
                    serde_json::from_str::<RatingTable>(&text).context("parsing rating table")?
                }
                (None, n) if n >= 2 => {
                    let corpora: Vec<GoldCorpus> = gold
                        .iter()
                        .map(|p| GoldCorpus::load(p, ontology))
                        .collect::<Result<_, _>>()?;
                    goldstore::rating_table_from_annotations(&corpora, ontology)?
                }
                _ => bail!("kappa needs --table or at least two --gold files"),
            };
            let kappa = goldstore::fleiss_kappa(&table)?;
            println!(
                "{}",
                serde_json::json!({
                    "items": table.items(),
                    "raters": table.raters,
                    "kappa": kappa,
                    "exceeds_0_7": kappa > 0.7,
                })
            );
            Ok(())
        }
    }
}

/// Sequences from either a gold corpus file or a raw sections file.
fn read_sequences(path: &Path, ontology: &Ontology) -> Result<Vec<crate::ingest::Sequence>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading sequences {}", path.display()))?;
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| anyhow!("{} is empty", path.display()))?;
    let probe: serde_json::Value = serde_json::from_str(first)?;
    if probe.get("section").is_some() {
        let corpus = GoldCorpus::from_jsonl(&text, ontology)?;
        Ok(corpus.sequences)
    } else {
        let mut out = Vec::new();
        for section in read_sections(path)? {
            out.extend(ingest::segment_sequences(&section));
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct SpanRecord {
    section_id: String,
    seq_index: usize,
    concept_id: String,
    start: usize,
    end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    numeric_value: Option<i64>,
}

fn write_spans(path: &Path, spans: &[SpanAnnotation]) -> Result<()> {
    let mut out = String::new();
    for s in spans {
        let rec = SpanRecord {
            section_id: s.sequence.section_id.clone(),
            seq_index: s.sequence.index,
            concept_id: s.concept_id.clone(),
            start: s.start,
            end: s.end,
            numeric_value: s.numeric_value,
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    write_file(path, &out)
}

fn read_spans(path: &Path) -> Result<Vec<SpanAnnotation>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading spans {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: SpanRecord =
            serde_json::from_str(line).with_context(|| format!("spans line {}", i + 1))?;
        out.push(SpanAnnotation {
            sequence: goldstore::SequenceKey::new(rec.section_id, rec.seq_index),
            concept_id: rec.concept_id,
            start: rec.start,
            end: rec.end,
            numeric_value: rec.numeric_value,
        });
    }
    Ok(out)
}

fn cmd_tag(args: TagArgs, ontology: &Ontology, config_rules: Option<&PathBuf>) -> Result<()> {
    let tagger = match args.rules.as_ref().or(config_rules) {
        None => ruletagger::default_tagger(ontology),
        Some(path) => ruletagger::compile_rules_file(path, ontology)
            .with_context(|| format!("compiling rules {}", path.display()))?,
    };
    let sequences = read_sequences(&args.sequences, ontology)?;
    let spans = tagger.tag_sequences(&sequences);
    write_spans(&args.out, &spans)?;
    eprintln!(
        "tag: {} sequences, {} spans -> {}",
        sequences.len(),
        spans.len(),
        args.out.display()
    );
    Ok(())
}

fn kinds_from_flag(kind: &str) -> Result<Vec<ModelKind>> {
    if kind == "all" {
        return Ok(ModelKind::ALL.to_vec());
    }
    ModelKind::parse(kind)
        .map(|k| vec![k])
        .ok_or_else(|| anyhow!("unknown kind {kind:?} (expected logreg|svm|ada|gb|all)"))
}

fn cmd_train(args: TrainArgs, ontology: &Ontology) -> Result<()> {
    let corpus = GoldCorpus::load(&args.gold, ontology)?;
    if corpus.split.is_empty() {
        bail!("gold file has no split; run `rehab-extract gold split` first");
    }
    let concepts: Option<Vec<String>> = match args.min_train_positives {
        None => None,
        Some(min) => {
            let counts = evaluator::split_positive_counts(&corpus, ontology)?;
            Some(
                ontology
                    .binary_concepts()
                    .filter(|c| counts.get(&c.id).is_some_and(|&(train, _)| train >= min))
                    .map(|c| c.id.clone())
                    .collect(),
            )
        }
    };
    std::fs::create_dir_all(&args.out)?;
    let config = TrainConfig::default();
    for kind in kinds_from_flag(&args.kind)? {
        let bundle =
            classifiers::train_bundle(kind, &corpus, ontology, &config, concepts.as_deref())?;
        write_file(
            &args.out.join("vocab.json"),
            &serde_json::to_string(&bundle.vocabulary)?,
        )?;
        for model in &bundle.models {
            write_file(
                &args.out.join(model.filename()),
                &serde_json::to_string(model)?,
            )?;
        }
        write_file(
            &args.out.join(format!("skipped-{}.json", kind.short_name())),
            &serde_json::to_string_pretty(&bundle.skipped)?,
        )?;
        eprintln!(
            "train[{}]: {} models, {} skipped -> {}",
            kind.short_name(),
            bundle.models.len(),
            bundle.skipped.len(),
            args.out.display()
        );
    }
    Ok(())
}

fn load_bundle(dir: &Path, kind: Option<ModelKind>) -> Result<ModelBundle> {
    let vocab_text = std::fs::read_to_string(dir.join("vocab.json"))
        .with_context(|| format!("reading {}", dir.join("vocab.json").display()))?;
    let vocabulary: Vocabulary = serde_json::from_str(&vocab_text)?;
    let mut models = Vec::new();
    let mut kinds_seen = std::collections::BTreeSet::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("model-") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    for path in paths {
        let model: classifiers::ConceptModel =
            serde_json::from_str(&std::fs::read_to_string(&path)?)
                .with_context(|| format!("parsing model {}", path.display()))?;
        kinds_seen.insert(model.kind);
        if kind.is_none() || kind == Some(model.kind) {
            models.push(model);
        }
    }
    let kind = match kind {
        Some(k) => k,
        None if kinds_seen.len() == 1 => *kinds_seen.iter().next().expect("one kind"),
        None => bail!(
            "model directory holds {} kinds; pass --kind",
            kinds_seen.len()
        ),
    };
    Ok(ModelBundle {
        schema_version: classifiers::MODEL_SCHEMA_VERSION.to_string(),
        kind,
        vocabulary,
        models,
        skipped: BTreeMap::new(),
    })
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    section_id: String,
    seq_index: usize,
    concepts: Vec<String>,
}

fn cmd_predict(args: PredictArgs, ontology: &Ontology) -> Result<()> {
    let kind = match &args.kind {
        None => None,
        Some(k) => Some(
            ModelKind::parse(k).ok_or_else(|| anyhow!("unknown kind {k:?}"))?,
        ),
    };
    let bundle = load_bundle(&args.models, kind)?;
    let sequences = read_sequences(&args.sequences, ontology)?;
    let refs: Vec<&crate::ingest::Sequence> = sequences.iter().collect();
    let labels = bundle.predict_labels(&refs, ontology);
    let mut out = String::new();
    for seq in &sequences {
        let key = goldstore::SequenceKey::new(seq.section_id.clone(), seq.index);
        let concepts: Vec<String> = labels
            .concepts()
            .iter()
            .filter(|c| labels.is_positive(&key, c))
            .cloned()
            .collect();
        out.push_str(&serde_json::to_string(&LabelRecord {
            section_id: seq.section_id.clone(),
            seq_index: seq.index,
            concepts,
        })?);
        out.push('\n');
    }
    write_file(&args.out, &out)?;
    eprintln!(
        "predict[{}]: {} sequences -> {}",
        bundle.kind.short_name(),
        sequences.len(),
        args.out.display()
    );
    Ok(())
}

fn read_labels(
    path: &Path,
    sequences: &[crate::ingest::Sequence],
    ontology: &Ontology,
) -> Result<goldstore::SequenceLabels> {
    let mut labels = goldstore::SequenceLabels::new(
        sequences
            .iter()
            .map(|q| goldstore::SequenceKey::new(q.section_id.clone(), q.index)),
        ontology.binary_concepts().map(|c| c.id.clone()),
    );
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading labels {}", path.display()))?;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord =
            serde_json::from_str(line).with_context(|| format!("labels line {}", i + 1))?;
        let key = goldstore::SequenceKey::new(rec.section_id, rec.seq_index);
        for c in rec.concepts {
            labels.set_positive(&key, &c);
        }
    }
    Ok(labels)
}

fn split_name_path(pair: &str) -> Result<(String, PathBuf)> {
    let (name, path) = pair
        .split_once('=')
        .ok_or_else(|| anyhow!("expected NAME=PATH, got {pair:?}"))?;
    Ok((name.to_string(), PathBuf::from(path)))
}

fn cmd_eval(args: EvalArgs, ontology: &Ontology) -> Result<()> {
    let corpus = GoldCorpus::load(&args.gold, ontology)?;
    if corpus.split.is_empty() {
        bail!("gold file has no split; run `rehab-extract gold split` first");
    }
    let test_seqs = corpus.sequences_in_split(goldstore::Split::Test);
    let test_keys: std::collections::BTreeSet<goldstore::SequenceKey> = test_seqs
        .iter()
        .map(|q| goldstore::SequenceKey::new(q.section_id.clone(), q.index))
        .collect();
    let gold_targets = goldstore::sequence_targets(&corpus, ontology).restricted_to(&test_keys);
    let gold_test_spans: Vec<SpanAnnotation> = corpus
        .annotations
        .iter()
        .filter(|a| test_keys.contains(&a.sequence))
        .cloned()
        .collect();
    let concepts: Vec<String> = ontology.binary_concepts().map(|c| c.id.clone()).collect();

    let mut methods: Vec<MethodScores> = Vec::new();
    let mut numeric_report = BTreeMap::new();
    for pair in &args.spans {
        let (name, path) = split_name_path(pair)?;
        let spans = read_spans(&path)?;
        let test_spans: Vec<SpanAnnotation> = spans
            .into_iter()
            .filter(|a| test_keys.contains(&a.sequence))
            .collect();

        let mut ner_scores = BTreeMap::new();
        for concept in &concepts {
            ner_scores.insert(
                concept.clone(),
                evaluator::ner_exact_prf(&test_spans, &gold_test_spans, concept),
            );
        }
        methods.push(MethodScores {
            name: format!("{name} NER"),
            rank_eligible: false,
            per_concept: ner_scores,
        });

        let owned: Vec<crate::ingest::Sequence> = test_seqs.iter().map(|q| (*q).clone()).collect();
        let projected = ruletagger::project_to_sequences(&test_spans, &owned, ontology);
        let mut seq_scores = BTreeMap::new();
        for concept in &concepts {
            seq_scores.insert(
                concept.clone(),
                evaluator::sequence_prf(&projected, &gold_targets, concept)?,
            );
        }
        methods.push(MethodScores {
            name: format!("{name} Sequence"),
            rank_eligible: true,
            per_concept: seq_scores,
        });

        let pred_numeric = evaluator::numeric_readings(&test_spans, ontology);
        let gold_numeric = evaluator::numeric_readings(&gold_test_spans, ontology);
        numeric_report.insert(name, evaluator::numeric_prf(&pred_numeric, &gold_numeric));
    }
    for pair in &args.labels {
        let (name, path) = split_name_path(pair)?;
        let owned: Vec<crate::ingest::Sequence> = test_seqs.iter().map(|q| (*q).clone()).collect();
        let predicted = read_labels(&path, &owned, ontology)?;
        let mut seq_scores = BTreeMap::new();
        for concept in &concepts {
            seq_scores.insert(
                concept.clone(),
                evaluator::sequence_prf(&predicted, &gold_targets, concept)?,
            );
        }
        methods.push(MethodScores {
            name,
            rank_eligible: true,
            per_concept: seq_scores,
        });
    }
    if methods.is_empty() {
        bail!("nothing to score; pass --spans and/or --labels");
    }

    let report = evaluator::build_report(&methods, &corpus, ontology)?;
    std::fs::create_dir_all(&args.out)?;
    write_file(
        &args.out.join("report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    write_file(&args.out.join("report.md"), &evaluator::render_markdown(&report))?;
    if !numeric_report.is_empty() {
        write_file(
            &args.out.join("numeric.json"),
            &serde_json::to_string_pretty(&numeric_report)?,
        )?;
    }
    eprintln!(
        "eval: {} methods over {} reportable concepts -> {}",
        report.methods.len(),
        report.rows.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_prompts(
    command: PromptsCommand,
    ontology: &Ontology,
    seed: u64,
    config_phrasebook: Option<&PathBuf>,
) -> Result<()> {
    match command {
        PromptsCommand::Build {
            gold,
            concept,
            target,
            out,
        } => {
            let corpus = GoldCorpus::load(&gold, ontology)?;
            let entry = ontology.lookup_concept(&concept)?;
            let (section_id, index) = target
                .rsplit_once(':')
                .ok_or_else(|| anyhow!("--target expects SECTION_ID:INDEX"))?;
            let key = goldstore::SequenceKey::new(section_id, index.parse::<usize>()?);
            let seq = corpus
                .sequence(&key)
                .ok_or_else(|| anyhow!("no sequence {key}"))?
                .clone();
            let prompt = promptgen::build_prompt(entry, &corpus, ontology, &seq, seed)?;
            println!("{}", prompt.transcript());
            if let Some(path) = out {
                write_file(&path, &serde_json::to_string_pretty(&prompt)?)?;
            }
            Ok(())
        }
        PromptsCommand::Run {
            gold,
            backend,
            replay,
            cache,
            phrasebook,
            endpoint,
            model,
            token_env,
            out,
        } => {
            let corpus = GoldCorpus::load(&gold, ontology)?;
            if corpus.split.is_empty() {
                bail!("gold file has no split; run `rehab-extract gold split` first");
            }
            let eligible = promptgen::eligible_concepts(&corpus, ontology);
            let mut mock;
            let mut replay_backend;
            let mut live;
            let backend_ref: &mut dyn ChatBackend = match backend.as_str() {
                "mock" => {
                    let pb = load_phrasebook(phrasebook.as_ref().or(config_phrasebook))?;
                    mock = promptgen::MockKeywordBackend::from_phrasebook(&pb, ontology);
                    &mut mock
                }
                "replay" => {
                    let path = replay.ok_or_else(|| anyhow!("--replay FILE required"))?;
                    replay_backend = promptgen::ReplayBackend::load(&path)?;
                    &mut replay_backend
                }
                "live" => {
                    live = promptgen::LiveBackend::new(endpoint, model, token_env);
                    &mut live
                }
                other => bail!("unknown backend {other:?} (expected mock|replay|live)"),
            };
            let mut cache_store = match &cache {
                None => None,
                Some(path) => Some(ResponseCache::open(path)?),
            };
            let report = promptgen::run_prompt_eval(
                backend_ref,
                &corpus,
                ontology,
                &eligible,
                seed,
                cache_store.as_mut(),
            )?;
            std::fs::create_dir_all(&out)?;
            write_file(
                &out.join("prompt_eval.json"),
                &serde_json::to_string_pretty(&report)?,
            )?;
            eprintln!(
                "prompts: {} concepts, {} sent, {} cache hits, {} unparseable -> {}",
                report.per_concept.len(),
                report.prompts_sent,
                report.cache_hits,
                report.unparseable,
                out.display()
            );
            Ok(())
        }
    }
}
