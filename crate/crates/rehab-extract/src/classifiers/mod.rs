//! Per-concept binary classifiers over bag-of-words features: logistic
//! regression, a degree-2 polynomial-kernel SVM, AdaBoost stumps, and
//! gradient-boosted trees, trained one-vs-rest per concept.

pub mod adaboost;
pub mod features;
pub mod gradboost;
pub mod logreg;
pub mod svm;

pub use features::{tokenize, FeatureVector, Vocabulary};

use crate::goldstore::{sequence_targets, GoldCorpus, SequenceKey, SequenceLabels, Split};
use crate::ingest::Sequence;
use crate::ontology::Ontology;
use adaboost::{AdaBoostConfig, AdaBoostModel};
use gradboost::{GradBoostConfig, GradBoostModel};
use logreg::{LogRegConfig, LogRegModel};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use svm::{SvmConfig, SvmModel};
use thiserror::Error;

pub const MODEL_SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training corpus has no tokens")]
    EmptyCorpus,
    #[error("training set is empty")]
    EmptyInput,
    #[error("inputs and labels disagree in length")]
    ShapeMismatch,
    #[error("concept has a single class in the training set")]
    SingleClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogReg,
    SvmPoly2,
    AdaBoost,
    GradBoost,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::LogReg,
        ModelKind::SvmPoly2,
        ModelKind::AdaBoost,
        ModelKind::GradBoost,
    ];

    pub fn short_name(&self) -> &'static str {
        match self {
            ModelKind::LogReg => "logreg",
            ModelKind::SvmPoly2 => "svm",
            ModelKind::AdaBoost => "ada",
            ModelKind::GradBoost => "gb",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            ModelKind::LogReg => "LogReg",
            ModelKind::SvmPoly2 => "SVM",
            ModelKind::AdaBoost => "AdaBoost",
            ModelKind::GradBoost => "GradBoost",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        match s {
            "logreg" | "lr" => Some(ModelKind::LogReg),
            "svm" => Some(ModelKind::SvmPoly2),
            "ada" | "adaboost" => Some(ModelKind::AdaBoost),
            "gb" | "gradboost" => Some(ModelKind::GradBoost),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub logreg: LogRegConfig,
    pub svm: SvmConfig,
    pub adaboost: AdaBoostConfig,
    pub gradboost: GradBoostConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelParams {
    LogReg(LogRegModel),
    SvmPoly2(SvmModel),
    AdaBoost(AdaBoostModel),
    GradBoost(GradBoostModel),
}

/// One trained binary classifier for one concept. Prediction is a pure
/// function of the stored parameters and a feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptModel {
    pub schema_version: String,
    pub concept_id: String,
    pub kind: ModelKind,
    pub params: ModelParams,
    pub train_config: TrainConfig,
    /// Balanced class weights used during training (positive, negative).
    pub class_weights: (f64, f64),
}

impl ConceptModel {
    pub fn decision(&self, x: &FeatureVector) -> f64 {
        match &self.params {
            ModelParams::LogReg(m) => m.decision(x),
            ModelParams::SvmPoly2(m) => m.decision(x),
            ModelParams::AdaBoost(m) => m.decision(x),
            ModelParams::GradBoost(m) => m.decision(x),
        }
    }

    pub fn predict(&self, x: &FeatureVector) -> bool {
        match &self.params {
            ModelParams::LogReg(m) => m.predict(x),
            ModelParams::SvmPoly2(m) => m.predict(x),
            ModelParams::AdaBoost(m) => m.predict(x),
            ModelParams::GradBoost(m) => m.predict(x),
        }
    }

    pub fn converged(&self) -> bool {
        match &self.params {
            ModelParams::LogReg(m) => m.converged,
            ModelParams::SvmPoly2(m) => m.converged,
            _ => true,
        }
    }

    pub fn filename(&self) -> String {
        format!("model-{}-{}.json", self.concept_id, self.kind.short_name())
    }
}

/// Balanced class weights w_c = N / (2 * N_c). Errors when only one class is
/// present.
pub fn balanced_class_weights(y: &[bool]) -> Result<(f64, f64), TrainError> {
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&b| b).count() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(TrainError::SingleClass);
    }
    Ok((n / (2.0 * pos), n / (2.0 * neg)))
}

/// Train one classifier. Deterministic for identical inputs and config.
pub fn train_classifier(
    kind: ModelKind,
    xs: &[FeatureVector],
    y: &[bool],
    dim: usize,
    concept_id: &str,
    config: &TrainConfig,
) -> Result<ConceptModel, TrainError> {
    if xs.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    if xs.len() != y.len() {
        return Err(TrainError::ShapeMismatch);
    }
    let (w_pos, w_neg) = balanced_class_weights(y)?;
    let params = match kind {
        ModelKind::LogReg => {
            let sample_weights: Vec<f64> =
                y.iter().map(|&b| if b { w_pos } else { w_neg }).collect();
            ModelParams::LogReg(logreg::train(xs, y, &sample_weights, dim, &config.logreg))
        }
        ModelKind::SvmPoly2 => {
            let costs = (config.svm.c * w_pos, config.svm.c * w_neg);
            ModelParams::SvmPoly2(svm::train(xs, y, costs, &config.svm))
        }
        ModelKind::AdaBoost => ModelParams::AdaBoost(adaboost::train(xs, y, dim, &config.adaboost)),
        ModelKind::GradBoost => {
            ModelParams::GradBoost(gradboost::train(xs, y, dim, &config.gradboost))
        }
    };
    Ok(ConceptModel {
        schema_version: MODEL_SCHEMA_VERSION.to_string(),
        concept_id: concept_id.to_string(),
        kind,
        params,
        train_config: config.clone(),
        class_weights: (w_pos, w_neg),
    })
}

/// A vocabulary plus every trained concept model of one kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: String,
    pub kind: ModelKind,
    pub vocabulary: Vocabulary,
    pub models: Vec<ConceptModel>,
    /// Concepts skipped as untrainable, with the reason.
    pub skipped: BTreeMap<String, String>,
}

/// Train one model per trainable concept on the corpus train split.
/// `concepts` restricts the target list (defaults to every binary concept).
pub fn train_bundle(
    kind: ModelKind,
    corpus: &GoldCorpus,
    ontology: &Ontology,
    config: &TrainConfig,
    concepts: Option<&[String]>,
) -> Result<ModelBundle, TrainError> {
    let train_seqs: Vec<&Sequence> = corpus.sequences_in_split(Split::Train);
    if train_seqs.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    let vocabulary = Vocabulary::build(train_seqs.iter().map(|q| q.text.as_str()))
        .ok_or(TrainError::EmptyCorpus)?;
    let xs: Vec<FeatureVector> = train_seqs
        .iter()
        .map(|q| vocabulary.vectorize(&q.text))
        .collect();
    let targets = sequence_targets(corpus, ontology);
    let keys: Vec<SequenceKey> = train_seqs
        .iter()
        .map(|q| SequenceKey::new(q.section_id.clone(), q.index))
        .collect();

    let all: Vec<String>;
    let concept_list: &[String] = match concepts {
        Some(c) => c,
        None => {
            all = ontology.binary_concepts().map(|c| c.id.clone()).collect();
            &all
        }
    };

    let mut models = Vec::new();
    let mut skipped = BTreeMap::new();
    for concept in concept_list {
        let y: Vec<bool> = keys.iter().map(|k| targets.is_positive(k, concept)).collect();
        match train_classifier(kind, &xs, &y, vocabulary.len(), concept, config) {
            Ok(model) => models.push(model),
            Err(TrainError::SingleClass) => {
                skipped.insert(concept.clone(), "single class in training split".to_string());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ModelBundle {
        schema_version: MODEL_SCHEMA_VERSION.to_string(),
        kind,
        vocabulary,
        models,
        skipped,
    })
}

impl ModelBundle {
    /// Predict sequence labels over the full binary-concept grid; concepts
    /// without a model stay negative.
    pub fn predict_labels(&self, sequences: &[&Sequence], ontology: &Ontology) -> SequenceLabels {
        let mut labels = SequenceLabels::new(
            sequences
                .iter()
                .map(|q| SequenceKey::new(q.section_id.clone(), q.index)),
            ontology.binary_concepts().map(|c| c.id.clone()),
        );
        for seq in sequences {
            let x = self.vocabulary.vectorize(&seq.text);
            let key = SequenceKey::new(seq.section_id.clone(), seq.index);
            for model in &self.models {
                if model.predict(&x) {
                    labels.set_positive(&key, &model.concept_id);
                }
            }
        }
        labels
    }
}
