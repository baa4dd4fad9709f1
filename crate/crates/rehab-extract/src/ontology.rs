//! Clinical ontology: the label universe shared by every other module.
//!
//! The ontology is a versioned JSON document listing categories of exercise
//! concepts. Categories are `enumerated`, `integer`, or `binary`. Integer
//! categories (Duration, Sets, Reps) carry no enumerated concepts; instead a
//! value concept is auto-registered for each one (id = slug of the category
//! name) so annotations and rules can reference numeric spans. Non-binary
//! categories are the scoring categories used by enrichment scoring and must
//! carry keywords.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

pub const ONTOLOGY_SCHEMA_VERSION: &str = "1";

/// Default ontology shipped with the crate.
pub const DEFAULT_ONTOLOGY_JSON: &str = include_str!("../assets/ontology.json");

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("failed to read ontology file: {0}")]
    Io(#[from] std::io::Error),
    #[error("ontology parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("ontology validation error: {0}")]
    Validation(String),
    #[error("unknown concept id {0:?}")]
    NotFound(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoryKind {
    Enumerated,
    Integer,
    Binary,
}

impl fmt::Display for CategoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CategoryKind::Enumerated => "enumerated",
            CategoryKind::Integer => "integer",
            CategoryKind::Binary => "binary",
        };
        f.write_str(s)
    }
}

/// The three numeric categories understood by normalization and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NumericCategory {
    Duration,
    Sets,
    Reps,
}

impl NumericCategory {
    pub fn from_category_name(name: &str) -> Option<NumericCategory> {
        match name {
            "Duration" => Some(NumericCategory::Duration),
            "Sets" => Some(NumericCategory::Sets),
            "Reps" => Some(NumericCategory::Reps),
            _ => None,
        }
    }
}

impl fmt::Display for NumericCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NumericCategory::Duration => "Duration",
            NumericCategory::Sets => "Sets",
            NumericCategory::Reps => "Reps",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub kind: CategoryKind,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub concepts: Vec<Concept>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OntologyFile {
    version: String,
    categories: Vec<Category>,
}

/// A concept resolved against its category. Integer categories contribute one
/// auto-registered value concept each.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptEntry {
    pub id: String,
    pub display_name: String,
    pub category: String,
    pub kind: CategoryKind,
}

impl ConceptEntry {
    pub fn numeric_category(&self) -> Option<NumericCategory> {
        if self.kind == CategoryKind::Integer {
            NumericCategory::from_category_name(&self.category)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ontology {
    pub version: String,
    pub categories: Vec<Category>,
    entries: Vec<ConceptEntry>,
    by_id: BTreeMap<String, usize>,
}

impl Ontology {
    pub fn load(path: &Path) -> Result<Ontology, OntologyError> {
        let text = std::fs::read_to_string(path)?;
        Ontology::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Ontology, OntologyError> {
        let file: OntologyFile = serde_json::from_str(text)?;
        Ontology::from_categories(file.version, file.categories)
    }

    /// The default ontology embedded in the binary.
    pub fn default_shipped() -> Ontology {
        Ontology::from_json(DEFAULT_ONTOLOGY_JSON).expect("shipped ontology must validate")
    }

    fn from_categories(
        version: String,
        categories: Vec<Category>,
    ) -> Result<Ontology, OntologyError> {
        let mut seen_names: BTreeMap<&str, ()> = BTreeMap::new();
        for cat in &categories {
            if seen_names.insert(cat.name.as_str(), ()).is_some() {
                return Err(OntologyError::Validation(format!(
                    "duplicate category name {:?}",
                    cat.name
                )));
            }
            if cat.kind == CategoryKind::Integer && !cat.concepts.is_empty() {
                return Err(OntologyError::Validation(format!(
                    "integer category {:?} must not list enumerated concepts",
                    cat.name
                )));
            }
            if cat.kind != CategoryKind::Binary && cat.keywords.is_empty() {
                return Err(OntologyError::Validation(format!(
                    "scoring category {:?} has an empty keyword list",
                    cat.name
                )));
            }
            for kw in &cat.keywords {
                if kw.is_empty() || kw.chars().any(|c| c.is_uppercase()) {
                    return Err(OntologyError::Validation(format!(
                        "keyword {:?} in category {:?} must be a non-empty lowercase string",
                        kw, cat.name
                    )));
                }
            }
        }

        let mut entries = Vec::new();
        let mut by_id = BTreeMap::new();
        for cat in &categories {
            if cat.kind == CategoryKind::Integer {
                let id = slug(&cat.name);
                let entry = ConceptEntry {
                    id: id.clone(),
                    display_name: cat.name.clone(),
                    category: cat.name.clone(),
                    kind: cat.kind,
                };
                if by_id.insert(id.clone(), entries.len()).is_some() {
                    return Err(OntologyError::Validation(format!(
                        "duplicate concept id {id:?}"
                    )));
                }
                entries.push(entry);
                continue;
            }
            for concept in &cat.concepts {
                if concept.id.is_empty() {
                    return Err(OntologyError::Validation(format!(
                        "empty concept id in category {:?}",
                        cat.name
                    )));
                }
                let entry = ConceptEntry {
                    id: concept.id.clone(),
                    display_name: concept.display_name.clone(),
                    category: cat.name.clone(),
                    kind: cat.kind,
                };
                if by_id.insert(concept.id.clone(), entries.len()).is_some() {
                    return Err(OntologyError::Validation(format!(
                        "duplicate concept id {:?}",
                        concept.id
                    )));
                }
                entries.push(entry);
            }
        }

        Ok(Ontology {
            version,
            categories,
            entries,
            by_id,
        })
    }

    pub fn lookup_concept(&self, id: &str) -> Result<&ConceptEntry, OntologyError> {
        self.by_id
            .get(id)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| OntologyError::NotFound(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Every resolvable concept, in category order then file order.
    pub fn concepts(&self) -> &[ConceptEntry] {
        &self.entries
    }

    /// Concepts usable as binary sequence-classification targets (everything
    /// outside integer categories).
    pub fn binary_concepts(&self) -> impl Iterator<Item = &ConceptEntry> {
        self.entries.iter().filter(|e| e.kind != CategoryKind::Integer)
    }

    /// Categories that participate in the 0-9 enrichment score.
    pub fn scoring_categories(&self) -> impl Iterator<Item = &Category> {
        self.categories.iter().filter(|c| c.kind != CategoryKind::Binary)
    }

    pub fn category(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == name)
    }
}

/// Lowercase slug of a name: alphanumerics kept, separators collapsed to '_'.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    let mut pending_sep = false;
    for c in name.chars() {
        if c.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            for lc in c.to_lowercase() {
                out.push(lc);
            }
        } else {
            pending_sep = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_ontology_loads_with_nine_scoring_categories() {
        let ont = Ontology::default_shipped();
        assert_eq!(ont.scoring_categories().count(), 9);
        let plane = ont.category("Plane of Motion").expect("plane category");
        assert!(plane.concepts.iter().any(|c| c.display_name == "Flexion"));
        // every concept named anywhere in the source tables resolves
        for id in ["rom_active", "side_left", "loc_wrist", "plane_flexion", "duration"] {
            assert!(ont.contains(id), "missing {id}");
        }
        assert!(ont.concepts().len() >= 60);
    }

    #[test]
    fn lookup_resolves_side_left() {
        let ont = Ontology::default_shipped();
        let c = ont.lookup_concept("side_left").unwrap();
        assert_eq!(c.display_name, "Left");
        assert_eq!(c.category, "Side of Body");
    }

    #[test]
    fn lookup_unknown_and_empty_ids_fail() {
        let ont = Ontology::default_shipped();
        assert!(matches!(
            ont.lookup_concept(""),
            Err(OntologyError::NotFound(_))
        ));
        assert!(matches!(
            ont.lookup_concept("xyz"),
            Err(OntologyError::NotFound(_))
        ));
    }

    #[test]
    fn duplicate_concept_id_rejected() {
        let text = r#"{
          "version": "1",
          "categories": [
            {"name": "Type of Motion", "kind": "enumerated", "keywords": ["rom"],
             "concepts": [{"id": "rom_active", "display_name": "Active"},
                           {"id": "rom_active", "display_name": "Active again"}]}
          ]
        }"#;
        assert!(matches!(
            Ontology::from_json(text),
            Err(OntologyError::Validation(_))
        ));
    }

    #[test]
    fn integer_category_with_concepts_rejected() {
        let text = r#"{
          "version": "1",
          "categories": [
            {"name": "Duration", "kind": "integer", "keywords": ["min"],
             "concepts": [{"id": "dur_short", "display_name": "Short"}]}
          ]
        }"#;
        assert!(matches!(
            Ontology::from_json(text),
            Err(OntologyError::Validation(_))
        ));
    }

    #[test]
    fn scoring_category_requires_keywords() {
        let text = r#"{
          "version": "1",
          "categories": [
            {"name": "Plane of Motion", "kind": "enumerated", "keywords": [],
             "concepts": [{"id": "plane_flexion", "display_name": "Flexion"}]}
          ]
        }"#;
        assert!(matches!(
            Ontology::from_json(text),
            Err(OntologyError::Validation(_))
        ));
    }

    #[test]
    fn load_is_deterministic() {
        let a = Ontology::from_json(DEFAULT_ONTOLOGY_JSON).unwrap();
        let b = Ontology::from_json(DEFAULT_ONTOLOGY_JSON).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn integer_categories_expose_value_concepts() {
        let ont = Ontology::default_shipped();
        for (id, cat) in [
            ("duration", NumericCategory::Duration),
            ("sets", NumericCategory::Sets),
            ("reps", NumericCategory::Reps),
        ] {
            let entry = ont.lookup_concept(id).unwrap();
            assert_eq!(entry.kind, CategoryKind::Integer);
            assert_eq!(entry.numeric_category(), Some(cat));
        }
    }

    #[test]
    fn slug_collapses_separators() {
        assert_eq!(slug("Number of Reps"), "number_of_reps");
        assert_eq!(slug("Duration"), "duration");
        assert_eq!(slug("Trunk/Core Strength"), "trunk_core_strength");
    }
}
