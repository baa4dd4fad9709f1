//! Uncased bag-of-words features. Tokens are maximal alphanumeric runs,
//! lowercased; the vocabulary is fitted to training sequences only and
//! indexed in lexicographic order. Counts, not binary indicators.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            for lc in c.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    index: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Fit to the training texts. Errors when no token occurs at all.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Option<Vocabulary> {
        let mut tokens: BTreeMap<String, u32> = BTreeMap::new();
        for text in texts {
            for tok in tokenize(text) {
                tokens.entry(tok).or_insert(0);
            }
        }
        if tokens.is_empty() {
            return None;
        }
        for (i, (_, slot)) in tokens.iter_mut().enumerate() {
            *slot = i as u32;
        }
        Some(Vocabulary { index: tokens })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Token counts over the vocabulary; out-of-vocabulary tokens dropped.
    pub fn vectorize(&self, text: &str) -> FeatureVector {
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for tok in tokenize(text) {
            if let Some(i) = self.index.get(&tok) {
                *counts.entry(*i).or_insert(0) += 1;
            }
        }
        FeatureVector {
            pairs: counts.into_iter().collect(),
        }
    }
}

/// Sparse count vector, pairs sorted by feature index.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub pairs: Vec<(u32, u32)>,
}

impl FeatureVector {
    pub fn dot(&self, other: &FeatureVector) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < self.pairs.len() && j < other.pairs.len() {
            match self.pairs[i].0.cmp(&other.pairs[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.pairs[i].1 as f64 * other.pairs[j].1 as f64;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn count(&self, feature: u32) -> u32 {
        self.pairs
            .binary_search_by_key(&feature, |p| p.0)
            .map(|i| self.pairs[i].1)
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_keep_letters_and_digits_together() {
        assert_eq!(tokenize("AROM LUE"), vec!["arom", "lue"]);
        assert_eq!(tokenize("arom x10"), vec!["arom", "x10"]);
        assert_eq!(tokenize("SLR- 2x10"), vec!["slr", "2x10"]);
    }

    #[test]
    fn vocabulary_is_sorted_and_deterministic() {
        let v = Vocabulary::build(["AROM LUE", "arom x10"]).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.index_of("arom"), Some(0));
        assert_eq!(v.index_of("lue"), Some(1));
        assert_eq!(v.index_of("x10"), Some(2));
        let again = Vocabulary::build(["AROM LUE", "arom x10"]).unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(Vocabulary::build([""]).is_none());
        assert!(Vocabulary::build(["  - "]).is_none());
    }

    #[test]
    fn vectorize_counts_and_drops_oov() {
        let v = Vocabulary::build(["arom lue"]).unwrap();
        let x = v.vectorize("AROM arom zzz");
        assert_eq!(x.pairs, vec![(0, 2)]);
        assert!(v.vectorize("").is_empty());
        assert!(v.vectorize("zzz qqq").is_empty());
    }

    #[test]
    fn sparse_dot_product() {
        let a = FeatureVector { pairs: vec![(0, 2), (3, 1)] };
        let b = FeatureVector { pairs: vec![(0, 1), (2, 5), (3, 4)] };
        assert_eq!(a.dot(&b), 2.0 + 4.0);
    }
}
