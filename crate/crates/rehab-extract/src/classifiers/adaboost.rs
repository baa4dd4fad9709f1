//! AdaBoost over exhaustive best-threshold decision stumps on count
//! features. Stump search walks the distinct values of each feature (zeros
//! included), so sparse columns stay cheap; ties break toward the lowest
//! feature index and threshold for determinism.

use super::features::FeatureVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostConfig {
    pub n_estimators: usize,
}

impl Default for AdaBoostConfig {
    fn default() -> Self {
        AdaBoostConfig { n_estimators: 100 }
    }
}

/// Depth-1 threshold classifier: predicts `polarity` when the feature count
/// exceeds the threshold, `-polarity` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: u32,
    pub threshold: f64,
    pub polarity: i8,
    pub alpha: f64,
    /// Weighted error on the round's distribution; accepted stumps are < 0.5.
    pub round_error: f64,
}

impl Stump {
    fn classify(&self, x: &FeatureVector) -> f64 {
        let v = x.count(self.feature) as f64;
        let raw = if v > self.threshold { 1.0 } else { -1.0 };
        raw * self.polarity as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub stumps: Vec<Stump>,
}

/// Per-feature column: sample indices with their nonzero counts, sorted by
/// count descending.
struct Column {
    entries: Vec<(usize, f64)>,
}

fn columns(xs: &[FeatureVector], dim: usize) -> Vec<Column> {
    let mut cols: Vec<Column> = (0..dim).map(|_| Column { entries: Vec::new() }).collect();
    for (row, x) in xs.iter().enumerate() {
        for &(f, c) in &x.pairs {
            cols[f as usize].entries.push((row, c as f64));
        }
    }
    for col in &mut cols {
        col.entries
            .sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    }
    cols
}

struct BestStump {
    feature: u32,
    threshold: f64,
    polarity: i8,
    error: f64,
}

/// Exhaustive stump search under the current weight distribution.
fn best_stump(cols: &[Column], weights: &[f64], labels: &[f64]) -> Option<BestStump> {
    let total_pos: f64 = weights
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l > 0.0)
        .map(|(w, _)| w)
        .sum();
    let total: f64 = weights.iter().sum();

    let mut best: Option<BestStump> = None;
    let mut consider = |feature: u32, threshold: f64, pos_gt: f64, neg_gt: f64| {
        // polarity +1: predict positive above the threshold
        let err_plus = neg_gt + (total_pos - pos_gt);
        let err_minus = total - err_plus;
        for (polarity, error) in [(1i8, err_plus), (-1i8, err_minus)] {
            let better = match &best {
                None => true,
                Some(b) => error < b.error - 1e-15,
            };
            if better {
                best = Some(BestStump {
                    feature,
                    threshold,
                    polarity,
                    error,
                });
            }
        }
    };

    for (f, col) in cols.iter().enumerate() {
        if col.entries.is_empty() {
            continue;
        }
        let mut pos_gt = 0.0;
        let mut neg_gt = 0.0;
        let mut i = 0;
        while i < col.entries.len() {
            let value = col.entries[i].1;
            while i < col.entries.len() && col.entries[i].1 == value {
                let (row, _) = col.entries[i];
                if labels[row] > 0.0 {
                    pos_gt += weights[row];
                } else {
                    neg_gt += weights[row];
                }
                i += 1;
            }
            let next_value = col.entries.get(i).map(|e| e.1).unwrap_or(0.0);
            let threshold = (value + next_value) / 2.0;
            consider(f as u32, threshold, pos_gt, neg_gt);
        }
    }
    best
}

pub fn train(xs: &[FeatureVector], y: &[bool], dim: usize, config: &AdaBoostConfig) -> AdaBoostModel {
    let n = xs.len();
    let labels: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
    let cols = columns(xs, dim);
    let mut weights = vec![1.0 / n as f64; n];
    let mut stumps = Vec::new();

    for _round in 0..config.n_estimators {
        let Some(found) = best_stump(&cols, &weights, &labels) else {
            break;
        };
        if found.error >= 0.5 - 1e-12 {
            break;
        }
        let eps = found.error.max(1e-10);
        let alpha = 0.5 * ((1.0 - eps) / eps).ln();
        let stump = Stump {
            feature: found.feature,
            threshold: found.threshold,
            polarity: found.polarity,
            alpha,
            round_error: found.error,
        };
        let mut z = 0.0;
        for i in 0..n {
            weights[i] *= (-alpha * labels[i] * stump.classify(&xs[i])).exp();
            z += weights[i];
        }
        for w in &mut weights {
            *w /= z;
        }
        stumps.push(stump);
        if found.error < 1e-10 {
            break;
        }
    }
    AdaBoostModel { stumps }
}

impl AdaBoostModel {
    pub fn decision(&self, x: &FeatureVector) -> f64 {
        self.stumps.iter().map(|s| s.alpha * s.classify(x)).sum()
    }

    pub fn predict(&self, x: &FeatureVector) -> bool {
        self.decision(x) > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(pairs: &[(u32, u32)]) -> FeatureVector {
        FeatureVector { pairs: pairs.to_vec() }
    }

    #[test]
    fn indicator_token_is_learned_in_one_round() {
        let xs = vec![fv(&[(0, 1)]), fv(&[(0, 2), (1, 1)]), fv(&[(1, 1)]), fv(&[(2, 1)])];
        let y = vec![true, true, false, false];
        let m = train(&xs, &y, 3, &AdaBoostConfig::default());
        assert_eq!(m.stumps.len(), 1);
        assert!(m.stumps[0].round_error < 1e-10);
        for (x, &label) in xs.iter().zip(&y) {
            assert_eq!(m.predict(x), label);
        }
    }

    #[test]
    fn accepted_stumps_all_beat_chance() {
        // noisy labels so several rounds run
        let xs: Vec<FeatureVector> = (0..40)
            .map(|i| fv(&[(0, i % 3), (1, (i * 7) % 4), (2, (i * 5) % 2)]))
            .collect();
        let y: Vec<bool> = (0..40).map(|i| (i % 3 == 0) != (i % 7 == 0)).collect();
        let m = train(&xs, &y, 3, &AdaBoostConfig { n_estimators: 25 });
        assert!(!m.stumps.is_empty());
        for s in &m.stumps {
            assert!(s.round_error < 0.5, "round error {}", s.round_error);
        }
    }

    #[test]
    fn training_error_respects_the_exponential_bound() {
        let xs: Vec<FeatureVector> = (0..30)
            .map(|i| fv(&[(0, i % 4), (1, (i * 3) % 5)]))
            .collect();
        let y: Vec<bool> = (0..30).map(|i| i % 4 >= 2).collect();
        let m = train(&xs, &y, 2, &AdaBoostConfig { n_estimators: 15 });
        let mut errors = 0.0;
        for (x, &label) in xs.iter().zip(&y) {
            if m.predict(x) != label {
                errors += 1.0;
            }
        }
        let bound: f64 = m
            .stumps
            .iter()
            .map(|s| 2.0 * (s.round_error * (1.0 - s.round_error)).sqrt())
            .product();
        assert!(
            errors / xs.len() as f64 <= bound + 1e-9,
            "error {} above bound {bound}",
            errors / xs.len() as f64
        );
    }
}
