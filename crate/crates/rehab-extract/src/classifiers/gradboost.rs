//! Stagewise gradient boosting of depth-limited regression trees on the
//! binomial deviance, with shrinkage and Newton leaf values. The initial
//! score is the log-odds of the positive rate.

use super::features::FeatureVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradBoostConfig {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
}

impl Default for GradBoostConfig {
    fn default() -> Self {
        GradBoostConfig {
            n_estimators: 50,
            learning_rate: 0.1,
            max_depth: 3,
        }
    }
}

const LEAF_CLAMP: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: u32,
    pub threshold: f64,
    /// Child indices; -1 marks a leaf, in which case `value` is the output.
    pub left: i32,
    pub right: i32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &FeatureVector) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        let mut at = 0usize;
        loop {
            let node = self.nodes[at];
            if node.left < 0 {
                return node.value;
            }
            let v = x.count(node.feature) as f64;
            at = if v <= node.threshold {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradBoostModel {
    pub init_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Training deviance after the initial score and after each stage.
    pub staged_deviance: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn deviance(scores: &[f64], y: &[bool]) -> f64 {
    let mut acc = 0.0;
    for (&z, &label) in scores.iter().zip(y) {
        let t = if label { 1.0 } else { 0.0 };
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        acc += softplus - t * z;
    }
    acc
}

struct SplitSearch<'a> {
    xs: &'a [FeatureVector],
    residuals: &'a [f64],
    hessians: &'a [f64],
    dim: usize,
}

struct Split {
    feature: u32,
    threshold: f64,
    gain: f64,
}

impl<'a> SplitSearch<'a> {
    /// Best SSE-reducing split of `samples`, walking distinct count values
    /// per feature with the zero group handled implicitly.
    fn best_split(&self, samples: &[usize]) -> Option<Split> {
        let n = samples.len() as f64;
        if samples.len() < 2 {
            return None;
        }
        let sum: f64 = samples.iter().map(|&i| self.residuals[i]).sum();
        let sum_sq: f64 = samples.iter().map(|&i| self.residuals[i] * self.residuals[i]).sum();
        let parent_sse = sum_sq - sum * sum / n;
        if parent_sse <= 1e-12 {
            return None;
        }
        let member: std::collections::BTreeMap<usize, ()> =
            samples.iter().map(|&i| (i, ())).collect();

        let mut best: Option<Split> = None;
        for f in 0..self.dim {
            // gather nonzero values for this feature among node samples
            let mut present: Vec<(f64, f64)> = Vec::new(); // (value, residual)
            for &i in samples {
                let v = self.xs[i].count(f as u32) as f64;
                if v > 0.0 {
                    present.push((v, self.residuals[i]));
                }
            }
            if present.is_empty() {
                continue;
            }
            debug_assert!(member.len() == samples.len());
            present.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let mut gt_sum = 0.0;
            let mut gt_n = 0.0;
            let mut i = 0;
            while i < present.len() {
                let value = present[i].0;
                while i < present.len() && present[i].0 == value {
                    gt_sum += present[i].1;
                    gt_n += 1.0;
                    i += 1;
                }
                let next_value = present.get(i).map(|e| e.0).unwrap_or(0.0);
                let threshold = (value + next_value) / 2.0;
                let le_n = n - gt_n;
                if le_n < 1.0 || gt_n < 1.0 {
                    continue;
                }
                let le_sum = sum - gt_sum;
                let children_sse_delta = gt_sum * gt_sum / gt_n + le_sum * le_sum / le_n - sum * sum / n;
                let gain = children_sse_delta;
                let better = match &best {
                    None => gain > 1e-12,
                    Some(b) => gain > b.gain + 1e-15,
                };
                if better {
                    best = Some(Split {
                        feature: f as u32,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn leaf_value(&self, samples: &[usize]) -> f64 {
        let num: f64 = samples.iter().map(|&i| self.residuals[i]).sum();
        let den: f64 = samples.iter().map(|&i| self.hessians[i]).sum();
        if den < 1e-12 {
            0.0
        } else {
            (num / den).clamp(-LEAF_CLAMP, LEAF_CLAMP)
        }
    }

    fn grow(&self, tree: &mut Tree, samples: Vec<usize>, depth: usize, max_depth: usize) -> i32 {
        let split = if depth >= max_depth {
            None
        } else {
            self.best_split(&samples)
        };
        let at = tree.nodes.len() as i32;
        match split {
            None => {
                tree.nodes.push(TreeNode {
                    feature: 0,
                    threshold: 0.0,
                    left: -1,
                    right: -1,
                    value: self.leaf_value(&samples),
                });
                at
            }
            Some(split) => {
                tree.nodes.push(TreeNode {
                    feature: split.feature,
                    threshold: split.threshold,
                    left: -1,
                    right: -1,
                    value: 0.0,
                });
                let (le, gt): (Vec<usize>, Vec<usize>) = samples
                    .into_iter()
                    .partition(|&i| (self.xs[i].count(split.feature) as f64) <= split.threshold);
                let left = self.grow(tree, le, depth + 1, max_depth);
                let right = self.grow(tree, gt, depth + 1, max_depth);
                tree.nodes[at as usize].left = left;
                tree.nodes[at as usize].right = right;
                at
            }
        }
    }
}

pub fn train(xs: &[FeatureVector], y: &[bool], dim: usize, config: &GradBoostConfig) -> GradBoostModel {
    let n = xs.len();
    let pos = y.iter().filter(|&&b| b).count() as f64;
    let rate = pos / n as f64;
    let init_score = (rate / (1.0 - rate)).ln();

    let mut scores = vec![init_score; n];
    let mut staged_deviance = vec![deviance(&scores, y)];
    let mut trees = Vec::new();

    for _stage in 0..config.n_estimators {
        let mut residuals = vec![0.0; n];
        let mut hessians = vec![0.0; n];
        for i in 0..n {
            let p = sigmoid(scores[i]);
            let t = if y[i] { 1.0 } else { 0.0 };
            residuals[i] = t - p;
            hessians[i] = (p * (1.0 - p)).max(1e-12);
        }
        let search = SplitSearch {
            xs,
            residuals: &residuals,
            hessians: &hessians,
            dim,
        };
        let mut tree = Tree::default();
        search.grow(&mut tree, (0..n).collect(), 0, config.max_depth);
        for i in 0..n {
            scores[i] += config.learning_rate * tree.predict(&xs[i]);
        }
        staged_deviance.push(deviance(&scores, y));
        trees.push(tree);
    }

    GradBoostModel {
        init_score,
        learning_rate: config.learning_rate,
        trees,
        staged_deviance,
    }
}

impl GradBoostModel {
    pub fn decision(&self, x: &FeatureVector) -> f64 {
        let mut z = self.init_score;
        for tree in &self.trees {
            z += self.learning_rate * tree.predict(x);
        }
        z
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
    fn separable_fixture_is_fit() {
        let xs = vec![fv(&[(0, 1)]), fv(&[(0, 3), (1, 1)]), fv(&[(1, 2)]), fv(&[(2, 1)])];
        let y = vec![true, true, false, false];
        let m = train(&xs, &y, 3, &GradBoostConfig::default());
        for (x, &label) in xs.iter().zip(&y) {
            assert_eq!(m.predict(x), label);
        }
    }

    #[test]
    fn staged_deviance_never_increases() {
        let xs: Vec<FeatureVector> = (0..50)
            .map(|i| fv(&[(0, i % 5), (1, (i * 3) % 4), (2, (i * 7) % 3)]))
            .collect();
        let y: Vec<bool> = (0..50).map(|i| (i % 5 >= 2) != (i % 3 == 0)).collect();
        let m = train(&xs, &y, 3, &GradBoostConfig::default());
        assert_eq!(m.staged_deviance.len(), m.trees.len() + 1);
        for pair in m.staged_deviance.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "deviance rose: {pair:?}");
        }
    }

    #[test]
    fn depth_limit_is_respected() {
        let xs: Vec<FeatureVector> = (0..30).map(|i| fv(&[(0, i % 6), (1, i % 2)])).collect();
        let y: Vec<bool> = (0..30).map(|i| i % 6 >= 3).collect();
        let m = train(&xs, &y, 2, &GradBoostConfig { max_depth: 1, ..GradBoostConfig::default() });
        for tree in &m.trees {
            // depth 1: at most one split and two leaves
            assert!(tree.nodes.len() <= 3);
        }
    }
}
