//! Logistic regression trained by full-batch gradient descent on the
//! weighted sum of per-sample log-losses. The learning rate is the headline
//! hyperparameter (1e-4); descent stops at `max_epochs` or when the loss
//! delta falls under `tol`.

use super::features::FeatureVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            learning_rate: 1e-4,
            max_epochs: 10_000,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub epochs_run: usize,
    pub converged: bool,
    pub final_loss: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn score(weights: &[f64], bias: f64, x: &FeatureVector) -> f64 {
    let mut z = bias;
    for &(i, c) in &x.pairs {
        z += weights[i as usize] * c as f64;
    }
    z
}

/// Weighted log-loss and its analytic gradient, shared by training and the
/// finite-difference check.
pub fn loss_and_gradient(
    weights: &[f64],
    bias: f64,
    xs: &[FeatureVector],
    y: &[bool],
    sample_weights: &[f64],
) -> (f64, Vec<f64>, f64) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; weights.len()];
    let mut grad_bias = 0.0;
    for ((x, &label), &w) in xs.iter().zip(y).zip(sample_weights) {
        let z = score(weights, bias, x);
        let t = if label { 1.0 } else { 0.0 };
        loss += w * (softplus(z) - t * z);
        let g = w * (sigmoid(z) - t);
        grad_bias += g;
        for &(i, c) in &x.pairs {
            grad[i as usize] += g * c as f64;
        }
    }
    (loss, grad, grad_bias)
}

pub fn train(
    xs: &[FeatureVector],
    y: &[bool],
    sample_weights: &[f64],
    dim: usize,
    config: &LogRegConfig,
) -> LogRegModel {
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut prev_loss = f64::INFINITY;
    let mut epochs_run = 0;
    let mut converged = false;
    let mut final_loss = 0.0;
    for epoch in 0..config.max_epochs {
        let (loss, grad, grad_bias) = loss_and_gradient(&weights, bias, xs, y, sample_weights);
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= config.learning_rate * g;
        }
        bias -= config.learning_rate * grad_bias;
        epochs_run = epoch + 1;
        final_loss = loss;
        if (prev_loss - loss).abs() < config.tol {
            converged = true;
            break;
        }
        prev_loss = loss;
    }
    LogRegModel {
        weights,
        bias,
        epochs_run,
        converged,
        final_loss,
    }
}

impl LogRegModel {
    pub fn decision(&self, x: &FeatureVector) -> f64 {
        score(&self.weights, self.bias, x)
    }

    /// Strictly greater than 0.5 predicts positive; an exact 0.5 tie is
    /// negative.
    pub fn predict(&self, x: &FeatureVector) -> bool {
        sigmoid(self.decision(x)) > 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(pairs: &[(u32, u32)]) -> FeatureVector {
        FeatureVector { pairs: pairs.to_vec() }
    }

    #[test]
    fn zero_model_predicts_negative_on_the_tie() {
        let m = LogRegModel {
            weights: vec![0.0; 3],
            bias: 0.0,
            epochs_run: 0,
            converged: true,
            final_loss: 0.0,
        };
        assert!(!m.predict(&fv(&[(0, 5)])));
        assert!(!m.predict(&fv(&[])));
    }

    #[test]
    fn separable_indicator_token_is_learned() {
        // feature 0 present iff positive
        let xs = vec![
            fv(&[(0, 1), (1, 1)]),
            fv(&[(0, 2)]),
            fv(&[(1, 1)]),
            fv(&[(2, 1)]),
        ];
        let y = vec![true, true, false, false];
        let w = vec![1.0; 4];
        let m = train(&xs, &y, &w, 3, &LogRegConfig { learning_rate: 0.5, max_epochs: 2000, tol: 1e-12 });
        for (x, &label) in xs.iter().zip(&y) {
            assert_eq!(m.predict(x), label);
        }
    }

    #[test]
    fn loss_is_non_increasing_under_descent() {
        let xs = vec![fv(&[(0, 1)]), fv(&[(1, 2)]), fv(&[(0, 1), (1, 1)]), fv(&[(2, 3)])];
        let y = vec![true, false, true, false];
        let w = vec![2.0, 0.5, 1.0, 1.0];
        let cfg = LogRegConfig::default();
        let mut weights = vec![0.0; 3];
        let mut bias = 0.0;
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let (loss, grad, gb) = loss_and_gradient(&weights, bias, &xs, &y, &w);
            assert!(loss <= last + 1e-12, "loss rose: {loss} > {last}");
            last = loss;
            for (wi, g) in weights.iter_mut().zip(&grad) {
                *wi -= cfg.learning_rate * g;
            }
            bias -= cfg.learning_rate * gb;
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let xs = vec![fv(&[(0, 1), (2, 2)]), fv(&[(1, 1)]), fv(&[(0, 3), (1, 1), (2, 1)])];
        let y = vec![true, false, true];
        let sw = vec![1.5, 0.75, 2.0];
        let weights = vec![0.3, -0.2, 0.1];
        let bias = 0.05;
        let (_, grad, grad_bias) = loss_and_gradient(&weights, bias, &xs, &y, &sw);
        let h = 1e-6;
        for k in 0..weights.len() {
            let mut wp = weights.clone();
            let mut wm = weights.clone();
            wp[k] += h;
            wm[k] -= h;
            let (lp, _, _) = loss_and_gradient(&wp, bias, &xs, &y, &sw);
            let (lm, _, _) = loss_and_gradient(&wm, bias, &xs, &y, &sw);
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() / grad[k].abs().max(1.0) < 1e-5,
                "feature {k}: fd {fd} vs analytic {}",
                grad[k]
            );
        }
        let (lp, _, _) = loss_and_gradient(&weights, bias + h, &xs, &y, &sw);
        let (lm, _, _) = loss_and_gradient(&weights, bias - h, &xs, &y, &sw);
        let fd = (lp - lm) / (2.0 * h);
        assert!((fd - grad_bias).abs() / grad_bias.abs().max(1.0) < 1e-5);
    }
}
