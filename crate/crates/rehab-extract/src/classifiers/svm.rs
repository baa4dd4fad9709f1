//! Soft-margin SVM with the degree-2 polynomial kernel (u.v + 1)^2, solved
//! in the dual by sequential minimal optimization. Per-class costs are
//! C * class_weight; pair selection is the deterministic max-|E_i - E_j|
//! heuristic so identical inputs give identical models.

use super::features::FeatureVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    /// KKT tolerance used both to pick violators and to declare convergence.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            tol: 5e-4,
            max_sweeps: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<FeatureVector>,
    /// alpha_i * y_i for each support vector.
    pub coefficients: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
    pub max_kkt_residual: f64,
}

pub fn kernel(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let d = a.dot(b) + 1.0;
    d * d
}

pub fn train(xs: &[FeatureVector], y: &[bool], class_costs: (f64, f64), config: &SvmConfig) -> SvmModel {
    let n = xs.len();
    let labels: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
    let costs: Vec<f64> = y
        .iter()
        .map(|&b| if b { class_costs.0 } else { class_costs.1 })
        .collect();

    let gram: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| kernel(&xs[i], &xs[j])).collect())
        .collect();

    let mut alpha = vec![0.0f64; n];
    let mut bias = 0.0f64;
    // f_i = sum_j alpha_j y_j K_ij (bias excluded)
    let mut f = vec![0.0f64; n];
    let mut converged = false;

    for _sweep in 0..config.max_sweeps {
        let mut changed = 0usize;
        for i in 0..n {
            let e_i = f[i] + bias - labels[i];
            let r = labels[i] * e_i;
            let violates =
                (r < -config.tol && alpha[i] < costs[i]) || (r > config.tol && alpha[i] > 0.0);
            if !violates {
                continue;
            }
            // deterministic second choice: maximize |E_i - E_j|
            let mut j_best = usize::MAX;
            let mut gap_best = -1.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let e_j = f[j] + bias - labels[j];
                let gap = (e_i - e_j).abs();
                if gap > gap_best {
                    gap_best = gap;
                    j_best = j;
                }
            }
            if j_best == usize::MAX {
                continue;
            }
            let j = j_best;
            let e_j = f[j] + bias - labels[j];

            let (alpha_i_old, alpha_j_old) = (alpha[i], alpha[j]);
            let (lo, hi) = if labels[i] != labels[j] {
                let d = alpha_j_old - alpha_i_old;
                (d.max(0.0), (costs[i] + d).min(costs[j]))
            } else {
                let s = alpha_i_old + alpha_j_old;
                ((s - costs[i]).max(0.0), s.min(costs[j]))
            };
            if lo >= hi {
                continue;
            }
            let eta = 2.0 * gram[i][j] - gram[i][i] - gram[j][j];
            if eta >= 0.0 {
                continue;
            }
            let mut alpha_j_new = alpha_j_old - labels[j] * (e_i - e_j) / eta;
            alpha_j_new = alpha_j_new.clamp(lo, hi);
            if (alpha_j_new - alpha_j_old).abs() < 1e-12 {
                continue;
            }
            let alpha_i_new = alpha_i_old + labels[i] * labels[j] * (alpha_j_old - alpha_j_new);

            let b1 = bias
                - e_i
                - labels[i] * (alpha_i_new - alpha_i_old) * gram[i][i]
                - labels[j] * (alpha_j_new - alpha_j_old) * gram[i][j];
            let b2 = bias
                - e_j
                - labels[i] * (alpha_i_new - alpha_i_old) * gram[i][j]
                - labels[j] * (alpha_j_new - alpha_j_old) * gram[j][j];
            bias = if alpha_i_new > 0.0 && alpha_i_new < costs[i] {
                b1
            } else if alpha_j_new > 0.0 && alpha_j_new < costs[j] {
                b2
            } else {
                (b1 + b2) / 2.0
            };

            let (di, dj) = (alpha_i_new - alpha_i_old, alpha_j_new - alpha_j_old);
            for k in 0..n {
                f[k] += di * labels[i] * gram[i][k] + dj * labels[j] * gram[j][k];
            }
            alpha[i] = alpha_i_new;
            alpha[j] = alpha_j_new;
            changed += 1;
        }
        if changed == 0 {
            converged = true;
            break;
        }
    }

    let mut max_residual = 0.0f64;
    for i in 0..n {
        let yf = labels[i] * (f[i] + bias);
        let residual = if alpha[i] <= 1e-9 {
            (1.0 - yf).max(0.0)
        } else if alpha[i] >= costs[i] - 1e-9 {
            (yf - 1.0).max(0.0)
        } else {
            (yf - 1.0).abs()
        };
        max_residual = max_residual.max(residual);
    }

    let mut support_vectors = Vec::new();
    let mut coefficients = Vec::new();
    for i in 0..n {
        if alpha[i] > 1e-12 {
            support_vectors.push(xs[i].clone());
            coefficients.push(alpha[i] * labels[i]);
        }
    }

    SvmModel {
        support_vectors,
        coefficients,
        bias,
        converged,
        max_kkt_residual: max_residual,
    }
}

impl SvmModel {
    pub fn decision(&self, x: &FeatureVector) -> f64 {
        let mut acc = self.bias;
        for (sv, coef) in self.support_vectors.iter().zip(&self.coefficients) {
            acc += coef * kernel(sv, x);
        }
        acc
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

    /// Parity fixture: (0,0) and (1,1) positive, (0,1) and (1,0) negative.
    /// Linearly inseparable; the x1*x2 cross term of the squared kernel
    /// separates it.
    fn xor_fixture() -> (Vec<FeatureVector>, Vec<bool>) {
        let xs = vec![
            fv(&[]),
            fv(&[(0, 1), (1, 1)]),
            fv(&[(1, 1)]),
            fv(&[(0, 1)]),
        ];
        let y = vec![true, true, false, false];
        (xs, y)
    }

    #[test]
    fn xor_is_separated_by_the_degree_two_kernel() {
        let (xs, y) = xor_fixture();
        let m = train(&xs, &y, (1.0, 1.0), &SvmConfig::default());
        assert!(m.converged);
        for (x, &label) in xs.iter().zip(&y) {
            assert_eq!(m.predict(x), label, "x = {x:?}");
        }
        assert!(m.max_kkt_residual < 1e-3, "residual {}", m.max_kkt_residual);
    }

    #[test]
    fn kernel_is_symmetric() {
        let a = fv(&[(0, 2), (3, 1)]);
        let b = fv(&[(0, 1), (2, 4)]);
        assert_eq!(kernel(&a, &b), kernel(&b, &a));
        assert_eq!(kernel(&a, &fv(&[])), 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let (xs, y) = xor_fixture();
        let a = train(&xs, &y, (2.0, 0.5), &SvmConfig::default());
        let b = train(&xs, &y, (2.0, 0.5), &SvmConfig::default());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
