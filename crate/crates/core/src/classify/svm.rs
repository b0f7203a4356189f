//! Soft-margin support vector machines trained with SMO.
//!
//! The binary solver optimizes the dual
//!
//! ```text
//! min  1/2 a'Qa - e'a   subject to  0 <= a_i <= C,  y'a = 0
//! ```
//!
//! with `Q_ij = y_i y_j K(x_i, x_j)`, updating one pair of multipliers per
//! step. Pairs are chosen as the maximal violating `i` and the second-order
//! best partner `j`, which makes training deterministic without a random
//! seed. Training stops when the KKT violation gap drops below `tol`.
//!
//! Multiclass problems use one machine per label against all others.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub kernel: Kernel,
    /// Soft-margin penalty.
    pub c: f64,
    /// Stopping tolerance on the KKT violation gap.
    pub tol: f64,
    /// Iteration budget, in units of `max(n, 100)` pair updates.
    pub max_passes: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { kernel: Kernel::Rbf { gamma: 1.0 / super::FEATURE_DIM as f64 }, c: 10.0, tol: 1e-3, max_passes: 50 }
    }
}

/// One-vs-rest machine for a single label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    pub label: String,
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    pub coefficients: Vec<f64>,
    pub bias: f64,
    /// Explicit primal weights, linear kernel only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub converged: bool,
}

impl BinaryMachine {
    /// Decision value through the support-vector expansion.
    pub fn decision_dual(&self, kernel: &Kernel, x: &[f64]) -> f64 {
        self.support_vectors.iter().zip(&self.coefficients).map(|(sv, c)| c * kernel.eval(sv, x)).sum::<f64>()
            + self.bias
    }

    pub fn decision(&self, kernel: &Kernel, x: &[f64]) -> f64 {
        match &self.weights {
            Some(w) => w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias,
            None => self.decision_dual(kernel, x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    #[serde(rename = "C")]
    pub c: f64,
    pub dim: usize,
    /// Sorted lexicographically; `machines[i]` belongs to `labels[i]`.
    pub labels: Vec<String>,
    pub machines: Vec<BinaryMachine>,
}

impl SvmModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("svm model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(json).map_err(|e| Error::Model(e.to_string()))?;
        let labels_sorted = model.labels.windows(2).all(|w| w[0] < w[1]);
        let consistent = model.machines.len() == model.labels.len()
            && labels_sorted
            && model.machines.iter().zip(&model.labels).all(|(m, l)| {
                &m.label == l
                    && m.coefficients.len() == m.support_vectors.len()
                    && m.support_vectors.iter().all(|sv| sv.len() == model.dim)
            });
        if !consistent || model.labels.len() < 2 {
            return Err(Error::Model("inconsistent machine table".into()));
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

struct BinarySolution {
    alpha: Vec<f64>,
    bias: f64,
    iterations: usize,
    converged: bool,
}

/// Pair-wise SMO on a precomputed kernel matrix.
fn solve_binary(gram: &[Vec<f64>], y: &[f64], c: f64, tol: f64, max_iter: usize) -> BinarySolution {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let q = |i: usize, j: usize| y[i] * y[j] * gram[i][j];

    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // Maximal violator from the "up" set.
        let mut i = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] > g_max {
                g_max = -y[t] * grad[t];
                i = t;
            }
        }
        let mut g_min = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            g_min = g_min.min(v);
            if i != usize::MAX && v < g_max {
                let b = g_max - v;
                let a = gram[i][i] + gram[t][t] - 2.0 * gram[i][t];
                let obj = -(b * b) / if a > 0.0 { a } else { TAU };
                if obj < best_obj {
                    best_obj = obj;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || g_max - g_min < tol {
            converged = true;
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (gram[i][i] + gram[j][j] + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (gram[i][i] + gram[j][j] - 2.0 * q(i, j) * y[i] * y[j]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * di + q(t, j) * dj;
        }
    }

    // Bias from free multipliers, or the middle of the feasible interval.
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let (mut upper, mut lower) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += yg;
            free += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            upper = upper.min(yg);
        } else {
            lower = lower.max(yg);
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else if upper.is_finite() && lower.is_finite() {
        (upper + lower) / 2.0
    } else if upper.is_finite() {
        upper
    } else {
        lower
    };
    BinarySolution { alpha, bias: -rho, iterations, converged }
}

/// False for NaN.
fn positive(x: f64) -> bool {
    x.partial_cmp(&0.0) == Some(std::cmp::Ordering::Greater)
}

/// Trains one-vs-rest machines.
///
/// Samples are sorted canonically (by label, then feature bits) before
/// training, so the result does not depend on input order.
pub fn svm_train<F: AsRef<[f64]>>(samples: &[(F, String)], params: &SvmParams) -> Result<SvmModel> {
    if !positive(params.c) || !positive(params.tol) {
        return Err(Error::InvalidArgument("C and tol must be positive".into()));
    }
    if let Kernel::Rbf { gamma } = params.kernel {
        if !positive(gamma) {
            return Err(Error::InvalidArgument("rbf gamma must be positive".into()));
        }
    }
    let dim = samples.first().map(|(x, _)| x.as_ref().len()).ok_or_else(|| Error::Dataset("no samples".into()))?;
    for (x, _) in samples {
        let x = x.as_ref();
        if x.len() != dim {
            return Err(Error::dims(dim, x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("non-finite feature value".into()));
        }
    }
    let labels: Vec<String> = samples.iter().map(|(_, l)| l.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if labels.len() < 2 {
        return Err(Error::Dataset(format!("need at least two classes, found {}", labels.len())));
    }

    let mut ordered: Vec<(&[f64], &str)> = samples.iter().map(|(x, l)| (x.as_ref(), l.as_str())).collect();
    ordered.sort_by(|a, b| {
        a.1.cmp(b.1).then_with(|| {
            let ka = a.0.iter().map(|v| v.to_bits());
            let kb = b.0.iter().map(|v| v.to_bits());
            ka.cmp(kb)
        })
    });

    let n = ordered.len();
    let gram: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| params.kernel.eval(ordered[i].0, ordered[j].0)).collect())
        .collect();
    let max_iter = params.max_passes.max(1) * n.max(100);

    let machines = labels
        .par_iter()
        .map(|label| {
            let y: Vec<f64> = ordered.iter().map(|(_, l)| if *l == label { 1.0 } else { -1.0 }).collect();
            let sol = solve_binary(&gram, &y, params.c, params.tol, max_iter);
            let mut support_vectors = Vec::new();
            let mut coefficients = Vec::new();
            for (t, &a) in sol.alpha.iter().enumerate() {
                if a > 0.0 {
                    support_vectors.push(ordered[t].0.to_vec());
                    coefficients.push(a * y[t]);
                }
            }
            let weights = matches!(params.kernel, Kernel::Linear).then(|| {
                let mut w = vec![0.0; dim];
                for (sv, coef) in support_vectors.iter().zip(&coefficients) {
                    for (wk, xk) in w.iter_mut().zip(sv) {
                        *wk += coef * xk;
                    }
                }
                w
            });
            BinaryMachine {
                label: label.clone(),
                support_vectors,
                coefficients,
                bias: sol.bias,
                weights,
                iterations: sol.iterations,
                converged: sol.converged,
            }
        })
        .collect();

    Ok(SvmModel { kernel: params.kernel, c: params.c, dim, labels, machines })
}

/// Label with the largest one-vs-rest decision value; ties go to the
/// lexicographically smallest label.
pub fn svm_predict(model: &SvmModel, x: &[f64]) -> Result<(String, Vec<(String, f64)>)> {
    if x.len() != model.dim {
        return Err(Error::dims(model.dim, x.len()));
    }
    let scores: Vec<(String, f64)> =
        model.machines.iter().map(|m| (m.label.clone(), m.decision(&model.kernel, x))).collect();
    let mut best = 0;
    for (i, (_, s)) in scores.iter().enumerate().skip(1) {
        if *s > scores[best].1 {
            best = i;
        }
    }
    Ok((scores[best].0.clone(), scores))
}
