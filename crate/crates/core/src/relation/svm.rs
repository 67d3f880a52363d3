//! RBF-kernel SVM trained by sequential minimal optimization.
//!
//! Each binary subproblem minimizes `½ αᵀQα − Σα` with `Q_ij = y_i y_j K_ij`,
//! `0 ≤ α_i ≤ C_i` and `Σ α_i y_i = 0`. Working pairs are chosen with
//! second-order information; the bias follows the usual average over free
//! multipliers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NEGATIVE: &str = "NEGATIVE";

/// Sorted `(column, value)` pairs.
pub type SparseVec = Vec<(usize, f64)>;

pub fn sparse_dot(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

pub fn sq_norm(a: &SparseVec) -> f64 {
    a.iter().map(|(_, v)| v * v).sum()
}

pub fn rbf(a: &SparseVec, b: &SparseVec, gamma: f64) -> f64 {
    let d = (sq_norm(a) + sq_norm(b) - 2.0 * sparse_dot(a, b)).max(0.0);
    (-gamma * d).exp()
}

/// Squared-distance shortcut when norms are precomputed.
fn rbf_with_norms(a: &SparseVec, na: f64, b: &SparseVec, nb: f64, gamma: f64) -> f64 {
    (-gamma * (na + nb - 2.0 * sparse_dot(a, b)).max(0.0)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmConfig {
    pub c: f64,
    /// Weight of every non-NEGATIVE class unless overridden.
    pub positive_weight: f64,
    pub negative_weight: f64,
    /// Per-class overrides.
    pub class_weights: BTreeMap<String, f64>,
    /// `None` means `1 / feature_count`.
    pub rbf_gamma: Option<f64>,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            positive_weight: 10.0,
            negative_weight: 1.0,
            class_weights: BTreeMap::new(),
            rbf_gamma: None,
            tolerance: 1e-3,
            max_iter: 10_000_000,
        }
    }
}

impl SvmConfig {
    pub fn weight(&self, class: &str) -> f64 {
        self.class_weights.get(class).copied().unwrap_or(if class == NEGATIVE {
            self.negative_weight
        } else {
            self.positive_weight
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("svm c = {} must be positive", self.c)));
        }
        if self.tolerance <= 0.0 {
            return Err(Error::Config("svm tolerance must be positive".into()));
        }
        if let Some(g) = self.rbf_gamma {
            if g <= 0.0 {
                return Err(Error::Config("rbf_gamma must be positive".into()));
            }
        }
        let weights = [self.positive_weight, self.negative_weight];
        if weights.iter().chain(self.class_weights.values()).any(|w| *w <= 0.0) {
            return Err(Error::Config("class weights must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one binary subproblem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    /// Decision function is `Σ α_i y_i K(x_i, x) + bias`.
    pub bias: f64,
    /// Dual objective `Σα − ½ αᵀQα` after every update.
    pub objective_trace: Vec<f64>,
    /// Maximal KKT violation at exit.
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl BinarySolution {
    pub fn dual_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }
}

enum Kernel<'a> {
    Full(Vec<f64>),
    Lazy {
        x: &'a [SparseVec],
        norms: Vec<f64>,
        gamma: f64,
    },
}

impl Kernel<'_> {
    fn row(&self, i: usize, n: usize) -> std::borrow::Cow<'_, [f64]> {
        match self {
            Kernel::Full(k) => std::borrow::Cow::Borrowed(&k[i * n..(i + 1) * n]),
            Kernel::Lazy { x, norms, gamma } => std::borrow::Cow::Owned(
                (0..n)
                    .map(|j| rbf_with_norms(&x[i], norms[i], &x[j], norms[j], *gamma))
                    .collect(),
            ),
        }
    }
}

const FULL_KERNEL_LIMIT: usize = 25_000_000;
const TAU: f64 = 1e-12;

/// Solve one binary problem; `y` is ±1 and `upper` the per-example box.
pub fn smo(x: &[SparseVec], y: &[f64], upper: &[f64], gamma: f64, tolerance: f64, max_iter: usize) -> BinarySolution {
    let n = x.len();
    let norms: Vec<f64> = x.iter().map(sq_norm).collect();
    let kernel = if n * n <= FULL_KERNEL_LIMIT {
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rbf_with_norms(&x[i], norms[i], &x[j], norms[j], gamma);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        Kernel::Full(k)
    } else {
        Kernel::Lazy { x, norms, gamma }
    };
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let up = |a: f64, yi: f64, c: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64, c: f64| (yi < 0.0 && a < c) || (yi > 0.0 && a > 0.0);
    let objective = |alpha: &[f64], grad: &[f64]| -> f64 { -0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>() };

    let kkt_residual = loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if up(alpha[t], y[t], upper[t]) && -y[t] * grad[t] >= gmax {
                if -y[t] * grad[t] > gmax || i_sel.is_none() {
                    gmax = -y[t] * grad[t];
                    i_sel = Some(t);
                }
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        for t in 0..n {
            if low(alpha[t], y[t], upper[t]) {
                gmax2 = gmax2.max(y[t] * grad[t]);
            }
        }
        let residual = gmax + gmax2;
        let Some(i) = i_sel else { break 0.0 };
        if residual < tolerance || iterations >= max_iter {
            break residual.max(0.0);
        }
        let ki = kernel.row(i, n);
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t], upper[t]) {
                continue;
            }
            let b = gmax + y[t] * grad[t];
            if b > 0.0 {
                let mut a = ki[i] + kernel_diag() - 2.0 * ki[t];
                if a <= 0.0 {
                    a = TAU;
                }
                let v = -(b * b) / a;
                if v < best {
                    best = v;
                    j_sel = Some(t);
                }
            }
        }
        let Some(j) = j_sel else { break residual.max(0.0) };
        let kj = kernel.row(j, n);
        let (ci, cj) = (upper[i], upper[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * ki[j];
        if y[i] != y[j] {
            let quad = (ki[i] + kj[j] + 2.0 * qij).max(TAU);
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
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = (ki[i] + kj[j] - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for k in 0..n {
            grad[k] += y[k] * (y[i] * ki[k] * di + y[j] * kj[k] * dj);
        }
        iterations += 1;
        trace.push(objective(&alpha, &grad));
    };

    // Bias: mean of y·G over free multipliers, else the midpoint of bounds.
    let (mut ub, mut lb, mut sum_free, mut n_free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= upper[t] {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    if trace.is_empty() {
        trace.push(0.0);
    }
    BinarySolution {
        alpha,
        bias: -rho,
        objective_trace: trace,
        kkt_residual,
        iterations,
    }
}

/// `K(x, x)` for the RBF kernel.
fn kernel_diag() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub class: String,
    /// Indices into [`SvmModel::support_vectors`].
    pub support: Vec<usize>,
    /// `α_i y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// Sorted class names; NEGATIVE is a class like any other.
    pub classes: Vec<String>,
    pub rbf_gamma: f64,
    pub c: f64,
    pub class_weights: BTreeMap<String, f64>,
    pub support_vectors: Vec<SparseVec>,
    pub machines: Vec<Machine>,
}

/// One-vs-rest training. `feature_count` sets the default kernel width.
pub fn svm_train(x: &[SparseVec], y: &[String], cfg: &SvmConfig, feature_count: usize) -> Result<SvmModel> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(Error::Argument(format!("{} vectors for {} labels", x.len(), y.len())));
    }
    let mut classes: Vec<String> = y.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Training(format!(
            "SVM training needs at least two classes, found {}",
            classes.len()
        )));
    }
    if x.iter().flatten().any(|(_, v)| !v.is_finite()) {
        return Err(Error::Training("non-finite feature value".into()));
    }
    let gamma = cfg.rbf_gamma.unwrap_or(1.0 / feature_count.max(1) as f64);
    let upper: Vec<f64> = y.iter().map(|c| cfg.c * cfg.weight(c)).collect();
    let mut sv_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut support_vectors = Vec::new();
    let mut machines = Vec::new();
    for class in &classes {
        let yy: Vec<f64> = y.iter().map(|c| if c == class { 1.0 } else { -1.0 }).collect();
        let sol = smo(x, &yy, &upper, gamma, cfg.tolerance, cfg.max_iter);
        log::debug!(
            "class {class}: {} iterations, KKT residual {:.2e}",
            sol.iterations,
            sol.kkt_residual
        );
        let mut support = Vec::new();
        let mut coef = Vec::new();
        for (i, &a) in sol.alpha.iter().enumerate() {
            if a > 0.0 {
                let slot = *sv_of.entry(i).or_insert_with(|| {
                    support_vectors.push(x[i].clone());
                    support_vectors.len() - 1
                });
                support.push(slot);
                coef.push(a * yy[i]);
            }
        }
        machines.push(Machine {
            class: class.clone(),
            support,
            coef,
            bias: sol.bias,
            kkt_residual: sol.kkt_residual,
        });
    }
    Ok(SvmModel {
        class_weights: classes.iter().map(|c| (c.clone(), cfg.weight(c))).collect(),
        classes,
        rbf_gamma: gamma,
        c: cfg.c,
        support_vectors,
        machines,
    })
}

impl SvmModel {
    pub fn margins(&self, x: &SparseVec) -> Vec<f64> {
        let nx = sq_norm(x);
        let k: Vec<f64> = self
            .support_vectors
            .iter()
            .map(|s| rbf_with_norms(s, sq_norm(s), x, nx, self.rbf_gamma))
            .collect();
        self.machines
            .iter()
            .map(|m| m.support.iter().zip(&m.coef).map(|(&s, c)| c * k[s]).sum::<f64>() + m.bias)
            .collect()
    }
}

/// Highest one-vs-rest margin; ties go to the first class by name.
pub fn svm_predict(model: &SvmModel, x: &SparseVec) -> (String, Vec<f64>) {
    let margins = model.margins(x);
    let mut best = 0;
    for (i, &m) in margins.iter().enumerate() {
        if m > margins[best] {
            best = i;
        }
    }
    (model.classes[best].clone(), margins)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(a: f64, b: f64) -> SparseVec {
        vec![(0, a), (1, b)]
    }

    #[test]
    fn xor_is_shattered() {
        let x = vec![pt(0.0, 0.0), pt(1.0, 1.0), pt(0.0, 1.0), pt(1.0, 0.0)];
        let y: Vec<String> = ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
        let cfg = SvmConfig {
            c: 100.0,
            positive_weight: 1.0,
            rbf_gamma: Some(2.0),
            ..Default::default()
        };
        let m = svm_train(&x, &y, &cfg, 2).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(&svm_predict(&m, xi).0, yi);
        }
        assert!(m.machines.iter().all(|mc| mc.kkt_residual < 1e-3));
    }

    #[test]
    fn objective_never_decreases() {
        let x: Vec<SparseVec> = (0..12).map(|i| pt((i as f64 * 0.37).sin(), (i as f64 * 0.91).cos())).collect();
        let y: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let sol = smo(&x, &y, &[1.0; 12], 0.5, 1e-3, 100_000);
        assert!(sol.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        let balance: f64 = sol.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
        assert!(balance.abs() < 1e-6);
    }

    #[test]
    fn single_class_is_an_error() {
        let err = svm_train(&[pt(0.0, 1.0)], &["a".to_string()], &SvmConfig::default(), 2);
        assert!(matches!(err, Err(Error::Training(_))));
    }
}
