//! Soft-margin SVM with the kernel `(x . y + 1)^d`, trained by sequential
//! minimal optimization with second-order working-set selection. Three
//! classes are handled one-vs-one.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{classes_present, dense, ModelBody, TrainedModel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::windowing::Label;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub degree: u32,
    pub c: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iters: usize,
    /// Kernel row cache budget.
    pub cache_mb: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            degree: 2,
            c: 0.25,
            tol: 1e-3,
            max_iters: 10_000_000,
            cache_mb: 256,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 {
            return Err(Error::Param("kernel degree must be >= 1".into()));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Param(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::Param("tol and max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[inline]
pub fn poly_kernel(a: &[f64], b: &[f64], degree: u32) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot + 1.0).powi(degree as i32)
}

/// Solution of the binary dual problem
/// `min 1/2 a'Qa - e'a  s.t.  0 <= a <= C, y'a = 0` with `Q_ij = y_i y_j K_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Offset `rho`; the decision function is `sum_i y_i a_i K(x_i, x) - rho`.
    pub rho: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct KernelRows<'a> {
    x: &'a [f64],
    p: usize,
    y: &'a [f64],
    degree: u32,
    rows: Vec<Option<Box<[f64]>>>,
    order: VecDeque<usize>,
    max_rows: usize,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a [f64], p: usize, y: &'a [f64], degree: u32, cache_mb: usize) -> Self {
        let n = y.len();
        let per_row = (n * 8).max(1);
        let max_rows = ((cache_mb << 20) / per_row).clamp(2, n.max(2));
        KernelRows {
            x,
            p,
            y,
            degree,
            rows: vec![None; n],
            order: VecDeque::new(),
            max_rows,
        }
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn k(&self, i: usize, j: usize) -> f64 {
        poly_kernel(self.point(i), self.point(j), self.degree)
    }

    /// Row `i` of `Q`.
    fn q_row(&mut self, i: usize) -> &[f64] {
        if self.rows[i].is_none() {
            if self.order.len() >= self.max_rows {
                if let Some(old) = self.order.pop_front() {
                    self.rows[old] = None;
                }
            }
            let yi = self.y[i];
            let row: Box<[f64]> = (0..self.y.len())
                .map(|j| yi * self.y[j] * self.k(i, j))
                .collect();
            self.rows[i] = Some(row);
            self.order.push_back(i);
        }
        self.rows[i].as_deref().expect("row just filled")
    }
}

fn in_up(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

fn in_low(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

/// SMO on a binary problem. `x` is row-major with `p` columns, `y` in {-1, +1}.
pub fn solve_dual(x: &[f64], p: usize, y: &[f64], params: &SvmParams) -> DualSolution {
    let n = y.len();
    let c = params.c;
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut kr = KernelRows::new(x, p, y, params.degree, params.cache_mb);
    let diag: Vec<f64> = (0..n).map(|i| kr.k(i, i)).collect();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iters {
        // i: maximal violating index among I_up.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(y[t], alpha[t], c) {
                let v = -y[t] * grad[t];
                if v >= gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = usize::MAX;
        if i_sel != usize::MAX {
            let qi: Vec<f64> = kr.q_row(i_sel).to_vec();
            let mut best = f64::INFINITY;
            for t in 0..n {
                if !in_low(y[t], alpha[t], c) {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                let b = gmax - v;
                if b > 0.0 {
                    // K_ii + K_tt - 2 K_it, with Q_it = y_i y_t K_it.
                    let mut a = diag[i_sel] + diag[t] - 2.0 * y[i_sel] * y[t] * qi[t];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj <= best {
                        best = obj;
                        j_sel = t;
                    }
                }
            }
        } else {
            for t in 0..n {
                if in_low(y[t], alpha[t], c) {
                    gmin = gmin.min(-y[t] * grad[t]);
                }
            }
        }
        if gmax - gmin < params.tol || j_sel == usize::MAX {
            converged = true;
            break;
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let qi: Vec<f64> = kr.q_row(i).to_vec();
        let qj: Vec<f64> = kr.q_row(j).to_vec();
        let (old_ai, old_aj) = (alpha[i], alpha[j]);

        if y[i] != y[j] {
            let mut quad = diag[i] + diag[j] + 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
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
            let mut quad = diag[i] + diag[j] - 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
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

        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        for t in 0..n {
            grad[t] += qi[t] * dai + qj[t] * daj;
        }
    }

    // rho from free vectors, else the midpoint of the feasible interval.
    let (mut ub, mut lb, mut sum_free, mut n_free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
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
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    let objective = alpha
        .iter()
        .zip(&grad)
        .map(|(a, g)| a * (g - 1.0))
        .sum::<f64>()
        / 2.0;
    DualSolution {
        alpha,
        rho,
        objective,
        iterations,
        converged,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    /// Class on the positive side of the decision function.
    pub positive: Label,
    pub negative: Label,
    pub support_vectors: Vec<Vec<f64>>,
    /// `y_i * alpha_i` per support vector.
    pub dual_coefs: Vec<f64>,
    pub rho: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64], degree: u32) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, a)| a * poly_kernel(sv, x, degree))
            .sum::<f64>()
            - self.rho
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub params: SvmParams,
    pub machines: Vec<BinarySvm>,
}

impl SvmModel {
    /// Votes and summed decision values per class.
    pub fn tally(&self, x: &[f64]) -> ([u32; 3], [f64; 3]) {
        let mut votes = [0u32; 3];
        let mut sums = [0.0; 3];
        for m in &self.machines {
            let f = m.decision(x, self.params.degree);
            if f > 0.0 {
                votes[m.positive.index()] += 1;
            } else {
                votes[m.negative.index()] += 1;
            }
            sums[m.positive.index()] += f;
            sums[m.negative.index()] -= f;
        }
        (votes, sums)
    }

    pub fn predict_one(&self, x: &[f64]) -> (Label, [f64; 3]) {
        let (votes, sums) = self.tally(x);
        let mut best = 0;
        for c in 1..3 {
            if votes[c] > votes[best] || (votes[c] == votes[best] && sums[c] > sums[best]) {
                best = c;
            }
        }
        (Label::ALL[best], self.scores(x))
    }

    /// Summed decision values, with classes no machine covers at `-inf`.
    pub fn scores(&self, x: &[f64]) -> [f64; 3] {
        let (_, mut sums) = self.tally(x);
        let mut covered = [false; 3];
        for m in &self.machines {
            covered[m.positive.index()] = true;
            covered[m.negative.index()] = true;
        }
        for c in 0..3 {
            if !covered[c] {
                sums[c] = f64::NEG_INFINITY;
            }
        }
        sums
    }
}

pub fn svm_fit(train: &FeatureMatrix, params: &SvmParams) -> Result<TrainedModel> {
    params.validate()?;
    let (x, labels, p) = dense(train)?;
    let present = classes_present(&labels);
    if present.iter().filter(|&&b| b).count() < 2 {
        return Err(Error::Fit("training rows contain fewer than two classes".into()));
    }
    let mut machines = Vec::new();
    let mut diagnostics = Vec::new();
    for a in 0..3 {
        for b in a + 1..3 {
            if !(present[a] && present[b]) {
                continue;
            }
            let (pos, neg) = (Label::ALL[a], Label::ALL[b]);
            let idx: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] == pos || labels[i] == neg)
                .collect();
            let mut xs = Vec::with_capacity(idx.len() * p);
            for &i in &idx {
                xs.extend_from_slice(&x[i * p..(i + 1) * p]);
            }
            let ys: Vec<f64> = idx
                .iter()
                .map(|&i| if labels[i] == pos { 1.0 } else { -1.0 })
                .collect();
            let sol = solve_dual(&xs, p, &ys, params);
            if !sol.converged {
                diagnostics.push(format!(
                    "{pos}/{neg} machine stopped at the iteration cap ({})",
                    sol.iterations
                ));
            }
            let (mut svs, mut coefs) = (Vec::new(), Vec::new());
            for (t, &a_t) in sol.alpha.iter().enumerate() {
                if a_t > 0.0 {
                    svs.push(xs[t * p..(t + 1) * p].to_vec());
                    coefs.push(ys[t] * a_t);
                }
            }
            machines.push(BinarySvm {
                positive: pos,
                negative: neg,
                support_vectors: svs,
                dual_coefs: coefs,
                rho: sol.rho,
                converged: sol.converged,
                iterations: sol.iterations,
            });
        }
    }
    let converged = machines.iter().all(|m| m.converged);
    Ok(TrainedModel::new(
        train.feature_ids.clone(),
        ModelBody::Svm(SvmModel {
            params: *params,
            machines,
        }),
        converged,
        diagnostics,
    ))
}
