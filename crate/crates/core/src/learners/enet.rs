//! Elastic-net penalized logistic regression, one-vs-rest over the three
//! movement classes.
//!
//! Each binary machine minimizes
//!
//! ```text
//! (1/n) sum_i [log(1 + exp(eta_i)) - y_i eta_i] + lambda * (a * |beta|_1 + (1 - a)/2 * |beta|_2^2)
//! ```
//!
//! with `eta_i = b + x_i . beta` and an unpenalized intercept `b`, by a
//! proximal Newton method: each sweep minimizes the penalized second-order
//! model with cyclic soft-threshold coordinate descent and backtracks until
//! the objective decreases.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{classes_present, dense, ModelBody, TrainedModel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::stats;
use crate::windowing::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnetParams {
    pub lambda: f64,
    pub alpha_star: f64,
    /// Cap on full coordinate sweeps.
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for EnetParams {
    fn default() -> Self {
        EnetParams {
            lambda: 1e-3,
            alpha_star: 0.5,
            max_iters: 100_000,
            tol: 1e-7,
        }
    }
}

impl EnetParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Param(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha_star) {
            return Err(Error::Param(format!(
                "alpha* must be in [0, 1], got {}",
                self.alpha_star
            )));
        }
        if self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::Param("max_iters and tol must be positive".into()));
        }
        Ok(())
    }
}

#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

#[inline]
fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Design matrix shared by every machine of a fit, with a leading column of
/// ones for the intercept, and its Gram matrix.
pub struct Design {
    /// `(p + 1) x n`: one column per sample, row 0 all ones.
    at: DMatrix<f64>,
    n: usize,
    /// Row-major `(p + 1) x (p + 1)` matrix `A'A / n`.
    gram: Vec<f64>,
}

impl Design {
    /// `x` is row-major with `p` columns.
    pub fn new(x: &[f64], p: usize) -> Design {
        let n = if p == 0 { 0 } else { x.len() / p };
        let at = DMatrix::from_fn(p + 1, n, |j, i| if j == 0 { 1.0 } else { x[i * p + j - 1] });
        let mut gram = weighted_gram(&at, None);
        gram[0] = 1.0;
        Design { at, n, gram }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.at.nrows() - 1
    }

    fn eta(&self, intercept: f64, coefs: &[f64]) -> Vec<f64> {
        let beta = DVector::from_iterator(coefs.len() + 1, std::iter::once(intercept).chain(coefs.iter().copied()));
        (beta.transpose() * &self.at).data.into()
    }

    /// `A'(prob - y) / n`: gradient of the mean logistic loss, intercept first.
    fn gradient_from(&self, prob: &[f64], y: &[f64]) -> Vec<f64> {
        let resid = DVector::from_iterator(self.n, prob.iter().zip(y).map(|(p, yi)| p - yi));
        let g = &self.at * resid / self.n.max(1) as f64;
        g.data.into()
    }

    /// Gradient of the mean logistic loss: intercept first, then coefficients.
    fn loss_gradient(&self, y: &[f64], intercept: f64, coefs: &[f64]) -> Vec<f64> {
        let prob: Vec<f64> = self.eta(intercept, coefs).into_iter().map(sigmoid).collect();
        self.gradient_from(&prob, y)
    }

    /// Penalized objective of one binary machine.
    pub fn objective(&self, y: &[f64], intercept: f64, coefs: &[f64], params: &EnetParams) -> f64 {
        let l1 = params.lambda * params.alpha_star;
        let l2 = params.lambda * (1.0 - params.alpha_star);
        self.objective_at(y, intercept, coefs, l1, l2).0
    }

    /// Objective and linear predictor at a point.
    fn objective_at(&self, y: &[f64], intercept: f64, coefs: &[f64], l1: f64, l2: f64) -> (f64, Vec<f64>) {
        let eta = self.eta(intercept, coefs);
        let loss = eta
            .iter()
            .zip(y)
            .map(|(e, yi)| softplus(*e) - yi * e)
            .sum::<f64>()
            / self.n as f64;
        let pen: f64 = coefs.iter().map(|b| l1 * b.abs() + 0.5 * l2 * b * b).sum();
        (loss + pen, eta)
    }
}

/// Row-major `A' W A / n` from `at = A'`, with `W = diag(w)` or the identity.
fn weighted_gram(at: &DMatrix<f64>, w: Option<&[f64]>) -> Vec<f64> {
    let n = at.ncols().max(1) as f64;
    let h = match w {
        Some(w) => {
            let mut zt = at.clone();
            for (mut col, wi) in zt.column_iter_mut().zip(w) {
                col *= wi.sqrt();
            }
            &zt * zt.transpose()
        }
        None => at * at.transpose(),
    };
    // Symmetric, so column-major storage reads the same as row-major.
    h.data.as_vec().iter().map(|v| v / n).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFit {
    pub intercept: f64,
    pub coefs: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    /// `(intercept, coefs)` after every sweep, when tracing was requested.
    pub trace: Vec<(f64, Vec<f64>)>,
}

fn kkt_from_gradient(g: &[f64], coefs: &[f64], l1: f64, l2: f64) -> f64 {
    let mut worst = g[0].abs();
    for (gj, &b) in g[1..].iter().zip(coefs) {
        let v = if b == 0.0 {
            (gj.abs() - l1).max(0.0)
        } else {
            (gj + l2 * b + l1 * b.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Largest violation of the optimality conditions at `(intercept, coefs)`.
pub fn kkt_residual(design: &Design, y: &[f64], intercept: f64, coefs: &[f64], params: &EnetParams) -> f64 {
    let g = design.loss_gradient(y, intercept, coefs);
    kkt_from_gradient(
        &g,
        coefs,
        params.lambda * params.alpha_star,
        params.lambda * (1.0 - params.alpha_star),
    )
}

/// Coordinate sweeps spent on a subproblem before the active-set polish.
const WARM_SWEEPS: usize = 10;
/// Coordinate sweeps allowed when the active-set polish cannot run.
const FALLBACK_SWEEPS: usize = 100_000;
const MAX_PATTERN_STEPS: usize = 10_000;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// `c'b + 1/2 b'Hb + l1 * sum_{j >= 1} |b_j|` over the full coordinate
/// vector, intercept at index 0. `h` is row-major `q x q` and already holds
/// the ridge term on its diagonal.
struct Subproblem<'a> {
    h: &'a [f64],
    c: &'a [f64],
    q: usize,
    l1: f64,
    usable: &'a [bool],
}

impl Subproblem<'_> {
    fn grad(&self, b: &[f64]) -> Vec<f64> {
        let q = self.q;
        (0..q)
            .map(|j| self.c[j] + self.h[j * q..(j + 1) * q].iter().zip(b).map(|(h, x)| h * x).sum::<f64>())
            .collect()
    }

    fn hess_times(&self, d: &[f64]) -> Vec<f64> {
        let q = self.q;
        (0..q)
            .map(|j| self.h[j * q..(j + 1) * q].iter().zip(d).map(|(h, x)| h * x).sum::<f64>())
            .collect()
    }

    /// Cyclic soft-threshold sweeps; returns whether the last sweep moved
    /// no coordinate by more than `tol` (in gradient units).
    fn sweeps(&self, b: &mut [f64], n_sweeps: usize, tol: f64) -> bool {
        let q = self.q;
        let mut g = self.grad(b);
        for _ in 0..n_sweeps {
            let mut max_step = 0.0f64;
            for j in 0..q {
                let hjj = self.h[j * q + j];
                if !self.usable[j] || hjj <= 0.0 {
                    continue;
                }
                let z = hjj * b[j] - g[j];
                let next = if j == 0 { z / hjj } else { soft_threshold(z, self.l1) / hjj };
                let step = next - b[j];
                if step != 0.0 {
                    b[j] = next;
                    for (gi, hv) in g.iter_mut().zip(&self.h[j * q..(j + 1) * q]) {
                        *gi += step * hv;
                    }
                    max_step = max_step.max(step.abs() * hjj);
                }
            }
            if max_step <= tol {
                return true;
            }
        }
        false
    }

    /// Exact minimization by sign-pattern search: solve the smooth problem
    /// on the current pattern, walk toward it stopping at the best sign
    /// change, and add the worst violator once the pattern is optimal.
    /// Returns false when a reduced system is not positive definite.
    fn polish(&self, b: &mut [f64], tol: f64) -> bool {
        let q = self.q;
        let mut exact = false;
        for _ in 0..MAX_PATTERN_STEPS {
            let mut theta: Vec<f64> = b.iter().map(|x| x.signum() * (*x != 0.0) as u8 as f64).collect();
            theta[0] = 0.0;
            if exact {
                let g = self.grad(b);
                let worst = (1..q)
                    .filter(|&j| self.usable[j] && b[j] == 0.0)
                    .map(|j| (j, g[j].abs() - self.l1))
                    .filter(|&(_, v)| v > tol)
                    .max_by(|x, y| x.1.total_cmp(&y.1));
                match worst {
                    None => return true,
                    Some((j, _)) => theta[j] = -g[j].signum(),
                }
            }
            let active: Vec<usize> = (0..q).filter(|&j| self.usable[j] && (j == 0 || theta[j] != 0.0)).collect();
            let k = active.len();
            let m = DMatrix::from_fn(k, k, |r, c| self.h[active[r] * q + active[c]]);
            let rhs = DVector::from_fn(k, |r, _| -(self.c[active[r]] + self.l1 * theta[active[r]]));
            let Some(chol) = m.cholesky() else {
                return false;
            };
            let x = chol.solve(&rhs);
            if x.iter().any(|v| !v.is_finite()) {
                return false;
            }
            let at = |t: f64| {
                let mut v = b.to_vec();
                for (r, &j) in active.iter().enumerate() {
                    v[j] = b[j] + t * (x[r] - b[j]);
                }
                v
            };
            // Along the segment the smooth part is `t * gd + t^2 / 2 * dhd`.
            let d: Vec<f64> = (0..q)
                .map(|j| active.iter().position(|&a| a == j).map_or(0.0, |r| x[r] - b[j]))
                .collect();
            let g0 = self.grad(b);
            let gd: f64 = g0.iter().zip(&d).map(|(g, dj)| g * dj).sum();
            let hd = self.hess_times(&d);
            let dhd: f64 = hd.iter().zip(&d).map(|(h, dj)| h * dj).sum();
            let along = |t: f64, zero: Option<usize>| {
                let l1: f64 = (1..q)
                    .map(|j| if Some(j) == zero { 0.0 } else { (b[j] + t * d[j]).abs() })
                    .sum();
                t * gd + 0.5 * t * t * dhd + self.l1 * l1
            };
            let mut best_t = 1.0;
            let mut best_zero = None;
            let mut best_val = along(1.0, None);
            for (r, &j) in active.iter().enumerate() {
                if j != 0 && b[j] != 0.0 && x[r] * b[j] < 0.0 {
                    let t = b[j] / (b[j] - x[r]);
                    let val = along(t, Some(j));
                    if val < best_val {
                        best_val = val;
                        best_t = t;
                        best_zero = Some(j);
                    }
                }
            }
            let next = at(best_t);
            b.copy_from_slice(&next);
            match best_zero {
                Some(j) => {
                    b[j] = 0.0;
                    exact = false;
                }
                None => {
                    exact = active.iter().enumerate().all(|(r, &j)| j == 0 || x[r] * theta[j] > 0.0);
                    if !exact && b == next.as_slice() && active.iter().all(|&j| j == 0 || b[j] * theta[j] > 0.0) {
                        exact = true;
                    }
                }
            }
        }
        false
    }

    fn minimize(&self, b: &mut [f64], tol: f64) {
        if self.sweeps(b, WARM_SWEEPS, tol) {
            return;
        }
        let start = b.to_vec();
        if !self.polish(b, tol) {
            b.copy_from_slice(&start);
            self.sweeps(b, FALLBACK_SWEEPS, tol);
        }
    }
}

/// Fits one binary machine. `y` holds 0/1 targets.
///
/// Each sweep builds the second-order model of the loss at the current
/// point, minimizes model plus penalty by coordinate descent finished with
/// an exact active-set solve, and backtracks along the resulting direction
/// until the objective decreases sufficiently. When backtracking fails the
/// model falls back to the curvature bound `X'X / 4n`, whose minimizer never
/// increases the objective. Converged means the KKT residual is at most
/// `tol`.
pub fn fit_binary(
    design: &Design,
    y: &[f64],
    params: &EnetParams,
    start: Option<(f64, &[f64])>,
    trace: bool,
) -> BinaryFit {
    let p = design.p();
    let q = p + 1;
    let mut beta = Vec::with_capacity(q);
    match start {
        Some((b, c)) => {
            beta.push(b);
            beta.extend_from_slice(c);
        }
        None => beta.resize(q, 0.0),
    }
    let l1 = params.lambda * params.alpha_star;
    let l2 = params.lambda * (1.0 - params.alpha_star);
    let usable: Vec<bool> = (0..q).map(|j| design.gram[j * q + j] > 0.0).collect();
    for j in 1..q {
        if !usable[j] {
            beta[j] = 0.0;
        }
    }
    let inner_tol = params.tol * 1e-2;
    let mut out_trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;

    let (mut obj, mut eta) = design.objective_at(y, beta[0], &beta[1..], l1, l2);

    loop {
        let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let g = design.gradient_from(&prob, y);
        if kkt_from_gradient(&g, &beta[1..], l1, l2) <= params.tol {
            converged = true;
            break;
        }
        if sweeps >= params.max_iters {
            break;
        }
        sweeps += 1;

        let w: Vec<f64> = prob.iter().map(|pi| pi * (1.0 - pi)).collect();
        let hess = weighted_gram(&design.at, Some(&w));

        let mut accepted = None;
        for (model, bound) in [(&hess, false), (&design.gram, true)] {
            let scale = if bound { 0.25 } else { 1.0 };
            let mut h: Vec<f64> = model.iter().map(|v| v * scale).collect();
            for j in 1..q {
                h[j * q + j] += l2;
            }
            // Linear term so that the subproblem is the model around beta.
            let hb: Vec<f64> = (0..q)
                .map(|j| h[j * q..(j + 1) * q].iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() - if j > 0 { l2 * beta[j] } else { 0.0 })
                .collect();
            let c: Vec<f64> = g.iter().zip(&hb).map(|(gj, hbj)| gj - hbj).collect();
            let sub = Subproblem {
                h: &h,
                c: &c,
                q,
                l1,
                usable: &usable,
            };
            let mut b = beta.clone();
            sub.minimize(&mut b, inner_tol);
            let d: Vec<f64> = b.iter().zip(&beta).map(|(x, y)| x - y).collect();
            let pen = |v: &[f64]| v[1..].iter().map(|x| l1 * x.abs() + 0.5 * l2 * x * x).sum::<f64>();
            let decrease = g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() + pen(&b) - pen(&beta);
            if !(decrease < 0.0) {
                continue;
            }
            let mut t = 1.0;
            for _ in 0..MAX_HALVINGS {
                let cand: Vec<f64> = beta.iter().zip(&d).map(|(x, dx)| x + t * dx).collect();
                let (val, cand_eta) = design.objective_at(y, cand[0], &cand[1..], l1, l2);
                if val <= obj + ARMIJO * t * decrease {
                    accepted = Some((cand, cand_eta, val));
                    break;
                }
                if bound {
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((next, next_eta, val)) = accepted else {
            break;
        };
        beta = next;
        eta = next_eta;
        obj = val;
        if trace {
            out_trace.push((beta[0], beta[1..].to_vec()));
        }
    }
    BinaryFit {
        intercept: beta[0],
        coefs: beta[1..].to_vec(),
        converged,
        sweeps,
        trace: out_trace,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryEnet {
    pub class: Label,
    pub intercept: f64,
    pub coefs: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

impl BinaryEnet {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefs.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnetModel {
    pub params: EnetParams,
    /// One machine per class present in training, in class order.
    pub machines: Vec<BinaryEnet>,
}

impl EnetModel {
    pub fn intercept_only(intercepts: [f64; 3], p: usize) -> EnetModel {
        EnetModel {
            params: EnetParams::default(),
            machines: Label::ALL
                .iter()
                .zip(intercepts)
                .map(|(&class, b)| BinaryEnet {
                    class,
                    intercept: b,
                    coefs: vec![0.0; p],
                    converged: true,
                    sweeps: 0,
                })
                .collect(),
        }
    }

    pub fn scores(&self, x: &[f64]) -> [f64; 3] {
        let mut s = [f64::NEG_INFINITY; 3];
        for m in &self.machines {
            s[m.class.index()] = m.score(x);
        }
        s
    }

    pub fn machine(&self, class: Label) -> Option<&BinaryEnet> {
        self.machines.iter().find(|m| m.class == class)
    }
}

fn targets(labels: &[Label], class: Label) -> Vec<f64> {
    labels
        .iter()
        .map(|&l| if l == class { 1.0 } else { 0.0 })
        .collect()
}

fn check_classes(labels: &[Label]) -> Result<[bool; 3]> {
    let present = classes_present(labels);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::Fit("training rows contain fewer than two classes".into()));
    }
    Ok(present)
}

fn fit_machines(
    design: &Design,
    labels: &[Label],
    present: [bool; 3],
    params: &EnetParams,
    warm: Option<&[BinaryEnet]>,
) -> Vec<BinaryEnet> {
    Label::ALL
        .iter()
        .filter(|c| present[c.index()])
        .map(|&class| {
            let y = targets(labels, class);
            let start = warm
                .and_then(|w| w.iter().find(|m| m.class == class))
                .map(|m| (m.intercept, m.coefs.as_slice()));
            let fit = fit_binary(design, &y, params, start, false);
            BinaryEnet {
                class,
                intercept: fit.intercept,
                coefs: fit.coefs,
                converged: fit.converged,
                sweeps: fit.sweeps,
            }
        })
        .collect()
}

fn into_model(train: &FeatureMatrix, params: EnetParams, machines: Vec<BinaryEnet>) -> TrainedModel {
    let converged = machines.iter().all(|m| m.converged);
    let diagnostics = machines
        .iter()
        .filter(|m| !m.converged)
        .map(|m| format!("{} machine did not converge in {} sweeps", m.class, m.sweeps))
        .collect();
    TrainedModel::new(
        train.feature_ids.clone(),
        ModelBody::Enet(EnetModel { params, machines }),
        converged,
        diagnostics,
    )
}

pub fn enet_fit(train: &FeatureMatrix, params: &EnetParams) -> Result<TrainedModel> {
    params.validate()?;
    let (x, labels, p) = dense(train)?;
    let present = check_classes(&labels)?;
    let design = Design::new(&x, p);
    let machines = fit_machines(&design, &labels, present, params, None);
    Ok(into_model(train, *params, machines))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnetGrid {
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl EnetGrid {
    /// `count` values evenly spaced in log scale over `[lo, hi]`.
    pub fn log_spaced(lo: f64, hi: f64, count: usize, alphas: Vec<f64>) -> EnetGrid {
        let lambdas = if count == 1 {
            vec![hi]
        } else {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
                .collect()
        };
        EnetGrid { lambdas, alphas }
    }

    pub fn single(lambda: f64, alpha: f64) -> EnetGrid {
        EnetGrid {
            lambdas: vec![lambda],
            alphas: vec![alpha],
        }
    }

    pub fn len(&self) -> usize {
        self.lambdas.len() * self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for EnetGrid {
    fn default() -> Self {
        EnetGrid::log_spaced(1e-8, 5.0, 100, vec![0.2, 0.4, 0.6, 0.8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub lambda: f64,
    pub alpha_star: f64,
    pub mean_f1: f64,
    /// `(lambda, alpha*, mean validation macro-F1)` for every grid point.
    pub grid_scores: Vec<(f64, f64, f64)>,
}

/// Fold id per row: rows are shuffled within each class and dealt
/// round-robin, so folds stay label-balanced.
pub fn assign_folds(labels: &[Label], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    let mut next = 0;
    for class in Label::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            fold[i] = next % folds;
            next += 1;
        }
    }
    fold
}

/// Grid search by `folds`-fold cross-validated macro-F1, then a refit on
/// all rows with the winner. Ties prefer larger lambda, then larger alpha*.
/// Along each alpha* the lambdas are visited from largest to smallest with
/// warm starts.
pub fn enet_cv_fit(
    train: &FeatureMatrix,
    grid: &EnetGrid,
    folds: usize,
    seed: u64,
    base: &EnetParams,
) -> Result<(TrainedModel, CvSummary)> {
    if folds < 2 {
        return Err(Error::Param(format!("need at least 2 folds, got {folds}")));
    }
    if grid.is_empty() {
        return Err(Error::Param("empty hyperparameter grid".into()));
    }
    base.validate()?;
    let (x, labels, p) = dense(train)?;
    check_classes(&labels)?;
    let fold_of = assign_folds(&labels, folds, seed);

    let mut lambdas = grid.lambdas.clone();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    let mut totals = vec![vec![0.0; lambdas.len()]; grid.alphas.len()];

    for f in 0..folds {
        let (mut xt, mut yt, mut xv, mut yv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, row) in x.chunks_exact(p.max(1)).enumerate().take(labels.len()) {
            if fold_of[i] == f {
                xv.push(row);
                yv.push(labels[i]);
            } else {
                xt.extend_from_slice(row);
                yt.push(labels[i]);
            }
        }
        let present = check_classes(&yt)?;
        let design = Design::new(&xt, p);
        for (ai, &alpha) in grid.alphas.iter().enumerate() {
            let mut warm: Option<Vec<BinaryEnet>> = None;
            for (li, &lambda) in lambdas.iter().enumerate() {
                let params = EnetParams {
                    lambda,
                    alpha_star: alpha,
                    ..*base
                };
                params.validate()?;
                let machines = fit_machines(&design, &yt, present, &params, warm.as_deref());
                let model = EnetModel { params, machines };
                let pred: Vec<Label> = xv.iter().map(|r| super::argmax_label(&model.scores(r))).collect();
                totals[ai][li] += stats::score(&pred, &yv)?.macro_f1;
                warm = Some(model.machines);
            }
        }
    }

    let mut grid_scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, f64)> = None;
    for (ai, &alpha) in grid.alphas.iter().enumerate() {
        for (li, &lambda) in lambdas.iter().enumerate() {
            let f1 = totals[ai][li] / folds as f64;
            grid_scores.push((lambda, alpha, f1));
            let better = match best {
                None => true,
                Some((bl, ba, bf)) => {
                    f1 > bf || (f1 == bf && (lambda > bl || (lambda == bl && alpha > ba)))
                }
            };
            if better {
                best = Some((lambda, alpha, f1));
            }
        }
    }
    let (lambda, alpha_star, mean_f1) = best.expect("non-empty grid");
    let params = EnetParams {
        lambda,
        alpha_star,
        ..*base
    };
    let model = enet_fit(train, &params)?;
    Ok((
        model,
        CvSummary {
            lambda,
            alpha_star,
            mean_f1,
            grid_scores,
        },
    ))
}
