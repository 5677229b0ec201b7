//! Cost-weighted soft-margin SVM trained in the dual.
//!
//! Minimizing `E_n[C_A(alpha) * hinge(A f(X))] + lambda * |f|^2` is the usual
//! C-parameterized SVM with `C = 1 / (2 n lambda)` and a per-sample box
//! `0 <= mu_i <= C * C_{A_i}(alpha)`. The dual is solved by SMO: the first
//! index of each working pair is the maximal KKT violator, the second is
//! chosen by second-order gain among the violators paired with it. The bias
//! is not penalized.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{dot, gram_matrix, GramMatrix, KernelSpec};

const TAU: f64 = 1e-12;
const DEFAULT_KKT_TOLERANCE: f64 = 1e-3;
const GAP_TOLERANCE: f64 = 1e-3;
const MIN_INNER_TOLERANCE: f64 = 1e-12;

/// Misclassification cost `C_a(alpha)`: `alpha` for label +1, `1 - alpha` for -1.
pub fn cost_weight(label: i8, alpha_weight: f64) -> Result<f64> {
    check_alpha(alpha_weight)?;
    match label {
        1 => Ok(alpha_weight),
        -1 => Ok(1.0 - alpha_weight),
        other => Err(Error::InvalidArgument(format!(
            "label {other} is not in {{-1, +1}}"
        ))),
    }
}

fn check_alpha(alpha_weight: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha_weight) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "weight parameter {alpha_weight} outside [0, 1]"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha_weight: f64,
    pub lambda: f64,
    pub kernel: KernelSpec,
    pub kkt_tolerance: f64,
    /// One pass is `n` working-pair updates. `None` means `10 * n` passes.
    pub max_passes: Option<usize>,
}

impl TrainConfig {
    pub fn new(alpha_weight: f64, lambda: f64, kernel: KernelSpec) -> Self {
        Self {
            alpha_weight,
            lambda,
            kernel,
            kkt_tolerance: DEFAULT_KKT_TOLERANCE,
            max_passes: None,
        }
    }

    pub fn with_alpha(mut self, alpha_weight: f64) -> Self {
        self.alpha_weight = alpha_weight;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha_weight)?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "penalty lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.kkt_tolerance > 0.0) {
            return Err(Error::InvalidArgument("kkt tolerance must be positive".into()));
        }
        if self.max_passes == Some(0) {
            return Err(Error::InvalidArgument("max_passes must be positive".into()));
        }
        self.kernel.validate()
    }

    /// `C = 1 / (2 n lambda)`.
    pub fn box_scale(&self, n: usize) -> f64 {
        1.0 / (2.0 * n as f64 * self.lambda)
    }

    /// Per-sample upper bounds `C * C_{A_i}(alpha)`.
    pub fn box_caps(&self, labels: &[i8]) -> Vec<f64> {
        let c = self.box_scale(labels.len());
        labels
            .iter()
            .map(|&a| {
                let w = if a == 1 {
                    self.alpha_weight
                } else {
                    1.0 - self.alpha_weight
                };
                c * w
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub kkt_residual: f64,
    pub dual_objective: f64,
    pub primal_objective: f64,
}

/// Fitted decision function `f(x) = sum_i coef_i k(x_i, x) + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsvmModel {
    /// `label_i * mu_i` for every training sample.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    /// Training indices with `mu_i > 0`.
    pub support_indices: Vec<usize>,
    pub kernel: KernelSpec,
    pub alpha_weight: f64,
    pub lambda: f64,
    pub diagnostics: FitDiagnostics,
    dim: usize,
    support_vectors: Vec<f64>,
    support_coefs: Vec<f64>,
    support_norms: Vec<f64>,
    /// Collapsed weight vector when the kernel is linear.
    primal_weights: Option<Vec<f64>>,
}

impl WsvmModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The dual multipliers `mu_i >= 0`.
    pub fn multipliers(&self) -> Vec<f64> {
        self.dual_coefs.iter().map(|c| c.abs()).collect()
    }

    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(self.decision_value_unchecked(x))
    }

    #[inline]
    pub fn decision_value_unchecked(&self, x: &[f64]) -> f64 {
        if let Some(w) = &self.primal_weights {
            return dot(w, x) + self.bias;
        }
        let xx = dot(x, x);
        let mut f = self.bias;
        for ((sv, &c), &nn) in self
            .support_vectors
            .chunks_exact(self.dim)
            .zip(&self.support_coefs)
            .zip(&self.support_norms)
        {
            f += c * self.kernel.eval_with_norms(sv, x, nn, xx);
        }
        f
    }

    /// `sign(f(x))` with `sign(0) = +1`.
    pub fn classify(&self, x: &[f64]) -> Result<i8> {
        self.decision_value(x).map(sign)
    }

    /// Classifies every row of `data`.
    pub fn classify_dataset(&self, data: &Dataset) -> Result<Vec<i8>> {
        if data.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: data.dim(),
            });
        }
        Ok(data
            .features()
            .par_chunks(self.dim)
            .map(|x| sign(self.decision_value_unchecked(x)))
            .collect())
    }
}

#[inline]
pub fn sign(v: f64) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

/// Trains on `data`, building the Gram matrix internally.
pub fn fit(data: &Dataset, cfg: &TrainConfig) -> Result<WsvmModel> {
    cfg.validate()?;
    let gram = gram_matrix(&cfg.kernel, data)?;
    fit_with_gram(data, &gram, cfg, None)
}

/// Trains with a precomputed Gram matrix of `data` under `cfg.kernel`.
///
/// `warm_start` seeds the multipliers (for instance from a neighbouring
/// weight on a grid). It is clipped to the new box and repaired so that
/// `sum_i label_i mu_i = 0` holds again; the result does not depend on it
/// beyond the stopping tolerance.
pub fn fit_with_gram(
    data: &Dataset,
    gram: &GramMatrix,
    cfg: &TrainConfig,
    warm_start: Option<&[f64]>,
) -> Result<WsvmModel> {
    cfg.validate()?;
    let n = data.len();
    if gram.size() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: gram.size(),
        });
    }
    if let Some(w) = warm_start {
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: w.len(),
            });
        }
    }
    let interior_alpha = cfg.alpha_weight > 0.0 && cfg.alpha_weight < 1.0;
    if interior_alpha && !data.has_both_classes() {
        return Err(Error::DegenerateTrainingSet(format!(
            "only one class present ({} positive of {}) with alpha = {}",
            data.n_positive(),
            n,
            cfg.alpha_weight
        )));
    }

    let caps = cfg.box_caps(data.labels());
    let max_iter = cfg.max_passes.unwrap_or(10 * n).saturating_mul(n);
    let sol = solve_dual(
        gram,
        data.labels(),
        &caps,
        cfg.kkt_tolerance,
        max_iter,
        warm_start,
        cfg.alpha_weight,
    );
    let model = build_model(data, cfg, &sol);
    if sol.converged {
        Ok(model)
    } else {
        Err(Error::NotConverged {
            kkt_residual: sol.kkt_residual,
            iterations: sol.iterations,
            model: Box::new(model),
        })
    }
}

fn build_model(data: &Dataset, cfg: &TrainConfig, sol: &DualSolution) -> WsvmModel {
    let dim = data.dim();
    let dual_coefs: Vec<f64> = sol
        .mu
        .iter()
        .zip(data.labels())
        .map(|(&m, &a)| f64::from(a) * m)
        .collect();
    let support_indices: Vec<usize> = (0..data.len()).filter(|&i| sol.mu[i] > 0.0).collect();
    let mut support_vectors = Vec::with_capacity(support_indices.len() * dim);
    let mut support_coefs = Vec::with_capacity(support_indices.len());
    let mut support_norms = Vec::with_capacity(support_indices.len());
    for &i in &support_indices {
        let x = data.row(i);
        support_vectors.extend_from_slice(x);
        support_coefs.push(dual_coefs[i]);
        support_norms.push(dot(x, x));
    }
    let primal_weights = matches!(cfg.kernel, KernelSpec::Linear).then(|| {
        let mut w = vec![0.0; dim];
        for (sv, &c) in support_vectors.chunks_exact(dim).zip(&support_coefs) {
            for (wk, &xk) in w.iter_mut().zip(sv) {
                *wk += c * xk;
            }
        }
        w
    });
    WsvmModel {
        dual_coefs,
        bias: sol.bias,
        support_indices,
        kernel: cfg.kernel,
        alpha_weight: cfg.alpha_weight,
        lambda: cfg.lambda,
        diagnostics: FitDiagnostics {
            iterations: sol.iterations,
            kkt_residual: sol.kkt_residual,
            dual_objective: sol.dual_objective,
            primal_objective: sol.primal_objective,
        },
        dim,
        support_vectors,
        support_coefs,
        support_norms,
        primal_weights,
    }
}

/// Max violation of the hinge-SVM optimality conditions for `model` on its
/// own training data, skipping samples whose cap is zero. Computed from the
/// model's decision values, independently of the solver's internal state.
pub fn kkt_residual(model: &WsvmModel, train: &Dataset) -> Result<f64> {
    let cfg = TrainConfig::new(model.alpha_weight, model.lambda, model.kernel);
    let caps = cfg.box_caps(train.labels());
    let mut worst = 0.0f64;
    for i in 0..train.len() {
        if caps[i] <= 0.0 {
            continue;
        }
        let mu = model.dual_coefs[i].abs();
        let margin = f64::from(train.label(i)) * model.decision_value(train.row(i))? - 1.0;
        let v = if mu <= 0.0 {
            (-margin).max(0.0)
        } else if mu >= caps[i] {
            margin.max(0.0)
        } else {
            margin.abs()
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// Dual objective `sum mu - 1/2 sum_ij mu_i mu_j y_i y_j K_ij` of arbitrary
/// multipliers.
pub fn dual_objective(gram: &GramMatrix, labels: &[i8], mu: &[f64]) -> f64 {
    let n = labels.len();
    let mut quad = 0.0;
    for i in 0..n {
        if mu[i] == 0.0 {
            continue;
        }
        let row = gram.row(i);
        let yi = f64::from(labels[i]);
        let s: f64 = (0..n).map(|j| f64::from(labels[j]) * mu[j] * row[j]).sum();
        quad += yi * mu[i] * s;
    }
    mu.iter().sum::<f64>() - 0.5 * quad
}

pub(crate) struct DualSolution {
    pub mu: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub dual_objective: f64,
    pub primal_objective: f64,
    pub converged: bool,
}

struct Smo<'a> {
    gram: &'a GramMatrix,
    y: Vec<f64>,
    caps: &'a [f64],
    diag: Vec<f64>,
    mu: Vec<f64>,
    /// Gradient of the minimization form `1/2 mu'Q mu - e'mu`.
    grad: Vec<f64>,
}

impl<'a> Smo<'a> {
    fn new(gram: &'a GramMatrix, labels: &[i8], caps: &'a [f64], warm: Option<&[f64]>) -> Self {
        let n = labels.len();
        let y: Vec<f64> = labels.iter().map(|&a| f64::from(a)).collect();
        let mu = match warm {
            Some(w) => repair_feasibility(w, &y, caps),
            None => vec![0.0; n],
        };
        let mut grad = vec![-1.0; n];
        for j in 0..n {
            if mu[j] != 0.0 {
                let row = gram.row(j);
                let s = y[j] * mu[j];
                for t in 0..n {
                    grad[t] += y[t] * s * row[t];
                }
            }
        }
        Self {
            gram,
            y,
            caps,
            diag: gram.diagonal(),
            mu,
            grad,
        }
    }

    #[inline]
    fn in_up(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            self.mu[t] < self.caps[t]
        } else {
            self.mu[t] > 0.0
        }
    }

    #[inline]
    fn in_low(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            self.mu[t] > 0.0
        } else {
            self.mu[t] < self.caps[t]
        }
    }

    /// Returns the working pair, or `None` when the maximal violation is below `eps`.
    fn select_pair(&self, eps: f64) -> Option<(usize, usize)> {
        let n = self.y.len();
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if self.in_up(t) {
                let v = -self.y[t] * self.grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let i = i_sel?;
        let ki = self.gram.row(i);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = f64::INFINITY;
        let mut j_sel = None;
        for t in 0..n {
            if !self.in_low(t) {
                continue;
            }
            let yg = self.y[t] * self.grad[t];
            if yg > gmax2 {
                gmax2 = yg;
            }
            let b = gmax + yg;
            if b > 0.0 {
                let mut a = self.diag[i] + self.diag[t] - 2.0 * ki[t];
                if a <= 0.0 {
                    a = TAU;
                }
                let gain = -(b * b) / a;
                if gain < best {
                    best = gain;
                    j_sel = Some(t);
                }
            }
        }
        if gmax + gmax2 < eps {
            return None;
        }
        j_sel.map(|j| (i, j))
    }

    fn max_violation(&self) -> f64 {
        let mut up = f64::NEG_INFINITY;
        let mut low = f64::INFINITY;
        for t in 0..self.y.len() {
            let v = -self.y[t] * self.grad[t];
            if self.in_up(t) {
                up = up.max(v);
            }
            if self.in_low(t) {
                low = low.min(v);
            }
        }
        if up.is_finite() && low.is_finite() {
            (up - low).max(0.0)
        } else {
            0.0
        }
    }

    /// Analytic two-variable update with box clipping (LIBSVM's scheme
    /// generalized to per-sample caps).
    fn update_pair(&mut self, i: usize, j: usize) {
        let (yi, yj) = (self.y[i], self.y[j]);
        let (ci, cj) = (self.caps[i], self.caps[j]);
        let kij = self.gram.get(i, j);
        let old_i = self.mu[i];
        let old_j = self.mu[j];
        let (mut ai, mut aj) = (old_i, old_j);
        let gi = self.grad[i];
        let gj = self.grad[j];

        if yi != yj {
            let mut quad = self.diag[i] + self.diag[j] - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-gi - gj) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > ci - cj {
                if ai > ci {
                    ai = ci;
                    aj = ci - diff;
                }
            } else if aj > cj {
                aj = cj;
                ai = cj + diff;
            }
        } else {
            let mut quad = self.diag[i] + self.diag[j] - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (gi - gj) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > ci {
                if ai > ci {
                    ai = ci;
                    aj = sum - ci;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > cj {
                if aj > cj {
                    aj = cj;
                    ai = sum - cj;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        // Round-off can leave values a hair outside the box.
        ai = ai.clamp(0.0, ci);
        aj = aj.clamp(0.0, cj);

        let di = ai - old_i;
        let dj = aj - old_j;
        if cfg!(debug_assertions) {
            // Change of the minimization objective; must not increase.
            let qij = yi * yj * kij;
            let change = gi * di
                + gj * dj
                + 0.5 * (self.diag[i] * di * di + self.diag[j] * dj * dj)
                + qij * di * dj;
            let scale = 1.0 + (gi * di).abs() + (gj * dj).abs();
            debug_assert!(change <= 1e-9 * scale, "SMO step increased the objective by {change}");
        }
        self.mu[i] = ai;
        self.mu[j] = aj;
        if di != 0.0 || dj != 0.0 {
            let ki = self.gram.row(i);
            let kj = self.gram.row(j);
            let si = yi * di;
            let sj = yj * dj;
            for t in 0..self.y.len() {
                self.grad[t] += self.y[t] * (si * ki[t] + sj * kj[t]);
            }
        }
    }

    /// Bias `-rho` where `rho` averages `y_i G_i` over free multipliers, or
    /// sits in the interval implied by the bounded ones.
    fn bias(&self, alpha_weight: f64) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut nfree = 0usize;
        for t in 0..self.y.len() {
            if self.caps[t] <= 0.0 {
                continue;
            }
            let yg = self.y[t] * self.grad[t];
            if self.mu[t] >= self.caps[t] {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.mu[t] <= 0.0 {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                nfree += 1;
                sum += yg;
            }
        }
        let rho = if nfree > 0 {
            sum / nfree as f64
        } else {
            match (ub.is_finite(), lb.is_finite()) {
                (true, true) => 0.5 * (ub + lb),
                (true, false) => ub,
                (false, true) => lb,
                // Every cap is zero: any constant is optimal; lean to the costlier class.
                (false, false) => {
                    if alpha_weight < 0.5 {
                        1.0
                    } else {
                        -1.0
                    }
                }
            }
        };
        -rho
    }

    /// (max per-sample KKT violation, primal, dual) for the given bias.
    fn certificate(&self, bias: f64) -> (f64, f64, f64) {
        let mut quad = 0.0;
        let mut hinge = 0.0;
        let mut worst = 0.0f64;
        let mut sum_mu = 0.0;
        for t in 0..self.y.len() {
            // y_t f(x_t) - 1
            let margin = self.grad[t] + self.y[t] * bias;
            quad += self.mu[t] * (self.grad[t] + 1.0);
            sum_mu += self.mu[t];
            hinge += self.caps[t] * (-margin).max(0.0);
            if self.caps[t] <= 0.0 {
                continue;
            }
            let v = if self.mu[t] <= 0.0 {
                (-margin).max(0.0)
            } else if self.mu[t] >= self.caps[t] {
                margin.max(0.0)
            } else {
                margin.abs()
            };
            worst = worst.max(v);
        }
        let primal = 0.5 * quad + hinge;
        let dual = sum_mu - 0.5 * quad;
        (worst, primal, dual)
    }
}

/// Clips multipliers into the box and restores `sum_i y_i mu_i = 0` by
/// shrinking the side that is in excess.
fn repair_feasibility(warm: &[f64], y: &[f64], caps: &[f64]) -> Vec<f64> {
    let mut mu: Vec<f64> = warm
        .iter()
        .zip(caps)
        .map(|(&m, &c)| if m.is_finite() { m.clamp(0.0, c) } else { 0.0 })
        .collect();
    let mut excess: f64 = mu.iter().zip(y).map(|(m, yy)| m * yy).sum();
    let side = if excess > 0.0 { 1.0 } else { -1.0 };
    excess = excess.abs();
    for t in 0..mu.len() {
        if excess <= 0.0 {
            break;
        }
        if y[t] == side && mu[t] > 0.0 {
            let cut = mu[t].min(excess);
            mu[t] -= cut;
            excess -= cut;
        }
    }
    mu
}

pub(crate) fn solve_dual(
    gram: &GramMatrix,
    labels: &[i8],
    caps: &[f64],
    kkt_tolerance: f64,
    max_iter: usize,
    warm: Option<&[f64]>,
    alpha_weight: f64,
) -> DualSolution {
    let mut smo = Smo::new(gram, labels, caps, warm);
    let mut iterations = 0usize;
    let mut eps = kkt_tolerance;
    loop {
        let mut exhausted = false;
        while let Some((i, j)) = smo.select_pair(eps) {
            if iterations >= max_iter {
                exhausted = true;
                break;
            }
            smo.update_pair(i, j);
            iterations += 1;
        }
        let bias = smo.bias(alpha_weight);
        let (residual, primal, dual) = smo.certificate(bias);
        let gap_ok = primal - dual <= GAP_TOLERANCE * (primal.abs() + 1.0);
        let done = residual <= kkt_tolerance && gap_ok;
        if done || exhausted || eps <= MIN_INNER_TOLERANCE {
            let converged = done || (!exhausted && smo.max_violation() <= kkt_tolerance && residual <= kkt_tolerance);
            return DualSolution {
                mu: smo.mu,
                bias,
                iterations,
                kkt_residual: residual,
                dual_objective: dual,
                primal_objective: primal,
                converged,
            };
        }
        eps = (eps * 0.1).max(MIN_INNER_TOLERANCE);
    }
}
