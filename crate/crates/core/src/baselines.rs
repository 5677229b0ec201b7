//! Unpenalized logistic regression as a comparator.
//!
//! Fitted by damped Newton steps with step halving; its ROC curve comes from
//! sweeping a threshold over the predicted probabilities and plugs into the
//! same curve, AUC and band machinery as the SVM sweep.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::roc::{trapezoid_area, ClassificationMatrix, RocCurve};

const MAX_ITERATIONS: usize = 100;
const GRADIENT_TOLERANCE: f64 = 1e-8;
const HESSIAN_JITTER: f64 = 1e-10;
const MAX_HALVINGS: usize = 40;
/// A log-likelihood this close to zero means the classes are separated and
/// the maximum-likelihood estimate does not exist.
const SEPARATION_LOG_LIKELIHOOD: f64 = -1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Intercept first, then one slope per feature.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        expit(self.linear_predictor(x))
    }

    /// Predicted labels at probability threshold 0.5 (ties to +1).
    pub fn classify_dataset(&self, data: &Dataset) -> Vec<i8> {
        data.rows()
            .map(|x| if self.predict_proba(x) >= 0.5 { 1 } else { -1 })
            .collect()
    }
}

fn log_likelihood(x: &DMatrix<f64>, y01: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(y01.iter())
        .map(|(&e, &y)| y * e - softplus(e))
        .sum()
}

/// Maximum-likelihood fit.
pub fn fit_logistic(train: &Dataset) -> Result<LogisticModel> {
    if !train.has_both_classes() {
        return Err(Error::DegenerateTrainingSet(
            "logistic regression needs both classes".into(),
        ));
    }
    let n = train.len();
    let p = train.dim() + 1;
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { train.row(i)[j - 1] });
    let y01 = DVector::from_iterator(n, train.labels().iter().map(|&a| f64::from(a == 1)));

    let mut beta = DVector::zeros(p);
    let mut ll = log_likelihood(&x, &y01, &beta);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        let eta = &x * &beta;
        let prob = eta.map(expit);
        let grad = x.transpose() * (&y01 - &prob);
        if grad.amax() < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        let w = prob.map(|q| q * (1.0 - q));
        let mut info = DMatrix::zeros(p, p);
        for i in 0..n {
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            for a in 0..p {
                let xa = x[(i, a)] * wi;
                for b in a..p {
                    info[(a, b)] += xa * x[(i, b)];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
            info[(a, a)] += HESSIAN_JITTER;
        }
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match info.lu().solve(&grad) {
                Some(s) => s,
                None => break,
            },
        };
        iterations += 1;

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let candidate = &beta + &step * t;
            let cand_ll = log_likelihood(&x, &y01, &candidate);
            if cand_ll >= ll {
                debug_assert!(cand_ll >= ll);
                beta = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No ascent possible at working precision.
            let prob = (&x * &beta).map(expit);
            let grad = x.transpose() * (&y01 - &prob);
            converged = grad.amax() < GRADIENT_TOLERANCE;
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite);
    }
    if ll > SEPARATION_LOG_LIKELIHOOD {
        log::warn!("logistic fit: classes are separated, coefficients diverge");
        converged = false;
    }
    Ok(LogisticModel {
        coefficients: beta.iter().copied().collect(),
        converged,
        iterations,
        log_likelihood: ll,
    })
}

/// Area under a threshold-swept curve. Points with equal fpf are joined by
/// vertical segments, so this equals the Mann-Whitney statistic of the scores.
pub fn threshold_auc(curve: &RocCurve) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve.points().iter().map(|p| (p.fpf, p.tpf)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    trapezoid_area(&pts)
}

/// Threshold-swept classifiers: classifier `m` predicts +1 when the score is
/// at least the `m`-th smallest distinct score. The curve parameter is the
/// rank `(m + 1) / (count + 1)`, so scores on any scale are accepted.
pub fn threshold_classifications(scores: &[f64], test: &Dataset) -> Result<ClassificationMatrix> {
    if scores.len() != test.len() {
        return Err(Error::DimensionMismatch {
            expected: test.len(),
            got: scores.len(),
        });
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let preds: Vec<Vec<i8>> = thresholds
        .iter()
        .map(|&t| scores.iter().map(|&s| if s >= t { 1 } else { -1 }).collect())
        .collect();
    let m = thresholds.len() as f64;
    let ranks = (1..=thresholds.len()).map(|k| k as f64 / (m + 1.0)).collect();
    ClassificationMatrix::new(ranks, test.labels().to_vec(), &preds)
}

/// Thresholds the linear predictor, which orders samples like the fitted
/// probability without saturating at 0 or 1.
pub fn logistic_classifications(model: &LogisticModel, test: &Dataset) -> Result<ClassificationMatrix> {
    let scores: Vec<f64> = test.rows().map(|x| model.linear_predictor(x)).collect();
    threshold_classifications(&scores, test)
}

pub fn logistic_roc(model: &LogisticModel, test: &Dataset) -> Result<RocCurve> {
    logistic_classifications(model, test)?.curve()
}
