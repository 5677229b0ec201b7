//! Cross-validated choice of the penalty and Gaussian bandwidth at equal
//! costs. The chosen pair is then held fixed across the whole weight grid.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{gram_matrix, GramMatrix, KernelFamily, KernelSpec};
use crate::rng::substream;
use crate::solver::{fit_with_gram, sign, TrainConfig, WsvmModel};

const TUNING_ALPHA: f64 = 0.5;
const FOLD_STREAM: u64 = 0x666f_6c64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub lambda_candidates: Vec<f64>,
    /// Only used for the Gaussian family.
    pub gamma_candidates: Vec<f64>,
    /// Only used for the polynomial family.
    pub poly_degree: u32,
    pub n_folds: usize,
    pub rng_seed: u64,
}

impl TuneGrid {
    /// `lambda = 2^k / (2n)` and `gamma = 2^k / p`, so that `C = 2^-k`.
    pub fn default_for(n: usize, dim: usize, rng_seed: u64) -> Self {
        Self {
            lambda_candidates: (-8..=8).map(|k| 2f64.powi(k) / (2.0 * n as f64)).collect(),
            gamma_candidates: (-4..=4).map(|k| 2f64.powi(k) / dim as f64).collect(),
            poly_degree: 2,
            n_folds: 5,
            rng_seed,
        }
    }

    /// A grid with a single candidate pair: tuning is then a no-op.
    pub fn fixed(lambda: f64, gamma: f64) -> Self {
        Self {
            lambda_candidates: vec![lambda],
            gamma_candidates: vec![gamma],
            poly_degree: 2,
            n_folds: 2,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [
            ("lambda", &self.lambda_candidates),
            ("gamma", &self.gamma_candidates),
        ] {
            if c.is_empty() {
                return Err(Error::InvalidArgument(format!("no {name} candidates")));
            }
            if c.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "{name} candidates must be positive"
                )));
            }
            if c.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidArgument(format!(
                    "{name} candidates must be strictly increasing"
                )));
            }
        }
        if self.n_folds < 2 {
            return Err(Error::InvalidArgument("need at least 2 folds".into()));
        }
        Ok(())
    }

    fn kernels(&self, family: KernelFamily) -> Vec<(Option<f64>, KernelSpec)> {
        match family {
            KernelFamily::Linear => vec![(None, KernelSpec::Linear)],
            KernelFamily::Polynomial => vec![(None, KernelSpec::polynomial(self.poly_degree))],
            KernelFamily::Gaussian => self
                .gamma_candidates
                .iter()
                .map(|&g| (Some(g), KernelSpec::gaussian(g)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub lambda: f64,
    pub gamma: Option<f64>,
    pub cv_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub lambda: f64,
    pub kernel: KernelSpec,
    pub cv_error: f64,
    pub n_folds: usize,
    /// Every candidate in (lambda, gamma) order.
    pub scores: Vec<CandidateScore>,
}

/// Stratified fold labels: each class is shuffled and dealt round-robin.
/// Folds shrink to the minority class size when it has fewer samples.
pub fn stratified_folds(data: &Dataset, n_folds: usize, seed: u64) -> Result<(Vec<usize>, usize)> {
    let minority = data.n_positive().min(data.n_negative());
    let k = n_folds.min(minority);
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "cross-validation needs at least 2 samples per class, smallest class has {minority}"
        )));
    }
    if k < n_folds {
        log::warn!("reducing cross-validation folds from {n_folds} to {k}: smallest class has {minority} samples");
    }
    let mut rng = substream(seed, &[FOLD_STREAM]);
    let mut fold = vec![0; data.len()];
    for class in [1i8, -1] {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == class).collect();
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok((fold, k))
}

fn model_or_carried(res: Result<WsvmModel>) -> Result<WsvmModel> {
    match res {
        Ok(m) => Ok(m),
        Err(Error::NotConverged { model, kkt_residual, .. }) => {
            log::debug!("cv fit not converged (kkt {kkt_residual:.2e}), using last iterate");
            Ok(*model)
        }
        Err(e) => Err(e),
    }
}

/// Held-out equal-cost errors of every lambda for one kernel and one fold,
/// in candidate order.
fn fold_errors(
    data: &Dataset,
    gram: &GramMatrix,
    kernel: KernelSpec,
    lambdas: &[f64],
    folds: &[usize],
    held_out: usize,
) -> Result<Vec<f64>> {
    let train_idx: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != held_out).collect();
    let test_idx: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == held_out).collect();
    let train = data.subset(&train_idx)?;
    let sub = gram.submatrix(&train_idx);
    let mut errors = vec![0.0; lambdas.len()];
    // Largest lambda first: the box only grows, so each solution is a
    // feasible start for the next.
    let mut warm: Option<Vec<f64>> = None;
    for (c, &lambda) in lambdas.iter().enumerate().rev() {
        let cfg = TrainConfig::new(TUNING_ALPHA, lambda, kernel);
        let model = model_or_carried(fit_with_gram(&train, &sub, &cfg, warm.as_deref()))?;
        let wrong = test_idx
            .iter()
            .filter(|&&j| {
                let f = model.bias
                    + model
                        .support_indices
                        .iter()
                        .map(|&s| model.dual_coefs[s] * gram.get(train_idx[s], j))
                        .sum::<f64>();
                sign(f) != data.label(j)
            })
            .count();
        errors[c] = TUNING_ALPHA * wrong as f64 / test_idx.len() as f64;
        warm = Some(model.multipliers());
    }
    Ok(errors)
}

/// Picks the candidate with the smallest mean held-out error at equal costs.
/// Ties go to the smaller lambda, then the smaller gamma.
pub fn cv_tune(train: &Dataset, family: KernelFamily, grid: &TuneGrid) -> Result<TuneReport> {
    grid.validate()?;
    if !train.has_both_classes() {
        return Err(Error::DegenerateTrainingSet(
            "tuning needs both classes".into(),
        ));
    }
    let (folds, k) = stratified_folds(train, grid.n_folds, grid.rng_seed)?;
    let kernels = grid.kernels(family);
    let lambdas = &grid.lambda_candidates;

    // errors[kernel][lambda], averaged over folds.
    let per_kernel: Vec<Vec<f64>> = kernels
        .par_iter()
        .map(|&(_, kernel)| {
            let gram = gram_matrix(&kernel, train)?;
            let per_fold = (0..k)
                .into_par_iter()
                .map(|f| fold_errors(train, &gram, kernel, lambdas, &folds, f))
                .collect::<Result<Vec<_>>>()?;
            Ok((0..lambdas.len())
                .map(|c| per_fold.iter().map(|e| e[c]).sum::<f64>() / k as f64)
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut scores = Vec::with_capacity(lambdas.len() * kernels.len());
    let mut best: Option<(usize, usize)> = None;
    for (li, &lambda) in lambdas.iter().enumerate() {
        for (ki, &(gamma, _)) in kernels.iter().enumerate() {
            let cv_error = per_kernel[ki][li];
            scores.push(CandidateScore { lambda, gamma, cv_error });
            if best.is_none_or(|(bl, bk)| cv_error < per_kernel[bk][bl]) {
                best = Some((li, ki));
            }
        }
    }
    let (li, ki) = best.expect("non-empty grid");
    Ok(TuneReport {
        lambda: lambdas[li],
        kernel: kernels[ki].1,
        cv_error: per_kernel[ki][li],
        n_folds: k,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;

    /// Well-separated classes; every `every`-th sample is positive.
    fn separable_with(n: usize, every: usize, seed: u64) -> Dataset {
        let mut rng = substream(seed, &[]);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let a: i8 = if i % every == 0 { 1 } else { -1 };
            let shift = 2.0 * f64::from(a);
            rows.push(vec![shift + 0.3 * standard_normal(&mut rng), 0.3 * standard_normal(&mut rng)]);
            labels.push(a);
        }
        Dataset::from_rows(&rows, labels).unwrap()
    }

    fn separable(n: usize, seed: u64) -> Dataset {
        separable_with(n, 2, seed)
    }

    #[test]
    fn single_candidate_is_returned() {
        let d = separable(40, 1);
        let r = cv_tune(&d, KernelFamily::Gaussian, &TuneGrid::fixed(0.01, 0.5)).unwrap();
        assert_eq!(r.lambda, 0.01);
        assert_eq!(r.kernel, KernelSpec::gaussian(0.5));
        assert_eq!(r.scores.len(), 1);
    }

    #[test]
    fn huge_penalty_loses_on_separable_data() {
        // A third positive: the over-penalized fit predicts the majority.
        let d = separable_with(200, 3, 2);
        let grid = TuneGrid {
            lambda_candidates: vec![1e-3, 1e3],
            ..TuneGrid::default_for(200, 2, 5)
        };
        let r = cv_tune(&d, KernelFamily::Linear, &grid).unwrap();
        assert_eq!(r.lambda, 1e-3);
        assert!(r.scores[0].cv_error < r.scores[1].cv_error);
    }

    #[test]
    fn selected_error_is_minimal_and_ties_go_small() {
        let d = separable(60, 3);
        let grid = TuneGrid::default_for(60, 2, 11);
        let r = cv_tune(&d, KernelFamily::Gaussian, &grid).unwrap();
        assert_eq!(r.scores.len(), 17 * 9);
        assert!(r.scores.iter().all(|s| r.cv_error <= s.cv_error));
        let first = r.scores.iter().find(|s| s.cv_error == r.cv_error).unwrap();
        assert_eq!(first.lambda, r.lambda);
        assert_eq!(Some(first.gamma.unwrap()), match r.kernel {
            KernelSpec::Gaussian { gamma } => Some(gamma),
            _ => None,
        });
    }

    #[test]
    fn defaults_follow_powers_of_two() {
        let g = TuneGrid::default_for(100, 4, 0);
        assert_eq!(g.lambda_candidates.len(), 17);
        assert_eq!(g.lambda_candidates[8], 1.0 / 200.0);
        assert_eq!(g.gamma_candidates[4], 0.25);
        assert_eq!(g.n_folds, 5);
    }

    #[test]
    fn folds_are_stratified_and_deterministic() {
        let d = separable(50, 4);
        let (a, k) = stratified_folds(&d, 5, 9).unwrap();
        let (b, _) = stratified_folds(&d, 5, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(k, 5);
        for f in 0..5 {
            let pos = (0..50).filter(|&i| a[i] == f && d.label(i) == 1).count();
            assert_eq!(pos, 5);
        }
    }

    #[test]
    fn folds_shrink_with_a_tiny_class() {
        let labels = vec![1, 1, 1, -1, -1, -1, -1, -1, -1, -1];
        let d = Dataset::from_flat((0..10).map(f64::from).collect(), labels, 1).unwrap();
        assert_eq!(stratified_folds(&d, 5, 0).unwrap().1, 3);
        let labels = vec![1, -1, -1, -1];
        let d = Dataset::from_flat((0..4).map(f64::from).collect(), labels, 1).unwrap();
        assert!(stratified_folds(&d, 5, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let d = separable(60, 5);
        let grid = TuneGrid::default_for(60, 2, 3);
        let a = cv_tune(&d, KernelFamily::Linear, &grid).unwrap();
        let b = cv_tune(&d, KernelFamily::Linear, &grid).unwrap();
        assert_eq!(a, b);
    }
}
