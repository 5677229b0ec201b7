//! Simulation models, the Bayes rule, and the Monte Carlo experiment runner.
//!
//! Features are a two-component Gaussian mixture `X ~ N_p(mu Z, sigma^2 I)`
//! with `Z` the all-ones vector with probability `q` and its negative
//! otherwise. Labels are drawn from `pi(X) = expit(eta(X))` where `eta` is
//! `X'beta` (linear form) or `X'beta + X1^2 + X2^2 + 4 X1 X2` (nonlinear).

use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bands::{band_area, build_band, covers, BandSpec};
use crate::baselines::{expit, fit_logistic, logistic_classifications, threshold_auc};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{gram_matrix, KernelFamily};
use crate::rng::{derive_seed, standard_normal, substream, uniform_open};
use crate::roc::{
    auc, interpolate_tpf, se_sp_from_predictions, select_operating_point, sweep,
    OperatingCriterion, RocCurve, RocPoint,
};
use crate::solver::{fit_with_gram, TrainConfig, WsvmModel};
use crate::tune::{cv_tune, TuneGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelForm {
    Linear,
    Nonlinear,
}

impl ModelForm {
    pub fn name(self) -> &'static str {
        match self {
            ModelForm::Linear => "linear",
            ModelForm::Nonlinear => "nonlinear",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenModel {
    pub p: usize,
    pub q: f64,
    pub mu: f64,
    pub sigma: f64,
    pub beta: Vec<f64>,
    pub form: ModelForm,
}

impl GenModel {
    /// The simulation design: `mu = 0.25`, `sigma = 0.75` and
    /// `beta = (2, 1, 1, 1, 1, 0, ..., 0)` truncated to `p` coordinates.
    pub fn standard(p: usize, q: f64, form: ModelForm) -> Self {
        let beta = (0..p)
            .map(|j| match j {
                0 => 2.0,
                1..=4 => 1.0,
                _ => 0.0,
            })
            .collect();
        Self {
            p,
            q,
            mu: 0.25,
            sigma: 0.75,
            beta,
            form,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.beta.len() != self.p {
            return Err(Error::InvalidArgument(format!(
                "beta has {} entries for dimension {}",
                self.beta.len(),
                self.p
            )));
        }
        if self.form == ModelForm::Nonlinear && self.p < 2 {
            return Err(Error::InvalidArgument(
                "the nonlinear form needs at least two features".into(),
            ));
        }
        // q = 0 or 1 gives a single mixture component, which is still a
        // valid distribution.
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::InvalidArgument(format!("q = {} outside [0, 1]", self.q)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite() && self.mu.is_finite()) {
            return Err(Error::InvalidArgument("sigma must be finite and >= 0".into()));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    pub fn index(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.beta.iter().zip(x).map(|(b, v)| b * v).sum();
        match self.form {
            ModelForm::Linear => lin,
            ModelForm::Nonlinear => lin + x[0] * x[0] + x[1] * x[1] + 4.0 * x[0] * x[1],
        }
    }

    /// `P(A = +1 | X = x)`.
    pub fn prob_positive(&self, x: &[f64]) -> f64 {
        expit(self.index(x))
    }

    pub fn bayes_classify(&self, x: &[f64], alpha_weight: f64) -> i8 {
        bayes_rule(self.prob_positive(x), alpha_weight)
    }
}

/// `+1` iff `alpha * pi >= (1 - alpha) * (1 - pi)`; `alpha = 0` always gives -1.
pub fn bayes_rule(pi: f64, alpha_weight: f64) -> i8 {
    let (pos, neg) = (alpha_weight * pi, (1.0 - alpha_weight) * (1.0 - pi));
    if pos > neg || (pos == neg && alpha_weight > 0.0) {
        1
    } else {
        -1
    }
}

pub fn generate<R: RngCore + ?Sized>(model: &GenModel, n: usize, rng: &mut R) -> Result<Dataset> {
    model.validate()?;
    let p = model.p;
    let mut features = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n);
    let mut x = vec![0.0; p];
    for _ in 0..n {
        let z = if uniform_open(rng) < model.q { 1.0 } else { -1.0 };
        for v in x.iter_mut() {
            *v = model.mu * z + model.sigma * standard_normal(rng);
        }
        let a = if uniform_open(rng) < model.prob_positive(&x) { 1 } else { -1 };
        features.extend_from_slice(&x);
        labels.push(a);
    }
    Dataset::from_flat(features, labels, p)
}

/// Large-sample (fpf, tpf) of fitted classifiers, and tpf interpolated on a
/// z grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueRoc {
    pub curve: RocCurve,
    pub z_grid: Vec<f64>,
    pub tpf_on_grid: Vec<f64>,
}

pub fn true_roc<R: RngCore + ?Sized>(
    model: &GenModel,
    fitted: &[WsvmModel],
    truth_set_size: usize,
    z_grid: &[f64],
    rng: &mut R,
) -> Result<TrueRoc> {
    let mut truth = generate(model, truth_set_size, rng)?;
    if !truth.has_both_classes() {
        truth = generate(model, truth_set_size, rng)?;
        if !truth.has_both_classes() {
            return Err(Error::SeSpUndefined("truth set has a single class twice".into()));
        }
    }
    let points = fitted
        .iter()
        .map(|m| {
            let (se, sp) = se_sp_from_predictions(truth.labels(), &m.classify_dataset(&truth)?)?;
            Ok(RocPoint {
                alpha: m.alpha_weight,
                fpf: 1.0 - sp,
                tpf: se,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let curve = RocCurve::new(points)?;
    let tpf_on_grid = z_grid.iter().map(|&z| interpolate_tpf(&curve, z)).collect();
    Ok(TrueRoc {
        curve,
        z_grid: z_grid.to_vec(),
        tpf_on_grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    LinearSvm,
    GaussianSvm,
    Logistic,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::LinearSvm => "linear_svm",
            Method::GaussianSvm => "gaussian_svm",
            Method::Logistic => "logistic",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Method::LinearSvm => 1,
            Method::GaussianSvm => 2,
            Method::Logistic => 3,
        }
    }
}

const SPLIT_TAG: u64 = 10;
const TUNE_TAG: u64 = 11;
const BAND_TAG: u64 = 12;
const TRUTH_TAG: u64 = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: GenModel,
    pub n: usize,
    pub replications: usize,
    pub alpha_grid: Vec<f64>,
    pub methods: Vec<Method>,
    /// Bands and coverage are computed for the linear SVM when set.
    pub band_spec: Option<BandSpec>,
    pub truth_set_size: usize,
    pub train_fraction: f64,
    pub n_folds: usize,
    pub rng_seed: u64,
}

impl ExperimentConfig {
    pub fn new(model: GenModel, n: usize, replications: usize, rng_seed: u64) -> Self {
        Self {
            model,
            n,
            replications,
            alpha_grid: crate::roc::default_alpha_grid(99),
            methods: vec![Method::LinearSvm, Method::GaussianSvm, Method::Logistic],
            band_spec: None,
            truth_set_size: 100_000,
            train_fraction: 0.7,
            n_folds: 5,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidArgument("need at least one replication".into()));
        }
        if self.n < 20 {
            return Err(Error::InvalidArgument(format!("n = {} is below 20", self.n)));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods selected".into()));
        }
        if let Some(b) = &self.band_spec {
            b.validate()?;
            if !self.methods.contains(&Method::LinearSvm) {
                return Err(Error::InvalidArgument(
                    "bands need the linear SVM method".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Per-replication outcome of one method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub auc: f64,
    pub optimal_se: f64,
    pub optimal_sp: f64,
    pub optimal_alpha: f64,
    pub unweighted_se: f64,
    pub unweighted_sp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandOutcome {
    pub covered: bool,
    pub area: f64,
    pub p_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub methods: Vec<MethodOutcome>,
    pub band: Option<BandOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub sd: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub auc: Summary,
    pub optimal_se: Summary,
    pub optimal_sp: Summary,
    pub unweighted_se: Summary,
    pub unweighted_sp: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub coverage: f64,
    pub area: Summary,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub methods: Vec<MethodSummary>,
    pub coverage: Option<CoverageSummary>,
    pub replications_ok: usize,
    pub replications_failed: usize,
    pub outcomes: Vec<ReplicationOutcome>,
    pub wall_seconds: f64,
}

impl ExperimentResult {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

fn svm_outcome(
    cfg: &ExperimentConfig,
    method: Method,
    train: &Dataset,
    test: &Dataset,
    tune_seed: u64,
) -> Result<(MethodOutcome, crate::roc::SweepResult)> {
    let family = match method {
        Method::LinearSvm => KernelFamily::Linear,
        Method::GaussianSvm => KernelFamily::Gaussian,
        Method::Logistic => unreachable!("not an SVM"),
    };
    let grid = TuneGrid {
        n_folds: cfg.n_folds,
        ..TuneGrid::default_for(train.len(), train.dim(), tune_seed)
    };
    let tuned = cv_tune(train, family, &grid)?;
    let base = TrainConfig::new(0.5, tuned.lambda, tuned.kernel);
    let result = sweep(train, test, &base, &cfg.alpha_grid)?;
    let op = select_operating_point(&result.curve, OperatingCriterion::ClosestToCorner)?;
    let half = match cfg.alpha_grid.iter().position(|&a| a == 0.5) {
        Some(m) => result.classifications.predictions(m),
        None => {
            let gram = gram_matrix(&base.kernel, train)?;
            fit_with_gram(train, &gram, &base, None)?.classify_dataset(test)?
        }
    };
    let (se, sp) = se_sp_from_predictions(test.labels(), &half)?;
    Ok((
        MethodOutcome {
            method,
            auc: auc(&result.curve),
            optimal_se: op.sensitivity,
            optimal_sp: op.specificity,
            optimal_alpha: op.alpha_star,
            unweighted_se: se,
            unweighted_sp: sp,
        },
        result,
    ))
}

fn logistic_outcome(train: &Dataset, test: &Dataset) -> Result<MethodOutcome> {
    let model = fit_logistic(train)?;
    let cm = logistic_classifications(&model, test)?;
    let curve = cm.curve()?;
    let op = select_operating_point(&curve, OperatingCriterion::ClosestToCorner)?;
    let (se, sp) = se_sp_from_predictions(test.labels(), &model.classify_dataset(test))?;
    Ok(MethodOutcome {
        method: Method::Logistic,
        auc: threshold_auc(&curve),
        optimal_se: op.sensitivity,
        optimal_sp: op.specificity,
        optimal_alpha: op.alpha_star,
        unweighted_se: se,
        unweighted_sp: sp,
    })
}

/// One replication: generate, split, tune, sweep, and score every method.
pub fn run_replication(cfg: &ExperimentConfig, r: usize) -> Result<ReplicationOutcome> {
    let seed = cfg.rng_seed;
    let r64 = r as u64;
    let mut data_rng = substream(seed, &[r64]);
    let data = generate(&cfg.model, cfg.n, &mut data_rng)?;
    if !data.has_both_classes() {
        return Err(Error::DegenerateTrainingSet("sample has a single class".into()));
    }
    let (train, test) = data.stratified_split(cfg.train_fraction, &mut substream(seed, &[r64, SPLIT_TAG]))?;

    let mut methods = Vec::with_capacity(cfg.methods.len());
    let mut band = None;
    for &method in &cfg.methods {
        let outcome = match method {
            Method::Logistic => logistic_outcome(&train, &test)?,
            _ => {
                let tune_seed = derive_seed(seed, &[r64, TUNE_TAG, method.tag()]);
                let (outcome, result) = svm_outcome(cfg, method, &train, &test, tune_seed)?;
                if let (Method::LinearSvm, Some(spec)) = (method, &cfg.band_spec) {
                    let spec = BandSpec {
                        rng_seed: derive_seed(spec.rng_seed, &[r64, BAND_TAG]),
                        ..spec.clone()
                    };
                    let b = build_band(&result.classifications, &spec)?;
                    let truth = true_roc(
                        &cfg.model,
                        &result.models,
                        cfg.truth_set_size,
                        &spec.z_grid,
                        &mut substream(seed, &[r64, TRUTH_TAG]),
                    )?;
                    band = Some(BandOutcome {
                        covered: covers(&b, &truth.tpf_on_grid),
                        area: band_area(&b),
                        p_star: b.p_star,
                    });
                }
                outcome
            }
        };
        methods.push(outcome);
    }
    Ok(ReplicationOutcome {
        replication: r,
        methods,
        band,
    })
}

/// Runs every replication in parallel and aggregates. Failed replications
/// are logged and excluded; more than 5% failures is an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let results: Vec<Result<ReplicationOutcome>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(cfg, r))
        .collect();
    let total = results.len();
    let mut outcomes = Vec::with_capacity(total);
    let mut failed = 0;
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                log::warn!("replication {r} failed: {e}");
                failed += 1;
            }
        }
    }
    if failed * 20 > total || outcomes.is_empty() {
        return Err(Error::TooManyFailures { failed, total });
    }
    let methods = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let col = |f: fn(&MethodOutcome) -> f64| -> Summary {
                Summary::of(&outcomes.iter().map(|o| f(&o.methods[k])).collect::<Vec<_>>())
            };
            MethodSummary {
                method,
                auc: col(|m| m.auc),
                optimal_se: col(|m| m.optimal_se),
                optimal_sp: col(|m| m.optimal_sp),
                unweighted_se: col(|m| m.unweighted_se),
                unweighted_sp: col(|m| m.unweighted_sp),
            }
        })
        .collect();
    let coverage = cfg.band_spec.as_ref().map(|_| {
        let bands: Vec<BandOutcome> = outcomes.iter().filter_map(|o| o.band).collect();
        CoverageSummary {
            coverage: bands.iter().filter(|b| b.covered).count() as f64 / bands.len() as f64,
            area: Summary::of(&bands.iter().map(|b| b.area).collect::<Vec<_>>()),
            runs: bands.len(),
        }
    });
    Ok(ExperimentResult {
        methods,
        coverage,
        replications_ok: outcomes.len(),
        replications_failed: failed,
        outcomes,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
