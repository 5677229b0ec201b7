//! Cost-weighted support vector machines, ROC curves traced by the
//! misclassification-cost weight, and quantile-bootstrap confidence bands.
//!
//! The pipeline is: [`tune::cv_tune`] picks the penalty (and Gaussian
//! bandwidth) at equal costs, [`roc::sweep`] refits the weighted SVM over a
//! grid of weights and assembles the empirical ROC curve on held-out data,
//! and [`bands::build_band`] reweights the held-out empirical measure to get
//! a simultaneous band without refitting. [`synth`] holds the simulation
//! models and the Monte Carlo experiment runner.

pub mod bands;
pub mod baselines;
pub mod data;
pub mod error;
pub mod io;
pub mod kernels;
pub mod plot;
pub mod rng;
pub mod roc;
pub mod solver;
pub mod synth;
pub mod tune;

pub use bands::{band_area, build_band, covers, BandSpec, ConfidenceBand, WeightScheme};
pub use data::Dataset;
pub use error::{Error, Result};
pub use kernels::{gram_matrix, kernel_eval, GramMatrix, KernelFamily, KernelSpec};
pub use roc::{auc, sweep, ClassificationMatrix, OperatingCriterion, RocCurve, RocPoint};
pub use solver::{cost_weight, fit, fit_with_gram, TrainConfig, WsvmModel};
