//! Simultaneous confidence bands for a weight-swept ROC curve.
//!
//! Replicates reweight the held-out empirical measure with random
//! multipliers and reuse the cached classifications, so no model is refit.
//! Each replicate curve is interpolated on a fixed fpf grid; the band is the
//! widest-confidence pair of central pointwise quantiles `(p/2, 1 - p/2)`
//! whose envelope still contains at least `(1 - gamma_bar) B` whole replicate
//! curves.

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{standard_exponential, substream};
use crate::roc::{collapse_points, interpolate_collapsed, ClassificationMatrix, SweepResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    /// Standard exponentials divided by their sample mean.
    Exponential,
    /// Multinomial counts of `n` draws with equal probabilities.
    Multinomial,
    /// All weights 1; every replicate equals the point estimate. For debugging.
    Constant,
}

pub fn bootstrap_weights<R: RngCore + ?Sized>(scheme: WeightScheme, n: usize, rng: &mut R) -> Vec<f64> {
    match scheme {
        WeightScheme::Exponential => {
            let xi: Vec<f64> = (0..n).map(|_| standard_exponential(rng)).collect();
            let mean = xi.iter().sum::<f64>() / n as f64;
            xi.into_iter().map(|x| x / mean).collect()
        }
        WeightScheme::Multinomial => {
            let mut counts = vec![0.0; n];
            for _ in 0..n {
                counts[rng.gen_range(0..n)] += 1.0;
            }
            counts
        }
        WeightScheme::Constant => vec![1.0; n],
    }
}

/// Weighted (se, sp) of every classifier in `cm`.
///
/// Fails with [`Error::SeSpUndefined`] when a class carries zero weight.
pub fn weighted_se_sp(cm: &ClassificationMatrix, weights: &[f64]) -> Result<Vec<(f64, f64)>> {
    let labels = cm.labels();
    if weights.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: weights.len(),
        });
    }
    let mut pos_mass = 0.0;
    let mut neg_mass = 0.0;
    for (&a, &w) in labels.iter().zip(weights) {
        if a == 1 {
            pos_mass += w;
        } else {
            neg_mass += w;
        }
    }
    if !(pos_mass > 0.0 && neg_mass > 0.0) {
        return Err(Error::SeSpUndefined(format!(
            "weighted class masses {pos_mass} (positive) and {neg_mass} (negative)"
        )));
    }
    Ok((0..cm.n_classifiers())
        .map(|m| {
            let mut tp = 0.0;
            let mut tn = 0.0;
            for (i, (&a, &w)) in labels.iter().zip(weights).enumerate() {
                let pos = cm.is_positive(m, i);
                if a == 1 && pos {
                    tp += w;
                } else if a == -1 && !pos {
                    tn += w;
                }
            }
            (tp / pos_mass, tn / neg_mass)
        })
        .collect())
}

/// tpf of the (fpf, tpf) points at each grid value, by the same corner
/// augmentation and interpolation used for point-estimate curves.
fn interpolate_on_grid(se_sp: &[(f64, f64)], z_grid: &[f64]) -> Vec<f64> {
    let collapsed = collapse_points(se_sp.iter().map(|&(se, sp)| (1.0 - sp, se)));
    z_grid
        .iter()
        .map(|&z| interpolate_collapsed(&collapsed, z))
        .collect()
}

/// Grid `0.01, 0.02, ..., 0.99, 1`.
pub fn default_z_grid() -> Vec<f64> {
    let mut z: Vec<f64> = (1..=99).map(|k| k as f64 / 100.0).collect();
    z.push(1.0);
    z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub n_boot: usize,
    /// The band has nominal level `1 - gamma_bar`.
    pub gamma_bar: f64,
    pub z_grid: Vec<f64>,
    pub weight_scheme: WeightScheme,
    pub rng_seed: u64,
}

impl BandSpec {
    pub fn new(n_boot: usize, gamma_bar: f64, rng_seed: u64) -> Self {
        Self {
            n_boot,
            gamma_bar,
            z_grid: default_z_grid(),
            weight_scheme: WeightScheme::Exponential,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_boot == 0 {
            return Err(Error::InvalidArgument("need at least one bootstrap replicate".into()));
        }
        if !(self.gamma_bar > 0.0 && self.gamma_bar < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma_bar {} outside (0, 1)",
                self.gamma_bar
            )));
        }
        let z = &self.z_grid;
        let ok = z.len() >= 2
            && z[0] > 0.0
            && z[0] < 0.5
            && z[z.len() - 1] == 1.0
            && z.windows(2).all(|w| w[1] > w[0]);
        if !ok {
            return Err(Error::InvalidArgument(
                "z grid must increase strictly from a start in (0, 1/2) to 1".into(),
            ));
        }
        if self.n_boot < 100 {
            log::warn!("only {} bootstrap replicates; at least 100 are recommended", self.n_boot);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub z_grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub point_estimate: Vec<f64>,
    pub upper: Vec<f64>,
    pub p_star: f64,
    pub n_boot: usize,
    /// Replicates left after dropping those with an empty weighted class.
    pub n_usable: usize,
    pub gamma_bar: f64,
    pub rng_seed: u64,
}

/// Interpolated replicate curves (`B x K`), degenerate replicates removed.
pub fn bootstrap_replicates(cm: &ClassificationMatrix, spec: &BandSpec) -> Vec<Vec<f64>> {
    let n = cm.n_samples();
    (0..spec.n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(spec.rng_seed, &[b as u64]);
            let w = bootstrap_weights(spec.weight_scheme, n, &mut rng);
            weighted_se_sp(cm, &w)
                .ok()
                .map(|se_sp| interpolate_on_grid(&se_sp, &spec.z_grid))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Quantile indices (lower, upper) into sorted columns of length `b` for
/// `p = i / (2b)`, with the type-1 (inverse of the right-continuous ECDF)
/// quantile `Q(q) = x_(ceil(q b))`, `Q(0) = x_(1)`.
fn quantile_indices(i: usize, b: usize) -> (usize, usize) {
    // p/2 = i/(4b), so ceil(p/2 * b) = ceil(i/4); 1 - p/2 gives b - floor(i/4).
    let lo = i.div_ceil(4).saturating_sub(1);
    let hi = b - i / 4 - 1;
    (lo, hi)
}

fn count_inside(replicates: &[Vec<f64>], sorted_cols: &[Vec<f64>], i: usize) -> usize {
    let b = replicates.len();
    let (lo, hi) = quantile_indices(i, b);
    replicates
        .iter()
        .filter(|curve| {
            curve
                .iter()
                .zip(sorted_cols)
                .all(|(&y, col)| col[lo] <= y && y <= col[hi])
        })
        .count()
}

pub fn build_band(cm: &ClassificationMatrix, spec: &BandSpec) -> Result<ConfidenceBand> {
    spec.validate()?;
    let point_se_sp = weighted_se_sp(cm, &vec![1.0; cm.n_samples()])?;
    let point_estimate = interpolate_on_grid(&point_se_sp, &spec.z_grid);

    let replicates = bootstrap_replicates(cm, spec);
    let usable = replicates.len();
    let floor = (1.0 - spec.gamma_bar) * spec.n_boot as f64;
    if (usable as f64) < floor || usable == 0 {
        return Err(Error::TooFewReplicates {
            usable,
            required: floor.ceil() as usize,
        });
    }
    let required = ((1.0 - spec.gamma_bar) * usable as f64 - 1e-9).ceil() as usize;

    let k = spec.z_grid.len();
    let sorted_cols: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut col: Vec<f64> = replicates.iter().map(|r| r[j]).collect();
            col.sort_by(f64::total_cmp);
            col
        })
        .collect();

    // Largest i in 0..=2B with count_inside(i) >= required. i = 0 is the
    // min/max envelope and always qualifies.
    let top = 2 * usable;
    let (mut good, mut bad) = (0usize, top + 1);
    if count_inside(&replicates, &sorted_cols, top) >= required {
        good = top;
    } else {
        bad = top;
        while bad - good > 1 {
            let mid = good + (bad - good) / 2;
            if count_inside(&replicates, &sorted_cols, mid) >= required {
                good = mid;
            } else {
                bad = mid;
            }
        }
    }
    if cfg!(debug_assertions) {
        let at_good = count_inside(&replicates, &sorted_cols, good);
        debug_assert!(at_good >= required);
        if bad <= top {
            debug_assert!(count_inside(&replicates, &sorted_cols, bad) <= at_good);
        }
    }

    let (lo, hi) = quantile_indices(good, usable);
    let lower: Vec<f64> = sorted_cols
        .iter()
        .zip(&point_estimate)
        .map(|(col, &y)| col[lo].min(y))
        .collect();
    let upper: Vec<f64> = sorted_cols
        .iter()
        .zip(&point_estimate)
        .map(|(col, &y)| col[hi].max(y))
        .collect();

    Ok(ConfidenceBand {
        z_grid: spec.z_grid.clone(),
        lower,
        point_estimate,
        upper,
        p_star: good as f64 / (2 * usable) as f64,
        n_boot: spec.n_boot,
        n_usable: usable,
        gamma_bar: spec.gamma_bar,
        rng_seed: spec.rng_seed,
    })
}

pub fn build_band_for_sweep(sweep: &SweepResult, spec: &BandSpec) -> Result<ConfidenceBand> {
    build_band(&sweep.classifications, spec)
}

/// Trapezoidal integral of `upper - lower` over the z grid.
pub fn band_area(band: &ConfidenceBand) -> f64 {
    let gap: Vec<f64> = band
        .upper
        .iter()
        .zip(&band.lower)
        .map(|(u, l)| (u - l).max(0.0))
        .collect();
    band.z_grid
        .windows(2)
        .zip(gap.windows(2))
        .map(|(z, g)| (z[1] - z[0]) * 0.5 * (g[0] + g[1]))
        .sum()
}

/// Whether `truth` (one value per z grid point) lies inside the band at
/// every grid point in [0.01, 0.99].
pub fn covers(band: &ConfidenceBand, truth: &[f64]) -> bool {
    covers_on(band, truth, 0.01, 0.99)
}

pub fn covers_on(band: &ConfidenceBand, truth: &[f64], lo: f64, hi: f64) -> bool {
    const SLACK: f64 = 1e-12;
    band.z_grid
        .iter()
        .zip(truth)
        .enumerate()
        .filter(|(_, (&z, _))| z >= lo - SLACK && z <= hi + SLACK)
        .all(|(k, (_, &t))| band.lower[k] <= t && t <= band.upper[k])
}
