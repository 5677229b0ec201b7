//! ROC curves traced by sweeping the cost weight.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::gram_matrix;
use crate::solver::{fit_with_gram, TrainConfig, WsvmModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub alpha: f64,
    pub fpf: f64,
    pub tpf: f64,
}

/// Empirical ROC points ordered by strictly increasing weight parameter.
///
/// The points are kept raw: no monotone envelope is imposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn new(points: Vec<RocPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("ROC curve needs at least one point".into()));
        }
        for p in &points {
            let unit = 0.0..=1.0;
            if !unit.contains(&p.fpf) || !unit.contains(&p.tpf) || !unit.contains(&p.alpha) {
                return Err(Error::InvalidArgument(format!(
                    "ROC point {p:?} outside the unit square"
                )));
            }
        }
        if points.windows(2).any(|w| w[1].alpha <= w[0].alpha) {
            return Err(Error::InvalidArgument(
                "ROC weights must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Builds a curve from `(alpha, fpf, tpf)` triples.
    pub fn from_triples(triples: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(
            triples
                .iter()
                .map(|&(alpha, fpf, tpf)| RocPoint { alpha, fpf, tpf })
                .collect(),
        )
    }

    pub fn points(&self) -> &[RocPoint] {
        &self.points
    }

    pub fn grid_size(&self) -> usize {
        self.points.len()
    }

    /// Points sorted by fpf with corners (0,0) and (1,1) appended and tied
    /// fpf values collapsed to their maximum tpf.
    pub fn collapsed(&self) -> Vec<(f64, f64)> {
        collapse_points(self.points.iter().map(|p| (p.fpf, p.tpf)))
    }
}

/// Corner-augmented, fpf-sorted, tie-collapsed view of `(fpf, tpf)` points.
pub fn collapse_points(points: impl IntoIterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.into_iter().collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts.dedup_by(|later, earlier| later.0 == earlier.0);
    pts
}

/// Linear interpolation of tpf at `z` on a collapsed point set.
pub fn interpolate_collapsed(collapsed: &[(f64, f64)], z: f64) -> f64 {
    let z = z.clamp(0.0, 1.0);
    // Index of the last point with fpf <= z.
    let k = collapsed.partition_point(|p| p.0 <= z).saturating_sub(1);
    let (x0, y0) = collapsed[k];
    if x0 == z || k + 1 == collapsed.len() {
        return y0;
    }
    let (x1, y1) = collapsed[k + 1];
    y0 + (y1 - y0) * (z - x0) / (x1 - x0)
}

/// Trapezoidal area on a collapsed point set.
pub fn trapezoid_area(collapsed: &[(f64, f64)]) -> f64 {
    collapsed
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

pub fn auc(curve: &RocCurve) -> f64 {
    trapezoid_area(&curve.collapsed())
}

pub fn interpolate_tpf(curve: &RocCurve, z: f64) -> f64 {
    interpolate_collapsed(&curve.collapsed(), z)
}

/// Sensitivity and specificity of predicted labels against true labels.
pub fn se_sp_from_predictions(labels: &[i8], predictions: &[i8]) -> Result<(f64, f64)> {
    if labels.len() != predictions.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    let (mut pos, mut tp, mut neg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&a, &d) in labels.iter().zip(predictions) {
        if a == 1 {
            pos += 1;
            tp += usize::from(d == 1);
        } else {
            neg += 1;
            tn += usize::from(d == -1);
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::SeSpUndefined(format!(
            "test set has {pos} positive and {neg} negative samples"
        )));
    }
    Ok((tp as f64 / pos as f64, tn as f64 / neg as f64))
}

pub fn estimate_se_sp(model: &WsvmModel, test: &Dataset) -> Result<(f64, f64)> {
    se_sp_from_predictions(test.labels(), &model.classify_dataset(test)?)
}

/// Empirical weighted misclassification `E_n[1{D(X) != A} C_A(alpha)]`.
pub fn weighted_risk(labels: &[i8], predictions: &[i8], alpha_weight: f64) -> f64 {
    let total: f64 = labels
        .iter()
        .zip(predictions)
        .filter(|(a, d)| a != d)
        .map(|(&a, _)| if a == 1 { alpha_weight } else { 1.0 - alpha_weight })
        .sum();
    total / labels.len() as f64
}

/// Cached test-set classifications of a family of classifiers indexed by a
/// strictly increasing parameter. This is all the bootstrap needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationMatrix {
    alphas: Vec<f64>,
    labels: Vec<i8>,
    /// `positive[m][i]`: classifier `m` labels test sample `i` as +1.
    positive: Vec<Vec<bool>>,
}

impl ClassificationMatrix {
    pub fn new(alphas: Vec<f64>, labels: Vec<i8>, predictions: &[Vec<i8>]) -> Result<Self> {
        if alphas.len() != predictions.len() || alphas.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} grid values for {} classifiers",
                alphas.len(),
                predictions.len()
            )));
        }
        if let Some(p) = predictions.iter().find(|p| p.len() != labels.len()) {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: p.len(),
            });
        }
        Ok(Self {
            alphas,
            labels,
            positive: predictions
                .iter()
                .map(|p| p.iter().map(|&d| d == 1).collect())
                .collect(),
        })
    }

    pub fn from_models(models: &[WsvmModel], test: &Dataset) -> Result<Self> {
        let preds = models
            .iter()
            .map(|m| m.classify_dataset(test))
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            models.iter().map(|m| m.alpha_weight).collect(),
            test.labels().to_vec(),
            &preds,
        )
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn n_classifiers(&self) -> usize {
        self.alphas.len()
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_positive(&self, m: usize, i: usize) -> bool {
        self.positive[m][i]
    }

    pub fn predictions(&self, m: usize) -> Vec<i8> {
        self.positive[m].iter().map(|&p| if p { 1 } else { -1 }).collect()
    }

    /// Unweighted empirical ROC curve.
    pub fn curve(&self) -> Result<RocCurve> {
        let pts = (0..self.n_classifiers())
            .map(|m| {
                let (se, sp) = se_sp_from_predictions(&self.labels, &self.predictions(m))?;
                Ok(RocPoint {
                    alpha: self.alphas[m],
                    fpf: 1.0 - sp,
                    tpf: se,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        RocCurve::new(pts)
    }
}

/// `m` uniform interior points `k / (m + 1)`; `m = 99` gives 0.01, ..., 0.99.
pub fn default_alpha_grid(m: usize) -> Vec<f64> {
    (1..=m).map(|k| k as f64 / (m + 1) as f64).collect()
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub curve: RocCurve,
    /// One model per grid value, in grid order.
    pub models: Vec<WsvmModel>,
    pub classifications: ClassificationMatrix,
}

/// Fits the weighted SVM at every grid value with the penalty and kernel of
/// `base_cfg` held fixed and estimates (fpf, tpf) on `test`.
///
/// Grid points are fitted in order, each warm-started from its predecessor.
pub fn sweep(
    train: &Dataset,
    test: &Dataset,
    base_cfg: &TrainConfig,
    alpha_grid: &[f64],
) -> Result<SweepResult> {
    if alpha_grid.is_empty() {
        return Err(Error::InvalidArgument("empty weight grid".into()));
    }
    if alpha_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "weight grid must be strictly increasing".into(),
        ));
    }
    if alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::InvalidArgument("weight grid must lie in [0, 1]".into()));
    }
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            got: test.dim(),
        });
    }
    base_cfg.validate()?;
    let gram = gram_matrix(&base_cfg.kernel, train)?;
    let mut models = Vec::with_capacity(alpha_grid.len());
    let mut warm: Option<Vec<f64>> = None;
    for &alpha in alpha_grid {
        let cfg = base_cfg.with_alpha(alpha);
        let model = fit_with_gram(train, &gram, &cfg, warm.as_deref()).map_err(|e| {
            Error::SweepFit {
                alpha,
                source: Box::new(e),
            }
        })?;
        warm = Some(model.multipliers());
        models.push(model);
    }
    let classifications = ClassificationMatrix::from_models(&models, test)?;
    let curve = classifications.curve()?;
    Ok(SweepResult {
        curve,
        models,
        classifications,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OperatingCriterion {
    /// Minimize the Euclidean distance to (0, 1).
    ClosestToCorner,
    /// Maximize se + sp.
    Youden,
    /// Maximize se among points with sp >= `min_sp`.
    MaxSeAtMinSp { min_sp: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub alpha_star: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub criterion: OperatingCriterion,
}

/// Best grid point under `criterion`; ties go to the smaller weight.
pub fn select_operating_point(
    curve: &RocCurve,
    criterion: OperatingCriterion,
) -> Result<OperatingPoint> {
    // Larger score is better.
    let score = |p: &RocPoint| -> Option<f64> {
        match criterion {
            OperatingCriterion::ClosestToCorner => {
                Some(-(p.fpf * p.fpf + (1.0 - p.tpf) * (1.0 - p.tpf)))
            }
            OperatingCriterion::Youden => Some(p.tpf + (1.0 - p.fpf)),
            OperatingCriterion::MaxSeAtMinSp { min_sp } => (1.0 - p.fpf >= min_sp).then_some(p.tpf),
        }
    };
    if let OperatingCriterion::MaxSeAtMinSp { min_sp } = criterion {
        if !(0.0..=1.0).contains(&min_sp) {
            return Err(Error::InvalidArgument(format!(
                "minimum specificity {min_sp} outside [0, 1]"
            )));
        }
    }
    let mut best: Option<(&RocPoint, f64)> = None;
    for p in curve.points() {
        if let Some(s) = score(p) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((p, s));
            }
        }
    }
    match best {
        Some((p, _)) => Ok(OperatingPoint {
            alpha_star: p.alpha,
            sensitivity: p.tpf,
            specificity: 1.0 - p.fpf,
            criterion,
        }),
        None => match criterion {
            OperatingCriterion::MaxSeAtMinSp { min_sp } => {
                Err(Error::InfeasibleOperatingPoint { min_sp })
            }
            _ => unreachable!("non-empty curve always has a best point"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use proptest::prelude::*;

    fn curve(pts: &[(f64, f64)]) -> RocCurve {
        let n = pts.len() as f64;
        RocCurve::new(
            pts.iter()
                .enumerate()
                .map(|(k, &(fpf, tpf))| RocPoint {
                    alpha: (k as f64 + 1.0) / (n + 1.0),
                    fpf,
                    tpf,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&curve(&[(0.5, 0.5)])), 0.5);
        assert_eq!(auc(&curve(&[(0.0, 1.0)])), 1.0);
        assert!((auc(&curve(&[(0.0, 0.5), (0.5, 1.0)])) - 0.875).abs() < 1e-15);
        assert_eq!(auc(&curve(&[(0.0, 0.0), (1.0, 1.0)])), 0.5);
    }

    #[test]
    fn interpolation_examples() {
        let c = curve(&[(0.2, 0.4), (0.6, 0.8)]);
        assert!((interpolate_tpf(&c, 0.4) - 0.6).abs() < 1e-15);
        assert_eq!(interpolate_tpf(&c, 0.2), 0.4);
        assert_eq!(interpolate_tpf(&c, 0.6), 0.8);
        assert_eq!(interpolate_tpf(&c, 1.0), 1.0);
        assert!((interpolate_tpf(&c, 0.1) - 0.2).abs() < 1e-15);
        assert!((interpolate_tpf(&c, 0.8) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn duplicate_fpf_keeps_max_tpf() {
        let c = curve(&[(0.3, 0.2), (0.3, 0.7), (0.3, 0.5)]);
        assert_eq!(c.collapsed(), vec![(0.0, 0.0), (0.3, 0.7), (1.0, 1.0)]);
        assert_eq!(interpolate_tpf(&c, 0.3), 0.7);
    }

    #[test]
    fn curve_validation() {
        assert!(RocCurve::new(vec![]).is_err());
        assert!(RocCurve::from_triples(&[(0.5, 1.2, 0.3)]).is_err());
        assert!(RocCurve::from_triples(&[(0.5, 0.1, 0.3), (0.5, 0.2, 0.4)]).is_err());
    }

    #[test]
    fn se_sp_examples() {
        let labels = [1, 1, -1, -1];
        assert_eq!(se_sp_from_predictions(&labels, &[1, 1, 1, 1]).unwrap(), (1.0, 0.0));
        assert_eq!(se_sp_from_predictions(&labels, &[-1; 4]).unwrap(), (0.0, 1.0));
        // TP, FN, TN, FP = 1, 1, 1, 1
        assert_eq!(se_sp_from_predictions(&labels, &[1, -1, -1, 1]).unwrap(), (0.5, 0.5));
        assert!(matches!(
            se_sp_from_predictions(&[1, 1], &[1, -1]),
            Err(Error::SeSpUndefined(_))
        ));
    }

    #[test]
    fn operating_point_examples() {
        let c = curve(&[(0.2, 0.6), (0.4, 0.9)]);
        let p = select_operating_point(&c, OperatingCriterion::ClosestToCorner).unwrap();
        assert_eq!((p.sensitivity, p.specificity), (0.9, 0.6));

        let c = curve(&[(0.3, 0.5), (0.0, 1.0), (0.6, 1.0)]);
        for crit in [
            OperatingCriterion::ClosestToCorner,
            OperatingCriterion::Youden,
            OperatingCriterion::MaxSeAtMinSp { min_sp: 0.5 },
        ] {
            let p = select_operating_point(&c, crit).unwrap();
            assert_eq!((p.sensitivity, p.specificity), (1.0, 1.0), "{crit:?}");
        }
        assert!(select_operating_point(&c, OperatingCriterion::MaxSeAtMinSp { min_sp: 1.0 }).is_ok());
        let c = curve(&[(0.3, 0.5)]);
        assert!(matches!(
            select_operating_point(&c, OperatingCriterion::MaxSeAtMinSp { min_sp: 0.8 }),
            Err(Error::InfeasibleOperatingPoint { .. })
        ));
    }

    #[test]
    fn ties_prefer_smaller_alpha() {
        let c = curve(&[(0.2, 0.7), (0.1, 0.6)]);
        let p = select_operating_point(&c, OperatingCriterion::Youden).unwrap();
        assert_eq!(p.alpha_star, c.points()[0].alpha);
    }

    #[test]
    fn single_point_grid_sweep() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 - 5.5]).collect();
        let labels: Vec<i8> = (0..12).map(|i| if i >= 6 { 1 } else { -1 }).collect();
        let d = Dataset::from_rows(&rows, labels).unwrap();
        let r = sweep(&d, &d, &TrainConfig::new(0.5, 0.01, KernelSpec::Linear), &[0.5]).unwrap();
        assert_eq!(r.curve.grid_size(), 1);
        assert_eq!(r.models.len(), 1);
        assert!((0.0..=1.0).contains(&auc(&r.curve)));
    }

    #[test]
    fn separable_data_reaches_the_corner() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                vec![s * (1.0 + (i as f64) * 0.05), (i as f64 * 0.7).sin()]
            })
            .collect();
        let labels: Vec<i8> = (0..20).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let d = Dataset::from_rows(&rows, labels).unwrap();
        let r = sweep(&d, &d, &TrainConfig::new(0.5, 0.01, KernelSpec::Linear), &default_alpha_grid(9)).unwrap();
        assert!(r.curve.points().iter().any(|p| p.fpf == 0.0 && p.tpf == 1.0));
        assert_eq!(auc(&r.curve), 1.0);
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let d = Dataset::from_rows(&[vec![0.0], vec![1.0]], vec![-1, 1]).unwrap();
        let cfg = TrainConfig::new(0.5, 0.1, KernelSpec::Linear);
        assert!(sweep(&d, &d, &cfg, &[]).is_err());
        assert!(sweep(&d, &d, &cfg, &[0.5, 0.4]).is_err());
        assert!(sweep(&d, &d, &cfg, &[0.5, 1.5]).is_err());
    }

    #[test]
    fn default_grid_endpoints() {
        let g = default_alpha_grid(99);
        assert_eq!(g.len(), 99);
        assert!((g[0] - 0.01).abs() < 1e-15 && (g[98] - 0.99).abs() < 1e-15);
        assert!((g[49] - 0.5).abs() < 1e-15);
    }

    fn random_curve() -> impl Strategy<Value = RocCurve> {
        prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..30).prop_map(|pts| curve(&pts))
    }

    proptest! {
        #[test]
        fn auc_in_unit_interval(c in random_curve()) {
            let a = auc(&c);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn interpolation_monotone_for_monotone_points(
            mut pts in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..30),
            zs in prop::collection::vec(0.0f64..=1.0, 2..20),
        ) {
            // Make tpf non-decreasing in fpf.
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut tpfs: Vec<f64> = pts.iter().map(|p| p.1).collect();
            tpfs.sort_by(f64::total_cmp);
            let pts: Vec<(f64, f64)> = pts.iter().zip(tpfs).map(|(p, t)| (p.0, t)).collect();
            let c = curve(&pts);
            let mut zs = zs;
            zs.sort_by(f64::total_cmp);
            let ys: Vec<f64> = zs.iter().map(|&z| interpolate_tpf(&c, z)).collect();
            prop_assert!(ys.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        }

        #[test]
        fn se_sp_matches_confusion_counts(
            pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 2..60)
        ) {
            let labels: Vec<i8> = pairs.iter().map(|p| if p.0 { 1 } else { -1 }).collect();
            let preds: Vec<i8> = pairs.iter().map(|p| if p.1 { 1 } else { -1 }).collect();
            let tp = pairs.iter().filter(|p| p.0 && p.1).count() as f64;
            let fn_ = pairs.iter().filter(|p| p.0 && !p.1).count() as f64;
            let tn = pairs.iter().filter(|p| !p.0 && !p.1).count() as f64;
            let fp = pairs.iter().filter(|p| !p.0 && p.1).count() as f64;
            match se_sp_from_predictions(&labels, &preds) {
                Ok((se, sp)) => {
                    prop_assert_eq!(se, tp / (tp + fn_));
                    prop_assert_eq!(sp, tn / (tn + fp));
                }
                Err(_) => prop_assert!(tp + fn_ == 0.0 || tn + fp == 0.0),
            }
        }

        #[test]
        fn youden_is_exhaustive_maximum(c in random_curve()) {
            let p = select_operating_point(&c, OperatingCriterion::Youden).unwrap();
            let best = c.points().iter().map(|q| q.tpf + (1.0 - q.fpf)).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(p.sensitivity + p.specificity, best);
        }
    }
}
