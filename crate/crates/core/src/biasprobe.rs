//! Scene-bias quantification: how strongly does an open-set recognizer's
//! performance depend on the scene gap between test and training videos?
//!
//! The protocol: measure each test video's scene distance to the training
//! set (minimum cosine distance between scene features), partition test
//! videos into class-balanced subsets ordered by that distance, evaluate the
//! open-set metric on each subset combined with a fixed counterpart, and
//! summarize the metric-versus-distance relation with an OLS line, the
//! metric variance, and Pearson correlation. A debiased model shows a
//! flatter line and smaller variance.

use thiserror::Error;

use crate::osarmetrics::{auc, MetricError, ScoredSample};

#[derive(Debug, Error)]
pub enum BiasProbeError {
    #[error("scene distance needs a non-empty {0} feature set")]
    EmptySet(&'static str),
    #[error("feature {index} has zero norm; scene features must be non-zero")]
    ZeroFeature { index: usize },
    #[error("class {class} has {have} videos but the protocol needs at least {need}")]
    ClassTooSmall { class: u32, have: usize, need: usize },
    #[error("bias curve needs at least two subsets, got {0}")]
    TooFewPoints(usize),
    #[error("subset distances are all identical; the fit is undefined")]
    DegenerateDistances,
    #[error("metric failed on subset {subset}: {source}")]
    MetricFailed {
        subset: usize,
        #[source]
        source: MetricError,
    },
}

/// Metric-versus-distance summary for one model and one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasCurve {
    /// One (scene distance, metric value) point per subset, in subset order.
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Population variance of the metric values.
    pub variance: f64,
    pub pearson_r: f64,
}

impl BiasCurve {
    pub fn abs_slope(&self) -> f64 {
        self.slope.abs()
    }
}

fn normalized(features: &[Vec<f64>], what: &'static str) -> Result<Vec<Vec<f64>>, BiasProbeError> {
    if features.is_empty() {
        return Err(BiasProbeError::EmptySet(what));
    }
    features
        .iter()
        .enumerate()
        .map(|(index, f)| {
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(BiasProbeError::ZeroFeature { index });
            }
            Ok(f.iter().map(|v| v / norm).collect())
        })
        .collect()
}

/// Per-video scene distance `d_i = min_j (1 - u_i . v_j)` over L2-normalized
/// features, plus the aggregate mean. Each `d_i` lies in [0, 2].
pub fn scene_distance(
    test_features: &[Vec<f64>],
    train_features: &[Vec<f64>],
) -> Result<(Vec<f64>, f64), BiasProbeError> {
    let test = normalized(test_features, "test")?;
    let train = normalized(train_features, "train")?;
    let per_video: Vec<f64> = test
        .iter()
        .map(|u| {
            train
                .iter()
                .map(|v| 1.0 - u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mean = per_video.iter().sum::<f64>() / per_video.len() as f64;
    Ok((per_video, mean))
}

/// Partition videos into `k` subsets, class-balanced and ordered by scene
/// distance: within each class, videos are sorted by distance ascending,
/// the farthest excess (beyond a multiple of `k`) is dropped, and the i-th
/// quantile chunk goes to subset i. Subset 0 is nearest to the training
/// scenes, subset k-1 farthest. Returns indices into the input slices.
pub fn balanced_subsets(
    labels: &[u32],
    distances: &[f64],
    k: usize,
) -> Result<Vec<Vec<usize>>, BiasProbeError> {
    assert_eq!(labels.len(), distances.len(), "labels and distances differ");
    assert!(k >= 1, "need at least one subset");
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let mut subsets = vec![Vec::new(); k];
    for class in classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(BiasProbeError::ClassTooSmall {
                class,
                have: members.len(),
                need: k,
            });
        }
        members.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
        let per_subset = members.len() / k;
        members.truncate(per_subset * k); // drop the farthest remainder
        for (i, chunk) in members.chunks(per_subset).enumerate() {
            subsets[i].extend_from_slice(chunk);
        }
    }
    Ok(subsets)
}

/// Ordinary least squares of metric on distance, plus the population
/// variance of the metric and the Pearson correlation (0 by convention when
/// the metric is constant).
pub fn fit_line(points: &[(f64, f64)]) -> Result<BiasCurve, BiasProbeError> {
    if points.len() < 2 {
        return Err(BiasProbeError::TooFewPoints(points.len()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let syy = points.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>();
    let sxy = points
        .iter()
        .map(|p| (p.0 - mx) * (p.1 - my))
        .sum::<f64>();
    if sxx == 0.0 {
        return Err(BiasProbeError::DegenerateDistances);
    }
    let slope = sxy / sxx;
    let pearson_r = if syy == 0.0 {
        0.0
    } else {
        sxy / (sxx.sqrt() * syy.sqrt())
    };
    Ok(BiasCurve {
        points: points.to_vec(),
        slope,
        intercept: my - slope * mx,
        variance: syy / n,
        pearson_r,
    })
}

/// Evaluate the default metric (AUC) on each subset-plus-counterpart sample
/// set and fit the bias curve. Each entry pairs the subset's aggregate scene
/// distance with the combined samples to score.
pub fn bias_curve(combos: &[(f64, Vec<ScoredSample>)]) -> Result<BiasCurve, BiasProbeError> {
    let mut points = Vec::with_capacity(combos.len());
    for (subset, (d, samples)) in combos.iter().enumerate() {
        let value = auc(samples).map_err(|source| BiasProbeError::MetricFailed { subset, source })?;
        points.push((*d, value));
    }
    fit_line(&points)
}
