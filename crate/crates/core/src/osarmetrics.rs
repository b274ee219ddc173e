//! Open-set evaluation: ROC-style separation metrics, open macro F1 over
//! varying openness, distribution divergence of uncertainties, and feature
//! similarity (CKA).
//!
//! Convention used throughout: a sample's score is `1 - uncertainty`, and
//! "known" is the positive class. The detector predicts "known" when
//! `score >= tau`, so FAR@95 is the fraction of unknowns that slip past the
//! loosest threshold still catching 95% of knowns.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataio::PredictionRow;
use crate::seeding;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("invalid metric input: {0}")]
    Invalid(String),
}

/// One evaluated clip, reduced to what the open-set metrics need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    /// Higher means "more confidently known"; by convention `1 - u`.
    pub score: f64,
    pub is_known: bool,
    /// Class indices for F1-style metrics; ignored by the ROC family.
    pub predicted_class: u32,
    pub true_class: u32,
}

impl ScoredSample {
    pub fn new(score: f64, is_known: bool) -> Self {
        ScoredSample {
            score,
            is_known,
            predicted_class: 0,
            true_class: 0,
        }
    }
}

fn split_scores(samples: &[ScoredSample]) -> Result<(Vec<f64>, Vec<f64>), MetricError> {
    if let Some(bad) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(MetricError::Invalid(format!(
            "non-finite score {}",
            bad.score
        )));
    }
    let known: Vec<f64> = samples.iter().filter(|s| s.is_known).map(|s| s.score).collect();
    let unknown: Vec<f64> = samples
        .iter()
        .filter(|s| !s.is_known)
        .map(|s| s.score)
        .collect();
    if known.is_empty() || unknown.is_empty() {
        return Err(MetricError::Undefined(
            "needs at least one known and one unknown sample".into(),
        ));
    }
    Ok((known, unknown))
}

/// Area under the ROC curve in the Mann-Whitney form
/// `P(score_known > score_unknown) + 0.5 * P(tie)`, computed via average
/// ranks in O(n log n).
pub fn auc(samples: &[ScoredSample]) -> Result<f64, MetricError> {
    let (known, unknown) = split_scores(samples)?;
    let mut all: Vec<(f64, bool)> = known
        .iter()
        .map(|&s| (s, true))
        .chain(unknown.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Average rank over each tie group (1-based ranks).
    let mut rank_sum_known = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = ((i + 1 + j) as f64) / 2.0; // mean of ranks i+1 ..= j
        rank_sum_known += all[i..j].iter().filter(|s| s.1).count() as f64 * avg_rank;
        i = j;
    }
    let (np, nn) = (known.len() as f64, unknown.len() as f64);
    let u = rank_sum_known - np * (np + 1.0) / 2.0;
    Ok(u / (np * nn))
}

fn check_rate(name: &str, v: f64) -> Result<(), MetricError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(MetricError::Invalid(format!("{name}={v} outside [0,1]")));
    }
    Ok(())
}

/// False alarm rate at a fixed true positive rate: take the maximum
/// threshold tau with `TPR(tau) >= tpr_target` (the decision rule is
/// `score >= tau`) and report the fraction of unknowns at or above it.
pub fn far_at_tpr(samples: &[ScoredSample], tpr_target: f64) -> Result<f64, MetricError> {
    check_rate("tpr_target", tpr_target)?;
    let (mut known, unknown) = split_scores(samples)?;
    // Need at least m knowns >= tau; the largest such tau is the m-th
    // largest known score.
    let m = (tpr_target * known.len() as f64).ceil() as usize;
    if m == 0 {
        return Ok(0.0); // TPR >= 0 holds at any threshold, however large
    }
    known.sort_by(|a, b| b.total_cmp(a));
    let tau = known[m - 1];
    let hits = unknown.iter().filter(|&&s| s >= tau).count();
    Ok(hits as f64 / unknown.len() as f64)
}

/// True positive rate at a fixed false alarm rate: take the minimum
/// observed-score threshold tau with `FAR(tau) <= far_target` and report the
/// fraction of knowns at or above it. If no observed score qualifies, the
/// only admissible operating point rejects everything: TPR 0.
pub fn tpr_at_far(samples: &[ScoredSample], far_target: f64) -> Result<f64, MetricError> {
    check_rate("far_target", far_target)?;
    let (known, mut unknown) = split_scores(samples)?;
    let a = (far_target * unknown.len() as f64).floor() as usize;
    if a >= unknown.len() {
        return Ok(1.0); // every threshold qualifies, take tau = -inf
    }
    unknown.sort_by(|a, b| b.total_cmp(a));
    // At most `a` unknowns may score >= tau, so tau must exceed the
    // (a+1)-th largest unknown score.
    let v = unknown[a];
    let hits = known.iter().filter(|&&s| s > v).count();
    Ok(hits as f64 / known.len() as f64)
}

/// Openness of a split with `c_known` training classes and `c_unknown`
/// additional test-time classes: `1 - sqrt(2k / (2k + u))`.
pub fn openness(c_known: usize, c_unknown: usize) -> f64 {
    assert!(c_known >= 1, "openness needs at least one known class");
    let k = c_known as f64;
    let u = c_unknown as f64;
    1.0 - (2.0 * k / (2.0 * k + u)).sqrt()
}

// ---------------------------------------------------------------------------
// Open macro F1
// ---------------------------------------------------------------------------

/// Protocol knobs for [`open_maf1`]. Openness points are made by keeping a
/// ratio of the unknown classes; each ratio is redrawn `resamples` times.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenMaF1Config {
    pub ratios: Vec<f64>,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for OpenMaF1Config {
    fn default() -> Self {
        OpenMaF1Config {
            ratios: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            resamples: 5,
            seed: 0,
        }
    }
}

/// Macro F1 over the (known classes + "unknown") label space, averaged only
/// over classes that occur in the ground truth of the evaluation subset.
fn macro_f1(pairs: &[(u32, u32)], n_labels: usize) -> f64 {
    let mut tp = vec![0usize; n_labels];
    let mut fp = vec![0usize; n_labels];
    let mut fn_ = vec![0usize; n_labels];
    let mut in_truth = vec![false; n_labels];
    for &(truth, pred) in pairs {
        in_truth[truth as usize] = true;
        if truth == pred {
            tp[truth as usize] += 1;
        } else {
            fn_[truth as usize] += 1;
            fp[pred as usize] += 1;
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in 0..n_labels {
        if !in_truth[c] {
            continue;
        }
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        sum += if denom == 0 {
            0.0
        } else {
            2.0 * tp[c] as f64 / denom as f64
        };
        count += 1;
    }
    sum / count as f64
}

/// Open macro F1: classify each clip as `argmax p` when `u <= tau_u`, else
/// as the synthetic "unknown" class; compute macro F1 at every openness
/// point (unknown-class subsample); weight points by their openness; return
/// the mean and population variance across resamples.
pub fn open_maf1(
    rows: &[PredictionRow],
    c_known: usize,
    tau_u: f64,
    cfg: &OpenMaF1Config,
) -> Result<(f64, f64), MetricError> {
    if rows.is_empty() {
        return Err(MetricError::Invalid("no prediction rows".into()));
    }
    if cfg.ratios.is_empty() || cfg.resamples == 0 {
        return Err(MetricError::Invalid(
            "need at least one ratio and one resample".into(),
        ));
    }
    let mut unknown_classes: Vec<u32> = rows
        .iter()
        .map(|r| r.true_action)
        .filter(|&a| a as usize >= c_known)
        .collect();
    unknown_classes.sort_unstable();
    unknown_classes.dedup();
    if unknown_classes.is_empty() {
        return Err(MetricError::Undefined(
            "open macro F1 needs at least one unknown class in the dump".into(),
        ));
    }

    let unknown_label = c_known as u32;
    // Precompute (true label, predicted label) in the C+1 space.
    let decided: Vec<(u32, u32, u32)> = rows
        .iter()
        .map(|r| {
            let pred = if r.uncertainty > tau_u {
                unknown_label
            } else {
                let mut best = 0usize;
                for (i, &p) in r.probs.iter().enumerate() {
                    if p > r.probs[best] {
                        best = i;
                    }
                }
                best as u32
            };
            let truth = if (r.true_action as usize) < c_known {
                r.true_action
            } else {
                unknown_label
            };
            (r.true_action, truth, pred)
        })
        .collect();

    let mut per_resample = Vec::with_capacity(cfg.resamples);
    for rep in 0..cfg.resamples {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeding::mix_index(seeding::mix(cfg.seed, "maf1"), rep as u64));
        let mut weighted = 0.0;
        let mut weight_sum = 0.0;
        for &ratio in &cfg.ratios {
            let k = ((ratio * unknown_classes.len() as f64).round() as usize)
                .clamp(1, unknown_classes.len());
            let picks = rand::seq::index::sample(&mut rng, unknown_classes.len(), k);
            let mut keep = vec![false; unknown_classes.len()];
            for p in picks {
                keep[p] = true;
            }
            let kept: Vec<u32> = unknown_classes
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(&c, _)| c)
                .collect();
            let pairs: Vec<(u32, u32)> = decided
                .iter()
                .filter(|(raw, _, _)| (*raw as usize) < c_known || kept.contains(raw))
                .map(|&(_, t, p)| (t, p))
                .collect();
            let f1 = macro_f1(&pairs, c_known + 1);
            let w = openness(c_known, k);
            weighted += w * f1;
            weight_sum += w;
        }
        per_resample.push(weighted / weight_sum);
    }
    let mean = per_resample.iter().sum::<f64>() / per_resample.len() as f64;
    let var = per_resample
        .iter()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / per_resample.len() as f64;
    Ok((mean, var))
}

// ---------------------------------------------------------------------------
// Symmetric KL divergence of uncertainty histograms
// ---------------------------------------------------------------------------

/// Symmetric KL divergence between the uncertainty distributions of two
/// sample populations. Both lists are min-max normalized with the *pooled*
/// min and max, histogrammed on [0,1] into `bins` equal bins, smoothed by
/// adding `eps` to each bin probability and renormalizing.
pub fn sym_kld(
    u_closed: &[f64],
    u_open: &[f64],
    bins: usize,
    eps: f64,
) -> Result<f64, MetricError> {
    if u_closed.is_empty() || u_open.is_empty() {
        return Err(MetricError::Invalid(
            "both uncertainty lists must be non-empty".into(),
        ));
    }
    if bins == 0 {
        return Err(MetricError::Invalid("need at least one bin".into()));
    }
    let pooled_min = u_closed
        .iter()
        .chain(u_open)
        .fold(f64::INFINITY, |a, &b| a.min(b));
    let pooled_max = u_closed
        .iter()
        .chain(u_open)
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !pooled_min.is_finite() || !pooled_max.is_finite() {
        return Err(MetricError::Invalid("non-finite uncertainty".into()));
    }
    let range = pooled_max - pooled_min;
    let hist = |xs: &[f64]| -> Vec<f64> {
        let mut h = vec![0.0f64; bins];
        for &x in xs {
            let n = if range == 0.0 { 0.0 } else { (x - pooled_min) / range };
            let b = ((n * bins as f64) as usize).min(bins - 1);
            h[b] += 1.0;
        }
        let total: f64 = xs.len() as f64;
        // Probabilities, eps-smoothed, renormalized.
        let z = 1.0 + bins as f64 * eps;
        h.iter().map(|c| (c / total + eps) / z).collect()
    };
    let p = hist(u_closed);
    let q = hist(u_open);
    Ok(p.iter()
        .zip(&q)
        .map(|(&pi, &qi)| pi * (pi / qi).ln() + qi * (qi / pi).ln())
        .sum())
}

// ---------------------------------------------------------------------------
// Centered kernel alignment
// ---------------------------------------------------------------------------

/// Linear CKA between two feature matrices with matching rows:
/// `||Yc' Xc||_F^2 / (||Xc' Xc||_F * ||Yc' Yc||_F)` with column-centered
/// Xc, Yc. Invariant to orthogonal transforms and isotropic scaling.
pub fn cka(x: &Array2<f64>, y: &Array2<f64>) -> Result<f64, MetricError> {
    let n = x.nrows();
    if n != y.nrows() {
        return Err(MetricError::Invalid(format!(
            "row counts differ: {n} vs {}",
            y.nrows()
        )));
    }
    if n < 2 {
        return Err(MetricError::Invalid("need at least two rows".into()));
    }
    let center = |m: &Array2<f64>| -> Array2<f64> {
        let means = m.mean_axis(ndarray::Axis(0)).unwrap();
        m - &means.insert_axis(ndarray::Axis(0))
    };
    let xc = center(x);
    let yc = center(y);
    let fro = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let num = {
        let cross = yc.t().dot(&xc);
        cross.iter().map(|v| v * v).sum::<f64>()
    };
    let dx = fro(&xc.t().dot(&xc));
    let dy = fro(&yc.t().dot(&yc));
    if dx == 0.0 || dy == 0.0 {
        return Err(MetricError::Undefined(
            "zero-variance features after centering".into(),
        ));
    }
    Ok(num / (dx * dy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn mixed(knowns: &[f64], unknowns: &[f64]) -> Vec<ScoredSample> {
        knowns
            .iter()
            .map(|&s| ScoredSample::new(s, true))
            .chain(unknowns.iter().map(|&s| ScoredSample::new(s, false)))
            .collect()
    }

    fn random_samples(seed: u64, n: usize) -> Vec<ScoredSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                // Quantized scores force plenty of ties.
                let score = (rng.gen::<f64>() * 8.0).round() / 8.0;
                ScoredSample::new(score, rng.gen::<bool>())
            })
            .collect()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&mixed(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 1.0);
        assert_eq!(auc(&mixed(&[0.5], &[0.5])).unwrap(), 0.5);
    }

    #[test]
    fn auc_matches_pairwise_brute_force() {
        for seed in 0..4 {
            let samples = random_samples(seed, 50);
            if split_scores(&samples).is_err() {
                continue;
            }
            let fast = auc(&samples).unwrap();
            // O(n^2) oracle straight from the Mann-Whitney definition.
            let mut wins = 0.0;
            let mut total = 0.0;
            for k in samples.iter().filter(|s| s.is_known) {
                for u in samples.iter().filter(|s| !s.is_known) {
                    total += 1.0;
                    if k.score > u.score {
                        wins += 1.0;
                    } else if k.score == u.score {
                        wins += 0.5;
                    }
                }
            }
            assert!((fast - wins / total).abs() < 1e-9, "seed {seed}");
        }
    }

    #[test]
    fn auc_needs_both_classes() {
        let only_known = mixed(&[0.5, 0.7], &[]);
        assert!(matches!(auc(&only_known), Err(MetricError::Undefined(_))));
        let nan = mixed(&[f64::NAN], &[0.1]);
        assert!(matches!(auc(&nan), Err(MetricError::Invalid(_))));
    }

    #[test]
    fn far_examples() {
        assert_eq!(far_at_tpr(&mixed(&[0.9, 0.8], &[0.1]), 0.95).unwrap(), 0.0);
        let tied = mixed(&[0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(far_at_tpr(&tied, 0.95).unwrap(), 1.0);
    }

    #[test]
    fn tpr_examples() {
        assert_eq!(tpr_at_far(&mixed(&[0.9, 0.8], &[0.1, 0.2]), 0.10).unwrap(), 1.0);
        assert_eq!(tpr_at_far(&mixed(&[0.4], &[0.6]), 0.10).unwrap(), 0.0);
    }

    /// Threshold-sweep oracle: evaluate (TPR, FAR) at every observed score.
    fn sweep(samples: &[ScoredSample]) -> Vec<(f64, f64, f64)> {
        let mut taus: Vec<f64> = samples.iter().map(|s| s.score).collect();
        taus.sort_by(f64::total_cmp);
        taus.dedup();
        let nk = samples.iter().filter(|s| s.is_known).count() as f64;
        let nu = samples.len() as f64 - nk;
        taus.into_iter()
            .map(|tau| {
                let tpr = samples
                    .iter()
                    .filter(|s| s.is_known && s.score >= tau)
                    .count() as f64
                    / nk;
                let far = samples
                    .iter()
                    .filter(|s| !s.is_known && s.score >= tau)
                    .count() as f64
                    / nu;
                (tau, tpr, far)
            })
            .collect()
    }

    #[test]
    fn far_matches_threshold_sweep() {
        for seed in 10..14 {
            let samples = random_samples(seed, 40);
            if split_scores(&samples).is_err() {
                continue;
            }
            for target in [0.5, 0.8, 0.95, 1.0] {
                // Maximum tau with TPR >= target, then its FAR.
                let best = sweep(&samples)
                    .into_iter()
                    .filter(|&(_, tpr, _)| tpr >= target)
                    .max_by(|a, b| a.0.total_cmp(&b.0))
                    .unwrap();
                let got = far_at_tpr(&samples, target).unwrap();
                assert_eq!(got, best.2, "seed {seed} target {target}");
            }
        }
    }

    #[test]
    fn tpr_matches_threshold_sweep() {
        for seed in 20..24 {
            let samples = random_samples(seed, 40);
            if split_scores(&samples).is_err() {
                continue;
            }
            for target in [0.0, 0.1, 0.3, 0.9] {
                // Minimum observed tau with FAR <= target, else reject-all.
                let got = tpr_at_far(&samples, target).unwrap();
                let want = sweep(&samples)
                    .into_iter()
                    .filter(|&(_, _, far)| far <= target)
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .map(|(_, tpr, _)| tpr)
                    .unwrap_or(0.0);
                assert_eq!(got, want, "seed {seed} target {target}");
            }
        }
    }

    #[test]
    fn openness_examples() {
        assert!((openness(101, 51) - 0.1065).abs() < 5e-4);
        assert!((openness(101, 305) - 0.3688).abs() < 5e-4);
        assert_eq!(openness(7, 0), 0.0);
    }

    fn row(true_action: u32, uncertainty: f64, probs: Vec<f64>) -> PredictionRow {
        PredictionRow {
            clip_id: format!("clip-{true_action}-{uncertainty}"),
            true_action,
            uncertainty,
            probs,
            feature: vec![0.0],
            scene_feature: None,
        }
    }

    #[test]
    fn perfect_predictions_give_maf1_one() {
        // 2 known classes, 2 unknown classes, all decided correctly.
        let rows = vec![
            row(0, 0.1, vec![0.9, 0.1]),
            row(1, 0.1, vec![0.2, 0.8]),
            row(2, 0.9, vec![0.6, 0.4]),
            row(3, 0.9, vec![0.5, 0.5]),
        ];
        let (mean, var) = open_maf1(&rows, 2, 0.5, &OpenMaF1Config::default()).unwrap();
        assert_eq!(mean, 1.0);
        assert_eq!(var, 0.0);
    }

    #[test]
    fn maf1_matches_hand_confusion_oracle() {
        // Single openness point (ratio 1.0, one resample) so the weighting
        // drops out; macro F1 checked against a hand-built confusion matrix.
        // Truth/pred in the 3-way space {0, 1, unknown=2}:
        //   (0 -> 0), (0 -> 1), (1 -> 1), (2 -> 2 via high u), (2 -> 0).
        let rows = vec![
            row(0, 0.1, vec![0.9, 0.1]),
            row(0, 0.1, vec![0.1, 0.9]),
            row(1, 0.1, vec![0.3, 0.7]),
            row(5, 0.9, vec![0.5, 0.5]),
            row(5, 0.2, vec![0.8, 0.2]),
        ];
        let cfg = OpenMaF1Config {
            ratios: vec![1.0],
            resamples: 1,
            seed: 3,
        };
        let (mean, var) = open_maf1(&rows, 2, 0.5, &cfg).unwrap();
        // Class 0: TP=1, FN=1, FP=1 -> F1 = 2/(2+1+1) = 0.5
        // Class 1: TP=1, FN=0, FP=1 -> F1 = 2/3
        // Unknown: TP=1, FN=1, FP=0 -> F1 = 2/3
        let want = (0.5 + 2.0 / 3.0 + 2.0 / 3.0) / 3.0;
        assert!((mean - want).abs() < 1e-12, "{mean} vs {want}");
        assert_eq!(var, 0.0);
    }

    #[test]
    fn maf1_requires_unknowns_and_is_deterministic() {
        let rows = vec![row(0, 0.1, vec![0.9, 0.1]), row(1, 0.2, vec![0.1, 0.9])];
        assert!(matches!(
            open_maf1(&rows, 2, 0.5, &OpenMaF1Config::default()),
            Err(MetricError::Undefined(_))
        ));

        let mut many = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..40 {
            let a = i % 6;
            many.push(row(a, rng.gen(), vec![rng.gen(), rng.gen(), rng.gen()]));
        }
        let cfg = OpenMaF1Config::default();
        let first = open_maf1(&many, 3, 0.5, &cfg).unwrap();
        let second = open_maf1(&many, 3, 0.5, &cfg).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn sym_kld_examples() {
        let a: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        assert!(sym_kld(&a, &a, 50, 1e-8).unwrap().abs() < 1e-12);
        let b: Vec<f64> = (0..20).map(|i| (i as f64 / 19.0).powi(2)).collect();
        let ab = sym_kld(&a, &b, 50, 1e-8).unwrap();
        let ba = sym_kld(&b, &a, 50, 1e-8).unwrap();
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn sym_kld_matches_hand_histogram_oracle() {
        let a = [0.05, 0.1, 0.3, 0.3, 0.9, 0.2, 0.71, 0.66, 0.0, 1.4];
        let b = [0.5, 0.55, 0.62, 0.3, 1.1, 0.8, 0.77, 0.9, 1.0, 1.2];
        let bins = 10usize;
        let eps = 1e-8;
        // Oracle: pooled min-max, explicit bin walk, direct sum.
        let lo = 0.0f64;
        let hi = 1.4f64;
        let hist = |xs: &[f64]| {
            let mut h = vec![0.0f64; bins];
            for &x in xs {
                let idx = ((((x - lo) / (hi - lo)) * bins as f64) as usize).min(bins - 1);
                h[idx] += 1.0;
            }
            let z = 1.0 + bins as f64 * eps;
            h.into_iter().map(|c| (c / xs.len() as f64 + eps) / z).collect::<Vec<_>>()
        };
        let (p, q) = (hist(&a), hist(&b));
        let want: f64 = p
            .iter()
            .zip(&q)
            .map(|(&pi, &qi)| pi * (pi / qi).ln() + qi * (qi / pi).ln())
            .sum();
        let got = sym_kld(&a, &b, bins, eps).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn sym_kld_rejects_empty_input() {
        assert!(sym_kld(&[], &[0.5], 50, 1e-8).is_err());
        assert!(sym_kld(&[0.5], &[], 50, 1e-8).is_err());
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn cka_self_similarity_and_scaling() {
        let x = random_matrix(8, 3, 1);
        assert!((cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let scaled = x.mapv(|v| v * -3.7);
        assert!((cka(&x, &scaled).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cka_is_invariant_to_orthogonal_transforms() {
        let x = random_matrix(8, 3, 2);
        let y = random_matrix(8, 3, 3);
        let base = cka(&x, &y).unwrap();
        // Rotate y's first two columns by an arbitrary angle (orthogonal Q).
        let theta: f64 = 0.83;
        let q = ndarray::arr2(&[
            [theta.cos(), -theta.sin(), 0.0],
            [theta.sin(), theta.cos(), 0.0],
            [0.0, 0.0, 1.0],
        ]);
        let rotated = y.dot(&q);
        assert!((cka(&x, &rotated).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn cka_matches_gram_hsic_oracle() {
        let x = random_matrix(8, 3, 4);
        let y = random_matrix(8, 4, 5);
        let got = cka(&x, &y).unwrap();
        // Oracle: HSIC form on uncentered Gram matrices, centered with H.
        let n = 8usize;
        let h = Array2::from_shape_fn((n, n), |(i, j)| {
            (if i == j { 1.0 } else { 0.0 }) - 1.0 / n as f64
        });
        let k = x.dot(&x.t());
        let l = y.dot(&y.t());
        let hsic = |k: &Array2<f64>, l: &Array2<f64>| {
            let kh = h.dot(k).dot(&h);
            (kh * l).sum()
        };
        let want = hsic(&k, &l) / (hsic(&k, &k).sqrt() * hsic(&l, &l).sqrt());
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn cka_rejects_degenerate_input() {
        let x = Array2::from_elem((4, 2), 3.0); // constant: zero variance
        let y = random_matrix(4, 2, 6);
        assert!(matches!(cka(&x, &y), Err(MetricError::Undefined(_))));
        assert!(cka(&random_matrix(1, 2, 7), &random_matrix(1, 2, 8)).is_err());
    }

    proptest! {
        #[test]
        fn auc_is_invariant_under_monotone_transforms(
            scores in proptest::collection::vec(0.0f64..1.0, 6..30),
            flags in proptest::collection::vec(any::<bool>(), 6..30),
        ) {
            let samples: Vec<ScoredSample> = scores
                .iter()
                .zip(&flags)
                .map(|(&s, &k)| ScoredSample::new((s * 4.0).round() / 4.0, k))
                .collect();
            prop_assume!(split_scores(&samples).is_ok());
            let base = auc(&samples).unwrap();
            let transformed: Vec<ScoredSample> = samples
                .iter()
                .map(|s| ScoredSample::new((s.score * 3.0 + 1.0).exp(), s.is_known))
                .collect();
            prop_assert!((auc(&transformed).unwrap() - base).abs() < 1e-12);
            // Negating scores flips the ranking: AUC + AUC' = 1.
            let negated: Vec<ScoredSample> = samples
                .iter()
                .map(|s| ScoredSample::new(-s.score, s.is_known))
                .collect();
            prop_assert!((base + auc(&negated).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn far_and_tpr_are_monotone_in_their_targets(
            scores in proptest::collection::vec(0.0f64..1.0, 8..30),
            flags in proptest::collection::vec(any::<bool>(), 8..30),
        ) {
            let samples: Vec<ScoredSample> = scores
                .iter()
                .zip(&flags)
                .map(|(&s, &k)| ScoredSample::new((s * 4.0).round() / 4.0, k))
                .collect();
            prop_assume!(split_scores(&samples).is_ok());
            let mut prev_far = -1.0;
            for t in [0.2, 0.5, 0.8, 0.95, 1.0] {
                let far = far_at_tpr(&samples, t).unwrap();
                prop_assert!(far >= prev_far - 1e-12, "FAR must grow with TPR target");
                prev_far = far;
            }
            let mut prev_tpr = -1.0;
            for t in [0.0, 0.1, 0.4, 0.7, 1.0] {
                let tpr = tpr_at_far(&samples, t).unwrap();
                prop_assert!(tpr >= prev_tpr - 1e-12, "TPR must grow with FAR target");
                prev_tpr = tpr;
            }
        }

        #[test]
        fn openness_grows_with_unknown_classes(c_known in 1usize..50, c_unknown in 0usize..100) {
            let a = openness(c_known, c_unknown);
            let b = openness(c_known, c_unknown + 1);
            prop_assert!(b > a);
            prop_assert!((0.0..1.0).contains(&a));
        }
    }
}
