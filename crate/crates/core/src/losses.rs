//! Training objectives: evidential classification, uncertainty-weighted
//! reconstruction, adversarial scene classification, uncertainty-guided
//! scene suppression, and their weighted total.
//!
//! Each loss comes with a `*_grad` variant returning the analytic gradient
//! with respect to the tensor that is trainable on that path. The guidance
//! signals (the uncertainty maps `U'` and `norm(U)`) are constants by design:
//! letting gradient flow through them would reward the evidential head for
//! inflating uncertainty instead of explaining the video.

use ndarray::{Array1, Array3, Array4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netcore::upsample::{minmax_backward, minmax_normalize};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
}

/// Weights of the auxiliary terms in the total objective. The evidential
/// term always has weight 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_recon: f64,
    pub w_s_cls: f64,
    pub w_s_guide: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_recon: 1.0,
            w_s_cls: 1.0,
            w_s_guide: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("w_recon", self.w_recon),
            ("w_s_cls", self.w_s_cls),
            ("w_s_guide", self.w_s_guide),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be a non-negative finite number, got {v}"));
            }
        }
        Ok(())
    }
}

/// The four per-batch loss values feeding the total.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub edl: f64,
    pub recon: f64,
    pub s_cls: f64,
    pub s_guide: f64,
}

fn assert_one_hot(y: &Array1<f64>) -> usize {
    let mut hot = None;
    for (i, &v) in y.iter().enumerate() {
        if v == 1.0 {
            assert!(hot.is_none(), "label vector has more than one 1");
            hot = Some(i);
        } else {
            assert!(v == 0.0, "label vector entry {i} is {v}, not 0 or 1");
        }
    }
    hot.expect("label vector has no 1")
}

// ---------------------------------------------------------------------------
// Evidential classification loss
// ---------------------------------------------------------------------------

/// Per-sample evidential loss: with alpha = e + 1 and S = sum(alpha),
/// `sum_i y_i (ln S - ln alpha_i)`. Zero evidence gives ln C; the loss
/// approaches 0 only as the true-class evidence grows without bound.
pub fn edl_loss(e: &Array1<f64>, y: &Array1<f64>) -> f64 {
    assert_eq!(e.len(), y.len(), "evidence and label dims differ");
    assert!(e.iter().all(|&v| v >= 0.0), "evidence must be non-negative");
    let label = assert_one_hot(y);
    let s: f64 = e.sum() + e.len() as f64;
    s.ln() - (e[label] + 1.0).ln()
}

/// Loss plus gradient with respect to the evidence vector:
/// `dL/de_i = 1/S - y_i / alpha_i`.
pub fn edl_loss_grad(e: &Array1<f64>, y: &Array1<f64>) -> (f64, Array1<f64>) {
    let loss = edl_loss(e, y);
    let s: f64 = e.sum() + e.len() as f64;
    let g = Array1::from_shape_fn(e.len(), |i| 1.0 / s - y[i] / (e[i] + 1.0));
    (loss, g)
}

// ---------------------------------------------------------------------------
// Uncertainty-weighted reconstruction loss
// ---------------------------------------------------------------------------

fn check_recon_dims(
    xbar: &Array4<f64>,
    xhat: &Array4<f64>,
    uprime: &Array3<f64>,
) -> Result<(), LossError> {
    if xbar.dim() != xhat.dim() {
        return Err(LossError::DimMismatch(format!(
            "background {:?} vs reconstruction {:?}",
            xbar.dim(),
            xhat.dim()
        )));
    }
    let (h, w, t, _) = xbar.dim();
    if uprime.dim() != (h, w, t) {
        return Err(LossError::DimMismatch(format!(
            "uncertainty weights {:?} vs clip {:?}",
            uprime.dim(),
            xbar.dim()
        )));
    }
    Ok(())
}

/// Weighted L1 between the estimated background and the reconstruction:
/// `(1/(HWTD)) * sum u'_{ijt} |xbar - xhat|`. The weights `U'` broadcast
/// over the channel axis.
pub fn recon_loss(
    xbar: &Array4<f64>,
    xhat: &Array4<f64>,
    uprime: &Array3<f64>,
) -> Result<f64, LossError> {
    check_recon_dims(xbar, xhat, uprime)?;
    let (h, w, t, d) = xbar.dim();
    let n = (h * w * t * d) as f64;
    let up = uprime.as_slice().expect("standard layout");
    let mut acc = 0.0;
    for (idx, (&a, &b)) in xbar.iter().zip(xhat.iter()).enumerate() {
        acc += up[idx / d] * (a - b).abs();
    }
    Ok(acc / n)
}

/// Loss plus gradient with respect to the reconstruction only; the
/// background and the weights are constants.
pub fn recon_loss_grad(
    xbar: &Array4<f64>,
    xhat: &Array4<f64>,
    uprime: &Array3<f64>,
) -> Result<(f64, Array4<f64>), LossError> {
    check_recon_dims(xbar, xhat, uprime)?;
    let (h, w, t, d) = xbar.dim();
    let n = (h * w * t * d) as f64;
    let up = uprime.as_slice().expect("standard layout");
    let mut acc = 0.0;
    let mut g = Array4::zeros(xbar.dim());
    let gs = g.as_slice_mut().unwrap();
    for (idx, (&a, &b)) in xbar.iter().zip(xhat.iter()).enumerate() {
        let u = up[idx / d];
        acc += u * (a - b).abs();
        // d|a-b|/db = -sign(a-b); subgradient 0 at the kink.
        gs[idx] = -u * (a - b).signum() / n;
        if a == b {
            gs[idx] = 0.0;
        }
    }
    Ok((acc / n, g))
}

// ---------------------------------------------------------------------------
// Adversarial scene classification loss
// ---------------------------------------------------------------------------

/// Scene cross-entropy with the 1/N prefactor kept as published:
/// `-(1/N) * sum_i y_i ln softmax_i(logits)`.
pub fn scene_cls_loss(logits: &Array1<f64>, y: &Array1<f64>) -> f64 {
    assert_eq!(logits.len(), y.len(), "logits and label dims differ");
    let label = assert_one_hot(y);
    let n = logits.len() as f64;
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + logits.mapv(|v| (v - max).exp()).sum().ln();
    (lse - logits[label]) / n
}

/// Loss plus gradient with respect to the logits:
/// `(softmax - y) / N`.
pub fn scene_cls_loss_grad(logits: &Array1<f64>, y: &Array1<f64>) -> (f64, Array1<f64>) {
    let loss = scene_cls_loss(logits, y);
    let n = logits.len() as f64;
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps = logits.mapv(|v| (v - max).exp());
    let z = exps.sum();
    let g = Array1::from_shape_fn(logits.len(), |i| (exps[i] / z - y[i]) / n);
    (loss, g)
}

// ---------------------------------------------------------------------------
// Uncertainty-guided scene suppression loss
// ---------------------------------------------------------------------------

fn check_guide_dims(u: &Array3<f64>, m: &Array3<f64>) -> Result<(), LossError> {
    if u.dim() != m.dim() {
        return Err(LossError::DimMismatch(format!(
            "uncertainty map {:?} vs scene map {:?}",
            u.dim(),
            m.dim()
        )));
    }
    Ok(())
}

/// L1 distance between the complement of the normalized uncertainty map and
/// the normalized scene activation map:
/// `(1/(H'W'T')) * sum |1 - norm(U) - norm(M)|`. Always in [0, 1] because
/// both normalized maps live in [0, 1].
pub fn guide_loss(u: &Array3<f64>, m: &Array3<f64>) -> Result<f64, LossError> {
    check_guide_dims(u, m)?;
    let (nu, _) = minmax_normalize(u.as_slice().expect("standard layout"));
    let (nm, _) = minmax_normalize(m.as_slice().expect("standard layout"));
    let k = nu.len() as f64;
    Ok(nu
        .iter()
        .zip(&nm)
        .map(|(a, b)| (1.0 - a - b).abs())
        .sum::<f64>()
        / k)
}

/// Loss plus gradient with respect to the scene map M. The normalized
/// uncertainty target is a constant; the gradient runs through the exact
/// min-max backward of norm(M), including its argmin/argmax terms.
pub fn guide_loss_grad(u: &Array3<f64>, m: &Array3<f64>) -> Result<(f64, Array3<f64>), LossError> {
    check_guide_dims(u, m)?;
    let (nu, _) = minmax_normalize(u.as_slice().expect("standard layout"));
    let (nm, info) = minmax_normalize(m.as_slice().expect("standard layout"));
    let k = nm.len() as f64;
    let mut loss = 0.0;
    let mut g_nm = vec![0.0f64; nm.len()];
    for i in 0..nm.len() {
        let r = 1.0 - nu[i] - nm[i];
        loss += r.abs();
        // d|r|/d(nm_i) = -sign(r); subgradient 0 at the kink.
        g_nm[i] = if r == 0.0 { 0.0 } else { -r.signum() / k };
    }
    let g_flat = minmax_backward(&g_nm, &nm, &info);
    let g = Array3::from_shape_vec(m.dim(), g_flat).unwrap();
    Ok((loss / k, g))
}

// ---------------------------------------------------------------------------
// Total
// ---------------------------------------------------------------------------

/// `L = L_EDL + w_recon * L_recon + w_s_cls * L_s_cls + w_s_guide * L_s_guide`.
pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> f64 {
    parts.edl
        + weights.w_recon * parts.recon
        + weights.w_s_cls * parts.s_cls
        + weights.w_s_guide * parts.s_guide
}
