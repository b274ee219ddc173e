//! Deterministic training loop and inference dumps.
//!
//! One optimizer (SGD with momentum), one schedule (step decay), five arms:
//!
//! * `softmax` — the evidential affine trained as a plain cross-entropy
//!   classifier; uncertainty at inference is `1 - max p`.
//! * `edl` — evidential loss only.
//! * `edl+adrecon` — plus background reconstruction through a gradient
//!   reversal: the decoder learns to rebuild the static scene, the backbone
//!   learns to starve it of scene evidence.
//! * `edl+adascls` — plus adversarial scene classification and its
//!   uncertainty-guided per-location variant.
//! * `full` — all of the above.
//!
//! Training is deterministic for a fixed seed: initialization, batch order,
//! and gradient reduction order are all derived from named seed streams, and
//! per-sample gradients computed in parallel are reduced in sample order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::background::{tmf_background, BackgroundError, TmfConfig};
use crate::dataio::{
    read_tensor_f32, ClipTensor, DataError, DatasetManifest, PredictionDump, PredictionRow, Split,
};
use crate::losses::{
    edl_loss_grad, guide_loss_grad, recon_loss_grad, scene_cls_loss_grad, total_loss, LossError,
    LossParts, LossWeights,
};
use crate::netcore::evidential::{pooled_evidence, uncertainty_map};
use crate::netcore::layers::{grl_backward, mean_pool_backward};
use crate::netcore::model::{
    backbone_backward, backbone_forward, decoder_backward, decoder_forward, edl_affine_backward,
    edl_map_forward,
    edl_pooled_backward, edl_pooled_forward, scene_map_backward, scene_map_forward,
    scene_pooled_backward, scene_pooled_forward, Gradients, ModelConfig, ModelParams,
};
use crate::netcore::upsample::normalize_upsample;
use crate::netcore::NetError;
use crate::seeding;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Background(#[from] BackgroundError),
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error(
        "loss became non-finite at step {step}; last finite losses: edl {edl:.6} recon {recon:.6} \
         s_cls {s_cls:.6} s_guide {s_guide:.6}",
        edl = last.edl, recon = last.recon, s_cls = last.s_cls, s_guide = last.s_guide
    )]
    NanLoss { step: usize, last: LossParts },
}

/// Which pieces of the objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "softmax")]
    Softmax,
    #[serde(rename = "edl")]
    Edl,
    #[serde(rename = "edl+adrecon")]
    EdlAdrecon,
    #[serde(rename = "edl+adascls")]
    EdlAdascls,
    #[serde(rename = "full")]
    Full,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::Softmax, Arm::Edl, Arm::EdlAdrecon, Arm::EdlAdascls, Arm::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Softmax => "softmax",
            Arm::Edl => "edl",
            Arm::EdlAdrecon => "edl+adrecon",
            Arm::EdlAdascls => "edl+adascls",
            Arm::Full => "full",
        }
    }

    pub fn uses_recon(self) -> bool {
        matches!(self, Arm::EdlAdrecon | Arm::Full)
    }

    pub fn uses_scene(self) -> bool {
        matches!(self, Arm::EdlAdascls | Arm::Full)
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Arm::ALL.iter().map(|a| a.as_str()).collect();
                format!("unknown arm {s:?}; expected one of {}", names.join(", "))
            })
    }
}

fn default_epochs() -> usize {
    30
}
fn default_lr() -> f64 {
    0.001
}
fn default_lr_decay() -> f64 {
    0.1
}
fn default_lr_step() -> usize {
    20
}
fn default_momentum() -> f64 {
    0.9
}
fn default_batch_size() -> usize {
    8
}
fn default_lambda_d() -> f64 {
    1.0
}
fn default_lambda_s() -> f64 {
    1.0
}
fn default_arm() -> Arm {
    Arm::Full
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Learning-rate multiplier applied every `lr_step` epochs.
    pub lr_decay: f64,
    pub lr_step: usize,
    pub momentum: f64,
    pub batch_size: usize,
    /// Gradient-reversal factor of the decoder branch.
    pub lambda_d: f64,
    /// Gradient-reversal factor of the scene branch. The default of 1 was
    /// grid-searched on the synthetic benchmark: much larger factors let the
    /// backbone out-run the scene head through the reversal, inflate the
    /// feature scale, and blow the scene loss up to non-finite values within
    /// a few epochs at this model size.
    pub lambda_s: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub arm: Arm,
    /// Temporal median filter window; absent means whole-clip median.
    pub tmf_window: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: default_epochs(),
            lr: default_lr(),
            lr_decay: default_lr_decay(),
            lr_step: default_lr_step(),
            momentum: default_momentum(),
            batch_size: default_batch_size(),
            lambda_d: default_lambda_d(),
            lambda_s: default_lambda_s(),
            weights: LossWeights::default(),
            seed: 0,
            arm: default_arm(),
            tmf_window: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 {
            return Err("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if self.lr_step == 0 {
            return Err("lr_step must be at least 1".into());
        }
        if self.lambda_d < 0.0 || self.lambda_s < 0.0 {
            return Err("reversal factors must be non-negative".into());
        }
        self.weights.validate()
    }

    /// Step-decayed learning rate: `lr * lr_decay^floor(epoch / lr_step)`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_step) as i32)
    }
}

/// One loaded training example. The static background is precomputed once
/// per clip (it depends on pixels, not parameters).
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub clip: Array4<f64>,
    pub background: Array4<f64>,
    pub action: usize,
    pub scene: usize,
}

#[derive(Debug, Clone)]
pub struct TrainSet {
    pub samples: Vec<TrainSample>,
    pub c_known: usize,
    pub n_scenes: usize,
}

fn to_f64(clip: &ClipTensor) -> Array4<f64> {
    clip.data.mapv(|v| v as f64)
}

/// Load the train split and precompute backgrounds.
pub fn load_train_set(
    manifest: &DatasetManifest,
    dir: &Path,
    cfg: &TrainConfig,
) -> Result<TrainSet, TrainError> {
    let tmf = match cfg.tmf_window {
        Some(w) => TmfConfig::with_window(w),
        None => TmfConfig::default(),
    };
    let mut samples = Vec::new();
    for rec in manifest.split(Split::Train) {
        let clip = ClipTensor::load(&dir.join(&rec.path))?;
        let background = to_f64(&tmf_background(&clip, &tmf)?);
        samples.push(TrainSample {
            clip: to_f64(&clip),
            background,
            action: rec.action_label as usize,
            scene: rec.scene_label as usize,
        });
    }
    if samples.is_empty() {
        return Err(TrainError::Invalid("manifest has no train clips".into()));
    }
    Ok(TrainSet {
        samples,
        c_known: manifest.c_known as usize,
        n_scenes: manifest.n_scenes as usize,
    })
}

/// Mean losses of one epoch plus the learning rate it ran at.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub parts: LossParts,
    pub total: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {:>3}  lr {:.6}  edl {:.5}  recon {:.5}  s_cls {:.5}  s_guide {:.5}  total {:.5}",
            self.epoch, self.lr, self.parts.edl, self.parts.recon, self.parts.s_cls,
            self.parts.s_guide, self.total
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

fn onehot(n: usize, i: usize) -> Array1<f64> {
    let mut y = Array1::zeros(n);
    y[i] = 1.0;
    y
}

/// Loss parts and parameter gradients of a single sample under the given arm.
///
/// Gradient topology:
/// * evidential loss -> evidence head -> pooled feature -> backbone;
/// * reconstruction -> decoder -> reversal(lambda_d) -> feature map;
/// * scene CE -> scene head -> reversal(lambda_s) -> pooled feature;
/// * guide -> norm(M) -> per-location scene head -> reversal(lambda_s) ->
///   feature map.
///
/// The uncertainty maps U' (reconstruction weights) and norm(U) (guide
/// target) are detached constants.
fn sample_gradients(
    params: &ModelParams,
    sample: &TrainSample,
    cfg: &TrainConfig,
    c_known: usize,
    n_scenes: usize,
) -> Result<(LossParts, Gradients), TrainError> {
    if sample.action >= c_known {
        return Err(TrainError::Invalid(format!(
            "train sample has action label {} but only {c_known} known classes",
            sample.action
        )));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut parts = LossParts::default();

    let (fm, btape) = backbone_forward(params, &sample.clip)?;
    let map_dims = (fm.map.dim().0, fm.map.dim().1, fm.map.dim().2);
    let y = onehot(c_known, sample.action);

    // Classification path (pooled).
    let mut g_pooled: Array1<f64>;
    match cfg.arm {
        Arm::Softmax => {
            let (_, z) = edl_pooled_forward(params, &fm.pooled);
            let (ce, g_z) = scene_cls_loss_grad(&z, &y);
            // Conventional cross-entropy, not the 1/N-scaled scene variant.
            let n = z.len() as f64;
            parts.edl = ce * n;
            g_pooled = edl_affine_backward(params, &fm.pooled, &g_z.mapv(|g| g * n), &mut grads);
        }
        _ => {
            let (e, ez) = edl_pooled_forward(params, &fm.pooled);
            let (l_edl, g_e) = edl_loss_grad(&e, &y);
            parts.edl = l_edl;
            g_pooled = edl_pooled_backward(params, &fm.pooled, &ez, &g_e, &mut grads);
        }
    }

    // The uncertainty map is shared guidance for both auxiliary branches.
    let u_map: Option<Array3<f64>> = if cfg.arm.uses_recon() || cfg.arm.uses_scene() {
        let e_map = edl_map_forward(params, &fm.map);
        Some(uncertainty_map(&e_map))
    } else {
        None
    };

    let mut g_map = Array4::zeros(fm.map.dim());

    if cfg.arm.uses_recon() {
        let (h, w, t, _) = sample.clip.dim();
        let u_prime = normalize_upsample(u_map.as_ref().unwrap(), (h, w, t));
        let (xhat, dtape) = decoder_forward(params, &fm.map);
        let (l_recon, g_xhat) = recon_loss_grad(&sample.background, &xhat, &u_prime)?;
        parts.recon = l_recon;
        let g_dec_in =
            decoder_backward(params, &dtape, &g_xhat.mapv(|g| g * cfg.weights.w_recon), &mut grads);
        g_map += &grl_backward(&g_dec_in, cfg.lambda_d);
    }

    if cfg.arm.uses_scene() {
        if sample.scene >= n_scenes {
            return Err(TrainError::Invalid(format!(
                "train sample has scene label {} but only {n_scenes} scenes",
                sample.scene
            )));
        }
        let y_s = onehot(n_scenes, sample.scene);
        let (logits, stape) = scene_pooled_forward(params, &fm.pooled);
        let (l_cls, g_logits) = scene_cls_loss_grad(&logits, &y_s);
        parts.s_cls = l_cls;
        let g_f_scene = scene_pooled_backward(
            params,
            &fm.pooled,
            &stape,
            &g_logits.mapv(|g| g * cfg.weights.w_s_cls),
            &mut grads,
        );
        g_pooled += &grl_backward(&g_f_scene, cfg.lambda_s);

        let (m, mtape) = scene_map_forward(params, &fm.map, sample.scene)?;
        let (l_guide, g_m) = guide_loss_grad(u_map.as_ref().unwrap(), &m)?;
        parts.s_guide = l_guide;
        let g_map_scene = scene_map_backward(
            params,
            &fm.map,
            &mtape,
            sample.scene,
            &g_m.mapv(|g| g * cfg.weights.w_s_guide),
            &mut grads,
        );
        g_map += &grl_backward(&g_map_scene, cfg.lambda_s);
    }

    g_map += &mean_pool_backward(&g_pooled, map_dims);
    backbone_backward(params, &btape, &g_map, &mut grads);
    Ok((parts, grads))
}

/// Mean loss parts and mean parameter gradients over a batch. Samples are
/// evaluated in parallel; the reduction runs in sample order so results are
/// independent of thread scheduling.
pub fn compute_batch(
    params: &ModelParams,
    batch: &[&TrainSample],
    cfg: &TrainConfig,
    c_known: usize,
    n_scenes: usize,
) -> Result<(LossParts, Gradients), TrainError> {
    assert!(!batch.is_empty());
    let results: Vec<Result<(LossParts, Gradients), TrainError>> = batch
        .par_iter()
        .map(|s| sample_gradients(params, s, cfg, c_known, n_scenes))
        .collect();
    let mut total_parts = LossParts::default();
    let mut total_grads = Gradients::zeros_like(params);
    for r in results {
        let (parts, grads) = r?;
        total_parts.edl += parts.edl;
        total_parts.recon += parts.recon;
        total_parts.s_cls += parts.s_cls;
        total_parts.s_guide += parts.s_guide;
        total_grads.add_assign(&grads);
    }
    let scale = 1.0 / batch.len() as f64;
    total_parts.edl *= scale;
    total_parts.recon *= scale;
    total_parts.s_cls *= scale;
    total_parts.s_guide *= scale;
    total_grads.scale(scale);
    Ok((total_parts, total_grads))
}

fn sgd_step(params: &mut ModelParams, grads: &Gradients, velocity: &mut Gradients, lr: f64, momentum: f64) {
    let g = grads.tensors();
    let mut v = velocity.tensors_mut();
    let mut p = params.tensors_mut();
    for i in 0..g.len() {
        let vi = &mut v[i];
        vi.zip_mut_with(&g[i], |vv, &gv| *vv = momentum * *vv + gv);
        p[i].1.zip_mut_with(vi, |pv, &vv| *pv -= lr * vv);
    }
}

/// Run the full training loop. `on_epoch` fires after each epoch with the
/// mean losses (use it for streaming logs).
pub fn train(
    set: &TrainSet,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(TrainError::Invalid)?;
    let in_channels = set
        .samples
        .first()
        .map(|s| s.clip.dim().3)
        .ok_or_else(|| TrainError::Invalid("empty training set".into()))?;
    let mut params = ModelParams::init(
        model_cfg,
        in_channels,
        set.c_known,
        set.n_scenes,
        cfg.lambda_d,
        cfg.lambda_s,
        cfg.seed,
    );
    let mut velocity = Gradients::zeros_like(&params);
    let shuffle_seed = seeding::mix(cfg.seed, "shuffle");
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    let mut last_finite = LossParts::default();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        let mut order: Vec<usize> = (0..set.samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix_index(shuffle_seed, epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_parts = LossParts::default();
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &set.samples[i]).collect();
            let (parts, grads) = compute_batch(&params, &batch, cfg, set.c_known, set.n_scenes)?;
            let batch_total = total_loss(&parts, &cfg.weights);
            if !batch_total.is_finite() {
                return Err(TrainError::NanLoss {
                    step,
                    last: last_finite,
                });
            }
            last_finite = parts;
            sgd_step(&mut params, &grads, &mut velocity, lr, cfg.momentum);
            epoch_parts.edl += parts.edl;
            epoch_parts.recon += parts.recon;
            epoch_parts.s_cls += parts.s_cls;
            epoch_parts.s_guide += parts.s_guide;
            batches += 1;
            step += 1;
        }
        let scale = 1.0 / batches as f64;
        epoch_parts.edl *= scale;
        epoch_parts.recon *= scale;
        epoch_parts.s_cls *= scale;
        epoch_parts.s_guide *= scale;
        let entry = EpochLog {
            epoch,
            lr,
            parts: epoch_parts,
            total: total_loss(&epoch_parts, &cfg.weights),
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { params, log })
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// Run the model over one split and dump per-clip predictions. For
/// evidential arms `p = alpha/S` and `u = C/S`; the softmax baseline writes
/// `p = softmax(z)` and `u = 1 - max p` (clamped positive so downstream
/// uncertainty math stays finite).
pub fn infer(
    params: &ModelParams,
    manifest: &DatasetManifest,
    dir: &Path,
    split: Split,
    arm: Arm,
    config_hash: &str,
    seed: u64,
) -> Result<PredictionDump, TrainError> {
    let records: Vec<_> = manifest.split(split).collect();
    let rows: Vec<Result<PredictionRow, TrainError>> = records
        .par_iter()
        .map(|rec| {
            let clip = to_f64(&ClipTensor::load(&dir.join(&rec.path))?);
            let (fm, _) = backbone_forward(params, &clip)?;
            let (probs, uncertainty) = match arm {
                Arm::Softmax => {
                    let (_, z) = edl_pooled_forward(params, &fm.pooled);
                    let max = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let exps = z.mapv(|v| (v - max).exp());
                    let p = &exps / exps.sum();
                    let u = (1.0 - p.fold(f64::NEG_INFINITY, |a, &b| a.max(b))).max(1e-12);
                    (p.to_vec(), u)
                }
                _ => {
                    let (e, _) = edl_pooled_forward(params, &fm.pooled);
                    let ev = pooled_evidence(&e);
                    (ev.p.to_vec(), ev.u)
                }
            };
            let scene_feature = match &rec.scene_feature_path {
                Some(rel) => {
                    let (_, data) = read_tensor_f32(&dir.join(rel))?;
                    Some(data.into_iter().map(|v| v as f64).collect())
                }
                None => None,
            };
            Ok(PredictionRow {
                clip_id: rec.clip_id.clone(),
                true_action: rec.action_label,
                uncertainty,
                probs,
                feature: fm.pooled.to_vec(),
                scene_feature,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(PredictionDump {
        config_hash: config_hash.to_string(),
        seed,
        rows,
    })
}
