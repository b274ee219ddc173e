//! The trainable network.
//!
//! * Backbone: three 3D-conv blocks (kernel 3, padding 1, ReLU), strides
//!   (2,2,1), (2,2,2), (2,2,2) — a (H, W, T, 3) clip becomes a
//!   (H/8, W/8, T/4, D') feature map, mean-pooled into a feature vector.
//! * Evidential head: one affine map D' -> C plus ReLU rectification, applied
//!   to the pooled feature (video evidence) or per location (evidence map).
//! * Decoder: three transpose-conv blocks mirroring the backbone strides,
//!   ending linear so reconstructions are unbounded.
//! * Scene head: affine -> ReLU -> affine, shared between the pooled form
//!   (scene logits) and the per-location form (scene activation map).
//!
//! Forward passes return explicit tapes; the matching `*_backward` functions
//! consume them and accumulate parameter gradients. Gradient reversal is a
//! backward-only hook (`layers::grl_backward`) applied by the caller where a
//! head meets the backbone.

use ndarray::{Array1, Array2, Array3, Array4, Array5};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::*;
use super::NetError;
use crate::seeding;

pub const KERNEL: usize = 3;
pub const PAD: usize = 1;
/// Backbone strides per block in (H, W, T); total stride (8, 8, 4).
pub const CONV_STRIDES: [(usize, usize, usize); 3] = [(2, 2, 1), (2, 2, 2), (2, 2, 2)];
/// Decoder strides; mirrors the backbone so dims return to (H, W, T).
pub const DEC_STRIDES: [(usize, usize, usize); 3] = [(2, 2, 2), (2, 2, 2), (2, 2, 1)];
pub const DEC_OUT_PAD: [(usize, usize, usize); 3] = [(1, 1, 1), (1, 1, 1), (1, 1, 0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Channel widths of the three backbone blocks; the last is the feature
    /// dimensionality D'.
    pub widths: [usize; 3],
    pub scene_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            widths: [16, 32, 64],
            scene_hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv3dLayer {
    pub w: Array5<f64>,
    pub b: Array1<f64>,
    pub stride: (usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TConv3dLayer {
    pub w: Array5<f64>,
    pub b: Array1<f64>,
    pub stride: (usize, usize, usize),
    pub out_pad: (usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv: [Conv3dLayer; 3],
    pub edl: AffineLayer,
    pub dec: [TConv3dLayer; 3],
    pub scene1: AffineLayer,
    pub scene2: AffineLayer,
    /// Gradient-reversal factor between backbone and decoder.
    pub lambda_d: f64,
    /// Gradient-reversal factor between backbone and scene head.
    pub lambda_s: f64,
}

fn sample_normal(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn init_conv(seed: u64, label: &str, co: usize, ci: usize, stride: (usize, usize, usize)) -> Conv3dLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix(seed, label));
    let fan_in = (KERNEL * KERNEL * KERNEL * ci) as f64;
    let n = co * KERNEL * KERNEL * KERNEL * ci;
    let w = Array5::from_shape_vec(
        (co, KERNEL, KERNEL, KERNEL, ci),
        sample_normal(&mut rng, n, (2.0 / fan_in).sqrt()),
    )
    .unwrap();
    Conv3dLayer {
        w,
        b: Array1::zeros(co),
        stride,
    }
}

fn init_tconv(
    seed: u64,
    label: &str,
    ci: usize,
    co: usize,
    stride: (usize, usize, usize),
    out_pad: (usize, usize, usize),
) -> TConv3dLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix(seed, label));
    let fan_in = (KERNEL * KERNEL * KERNEL * ci) as f64;
    let n = ci * KERNEL * KERNEL * KERNEL * co;
    let w = Array5::from_shape_vec(
        (ci, KERNEL, KERNEL, KERNEL, co),
        sample_normal(&mut rng, n, (2.0 / fan_in).sqrt()),
    )
    .unwrap();
    TConv3dLayer {
        w,
        b: Array1::zeros(co),
        stride,
        out_pad,
    }
}

fn init_affine(seed: u64, label: &str, out: usize, inp: usize) -> AffineLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix(seed, label));
    let w = Array2::from_shape_vec(
        (out, inp),
        sample_normal(&mut rng, out * inp, (2.0 / inp as f64).sqrt()),
    )
    .unwrap();
    AffineLayer {
        w,
        b: Array1::zeros(out),
    }
}

impl ModelParams {
    /// He-style seeded initialization. Every component draws from its own
    /// named stream, so e.g. the backbone weights are identical across
    /// training arms that differ only in which heads they use.
    pub fn init(
        cfg: &ModelConfig,
        in_channels: usize,
        c_known: usize,
        n_scenes: usize,
        lambda_d: f64,
        lambda_s: f64,
        seed: u64,
    ) -> Self {
        let [w1, w2, w3] = cfg.widths;
        let conv = [
            init_conv(seed, "init/conv0", w1, in_channels, CONV_STRIDES[0]),
            init_conv(seed, "init/conv1", w2, w1, CONV_STRIDES[1]),
            init_conv(seed, "init/conv2", w3, w2, CONV_STRIDES[2]),
        ];
        let dec = [
            init_tconv(seed, "init/dec0", w3, w2, DEC_STRIDES[0], DEC_OUT_PAD[0]),
            init_tconv(seed, "init/dec1", w2, w1, DEC_STRIDES[1], DEC_OUT_PAD[1]),
            init_tconv(seed, "init/dec2", w1, in_channels, DEC_STRIDES[2], DEC_OUT_PAD[2]),
        ];
        let mut edl = init_affine(seed, "init/edl", c_known, w3);
        // Rectified evidence must not start at zero: a unit whose
        // pre-activation is non-positive for every input receives no
        // gradient and never recovers, and with zero bias the whole head
        // reliably collapses that way within a few epochs on this scale.
        // Starting at evidence 1 (alpha = 2 per class) keeps every unit
        // trainable while still beginning close to maximal uncertainty.
        edl.b.fill(1.0);
        ModelParams {
            conv,
            edl,
            dec,
            scene1: init_affine(seed, "init/scene1", cfg.scene_hidden, w3),
            scene2: init_affine(seed, "init/scene2", n_scenes, cfg.scene_hidden),
            lambda_d,
            lambda_s,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.conv[2].w.dim().0
    }

    pub fn n_classes(&self) -> usize {
        self.edl.w.dim().0
    }

    pub fn n_scenes(&self) -> usize {
        self.scene2.w.dim().0
    }

    /// All parameter tensors in a fixed order, for optimizers, checkpoints,
    /// and hashing.
    pub fn tensor_names() -> [&'static str; 18] {
        [
            "conv0.w", "conv0.b", "conv1.w", "conv1.b", "conv2.w", "conv2.b", "edl.w", "edl.b",
            "dec0.w", "dec0.b", "dec1.w", "dec1.b", "dec2.w", "dec2.b", "scene1.w", "scene1.b",
            "scene2.w", "scene2.b",
        ]
    }

    pub fn tensors(&self) -> Vec<(&'static str, ndarray::ArrayViewD<'_, f64>)> {
        let names = Self::tensor_names();
        let views: Vec<ndarray::ArrayViewD<'_, f64>> = vec![
            self.conv[0].w.view().into_dyn(),
            self.conv[0].b.view().into_dyn(),
            self.conv[1].w.view().into_dyn(),
            self.conv[1].b.view().into_dyn(),
            self.conv[2].w.view().into_dyn(),
            self.conv[2].b.view().into_dyn(),
            self.edl.w.view().into_dyn(),
            self.edl.b.view().into_dyn(),
            self.dec[0].w.view().into_dyn(),
            self.dec[0].b.view().into_dyn(),
            self.dec[1].w.view().into_dyn(),
            self.dec[1].b.view().into_dyn(),
            self.dec[2].w.view().into_dyn(),
            self.dec[2].b.view().into_dyn(),
            self.scene1.w.view().into_dyn(),
            self.scene1.b.view().into_dyn(),
            self.scene2.w.view().into_dyn(),
            self.scene2.b.view().into_dyn(),
        ];
        names.into_iter().zip(views).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, ndarray::ArrayViewMutD<'_, f64>)> {
        let names = Self::tensor_names();
        let [c0, c1, c2] = &mut self.conv;
        let [d0, d1, d2] = &mut self.dec;
        let views: Vec<ndarray::ArrayViewMutD<'_, f64>> = vec![
            c0.w.view_mut().into_dyn(),
            c0.b.view_mut().into_dyn(),
            c1.w.view_mut().into_dyn(),
            c1.b.view_mut().into_dyn(),
            c2.w.view_mut().into_dyn(),
            c2.b.view_mut().into_dyn(),
            self.edl.w.view_mut().into_dyn(),
            self.edl.b.view_mut().into_dyn(),
            d0.w.view_mut().into_dyn(),
            d0.b.view_mut().into_dyn(),
            d1.w.view_mut().into_dyn(),
            d1.b.view_mut().into_dyn(),
            d2.w.view_mut().into_dyn(),
            d2.b.view_mut().into_dyn(),
            self.scene1.w.view_mut().into_dyn(),
            self.scene1.b.view_mut().into_dyn(),
            self.scene2.w.view_mut().into_dyn(),
            self.scene2.b.view_mut().into_dyn(),
        ];
        names.into_iter().zip(views).collect()
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub conv: [(Array5<f64>, Array1<f64>); 3],
    pub edl: (Array2<f64>, Array1<f64>),
    pub dec: [(Array5<f64>, Array1<f64>); 3],
    pub scene1: (Array2<f64>, Array1<f64>),
    pub scene2: (Array2<f64>, Array1<f64>),
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        let zc = |l: &Conv3dLayer| (Array5::zeros(l.w.dim()), Array1::zeros(l.b.len()));
        let zt = |l: &TConv3dLayer| (Array5::zeros(l.w.dim()), Array1::zeros(l.b.len()));
        let za = |l: &AffineLayer| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.len()));
        Gradients {
            conv: [zc(&p.conv[0]), zc(&p.conv[1]), zc(&p.conv[2])],
            edl: za(&p.edl),
            dec: [zt(&p.dec[0]), zt(&p.dec[1]), zt(&p.dec[2])],
            scene1: za(&p.scene1),
            scene2: za(&p.scene2),
        }
    }

    pub fn tensors(&self) -> Vec<ndarray::ArrayViewD<'_, f64>> {
        vec![
            self.conv[0].0.view().into_dyn(),
            self.conv[0].1.view().into_dyn(),
            self.conv[1].0.view().into_dyn(),
            self.conv[1].1.view().into_dyn(),
            self.conv[2].0.view().into_dyn(),
            self.conv[2].1.view().into_dyn(),
            self.edl.0.view().into_dyn(),
            self.edl.1.view().into_dyn(),
            self.dec[0].0.view().into_dyn(),
            self.dec[0].1.view().into_dyn(),
            self.dec[1].0.view().into_dyn(),
            self.dec[1].1.view().into_dyn(),
            self.dec[2].0.view().into_dyn(),
            self.dec[2].1.view().into_dyn(),
            self.scene1.0.view().into_dyn(),
            self.scene1.1.view().into_dyn(),
            self.scene2.0.view().into_dyn(),
            self.scene2.1.view().into_dyn(),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<ndarray::ArrayViewMutD<'_, f64>> {
        let [c0, c1, c2] = &mut self.conv;
        let [d0, d1, d2] = &mut self.dec;
        vec![
            c0.0.view_mut().into_dyn(),
            c0.1.view_mut().into_dyn(),
            c1.0.view_mut().into_dyn(),
            c1.1.view_mut().into_dyn(),
            c2.0.view_mut().into_dyn(),
            c2.1.view_mut().into_dyn(),
            self.edl.0.view_mut().into_dyn(),
            self.edl.1.view_mut().into_dyn(),
            d0.0.view_mut().into_dyn(),
            d0.1.view_mut().into_dyn(),
            d1.0.view_mut().into_dyn(),
            d1.1.view_mut().into_dyn(),
            d2.0.view_mut().into_dyn(),
            d2.1.view_mut().into_dyn(),
            self.scene1.0.view_mut().into_dyn(),
            self.scene1.1.view_mut().into_dyn(),
            self.scene2.0.view_mut().into_dyn(),
            self.scene2.1.view_mut().into_dyn(),
        ]
    }

    /// Elementwise accumulate, used to reduce per-sample gradients in a fixed
    /// order.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (mut a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.zip_mut_with(&b, |x, y| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for mut t in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }
}

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

/// Spatio-temporal feature map F plus its mean-pooled feature vector f.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub map: Array4<f64>,
    pub pooled: Array1<f64>,
}

pub struct BackboneTape {
    x: Array4<f64>,
    z1: Array4<f64>,
    a1: Array4<f64>,
    z2: Array4<f64>,
    a2: Array4<f64>,
    z3: Array4<f64>,
}

pub fn backbone_forward(
    p: &ModelParams,
    x: &Array4<f64>,
) -> Result<(FeatureMap, BackboneTape), NetError> {
    let (h, w, t, d) = x.dim();
    let (sh, sw, st) = CONV_STRIDES
        .iter()
        .fold((1, 1, 1), |acc, s| (acc.0 * s.0, acc.1 * s.1, acc.2 * s.2));
    let mut problems = Vec::new();
    if h % sh != 0 {
        problems.push(format!("H={h} must be a multiple of {sh}"));
    }
    if w % sw != 0 {
        problems.push(format!("W={w} must be a multiple of {sw}"));
    }
    if t % st != 0 {
        problems.push(format!("T={t} must be a multiple of {st}"));
    }
    let expect_d = p.conv[0].w.dim().4;
    if d != expect_d {
        problems.push(format!("D={d} must equal {expect_d}"));
    }
    if !problems.is_empty() {
        return Err(NetError::Shape(problems.join("; ")));
    }

    let z1 = conv3d_forward(x, &p.conv[0].w, Some(&p.conv[0].b), p.conv[0].stride, PAD);
    let a1 = relu(&z1);
    let z2 = conv3d_forward(&a1, &p.conv[1].w, Some(&p.conv[1].b), p.conv[1].stride, PAD);
    let a2 = relu(&z2);
    let z3 = conv3d_forward(&a2, &p.conv[2].w, Some(&p.conv[2].b), p.conv[2].stride, PAD);
    let map = relu(&z3);
    let pooled = mean_pool(&map);
    Ok((
        FeatureMap { map, pooled },
        BackboneTape {
            x: x.clone(),
            z1,
            a1,
            z2,
            a2,
            z3,
        },
    ))
}

/// Accumulate backbone gradients given the total gradient at the feature map
/// (pooled-path gradients must already be spread via `mean_pool_backward`).
/// The gradient with respect to the input clip is not needed by any caller
/// and is not computed.
pub fn backbone_backward(p: &ModelParams, tape: &BackboneTape, g_map: &Array4<f64>, grads: &mut Gradients) {
    let g_z3 = relu_backward(&tape.z3, g_map);
    let (ih2, iw2, it2, _) = tape.a2.dim();
    grads.conv[2]
        .0
        .zip_mut_with(
            &conv3d_backward_weights(&tape.a2, &g_z3, (KERNEL, KERNEL, KERNEL), p.conv[2].stride, PAD),
            |a, b| *a += b,
        );
    grads.conv[2].1.zip_mut_with(&channel_sums(&g_z3), |a, b| *a += b);
    let g_a2 = conv3d_backward_data(&g_z3, &p.conv[2].w, (ih2, iw2, it2), p.conv[2].stride, PAD);

    let g_z2 = relu_backward(&tape.z2, &g_a2);
    let (ih1, iw1, it1, _) = tape.a1.dim();
    grads.conv[1]
        .0
        .zip_mut_with(
            &conv3d_backward_weights(&tape.a1, &g_z2, (KERNEL, KERNEL, KERNEL), p.conv[1].stride, PAD),
            |a, b| *a += b,
        );
    grads.conv[1].1.zip_mut_with(&channel_sums(&g_z2), |a, b| *a += b);
    let g_a1 = conv3d_backward_data(&g_z2, &p.conv[1].w, (ih1, iw1, it1), p.conv[1].stride, PAD);

    let g_z1 = relu_backward(&tape.z1, &g_a1);
    grads.conv[0]
        .0
        .zip_mut_with(
            &conv3d_backward_weights(&tape.x, &g_z1, (KERNEL, KERNEL, KERNEL), p.conv[0].stride, PAD),
            |a, b| *a += b,
        );
    grads.conv[0].1.zip_mut_with(&channel_sums(&g_z1), |a, b| *a += b);
}

// ---------------------------------------------------------------------------
// Evidential head (pooled and per-location forms share weights)
// ---------------------------------------------------------------------------

/// Returns the rectified evidence and the pre-activation tape.
pub fn edl_pooled_forward(p: &ModelParams, f: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
    let z = affine_forward(f, &p.edl.w, &p.edl.b);
    (relu(&z), z)
}

/// Backward from d(loss)/d(evidence); returns d(loss)/d(pooled feature).
pub fn edl_pooled_backward(
    p: &ModelParams,
    f: &Array1<f64>,
    z: &Array1<f64>,
    g_e: &Array1<f64>,
    grads: &mut Gradients,
) -> Array1<f64> {
    let g_z = relu_backward(z, g_e);
    let (g_f, g_w, g_b) = affine_backward(f, &g_z, &p.edl.w);
    grads.edl.0.zip_mut_with(&g_w, |a, b| *a += b);
    grads.edl.1.zip_mut_with(&g_b, |a, b| *a += b);
    g_f
}

/// Backward through the evidential affine treated as a plain logits layer —
/// no rectification. Used by the softmax baseline, which trains the same
/// affine with ordinary cross-entropy.
pub fn edl_affine_backward(
    p: &ModelParams,
    f: &Array1<f64>,
    g_z: &Array1<f64>,
    grads: &mut Gradients,
) -> Array1<f64> {
    let (g_f, g_w, g_b) = affine_backward(f, g_z, &p.edl.w);
    grads.edl.0.zip_mut_with(&g_w, |a, b| *a += b);
    grads.edl.1.zip_mut_with(&g_b, |a, b| *a += b);
    g_f
}

/// Per-location evidence map E (ReLU-rectified); no backward — every
/// consumer of the evidence map treats it as a detached guidance signal.
pub fn edl_map_forward(p: &ModelParams, map: &Array4<f64>) -> Array4<f64> {
    relu(&affine_map_forward(map, &p.edl.w, &p.edl.b))
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

pub struct DecoderTape {
    d_in: Array4<f64>,
    z1: Array4<f64>,
    h1: Array4<f64>,
    z2: Array4<f64>,
    h2: Array4<f64>,
}

/// Reconstruct a clip-shaped tensor from the feature map (identity GRL in
/// front). Output activation is linear.
pub fn decoder_forward(p: &ModelParams, d_in: &Array4<f64>) -> (Array4<f64>, DecoderTape) {
    let z1 = tconv3d_forward(d_in, &p.dec[0].w, Some(&p.dec[0].b), p.dec[0].stride, PAD, p.dec[0].out_pad);
    let h1 = relu(&z1);
    let z2 = tconv3d_forward(&h1, &p.dec[1].w, Some(&p.dec[1].b), p.dec[1].stride, PAD, p.dec[1].out_pad);
    let h2 = relu(&z2);
    let xhat = tconv3d_forward(&h2, &p.dec[2].w, Some(&p.dec[2].b), p.dec[2].stride, PAD, p.dec[2].out_pad);
    (
        xhat,
        DecoderTape {
            d_in: d_in.clone(),
            z1,
            h1,
            z2,
            h2,
        },
    )
}

/// Returns the gradient at the decoder input (before gradient reversal).
pub fn decoder_backward(
    p: &ModelParams,
    tape: &DecoderTape,
    g_xhat: &Array4<f64>,
    grads: &mut Gradients,
) -> Array4<f64> {
    grads.dec[2].0.zip_mut_with(
        &tconv3d_backward_weights(&tape.h2, g_xhat, (KERNEL, KERNEL, KERNEL), p.dec[2].stride, PAD),
        |a, b| *a += b,
    );
    grads.dec[2].1.zip_mut_with(&channel_sums(g_xhat), |a, b| *a += b);
    let g_h2 = tconv3d_backward_data(g_xhat, &p.dec[2].w, p.dec[2].stride, PAD);

    let g_z2 = relu_backward(&tape.z2, &g_h2);
    grads.dec[1].0.zip_mut_with(
        &tconv3d_backward_weights(&tape.h1, &g_z2, (KERNEL, KERNEL, KERNEL), p.dec[1].stride, PAD),
        |a, b| *a += b,
    );
    grads.dec[1].1.zip_mut_with(&channel_sums(&g_z2), |a, b| *a += b);
    let g_h1 = tconv3d_backward_data(&g_z2, &p.dec[1].w, p.dec[1].stride, PAD);

    let g_z1 = relu_backward(&tape.z1, &g_h1);
    grads.dec[0].0.zip_mut_with(
        &tconv3d_backward_weights(&tape.d_in, &g_z1, (KERNEL, KERNEL, KERNEL), p.dec[0].stride, PAD),
        |a, b| *a += b,
    );
    grads.dec[0].1.zip_mut_with(&channel_sums(&g_z1), |a, b| *a += b);
    tconv3d_backward_data(&g_z1, &p.dec[0].w, p.dec[0].stride, PAD)
}

// ---------------------------------------------------------------------------
// Scene head
// ---------------------------------------------------------------------------

pub struct ScenePooledTape {
    z1: Array1<f64>,
    h1: Array1<f64>,
}

pub fn scene_pooled_forward(p: &ModelParams, f: &Array1<f64>) -> (Array1<f64>, ScenePooledTape) {
    let z1 = affine_forward(f, &p.scene1.w, &p.scene1.b);
    let h1 = relu(&z1);
    let logits = affine_forward(&h1, &p.scene2.w, &p.scene2.b);
    (logits, ScenePooledTape { z1, h1 })
}

/// Returns the gradient at the pooled feature (before gradient reversal).
pub fn scene_pooled_backward(
    p: &ModelParams,
    f: &Array1<f64>,
    tape: &ScenePooledTape,
    g_logits: &Array1<f64>,
    grads: &mut Gradients,
) -> Array1<f64> {
    let (g_h1, g_w2, g_b2) = affine_backward(&tape.h1, g_logits, &p.scene2.w);
    grads.scene2.0.zip_mut_with(&g_w2, |a, b| *a += b);
    grads.scene2.1.zip_mut_with(&g_b2, |a, b| *a += b);
    let g_z1 = relu_backward(&tape.z1, &g_h1);
    let (g_f, g_w1, g_b1) = affine_backward(f, &g_z1, &p.scene1.w);
    grads.scene1.0.zip_mut_with(&g_w1, |a, b| *a += b);
    grads.scene1.1.zip_mut_with(&g_b1, |a, b| *a += b);
    g_f
}

pub struct SceneMapTape {
    z1m: Array4<f64>,
    h1m: Array4<f64>,
}

/// Per-location logit of the true scene class — the scene activation map M.
pub fn scene_map_forward(
    p: &ModelParams,
    map: &Array4<f64>,
    scene_label: usize,
) -> Result<(Array3<f64>, SceneMapTape), NetError> {
    let n = p.n_scenes();
    if scene_label >= n {
        return Err(NetError::SceneLabel {
            label: scene_label,
            n,
        });
    }
    let z1m = affine_map_forward(map, &p.scene1.w, &p.scene1.b);
    let h1m = relu(&z1m);
    let (h, w, t, hidden) = h1m.dim();
    let w2_row = p.scene2.w.row(scene_label);
    let b2 = p.scene2.b[scene_label];
    let flat = h1m.as_slice().unwrap();
    let mut m = Array3::zeros((h, w, t));
    for (loc, out) in m.iter_mut().enumerate() {
        let off = loc * hidden;
        let mut acc = b2;
        for k in 0..hidden {
            acc += w2_row[k] * flat[off + k];
        }
        *out = acc;
    }
    Ok((m, SceneMapTape { z1m, h1m }))
}

/// Returns the gradient at the feature map (before gradient reversal).
pub fn scene_map_backward(
    p: &ModelParams,
    map: &Array4<f64>,
    tape: &SceneMapTape,
    scene_label: usize,
    g_m: &Array3<f64>,
    grads: &mut Gradients,
) -> Array4<f64> {
    let (h, w, t, hidden) = tape.h1m.dim();
    let w2_row = p.scene2.w.row(scene_label);
    let h1_flat = tape.h1m.as_slice().unwrap();
    let gm_flat = g_m.as_slice().unwrap();

    let mut g_h1m = Array4::<f64>::zeros((h, w, t, hidden));
    {
        let g_h1_flat = g_h1m.as_slice_mut().unwrap();
        for (loc, &g) in gm_flat.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.scene2.1[scene_label] += g;
            let off = loc * hidden;
            for k in 0..hidden {
                g_h1_flat[off + k] = g * w2_row[k];
                grads.scene2.0[[scene_label, k]] += g * h1_flat[off + k];
            }
        }
    }
    let g_z1m = relu_backward(&tape.z1m, &g_h1m);
    let (g_map, g_w1, g_b1) = affine_map_backward(map, &g_z1m, &p.scene1.w);
    grads.scene1.0.zip_mut_with(&g_w1, |a, b| *a += b);
    grads.scene1.1.zip_mut_with(&g_b1, |a, b| *a += b);
    g_map
}
