//! Procedural generation of biased video datasets.
//!
//! Each clip is a colored sprite moving over a static textured background
//! plus per-frame Gaussian pixel noise. The *action* is the motion pattern,
//! the *scene* is the background texture family, and the correlation between
//! the two in the training split is an explicit knob `rho`:
//!
//! * `rho = 1` — action c always appears in scene `c mod n_scenes`
//!   (maximally confounded, the setting that induces scene bias);
//! * `rho = 0` — scenes are assigned uniformly, independent of the action.
//!
//! Open-set clips use motion patterns never seen in training. Their scenes
//! follow either the training pairing rule (`familiar` — unknown actions in
//! well-known scenes) or scenes disjoint from every dominant training pairing
//! (`unfamiliar`).
//!
//! Scene assignment is stratified: per class the target scene counts are laid
//! out exactly and then shuffled, rather than sampled i.i.d. per clip. This
//! keeps empirical action/scene statistics tight at small sample sizes (the
//! mutual-information and cell-frequency checks below would otherwise be at
//! the mercy of sampling noise) while matching the i.i.d. rule in expectation.
//!
//! Sprite colors are drawn independently of both labels, so color never
//! predicts the action. Background parameters are drawn from a stream keyed
//! only by (scene, clip seed): two clips with the same scene and seed but
//! different actions share a pixel-identical background.

use std::path::Path;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::background::{tmf_background, TmfConfig};
use crate::dataio::{
    save_manifest, write_tensor_f32, ClipRecord, ClipTensor, DataError, DatasetManifest, Split,
};
use crate::seeding;

/// Number of pixel channels; clips are RGB.
pub const CHANNELS: usize = 3;

/// Dimensionality of [`scene_feature`]: an 8x8x8 joint RGB histogram.
pub const SCENE_FEATURE_DIM: usize = 512;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("action index {0} does not name a motion pattern (0..=5)")]
    UnknownAction(usize),
    #[error("scene index {index} out of range, only {n_scenes} scenes defined")]
    UnknownScene { index: usize, n_scenes: usize },
    #[error(
        "unfamiliar open-scene policy impossible: all {0} scenes are dominant training pairings"
    )]
    NoUnfamiliarScenes(usize),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// How open-set clips pick their backgrounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpenScenePolicy {
    /// Same pairing rule as training: unknown actions appear in scenes the
    /// model knows well.
    Familiar,
    /// Only scenes that are nobody's dominant training pairing.
    Unfamiliar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub c_known: usize,
    pub c_open: usize,
    pub n_scenes: usize,
    /// Probability that a train/closed clip of action c gets scene
    /// `c mod n_scenes`; the remainder is spread uniformly over all scenes.
    pub rho: f64,
    /// Training clips per known class.
    pub clips_per_class: usize,
    /// closed_test size = round(closed_frac * train size), spread round-robin
    /// over the known classes. The default 1.0 keeps every class large
    /// enough to split into distance-ordered subsets downstream.
    pub closed_frac: f64,
    /// Open-set clips per open class; `None` means `clips_per_class`.
    pub open_clips_per_class: Option<usize>,
    pub open_scene_policy: OpenScenePolicy,
    /// Std-dev of per-frame Gaussian pixel noise (clamped to [0,1] after).
    pub noise_std: f64,
    /// Side length of the square sprite; 0 removes the sprite entirely.
    pub sprite_size: usize,
    /// Half-width of the per-clip hue jitter inside a scene family. Non-zero
    /// jitter gives clips of one scene distinct (but clustered) scene
    /// features, which is what makes scene-distance curves informative.
    pub scene_jitter: f64,
    pub master_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 32,
            width: 32,
            frames: 16,
            c_known: 4,
            c_open: 2,
            n_scenes: 4,
            rho: 1.0,
            clips_per_class: 10,
            closed_frac: 1.0,
            open_clips_per_class: None,
            open_scene_policy: OpenScenePolicy::Familiar,
            noise_std: 0.02,
            sprite_size: 8,
            scene_jitter: 0.05,
            master_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |msg: String| Err(SynthError::Config(msg));
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return err(format!(
                "dims must be positive, got {}x{}x{}",
                self.height, self.width, self.frames
            ));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return err(format!("rho {} outside [0, 1]", self.rho));
        }
        if self.c_known == 0 || self.c_known > MotionPattern::KNOWN_POOL.len() {
            return err(format!(
                "c_known {} must be in 1..={}",
                self.c_known,
                MotionPattern::KNOWN_POOL.len()
            ));
        }
        if self.c_open == 0 || self.c_open > MotionPattern::OPEN_POOL.len() {
            return err(format!(
                "c_open {} must be in 1..={}",
                self.c_open,
                MotionPattern::OPEN_POOL.len()
            ));
        }
        if self.n_scenes == 0 {
            return err("n_scenes must be positive".to_string());
        }
        if self.sprite_size >= self.height.min(self.width) {
            return err(format!(
                "sprite_size {} must be < min(H, W) = {}",
                self.sprite_size,
                self.height.min(self.width)
            ));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return err(format!("noise_std {} must be >= 0", self.noise_std));
        }
        if !(0.0..0.45).contains(&self.scene_jitter) {
            return err(format!("scene_jitter {} outside [0, 0.45)", self.scene_jitter));
        }
        if !(0.0..=1.0).contains(&self.closed_frac) {
            return err(format!("closed_frac {} outside [0, 1]", self.closed_frac));
        }
        if self.clips_per_class == 0 {
            return err("clips_per_class must be positive".to_string());
        }
        Ok(())
    }

    pub fn open_cpc(&self) -> usize {
        self.open_clips_per_class.unwrap_or(self.clips_per_class)
    }

    /// Dataset action label -> motion pattern. Known labels map onto the
    /// known pool in order; open labels map onto the open pool with
    /// pulse-in-place first, so even a single open class exercises the
    /// static-foreground case that defeats temporal-median backgrounds.
    pub fn pattern_for_label(&self, label: usize) -> Result<MotionPattern, SynthError> {
        if label < self.c_known {
            Ok(MotionPattern::KNOWN_POOL[label])
        } else if label < self.c_known + self.c_open {
            Ok(MotionPattern::OPEN_POOL[label - self.c_known])
        } else {
            Err(SynthError::UnknownAction(label))
        }
    }
}

// ---------------------------------------------------------------------------
// Motion patterns
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionPattern {
    BounceHorizontal,
    BounceVertical,
    Diagonal,
    Circular,
    Zigzag,
    PulseInPlace,
}

impl MotionPattern {
    pub const KNOWN_POOL: [MotionPattern; 4] = [
        MotionPattern::BounceHorizontal,
        MotionPattern::BounceVertical,
        MotionPattern::Diagonal,
        MotionPattern::Circular,
    ];
    pub const OPEN_POOL: [MotionPattern; 2] =
        [MotionPattern::PulseInPlace, MotionPattern::Zigzag];

    pub fn from_index(i: usize) -> Result<Self, SynthError> {
        match i {
            0 => Ok(MotionPattern::BounceHorizontal),
            1 => Ok(MotionPattern::BounceVertical),
            2 => Ok(MotionPattern::Diagonal),
            3 => Ok(MotionPattern::Circular),
            4 => Ok(MotionPattern::Zigzag),
            5 => Ok(MotionPattern::PulseInPlace),
            other => Err(SynthError::UnknownAction(other)),
        }
    }
}

/// Triangle wave: 0 -> 1 -> 0 as p runs 0 -> 1 -> 2, repeating with period 2.
fn tri(p: f64) -> f64 {
    let q = p.rem_euclid(2.0);
    if q <= 1.0 {
        q
    } else {
        2.0 - q
    }
}

/// Top-left corner (x = column, y = row) of a moving sprite at frame `t`.
/// Closed forms over normalized time tau = t / (T - 1):
///
/// * bounce-horizontal: x = (W-s) * tri(2 tau), y centered;
/// * bounce-vertical:   y = (H-s) * tri(2 tau), x centered;
/// * diagonal:          (x, y) = tau * (W-s, H-s);
/// * circular:          one full orbit of radius 0.4 * min(W-s, H-s) around
///   the centered position;
/// * zigzag:            x sweeps once left to right while y bounces twice.
///
/// Pulse-in-place has no track — it is rendered separately (fixed centroid,
/// pulsating odd-sized square).
pub fn sprite_position(
    pattern: MotionPattern,
    t: usize,
    frames: usize,
    height: usize,
    width: usize,
    sprite_size: usize,
) -> (usize, usize) {
    let maxx = (width - sprite_size) as f64;
    let maxy = (height - sprite_size) as f64;
    let tau = if frames > 1 {
        t as f64 / (frames - 1) as f64
    } else {
        0.0
    };
    let (x, y) = match pattern {
        MotionPattern::BounceHorizontal => (maxx * tri(2.0 * tau), maxy / 2.0),
        MotionPattern::BounceVertical => (maxx / 2.0, maxy * tri(2.0 * tau)),
        MotionPattern::Diagonal => (maxx * tau, maxy * tau),
        MotionPattern::Circular => {
            let r = 0.4 * maxx.min(maxy);
            let a = std::f64::consts::TAU * tau;
            (maxx / 2.0 + r * a.cos(), maxy / 2.0 + r * a.sin())
        }
        MotionPattern::Zigzag => (maxx * tau, maxy * tri(4.0 * tau)),
        MotionPattern::PulseInPlace => (maxx / 2.0, maxy / 2.0),
    };
    (
        (x.round() as usize).min(width - sprite_size),
        (y.round() as usize).min(height - sprite_size),
    )
}

// ---------------------------------------------------------------------------
// Backgrounds
// ---------------------------------------------------------------------------

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = (h6.floor() as usize) % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Render the static background of `scene` as an (H, W, 3) image in [0,1].
/// Alternating texture families (smooth gradient / checkerboard) with hues on
/// a golden-ratio wheel keep any number of scenes visually distinct; `rng`
/// supplies the per-clip jitter within the family.
fn render_background(
    scene: usize,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 3]> {
    let (h, w) = (cfg.height, cfg.width);
    let base_hue = (scene as f64 * 0.618_033_988_749_895).fract();
    let hue = (base_hue + cfg.scene_jitter * (rng.gen::<f64>() - 0.5)).rem_euclid(1.0);
    let mut img = vec![[0.0f64; 3]; h * w];
    if scene.is_multiple_of(2) {
        // Smooth gradient: brightness ramps along a jittered mixing direction.
        let a = 0.3 + 0.4 * rng.gen::<f64>();
        let sat = 0.55 + 0.15 * rng.gen::<f64>();
        for i in 0..h {
            for j in 0..w {
                let gi = if h > 1 { i as f64 / (h - 1) as f64 } else { 0.0 };
                let gj = if w > 1 { j as f64 / (w - 1) as f64 } else { 0.0 };
                let g = a * gi + (1.0 - a) * gj;
                img[i * w + j] = hsv_to_rgb(hue, sat, 0.35 + 0.55 * g);
            }
        }
    } else {
        // Checkerboard: two values of the same hue, jittered cell and phase.
        let cell = rng.gen_range(3..=6usize);
        let pi = rng.gen_range(0..cell);
        let pj = rng.gen_range(0..cell);
        let light = hsv_to_rgb(hue, 0.6 + 0.1 * rng.gen::<f64>(), 0.85);
        let dark = hsv_to_rgb(hue, 0.7 + 0.1 * rng.gen::<f64>(), 0.35);
        for i in 0..h {
            for j in 0..w {
                let par = ((i + pi) / cell + (j + pj) / cell) % 2;
                img[i * w + j] = if par == 0 { light } else { dark };
            }
        }
    }
    img
}

// ---------------------------------------------------------------------------
// Clip generation
// ---------------------------------------------------------------------------

/// Generate one clip of `pattern` in `scene`, fully determined by `seed`.
///
/// Draw order is fixed: background parameters come from the stream
/// (seed, "bg") — independent of the action — then sprite color and the
/// pulse centroid from (seed, "sprite"), then per-pixel noise from
/// (seed, "noise") in array order (row, column, frame, channel).
pub fn generate_clip(
    action: usize,
    scene: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<ClipTensor, SynthError> {
    cfg.validate()?;
    let pattern = MotionPattern::from_index(action)?;
    if scene >= cfg.n_scenes {
        return Err(SynthError::UnknownScene {
            index: scene,
            n_scenes: cfg.n_scenes,
        });
    }
    let (h, w, t_len, ss) = (cfg.height, cfg.width, cfg.frames, cfg.sprite_size);

    let mut bg_rng = ChaCha8Rng::seed_from_u64(seeding::mix(seed, "bg"));
    let bg = render_background(scene, cfg, &mut bg_rng);

    let mut sprite_rng = ChaCha8Rng::seed_from_u64(seeding::mix(seed, "sprite"));
    let color = [
        0.25 + 0.75 * sprite_rng.gen::<f64>(),
        0.25 + 0.75 * sprite_rng.gen::<f64>(),
        0.25 + 0.75 * sprite_rng.gen::<f64>(),
    ];
    let half = ss / 2;
    let pulse_center = if half > 0 {
        (
            sprite_rng.gen_range(half..h - half),
            sprite_rng.gen_range(half..w - half),
        )
    } else {
        (h / 2, w / 2)
    };

    // (H, W, T, D) with the background everywhere, sprite painted per frame.
    let mut data = vec![0.0f64; h * w * t_len * CHANNELS];
    let at = |i: usize, j: usize, t: usize, d: usize| ((i * w + j) * t_len + t) * CHANNELS + d;
    for i in 0..h {
        for j in 0..w {
            let px = bg[i * w + j];
            for t in 0..t_len {
                for d in 0..CHANNELS {
                    data[at(i, j, t, d)] = px[d];
                }
            }
        }
    }
    if ss > 0 {
        for t in 0..t_len {
            let (rows, cols) = match pattern {
                MotionPattern::PulseInPlace => {
                    // Odd-sized square around a fixed centroid; the half-width
                    // pulses over time so only the extent moves, never the center.
                    let tau = if t_len > 1 {
                        t as f64 / (t_len - 1) as f64
                    } else {
                        0.0
                    };
                    let ht = if half <= 1 {
                        half
                    } else {
                        1 + ((half - 1) as f64 * tri(2.0 * tau)).round() as usize
                    };
                    let (ci, cj) = pulse_center;
                    (ci - ht..=ci + ht, cj - ht..=cj + ht)
                }
                _ => {
                    let (x, y) = sprite_position(pattern, t, t_len, h, w, ss);
                    (y..=y + ss - 1, x..=x + ss - 1)
                }
            };
            for i in rows {
                for j in cols.clone() {
                    for d in 0..CHANNELS {
                        data[at(i, j, t, d)] = color[d];
                    }
                }
            }
        }
    }
    if cfg.noise_std > 0.0 {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seeding::mix(seed, "noise"));
        let normal = Normal::new(0.0, cfg.noise_std).expect("validated std");
        for v in data.iter_mut() {
            *v = (*v + normal.sample(&mut noise_rng)).clamp(0.0, 1.0);
        }
    }

    let data_f32: Vec<f32> = data.iter().map(|&v| v as f32).collect();
    Ok(ClipTensor::new(
        Array4::from_shape_vec((h, w, t_len, CHANNELS), data_f32).unwrap(),
    ))
}

/// 8x8x8 joint RGB histogram of the clip's whole-clip temporal-median
/// background, L2-normalized. Acts as the scene descriptor: it sees the
/// static texture and is nearly blind to a moving sprite.
pub fn scene_feature(clip: &ClipTensor) -> Vec<f64> {
    let bg = tmf_background(clip, &TmfConfig::default()).expect("default window always valid");
    let (h, w, t, _) = bg.dims();
    let mut hist = vec![0.0f64; SCENE_FEATURE_DIM];
    let flat = bg.data.as_standard_layout();
    let flat = flat.as_slice().unwrap();
    for px in 0..h * w * t {
        let r = flat[px * CHANNELS];
        let g = flat[px * CHANNELS + 1];
        let b = flat[px * CHANNELS + 2];
        let bin = |v: f32| ((v as f64 * 8.0).floor() as usize).min(7);
        hist[bin(r) * 64 + bin(g) * 8 + bin(b)] += 1.0;
    }
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in hist.iter_mut() {
            *v /= norm;
        }
    }
    hist
}

// ---------------------------------------------------------------------------
// Dataset planning and generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct PlannedClip {
    pub clip_id: String,
    pub action_label: usize,
    pub scene_label: usize,
    pub split: Split,
    pub seed: u64,
}

/// Lay out `n` scene assignments for one class: round(rho * n) copies of the
/// dominant pairing plus a uniform round-robin remainder, shuffled.
fn scene_deck(
    n: usize,
    paired: usize,
    rho: f64,
    scenes: &[usize],
    rotate: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let k = ((rho * n as f64).round() as usize).min(n);
    let mut deck = Vec::with_capacity(n);
    deck.resize(k, paired);
    for i in 0..n - k {
        deck.push(scenes[(rotate + i) % scenes.len()]);
    }
    for i in (1..deck.len()).rev() {
        let j = rng.gen_range(0..=i);
        deck.swap(i, j);
    }
    deck
}

pub(crate) fn plan_dataset(cfg: &SynthConfig) -> Result<Vec<PlannedClip>, SynthError> {
    cfg.validate()?;
    let all_scenes: Vec<usize> = (0..cfg.n_scenes).collect();
    let mut plan: Vec<(usize, usize, Split)> = Vec::new(); // (action, scene, split)

    for c in 0..cfg.c_known {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeding::mix(cfg.master_seed, &format!("scenes/train/{c}")));
        let deck = scene_deck(cfg.clips_per_class, c % cfg.n_scenes, cfg.rho, &all_scenes, c, &mut rng);
        plan.extend(deck.into_iter().map(|s| (c, s, Split::Train)));
    }

    let closed_total =
        (cfg.closed_frac * (cfg.c_known * cfg.clips_per_class) as f64).round() as usize;
    for c in 0..cfg.c_known {
        let n = closed_total / cfg.c_known + usize::from(c < closed_total % cfg.c_known);
        if n == 0 {
            continue;
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeding::mix(cfg.master_seed, &format!("scenes/closed/{c}")));
        let deck = scene_deck(n, c % cfg.n_scenes, cfg.rho, &all_scenes, c, &mut rng);
        plan.extend(deck.into_iter().map(|s| (c, s, Split::ClosedTest)));
    }

    let open_scenes: Vec<usize> = match cfg.open_scene_policy {
        OpenScenePolicy::Familiar => all_scenes.clone(),
        OpenScenePolicy::Unfamiliar => {
            let dominant: std::collections::HashSet<usize> =
                (0..cfg.c_known).map(|c| c % cfg.n_scenes).collect();
            let rest: Vec<usize> = all_scenes
                .iter()
                .copied()
                .filter(|s| !dominant.contains(s))
                .collect();
            if rest.is_empty() {
                return Err(SynthError::NoUnfamiliarScenes(cfg.n_scenes));
            }
            rest
        }
    };
    for i in 0..cfg.c_open {
        let label = cfg.c_known + i;
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeding::mix(cfg.master_seed, &format!("scenes/open/{i}")));
        let deck = match cfg.open_scene_policy {
            OpenScenePolicy::Familiar => scene_deck(
                cfg.open_cpc(),
                label % cfg.n_scenes,
                cfg.rho,
                &open_scenes,
                label,
                &mut rng,
            ),
            // No dominant pairing exists among unfamiliar scenes; spread evenly.
            OpenScenePolicy::Unfamiliar => {
                scene_deck(cfg.open_cpc(), open_scenes[0], 0.0, &open_scenes, i, &mut rng)
            }
        };
        plan.extend(deck.into_iter().map(|s| (label, s, Split::OpenTest)));
    }

    Ok(plan
        .into_iter()
        .enumerate()
        .map(|(idx, (action, scene, split))| {
            let short = match split {
                Split::Train => "train",
                Split::ClosedTest => "closed",
                Split::OpenTest => "open",
            };
            PlannedClip {
                clip_id: format!("{short}_a{action}_s{scene}_{idx:04}"),
                action_label: action,
                scene_label: scene,
                split,
                seed: seeding::mix_index(cfg.master_seed, idx as u64) & seeding::SEED63_MASK,
            }
        })
        .collect())
}

/// Generate the full dataset under `out_dir`: clips in `clips/`, scene
/// features in `features/`, and `manifest.toml` tying them together.
/// Byte-identical for identical (cfg, master_seed).
pub fn generate_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest, SynthError> {
    let plan = plan_dataset(cfg)?;
    let clips_dir = out_dir.join("clips");
    let feat_dir = out_dir.join("features");
    for dir in [out_dir, &clips_dir, &feat_dir] {
        std::fs::create_dir_all(dir).map_err(|e| {
            SynthError::Data(DataError::Io {
                path: dir.to_path_buf(),
                source: e,
            })
        })?;
    }

    let records: Vec<ClipRecord> = plan
        .par_iter()
        .map(|p| -> Result<ClipRecord, SynthError> {
            let clip = generate_clip(p.action_label, p.scene_label, p.seed, cfg)?;
            let clip_rel = format!("clips/{}.vtn", p.clip_id);
            let feat_rel = format!("features/{}.vtn", p.clip_id);
            clip.save(&out_dir.join(&clip_rel))?;
            let feat: Vec<f32> = scene_feature(&clip).iter().map(|&v| v as f32).collect();
            write_tensor_f32(
                &out_dir.join(&feat_rel),
                &[SCENE_FEATURE_DIM as u32],
                &feat,
            )?;
            Ok(ClipRecord {
                clip_id: p.clip_id.clone(),
                path: clip_rel,
                action_label: p.action_label as u32,
                scene_label: p.scene_label as u32,
                split: p.split,
                seed: p.seed,
                scene_feature_path: Some(feat_rel),
            })
        })
        .collect::<Result<_, _>>()?;

    let manifest = DatasetManifest {
        c_known: cfg.c_known as u32,
        n_scenes: cfg.n_scenes as u32,
        clips: records,
    };
    save_manifest(&manifest, &out_dir.join("manifest.toml"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn tiny_cfg() -> SynthConfig {
        SynthConfig {
            height: 16,
            width: 16,
            frames: 8,
            sprite_size: 5,
            clips_per_class: 2,
            open_clips_per_class: Some(1),
            noise_std: 0.0,
            ..SynthConfig::default()
        }
    }

    /// Pixels where two clips differ, per frame.
    fn diff_pixels(a: &ClipTensor, b: &ClipTensor, t: usize) -> Vec<(usize, usize)> {
        let (h, w, _, d) = a.dims();
        let mut out = Vec::new();
        for i in 0..h {
            for j in 0..w {
                if (0..d).any(|c| a.data[[i, j, t, c]] != b.data[[i, j, t, c]]) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    #[test]
    fn pulse_centroid_is_static() {
        let cfg = tiny_cfg();
        let blank = SynthConfig {
            sprite_size: 0,
            ..cfg.clone()
        };
        let clip = generate_clip(5, 1, 42, &cfg).unwrap();
        let bg_only = generate_clip(5, 1, 42, &blank).unwrap();
        let mut centroids = Vec::new();
        for t in 0..cfg.frames {
            let px = diff_pixels(&clip, &bg_only, t);
            assert!(!px.is_empty(), "sprite missing in frame {t}");
            let (si, sj) = px
                .iter()
                .fold((0usize, 0usize), |acc, &(i, j)| (acc.0 + i, acc.1 + j));
            centroids.push((si as f64 / px.len() as f64, sj as f64 / px.len() as f64));
        }
        for c in &centroids[1..] {
            assert_eq!(*c, centroids[0]);
        }
    }

    #[test]
    fn bounce_horizontal_follows_the_triangle_wave() {
        let cfg = tiny_cfg();
        let blank = SynthConfig {
            sprite_size: 0,
            ..cfg.clone()
        };
        let clip = generate_clip(0, 0, 3, &cfg).unwrap();
        let bg_only = generate_clip(0, 0, 3, &blank).unwrap();
        let (h, w, t_len, ss) = (cfg.height, cfg.width, cfg.frames, cfg.sprite_size);
        for t in 0..t_len {
            // Recompute the expected corner from the documented closed form.
            let tau = t as f64 / (t_len - 1) as f64;
            let p = (2.0 * tau).rem_euclid(2.0);
            let tri = if p <= 1.0 { p } else { 2.0 - p };
            let ex = ((w - ss) as f64 * tri).round() as usize;
            let ey = (((h - ss) as f64) / 2.0).round() as usize;

            let px = diff_pixels(&clip, &bg_only, t);
            let min_j = px.iter().map(|&(_, j)| j).min().unwrap();
            let max_j = px.iter().map(|&(_, j)| j).max().unwrap();
            let min_i = px.iter().map(|&(i, _)| i).min().unwrap();
            assert_eq!(min_j, ex, "frame {t}");
            assert_eq!(max_j, ex + ss - 1, "frame {t}");
            assert_eq!(min_i, ey, "frame {t}");
        }
    }

    #[test]
    fn no_sprite_no_noise_means_static_frames() {
        let cfg = SynthConfig {
            sprite_size: 0,
            noise_std: 0.0,
            ..tiny_cfg()
        };
        let clip = generate_clip(2, 2, 9, &cfg).unwrap();
        for t in 1..cfg.frames {
            for i in 0..cfg.height {
                for j in 0..cfg.width {
                    for d in 0..CHANNELS {
                        assert_eq!(clip.data[[i, j, t, d]], clip.data[[i, j, 0, d]]);
                    }
                }
            }
        }
    }

    #[test]
    fn background_ignores_the_action() {
        let cfg = tiny_cfg();
        let a = generate_clip(0, 1, 7, &cfg).unwrap();
        let b = generate_clip(3, 1, 7, &cfg).unwrap();
        // Outside both sprites the clips agree pixel-for-pixel.
        let blank = SynthConfig {
            sprite_size: 0,
            ..cfg.clone()
        };
        let bg = generate_clip(0, 1, 7, &blank).unwrap();
        let bg2 = generate_clip(3, 1, 7, &blank).unwrap();
        assert_eq!(bg, bg2);
        for t in 0..cfg.frames {
            let da = diff_pixels(&a, &bg, t).len();
            let db = diff_pixels(&b, &bg, t).len();
            assert!(da > 0 && db > 0);
        }
    }

    #[test]
    fn unknown_indices_are_range_errors() {
        let cfg = tiny_cfg();
        assert!(matches!(
            generate_clip(6, 0, 0, &cfg),
            Err(SynthError::UnknownAction(6))
        ));
        assert!(matches!(
            generate_clip(0, 4, 0, &cfg),
            Err(SynthError::UnknownScene { index: 4, .. })
        ));
    }

    #[test]
    fn constant_red_clip_gives_a_one_hot_histogram() {
        let mut data = Array4::zeros((4, 4, 3, 3));
        data.index_axis_mut(ndarray::Axis(3), 0).fill(1.0);
        let clip = ClipTensor::new(data);
        let feat = scene_feature(&clip);
        assert_eq!(feat[7 * 64], 1.0);
        let norm: f64 = feat.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scene_feature_is_insensitive_to_the_sprite_path() {
        let cfg = SynthConfig {
            noise_std: 0.02,
            ..tiny_cfg()
        };
        let a = generate_clip(0, 1, 7, &cfg).unwrap();
        let b = generate_clip(2, 1, 7, &cfg).unwrap();
        let (fa, fb) = (scene_feature(&a), scene_feature(&b));
        let dot: f64 = fa.iter().zip(&fb).map(|(x, y)| x * y).sum();
        assert!(1.0 - dot < 0.05, "cosine distance {} too large", 1.0 - dot);
    }

    proptest! {
        #[test]
        fn scene_features_are_unit_norm(seed in 0u64..50) {
            let cfg = tiny_cfg();
            let clip = generate_clip((seed % 6) as usize, (seed % 4) as usize, seed, &cfg).unwrap();
            let feat = scene_feature(&clip);
            let norm: f64 = feat.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    fn split_counts(plan: &[PlannedClip]) -> (usize, usize, usize) {
        let count = |s: Split| plan.iter().filter(|p| p.split == s).count();
        (
            count(Split::Train),
            count(Split::ClosedTest),
            count(Split::OpenTest),
        )
    }

    #[test]
    fn default_split_arithmetic() {
        // clips_per_class=10 at defaults: 4*10 train, closed mirrors train
        // size (closed_frac=1), 2*10 open.
        let plan = plan_dataset(&SynthConfig::default()).unwrap();
        assert_eq!(split_counts(&plan), (40, 40, 20));
    }

    #[test]
    fn twelve_clip_manifest_splits_8_2_2() {
        let cfg = SynthConfig {
            clips_per_class: 2,
            closed_frac: 0.25,
            open_clips_per_class: Some(1),
            master_seed: 0,
            ..SynthConfig::default()
        };
        let plan = plan_dataset(&cfg).unwrap();
        assert_eq!(plan.len(), 12);
        assert_eq!(split_counts(&plan), (8, 2, 2));
    }

    #[test]
    fn rho_one_pins_every_train_scene() {
        let plan = plan_dataset(&SynthConfig::default()).unwrap();
        for p in plan.iter().filter(|p| p.split != Split::OpenTest) {
            assert_eq!(p.scene_label, p.action_label % 4);
        }
    }

    #[test]
    fn rho_zero_spreads_scenes_evenly() {
        let cfg = SynthConfig {
            rho: 0.0,
            clips_per_class: 100,
            ..SynthConfig::default()
        };
        let plan = plan_dataset(&cfg).unwrap();
        let mut cells: HashMap<(usize, usize), usize> = HashMap::new();
        for p in plan.iter().filter(|p| p.split == Split::Train) {
            *cells.entry((p.action_label, p.scene_label)).or_default() += 1;
        }
        let uniform = 100.0 / 4.0;
        for a in 0..4 {
            for s in 0..4 {
                if s == a % 4 {
                    continue; // only the off-pairing cells are constrained
                }
                let n = *cells.get(&(a, s)).unwrap_or(&0) as f64;
                assert!(
                    (n - uniform).abs() / uniform <= 0.2,
                    "cell ({a},{s}) count {n} vs uniform {uniform}"
                );
            }
        }
    }

    /// Empirical mutual information (nats) between action and scene labels.
    fn label_mi(plan: &[PlannedClip]) -> f64 {
        let train: Vec<_> = plan.iter().filter(|p| p.split == Split::Train).collect();
        let n = train.len() as f64;
        let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
        let mut pa: HashMap<usize, f64> = HashMap::new();
        let mut ps: HashMap<usize, f64> = HashMap::new();
        for p in &train {
            *joint.entry((p.action_label, p.scene_label)).or_default() += 1.0 / n;
            *pa.entry(p.action_label).or_default() += 1.0 / n;
            *ps.entry(p.scene_label).or_default() += 1.0 / n;
        }
        joint
            .iter()
            .map(|(&(a, s), &p)| p * (p / (pa[&a] * ps[&s])).ln())
            .sum()
    }

    #[test]
    fn label_mutual_information_tracks_rho() {
        let confounded = plan_dataset(&SynthConfig {
            clips_per_class: 100,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!((label_mi(&confounded) - 4.0f64.ln()).abs() < 1e-9);

        let free = plan_dataset(&SynthConfig {
            rho: 0.0,
            clips_per_class: 100,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(label_mi(&free) < 0.05, "MI {} too high", label_mi(&free));
    }

    #[test]
    fn unfamiliar_policy_avoids_dominant_scenes() {
        let cfg = SynthConfig {
            n_scenes: 6,
            open_scene_policy: OpenScenePolicy::Unfamiliar,
            ..tiny_cfg()
        };
        let plan = plan_dataset(&cfg).unwrap();
        for p in plan.iter().filter(|p| p.split == Split::OpenTest) {
            assert!(p.scene_label >= 4, "open clip in dominant scene {}", p.scene_label);
        }

        let impossible = SynthConfig {
            open_scene_policy: OpenScenePolicy::Unfamiliar,
            ..tiny_cfg()
        };
        assert!(matches!(
            plan_dataset(&impossible),
            Err(SynthError::NoUnfamiliarScenes(4))
        ));
    }

    #[test]
    fn generation_is_byte_identical() {
        let cfg = tiny_cfg();
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m1 = generate_dataset(&cfg, d1.path()).unwrap();
        let m2 = generate_dataset(&cfg, d2.path()).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(
            std::fs::read(d1.path().join("manifest.toml")).unwrap(),
            std::fs::read(d2.path().join("manifest.toml")).unwrap()
        );
        for rec in &m1.clips {
            assert_eq!(
                std::fs::read(d1.path().join(&rec.path)).unwrap(),
                std::fs::read(d2.path().join(&rec.path)).unwrap(),
                "clip {} differs",
                rec.clip_id
            );
        }
        // The emitted manifest passes its own eager validation.
        let loaded = crate::dataio::load_manifest(&d1.path().join("manifest.toml")).unwrap();
        assert_eq!(loaded, m1);
    }
}
