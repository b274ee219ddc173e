//! Config-driven orchestration: each pipeline stage reads and writes
//! artifacts under one experiment directory, so any stage can be re-run
//! in isolation and two runs with the same config are byte-comparable.
//!
//! Layout under the experiment root:
//!
//! ```text
//! dataset/                 clips, scene features, manifest.toml
//! arms/<arm>/checkpoint/   trained parameters + params.toml
//! arms/<arm>/train_log.txt per-epoch losses
//! arms/<arm>/dumps/        train / closed_test / open_test predictions
//! arms/<arm>/report.toml   metrics report
//! arms/<arm>/bias_vary_closed.toml, bias_vary_open.toml
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biasprobe::{balanced_subsets, bias_curve, scene_distance, BiasCurve, BiasProbeError};
use crate::config::{ConfigError, ExperimentConfig};
use crate::dataio::{load_manifest, DataError, DatasetManifest, PredictionDump, Split};
use crate::netcore::checkpoint::{load_checkpoint, save_checkpoint, CheckpointInfo};
use crate::netcore::NetError;
use crate::osarmetrics::{
    auc, cka, far_at_tpr, open_maf1, openness, sym_kld, tpr_at_far, MetricError, OpenMaF1Config,
    ScoredSample,
};
use crate::synthgen::{generate_dataset, SynthError};
use crate::trainer::{infer, load_train_set, train, Arm, EpochLog, TrainError, TrainOutcome};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("synth: {0}")]
    Synth(#[from] SynthError),
    #[error("dataio: {0}")]
    Data(#[from] DataError),
    #[error("trainer: {0}")]
    Train(#[from] TrainError),
    #[error("netcore: {0}")]
    Net(#[from] NetError),
    #[error("osarmetrics: {0}")]
    Metric(#[from] MetricError),
    #[error("biasprobe: {0}")]
    Bias(#[from] BiasProbeError),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| ExperimentError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Locations of every artifact, derived from one root directory.
#[derive(Debug, Clone)]
pub struct ExperimentPaths {
    pub root: PathBuf,
}

impl ExperimentPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ExperimentPaths { root: root.into() }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset_dir().join("manifest.toml")
    }

    pub fn arm_dir(&self, arm: Arm) -> PathBuf {
        self.root.join("arms").join(arm.as_str())
    }

    pub fn checkpoint_dir(&self, arm: Arm) -> PathBuf {
        self.arm_dir(arm).join("checkpoint")
    }

    pub fn train_log_path(&self, arm: Arm) -> PathBuf {
        self.arm_dir(arm).join("train_log.txt")
    }

    pub fn dump_path(&self, arm: Arm, split: Split) -> PathBuf {
        self.arm_dir(arm)
            .join("dumps")
            .join(format!("{}.dump", split.as_str()))
    }

    pub fn report_path(&self, arm: Arm) -> PathBuf {
        self.arm_dir(arm).join("report.toml")
    }

    pub fn bias_report_path(&self, arm: Arm, scenario: BiasScenario) -> PathBuf {
        self.arm_dir(arm)
            .join(format!("bias_{}.toml", scenario.as_str()))
    }
}

/// Generate the dataset (unconditionally; generation is deterministic, so
/// overwriting an existing dataset of the same config is a no-op byte-wise).
pub fn run_synth(
    cfg: &ExperimentConfig,
    paths: &ExperimentPaths,
) -> Result<DatasetManifest, ExperimentError> {
    let dir = paths.dataset_dir();
    fs::create_dir_all(&dir).map_err(|source| ExperimentError::Io {
        path: dir.clone(),
        source,
    })?;
    Ok(generate_dataset(&cfg.synth, &dir)?)
}

/// Load the dataset if present, generate it otherwise.
pub fn ensure_dataset(
    cfg: &ExperimentConfig,
    paths: &ExperimentPaths,
) -> Result<DatasetManifest, ExperimentError> {
    if paths.manifest_path().exists() {
        Ok(load_manifest(&paths.manifest_path())?)
    } else {
        run_synth(cfg, paths)
    }
}

/// Train the configured arm, save its checkpoint and per-epoch loss log.
pub fn run_train(
    cfg: &ExperimentConfig,
    paths: &ExperimentPaths,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, ExperimentError> {
    cfg.validate()?;
    let manifest = ensure_dataset(cfg, paths)?;
    let set = load_train_set(&manifest, &paths.dataset_dir(), &cfg.train)?;
    let outcome = train(&set, &cfg.model, &cfg.train, on_epoch)?;

    let hash = cfg.hash()?;
    let arm = cfg.train.arm;
    save_checkpoint(
        &paths.checkpoint_dir(arm),
        &outcome.params,
        &CheckpointInfo {
            seed: cfg.train.seed,
            config_hash: hash.clone(),
            epoch: cfg.train.epochs - 1,
            arm: arm.as_str().to_string(),
        },
    )?;

    let mut log_text = format!(
        "# config {hash} seed {} arm {}\n",
        cfg.train.seed, arm
    );
    for entry in &outcome.log {
        log_text.push_str(&format!("{entry}\n"));
    }
    write_text(&paths.train_log_path(arm), &log_text)?;
    Ok(outcome)
}

/// Run the checkpointed model over all three splits and save the dumps.
pub fn run_infer(
    cfg: &ExperimentConfig,
    paths: &ExperimentPaths,
) -> Result<(), ExperimentError> {
    let arm = cfg.train.arm;
    let (params, info) = load_checkpoint(&paths.checkpoint_dir(arm))?;
    let hash = cfg.hash()?;
    if info.config_hash != hash {
        return Err(ExperimentError::Invalid(format!(
            "checkpoint at {} was trained under config {}, current config is {hash}",
            paths.checkpoint_dir(arm).display(),
            info.config_hash
        )));
    }
    let manifest = load_manifest(&paths.manifest_path())?;
    for split in [Split::Train, Split::ClosedTest, Split::OpenTest] {
        let dump = infer(
            &params,
            &manifest,
            &paths.dataset_dir(),
            split,
            arm,
            &hash,
            cfg.train.seed,
        )?;
        let path = paths.dump_path(arm, split);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| ExperimentError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        dump.save(&path)?;
    }
    Ok(())
}

/// The metrics report: every headline open-set number for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub seed: u64,
    pub arm: String,
    /// Openness of the closed+open combination actually evaluated.
    pub openness: f64,
    /// Known-vs-unknown separation by uncertainty (higher is better).
    pub auc: f64,
    pub tpr_target: f64,
    /// False acceptance rate at `tpr_target` recall (lower is better).
    pub far_at_tpr: f64,
    pub far_target: f64,
    /// Known recall at `far_target` false acceptance (higher is better).
    pub tpr_at_far: f64,
    /// Unknown-decision threshold: maximal training uncertainty.
    pub maf1_tau: f64,
    pub open_maf1: f64,
    pub open_maf1_variance: f64,
    /// Symmetric KL divergence between closed and open uncertainties.
    pub sym_kld: f64,
    /// Linear CKA between pooled features and scene features (closed test);
    /// lower means the representation carries less scene information.
    pub cka_scene: f64,
}

fn scored_samples(closed: &PredictionDump, open: &PredictionDump) -> Vec<ScoredSample> {
    closed
        .rows
        .iter()
        .map(|r| ScoredSample::new(1.0 - r.uncertainty, true))
        .chain(
            open.rows
                .iter()
                .map(|r| ScoredSample::new(1.0 - r.uncertainty, false)),
        )
        .collect()
}

fn scene_feature_rows(dump: &PredictionDump, what: &str) -> Result<Vec<Vec<f64>>, ExperimentError> {
    dump.rows
        .iter()
        .map(|r| {
            r.scene_feature.clone().ok_or_else(|| {
                ExperimentError::Invalid(format!(
                    "{what} dump row '{}' has no scene feature; regenerate the dataset \
                     with scene features enabled",
                    r.clip_id
                ))
            })
        })
        .collect()
}

/// Compute the full metrics report from in-memory dumps.
pub fn eval_dumps(
    cfg: &ExperimentConfig,
    train_dump: &PredictionDump,
    closed: &PredictionDump,
    open: &PredictionDump,
) -> Result<MetricsReport, ExperimentError> {
    if closed.rows.is_empty() || open.rows.is_empty() || train_dump.rows.is_empty() {
        return Err(ExperimentError::Invalid(
            "evaluation needs non-empty train, closed and open dumps".into(),
        ));
    }
    let scored = scored_samples(closed, open);
    let auc_v = auc(&scored)?;
    let far = far_at_tpr(&scored, cfg.eval.tpr_target)?;
    let tpr = tpr_at_far(&scored, cfg.eval.far_target)?;

    let c_known = closed.rows[0].probs.len();
    // The unknown-decision threshold is the worst uncertainty the model
    // showed on its own training data.
    let tau = train_dump
        .rows
        .iter()
        .map(|r| r.uncertainty)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut all_rows = closed.rows.clone();
    all_rows.extend(open.rows.iter().cloned());
    let maf1_cfg = OpenMaF1Config {
        ratios: cfg.eval.maf1_ratios.clone(),
        resamples: cfg.eval.maf1_resamples,
        seed: cfg.train.seed,
    };
    let (maf1, maf1_var) = open_maf1(&all_rows, c_known, tau, &maf1_cfg)?;

    let u_closed: Vec<f64> = closed.rows.iter().map(|r| r.uncertainty).collect();
    let u_open: Vec<f64> = open.rows.iter().map(|r| r.uncertainty).collect();
    let kld = sym_kld(&u_closed, &u_open, cfg.eval.kld_bins, cfg.eval.kld_eps)?;

    let feats: Vec<f64> = closed.rows.iter().flat_map(|r| r.feature.iter().copied()).collect();
    let d = closed.rows[0].feature.len();
    let x = Array2::from_shape_vec((closed.rows.len(), d), feats)
        .map_err(|e| ExperimentError::Invalid(format!("ragged feature rows: {e}")))?;
    let scene_rows = scene_feature_rows(closed, "closed_test")?;
    let sd = scene_rows[0].len();
    let y = Array2::from_shape_vec(
        (scene_rows.len(), sd),
        scene_rows.into_iter().flatten().collect(),
    )
    .map_err(|e| ExperimentError::Invalid(format!("ragged scene features: {e}")))?;
    let cka_v = cka(&x, &y)?;

    let mut unknown_classes: Vec<u32> = open.rows.iter().map(|r| r.true_action).collect();
    unknown_classes.sort_unstable();
    unknown_classes.dedup();

    Ok(MetricsReport {
        config_hash: closed.config_hash.clone(),
        seed: closed.seed,
        arm: cfg.train.arm.as_str().to_string(),
        openness: openness(c_known, unknown_classes.len()),
        auc: auc_v,
        tpr_target: cfg.eval.tpr_target,
        far_at_tpr: far,
        far_target: cfg.eval.far_target,
        tpr_at_far: tpr,
        maf1_tau: tau,
        open_maf1: maf1,
        open_maf1_variance: maf1_var,
        sym_kld: kld,
        cka_scene: cka_v,
    })
}

/// Evaluate the configured arm's dumps and write `report.toml`.
pub fn run_eval(
    cfg: &ExperimentConfig,
    paths: &ExperimentPaths,
) -> Result<MetricsReport, ExperimentError> {
    let arm = cfg.train.arm;
    let train_dump = PredictionDump::load(&paths.dump_path(arm, Split::Train))?;
    let closed = PredictionDump::load(&paths.dump_path(arm, Split::ClosedTest))?;
    let open = PredictionDump::load(&paths.dump_path(arm, Split::OpenTest))?;
    let report = eval_dumps(cfg, &train_dump, &closed, &open)?;
    let text = toml::to_string(&report)
        .map_err(|e| ExperimentError::Invalid(format!("cannot serialize report: {e}")))?;
    write_text(&paths.report_path(arm), &text)?;
    Ok(report)
}

/// Which test set is split by scene distance; the other one is held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasScenario {
    /// Closed subsets + the whole open set (known actions, varying scenes).
    VaryClosed,
    /// Open subsets + the whole closed set (unknown actions, varying scenes).
    VaryOpen,
}

impl BiasScenario {
    pub fn as_str(self) -> &'static str {
        match self {
            BiasScenario::VaryClosed => "vary_closed",
            BiasScenario::VaryOpen => "vary_open",
        }
    }
}

/// Serialized form of one bias curve plus its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub config_hash: String,
    pub seed: u64,
    pub arm: String,
    pub scenario: String,
    pub slope: f64,
    pub abs_slope: f64,
    pub intercept: f64,
    pub variance: f64,
    pub pearson_r: f64,
    /// (scene distance, AUC) per subset, in subset order.
    pub points: Vec<(f64, f64)>,
}

impl BiasReport {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| {
            ExperimentError::Invalid(format!("cannot parse bias report {}: {e}", path.display()))
        })
    }
}

/// One scenario of the bias protocol: split `vary` into class-balanced
/// distance-ordered subsets, pair each with the whole `fixed` set, and fit
/// AUC against subset scene distance.
pub fn bias_scenario_curve(
    vary: &PredictionDump,
    fixed: &PredictionDump,
    train_dump: &PredictionDump,
    subsets: usize,
    scenario: BiasScenario,
) -> Result<BiasCurve, ExperimentError> {
    let train_feats = scene_feature_rows(train_dump, "train")?;
    let vary_feats = scene_feature_rows(vary, "varying")?;
    let (dists, _) = scene_distance(&vary_feats, &train_feats)?;
    let labels: Vec<u32> = vary.rows.iter().map(|r| r.true_action).collect();
    let parts = balanced_subsets(&labels, &dists, subsets)?;

    let vary_is_known = scenario == BiasScenario::VaryClosed;
    let fixed_samples: Vec<ScoredSample> = fixed
        .rows
        .iter()
        .map(|r| ScoredSample::new(1.0 - r.uncertainty, !vary_is_known))
        .collect();
    let combos: Vec<(f64, Vec<ScoredSample>)> = parts
        .iter()
        .map(|idxs| {
            let d = idxs.iter().map(|&i| dists[i]).sum::<f64>() / idxs.len() as f64;
            let mut samples = fixed_samples.clone();
            samples.extend(
                idxs.iter()
                    .map(|&i| ScoredSample::new(1.0 - vary.rows[i].uncertainty, vary_is_known)),
            );
            (d, samples)
        })
        .collect();
    Ok(bias_curve(&combos)?)
}

/// Run both scenarios of the bias protocol for the configured arm and write
/// one TOML file per scenario.
pub fn run_bias(
    cfg: &ExperimentConfig,
    paths: &ExperimentPaths,
) -> Result<(BiasReport, BiasReport), ExperimentError> {
    let arm = cfg.train.arm;
    let train_dump = PredictionDump::load(&paths.dump_path(arm, Split::Train))?;
    let closed = PredictionDump::load(&paths.dump_path(arm, Split::ClosedTest))?;
    let open = PredictionDump::load(&paths.dump_path(arm, Split::OpenTest))?;

    let mut out = Vec::with_capacity(2);
    for scenario in [BiasScenario::VaryClosed, BiasScenario::VaryOpen] {
        let (vary, fixed) = match scenario {
            BiasScenario::VaryClosed => (&closed, &open),
            BiasScenario::VaryOpen => (&open, &closed),
        };
        let curve = bias_scenario_curve(vary, fixed, &train_dump, cfg.bias.subsets, scenario)?;
        let report = BiasReport {
            config_hash: closed.config_hash.clone(),
            seed: closed.seed,
            arm: arm.as_str().to_string(),
            scenario: scenario.as_str().to_string(),
            slope: curve.slope,
            abs_slope: curve.slope.abs(),
            intercept: curve.intercept,
            variance: curve.variance,
            pearson_r: curve.pearson_r,
            points: curve.points.clone(),
        };
        let text = toml::to_string(&report)
            .map_err(|e| ExperimentError::Invalid(format!("cannot serialize bias report: {e}")))?;
        write_text(&paths.bias_report_path(arm, scenario), &text)?;
        out.push(report);
    }
    let vary_open = out.pop().unwrap();
    let vary_closed = out.pop().unwrap();
    Ok((vary_closed, vary_open))
}

/// Everything produced for one arm by `run_arm` / `run_all`.
#[derive(Debug, Clone)]
pub struct ArmArtifacts {
    pub arm: Arm,
    pub report: MetricsReport,
    pub bias_vary_closed: BiasReport,
    pub bias_vary_open: BiasReport,
}

/// Train, infer, evaluate and bias-probe one arm (dataset must exist or be
/// generable). `on_event` receives human-readable progress lines.
pub fn run_arm(
    cfg: &ExperimentConfig,
    paths: &ExperimentPaths,
    mut on_event: impl FnMut(&str),
) -> Result<ArmArtifacts, ExperimentError> {
    let arm = cfg.train.arm;
    on_event(&format!("[{arm}] training {} epochs", cfg.train.epochs));
    run_train(cfg, paths, |e| on_event(&format!("[{arm}] {e}")))?;
    on_event(&format!("[{arm}] inferring train/closed/open splits"));
    run_infer(cfg, paths)?;
    let report = run_eval(cfg, paths)?;
    on_event(&format!(
        "[{arm}] auc {:.4}  open maF1 {:.4}  cka {:.4}",
        report.auc, report.open_maf1, report.cka_scene
    ));
    let (bias_vary_closed, bias_vary_open) = run_bias(cfg, paths)?;
    on_event(&format!(
        "[{arm}] bias |slope| closed-vary {:.4}  open-vary {:.4}",
        bias_vary_closed.abs_slope, bias_vary_open.abs_slope
    ));
    Ok(ArmArtifacts {
        arm,
        report,
        bias_vary_closed,
        bias_vary_open,
    })
}

/// Full pipeline: one dataset, then every requested arm end to end.
pub fn run_all(
    cfg: &ExperimentConfig,
    paths: &ExperimentPaths,
    arms: &[Arm],
    mut on_event: impl FnMut(&str),
) -> Result<Vec<ArmArtifacts>, ExperimentError> {
    cfg.validate()?;
    on_event("generating dataset");
    run_synth(cfg, paths)?;
    let mut results = Vec::with_capacity(arms.len());
    for &arm in arms {
        let mut arm_cfg = cfg.clone();
        arm_cfg.train.arm = arm;
        results.push(run_arm(&arm_cfg, paths, &mut on_event)?);
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::PredictionRow;
    use crate::losses::LossWeights;
    use crate::netcore::model::ModelConfig;
    use crate::synthgen::SynthConfig;
    use crate::trainer::TrainConfig;

    /// A configuration small enough to run the whole pipeline in well under
    /// a second per arm.
    fn tiny_config(seed: u64, arm: Arm) -> ExperimentConfig {
        ExperimentConfig {
            synth: SynthConfig {
                height: 16,
                width: 16,
                frames: 8,
                c_known: 2,
                c_open: 1,
                n_scenes: 2,
                clips_per_class: 4,
                sprite_size: 4,
                master_seed: seed,
                ..SynthConfig::default()
            },
            model: ModelConfig {
                widths: [2, 3, 4],
                scene_hidden: 3,
            },
            train: TrainConfig {
                epochs: 2,
                batch_size: 4,
                seed,
                arm,
                weights: LossWeights::default(),
                ..TrainConfig::default()
            },
            eval: crate::config::EvalConfig {
                maf1_ratios: vec![0.5, 1.0],
                maf1_resamples: 2,
                kld_bins: 10,
                ..crate::config::EvalConfig::default()
            },
            bias: crate::config::BiasConfig { subsets: 2 },
        }
    }

    fn synthetic_dump(hash: &str, rows: Vec<PredictionRow>) -> PredictionDump {
        PredictionDump {
            config_hash: hash.to_string(),
            seed: 0,
            rows,
        }
    }

    fn row(id: &str, action: u32, u: f64, probs: Vec<f64>, feat: Vec<f64>) -> PredictionRow {
        PredictionRow {
            clip_id: id.to_string(),
            true_action: action,
            uncertainty: u,
            probs,
            feature: feat.clone(),
            scene_feature: Some(feat),
        }
    }

    #[test]
    fn perfectly_separated_dumps_give_auc_one() {
        let cfg = tiny_config(0, Arm::Edl);
        let train = synthetic_dump(
            "h",
            (0..4)
                .map(|i| row(&format!("t{i}"), i % 2, 0.1, vec![0.7, 0.3], vec![i as f64, 1.0]))
                .collect(),
        );
        let closed = synthetic_dump(
            "h",
            (0..6)
                .map(|i| row(&format!("c{i}"), i % 2, 0.05 + 0.01 * i as f64, vec![0.8, 0.2], vec![i as f64, 2.0]))
                .collect(),
        );
        let open = synthetic_dump(
            "h",
            (0..6)
                .map(|i| row(&format!("o{i}"), 2, 0.9 + 0.01 * i as f64, vec![0.5, 0.5], vec![i as f64, 3.0]))
                .collect(),
        );
        let report = eval_dumps(&cfg, &train, &closed, &open).unwrap();
        assert_eq!(report.auc, 1.0);
        assert_eq!(report.far_at_tpr, 0.0);
        assert_eq!(report.tpr_at_far, 1.0);
        // One unknown class against two knowns.
        assert!((report.openness - (1.0 - (4.0f64 / 5.0).sqrt())).abs() < 1e-12);
        assert!(report.open_maf1 > 0.0);
        assert!(report.sym_kld > 0.0);
    }

    #[test]
    fn tau_comes_from_the_training_dump() {
        let cfg = tiny_config(0, Arm::Edl);
        let train = synthetic_dump(
            "h",
            vec![
                row("t0", 0, 0.3, vec![0.9, 0.1], vec![1.0, 0.0]),
                row("t1", 1, 0.55, vec![0.1, 0.9], vec![0.0, 1.0]),
            ],
        );
        let closed = synthetic_dump(
            "h",
            vec![
                row("c0", 0, 0.2, vec![0.9, 0.1], vec![1.0, 0.1]),
                row("c1", 1, 0.4, vec![0.2, 0.8], vec![0.3, 1.0]),
            ],
        );
        let open = synthetic_dump(
            "h",
            vec![
                row("o0", 2, 0.8, vec![0.5, 0.5], vec![0.5, 0.5]),
                row("o1", 2, 0.9, vec![0.5, 0.5], vec![0.4, 0.6]),
            ],
        );
        let report = eval_dumps(&cfg, &train, &closed, &open).unwrap();
        assert_eq!(report.maf1_tau, 0.55);
        // Every closed u <= tau, every open u > tau: perfect open maF1.
        assert_eq!(report.open_maf1, 1.0);
        assert_eq!(report.open_maf1_variance, 0.0);
    }

    #[test]
    fn bias_scenario_points_match_subset_count_and_distances_increase() {
        // Two known classes, four rows each; distances engineered so the
        // class-balanced split produces near/far subsets.
        let train = synthetic_dump(
            "h",
            vec![
                row("t0", 0, 0.1, vec![1.0, 0.0], vec![1.0, 0.0, 0.0]),
                row("t1", 1, 0.1, vec![0.0, 1.0], vec![0.0, 1.0, 0.0]),
            ],
        );
        let mk = |i: usize, action: u32, mix: f64, u: f64| {
            // Feature rotates from a train feature toward the z axis as
            // `mix` grows, so scene distance grows with `mix`.
            let base = if action == 0 {
                vec![1.0 - mix, 0.0, mix]
            } else {
                vec![0.0, 1.0 - mix, mix]
            };
            row(&format!("c{i}"), action, u, vec![0.5, 0.5], base)
        };
        let closed = synthetic_dump(
            "h",
            vec![
                // Near subset: confident (u well below the open set's 0.5).
                mk(0, 0, 0.0, 0.10),
                mk(1, 0, 0.2, 0.20),
                // Far subset: u above 0.5, indistinguishable from unknowns.
                mk(2, 0, 0.5, 0.52),
                mk(3, 0, 0.8, 0.62),
                mk(4, 1, 0.0, 0.12),
                mk(5, 1, 0.2, 0.22),
                mk(6, 1, 0.5, 0.54),
                mk(7, 1, 0.8, 0.64),
            ],
        );
        let open = synthetic_dump(
            "h",
            (0..4)
                .map(|i| row(&format!("o{i}"), 2, 0.5, vec![0.5, 0.5], vec![0.3, 0.3, 0.9]))
                .collect(),
        );
        let curve =
            bias_scenario_curve(&closed, &open, &train, 2, BiasScenario::VaryClosed).unwrap();
        assert_eq!(curve.points.len(), 2);
        assert!(curve.points[0].0 < curve.points[1].0, "{:?}", curve.points);
        // Near subset has lower uncertainties -> separates better from the
        // fixed open set -> higher AUC; the curve must slope downward.
        assert!(curve.slope < 0.0, "slope {}", curve.slope);
    }

    #[test]
    fn tiny_pipeline_emits_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let paths = ExperimentPaths::new(dir.path());
        let cfg = tiny_config(3, Arm::Full);
        let arts = run_all(&cfg, &paths, &[Arm::Full], |_| {}).unwrap();
        assert_eq!(arts.len(), 1);

        assert!(paths.manifest_path().exists());
        let arm = Arm::Full;
        assert!(paths.checkpoint_dir(arm).join("params.toml").exists());
        assert!(paths.train_log_path(arm).exists());
        for split in [Split::Train, Split::ClosedTest, Split::OpenTest] {
            assert!(paths.dump_path(arm, split).exists(), "{split:?}");
        }
        assert!(paths.report_path(arm).exists());
        assert!(paths
            .bias_report_path(arm, BiasScenario::VaryClosed)
            .exists());
        assert!(paths.bias_report_path(arm, BiasScenario::VaryOpen).exists());

        let report = &arts[0].report;
        assert!((0.0..=1.0).contains(&report.auc));
        assert!(report.sym_kld.is_finite());
        assert!((-1.0..=1.0).contains(&report.cka_scene));
        assert_eq!(report.config_hash, cfg.hash().unwrap());

        // The report on disk round-trips to the in-memory one.
        let text = std::fs::read_to_string(paths.report_path(arm)).unwrap();
        let loaded: MetricsReport = toml::from_str(&text).unwrap();
        assert_eq!(&loaded, report);
    }

    #[test]
    fn rerunning_the_pipeline_is_byte_identical() {
        let run = |root: &Path| {
            let paths = ExperimentPaths::new(root);
            let cfg = tiny_config(5, Arm::EdlAdascls);
            run_all(&cfg, &paths, &[Arm::EdlAdascls], |_| {}).unwrap();
            paths
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let p1 = run(d1.path());
        let p2 = run(d2.path());

        let arm = Arm::EdlAdascls;
        let mut files = vec![
            p1.manifest_path(),
            p1.checkpoint_dir(arm).join("params.toml"),
            p1.checkpoint_dir(arm).join("conv0_w.vtn"),
            p1.train_log_path(arm),
            p1.report_path(arm),
            p1.bias_report_path(arm, BiasScenario::VaryClosed),
            p1.bias_report_path(arm, BiasScenario::VaryOpen),
        ];
        for split in [Split::Train, Split::ClosedTest, Split::OpenTest] {
            files.push(p1.dump_path(arm, split));
        }
        for f1 in files {
            let rel = f1.strip_prefix(&p1.root).unwrap();
            let f2 = p2.root.join(rel);
            let b1 = std::fs::read(&f1).unwrap();
            let b2 = std::fs::read(&f2).unwrap();
            assert_eq!(b1, b2, "artifact differs: {}", rel.display());
        }
    }

    #[test]
    fn stale_checkpoint_is_rejected_by_infer() {
        let dir = tempfile::tempdir().unwrap();
        let paths = ExperimentPaths::new(dir.path());
        let cfg = tiny_config(1, Arm::Edl);
        run_train(&cfg, &paths, |_| {}).unwrap();
        let mut other = cfg.clone();
        other.eval.tpr_target = 0.9; // any config change invalidates the hash
        let err = run_infer(&other, &paths).unwrap_err().to_string();
        assert!(err.contains("trained under config"), "{err}");
    }
}
