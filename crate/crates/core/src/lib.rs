//! Scene-debiased open-set action recognition on synthetic video.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`dataio`] — tensor/manifest/prediction-dump persistence.
//! * [`synthgen`] — procedural biased-video generation with a
//!   controllable action/scene correlation.
//! * [`background`] — temporal-median background estimation.
//! * [`netcore`] — the trainable network (3D-conv backbone, evidential
//!   head, adversarial decoder and scene head, gradient reversal) with
//!   hand-rolled forward/backward passes.
//! * [`losses`] — the evidential, reconstruction, scene-classification
//!   and uncertainty-guide objectives.
//! * [`trainer`] — the deterministic SGD training loop and inference dumps.
//! * [`osarmetrics`] — open-set evaluation metrics (AUC, FAR@95, TPR@10,
//!   open macro-F1, openness, symmetric KLD, linear CKA).
//! * [`biasprobe`] — the scene-bias quantification protocol (scene
//!   distances, class-balanced distance-ordered subsets, slope/variance/
//!   Pearson summaries).
//! * [`experiment`] — config-driven orchestration used by the CLI.

pub mod background;
pub mod biasprobe;
pub mod config;
pub mod dataio;
pub mod experiment;
pub mod losses;
pub mod netcore;
pub mod osarmetrics;
pub mod seeding;
pub mod synthgen;
pub mod trainer;
