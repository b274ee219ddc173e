//! `soar` — reproducible scene-debiased open-set action recognition
//! experiments on synthetic video.
//!
//! Commands map 1:1 onto pipeline stages (synth, train, infer, eval, bias),
//! plus `plot` for figures and `all` for the full ablation sweep. Every
//! artifact embeds the hash of the effective configuration, so stages refuse
//! to mix outputs from different configs.

mod plot;

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use soar_core::config::ExperimentConfig;
use soar_core::dataio::{PredictionDump, Split};
use soar_core::experiment::{
    run_all, run_bias, run_eval, run_infer, run_synth, run_train, ArmArtifacts, BiasReport,
    BiasScenario, ExperimentPaths, MetricsReport,
};
use soar_core::trainer::Arm;

#[derive(Parser)]
#[command(
    name = "soar",
    version,
    about = "Scene-debiased open-set action recognition on synthetic video"
)]
struct Cli {
    /// Experiment configuration file (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the experiment seed (drives dataset and training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the training arm: softmax, edl, edl+adrecon, edl+adascls, full.
    #[arg(long, global = true)]
    arm: Option<String>,
    /// Override the number of bias-protocol subsets.
    #[arg(long, global = true)]
    subsets: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic biased-video dataset.
    Synth,
    /// Train the configured arm and save its checkpoint.
    Train,
    /// Dump per-clip predictions for every split from the checkpoint.
    Infer,
    /// Compute the open-set metrics report from the dumps.
    Eval,
    /// Run both scene-bias scenarios on the dumps.
    Bias,
    /// Render bias-curve and uncertainty-histogram plots from artifacts.
    Plot,
    /// Full pipeline for every arm: synth, then train/infer/eval/bias each.
    All,
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.synth.master_seed = seed;
    }
    if let Some(arm) = &cli.arm {
        cfg.train.arm = arm.parse().map_err(anyhow::Error::msg)?;
    }
    if let Some(k) = cli.subsets {
        cfg.bias.subsets = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn limit_workers() -> Result<()> {
    if let Ok(v) = std::env::var("SOAR_NUM_WORKERS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .context("SOAR_NUM_WORKERS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing the worker pool")?;
    }
    Ok(())
}

fn print_report(report: &MetricsReport) {
    println!("arm {}  config {}  seed {}", report.arm, report.config_hash, report.seed);
    println!("  openness           {:.4}", report.openness);
    println!("  auc                {:.4}", report.auc);
    println!("  far@tpr{:.2}        {:.4}", report.tpr_target, report.far_at_tpr);
    println!("  tpr@far{:.2}        {:.4}", report.far_target, report.tpr_at_far);
    println!(
        "  open maF1          {:.4} (variance {:.6}, tau {:.4})",
        report.open_maf1, report.open_maf1_variance, report.maf1_tau
    );
    println!("  sym KLD            {:.4}", report.sym_kld);
    println!("  cka vs scene feat  {:.4}", report.cka_scene);
}

fn print_bias(report: &BiasReport) {
    println!(
        "arm {}  scenario {}  |slope| {:.4}  variance {:.6}  pearson {:.3}",
        report.arm, report.scenario, report.abs_slope, report.variance, report.pearson_r
    );
}

/// Render plots for one arm; returns the files written.
fn plot_arm(cfg: &ExperimentConfig, paths: &ExperimentPaths, arm: Arm) -> Result<Vec<PathBuf>> {
    let plot_dir = paths.arm_dir(arm).join("plots");
    fs::create_dir_all(&plot_dir)
        .with_context(|| format!("creating {}", plot_dir.display()))?;
    let mut written = Vec::new();

    for scenario in [BiasScenario::VaryClosed, BiasScenario::VaryOpen] {
        let src = paths.bias_report_path(arm, scenario);
        let report = BiasReport::load(&src)
            .with_context(|| format!("reading {}; run `soar bias` first", src.display()))?;
        let dst = plot_dir.join(format!("bias_{}.png", scenario.as_str()));
        plot::line_chart(&dst, &report.points, report.slope, report.intercept)?;
        written.push(dst);
    }

    let closed = PredictionDump::load(&paths.dump_path(arm, Split::ClosedTest))
        .context("loading closed-test dump; run `soar infer` first")?;
    let open = PredictionDump::load(&paths.dump_path(arm, Split::OpenTest))
        .context("loading open-test dump; run `soar infer` first")?;
    let u_closed: Vec<f64> = closed.rows.iter().map(|r| r.uncertainty).collect();
    let u_open: Vec<f64> = open.rows.iter().map(|r| r.uncertainty).collect();
    let bins = cfg.eval.kld_bins;
    let dst = plot_dir.join("uncertainty_hist.png");
    plot::uncertainty_histogram(&dst, &u_closed, &u_open, bins)?;
    written.push(dst);

    // Numeric companion so nothing depends on reading pixels.
    let mut data = String::new();
    writeln!(data, "config_hash = \"{}\"", closed.config_hash)?;
    writeln!(data, "seed = {}", closed.seed)?;
    writeln!(data, "arm = \"{}\"", arm)?;
    writeln!(data, "bins = {bins}")?;
    writeln!(data, "closed_fractions = {:?}", fractions(&u_closed, bins))?;
    writeln!(data, "open_fractions = {:?}", fractions(&u_open, bins))?;
    let data_path = plot_dir.join("uncertainty_hist.toml");
    fs::write(&data_path, data)
        .with_context(|| format!("writing {}", data_path.display()))?;
    written.push(data_path);
    Ok(written)
}

fn fractions(values: &[f64], bins: usize) -> Vec<f64> {
    plot::bin_unit_interval(values, bins)
        .into_iter()
        .map(|c| c as f64 / values.len() as f64)
        .collect()
}

/// One aligned row per arm, mirroring the ablation-table layout.
fn summary_table(results: &[ArmArtifacts]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>8} {:>10} {:>10} {:>10} {:>9} {:>9} {:>13} {:>12}\n",
        "arm", "auc", "far@tpr", "tpr@far", "open_maf1", "sym_kld", "cka", "|slope|closed", "|slope|open"
    ));
    for a in results {
        let r = &a.report;
        out.push_str(&format!(
            "{:<14} {:>8.4} {:>10.4} {:>10.4} {:>10.4} {:>9.4} {:>9.4} {:>13.4} {:>12.4}\n",
            r.arm,
            r.auc,
            r.far_at_tpr,
            r.tpr_at_far,
            r.open_maf1,
            r.sym_kld,
            r.cka_scene,
            a.bias_vary_closed.abs_slope,
            a.bias_vary_open.abs_slope,
        ));
    }
    out
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    limit_workers()?;
    let cfg = effective_config(&cli)?;
    let hash = cfg.hash()?;
    let paths = ExperimentPaths::new(&cli.out);

    let outcome = || -> Result<()> {
        match cli.command {
            Command::Synth => {
                let manifest = run_synth(&cfg, &paths)?;
                println!(
                    "dataset at {}: {} train, {} closed-test, {} open-test clips",
                    paths.dataset_dir().display(),
                    manifest.split(Split::Train).count(),
                    manifest.split(Split::ClosedTest).count(),
                    manifest.split(Split::OpenTest).count(),
                );
            }
            Command::Train => {
                run_train(&cfg, &paths, |e| println!("{e}"))?;
                println!(
                    "checkpoint at {}",
                    paths.checkpoint_dir(cfg.train.arm).display()
                );
            }
            Command::Infer => {
                run_infer(&cfg, &paths)?;
                for split in [Split::Train, Split::ClosedTest, Split::OpenTest] {
                    println!("wrote {}", paths.dump_path(cfg.train.arm, split).display());
                }
            }
            Command::Eval => {
                let report = run_eval(&cfg, &paths)?;
                print_report(&report);
                println!("report at {}", paths.report_path(cfg.train.arm).display());
            }
            Command::Bias => {
                let (closed, open) = run_bias(&cfg, &paths)?;
                print_bias(&closed);
                print_bias(&open);
            }
            Command::Plot => {
                let mut any = false;
                for arm in Arm::ALL {
                    if !paths.arm_dir(arm).exists() {
                        continue;
                    }
                    any = true;
                    for file in plot_arm(&cfg, &paths, arm)? {
                        println!("wrote {}", file.display());
                    }
                }
                if !any {
                    bail!(
                        "no arm artifacts under {}; run the pipeline first",
                        paths.root.display()
                    );
                }
            }
            Command::All => {
                let results = run_all(&cfg, &paths, &Arm::ALL, |line| println!("{line}"))?;
                for arm in Arm::ALL {
                    plot_arm(&cfg, &paths, arm)?;
                }
                let table = summary_table(&results);
                print!("{table}");
                let summary_path = paths.root.join("summary.txt");
                fs::write(&summary_path, format!("# config {hash}\n{table}"))
                    .with_context(|| format!("writing {}", summary_path.display()))?;
                println!("summary at {}", summary_path.display());
            }
        }
        Ok(())
    }();
    outcome.with_context(|| format!("command failed under config {hash}"))
}
