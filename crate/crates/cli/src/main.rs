//! `dapnet`: train, evaluate, ablate, generate synthetic corpora and summarize
//! reports. Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
//! Failures print one JSON line `{"error": kind, "message": ...}` to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dapnet_core::data::{generate_synthetic_dataset, load_manifest, Domain, Style, SynthSpec};
use dapnet_core::evaluation::{
    emit_overlays, evaluate_network, load_test_samples, summarize_runs, write_summary_table,
    MetricsReport, SlidingWindow,
};
use dapnet_core::training::{load_checkpoint, run_ablation, train, TrainOptions};
use dapnet_core::{load_config_with_overrides, Error, ExperimentConfig};

#[derive(Parser)]
#[command(name = "dapnet", version, about = "Dual-level adversarial stain adaptation for gland segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output root; artifacts go to `<out>/<run-id>/`.
    #[arg(long, env = "DAPNET_OUT")]
    out: Option<PathBuf>,
    /// Run directory name (default: `<command>-<unix time>-<pid>`).
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// `key=value` override, applied after the file and before validation.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant; writes logs, checkpoints and the resolved config.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written under the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test splits.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config to evaluate under (default: the one stored in the checkpoint).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, value_enum, default_value_t = Which::Both)]
        domain: Which,
        /// Also write image/ground-truth/prediction panels.
        #[arg(long)]
        overlays: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate all four variants on the same data order.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic stained corpus with masks and a manifest.
    SynthGen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        style: String,
        /// Share gland layouts across styles for the same seed and index.
        #[arg(long)]
        paired: bool,
        /// Number of trailing images assigned to the test split.
        #[arg(long, default_value_t = 0)]
        test: usize,
        /// Domain tag written to the manifest (default: stainA source, stainB target).
        #[arg(long, value_enum)]
        domain: Option<DomainArg>,
        #[command(flatten)]
        common: Common,
    },
    /// Summarize MetricsReport JSON files as mean ± SD per dataset and variant.
    Report {
        /// Report files, or directories searched recursively for `*.json` reports.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Source,
    Target,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Source,
    Target,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_usage() { 2 } else { 1 },
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 1,
        kind: "io",
        message: format!("{}: {e}", path.display()),
    }
}

fn run_dir(common: &Common, command: &str, fallback_root: Option<&Path>) -> Result<PathBuf, Failure> {
    let root = common
        .out
        .clone()
        .or_else(|| fallback_root.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let id = common.run_id.clone().unwrap_or_else(|| {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        format!("{command}-{secs}-{}", std::process::id())
    });
    let dir = root.join(id);
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    Ok(dir)
}

fn freeze(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    cfg.save(&dir.join("config.cfg")).map_err(Failure::from)
}

fn write_reports(reports: &[MetricsReport], dir: &Path) -> Result<(), Failure> {
    for r in reports {
        r.save_json(&dir.join(format!("{}.json", r.dataset)))?;
        r.save_csv(&dir.join(format!("{}.csv", r.dataset)))?;
    }
    let mut stdout = std::io::stdout();
    write_summary_table(reports, &mut stdout).map_err(|e| io_failure(dir, e))
}

fn cmd_train(config: ConfigArgs, common: Common, resume: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load_config_with_overrides(&config.config, &config.overrides)?;
    let dir = run_dir(&common, "train", Some(cfg.output_dir.as_path()))?;
    freeze(&cfg, &dir)?;
    if let Some(p) = &resume {
        if !p.exists() {
            return Err(Error::CheckpointNotFound(p.clone()).into());
        }
    }
    let outcome = train(
        &cfg,
        &dir,
        TrainOptions {
            resume,
            on_epoch: Some(Box::new(|s| {
                eprintln!(
                    "epoch {:>4}  lr {:.3e}  seg_ce {:.4}  seg_dice {:.4}  d_img {:.4}  d_feat {:.4}  total_g {:.4}",
                    s.epoch, s.lr, s.mean.seg_ce, s.mean.seg_dice, s.mean.d_img, s.mean.d_feat, s.mean.total_g
                )
            })),
            ..TrainOptions::default()
        },
    )?;
    println!("{}", outcome.checkpoint.display());
    Ok(())
}

fn cmd_evaluate(
    checkpoint: PathBuf,
    config: Option<PathBuf>,
    overrides: Vec<String>,
    which: Which,
    overlays: bool,
    common: Common,
) -> Result<(), Failure> {
    let ckpt = load_checkpoint(&checkpoint)?;
    let cfg = match &config {
        Some(path) => load_config_with_overrides(path, &overrides)?,
        None => {
            let mut cfg = ExperimentConfig::parse_unvalidated(&ckpt.config_text)?;
            for o in &overrides {
                cfg.apply_override(o)?;
            }
            cfg.validate()?;
            cfg
        }
    };
    let net = ckpt.generator(cfg.channel_width_scale)?;
    let dir = run_dir(&common, "evaluate", Some(cfg.output_dir.as_path()))?;
    freeze(&cfg, &dir)?;

    let mut wanted = Vec::new();
    if matches!(which, Which::Source | Which::Both) {
        wanted.push((Domain::Source, &cfg.source_manifest, "source_test"));
    }
    if matches!(which, Which::Target | Which::Both) {
        wanted.push((Domain::Target, &cfg.target_manifest, "target_test"));
    }
    let mut reports = Vec::new();
    for (domain, manifest, name) in wanted {
        let samples = load_test_samples(&load_manifest(manifest)?, domain)?;
        reports.push(evaluate_network(&net, &samples, &cfg, name)?);
        if overlays {
            let predictor = SlidingWindow {
                model: &net,
                window: cfg.window(),
                stride: cfg.stride(),
            };
            emit_overlays(&predictor, &samples, cfg.threshold, &dir.join("overlays").join(name))?;
        }
    }
    write_reports(&reports, &dir)
}

fn cmd_ablate(config: ConfigArgs, common: Common) -> Result<(), Failure> {
    let cfg = load_config_with_overrides(&config.config, &config.overrides)?;
    let dir = run_dir(&common, "ablate", Some(cfg.output_dir.as_path()))?;
    freeze(&cfg, &dir)?;
    let runs = run_ablation(&cfg, &dir)?;
    let path = dir.join("ablation.json");
    let text = serde_json::to_string_pretty(&runs).map_err(|e| Failure::from(Error::from(e)))?;
    std::fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
    let reports: Vec<MetricsReport> = runs
        .into_iter()
        .flat_map(|r| [r.source, r.target])
        .collect();
    let mut stdout = std::io::stdout();
    write_summary_table(&reports, &mut stdout).map_err(|e| io_failure(&dir, e))
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    seed: u64,
    n: usize,
    size: usize,
    style: String,
    paired: bool,
    test: usize,
    domain: Option<DomainArg>,
    common: Common,
) -> Result<(), Failure> {
    let style: Style = style.parse()?;
    let mut spec = SynthSpec::new(seed, n, size, style, paired);
    spec.n_test = test;
    if let Some(d) = domain {
        spec.domain = match d {
            DomainArg::Source => Domain::Source,
            DomainArg::Target => Domain::Target,
        };
    }
    let dir = run_dir(&common, "synth", None)?;
    let manifest = generate_synthetic_dataset(&dir, &spec)?;
    let c = manifest.counts();
    eprintln!(
        "wrote {} images (train {}, test {})",
        manifest.entries.len(),
        c.source_train + c.target_train,
        c.source_test + c.target_test
    );
    println!("{}", dir.join("manifest.csv").display());
    Ok(())
}

fn collect_reports(path: &Path, out: &mut Vec<MetricsReport>) -> Result<(), Failure> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| io_failure(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                collect_reports(&p, out)?;
            } else if p.extension().is_some_and(|x| x == "json") {
                // Other JSON artifacts in run directories are skipped.
                if let Ok(r) = MetricsReport::load_json(&p) {
                    out.push(r);
                }
            }
        }
        Ok(())
    } else {
        out.push(MetricsReport::load_json(path)?);
        Ok(())
    }
}

fn cmd_report(inputs: Vec<PathBuf>, common: Common) -> Result<(), Failure> {
    let mut reports = Vec::new();
    for p in &inputs {
        if !p.exists() {
            return Err(Failure {
                code: 2,
                kind: "usage",
                message: format!("no such report path: {}", p.display()),
            });
        }
        collect_reports(p, &mut reports)?;
    }
    let mut groups: Vec<((String, String), Vec<MetricsReport>)> = Vec::new();
    for r in reports {
        let key = (r.dataset.clone(), r.variant.to_string());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    let dir = run_dir(&common, "report", None)?;
    let mut summaries = Vec::new();
    println!("dataset\tvariant\truns\tacc\tiou");
    for ((dataset, variant), group) in &groups {
        if group.len() < 2 {
            let r = &group[0];
            println!("{dataset}\t{variant}\t1\t{:.4}\t{:.4}", r.pixel_accuracy, r.iou);
            continue;
        }
        let s = summarize_runs(group)?;
        println!("{dataset}\t{variant}\t{}\t{}\t{}", s.runs, s.pixel_accuracy, s.iou);
        summaries.push(s);
    }
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summaries).map_err(|e| Failure::from(Error::from(e)))?;
    std::fs::write(&path, text).map_err(|e| io_failure(&path, e))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train {
            config,
            common,
            resume,
        } => cmd_train(config, common, resume),
        Command::Evaluate {
            checkpoint,
            config,
            overrides,
            domain,
            overlays,
            common,
        } => cmd_evaluate(checkpoint, config, overrides, domain, overlays, common),
        Command::Ablate { config, common } => cmd_ablate(config, common),
        Command::SynthGen {
            seed,
            n,
            size,
            style,
            paired,
            test,
            domain,
            common,
        } => cmd_synth(seed, n, size, style, paired, test, domain, common),
        Command::Report { inputs, common } => cmd_report(inputs, common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not failures.
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", serde_json::json!({"error": "usage", "message": first}));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", serde_json::json!({"error": f.kind, "message": f.message}));
            ExitCode::from(f.code)
        }
    }
}
