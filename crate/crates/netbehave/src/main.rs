//! Command-line front end: `run`, `baseline-compare`, `synth`, `render`,
//! and `dag` subcommands over the library pipeline.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use netbehave::distance::FeatureSet;
use netbehave::pipeline::{self, PipelineConfig, PipelineError};
use netbehave::synth::{self, BehaviorKind};

#[derive(Parser)]
#[command(
    name = "netbehave",
    version,
    about = "Cluster network connections by temporal behavior and profile the samples behind them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a capture directory and write the artifact set.
    Run(RunArgs),
    /// Run sequential and baseline modes on the same input and compare
    /// their mean estimated clustering-error rates.
    BaselineCompare(RunArgs),
    /// Generate labeled synthetic captures for demos and evaluation.
    Synth(SynthArgs),
    /// Re-render heatmaps from connections.csv and clusters.csv in an
    /// existing artifact directory.
    Render(DirArgs),
    /// Rebuild dag.dot from profiles.csv in an existing artifact directory.
    Dag(DirArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Plain-text key = value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Capture file or directory of .pcap/.jsonl captures.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Packets kept per connection.
    #[arg(long)]
    len: Option<usize>,
    /// Minimum packets for a connection to be kept (default: len).
    #[arg(long)]
    min_len: Option<usize>,
    /// N-gram order for the port channels.
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    min_cluster_size: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Channel subset, e.g. ps,in,sp,dp or ps,in.
    #[arg(long)]
    features: Option<String>,
    /// Use the statistical-feature baseline distance instead of sequences.
    #[arg(long)]
    baseline: bool,
    /// PSD bin width in seconds.
    #[arg(long)]
    bin_width: Option<f64>,
    /// Monitored host address(es), comma separated.
    #[arg(long, value_delimiter = ',')]
    localhost: Vec<String>,
    /// sample_id,family CSV.
    #[arg(long)]
    family_labels: Option<PathBuf>,
    /// cluster_id,label CSV (ids 1-based, as in summary.csv).
    #[arg(long)]
    capability_labels: Option<PathBuf>,
    /// Distance-stage worker threads (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl RunArgs {
    fn into_config(self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(input) = self.input {
            cfg.input = input;
        }
        if let Some(out) = self.out {
            cfg.out = out;
        }
        if let Some(len) = self.len {
            cfg.len = len;
        }
        if let Some(min_len) = self.min_len {
            cfg.min_len = Some(min_len);
        }
        if let Some(order) = self.order {
            cfg.order = order;
        }
        if let Some(mcs) = self.min_cluster_size {
            cfg.min_cluster_size = mcs;
        }
        if let Some(k) = self.k {
            cfg.k_nearest_neighbors = k;
        }
        if let Some(features) = self.features {
            cfg.features = FeatureSet::parse(&features)
                .map_err(|e| PipelineError::Config { reason: format!("features: {e}") })?;
        }
        if self.baseline {
            cfg.baseline = true;
        }
        if let Some(bin_width) = self.bin_width {
            cfg.bin_width = bin_width;
        }
        if !self.localhost.is_empty() {
            cfg.localhost = self.localhost.into_iter().collect::<BTreeSet<_>>();
        }
        if let Some(path) = self.family_labels {
            cfg.family_labels = Some(path);
        }
        if let Some(path) = self.capability_labels {
            cfg.capability_labels = Some(path);
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Directory receiving one .jsonl capture per sample plus
    /// ground_truth.csv and families.csv.
    #[arg(long)]
    out: PathBuf,
    /// Behavior kinds to generate (comma separated slugs; default: all).
    #[arg(long, value_delimiter = ',')]
    kinds: Vec<String>,
    /// Connections per kind.
    #[arg(long, default_value_t = 15)]
    per_kind: usize,
    /// Packets per connection.
    #[arg(long, default_value_t = 20)]
    len: usize,
    /// RNG seed; the output is a pure function of it.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct DirArgs {
    /// Existing artifact directory.
    #[arg(long)]
    out: PathBuf,
}

fn run_synth(args: SynthArgs) -> Result<(), Box<dyn std::error::Error>> {
    let kinds: Vec<BehaviorKind> = if args.kinds.is_empty() {
        BehaviorKind::catalog()
    } else {
        args.kinds
            .iter()
            .map(|slug| {
                BehaviorKind::from_slug(slug).ok_or_else(|| {
                    let known: Vec<&str> =
                        BehaviorKind::catalog().iter().map(|k| k.slug()).collect();
                    format!("unknown kind {slug:?}; known kinds: {}", known.join(", "))
                })
            })
            .collect::<Result<_, _>>()?
    };
    let mut batches = Vec::with_capacity(kinds.len());
    for kind in &kinds {
        batches.push(synth::generate(kind, args.per_kind, args.len, args.seed)?);
    }
    synth::write_batch_dir(&args.out, &batches)?;
    let connections: usize = batches.iter().map(|b| b.ground_truth.len()).sum();
    println!(
        "wrote {connections} connections of {} kind(s) to {}",
        kinds.len(),
        args.out.display()
    );
    println!("analyze with: netbehave run --input {} --localhost {} --out <dir>",
        args.out.display(),
        synth::SYNTH_LOCALHOST
    );
    Ok(())
}

fn real_main() -> Result<(), Box<dyn std::error::Error>> {
    match Cli::parse().command {
        Command::Run(args) => {
            let cfg = args.into_config()?;
            let report = pipeline::run_pipeline(&cfg)?;
            println!(
                "{} connections -> {} clusters, {} noise; mean estimated error rate {:.4}",
                report.connections, report.n_clusters, report.noise, report.mean_error_rate
            );
            println!("artifacts in {}", report.out_dir.display());
        }
        Command::BaselineCompare(args) => {
            let cfg = args.into_config()?;
            let report = pipeline::run_baseline_comparison(&cfg)?;
            println!(
                "sequential: {} clusters, mean estimated error rate {:.4}",
                report.sequential.n_clusters, report.sequential.mean_error_rate
            );
            println!(
                "baseline:   {} clusters, mean estimated error rate {:.4}",
                report.baseline.n_clusters, report.baseline.mean_error_rate
            );
            println!("difference (sequential - baseline): {:.4}", report.difference);
            println!("comparison written to {}", cfg.out.join("comparison.csv").display());
        }
        Command::Synth(args) => run_synth(args)?,
        Command::Render(args) => {
            let svgs = pipeline::rerender_heatmaps(&args.out)?;
            println!("re-rendered {svgs} heatmaps in {}", args.out.join("heatmaps").display());
        }
        Command::Dag(args) => {
            pipeline::rebuild_dag(&args.out)?;
            println!("rebuilt {}", args.out.join("dag.dot").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
