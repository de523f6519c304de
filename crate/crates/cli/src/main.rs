//! `mvp`: run sensor-aware test-time inference experiments.
//!
//! Exit codes: 0 success, 1 invalid input (bad flags, config, or values),
//! 2 failure while running.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use mvp_core::csa::{mean_latency, CsaVariant};
use mvp_core::harness::{
    build_provider, export_report, reference_source_stats, run_benchmark_with, run_suite_with,
    ExperimentConfig, ExperimentReport, ProviderKind, RunOutput, SweepAxis, Workload,
};
use mvp_core::provider::format::save_source_stats;
use mvp_core::provider::{RecordingProvider, SyntheticProvider};

#[derive(Parser)]
#[command(
    name = "mvp",
    version,
    about = "Sensor-aware multi-view test-time inference simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method on every scene and light.
    Bench(Common),
    /// Sweep one parameter of the selection-then-vote pipeline.
    Sweep(SweepArgs),
    /// Build source statistics from the reference set and write an MVPS file.
    Stats(Common),
    /// Run the synthetic encoder over a benchmark and write every view to an MVPF file.
    ExportEmbeddings(Common),
    /// Print capture latency of the candidate selection policies.
    Latency(LatencyArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core), overriding the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (bench, sweep) or file (stats, export-embeddings).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of scenes, overriding the config.
    #[arg(long)]
    scenes: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Parameter to sweep: k, gamma, layers, m or csa. A comma-separated
    /// list sweeps each axis over its standard values in one pass.
    #[arg(long, value_delimiter = ',', required = true)]
    axis: Vec<String>,
    /// Comma-separated values for a single axis; a standard list is used
    /// when omitted.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
}

#[derive(Args)]
struct LatencyArgs {
    /// Experiment config supplying the grid.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Policy: full, csa1, csa2 or csa3. All policies when omitted.
    #[arg(long)]
    csa: Option<String>,
    /// Candidate count M; the policy's standard value when omitted.
    #[arg(long)]
    m: Option<usize>,
    /// Seeded draws averaged for random policies.
    #[arg(long, default_value_t = 10_000)]
    draws: u64,
    /// Seed for the random policies; the config seed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Accepted for uniformity; latency runs single-threaded.
    #[arg(long)]
    workers: Option<usize>,
    /// Also write the table as CSV to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.exposure.seed = 0;
        cfg.pipeline.seed = 0;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(n) = common.scenes {
        cfg.scenes.n_scenes = n;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> Option<PathBuf> {
    common.out.clone().or_else(|| cfg.output.dir.clone())
}

fn print_summary(report: &ExperimentReport) {
    println!(
        "{:<18} {:>8} {:>10} {:>12} {:>14}",
        "method", "n", "accuracy", "capture_s", "compute_ms"
    );
    for m in &report.methods {
        println!(
            "{:<18} {:>8} {:>10.4} {:>12.4} {:>14.1}",
            m.method.name(),
            m.n,
            m.accuracy,
            m.capture_latency_s,
            m.compute_latency_ms
        );
    }
    println!("captures performed: {}", report.captures_performed);
    for note in &report.notes {
        println!("note: {note}");
    }
}

fn finish(out: &RunOutput, dir: Option<PathBuf>) -> anyhow::Result<()> {
    if let Some(dir) = dir {
        for p in export_report(&dir, &out.report, Some(&out.timing))? {
            eprintln!("wrote {}", p.display());
        }
    }
    eprintln!("wall time {:.2} s", out.timing.wall_s);
    Ok(())
}

fn bench(common: &Common) -> anyhow::Result<()> {
    let work = Workload::new(load_config(common)?)?;
    let provider = build_provider(&work.config)?;
    let source = mvp_core::harness::resolve_source_stats(&work.config, provider.as_ref())?;
    let out = run_benchmark_with(&work, provider.as_ref(), &source)?;
    print_summary(&out.report);
    finish(&out, out_dir(common, &work.config))
}

fn sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let axes = args
        .axis
        .iter()
        .map(|a| a.parse::<SweepAxis>())
        .collect::<Result<Vec<_>, _>>()?;
    if axes.len() > 1 && !args.values.is_empty() {
        bail!(mvp_core::Error::InvalidParam(
            "--values needs a single --axis".into()
        ));
    }
    let sweeps = axes
        .iter()
        .map(|&axis| {
            let values = if args.values.is_empty() {
                axis.default_values()
            } else {
                args.values
                    .iter()
                    .map(|v| axis.parse_value(v))
                    .collect::<Result<Vec<_>, _>>()?
            };
            Ok((axis, values))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let work = Workload::new(load_config(&args.common)?)?;
    let provider = build_provider(&work.config)?;
    let source = mvp_core::harness::resolve_source_stats(&work.config, provider.as_ref())?;
    let out = run_suite_with(&work, provider.as_ref(), &source, &[], &sweeps)?;
    println!(
        "{:<8} {:>10} {:>10} {:>12} {:>14}",
        "axis", "value", "accuracy", "capture_s", "compute_ms"
    );
    for r in &out.report.ablation {
        println!(
            "{:<8} {:>10} {:>10.4} {:>12.4} {:>14.1}",
            r.axis, r.value, r.accuracy, r.capture_latency_s, r.compute_latency_ms
        );
    }
    println!("captures performed: {}", out.report.captures_performed);
    finish(&out, out_dir(&args.common, &work.config))
}

fn require_out(common: &Common, what: &str) -> anyhow::Result<PathBuf> {
    match &common.out {
        Some(p) => Ok(p.clone()),
        None => Err(
            mvp_core::Error::InvalidParam(format!("--out <file> is required for {what}")).into(),
        ),
    }
}

fn synthetic_only(cfg: &ExperimentConfig, what: &str) -> anyhow::Result<()> {
    if cfg.provider.kind != ProviderKind::Synthetic {
        return Err(
            mvp_core::Error::Config(format!("{what} needs provider.kind = \"synthetic\"")).into(),
        );
    }
    Ok(())
}

fn stats(common: &Common) -> anyhow::Result<()> {
    let out = require_out(common, "stats")?;
    let cfg = load_config(common)?.resolve()?;
    synthetic_only(&cfg, "stats")?;
    let provider = build_provider(&cfg)?;
    let stats = reference_source_stats(&cfg, provider.as_ref())?;
    save_source_stats(&out, &stats)?;
    println!(
        "wrote {} ({} layers x {} dims from {} reference views)",
        out.display(),
        stats.n_layers(),
        stats.feat_dim(),
        cfg.provider.reference.n_views
    );
    Ok(())
}

fn export_embeddings(common: &Common) -> anyhow::Result<()> {
    let out = require_out(common, "export-embeddings")?;
    let work = Workload::new(load_config(common)?)?;
    synthetic_only(&work.config, "export-embeddings")?;
    let synth = SyntheticProvider::new(work.config.provider.synthetic.clone())?;
    let source = mvp_core::harness::resolve_source_stats(&work.config, &synth)?;
    let recorder = RecordingProvider::new(&synth);
    run_benchmark_with(&work, &recorder, &source)?;
    let n = recorder.write_to(&out)?;
    println!("wrote {} ({n} views)", out.display());
    Ok(())
}

fn latency(args: &LatencyArgs) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let grid = cfg.grid.clone();
    let variants = match &args.csa {
        Some(v) => vec![v.parse::<CsaVariant>()?],
        None => {
            if args.m.is_some() {
                bail!(mvp_core::Error::InvalidParam("--m needs --csa".into()));
            }
            CsaVariant::ALL.to_vec()
        }
    };
    let mut csv = String::from("policy,m,latency_s\n");
    for v in variants {
        let m = args.m.unwrap_or_else(|| v.default_m(&grid));
        let policy = mvp_core::csa::CsaPolicy {
            variant: v,
            m,
            seed: cfg.seed,
        };
        let s = mean_latency(&policy, &grid, args.draws)?;
        // Deterministic policies print the exact sum; random ones a mean.
        let text = if v == CsaVariant::Csa1 || v == CsaVariant::Csa2 {
            format!("{s:.4}")
        } else {
            format!("{s}")
        };
        println!("{:<5} m={m:<3} {text}", v.name());
        csv.push_str(&format!("{},{m},{text}\n", v.name()));
    }
    if let Some(path) = &args.out {
        std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<mvp_core::Error>() {
        Some(e) if e.is_validation() => 1,
        Some(_) => 2,
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Bench(c) => bench(c),
        Command::Sweep(a) => sweep(a),
        Command::Stats(c) => stats(c),
        Command::ExportEmbeddings(c) => export_embeddings(c),
        Command::Latency(a) => latency(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
