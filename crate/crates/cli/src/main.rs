//! `evtype`: command-line front end for incremental event-type discovery.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evtype::pipeline::{self, DataConfig, PipelineConfig, Stepwise};
use evtype::synth::{self, SynthConfig};
use evtype::Error;

#[derive(Debug, Parser)]
#[command(name = "evtype", version, about = "Incremental event-type discovery")]
struct Cli {
    /// TOML pipeline configuration; omitted keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; every stage seed is derived from it.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Workspace directory (for `synth`, the dataset directory).
    #[arg(long, global = true, value_name = "DIR", default_value = "evtype_out")]
    out: PathBuf,
    /// Independent replicas of `round`, seeds `seed..seed+R`.
    #[arg(long, global = true, value_name = "R", default_value_t = 1)]
    repeats: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory with base.jsonl, pending.jsonl and optionally gold.json.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic benchmark.
    Synth(SynthArgs),
    /// Train the autoencoder and clustering head on resolved events.
    Train(DataArgs),
    /// Score and triage pending events.
    Detect(DataArgs),
    /// Cluster the abnormal events.
    Cluster(DataArgs),
    /// Propose names for the anomaly clusters.
    Name(DataArgs),
    /// Review proposed names of the latest round.
    Review {
        /// Read answers from this file instead of standard input.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Score round artifacts against the gold manifest.
    Evaluate(DataArgs),
    /// Run and commit a full round.
    Round(DataArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    base_types: Option<usize>,
    #[arg(long)]
    novel_types: Option<usize>,
    #[arg(long)]
    base_per_type: Option<usize>,
    #[arg(long)]
    novel_per_type: Option<usize>,
    #[arg(long)]
    unknown_per_type: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Distance between type centers in units of sigma.
    #[arg(long)]
    separation: Option<f64>,
}

fn pipeline_config(cli: &Cli, data: &DataArgs) -> evtype::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(dir) = &data.data {
        let d = DataConfig::from_dir(dir);
        cfg.data.base = d.base;
        cfg.data.pending = d.pending;
        cfg.data.gold = d.gold;
    }
    let seed = cli.seed.unwrap_or(cfg.seed);
    Ok(cfg.with_seed(seed))
}

fn synth_config(cli: &Cli, a: &SynthArgs) -> SynthConfig {
    let d = SynthConfig::default();
    SynthConfig {
        base_types: a.base_types.unwrap_or(d.base_types),
        novel_types: a.novel_types.unwrap_or(d.novel_types),
        base_per_type: a.base_per_type.unwrap_or(d.base_per_type),
        novel_per_type: a.novel_per_type.unwrap_or(d.novel_per_type),
        unknown_per_type: a.unknown_per_type.unwrap_or(d.unknown_per_type),
        dim: a.dim.unwrap_or(d.dim),
        separation: a.separation.unwrap_or(d.separation),
        seed: cli.seed.unwrap_or(d.seed),
        ..d
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> evtype::Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).display().to_string()
}

fn run(cli: &Cli) -> evtype::Result<serde_json::Value> {
    if cli.repeats == 0 {
        return Err(Error::InvalidArgument("--repeats must be at least 1".into()));
    }
    let out = cli.out.as_path();
    match &cli.command {
        Command::Synth(a) => {
            let cfg = synth_config(cli, a);
            let ds = synth::generate(&cfg)?;
            ds.write(out)?;
            Ok(serde_json::json!({
                "base": ds.base.len(),
                "pending": ds.pending.len(),
                "base_types": ds.gold.base_types,
                "novel_types": ds.gold.novel_types,
            }))
        }
        Command::Round(d) => {
            let cfg = pipeline_config(cli, d)?;
            if cli.repeats > 1 {
                to_json(&pipeline::run_repeats(&cfg, out, cli.repeats)?)
            } else {
                to_json(&pipeline::run_round(&cfg, out)?.summary)
            }
        }
        Command::Train(d) => {
            let st = Stepwise::open(&pipeline_config(cli, d)?, out)?;
            let path = st.train()?;
            Ok(serde_json::json!({ "checkpoint": rel(out, &path) }))
        }
        Command::Detect(d) => {
            let r = Stepwise::open(&pipeline_config(cli, d)?, out)?.detect()?.result();
            Ok(serde_json::json!({
                "normal": r.normal.len(),
                "abnormal": r.abnormal.len(),
                "deferred": r.deferred.len(),
            }))
        }
        Command::Cluster(d) => {
            let c = Stepwise::open(&pipeline_config(cli, d)?, out)?.cluster()?;
            Ok(serde_json::json!({
                "method": c.report.method,
                "clusters": c.report.num_clusters(),
                "events": c.report.labels.len(),
            }))
        }
        Command::Name(d) => to_json(&Stepwise::open(&pipeline_config(cli, d)?, out)?.name()?),
        Command::Evaluate(d) => to_json(&Stepwise::open(&pipeline_config(cli, d)?, out)?.evaluate()?),
        Command::Review { input } => {
            let mut stderr = std::io::stderr();
            let report = match input {
                Some(p) => {
                    let f = std::fs::File::open(p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    pipeline::run_review(out, &mut std::io::BufReader::new(f), &mut stderr)?
                }
                None => pipeline::run_review(out, &mut std::io::stdin().lock(), &mut stderr)?,
            };
            to_json(&report)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(v) => {
            let Format::Json = cli.format;
            let mut stdout = std::io::stdout().lock();
            let _ = serde_json::to_writer_pretty(&mut stdout, &v);
            let _ = writeln!(stdout);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
