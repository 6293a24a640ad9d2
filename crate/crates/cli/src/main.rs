//! `afford`: run, evaluate and compare affordance grounding pipelines.
//!
//! Exit codes: 0 success, 1 item-level failures, 2 configuration or usage
//! errors.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afford_core::eval::{evaluate, load_manifest, EvalError, EvalReport};
use afford_core::pipeline::{run_batch, Mode, Pipeline, PipelineTrace, TraceStore};
use afford_core::render::panel;
use afford_core::synthetic;
use afford_core::{BackendsConfig, ImageRef};
use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "afford",
    version,
    about = "Affordance grounding pipelines: run, evaluate, ablate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// full, no_dreamer or spotter_only.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Output directory for traces.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Exit 0 even when items fail; failures are still written to traces.
    #[arg(long)]
    keep_going: bool,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            mode: self.mode,
            parallelism: self.parallelism,
            out: self.out.clone(),
            manifest: self.manifest.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the pipeline over a manifest, writing one trace per item.
    Run(RunArgs),
    /// Score a trace directory against a manifest's ground truth.
    Eval {
        traces: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Report path (default: <traces>/report.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every mode over the same manifest and compare.
    Ablate(RunArgs),
    /// Draw a trace's result over its image.
    Render {
        trace: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run against live backends, recording fixtures for offline replay.
    Record(RunArgs),
    /// Write the synthetic desk dataset with replay fixtures and a config.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failures that map to exit code 2.
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for UsageError {
    fn from(e: E) -> Self {
        UsageError(e.into())
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(UsageError(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, UsageError> {
    match command {
        Command::Run(args) => {
            let cfg = RunConfig::load(&args.config, &args.overrides())?;
            let summary = execute(&cfg, cfg.mode, &cfg.out)?;
            Ok(item_exit(summary.failed, args.keep_going))
        }
        Command::Record(args) => {
            let cfg = RunConfig::load(&args.config, &args.overrides())?.into_recording()?;
            let summary = execute(&cfg, cfg.mode, &cfg.out)?;
            Ok(item_exit(summary.failed, args.keep_going))
        }
        Command::Eval {
            traces,
            manifest,
            out,
        } => cmd_eval(&traces, &manifest, out.as_deref()),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::Render { trace, image, out } => cmd_render(&trace, &image, &out),
        Command::Synth { out } => cmd_synth(&out),
    }
}

fn item_exit(failed: usize, keep_going: bool) -> ExitCode {
    if failed > 0 && !keep_going {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

struct RunSummary {
    traces: Vec<PipelineTrace>,
    failed: usize,
}

/// Runs one mode into `out`, printing a line per item.
fn execute(cfg: &RunConfig, mode: Mode, out: &Path) -> Result<RunSummary> {
    let items = load_manifest(&cfg.manifest)?;
    let backends = cfg.backends.build(mode.required_capabilities())?;
    let pipeline_cfg = cfg.pipeline_config(mode);
    let pipeline = Pipeline::with_prompts(pipeline_cfg.clone(), backends, cfg.prompts()?)?;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let snapshot = serde_json::json!({ "run": cfg, "pipeline": pipeline_cfg });
    std::fs::write(
        out.join("config.json"),
        serde_json::to_vec_pretty(&snapshot)?,
    )?;

    let store = TraceStore::new(out);
    let outcome = run_batch(&pipeline, &items, cfg.parallelism, Some(&store));
    let mut failed = 0;
    for trace in &outcome.traces {
        let resumed = if outcome.resumed.contains(&trace.item_id) {
            " (resumed)"
        } else {
            ""
        };
        match (&trace.result, &trace.error) {
            (Some(result), _) => println!(
                "{}\tok\t{} region(s){resumed}",
                trace.item_id,
                result.regions.len()
            ),
            (None, Some(err)) => {
                failed += 1;
                println!(
                    "{}\terror\t{}/{}: {}",
                    trace.item_id, err.stage, err.kind, err.message
                );
            }
            (None, None) => {
                failed += 1;
                println!("{}\terror\tincomplete trace", trace.item_id);
            }
        }
    }
    println!(
        "{mode}: {} items, {} ok, {failed} failed, {} resumed -> {}",
        outcome.traces.len(),
        outcome.traces.len() - failed,
        outcome.resumed.len(),
        out.display()
    );
    Ok(RunSummary {
        traces: outcome.traces,
        failed,
    })
}

fn cmd_eval(traces: &Path, manifest: &Path, out: Option<&Path>) -> Result<ExitCode, UsageError> {
    let items = load_manifest(manifest)?;
    let store = TraceStore::new(traces);
    let loaded = store
        .load_all()
        .with_context(|| format!("cannot read traces in {}", traces.display()))?;
    let report = evaluate(&items, &loaded).map_err(|e| match e {
        EvalError::MissingTraces(ids) => anyhow!("missing traces for: {}", ids.join(", ")),
        other => anyhow!(other),
    })?;
    print!("{}", report.table());
    let path = out.map_or_else(|| traces.join("report.json"), Path::to_path_buf);
    write_json(&path, &report)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Serialize)]
struct AblationRow {
    mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<EvalReport>,
    failed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn cmd_ablate(args: &RunArgs) -> Result<ExitCode, UsageError> {
    let cfg = RunConfig::load(&args.config, &args.overrides())?;
    let items = load_manifest(&cfg.manifest)?;
    let mut rows = Vec::new();
    for mode in Mode::ALL {
        let out = cfg.out.join(mode.as_str());
        let row = match execute(&cfg, mode, &out) {
            Ok(summary) => match evaluate(&items, &summary.traces) {
                Ok(report) => AblationRow {
                    mode,
                    report: Some(report),
                    failed: summary.failed,
                    error: None,
                },
                Err(e) => AblationRow {
                    mode,
                    report: None,
                    failed: summary.failed,
                    error: Some(e.to_string()),
                },
            },
            Err(e) => AblationRow {
                mode,
                report: None,
                failed: 0,
                error: Some(format!("{e:#}")),
            },
        };
        rows.push(row);
    }
    print!("{}", ablation_table(&rows, items.len()));
    write_json(&cfg.out.join("ablation.json"), &rows)?;
    let problems = rows.iter().any(|r| r.error.is_some() || r.failed > 0);
    Ok(item_exit(usize::from(problems), args.keep_going))
}

fn ablation_table(rows: &[AblationRow], n_items: usize) -> String {
    let mut out = format!(
        "{:<14} {:>8} {:>8} {:>8} {:>8}  note\n",
        "mode", "gIoU", "cIoU", "P@50", "P@50:95"
    );
    for row in rows {
        let name = row.mode.as_str().to_uppercase();
        let note = match (&row.error, row.failed) {
            (Some(e), _) => format!("error: {e}"),
            (None, 0) => String::new(),
            (None, k) => format!("{k}/{n_items} items failed"),
        };
        let line = match &row.report {
            Some(r) => format!(
                "{name:<14} {:>8.2} {:>8.2} {:>8.2} {:>8.2}  {note}",
                r.g_iou * 100.0,
                r.c_iou * 100.0,
                r.p50 * 100.0,
                r.p50_95 * 100.0
            ),
            None => format!(
                "{name:<14} {:>8} {:>8} {:>8} {:>8}  {note}",
                "-", "-", "-", "-"
            ),
        };
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn cmd_render(trace_path: &Path, image: &Path, out: &Path) -> Result<ExitCode, UsageError> {
    let text = std::fs::read_to_string(trace_path)
        .with_context(|| format!("cannot read trace {}", trace_path.display()))?;
    let trace: PipelineTrace = serde_json::from_str(&text).context("invalid trace")?;
    let Some(result) = &trace.result else {
        return Err(anyhow!("trace {} has no result to render", trace.item_id).into());
    };
    let rgb = ImageRef::from_path(trace.item_id.clone(), image)?.load_rgb()?;
    if result.union_mask.width() != rgb.width() || result.union_mask.height() != rgb.height() {
        return Err(anyhow!(
            "image is {}x{}, trace mask is {}x{}",
            rgb.width(),
            rgb.height(),
            result.union_mask.width(),
            result.union_mask.height()
        )
        .into());
    }
    let base = trace_path.parent().unwrap_or(Path::new("."));
    let sim = trace
        .sim_image
        .clone()
        .map(|s| s.resolved_against(base).load_rgb())
        .transpose()
        .unwrap_or_else(|e| {
            tracing::warn!("imagined image unavailable, rendering overlay only: {e}");
            None
        });
    panel(&rgb, result, sim.as_ref())
        .save(out)
        .with_context(|| format!("cannot write {}", out.display()))?;
    println!("{}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(out: &Path) -> Result<ExitCode, UsageError> {
    let dataset = synthetic::write_dataset(out, &Mode::ALL)?;
    let config = serde_json::json!({
        "manifest": "manifest.jsonl",
        "out": "runs",
        "parallelism": 4,
        "backends": BackendsConfig::replay_all("fixtures"),
        "record_timings": false,
    });
    let path = out.join("config.json");
    write_json(&path, &config)?;
    println!("manifest: {}", dataset.manifest.display());
    println!("fixtures: {}", dataset.fixtures.display());
    println!("config:   {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}
