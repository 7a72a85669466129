//! Command-line front end. `main` only parses arguments and calls [`run`].

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::clients::{server, AgentClients, MockBackend};
use crate::config::PipelineConfig;
use crate::cost::{per_video_cost, Ledger};
use crate::dataset;
use crate::eval::DEFAULT_BETA2;
use crate::model::{KnowledgeBank, Variant};
use crate::orchestrator::Orchestrator;
use crate::prompt::{self, TranslatorMode};
use crate::runner::{self, RunOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CLIP_FAILURES: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "openavs", version, about = "Agent-driven audio-visual segmentation pipeline")]
pub struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline over a manifest and write predicted masks.
    Run(RunArgs),
    /// Score predicted masks against the manifest ground truth.
    Eval(EvalArgs),
    /// Print the translator request built from a knowledge bank.
    Assemble(AssembleArgs),
    /// Serve deterministic mock agents over HTTP.
    MockServe(MockServeArgs),
    /// Price a ledger.
    Cost(CostArgs),
    /// Write a manifest for a `<video>/{frames,audio,labels}` directory tree.
    ConvertDataset(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// lite, standard or large.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, overrides_with = "no_prompt_consistency")]
    pub prompt_consistency: bool,
    #[arg(long)]
    pub no_prompt_consistency: bool,
    #[arg(long, overrides_with = "no_frame_consistency")]
    pub frame_consistency: bool,
    #[arg(long)]
    pub no_frame_consistency: bool,
    /// Use one endpoint for every agent. `mock://derived` runs in-process mocks.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub audio_endpoint: Option<String>,
    #[arg(long)]
    pub visual_endpoint: Option<String>,
    #[arg(long)]
    pub multimodal_endpoint: Option<String>,
    #[arg(long)]
    pub translator_endpoint: Option<String>,
    #[arg(long)]
    pub segmenter_endpoint: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Clips processed concurrently.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Also write red overlays of the masks on the frames.
    #[arg(long)]
    pub overlay: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `<video>/<frame>.png` predictions.
    #[arg(long)]
    pub pred: PathBuf,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BETA2)]
    pub beta2: f64,
    /// Configuration recorded alongside the scores.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AssembleArgs {
    /// A knowledge bank JSON, or a clip `result.json`.
    #[arg(long)]
    pub bank: PathBuf,
    /// basic, prompt, frame, prompt+frame or model.
    #[arg(long)]
    pub mode: String,
    /// Frame to assemble; required for `model`.
    #[arg(long)]
    pub frame: Option<usize>,
    /// Number of frames for the clip-level modes (default: all in the bank).
    #[arg(long)]
    pub frames: Option<usize>,
    /// Print the request as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct MockServeArgs {
    #[arg(long, default_value = "127.0.0.1:8089")]
    pub addr: SocketAddr,
    /// Serve scripted replies from this digest-to-reply JSON map.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long)]
    pub ledger: PathBuf,
    /// Price overrides come from the `[pricing]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long)]
    pub dataset: String,
    /// Manifest path (default `<root>/manifest.json`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn usage(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.to_string(),
    }
}

fn failed(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_CLIP_FAILURES,
        message: message.to_string(),
    }
}

pub fn load_config(args: &PipelineArgs) -> Result<PipelineConfig, Failure> {
    let variant = args
        .variant
        .as_deref()
        .map(str::parse::<Variant>)
        .transpose()
        .map_err(usage)?;
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p).map_err(usage)?,
        None => PipelineConfig::for_variant(variant.unwrap_or(Variant::Lite)),
    };
    if let (Some(v), Some(_)) = (variant, &args.config) {
        cfg.pipeline.variant = v;
    }
    if args.prompt_consistency {
        cfg.pipeline.prompt_consistency = true;
    }
    if args.no_prompt_consistency {
        cfg.pipeline.prompt_consistency = false;
    }
    if args.frame_consistency {
        cfg.pipeline.frame_consistency = true;
    }
    if args.no_frame_consistency {
        cfg.pipeline.frame_consistency = false;
    }
    if let Some(url) = &args.endpoint {
        cfg.endpoints.set_all(url);
    }
    let overrides = [
        (&args.audio_endpoint, &mut cfg.endpoints.audio),
        (&args.visual_endpoint, &mut cfg.endpoints.visual),
        (&args.multimodal_endpoint, &mut cfg.endpoints.multimodal),
        (&args.translator_endpoint, &mut cfg.endpoints.translator),
        (&args.segmenter_endpoint, &mut cfg.endpoints.segmenter),
    ];
    for (value, slot) in overrides {
        if let Some(url) = value {
            *slot = url.clone();
        }
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return EXIT_USAGE;
        }
    };
    match rt.block_on(run(cli.command)) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub async fn run(command: Command) -> Result<i32, Failure> {
    match command {
        Command::Run(a) => cmd_run(a).await,
        Command::Eval(a) => cmd_eval(a),
        Command::Assemble(a) => cmd_assemble(a),
        Command::MockServe(a) => cmd_mock_serve(a).await,
        Command::Cost(a) => cmd_cost(a),
        Command::ConvertDataset(a) => cmd_convert(a),
    }
}

async fn cmd_run(a: RunArgs) -> Result<i32, Failure> {
    let cfg = load_config(&a.pipeline)?;
    let manifest = dataset::load_manifest(&a.manifest).map_err(usage)?;
    for w in &manifest.warnings {
        tracing::warn!("{w}");
    }
    let workers = a.workers.unwrap_or_else(|| cfg.workers());
    let clients = AgentClients::from_config(&cfg, None).map_err(usage)?;
    let orch = Orchestrator::new(cfg, clients).map_err(usage)?;
    let opts = RunOptions {
        out: a.out,
        overlay: a.overlay,
        workers,
    };
    let summary = runner::run_dataset(&orch, &manifest, &opts)
        .await
        .map_err(failed)?;
    for c in &summary.clips {
        match &c.error {
            None => println!("{}\tok\t{} frames", c.video_id, c.frames),
            Some(e) => println!("{}\tfailed\t{e}", c.video_id),
        }
    }
    print!("{}", summary.cost.to_table());
    Ok(if summary.all_ok() {
        EXIT_OK
    } else {
        EXIT_CLIP_FAILURES
    })
}

fn cmd_eval(a: EvalArgs) -> Result<i32, Failure> {
    if !(a.beta2 > 0.0) {
        return Err(usage("--beta2 must be positive"));
    }
    let manifest = dataset::load_manifest(&a.manifest).map_err(usage)?;
    let mut report = runner::evaluate(&manifest, &a.pred, a.beta2).map_err(failed)?;
    if let Some(p) = &a.config {
        let cfg = PipelineConfig::load(p).map_err(usage)?;
        report.config = serde_json::to_value(&cfg).map_err(usage)?;
    }
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        let json = serde_json::to_string_pretty(&report).map_err(failed)?;
        write_text(out, &json)?;
    }
    Ok(EXIT_OK)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| failed(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| failed(format!("{}: {e}", path.display())))
}

/// Reads a bank from either its own JSON or the `bank` field of a result.
pub fn read_bank(path: &Path) -> Result<KnowledgeBank, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let bank = match value.get("bank") {
        Some(b) => b.clone(),
        None => value,
    };
    serde_json::from_value(bank).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_assemble(a: AssembleArgs) -> Result<i32, Failure> {
    let mode: TranslatorMode = a.mode.parse().map_err(usage)?;
    let bank = read_bank(&a.bank)?;
    let request = if mode.is_frame_tagged() {
        let n = a.frames.unwrap_or_else(|| bank.frame_count());
        prompt::assemble_clip(&bank, n, mode).map_err(usage)?
    } else {
        let frame = a.frame.ok_or_else(|| usage("--frame is required for the model mode"))?;
        prompt::assemble_frame(&bank, frame).map_err(usage)?
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&request).map_err(failed)?);
    } else {
        println!("[system]\n{}\n\n[user]\n{}", request.system_prompt, request.user_input);
    }
    Ok(EXIT_OK)
}

async fn cmd_mock_serve(a: MockServeArgs) -> Result<i32, Failure> {
    let backend = match &a.fixtures {
        Some(p) => MockBackend::scripted_from_file(p).map_err(usage)?,
        None => MockBackend::derived(),
    };
    server::serve(a.addr, Arc::new(backend))
        .await
        .map_err(|e| usage(format!("cannot serve on {}: {e}", a.addr)))?;
    Ok(EXIT_OK)
}

fn cmd_cost(a: CostArgs) -> Result<i32, Failure> {
    let text = std::fs::read_to_string(&a.ledger)
        .map_err(|e| usage(format!("{}: {e}", a.ledger.display())))?;
    let ledger = Ledger::from_json(&text).map_err(|e| usage(format!("{}: {e}", a.ledger.display())))?;
    let prices = match &a.config {
        Some(p) => PipelineConfig::load(p).map_err(usage)?.price_table(),
        None => PipelineConfig::default().price_table(),
    };
    let report = per_video_cost(&ledger.snapshot(), &prices).map_err(usage)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(failed)?);
    } else {
        print!("{}", report.to_table());
    }
    Ok(EXIT_OK)
}

fn cmd_convert(a: ConvertArgs) -> Result<i32, Failure> {
    let mut manifest = dataset::convert_directory(&a.root, &a.dataset).map_err(usage)?;
    let out = a.out.unwrap_or_else(|| a.root.join("manifest.json"));
    let same_dir = match (
        out.parent().map(|p| if p.as_os_str().is_empty() { Path::new(".") } else { p }).map(std::fs::canonicalize),
        std::fs::canonicalize(&a.root),
    ) {
        (Some(Ok(x)), Ok(y)) => x == y,
        _ => false,
    };
    if !same_dir {
        let root = std::fs::canonicalize(&a.root).map_err(|e| usage(format!("{}: {e}", a.root.display())))?;
        let absolute = |p: &mut String| *p = root.join(&*p).to_string_lossy().into_owned();
        for s in &mut manifest.samples {
            s.frames.iter_mut().for_each(absolute);
            s.audio_segments.iter_mut().for_each(absolute);
            if let Some(g) = s.gt_masks.as_mut() {
                g.iter_mut().for_each(absolute);
            }
        }
    }
    let json = serde_json::to_string_pretty(&manifest).map_err(failed)?;
    write_text(&out, &json)?;
    println!("{} samples -> {}", manifest.samples.len(), out.display());
    Ok(EXIT_OK)
}
