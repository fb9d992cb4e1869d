use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use nestcall::bench::{load_cases, run_benchmark, BenchOptions, Tolerances};
use nestcall::calculators::{evaluate, SlotMap};
use nestcall::llm::{Cassette, ChatProvider, HttpChatProvider, PromptSet, ScriptedProvider};
use nestcall::nesting::{run_pipeline, PipelineFailure};
use nestcall::parallel::Parallelism;
use nestcall::registry::{Category, ToolRegistry};
use nestcall::retrieval::{EmbeddingProvider, HashingEmbedder, HttpEmbedder};
use nestcall::Engine;

mod settings;

use settings::{EmbedderChoice, EngineArgs, FileConfig, ProviderChoice, Resolved};

#[derive(Debug, Parser)]
#[command(
    name = "nestcall",
    version,
    about = "Medical calculator selection with nested unit conversion"
)]
struct Cli {
    /// TOML configuration file
    #[arg(long, global = true, env = "NESTCALL_CONFIG", value_name = "PATH")]
    config: Option<PathBuf>,

    /// Toolkit JSON file; repeatable. Defaults to the built-in toolkit
    #[arg(long, global = true, value_name = "PATH")]
    toolkit: Vec<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Answer one query against a case history
    Run(RunArgs),
    /// Evaluate a calculator on explicit slots
    Calc(CalcArgs),
    /// Convert a value with a unit tool
    Convert(ConvertArgs),
    /// Inspect the loaded toolkit
    #[command(subcommand)]
    Tools(ToolsCommand),
    /// Run a JSONL case file and report the metrics
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// The user query
    #[arg(
        long,
        required_unless_present = "query_file",
        conflicts_with = "query_file"
    )]
    query: Option<String>,

    /// File holding the user query
    #[arg(long, value_name = "PATH")]
    query_file: Option<PathBuf>,

    /// File holding the patient case history
    #[arg(long = "case", value_name = "PATH")]
    case_file: PathBuf,

    /// Write the full result (or failure trace) as JSON
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,

    /// Print the result as JSON instead of text
    #[arg(long)]
    json: bool,

    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct CalcArgs {
    /// Calculator tool name
    tool: String,

    /// Slots as JSON: {"param": {"Value": 1, "Unit": "mg/dL"}, ...}
    #[arg(long)]
    slots: String,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    /// Unit tool name
    tool: String,
    value: f64,
    from: String,
    to: String,
}

#[derive(Debug, Subcommand)]
enum ToolsCommand {
    /// List tool names in load order
    List {
        #[arg(long, value_parser = parse_category)]
        category: Option<Category>,
    },
    /// Print one tool record as JSON
    Show { name: String },
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// JSONL case file
    dataset: PathBuf,

    /// Absolute error tolerance for CCA; repeatable (default 0.5, 1.5, 2.5)
    #[arg(long, value_name = "X")]
    cca_tolerance: Vec<f64>,

    /// Worker threads; 1 runs sequentially, 0 uses every core
    #[arg(long, value_name = "N", default_value_t = 1)]
    parallel: usize,

    /// Write the report as JSON
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,

    /// Attach per-case traces to the report
    #[arg(long)]
    keep_traces: bool,

    /// Print the report JSON instead of the table
    #[arg(long)]
    json: bool,

    #[command(flatten)]
    engine: EngineArgs,
}

fn parse_category(s: &str) -> Result<Category, String> {
    Category::parse(s).ok_or_else(|| format!("unknown category '{s}' (expected unit or scale)"))
}

#[derive(Debug)]
enum CliError {
    Config(anyhow::Error),
    Provider(String),
    Pipeline(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Provider(_) => 3,
            CliError::Pipeline(_) => 4,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Config(e)
    }
}

type CliResult = Result<String, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            match &e {
                CliError::Config(err) => eprintln!("error: {err:#}"),
                CliError::Provider(msg) => eprintln!("provider error: {msg}"),
                CliError::Pipeline(msg) => eprintln!("pipeline error: {msg}"),
            }
            ExitCode::from(e.code())
        }
    }
}

fn execute(cli: Cli) -> CliResult {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let toolkits = if cli.toolkit.is_empty() {
        file.toolkit.clone()
    } else {
        cli.toolkit.clone()
    };
    let registry = if toolkits.is_empty() {
        ToolRegistry::builtin()
    } else {
        ToolRegistry::load(&toolkits).context("cannot load toolkit")?
    };
    match cli.command {
        Command::Run(args) => cmd_run(registry, &file, args),
        Command::Calc(args) => cmd_calc(&registry, &args),
        Command::Convert(args) => cmd_convert(&registry, &args),
        Command::Tools(cmd) => cmd_tools(&registry, &cmd),
        Command::Bench(args) => cmd_bench(registry, &file, args),
    }
}

fn read_text(path: &Path, what: &str) -> anyhow::Result<String> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {what} {}", path.display()))?;
    Ok(text.trim_end().to_string())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Chat provider plus the recorder to flush afterwards, if any.
struct Backend {
    chat: Arc<dyn ChatProvider>,
    recorder: Option<Arc<Cassette>>,
}

impl Backend {
    fn flush(&self) -> Result<(), CliError> {
        if let Some(c) = &self.recorder {
            c.save()
                .map_err(|e| CliError::Config(anyhow::anyhow!("cannot save cassette: {e}")))?;
        }
        Ok(())
    }
}

fn build_engine(
    registry: ToolRegistry,
    file: &FileConfig,
    args: &EngineArgs,
    par: Parallelism,
) -> Result<(Engine, Backend), CliError> {
    let r: Resolved = settings::resolve(args, file)?;
    let provider_err = |e: nestcall::llm::ProviderError| CliError::Config(anyhow::anyhow!("{e}"));
    let inner: Box<dyn ChatProvider> = match &r.provider {
        ProviderChoice::Http(s) => {
            Box::new(HttpChatProvider::new(s.clone()).map_err(provider_err)?)
        }
        ProviderChoice::Cassette(p) => Box::new(Cassette::replay(p).map_err(provider_err)?),
        ProviderChoice::Scripted(p) => Box::new(ScriptedProvider::load(p).map_err(provider_err)?),
    };
    let backend = match &r.record {
        Some(path) => {
            let c = Arc::new(Cassette::record(path, inner).map_err(provider_err)?);
            Backend {
                chat: c.clone(),
                recorder: Some(c),
            }
        }
        None => Backend {
            chat: Arc::from(inner),
            recorder: None,
        },
    };
    let embedder: Arc<dyn EmbeddingProvider> = match &r.embedder {
        EmbedderChoice::Hashing => Arc::new(HashingEmbedder::default()),
        EmbedderChoice::Http {
            settings,
            batch_size,
        } => {
            let mut e = HttpEmbedder::new(settings.clone()).map_err(provider_err)?;
            if let Some(b) = batch_size {
                e = e.with_batch_size(*b);
            }
            Arc::new(e)
        }
    };
    let engine = Engine::with_index_cache(
        registry,
        embedder,
        backend.chat.clone(),
        r.index_cache.as_deref(),
        par,
    )
    .map_err(|e| match e {
        nestcall::retrieval::RetrievalError::Provider(p) => {
            CliError::Provider(format!("retrieval: {p}"))
        }
        other => CliError::Config(other.into()),
    })?;
    let mut engine = engine.with_config(r.engine.clone());
    if let Some(dir) = &r.prompts {
        engine = engine.with_prompts(PromptSet::from_dir(dir).context("cannot load prompts")?);
    }
    Ok((engine, backend))
}

fn cmd_run(registry: ToolRegistry, file: &FileConfig, args: RunArgs) -> CliResult {
    let query = match (&args.query, &args.query_file) {
        (Some(q), _) => q.clone(),
        (None, Some(p)) => read_text(p, "query file")?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let case = read_text(&args.case_file, "case file")?;
    let (engine, backend) = build_engine(registry, file, &args.engine, Parallelism::Sequential)?;
    let outcome = run_pipeline(&engine, &query, &case);
    backend.flush()?;
    match outcome {
        Ok(result) => {
            if let Some(path) = &args.trace {
                write_json(path, &result)?;
            }
            if args.json {
                let mut s = serde_json::to_string_pretty(&result).context("serialize result")?;
                s.push('\n');
                return Ok(s);
            }
            let mut out = String::new();
            let _ = writeln!(out, "tool: {}", result.selected_tool);
            let _ = writeln!(out, "slots:");
            for (name, slot) in result.final_slots.iter() {
                let unit = slot
                    .unit
                    .as_deref()
                    .map(|u| format!(" {u}"))
                    .unwrap_or_default();
                let _ = writeln!(out, "  {name} = {}{unit}", slot.value);
            }
            for c in &result.conversions {
                let _ = writeln!(out, "conversion: {}", c.statement);
            }
            let _ = writeln!(out, "value: {}", result.value);
            let _ = writeln!(out, "rounds: {}", result.rounds);
            Ok(out)
        }
        Err(failure) => {
            if let Some(path) = &args.trace {
                write_json(path, &failure_json(&failure))?;
            }
            Err(match failure.error.provider_failure() {
                Some((stage, err)) => CliError::Provider(format!("stage {stage}: {err}")),
                None => CliError::Pipeline(failure.to_string()),
            })
        }
    }
}

fn failure_json(f: &PipelineFailure) -> serde_json::Value {
    serde_json::json!({
        "error": f.error.to_string(),
        "selected_tool": f.selected_tool,
        "rounds": f.rounds,
        "trace": f.trace,
    })
}

fn cmd_calc(registry: &ToolRegistry, args: &CalcArgs) -> CliResult {
    let tool = registry.get(&args.tool).context("unknown tool")?;
    if tool.category != Category::Scale {
        return Err(CliError::Config(anyhow::anyhow!(
            "'{}' is a unit tool; use convert",
            tool.tool_name
        )));
    }
    let slots: SlotMap = serde_json::from_str(&args.slots).context("invalid --slots JSON")?;
    let value = evaluate(tool, &slots).map_err(|e| CliError::Pipeline(e.to_string()))?;
    Ok(format!("{value}\n"))
}

fn cmd_convert(registry: &ToolRegistry, args: &ConvertArgs) -> CliResult {
    let tool = registry.get(&args.tool).context("unknown tool")?;
    let table = tool
        .units
        .as_ref()
        .with_context(|| format!("'{}' is not a unit tool", tool.tool_name))?;
    let value = table
        .convert_labels(args.value, &args.from, &args.to)
        .map_err(|e| CliError::Config(e.into()))?;
    Ok(format!("{value}\n"))
}

fn cmd_tools(registry: &ToolRegistry, cmd: &ToolsCommand) -> CliResult {
    match cmd {
        ToolsCommand::List { category } => {
            let mut out = String::new();
            for t in registry
                .records()
                .iter()
                .filter(|t| category.is_none_or(|c| t.category == c))
            {
                let _ = writeln!(out, "{}", t.tool_name);
            }
            Ok(out)
        }
        ToolsCommand::Show { name } => {
            let tool = registry.get(name).context("unknown tool")?;
            let mut s = serde_json::to_string_pretty(tool).context("serialize tool")?;
            s.push('\n');
            Ok(s)
        }
    }
}

fn cmd_bench(registry: ToolRegistry, file: &FileConfig, args: BenchArgs) -> CliResult {
    let cases = load_cases(&args.dataset, &registry).context("cannot load dataset")?;
    let mut tolerances = Tolerances::default();
    if !args.cca_tolerance.is_empty() {
        if let Some(bad) = args
            .cca_tolerance
            .iter()
            .find(|t| !t.is_finite() || **t < 0.0)
        {
            return Err(CliError::Config(anyhow::anyhow!(
                "invalid CCA tolerance {bad}"
            )));
        }
        tolerances.cca = args.cca_tolerance.clone();
    }
    let parallelism = Parallelism::from_count(args.parallel);
    let (engine, backend) = build_engine(registry, file, &args.engine, parallelism)?;
    let options = BenchOptions {
        tolerances,
        parallelism,
        keep_traces: args.keep_traces,
    };
    let report = run_benchmark(&engine, &cases, &options);
    backend.flush()?;
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    if args.json {
        let mut s = serde_json::to_string_pretty(&report).context("serialize report")?;
        s.push('\n');
        Ok(s)
    } else {
        Ok(report.table())
    }
}
