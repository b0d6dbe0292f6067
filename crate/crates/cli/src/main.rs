use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ecdctr_core::datagen::ImpressionLog;
use ecdctr_core::embstore::{Side, SnapshotStore, DEFAULT_RETENTION};
use ecdctr_core::eval::{emit_report, EvalReport, ReportFormat};
use ecdctr_core::models::load_checkpoint;
use ecdctr_core::pipeline::{expand_arms, run_ablation, Pipeline, RunConfig, SimData, Variant};

/// Tri-level cross-domain CTR pipeline on a simulated calendar.
#[derive(Parser, Debug)]
#[command(name = "ecdctr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic impression logs, one file per domain and month
    Generate(GenerateArgs),
    /// Run one variant over the simulated calendar for every seed
    Run(RunArgs),
    /// Run a set of arms for every seed and write a combined report
    Ablate(AblateArgs),
    /// Merge the live snapshots into serving tables with a checkpoint's attention
    Merge(MergeArgs),
    /// Re-emit a report CSV as a summary table
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// key=value config file; `#` starts a comment
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, repeatable (e.g. --set users=5000)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Comma-separated seeds [default: 1,2,3]
    #[arg(long, value_name = "LIST")]
    seeds: Option<String>,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output root
    #[arg(long, value_name = "DIR", env = "ECDCTR_OUT", hide_env_values = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Write into a non-empty output directory
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Variant to run [default: full]
    #[arg(long, value_name = "NAME")]
    variant: Option<String>,
    /// Read impressions from a `generate` output root instead of generating inline
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Arms or presets, comma-separated or repeated: table2..table6, fig4, grid, or variant[:key=value;...]
    #[arg(long, value_name = "ARMS", required = true)]
    arms: Vec<String>,
    /// Seeds run in parallel
    #[arg(long, value_name = "N", default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct MergeArgs {
    /// Fine-tuned model checkpoint
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Directory holding the snapshot files
    #[arg(long, value_name = "DIR")]
    store: PathBuf,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report CSV written by `run` or `ablate`
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Output format
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
    /// Write to a file instead of stdout
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ecdctr_core::Error> for Failure {
    fn from(e: ecdctr_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &args.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        config.set(k.trim(), v.trim()).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(s) = &args.seeds {
        config.set("seeds", s).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed{seed}"))
}

fn write_reports(dir: &Path, report: &EvalReport) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (name, text) in [
        ("report.csv", report.to_csv()),
        ("report.md", report.to_markdown()),
        ("daily.csv", report.daily_csv()),
    ] {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| io_err(&p, e))?;
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> CmdResult {
    let config = load_config(&args.config)?;
    let out = &args.out.out;
    let non_empty = fs::read_dir(out).map(|mut d| d.next().is_some()).unwrap_or(false);
    if non_empty && !args.force {
        return Err(Failure::Runtime(format!(
            "{} is not empty; pass --force to write into it",
            out.display()
        )));
    }
    for &seed in &config.seeds {
        let data = SimData::generate(&config, seed)?;
        let files = data.log.write_dir(&seed_dir(out, seed))?;
        eprintln!("seed {seed}: wrote {} files", files.len());
    }
    let p = out.join("config.txt");
    fs::write(&p, config.to_text()).map_err(|e| io_err(&p, e))?;
    Ok(())
}

fn run(args: RunArgs) -> CmdResult {
    let mut config = load_config(&args.config)?;
    if let Some(v) = &args.variant {
        if Variant::parse(v).is_none() {
            return Err(Failure::Usage(format!("unknown variant `{v}`")));
        }
        config.set("variant", v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let out = &args.out.out;
    let label = config.variant.as_str();
    let mut report = EvalReport::new(config.fingerprint());
    for &seed in &config.seeds {
        let data = match &args.data {
            Some(root) => {
                let log = ImpressionLog::read_dir(&seed_dir(root, seed), config.world.horizon_days())?;
                SimData::from_log(seed, log)
            }
            None => SimData::generate(&config, seed)?,
        };
        let outcome = Pipeline::new(&config, &data, Some(seed_dir(out, seed)), None)?.run(label)?;
        if !outcome.warmup_completed {
            eprintln!("seed {seed}: horizon too short, warm-up never completed");
        }
        report.extend(outcome.report);
    }
    write_reports(out, &report)?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn ablate(args: AblateArgs) -> CmdResult {
    let config = load_config(&args.config)?;
    let arms = expand_arms(&args.arms).map_err(|e| Failure::Usage(e.to_string()))?;
    if args.jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    let report = run_ablation(&config, &arms, Some(&args.out.out), args.jobs)?;
    for r in report.results.iter().filter(|r| r.error.is_some()) {
        eprintln!("{} seed {} failed: {}", r.variant, r.seed, r.error.as_deref().unwrap_or(""));
    }
    print!("{}", report.to_markdown());
    Ok(())
}

fn merge(args: MergeArgs) -> CmdResult {
    let model = load_checkpoint(&args.checkpoint)?;
    let store = SnapshotStore::load_dir(&args.store, DEFAULT_RETENTION)?;
    let out = &args.out.out;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    for (i, side) in [Side::User, Side::Item].into_iter().enumerate() {
        let table = store.merge_tables(side, model.attention_for(i))?;
        let p = out.join(format!("{}.merged", side.as_str()));
        table.save(&p)?;
        eprintln!("{}: {} entries", p.display(), table.entries.len());
    }
    Ok(())
}

fn report(args: ReportArgs) -> CmdResult {
    let text = fs::read_to_string(&args.input).map_err(|e| io_err(&args.input, e))?;
    let report = EvalReport::from_csv(&text)?;
    let format = match args.format {
        Format::Csv => ReportFormat::Csv,
        Format::Markdown => ReportFormat::Markdown,
    };
    match &args.output {
        Some(p) => emit_report(&report, p, format)?,
        None => match format {
            ReportFormat::Csv => print!("{}", report.to_csv()),
            ReportFormat::Markdown => print!("{}", report.to_markdown()),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Ablate(a) => ablate(a),
        Command::Merge(a) => merge(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(match f {
                Failure::Usage(_) => 1,
                Failure::Runtime(_) => 2,
            })
        }
    }
}
