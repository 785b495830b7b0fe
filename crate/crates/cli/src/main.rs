use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pcx::config::parse_config;
use pcx::exec::{render_trace, ExecConfig, Executor};
use pcx::ir::parse_program;
use pcx::oracle::run_oracle;
use pcx::report;
use pcx::threads::load_thread_dump;

/// Concolic executor over micro P-Code with overlay exploration.
#[derive(Parser)]
#[command(name = "pcx", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analysis on a program and thread dump.
    Analyze(AnalyzeArgs),
    /// Parse and validate a program.
    Validate { program: PathBuf },
    /// Exhaustively run the program concretely over all symbolic inputs.
    Oracle(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    program: PathBuf,
    dump: PathBuf,
    /// key=value run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `function:NAME` or `binary`.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    run: RunArgs,
    /// tinygo | gc | c
    #[arg(long)]
    profile: Option<String>,
    /// main-only | round-robin:Q
    #[arg(long)]
    scheduler: Option<String>,
    #[arg(long)]
    overlay_depth: Option<u32>,
    #[arg(long)]
    no_gating: bool,
    /// Write the per-instruction trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Seed of the solver's random search.
    #[arg(long)]
    seed: Option<u64>,
    /// Largest domain, in bits, the solver enumerates exhaustively.
    #[arg(long)]
    solver_bits: Option<u32>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Config file contents followed by command-line overrides, so that later
/// keys win.
fn build_config(run: &RunArgs, extra: &[(&str, String)]) -> Result<ExecConfig> {
    let mut text = match &run.config {
        Some(p) => read(p)?,
        None => String::new(),
    };
    text.push('\n');
    if let Some(m) = &run.mode {
        text.push_str(&format!("mode={m}\n"));
    }
    for (k, v) in extra {
        text.push_str(&format!("{k}={v}\n"));
    }
    Ok(parse_config(&text, ExecConfig::default())?)
}

fn program_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn analyze(args: &AnalyzeArgs) -> Result<bool> {
    let program = parse_program(&read(&args.run.program)?)
        .with_context(|| format!("{}", args.run.program.display()))?;
    let dump = load_thread_dump(&args.run.dump)?;
    let mut extra = Vec::new();
    if let Some(p) = &args.profile {
        extra.push(("profile", p.clone()));
    }
    if let Some(s) = &args.scheduler {
        extra.push(("scheduler", s.clone()));
    }
    if let Some(n) = args.overlay_depth {
        extra.push(("overlay_depth", n.to_string()));
    }
    if args.no_gating {
        extra.push(("gating", "off".into()));
    }
    if let Some(s) = args.seed {
        extra.push(("solver_seed", s.to_string()));
    }
    if let Some(b) = args.solver_bits {
        extra.push(("solver_bits", b.to_string()));
    }
    let config = build_config(&args.run, &extra)?;
    let mut ex = Executor::new(&program, config.clone(), &dump)?;
    ex.run();
    let result = ex.into_report();
    let name = program_name(&args.run.program);
    print!("{}", report::summary(&name, &result));
    if let Some(path) = &args.trace {
        std::fs::write(path, render_trace(&result.trace))
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(path) = &args.report {
        std::fs::write(path, report::to_json(&name, &config, &result))
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(!result.findings.is_empty())
}

fn oracle(args: &RunArgs) -> Result<()> {
    let program = parse_program(&read(&args.program)?)?;
    let dump = load_thread_dump(&args.dump)?;
    let config = build_config(args, &[])?;
    let r = run_oracle(&program, &config, &dump)?;
    println!("assignments {}", r.assignments);
    for (site, events) in &r.sites {
        let names: Vec<String> = events.iter().map(|e| format!("{e:?}").to_lowercase()).collect();
        println!("{site}\t{}", names.join(","));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = match &cli.command {
        Command::Analyze(a) => analyze(a).map(|found| if found { 1 } else { 0 }),
        Command::Validate { program } => read(program).and_then(|src| match parse_program(&src) {
            Ok(p) => {
                println!("ok: {} functions", p.functions.len());
                Ok(0)
            }
            Err(e) => bail!("{}: {e}", program.display()),
        }),
        Command::Oracle(a) => oracle(a).map(|_| 0),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
