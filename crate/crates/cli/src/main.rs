//! `enclave-taint`: finds enclave data leaking across the ECALL/OCALL
//! boundary.
//!
//! Exit status: 0 when no findings, 1 when findings are reported (or a corpus
//! case fails), 2 on any input error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use enclave_taint::corpus::{run_corpus, CaseVerdict};
use enclave_taint::pipeline::{analyze, Analysis, AnalyzeInput};
use enclave_taint::report::Format;
use enclave_taint::taint::dump_sinks;
use enclave_taint::tracker::{BarrierConfig, TrackLimits, DEFAULT_MAX_PATHS, DEFAULT_MAX_PATH_LEN};

#[derive(Parser)]
#[command(name = "enclave-taint", version, about = "Static privacy-leak analyzer for SGX enclave code")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze EDL interfaces and SIR enclave code.
    Analyze(AnalyzeArgs),
    /// Run every case of a corpus directory against its golden findings.
    Corpus {
        dir: PathBuf,
    },
}

#[derive(clap::Args)]
struct AnalyzeArgs {
    /// EDL interface files.
    #[arg(long, required = true, num_args = 1..)]
    edl: Vec<PathBuf>,
    /// SIR program files, linked into one module.
    #[arg(long = "ir", required = true, num_args = 1..)]
    ir: Vec<PathBuf>,
    /// Barrier and high-risk function config (JSON). Replaces the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
    /// Intermediate results to print on stderr.
    #[arg(long, value_enum, value_delimiter = ',')]
    dump: Vec<Dump>,
    /// Paths enumerated per sink before truncation.
    #[arg(long, default_value_t = DEFAULT_MAX_PATHS, value_parser = positive)]
    max_paths: usize,
    /// Longest path followed, in nodes.
    #[arg(long, default_value_t = DEFAULT_MAX_PATH_LEN, value_parser = positive)]
    max_path_len: usize,
    /// Worker threads for per-sink tracking. Output does not depend on it.
    #[arg(long, value_parser = positive)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Dump {
    Pts,
    Cg,
    Vfg,
    Sinks,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<(String, String)>, String> {
    paths
        .iter()
        .map(|p| {
            fs::read_to_string(p)
                .map(|text| (p.display().to_string(), text))
                .map_err(|e| format!("cannot read {}: {e}", p.display()))
        })
        .collect()
}

fn print_dumps(a: &Analysis, dumps: &[Dump]) {
    for d in [Dump::Pts, Dump::Cg, Dump::Vfg, Dump::Sinks] {
        if !dumps.contains(&d) {
            continue;
        }
        let (title, body) = match d {
            Dump::Pts => ("points-to", a.pts.dump(&a.module)),
            Dump::Cg => ("call graph", a.cg.dump(&a.module)),
            Dump::Vfg => ("value-flow graph", a.vfg.dump()),
            Dump::Sinks => ("sinks", dump_sinks(&a.module, &a.sinks.sinks)),
        };
        eprintln!("== {title} ==");
        eprint!("{body}");
    }
}

fn run_analyze(args: AnalyzeArgs) -> Result<ExitCode, String> {
    let config = match &args.config {
        Some(p) => BarrierConfig::load(p).map_err(|e| e.to_string())?,
        None => BarrierConfig::default(),
    };
    let input = AnalyzeInput {
        edl: read_all(&args.edl)?,
        sir: read_all(&args.ir)?,
        config,
        limits: TrackLimits {
            max_paths: args.max_paths,
            max_path_len: args.max_path_len,
            ..TrackLimits::default()
        },
    };
    let analysis = match args.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| e.to_string())?
            .install(|| analyze(&input)),
        None => analyze(&input),
    }
    .map_err(|e| e.to_string())?;
    print_dumps(&analysis, &args.dump);
    let format = match args.format {
        OutputFormat::Text => Format::Text,
        OutputFormat::Json => Format::Json,
    };
    print!("{}", analysis.report.emit(format));
    Ok(if analysis.report.findings.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn run_corpus_cmd(dir: &Path) -> Result<ExitCode, String> {
    let results = run_corpus(dir).map_err(|e| format!("cannot read corpus {}: {e}", dir.display()))?;
    if results.is_empty() {
        eprintln!("warning: no cases found under {}", dir.display());
        return Ok(ExitCode::SUCCESS);
    }
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut failed = 0;
    for r in &results {
        match &r.verdict {
            CaseVerdict::Pass => println!("{:width$}  pass", r.name),
            CaseVerdict::Mismatch { missing, unexpected } => {
                failed += 1;
                println!("{:width$}  MISMATCH", r.name);
                for f in missing {
                    println!("    missing    {} {} sink {} source {}", f.pattern, f.risk, f.sink, f.source);
                }
                for f in unexpected {
                    println!("    unexpected {} {} sink {} source {}", f.pattern, f.risk, f.sink, f.source);
                }
            }
            CaseVerdict::Error(msg) => {
                failed += 1;
                println!("{:width$}  ERROR {msg}", r.name);
            }
        }
    }
    println!("{} case(s), {} passed, {} failed", results.len(), results.len() - failed, failed);
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(args) => run_analyze(args),
        Command::Corpus { dir } => run_corpus_cmd(&dir),
    };
    result.unwrap_or_else(|msg| {
        eprintln!("error: {msg}");
        ExitCode::from(2)
    })
}
