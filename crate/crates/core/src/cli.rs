//! The `ntfuzz` command line.
//!
//! Exit codes: 0 success, 1 crashes, findings or lint hits, 2 usage, I/O or
//! reproduction errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use crate::checks::Mode;
use crate::corpus::{assemble_image, extract_corpus, Corpus};
use crate::forge::{build_image, case_seed, craft_case, CrashCase, ForgeSpec};
use crate::fuzzer::{reproduce, run_campaign, CampaignConfig, DEFAULT_PROGRAM_RATIO};
use crate::mutator::{mutate_blob, MutationConfig};
use crate::program::{parse_program, serialize_program, OpProgram};
use crate::target::{execute, lint_image, Outcome, TargetConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FOUND: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

/// Name of the clean seed written by `forge`.
pub const SEED_NAME: &str = "seed";
/// Extension of the corrupted image `forge` writes next to each case seed.
pub const CRAFTED_EXT: &str = "raw";
/// Extension of a case's program text.
pub const PROGRAM_EXT: &str = "prog";

#[derive(Debug, Parser)]
#[command(
    name = "ntfuzz",
    version,
    about = "Metadata-aware NTFS fuzzing toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the clean seed image and the reproducer cases.
    Forge {
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// One case (or `seed`) instead of all of them.
        #[arg(long)]
        case: Option<String>,
    },
    /// Extract the metadata corpus of an image.
    Extract {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scatter a corpus back over its base image.
    Assemble {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One seeded mutation round over a corpus's metadata.
    Mutate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Mount an image and run a program against it.
    Run {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        program: Option<PathBuf>,
        #[arg(long)]
        mode: Mode,
    },
    /// Run a fuzzing campaign.
    Fuzz {
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        findings: PathBuf,
        #[arg(long)]
        mode: Mode,
        #[arg(long, default_value_t = 10_000)]
        iters: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = DEFAULT_PROGRAM_RATIO)]
        program_ratio: f64,
        /// Wall-clock budget in seconds.
        #[arg(long)]
        time_limit: Option<u64>,
    },
    /// Report every hardened check an image fails.
    Lint {
        #[arg(long)]
        image: PathBuf,
    },
    /// Replay a finding bundle.
    Repro {
        #[arg(long)]
        bundle: PathBuf,
    },
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type CmdResult = Result<u8, Failure>;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn read_corpus(path: &Path) -> Result<Corpus, Failure> {
    Corpus::from_bytes(&read(path)?).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn forge(out: &Path, case: Option<&str>) -> CmdResult {
    fs::create_dir_all(out)?;
    let cases: Vec<CrashCase> = match case {
        None => CrashCase::ALL.to_vec(),
        Some(SEED_NAME) => Vec::new(),
        Some(name) => vec![name.parse::<CrashCase>()?],
    };
    if matches!(case, None | Some(SEED_NAME)) {
        let img = build_image(&ForgeSpec::default())?;
        let path = out.join(format!("{SEED_NAME}.img"));
        write(&path, &img)?;
        println!("seed {}", path.display());
    }
    for case in cases {
        let (base, corpus) = case_seed(case);
        let (crafted, program) = craft_case(case);
        let stem = out.join(case.as_str());
        write(&stem.with_extension("img"), &base)?;
        write(&stem.with_extension("ppra"), corpus.to_bytes())?;
        write(&stem.with_extension(CRAFTED_EXT), &crafted)?;
        write(
            &stem.with_extension(PROGRAM_EXT),
            serialize_program(&program),
        )?;
        println!(
            "case {} commit={} image={}",
            case,
            case.commit(),
            stem.with_extension(CRAFTED_EXT).display()
        );
    }
    Ok(EXIT_OK)
}

fn extract(image: &Path, out: &Path) -> CmdResult {
    let corpus = extract_corpus(&read(image)?)?;
    write(out, corpus.to_bytes())?;
    println!(
        "extents={} metadata_bytes={} entries={}",
        corpus.extents.len(),
        corpus.metadata.len(),
        corpus.status.entries.len()
    );
    Ok(EXIT_OK)
}

fn assemble(image: &Path, corpus: &Path, out: &Path) -> CmdResult {
    let img = assemble_image(&read(image)?, &read_corpus(corpus)?)?;
    write(out, img)?;
    Ok(EXIT_OK)
}

fn mutate(corpus: &Path, seed: u64, out: &Path, log: Option<&Path>) -> CmdResult {
    let mut c = read_corpus(corpus)?;
    let (blob, steps) = mutate_blob(&c.metadata, &MutationConfig::with_seed(seed))?;
    c.metadata = blob;
    write(out, c.to_bytes())?;
    match log {
        Some(path) => write(path, steps.to_text())?,
        None => print!("{}", steps.to_text()),
    }
    Ok(EXIT_OK)
}

fn print_outcome(outcome: &Outcome) {
    match outcome {
        Outcome::Ok => println!("outcome=ok"),
        Outcome::Validation { check, detail } => {
            let commit = check.commit().unwrap_or("-");
            println!("outcome=validation check={check} commit={commit} detail={detail}");
        }
        Outcome::Crash {
            class,
            site,
            detail,
        } => println!("outcome=crash class={class} site={site} detail={detail}"),
    }
}

fn run(image: &Path, program: Option<&Path>, mode: Mode) -> CmdResult {
    let img = read(image)?;
    let program = match program {
        Some(p) => parse_program(&String::from_utf8(read(p)?)?)?,
        None => OpProgram::default(),
    };
    let cfg = TargetConfig::from_env(mode).map_err(Failure)?;
    let e = execute(&img, &program.ops, &cfg);
    println!("mounted={}", e.mounted);
    for (op, r) in program.ops.iter().zip(&e.results) {
        match r {
            Ok(v) => println!("op {} = {v}", op.kind()),
            Err(errno) => println!("op {} = {errno}", op.kind()),
        }
    }
    println!("coverage={}", e.coverage.len());
    print_outcome(&e.outcome);
    Ok(if e.outcome.is_crash() {
        EXIT_FOUND
    } else {
        EXIT_OK
    })
}

#[allow(clippy::too_many_arguments)]
fn fuzz(
    seeds: PathBuf,
    findings: PathBuf,
    mode: Mode,
    iters: u64,
    seed: u64,
    workers: usize,
    program_ratio: f64,
    time_limit: Option<u64>,
) -> CmdResult {
    let mut cfg = CampaignConfig::new(seeds, findings, mode);
    cfg.iterations = iters;
    cfg.workers = workers;
    cfg.program_ratio = program_ratio;
    cfg.mutation = MutationConfig::with_seed(seed);
    cfg.time_budget = time_limit.map(Duration::from_secs);
    cfg.max_record_bytes = TargetConfig::from_env(mode)
        .map_err(Failure)?
        .max_record_bytes;
    let report = run_campaign(&cfg)?;
    eprint!("{report}");
    print!("{}", report.to_kv());
    Ok(if report.findings.is_empty() {
        EXIT_OK
    } else {
        EXIT_FOUND
    })
}

fn lint(image: &Path) -> CmdResult {
    let cfg = TargetConfig::from_env(Mode::Hardened).map_err(Failure)?;
    let hits = lint_image(&read(image)?, cfg.max_record_bytes);
    for h in &hits {
        println!("{h}");
    }
    Ok(if hits.is_empty() { EXIT_OK } else { EXIT_FOUND })
}

fn repro(bundle: &Path) -> CmdResult {
    let outcome = reproduce(bundle)?;
    print_outcome(&outcome);
    println!("reproduced=true");
    Ok(EXIT_OK)
}

fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::Forge { out, case } => forge(&out, case.as_deref()),
        Command::Extract { image, out } => extract(&image, &out),
        Command::Assemble { image, corpus, out } => assemble(&image, &corpus, &out),
        Command::Mutate {
            corpus,
            seed,
            out,
            log,
        } => mutate(&corpus, seed, &out, log.as_deref()),
        Command::Run {
            image,
            program,
            mode,
        } => run(&image, program.as_deref(), mode),
        Command::Fuzz {
            seeds,
            findings,
            mode,
            iters,
            seed,
            workers,
            program_ratio,
            time_limit,
        } => fuzz(
            seeds,
            findings,
            mode,
            iters,
            seed,
            workers,
            program_ratio,
            time_limit,
        ),
        Command::Lint { image } => lint(&image),
        Command::Repro { bundle } => repro(&bundle),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            EXIT_ERROR
        }
    }
}

pub fn main() -> ExitCode {
    ExitCode::from(run_with(std::env::args_os()))
}
