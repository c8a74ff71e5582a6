//! `tecfap`: probe text-completion models for temporally consistent
//! factuality, score their responses, and serve rewards.

use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tecfap_core::analysis::{self, StudyConfig};
use tecfap_core::backend::{BackendError, GenConfig};
use tecfap_core::corpus::{Corpus, CorpusError};
use tecfap_core::probegen::{self, ContextMode, ItConfig, ProbeError};
use tecfap_core::reward::{self, RewardRequest};
use tecfap_core::run::{self, BackendSpec, EvalOptions, ProbeLimits, RunConfig, RunError};

/// Failure carrying the process exit code: 1 usage/config/I/O, 2 invalid
/// data, 3 backend.
#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        Self::usage(format!("{}: {e}", path.display()))
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        CliError {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        RunError::from(e).into()
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        RunError::from(e).into()
    }
}

impl From<analysis::AnalysisError> for CliError {
    fn from(e: analysis::AnalysisError) -> Self {
        use analysis::AnalysisError as A;
        let code = match &e {
            A::Backend(BackendError::Unsupported(_)) | A::Backend(BackendError::InvalidRequest(_)) => 2,
            A::Backend(_) => 3,
            A::InvalidEpsilon(_) => 1,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(name = "tecfap", version, about = "Temporal consistency probes, metrics and rewards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CorpusArg {
    /// Corpus JSON file.
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Run config (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's corpus path.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the prompt seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(c) = &self.corpus {
            cfg.corpus = c.clone();
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.probe.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check a corpus against its schema invariants.
    Validate(CorpusArg),
    /// Print corpus statistics as JSON.
    Stats(CorpusArg),
    /// Split a corpus by subject-relation entry into train.json and test.json.
    Split {
        #[command(flatten)]
        corpus: CorpusArg,
        /// Share of entries in the test set.
        #[arg(long, default_value_t = 0.3)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Query a backend for every probe and append records to results.jsonl.
    Probe {
        #[command(flatten)]
        run: RunArgs,
        /// Stop after this many new records.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Compute metric reports from a complete results file.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Accept records produced with a different prompt configuration.
        #[arg(long)]
        allow_prompt_drift: bool,
    },
    /// Write multi-task instruction data (completion and paraphrase tasks) as JSONL.
    GenItdata {
        #[command(flatten)]
        corpus: CorpusArg,
        /// Output JSONL file.
        #[arg(long)]
        out: PathBuf,
        /// Number of paraphrase-judgement samples.
        #[arg(long, default_value_t = 1000)]
        k2_pairs: usize,
        #[arg(long, default_value_t = 0.5)]
        negative_ratio: f64,
        #[arg(long, default_value_t = 0.5)]
        hard_negative_fraction: f64,
        /// `none` or `subject_relation_line`.
        #[arg(long, default_value = "subject_relation_line")]
        context_mode: ContextMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score reward requests.
    #[command(subcommand)]
    Reward(RewardCommand),
    /// KL divergence of positive versus agnostic paraphrase pairs.
    Kl {
        #[command(flatten)]
        corpus: CorpusArg,
        /// Run config whose backend section is used; the oracle otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        entries: usize,
        #[arg(long, default_value_t = 5)]
        pairs: usize,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        #[arg(long, default_value_t = analysis::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Earlier kl.json to compare against (the baseline model).
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Output directory for kl.csv and kl.json.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum RewardCommand {
    /// Score a JSONL request file into a JSONL score file.
    Score {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Corpus for smooth-mode requests.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Score JSONL requests from stdin to stdout, one line at a time.
    Serve {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<Corpus, CliError> {
    Ok(run::load_corpus(path)?)
}

fn optional_corpus(path: Option<&Path>) -> Result<Corpus, CliError> {
    path.map_or_else(|| Ok(Corpus::new(Vec::new())), load)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn cmd_validate(path: &Path) -> CliResult {
    let raw = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let corpus: Corpus = serde_json::from_str(&raw).map_err(|e| CliError::data(format!("malformed corpus: {e}")))?;
    let report = corpus.validate();
    if report.is_valid() {
        println!("ok: {} entries, no violations", corpus.len());
        return Ok(());
    }
    for v in &report.violations {
        println!("{v}");
    }
    Err(CliError::data(format!("{} violation(s)", report.violations.len())))
}

fn cmd_split(path: &Path, ratio: f64, seed: u64, out: &Path) -> CliResult {
    let corpus = load(path)?;
    let (train, test) = corpus.vertical_split(ratio, seed)?;
    write_file(&out.join("train.json"), train.to_json().as_bytes())?;
    write_file(&out.join("test.json"), test.to_json().as_bytes())?;
    println!("train: {} entries, test: {} entries", train.len(), test.len());
    Ok(())
}

fn cmd_probe(args: &RunArgs, limit: Option<usize>) -> CliResult {
    let cfg = args.load()?;
    let corpus = load(&cfg.corpus)?;
    let backend = run::build_backend(&cfg.backend, &corpus)?;
    let s = run::cmd_probe(&cfg, &corpus, backend.as_ref(), ProbeLimits { max_new: limit })?;
    println!(
        "{} probes, {} already recorded, {} written to {}",
        s.total,
        s.already_recorded,
        s.written,
        cfg.results_path().display()
    );
    Ok(())
}

fn cmd_eval(args: &RunArgs, allow_prompt_drift: bool) -> CliResult {
    let cfg = args.load()?;
    let corpus = load(&cfg.corpus)?;
    let out = run::cmd_eval(&cfg, &corpus, EvalOptions { allow_prompt_drift })?;
    print!("{}", out.report.to_json());
    Ok(())
}

fn cmd_reward_score(input: &Path, out: &Path, corpus: Option<&Path>) -> CliResult {
    let corpus = optional_corpus(corpus)?;
    let raw = fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
    let reqs = raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<RewardRequest>(l).map_err(|e| CliError::data(format!("line {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let scores = reward::score_batch(&reqs, &corpus).map_err(|e| CliError::data(e.to_string()))?;
    let mut buf = Vec::new();
    probegen::write_jsonl(&mut buf, &scores).map_err(|e| CliError::io(out, e))?;
    write_file(out, &buf)
}

fn cmd_reward_serve(corpus: Option<&Path>) -> CliResult {
    let corpus = optional_corpus(corpus)?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    reward::serve(BufReader::new(stdin.lock()), BufWriter::new(stdout.lock()), &corpus)
        .map_err(|e| CliError::usage(format!("reward service I/O failure: {e}")))?;
    Ok(())
}

fn cmd_kl(
    corpus_path: &Path,
    config: Option<&Path>,
    study: StudyConfig,
    baseline: Option<&Path>,
    out: &Path,
) -> CliResult {
    let corpus = load(corpus_path)?;
    let (spec, gen) = match config {
        Some(p) => {
            let cfg = RunConfig::load(p)?;
            (cfg.backend, cfg.generation)
        }
        None => (BackendSpec::default(), GenConfig::default()),
    };
    let backend = run::build_backend(&spec, &corpus)?;
    let mut report = analysis::paraphrase_divergence_study(&corpus, backend.as_ref(), &study, &gen)?;
    if let Some(b) = baseline {
        let raw = fs::read_to_string(b).map_err(|e| CliError::io(b, e))?;
        let base: analysis::DivergenceReport =
            serde_json::from_str(&raw).map_err(|e| CliError::data(format!("{}: {e}", b.display())))?;
        report = analysis::compare_reports(&base, &report)?;
    }
    let mut csv = Vec::new();
    report
        .write_csv(&mut csv)
        .map_err(|e| CliError::data(e.to_string()))?;
    write_file(&out.join("kl.csv"), &csv)?;
    write_file(&out.join("kl.json"), report.to_json().as_bytes())?;
    io::stdout().write_all(&csv).map_err(|e| CliError::usage(e.to_string()))?;
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Validate(c) => cmd_validate(&c.corpus),
        Command::Stats(c) => {
            let stats = load(&c.corpus)?.stats();
            println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
            Ok(())
        }
        Command::Split { corpus, ratio, seed, out } => cmd_split(&corpus.corpus, ratio, seed, &out),
        Command::Probe { run, limit } => cmd_probe(&run, limit),
        Command::Eval { run, allow_prompt_drift } => cmd_eval(&run, allow_prompt_drift),
        Command::GenItdata {
            corpus,
            out,
            k2_pairs,
            negative_ratio,
            hard_negative_fraction,
            context_mode,
            seed,
        } => {
            let c = load(&corpus.corpus)?;
            let cfg = ItConfig {
                n_k2_pairs: k2_pairs,
                negative_ratio,
                hard_negative_fraction,
                context_mode,
                seed,
                ..ItConfig::default()
            };
            let samples = probegen::gen_it_samples(&c, &cfg)?;
            let mut buf = Vec::new();
            probegen::write_jsonl(&mut buf, &samples).map_err(|e| CliError::io(&out, e))?;
            write_file(&out, &buf)?;
            println!("{} samples written to {}", samples.len(), out.display());
            Ok(())
        }
        Command::Reward(RewardCommand::Score { input, out, corpus }) => {
            cmd_reward_score(&input, &out, corpus.as_deref())
        }
        Command::Reward(RewardCommand::Serve { corpus }) => cmd_reward_serve(corpus.as_deref()),
        Command::Kl {
            corpus,
            config,
            entries,
            pairs,
            top_k,
            epsilon,
            seed,
            baseline,
            out,
        } => {
            let study = StudyConfig {
                n_entries: entries,
                n_pairs_per_mode: pairs,
                top_k,
                epsilon,
                seed,
                ..StudyConfig::default()
            };
            cmd_kl(&corpus.corpus, config.as_deref(), study, baseline.as_deref(), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
