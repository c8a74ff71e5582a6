//! Run configuration and the probe/eval pipeline.
//!
//! `probe` appends one [`RunRecord`] per probe to `results.jsonl` in the
//! output directory, skipping probes already recorded, so an interrupted run
//! resumes where it stopped. `eval` turns a complete results file into
//! metric reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{
    score_candidates, Backend, BackendError, GenConfig, HttpBackend, HttpConfig, ModelResponse, OracleBackend,
    OracleConfig, ScoringOptions, ScriptedBackend,
};
use crate::corpus::{load_resource, Corpus, CorpusError, Direction};
use crate::metrics::{self, MetricError, MetricReport, ProbeResult};
use crate::probegen::{enumerate_probes, render_prompt, ProbeError, ProbeInstance, ProbeKey, PromptOptions, DEFAULT_INSTRUCTION};
use crate::text::normalize;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const BINS_CSV: &str = "bins.csv";
pub const ENTITY_TYPES_CSV: &str = "entity_types.csv";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("backend failed after {completed} new record(s): {source}")]
    Backend {
        completed: usize,
        #[source]
        source: BackendError,
    },
    #[error("results: {0}")]
    Data(String),
}

impl RunError {
    /// 1 for usage, config and I/O problems, 2 for invalid data, 3 for
    /// backend failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io { .. } => 1,
            RunError::Corpus(CorpusError::Io { .. }) => 1,
            RunError::Corpus(_) | RunError::Probe(_) | RunError::Metric(_) | RunError::Data(_) => 2,
            RunError::Backend { .. } => 3,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Oracle,
    Http,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    /// Server root for `http`.
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Maximum requests in flight.
    pub parallelism: usize,
    pub oracle: OracleConfig,
    /// Script file for `scripted`.
    pub script: Option<PathBuf>,
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec {
            kind: BackendKind::Oracle,
            endpoint: None,
            model: None,
            parallelism: 1,
            oracle: OracleConfig::default(),
            script: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabMode {
    #[default]
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    pub shots: usize,
    /// Restrict to one direction; both when absent.
    pub direction: Option<Direction>,
    pub vocab: VocabMode,
    pub seed: u64,
    pub instruction: String,
    pub length_normalize: bool,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            shots: 0,
            direction: None,
            vocab: VocabMode::Open,
            seed: 0,
            instruction: DEFAULT_INSTRUCTION.to_owned(),
            length_normalize: true,
        }
    }
}

impl ProbeSettings {
    pub fn prompt_options(&self) -> PromptOptions {
        PromptOptions {
            shots: self.shots,
            seed: self.seed,
            instruction: self.instruction.clone(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_bin_size() -> u32 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default)]
    pub probe: ProbeSettings,
    #[serde(default)]
    pub generation: GenConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_bin_size")]
    pub bin_size: u32,
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            corpus: corpus.into(),
            backend: BackendSpec::default(),
            probe: ProbeSettings::default(),
            generation: GenConfig::default(),
            output_dir: output_dir.into(),
            bin_size: default_bin_size(),
        }
    }

    /// Parses TOML (`.toml`) or JSON (anything else). Relative paths are
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let raw = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&raw).map_err(|e| RunError::Config(e.to_string()))?
        } else {
            serde_json::from_str(&raw).map_err(|e| RunError::Config(e.to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [Some(&mut cfg.corpus), Some(&mut cfg.output_dir), cfg.backend.script.as_mut()]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.backend.parallelism == 0 {
            return Err(RunError::Config("backend.parallelism must be at least 1".into()));
        }
        if self.bin_size == 0 {
            return Err(RunError::Config("bin_size must be at least 1".into()));
        }
        match self.backend.kind {
            BackendKind::Http if self.backend.endpoint.is_none() || self.backend.model.is_none() => Err(
                RunError::Config("http backend needs backend.endpoint and backend.model".into()),
            ),
            BackendKind::Scripted if self.backend.script.is_none() => {
                Err(RunError::Config("scripted backend needs backend.script".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn results_path(&self) -> PathBuf {
        self.output_dir.join(RESULTS_FILE)
    }
}

pub fn load_corpus(path: &Path) -> Result<Corpus, RunError> {
    Ok(load_resource(path)?)
}

pub fn build_backend(spec: &BackendSpec, corpus: &Corpus) -> Result<Box<dyn Backend>, RunError> {
    Ok(match spec.kind {
        BackendKind::Oracle => Box::new(
            OracleBackend::new(corpus.clone(), spec.oracle.clone()).map_err(|e| RunError::Config(e.to_string()))?,
        ),
        BackendKind::Http => {
            let endpoint = spec.endpoint.as_deref().unwrap_or_default();
            let model = spec.model.as_deref().unwrap_or_default();
            Box::new(HttpBackend::new(HttpConfig::new(endpoint, model).with_env_key()))
        }
        BackendKind::Scripted => {
            let path = spec.script.as_deref().ok_or_else(|| RunError::Config("missing backend.script".into()))?;
            let raw = fs::read_to_string(path).map_err(io_err(path))?;
            let script: ScriptedBackend =
                serde_json::from_str(&raw).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
            Box::new(script)
        }
    })
}

/// One line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sr_id: String,
    pub pattern_index: usize,
    pub key_time_index: usize,
    pub direction: Direction,
    /// SHA-256 of the full prompt text, hex.
    pub prompt_hash: String,
    pub raw_text: String,
    pub normalized: Vec<String>,
    #[serde(default)]
    pub closed_vocab_choice: Option<String>,
    pub latency_ms: f64,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

impl RunRecord {
    pub fn key(&self) -> ProbeKey {
        ProbeKey {
            sr_id: self.sr_id.clone(),
            pattern_index: self.pattern_index,
            key_time_index: self.key_time_index,
            direction: self.direction,
        }
    }
}

pub fn prompt_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProbeSummary {
    pub total: usize,
    pub already_recorded: usize,
    pub written: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ProbeLimits {
    /// Stop after this many new records.
    pub max_new: Option<usize>,
}

struct Planned {
    instance: ProbeInstance,
    prompt: crate::probegen::PromptText,
    hash: String,
}

fn plan(cfg: &RunConfig, corpus: &Corpus) -> Result<Vec<Planned>, RunError> {
    let opts = cfg.probe.prompt_options();
    enumerate_probes(corpus, cfg.probe.direction)
        .into_iter()
        .map(|instance| {
            let prompt = render_prompt(&instance, corpus, &opts)?;
            Ok(Planned {
                hash: prompt_hash(&prompt.full_text),
                instance,
                prompt,
            })
        })
        .collect()
}

/// Reads complete records, dropping a torn final line (no trailing newline).
/// Returns the records and the byte length of the intact prefix.
fn read_records(path: &Path, tolerate_torn_tail: bool) -> Result<(Vec<RunRecord>, u64), RunError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut good = 0u64;
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        let complete = line.ends_with('\n');
        match serde_json::from_str::<RunRecord>(line.trim_end()) {
            Ok(r) if complete => {
                records.push(r);
                good += n as u64;
            }
            _ if !complete && tolerate_torn_tail => break,
            Ok(_) => return Err(RunError::Data(format!("line {lineno} is truncated"))),
            Err(e) => return Err(RunError::Data(format!("line {lineno}: {e}"))),
        }
    }
    Ok((records, good))
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn run_one(backend: &dyn Backend, corpus: &Corpus, cfg: &RunConfig, p: &Planned) -> Result<RunRecord, BackendError> {
    let start = Instant::now();
    let (response, choice) = match cfg.probe.vocab {
        VocabMode::Open => (backend.complete(&p.prompt, &cfg.generation)?, None),
        VocabMode::Closed => {
            cfg.generation.check_budget(&p.prompt)?;
            let set = corpus
                .candidate_set(&p.instance.sr_id)
                .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
            let opts = ScoringOptions {
                length_normalize: cfg.probe.length_normalize,
            };
            let ranked = score_candidates(backend, &p.prompt, &set, opts, &cfg.generation)?;
            let choice = ranked[0].0.clone();
            let surface = set.members[&choice].clone();
            (ModelResponse::from_text(surface), Some(choice))
        }
    };
    Ok(RunRecord {
        sr_id: p.instance.sr_id.clone(),
        pattern_index: p.instance.pattern_index,
        key_time_index: p.instance.key_time_index,
        direction: p.instance.direction,
        prompt_hash: p.hash.clone(),
        raw_text: response.raw_text,
        normalized: response.normalized,
        closed_vocab_choice: choice,
        latency_ms: start.elapsed().as_secs_f64() * 1000.0,
        timestamp_ms: now_ms(),
    })
}

/// Queries the backend for every probe not yet in the results file and
/// appends the records in enumeration order. Up to `parallelism` requests
/// run at once. On backend failure the records gathered so far are kept.
pub fn cmd_probe(
    cfg: &RunConfig,
    corpus: &Corpus,
    backend: &dyn Backend,
    limits: ProbeLimits,
) -> Result<ProbeSummary, RunError> {
    cfg.validate()?;
    let planned = plan(cfg, corpus)?;
    let known: BTreeSet<ProbeKey> = planned.iter().map(|p| p.instance.key()).collect();
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let path = cfg.results_path();
    let (existing, good_len) = read_records(&path, true)?;
    let mut done = BTreeSet::new();
    for r in &existing {
        if !known.contains(&r.key()) {
            return Err(RunError::Data(format!("record {:?} is not a probe of this config", r.key())));
        }
        if !done.insert(r.key()) {
            return Err(RunError::Data(format!("duplicate record {:?}", r.key())));
        }
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(io_err(&path))?;
    if file.metadata().map_err(io_err(&path))?.len() != good_len {
        file.set_len(good_len).map_err(io_err(&path))?;
    }

    let pending: Vec<&Planned> = planned
        .iter()
        .filter(|p| !done.contains(&p.instance.key()))
        .take(limits.max_new.unwrap_or(usize::MAX))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.backend.parallelism)
        .build()
        .map_err(|e| RunError::Config(e.to_string()))?;
    let mut written = 0;
    for chunk in pending.chunks(cfg.backend.parallelism) {
        let outcomes: Vec<Result<RunRecord, BackendError>> = pool.install(|| {
            use rayon::prelude::*;
            chunk.par_iter().map(|p| run_one(backend, corpus, cfg, p)).collect()
        });
        for outcome in outcomes {
            let record = outcome.map_err(|source| RunError::Backend {
                completed: written,
                source,
            })?;
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(io_err(&path))?;
            written += 1;
        }
        file.flush().map_err(io_err(&path))?;
    }
    Ok(ProbeSummary {
        total: planned.len(),
        already_recorded: existing.len(),
        written,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub report: MetricReport,
    pub bins: Vec<metrics::BreakdownRow>,
    pub entity_types: Vec<metrics::BreakdownRow>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    /// Accept records whose prompt hash differs from the current config.
    pub allow_prompt_drift: bool,
}

/// Joins the results file with the corpus probes, checks completeness,
/// prompt drift and closed-vocabulary choices, then computes the reports.
pub fn load_results(cfg: &RunConfig, corpus: &Corpus, opts: EvalOptions) -> Result<Vec<ProbeResult>, RunError> {
    let path = cfg.results_path();
    if !path.exists() {
        return Err(RunError::Data(format!("{} does not exist", path.display())));
    }
    let (records, _) = read_records(&path, false)?;
    let mut by_key: BTreeMap<ProbeKey, RunRecord> = BTreeMap::new();
    for r in records {
        let key = r.key();
        if by_key.insert(key.clone(), r).is_some() {
            return Err(RunError::Data(format!("duplicate record {key:?}")));
        }
    }
    let planned = plan(cfg, corpus)?;
    let missing = planned.iter().filter(|p| !by_key.contains_key(&p.instance.key())).count();
    if missing > 0 {
        return Err(RunError::Data(format!(
            "incomplete: {missing} of {} probes have no record",
            planned.len()
        )));
    }
    if by_key.len() != planned.len() {
        return Err(RunError::Data("records for probes outside this config".into()));
    }
    let mut out = Vec::with_capacity(planned.len());
    for p in planned {
        let r = by_key.remove(&p.instance.key()).expect("completeness checked");
        if !opts.allow_prompt_drift && r.prompt_hash != p.hash {
            return Err(RunError::Data(format!(
                "prompt drift for {:?}: results were produced with a different prompt configuration",
                p.instance.key()
            )));
        }
        if let Some(choice) = &r.closed_vocab_choice {
            let set = corpus.candidate_set(&p.instance.sr_id)?;
            if !set.contains(&normalize(choice).join(" ")) {
                return Err(RunError::Data(format!(
                    "closed-vocabulary choice `{choice}` is not a candidate of `{}`",
                    p.instance.sr_id
                )));
            }
        }
        out.push(ProbeResult {
            instance: p.instance,
            response: ModelResponse {
                raw_text: r.raw_text,
                normalized: r.normalized,
                first_token_dist: None,
            },
            closed_vocab_choice: r.closed_vocab_choice,
        });
    }
    Ok(out)
}

pub fn evaluate_run(cfg: &RunConfig, corpus: &Corpus, opts: EvalOptions) -> Result<EvalOutput, RunError> {
    let results = load_results(cfg, corpus, opts)?;
    Ok(EvalOutput {
        report: metrics::evaluate(&results)?,
        bins: metrics::bin_by_year(&results, cfg.bin_size)?,
        entity_types: metrics::by_entity_type(&results)?,
    })
}

/// Writes `report.json`, `report.csv`, `bins.csv` and `entity_types.csv`
/// into the output directory.
pub fn cmd_eval(cfg: &RunConfig, corpus: &Corpus, opts: EvalOptions) -> Result<EvalOutput, RunError> {
    let out = evaluate_run(cfg, corpus, opts)?;
    let dir = &cfg.output_dir;
    let write = |name: &str, bytes: Vec<u8>| -> Result<(), RunError> {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(io_err(&p))
    };
    write(REPORT_JSON, out.report.to_json().into_bytes())?;
    let csv_err = |e: csv::Error| RunError::Data(e.to_string());
    let mut buf = Vec::new();
    metrics::write_csv(&mut buf, "scope", &[("all", &out.report)]).map_err(csv_err)?;
    write(REPORT_CSV, buf)?;
    let mut buf = Vec::new();
    metrics::write_breakdown_csv(&mut buf, "year_bin", &out.bins).map_err(csv_err)?;
    write(BINS_CSV, buf)?;
    let mut buf = Vec::new();
    metrics::write_breakdown_csv(&mut buf, "entity_type", &out.entity_types).map_err(csv_err)?;
    write(ENTITY_TYPES_CSV, buf)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{mini_fixture, MINI_FIXTURE_JSON};

    fn setup(dir: &Path) -> RunConfig {
        let corpus_path = dir.join("mini.json");
        fs::write(&corpus_path, MINI_FIXTURE_JSON).unwrap();
        RunConfig::new(corpus_path, dir.join("out"))
    }

    fn strip_volatile(text: &str) -> String {
        text.lines()
            .map(|l| {
                let mut r: RunRecord = serde_json::from_str(l).unwrap();
                r.latency_ms = 0.0;
                r.timestamp_ms = 0;
                serde_json::to_string(&r).unwrap()
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn oracle_run_answers_gold() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path());
        let corpus = mini_fixture();
        let oracle = build_backend(&cfg.backend, &corpus).unwrap();
        let s = cmd_probe(&cfg, &corpus, oracle.as_ref(), ProbeLimits::default()).unwrap();
        assert_eq!((s.total, s.written), (36, 36));
        let results = load_results(&cfg, &corpus, EvalOptions::default()).unwrap();
        assert!(results.iter().all(|r| r.answer() == r.gold()));
        let out = cmd_eval(&cfg, &corpus, EvalOptions::default()).unwrap();
        assert_eq!(out.report.temp_cons_fact.avg, Some(100.0));
        for f in [REPORT_JSON, REPORT_CSV, BINS_CSV, ENTITY_TYPES_CSV] {
            assert!(cfg.output_dir.join(f).exists());
        }
        let again = cmd_probe(&cfg, &corpus, oracle.as_ref(), ProbeLimits::default()).unwrap();
        assert_eq!((again.already_recorded, again.written), (36, 0));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let corpus = mini_fixture();
        let a = tempfile::tempdir().unwrap();
        let cfg_a = setup(a.path());
        let oracle = build_backend(&cfg_a.backend, &corpus).unwrap();
        cmd_probe(&cfg_a, &corpus, oracle.as_ref(), ProbeLimits::default()).unwrap();

        let b = tempfile::tempdir().unwrap();
        let mut cfg_b = setup(b.path());
        cfg_b.backend.parallelism = 3;
        cmd_probe(&cfg_b, &corpus, oracle.as_ref(), ProbeLimits { max_new: Some(10) }).unwrap();
        // simulate a torn write
        let path = cfg_b.results_path();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"sr_id\":\"best-pi").unwrap();
        drop(f);
        assert!(matches!(
            load_results(&cfg_b, &corpus, EvalOptions::default()),
            Err(RunError::Data(_))
        ));
        let s = cmd_probe(&cfg_b, &corpus, oracle.as_ref(), ProbeLimits::default()).unwrap();
        assert_eq!((s.already_recorded, s.written), (10, 26));
        let ra = fs::read_to_string(cfg_a.results_path()).unwrap();
        let rb = fs::read_to_string(cfg_b.results_path()).unwrap();
        assert_eq!(strip_volatile(&ra), strip_volatile(&rb));
    }

    #[test]
    fn shots_change_hashes_and_drift_is_detected() {
        let corpus = mini_fixture();
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path());
        let oracle = build_backend(&cfg.backend, &corpus).unwrap();
        cmd_probe(&cfg, &corpus, oracle.as_ref(), ProbeLimits::default()).unwrap();
        let mut two = cfg.clone();
        two.probe.shots = 1;
        let err = load_results(&two, &corpus, EvalOptions::default()).unwrap_err();
        assert!(err.to_string().contains("prompt drift"));
        assert!(load_results(&two, &corpus, EvalOptions { allow_prompt_drift: true }).is_ok());
    }

    #[test]
    fn closed_vocab_with_oracle() {
        let corpus = mini_fixture();
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = setup(dir.path());
        cfg.probe.vocab = VocabMode::Closed;
        let oracle = build_backend(&cfg.backend, &corpus).unwrap();
        cmd_probe(&cfg, &corpus, oracle.as_ref(), ProbeLimits::default()).unwrap();
        let out = evaluate_run(&cfg, &corpus, EvalOptions::default()).unwrap();
        assert_eq!(out.report.temp_fact.avg, Some(100.0));
    }

    #[test]
    fn backend_failure_keeps_partial_file() {
        let corpus = mini_fixture();
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path());
        let probes = enumerate_probes(&corpus, None);
        let mut script = ScriptedBackend::default();
        for p in probes.iter().take(5) {
            script = script.with_completion(&p.query, &p.expected_value.name);
        }
        let err = cmd_probe(&cfg, &corpus, &script, ProbeLimits::default()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let (records, _) = read_records(&cfg.results_path(), false).unwrap();
        assert_eq!(records.len(), 5);
    }

    #[test]
    fn config_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(
            &p,
            "corpus = \"c.json\"\nbin_size = 5\n[backend]\nkind = \"oracle\"\nparallelism = 2\n[backend.oracle]\nerror_rate = 0.25\n[probe]\nshots = 2\ndirection = \"backward\"\nvocab = \"closed\"\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.corpus, dir.path().join("c.json"));
        assert_eq!(cfg.probe.direction, Some(Direction::Backward));
        assert_eq!(cfg.backend.oracle.error_rate, 0.25);
        assert_eq!(cfg.output_dir, dir.path().join("out"));
        let j = dir.path().join("run.json");
        fs::write(&j, r#"{"corpus":"c.json","backend":{"kind":"http"}}"#).unwrap();
        assert!(matches!(RunConfig::load(&j), Err(RunError::Config(_))));
        fs::write(&j, r#"{"corpus":"c.json","bogus":1}"#).unwrap();
        assert!(matches!(RunConfig::load(&j), Err(RunError::Config(_))));
    }
}
