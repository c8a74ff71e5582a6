//! Probe enumeration, zero/k-shot prompt rendering, instruction-data
//! generation (sentence completion and paraphrase classification) and
//! paraphrase pair sampling.

use std::io::Write;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusError, Direction, EntityRecord, SubjectRelationEntry};
use crate::seed;

pub const DEFAULT_INSTRUCTION: &str = "complete the given sentence with the correct phrase";
pub const DEFAULT_PARAPHRASE_INSTRUCTION: &str =
    "predict true if the two sentences are paraphrases of each other, otherwise false";

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("insufficient shot pool: {needed} shots requested, {available} available")]
    InsufficientShots { needed: usize, available: usize },
    #[error("insufficient patterns in `{sr_id}`: {needed} pairs requested, {available} possible")]
    InsufficientPatterns {
        sr_id: String,
        needed: usize,
        available: usize,
    },
    #[error("{name} must lie in [0, 1], got {value}")]
    InvalidRatio { name: &'static str, value: f64 },
    #[error("key index {index} outside timeline of `{sr_id}`")]
    KeyOutOfRange { sr_id: String, index: usize },
}

/// Unique identity of a probe inside a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProbeKey {
    pub sr_id: String,
    pub pattern_index: usize,
    pub key_time_index: usize,
    pub direction: Direction,
}

/// Paraphrase group: all probes sharing entry, key and direction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub sr_id: String,
    pub key_time_index: usize,
    pub direction: Direction,
}

/// One fill-in query: a pattern filled with the key object, expecting the
/// adjacent timeline entity in the pattern's direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeInstance {
    pub sr_id: String,
    pub pattern_index: usize,
    pub direction: Direction,
    pub key_object: EntityRecord,
    pub expected_value: EntityRecord,
    pub key_time_index: usize,
    pub expected_time_index: usize,
    /// The filled pattern.
    pub query: String,
}

impl ProbeInstance {
    pub fn key(&self) -> ProbeKey {
        ProbeKey {
            sr_id: self.sr_id.clone(),
            pattern_index: self.pattern_index,
            key_time_index: self.key_time_index,
            direction: self.direction,
        }
    }

    pub fn group(&self) -> GroupKey {
        GroupKey {
            sr_id: self.sr_id.clone(),
            key_time_index: self.key_time_index,
            direction: self.direction,
        }
    }
}

/// Probes for one entry, ordered by (pattern index, key time index).
pub fn entry_probes(entry: &SubjectRelationEntry, filter: Option<Direction>) -> Vec<ProbeInstance> {
    let len = entry.timeline.len();
    let mut out = Vec::new();
    for (pattern_index, pattern) in entry.patterns.iter().enumerate() {
        if filter.is_some_and(|d| d != pattern.direction) {
            continue;
        }
        for key in 0..len {
            let Some(expected) = pattern.direction.step(key, len) else {
                continue;
            };
            out.push(ProbeInstance {
                sr_id: entry.id.clone(),
                pattern_index,
                direction: pattern.direction,
                key_object: entry.timeline[key].clone(),
                expected_value: entry.timeline[expected].clone(),
                key_time_index: key,
                expected_time_index: expected,
                query: pattern.fill(&entry.timeline[key].name),
            });
        }
    }
    out
}

/// Every probe of the corpus, ordered by (entry id, pattern index, key index).
pub fn enumerate_probes(corpus: &Corpus, filter: Option<Direction>) -> Vec<ProbeInstance> {
    let mut entries: Vec<&SubjectRelationEntry> = corpus.entries.iter().collect();
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    entries.into_iter().flat_map(|e| entry_probes(e, filter)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub query: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub instruction: String,
    pub shots: Vec<Shot>,
    pub query: String,
    pub full_text: String,
}

impl PromptText {
    pub fn new(instruction: &str, shots: Vec<Shot>, query: &str) -> Self {
        let mut full_text = String::new();
        if !instruction.is_empty() {
            full_text.push_str(instruction);
            full_text.push_str(": ");
        }
        for shot in &shots {
            full_text.push_str(&shot.query);
            full_text.push_str(" => ");
            full_text.push_str(&shot.answer);
            full_text.push_str(". ");
        }
        full_text.push_str(query);
        if !shots.is_empty() {
            full_text.push_str(" =>");
        }
        PromptText {
            instruction: instruction.to_owned(),
            shots,
            query: query.to_owned(),
            full_text,
        }
    }

    pub fn zero_shot(instruction: &str, query: &str) -> Self {
        Self::new(instruction, Vec::new(), query)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub shots: usize,
    pub seed: u64,
    pub instruction: String,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            shots: 0,
            seed: 0,
            instruction: DEFAULT_INSTRUCTION.to_owned(),
        }
    }
}

/// Renders the prompt for `instance`. Shots are drawn uniformly without
/// replacement from the probes of the same entry and direction whose key
/// differs from the instance's key, so no shot carries the probed answer.
pub fn render_prompt(
    instance: &ProbeInstance,
    corpus: &Corpus,
    opts: &PromptOptions,
) -> Result<PromptText, ProbeError> {
    if opts.shots == 0 {
        return Ok(PromptText::zero_shot(&opts.instruction, &instance.query));
    }
    let entry = corpus.entry(&instance.sr_id)?;
    let pool: Vec<ProbeInstance> = entry_probes(entry, Some(instance.direction))
        .into_iter()
        .filter(|p| p.key_time_index != instance.key_time_index)
        .collect();
    if pool.len() < opts.shots {
        return Err(ProbeError::InsufficientShots {
            needed: opts.shots,
            available: pool.len(),
        });
    }
    let mut rng = seed::rng(opts.seed, &probe_seed_parts(instance, b"shots").as_slices());
    let shots = index::sample(&mut rng, pool.len(), opts.shots)
        .into_iter()
        .map(|i| Shot {
            query: pool[i].query.clone(),
            answer: pool[i].expected_value.name.clone(),
        })
        .collect();
    Ok(PromptText::new(&opts.instruction, shots, &instance.query))
}

pub(crate) struct SeedParts {
    tag: &'static [u8],
    sr_id: Vec<u8>,
    numbers: [u8; 17],
}

impl SeedParts {
    pub(crate) fn as_slices(&self) -> [&[u8]; 3] {
        [self.tag, &self.sr_id, &self.numbers]
    }
}

pub(crate) fn probe_seed_parts(p: &ProbeInstance, tag: &'static [u8]) -> SeedParts {
    let mut numbers = [0u8; 17];
    numbers[..8].copy_from_slice(&(p.pattern_index as u64).to_le_bytes());
    numbers[8..16].copy_from_slice(&(p.key_time_index as u64).to_le_bytes());
    numbers[16] = p.direction as u8;
    SeedParts {
        tag,
        sr_id: p.sr_id.as_bytes().to_vec(),
        numbers,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    K1,
    K2,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    None,
    #[default]
    SubjectRelationLine,
}

impl std::str::FromStr for ContextMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ContextMode::None),
            "subject_relation_line" => Ok(ContextMode::SubjectRelationLine),
            other => Err(format!("unknown context mode `{other}`")),
        }
    }
}

/// Identity of one filled sentence inside a paraphrase-classification pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentenceRef {
    pub sr_id: String,
    pub pattern_index: usize,
    pub direction: Direction,
    pub key_time_index: usize,
}

impl SentenceRef {
    /// Two sentences are paraphrases iff they fill different patterns of the
    /// same entry and direction with the same key.
    pub fn is_paraphrase_of(&self, other: &SentenceRef) -> bool {
        self.sr_id == other.sr_id
            && self.direction == other.direction
            && self.key_time_index == other.key_time_index
            && self.pattern_index != other.pattern_index
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub task: Task,
    pub instruction: String,
    pub input: String,
    pub context: Option<String>,
    pub output: String,
    #[serde(skip)]
    pub pair: Option<(SentenceRef, SentenceRef)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ItConfig {
    pub n_k2_pairs: usize,
    pub negative_ratio: f64,
    /// Share of negatives that are direction-flipped hard negatives.
    pub hard_negative_fraction: f64,
    pub context_mode: ContextMode,
    pub seed: u64,
    pub instruction_k1: String,
    pub instruction_k2: String,
}

impl Default for ItConfig {
    fn default() -> Self {
        ItConfig {
            n_k2_pairs: 1000,
            negative_ratio: 0.5,
            hard_negative_fraction: 0.5,
            context_mode: ContextMode::SubjectRelationLine,
            seed: 0,
            instruction_k1: DEFAULT_INSTRUCTION.to_owned(),
            instruction_k2: DEFAULT_PARAPHRASE_INSTRUCTION.to_owned(),
        }
    }
}

fn check_ratio(name: &'static str, value: f64) -> Result<(), ProbeError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ProbeError::InvalidRatio { name, value })
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Multi-task instruction data: one sentence-completion sample per probe,
/// followed by `n_k2_pairs` shuffled paraphrase-classification samples.
pub fn gen_it_samples(corpus: &Corpus, cfg: &ItConfig) -> Result<Vec<InstructionSample>, ProbeError> {
    check_ratio("negative_ratio", cfg.negative_ratio)?;
    check_ratio("hard_negative_fraction", cfg.hard_negative_fraction)?;

    let mut out = Vec::new();
    for probe in enumerate_probes(corpus, None) {
        let entry = corpus.entry(&probe.sr_id)?;
        let context = match cfg.context_mode {
            ContextMode::None => None,
            ContextMode::SubjectRelationLine => Some(format!("{} — {}", entry.subject, entry.relation)),
        };
        out.push(InstructionSample {
            task: Task::K1,
            instruction: cfg.instruction_k1.clone(),
            input: probe.query.clone(),
            context,
            output: probe.expected_value.name.clone(),
            pair: None,
        });
    }

    let n_neg = round_half_up(cfg.n_k2_pairs as f64 * cfg.negative_ratio).min(cfg.n_k2_pairs);
    let n_pos = cfg.n_k2_pairs - n_neg;
    let n_hard = round_half_up(n_neg as f64 * cfg.hard_negative_fraction).min(n_neg);
    let n_easy = n_neg - n_hard;

    let mut entries: Vec<&SubjectRelationEntry> = corpus.entries.iter().collect();
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    let positive_pool: Vec<&SubjectRelationEntry> = entries
        .iter()
        .copied()
        .filter(|e| Direction::BOTH.iter().any(|&d| e.pattern_count(d) >= 2))
        .collect();
    if n_pos > 0 && positive_pool.is_empty() {
        return Err(ProbeError::InsufficientPatterns {
            sr_id: "*".into(),
            needed: n_pos,
            available: 0,
        });
    }
    if (n_hard > 0 || n_easy > 0) && entries.is_empty() {
        return Err(ProbeError::InsufficientPatterns {
            sr_id: "*".into(),
            needed: n_neg,
            available: 0,
        });
    }

    let mut rng = seed::rng(cfg.seed, &[b"k2-pairs"]);
    let mut pairs: Vec<(SentenceRef, SentenceRef)> = Vec::with_capacity(cfg.n_k2_pairs);
    for _ in 0..n_pos {
        let e = positive_pool[rng.random_range(0..positive_pool.len())];
        let dirs: Vec<Direction> = Direction::BOTH
            .into_iter()
            .filter(|&d| e.pattern_count(d) >= 2)
            .collect();
        let d = dirs[rng.random_range(0..dirs.len())];
        let pats: Vec<usize> = e.patterns_in(d).map(|(i, _)| i).collect();
        let chosen = index::sample(&mut rng, pats.len(), 2);
        let key = rng.random_range(0..e.timeline.len());
        pairs.push((
            sentence(e, pats[chosen.index(0)], key),
            sentence(e, pats[chosen.index(1)], key),
        ));
    }
    for _ in 0..n_hard {
        let e = entries[rng.random_range(0..entries.len())];
        let d = Direction::BOTH[rng.random_range(0..2)];
        let key = rng.random_range(0..e.timeline.len());
        let a = pick_pattern(&mut rng, e, d);
        let b = pick_pattern(&mut rng, e, d.opposite());
        pairs.push((sentence(e, a, key), sentence(e, b, key)));
    }
    for _ in 0..n_easy {
        let e = entries[rng.random_range(0..entries.len())];
        let d = Direction::BOTH[rng.random_range(0..2)];
        let key = rng.random_range(0..e.timeline.len());
        let first = sentence(e, pick_pattern(&mut rng, e, d), key);
        let second = if entries.len() > 1 && rng.random_bool(0.5) {
            let mut j = rng.random_range(0..entries.len() - 1);
            if entries[j].id == e.id {
                j = entries.len() - 1;
            }
            let other = entries[j];
            let k = rng.random_range(0..other.timeline.len());
            sentence(other, pick_pattern(&mut rng, other, d), k)
        } else {
            let mut k = rng.random_range(0..e.timeline.len() - 1);
            if k >= key {
                k += 1;
            }
            sentence(e, pick_pattern(&mut rng, e, d), k)
        };
        pairs.push((first, second));
    }
    for pair in pairs.iter_mut() {
        if rng.random_bool(0.5) {
            std::mem::swap(&mut pair.0, &mut pair.1);
        }
    }
    rand::seq::SliceRandom::shuffle(pairs.as_mut_slice(), &mut rng);

    for (a, b) in pairs {
        let label = a.is_paraphrase_of(&b);
        let input = format!(
            "sentence 1: {}\nsentence 2: {}",
            render_sentence(corpus, &a)?,
            render_sentence(corpus, &b)?
        );
        out.push(InstructionSample {
            task: Task::K2,
            instruction: cfg.instruction_k2.clone(),
            input,
            context: None,
            output: label.to_string(),
            pair: Some((a, b)),
        });
    }
    Ok(out)
}

fn pick_pattern<R: Rng>(rng: &mut R, e: &SubjectRelationEntry, d: Direction) -> usize {
    let pats: Vec<usize> = e.patterns_in(d).map(|(i, _)| i).collect();
    pats[rng.random_range(0..pats.len())]
}

fn sentence(e: &SubjectRelationEntry, pattern_index: usize, key: usize) -> SentenceRef {
    SentenceRef {
        sr_id: e.id.clone(),
        pattern_index,
        direction: e.patterns[pattern_index].direction,
        key_time_index: key,
    }
}

pub fn render_sentence(corpus: &Corpus, s: &SentenceRef) -> Result<String, ProbeError> {
    let e = corpus.entry(&s.sr_id)?;
    let key = e.timeline.get(s.key_time_index).ok_or_else(|| ProbeError::KeyOutOfRange {
        sr_id: s.sr_id.clone(),
        index: s.key_time_index,
    })?;
    Ok(e.patterns[s.pattern_index].fill(&key.name))
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Same entry, key and direction; different patterns.
    Positive,
    /// Second member uses a pattern of the opposite direction.
    Agnostic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRequest {
    pub sr_id: String,
    pub key_time_index: usize,
    pub direction: Direction,
    pub mode: PairMode,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParaphrasePair {
    pub first: PromptText,
    pub second: PromptText,
    pub first_pattern: usize,
    pub second_pattern: usize,
}

/// Draws `n` distinct unordered pattern pairs for one key and renders both
/// members as zero-shot prompts.
pub fn sample_paraphrase_pairs(
    corpus: &Corpus,
    req: &PairRequest,
    instruction: &str,
) -> Result<Vec<ParaphrasePair>, ProbeError> {
    let entry = corpus.entry(&req.sr_id)?;
    let key = entry
        .timeline
        .get(req.key_time_index)
        .ok_or_else(|| ProbeError::KeyOutOfRange {
            sr_id: req.sr_id.clone(),
            index: req.key_time_index,
        })?;
    let own: Vec<usize> = entry.patterns_in(req.direction).map(|(i, _)| i).collect();
    let candidates: Vec<(usize, usize)> = match req.mode {
        PairMode::Positive => own
            .iter()
            .enumerate()
            .flat_map(|(i, &a)| own[i + 1..].iter().map(move |&b| (a, b)))
            .collect(),
        PairMode::Agnostic => {
            let flipped: Vec<usize> = entry.patterns_in(req.direction.opposite()).map(|(i, _)| i).collect();
            own.iter()
                .flat_map(|&a| flipped.iter().map(move |&b| (a, b)))
                .collect()
        }
    };
    if req.n > candidates.len() || candidates.is_empty() {
        return Err(ProbeError::InsufficientPatterns {
            sr_id: req.sr_id.clone(),
            needed: req.n,
            available: candidates.len(),
        });
    }
    let mode_tag: &[u8] = match req.mode {
        PairMode::Positive => b"positive",
        PairMode::Agnostic => b"agnostic",
    };
    let mut rng = seed::rng(
        req.seed,
        &[
            b"paraphrase-pairs",
            mode_tag,
            req.sr_id.as_bytes(),
            &(req.key_time_index as u64).to_le_bytes(),
            &[req.direction as u8],
        ],
    );
    let picked = index::sample(&mut rng, candidates.len(), req.n);
    Ok(picked
        .into_iter()
        .map(|i| {
            let (a, b) = candidates[i];
            ParaphrasePair {
                first: PromptText::zero_shot(instruction, &entry.patterns[a].fill(&key.name)),
                second: PromptText::zero_shot(instruction, &entry.patterns[b].fill(&key.name)),
                first_pattern: a,
                second_pattern: b,
            }
        })
        .collect())
}
