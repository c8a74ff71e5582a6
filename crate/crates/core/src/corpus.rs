//! Subject-relation resources: schema, loading, validation, statistics,
//! vertical splitting and candidate sets.
//!
//! A corpus is a list of subject-relation entries. Each entry owns a strictly
//! ordered entity timeline (sequence index is the temporal order; the year is
//! kept for binning) and a set of prefix-style paraphrase patterns carrying a
//! single `[X]` slot for the key object.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::text::normalized_key;

pub const PLACEHOLDER: &str = "[X]";
pub const CORPUS_VERSION: u32 = 1;
pub const MIN_YEAR: i32 = 1500;
pub const MAX_YEAR: i32 = 2030;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema violation: {0}")]
    Schema(ValidationReport),
    #[error("unknown subject-relation id `{0}`")]
    UnknownEntry(String),
    #[error("split ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("vertical split needs at least 2 entries, corpus has {0}")]
    TooFewEntries(usize),
}

/// Temporal direction of a probe: forward asks for the entity at `t + 1`,
/// backward for the entity at `t - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Forward, Direction::Backward];

    pub fn opposite(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }

    /// Index of the expected value for a key at `key`, if it exists in a
    /// timeline of length `len`.
    pub fn step(self, key: usize, len: usize) -> Option<usize> {
        match self {
            Direction::Forward => (key + 1 < len).then_some(key + 1),
            Direction::Backward => key.checked_sub(1).filter(|_| key < len),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "forward" | "fwd" => Ok(Direction::Forward),
            "backward" | "bwd" => Ok(Direction::Backward),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}

/// Closed list of entity type tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityType {
    Person,
    Movie,
    Album,
    Satellite,
    Software,
    Book,
    Vehicle,
    Song,
    Game,
    Location,
    Element,
}

impl EntityType {
    pub const ALL: [EntityType; 11] = [
        EntityType::Person,
        EntityType::Movie,
        EntityType::Album,
        EntityType::Satellite,
        EntityType::Software,
        EntityType::Book,
        EntityType::Vehicle,
        EntityType::Song,
        EntityType::Game,
        EntityType::Location,
        EntityType::Element,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Person => "person",
            EntityType::Movie => "movie",
            EntityType::Album => "album",
            EntityType::Satellite => "satellite",
            EntityType::Software => "software",
            EntityType::Book => "book",
            EntityType::Vehicle => "vehicle",
            EntityType::Song => "song",
            EntityType::Game => "game",
            EntityType::Location => "location",
            EntityType::Element => "element",
        }
    }
}

impl FromStr for EntityType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown entity type `{s}`"))
    }
}

/// One timeline entity. `entity_type` is kept as the raw tag so that a bad tag
/// surfaces as a validation violation rather than a parse failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub name: String,
    pub year: i32,
    pub entity_type: String,
}

impl EntityRecord {
    pub fn normalized(&self) -> String {
        normalized_key(&self.name)
    }

    pub fn kind(&self) -> Option<EntityType> {
        self.entity_type.parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub template: String,
    pub direction: Direction,
    #[serde(default)]
    pub is_base: bool,
}

impl Pattern {
    /// Substitutes the key object into the template.
    pub fn fill(&self, key: &str) -> String {
        self.template.replacen(PLACEHOLDER, key, 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectRelationEntry {
    pub id: String,
    pub subject: String,
    pub relation: String,
    pub domain_tag: String,
    pub timeline: Vec<EntityRecord>,
    pub patterns: Vec<Pattern>,
}

impl SubjectRelationEntry {
    /// Patterns of one direction with their index in `patterns`.
    pub fn patterns_in(&self, direction: Direction) -> impl Iterator<Item = (usize, &Pattern)> {
        self.patterns
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.direction == direction)
    }

    pub fn pattern_count(&self, direction: Direction) -> usize {
        self.patterns_in(direction).count()
    }

    pub fn base_pattern(&self, direction: Direction) -> Option<&Pattern> {
        self.patterns_in(direction).map(|(_, p)| p).find(|p| p.is_base)
    }

    /// Last time index of the timeline (`len - 1`).
    pub fn timeline_end(&self) -> usize {
        self.timeline.len().saturating_sub(1)
    }

    /// Time index whose normalized name equals the normalized `text`.
    pub fn position_of(&self, text: &str) -> Option<usize> {
        let key = normalized_key(text);
        if key.is_empty() {
            return None;
        }
        self.timeline.iter().position(|e| e.normalized() == key)
    }

    pub fn candidate_set(&self) -> CandidateSet {
        CandidateSet {
            sr_id: self.id.clone(),
            members: self
                .timeline
                .iter()
                .map(|e| (e.normalized(), e.name.clone()))
                .collect(),
        }
    }

    /// Number of enumerable probes: every pattern pairs with each of the
    /// `len - 1` keys that have a neighbour in its direction.
    pub fn probe_count(&self) -> usize {
        self.patterns.len() * self.timeline.len().saturating_sub(1)
    }
}

/// Closed-vocabulary answer space of one entry: normalized name to surface form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub sr_id: String,
    pub members: BTreeMap<String, String>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, normalized: &str) -> bool {
        self.members.contains_key(normalized)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.members.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub version: u32,
    pub entries: Vec<SubjectRelationEntry>,
}

impl Default for Corpus {
    fn default() -> Self {
        Corpus {
            version: CORPUS_VERSION,
            entries: Vec::new(),
        }
    }
}

/// Parses and validates a corpus file; any invariant violation rejects it.
pub fn load_resource(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    Corpus::from_json(&raw)
}

impl Corpus {
    pub fn new(entries: Vec<SubjectRelationEntry>) -> Self {
        Corpus {
            version: CORPUS_VERSION,
            entries,
        }
    }

    /// Parses and validates.
    pub fn from_json(raw: &str) -> Result<Corpus, CorpusError> {
        let corpus: Corpus = serde_json::from_str(raw)?;
        let report = corpus.validate();
        if report.is_valid() {
            Ok(corpus)
        } else {
            Err(CorpusError::Schema(report))
        }
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("corpus serializes");
        out.push('\n');
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, sr_id: &str) -> Result<&SubjectRelationEntry, CorpusError> {
        self.entries
            .iter()
            .find(|e| e.id == sr_id)
            .ok_or_else(|| CorpusError::UnknownEntry(sr_id.to_owned()))
    }

    pub fn candidate_set(&self, sr_id: &str) -> Result<CandidateSet, CorpusError> {
        self.entry(sr_id).map(SubjectRelationEntry::candidate_set)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.version != CORPUS_VERSION {
            report.push(
                "",
                Invariant::SupportedVersion,
                format!("version {} (expected {CORPUS_VERSION})", self.version),
            );
        }
        let mut seen_ids = HashSet::new();
        for entry in &self.entries {
            if !seen_ids.insert(entry.id.as_str()) {
                report.push(&entry.id, Invariant::UniqueEntryId, "id appears more than once");
            }
            validate_entry(entry, &mut report);
        }
        report
    }

    pub fn stats(&self) -> CorpusStats {
        let n_pairs = self.entries.len();
        let count_dir = |d| self.entries.iter().map(|e| e.pattern_count(d)).sum::<usize>();
        let n_forward = count_dir(Direction::Forward);
        let n_backward = count_dir(Direction::Backward);
        let lengths: Vec<usize> = self.entries.iter().map(|e| e.timeline.len()).collect();
        let n_entities: usize = lengths.iter().sum();
        let types: BTreeSet<&str> = self
            .entries
            .iter()
            .flat_map(|e| e.timeline.iter().map(|r| r.entity_type.as_str()))
            .collect();
        let per_pair = |total: usize| {
            if n_pairs == 0 {
                0.0
            } else {
                total as f64 / n_pairs as f64
            }
        };
        CorpusStats {
            n_pairs,
            n_patterns: n_forward + n_backward,
            n_forward,
            n_backward,
            avg_patterns_per_pair: per_pair(n_forward + n_backward),
            n_entities,
            n_entity_types: types.len(),
            min_entities_per_pair: lengths.iter().copied().min().unwrap_or(0),
            max_entities_per_pair: lengths.iter().copied().max().unwrap_or(0),
            avg_entities_per_pair: per_pair(n_entities),
            n_samples: self.entries.iter().map(SubjectRelationEntry::probe_count).sum(),
        }
    }

    /// Partitions whole entries into (train, test). The test side receives
    /// `round_half_up(test_ratio * n)` entries chosen by a seeded shuffle;
    /// both sides keep the original corpus order.
    pub fn vertical_split(&self, test_ratio: f64, seed: u64) -> Result<(Corpus, Corpus), CorpusError> {
        if !(test_ratio > 0.0 && test_ratio < 1.0) {
            return Err(CorpusError::InvalidRatio(test_ratio));
        }
        let n = self.entries.len();
        if n < 2 {
            return Err(CorpusError::TooFewEntries(n));
        }
        let n_test = (test_ratio * n as f64 + 0.5).floor() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.entries[a].id.cmp(&self.entries[b].id));
        order.shuffle(&mut seed::rng(seed, &[b"vertical-split"]));
        let test_idx: HashSet<usize> = order.into_iter().take(n_test).collect();

        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, entry) in self.entries.iter().enumerate() {
            if test_idx.contains(&i) {
                test.push(entry.clone());
            } else {
                train.push(entry.clone());
            }
        }
        Ok((
            Corpus { version: self.version, entries: train },
            Corpus { version: self.version, entries: test },
        ))
    }
}

fn placeholder_count(template: &str) -> (usize, usize) {
    let mut ours = 0;
    let mut others = 0;
    let mut rest = template;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        match after.find(']') {
            Some(close) => {
                if &rest[open..open + close + 2] == PLACEHOLDER {
                    ours += 1;
                } else {
                    others += 1;
                }
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    (ours, others)
}

fn validate_entry(entry: &SubjectRelationEntry, report: &mut ValidationReport) {
    let id = entry.id.as_str();
    if entry.timeline.len() < 2 {
        report.push(
            id,
            Invariant::TimelineLength,
            format!("timeline has {} entries", entry.timeline.len()),
        );
    }
    let mut names = HashSet::new();
    for (t, record) in entry.timeline.iter().enumerate() {
        if !(MIN_YEAR..=MAX_YEAR).contains(&record.year) {
            report.push(
                id,
                Invariant::YearRange,
                format!("`{}` has year {}", record.name, record.year),
            );
        }
        if record.kind().is_none() {
            report.push(
                id,
                Invariant::EntityTypeTag,
                format!("`{}` has type `{}`", record.name, record.entity_type),
            );
        }
        let key = record.normalized();
        if key.is_empty() {
            report.push(
                id,
                Invariant::EntityNameNonEmpty,
                format!("timeline position {t} normalizes to nothing"),
            );
        } else if !names.insert(key.clone()) {
            report.push(id, Invariant::UniqueEntityNames, format!("`{key}` repeats"));
        }
        if t > 0 && entry.timeline[t - 1].year > record.year {
            report.push(
                id,
                Invariant::YearOrder,
                format!(
                    "`{}` ({}) follows `{}` ({})",
                    record.name,
                    record.year,
                    entry.timeline[t - 1].name,
                    entry.timeline[t - 1].year
                ),
            );
        }
    }

    let mut templates = HashSet::new();
    for (i, pattern) in entry.patterns.iter().enumerate() {
        let (ours, others) = placeholder_count(&pattern.template);
        if ours != 1 || others != 0 {
            report.push(
                id,
                Invariant::SinglePlaceholder,
                format!("pattern {i} `{}`", pattern.template),
            );
        }
        if !templates.insert(pattern.template.trim().to_lowercase()) {
            report.push(id, Invariant::UniquePatterns, format!("pattern {i} repeats"));
        }
    }
    for direction in Direction::BOTH {
        let count = entry.pattern_count(direction);
        if count == 0 {
            report.push(id, Invariant::PatternsBothDirections, format!("no {direction} pattern"));
            continue;
        }
        let bases = entry.patterns_in(direction).filter(|(_, p)| p.is_base).count();
        if bases != 1 {
            report.push(
                id,
                Invariant::SingleBasePattern,
                format!("{bases} base patterns in {direction} direction"),
            );
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Invariant {
    SupportedVersion,
    UniqueEntryId,
    TimelineLength,
    YearRange,
    YearOrder,
    EntityTypeTag,
    EntityNameNonEmpty,
    UniqueEntityNames,
    SinglePlaceholder,
    UniquePatterns,
    PatternsBothDirections,
    SingleBasePattern,
}

impl Invariant {
    pub fn name(self) -> &'static str {
        match self {
            Invariant::SupportedVersion => "supported corpus version",
            Invariant::UniqueEntryId => "entry ids unique",
            Invariant::TimelineLength => "timeline has ≥ 2 entries",
            Invariant::YearRange => "year within [1500, 2030]",
            Invariant::YearOrder => "timeline years non-decreasing",
            Invariant::EntityTypeTag => "entity type is a known tag",
            Invariant::EntityNameNonEmpty => "entity name non-empty after normalization",
            Invariant::UniqueEntityNames => "entity names unique",
            Invariant::SinglePlaceholder => "exactly one placeholder",
            Invariant::UniquePatterns => "pattern templates unique",
            Invariant::PatternsBothDirections => "forward and backward patterns present",
            Invariant::SingleBasePattern => "exactly one base pattern per direction",
        }
    }
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub entry_id: String,
    pub invariant: Invariant,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "entry `{}`: {} ({})", self.entry_id, self.invariant, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, entry_id: &str, invariant: Invariant, detail: impl Into<String>) {
        self.violations.push(Violation {
            entry_id: entry_id.to_owned(),
            invariant,
            detail: detail.into(),
        });
    }

    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.violations.split_first() {
            None => f.write_str("no violations"),
            Some((first, [])) => write!(f, "{first}"),
            Some((first, rest)) => write!(f, "{first} (+{} more)", rest.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_pairs: usize,
    pub n_patterns: usize,
    pub n_forward: usize,
    pub n_backward: usize,
    pub avg_patterns_per_pair: f64,
    pub n_entities: usize,
    pub n_entity_types: usize,
    pub min_entities_per_pair: usize,
    pub max_entities_per_pair: usize,
    pub avg_entities_per_pair: f64,
    pub n_samples: usize,
}
