//! Corpus-driven model simulator.
//!
//! The oracle recognizes every filled pattern of its corpus and answers with
//! the adjacent timeline entity, except where its error configuration makes
//! it answer wrongly. All randomness is keyed by (seed, probe identity), so
//! answers do not depend on request order or concurrency.

use std::collections::{HashMap, HashSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{same_answer, Backend, BackendError, GenConfig, Generation, TokenLogprob};
use crate::corpus::{Corpus, Direction};
use crate::probegen::PromptText;
use crate::seed;
use crate::text::normalize;

/// Log-probability the oracle assigns per word of a continuation it would
/// not generate.
const MISS_LOGPROB_PER_WORD: f64 = -10.0;
const UNKNOWN_ANSWER: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorModel {
    /// Answers the neighbour on the other side of the key (a direction
    /// confusion), or the key itself at a timeline boundary.
    WrongNeighbor,
    /// A seeded timeline entity other than the gold one.
    RandomCandidate,
    /// A seeded string that matches no timeline entity.
    OffCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InconsistencyMode {
    /// In every (entry, direction), exactly `round(error_rate * p)` of the
    /// `p` patterns are wrong, for every key.
    PerPattern,
    /// Each query is wrong independently with probability `error_rate`.
    PerQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub error_rate: f64,
    pub error_model: ErrorModel,
    pub inconsistency_mode: InconsistencyMode,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            error_rate: 0.0,
            error_model: ErrorModel::WrongNeighbor,
            inconsistency_mode: InconsistencyMode::PerPattern,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Target {
    entry: usize,
    pattern_index: usize,
    key: usize,
    direction: Direction,
}

pub struct OracleBackend {
    corpus: Corpus,
    cfg: OracleConfig,
    by_query: HashMap<String, Target>,
    wrong_patterns: HashSet<(usize, usize)>,
}

impl OracleBackend {
    pub fn new(corpus: Corpus, cfg: OracleConfig) -> Result<Self, BackendError> {
        if !(0.0..=1.0).contains(&cfg.error_rate) {
            return Err(BackendError::InvalidRequest(format!(
                "oracle error rate must lie in [0, 1], got {}",
                cfg.error_rate
            )));
        }
        let mut by_query = HashMap::new();
        let mut wrong_patterns = HashSet::new();
        for (ei, entry) in corpus.entries.iter().enumerate() {
            for (pattern_index, pattern) in entry.patterns.iter().enumerate() {
                for (key, record) in entry.timeline.iter().enumerate() {
                    by_query.entry(pattern.fill(&record.name)).or_insert(Target {
                        entry: ei,
                        pattern_index,
                        key,
                        direction: pattern.direction,
                    });
                }
            }
            if cfg.inconsistency_mode == InconsistencyMode::PerPattern {
                for direction in Direction::BOTH {
                    let pats: Vec<usize> = entry.patterns_in(direction).map(|(i, _)| i).collect();
                    let w = (cfg.error_rate * pats.len() as f64 + 0.5).floor() as usize;
                    let mut rng = seed::rng(cfg.seed, &[b"oracle-wrong", entry.id.as_bytes(), &[direction as u8]]);
                    for i in index::sample(&mut rng, pats.len(), w.min(pats.len())) {
                        wrong_patterns.insert((ei, pats[i]));
                    }
                }
            }
        }
        Ok(OracleBackend {
            corpus,
            cfg,
            by_query,
            wrong_patterns,
        })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    /// Pattern indices answering wrongly in an (entry, direction) under
    /// per-pattern inconsistency.
    pub fn wrong_patterns(&self, sr_id: &str, direction: Direction) -> Vec<usize> {
        let Some(ei) = self.corpus.entries.iter().position(|e| e.id == sr_id) else {
            return Vec::new();
        };
        let mut out: Vec<usize> = self
            .corpus
            .entries[ei]
            .patterns_in(direction)
            .map(|(i, _)| i)
            .filter(|&i| self.wrong_patterns.contains(&(ei, i)))
            .collect();
        out.sort_unstable();
        out
    }

    fn is_wrong(&self, t: &Target) -> bool {
        match self.cfg.inconsistency_mode {
            InconsistencyMode::PerPattern => self.wrong_patterns.contains(&(t.entry, t.pattern_index)),
            InconsistencyMode::PerQuery => {
                let parts = self.parts(t, b"oracle-query", true);
                self.cfg.error_rate > 0.0 && seed::unit(self.cfg.seed, &slices(&parts)) < self.cfg.error_rate
            }
        }
    }

    fn parts(&self, t: &Target, tag: &'static [u8], with_key: bool) -> Vec<Vec<u8>> {
        let id = self.corpus.entries[t.entry].id.as_bytes().to_vec();
        let mut nums = (t.pattern_index as u64).to_le_bytes().to_vec();
        if with_key {
            nums.extend_from_slice(&(t.key as u64).to_le_bytes());
        }
        vec![tag.to_vec(), id, nums]
    }

    /// Text the oracle answers for a prompt.
    pub fn answer(&self, prompt: &PromptText) -> String {
        let Some(t) = self.by_query.get(prompt.query.trim()) else {
            return UNKNOWN_ANSWER.to_owned();
        };
        let entry = &self.corpus.entries[t.entry];
        let len = entry.timeline.len();
        let Some(gold) = t.direction.step(t.key, len) else {
            return UNKNOWN_ANSWER.to_owned();
        };
        if !self.is_wrong(t) {
            return entry.timeline[gold].name.clone();
        }
        let per_query = self.cfg.inconsistency_mode == InconsistencyMode::PerQuery;
        match self.cfg.error_model {
            ErrorModel::WrongNeighbor => {
                let other = t.direction.opposite().step(t.key, len).unwrap_or(t.key);
                entry.timeline[other].name.clone()
            }
            ErrorModel::RandomCandidate => {
                let others: Vec<usize> = (0..len).filter(|&i| i != gold).collect();
                let parts = self.parts(t, b"oracle-candidate", true);
                let pick = seed::mix(self.cfg.seed, &slices(&parts)) as usize % others.len();
                entry.timeline[others[pick]].name.clone()
            }
            ErrorModel::OffCorpus => {
                let parts = self.parts(t, b"oracle-off-corpus", per_query);
                let n = seed::mix(self.cfg.seed, &slices(&parts)) % 1_000_000;
                format!("unlisted answer {n}")
            }
        }
    }
}

fn slices(parts: &[Vec<u8>]) -> Vec<&[u8]> {
    parts.iter().map(Vec::as_slice).collect()
}

impl Backend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn generate(&self, prompt: &PromptText, cfg: &GenConfig) -> Result<Generation, BackendError> {
        let text = self.answer(prompt);
        let first_token = (cfg.top_logprobs > 0).then(|| point_mass(&text));
        Ok(Generation { text, first_token })
    }

    fn continuation_logprob(
        &self,
        prompt: &PromptText,
        continuation: &str,
        _cfg: &GenConfig,
    ) -> Result<f64, BackendError> {
        if same_answer(&self.answer(prompt), continuation) {
            Ok(0.0)
        } else {
            Ok(MISS_LOGPROB_PER_WORD * normalize(continuation).len().max(1) as f64)
        }
    }

    fn next_token_logprobs(
        &self,
        prompt: &PromptText,
        _k: usize,
        _cfg: &GenConfig,
    ) -> Result<Vec<TokenLogprob>, BackendError> {
        Ok(point_mass(&self.answer(prompt)))
    }
}

/// All probability on the first word of `text`.
fn point_mass(text: &str) -> Vec<TokenLogprob> {
    let token = normalize(text).into_iter().next().unwrap_or_default();
    vec![TokenLogprob { token, logprob: 0.0 }]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{first_token_distribution, score_candidates, ScoringOptions};
    use crate::probegen::{enumerate_probes, render_prompt, PromptOptions};
    use crate::testing::mini_fixture;

    fn oracle(cfg: OracleConfig) -> OracleBackend {
        OracleBackend::new(mini_fixture(), cfg).unwrap()
    }

    fn meteora_backward() -> PromptText {
        PromptText::zero_shot(
            "complete the given sentence with the correct phrase",
            "Meteora was released by Linkin Park immediately after",
        )
    }

    #[test]
    fn perfect_oracle_answers_gold() {
        let o = oracle(OracleConfig::default());
        let r = o.complete(&meteora_backward(), &GenConfig::default()).unwrap();
        assert_eq!(r.raw_text, "Hybrid Theory");
        assert_eq!(r.normalized, vec!["hybrid", "theory"]);

        let corpus = mini_fixture();
        for probe in enumerate_probes(&corpus, None) {
            let p = render_prompt(&probe, &corpus, &PromptOptions::default()).unwrap();
            assert_eq!(o.answer(&p), probe.expected_value.name);
        }
    }

    #[test]
    fn forced_wrong_neighbor() {
        let cfg = OracleConfig {
            error_rate: 1.0,
            error_model: ErrorModel::WrongNeighbor,
            inconsistency_mode: InconsistencyMode::PerQuery,
            seed: 3,
        };
        let o = oracle(cfg);
        // backward from Meteora: gold Hybrid Theory, flipped neighbour Minutes to Midnight
        assert_eq!(o.answer(&meteora_backward()), "Minutes to Midnight");
        assert_eq!(o.answer(&meteora_backward()), o.answer(&meteora_backward()));
        // boundary: backward from Minutes to Midnight has no forward neighbour -> key itself
        let p = PromptText::zero_shot("", "Minutes to Midnight was released by Linkin Park immediately after");
        assert_eq!(o.answer(&p), "Minutes to Midnight");
    }

    #[test]
    fn off_corpus_and_random_candidate_are_wrong() {
        let corpus = mini_fixture();
        for model in [ErrorModel::OffCorpus, ErrorModel::RandomCandidate] {
            let o = oracle(OracleConfig {
                error_rate: 1.0,
                error_model: model,
                inconsistency_mode: InconsistencyMode::PerPattern,
                seed: 1,
            });
            for probe in enumerate_probes(&corpus, None) {
                let p = PromptText::zero_shot("", &probe.query);
                let a = o.answer(&p);
                assert!(!same_answer(&a, &probe.expected_value.name));
                let in_timeline = corpus.entry(&probe.sr_id).unwrap().position_of(&a).is_some();
                assert_eq!(in_timeline, model == ErrorModel::RandomCandidate);
            }
        }
    }

    #[test]
    fn per_pattern_selects_exact_count() {
        let o = oracle(OracleConfig {
            error_rate: 0.5,
            ..OracleConfig::default()
        });
        for e in &mini_fixture().entries {
            for d in Direction::BOTH {
                assert_eq!(o.wrong_patterns(&e.id, d).len(), 1);
            }
        }
    }

    #[test]
    fn unknown_query() {
        let o = oracle(OracleConfig::default());
        assert_eq!(o.answer(&PromptText::zero_shot("", "nothing like this")), "unknown");
        // forward from the last entity has no gold
        let p = PromptText::zero_shot("", "Minutes to Midnight was released by Linkin Park just before");
        assert_eq!(o.answer(&p), "unknown");
    }

    #[test]
    fn closed_vocab_gold_first() {
        let o = oracle(OracleConfig::default());
        let set = mini_fixture().candidate_set("linkin-park-release").unwrap();
        let ranked = score_candidates(&o, &meteora_backward(), &set, ScoringOptions::default(), &GenConfig::default())
            .unwrap();
        assert_eq!(ranked[0].0, "hybrid theory");
    }

    #[test]
    fn first_token_point_mass() {
        let o = oracle(OracleConfig::default());
        let d = first_token_distribution(&o, &meteora_backward(), 3, &GenConfig::default()).unwrap();
        assert_eq!(d, vec![("hybrid".to_owned(), 1.0)]);
        let d = first_token_distribution(&o, &meteora_backward(), 1, &GenConfig::default()).unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn rejects_bad_rate() {
        assert!(OracleBackend::new(
            mini_fixture(),
            OracleConfig {
                error_rate: 1.2,
                ..OracleConfig::default()
            }
        )
        .is_err());
    }
}
