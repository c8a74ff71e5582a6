//! Temporal and consistency rewards for RL fine-tuning, plus a JSONL scoring
//! loop for external trainers.
//!
//! Discrete mode mixes two 0/1 components as `(1 - alpha) * temporal +
//! alpha * consistency`. Smooth mode adds a distance-shaped temporal
//! component to the 0/1 consistency component.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{Corpus, CorpusError};
use crate::text::normalized_key;

pub const DEFAULT_ALPHA: f64 = 0.66;

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("consistency gold must be `true` or `false`, got `{0}`")]
    NonBooleanGold(String),
    #[error("joint request lacks `consistency_generated`/`consistency_gold`")]
    MissingConsistency,
    #[error("smooth temporal reward needs {0}")]
    Unresolvable(&'static str),
    #[error("gold time index {t_ol} exceeds timeline end {t_n}")]
    TimeOutOfRange { t_ol: usize, t_n: usize },
    #[error("request {id}: {source}")]
    InRequest {
        id: String,
        #[source]
        source: Box<RewardError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardTask {
    /// Sentence completion (temporal component).
    K1,
    /// Paraphrase classification (consistency component).
    K2,
    /// Both components; the k2 pair travels in `consistency_*`.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    #[default]
    Discrete,
    Smooth,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRequest {
    #[serde(default)]
    pub id: Value,
    pub task: RewardTask,
    pub generated: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency_generated: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency_gold: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sr_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_time_index: Option<usize>,
    /// Time index of the gold answer; resolved from `gold` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_time_index: Option<usize>,
    /// Last time index of the timeline; taken from the corpus when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeline_end: Option<usize>,
    #[serde(default)]
    pub mode: RewardMode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl RewardRequest {
    pub fn k1(id: impl Into<Value>, generated: &str, gold: &str) -> Self {
        RewardRequest {
            id: id.into(),
            task: RewardTask::K1,
            generated: generated.into(),
            gold: gold.into(),
            consistency_generated: None,
            consistency_gold: None,
            sr_id: None,
            key_time_index: None,
            gold_time_index: None,
            timeline_end: None,
            mode: RewardMode::Discrete,
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn k2(id: impl Into<Value>, generated: &str, gold: &str) -> Self {
        RewardRequest {
            task: RewardTask::K2,
            ..Self::k1(id, generated, gold)
        }
    }

    pub fn joint(id: impl Into<Value>, generated: &str, gold: &str, cons_generated: &str, cons_gold: &str) -> Self {
        RewardRequest {
            task: RewardTask::Joint,
            consistency_generated: Some(cons_generated.into()),
            consistency_gold: Some(cons_gold.into()),
            ..Self::k1(id, generated, gold)
        }
    }

    pub fn smooth(mut self, sr_id: &str) -> Self {
        self.mode = RewardMode::Smooth;
        self.sr_id = Some(sr_id.into());
        self
    }

    fn id_string(&self) -> String {
        match &self.id {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }

    fn temporal_pair(&self) -> Option<(&str, &str)> {
        match self.task {
            RewardTask::K1 | RewardTask::Joint => Some((&self.generated, &self.gold)),
            RewardTask::K2 => None,
        }
    }

    fn consistency_pair(&self) -> Result<Option<(&str, &str)>, RewardError> {
        match self.task {
            RewardTask::K1 => Ok(None),
            RewardTask::K2 => Ok(Some((&self.generated, &self.gold))),
            RewardTask::Joint => match (&self.consistency_generated, &self.consistency_gold) {
                (Some(g), Some(l)) => Ok(Some((g, l))),
                _ => Err(RewardError::MissingConsistency),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardScore {
    pub id: Value,
    pub total: f64,
    pub temporal_component: f64,
    pub consistency_component: f64,
    /// Every component present in the request was answered correctly.
    pub matched: bool,
    /// Time index the generated answer resolves to, if any.
    pub t_og: Option<usize>,
}

/// Timeline index whose normalized name equals the normalized `text`.
pub fn locate_time_step(corpus: &Corpus, sr_id: &str, text: &str) -> Result<Option<usize>, RewardError> {
    Ok(corpus.entry(sr_id)?.position_of(text))
}

fn exact(generated: &str, gold: &str) -> bool {
    normalized_key(generated) == normalized_key(gold)
}

fn consistency_component(pair: Option<(&str, &str)>) -> Result<(f64, Option<bool>), RewardError> {
    let Some((generated, gold)) = pair else {
        return Ok((0.0, None));
    };
    let g = normalized_key(gold);
    if g != "true" && g != "false" {
        return Err(RewardError::NonBooleanGold(gold.to_owned()));
    }
    let hit = normalized_key(generated) == g;
    Ok((f64::from(u8::from(hit)), Some(hit)))
}

fn all_matched(flags: [Option<bool>; 2]) -> bool {
    flags.iter().flatten().all(|m| *m) && flags.iter().any(Option::is_some)
}

/// Relative timeline distance of a wrong answer: `|t_ol - t_og|` over the
/// room left on the side the answer fell. A zero denominator gives the
/// maximal penalty 1.
pub fn smooth_penalty(t_ol: usize, t_og: usize, t_n: usize) -> f64 {
    let dist = t_ol.abs_diff(t_og) as f64;
    let denom = if t_og > t_ol { t_n.saturating_sub(t_ol) } else { t_ol };
    if denom == 0 {
        1.0
    } else {
        dist / denom as f64
    }
}

/// 0/1 components combined with weight `alpha` on consistency. A component
/// whose task is absent contributes 0.
pub fn discrete_reward(req: &RewardRequest) -> Result<RewardScore, RewardError> {
    if !(0.0..=1.0).contains(&req.alpha) {
        return Err(RewardError::InvalidAlpha(req.alpha));
    }
    let temporal = req.temporal_pair().map(|(g, l)| exact(g, l));
    let (consistency, cons_hit) = consistency_component(req.consistency_pair()?)?;
    let temporal_component = f64::from(u8::from(temporal == Some(true)));
    Ok(RewardScore {
        id: req.id.clone(),
        total: (1.0 - req.alpha) * temporal_component + req.alpha * consistency,
        temporal_component,
        consistency_component: consistency,
        matched: all_matched([temporal, cons_hit]),
        t_og: None,
    })
}

/// +1 for an exact temporal answer, otherwise minus the relative distance
/// penalty (1 when the answer is not on the timeline); the consistency
/// component stays 0/1 and the two are summed.
pub fn smooth_reward(req: &RewardRequest, corpus: &Corpus) -> Result<RewardScore, RewardError> {
    let (consistency, cons_hit) = consistency_component(req.consistency_pair()?)?;
    let mut t_og = None;
    let (temporal_component, temporal) = match req.temporal_pair() {
        None => (0.0, None),
        Some((generated, gold)) => {
            let entry = match &req.sr_id {
                Some(id) => Some(corpus.entry(id)?),
                None => None,
            };
            t_og = entry.and_then(|e| e.position_of(generated));
            if exact(generated, gold) {
                (1.0, Some(true))
            } else {
                let entry = entry.ok_or(RewardError::Unresolvable("`sr_id` for a wrong answer"))?;
                let t_ol = req
                    .gold_time_index
                    .or_else(|| entry.position_of(gold))
                    .ok_or(RewardError::Unresolvable("a gold answer on the timeline"))?;
                let t_n = req.timeline_end.unwrap_or_else(|| entry.timeline_end());
                if t_ol > t_n {
                    return Err(RewardError::TimeOutOfRange { t_ol, t_n });
                }
                match t_og {
                    Some(t) if t == t_ol => (1.0, Some(true)),
                    Some(t) => (-smooth_penalty(t_ol, t, t_n), Some(false)),
                    None => (-1.0, Some(false)),
                }
            }
        }
    };
    Ok(RewardScore {
        id: req.id.clone(),
        total: temporal_component + consistency,
        temporal_component,
        consistency_component: consistency,
        matched: all_matched([temporal, cons_hit]),
        t_og,
    })
}

pub fn score(req: &RewardRequest, corpus: &Corpus) -> Result<RewardScore, RewardError> {
    match req.mode {
        RewardMode::Discrete => discrete_reward(req),
        RewardMode::Smooth => smooth_reward(req, corpus),
    }
}

/// Scores every request in order; the first failure aborts with its id.
pub fn score_batch(reqs: &[RewardRequest], corpus: &Corpus) -> Result<Vec<RewardScore>, RewardError> {
    reqs.iter()
        .map(|r| {
            score(r, corpus).map_err(|e| RewardError::InRequest {
                id: r.id_string(),
                source: Box::new(e),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub lines: usize,
    pub errors: usize,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    id: Value,
    error: &'a str,
}

/// Reads one JSON request per line and writes one JSON reply per line,
/// flushing after each. Bad lines (including blank ones) produce
/// `{"id": ..., "error": ...}` and processing continues.
pub fn serve<R: BufRead, W: Write>(input: R, mut output: W, corpus: &Corpus) -> std::io::Result<ServeStats> {
    let mut stats = ServeStats::default();
    for line in input.lines() {
        let line = line?;
        stats.lines += 1;
        let reply = match serde_json::from_str::<RewardRequest>(&line) {
            Ok(req) => match score(&req, corpus) {
                Ok(s) => serde_json::to_string(&s),
                Err(e) => {
                    stats.errors += 1;
                    serde_json::to_string(&ErrorLine {
                        id: req.id,
                        error: &e.to_string(),
                    })
                }
            },
            Err(e) => {
                stats.errors += 1;
                let id = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").cloned())
                    .unwrap_or(Value::Null);
                serde_json::to_string(&ErrorLine {
                    id,
                    error: &e.to_string(),
                })
            }
        }
        .map_err(std::io::Error::other)?;
        output.write_all(reply.as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::mini_fixture;

    const LP: &str = "linkin-park-release";

    #[test]
    fn locate() {
        let c = mini_fixture();
        assert_eq!(locate_time_step(&c, LP, "Meteora").unwrap(), Some(1));
        assert_eq!(locate_time_step(&c, LP, "the meteora.").unwrap(), Some(1));
        assert_eq!(locate_time_step(&c, LP, "Thriller").unwrap(), None);
        assert!(locate_time_step(&c, "nope", "Meteora").is_err());
    }

    #[test]
    fn discrete_examples() {
        let k1 = discrete_reward(&RewardRequest::k1(1, "Meteora", "meteora")).unwrap();
        assert_eq!(k1.temporal_component, 1.0);
        assert!((k1.total - 0.34).abs() < 1e-12);
        assert!(k1.matched);
        let k2 = discrete_reward(&RewardRequest::k2(2, "True", "true")).unwrap();
        assert_eq!(k2.consistency_component, 1.0);
        assert!((k2.total - 0.66).abs() < 1e-12);
        let both = discrete_reward(&RewardRequest::joint(3, "Meteora", "Meteora", "false", "false")).unwrap();
        assert_eq!(both.total, 1.0);
        let none = discrete_reward(&RewardRequest::k1(4, "Hybrid Theory", "Meteora")).unwrap();
        assert_eq!(none.total, 0.0);
        assert!(!none.matched);
    }

    #[test]
    fn discrete_errors() {
        let mut r = RewardRequest::k1(1, "x", "x");
        r.alpha = 1.5;
        assert!(matches!(discrete_reward(&r), Err(RewardError::InvalidAlpha(_))));
        assert!(matches!(
            discrete_reward(&RewardRequest::k2(1, "true", "maybe")),
            Err(RewardError::NonBooleanGold(_))
        ));
        let mut j = RewardRequest::joint(1, "x", "x", "true", "true");
        j.consistency_gold = None;
        assert!(matches!(discrete_reward(&j), Err(RewardError::MissingConsistency)));
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(smooth_penalty(2, 5, 10), 0.375);
        assert_eq!(smooth_penalty(2, 1, 10), 0.5);
        assert_eq!(smooth_penalty(0, 0, 10), 1.0);
        assert_eq!(smooth_penalty(4, 5, 4), 1.0);
    }

    #[test]
    fn smooth_against_fixture() {
        let c = mini_fixture();
        // fifa-u17-host: China(0) Canada(1) Scotland(2) Italy(3) Japan(4)
        let req = |g: &str, l: &str| RewardRequest::k1("r", g, l).smooth("fifa-u17-host");
        let right = smooth_reward(&req("Scotland", "scotland"), &c).unwrap();
        assert_eq!((right.temporal_component, right.t_og), (1.0, Some(2)));
        let late = smooth_reward(&req("Japan", "Canada"), &c).unwrap();
        assert_eq!(late.temporal_component, -1.0);
        assert_eq!(late.t_og, Some(4));
        let early = smooth_reward(&req("China", "Italy"), &c).unwrap();
        assert_eq!(early.temporal_component, -1.0);
        let near = smooth_reward(&req("Scotland", "Canada"), &c).unwrap();
        assert!((near.temporal_component + 1.0 / 3.0).abs() < 1e-15);
        let off = smooth_reward(&req("Brazil", "Canada"), &c).unwrap();
        assert_eq!((off.temporal_component, off.t_og), (-1.0, None));
        let mut joint = RewardRequest::joint("j", "Scotland", "Canada", "true", "true").smooth("fifa-u17-host");
        joint.gold_time_index = Some(1);
        let j = smooth_reward(&joint, &c).unwrap();
        assert!((j.total - (1.0 - 1.0 / 3.0)).abs() < 1e-15);
        assert!(!j.matched);
        let no_sr = RewardRequest {
            mode: RewardMode::Smooth,
            ..RewardRequest::k1(1, "x", "y")
        };
        assert!(matches!(smooth_reward(&no_sr, &c), Err(RewardError::Unresolvable(_))));
    }

    #[test]
    fn batch_preserves_order_and_reports_id() {
        let c = mini_fixture();
        let reqs = vec![
            RewardRequest::k1("a", "x", "x"),
            RewardRequest::k2("b", "true", "false"),
            RewardRequest::k1("c", "Meteora", "Hybrid Theory").smooth(LP),
        ];
        let out = score_batch(&reqs, &c).unwrap();
        let ids: Vec<&Value> = out.iter().map(|s| &s.id).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        assert_eq!(out[2].temporal_component, -0.5);
        let mut rev = reqs.clone();
        rev.reverse();
        let mut back = score_batch(&rev, &c).unwrap();
        back.reverse();
        assert_eq!(back, out);
        assert!(score_batch(&[], &c).unwrap().is_empty());
        let bad = vec![RewardRequest::k2("zz", "true", "perhaps")];
        let err = score_batch(&bad, &c).unwrap_err();
        assert!(err.to_string().starts_with("request zz:"));
    }

    #[test]
    fn serve_reports_bad_lines_and_continues() {
        let c = mini_fixture();
        let input = concat!(
            r#"{"id":1,"task":"k1","generated":"Meteora","gold":"Meteora"}"#,
            "\n",
            r#"{"id":2,"task":"k9"}"#,
            "\n",
            "\n",
            r#"{"id":"x","task":"k2","generated":"true","gold":"true","alpha":0.5}"#,
            "\n"
        );
        let mut out = Vec::new();
        let stats = serve(input.as_bytes(), &mut out, &c).unwrap();
        assert_eq!(stats, ServeStats { lines: 4, errors: 2 });
        let lines: Vec<Value> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0]["id"], 1);
        assert!((lines[0]["total"].as_f64().unwrap() - 0.34).abs() < 1e-12);
        assert_eq!(lines[1]["id"], 2);
        assert!(lines[1]["error"].is_string());
        assert!(lines[2]["id"].is_null());
        assert_eq!(lines[3]["total"], 0.5);
    }
}
