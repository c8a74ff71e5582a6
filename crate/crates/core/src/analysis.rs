//! Next-token KL divergence between positive and agnostic paraphrase pairs.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::backend::{first_token_distribution, Backend, BackendError, GenConfig};
use crate::corpus::{Corpus, Direction};
use crate::probegen::{sample_paraphrase_pairs, PairMode, PairRequest, ProbeError, DEFAULT_INSTRUCTION};
use crate::seed;

pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const KL_CONVENTION: &str = "KL(first || second) over first-token top-k distributions, nats";

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("distribution is empty")]
    EmptyDistribution,
    #[error("probability {1} for token `{0}` outside (0, 1]")]
    InvalidProbability(String, f64),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("requested {requested} entries, corpus has {available}")]
    TooFewEntries { requested: usize, available: usize },
    #[error("entry `{0}` has no direction with both positive and agnostic pairs")]
    NoPairs(String),
    #[error("reports cover different entries")]
    MismatchedEntries,
}

fn merged(dist: &[(String, f64)]) -> Result<BTreeMap<&str, f64>, AnalysisError> {
    if dist.is_empty() {
        return Err(AnalysisError::EmptyDistribution);
    }
    let mut out = BTreeMap::new();
    for (t, p) in dist {
        if !(*p > 0.0 && *p <= 1.0) {
            return Err(AnalysisError::InvalidProbability(t.clone(), *p));
        }
        *out.entry(t.as_str()).or_insert(0.0) += p;
    }
    Ok(out)
}

/// KL(P || Q) in nats. Tokens in P's support that Q lacks get mass
/// `epsilon` in Q, then both sides are renormalized to sum to one.
pub fn kl_divergence(p: &[(String, f64)], q: &[(String, f64)], epsilon: f64) -> Result<f64, AnalysisError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(AnalysisError::InvalidEpsilon(epsilon));
    }
    let p = merged(p)?;
    let mut q = merged(q)?;
    for t in p.keys() {
        q.entry(t).or_insert(epsilon);
    }
    let p_sum: f64 = p.values().sum();
    let q_sum: f64 = q.values().sum();
    let kl: f64 = p
        .iter()
        .map(|(t, pv)| {
            let pn = pv / p_sum;
            pn * (pn / (q[t] / q_sum)).ln()
        })
        .sum();
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n_entries: usize,
    pub n_pairs_per_mode: usize,
    pub top_k: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub instruction: String,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            n_entries: 10,
            n_pairs_per_mode: 5,
            top_k: 10,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            instruction: DEFAULT_INSTRUCTION.to_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub pp: f64,
    pub ap: f64,
    pub diff: f64,
}

impl Divergence {
    fn new(pp: f64, ap: f64) -> Self {
        Divergence { pp, ap, diff: ap - pp }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRecord {
    pub sr_id: String,
    #[serde(flatten)]
    pub scores: Divergence,
    pub n_positive: usize,
    pub n_agnostic: usize,
    /// Scores of the baseline model once compared.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Divergence>,
    /// `diff - baseline.diff`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetadata {
    pub model: String,
    pub kl: String,
    pub config: StudyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub metadata: StudyMetadata,
    /// Sorted by entry id.
    pub records: Vec<DivergenceRecord>,
    pub average: DivergenceRecord,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn average_row(records: &[DivergenceRecord]) -> DivergenceRecord {
    let pp = mean(records.iter().map(|r| r.scores.pp));
    let ap = mean(records.iter().map(|r| r.scores.ap));
    let baseline = records.iter().all(|r| r.baseline.is_some()).then(|| {
        Divergence::new(
            mean(records.iter().filter_map(|r| r.baseline.map(|b| b.pp))),
            mean(records.iter().filter_map(|r| r.baseline.map(|b| b.ap))),
        )
    });
    let scores = Divergence {
        pp,
        ap,
        diff: mean(records.iter().map(|r| r.scores.diff)),
    };
    DivergenceRecord {
        sr_id: "Average".into(),
        scores,
        n_positive: records.iter().map(|r| r.n_positive).sum(),
        n_agnostic: records.iter().map(|r| r.n_agnostic).sum(),
        baseline: baseline.map(|b| Divergence {
            diff: mean(records.iter().filter_map(|r| r.baseline.map(|b| b.diff))),
            ..b
        }),
        delta: records
            .iter()
            .all(|r| r.delta.is_some())
            .then(|| mean(records.iter().filter_map(|r| r.delta)))
            .filter(|_| !records.is_empty()),
    }
}

/// Picks `n_entries` entries at random (seeded), then for every key and
/// each direction with at least two patterns and one opposite pattern draws
/// positive and agnostic pairs and averages their KL per entry.
pub fn paraphrase_divergence_study(
    corpus: &Corpus,
    backend: &dyn Backend,
    cfg: &StudyConfig,
    gen: &GenConfig,
) -> Result<DivergenceReport, AnalysisError> {
    if cfg.epsilon.is_nan() || cfg.epsilon <= 0.0 {
        return Err(AnalysisError::InvalidEpsilon(cfg.epsilon));
    }
    let mut ids: Vec<&str> = corpus.entries.iter().map(|e| e.id.as_str()).collect();
    ids.sort_unstable();
    if cfg.n_entries == 0 || cfg.n_entries > ids.len() {
        return Err(AnalysisError::TooFewEntries {
            requested: cfg.n_entries,
            available: ids.len(),
        });
    }
    let mut rng = seed::rng(cfg.seed, &[b"kl-entries"]);
    let mut chosen: Vec<&str> = index::sample(&mut rng, ids.len(), cfg.n_entries)
        .into_iter()
        .map(|i| ids[i])
        .collect();
    chosen.sort_unstable();

    let mut records = Vec::with_capacity(chosen.len());
    for sr_id in chosen {
        let entry = corpus.entry(sr_id).map_err(ProbeError::from)?;
        let mut kls: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for key in 0..entry.timeline.len() {
            for direction in Direction::BOTH {
                if entry.pattern_count(direction) < 2 || entry.pattern_count(direction.opposite()) == 0 {
                    continue;
                }
                for (slot, mode) in [PairMode::Positive, PairMode::Agnostic].into_iter().enumerate() {
                    let req = PairRequest {
                        sr_id: sr_id.to_owned(),
                        key_time_index: key,
                        direction,
                        mode,
                        n: cfg.n_pairs_per_mode,
                        seed: cfg.seed,
                    };
                    for pair in sample_paraphrase_pairs(corpus, &req, &cfg.instruction)? {
                        let p = first_token_distribution(backend, &pair.first, cfg.top_k, gen)?;
                        let q = first_token_distribution(backend, &pair.second, cfg.top_k, gen)?;
                        kls[slot].push(kl_divergence(&p, &q, cfg.epsilon)?);
                    }
                }
            }
        }
        if kls[0].is_empty() || kls[1].is_empty() {
            return Err(AnalysisError::NoPairs(sr_id.to_owned()));
        }
        records.push(DivergenceRecord {
            sr_id: sr_id.to_owned(),
            scores: Divergence::new(mean(kls[0].iter().copied()), mean(kls[1].iter().copied())),
            n_positive: kls[0].len(),
            n_agnostic: kls[1].len(),
            baseline: None,
            delta: None,
        });
    }
    Ok(DivergenceReport {
        metadata: StudyMetadata {
            model: backend.name().to_owned(),
            kl: KL_CONVENTION.to_owned(),
            config: cfg.clone(),
            baseline_model: None,
        },
        average: average_row(&records),
        records,
    })
}

/// Attaches baseline `a` to report `b`; each delta is `diff_b - diff_a`, so a
/// positive delta means `b` separates agnostic from positive pairs more.
pub fn compare_reports(a: &DivergenceReport, b: &DivergenceReport) -> Result<DivergenceReport, AnalysisError> {
    let ids = |r: &DivergenceReport| r.records.iter().map(|x| x.sr_id.clone()).collect::<Vec<_>>();
    if ids(a) != ids(b) {
        return Err(AnalysisError::MismatchedEntries);
    }
    let records: Vec<DivergenceRecord> = a
        .records
        .iter()
        .zip(&b.records)
        .map(|(ra, rb)| DivergenceRecord {
            baseline: Some(ra.scores),
            delta: Some(rb.scores.diff - ra.scores.diff),
            ..rb.clone()
        })
        .collect();
    let mut metadata = b.metadata.clone();
    metadata.baseline_model = Some(a.metadata.model.clone());
    Ok(DivergenceReport {
        metadata,
        average: average_row(&records),
        records,
    })
}

impl DivergenceReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per entry plus an `Average` row. Compared reports carry the
    /// baseline's columns first (`*_a`), then this model's (`*_b`).
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let compared = self.records.iter().all(|r| r.baseline.is_some()) && !self.records.is_empty();
        if compared {
            out.write_record(["entry_id", "pp_a", "ap_a", "diff_a", "pp_b", "ap_b", "diff_b", "delta"])?;
        } else {
            out.write_record(["entry_id", "pp", "ap", "diff", "delta"])?;
        }
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in self.records.iter().chain(std::iter::once(&self.average)) {
            let mut row = vec![r.sr_id.clone()];
            if let (true, Some(b)) = (compared, r.baseline) {
                row.extend([b.pp.to_string(), b.ap.to_string(), b.diff.to_string()]);
            }
            row.extend([
                r.scores.pp.to_string(),
                r.scores.ap.to_string(),
                r.scores.diff.to_string(),
                cell(r.delta),
            ]);
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}
