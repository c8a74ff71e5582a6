//! The seven probe metrics, per direction, with year-bin and entity-type
//! breakdowns.
//!
//! All aggregation runs over `BTreeMap`s keyed by probe identity, so results
//! do not depend on input order.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backend::ModelResponse;
use crate::corpus::Direction;
use crate::probegen::{GroupKey, ProbeInstance, ProbeKey};
use crate::text::normalize;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("no probe results")]
    EmptyResults,
    #[error("gold answer normalizes to nothing")]
    EmptyGold,
    #[error("consistency needs at least 2 responses, got {0}")]
    GroupTooSmall(usize),
    #[error("duplicate result for probe {0:?}")]
    DuplicateProbe(ProbeKey),
    #[error("bin size must be at least 1")]
    InvalidBinSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub instance: ProbeInstance,
    pub response: ModelResponse,
    /// Normalized candidate picked in closed-vocabulary mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_vocab_choice: Option<String>,
}

impl ProbeResult {
    /// The words scored: the closed-vocabulary choice if any, else the
    /// normalized generation.
    pub fn answer(&self) -> Vec<String> {
        match &self.closed_vocab_choice {
            Some(choice) => normalize(choice),
            None => self.response.normalized.clone(),
        }
    }

    pub fn gold(&self) -> Vec<String> {
        normalize(&self.instance.expected_value.name)
    }

    pub fn soft_accuracy(&self) -> Result<f64, MetricError> {
        soft_accuracy(&self.gold(), &self.answer())
    }

    /// Whole gold answer present in the generation.
    pub fn is_correct(&self) -> Result<bool, MetricError> {
        Ok(self.soft_accuracy()? == 1.0)
    }
}

/// Length of the longest run of gold words appearing contiguously and in
/// order in `generated`, divided by the gold length.
pub fn soft_accuracy(gold: &[String], generated: &[String]) -> Result<f64, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let mut best = 0usize;
    let mut prev = vec![0usize; generated.len() + 1];
    let mut cur = vec![0usize; generated.len() + 1];
    for g in gold {
        for (j, h) in generated.iter().enumerate() {
            cur[j + 1] = if g == h { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(best as f64 / gold.len() as f64)
}

/// Fraction of unordered response pairs that are exactly equal.
pub fn group_consistency<T: PartialEq>(responses: &[T]) -> Result<f64, MetricError> {
    let n = responses.len();
    if n < 2 {
        return Err(MetricError::GroupTooSmall(n));
    }
    let mut equal = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            equal += usize::from(responses[i] == responses[j]);
        }
    }
    Ok(equal as f64 / (n * (n - 1) / 2) as f64)
}

/// Soft accuracy of the shared response when every response agrees, else 0.
pub fn temporally_consistent_factuality(gold: &[String], responses: &[Vec<String>]) -> Result<f64, MetricError> {
    if responses.len() < 2 {
        return Err(MetricError::GroupTooSmall(responses.len()));
    }
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    if responses.iter().all(|r| r == &responses[0]) {
        soft_accuracy(gold, &responses[0])
    } else {
        Ok(0.0)
    }
}

/// One metric as percentages. `avg` is the unweighted mean of whichever
/// directions are present.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionalValue {
    pub avg: Option<f64>,
    pub bwd: Option<f64>,
    pub fwd: Option<f64>,
}

impl DirectionalValue {
    fn new(fwd: Option<f64>, bwd: Option<f64>) -> Self {
        let avg = match (fwd, bwd) {
            (Some(f), Some(b)) => Some((f + b) / 2.0),
            (one, other) => one.or(other),
        };
        DirectionalValue { avg, bwd, fwd }
    }

    pub fn get(&self, direction: Direction) -> Option<f64> {
        match direction {
            Direction::Forward => self.fwd,
            Direction::Backward => self.bwd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_probes: usize,
    pub n_groups: usize,
    pub temp_fact: DirectionalValue,
    pub temp_cons: DirectionalValue,
    pub temp_cons_fact: DirectionalValue,
    pub succ_patt: DirectionalValue,
    pub succ_objs: DirectionalValue,
    pub know_cons: DirectionalValue,
    pub unk_cons: DirectionalValue,
}

impl MetricReport {
    pub const METRICS: [&'static str; 7] = [
        "temp_fact",
        "temp_cons",
        "temp_cons_fact",
        "succ_patt",
        "succ_objs",
        "know_cons",
        "unk_cons",
    ];

    /// Metrics in table order.
    pub fn values(&self) -> [(&'static str, DirectionalValue); 7] {
        [
            ("temp_fact", self.temp_fact),
            ("temp_cons", self.temp_cons),
            ("temp_cons_fact", self.temp_cons_fact),
            ("succ_patt", self.succ_patt),
            ("succ_objs", self.succ_objs),
            ("know_cons", self.know_cons),
            ("unk_cons", self.unk_cons),
        ]
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Per-direction values of the seven metrics as fractions in [0, 1].
#[derive(Debug, Default)]
struct DirectionStats {
    temp_fact: Option<f64>,
    temp_cons: Option<f64>,
    temp_cons_fact: Option<f64>,
    succ_patt: Option<f64>,
    succ_objs: Option<f64>,
    know_cons: Option<f64>,
    unk_cons: Option<f64>,
    n_groups: usize,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn percent_of(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

struct Scored<'a> {
    result: &'a ProbeResult,
    answer: Vec<String>,
    gold: Vec<String>,
    soft: f64,
}

fn direction_stats(results: &BTreeMap<ProbeKey, Scored<'_>>, direction: Direction) -> DirectionStats {
    let mut soft = Vec::new();
    let mut groups: BTreeMap<GroupKey, Vec<&Scored<'_>>> = BTreeMap::new();
    let mut patterns: BTreeMap<(&str, usize), bool> = BTreeMap::new();
    let mut objects: BTreeMap<(&str, usize), bool> = BTreeMap::new();
    for (key, s) in results.iter().filter(|(k, _)| k.direction == direction) {
        soft.push(s.soft);
        let hit = s.soft == 1.0;
        *patterns.entry((&key.sr_id, key.pattern_index)).or_default() |= hit;
        *objects
            .entry((&key.sr_id, s.result.instance.expected_time_index))
            .or_default() |= hit;
        groups.entry(s.result.instance.group()).or_default().push(s);
    }
    if soft.is_empty() {
        return DirectionStats::default();
    }

    let mut cons = Vec::new();
    let mut tcf = Vec::new();
    let mut known = Vec::new();
    let mut unknown = Vec::new();
    for members in groups.values().filter(|m| m.len() >= 2) {
        let answers: Vec<Vec<String>> = members.iter().map(|s| s.answer.clone()).collect();
        cons.push(group_consistency(&answers).expect("group has two members"));
        tcf.push(temporally_consistent_factuality(&members[0].gold, &answers).expect("gold checked"));
        let (k, u): (Vec<&Scored<'_>>, Vec<&Scored<'_>>) = members.iter().partition(|s| {
            patterns[&(s.result.instance.sr_id.as_str(), s.result.instance.pattern_index)]
        });
        for (subset, sink) in [(k, &mut known), (u, &mut unknown)] {
            if subset.len() >= 2 {
                let answers: Vec<&Vec<String>> = subset.iter().map(|s| &s.answer).collect();
                sink.push(group_consistency(&answers).expect("subset has two members"));
            }
        }
    }
    DirectionStats {
        temp_fact: mean(&soft),
        temp_cons: mean(&cons),
        temp_cons_fact: mean(&tcf),
        succ_patt: percent_of(patterns.values().filter(|h| **h).count(), patterns.len()),
        succ_objs: percent_of(objects.values().filter(|h| **h).count(), objects.len()),
        know_cons: mean(&known),
        unk_cons: mean(&unknown),
        n_groups: cons.len(),
    }
}

/// Computes all seven metrics. Groups with fewer than two responses count
/// towards probe-level metrics only.
pub fn evaluate(results: &[ProbeResult]) -> Result<MetricReport, MetricError> {
    if results.is_empty() {
        return Err(MetricError::EmptyResults);
    }
    let mut keyed = BTreeMap::new();
    for r in results {
        let gold = r.gold();
        let answer = r.answer();
        let soft = soft_accuracy(&gold, &answer)?;
        let scored = Scored {
            result: r,
            answer,
            gold,
            soft,
        };
        if keyed.insert(r.instance.key(), scored).is_some() {
            return Err(MetricError::DuplicateProbe(r.instance.key()));
        }
    }
    let f = direction_stats(&keyed, Direction::Forward);
    let b = direction_stats(&keyed, Direction::Backward);
    let pct = |x: Option<f64>| x.map(|v| v * 100.0);
    let dv = |fx: Option<f64>, bx: Option<f64>| DirectionalValue::new(pct(fx), pct(bx));
    Ok(MetricReport {
        n_probes: keyed.len(),
        n_groups: f.n_groups + b.n_groups,
        temp_fact: dv(f.temp_fact, b.temp_fact),
        temp_cons: dv(f.temp_cons, b.temp_cons),
        temp_cons_fact: dv(f.temp_cons_fact, b.temp_cons_fact),
        succ_patt: dv(f.succ_patt, b.succ_patt),
        succ_objs: dv(f.succ_objs, b.succ_objs),
        know_cons: dv(f.know_cons, b.know_cons),
        unk_cons: dv(f.unk_cons, b.unk_cons),
    })
}

/// Metrics over one slice of the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub label: String,
    pub report: MetricReport,
}

/// Label `start-end` of the bin holding `year`, with bins starting at
/// `k*size + 1` (so decades read 1521-1530, 2021-2030).
pub fn year_bin(year: i32, bin_size: u32) -> (i32, String) {
    let size = bin_size.max(1) as i32;
    let start = (year - 1).div_euclid(size) * size + 1;
    (start, format!("{start}-{}", start + size - 1))
}

/// Metrics per gold-entity year bin, ascending; empty bins are omitted.
pub fn bin_by_year(results: &[ProbeResult], bin_size: u32) -> Result<Vec<BreakdownRow>, MetricError> {
    if bin_size == 0 {
        return Err(MetricError::InvalidBinSize);
    }
    breakdown(results, |r| year_bin(r.instance.expected_value.year, bin_size))
}

/// Metrics per gold-entity type tag, sorted by tag.
pub fn by_entity_type(results: &[ProbeResult]) -> Result<Vec<BreakdownRow>, MetricError> {
    breakdown(results, |r| {
        let t = r.instance.expected_value.entity_type.clone();
        (t.clone(), t)
    })
}

fn breakdown<K: Ord>(
    results: &[ProbeResult],
    key: impl Fn(&ProbeResult) -> (K, String),
) -> Result<Vec<BreakdownRow>, MetricError> {
    let mut buckets: BTreeMap<(K, String), Vec<ProbeResult>> = BTreeMap::new();
    for r in results {
        buckets.entry(key(r)).or_default().push(r.clone());
    }
    buckets
        .into_iter()
        .map(|((_, label), rs)| Ok(BreakdownRow { label, report: evaluate(&rs)? }))
        .collect()
}

/// CSV header: a label column, counts, then each metric as avg, bwd, fwd.
pub fn csv_header(label: &str) -> Vec<String> {
    let mut h = vec![label.to_owned(), "n_probes".into(), "n_groups".into()];
    for m in MetricReport::METRICS {
        for d in ["avg", "bwd", "fwd"] {
            h.push(format!("{m}_{d}"));
        }
    }
    h
}

fn csv_row(label: &str, r: &MetricReport) -> Vec<String> {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut row = vec![label.to_owned(), r.n_probes.to_string(), r.n_groups.to_string()];
    for (_, v) in r.values() {
        row.extend([cell(v.avg), cell(v.bwd), cell(v.fwd)]);
    }
    row
}

/// Writes labelled reports as CSV; missing values are empty cells.
pub fn write_csv<W: Write>(w: W, label_header: &str, rows: &[(&str, &MetricReport)]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(csv_header(label_header))?;
    for (label, report) in rows {
        out.write_record(csv_row(label, report))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_breakdown_csv<W: Write>(w: W, label_header: &str, rows: &[BreakdownRow]) -> csv::Result<()> {
    let pairs: Vec<(&str, &MetricReport)> = rows.iter().map(|r| (r.label.as_str(), &r.report)).collect();
    write_csv(w, label_header, &pairs)
}

/// Distinct groups covered by `results`.
pub fn group_keys(results: &[ProbeResult]) -> BTreeSet<GroupKey> {
    results.iter().map(|r| r.instance.group()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityRecord;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<String> {
        normalize(s)
    }

    fn result(sr: &str, pattern: usize, key: usize, dir: Direction, gold: &str, answer: &str) -> ProbeResult {
        let rec = |n: &str, y: i32| EntityRecord {
            name: n.into(),
            year: y,
            entity_type: "movie".into(),
        };
        ProbeResult {
            instance: ProbeInstance {
                sr_id: sr.into(),
                pattern_index: pattern,
                direction: dir,
                key_object: rec("key", 2000),
                expected_value: rec(gold, 2001),
                key_time_index: key,
                expected_time_index: dir.step(key, 10).unwrap(),
                query: format!("q{pattern}"),
            },
            response: ModelResponse::from_text(answer),
            closed_vocab_choice: None,
        }
    }

    #[test]
    fn soft_accuracy_examples() {
        assert_eq!(soft_accuracy(&w("no country for old men"), &w("no country for old")).unwrap(), 0.8);
        assert_eq!(soft_accuracy(&w("the departed"), &w("departed")).unwrap(), 1.0);
        assert_eq!(soft_accuracy(&w("x y"), &w("z")).unwrap(), 0.0);
        assert_eq!(soft_accuracy(&w("x y z"), &w("y q x y")).unwrap(), 2.0 / 3.0);
        assert_eq!(soft_accuracy(&w("x y"), &[]).unwrap(), 0.0);
        assert!(matches!(soft_accuracy(&[], &w("x")), Err(MetricError::EmptyGold)));
    }

    #[test]
    fn consistency_examples() {
        let same = vec![w("x"); 8];
        assert_eq!(group_consistency(&same).unwrap(), 1.0);
        let mut split = same.clone();
        split[7] = w("y");
        assert_eq!(group_consistency(&split).unwrap(), 0.75);
        let mut table = vec![w("no country for old men"); 6];
        table.push(w("the artist"));
        table.push(w("the departed"));
        assert_eq!(group_consistency(&table).unwrap(), 15.0 / 28.0);
        assert!(matches!(group_consistency(&same[..1]), Err(MetricError::GroupTooSmall(1))));
    }

    #[test]
    fn tcf_examples() {
        let gold = w("meteora");
        assert_eq!(temporally_consistent_factuality(&gold, &vec![w("meteora"); 8]).unwrap(), 1.0);
        assert_eq!(temporally_consistent_factuality(&gold, &vec![w("hybrid theory"); 8]).unwrap(), 0.0);
        let mut split = vec![w("meteora"); 8];
        split[0] = w("hybrid theory");
        assert_eq!(temporally_consistent_factuality(&gold, &split).unwrap(), 0.0);
    }

    #[test]
    fn avg_is_unweighted_mean() {
        let v = DirectionalValue::new(Some(2.07), Some(0.89));
        assert!((v.avg.unwrap() - 1.48).abs() < 1e-12);
        assert_eq!(DirectionalValue::new(None, Some(3.0)).avg, Some(3.0));
        assert_eq!(DirectionalValue::new(None, None).avg, None);
    }

    #[test]
    fn known_and_unknown_sets() {
        // Group 1 (key 0): patterns 0,1 right; 2,3 give "x"/"y".
        // Group 2 (key 1): all four give "z" (wrong). Patterns 0 and 1 are
        // known through group 1, so only 2 and 3 are unknown.
        let f = Direction::Forward;
        let rs = vec![
            result("e", 0, 0, f, "gold one", "gold one"),
            result("e", 1, 0, f, "gold one", "gold one"),
            result("e", 2, 0, f, "gold one", "x"),
            result("e", 3, 0, f, "gold one", "y"),
            result("e", 0, 1, f, "gold two", "z"),
            result("e", 1, 1, f, "gold two", "z"),
            result("e", 2, 1, f, "gold two", "z"),
            result("e", 3, 1, f, "gold two", "z"),
        ];
        let r = evaluate(&rs).unwrap();
        assert_eq!(r.know_cons.fwd, Some(100.0));
        assert_eq!(r.unk_cons.fwd, Some(50.0));
        assert_eq!(r.succ_patt.fwd, Some(50.0));
        assert_eq!(r.succ_objs.fwd, Some(50.0));
        assert_eq!(r.temp_fact.fwd, Some(25.0));
        // group 1: 1 of 6 pairs equal; group 2: all equal
        assert!((r.temp_cons.fwd.unwrap() - (1.0 / 6.0 + 1.0) / 2.0 * 100.0).abs() < 1e-12);
        assert_eq!(r.temp_cons_fact.fwd, Some(0.0));
        assert_eq!(r.temp_fact.bwd, None);
        assert_eq!(r.temp_fact.avg, Some(25.0));
    }

    #[test]
    fn duplicates_and_empty() {
        let r = result("e", 0, 0, Direction::Forward, "x", "x");
        assert!(matches!(evaluate(&[r.clone(), r]), Err(MetricError::DuplicateProbe(_))));
        assert!(matches!(evaluate(&[]), Err(MetricError::EmptyResults)));
    }

    #[test]
    fn closed_choice_overrides_text() {
        let mut r = result("e", 0, 0, Direction::Forward, "The Departed", "garbage");
        r.closed_vocab_choice = Some("departed".into());
        assert_eq!(r.soft_accuracy().unwrap(), 1.0);
    }

    #[test]
    fn bin_labels() {
        assert_eq!(year_bin(1521, 10).1, "1521-1530");
        assert_eq!(year_bin(1530, 10).1, "1521-1530");
        assert_eq!(year_bin(1531, 10).1, "1531-1540");
        assert_eq!(year_bin(2025, 10).1, "2021-2030");
        assert_eq!(year_bin(0, 10).1, "-9-0");
        assert_eq!(year_bin(7, 1).1, "7-7");
    }

    #[test]
    fn breakdowns_cover_everything() {
        let f = Direction::Forward;
        let mut rs = vec![
            result("e", 0, 0, f, "x", "x"),
            result("e", 1, 0, f, "x", "x"),
            result("e", 0, 1, f, "y", "q"),
            result("e", 1, 1, f, "y", "y"),
        ];
        rs[2].instance.expected_value.year = 1985;
        rs[3].instance.expected_value.year = 1985;
        rs[2].instance.expected_value.entity_type = "album".into();
        rs[3].instance.expected_value.entity_type = "album".into();
        let bins = bin_by_year(&rs, 10).unwrap();
        assert_eq!(bins.len(), 2);
        assert_eq!(bins[0].label, "1981-1990");
        assert_eq!(bins[0].report.temp_cons.fwd, Some(0.0));
        assert_eq!(bins[1].label, "2001-2010");
        assert_eq!(bins[1].report.temp_cons_fact.fwd, Some(100.0));
        let one = bin_by_year(&rs, 10_000).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].report, evaluate(&rs).unwrap());
        let types = by_entity_type(&rs).unwrap();
        assert_eq!(types.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(), vec!["album", "movie"]);
        assert!(matches!(bin_by_year(&rs, 0), Err(MetricError::InvalidBinSize)));
    }

    #[test]
    fn csv_layout() {
        let rs = vec![
            result("e", 0, 0, Direction::Forward, "x", "x"),
            result("e", 1, 0, Direction::Forward, "x", "x"),
        ];
        let report = evaluate(&rs).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, "scope", &[("all", &report)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines
            .next()
            .unwrap()
            .starts_with("scope,n_probes,n_groups,temp_fact_avg,temp_fact_bwd,temp_fact_fwd,temp_cons_avg"));
        assert_eq!(lines.next().unwrap().split(',').take(6).collect::<Vec<_>>(), vec!["all", "2", "1", "100", "", "100"]);
    }

    proptest! {
        #[test]
        fn permutation_invariant(answers in proptest::collection::vec(0u8..3, 12), seed in any::<u64>()) {
            let mut rs = Vec::new();
            for (i, a) in answers.iter().enumerate() {
                let dir = if i % 2 == 0 { Direction::Forward } else { Direction::Backward };
                let key = 1 + (i / 2) % 2;
                let pattern = i / 4;
                rs.push(result("e", pattern, key, dir, "v1", &format!("v{a}")));
            }
            let base = evaluate(&rs).unwrap();
            let mut rng = crate::seed::rng(seed, &[]);
            use rand::seq::SliceRandom;
            rs.shuffle(&mut rng);
            prop_assert_eq!(evaluate(&rs).unwrap(), base);
        }

        #[test]
        fn soft_accuracy_bounds(g in proptest::collection::vec(0u8..4, 1..6), h in proptest::collection::vec(0u8..4, 0..8)) {
            let g: Vec<String> = g.iter().map(|x| format!("w{x}")).collect();
            let h: Vec<String> = h.iter().map(|x| format!("w{x}")).collect();
            let s = soft_accuracy(&g, &h).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            let contained = h.windows(g.len()).any(|win| win == g.as_slice());
            prop_assert_eq!(s == 1.0, contained);
        }
    }
}
