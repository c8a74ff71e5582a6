//! Fixtures and corpus builders shared by unit tests, integration tests and
//! benchmarks.

use rand::Rng;

use crate::corpus::{Corpus, Direction, EntityRecord, Pattern, SubjectRelationEntry};
use crate::seed;

/// Bundled three-entry corpus (timelines of 3, 4 and 5 entities, two
/// patterns per direction each).
pub const MINI_FIXTURE_JSON: &str = include_str!("../fixtures/mini.json");

pub fn mini_fixture() -> Corpus {
    Corpus::from_json(MINI_FIXTURE_JSON).expect("bundled fixture is valid")
}

/// Entry `id` with the given timeline names (years ascending from 1990,
/// type `album`) and `n_fwd`/`n_bwd` patterns. The first pattern of each
/// direction is the base pattern.
pub fn entry(id: &str, names: &[&str], n_fwd: usize, n_bwd: usize) -> SubjectRelationEntry {
    let timeline = names
        .iter()
        .enumerate()
        .map(|(i, n)| EntityRecord {
            name: (*n).to_owned(),
            year: 1990 + i as i32,
            entity_type: "album".into(),
        })
        .collect();
    let mut patterns = Vec::new();
    for (direction, count, cue) in [
        (Direction::Forward, n_fwd, "before"),
        (Direction::Backward, n_bwd, "after"),
    ] {
        for k in 0..count {
            patterns.push(Pattern {
                template: format!("{id} variant {k} put out [X] right {cue}"),
                direction,
                is_base: k == 0,
            });
        }
    }
    SubjectRelationEntry {
        id: id.to_owned(),
        subject: id.to_owned(),
        relation: "released-by".into(),
        domain_tag: "entertainment".into(),
        timeline,
        patterns,
    }
}

/// Entry with `len` synthetic entities named `"<id> <k spelled out> edition"`.
pub fn sized_entry(id: &str, len: usize, n_fwd: usize, n_bwd: usize) -> SubjectRelationEntry {
    let names: Vec<String> = (0..len).map(|k| format!("{id} {} edition", word(k))).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut e = entry(id, &refs, n_fwd, n_bwd);
    let types = crate::corpus::EntityType::ALL;
    for (k, record) in e.timeline.iter_mut().enumerate() {
        record.year = 1521 + (k as i32 * 37) % 500;
        record.entity_type = types[k % types.len()].as_str().to_owned();
    }
    e.timeline.sort_by_key(|r| r.year);
    e
}

/// Spelled-out index so that names stay distinct after normalization
/// without relying on digits alone.
fn word(k: usize) -> String {
    const W: [&str; 10] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"];
    if k < 10 {
        W[k].to_owned()
    } else {
        format!("{}{}", W[(k / 10) % 10], W[k % 10])
    }
}

/// Random valid corpus: `n_entries` entries with timeline lengths in
/// `2..=max_len` and `1..=max_patterns` patterns per direction.
pub fn random_corpus(seed_value: u64, n_entries: usize, max_len: usize, max_patterns: usize) -> Corpus {
    let mut rng = seed::rng(seed_value, &[b"random-corpus"]);
    let entries = (0..n_entries)
        .map(|i| {
            let len = rng.random_range(2..=max_len.max(2));
            let f = rng.random_range(1..=max_patterns.max(1));
            let b = rng.random_range(1..=max_patterns.max(1));
            sized_entry(&format!("sr{i:03}"), len, f, b)
        })
        .collect();
    Corpus::new(entries)
}

/// 66 entries with eight patterns per direction and 700 entities in total
/// (min 2, max 16 per entry).
pub fn table_shaped_corpus() -> Corpus {
    let mut sizes = vec![2, 16];
    sizes.extend(std::iter::repeat_n(11, 42));
    sizes.extend(std::iter::repeat_n(10, 22));
    let entries = sizes
        .iter()
        .enumerate()
        .map(|(i, &len)| sized_entry(&format!("sr{i:02}"), len, 8, 8))
        .collect();
    Corpus::new(entries)
}
