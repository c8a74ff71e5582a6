//! Independent reference implementations used by several test targets.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use tecfap_core::corpus::{Corpus, Direction};
use tecfap_core::seed;
use tecfap_core::text::normalize;

/// Longest common contiguous run by trying every pair of start offsets.
pub fn brute_soft(gold: &[String], gen: &[String]) -> f64 {
    let mut best = 0;
    for i in 0..gold.len() {
        for j in 0..gen.len() {
            let mut k = 0;
            while i + k < gold.len() && j + k < gen.len() && gold[i + k] == gen[j + k] {
                k += 1;
            }
            best = best.max(k);
        }
    }
    best as f64 / gold.len() as f64
}

/// Equal pairs over all pairs, counting each ordered pair once.
pub fn brute_pairs<T: PartialEq>(xs: &[T]) -> f64 {
    let mut equal = 0.0;
    let mut total = 0.0;
    for (i, a) in xs.iter().enumerate() {
        for (j, b) in xs.iter().enumerate() {
            if i < j {
                total += 1.0;
                if a == b {
                    equal += 1.0;
                }
            }
        }
    }
    equal / total
}

/// `[metric][direction]` in percent, metrics in table order and directions
/// (forward, backward). Answers are looked up by filled query text.
pub fn reference_metrics(corpus: &Corpus, answers: &HashMap<String, String>) -> [[Option<f64>; 2]; 7] {
    let mut out = [[None; 2]; 7];
    for (d, dir) in [Direction::Forward, Direction::Backward].into_iter().enumerate() {
        let mut soft_sum = 0.0;
        let mut soft_n = 0.0;
        let mut cons = Vec::new();
        let mut tcf = Vec::new();
        let mut known_cons = Vec::new();
        let mut unk_cons = Vec::new();
        let mut pat_hits = 0.0;
        let mut pat_n = 0.0;
        let mut obj_hits = 0.0;
        let mut obj_n = 0.0;
        for e in &corpus.entries {
            let len = e.timeline.len();
            let pats: Vec<usize> = (0..e.patterns.len()).filter(|&i| e.patterns[i].direction == dir).collect();
            let keys: Vec<usize> = (0..len)
                .filter(|&k| match dir {
                    Direction::Forward => k + 1 < len,
                    Direction::Backward => k >= 1,
                })
                .collect();
            let gold_of = |k: usize| match dir {
                Direction::Forward => k + 1,
                Direction::Backward => k - 1,
            };
            let ans = |p: usize, k: usize| normalize(&answers[&e.patterns[p].fill(&e.timeline[k].name)]);
            let hit = |p: usize, k: usize| brute_soft(&normalize(&e.timeline[gold_of(k)].name), &ans(p, k)) == 1.0;

            let known: Vec<bool> = pats.iter().map(|&p| keys.iter().any(|&k| hit(p, k))).collect();
            for &p in &pats {
                pat_n += 1.0;
                if keys.iter().any(|&k| hit(p, k)) {
                    pat_hits += 1.0;
                }
                for &k in &keys {
                    soft_sum += brute_soft(&normalize(&e.timeline[gold_of(k)].name), &ans(p, k));
                    soft_n += 1.0;
                }
            }
            for &k in &keys {
                obj_n += 1.0;
                if pats.iter().any(|&p| hit(p, k)) {
                    obj_hits += 1.0;
                }
                if pats.len() < 2 {
                    continue;
                }
                let group: Vec<Vec<String>> = pats.iter().map(|&p| ans(p, k)).collect();
                cons.push(brute_pairs(&group));
                let all_same = group.iter().all(|g| *g == group[0]);
                tcf.push(if all_same {
                    brute_soft(&normalize(&e.timeline[gold_of(k)].name), &group[0])
                } else {
                    0.0
                });
                for want in [true, false] {
                    let subset: Vec<&Vec<String>> =
                        group.iter().zip(&known).filter(|(_, kn)| **kn == want).map(|(g, _)| g).collect();
                    if subset.len() >= 2 {
                        let v = brute_pairs(&subset);
                        if want {
                            known_cons.push(v);
                        } else {
                            unk_cons.push(v);
                        }
                    }
                }
            }
        }
        let avg = |v: &Vec<f64>| (!v.is_empty()).then(|| 100.0 * v.iter().sum::<f64>() / v.len() as f64);
        out[0][d] = (soft_n > 0.0).then(|| 100.0 * soft_sum / soft_n);
        out[1][d] = avg(&cons);
        out[2][d] = avg(&tcf);
        out[3][d] = (pat_n > 0.0).then(|| 100.0 * pat_hits / pat_n);
        out[4][d] = (obj_n > 0.0).then(|| 100.0 * obj_hits / obj_n);
        out[5][d] = avg(&known_cons);
        out[6][d] = avg(&unk_cons);
    }
    out
}

/// A mix of exact, padded, partial, neighbouring and unrelated answers for
/// every probe query, chosen per (seed, query). Some groups are made
/// uniform so the all-agree gate fires.
pub fn scripted_answers(corpus: &Corpus, seed_value: u64) -> HashMap<String, String> {
    let mut out = HashMap::new();
    for e in &corpus.entries {
        let len = e.timeline.len();
        for dir in Direction::BOTH {
            for key in 0..len {
                let Some(gold) = dir.step(key, len) else { continue };
                let mut rng = seed::rng(seed_value, &[e.id.as_bytes(), &[dir as u8], &(key as u64).to_le_bytes()]);
                let uniform = rng.random_bool(0.3);
                let shared = rng.random_range(0..3u8);
                for (_, p) in e.patterns_in(dir) {
                    let q = p.fill(&e.timeline[key].name);
                    let choice = if uniform { shared } else { rng.random_range(0..6u8) };
                    let g = &e.timeline[gold].name;
                    let words: Vec<&str> = g.split_whitespace().collect();
                    let text = match choice {
                        0 => g.clone(),
                        1 => format!("The {g}, obviously"),
                        2 => words[..words.len().saturating_sub(1).max(1)].join(" "),
                        3 => e.timeline[(gold + 1) % len].name.clone(),
                        4 => "no idea at all".to_owned(),
                        _ => format!("{} {}", words[words.len() - 1], words[0]),
                    };
                    out.insert(q, text);
                }
            }
        }
    }
    out
}
