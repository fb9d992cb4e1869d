//! Reference implementations written independently of the crate.

use std::collections::BTreeMap;

use nestcall::retrieval::{KeyKind, RankedItem, RankedList};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Plain double loop in exact rational arithmetic: every tool's score is
/// `numerator / denominator` with one shared denominator, so ties are exact.
/// Returns (name, numerator, denominator) sorted by score, then name.
pub fn brute_force_rrf_exact(lists: &[Vec<String>], k: u64) -> Vec<(String, u128, u128)> {
    let longest = lists.iter().map(Vec::len).max().unwrap_or(0) as u128;
    let mut den: u128 = 1;
    for r in 1..=longest {
        let d = k as u128 + r;
        den = den / gcd(den, d) * d;
    }
    let mut scores: BTreeMap<String, u128> = BTreeMap::new();
    for list in lists {
        for (i, name) in list.iter().enumerate() {
            *scores.entry(name.clone()).or_insert(0) += den / (k as u128 + i as u128 + 1);
        }
    }
    let mut out: Vec<(String, u128, u128)> = scores.into_iter().map(|(n, s)| (n, s, den)).collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Float view of the exact oracle.
pub fn brute_force_rrf(lists: &[Vec<String>], k: u64) -> Vec<(String, f64)> {
    brute_force_rrf_exact(lists, k)
        .into_iter()
        .map(|(n, num, den)| (n, num as f64 / den as f64))
        .collect()
}

/// Ranked list whose scores decrease strictly along `names`.
pub fn ranked(names: &[String]) -> RankedList {
    let n = names.len();
    let items = names
        .iter()
        .enumerate()
        .map(|(i, name)| RankedItem {
            tool_name: name.clone(),
            score: (n - i) as f64,
        })
        .collect();
    RankedList::from_scores("q", KeyKind::Name, items)
}

/// Random instances: every ranking is a permutation of the same tool set.
pub fn rrf_instances(seed: u64, per_shape: usize) -> Vec<Vec<Vec<String>>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::new();
    for n_tools in 1..=6 {
        for n_lists in 1..=6 {
            for _ in 0..per_shape {
                let tools: Vec<String> = (0..n_tools)
                    .map(|i| format!("tool-{}", (b'a' + i as u8) as char))
                    .collect();
                let lists = (0..n_lists)
                    .map(|_| {
                        let mut l = tools.clone();
                        l.shuffle(&mut rng);
                        l
                    })
                    .collect();
                out.push(lists);
            }
        }
    }
    out
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs())
}
