use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{KeyKind, RetrievalConfig, RetrievalError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub tool_name: String,
    pub score: f64,
}

/// Full ranking of one category for one (query, key) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query: String,
    pub key_kind: KeyKind,
    pub items: Vec<RankedItem>,
}

impl RankedList {
    /// Sort by score descending, then name ascending.
    pub fn from_scores(
        query: impl Into<String>,
        key_kind: KeyKind,
        mut items: Vec<RankedItem>,
    ) -> Self {
        items.sort_by(|a, b| by_score_then_name(a.score, &a.tool_name, b.score, &b.tool_name));
        RankedList {
            query: query.into(),
            key_kind,
            items,
        }
    }

    /// Names in rank order.
    pub fn names(&self) -> Vec<&str> {
        self.items.iter().map(|i| i.tool_name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedItem {
    pub tool_name: String,
    pub rrf_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedRanking {
    pub items: Vec<FusedItem>,
    pub k_constant: f64,
    pub source_count: usize,
}

impl FusedRanking {
    pub fn names(&self) -> Vec<&str> {
        self.items.iter().map(|i| i.tool_name.as_str()).collect()
    }

    pub fn truncate(&mut self, top_k: usize) {
        self.items.truncate(top_k);
    }
}

pub(crate) fn by_score_then_name(sa: f64, na: &str, sb: f64, nb: &str) -> Ordering {
    sb.partial_cmp(&sa)
        .unwrap_or(Ordering::Equal)
        .then_with(|| na.cmp(nb))
}

/// Reciprocal rank fusion over rankings that may be partial: a tool missing
/// from a ranking contributes nothing for it.
///
/// Each tool's contributions are summed from the best rank down, so the result
/// does not depend on the order of `rankings`.
pub fn rrf_scores(rankings: &[RankedList], k_constant: f64) -> FusedRanking {
    let mut ranks: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for ranking in rankings {
        for (i, item) in ranking.items.iter().enumerate() {
            ranks
                .entry(item.tool_name.as_str())
                .or_default()
                .push(i + 1);
        }
    }
    let mut items: Vec<FusedItem> = ranks
        .into_iter()
        .map(|(name, mut rs)| {
            rs.sort_unstable();
            FusedItem {
                tool_name: name.to_string(),
                rrf_score: rs.iter().map(|&r| 1.0 / (k_constant + r as f64)).sum(),
            }
        })
        .collect();
    items.sort_by(|a, b| by_score_then_name(a.rrf_score, &a.tool_name, b.rrf_score, &b.tool_name));
    FusedRanking {
        items,
        k_constant,
        source_count: rankings.len(),
    }
}

/// Fuse complete rankings of one tool set.
pub fn rrf_fuse(
    rankings: &[RankedList],
    config: &RetrievalConfig,
) -> Result<FusedRanking, RetrievalError> {
    config.validate()?;
    let first = rankings.first().ok_or(RetrievalError::NoRankings)?;
    let reference: BTreeSet<&str> = first.items.iter().map(|i| i.tool_name.as_str()).collect();
    if reference.len() != first.items.len() {
        return Err(RetrievalError::InconsistentToolSets(format!(
            "ranking for '{}' lists a tool twice",
            first.query
        )));
    }
    for r in &rankings[1..] {
        let set: BTreeSet<&str> = r.items.iter().map(|i| i.tool_name.as_str()).collect();
        if set != reference || r.items.len() != set.len() {
            let odd = set
                .symmetric_difference(&reference)
                .next()
                .map(|s| format!("'{s}' not in every ranking"))
                .unwrap_or_else(|| "duplicate entry".to_string());
            return Err(RetrievalError::InconsistentToolSets(format!(
                "ranking for '{}' ({}): {odd}",
                r.query,
                r.key_kind.as_str()
            )));
        }
    }
    Ok(rrf_scores(rankings, config.k_constant))
}
