use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::{embed_checked, EmbeddingProvider, EmbeddingVector};
use super::fusion::{rrf_fuse, FusedRanking, RankedItem, RankedList};
use super::{KeyKind, RetrievalConfig, RetrievalError};
use crate::parallel::{map_ordered, Parallelism};
use crate::registry::{hex_digest, Category, ToolRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub tool_name: String,
    pub category: Category,
    /// One vector per [`KeyKind`], in `KeyKind::ALL` order.
    pub vectors: Vec<EmbeddingVector>,
}

/// Embedded tool keys. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolIndex {
    pub provider_id: String,
    pub toolkit_hash: String,
    pub dimension: usize,
    pub entries: Vec<IndexEntry>,
}

fn key_texts(tools: &[&ToolRecord]) -> Vec<String> {
    tools
        .iter()
        .flat_map(|t| KeyKind::ALL.iter().map(move |k| k.text(t)))
        .collect()
}

/// Hash of exactly what gets embedded, so a cache goes stale when any key
/// text changes.
pub fn toolkit_hash(tools: &[&ToolRecord]) -> String {
    let described: Vec<(&str, Category, [String; 3])> = tools
        .iter()
        .map(|t| {
            (
                t.tool_name.as_str(),
                t.category,
                KeyKind::ALL.map(|k| k.text(t)),
            )
        })
        .collect();
    hex_digest(
        serde_json::to_string(&described)
            .expect("key texts serialize")
            .as_bytes(),
    )
}

pub fn build_index(
    tools: &[&ToolRecord],
    provider: &dyn EmbeddingProvider,
    parallelism: Parallelism,
) -> Result<ToolIndex, RetrievalError> {
    if tools.is_empty() {
        return Err(RetrievalError::EmptyToolSet);
    }
    let texts = key_texts(tools);
    let chunks: Vec<&[String]> = texts.chunks(provider.max_batch().max(1)).collect();
    let embedded = map_ordered(&chunks, parallelism, |chunk| embed_checked(provider, chunk));
    let mut vectors = Vec::with_capacity(texts.len());
    for chunk in embedded {
        vectors.extend(chunk?);
    }
    let dimension = vectors[0].dimension();
    if let Some(v) = vectors.iter().find(|v| v.dimension() != dimension) {
        return Err(RetrievalError::DimensionMismatch {
            expected: dimension,
            found: v.dimension(),
        });
    }
    let mut it = vectors.into_iter();
    let entries = tools
        .iter()
        .map(|t| IndexEntry {
            tool_name: t.tool_name.clone(),
            category: t.category,
            vectors: it.by_ref().take(KeyKind::ALL.len()).collect(),
        })
        .collect();
    Ok(ToolIndex {
        provider_id: provider.id(),
        toolkit_hash: toolkit_hash(tools),
        dimension,
        entries,
    })
}

/// Load the index from `cache` when it matches the provider and tool set,
/// otherwise build it (and write the cache if a path was given).
pub fn build_or_load_index(
    tools: &[&ToolRecord],
    provider: &dyn EmbeddingProvider,
    cache: Option<&Path>,
    parallelism: Parallelism,
) -> Result<ToolIndex, RetrievalError> {
    let Some(path) = cache else {
        return build_index(tools, provider, parallelism);
    };
    let wanted = toolkit_hash(tools);
    if path.exists() {
        match ToolIndex::load(path) {
            Ok(idx) if idx.provider_id == provider.id() && idx.toolkit_hash == wanted => {
                return Ok(idx)
            }
            Ok(_) => log::info!("index cache {} is stale; rebuilding", path.display()),
            Err(e) => log::warn!("{e}; rebuilding"),
        }
    }
    let idx = build_index(tools, provider, parallelism)?;
    idx.save(path)?;
    Ok(idx)
}

impl ToolIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vector_count(&self) -> usize {
        self.entries.iter().map(|e| e.vectors.len()).sum()
    }

    pub fn tool_names(&self, scope: Option<Category>) -> Vec<&str> {
        self.scoped(scope).map(|e| e.tool_name.as_str()).collect()
    }

    fn scoped(&self, scope: Option<Category>) -> impl Iterator<Item = &IndexEntry> {
        self.entries
            .iter()
            .filter(move |e| scope.is_none_or(|c| e.category == c))
    }

    /// Rank every tool in `scope` against an already embedded query.
    pub fn rank_vector(
        &self,
        query: &str,
        query_vector: &EmbeddingVector,
        key: KeyKind,
        scope: Option<Category>,
    ) -> Result<RankedList, RetrievalError> {
        if query_vector.dimension() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                found: query_vector.dimension(),
            });
        }
        let items: Vec<RankedItem> = self
            .scoped(scope)
            .map(|e| RankedItem {
                tool_name: e.tool_name.clone(),
                score: e.vectors[key.position()].cosine(query_vector),
            })
            .collect();
        if items.is_empty() {
            return Err(RetrievalError::EmptyToolSet);
        }
        Ok(RankedList::from_scores(query, key, items))
    }

    fn check_provider(&self, provider: &dyn EmbeddingProvider) -> Result<(), RetrievalError> {
        let id = provider.id();
        if id != self.provider_id {
            return Err(RetrievalError::ProviderMismatch {
                index: self.provider_id.clone(),
                provider: id,
            });
        }
        Ok(())
    }

    /// Rankings for every (query, key) pair, query-major.
    pub fn rankings(
        &self,
        provider: &dyn EmbeddingProvider,
        queries: &[String],
        keys: &[KeyKind],
        scope: Option<Category>,
    ) -> Result<Vec<RankedList>, RetrievalError> {
        self.check_provider(provider)?;
        if queries.is_empty() || queries.iter().any(|q| q.trim().is_empty()) {
            return Err(RetrievalError::EmptyQuery);
        }
        let vectors = embed_checked(provider, queries)?;
        let mut out = Vec::with_capacity(queries.len() * keys.len());
        for (q, v) in queries.iter().zip(&vectors) {
            for &k in keys {
                out.push(self.rank_vector(q, v, k, scope)?);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let text = serde_json::to_string(self).expect("index serializes");
        std::fs::write(path, text).map_err(|e| RetrievalError::Cache {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let cache_err = |message: String| RetrievalError::Cache {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| cache_err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| cache_err(e.to_string()))
    }
}

pub fn rank_by_key(
    index: &ToolIndex,
    provider: &dyn EmbeddingProvider,
    query: &str,
    key: KeyKind,
) -> Result<RankedList, RetrievalError> {
    let mut lists = index.rankings(provider, &[query.to_string()], &[key], None)?;
    Ok(lists.remove(0))
}

/// Fuse all (query, key) rankings within `scope` and keep the top-k.
pub fn retrieve_top_k(
    index: &ToolIndex,
    provider: &dyn EmbeddingProvider,
    queries: &[String],
    keys: &[KeyKind],
    scope: Option<Category>,
    config: &RetrievalConfig,
) -> Result<FusedRanking, RetrievalError> {
    let rankings = index.rankings(provider, queries, keys, scope)?;
    let mut fused = rrf_fuse(&rankings, config)?;
    fused.truncate(config.top_k);
    Ok(fused)
}
