//! Dense multi-key retrieval over tool records with reciprocal rank fusion.
//!
//! Each tool is embedded under three keys (name, name with description, name
//! with docstring). A query is ranked against every key; the rankings for all
//! queries are fused and cut to the configured top-k.

mod embed;
mod fusion;
mod index;

pub use embed::{
    embed_checked, tokenize, EmbeddingProvider, EmbeddingVector, HashingEmbedder, HttpEmbedder,
};
pub use fusion::{rrf_fuse, rrf_scores, FusedItem, FusedRanking, RankedItem, RankedList};
pub use index::{
    build_index, build_or_load_index, rank_by_key, retrieve_top_k, IndexEntry, ToolIndex,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::ProviderError;
use crate::registry::ToolRecord;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot build an index over zero tools")]
    EmptyToolSet,
    #[error("query is empty")]
    EmptyQuery,
    #[error("no rankings to fuse")]
    NoRankings,
    #[error("rankings cover different tool sets: {0}")]
    InconsistentToolSets(String),
    #[error("embedding provider: {0}")]
    Provider(#[from] ProviderError),
    #[error("embedding of {0:?} is a zero vector")]
    ZeroVector(String),
    #[error("embedding dimension {found} does not match {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index was built with '{index}' but queries use '{provider}'")]
    ProviderMismatch { index: String, provider: String },
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("index cache {path}: {message}")]
    Cache { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyKind {
    Name,
    NameDescription,
    NameDocstring,
}

impl KeyKind {
    pub const ALL: [KeyKind; 3] = [
        KeyKind::Name,
        KeyKind::NameDescription,
        KeyKind::NameDocstring,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KeyKind::Name => "name",
            KeyKind::NameDescription => "name_description",
            KeyKind::NameDocstring => "name_docstring",
        }
    }

    pub fn position(self) -> usize {
        self as usize
    }

    /// Text embedded for `tool` under this key.
    pub fn text(self, tool: &ToolRecord) -> String {
        match self {
            KeyKind::Name => tool.tool_name.clone(),
            KeyKind::NameDescription => format!("{}: {}", tool.tool_name, tool.description),
            KeyKind::NameDocstring => format!("{}: {}", tool.tool_name, tool.docstring),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k_constant: f64,
    pub top_k: usize,
    pub include_original_query: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k_constant: 60.0,
            top_k: 5,
            include_original_query: true,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.k_constant > 0.0 && self.k_constant.is_finite()) {
            return Err(RetrievalError::InvalidConfig(format!(
                "k_constant must be positive, got {}",
                self.k_constant
            )));
        }
        if self.top_k == 0 {
            return Err(RetrievalError::InvalidConfig(
                "top_k must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
