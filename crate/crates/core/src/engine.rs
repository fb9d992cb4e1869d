use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::llm::{ChatProvider, Decoding, PromptSet};
use crate::meta_tool::Ablation;
use crate::nesting::NestingConfig;
use crate::parallel::Parallelism;
use crate::registry::{ToolRecord, ToolRegistry};
use crate::retrieval::{
    build_or_load_index, EmbeddingProvider, RetrievalConfig, RetrievalError, ToolIndex,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub retrieval: RetrievalConfig,
    pub nesting: NestingConfig,
    pub ablation: Ablation,
    pub decoding: Decoding,
}

/// Everything a pipeline run needs. Immutable and shareable across threads.
pub struct Engine {
    pub registry: ToolRegistry,
    pub index: ToolIndex,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub chat: Arc<dyn ChatProvider>,
    pub prompts: PromptSet,
    pub config: EngineConfig,
}

impl Engine {
    /// Build the retrieval index over every tool in `registry`.
    pub fn new(
        registry: ToolRegistry,
        embedder: Arc<dyn EmbeddingProvider>,
        chat: Arc<dyn ChatProvider>,
    ) -> Result<Self, RetrievalError> {
        Self::with_index_cache(registry, embedder, chat, None, Parallelism::default())
    }

    pub fn with_index_cache(
        registry: ToolRegistry,
        embedder: Arc<dyn EmbeddingProvider>,
        chat: Arc<dyn ChatProvider>,
        cache: Option<&Path>,
        parallelism: Parallelism,
    ) -> Result<Self, RetrievalError> {
        let tools: Vec<&ToolRecord> = registry.records().iter().collect();
        let index = build_or_load_index(&tools, embedder.as_ref(), cache, parallelism)?;
        Ok(Engine {
            registry,
            index,
            embedder,
            chat,
            prompts: PromptSet::builtin(),
            config: EngineConfig::default(),
        })
    }

    pub fn with_config(mut self, config: EngineConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    /// Same registry, index and prompts with a different chat provider.
    pub fn with_chat(&self, chat: Arc<dyn ChatProvider>) -> Engine {
        Engine {
            registry: self.registry.clone(),
            index: self.index.clone(),
            embedder: self.embedder.clone(),
            chat,
            prompts: self.prompts.clone(),
            config: self.config.clone(),
        }
    }
}
