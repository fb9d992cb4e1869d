//! Shared plumbing for the LLM-backed pipeline stages: one call, one parse,
//! and at most one corrective retry.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::prompts::TemplateError;
use crate::llm::{ChatProvider, ChatRequest, Exchange, JsonExtractError, ProviderError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Diagnosis,
    Classifier,
    Rewriter,
    Retrieval,
    Dispatcher,
    SlotFilling,
    Verification,
    Conversion,
    Evaluate,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Diagnosis => "diagnosis",
            Stage::Classifier => "classifier",
            Stage::Rewriter => "rewriter",
            Stage::Retrieval => "retrieval",
            Stage::Dispatcher => "dispatcher",
            Stage::SlotFilling => "slot_filling",
            Stage::Verification => "verification",
            Stage::Conversion => "conversion",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why a reply could not be used.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplyProblem {
    #[error("{0}")]
    Json(#[from] JsonExtractError),
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("'{0}' is not in the toolkit list [\"unit\", \"scale\"]")]
    InvalidCategory(String),
    #[error("expected exactly 3 queries, got {0}")]
    WrongArity(usize),
    #[error("'{chosen}' is not one of the tools in the Tool List")]
    NotInCandidates {
        chosen: String,
        candidates: Vec<String>,
    },
    #[error("missing parameter(s): {}", .0.join(", "))]
    MissingSlot(Vec<String>),
}

impl ReplyProblem {
    /// Corrective user turn sent back to the model.
    pub fn correction(&self) -> String {
        let hint = match self {
            ReplyProblem::NotInCandidates { candidates, .. } => format!(
                " The chosen tool must be exactly one of: {}.",
                serde_json::to_string(candidates).expect("names serialize")
            ),
            ReplyProblem::MissingSlot(_) => {
                " Every parameter in the Function Docstring must be included.".to_string()
            }
            _ => String::new(),
        };
        format!(
            "Your answer could not be used: {self}.{hint} Please answer again, with the Final Answer wrapped by ```json and ```."
        )
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("{stage}: {source}")]
    Provider {
        stage: Stage,
        #[source]
        source: ProviderError,
    },
    #[error("{stage}: {problem} (after one retry)")]
    Rejected { stage: Stage, problem: ReplyProblem },
    #[error("{stage}: {source}")]
    Template {
        stage: Stage,
        #[source]
        source: TemplateError,
    },
}

impl StageError {
    pub fn stage(&self) -> Stage {
        match self {
            StageError::Provider { stage, .. }
            | StageError::Rejected { stage, .. }
            | StageError::Template { stage, .. } => *stage,
        }
    }
}

pub(crate) fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Send `request`, parse the reply, and on a parse problem retry once with
/// the problem quoted back. Every exchange is appended to `log`.
pub(crate) fn ask<T>(
    provider: &dyn ChatProvider,
    stage: Stage,
    request: ChatRequest,
    log: &mut Vec<Exchange>,
    parse: impl Fn(&str) -> Result<T, ReplyProblem>,
) -> Result<T, StageError> {
    let send = |req: &ChatRequest, log: &mut Vec<Exchange>| -> Result<String, StageError> {
        let reply = provider
            .complete(req)
            .map_err(|source| StageError::Provider { stage, source })?;
        log.push(Exchange::new(req, &reply));
        Ok(reply)
    };
    let reply = send(&request, log)?;
    match parse(&reply) {
        Ok(v) => Ok(v),
        Err(problem) => {
            log::debug!("{stage}: {problem}; retrying with feedback");
            let retry = request.with_feedback(&reply, problem.correction());
            let reply = send(&retry, log)?;
            parse(&reply).map_err(|problem| StageError::Rejected { stage, problem })
        }
    }
}
