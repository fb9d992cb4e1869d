//! Tool selection: diagnose, classify, rewrite, retrieve, fuse, dispatch.

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engine::Engine;
use crate::llm::prompts::{self, bindings};
use crate::llm::{extract_json, ChatRequest, Exchange, JsonExtractError};
use crate::registry::{Category, RegistryError, ToolRecord};
use crate::retrieval::{retrieve_top_k, FusedRanking, KeyKind, RetrievalError};
use crate::stage::{ask, elapsed_ms, ReplyProblem, Stage, StageError};

/// Pipeline components that can be switched off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub classifier: bool,
    pub rewriter: bool,
    pub key_name: bool,
    pub key_description: bool,
    pub key_docstring: bool,
    pub dispatcher: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Classifier,
    Rewriter,
    KeyName,
    KeyDescription,
    KeyDocstring,
    Dispatcher,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::Classifier,
        Component::Rewriter,
        Component::KeyName,
        Component::KeyDescription,
        Component::KeyDocstring,
        Component::Dispatcher,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Classifier => "classifier",
            Component::Rewriter => "rewriter",
            Component::KeyName => "key-name",
            Component::KeyDescription => "key-desc",
            Component::KeyDocstring => "key-doc",
            Component::Dispatcher => "dispatcher",
        }
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Component::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Component::ALL.iter().map(|c| c.as_str()).collect();
                format!(
                    "unknown component '{s}' (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

impl Ablation {
    pub fn disable(mut self, c: Component) -> Self {
        match c {
            Component::Classifier => self.classifier = true,
            Component::Rewriter => self.rewriter = true,
            Component::KeyName => self.key_name = true,
            Component::KeyDescription => self.key_description = true,
            Component::KeyDocstring => self.key_docstring = true,
            Component::Dispatcher => self.dispatcher = true,
        }
        self
    }

    pub fn keys(&self) -> Vec<KeyKind> {
        let mut keys = Vec::new();
        if !self.key_name {
            keys.push(KeyKind::Name);
        }
        if !self.key_description {
            keys.push(KeyKind::NameDescription);
        }
        if !self.key_docstring {
            keys.push(KeyKind::NameDocstring);
        }
        keys
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRequest {
    pub demand: String,
    pub case_history: String,
    #[serde(default)]
    pub category_hint: Option<Category>,
    #[serde(default)]
    pub cached_diagnosis: Option<String>,
}

impl SelectionRequest {
    pub fn new(demand: impl Into<String>, case_history: impl Into<String>) -> Self {
        SelectionRequest {
            demand: demand.into(),
            case_history: case_history.into(),
            category_hint: None,
            cached_diagnosis: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategorySource {
    Classifier,
    Hint,
    /// Classifier disabled: both categories searched together.
    Merged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchMode {
    Llm,
    FusedRankOne,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub demand: String,
    pub diagnosis: Option<String>,
    pub diagnosis_cached: bool,
    pub category: Option<Category>,
    pub category_source: Option<CategorySource>,
    pub rewritten_queries: Vec<String>,
    pub retrieval_queries: Vec<String>,
    pub keys: Vec<KeyKind>,
    pub fused: Option<FusedRanking>,
    pub dispatch_mode: Option<DispatchMode>,
    pub dispatched: Option<String>,
    pub raw_llm_exchanges: Vec<Exchange>,
    pub elapsed_ms: f64,
}

impl SelectionTrace {
    pub fn candidates(&self) -> Vec<&str> {
        self.fused
            .as_ref()
            .map(FusedRanking::names)
            .unwrap_or_default()
    }

    /// Prompt names in call order, e.g. `["diagnosis", "classifier", ...]`.
    pub fn prompt_sequence(&self) -> Vec<&str> {
        self.raw_llm_exchanges
            .iter()
            .map(|e| e.prompt_name.as_str())
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("selection demand is empty")]
    EmptyDemand,
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("retrieval: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("dispatcher: {0}")]
    Registry(#[from] RegistryError),
    #[error("retrieval: every key is disabled")]
    NoKeys,
}

#[derive(Debug, Error)]
#[error("{error}")]
pub struct SelectionFailure {
    #[source]
    pub error: SelectionError,
    pub trace: SelectionTrace,
}

pub fn diagnose(
    engine: &Engine,
    case_history: &str,
    log: &mut Vec<Exchange>,
) -> Result<String, StageError> {
    let prompt = render(
        engine,
        Stage::Diagnosis,
        prompts::DIAGNOSIS,
        bindings([("INSERT_CASE_HERE", case_history.to_string())]),
    )?;
    ask(
        engine.chat.as_ref(),
        Stage::Diagnosis,
        request(engine, prompts::DIAGNOSIS, prompt),
        log,
        |reply| {
            let text = reply.trim();
            if text.is_empty() {
                Err(ReplyProblem::Malformed("empty diagnosis".into()))
            } else {
                Ok(text.to_string())
            }
        },
    )
}

/// The classifier prompt carries only the demand.
pub fn classify(
    engine: &Engine,
    demand: &str,
    log: &mut Vec<Exchange>,
) -> Result<Category, StageError> {
    let prompt = render(
        engine,
        Stage::Classifier,
        prompts::CLASSIFIER,
        bindings([("INSERT_QUERY_HERE", demand.to_string())]),
    )?;
    ask(
        engine.chat.as_ref(),
        Stage::Classifier,
        request(engine, prompts::CLASSIFIER, prompt),
        log,
        parse_category,
    )
}

pub fn rewrite(
    engine: &Engine,
    demand: &str,
    diagnosis: &str,
    log: &mut Vec<Exchange>,
) -> Result<Vec<String>, StageError> {
    let prompt = render(
        engine,
        Stage::Rewriter,
        prompts::REWRITER,
        bindings([
            ("INSERT_QUERY_HERE", demand.to_string()),
            ("INSERT_CASE_HERE", diagnosis.to_string()),
        ]),
    )?;
    ask(
        engine.chat.as_ref(),
        Stage::Rewriter,
        request(engine, prompts::REWRITER, prompt),
        log,
        parse_rewrites,
    )
}

pub fn dispatch(
    engine: &Engine,
    demand: &str,
    scenario: &str,
    candidates: &[&ToolRecord],
    log: &mut Vec<Exchange>,
) -> Result<String, StageError> {
    let names: Vec<String> = candidates.iter().map(|t| t.tool_name.clone()).collect();
    let info = candidates
        .iter()
        .map(|t| format!("{}: {}", t.tool_name, t.description))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = render(
        engine,
        Stage::Dispatcher,
        prompts::DISPATCHER,
        bindings([
            (
                "INSERT_TOOLLIST_HERE",
                serde_json::to_string(&names).expect("names serialize"),
            ),
            ("INSERT_TOOLINST_HERE", info),
            ("INSERT_DEMAND_HERE", demand.to_string()),
            ("INSERT_SCE_HERE", scenario.to_string()),
        ]),
    )?;
    ask(
        engine.chat.as_ref(),
        Stage::Dispatcher,
        request(engine, prompts::DISPATCHER, prompt),
        log,
        |reply| parse_dispatch(reply, &names),
    )
}

/// Run the full selection for one demand.
pub fn select_tool<'e>(
    engine: &'e Engine,
    req: &SelectionRequest,
) -> Result<(&'e ToolRecord, SelectionTrace), SelectionFailure> {
    let start = Instant::now();
    let mut trace = SelectionTrace {
        demand: req.demand.clone(),
        ..SelectionTrace::default()
    };
    let result = select_into(engine, req, &mut trace);
    trace.elapsed_ms = elapsed_ms(start);
    match result {
        Ok(tool) => Ok((tool, trace)),
        Err(error) => Err(SelectionFailure { error, trace }),
    }
}

fn select_into<'e>(
    engine: &'e Engine,
    req: &SelectionRequest,
    trace: &mut SelectionTrace,
) -> Result<&'e ToolRecord, SelectionError> {
    if req.demand.trim().is_empty() {
        return Err(SelectionError::EmptyDemand);
    }
    let ablation = engine.config.ablation;
    let keys = ablation.keys();
    if keys.is_empty() {
        return Err(SelectionError::NoKeys);
    }
    let log = &mut trace.raw_llm_exchanges;

    let diagnosis = match &req.cached_diagnosis {
        Some(d) => {
            trace.diagnosis_cached = true;
            d.clone()
        }
        None => diagnose(engine, &req.case_history, log)?,
    };
    trace.diagnosis = Some(diagnosis.clone());

    let (scope, source) = if ablation.classifier {
        (None, CategorySource::Merged)
    } else if let Some(hint) = req.category_hint {
        (Some(hint), CategorySource::Hint)
    } else {
        (
            Some(classify(engine, &req.demand, log)?),
            CategorySource::Classifier,
        )
    };
    trace.category = scope;
    trace.category_source = Some(source);

    let mut queries = Vec::new();
    if ablation.rewriter {
        queries.push(req.demand.clone());
    } else {
        let rewrites = rewrite(engine, &req.demand, &diagnosis, log)?;
        if engine.config.retrieval.include_original_query {
            queries.push(req.demand.clone());
        }
        queries.extend(rewrites.iter().cloned());
        trace.rewritten_queries = rewrites;
    }
    trace.retrieval_queries = queries.clone();
    trace.keys = keys.clone();

    let fused = retrieve_top_k(
        &engine.index,
        engine.embedder.as_ref(),
        &queries,
        &keys,
        scope,
        &engine.config.retrieval,
    )?;
    trace.fused = Some(fused.clone());
    let candidates = fused
        .items
        .iter()
        .map(|i| engine.registry.get(&i.tool_name))
        .collect::<Result<Vec<_>, _>>()?;

    let chosen = if ablation.dispatcher {
        trace.dispatch_mode = Some(DispatchMode::FusedRankOne);
        candidates[0].tool_name.clone()
    } else {
        trace.dispatch_mode = Some(DispatchMode::Llm);
        dispatch(engine, &req.demand, &req.case_history, &candidates, log)?
    };
    trace.dispatched = Some(chosen.clone());
    Ok(engine.registry.get(&chosen)?)
}

fn render(
    engine: &Engine,
    stage: Stage,
    name: &str,
    b: std::collections::BTreeMap<&'static str, String>,
) -> Result<String, StageError> {
    engine
        .prompts
        .render(name, &b)
        .map_err(|source| StageError::Template { stage, source })
}

fn request(engine: &Engine, name: &str, prompt: String) -> ChatRequest {
    ChatRequest::new(name, prompt).with_decoding(engine.config.decoding)
}

fn string_field(reply: &str, field: &str) -> Result<String, ReplyProblem> {
    let v = extract_json(reply)?;
    v.get(field)
        .and_then(Value::as_str)
        .map(|s| s.trim().to_string())
        .ok_or_else(|| {
            ReplyProblem::Malformed(format!("expected a JSON object with a string \"{field}\""))
        })
}

pub fn parse_category(reply: &str) -> Result<Category, ReplyProblem> {
    let name = string_field(reply, "chosen_toolkit_name")?;
    Category::parse(&name).ok_or(ReplyProblem::InvalidCategory(name))
}

pub fn parse_rewrites(reply: &str) -> Result<Vec<String>, ReplyProblem> {
    let v = extract_json(reply)?;
    let items = v
        .as_array()
        .ok_or_else(|| ReplyProblem::Malformed("expected a JSON list of queries".into()))?;
    let queries: Vec<String> = items
        .iter()
        .map(|q| {
            q.as_str()
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| {
                    ReplyProblem::Malformed(format!("query {q} is not a non-empty string"))
                })
        })
        .collect::<Result<_, _>>()?;
    if queries.len() != 3 {
        return Err(ReplyProblem::WrongArity(queries.len()));
    }
    Ok(queries)
}

/// Accepts the JSON answer; without any JSON, the last non-empty line may
/// name the tool on its own.
pub fn parse_dispatch(reply: &str, candidates: &[String]) -> Result<String, ReplyProblem> {
    let chosen = match string_field(reply, "chosen_tool_name") {
        Ok(name) => name,
        Err(ReplyProblem::Json(JsonExtractError::NoJsonFound)) => reply
            .lines()
            .rev()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .map(|l| l.trim_end_matches('.').trim().to_string())
            .ok_or(ReplyProblem::Json(JsonExtractError::NoJsonFound))?,
        Err(e) => return Err(e),
    };
    if candidates.contains(&chosen) {
        Ok(chosen)
    } else {
        Err(ReplyProblem::NotInCandidates {
            chosen,
            candidates: candidates.to_vec(),
        })
    }
}
