//! Nested tool calling: fill slots, verify units, convert through unit tools
//! picked by the selector, refill, and compute.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::calculators::{
    check_slots, evaluate, format_number, unit_mismatches, CalcError, SlotMap, SlotValue,
};
use crate::engine::Engine;
use crate::llm::prompts::{self, bindings};
use crate::llm::{extract_json, ChatRequest, Exchange, ProviderError};
use crate::meta_tool::{select_tool, SelectionError, SelectionRequest, SelectionTrace};
use crate::registry::{Category, ParamKind, ParameterSpec, ToolRecord};
use crate::stage::{ask, elapsed_ms, ReplyProblem, Stage, StageError};
use crate::units::{normalize_unit, UnitError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NestingConfig {
    pub max_rounds: usize,
    pub max_tasks_per_round: usize,
}

impl Default for NestingConfig {
    fn default() -> Self {
        NestingConfig {
            max_rounds: 3,
            max_tasks_per_round: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Calculate,
    Toolcall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationDecision {
    pub decision: Decision,
    /// Conversion tasks; empty when the decision is `calculate`.
    pub supplementary_information: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl VerificationDecision {
    pub fn calculate() -> Self {
        VerificationDecision {
            decision: Decision::Calculate,
            supplementary_information: Vec::new(),
            note: None,
        }
    }
}

/// Model verdict plus the verdict the engine acts on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub model: VerificationDecision,
    pub effective: VerificationDecision,
    /// Set when the deterministic unit check replaced a `calculate` verdict.
    pub overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionResult {
    pub statement: String,
    pub tool_used: String,
    pub input_value: f64,
    pub input_unit: String,
    pub numeric_value: f64,
    pub target_unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum StageRecord {
    Selection {
        selection: SelectionTrace,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    SlotFilling {
        round: usize,
        tool: String,
        reference_text: String,
        slots: Option<SlotMap>,
        exchanges: Vec<Exchange>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        elapsed_ms: f64,
    },
    Verification {
        round: usize,
        tool: String,
        verification: Option<Verification>,
        exchanges: Vec<Exchange>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        elapsed_ms: f64,
    },
    Conversion {
        round: usize,
        task: String,
        stages: Vec<StageRecord>,
        result: Option<ConversionResult>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        elapsed_ms: f64,
    },
    Evaluate {
        round: usize,
        tool: String,
        slots: SlotMap,
        value: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        elapsed_ms: f64,
    },
}

impl StageRecord {
    pub fn stage(&self) -> Stage {
        match self {
            StageRecord::Selection { .. } => Stage::Dispatcher,
            StageRecord::SlotFilling { .. } => Stage::SlotFilling,
            StageRecord::Verification { .. } => Stage::Verification,
            StageRecord::Conversion { .. } => Stage::Conversion,
            StageRecord::Evaluate { .. } => Stage::Evaluate,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StageRecord::Selection { .. } => "selection",
            other => other.stage().as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub query: String,
    pub selected_tool: String,
    pub final_slots: SlotMap,
    pub value: f64,
    pub rounds: usize,
    pub conversions: Vec<ConversionResult>,
    pub trace: Vec<StageRecord>,
}

impl PipelineResult {
    pub fn selection(&self) -> Option<&SelectionTrace> {
        self.trace.iter().find_map(|r| match r {
            StageRecord::Selection { selection, .. } => Some(selection),
            _ => None,
        })
    }
}

#[derive(Debug, Error)]
pub enum ConversionError {
    #[error("{0}")]
    Selection(#[from] SelectionError),
    #[error("{0}")]
    Stage(#[from] StageError),
    #[error("selected tool '{0}' is not a unit tool")]
    NotUnitTool(String),
    #[error("unit tool '{tool}' asked for further conversions: {}", .tasks.join(" | "))]
    NestedToolcall { tool: String, tasks: Vec<String> },
    #[error("{0}")]
    Slots(#[from] CalcError),
    #[error("{0}")]
    Unit(#[from] UnitError),
}

#[derive(Debug, Error)]
#[error("conversion task \"{task}\": {error}")]
pub struct ConversionFailure {
    pub task: String,
    #[source]
    pub error: ConversionError,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("case history is empty")]
    EmptyCaseHistory,
    #[error("selection: {0}")]
    Selection(#[source] SelectionError),
    #[error("round {round}: {source}")]
    Stage {
        round: usize,
        #[source]
        source: StageError,
    },
    #[error("round {round}: conversion task \"{task}\": {source}")]
    Conversion {
        round: usize,
        task: String,
        #[source]
        source: ConversionError,
    },
    #[error("round {round}: {count} conversion tasks exceed the limit of {limit}")]
    TooManyTasks {
        round: usize,
        count: usize,
        limit: usize,
    },
    #[error("no calculate decision within {max_rounds} rounds")]
    RoundLimitExceeded { max_rounds: usize },
    #[error("round {round}: {source}")]
    Calculation {
        round: usize,
        #[source]
        source: CalcError,
    },
}

impl PipelineError {
    /// The stage and provider error when the failure came from the model
    /// backend rather than from the pipeline logic.
    pub fn provider_failure(&self) -> Option<(Stage, &ProviderError)> {
        fn from_stage(e: &StageError) -> Option<(Stage, &ProviderError)> {
            match e {
                StageError::Provider { stage, source } => Some((*stage, source)),
                _ => None,
            }
        }
        fn from_selection(e: &SelectionError) -> Option<(Stage, &ProviderError)> {
            match e {
                SelectionError::Stage(s) => from_stage(s),
                SelectionError::Retrieval(crate::retrieval::RetrievalError::Provider(p)) => {
                    Some((Stage::Retrieval, p))
                }
                _ => None,
            }
        }
        match self {
            PipelineError::Selection(e) => from_selection(e),
            PipelineError::Stage { source, .. } => from_stage(source),
            PipelineError::Conversion { source, .. } => match source {
                ConversionError::Selection(e) => from_selection(e),
                ConversionError::Stage(e) => from_stage(e),
                _ => None,
            },
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
#[error("{error}")]
pub struct PipelineFailure {
    #[source]
    pub error: PipelineError,
    pub selected_tool: Option<String>,
    pub rounds: usize,
    pub trace: Vec<StageRecord>,
}

fn request(engine: &Engine, name: &str, prompt: String) -> ChatRequest {
    ChatRequest::new(name, prompt).with_decoding(engine.config.decoding)
}

/// Extract a slot map for `tool` from `reference_text`.
pub fn fill_slots(
    engine: &Engine,
    tool: &ToolRecord,
    reference_text: &str,
    log: &mut Vec<Exchange>,
) -> Result<SlotMap, StageError> {
    let prompt = engine
        .prompts
        .render(
            prompts::SLOT_FILLING,
            &bindings([
                ("INSERT_DOCSTRING_HERE", tool.docstring.clone()),
                ("INSERT_TEXT_HERE", reference_text.to_string()),
            ]),
        )
        .map_err(|source| StageError::Template {
            stage: Stage::SlotFilling,
            source,
        })?;
    ask(
        engine.chat.as_ref(),
        Stage::SlotFilling,
        request(engine, prompts::SLOT_FILLING, prompt),
        log,
        |reply| parse_slots(reply, tool),
    )
}

/// Ask the verifier, then apply the deterministic unit check: a `calculate`
/// verdict over mismatched units becomes `toolcall` with generated tasks.
pub fn verify_slots(
    engine: &Engine,
    tool: &ToolRecord,
    slots: &SlotMap,
    log: &mut Vec<Exchange>,
) -> Result<Verification, StageError> {
    let prompt = engine
        .prompts
        .render(
            prompts::NESTED_CALLING,
            &bindings([
                ("INSERT_DOC_HERE", tool.docstring.clone()),
                ("INSERT_LIST_HERE", slots.to_prompt_json()),
            ]),
        )
        .map_err(|source| StageError::Template {
            stage: Stage::Verification,
            source,
        })?;
    let model = ask(
        engine.chat.as_ref(),
        Stage::Verification,
        request(engine, prompts::NESTED_CALLING, prompt),
        log,
        parse_verification,
    )?;
    Ok(apply_unit_check(tool, slots, model))
}

pub fn apply_unit_check(
    tool: &ToolRecord,
    slots: &SlotMap,
    model: VerificationDecision,
) -> Verification {
    let mismatches = unit_mismatches(tool, slots);
    if model.decision == Decision::Calculate && !mismatches.is_empty() {
        let effective = VerificationDecision {
            decision: Decision::Toolcall,
            supplementary_information: mismatches.iter().map(|m| m.task()).collect(),
            note: None,
        };
        log::info!(
            "overriding verifier for '{}': units do not match the schema",
            tool.tool_name
        );
        return Verification {
            model,
            effective,
            overridden: true,
        };
    }
    Verification {
        effective: model.clone(),
        model,
        overridden: false,
    }
}

/// Sentence appended to the reference text after a conversion.
pub fn conversion_statement(tool: &str, value: f64, from: &str, result: f64, to: &str) -> String {
    format!(
        "For the {tool}, {} {from} is equal to {} {to}",
        format_number(value),
        format_number(result)
    )
}

/// Select a unit tool for `task`, fill and verify its slots, and convert.
pub fn resolve_conversion(
    engine: &Engine,
    task: &str,
    case_history: &str,
    diagnosis: Option<&str>,
    round: usize,
) -> Result<(ConversionResult, Vec<StageRecord>), ConversionFailure> {
    let mut stages = Vec::new();
    let result = convert_into(engine, task, case_history, diagnosis, round, &mut stages);
    match result {
        Ok(r) => Ok((r, stages)),
        Err(error) => Err(ConversionFailure {
            task: task.to_string(),
            error,
            stages,
        }),
    }
}

fn convert_into(
    engine: &Engine,
    task: &str,
    case_history: &str,
    diagnosis: Option<&str>,
    round: usize,
    stages: &mut Vec<StageRecord>,
) -> Result<ConversionResult, ConversionError> {
    let req = SelectionRequest {
        demand: task.to_string(),
        case_history: case_history.to_string(),
        category_hint: Some(Category::Unit),
        cached_diagnosis: diagnosis.map(str::to_string),
    };
    let tool = match select_tool(engine, &req) {
        Ok((tool, selection)) => {
            stages.push(StageRecord::Selection {
                selection,
                error: None,
            });
            tool
        }
        Err(f) => {
            stages.push(StageRecord::Selection {
                selection: f.trace,
                error: Some(f.error.to_string()),
            });
            return Err(f.error.into());
        }
    };
    let table = match (&tool.category, &tool.units) {
        (Category::Unit, Some(table)) => table,
        _ => return Err(ConversionError::NotUnitTool(tool.tool_name.clone())),
    };
    let slots = fill_stage(engine, tool, task, round, stages)?;
    let verification = verify_stage(engine, tool, &slots, round, stages)?;
    if verification.effective.decision == Decision::Toolcall {
        return Err(ConversionError::NestedToolcall {
            tool: tool.tool_name.clone(),
            tasks: verification.effective.supplementary_information,
        });
    }
    check_slots(tool, &slots)?;
    let value = slots.get("input_value").expect("checked").value;
    let from = slots.get("input_unit").expect("checked").value as usize;
    let to = slots.get("target_unit").expect("checked").value as usize;
    let result = table.convert(value, from, to)?;
    let (from_label, to_label) = (table.label(from)?, table.label(to)?);
    Ok(ConversionResult {
        statement: conversion_statement(&tool.tool_name, value, from_label, result, to_label),
        tool_used: tool.tool_name.clone(),
        input_value: value,
        input_unit: from_label.to_string(),
        numeric_value: result,
        target_unit: to_label.to_string(),
    })
}

fn fill_stage(
    engine: &Engine,
    tool: &ToolRecord,
    reference_text: &str,
    round: usize,
    stages: &mut Vec<StageRecord>,
) -> Result<SlotMap, StageError> {
    let start = Instant::now();
    let mut exchanges = Vec::new();
    let result = fill_slots(engine, tool, reference_text, &mut exchanges);
    stages.push(StageRecord::SlotFilling {
        round,
        tool: tool.tool_name.clone(),
        reference_text: reference_text.to_string(),
        slots: result.as_ref().ok().cloned(),
        exchanges,
        error: result.as_ref().err().map(|e| e.to_string()),
        elapsed_ms: elapsed_ms(start),
    });
    result
}

fn verify_stage(
    engine: &Engine,
    tool: &ToolRecord,
    slots: &SlotMap,
    round: usize,
    stages: &mut Vec<StageRecord>,
) -> Result<Verification, StageError> {
    let start = Instant::now();
    let mut exchanges = Vec::new();
    let result = verify_slots(engine, tool, slots, &mut exchanges);
    stages.push(StageRecord::Verification {
        round,
        tool: tool.tool_name.clone(),
        verification: result.as_ref().ok().cloned(),
        exchanges,
        error: result.as_ref().err().map(|e| e.to_string()),
        elapsed_ms: elapsed_ms(start),
    });
    result
}

/// Answer `query` about `case_history` end to end.
pub fn run_pipeline(
    engine: &Engine,
    query: &str,
    case_history: &str,
) -> Result<PipelineResult, PipelineFailure> {
    let mut run = Run {
        trace: Vec::new(),
        selected: None,
        rounds: 0,
    };
    match run.execute(engine, query, case_history) {
        Ok((final_slots, value, conversions)) => Ok(PipelineResult {
            query: query.to_string(),
            selected_tool: run.selected.expect("set on success"),
            final_slots,
            value,
            rounds: run.rounds,
            conversions,
            trace: run.trace,
        }),
        Err(error) => Err(PipelineFailure {
            error,
            selected_tool: run.selected,
            rounds: run.rounds,
            trace: run.trace,
        }),
    }
}

struct Run {
    trace: Vec<StageRecord>,
    selected: Option<String>,
    rounds: usize,
}

impl Run {
    fn execute(
        &mut self,
        engine: &Engine,
        query: &str,
        case_history: &str,
    ) -> Result<(SlotMap, f64, Vec<ConversionResult>), PipelineError> {
        if query.trim().is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        if case_history.trim().is_empty() {
            return Err(PipelineError::EmptyCaseHistory);
        }
        let (tool, diagnosis) =
            match select_tool(engine, &SelectionRequest::new(query, case_history)) {
                Ok((tool, selection)) => {
                    let diagnosis = selection.diagnosis.clone();
                    self.trace.push(StageRecord::Selection {
                        selection,
                        error: None,
                    });
                    (tool, diagnosis)
                }
                Err(f) => {
                    self.trace.push(StageRecord::Selection {
                        selection: f.trace,
                        error: Some(f.error.to_string()),
                    });
                    return Err(PipelineError::Selection(f.error));
                }
            };
        self.selected = Some(tool.tool_name.clone());

        let limits = engine.config.nesting;
        let mut reference = case_history.to_string();
        let mut conversions = Vec::new();
        for round in 1..=limits.max_rounds {
            self.rounds = round;
            let slots = fill_stage(engine, tool, &reference, round, &mut self.trace)
                .map_err(|source| PipelineError::Stage { round, source })?;
            let verification = verify_stage(engine, tool, &slots, round, &mut self.trace)
                .map_err(|source| PipelineError::Stage { round, source })?;

            if verification.effective.decision == Decision::Calculate {
                let start = Instant::now();
                let value = evaluate(tool, &slots);
                self.trace.push(StageRecord::Evaluate {
                    round,
                    tool: tool.tool_name.clone(),
                    slots: slots.clone(),
                    value: value.as_ref().ok().copied(),
                    error: value.as_ref().err().map(|e| e.to_string()),
                    elapsed_ms: elapsed_ms(start),
                });
                let value = value.map_err(|source| PipelineError::Calculation { round, source })?;
                return Ok((slots, value, conversions));
            }

            let tasks = &verification.effective.supplementary_information;
            if tasks.len() > limits.max_tasks_per_round {
                return Err(PipelineError::TooManyTasks {
                    round,
                    count: tasks.len(),
                    limit: limits.max_tasks_per_round,
                });
            }
            for task in tasks {
                let start = Instant::now();
                match resolve_conversion(engine, task, case_history, diagnosis.as_deref(), round) {
                    Ok((result, stages)) => {
                        reference.push('\n');
                        reference.push_str(&result.statement);
                        self.trace.push(StageRecord::Conversion {
                            round,
                            task: task.clone(),
                            stages,
                            result: Some(result.clone()),
                            error: None,
                            elapsed_ms: elapsed_ms(start),
                        });
                        conversions.push(result);
                    }
                    Err(f) => {
                        self.trace.push(StageRecord::Conversion {
                            round,
                            task: task.clone(),
                            stages: f.stages,
                            result: None,
                            error: Some(f.error.to_string()),
                            elapsed_ms: elapsed_ms(start),
                        });
                        // A unit tool asking for more conversions drops the task for this
                        // round; the calculator is verified again on the next one.
                        if matches!(f.error, ConversionError::NestedToolcall { .. }) {
                            log::warn!("round {round}: {}", f.error);
                            continue;
                        }
                        return Err(PipelineError::Conversion {
                            round,
                            task: f.task,
                            source: f.error,
                        });
                    }
                }
            }
        }
        Err(PipelineError::RoundLimitExceeded {
            max_rounds: limits.max_rounds,
        })
    }
}

/// Remove every `elapsed_ms` field, for comparisons across runs.
pub fn strip_timing(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.remove("elapsed_ms");
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Option<&'a Value> {
    obj.get(name).or_else(|| {
        obj.iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v)
    })
}

fn slot_from_json(spec: &ParameterSpec, raw: &Value) -> Result<SlotValue, ReplyProblem> {
    let bad = |what: &str| ReplyProblem::Malformed(format!("parameter '{}': {what}", spec.name));
    let (value, unit) = match raw {
        Value::Object(obj) => (
            field(obj, "Value").unwrap_or(&Value::Null),
            field(obj, "Unit"),
        ),
        other => (other, None),
    };
    let unit = match unit {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => Some(other.to_string()),
    };
    let number = match value {
        Value::Number(n) => n.as_f64(),
        Value::Bool(b) if spec.kind == ParamKind::EnumIndex => Some(f64::from(u8::from(*b))),
        Value::String(s) => match s.trim().parse::<f64>() {
            Ok(v) => Some(v),
            Err(_) if spec.kind == ParamKind::EnumIndex => {
                let wanted = normalize_unit(s);
                let options = spec.enum_options.as_deref().unwrap_or_default();
                let pos = options.iter().position(|o| normalize_unit(o) == wanted);
                Some(pos.ok_or_else(|| bad(&format!("'{s}' is not one of {options:?}")))? as f64)
            }
            Err(_) => None,
        },
        _ => None,
    };
    let number = number
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad(&format!("Value {value} is not a number")))?;
    Ok(SlotValue::new(number, unit.as_deref()))
}

/// Parse a parameter list for `tool`. Enum labels are mapped to indices;
/// keys outside the schema are dropped.
pub fn parse_slots(reply: &str, tool: &ToolRecord) -> Result<SlotMap, ReplyProblem> {
    let v = extract_json(reply)?;
    let obj = v
        .as_object()
        .ok_or_else(|| ReplyProblem::Malformed("expected a JSON object of parameters".into()))?;
    let missing: Vec<String> = tool
        .params
        .iter()
        .filter(|p| !matches!(obj.get(&p.name), Some(v) if !v.is_null()))
        .map(|p| p.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ReplyProblem::MissingSlot(missing));
    }
    for extra in obj.keys().filter(|k| tool.param(k).is_none()) {
        log::debug!(
            "dropping unknown parameter '{extra}' for '{}'",
            tool.tool_name
        );
    }
    tool.params
        .iter()
        .map(|p| Ok((p.name.clone(), slot_from_json(p, &obj[&p.name])?)))
        .collect()
}

pub fn parse_verification(reply: &str) -> Result<VerificationDecision, ReplyProblem> {
    let v = extract_json(reply)?;
    let decision = match v
        .get("chosen_decision_name")
        .and_then(Value::as_str)
        .map(|s| s.trim().to_ascii_lowercase())
        .as_deref()
    {
        Some("calculate") => Decision::Calculate,
        Some("toolcall") => Decision::Toolcall,
        _ => {
            return Err(ReplyProblem::Malformed(
                "\"chosen_decision_name\" must be \"calculate\" or \"toolcall\"".into(),
            ))
        }
    };
    let info = v.get("supplementary_information").unwrap_or(&Value::Null);
    match decision {
        Decision::Calculate => Ok(VerificationDecision {
            decision,
            supplementary_information: Vec::new(),
            note: info.as_str().map(str::to_string),
        }),
        Decision::Toolcall => {
            let tasks: Vec<String> = match info {
                Value::String(s) => vec![s.trim().to_string()],
                Value::Array(items) => items
                    .iter()
                    .filter_map(Value::as_str)
                    .map(|s| s.trim().to_string())
                    .collect(),
                _ => Vec::new(),
            };
            let tasks: Vec<String> = tasks.into_iter().filter(|t| !t.is_empty()).collect();
            if tasks.is_empty() {
                return Err(ReplyProblem::Malformed(
                    "\"toolcall\" needs at least one conversion task in \"supplementary_information\"".into(),
                ));
            }
            Ok(VerificationDecision {
                decision,
                supplementary_information: tasks,
                note: None,
            })
        }
    }
}
