//! Benchmark harness: run cases through the pipeline and score selection,
//! slot filling, unit conversion and final values.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calculators::SlotValue;
use crate::engine::Engine;
use crate::nesting::{run_pipeline, PipelineResult};
use crate::parallel::{map_ordered, Parallelism};
use crate::registry::{ParamKind, ToolRegistry};
use crate::units::{same_unit, UnitTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtSlot {
    pub value: f64,
    #[serde(default)]
    pub unit: Option<String>,
    #[serde(default)]
    pub requires_conversion: bool,
    /// Unit table used to compare values filled in another unit. When absent,
    /// any table that converts between the two units consistently is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_tool: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub patient_history: String,
    pub user_query: String,
    pub gt_calculator: String,
    pub gt_slots: IndexMap<String, GtSlot>,
    pub gt_value: f64,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("case '{case_id}': unknown ground-truth calculator '{name}'")]
    UnknownGtCalculator { case_id: String, name: String },
    #[error("case '{case_id}': {message}")]
    InvalidSlots { case_id: String, message: String },
    #[error("duplicate case id '{0}'")]
    DuplicateCase(String),
}

/// Parse JSONL case records and check them against `registry`. Blank lines
/// are skipped.
pub fn parse_cases(
    text: &str,
    origin: &Path,
    registry: &ToolRegistry,
) -> Result<Vec<CaseRecord>, BenchError> {
    let mut cases = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let case: CaseRecord = serde_json::from_str(line).map_err(|e| BenchError::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        validate_case(&case, registry)?;
        if !seen.insert(case.case_id.clone()) {
            return Err(BenchError::DuplicateCase(case.case_id));
        }
        cases.push(case);
    }
    Ok(cases)
}

pub fn load_cases(path: &Path, registry: &ToolRegistry) -> Result<Vec<CaseRecord>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_cases(&text, path, registry)
}

fn validate_case(case: &CaseRecord, registry: &ToolRegistry) -> Result<(), BenchError> {
    let tool = registry
        .get(&case.gt_calculator)
        .map_err(|_| BenchError::UnknownGtCalculator {
            case_id: case.case_id.clone(),
            name: case.gt_calculator.clone(),
        })?;
    let invalid = |message: String| BenchError::InvalidSlots {
        case_id: case.case_id.clone(),
        message,
    };
    for p in &tool.params {
        if !case.gt_slots.contains_key(&p.name) {
            return Err(invalid(format!("missing ground truth for '{}'", p.name)));
        }
    }
    if let Some(extra) = case.gt_slots.keys().find(|k| tool.param(k).is_none()) {
        return Err(invalid(format!(
            "'{extra}' is not a parameter of '{}'",
            tool.tool_name
        )));
    }
    for slot in case.gt_slots.values() {
        if let Some(name) = &slot.unit_tool {
            match registry.get(name) {
                Ok(t) if t.units.is_some() => {}
                _ => return Err(invalid(format!("'{name}' is not a unit tool"))),
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Absolute tolerances on the final value, in ascending order.
    pub cca: Vec<f64>,
    /// Relative tolerance for real-valued slots.
    pub slot_relative: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            cca: vec![0.5, 1.5, 2.5],
            slot_relative: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotVerdict {
    pub name: String,
    pub hit: bool,
    pub requires_conversion: bool,
    /// Conversion counted as correct: value matches and is in the ground-truth unit.
    pub converted: bool,
    pub filled: Option<SlotValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseVerdict {
    pub case_id: String,
    pub selected_tool: Option<String>,
    pub csa_hit: bool,
    pub slots: Vec<SlotVerdict>,
    pub slot_hits: usize,
    pub slot_total: usize,
    pub uca_hits: usize,
    pub uca_total: usize,
    pub value: Option<f64>,
    pub gt_value: f64,
    pub abs_error: Option<f64>,
    /// One flag per configured CCA tolerance.
    pub cca_hits: Vec<bool>,
    pub rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<serde_json::Value>,
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs())
}

fn tables_for<'r>(registry: &'r ToolRegistry, gt: &GtSlot) -> Vec<&'r UnitTable> {
    match &gt.unit_tool {
        Some(name) => registry
            .get(name)
            .ok()
            .and_then(|t| t.units.as_ref())
            .into_iter()
            .collect(),
        None => registry.unit_tables().collect(),
    }
}

/// `value` expressed in `to`, if the registry can convert it unambiguously.
fn express_in(
    registry: &ToolRegistry,
    gt: &GtSlot,
    value: f64,
    from: &str,
    to: &str,
) -> Option<f64> {
    let mut candidates = tables_for(registry, gt).into_iter().filter_map(|t| {
        let (a, b) = (t.parse_unit_label(from).ok()?, t.parse_unit_label(to).ok()?);
        t.convert(value, a, b).ok()
    });
    let first = candidates.next()?;
    candidates.all(|v| close(v, first, 1e-12)).then_some(first)
}

fn score_slot(
    registry: &ToolRegistry,
    kind: ParamKind,
    gt: &GtSlot,
    filled: Option<&SlotValue>,
    rel: f64,
) -> (bool, bool) {
    let Some(filled) = filled else {
        return (false, false);
    };
    if kind == ParamKind::EnumIndex {
        let hit = filled.value == gt.value;
        return (hit, hit);
    }
    let same = match (&filled.unit, &gt.unit) {
        (Some(a), Some(b)) => same_unit(a, b),
        (None, None) => true,
        _ => false,
    };
    let in_gt_unit = match (&filled.unit, &gt.unit) {
        _ if same => Some(filled.value),
        (Some(from), Some(to)) => express_in(registry, gt, filled.value, from, to),
        // One side has no unit tag: compare the numbers as given.
        _ => Some(filled.value),
    };
    let hit = in_gt_unit.is_some_and(|v| close(v, gt.value, rel));
    (hit, hit && same)
}

/// Score one case. A pipeline error scores zero everywhere.
pub fn score_case(
    result: Result<&PipelineResult, &str>,
    gt: &CaseRecord,
    registry: &ToolRegistry,
    tolerances: &Tolerances,
) -> CaseVerdict {
    let slot_total = gt.gt_slots.len();
    let uca_total = gt
        .gt_slots
        .values()
        .filter(|s| s.requires_conversion)
        .count();
    let mut verdict = CaseVerdict {
        case_id: gt.case_id.clone(),
        selected_tool: None,
        csa_hit: false,
        slots: Vec::new(),
        slot_hits: 0,
        slot_total,
        uca_hits: 0,
        uca_total,
        value: None,
        gt_value: gt.gt_value,
        abs_error: None,
        cca_hits: vec![false; tolerances.cca.len()],
        rounds: None,
        error: None,
        trace: None,
    };
    let r = match result {
        Ok(r) => r,
        Err(message) => {
            verdict.error = Some(message.to_string());
            return verdict;
        }
    };
    verdict.selected_tool = Some(r.selected_tool.clone());
    verdict.value = Some(r.value);
    verdict.rounds = Some(r.rounds);
    verdict.csa_hit = r.selected_tool == gt.gt_calculator;
    if !verdict.csa_hit {
        return verdict;
    }
    let tool = registry.get(&gt.gt_calculator).expect("validated at load");
    for (name, expected) in &gt.gt_slots {
        let kind = tool.param(name).map(|p| p.kind).unwrap_or(ParamKind::Real);
        let filled = r.final_slots.get(name);
        let (hit, converted) =
            score_slot(registry, kind, expected, filled, tolerances.slot_relative);
        verdict.slot_hits += usize::from(hit);
        if expected.requires_conversion {
            verdict.uca_hits += usize::from(converted);
        }
        verdict.slots.push(SlotVerdict {
            name: name.clone(),
            hit,
            requires_conversion: expected.requires_conversion,
            converted,
            filled: filled.cloned(),
        });
    }
    let err = (r.value - gt.gt_value).abs();
    verdict.abs_error = Some(err);
    verdict.cca_hits = tolerances.cca.iter().map(|&t| err <= t).collect();
    verdict
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaScore {
    pub tolerance: f64,
    pub hits: usize,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_cases: usize,
    pub csa: Option<f64>,
    pub sfa: Option<f64>,
    pub uca: Option<f64>,
    /// CCA at the first configured tolerance.
    pub cca: Option<f64>,
    pub cca_tolerance: Option<f64>,
    pub cca_ladder: Vec<CcaScore>,
    pub csa_hits: usize,
    pub slot_hits: usize,
    pub slot_total: usize,
    pub uca_hits: usize,
    pub uca_total: usize,
    pub errors: usize,
    pub per_case: Vec<CaseVerdict>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl MetricsReport {
    pub fn aggregate(per_case: Vec<CaseVerdict>, tolerances: &Tolerances) -> Self {
        let n = per_case.len();
        let sum = |f: fn(&CaseVerdict) -> usize| per_case.iter().map(f).sum::<usize>();
        let csa_hits = sum(|v| usize::from(v.csa_hit));
        let (slot_hits, slot_total) = (sum(|v| v.slot_hits), sum(|v| v.slot_total));
        let (uca_hits, uca_total) = (sum(|v| v.uca_hits), sum(|v| v.uca_total));
        let errors = sum(|v| usize::from(v.error.is_some()));
        let cca_ladder: Vec<CcaScore> = tolerances
            .cca
            .iter()
            .enumerate()
            .map(|(i, &tolerance)| {
                let hits = per_case
                    .iter()
                    .filter(|v| v.csa_hit && v.cca_hits.get(i).copied().unwrap_or(false))
                    .count();
                CcaScore {
                    tolerance,
                    hits,
                    value: ratio(hits, n),
                }
            })
            .collect();
        MetricsReport {
            n_cases: n,
            csa: ratio(csa_hits, n),
            sfa: ratio(slot_hits, slot_total),
            uca: ratio(uca_hits, uca_total),
            cca: cca_ladder.first().and_then(|c| c.value),
            cca_tolerance: cca_ladder.first().map(|c| c.tolerance),
            cca_ladder,
            csa_hits,
            slot_hits,
            slot_total,
            uca_hits,
            uca_total,
            errors,
            per_case,
        }
    }

    pub fn cca_at(&self, tolerance: f64) -> Option<f64> {
        self.cca_ladder
            .iter()
            .find(|c| c.tolerance == tolerance)
            .and_then(|c| c.value)
    }

    /// Plain-text summary table.
    pub fn table(&self) -> String {
        fn cell(v: Option<f64>, num: usize, den: usize) -> String {
            match v {
                Some(v) => format!("{v} ({num}/{den})"),
                None => "null".to_string(),
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "cases   {} ({} errors)", self.n_cases, self.errors);
        let _ = writeln!(
            out,
            "CSA     {}",
            cell(self.csa, self.csa_hits, self.n_cases)
        );
        let _ = writeln!(
            out,
            "SFA     {}",
            cell(self.sfa, self.slot_hits, self.slot_total)
        );
        let _ = writeln!(
            out,
            "UCA     {}",
            cell(self.uca, self.uca_hits, self.uca_total)
        );
        for c in &self.cca_ladder {
            let _ = writeln!(
                out,
                "CCA±{:<4}{}",
                c.tolerance,
                cell(c.value, c.hits, self.n_cases)
            );
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchOptions {
    pub tolerances: Tolerances,
    pub parallelism: Parallelism,
    /// Attach each case's pipeline trace to its verdict.
    pub keep_traces: bool,
}

/// Run every case and aggregate. Per-case failures are scored, never fatal.
pub fn run_benchmark(
    engine: &Engine,
    cases: &[CaseRecord],
    options: &BenchOptions,
) -> MetricsReport {
    let verdicts = map_ordered(cases, options.parallelism, |case| {
        let outcome = run_pipeline(engine, &case.user_query, &case.patient_history);
        let (mut verdict, trace) = match &outcome {
            Ok(r) => (
                score_case(Ok(r), case, &engine.registry, &options.tolerances),
                serde_json::to_value(r),
            ),
            Err(f) => (
                score_case(
                    Err(&f.to_string()),
                    case,
                    &engine.registry,
                    &options.tolerances,
                ),
                serde_json::to_value(&f.trace),
            ),
        };
        if let Err(f) = &outcome {
            verdict.selected_tool = f.selected_tool.clone();
        }
        if options.keep_traces {
            verdict.trace = trace.ok();
        }
        verdict
    });
    MetricsReport::aggregate(verdicts, &options.tolerances)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> ToolRegistry {
        ToolRegistry::builtin()
    }

    #[test]
    fn rejects_unknown_calculator_and_bad_slots() {
        let reg = registry();
        let line = r#"{"case_id":"x","patient_history":"h","user_query":"q","gt_calculator":"Nope","gt_slots":{},"gt_value":1}"#;
        assert!(matches!(
            parse_cases(line, Path::new("t.jsonl"), &reg),
            Err(BenchError::UnknownGtCalculator { .. })
        ));
        let line = r#"{"case_id":"x","patient_history":"h","user_query":"q","gt_calculator":"Body Mass Index (BMI)","gt_slots":{"weight":{"value":65,"unit":"kg"}},"gt_value":1}"#;
        assert!(matches!(
            parse_cases(line, Path::new("t.jsonl"), &reg),
            Err(BenchError::InvalidSlots { .. })
        ));
        assert!(matches!(
            parse_cases("{", Path::new("t.jsonl"), &reg),
            Err(BenchError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn slot_values_compared_in_gt_unit() {
        let reg = registry();
        let gt = GtSlot {
            value: 175.0,
            unit: Some("cm".into()),
            requires_conversion: true,
            unit_tool: None,
        };
        let m = SlotValue::new(1.75, Some("m"));
        assert_eq!(
            score_slot(&reg, ParamKind::Real, &gt, Some(&m), 1e-6),
            (true, false)
        );
        let cm = SlotValue::new(175.0, Some("cm"));
        assert_eq!(
            score_slot(&reg, ParamKind::Real, &gt, Some(&cm), 1e-6),
            (true, true)
        );
        // mmol/L to mg/dL depends on the substance: ambiguous without a table.
        let chol = GtSlot {
            value: 320.9195,
            unit: Some("mg/dL".into()),
            requires_conversion: true,
            unit_tool: None,
        };
        let mmol = SlotValue::new(8.3, Some("mmol/L"));
        assert!(!score_slot(&reg, ParamKind::Real, &chol, Some(&mmol), 1e-6).0);
        let chol = GtSlot {
            unit_tool: Some("Total Cholesterol".into()),
            ..chol
        };
        assert_eq!(
            score_slot(&reg, ParamKind::Real, &chol, Some(&mmol), 1e-6),
            (true, false)
        );
    }

    #[test]
    fn empty_report_is_null() {
        let r = MetricsReport::aggregate(Vec::new(), &Tolerances::default());
        assert_eq!(r.n_cases, 0);
        assert!(r.csa.is_none() && r.sfa.is_none() && r.uca.is_none() && r.cca.is_none());
        assert_eq!(r.cca_ladder.len(), 3);
    }
}
