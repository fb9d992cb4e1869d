//! Hand-written providers for the safety and termination properties.

use std::sync::{Arc, OnceLock};

use nestcall::llm::{ChatProvider, ChatRequest, ProviderError, ScriptedProvider};
use nestcall::registry::ToolRegistry;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use regex::Regex;
use serde_json::{json, Map, Value};

use super::fixture;

pub fn fenced(v: &Value) -> String {
    format!("```json\n{}\n```", serde_json::to_string_pretty(v).unwrap())
}

fn calculate() -> String {
    fenced(&json!({"chosen_decision_name": "calculate", "supplementary_information": null}))
}

fn toolcall(tasks: &[&str]) -> String {
    fenced(&json!({"chosen_decision_name": "toolcall", "supplementary_information": tasks}))
}

fn is_unit_verification(req: &ChatRequest) -> bool {
    req.rendered_prompt.contains("\"input_value\"")
}

/// Framingham script with the verifier replaced by `verify`.
pub fn with_verifier(
    verify: impl Fn(&ChatRequest) -> String + Send + Sync + 'static,
) -> Arc<dyn ChatProvider> {
    let base = ScriptedProvider::load(&fixture("framingham/script.json")).unwrap();
    Arc::new(move |req: &ChatRequest| {
        if req.template_name == "nested_calling" {
            Ok(verify(req))
        } else {
            base.complete(req)
        }
    })
}

/// Every verification, unit tools included, answers toolcall with one task.
pub fn always_toolcall() -> Arc<dyn ChatProvider> {
    with_verifier(|_| {
        toolcall(&[
            "The total_cholesterol is 8.3 mmol/L. It needs to be converted from mmol/L to mg/dL.",
        ])
    })
}

/// Toolcall without any task, which the parser must refuse.
pub fn empty_toolcall() -> Arc<dyn ChatProvider> {
    with_verifier(|_| toolcall(&[]))
}

/// The calculator verifier always asks for the total cholesterol conversion;
/// unit tools are accepted.
pub fn always_converting() -> Arc<dyn ChatProvider> {
    with_verifier(|req| {
        if is_unit_verification(req) {
            calculate()
        } else {
            toolcall(&["The total_cholesterol is 8.3 mmol/L. It needs to be converted from mmol/L to mg/dL."])
        }
    })
}

/// The verifier asks for `n` conversions at once.
pub fn many_tasks(n: usize) -> Arc<dyn ChatProvider> {
    with_verifier(move |_| {
        let tasks = vec!["The total_cholesterol is 8.3 mmol/L. It needs to be converted from mmol/L to mg/dL."; n];
        toolcall(&tasks)
    })
}

const UNIT_TOOLS: [(&str, &str); 2] = [
    ("total_cholesterol", "Total Cholesterol"),
    ("hdl_cholesterol", "High-density lipoprotein cholesterol"),
];

fn slot(v: f64, unit: Option<&str>) -> Value {
    json!({"Value": v, "Unit": unit})
}

/// One random Framingham fill: each parameter gets a value in one of the
/// units it can plausibly be written in, or no unit at all.
pub fn perturbed_framingham(rng: &mut StdRng) -> Map<String, Value> {
    type Choices = &'static [(f64, Option<&'static str>)];
    let options: [(&str, Choices); 7] = [
        (
            "age",
            &[
                (49.0, Some("years")),
                (49.0, Some("Years")),
                (588.0, Some("months")),
                (49.0, None),
            ],
        ),
        ("sex", &[(1.0, None), (1.0, Some(""))]),
        ("smoker_status", &[(1.0, None), (1.0, Some("yes/no"))]),
        (
            "total_cholesterol",
            &[
                (8.3, Some("mmol/L")),
                (320.9195, Some("mg/dL")),
                (3.209195, Some("g/L")),
                (8300.0, Some("µmol/L")),
                (8.3, None),
            ],
        ),
        (
            "hdl_cholesterol",
            &[(0.2, Some("mmol/L")), (7.733, Some("mg/dL")), (0.2, None)],
        ),
        (
            "systolic_bp",
            &[
                (160.0, Some("mmHg")),
                (160.0, Some("mm Hg")),
                (21.33, Some("kPa")),
            ],
        ),
        ("bp_medication", &[(1.0, None), (1.0, Some("n/a"))]),
    ];
    options
        .iter()
        .map(|(name, opts)| {
            let (v, u) = opts.choose(rng).unwrap();
            (name.to_string(), slot(*v, *u))
        })
        .collect()
}

fn task_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"The (\w+) is ([-\d.e]+) (\S+)\. It needs to be converted from (\S+) to (\S+)\.",
        )
        .unwrap()
    })
}

fn statement_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"For the ([^,]+), [-\d.e]+ \S+ is equal to ([-\d.e]+) (\S+)").unwrap()
    })
}

fn demand_of(prompt: &str) -> &str {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix("User Demand: "))
        .unwrap_or("")
}

/// A provider that fills `initial` slots for the calculator, follows
/// conversion statements on refill, and always tells the verifier to calculate.
pub fn adversarial(initial: Map<String, Value>) -> Arc<dyn ChatProvider> {
    let registry = ToolRegistry::builtin();
    Arc::new(move |req: &ChatRequest| -> Result<String, ProviderError> {
        let p = &req.rendered_prompt;
        let reply = match req.template_name.as_str() {
            "diagnosis" => "Hypertension with dyslipidaemia in a middle-aged smoker.".to_string(),
            "classifier" => fenced(&json!({"chosen_toolkit_name": "scale"})),
            "rewriter" => match UNIT_TOOLS
                .iter()
                .find(|(param, _)| p.contains(&format!("query: The {param} is")))
            {
                Some((_, tool)) => fenced(&json!([
                    format!("{tool} unit conversion"),
                    format!("convert {} between mmol/L and mg/dL", tool.to_lowercase()),
                    format!("{tool} concentration units"),
                ])),
                None => fenced(&json!([
                    "coronary heart disease risk score",
                    "ten-year risk of heart attack",
                    "cardiovascular risk assessment for a smoker"
                ])),
            },
            "dispatcher" => {
                let demand = demand_of(p);
                let wanted = UNIT_TOOLS
                    .iter()
                    .find(|(param, _)| demand.contains(&format!("The {param} is")))
                    .map(|(_, tool)| *tool)
                    .unwrap_or("Framingham Risk Score for Hard Coronary Heart Disease");
                fenced(&json!({"chosen_tool_name": wanted}))
            }
            "slot_filling" if p.contains("- input_value") => {
                let Some(c) = task_re().captures(p) else {
                    return Err(ProviderError::Other("no task in reference text".into()));
                };
                let tool = UNIT_TOOLS
                    .iter()
                    .find(|(param, _)| *param == &c[1])
                    .map(|(_, t)| *t);
                let table = tool
                    .and_then(|t| registry.get(t).ok())
                    .and_then(|t| t.units.clone());
                let index = |label: &str| {
                    table
                        .as_ref()
                        .and_then(|t| t.parse_unit_label(label).ok())
                        .map_or(99.0, |i| i as f64)
                };
                fenced(&json!({
                    "input_value": slot(c[2].parse().unwrap(), Some(&c[3])),
                    "input_unit": slot(index(&c[4]), None),
                    "target_unit": slot(index(&c[5]), None),
                }))
            }
            "slot_filling" => {
                let mut slots = initial.clone();
                for c in statement_re().captures_iter(p) {
                    if let Some((param, _)) = UNIT_TOOLS.iter().find(|(_, t)| *t == &c[1]) {
                        slots.insert(param.to_string(), slot(c[2].parse().unwrap(), Some(&c[3])));
                    }
                }
                fenced(&Value::Object(slots))
            }
            "nested_calling" => calculate(),
            other => return Err(ProviderError::Other(format!("unexpected template {other}"))),
        };
        Ok(reply)
    })
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}
