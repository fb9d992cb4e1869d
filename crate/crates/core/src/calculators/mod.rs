//! Deterministic scale-category tools.
//!
//! [`evaluate`] is the single entry point used by the engine: it checks the
//! slot map against the tool's parameter schema (presence, units, enum
//! indices, bounds) and only then dispatches to the formula by
//! `function_name`. A unit mismatch is reported as [`CalcError::UnitMismatch`],
//! which the nesting layer turns into conversion tasks.

mod formulas;
mod slots;

pub use formulas::*;
pub use slots::{format_number, SlotMap, SlotValue};

use thiserror::Error;

use crate::registry::{ParamKind, ParameterSpec, ToolRecord};
use crate::units::same_unit;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalcError {
    #[error("parameter '{param}' is in '{}', expected '{required}'", found.as_deref().unwrap_or("null"))]
    UnitMismatch {
        param: String,
        found: Option<String>,
        required: String,
    },
    #[error("missing value for parameter '{0}'")]
    MissingSlot(String),
    #[error("unexpected parameter '{0}'")]
    UnexpectedSlot(String),
    #[error("parameter '{param}' = {value} outside [{min}, {max}]")]
    OutOfBounds {
        param: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("parameter '{param}' must be positive, got {value}")]
    NonPositive { param: String, value: f64 },
    #[error("parameter '{param}' = {value} is not a valid indicator")]
    InvalidIndicator { param: String, value: f64 },
    #[error("no implementation for calculator '{0}'")]
    UnknownCalculator(String),
}

/// A single unit disagreement between filled slots and the tool schema.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitMismatch {
    pub param: String,
    pub value: f64,
    pub found: Option<String>,
    pub required: String,
}

impl UnitMismatch {
    /// Standalone conversion task in the phrasing the verifier prompt asks for.
    pub fn task(&self) -> String {
        let found = self.found.as_deref().unwrap_or("null");
        format!(
            "The {} is {} {}. It needs to be converted from {} to {}.",
            self.param,
            slots::format_number(self.value),
            found,
            found,
            self.required
        )
    }
}

/// Deterministic unit check. A parameter with a unit in its schema requires a
/// slot unit naming the same unit; parameters without a unit accept any tag.
pub fn unit_mismatches(tool: &ToolRecord, slots: &SlotMap) -> Vec<UnitMismatch> {
    tool.params
        .iter()
        .filter_map(|spec| {
            let required = spec.unit.as_ref()?;
            let slot = slots.get(&spec.name)?;
            let ok = slot.unit.as_deref().is_some_and(|u| same_unit(u, required));
            (!ok).then(|| UnitMismatch {
                param: spec.name.clone(),
                value: slot.value,
                found: slot.unit.clone(),
                required: required.clone(),
            })
        })
        .collect()
}

/// True when every parameter is present with no unit disagreement.
pub fn units_compatible(tool: &ToolRecord, slots: &SlotMap) -> bool {
    tool.params.iter().all(|p| slots.get(&p.name).is_some())
        && unit_mismatches(tool, slots).is_empty()
}

/// Full schema check: presence, no extras, units, enum indices, integer kinds, bounds.
pub fn check_slots(tool: &ToolRecord, slots: &SlotMap) -> Result<(), CalcError> {
    for spec in &tool.params {
        if slots.get(&spec.name).is_none() {
            return Err(CalcError::MissingSlot(spec.name.clone()));
        }
    }
    if let Some(extra) = slots.names().find(|n| tool.param(n).is_none()) {
        return Err(CalcError::UnexpectedSlot(extra.to_string()));
    }
    if let Some(m) = unit_mismatches(tool, slots).into_iter().next() {
        return Err(CalcError::UnitMismatch {
            param: m.param,
            found: m.found,
            required: m.required,
        });
    }
    for spec in &tool.params {
        check_value(spec, slots.get(&spec.name).expect("checked above").value)?;
    }
    Ok(())
}

fn check_value(spec: &ParameterSpec, value: f64) -> Result<(), CalcError> {
    let param = || spec.name.clone();
    if !value.is_finite() {
        return Err(CalcError::OutOfBounds {
            param: param(),
            value,
            min: f64::NEG_INFINITY,
            max: f64::INFINITY,
        });
    }
    match spec.kind {
        ParamKind::EnumIndex => {
            let n = spec.option_count();
            if value.fract() != 0.0 || value < 0.0 || value >= n as f64 {
                return Err(CalcError::InvalidIndicator {
                    param: param(),
                    value,
                });
            }
        }
        ParamKind::Integer if value.fract() != 0.0 => {
            return Err(CalcError::InvalidIndicator {
                param: param(),
                value,
            })
        }
        _ => {}
    }
    if let Some([min, max]) = spec.bounds {
        if value < min || value > max {
            return Err(CalcError::OutOfBounds {
                param: param(),
                value,
                min,
                max,
            });
        }
    }
    Ok(())
}

/// Evaluate a scale tool on a complete, unit-checked slot map.
pub fn evaluate(tool: &ToolRecord, slots: &SlotMap) -> Result<f64, CalcError> {
    let formula = formula_for(&tool.function_name)
        .ok_or_else(|| CalcError::UnknownCalculator(tool.tool_name.clone()))?;
    check_slots(tool, slots)?;
    formula(&Args { slots })
}

/// Names of every calculator function this crate implements.
pub fn implemented_functions() -> &'static [&'static str] {
    formulas::FUNCTION_NAMES
}

pub(crate) struct Args<'a> {
    slots: &'a SlotMap,
}

impl Args<'_> {
    fn real(&self, name: &str) -> Result<f64, CalcError> {
        self.slots
            .get(name)
            .map(|s| s.value)
            .ok_or_else(|| CalcError::MissingSlot(name.to_string()))
    }

    fn index(&self, name: &str) -> Result<u8, CalcError> {
        let v = self.real(name)?;
        if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
            return Err(CalcError::InvalidIndicator {
                param: name.to_string(),
                value: v,
            });
        }
        Ok(v as u8)
    }
}
