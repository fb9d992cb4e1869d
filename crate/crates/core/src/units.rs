//! Table-driven unit conversion for the unit-category tools.
//!
//! Each table covers one substance or physical quantity. Units are addressed
//! by index into the table's label list; index 0 is the canonical unit.
//!
//! Factors are stored as "how many of this unit make one canonical unit"
//! (e.g. 38.665 mg/dL per mmol/L of cholesterol), so a conversion out of the
//! canonical unit is a single multiplication.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnitError {
    #[error("unit index {index} out of range for '{table}' ({len} units)")]
    IndexOutOfRange {
        table: String,
        index: usize,
        len: usize,
    },
    #[error("unknown unit '{label}' for '{table}'; expected one of {candidates:?}")]
    UnknownUnit {
        table: String,
        label: String,
        candidates: Vec<String>,
    },
    #[error("invalid unit table '{table}': {reason}")]
    InvalidTable { table: String, reason: String },
}

/// Conversion table for a single substance or quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTable {
    #[serde(skip)]
    pub tool_name: String,
    #[serde(rename = "labels")]
    pub unit_labels: Vec<String>,
    /// Amount of each unit equivalent to one canonical unit. `factors[0] == 1.0`.
    pub factors: Vec<f64>,
    /// Provenance of the factors (molar mass, exact definitions).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl UnitTable {
    pub fn new(
        tool_name: impl Into<String>,
        unit_labels: Vec<String>,
        factors: Vec<f64>,
    ) -> Result<Self, UnitError> {
        let table = UnitTable {
            tool_name: tool_name.into(),
            unit_labels,
            factors,
            source: None,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), UnitError> {
        let fail = |reason: String| UnitError::InvalidTable {
            table: self.tool_name.clone(),
            reason,
        };
        if self.unit_labels.is_empty() {
            return Err(fail("no unit labels".into()));
        }
        if self.unit_labels.len() != self.factors.len() {
            return Err(fail(format!(
                "{} labels but {} factors",
                self.unit_labels.len(),
                self.factors.len()
            )));
        }
        if self.factors[0] != 1.0 {
            return Err(fail(format!(
                "canonical factor must be 1.0, got {}",
                self.factors[0]
            )));
        }
        if let Some(f) = self.factors.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
            return Err(fail(format!("factor {f} is not a positive finite number")));
        }
        for (i, a) in self.unit_labels.iter().enumerate() {
            if a.trim().is_empty() {
                return Err(fail("empty unit label".into()));
            }
            for b in &self.unit_labels[i + 1..] {
                if normalize_unit(a) == normalize_unit(b) {
                    return Err(fail(format!("duplicate unit label '{a}' / '{b}'")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.unit_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_labels.is_empty()
    }

    pub fn label(&self, index: usize) -> Result<&str, UnitError> {
        self.unit_labels
            .get(index)
            .map(String::as_str)
            .ok_or_else(|| self.out_of_range(index))
    }

    fn out_of_range(&self, index: usize) -> UnitError {
        UnitError::IndexOutOfRange {
            table: self.tool_name.clone(),
            index,
            len: self.unit_labels.len(),
        }
    }

    /// Convert `value` from unit `from` to unit `to` (both indices).
    pub fn convert(&self, value: f64, from: usize, to: usize) -> Result<f64, UnitError> {
        let f_from = *self
            .factors
            .get(from)
            .ok_or_else(|| self.out_of_range(from))?;
        let f_to = *self.factors.get(to).ok_or_else(|| self.out_of_range(to))?;
        if from == to {
            return Ok(value);
        }
        if from == 0 {
            return Ok(value * f_to);
        }
        Ok(value / f_from * f_to)
    }

    /// Resolve a human-written label to its index. Matching ignores case and
    /// whitespace and treats the micro sign as `u`.
    pub fn parse_unit_label(&self, label: &str) -> Result<usize, UnitError> {
        let wanted = normalize_unit(label);
        self.unit_labels
            .iter()
            .position(|l| normalize_unit(l) == wanted)
            .ok_or_else(|| UnitError::UnknownUnit {
                table: self.tool_name.clone(),
                label: label.to_string(),
                candidates: self.unit_labels.clone(),
            })
    }

    /// Label-addressed conversion.
    pub fn convert_labels(&self, value: f64, from: &str, to: &str) -> Result<f64, UnitError> {
        let a = self.parse_unit_label(from)?;
        let b = self.parse_unit_label(to)?;
        self.convert(value, a, b)
    }
}

/// Canonical comparison form of a unit label.
pub fn normalize_unit(label: &str) -> String {
    label
        .chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .map(|c| match c {
            'µ' | 'μ' => 'u',
            c => c,
        })
        .collect()
}

/// True when two unit labels denote the same unit after normalization.
pub fn same_unit(a: &str, b: &str) -> bool {
    normalize_unit(a) == normalize_unit(b)
}
