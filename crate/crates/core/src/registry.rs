//! Toolkit loading, validation and lookup.
//!
//! A toolkit file is a UTF-8 JSON array of tool objects. Every record carries
//! its prose docstring verbatim (this is what the LLM sees) plus a typed
//! `params` schema used by the engine for execution and validation.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::units::UnitTable;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read toolkit {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed toolkit {path} at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate tool '{0}'")]
    DuplicateTool(String),
    #[error("invalid tool '{tool}': {message}")]
    Schema { tool: String, message: String },
    #[error("no tool named '{0}'")]
    NotFound(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Scale,
    Unit,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::Scale, Category::Unit];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Scale => "scale",
            Category::Unit => "unit",
        }
    }

    pub fn parse(s: &str) -> Option<Category> {
        match s.trim() {
            "scale" => Some(Category::Scale),
            "unit" => Some(Category::Unit),
            _ => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Real,
    Integer,
    EnumIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enum_options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
}

impl ParameterSpec {
    fn validate(&self) -> Result<(), String> {
        if !is_identifier(&self.name) {
            return Err(format!(
                "parameter name '{}' is not an identifier",
                self.name
            ));
        }
        let has_options = self.enum_options.as_ref().is_some_and(|o| !o.is_empty());
        match (self.kind, has_options) {
            (ParamKind::EnumIndex, false) => {
                return Err(format!("enum parameter '{}' has no options", self.name))
            }
            (ParamKind::Real | ParamKind::Integer, true) => {
                return Err(format!("non-enum parameter '{}' lists options", self.name))
            }
            _ => {}
        }
        if self.enum_options.as_ref().is_some_and(|o| o.is_empty()) {
            return Err(format!(
                "parameter '{}' has an empty option list",
                self.name
            ));
        }
        if let Some(unit) = &self.unit {
            if self.kind == ParamKind::EnumIndex {
                return Err(format!(
                    "enum parameter '{}' cannot carry a unit",
                    self.name
                ));
            }
            if unit.trim().is_empty() {
                return Err(format!("parameter '{}' has an empty unit", self.name));
            }
        }
        if let Some([lo, hi]) = self.bounds {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(format!("parameter '{}' has bounds [{lo}, {hi}]", self.name));
            }
        }
        Ok(())
    }

    pub fn option_count(&self) -> usize {
        self.enum_options.as_ref().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRecord {
    pub tool_name: String,
    pub function_name: String,
    pub category: Category,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formula: Option<String>,
    pub docstring: String,
    pub params: Vec<ParameterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<UnitTable>,
}

impl ToolRecord {
    pub fn param(&self, name: &str) -> Option<&ParameterSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        let fail = |message: String| RegistryError::Schema {
            tool: self.tool_name.clone(),
            message,
        };
        if self.tool_name.trim().is_empty() {
            return Err(fail("empty tool_name".into()));
        }
        if !is_identifier(&self.function_name) {
            return Err(fail(format!(
                "function_name '{}' is not an identifier",
                self.function_name
            )));
        }
        if self.description.trim().is_empty() {
            return Err(fail("empty description".into()));
        }
        if self.docstring.trim().is_empty() {
            return Err(fail("empty docstring".into()));
        }
        let mut seen = HashSet::new();
        for p in &self.params {
            p.validate().map_err(&fail)?;
            if !seen.insert(p.name.as_str()) {
                return Err(fail(format!("parameter '{}' declared twice", p.name)));
            }
        }
        let documented = docstring_param_names(&self.docstring);
        let declared: Vec<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
        for name in &documented {
            if !declared.contains(&name.as_str()) {
                return Err(fail(format!(
                    "docstring parameter '{name}' missing from params"
                )));
            }
        }
        for name in &declared {
            if !documented.iter().any(|d| d == name) {
                return Err(fail(format!(
                    "parameter '{name}' not described in docstring"
                )));
            }
        }
        match (self.category, &self.units) {
            (Category::Unit, None) => return Err(fail("unit tool without a units table".into())),
            (Category::Scale, Some(_)) => {
                return Err(fail("scale tool must not carry a units table".into()))
            }
            (Category::Unit, Some(table)) => {
                let mut table = table.clone();
                table.tool_name = self.tool_name.clone();
                table.validate().map_err(|e| fail(e.to_string()))?;
                self.validate_unit_params(&table).map_err(&fail)?;
            }
            (Category::Scale, None) => {}
        }
        Ok(())
    }

    fn validate_unit_params(&self, table: &UnitTable) -> Result<(), String> {
        let expect = |name: &str, kind: ParamKind| -> Result<&ParameterSpec, String> {
            let p = self
                .param(name)
                .ok_or_else(|| format!("unit tool lacks parameter '{name}'"))?;
            if p.kind != kind {
                return Err(format!("unit tool parameter '{name}' must be {kind:?}"));
            }
            Ok(p)
        };
        expect("input_value", ParamKind::Real)?;
        for name in ["input_unit", "target_unit"] {
            let p = expect(name, ParamKind::EnumIndex)?;
            if p.enum_options.as_deref() != Some(table.unit_labels.as_slice()) {
                return Err(format!(
                    "'{name}' options must equal the table's unit labels"
                ));
            }
        }
        if self.params.len() != 3 {
            return Err("unit tools take exactly input_value, input_unit, target_unit".into());
        }
        Ok(())
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parameter names documented in a docstring's `Parameters:`/`Args:` section,
/// in order of appearance. Recognizes lines of the form `- name (type): ...`
/// or `name (type): ...`.
pub fn docstring_param_names(docstring: &str) -> Vec<String> {
    static LINE: OnceLock<Regex> = OnceLock::new();
    let line_re = LINE.get_or_init(|| {
        Regex::new(r"^\s*(?:-\s*)?([A-Za-z_][A-Za-z0-9_]*)\s*\([^)]*\)\s*:").unwrap()
    });
    let mut names = Vec::new();
    let mut in_section = false;
    for line in docstring.lines() {
        let trimmed = line.trim();
        match trimmed {
            "Parameters:" | "Args:" | "Arguments:" => {
                in_section = true;
                continue;
            }
            "Returns:" | "Return:" | "Raises:" | "Description:" => {
                in_section = false;
                continue;
            }
            _ => {}
        }
        if in_section {
            if let Some(cap) = line_re.captures(line) {
                names.push(cap[1].to_string());
            }
        }
    }
    names
}

/// Immutable, validated set of tools.
#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    records: Vec<ToolRecord>,
    by_name: HashMap<String, usize>,
    by_category: HashMap<Category, Vec<usize>>,
}

impl ToolRegistry {
    pub fn from_records(records: Vec<ToolRecord>) -> Result<Self, RegistryError> {
        let mut registry = ToolRegistry::default();
        for record in records {
            registry.insert(record)?;
        }
        Ok(registry)
    }

    fn insert(&mut self, mut record: ToolRecord) -> Result<(), RegistryError> {
        record.validate()?;
        if self.by_name.contains_key(&record.tool_name) {
            return Err(RegistryError::DuplicateTool(record.tool_name));
        }
        if let Some(table) = record.units.as_mut() {
            table.tool_name = record.tool_name.clone();
        }
        let idx = self.records.len();
        self.by_name.insert(record.tool_name.clone(), idx);
        self.by_category
            .entry(record.category)
            .or_default()
            .push(idx);
        self.records.push(record);
        Ok(())
    }

    /// Parse one toolkit document. `origin` is only used in error messages.
    pub fn parse_toolkit(text: &str, origin: &Path) -> Result<Vec<ToolRecord>, RegistryError> {
        let raw: Vec<serde_json::Value> =
            serde_json::from_str(text).map_err(|e| RegistryError::Parse {
                path: origin.to_path_buf(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        raw.into_iter()
            .enumerate()
            .map(|(i, value)| {
                let name = value
                    .get("tool_name")
                    .and_then(|v| v.as_str())
                    .map(str::to_string)
                    .unwrap_or_else(|| format!("<entry {i} in {}>", origin.display()));
                serde_json::from_value::<ToolRecord>(value).map_err(|e| RegistryError::Schema {
                    tool: name,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    pub fn load<P: AsRef<Path>>(paths: &[P]) -> Result<Self, RegistryError> {
        let mut records = Vec::new();
        for path in paths {
            let path = path.as_ref();
            let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            records.extend(Self::parse_toolkit(&text, path)?);
        }
        Self::from_records(records)
    }

    /// The toolkit shipped with the crate.
    pub fn builtin() -> Self {
        let mut records =
            Self::parse_toolkit(BUILTIN_CALCULATORS, Path::new("builtin:calculators.json"))
                .expect("builtin calculator toolkit parses");
        records.extend(
            Self::parse_toolkit(BUILTIN_UNITS, Path::new("builtin:units.json"))
                .expect("builtin unit toolkit parses"),
        );
        Self::from_records(records).expect("builtin toolkit is valid")
    }

    pub fn get(&self, name: &str) -> Result<&ToolRecord, RegistryError> {
        self.by_name
            .get(name)
            .map(|&i| &self.records[i])
            .ok_or_else(|| RegistryError::NotFound(name.to_string()))
    }

    pub fn tools_in_category(&self, category: Category) -> Vec<&ToolRecord> {
        self.by_category
            .get(&category)
            .map(|ids| ids.iter().map(|&i| &self.records[i]).collect())
            .unwrap_or_default()
    }

    pub fn records(&self) -> &[ToolRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// All unit tables, in load order.
    pub fn unit_tables(&self) -> impl Iterator<Item = &UnitTable> {
        self.records.iter().filter_map(|r| r.units.as_ref())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.records).expect("records serialize")
    }

    /// Content hash used to key retrieval index caches.
    pub fn content_hash(&self) -> String {
        hex_digest(self.to_json().as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub const BUILTIN_CALCULATORS: &str = include_str!("../assets/toolkit/calculators.json");
pub const BUILTIN_UNITS: &str = include_str!("../assets/toolkit/units.json");
