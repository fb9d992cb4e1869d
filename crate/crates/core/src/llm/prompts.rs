//! Prompt templates and placeholder substitution.
//!
//! Templates are plain text files, one per stage. A placeholder is any token
//! of the form `INSERT_<NAME>_HERE`, optionally wrapped in `{...}` or
//! `{{...}}`; the whole token including its braces is replaced. Other braces
//! in the template (the worked examples use `{{...}}` literally) are left
//! untouched.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("unknown prompt template '{0}'")]
    UnknownTemplate(String),
    #[error("template '{template}' needs a value for {placeholder}")]
    MissingBinding {
        template: String,
        placeholder: String,
    },
    #[error("cannot read prompt template {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub const CODE_GENERATION: &str = "code_generation";
pub const DIAGNOSIS: &str = "diagnosis";
pub const CLASSIFIER: &str = "classifier";
pub const REWRITER: &str = "rewriter";
pub const DISPATCHER: &str = "dispatcher";
pub const SLOT_FILLING: &str = "slot_filling";
pub const NESTED_CALLING: &str = "nested_calling";

pub const TEMPLATE_NAMES: [&str; 7] = [
    CODE_GENERATION,
    DIAGNOSIS,
    CLASSIFIER,
    REWRITER,
    DISPATCHER,
    SLOT_FILLING,
    NESTED_CALLING,
];

const BUILTIN: [(&str, &str); 7] = [
    (
        CODE_GENERATION,
        include_str!("../../assets/prompts/code_generation.txt"),
    ),
    (
        DIAGNOSIS,
        include_str!("../../assets/prompts/diagnosis.txt"),
    ),
    (
        CLASSIFIER,
        include_str!("../../assets/prompts/classifier.txt"),
    ),
    (REWRITER, include_str!("../../assets/prompts/rewriter.txt")),
    (
        DISPATCHER,
        include_str!("../../assets/prompts/dispatcher.txt"),
    ),
    (
        SLOT_FILLING,
        include_str!("../../assets/prompts/slot_filling.txt"),
    ),
    (
        NESTED_CALLING,
        include_str!("../../assets/prompts/nested_calling.txt"),
    ),
];

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\{\{(INSERT_[A-Z]+_HERE)\}\}|\{(INSERT_[A-Z]+_HERE)\}|(INSERT_[A-Z]+_HERE)")
            .unwrap()
    })
}

/// Placeholder names appearing in `text`, in order, without duplicates.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut seen = Vec::new();
    for cap in placeholder_re().captures_iter(text) {
        let name = cap
            .get(1)
            .or_else(|| cap.get(2))
            .or_else(|| cap.get(3))
            .expect("one group matches")
            .as_str()
            .to_string();
        if !seen.contains(&name) {
            seen.push(name);
        }
    }
    seen
}

/// Named prompt templates.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: HashMap<String, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        PromptSet {
            templates: BUILTIN
                .iter()
                .map(|(n, t)| (n.to_string(), t.to_string()))
                .collect(),
        }
    }

    /// Load `<name>.txt` for every known template from `dir`. Files that are
    /// absent fall back to the built-in text.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for name in TEMPLATE_NAMES {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|source| TemplateError::Io { path, source })?;
                set.templates.insert(name.to_string(), text);
            }
        }
        Ok(set)
    }

    pub fn template(&self, name: &str) -> Result<&str, TemplateError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| TemplateError::UnknownTemplate(name.to_string()))
    }

    /// Substitute every placeholder in one pass. Bound values are inserted
    /// verbatim and never rescanned.
    pub fn render(
        &self,
        name: &str,
        bindings: &BTreeMap<&str, String>,
    ) -> Result<String, TemplateError> {
        let template = self.template(name)?;
        let mut out = String::with_capacity(template.len() + 256);
        let mut last = 0;
        for cap in placeholder_re().captures_iter(template) {
            let whole = cap.get(0).unwrap();
            let key = cap
                .get(1)
                .or_else(|| cap.get(2))
                .or_else(|| cap.get(3))
                .unwrap()
                .as_str();
            let value = bindings
                .get(key)
                .ok_or_else(|| TemplateError::MissingBinding {
                    template: name.to_string(),
                    placeholder: key.to_string(),
                })?;
            out.push_str(&template[last..whole.start()]);
            out.push_str(value);
            last = whole.end();
        }
        out.push_str(&template[last..]);
        Ok(out)
    }
}

/// Convenience for building binding maps.
pub fn bindings<const N: usize>(
    pairs: [(&'static str, String); N],
) -> BTreeMap<&'static str, String> {
    pairs.into_iter().collect()
}
