use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ProviderError};

/// Reply `reply` when the template matches and every `contains` needle occurs
/// in the conversation text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub template: String,
    #[serde(default)]
    pub contains: Vec<String>,
    pub reply: String,
}

impl ScriptRule {
    fn matches(&self, request: &ChatRequest, text: &str) -> bool {
        (self.template == "*" || self.template == request.template_name)
            && self.contains.iter().all(|n| text.contains(n.as_str()))
    }
}

/// Deterministic provider driven by an ordered rule list; first match wins.
#[derive(Debug, Clone, Default)]
pub struct ScriptedProvider {
    rules: Vec<ScriptRule>,
}

impl ScriptedProvider {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedProvider { rules }
    }

    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        serde_json::from_str(text)
            .map(Self::new)
            .map_err(|e| ProviderError::Other(format!("malformed script: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ProviderError::Other(format!("cannot read script {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn rules(&self) -> &[ScriptRule] {
        &self.rules
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let text = request.conversation_text();
        self.rules
            .iter()
            .find(|r| r.matches(request, &text))
            .map(|r| r.reply.clone())
            .ok_or_else(|| ProviderError::ScriptMiss {
                template: request.template_name.clone(),
            })
    }

    fn id(&self) -> String {
        "scripted".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_match_wins() {
        let p = ScriptedProvider::from_json(
            r#"[
                {"template": "classifier", "contains": ["mg/dL"], "reply": "unit"},
                {"template": "classifier", "reply": "scale"},
                {"template": "*", "contains": ["retry"], "reply": "any"}
            ]"#,
        )
        .unwrap();
        assert_eq!(
            p.complete(&ChatRequest::new("classifier", "x mg/dL"))
                .unwrap(),
            "unit"
        );
        assert_eq!(
            p.complete(&ChatRequest::new("classifier", "x")).unwrap(),
            "scale"
        );
        assert_eq!(
            p.complete(&ChatRequest::new("rewriter", "please retry"))
                .unwrap(),
            "any"
        );
        assert!(matches!(
            p.complete(&ChatRequest::new("rewriter", "x")),
            Err(ProviderError::ScriptMiss { .. })
        ));
    }

    #[test]
    fn followups_are_searched() {
        let p = ScriptedProvider::new(vec![ScriptRule {
            template: "t".into(),
            contains: vec!["exactly three".into()],
            reply: "fixed".into(),
        }]);
        let req = ChatRequest::new("t", "p").with_feedback("bad", "return exactly three queries");
        assert_eq!(p.complete(&req).unwrap(), "fixed");
    }
}
