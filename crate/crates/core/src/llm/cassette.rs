//! Record/replay of chat exchanges.
//!
//! Entries are keyed by template name and a SHA-256 digest of the full
//! conversation (prompt plus any corrective turns), so editing a template
//! invalidates its recordings instead of silently replaying stale replies.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ProviderError};
use crate::registry::hex_digest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub template_name: String,
    pub prompt_digest: String,
    pub reply: String,
}

/// Digest of a request, stable across platforms (CRLF folded to LF).
pub fn prompt_digest(request: &ChatRequest) -> String {
    let mut text = request.rendered_prompt.replace("\r\n", "\n");
    for f in &request.followups {
        text.push_str("\n<<assistant>>\n");
        text.push_str(&f.assistant.replace("\r\n", "\n"));
        text.push_str("\n<<user>>\n");
        text.push_str(&f.user.replace("\r\n", "\n"));
    }
    hex_digest(text.as_bytes())
}

pub enum CassetteMode {
    /// Misses are errors.
    Replay,
    /// Misses are forwarded to `inner` and the reply is stored.
    Record(Box<dyn ChatProvider>),
}

pub struct Cassette {
    entries: Mutex<Vec<CassetteEntry>>,
    index: Mutex<HashMap<(String, String), usize>>,
    mode: CassetteMode,
    path: Option<PathBuf>,
}

impl Cassette {
    pub fn from_entries(
        entries: Vec<CassetteEntry>,
        mode: CassetteMode,
    ) -> Result<Self, ProviderError> {
        let mut index = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            let key = (e.template_name.clone(), e.prompt_digest.clone());
            if index.insert(key, i).is_some() {
                return Err(ProviderError::Other(format!(
                    "duplicate cassette entry for '{}' ({})",
                    e.template_name, e.prompt_digest
                )));
            }
        }
        Ok(Cassette {
            entries: Mutex::new(entries),
            index: Mutex::new(index),
            mode,
            path: None,
        })
    }

    pub fn replay(path: &Path) -> Result<Self, ProviderError> {
        let mut c = Self::from_entries(read_entries(path)?, CassetteMode::Replay)?;
        c.path = Some(path.to_path_buf());
        Ok(c)
    }

    /// Record into `path`, replaying whatever the file already holds.
    pub fn record(path: &Path, inner: Box<dyn ChatProvider>) -> Result<Self, ProviderError> {
        let existing = if path.exists() {
            read_entries(path)?
        } else {
            Vec::new()
        };
        let mut c = Self::from_entries(existing, CassetteMode::Record(inner))?;
        c.path = Some(path.to_path_buf());
        Ok(c)
    }

    pub fn entries(&self) -> Vec<CassetteEntry> {
        self.entries.lock().unwrap().clone()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&*self.entries.lock().unwrap()).expect("entries serialize")
    }

    /// Write entries back to the file the cassette was opened from.
    pub fn save(&self) -> Result<(), ProviderError> {
        match &self.path {
            Some(path) => self.save_to(path),
            None => Ok(()),
        }
    }

    pub fn save_to(&self, path: &Path) -> Result<(), ProviderError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| {
            ProviderError::Other(format!("cannot write cassette {}: {e}", path.display()))
        })
    }
}

fn read_entries(path: &Path) -> Result<Vec<CassetteEntry>, ProviderError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ProviderError::Other(format!("cannot read cassette {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| ProviderError::Other(format!("malformed cassette {}: {e}", path.display())))
}

impl ChatProvider for Cassette {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let digest = prompt_digest(request);
        let key = (request.template_name.clone(), digest.clone());
        if let Some(&i) = self.index.lock().unwrap().get(&key) {
            return Ok(self.entries.lock().unwrap()[i].reply.clone());
        }
        match &self.mode {
            CassetteMode::Replay => Err(ProviderError::CassetteMiss {
                template: request.template_name.clone(),
                digest,
            }),
            CassetteMode::Record(inner) => {
                let reply = inner.complete(request)?;
                // Lock order: index, then entries.
                let mut index = self.index.lock().unwrap();
                let mut entries = self.entries.lock().unwrap();
                if let std::collections::hash_map::Entry::Vacant(slot) = index.entry(key) {
                    slot.insert(entries.len());
                    entries.push(CassetteEntry {
                        template_name: request.template_name.clone(),
                        prompt_digest: digest,
                        reply: reply.clone(),
                    });
                }
                Ok(reply)
            }
        }
    }

    fn id(&self) -> String {
        match &self.mode {
            CassetteMode::Replay => "cassette".into(),
            CassetteMode::Record(inner) => format!("record:{}", inner.id()),
        }
    }
}
