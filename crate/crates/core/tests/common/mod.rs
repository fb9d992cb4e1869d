#![allow(dead_code)]

pub mod adversary;
pub mod oracles;

use std::path::PathBuf;
use std::sync::Arc;

use nestcall::llm::{Cassette, ChatProvider, Exchange, ScriptedProvider};
use nestcall::nesting::StageRecord;
use nestcall::registry::ToolRegistry;
use nestcall::retrieval::HashingEmbedder;
use nestcall::Engine;

pub const FRAMINGHAM: &str = "Framingham Risk Score for Hard Coronary Heart Disease";

/// Fixture path; also resolves from sibling crates that include this module.
pub fn fixture(rel: &str) -> PathBuf {
    let here = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let own = here.join("tests/fixtures");
    let root = if own.is_dir() {
        own
    } else {
        here.join("../core/tests/fixtures")
    };
    root.join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel))
        .unwrap()
        .trim_end()
        .to_string()
}

pub fn engine_with(chat: Arc<dyn ChatProvider>) -> Engine {
    Engine::new(
        ToolRegistry::builtin(),
        Arc::new(HashingEmbedder::default()),
        chat,
    )
    .unwrap()
}

pub fn scripted(rel: &str) -> Arc<dyn ChatProvider> {
    Arc::new(ScriptedProvider::load(&fixture(rel)).unwrap())
}

pub fn cassette(rel: &str) -> Arc<dyn ChatProvider> {
    Arc::new(Cassette::replay(&fixture(rel)).unwrap())
}

pub fn framingham_case() -> (String, String) {
    (
        read_fixture("framingham/query.txt"),
        read_fixture("framingham/case.txt"),
    )
}

/// Every exchange in a pipeline trace, nested conversions included, in order.
pub fn exchanges(trace: &[StageRecord]) -> Vec<&Exchange> {
    let mut out = Vec::new();
    for r in trace {
        match r {
            StageRecord::Selection { selection, .. } => {
                out.extend(selection.raw_llm_exchanges.iter())
            }
            StageRecord::SlotFilling { exchanges, .. }
            | StageRecord::Verification { exchanges, .. } => out.extend(exchanges.iter()),
            StageRecord::Conversion { stages, .. } => out.extend(self::exchanges(stages)),
            StageRecord::Evaluate { .. } => {}
        }
    }
    out
}
