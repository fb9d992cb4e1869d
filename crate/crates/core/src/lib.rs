//! Tool-selection and nested tool-calling engine for medical calculators.

// Pipeline failures carry the partial trace by value.
#![allow(clippy::result_large_err)]

pub mod bench;
pub mod calculators;
pub mod engine;
pub mod llm;
pub mod meta_tool;
pub mod nesting;
pub mod parallel;
pub mod registry;
pub mod retrieval;
pub mod stage;
pub mod units;

pub use engine::{Engine, EngineConfig};
