//! Pulls the JSON payload out of a free-text model reply.

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JsonExtractError {
    #[error("no JSON found in reply")]
    NoJsonFound,
    #[error("invalid JSON at line {line}, column {column} of the extracted block: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
        snippet: String,
    },
}

const FENCE: &str = "```json";

/// Parse the first ```` ```json ```` fenced block. Without a fence, falls back
/// to the largest balanced `{...}` or `[...]` span in the reply.
pub fn extract_json(reply: &str) -> Result<Value, JsonExtractError> {
    let block = fenced_block(reply)
        .or_else(|| largest_balanced_span(reply))
        .ok_or(JsonExtractError::NoJsonFound)?;
    serde_json::from_str(block).map_err(|e| JsonExtractError::ParseError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
        snippet: block.chars().take(200).collect(),
    })
}

fn fenced_block(reply: &str) -> Option<&str> {
    let start = reply.find(FENCE)? + FENCE.len();
    let rest = &reply[start..];
    let end = rest.find("```").unwrap_or(rest.len());
    let block = rest[..end].trim();
    (!block.is_empty()).then_some(block)
}

fn largest_balanced_span(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < bytes.len() {
        if matches!(bytes[i], b'{' | b'[') {
            if let Some(end) = balanced_end(bytes, i) {
                if best.is_none_or(|(s, e)| end - i > e - s) {
                    best = Some((i, end));
                }
                // Spans nested inside this one are shorter; skip past it.
                i = end;
                continue;
            }
        }
        i += 1;
    }
    best.map(|(s, e)| &text[s..e])
}

/// Index one past the bracket closing the one opened at `start`.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut stack = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => stack.push(b'}'),
            b'[' => stack.push(b']'),
            b'}' | b']' => {
                if stack.pop() != Some(b) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(start + offset + 1);
                }
            }
            _ => {}
        }
    }
    None
}
