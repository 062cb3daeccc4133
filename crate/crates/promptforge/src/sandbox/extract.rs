//! Code extraction from model responses.
//!
//! Candidates are every fenced code block plus the whole response with
//! fence marker lines removed. Each candidate is syntax-checked; the
//! longest valid one (by character count) wins. When nothing checks out,
//! the longest fenced block — or the whole response if there are no
//! fences — is returned with `syntax_valid = false` so the failure shows
//! up in the execution evidence rather than as an error.

use std::collections::HashMap;

use super::{CodeSnippet, SnippetOrigin};

fn is_fence_line(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Contents of every fenced block, in order of appearance. An unclosed
/// fence runs to the end of the response.
pub(crate) fn fenced_blocks(response: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in response.lines() {
        if is_fence_line(line) {
            match current.take() {
                Some(lines) => blocks.push(lines.join("\n")),
                None => current = Some(Vec::new()),
            }
        } else if let Some(lines) = current.as_mut() {
            lines.push(line);
        }
    }
    if let Some(lines) = current {
        blocks.push(lines.join("\n"));
    }
    blocks
}

/// The response with fence marker lines removed.
pub fn strip_fence_lines(response: &str) -> String {
    response
        .lines()
        .filter(|line| !is_fence_line(line))
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string()
}

pub(crate) fn extract_code(response: &str, syntax_valid: impl Fn(&str) -> bool) -> CodeSnippet {
    let blocks = fenced_blocks(response);
    let stripped = strip_fence_lines(response);

    let mut candidates: Vec<(SnippetOrigin, String)> = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| (SnippetOrigin::FencedBlock(i), b.clone()))
        .collect();
    candidates.push((SnippetOrigin::WholeResponse, stripped));

    // one syntax check per distinct text
    let mut verdicts: HashMap<&str, bool> = HashMap::new();
    for (_, text) in &candidates {
        if !verdicts.contains_key(text.as_str()) {
            let ok = !text.is_empty() && syntax_valid(text);
            verdicts.insert(text.as_str(), ok);
        }
    }

    let best_valid = candidates
        .iter()
        .filter(|(_, text)| verdicts[text.as_str()])
        .max_by_key(|(_, text)| text.chars().count());
    if let Some((origin, text)) = best_valid {
        return CodeSnippet {
            text: text.clone(),
            origin: *origin,
            syntax_valid: true,
        };
    }

    // fallback: longest fenced block, or the whole response without fences
    let fallback = candidates
        .iter()
        .filter(|(origin, _)| matches!(origin, SnippetOrigin::FencedBlock(_)))
        .max_by_key(|(_, text)| text.chars().count());
    let (origin, text) = fallback.unwrap_or_else(|| {
        candidates
            .last()
            .expect("whole-response candidate always present")
    });
    CodeSnippet {
        text: text.clone(),
        origin: *origin,
        syntax_valid: false,
    }
}
