//! Wire format of data-mutation exchanges.
//!
//! The request shows the model a reference task serialized as labeled
//! fenced sections and demands a new task in the same shape plus a
//! reference solution. Responses must contain all three sections —
//! DESCRIPTION, SOLUTION, TESTS — each a label line followed by one fenced
//! block; anything less is unparsable and retried against a fresh
//! reference.

use crate::llm::{ChatRequest, Message, MUTATION_TEMPERATURE};

use super::{CandidateTask, SuiteKind, Task, TestSuite};

/// Fixed instruction sent as the system message of every data-mutation
/// request.
pub const DATA_MUTATION_INSTRUCTION: &str = "You are an expert in software engineering. Please help me generate similar data based on the format provided below. The reference data format is as follows.";

/// Template contract appended to the instruction so parse failures are
/// objective.
const OUTPUT_TEMPLATE_NOTE: &str = "Respond with exactly three sections, in order: a line reading DESCRIPTION followed by a fenced code block with the new task description, a line reading SOLUTION followed by a fenced code block with a correct reference solution, and a line reading TESTS followed by a fenced code block with the test suite in the same format as the reference data.";

/// Serialize a reference task in the section format the response must
/// mirror. Reference tasks carry no solution, so only DESCRIPTION and
/// TESTS appear.
pub fn serialize_reference(task: &Task) -> String {
    let tests = match task.suite.kind {
        SuiteKind::EmbeddedTests => task.suite.embedded.clone().unwrap_or_default(),
        SuiteKind::IoPairs => {
            serde_json::to_string_pretty(task.suite.io_pairs.as_deref().unwrap_or_default())
                .expect("pairs serialize")
        }
    };
    format!(
        "DESCRIPTION\n```\n{}\n```\n\nTESTS\n```\n{}\n```",
        task.description, tests
    )
}

/// Build the full mutation request for one reference task.
pub fn mutation_request(reference: &Task, model: &str) -> ChatRequest {
    ChatRequest::new(
        model,
        vec![
            Message::system(format!(
                "{DATA_MUTATION_INSTRUCTION}\n\n{OUTPUT_TEMPLATE_NOTE}"
            )),
            Message::user(serialize_reference(reference)),
        ],
        MUTATION_TEMPERATURE,
    )
}

/// Label line: the bare section name, tolerating leading `#` markers,
/// surrounding whitespace, and a trailing colon.
fn is_label_line(line: &str, label: &str) -> bool {
    let trimmed = line.trim().trim_start_matches('#').trim();
    let trimmed = trimmed.strip_suffix(':').unwrap_or(trimmed).trim();
    trimmed.eq_ignore_ascii_case(label)
}

/// The first fenced block at or after `start`, with the line index past
/// its closing fence.
fn fenced_block_after(lines: &[&str], start: usize) -> Option<(String, usize)> {
    let mut idx = start;
    while idx < lines.len() {
        if lines[idx].trim_start().starts_with("```") {
            let mut body = Vec::new();
            let mut cursor = idx + 1;
            while cursor < lines.len() && !lines[cursor].trim_start().starts_with("```") {
                body.push(lines[cursor]);
                cursor += 1;
            }
            let end = if cursor < lines.len() { cursor + 1 } else { cursor };
            return Some((body.join("\n"), end));
        }
        // a non-empty line that is not the fence means the section body
        // was not fenced; give up on this section
        if !lines[idx].trim().is_empty() {
            return None;
        }
        idx += 1;
    }
    None
}

fn section(lines: &[&str], label: &str) -> Option<String> {
    let label_at = lines.iter().position(|line| is_label_line(line, label))?;
    fenced_block_after(lines, label_at + 1).map(|(body, _)| body)
}

/// First `def NAME(` in a solution; mutated embedded tasks take their
/// entry point from the solution because the response format has no
/// explicit field for it.
fn first_function_name(solution: &str) -> Option<String> {
    for line in solution.lines() {
        let trimmed = line.trim_start();
        let rest = trimmed.strip_prefix("def ")?;
        let name: String = rest
            .chars()
            .take_while(|c| c.is_alphanumeric() || *c == '_')
            .collect();
        if !name.is_empty() {
            return Some(name);
        }
    }
    None
}

/// Parse a mutation response into a candidate. The suite kind follows the
/// reference task. The error string names what was missing.
pub fn parse_candidate_response(response: &str, reference: &Task) -> Result<CandidateTask, String> {
    let lines: Vec<&str> = response.lines().collect();

    let description = section(&lines, "DESCRIPTION")
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or("response lacks a DESCRIPTION section")?;
    let solution = section(&lines, "SOLUTION")
        .map(|s| s.trim_end().to_string())
        .filter(|s| !s.trim().is_empty())
        .ok_or("response lacks a SOLUTION section")?;
    let tests_raw = section(&lines, "TESTS")
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or("response lacks a TESTS section")?;

    let suite = match reference.suite.kind {
        SuiteKind::EmbeddedTests => TestSuite::embedded(tests_raw),
        SuiteKind::IoPairs => {
            let pairs: Vec<(String, String)> = serde_json::from_str(&tests_raw)
                .map_err(|e| format!("TESTS section is not a JSON array of pairs: {e}"))?;
            if pairs.is_empty() {
                return Err("TESTS section holds no pairs".into());
            }
            TestSuite::io(pairs)
        }
    };
    let entry_point = match reference.suite.kind {
        SuiteKind::EmbeddedTests => Some(
            first_function_name(&solution)
                .ok_or("SOLUTION defines no function to use as entry point")?,
        ),
        SuiteKind::IoPairs => None,
    };

    Ok(CandidateTask {
        description,
        suite,
        reference_solution: solution,
        provenance: reference.id.clone(),
        entry_point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_support::{embedded_task, io_task};
    use crate::llm::Role;

    #[test]
    fn request_carries_instruction_and_reference() {
        let reference = embedded_task("r/0", "sum two ints", "assert f(1,2)==3", "f");
        let request = mutation_request(&reference, "test-model");
        assert_eq!(request.temperature, MUTATION_TEMPERATURE);
        assert_eq!(request.messages[0].role, Role::System);
        assert!(request.messages[0].content.starts_with(DATA_MUTATION_INSTRUCTION));
        let user = &request.messages[1].content;
        assert!(user.contains("sum two ints"));
        assert!(user.contains("assert f(1,2)==3"));
    }

    #[test]
    fn reference_serialization_for_io_tasks_uses_json_pairs() {
        let reference = io_task("r/1", "print the sum", vec![("3 4", "7")]);
        let serialized = serialize_reference(&reference);
        assert!(serialized.contains("\"3 4\""));
        assert!(serialized.contains("TESTS"));
    }

    #[test]
    fn parses_well_formed_embedded_response() {
        let reference = embedded_task("r/0", "old", "assert f(1)==1", "f");
        let response = "Sure!\nDESCRIPTION\n```\ncount the vowels in a word\n```\nSOLUTION\n```python\ndef count_vowels(word):\n    return sum(c in 'aeiou' for c in word)\n```\nTESTS\n```\nassert count_vowels('abc') == 1\n```\n";
        let candidate = parse_candidate_response(response, &reference).unwrap();
        assert_eq!(candidate.description, "count the vowels in a word");
        assert_eq!(candidate.entry_point.as_deref(), Some("count_vowels"));
        assert_eq!(candidate.provenance, "r/0");
        assert_eq!(candidate.suite.kind, SuiteKind::EmbeddedTests);
    }

    #[test]
    fn parses_io_response_pairs() {
        let reference = io_task("r/1", "old", vec![("1", "2")]);
        let response = "DESCRIPTION\n```\ntriple the input\n```\nSOLUTION\n```\nprint(int(input()) * 3)\n```\nTESTS\n```\n[[\"2\", \"6\"], [\"0\", \"0\"]]\n```";
        let candidate = parse_candidate_response(response, &reference).unwrap();
        assert_eq!(candidate.suite.kind, SuiteKind::IoPairs);
        assert_eq!(candidate.suite.io_pairs.as_ref().unwrap().len(), 2);
        assert!(candidate.entry_point.is_none());
    }

    #[test]
    fn missing_sections_are_named() {
        let reference = embedded_task("r/0", "old", "assert True", "f");
        let no_solution = "DESCRIPTION\n```\nd\n```\nTESTS\n```\nassert True\n```";
        let err = parse_candidate_response(no_solution, &reference).unwrap_err();
        assert!(err.contains("SOLUTION"));

        let no_tests = "DESCRIPTION\n```\nd\n```\nSOLUTION\n```\ndef f():\n    pass\n```";
        let err = parse_candidate_response(no_tests, &reference).unwrap_err();
        assert!(err.contains("TESTS"));
    }

    #[test]
    fn label_variants_are_tolerated() {
        let reference = embedded_task("r/0", "old", "assert True", "f");
        let response = "### Description:\n```\nd\n```\n## SOLUTION\n```\ndef g():\n    return 1\n```\ntests\n```\nassert g() == 1\n```";
        let candidate = parse_candidate_response(response, &reference).unwrap();
        assert_eq!(candidate.entry_point.as_deref(), Some("g"));
    }

    #[test]
    fn solution_without_function_is_unparsable_for_embedded() {
        let reference = embedded_task("r/0", "old", "assert True", "f");
        let response = "DESCRIPTION\n```\nd\n```\nSOLUTION\n```\nx = 1\n```\nTESTS\n```\nassert x == 1\n```";
        let err = parse_candidate_response(response, &reference).unwrap_err();
        assert!(err.contains("entry point"));
    }

    #[test]
    fn bad_io_pairs_json_is_unparsable() {
        let reference = io_task("r/1", "old", vec![("1", "2")]);
        let response =
            "DESCRIPTION\n```\nd\n```\nSOLUTION\n```\nprint(1)\n```\nTESTS\n```\nnot json\n```";
        assert!(parse_candidate_response(response, &reference).is_err());
    }
}
