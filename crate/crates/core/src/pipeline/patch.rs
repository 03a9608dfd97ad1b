use thiserror::Error;

use crate::corpus::{extract_functions, SourceFile};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractPatchError {
    #[error("no patch found in response")]
    NoPatchFound,
}

/// Pull the replacement function out of an LLM response.
///
/// The first non-empty fenced block wins. Without fences, the longest run
/// of lines that parses as exactly one method declaration is taken.
pub fn extract_patch(response: &str) -> Result<String, ExtractPatchError> {
    if let Some(block) = first_fenced_block(response) {
        return Ok(block);
    }
    longest_method_run(response).ok_or(ExtractPatchError::NoPatchFound)
}

fn first_fenced_block(text: &str) -> Option<String> {
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        if !line.trim_start().starts_with("```") {
            continue;
        }
        let body: Vec<&str> = lines
            .by_ref()
            .take_while(|l| !l.trim_start().starts_with("```"))
            .collect();
        let block = body.join("\n");
        if !block.trim().is_empty() {
            return Some(block.trim_end().to_string());
        }
    }
    None
}

fn is_method_run(lines: &[&str]) -> bool {
    let text = lines.join("\n");
    let wrapped = format!("class PatchHolder {{\n{text}\n}}\n");
    match extract_functions(&SourceFile::new("patch", wrapped)) {
        Ok(records) => {
            records.len() == 1
                && records[0].span.start == 2
                && records[0].span.end == lines.len() + 1
        }
        Err(_) => false,
    }
}

fn longest_method_run(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let closers: Vec<usize> = (0..lines.len())
        .filter(|&i| lines[i].trim_end().ends_with('}'))
        .collect();
    let mut best: Option<(usize, usize)> = None;
    for start in 0..lines.len() {
        let head = lines[start].trim_start();
        if !(head.contains('(') || head.starts_with('@')) {
            continue;
        }
        // Longest candidate first; stop at the first that parses.
        for &end in closers.iter().rev().filter(|&&e| e >= start) {
            let len = end - start + 1;
            if best.is_some_and(|(_, l)| len <= l) {
                break;
            }
            if is_method_run(&lines[start..=end]) {
                best = Some((start, len));
                break;
            }
        }
    }
    best.map(|(s, l)| lines[s..s + l].join("\n"))
}
