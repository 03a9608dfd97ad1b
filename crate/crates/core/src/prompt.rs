//! Versioned prompt templates and the shared rendering of a bug's context.

use crate::sig_retrieval::BugContext;

pub const SYSTEM_PROMPT: &str = "You are an expert in program repair.";

/// Marker appended to fault-localized lines in the rendered buggy function.
pub const BUG_TRAILER: &str = "// BUG:";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub id: &'static str,
    pub text: &'static str,
}

pub const BASE_TEMPLATE: Template = Template {
    id: "base-v1",
    text: include_str!("../templates/base-v1.txt"),
};
pub const SIG_QUERY_TEMPLATE: Template = Template {
    id: "sigq-v1",
    text: include_str!("../templates/sigq-v1.txt"),
};
pub const SIG_TEMPLATE: Template = Template {
    id: "sig-v1",
    text: include_str!("../templates/sig-v1.txt"),
};
pub const SNIP_TEMPLATE: Template = Template {
    id: "snip-v1",
    text: include_str!("../templates/snip-v1.txt"),
};

impl Template {
    /// Substitute `{name}` placeholders in a single pass, so substituted
    /// values are never rescanned. Unknown placeholders are left as is.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let value = after.find('}').and_then(|close| {
                let name = &after[..close];
                vars.iter().find(|(n, _)| *n == name).map(|(_, v)| (*v, close))
            });
            match value {
                Some((v, close)) => {
                    out.push_str(v);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

/// The buggy function with fault lines tagged by a trailing `// BUG:` comment.
pub fn marked_function(bug: &BugContext) -> String {
    let f = &bug.buggy_function;
    f.raw_text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            if bug.fault_localization.lines.contains(&(f.span.start + i)) {
                format!("{line} {BUG_TRAILER}")
            } else {
                line.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_bug_context(bug: &BugContext) -> String {
    let f = &bug.buggy_function;
    let mut out = format!(
        "The following function from {} (lines {}-{}) contains a bug. \
         Lines ending with `{BUG_TRAILER}` were identified by fault localization.\n\n```java\n{}\n```\n",
        f.file_path,
        f.span.start,
        f.span.end,
        marked_function(bug)
    );
    let lines: Vec<String> = bug.fault_localization.lines.iter().map(usize::to_string).collect();
    out.push_str(&format!("\nFault localization: {} line(s) {}\n", bug.fault_localization.file_path, lines.join(", ")));
    if !bug.failing_tests.is_empty() {
        out.push_str("\nFailing tests:\n");
        for t in &bug.failing_tests {
            out.push_str(&format!("- {}\n", t.name));
            if let Some(src) = t.source.as_deref().filter(|s| !s.trim().is_empty()) {
                out.push_str(&format!("```java\n{}\n```\n", src.trim_end()));
            }
        }
    }
    if !bug.error_messages.is_empty() {
        out.push_str("\nError messages:\n");
        for m in &bug.error_messages {
            out.push_str(m.trim_end());
            out.push('\n');
        }
    }
    out.trim_end().to_string()
}
