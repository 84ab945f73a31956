//! Extraction of `Label: value` lines from model output.
//!
//! Matching is case-insensitive, treats `_` and space in labels as the same
//! character, and tolerates list dashes and markdown emphasis around the
//! label (`- **Answer:** x`). When a label repeats, the last one wins.

fn canonical(label: &str) -> String {
    label
        .chars()
        .map(|c| if c == '_' { ' ' } else { c.to_ascii_lowercase() })
        .collect()
}

fn strip_decoration(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '#' | '-' | '>' | '`'))
}

/// Value of the last line labelled `label`, if any.
pub fn field(raw: &str, label: &str) -> Option<String> {
    let want = canonical(label);
    raw.lines().rev().find_map(|line| {
        let line = strip_decoration(line);
        let colon = line.find(':')?;
        let head = strip_decoration(&line[..colon]);
        if canonical(head) != want {
            return None;
        }
        let value = strip_decoration(&line[colon + 1..]);
        Some(value.trim_matches('"').trim().to_string())
    })
}

/// `Label: value` line, the inverse of [`field`] for single-line values.
pub fn format_field(label: &str, value: &str) -> String {
    format!("{label}: {value}")
}
