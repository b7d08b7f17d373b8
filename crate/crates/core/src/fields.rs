//! The `@@ name @@` field-block response grammar.
//!
//! ```text
//! @@ bug_api @@
//! torch.clamp
//! @@ repro_program @@
//! import torch
//! ...
//! ```
//!
//! Text before the first header is ignored, as is one code fence wrapping
//! the whole answer or an individual field value.

use std::collections::BTreeMap;

pub(crate) fn parse(text: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        if let Some(name) = header(line) {
            if let Some((n, body)) = current.take() {
                out.entry(n).or_insert_with(|| clean(&body));
            }
            current = Some((name.to_string(), Vec::new()));
        } else if let Some((_, body)) = current.as_mut() {
            body.push(line);
        }
    }
    if let Some((n, body)) = current {
        out.entry(n).or_insert_with(|| clean(&body));
    }
    out
}

pub(crate) fn render(fields: &[(&str, &str)]) -> String {
    let mut out = String::new();
    for (name, value) in fields {
        out.push_str(&format!("@@ {name} @@\n{value}\n"));
    }
    out
}

fn header(line: &str) -> Option<&str> {
    let t = line.trim();
    let inner = t.strip_prefix("@@")?.strip_suffix("@@")?.trim();
    (!inner.is_empty() && inner.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
        .then_some(inner)
}

fn clean(lines: &[&str]) -> String {
    let mut lines: Vec<&str> = lines.to_vec();
    // A closing fence of an outer wrapper lands in the last field.
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    while lines.first().is_some_and(|l| l.trim().is_empty()) {
        lines.remove(0);
    }
    let opens = lines
        .first()
        .is_some_and(|l| l.trim_start().starts_with("```"));
    let closes = lines.len() > 1 && lines.last().is_some_and(|l| l.trim() == "```");
    if opens && closes {
        lines.remove(0);
        lines.pop();
    } else if !opens && lines.last().is_some_and(|l| l.trim() == "```") {
        lines.pop();
    }
    lines.join("\n").trim_end().to_string()
}

/// Finds the last `LABEL: value` line, case-insensitively, ignoring markdown emphasis.
pub(crate) fn last_labeled<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    text.lines().rev().find_map(|line| {
        let t = line
            .trim()
            .trim_matches(|c| c == '*' || c == '`' || c == '#')
            .trim();
        let (l, v) = t.split_once(':')?;
        l.trim().eq_ignore_ascii_case(label).then(|| {
            v.trim()
                .trim_matches(|c| c == '*' || c == '`' || c == '.')
                .trim()
        })
    })
}

/// Parses `LABEL: YES|NO`.
pub(crate) fn yes_no(text: &str, label: &str) -> Option<bool> {
    let v = last_labeled(text, label)?;
    match v.to_ascii_lowercase().as_str() {
        "yes" | "true" => Some(true),
        "no" | "false" => Some(false),
        _ => None,
    }
}

/// Quick delimiter balance check over Python-like source. String literals
/// and `#` comments are skipped.
pub(crate) fn delimiters_balanced(src: &str) -> bool {
    let mut stack: Vec<char> = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '\'' | '"' => {
                let triple = i + 2 < chars.len() && chars[i + 1] == c && chars[i + 2] == c;
                let q = if triple { 3 } else { 1 };
                i += q;
                loop {
                    if i >= chars.len() {
                        return false;
                    }
                    if chars[i] == '\\' {
                        i += 2;
                        continue;
                    }
                    if !triple && chars[i] == '\n' {
                        return false;
                    }
                    if chars[i] == c
                        && (!triple
                            || (i + 2 < chars.len() && chars[i + 1] == c && chars[i + 2] == c))
                    {
                        i += q - 1;
                        break;
                    }
                    i += 1;
                }
            }
            '(' | '[' | '{' => stack.push(c),
            ')' | ']' | '}' => {
                let want = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                if stack.pop() != Some(want) {
                    return false;
                }
            }
            _ => {}
        }
        i += 1;
    }
    stack.is_empty()
}
