//! Issue ↔ pull-request linkage from free text.

use std::sync::OnceLock;

use regex::Regex;

/// Numbers a PR description claims to fix (`Fixes #12`, `closes owner/repo#12`,
/// `resolves https://github.com/o/r/issues/12`).
pub fn fixed_issue_refs(text: &str) -> Vec<u64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(?:close[sd]?|fix(?:e[sd])?|resolve[sd]?)\b:?\s+(?:[\w.-]+/[\w.-]+)?(?:#|https?://\S+/issues/)(\d+)",
        )
        .unwrap()
    });
    collect(re, text)
}

/// PR numbers an issue (body or comments) points at as its fix:
/// `fixed by #7`, `fixed in PR #7`, `PR #7`, or a `/pull/7` URL.
pub fn fixing_pr_refs(text: &str) -> Vec<u64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(
            r"(?i)(?:\b(?:fix(?:ed)?|resolved|closed|addressed)\s+(?:by|in|via|with)\s+(?:(?:pr|pull request)\s+)?#(\d+))|(?:\b(?:pr|pull request)\s*#(\d+))|(?:/pull/(\d+)\b)",
        )
        .unwrap()
    });
    collect(re, text)
}

fn collect(re: &Regex, text: &str) -> Vec<u64> {
    let mut out = Vec::new();
    for cap in re.captures_iter(text) {
        let n = cap
            .iter()
            .skip(1)
            .flatten()
            .find_map(|m| m.as_str().parse::<u64>().ok());
        if let Some(n) = n {
            if n > 0 && !out.contains(&n) {
                out.push(n);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pr_side_keywords() {
        assert_eq!(fixed_issue_refs("Fixes #132303"), [132303]);
        assert_eq!(
            fixed_issue_refs("closes pytorch/pytorch#5 and resolved: #6"),
            [5, 6]
        );
        assert_eq!(
            fixed_issue_refs("Resolves https://github.com/pytorch/pytorch/issues/42"),
            [42]
        );
        assert!(fixed_issue_refs("see #12 for context").is_empty());
        assert!(fixed_issue_refs("prefix #12").is_empty());
    }

    #[test]
    fn issue_side_mentions() {
        assert_eq!(fixing_pr_refs("This was fixed by #7."), [7]);
        assert_eq!(fixing_pr_refs("fixed in PR #8; also see PR #9"), [8, 9]);
        assert_eq!(fixing_pr_refs("https://github.com/o/r/pull/11"), [11]);
        assert!(fixing_pr_refs("duplicate of #3").is_empty());
    }
}
