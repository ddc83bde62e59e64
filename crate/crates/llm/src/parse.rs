//! Turning free-form model replies into structured judgments.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::prompt::{option_letter, PromptKind};
use crate::LlmError;

/// Ratios in `(1, CLAMP_LIMIT]` are treated as rounding slop and clamped to 1.
pub const CLAMP_LIMIT: f64 = 1.05;

static RATIO: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)related\s*ratio\s*(?:=|:|\bis\b)\s*(-?(?:\d+(?:\.\d*)?|\.\d+))\s*(%)?").unwrap()
});
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:\d+(?:\.\d+)?|\.\d+)").unwrap());
static REASON: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)\breason\s*[:=]\s*(.*)").unwrap());
static PAREN_LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-Za-z]{1,2})\)").unwrap());

fn failure(kind: PromptKind, raw: &str) -> LlmError {
    LlmError::ParseFailure { kind, raw: raw.to_string() }
}

/// A number is standalone when it is not glued to letters, digits or a
/// decimal point on either side (so "GPT-3.5" and "v2" do not count as
/// free-standing values in the fallback scan, but "0.7" in prose does).
fn standalone_numbers(raw: &str) -> impl Iterator<Item = f64> + '_ {
    NUMBER.find_iter(raw).filter_map(move |m| {
        let before = raw[..m.start()].chars().next_back();
        let after = raw[m.end()..].chars().next();
        let glued_before = before.is_some_and(|c| c.is_alphanumeric() || c == '.' || c == '-' || c == '_');
        let glued_after = after.is_some_and(|c| c.is_alphanumeric() || c == '_')
            || (after == Some('.') && raw[m.end() + 1..].chars().next().is_some_and(|c| c.is_ascii_digit()));
        if glued_before || glued_after {
            None
        } else {
            m.as_str().parse().ok()
        }
    })
}

/// Pull the relatedness ratio out of a reply.
///
/// The first `related ratio = x` (also `:` or `is`, any case and spacing,
/// optional `%`) wins. Without one, the first standalone number in `[0, 1]`
/// is taken. Values slightly above 1 are clamped with a warning.
pub fn extract_ratio(raw: &str) -> Result<f64, LlmError> {
    if let Some(c) = RATIO.captures(raw) {
        let mut value: f64 = c[1].parse().map_err(|_| failure(PromptKind::Similarity, raw))?;
        if c.get(2).is_some() {
            value /= 100.0;
        }
        return bounded(value, raw);
    }
    standalone_numbers(raw)
        .find(|v| (0.0..=1.0).contains(v))
        .ok_or_else(|| failure(PromptKind::Similarity, raw))
}

fn bounded(value: f64, raw: &str) -> Result<f64, LlmError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else if value > 1.0 && value <= CLAMP_LIMIT {
        warn!(value, "related ratio slightly above 1; clamping");
        Ok(1.0)
    } else {
        Err(failure(PromptKind::Similarity, raw))
    }
}

/// Text following `Reason:`, or empty.
pub fn extract_reason(raw: &str) -> String {
    REASON.captures(raw).map(|c| c[1].trim().to_string()).unwrap_or_default()
}

/// The answer's leading list: first non-empty line, a leading `Answer:`
/// dropped, cut at the first sentence break.
fn answer_head(raw: &str) -> &str {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let line = match line.get(..7) {
        Some(p) if p.eq_ignore_ascii_case("answer:") => line[7..].trim_start(),
        _ => line,
    };
    let cut = line.find(". ").or_else(|| line.find(": ")).unwrap_or(line.len());
    line[..cut].trim_end_matches('.').trim()
}

/// Split on commas outside double quotes; `""` inside quotes is a literal quote.
fn split_list(head: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = head.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out.into_iter().map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
}

fn letter_index(letters: &str, n: usize) -> Option<usize> {
    (0..n).find(|&i| option_letter(i) == letters)
}

fn name_index(token: &str, categories: &[String]) -> Option<usize> {
    let t = token.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    if t.is_empty() {
        return None;
    }
    let names: Vec<String> = categories.iter().map(|c| c.to_lowercase()).collect();
    if let Some(i) = names.iter().position(|n| *n == t) {
        return Some(i);
    }
    if t.chars().count() >= 3 {
        if let Some(i) = names.iter().position(|n| n.starts_with(&t)) {
            return Some(i);
        }
    }
    names.iter().position(|n| t.starts_with(n.as_str()) && t[n.len()..].starts_with(|c: char| !c.is_alphanumeric()))
}

fn token_index(token: &str, categories: &[String]) -> Option<usize> {
    let n = categories.len();
    let bare = token.trim_matches(|c: char| c.is_whitespace() || c == '.' || c == ';');
    if let Some(c) = PAREN_LETTER.captures(bare) {
        if c.get(0).unwrap().start() == 0 {
            if let Some(i) = letter_index(&c[1].to_uppercase(), n) {
                return Some(i);
            }
        }
    }
    if !bare.is_empty() && bare.len() <= 2 && bare.chars().all(|c| c.is_ascii_alphabetic()) {
        // A lone letter: uppercase always names an option; a lowercase one
        // only counts because it is the whole list item.
        if let Some(i) = letter_index(&bare.to_uppercase(), n) {
            return Some(i);
        }
    }
    name_index(bare, categories)
}

/// Positions of every category name and `(X)` marker anywhere in the text.
fn scan_anywhere(raw: &str, categories: &[String]) -> Vec<usize> {
    let lower = raw.to_lowercase();
    let mut hits: Vec<(usize, usize)> = Vec::new();
    for (i, name) in categories.iter().enumerate() {
        if let Some(p) = lower.find(&name.to_lowercase()) {
            hits.push((p, i));
        }
    }
    for c in PAREN_LETTER.captures_iter(raw) {
        if let Some(i) = letter_index(&c[1].to_uppercase(), categories.len()) {
            hits.push((c.get(0).unwrap().start(), i));
        }
    }
    hits.sort();
    hits.into_iter().map(|(_, i)| i).collect()
}

fn dedup(indices: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut out = Vec::new();
    for i in indices {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Ordered category indices named by a reply; the first is the pseudo-label.
///
/// Items of the leading comma-separated list are matched as option letters
/// (`A`, `(A)`) or category names (case-insensitive, prefix-tolerant). When
/// the list yields nothing, names and `(X)` markers are collected from the
/// whole reply in order of appearance.
pub fn extract_ranked_labels(raw: &str, categories: &[String]) -> Result<Vec<usize>, LlmError> {
    let listed = dedup(split_list(answer_head(raw)).iter().filter_map(|t| token_index(t, categories)));
    let ranked = if listed.is_empty() { dedup(scan_anywhere(raw, categories)) } else { listed };
    if ranked.is_empty() {
        Err(failure(PromptKind::PseudoLabel, raw))
    } else {
        Ok(ranked)
    }
}

/// Explanation following the leading list of a ranking reply.
fn ranking_reason(raw: &str) -> String {
    let trimmed = raw.trim();
    let first = trimmed.lines().next().unwrap_or("");
    let after_head = match first.find(". ") {
        Some(p) => format!("{}{}", &first[p + 2..], &trimmed[first.len()..]),
        None => trimmed[first.len()..].to_string(),
    };
    after_head.trim().to_string()
}

/// A parsed model reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmJudgment {
    pub kind: PromptKind,
    /// Relatedness in `[0, 1]`; set only for similarity replies.
    pub ratio: Option<f64>,
    pub reason: String,
    /// Category indices from most to least related; set only for ranking replies.
    pub ranked_categories: Option<Vec<usize>>,
    pub raw: String,
}

impl LlmJudgment {
    /// Parse `raw` according to `kind`; `categories` is only consulted for rankings.
    pub fn parse(kind: PromptKind, raw: &str, categories: &[String]) -> Result<Self, LlmError> {
        match kind {
            PromptKind::Similarity => Ok(Self {
                kind,
                ratio: Some(extract_ratio(raw)?),
                reason: extract_reason(raw),
                ranked_categories: None,
                raw: raw.to_string(),
            }),
            PromptKind::PseudoLabel => Ok(Self {
                kind,
                ratio: None,
                reason: ranking_reason(raw),
                ranked_categories: Some(extract_ranked_labels(raw, categories)?),
                raw: raw.to_string(),
            }),
        }
    }

    /// First-ranked category.
    pub fn pseudo_label(&self) -> Option<usize> {
        self.ranked_categories.as_ref().and_then(|r| r.first().copied())
    }
}
