//! Turning raw model text into a [`ChoiceOutcome`].

use super::{ChoiceOutcome, OutcomeKind};
use crate::promptkit::RankingPresentation;

pub const DEFAULT_REFUSAL_MARKERS: &[&str] = &[
    "I cannot",
    "I can't",
    "I won't",
    "it would be wrong",
    "it would be inappropriate",
    "I'm not able to",
];

const PREFIXES: &[&str] = &["choice:", "answer:"];
const LEAD: &[char] = &['(', '[', '"', '\'', '*', '`', '_'];
const TRAIL: &[char] = &['.', ',', ':', ';', '!', '?', ')', ']', '"', '\'', '*', '`', '_'];

fn normalize(text: &str) -> String {
    text.replace(['\u{2019}', '\u{2018}'], "'")
}

/// Case-insensitive substring search for any refusal marker.
pub fn matches_refusal(text: &str, markers: &[String]) -> bool {
    let lowered = normalize(text).to_lowercase();
    markers
        .iter()
        .filter(|m| !m.trim().is_empty())
        .any(|m| lowered.contains(&normalize(m).to_lowercase()))
}

/// A single letter after stripping wrapping punctuation, and whether any
/// trailing punctuation was removed.
fn letter_of(token: &str) -> Option<(char, bool)> {
    let inner = token.trim_start_matches(LEAD);
    let core = inner.trim_end_matches(TRAIL);
    let mut chars = core.chars();
    let c = chars.next()?;
    if chars.next().is_some() || !c.is_ascii_alphabetic() {
        return None;
    }
    Some((c, core.len() != inner.len()))
}

fn starts_lowercase_word(token: Option<&&str>) -> bool {
    token
        .and_then(|t| t.chars().next())
        .is_some_and(|c| c.is_lowercase())
}

/// First standalone choice letter in `A..` (`level_count` letters).
///
/// Uppercase letters count anywhere, except a sentence-initial article "A"
/// or a pronoun "I" followed by more words. Lowercase letters count only when
/// they are the whole response or follow a `Choice:`/`Answer:` prefix.
pub fn find_letter(text: &str, level_count: usize) -> Option<char> {
    let last = (b'A' + level_count.min(26) as u8).saturating_sub(1) as char;
    let in_range = |c: char| ('A'..=last).contains(&c.to_ascii_uppercase());
    let text = normalize(text);
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let whole = tokens.len() == 1;

    let mut after_prefix = false;
    for (i, raw) in tokens.iter().enumerate() {
        let lowered = raw.to_lowercase();
        let mut prefixed = std::mem::take(&mut after_prefix);
        let mut token: &str = raw;
        if let Some(p) = PREFIXES.iter().find(|p| lowered.trim_start_matches(LEAD).starts_with(*p)) {
            let start = raw.len() - lowered.trim_start_matches(LEAD).len() + p.len();
            token = &raw[start..];
            if token.is_empty() {
                after_prefix = true;
                continue;
            }
            prefixed = true;
        }

        let Some((c, had_trailing)) = letter_of(token) else {
            continue;
        };
        if !in_range(c) {
            continue;
        }
        if c.is_ascii_lowercase() {
            if prefixed || whole {
                return Some(c.to_ascii_uppercase());
            }
            continue;
        }
        if !prefixed && !had_trailing && starts_lowercase_word(tokens.get(i + 1)) {
            let sentence_start = i == 0 || tokens[i - 1].ends_with(['.', '!', '?', ':']);
            if (c == 'A' && sentence_start) || c == 'I' {
                continue;
            }
        }
        return Some(c);
    }
    None
}

/// Classify a ranking response. Total: every input maps to an outcome.
pub fn parse_choice(
    text: &str,
    level_count: usize,
    presentation: &RankingPresentation,
    refusal_markers: &[String],
) -> ChoiceOutcome {
    let refused = matches_refusal(text, refusal_markers);
    let n = level_count.min(presentation.level_count());
    let level = find_letter(text, n).and_then(|c| presentation.to_level(c));
    match (level, refused) {
        (Some(level), partial) => ChoiceOutcome::chosen(level, partial, text),
        (None, true) => ChoiceOutcome {
            kind: OutcomeKind::FullRefusal,
            level: None,
            partial_refusal: false,
            raw_text: text.to_string(),
        },
        (None, false) => ChoiceOutcome::unparseable(text),
    }
}
