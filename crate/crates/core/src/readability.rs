//! English readability scoring: Flesch-Kincaid Grade Level, Gunning Fog,
//! Coleman-Liau, and their mean (the total grade level, TGL).
//!
//! Text statistics come from a small, frozen tokenizer. Sentence breaks are
//! runs of `.`, `!` or `?` that end a whitespace-delimited token, except after
//! a handful of common abbreviations. Words are maximal runs of alphanumerics,
//! apostrophes and hyphens containing at least one alphanumeric. Letters count
//! ASCII `A-Z`/`a-z` only. Syllables use [`count_syllables`].
//!
//! The syllable counter is a heuristic and is deliberately frozen: changing it
//! changes every grade level computed by this crate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound (exclusive) of the TGL range.
pub const TGL_MAX: f64 = 25.0;

const ABBREVIATIONS: &[&str] = &["mr.", "mrs.", "dr.", "e.g.", "i.e.", "etc."];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReadabilityError {
    #[error("degenerate text: {words} words, {sentences} sentences")]
    DegenerateText { words: usize, sentences: usize },
}

/// Raw counts feeding the three grade-level formulas.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextStats {
    pub sentences: usize,
    pub words: usize,
    pub syllables: usize,
    pub letters: usize,
    /// Words with three or more syllables.
    pub complex_words: usize,
}

/// A US school grade level.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradeLevel(pub f64);

impl GradeLevel {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// All three indices plus their clamped mean, computed on one [`TextStats`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeReport {
    pub fkgl: f64,
    pub fog: f64,
    pub coleman_liau: f64,
    pub tgl: f64,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '\u{2019}' || c == '-'
}

fn words_of(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !is_word_char(c))
        .filter(|w| w.chars().any(char::is_alphanumeric))
}

fn ends_sentence(token: &str) -> bool {
    let trimmed = token.trim_end_matches(['"', '\'', ')', ']', '\u{201d}', '\u{2019}']);
    if !trimmed.ends_with(['.', '!', '?']) {
        return false;
    }
    // Only a trailing '.' can come from an abbreviation.
    if trimmed.ends_with(['!', '?']) {
        return true;
    }
    let lowered = trimmed
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    !ABBREVIATIONS.contains(&lowered.as_str())
}

/// Count sentences, words, syllables, letters and complex words.
pub fn analyze(text: &str) -> TextStats {
    let mut stats = TextStats {
        letters: text.chars().filter(char::is_ascii_alphabetic).count(),
        ..TextStats::default()
    };

    let mut words_since_break = 0usize;
    for token in text.split_whitespace() {
        for word in words_of(token) {
            let syl = count_syllables(word);
            stats.words += 1;
            stats.syllables += syl;
            if syl >= 3 {
                stats.complex_words += 1;
            }
            words_since_break += 1;
        }
        if ends_sentence(token) && words_since_break > 0 {
            stats.sentences += 1;
            words_since_break = 0;
        }
    }
    if words_since_break > 0 {
        stats.sentences += 1;
    }
    stats
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Heuristic syllable count: vowel groups (`aeiouy`), minus a terminal silent
/// `e` unless the word ends in consonant + `le`. Never less than one.
pub fn count_syllables(word: &str) -> usize {
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();

    let mut groups = 0usize;
    let mut in_group = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !in_group {
            groups += 1;
        }
        in_group = v;
    }

    let n = letters.len();
    if n >= 2 && letters[n - 1] == 'e' && !is_vowel(letters[n - 2]) {
        let consonant_le = n >= 3 && letters[n - 2] == 'l' && !is_vowel(letters[n - 3]);
        if !consonant_le {
            groups = groups.saturating_sub(1);
        }
    }
    groups.max(1)
}

fn require(stats: &TextStats, need_sentences: bool) -> Result<(), ReadabilityError> {
    if stats.words == 0 || (need_sentences && stats.sentences == 0) {
        return Err(ReadabilityError::DegenerateText {
            words: stats.words,
            sentences: stats.sentences,
        });
    }
    Ok(())
}

/// Flesch-Kincaid Grade Level (unclamped).
pub fn fkgl(stats: &TextStats) -> Result<GradeLevel, ReadabilityError> {
    require(stats, true)?;
    let w = stats.words as f64;
    let s = stats.sentences as f64;
    let syl = stats.syllables as f64;
    Ok(GradeLevel(0.39 * (w / s) + 11.8 * (syl / w) - 15.59))
}

/// Gunning Fog index; complex words are any with three or more syllables,
/// with no proper-noun or suffix exclusions.
pub fn fog(stats: &TextStats) -> Result<GradeLevel, ReadabilityError> {
    require(stats, true)?;
    let w = stats.words as f64;
    let s = stats.sentences as f64;
    let c = stats.complex_words as f64;
    Ok(GradeLevel(0.4 * ((w / s) + 100.0 * (c / w))))
}

/// Coleman-Liau index (unclamped).
pub fn coleman_liau(stats: &TextStats) -> Result<GradeLevel, ReadabilityError> {
    require(stats, false)?;
    let w = stats.words as f64;
    let l = stats.letters as f64;
    let s = stats.sentences as f64;
    Ok(GradeLevel(
        0.0588 * (100.0 * l / w) - 0.296 * (100.0 * s / w) - 15.8,
    ))
}

/// Clamp into `[0, 25)`; values at or above 25 map to the largest double below 25.
pub fn clamp_tgl(value: f64) -> f64 {
    if value.is_nan() || value < 0.0 {
        0.0
    } else if value >= TGL_MAX {
        f64::from_bits(TGL_MAX.to_bits() - 1)
    } else {
        value
    }
}

/// Compute all three indices and the clamped mean from precomputed stats.
pub fn grade_report(stats: &TextStats) -> Result<GradeReport, ReadabilityError> {
    let fk = fkgl(stats)?.0;
    let fg = fog(stats)?.0;
    let cl = coleman_liau(stats)?.0;
    Ok(GradeReport {
        fkgl: fk,
        fog: fg,
        coleman_liau: cl,
        tgl: clamp_tgl((fk + fg + cl) / 3.0),
    })
}

/// Total grade level of a text.
pub fn tgl(text: &str) -> Result<GradeLevel, ReadabilityError> {
    grade_report(&analyze(text)).map(|r| GradeLevel(r.tgl))
}
