//! System/user prompt construction for the ranking and generation tasks.
//!
//! Ranking choices are rendered one per paragraph as `<LETTER>. <text>`,
//! in display order, after the user template.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::LeveledSubject;

pub const CHOICE_BLOCK_LAYOUT: &str = "letter-dot-space-text, blank-line separated";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("ordering {0:?} is not a permutation of 1..=L")]
    BadOrdering(Vec<u32>),
    #[error("{0} levels exceed the A..Z letter range")]
    TooManyLevels(usize),
    #[error("subject '{subject}' has no explanation at level {level}")]
    MissingLevel { subject: String, level: u32 },
    #[error("topic must be non-empty")]
    EmptyTopic,
    #[error("template {name}: {reason}")]
    Template { name: String, reason: String },
    #[error("I/O error reading templates: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "teacher" => Ok(Role::Teacher),
            "student" => Ok(Role::Student),
            other => Err(format!("unknown role '{other}' (teacher|student)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
}

/// How the explanations were laid out for one ranking prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingPresentation {
    /// `permutation[i]` is the true level shown at display position `i`.
    pub permutation: Vec<u32>,
    pub letters: Vec<char>,
    pub choice_block: String,
}

impl RankingPresentation {
    pub fn level_count(&self) -> usize {
        self.permutation.len()
    }

    /// True level shown under `letter` (case-insensitive).
    pub fn to_level(&self, letter: char) -> Option<u32> {
        let upper = letter.to_ascii_uppercase();
        self.letters
            .iter()
            .position(|&l| l == upper)
            .map(|i| self.permutation[i])
    }

    pub fn letter_for(&self, level: u32) -> Option<char> {
        self.permutation
            .iter()
            .position(|&l| l == level)
            .map(|i| self.letters[i])
    }
}

/// The six prompt templates. Placeholders are `{candidate}` and `{topic}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub ranking_teacher_system: String,
    pub ranking_teacher_user: String,
    pub ranking_student_system: String,
    pub ranking_student_user: String,
    pub generation_system: String,
    pub generation_user: String,
}

const TEMPLATE_FILES: [&str; 6] = [
    "ranking_teacher_system.txt",
    "ranking_teacher_user.txt",
    "ranking_student_system.txt",
    "ranking_student_user.txt",
    "generation_system.txt",
    "generation_user.txt",
];

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            ranking_teacher_system: include_str!("../data/templates/ranking_teacher_system.txt").into(),
            ranking_teacher_user: include_str!("../data/templates/ranking_teacher_user.txt").into(),
            ranking_student_system: include_str!("../data/templates/ranking_student_system.txt").into(),
            ranking_student_user: include_str!("../data/templates/ranking_student_user.txt").into(),
            generation_system: include_str!("../data/templates/generation_system.txt").into(),
            generation_user: include_str!("../data/templates/generation_user.txt").into(),
        }
    }
}

impl TemplateSet {
    fn slots_mut(&mut self) -> [&mut String; 6] {
        [
            &mut self.ranking_teacher_system,
            &mut self.ranking_teacher_user,
            &mut self.ranking_student_system,
            &mut self.ranking_student_user,
            &mut self.generation_system,
            &mut self.generation_user,
        ]
    }

    fn slots(&self) -> [&str; 6] {
        [
            &self.ranking_teacher_system,
            &self.ranking_teacher_user,
            &self.ranking_student_system,
            &self.ranking_student_user,
            &self.generation_system,
            &self.generation_user,
        ]
    }

    /// Start from the defaults and replace every template file found in `dir`.
    pub fn load_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::default();
        for (name, slot) in TEMPLATE_FILES.iter().zip(set.slots_mut()) {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        set.check()?;
        Ok(set)
    }

    pub fn check(&self) -> Result<(), PromptError> {
        for (name, text) in TEMPLATE_FILES.iter().zip(self.slots()) {
            let bad = |reason: &str| PromptError::Template {
                name: name.to_string(),
                reason: reason.into(),
            };
            if text.trim().is_empty() {
                return Err(bad("empty"));
            }
            if name.ends_with("_user.txt") && text.matches("{candidate}").count() != 1 {
                return Err(bad("user templates need exactly one {candidate}"));
            }
            if *name == "generation_user.txt" && !text.contains("{topic}") {
                return Err(bad("missing {topic}"));
            }
        }
        Ok(())
    }

    /// SHA-256 over all templates in a fixed order, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, text) in TEMPLATE_FILES.iter().zip(self.slots()) {
            h.update(name.as_bytes());
            h.update([0u8]);
            h.update(text.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn build_ranking_prompt(
        &self,
        role: Role,
        candidate: &str,
        subject: &LeveledSubject,
        ordering: &[u32],
    ) -> Result<(PromptPair, RankingPresentation), PromptError> {
        let n = ordering.len();
        if n > 26 {
            return Err(PromptError::TooManyLevels(n));
        }
        let mut seen = vec![false; n];
        for &l in ordering {
            let idx = (l as usize).wrapping_sub(1);
            if idx >= n || seen[idx] {
                return Err(PromptError::BadOrdering(ordering.to_vec()));
            }
            seen[idx] = true;
        }
        if n == 0 {
            return Err(PromptError::BadOrdering(Vec::new()));
        }

        let letters: Vec<char> = (0..n as u8).map(|i| (b'A' + i) as char).collect();
        let mut blocks = Vec::with_capacity(n);
        for (letter, &level) in letters.iter().zip(ordering) {
            let text = subject.text_at(level).ok_or_else(|| PromptError::MissingLevel {
                subject: subject.subject_id.clone(),
                level,
            })?;
            blocks.push(format!("{letter}. {}", text.trim()));
        }
        let choice_block = blocks.join("\n\n");

        let (system, user) = match role {
            Role::Teacher => (&self.ranking_teacher_system, &self.ranking_teacher_user),
            Role::Student => (&self.ranking_student_system, &self.ranking_student_user),
        };
        let pair = PromptPair {
            system: system.clone(),
            user: format!("{}\n\n{}", user.replace("{candidate}", candidate), choice_block),
        };
        let presentation = RankingPresentation {
            permutation: ordering.to_vec(),
            letters,
            choice_block,
        };
        Ok((pair, presentation))
    }

    pub fn build_generation_prompt(
        &self,
        candidate: &str,
        topic: &str,
    ) -> Result<PromptPair, PromptError> {
        if topic.trim().is_empty() {
            return Err(PromptError::EmptyTopic);
        }
        Ok(PromptPair {
            system: self.generation_system.clone(),
            user: self
                .generation_user
                .replace("{candidate}", candidate)
                .replace("{topic}", topic),
        })
    }
}
