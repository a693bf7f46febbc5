//! Leveled-explanation datasets: JSONL loading, validation, per-cell
//! subsampling for problem pools, and seeded level orderings.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of the generator behind every seeded draw in this crate.
pub const RNG_ID: &str = "chacha8-rand_chacha-0.9";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid dataset: {0}")]
    Invariant(String),
    #[error("cell ({kind}, level {level}) has {available} items, {requested} requested")]
    InsufficientCell {
        kind: String,
        level: u32,
        available: usize,
        requested: usize,
    },
    #[error("dataset kind must be math for per-cell sampling")]
    NotMath,
    #[error("{requested} distinct orderings requested but only {available} exist")]
    TooManyDistinct { requested: usize, available: u128 },
    #[error("level count must be at least 1 and orderings at least 1")]
    EmptyOrdering,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub level: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeveledSubject {
    pub subject_id: String,
    pub title: String,
    #[serde(rename = "topic", default)]
    pub topic_label: Option<String>,
    #[serde(rename = "levels")]
    pub explanations: Vec<Explanation>,
}

impl LeveledSubject {
    /// Explanation text at `level`, if present.
    pub fn text_at(&self, level: u32) -> Option<&str> {
        self.explanations
            .iter()
            .find(|e| e.level == level)
            .map(|e| e.text.as_str())
    }

    /// Key used to group subjects into math problem-type cells.
    pub fn type_key(&self) -> &str {
        self.topic_label.as_deref().unwrap_or(&self.title)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Text,
    Math,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub level_count: u32,
    pub subjects: Vec<LeveledSubject>,
    pub kind: DatasetKind,
}

impl Dataset {
    pub fn with_kind(mut self, kind: DatasetKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn explanation_count(&self) -> usize {
        self.subjects.iter().map(|s| s.explanations.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub subject_id: String,
    pub level: Option<u32>,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.level {
            Some(l) => write!(f, "{} level {}: {}", self.subject_id, l, self.reason),
            None => write!(f, "{}: {}", self.subject_id, self.reason),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub subjects_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every dataset invariant and report all violations. Never fails.
pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut violations = Vec::new();
    let push = |v: &mut Vec<Violation>, id: &str, level: Option<u32>, reason: String| {
        v.push(Violation {
            subject_id: id.to_string(),
            level,
            reason,
        })
    };

    if d.subjects.is_empty() {
        push(&mut violations, "<dataset>", None, "dataset has no subjects".into());
    }
    if d.level_count == 0 {
        push(&mut violations, "<dataset>", None, "level count is zero".into());
    }

    let mut seen_ids = HashSet::new();
    for s in &d.subjects {
        let id = s.subject_id.as_str();
        if id.trim().is_empty() {
            push(&mut violations, "<blank>", None, "subject_id is empty".into());
        }
        if !seen_ids.insert(id) {
            push(&mut violations, id, None, format!("duplicate subject_id '{id}'"));
        }
        if s.explanations.len() != d.level_count as usize {
            push(
                &mut violations,
                id,
                None,
                format!(
                    "has {} explanations, dataset expects {}",
                    s.explanations.len(),
                    d.level_count
                ),
            );
        }
        let mut seen_levels = HashSet::new();
        for e in &s.explanations {
            if e.level < 1 || e.level > d.level_count {
                push(
                    &mut violations,
                    id,
                    Some(e.level),
                    format!("level {} outside 1..={}", e.level, d.level_count),
                );
            } else if !seen_levels.insert(e.level) {
                push(
                    &mut violations,
                    id,
                    Some(e.level),
                    format!("duplicate level {}", e.level),
                );
            }
            if e.text.trim().is_empty() {
                push(&mut violations, id, Some(e.level), "explanation text is empty".into());
            }
        }
    }

    ValidationReport {
        subjects_checked: d.subjects.len(),
        violations,
    }
}

/// Parse a dataset without enforcing invariants. The level count is taken
/// from the first subject.
pub fn read_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset, CorpusError> {
    let DatasetFormat::Jsonl = format;
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_dataset_jsonl(&name, &text)
}

/// Parse JSONL dataset text (one subject per line).
pub fn parse_dataset_jsonl(name: &str, text: &str) -> Result<Dataset, CorpusError> {
    let mut subjects = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let subject: LeveledSubject =
            serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        subjects.push(subject);
    }
    let level_count = subjects
        .first()
        .map(|s| s.explanations.len() as u32)
        .unwrap_or(0);
    Ok(Dataset {
        name: name.to_string(),
        level_count,
        subjects,
        kind: DatasetKind::Text,
    })
}

pub const FIXTURE_NAME: &str = "leveled-fixture";

/// The bundled leveled fixture: 10 subjects, 5 levels each, simple to
/// expert prose.
pub fn bundled_fixture() -> Dataset {
    parse_dataset_jsonl(FIXTURE_NAME, include_str!("../data/leveled_fixture.jsonl"))
        .expect("bundled fixture parses")
}

/// Load and validate a dataset; subjects keep file order.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset, CorpusError> {
    let d = read_dataset(path, format)?;
    let report = validate_dataset(&d);
    if let Some(first) = report.violations.first() {
        let extra = report.violations.len() - 1;
        let msg = if extra > 0 {
            format!("{first} (and {extra} more)")
        } else {
            first.to_string()
        };
        return Err(CorpusError::Invariant(msg));
    }
    Ok(d)
}

/// Draw `per_cell` items from every (problem type, level) cell and regroup
/// them into leveled sets: set `i` of a type takes the `i`-th draw of each
/// level. Draws keep source order, so taking a whole cell is the identity.
pub fn sample_per_cell(d: &Dataset, per_cell: usize, seed: u64) -> Result<Dataset, CorpusError> {
    if d.kind != DatasetKind::Math {
        return Err(CorpusError::NotMath);
    }
    // type -> level -> texts, in source order
    let mut cells: BTreeMap<&str, BTreeMap<u32, Vec<&str>>> = BTreeMap::new();
    let mut type_order: Vec<&str> = Vec::new();
    for s in &d.subjects {
        let key = s.type_key();
        if !cells.contains_key(key) {
            type_order.push(key);
        }
        let by_level = cells.entry(key).or_default();
        for e in &s.explanations {
            by_level.entry(e.level).or_default().push(e.text.as_str());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subjects = Vec::new();
    for kind in type_order {
        let by_level = &cells[kind];
        let mut picks: Vec<Vec<&str>> = Vec::new();
        for level in 1..=d.level_count {
            let pool = by_level.get(&level).map(Vec::as_slice).unwrap_or(&[]);
            if pool.len() < per_cell {
                return Err(CorpusError::InsufficientCell {
                    kind: kind.to_string(),
                    level,
                    available: pool.len(),
                    requested: per_cell,
                });
            }
            let mut chosen = index::sample(&mut rng, pool.len(), per_cell).into_vec();
            chosen.sort_unstable();
            picks.push(chosen.into_iter().map(|i| pool[i]).collect());
        }
        for i in 0..per_cell {
            subjects.push(LeveledSubject {
                subject_id: format!("{kind}/{i:03}"),
                title: kind.to_string(),
                topic_label: Some(kind.to_string()),
                explanations: picks
                    .iter()
                    .enumerate()
                    .map(|(l, texts)| Explanation {
                        level: l as u32 + 1,
                        text: texts[i].to_string(),
                    })
                    .collect(),
            });
        }
    }

    Ok(Dataset {
        name: format!("{}-{}", d.name, per_cell),
        level_count: d.level_count,
        subjects,
        kind: DatasetKind::Math,
    })
}

fn factorial(n: u32) -> Option<u128> {
    (1..=n as u128).try_fold(1u128, |acc, k| acc.checked_mul(k))
}

/// `n_orders` uniformly random permutations of `1..=level_count`. With
/// `distinct`, permutations are pairwise different.
pub fn level_orderings(
    level_count: u32,
    n_orders: usize,
    seed: u64,
    distinct: bool,
) -> Result<Vec<Vec<u32>>, CorpusError> {
    if level_count == 0 || n_orders == 0 {
        return Err(CorpusError::EmptyOrdering);
    }
    if distinct {
        if let Some(total) = factorial(level_count) {
            if n_orders as u128 > total {
                return Err(CorpusError::TooManyDistinct {
                    requested: n_orders,
                    available: total,
                });
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<u32>> = Vec::with_capacity(n_orders);
    let mut seen = HashSet::new();
    while out.len() < n_orders {
        let mut perm: Vec<u32> = (1..=level_count).collect();
        perm.shuffle(&mut rng);
        if distinct && !seen.insert(perm.clone()) {
            continue;
        }
        out.push(perm);
    }
    Ok(out)
}
