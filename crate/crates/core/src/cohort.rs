//! Demographic characteristics grouped into subgroups, plus the Reference
//! controls (beginner, average, expert).

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_COHORT: &str = include_str!("../data/default_cohort.json");

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cohort parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid cohort: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Article {
    A,
    An,
}

impl Article {
    pub fn as_str(self) -> &'static str {
        match self {
            Article::A => "a",
            Article::An => "an",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Characteristic {
    pub id: String,
    pub phrase: String,
    pub article: Article,
    /// Filled in from the enclosing subgroup on load.
    #[serde(skip)]
    pub subgroup_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgroup {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub is_reference: bool,
    pub characteristics: Vec<Characteristic>,
}

impl Subgroup {
    pub fn characteristic_ids(&self) -> impl Iterator<Item = &str> {
        self.characteristics.iter().map(|c| c.id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cohort {
    pub version: String,
    pub subgroups: Vec<Subgroup>,
}

impl Cohort {
    /// The bundled cohort: six demographic subgroups and a Reference group.
    pub fn bundled() -> Self {
        Self::from_json(DEFAULT_COHORT).expect("bundled cohort is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, CohortError> {
        let mut cohort: Cohort = serde_json::from_str(text)?;
        for sg in &mut cohort.subgroups {
            for c in &mut sg.characteristics {
                c.subgroup_id = sg.id.clone();
            }
        }
        cohort.check()?;
        Ok(cohort)
    }

    fn check(&self) -> Result<(), CohortError> {
        let invalid = |m: String| Err(CohortError::Invariant(m));
        let mut ids = HashSet::new();
        let mut subgroup_ids = HashSet::new();
        for sg in &self.subgroups {
            if !subgroup_ids.insert(sg.id.as_str()) {
                return invalid(format!("duplicate subgroup id '{}'", sg.id));
            }
            if sg.characteristics.len() < 2 {
                return invalid(format!(
                    "subgroup '{}' has {} member(s), at least 2 required",
                    sg.id,
                    sg.characteristics.len()
                ));
            }
            for c in &sg.characteristics {
                if c.phrase.trim().is_empty() {
                    return invalid(format!("characteristic '{}' has an empty phrase", c.id));
                }
                if !ids.insert(c.id.as_str()) {
                    return invalid(format!(
                        "characteristic '{}' appears in more than one place",
                        c.id
                    ));
                }
            }
        }
        let references = self.subgroups.iter().filter(|s| s.is_reference).count();
        if references > 1 {
            return invalid(format!("{references} reference subgroups, at most 1 allowed"));
        }
        Ok(())
    }

    pub fn characteristics(&self) -> impl Iterator<Item = &Characteristic> {
        self.subgroups.iter().flat_map(|s| s.characteristics.iter())
    }

    pub fn characteristic(&self, id: &str) -> Option<&Characteristic> {
        self.characteristics().find(|c| c.id == id)
    }

    pub fn subgroup(&self, id: &str) -> Option<&Subgroup> {
        self.subgroups.iter().find(|s| s.id == id)
    }

    pub fn demographic_subgroups(&self) -> impl Iterator<Item = &Subgroup> {
        self.subgroups.iter().filter(|s| !s.is_reference)
    }

    pub fn reference_subgroup(&self) -> Option<&Subgroup> {
        self.subgroups.iter().find(|s| s.is_reference)
    }
}

pub fn load_cohort(path: &Path) -> Result<Cohort, CohortError> {
    Cohort::from_json(&std::fs::read_to_string(path)?)
}

/// `a <phrase> student` or `an <phrase> student`.
pub fn render_candidate(c: &Characteristic) -> String {
    format!("{} {} student", c.article.as_str(), c.phrase)
}
