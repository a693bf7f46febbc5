use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::readability::{analyze, grade_report};

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct TextDocument {
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocumentStats {
    pub id: String,
    pub sentences: usize,
    pub words: usize,
    pub syllables: usize,
    pub letters: usize,
    pub complex_words: usize,
    pub fkgl: Option<f64>,
    pub fog: Option<f64>,
    pub coleman_liau: Option<f64>,
    pub tgl: Option<f64>,
    pub error: Option<String>,
}

pub fn document_stats(id: &str, text: &str) -> DocumentStats {
    let s = analyze(text);
    let grades = grade_report(&s);
    DocumentStats {
        id: id.to_string(),
        sentences: s.sentences,
        words: s.words,
        syllables: s.syllables,
        letters: s.letters,
        complex_words: s.complex_words,
        fkgl: grades.as_ref().ok().map(|g| g.fkgl),
        fog: grades.as_ref().ok().map(|g| g.fog),
        coleman_liau: grades.as_ref().ok().map(|g| g.coleman_liau),
        tgl: grades.as_ref().ok().map(|g| g.tgl),
        error: grades.err().map(|e| e.to_string()),
    }
}

/// Score a JSONL file of `{"id": ..., "text": ...}` objects into a CSV of
/// per-document counts and grades. Documents without an id are numbered
/// by line. Returns the number of documents written.
pub fn readability_csv(input: &Path, output: &Path) -> Result<usize, ReportError> {
    let reader = BufReader::new(std::fs::File::open(input)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: TextDocument = serde_json::from_str(&line)?;
        let id = doc.id.unwrap_or_else(|| (i + 1).to_string());
        rows.push(document_stats(&id, &doc.text));
    }
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(output)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(rows.len())
}
