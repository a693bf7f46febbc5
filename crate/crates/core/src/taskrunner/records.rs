//! Raw results files: one JSON object per line, tagged by `record`.
//! The first line is the run metadata, then one line per trial, then a
//! per-characteristic refusal summary (recomputed on every write).

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ChoiceOutcome, GenerationRecord, GenerationResults, OutcomeKind, RankingResults,
    RunMetadata, TaskError, TaskKind, TrialRecord,
};
use crate::modelgate::RequestHash;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefusalStats {
    pub trials: usize,
    pub full_refusals: usize,
    pub partial_refusals: usize,
    pub unparseable: usize,
    pub full_refusal_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ResultLine {
    Meta(RunMetadata),
    Trial(TrialRecord),
    Generation(GenerationRecord),
    RefusalSummary {
        per_characteristic: BTreeMap<String, RefusalStats>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunResults {
    Ranking(RankingResults),
    Generation(GenerationResults),
}

impl RunResults {
    pub fn metadata(&self) -> &RunMetadata {
        match self {
            RunResults::Ranking(r) => &r.metadata,
            RunResults::Generation(g) => &g.metadata,
        }
    }
}

/// Per-characteristic outcome counts for a ranking run.
pub fn refusal_stats(results: &RankingResults) -> BTreeMap<String, RefusalStats> {
    let mut out: BTreeMap<String, RefusalStats> = BTreeMap::new();
    for r in &results.records {
        let s = out.entry(r.spec.characteristic_id.clone()).or_default();
        s.trials += 1;
        match r.outcome.kind {
            OutcomeKind::FullRefusal => s.full_refusals += 1,
            OutcomeKind::Unparseable => s.unparseable += 1,
            OutcomeKind::Chosen if r.outcome.partial_refusal => s.partial_refusals += 1,
            OutcomeKind::Chosen => {}
        }
    }
    for s in out.values_mut() {
        s.full_refusal_rate = s.full_refusals as f64 / s.trials.max(1) as f64;
    }
    out
}

fn write_line<W: Write>(w: &mut W, line: &ResultLine) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, line)?;
    w.write_all(b"\n")
}

/// Write a results file. The output is a pure function of `results`.
pub fn write_results(path: &Path, results: &RunResults) -> Result<(), TaskError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_line(&mut w, &ResultLine::Meta(results.metadata().clone()))?;
    match results {
        RunResults::Ranking(r) => {
            for rec in &r.records {
                write_line(&mut w, &ResultLine::Trial(rec.clone()))?;
            }
            write_line(
                &mut w,
                &ResultLine::RefusalSummary {
                    per_characteristic: refusal_stats(r),
                },
            )?;
        }
        RunResults::Generation(g) => {
            for rec in &g.records {
                write_line(&mut w, &ResultLine::Generation(rec.clone()))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<RunResults, TaskError> {
    let reader = BufReader::new(File::open(path)?);
    let mut meta: Option<RunMetadata> = None;
    let mut trials = Vec::new();
    let mut generations = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ResultLine = serde_json::from_str(&line).map_err(|e| TaskError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        match parsed {
            ResultLine::Meta(m) if meta.is_none() => meta = Some(m),
            ResultLine::Meta(_) => {
                return Err(TaskError::Format(format!("second metadata line at {}", i + 1)))
            }
            ResultLine::Trial(t) => trials.push(t),
            ResultLine::Generation(g) => generations.push(g),
            ResultLine::RefusalSummary { .. } => {}
        }
    }
    let metadata = meta.ok_or_else(|| TaskError::Format("missing metadata line".into()))?;
    match metadata.task {
        TaskKind::Ranking if generations.is_empty() => Ok(RunResults::Ranking(RankingResults {
            metadata,
            records: trials,
        })),
        TaskKind::Generation if trials.is_empty() => {
            Ok(RunResults::Generation(GenerationResults {
                metadata,
                records: generations,
            }))
        }
        _ => Err(TaskError::Format("records do not match the run's task".into())),
    }
}

/// A human verdict for one unparseable trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjudication {
    pub request_hash: RequestHash,
    /// A level number, or the string `"full_refusal"`.
    pub level: serde_json::Value,
    #[serde(default)]
    pub partial_refusal: bool,
}

/// Apply an adjudication file (JSONL of [`Adjudication`]) to unparseable
/// trials. Other records are left as they are.
pub fn adjudicate(results: &RankingResults, adjudication_file: &Path) -> Result<RankingResults, TaskError> {
    let reader = BufReader::new(File::open(adjudication_file)?);
    let mut verdicts: HashMap<RequestHash, ChoiceOutcome> = HashMap::new();
    let known: HashMap<RequestHash, &TrialRecord> = results
        .records
        .iter()
        .map(|r| (r.spec.request_hash, r))
        .collect();
    let max = results.metadata.level_count;

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| TaskError::Parse { line: i + 1, message };
        let a: Adjudication = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let Some(rec) = known.get(&a.request_hash) else {
            return Err(TaskError::UnknownHash(a.request_hash.to_hex()));
        };
        let raw = rec.outcome.raw_text.as_str();
        let outcome = match &a.level {
            serde_json::Value::String(s) if s == "full_refusal" => ChoiceOutcome::full_refusal(raw),
            serde_json::Value::Number(n) => {
                let level = n
                    .as_u64()
                    .ok_or_else(|| parse_err(format!("level {n} is not a positive integer")))?;
                if level < 1 || level > max as u64 {
                    return Err(TaskError::LevelOutOfRange {
                        hash: a.request_hash.to_hex(),
                        level: level.min(u32::MAX as u64) as u32,
                        max,
                    });
                }
                ChoiceOutcome::chosen(level as u32, a.partial_refusal, raw)
            }
            other => return Err(parse_err(format!("level must be an integer or \"full_refusal\", got {other}"))),
        };
        verdicts.insert(a.request_hash, outcome);
    }

    let records = results
        .records
        .iter()
        .map(|r| match verdicts.get(&r.spec.request_hash) {
            Some(v) if r.outcome.kind == OutcomeKind::Unparseable => TrialRecord {
                outcome: v.clone(),
                human_adjudicated: true,
                ..r.clone()
            },
            _ => r.clone(),
        })
        .collect();
    Ok(RankingResults {
        metadata: results.metadata.clone(),
        records,
    })
}

/// Refusal markers from a file: one per line, or a JSON array of strings.
pub fn load_refusal_markers(path: &Path) -> Result<Vec<String>, TaskError> {
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| TaskError::Parse {
            line: 1,
            message: e.to_string(),
        });
    }
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}
