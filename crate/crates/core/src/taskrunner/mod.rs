//! Ranking and generation protocols over (dataset × cohort × model × role).
//!
//! Ranking trials are enumerated subject-major, then ordering, then
//! characteristic. Every trial is independent: failures are recorded on the
//! trial (as `unparseable` with the error string) and never abort the run.

mod parse;
mod pool;
mod records;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cohort::{render_candidate, Cohort};
use crate::corpus::{level_orderings, CorpusError, Dataset, RNG_ID};
use crate::modelgate::{GateError, Gateway, ModelResponse, RequestHash, TrialHint};
use crate::promptkit::{PromptError, PromptPair, Role, TemplateSet, CHOICE_BLOCK_LAYOUT};
use crate::readability::{analyze, grade_report, GradeReport};
use crate::seeds::derive_seed;

pub use parse::{find_letter, matches_refusal, parse_choice, DEFAULT_REFUSAL_MARKERS};
pub use pool::bounded_map;
pub use records::{
    adjudicate, load_refusal_markers, read_results, refusal_stats, write_results, Adjudication,
    RefusalStats, ResultLine, RunResults,
};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("adjudication names unknown request hash {0}")]
    UnknownHash(String),
    #[error("adjudicated level {level} outside 1..={max} for {hash}")]
    LevelOutOfRange { hash: String, level: u32, max: u32 },
    #[error("topic list is empty")]
    EmptyTopics,
    #[error("invalid results file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Ranking,
    Generation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Chosen,
    FullRefusal,
    Unparseable,
}

/// Parsed result of one ranking response. `level` is present iff chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceOutcome {
    pub kind: OutcomeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
    #[serde(default)]
    pub partial_refusal: bool,
    pub raw_text: String,
}

impl ChoiceOutcome {
    pub fn chosen(level: u32, partial_refusal: bool, raw: &str) -> Self {
        Self {
            kind: OutcomeKind::Chosen,
            level: Some(level),
            partial_refusal,
            raw_text: raw.to_string(),
        }
    }

    pub fn unparseable(raw: &str) -> Self {
        Self {
            kind: OutcomeKind::Unparseable,
            level: None,
            partial_refusal: false,
            raw_text: raw.to_string(),
        }
    }

    pub fn full_refusal(raw: &str) -> Self {
        Self {
            kind: OutcomeKind::FullRefusal,
            level: None,
            partial_refusal: false,
            raw_text: raw.to_string(),
        }
    }
}

/// Everything that determines one model call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub dataset: String,
    pub subject_id: String,
    pub characteristic_id: String,
    pub role: Role,
    pub ordering_index: u32,
    pub permutation: Vec<u32>,
    pub request_hash: RequestHash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    #[serde(flatten)]
    pub spec: TrialSpec,
    #[serde(flatten)]
    pub outcome: ChoiceOutcome,
    pub raw_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub human_adjudicated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub topic: String,
    pub characteristic_id: String,
    pub request_hash: RequestHash,
    pub text: String,
    /// `None` when the text has no words or no sentences, or the call failed.
    pub grade: Option<GradeReport>,
    pub non_english_flag: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub task: TaskKind,
    pub model_id: String,
    pub endpoint: String,
    /// Dataset name for ranking; task label for generation.
    pub dataset: String,
    pub role: Role,
    pub seed: u64,
    pub rng: String,
    pub cohort_version: String,
    pub templates_digest: String,
    pub choice_layout: String,
    pub level_count: u32,
    pub n_orderings: usize,
    pub distinct_orderings: bool,
    pub refusal_markers: Vec<String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResults {
    pub metadata: RunMetadata,
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResults {
    pub metadata: RunMetadata,
    pub records: Vec<GenerationRecord>,
}

/// Counters from one run; not persisted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    pub trials: usize,
    pub cache_hits: usize,
    pub reused: usize,
    pub failures: usize,
    /// Failures that came from the endpoint rather than from the cache.
    pub endpoint_failures: usize,
}

#[derive(Debug, Clone)]
pub struct RankingOptions {
    pub role: Role,
    pub n_orderings: usize,
    pub distinct_orderings: bool,
    pub seed: u64,
    pub concurrency: usize,
    pub refusal_markers: Vec<String>,
}

impl Default for RankingOptions {
    fn default() -> Self {
        Self {
            role: Role::Teacher,
            n_orderings: 1,
            distinct_orderings: false,
            seed: 0,
            concurrency: 4,
            refusal_markers: DEFAULT_REFUSAL_MARKERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn is_endpoint_failure(e: &GateError) -> bool {
    matches!(
        e,
        GateError::Network(_)
            | GateError::Auth(_)
            | GateError::Endpoint { .. }
            | GateError::Protocol(_)
            | GateError::OfflineMiss(_)
    )
}

fn tally(stats: &mut RunStats, result: &Result<ModelResponse, GateError>) {
    match result {
        Ok(r) if r.from_cache => stats.cache_hits += 1,
        Ok(_) => {}
        Err(e) => {
            stats.failures += 1;
            if is_endpoint_failure(e) {
                stats.endpoint_failures += 1;
            }
        }
    }
}

struct RankingJob {
    spec: TrialSpec,
    prompt: PromptPair,
    hint: TrialHint,
}

/// Run the ranking protocol. With `previous` results, trials whose request
/// hash already has a record there and is present in the cache are reused
/// verbatim (keeping any human adjudication).
pub fn run_ranking(
    dataset: &Dataset,
    cohort: &Cohort,
    gateway: &Gateway,
    templates: &TemplateSet,
    opts: &RankingOptions,
    previous: Option<&RankingResults>,
) -> Result<(RankingResults, RunStats), TaskError> {
    let l = dataset.level_count as usize;
    let mut jobs = Vec::new();
    for (si, subject) in dataset.subjects.iter().enumerate() {
        let orderings = level_orderings(
            dataset.level_count,
            opts.n_orderings,
            derive_seed(opts.seed, si as u64),
            opts.distinct_orderings,
        )?;
        for (oi, ordering) in orderings.iter().enumerate() {
            for ch in cohort.characteristics() {
                let candidate = render_candidate(ch);
                let (prompt, presentation) =
                    templates.build_ranking_prompt(opts.role, &candidate, subject, ordering)?;
                jobs.push(RankingJob {
                    spec: TrialSpec {
                        dataset: dataset.name.clone(),
                        subject_id: subject.subject_id.clone(),
                        characteristic_id: ch.id.clone(),
                        role: opts.role,
                        ordering_index: oi as u32,
                        permutation: ordering.clone(),
                        request_hash: gateway.request_hash(&prompt),
                    },
                    prompt,
                    hint: TrialHint {
                        candidate,
                        presentation: Some(presentation),
                    },
                });
            }
        }
    }

    let reusable: HashMap<RequestHash, &TrialRecord> = previous
        .map(|p| {
            p.records
                .iter()
                .filter(|r| r.error.is_none())
                .filter(|r| gateway.cache().is_some_and(|c| c.contains(&r.spec.request_hash)))
                .map(|r| (r.spec.request_hash, r))
                .collect()
        })
        .unwrap_or_default();

    enum Done {
        Reused(TrialRecord),
        Called(Result<ModelResponse, GateError>),
    }

    let results = bounded_map(&jobs, opts.concurrency, |job| {
        match reusable.get(&job.spec.request_hash) {
            Some(prev) => Done::Reused(TrialRecord {
                spec: job.spec.clone(),
                ..(*prev).clone()
            }),
            None => Done::Called(gateway.complete(&job.prompt, &job.hint)),
        }
    });

    let mut stats = RunStats::default();
    let mut records = Vec::with_capacity(jobs.len());
    for (job, done) in jobs.into_iter().zip(results) {
        stats.trials += 1;
        let record = match done {
            Done::Reused(r) => {
                stats.reused += 1;
                r
            }
            Done::Called(result) => {
                tally(&mut stats, &result);
                match result {
                    Ok(resp) => {
                        let pres = job.hint.presentation.as_ref().expect("ranking hint");
                        TrialRecord {
                            outcome: parse_choice(&resp.text, l, pres, &opts.refusal_markers),
                            raw_digest: text_digest(&resp.text),
                            spec: job.spec,
                            error: None,
                            human_adjudicated: false,
                        }
                    }
                    Err(e) => TrialRecord {
                        outcome: ChoiceOutcome::unparseable(""),
                        raw_digest: text_digest(""),
                        spec: job.spec,
                        error: Some(e.to_string()),
                        human_adjudicated: false,
                    },
                }
            }
        };
        records.push(record);
    }

    let cfg = gateway.config();
    let metadata = RunMetadata {
        task: TaskKind::Ranking,
        model_id: cfg.model_id.clone(),
        endpoint: cfg.endpoint.clone(),
        dataset: dataset.name.clone(),
        role: opts.role,
        seed: opts.seed,
        rng: RNG_ID.into(),
        cohort_version: cohort.version.clone(),
        templates_digest: templates.digest(),
        choice_layout: CHOICE_BLOCK_LAYOUT.into(),
        level_count: dataset.level_count,
        n_orderings: opts.n_orderings,
        distinct_orderings: opts.distinct_orderings,
        refusal_markers: opts.refusal_markers.clone(),
        temperature: cfg.temperature,
        max_output_tokens: cfg.max_output_tokens,
    };
    Ok((RankingResults { metadata, records }, stats))
}

const NON_ENGLISH_MIN_WORDS: usize = 20;
const NON_ENGLISH_STOPWORD_FRACTION: f64 = 0.05;

fn stopwords() -> &'static std::collections::HashSet<&'static str> {
    static SET: std::sync::OnceLock<std::collections::HashSet<&'static str>> =
        std::sync::OnceLock::new();
    SET.get_or_init(|| include_str!("../../data/stopwords_en.txt").lines().collect())
}

/// True when a text of at least 20 words has under 5% English stopwords.
pub fn looks_non_english(text: &str) -> bool {
    let words: Vec<String> = text
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    if words.len() < NON_ENGLISH_MIN_WORDS {
        return false;
    }
    let hits = words.iter().filter(|w| stopwords().contains(w.as_str())).count();
    (hits as f64 / words.len() as f64) < NON_ENGLISH_STOPWORD_FRACTION
}

#[derive(Debug, Clone)]
pub struct GenerationOptions {
    /// Label recorded as the run's dataset/task name.
    pub task_name: String,
    pub concurrency: usize,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            task_name: "generative".into(),
            concurrency: 4,
        }
    }
}

/// Run the generation protocol: one record per (topic, characteristic),
/// topic-major, each scored with the readability module.
pub fn run_generation(
    topics: &[String],
    cohort: &Cohort,
    gateway: &Gateway,
    templates: &TemplateSet,
    opts: &GenerationOptions,
) -> Result<(GenerationResults, RunStats), TaskError> {
    if topics.is_empty() {
        return Err(TaskError::EmptyTopics);
    }
    let mut jobs = Vec::new();
    for topic in topics {
        for ch in cohort.characteristics() {
            let candidate = render_candidate(ch);
            let prompt = templates.build_generation_prompt(&candidate, topic)?;
            jobs.push((topic.clone(), ch.id.clone(), prompt, candidate));
        }
    }

    let results = bounded_map(&jobs, opts.concurrency, |(_, _, prompt, candidate)| {
        gateway.complete(
            prompt,
            &TrialHint {
                candidate: candidate.clone(),
                presentation: None,
            },
        )
    });

    let mut stats = RunStats::default();
    let mut records = Vec::with_capacity(jobs.len());
    for ((topic, characteristic_id, prompt, _), result) in jobs.into_iter().zip(results) {
        stats.trials += 1;
        tally(&mut stats, &result);
        let request_hash = gateway.request_hash(&prompt);
        records.push(match result {
            Ok(resp) => GenerationRecord {
                grade: grade_report(&analyze(&resp.text)).ok(),
                non_english_flag: looks_non_english(&resp.text),
                text: resp.text,
                topic,
                characteristic_id,
                request_hash,
                error: None,
            },
            Err(e) => GenerationRecord {
                topic,
                characteristic_id,
                request_hash,
                text: String::new(),
                grade: None,
                non_english_flag: false,
                error: Some(e.to_string()),
            },
        });
    }

    let cfg = gateway.config();
    let metadata = RunMetadata {
        task: TaskKind::Generation,
        model_id: cfg.model_id.clone(),
        endpoint: cfg.endpoint.clone(),
        dataset: opts.task_name.clone(),
        role: Role::Teacher,
        seed: 0,
        rng: RNG_ID.into(),
        cohort_version: cohort.version.clone(),
        templates_digest: templates.digest(),
        choice_layout: CHOICE_BLOCK_LAYOUT.into(),
        level_count: 0,
        n_orderings: 1,
        distinct_orderings: false,
        refusal_markers: Vec::new(),
        temperature: cfg.temperature,
        max_output_tokens: cfg.max_output_tokens,
    };
    Ok((GenerationResults { metadata, records }, stats))
}

/// Count of trials per characteristic, in first-seen order.
pub fn trials_per_characteristic(results: &RankingResults) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for r in &results.records {
        *out.entry(r.spec.characteristic_id.clone()).or_insert(0) += 1;
    }
    out
}
