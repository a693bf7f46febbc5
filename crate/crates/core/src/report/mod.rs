//! Analysis of raw results files and emission of tables and figures.

mod emit;
mod svg;
mod texts;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::biasstats::{
    bootstrap_replicates, friedman, generation_table, ranking_table, subgroup_bias,
    BootstrapConfig, BootstrapStat, CiTarget, FriedmanResult, Interval, MetricKind, ScoreTable,
    StatsError,
};
use crate::cohort::Cohort;
use crate::taskrunner::{read_results, RankingResults, RunResults, TaskError};

pub use emit::{emit, load_bundle, EmittedFile, FileManifest, OutputFormat, CSV_HEADER};
pub use svg::{bar_chart_svg, heatmap_svg, Heatmap, HeatmapAxis, HeatmapCell};
pub use texts::{document_stats, readability_csv, DocumentStats, TextDocument};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no results files (*.jsonl) in {0}")]
    NoRuns(PathBuf),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    Results { path: PathBuf, source: TaskError },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberAnalysis {
    pub id: String,
    pub point: Option<f64>,
    pub z: Option<f64>,
    /// Interval for `z`.
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub point_ci: Option<Interval>,
    pub n_trials: usize,
    pub n_retained: usize,
    pub n_full_refusals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupAnalysis {
    pub subgroup: String,
    pub name: String,
    pub is_reference: bool,
    pub members: Vec<MemberAnalysis>,
    pub mab: Option<f64>,
    pub mab_ci: Option<Interval>,
    pub mdb: Option<f64>,
    pub mdb_ci: Option<Interval>,
    pub degenerate: bool,
    pub friedman: Option<FriedmanResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAnalysis {
    pub source: String,
    pub model_id: String,
    pub dataset: String,
    pub role: String,
    pub metric: MetricKind,
    pub subgroups: Vec<SubgroupAnalysis>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub cohort_version: String,
    pub bootstrap: BootstrapConfig,
    pub runs: Vec<RunAnalysis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub source: String,
    pub results_sha256: Option<String>,
    pub model_id: String,
    pub endpoint: String,
    pub run_seed: u64,
    pub rng: String,
    pub cohort_version: String,
    pub templates_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub cohort_version: String,
    pub bootstrap: BootstrapConfig,
    pub runs: Vec<RunProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub analysis: Analysis,
    pub manifest: RunManifest,
}

/// One results set to analyze, with a display label and optional digest of
/// its source file.
#[derive(Debug, Clone)]
pub struct LabeledRun {
    pub source: String,
    pub results: RunResults,
    pub sha256: Option<String>,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Read every `*.jsonl` results file in `runs_dir` (sorted by file name)
/// and analyze them.
pub fn analyze(
    runs_dir: &Path,
    cohort: &Cohort,
    config: BootstrapConfig,
) -> Result<ReportBundle, ReportError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(runs_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(ReportError::NoRuns(runs_dir.to_path_buf()));
    }
    let mut runs = Vec::new();
    for path in paths {
        let bytes = std::fs::read(&path)?;
        let results = read_results(&path).map_err(|source| ReportError::Results {
            path: path.clone(),
            source,
        })?;
        runs.push(LabeledRun {
            source: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            results,
            sha256: Some(sha256_hex(&bytes)),
        });
    }
    analyze_runs(&runs, cohort, config)
}

/// Analyze in-memory runs in the given order.
pub fn analyze_runs(
    runs: &[LabeledRun],
    cohort: &Cohort,
    config: BootstrapConfig,
) -> Result<ReportBundle, ReportError> {
    config.validate()?;
    let analyses = runs
        .iter()
        .map(|r| analyze_one(r, cohort, config))
        .collect();
    let provenance = runs
        .iter()
        .map(|r| {
            let m = r.results.metadata();
            RunProvenance {
                source: r.source.clone(),
                results_sha256: r.sha256.clone(),
                model_id: m.model_id.clone(),
                endpoint: m.endpoint.clone(),
                run_seed: m.seed,
                rng: m.rng.clone(),
                cohort_version: m.cohort_version.clone(),
                templates_digest: m.templates_digest.clone(),
            }
        })
        .collect();
    Ok(ReportBundle {
        analysis: Analysis {
            cohort_version: cohort.version.clone(),
            bootstrap: config,
            runs: analyses,
        },
        manifest: RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            cohort_version: cohort.version.clone(),
            bootstrap: config,
            runs: provenance,
        },
    })
}

/// Score table for a results set: MCV for ranking, MGL for generation.
pub fn score_table(results: &RunResults, cohort: &Cohort) -> ScoreTable {
    match results {
        RunResults::Ranking(r) => ranking_table(r, cohort),
        RunResults::Generation(g) => generation_table(g, cohort),
    }
}

fn analyze_one(run: &LabeledRun, cohort: &Cohort, config: BootstrapConfig) -> RunAnalysis {
    let meta = run.results.metadata();
    let table = score_table(&run.results, cohort);
    let points = table.point_estimates();
    let mut errors = Vec::new();
    let boot = match bootstrap_replicates(&table, cohort, config) {
        Ok(b) => Some(b),
        Err(e) => {
            errors.push(format!("bootstrap: {e}"));
            None
        }
    };
    let interval = |stat: BootstrapStat, target: &CiTarget, point: Option<f64>| {
        let iv = boot.as_ref()?.interval(stat, target)?;
        Some(iv.covering(point?))
    };

    let subgroups = cohort
        .subgroups
        .iter()
        .map(|g| {
            let mut errs = Vec::new();
            let bias = match subgroup_bias(&points, g) {
                Ok(b) => Some(b),
                Err(e) => {
                    errs.push(format!("z: {e}"));
                    None
                }
            };
            let z_of = |id: &str| {
                bias.as_ref()
                    .and_then(|b| b.z.iter().find(|(k, _)| k == id).map(|(_, v)| *v))
            };
            let members = g
                .characteristics
                .iter()
                .map(|c| {
                    let target = CiTarget {
                        subgroup: g.id.clone(),
                        characteristic: Some(c.id.clone()),
                    };
                    let point = points.get(&c.id).copied();
                    let z = z_of(&c.id);
                    let z_ci = interval(BootstrapStat::ZPerChar, &target, z);
                    MemberAnalysis {
                        id: c.id.clone(),
                        point,
                        z,
                        ci_lo: z_ci.map(|i| i.lo),
                        ci_hi: z_ci.map(|i| i.hi),
                        point_ci: interval(BootstrapStat::Point, &target, point),
                        n_trials: table.trials.get(&c.id).copied().unwrap_or(0),
                        n_retained: table.samples.get(&c.id).map_or(0, Vec::len),
                        n_full_refusals: table.full_refusals.get(&c.id).copied().unwrap_or(0),
                    }
                })
                .collect();
            let whole = CiTarget {
                subgroup: g.id.clone(),
                characteristic: None,
            };
            let friedman = match friedman(&table, g) {
                Ok(f) => Some(f),
                Err(e) => {
                    errs.push(format!("friedman: {e}"));
                    None
                }
            };
            let mab = bias.as_ref().map(|b| b.mab);
            let mdb = bias.as_ref().map(|b| b.mdb);
            SubgroupAnalysis {
                subgroup: g.id.clone(),
                name: g.name.clone(),
                is_reference: g.is_reference,
                members,
                mab,
                mab_ci: interval(BootstrapStat::Mab, &whole, mab),
                mdb,
                mdb_ci: interval(BootstrapStat::Mdb, &whole, mdb),
                degenerate: bias.as_ref().is_some_and(|b| b.degenerate),
                friedman,
                errors: errs,
            }
        })
        .collect();

    RunAnalysis {
        source: run.source.clone(),
        model_id: meta.model_id.clone(),
        dataset: meta.dataset.clone(),
        role: match &run.results {
            RunResults::Ranking(_) => meta.role.as_str().to_string(),
            RunResults::Generation(_) => "generation".to_string(),
        },
        metric: table.kind,
        subgroups,
        errors,
    }
}

pub const UNLABELED_TOPIC: &str = "unlabeled";

/// Partition ranking records by the topic label of their subject. Subjects
/// without a label fall into [`UNLABELED_TOPIC`]. Record order is kept
/// within each slice.
pub fn topic_slice(
    results: &RankingResults,
    topic_labels: &BTreeMap<String, String>,
) -> BTreeMap<String, RankingResults> {
    let mut out: BTreeMap<String, RankingResults> = BTreeMap::new();
    for r in &results.records {
        let topic = topic_labels
            .get(&r.spec.subject_id)
            .map_or(UNLABELED_TOPIC, String::as_str);
        out.entry(topic.to_string())
            .or_insert_with(|| RankingResults {
                metadata: results.metadata.clone(),
                records: Vec::new(),
            })
            .records
            .push(r.clone());
    }
    out
}
