use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::svg::{bar_chart_svg, heatmap_svg, Heatmap, HeatmapAxis};
use super::{sha256_hex, Analysis, ReportBundle, ReportError, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            other => Err(format!("unknown format '{other}' (expected csv, json or svg)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmittedFile {
    /// Path relative to the output directory, with `/` separators.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileManifest {
    pub files: Vec<EmittedFile>,
}

pub const CSV_HEADER: [&str; 14] = [
    "model",
    "dataset_or_task",
    "role",
    "subgroup",
    "characteristic_or_SUMMARY",
    "point",
    "z",
    "ci_lo",
    "ci_hi",
    "mab",
    "mdb",
    "friedman_p",
    "n_trials",
    "n_full_refusals",
];

const ANALYSIS_FILE: &str = "analysis.json";
const RUN_MANIFEST_FILE: &str = "run_manifest.json";
const MANIFEST_FILE: &str = "manifest.json";

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>, ReportError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_bytes(analysis: &Analysis) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for run in &analysis.runs {
        for g in &run.subgroups {
            let prefix = [
                run.model_id.as_str(),
                run.dataset.as_str(),
                run.role.as_str(),
                g.subgroup.as_str(),
            ];
            for m in &g.members {
                let row = [
                    m.id.clone(),
                    num(m.point),
                    num(m.z),
                    num(m.ci_lo),
                    num(m.ci_hi),
                    String::new(),
                    String::new(),
                    String::new(),
                    m.n_trials.to_string(),
                    m.n_full_refusals.to_string(),
                ];
                w.write_record(prefix.iter().map(|s| s.to_string()).chain(row))?;
            }
            let summary = [
                "SUMMARY".to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                num(g.mab),
                num(g.mdb),
                num(g.friedman.as_ref().map(|f| f.p)),
                g.members.iter().map(|m| m.n_trials).sum::<usize>().to_string(),
                g.members.iter().map(|m| m.n_full_refusals).sum::<usize>().to_string(),
            ];
            w.write_record(prefix.iter().map(|s| s.to_string()).chain(summary))?;
        }
    }
    w.into_inner()
        .map_err(|e| ReportError::Io(std::io::Error::other(e.to_string())))
}

fn slug(parts: &[&str]) -> String {
    parts
        .iter()
        .map(|p| {
            p.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("__")
}

/// Render the requested formats into `out_dir` and write `manifest.json`
/// listing every file with its digest. Output bytes depend only on the
/// bundle.
pub fn emit(
    bundle: &ReportBundle,
    formats: &[OutputFormat],
    out_dir: &Path,
) -> Result<FileManifest, ReportError> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let analysis = &bundle.analysis;
    if formats.contains(&OutputFormat::Json) {
        files.push((ANALYSIS_FILE.into(), pretty_json(analysis)?));
        files.push((RUN_MANIFEST_FILE.into(), pretty_json(&bundle.manifest)?));
    }
    if formats.contains(&OutputFormat::Csv) {
        files.push(("analysis.csv".into(), csv_bytes(analysis)?));
    }
    if formats.contains(&OutputFormat::Svg) {
        for run in &analysis.runs {
            for g in &run.subgroups {
                let name = slug(&[&run.model_id, &run.dataset, &run.role, &g.subgroup]);
                files.push((format!("figures/bars/{name}.svg"), bar_chart_svg(run, g).into_bytes()));
            }
        }
        for axis in [HeatmapAxis::Model, HeatmapAxis::Dataset] {
            for metric in ["mab", "mdb"] {
                let map = Heatmap::build(analysis, axis, metric);
                let name = format!("figures/heatmap_{metric}_by_{}.svg", axis.as_str());
                files.push((name, heatmap_svg(&map).into_bytes()));
            }
        }
    }

    let mut manifest = FileManifest { files: Vec::new() };
    for (rel, bytes) in &files {
        let path: PathBuf = out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        manifest.files.push(EmittedFile {
            path: rel.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(MANIFEST_FILE), pretty_json(&manifest)?)?;
    Ok(manifest)
}

/// Read a bundle previously written with the JSON format.
pub fn load_bundle(dir: &Path) -> Result<ReportBundle, ReportError> {
    let analysis: Analysis = serde_json::from_slice(&std::fs::read(dir.join(ANALYSIS_FILE))?)?;
    let manifest: RunManifest =
        serde_json::from_slice(&std::fs::read(dir.join(RUN_MANIFEST_FILE))?)?;
    Ok(ReportBundle { analysis, manifest })
}
