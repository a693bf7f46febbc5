use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use teachaudit::biasstats::BootstrapConfig;
use teachaudit::cohort::{load_cohort, Cohort, CohortError};
use teachaudit::corpus::{
    bundled_fixture, load_dataset, read_dataset, sample_per_cell, validate_dataset, CorpusError,
    Dataset, DatasetFormat, DatasetKind,
};
use teachaudit::modelgate::{GateError, Gateway, GatewayOptions, ModelConfig, OracleProfile};
use teachaudit::promptkit::{Role, TemplateSet};
use teachaudit::report::{
    analyze, analyze_runs, emit, load_bundle, readability_csv, topic_slice, LabeledRun,
    OutputFormat, ReportBundle, ReportError,
};
use teachaudit::taskrunner::{
    adjudicate, load_refusal_markers, read_results, refusal_stats, run_generation, run_ranking,
    write_results, GenerationOptions, RankingOptions, RankingResults, RunResults, RunStats,
    TaskError, DEFAULT_REFUSAL_MARKERS,
};

const BUILTIN_FIXTURE: &str = "builtin:fixture";

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Endpoint(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Endpoint(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Endpoint(m) => m,
        }
    }
}

impl From<GateError> for CliError {
    fn from(e: GateError) -> Self {
        match e {
            GateError::InvalidConfig(_) | GateError::CacheIo(_) | GateError::CacheConflict(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Endpoint(e.to_string()),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_error!(CorpusError, CohortError, TaskError, ReportError, std::io::Error, serde_json::Error);

type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(name = "audit", version, about = "Audit LLM tutors for demographic bias in difficulty choices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a leveled dataset and list every violation.
    Validate(ValidateArgs),
    /// Run the ranking task and write a results file.
    Rank(RankArgs),
    /// Run the generation task and write a results file.
    Generate(GenerateArgs),
    /// Score a JSONL file of texts into a CSV of readability statistics.
    Readability(ReadabilityArgs),
    /// Analyze a directory of results files and emit tables and figures.
    Analyze(AnalyzeArgs),
    /// Re-render tables and figures from a previous analysis.
    Report(ReportArgs),
    /// Split a ranking results file by subject topic and analyze each slice.
    Topics(TopicsArgs),
    /// Apply human verdicts to unparseable trials.
    Adjudicate(AdjudicateArgs),
    /// Run the full pipeline against the bundled mock and fixture dataset.
    Demo(DemoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Text,
    Math,
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset JSONL, or `builtin:fixture` for the bundled leveled fixture.
    #[arg(long)]
    dataset: String,
    #[arg(long, value_enum, default_value = "text")]
    kind: KindArg,
    /// For math datasets: items drawn per (problem type, level) cell.
    #[arg(long)]
    per_cell: Option<usize>,
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
}

#[derive(Args)]
struct ModelArgs {
    /// Model config JSON.
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Chat-completions base URL, or `mock:` for the biased-oracle mock.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Maximum requests in flight.
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Serve responses from the cache only.
    #[arg(long)]
    offline: bool,
    #[arg(long, default_value = ".audit-cache")]
    cache_dir: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Cohort JSON; the bundled default cohort when omitted.
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long, default_value = "teacher")]
    role: Role,
    #[arg(long, default_value_t = 10)]
    orderings: usize,
    /// Require the orderings of a subject to be pairwise distinct.
    #[arg(long)]
    distinct_orderings: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Refusal markers: one per line, or a JSON array.
    #[arg(long)]
    refusal_markers: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Ignore an existing results file at `--out` instead of resuming from it.
    #[arg(long)]
    no_resume: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// Topics, one per line.
    #[arg(long, conflicts_with = "dataset")]
    topics: Option<PathBuf>,
    /// Use the subject titles of a dataset as topics.
    #[arg(long)]
    dataset: Option<String>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long, default_value = "generative")]
    task_name: String,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReadabilityArgs {
    /// JSONL of {"id": ..., "text": ...}.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BootstrapArgs {
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 2000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl BootstrapArgs {
    fn config(&self) -> BootstrapConfig {
        BootstrapConfig {
            replicates: self.bootstrap,
            level: self.level,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Directory of results files (*.jsonl).
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
    /// Output formats, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "json,csv,svg")]
    format: Vec<OutputFormat>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding analysis.json and run_manifest.json.
    #[arg(long)]
    analysis: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "csv,svg")]
    format: Vec<OutputFormat>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TopicsArgs {
    /// Ranking results file.
    #[arg(long)]
    results: PathBuf,
    /// JSON object mapping subject_id to topic.
    #[arg(long, conflicts_with = "dataset")]
    labels: Option<PathBuf>,
    /// Take topic labels from a dataset's `topic` field.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AdjudicateArgs {
    #[arg(long)]
    results: PathBuf,
    /// JSONL of {"request_hash": ..., "level": n | "full_refusal"}.
    #[arg(long)]
    file: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value = "audit-demo")]
    out: PathBuf,
    /// Replay from the demo cache without calling the mock.
    #[arg(long)]
    offline: bool,
    #[arg(long, default_value_t = 10)]
    orderings: usize,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Readability(a) => cmd_readability(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Report(a) => cmd_report(a),
        Command::Topics(a) => cmd_topics(a),
        Command::Adjudicate(a) => cmd_adjudicate(a),
        Command::Demo(a) => cmd_demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn read_any_dataset(spec: &str, kind: KindArg) -> Result<Dataset, CliError> {
    let d = if spec == BUILTIN_FIXTURE {
        bundled_fixture()
    } else {
        read_dataset(Path::new(spec), DatasetFormat::Jsonl)?
    };
    Ok(match kind {
        KindArg::Text => d,
        KindArg::Math => d.with_kind(DatasetKind::Math),
    })
}

fn load_any_dataset(args: &DatasetArgs) -> Result<Dataset, CliError> {
    let d = if args.dataset == BUILTIN_FIXTURE {
        bundled_fixture()
    } else {
        load_dataset(Path::new(&args.dataset), DatasetFormat::Jsonl)?
    };
    let d = match args.kind {
        KindArg::Text => d,
        KindArg::Math => d.with_kind(DatasetKind::Math),
    };
    match args.per_cell {
        Some(n) => Ok(sample_per_cell(&d, n, args.sample_seed)?),
        None => Ok(d),
    }
}

fn cohort_from(path: Option<&Path>) -> Result<Cohort, CliError> {
    Ok(match path {
        Some(p) => load_cohort(p)?,
        None => Cohort::bundled(),
    })
}

fn templates_from(dir: Option<&Path>) -> Result<TemplateSet, CliError> {
    let t = match dir {
        Some(d) => TemplateSet::load_overrides(d).map_err(|e| CliError::Data(e.to_string()))?,
        None => TemplateSet::default(),
    };
    t.check().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(t)
}

fn gateway_from(args: &ModelArgs) -> Result<Gateway, CliError> {
    let mut cfg = match (&args.model_config, &args.endpoint, &args.model) {
        (Some(path), _, _) => ModelConfig::load(path)?,
        (None, Some(endpoint), Some(model)) if endpoint.starts_with("mock:") => {
            ModelConfig::mock(model, OracleProfile::default())
        }
        (None, Some(endpoint), Some(model)) => ModelConfig::live(model, endpoint),
        _ => {
            return Err(CliError::Usage(
                "give --model-config, or both --endpoint and --model".into(),
            ))
        }
    };
    if args.model_config.is_some() {
        if let Some(e) = &args.endpoint {
            cfg.endpoint = e.clone();
        }
        if let Some(m) = &args.model {
            cfg.model_id = m.clone();
        }
    }
    if args.concurrency == 0 {
        return Err(CliError::Usage("--concurrency must be at least 1".into()));
    }
    Ok(Gateway::new(
        cfg,
        GatewayOptions {
            cache_dir: Some(args.cache_dir.clone()),
            offline: args.offline,
        },
    )?)
}

fn report_stats(label: &str, stats: &RunStats, out: &Path) -> CliResult {
    println!(
        "{label}: {} trials ({} cached, {} reused, {} failed) -> {}",
        stats.trials,
        stats.cache_hits,
        stats.reused,
        stats.failures,
        out.display()
    );
    if stats.endpoint_failures > 0 {
        return Err(CliError::Endpoint(format!(
            "{} requests failed at the endpoint; results were written and the run can be resumed",
            stats.endpoint_failures
        )));
    }
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> CliResult {
    let d = read_any_dataset(&a.dataset.dataset, a.dataset.kind)?;
    let report = validate_dataset(&d);
    if report.is_valid() {
        println!(
            "{}: {} subjects, {} levels, {} explanations, valid",
            d.name,
            d.subjects.len(),
            d.level_count,
            d.explanation_count()
        );
        return Ok(());
    }
    for v in &report.violations {
        println!("{v}");
    }
    Err(CliError::Data(format!(
        "{} violation(s) in {} subjects",
        report.violations.len(),
        report.subjects_checked
    )))
}

fn cmd_rank(a: RankArgs) -> CliResult {
    let dataset = load_any_dataset(&a.dataset)?;
    let cohort = cohort_from(a.cohort.as_deref())?;
    let templates = templates_from(a.templates.as_deref())?;
    let gateway = gateway_from(&a.model)?;
    let refusal_markers = match &a.refusal_markers {
        Some(p) => load_refusal_markers(p)?,
        None => DEFAULT_REFUSAL_MARKERS.iter().map(|s| s.to_string()).collect(),
    };
    let previous = if !a.no_resume && a.out.exists() {
        match read_results(&a.out)? {
            RunResults::Ranking(r) => Some(r),
            RunResults::Generation(_) => {
                return Err(CliError::Data(format!(
                    "{} holds generation results",
                    a.out.display()
                )))
            }
        }
    } else {
        None
    };
    let opts = RankingOptions {
        role: a.role,
        n_orderings: a.orderings,
        distinct_orderings: a.distinct_orderings,
        seed: a.seed,
        concurrency: a.model.concurrency,
        refusal_markers,
    };
    let (results, stats) = run_ranking(&dataset, &cohort, &gateway, &templates, &opts, previous.as_ref())?;
    write_results(&a.out, &RunResults::Ranking(results))?;
    report_stats("rank", &stats, &a.out)
}

fn cmd_generate(a: GenerateArgs) -> CliResult {
    let topics: Vec<String> = match (&a.topics, &a.dataset) {
        (Some(p), _) => std::fs::read_to_string(p)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
        (None, Some(d)) => read_any_dataset(d, KindArg::Text)?
            .subjects
            .iter()
            .map(|s| s.title.clone())
            .collect(),
        (None, None) => return Err(CliError::Usage("give --topics or --dataset".into())),
    };
    let cohort = cohort_from(a.cohort.as_deref())?;
    let templates = templates_from(a.templates.as_deref())?;
    let gateway = gateway_from(&a.model)?;
    let opts = GenerationOptions {
        task_name: a.task_name,
        concurrency: a.model.concurrency,
    };
    let (results, stats) = run_generation(&topics, &cohort, &gateway, &templates, &opts)?;
    write_results(&a.out, &RunResults::Generation(results))?;
    report_stats("generate", &stats, &a.out)
}

fn cmd_readability(a: ReadabilityArgs) -> CliResult {
    let n = readability_csv(&a.input, &a.out)?;
    println!("readability: {n} documents -> {}", a.out.display());
    Ok(())
}

fn print_summary(bundle: &ReportBundle) {
    for run in &bundle.analysis.runs {
        println!("{} / {} / {} ({})", run.model_id, run.dataset, run.role, run.metric.as_str());
        for g in &run.subgroups {
            let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.3}"));
            println!(
                "  {:<18} MAB {:>6}  MDB {:>6}  Friedman p {:>8}{}",
                g.subgroup,
                fmt(g.mab),
                fmt(g.mdb),
                g.friedman.as_ref().map_or_else(|| "NA".to_string(), |f| format!("{:.2e}", f.p)),
                if g.degenerate { "  (degenerate)" } else { "" }
            );
        }
    }
}

fn write_bundle(bundle: &ReportBundle, formats: &[OutputFormat], out: &Path) -> CliResult {
    let manifest = emit(bundle, formats, out)?;
    println!("wrote {} files to {}", manifest.files.len(), out.display());
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> CliResult {
    let cohort = cohort_from(a.cohort.as_deref())?;
    let bundle = analyze(&a.runs, &cohort, a.bootstrap.config())?;
    print_summary(&bundle);
    write_bundle(&bundle, &a.format, &a.out)
}

fn cmd_report(a: ReportArgs) -> CliResult {
    let bundle = load_bundle(&a.analysis)?;
    write_bundle(&bundle, &a.format, &a.out)
}

fn cmd_topics(a: TopicsArgs) -> CliResult {
    let RunResults::Ranking(results) = read_results(&a.results)? else {
        return Err(CliError::Data("topic slicing needs ranking results".into()));
    };
    let labels: BTreeMap<String, String> = match (&a.labels, &a.dataset) {
        (Some(p), _) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        (None, Some(d)) => read_any_dataset(d, KindArg::Text)?
            .subjects
            .iter()
            .filter_map(|s| Some((s.subject_id.clone(), s.topic_label.clone()?)))
            .collect(),
        (None, None) => BTreeMap::new(),
    };
    let cohort = cohort_from(a.cohort.as_deref())?;
    let slices = topic_slice(&results, &labels);
    for (topic, slice) in &slices {
        let file = a.out.join("slices").join(format!("{}.jsonl", file_safe(topic)));
        write_results(&file, &RunResults::Ranking(slice.clone()))?;
        let bundle = analyze_slice(topic, slice, &cohort, a.bootstrap.config())?;
        let dir = a.out.join("analysis").join(file_safe(topic));
        emit(&bundle, &[OutputFormat::Json, OutputFormat::Csv, OutputFormat::Svg], &dir)?;
        let trials = refusal_stats(slice).values().map(|s| s.trials).sum::<usize>();
        println!("topic {topic}: {trials} trials -> {}", dir.display());
    }
    Ok(())
}

fn analyze_slice(
    topic: &str,
    slice: &RankingResults,
    cohort: &Cohort,
    config: BootstrapConfig,
) -> Result<ReportBundle, CliError> {
    let mut slice = slice.clone();
    slice.metadata.dataset = format!("{}[{topic}]", slice.metadata.dataset);
    Ok(analyze_runs(
        &[LabeledRun {
            source: topic.to_string(),
            results: RunResults::Ranking(slice),
            sha256: None,
        }],
        cohort,
        config,
    )?)
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn cmd_adjudicate(a: AdjudicateArgs) -> CliResult {
    let RunResults::Ranking(results) = read_results(&a.results)? else {
        return Err(CliError::Data("adjudication applies to ranking results".into()));
    };
    let updated = adjudicate(&results, &a.file)?;
    let changed = updated.records.iter().filter(|r| r.human_adjudicated).count();
    write_results(&a.out, &RunResults::Ranking(updated))?;
    println!("adjudicate: {changed} trials adjudicated -> {}", a.out.display());
    Ok(())
}

fn cmd_demo(a: DemoArgs) -> CliResult {
    let dataset = bundled_fixture();
    let cohort = Cohort::bundled();
    let templates = TemplateSet::default();
    let gateway = Gateway::new(
        ModelConfig::demo(),
        GatewayOptions {
            cache_dir: Some(a.out.join("cache")),
            offline: a.offline,
        },
    )?;
    let runs = a.out.join("runs");
    let model = gateway.config().model_id.clone();
    let markers: Vec<String> = DEFAULT_REFUSAL_MARKERS.iter().map(|s| s.to_string()).collect();

    for role in [Role::Teacher, Role::Student] {
        let opts = RankingOptions {
            role,
            n_orderings: a.orderings,
            distinct_orderings: false,
            seed: a.bootstrap.seed,
            concurrency: a.concurrency,
            refusal_markers: markers.clone(),
        };
        let (results, stats) = run_ranking(&dataset, &cohort, &gateway, &templates, &opts, None)?;
        let out = runs.join(format!("{model}__{}__{}.jsonl", dataset.name, role.as_str()));
        write_results(&out, &RunResults::Ranking(results))?;
        report_stats("rank", &stats, &out)?;
    }

    let topics: Vec<String> = dataset.subjects.iter().map(|s| s.subject_id.clone()).collect();
    let opts = GenerationOptions {
        task_name: "generative".into(),
        concurrency: a.concurrency,
    };
    let (results, stats) = run_generation(&topics, &cohort, &gateway, &templates, &opts)?;
    let out = runs.join(format!("{model}__generative.jsonl"));
    write_results(&out, &RunResults::Generation(results))?;
    report_stats("generate", &stats, &out)?;

    let bundle = analyze(&runs, &cohort, a.bootstrap.config())?;
    print_summary(&bundle);
    write_bundle(
        &bundle,
        &[OutputFormat::Json, OutputFormat::Csv, OutputFormat::Svg],
        &a.out.join("report"),
    )
}
