use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ctxdrift::analysis::LockingParams;
use ctxdrift::detect::{DetectorConfig, MissingPolicy, SemanticSource};
use ctxdrift::exec::Execution;
use ctxdrift::pipeline::{self, AnalyzeOptions, OutputFormat};
use ctxdrift::report;
use ctxdrift::titration::{self, PromptTemplate, DEFAULT_TEMPLATE};
use ctxdrift::trace::{self, SynthConfig, Track, TrackSchedule};

const EXIT_WARNINGS: u8 = 1;
const EXIT_INVALID: u8 = 2;

#[derive(Parser)]
#[command(
    name = "ctxdrift",
    version,
    about = "Hallucination and internal-drift analysis under context titration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build titration prompt plans (plan.jsonl) from a dataset and snippets.
    Plan(PlanArgs),
    /// Write a synthetic trace with a known drift schedule.
    Synth(SynthArgs),
    /// Run the hallucination detector over a trace.
    Detect(DetectArgs),
    /// Per-question drift series of a trace.
    Drift(DriftArgs),
    /// Report tables, locking and dynamics for a trace or a metrics directory.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TrackArg {
    Relevant,
    Irrelevant,
}

impl From<TrackArg> for Track {
    fn from(t: TrackArg) -> Self {
        match t {
            TrackArg::Relevant => Track::Relevant,
            TrackArg::Irrelevant => Track::Irrelevant,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, env = "CTXDRIFT_OUT", default_value = "out")]
    out: PathBuf,
    /// Restrict to one track.
    #[arg(long, value_enum)]
    track: Option<TrackArg>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Run batch work on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn tracks(&self) -> Vec<Track> {
        self.track.map(Track::from).into_iter().collect()
    }

    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

#[derive(Args)]
struct DetectorArgs {
    /// Semantic similarity threshold.
    #[arg(long, default_value_t = 0.7)]
    theta_sem: f64,
    /// Require recorded scorer channels: no lexical fallback, and a missing
    /// channel is an error instead of an abstention.
    #[arg(long)]
    strict_channels: bool,
}

impl DetectorArgs {
    fn config(&self) -> DetectorConfig {
        let (semantic_source, nli_policy_on_missing) = if self.strict_channels {
            (SemanticSource::ScorerChannel, MissingPolicy::Error)
        } else {
            (SemanticSource::LexicalFallback, MissingPolicy::Abstain)
        };
        DetectorConfig {
            theta_sem: self.theta_sem,
            semantic_source,
            nli_policy_on_missing,
            domain_lexicon: None,
        }
    }
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Snippet file (JSONL of question_id, track, index, text).
    #[arg(long, required_unless_present = "synthetic_snippets")]
    snippets: Option<PathBuf>,
    /// Generate template snippets instead of reading a snippet file.
    #[arg(long, conflicts_with = "snippets")]
    synthetic_snippets: bool,
    #[arg(long, default_value_t = 15)]
    rounds: u32,
    /// Prompt template with `{context}` and `{question}` placeholders.
    #[arg(long, default_value = DEFAULT_TEMPLATE)]
    template: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON synthetic config; unset fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the round count (linear default schedules).
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    questions: Option<usize>,
    /// Record semantic and NLI scorer channels.
    #[arg(long)]
    with_scorers: bool,
    #[arg(long, default_value_t = trace::DEFAULT_EPSILON_PAD)]
    epsilon: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct DriftArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Override the manifest's padding ε.
    #[arg(long)]
    epsilon: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct LockingArgs {
    #[arg(long, default_value_t = 0.001)]
    delta: f64,
    #[arg(long, default_value_t = 0.02)]
    tau: f64,
    #[arg(long, default_value_t = 2)]
    k: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, required_unless_present_any = ["metrics", "fixtures"])]
    trace: Option<PathBuf>,
    /// Directory with halluc_metrics.csv / drift_metrics.csv (or series.csv).
    #[arg(long, conflicts_with_all = ["trace", "fixtures"])]
    metrics: Option<PathBuf>,
    /// Replay the bundled six-model reference metrics.
    #[arg(long, conflicts_with = "trace")]
    fixtures: bool,
    /// Dataset for the hallucination columns of a trace analysis.
    #[arg(long, requires = "trace")]
    dataset: Option<PathBuf>,
    /// Override the manifest's padding ε.
    #[arg(long, requires = "trace")]
    epsilon: Option<f64>,
    /// Also run locking on every per-question series.
    #[arg(long)]
    per_question: bool,
    #[command(flatten)]
    locking: LockingArgs,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    common: Common,
}

fn warn_all(warnings: &[String]) -> u8 {
    for w in warnings {
        eprintln!("warning: {w}");
    }
    if warnings.is_empty() {
        0
    } else {
        EXIT_WARNINGS
    }
}

fn load_trace(dir: &Path, epsilon: Option<f64>) -> Result<trace::Trace> {
    let mut t =
        trace::load_trace(dir).with_context(|| format!("loading trace {}", dir.display()))?;
    if let Some(eps) = epsilon {
        if !(eps.is_finite() && eps > 0.0) {
            bail!("--epsilon must be positive");
        }
        t.manifest.epsilon_pad = eps;
    }
    Ok(t)
}

fn load_questions(path: &Path) -> Result<Vec<trace::Question>> {
    let qs =
        trace::load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))?;
    if qs.is_empty() {
        bail!("{}: dataset has no questions", path.display());
    }
    Ok(qs)
}

fn cmd_plan(args: &PlanArgs) -> Result<u8> {
    let questions = load_questions(&args.dataset)?;
    let template = PromptTemplate::new(args.template.clone())?;
    let snippet_records = match &args.snippets {
        Some(p) => Some(
            titration::load_snippets(p)
                .with_context(|| format!("loading snippets {}", p.display()))?,
        ),
        None => None,
    };
    let tracks = args.common.tracks();
    let mut plans = Vec::new();
    for q in &questions {
        let snippets = |track: Track| -> Result<Vec<trace::ContextSnippet>> {
            Ok(match &snippet_records {
                Some(r) => titration::snippets_for(r, &q.id, track),
                None => titration::synth_snippets(q, track, args.rounds, args.seed)?,
            })
        };
        let (rel, irr) = titration::plan(
            q,
            &snippets(Track::Relevant)?,
            &snippets(Track::Irrelevant)?,
            args.rounds,
            &template,
        )?;
        plans.extend(
            [rel, irr]
                .into_iter()
                .filter(|p| tracks.is_empty() || tracks.contains(&p.track)),
        );
    }
    fs::create_dir_all(&args.common.out)
        .with_context(|| format!("creating {}", args.common.out.display()))?;
    let path = args.common.out.join("plan.jsonl");
    let n = titration::write_plan_jsonl(&plans, &path)?;
    println!(
        "{n} prompt records for {} questions x {} track(s) x {} rounds -> {}",
        questions.len(),
        plans.len() / questions.len(),
        args.rounds + 1,
        path.display()
    );
    Ok(0)
}

fn cmd_synth(args: &SynthArgs) -> Result<u8> {
    let mut config: SynthConfig = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(r) = args.rounds {
        config.rounds = r;
        config.schedules = [
            (Track::Relevant, 0.04, 0.05),
            (Track::Irrelevant, 0.03, 0.045),
        ]
        .into_iter()
        .map(|(t, a, m)| TrackSchedule::linear(t, r, a, m))
        .collect();
    }
    if let Some(n) = args.questions {
        config.questions = n;
    }
    if !args.common.tracks().is_empty() {
        let tracks = args.common.tracks();
        config.schedules.retain(|s| tracks.contains(&s.track));
    }
    config.with_scorers |= args.with_scorers;
    config.epsilon_pad = args.epsilon;
    let out = trace::synth_trace(args.seed, &config)?;
    let dir = &args.common.out;
    trace::write_trace(&out.trace, dir)?;
    trace::write_dataset_csv(&out.questions, dir.join("dataset.csv"))?;
    trace::load_trace(dir).context("re-loading the written trace")?;
    println!(
        "{} records ({} questions, rounds 0..={}) -> {}",
        out.trace.records.len(),
        out.questions.len(),
        config.rounds,
        dir.display()
    );
    Ok(0)
}

fn cmd_detect(args: &DetectArgs) -> Result<u8> {
    let t = load_trace(&args.trace, None)?;
    let questions = load_questions(&args.dataset)?;
    let options = AnalyzeOptions {
        detector: args.detector.config(),
        tracks: args.common.tracks(),
        execution: args.common.execution(),
        ..AnalyzeOptions::default()
    };
    let run = pipeline::detect_trace(&t, &questions, &options)?;
    let files = pipeline::write_detection(&run, &args.common.out, args.common.format.into())?;
    for r in &run.rates {
        println!(
            "{} round {:>2}: n={} qa={} intra={}",
            r.track,
            r.round,
            r.n,
            report::format_value(r.qa_halluc_rate),
            r.intra_halluc_rate
                .map(report::format_value)
                .unwrap_or_else(|| "-".into())
        );
    }
    println!(
        "wrote {} to {}",
        files.join(", "),
        args.common.out.display()
    );
    let code = warn_all(&run.warnings);
    if !run.failures.is_empty() {
        for f in &run.failures {
            eprintln!("error: {f}");
        }
        bail!("{} record(s) could not be judged", run.failures.len());
    }
    Ok(code)
}

fn cmd_drift(args: &DriftArgs) -> Result<u8> {
    let t = load_trace(&args.trace, args.epsilon)?;
    let series = pipeline::drift_trace(&t, &args.common.tracks(), args.common.execution())?;
    let dir = &args.common.out;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (name, text) = match args.common.format {
        Format::Csv => (
            report::DRIFT_SERIES_FILE,
            report::drift_series_csv(&series)?,
        ),
        Format::Json => (
            "drift_series.json",
            serde_json::to_string_pretty(&series)? + "\n",
        ),
    };
    fs::write(dir.join(name), text).with_context(|| format!("writing {name}"))?;
    println!("{} series -> {}", series.len(), dir.join(name).display());
    let mut warnings = Vec::new();
    if t.partial {
        warnings.push("trace is partial; series cover available rounds".to_string());
    }
    Ok(warn_all(&warnings))
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<u8> {
    let options = AnalyzeOptions {
        detector: args.detector.config(),
        locking: LockingParams {
            delta: args.locking.delta,
            tau: args.locking.tau,
            k: args.locking.k,
        },
        tracks: args.common.tracks(),
        per_question: args.per_question,
        execution: args.common.execution(),
    };
    let analysis = if let Some(dir) = &args.trace {
        let t = load_trace(dir, args.epsilon)?;
        let questions = match &args.dataset {
            Some(p) => Some(load_questions(p)?),
            None => None,
        };
        pipeline::analyze_trace(&t, questions.as_deref(), &options)?
    } else if let Some(dir) = &args.metrics {
        let table = report::load_metrics_dir(dir)
            .with_context(|| format!("loading metrics {}", dir.display()))?;
        pipeline::analyze_table(table, &options)?
    } else {
        pipeline::analyze_table(ctxdrift::fixtures::reference_table()?, &options)?
    };
    let files = pipeline::write_analysis(&analysis, &args.common.out, args.common.format.into())?;
    for r in &analysis.locking.aggregate {
        let track = r.track.map(|t| t.to_string()).unwrap_or_default();
        match r.lock_round {
            Some(round) => println!("{} {track}: locked at round {round}", r.label),
            None => println!("{} {track}: not locked", r.label),
        }
    }
    println!(
        "wrote {} to {}",
        files.join(", "),
        args.common.out.display()
    );
    Ok(warn_all(&analysis.warnings))
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Drift(a) => cmd_drift(a),
        Command::Analyze(a) => cmd_analyze(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
