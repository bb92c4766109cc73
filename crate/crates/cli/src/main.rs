use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mathtrace_core::config::{ConfigError, RunConfig};
use mathtrace_core::exam::{ExamError, ExamFile, ExamQuestion};
use mathtrace_core::metrics::Configuration;
use mathtrace_core::pipeline::{Pipeline, PipelineError, RunStatus};
use mathtrace_core::report::render_flow_markdown;

const EXIT_PARTIAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "mathtrace", version, about = "Reasoning-flow and prompt-ablation analysis of LLM math solutions")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Answer only from the replay cache; never contact the endpoint.
    #[arg(long, global = true)]
    replay_only: bool,
    /// Weight of the cosine term in the divergence score, in [0, 1].
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Maximum concurrent model requests per question.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Fixed report timestamp (YYYYMMDD_HHMMSS) instead of the clock.
    #[arg(long, global = true)]
    timestamp: Option<String>,
    /// Log verbosity: repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ConfigurationArg {
    Baseline,
    Rag,
    Contextual,
}

impl From<ConfigurationArg> for Configuration {
    fn from(c: ConfigurationArg) -> Self {
        match c {
            ConfigurationArg::Baseline => Configuration::Baseline,
            ConfigurationArg::Rag => Configuration::Rag,
            ConfigurationArg::Contextual => Configuration::Contextual,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FlowFormat {
    Markdown,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ablate, query and report on a single question.
    Analyze {
        /// Question id from the exam file.
        #[arg(long, conflicts_with = "prompt", required_unless_present = "prompt")]
        question: Option<String>,
        /// Inline question text instead of an exam question.
        #[arg(long)]
        prompt: Option<String>,
        /// Id used for outputs of an inline prompt.
        #[arg(long, default_value = "inline")]
        id: String,
        #[arg(long)]
        exam: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "baseline")]
        configuration: ConfigurationArg,
    },
    /// Analyze every question of an exam under one configuration.
    Exam {
        #[arg(long)]
        exam: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "baseline")]
        configuration: ConfigurationArg,
    },
    /// Run baseline, RAG and contextual configurations and merge the tables.
    Compare {
        #[arg(long)]
        exam: Option<PathBuf>,
    },
    /// Build the RAG index snapshot from a corpus directory.
    Ingest {
        /// Defaults to `retrieval.corpus_dir`.
        corpus: Option<PathBuf>,
        /// Defaults to `retrieval.index_path`, else `<out>/index.json`.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Extract the reasoning flow of a saved response without querying.
    Flow {
        response: PathBuf,
        #[arg(long, value_enum, default_value = "markdown")]
        format: FlowFormat,
        /// Also write the DOT graph here.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
}

/// Marks an error as a configuration problem (exit code 2).
#[derive(Debug)]
struct ConfigProblem(anyhow::Error);

impl std::fmt::Display for ConfigProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigProblem {}

fn config_problem(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(ConfigProblem(e.into()))
}

fn pipeline_error(e: PipelineError) -> anyhow::Error {
    if e.is_config_error() {
        config_problem(e)
    } else {
        e.into()
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(config_problem)?,
        None => RunConfig::default(),
    };
    if let Some(alpha) = cli.alpha {
        config.alpha = alpha;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(p) = cli.parallelism {
        config.endpoint.parallelism = p;
    }
    config.replay_only |= cli.replay_only;
    config.validate().map_err(config_problem)?;
    Ok(config)
}

fn load_exam(flag: &Option<PathBuf>, config: &RunConfig) -> Result<ExamFile> {
    let path = flag
        .as_ref()
        .or(config.exam.as_ref())
        .ok_or_else(|| config_problem(anyhow!("no exam file: pass --exam or set `exam` in the config")))?;
    ExamFile::load(path).map_err(|e: ExamError| config_problem(anyhow::Error::new(e).context(path.display().to_string())))
}

fn status_code(status: RunStatus) -> ExitCode {
    match status {
        RunStatus::Ok => ExitCode::SUCCESS,
        RunStatus::Partial | RunStatus::Failed => ExitCode::from(EXIT_PARTIAL),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Command::Flow { response, format, dot } = &cli.command {
        return run_flow(&cli, response, *format, dot.as_deref());
    }
    let config = load_config(&cli)?;
    let out = config.output_dir.clone();
    let pipeline = Pipeline::from_config(config, cli.timestamp.clone()).map_err(pipeline_error)?;

    match &cli.command {
        Command::Analyze {
            question,
            prompt,
            id,
            exam,
            configuration,
        } => {
            let q = match (question, prompt) {
                (_, Some(text)) => ExamQuestion {
                    id: id.clone(),
                    prompt: text.clone(),
                    parts: vec![],
                },
                (Some(qid), None) => {
                    let exam = load_exam(exam, pipeline.config())?;
                    exam.question(qid)
                        .cloned()
                        .ok_or_else(|| config_problem(PipelineError::UnknownQuestion(qid.clone())))?
                }
                (None, None) => unreachable!("clap requires --question or --prompt"),
            };
            let outcome = pipeline
                .run_analyze(&q, (*configuration).into(), &out)
                .map_err(pipeline_error)?;
            println!(
                "{}: robustness {:.3}, phrase sensitivity {:.3}, {} steps, complexity {}",
                q.id,
                outcome.metrics.robustness,
                outcome.metrics.phrase_sensitivity,
                outcome.metrics.step_count,
                outcome.metrics.complexity
            );
            for impact in outcome.report.impacts.iter().take(5) {
                println!("  {:<40} {:.3}", impact.element_surface, impact.impact);
            }
            println!("reports written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Exam { exam, configuration } => {
            let exam = load_exam(exam, pipeline.config())?;
            let run = pipeline
                .run_exam(&exam, (*configuration).into(), &out)
                .map_err(pipeline_error)?;
            let s = &run.status;
            println!(
                "{} [{}]: {}/{} questions analyzed",
                exam.exam_id, run.configuration, s.questions_succeeded, s.questions_total
            );
            for f in &s.failures {
                eprintln!("  {} failed: {}", f.question_id, f.error);
            }
            println!("outputs written to {}", out.display());
            Ok(status_code(s.status.clone()))
        }
        Command::Compare { exam } => {
            let exam = load_exam(exam, pipeline.config())?;
            let cmp = pipeline.run_compare(&exam, &out).map_err(pipeline_error)?;
            for s in &cmp.metadata.configurations {
                match &s.error {
                    Some(e) => eprintln!("{}: {e}", s.configuration),
                    None => println!("{}: {}/{} questions analyzed", s.configuration, s.questions_succeeded, s.questions_total),
                }
            }
            print!(
                "{}",
                mathtrace_core::report::export_exam_table(&cmp.table, mathtrace_core::report::TableFormat::Markdown)
            );
            Ok(status_code(cmp.metadata.status()))
        }
        Command::Ingest { corpus, snapshot } => {
            let corpus = corpus
                .clone()
                .or_else(|| pipeline.config().retrieval.corpus_dir.clone())
                .ok_or_else(|| config_problem(anyhow!("no corpus: pass a directory or set retrieval.corpus_dir")))?;
            let snapshot = snapshot.clone().unwrap_or_else(|| pipeline.default_index_path());
            let index = pipeline.run_ingest(&corpus, &snapshot).map_err(pipeline_error)?;
            let docs: std::collections::BTreeSet<&str> = index.chunks.iter().map(|c| c.doc_id.as_str()).collect();
            println!(
                "indexed {} chunks from {} documents ({} dims, {}) -> {}",
                index.len(),
                docs.len(),
                index.dims,
                index.params.embedder,
                snapshot.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Flow { .. } => unreachable!("handled above"),
    }
}

fn run_flow(cli: &Cli, response: &Path, format: FlowFormat, dot: Option<&Path>) -> Result<ExitCode> {
    let config = load_config(cli)?;
    let extractor = config.flow_extractor().map_err(|e: ConfigError| config_problem(e))?;
    let text = std::fs::read_to_string(response)
        .with_context(|| format!("reading {}", response.display()))
        .map_err(config_problem)?;
    let flow = extractor.extract(&text)?;
    match format {
        FlowFormat::Markdown => print!("{}", render_flow_markdown(&flow)),
        FlowFormat::Json => print!("{}", flow.to_json()),
    }
    if let Some(path) = dot {
        let name = response.file_stem().and_then(|s| s.to_str()).unwrap_or("flow");
        std::fs::write(path, mathtrace_core::report::export_graph_dot(&flow, name))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigProblem>().is_some() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_PARTIAL)
            }
        }
    }
}
