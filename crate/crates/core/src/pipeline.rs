//! End-to-end runs: ablate → query → score → extract flow → report, per
//! question, exam and prompting configuration.
//!
//! Output layout under the run directory:
//!
//! ```text
//! questions/<qid>.md      questions/<qid>.json
//! graphs/<qid>.dot        trials/<qid>.json
//! exam_metrics.csv        exam_metrics.md
//! run_metadata.json
//! ```
//!
//! `compare` writes one such tree per configuration (`baseline/`, `rag/`,
//! `contextual/`) plus a merged table and metadata at the top level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ablation::{decompose_prompt, generate_ablations, AblationError, AblationManifest};
use crate::config::{ConfigError, RunConfig};
use crate::divergence::{score_responses, DivergenceError, DivergenceScore};
use crate::exam::{ExamError, ExamFile, ExamQuestion};
use crate::flow::{FlowError, FlowExtractor, ReasoningFlow};
use crate::gateway::{CompletionRequest, Gateway, GatewayError, ReplayCache, ResponseSource};
use crate::lexicon::Lexicon;
use crate::metrics::{exam_aggregate, question_metrics, AblationTrial, Configuration, ExamMetrics, MetricsError, QuestionMetrics};
use crate::report::{
    export_exam_table, export_graph_dot, render_question_report, AnalysisReport, ReportFormat, ReportMetadata,
    RubricSchema, StepDetail, TableFormat,
};
use crate::retrieval::{
    assemble_prompt, load_corpus_dir, load_manifest, retrieve, CorpusDoc, Embedder, PromptContext, RetrievalError,
    VectorIndex,
};

#[derive(Debug, Error)]
pub enum QuestionError {
    #[error("decomposing prompt: {0}")]
    Ablation(#[from] AblationError),
    #[error("querying the original prompt: {0}")]
    Original(#[source] GatewayError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("every ablation trial failed; first error: {0}")]
    AllTrialsFailed(String),
    #[error("scoring: {0}")]
    Divergence(#[from] DivergenceError),
    #[error("extracting reasoning flow: {0}")]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("retrieval: {0}")]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Exam(#[from] ExamError),
    #[error("{configuration} configuration unavailable: {reason}")]
    ConfigurationUnavailable { configuration: Configuration, reason: String },
    #[error("question {question_id}: {source}")]
    Question {
        question_id: String,
        #[source]
        source: QuestionError,
    },
    #[error("question {0:?} not found in exam")]
    UnknownQuestion(String),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// True for problems with the configuration rather than with a run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::Exam(_)
                | PipelineError::ConfigurationUnavailable { .. }
                | PipelineError::UnknownQuestion(_)
        )
    }
}

/// Wall-clock UTC in `YYYYMMDD_HHMMSS`.
pub fn now_timestamp() -> String {
    chrono::Utc::now().format("%Y%m%d_%H%M%S").to_string()
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, contents).map_err(io)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Retrieval state for one configuration, prepared once per run.
pub enum PreparedContext {
    Baseline,
    Rag(VectorIndex),
    Contextual(Vec<CorpusDoc>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub kind: String,
    pub surface: String,
    pub perturbation: String,
    pub score: DivergenceScore,
}

/// Per-question audit record: the ablation manifest and each trial's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub question_id: String,
    pub manifest: AblationManifest,
    pub trials: Vec<TrialRecord>,
    pub failed_trials: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct QuestionOutcome {
    pub report: AnalysisReport,
    pub original_response: String,
    /// Answered trials with their responses and scores.
    pub trials: Vec<AblationTrial>,
    pub flow: ReasoningFlow,
    pub metrics: QuestionMetrics,
    pub trial_log: TrialLog,
    pub live_responses: usize,
    pub replayed_responses: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionFailure {
    pub question_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationStatus {
    pub configuration: Configuration,
    pub status: RunStatus,
    pub error: Option<String>,
    pub questions_total: usize,
    /// Questions that produced metrics; the exam aggregate's `n`.
    pub questions_succeeded: usize,
    pub failures: Vec<QuestionFailure>,
    pub truncated_context: Vec<String>,
    pub live_responses: usize,
    pub replayed_responses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSettings {
    pub chunk_size: usize,
    pub overlap: usize,
    pub top_k: usize,
    pub keywords: Vec<String>,
    pub token_budget: usize,
    pub embedder: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub command: String,
    pub timestamp: String,
    pub model: String,
    pub alpha: f64,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub replay_only: bool,
    pub trial_parallelism: usize,
    pub retrieval: RetrievalSettings,
    pub exam_id: Option<String>,
    pub course: Option<String>,
    pub configurations: Vec<ConfigurationStatus>,
}

impl RunMetadata {
    pub fn status(&self) -> RunStatus {
        let all = |s: RunStatus| self.configurations.iter().all(|c| c.status == s);
        if self.configurations.is_empty() || all(RunStatus::Ok) {
            RunStatus::Ok
        } else if all(RunStatus::Failed) {
            RunStatus::Failed
        } else {
            RunStatus::Partial
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExamRun {
    pub exam_id: String,
    pub course: String,
    pub configuration: Configuration,
    pub metrics: Option<ExamMetrics>,
    pub outcomes: Vec<QuestionOutcome>,
    pub status: ConfigurationStatus,
}

#[derive(Debug, Clone)]
pub struct CompareRun {
    pub runs: Vec<ExamRun>,
    pub metadata: RunMetadata,
    pub table: Vec<ExamMetrics>,
}

pub struct Pipeline {
    config: RunConfig,
    gateway: Gateway,
    extractor: FlowExtractor,
    instructions: Lexicon,
    embedder: Box<dyn Embedder>,
    timestamp: String,
}

impl Pipeline {
    /// Builds the gateway from `config`: replay cache at `cache_dir`, HTTP
    /// backend unless `replay_only`.
    pub fn from_config(config: RunConfig, timestamp: Option<String>) -> Result<Self, PipelineError> {
        let cache = ReplayCache::new(&config.cache_dir);
        let gateway = Gateway::from_config(&config.endpoint, Some(cache), config.replay_only);
        Self::with_gateway(config, gateway, timestamp)
    }

    pub fn with_gateway(config: RunConfig, gateway: Gateway, timestamp: Option<String>) -> Result<Self, PipelineError> {
        config.validate()?;
        let extractor = config.flow_extractor()?;
        let instructions = config.instruction_lexicon()?;
        let embedder = config.embedding.embedder();
        Ok(Self {
            config,
            gateway,
            extractor,
            instructions,
            embedder,
            timestamp: timestamp.unwrap_or_else(now_timestamp),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn timestamp(&self) -> &str {
        &self.timestamp
    }

    pub fn extractor(&self) -> &FlowExtractor {
        &self.extractor
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    /// Loads the index or manifest a configuration needs.
    pub fn prepare(&self, configuration: Configuration) -> Result<PreparedContext, PipelineError> {
        let unavailable = |reason: String| PipelineError::ConfigurationUnavailable { configuration, reason };
        let r = &self.config.retrieval;
        match configuration {
            Configuration::Baseline => Ok(PreparedContext::Baseline),
            Configuration::Rag => {
                let index = match (&r.index_path, &r.corpus_dir) {
                    (Some(path), _) if path.exists() => {
                        VectorIndex::load(path).map_err(|e| unavailable(e.to_string()))?
                    }
                    (_, Some(dir)) if dir.is_dir() => {
                        let docs = load_corpus_dir(dir).map_err(|e| unavailable(e.to_string()))?;
                        VectorIndex::build(&docs, r, self.embedder.as_ref()).map_err(|e| unavailable(e.to_string()))?
                    }
                    (None, None) => return Err(unavailable("set retrieval.index_path or retrieval.corpus_dir".into())),
                    (index, dir) => {
                        let shown: Vec<String> = [index, dir].into_iter().flatten().map(|p| p.display().to_string()).collect();
                        return Err(unavailable(format!("{} does not exist", shown.join(" / "))));
                    }
                };
                if index.params.embedder != self.embedder.name() {
                    return Err(unavailable(format!(
                        "index was embedded with {}, but the configured embedder is {}",
                        index.params.embedder,
                        self.embedder.name()
                    )));
                }
                if index.is_empty() {
                    return Err(unavailable("no corpus paragraph matched the retrieval keywords".into()));
                }
                Ok(PreparedContext::Rag(index))
            }
            Configuration::Contextual => {
                let manifest = r
                    .manifest
                    .as_ref()
                    .ok_or_else(|| unavailable("set retrieval.manifest".into()))?;
                let docs = load_manifest(manifest).map_err(|e| unavailable(e.to_string()))?;
                Ok(PreparedContext::Contextual(docs))
            }
        }
    }

    fn prompt_context(&self, prepared: &PreparedContext, question: &str) -> Result<PromptContext, RetrievalError> {
        Ok(match prepared {
            PreparedContext::Baseline => PromptContext::Baseline,
            // retrieval runs once, on the unmodified question
            PreparedContext::Rag(index) => {
                PromptContext::Rag(retrieve(index, self.embedder.as_ref(), question, self.config.retrieval.top_k)?)
            }
            PreparedContext::Contextual(docs) => PromptContext::Contextual(docs.clone()),
        })
    }

    fn request(&self, system_text: String, user_text: String) -> CompletionRequest {
        CompletionRequest {
            model_name: self.config.endpoint.model.clone(),
            system_text,
            user_text,
            temperature: self.config.endpoint.temperature,
            max_tokens: self.config.endpoint.max_tokens,
        }
    }

    pub fn analyze_question(
        &self,
        question: &ExamQuestion,
        configuration: Configuration,
        prepared: &PreparedContext,
    ) -> Result<QuestionOutcome, PipelineError> {
        self.analyze_inner(question, configuration, prepared)
            .map_err(|source| PipelineError::Question {
                question_id: question.id.clone(),
                source,
            })
    }

    fn analyze_inner(
        &self,
        question: &ExamQuestion,
        configuration: Configuration,
        prepared: &PreparedContext,
    ) -> Result<QuestionOutcome, QuestionError> {
        let alpha = self.config.alpha;
        let budget = self.config.retrieval.token_budget;
        let elements = decompose_prompt(&question.prompt, &self.instructions)?;
        let set = generate_ablations(&question.prompt, &elements);
        let context = self.prompt_context(prepared, &question.prompt)?;

        let original = assemble_prompt(&question.prompt, &context, budget)?;
        let truncation = original.truncation.clone();
        let mut requests = vec![self.request(original.system_text, original.user_text)];
        for ablated in &set.ablations {
            let p = assemble_prompt(&ablated.text, &context, budget)?;
            requests.push(self.request(p.system_text, p.user_text));
        }

        let mut results = self.gateway.run_trials(&requests, self.config.endpoint.parallelism)?.into_iter();
        let original_response = results.next().expect("original request").map_err(QuestionError::Original)?;
        let mut live = usize::from(original_response.source == ResponseSource::Live);
        let mut replayed = usize::from(original_response.source == ResponseSource::Replay);

        let mut answered = Vec::new();
        let mut failed_trials = Vec::new();
        for (ablated, result) in set.ablations.iter().zip(results) {
            match result {
                Ok(resp) => {
                    live += usize::from(resp.source == ResponseSource::Live);
                    replayed += usize::from(resp.source == ResponseSource::Replay);
                    answered.push((ablated, resp.text));
                }
                Err(e) => {
                    log::warn!("question {}: trial {:?} failed: {e}", question.id, ablated.element.surface);
                    failed_trials.push(format!("{} [{}]: {e}", ablated.element.surface, ablated.element.perturbation));
                }
            }
        }
        if answered.is_empty() {
            let first = failed_trials.first().cloned().unwrap_or_else(|| "no ablatable elements".to_string());
            return Err(QuestionError::AllTrialsFailed(first));
        }

        let texts: Vec<&str> = answered.iter().map(|(_, t)| t.as_str()).collect();
        let scores = score_responses(&original_response.text, &texts, alpha)?;
        let trials: Vec<AblationTrial> = answered
            .iter()
            .zip(&scores)
            .map(|((ablated, text), score)| AblationTrial {
                element: ablated.element.clone(),
                ablated_prompt: ablated.text.clone(),
                ablated_response: text.clone(),
                score: *score,
            })
            .collect();

        let flow = self.extractor.extract(&original_response.text)?;
        let metrics = question_metrics(&question.id, &trials, &flow)?;

        let report = AnalysisReport {
            timestamp: self.timestamp.clone(),
            model_name: self.config.endpoint.model.clone(),
            question_id: question.id.clone(),
            question_text: question.prompt.clone(),
            robustness: metrics.robustness,
            phrase_sensitivity: metrics.phrase_sensitivity,
            impacts: metrics.impacts.clone(),
            flow_summary: flow.summary.clone(),
            detailed_steps: flow.steps.iter().map(StepDetail::from).collect(),
            run_metadata: ReportMetadata {
                configuration: configuration.as_str().to_string(),
                alpha,
                temperature: self.config.endpoint.temperature,
                max_tokens: self.config.endpoint.max_tokens,
                truncation,
                skipped_ablations: set
                    .skipped
                    .iter()
                    .map(|s| format!("{} [{}]: {}", s.element.surface, s.element.perturbation, s.reason))
                    .collect(),
                failed_trials: failed_trials.clone(),
            },
            rubric: RubricSchema::default(),
        };
        let trial_log = TrialLog {
            question_id: question.id.clone(),
            manifest: AblationManifest::new(&question.prompt, &set),
            trials: trials
                .iter()
                .map(|t| TrialRecord {
                    kind: t.element.kind.as_str().to_string(),
                    surface: t.element.surface.clone(),
                    perturbation: t.element.perturbation.as_str().to_string(),
                    score: t.score,
                })
                .collect(),
            failed_trials,
        };
        Ok(QuestionOutcome {
            report,
            original_response: original_response.text,
            trials,
            flow,
            metrics,
            trial_log,
            live_responses: live,
            replayed_responses: replayed,
        })
    }

    /// Writes the question's markdown/JSON report, DOT graph and trial log.
    pub fn write_question_outputs(&self, out_dir: &Path, outcome: &QuestionOutcome) -> Result<(), PipelineError> {
        let qid = &outcome.report.question_id;
        write_file(
            &out_dir.join("questions").join(format!("{qid}.md")),
            &render_question_report(&outcome.report, ReportFormat::Markdown),
        )?;
        write_file(
            &out_dir.join("questions").join(format!("{qid}.json")),
            &render_question_report(&outcome.report, ReportFormat::Json),
        )?;
        write_file(&out_dir.join("graphs").join(format!("{qid}.dot")), &export_graph_dot(&outcome.flow, qid))?;
        write_file(&out_dir.join("trials").join(format!("{qid}.json")), &to_json(&outcome.trial_log))
    }

    pub fn metadata(&self, command: &str, exam: Option<&ExamFile>, configurations: Vec<ConfigurationStatus>) -> RunMetadata {
        let r = &self.config.retrieval;
        RunMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            timestamp: self.timestamp.clone(),
            model: self.config.endpoint.model.clone(),
            alpha: self.config.alpha,
            temperature: self.config.endpoint.temperature,
            max_tokens: self.config.endpoint.max_tokens,
            replay_only: self.gateway.is_replay_only(),
            trial_parallelism: self.config.endpoint.parallelism,
            retrieval: RetrievalSettings {
                chunk_size: r.chunk_size,
                overlap: r.overlap,
                top_k: r.top_k,
                keywords: r.keywords.clone(),
                token_budget: r.token_budget,
                embedder: self.embedder.name(),
            },
            exam_id: exam.map(|e| e.exam_id.clone()),
            course: exam.and_then(|e| e.course.clone()),
            configurations,
        }
    }

    /// Analyzes one question and writes its outputs plus run metadata.
    pub fn run_analyze(
        &self,
        question: &ExamQuestion,
        configuration: Configuration,
        out_dir: &Path,
    ) -> Result<QuestionOutcome, PipelineError> {
        let prepared = self.prepare(configuration)?;
        let result = self.analyze_question(question, configuration, &prepared);
        let status = match &result {
            Ok(outcome) => {
                self.write_question_outputs(out_dir, outcome)?;
                ConfigurationStatus {
                    configuration,
                    status: RunStatus::Ok,
                    error: None,
                    questions_total: 1,
                    questions_succeeded: 1,
                    failures: vec![],
                    truncated_context: truncated(std::slice::from_ref(outcome)),
                    live_responses: outcome.live_responses,
                    replayed_responses: outcome.replayed_responses,
                }
            }
            Err(e) => failed_status(configuration, 1, e.to_string()),
        };
        write_file(&out_dir.join("run_metadata.json"), &to_json(&self.metadata("analyze", None, vec![status])))?;
        result
    }

    /// Runs every exam question under one configuration. Question failures
    /// are recorded and the aggregate covers the questions that succeeded.
    pub fn run_exam_configuration(
        &self,
        exam: &ExamFile,
        configuration: Configuration,
        out_dir: &Path,
    ) -> Result<ExamRun, PipelineError> {
        let prepared = self.prepare(configuration)?;
        let results = crate::par::bounded_map(&exam.questions, self.config.question_parallelism, |q| {
            self.analyze_question(q, configuration, &prepared)
        });

        let mut outcomes = Vec::new();
        let mut failures = Vec::new();
        for (question, result) in exam.questions.iter().zip(results) {
            match result {
                Ok(outcome) => {
                    self.write_question_outputs(out_dir, &outcome)?;
                    outcomes.push(outcome);
                }
                Err(e) => {
                    log::error!("{e}");
                    failures.push(QuestionFailure {
                        question_id: question.id.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }

        let course = exam.course.clone().unwrap_or_default();
        let question_metrics: Vec<QuestionMetrics> = outcomes.iter().map(|o| o.metrics.clone()).collect();
        let metrics = exam_aggregate(&question_metrics, &course, &exam.exam_id, configuration).ok();
        if let Some(m) = &metrics {
            let rows = std::slice::from_ref(m);
            write_file(&out_dir.join("exam_metrics.csv"), &export_exam_table(rows, TableFormat::Csv))?;
            write_file(&out_dir.join("exam_metrics.md"), &export_exam_table(rows, TableFormat::Markdown))?;
        }
        let status = ConfigurationStatus {
            configuration,
            status: if outcomes.is_empty() {
                RunStatus::Failed
            } else if failures.is_empty() {
                RunStatus::Ok
            } else {
                RunStatus::Partial
            },
            error: None,
            questions_total: exam.questions.len(),
            questions_succeeded: outcomes.len(),
            failures,
            truncated_context: truncated(&outcomes),
            live_responses: outcomes.iter().map(|o| o.live_responses).sum(),
            replayed_responses: outcomes.iter().map(|o| o.replayed_responses).sum(),
        };
        Ok(ExamRun {
            exam_id: exam.exam_id.clone(),
            course,
            configuration,
            metrics,
            outcomes,
            status,
        })
    }

    /// `exam` command: one configuration, metadata written at `out_dir`.
    pub fn run_exam(&self, exam: &ExamFile, configuration: Configuration, out_dir: &Path) -> Result<ExamRun, PipelineError> {
        let run = self.run_exam_configuration(exam, configuration, out_dir)?;
        let metadata = self.metadata("exam", Some(exam), vec![run.status.clone()]);
        write_file(&out_dir.join("run_metadata.json"), &to_json(&metadata))?;
        Ok(run)
    }

    /// `compare` command: baseline, RAG and contextual runs side by side. A
    /// configuration that cannot run is recorded without stopping the others.
    pub fn run_compare(&self, exam: &ExamFile, out_dir: &Path) -> Result<CompareRun, PipelineError> {
        let mut runs = Vec::new();
        let mut statuses = Vec::new();
        for configuration in Configuration::ALL {
            let dir = out_dir.join(configuration.as_str());
            match self.run_exam_configuration(exam, configuration, &dir) {
                Ok(run) => {
                    statuses.push(run.status.clone());
                    runs.push(run);
                }
                Err(e @ PipelineError::ConfigurationUnavailable { .. }) => {
                    log::error!("{e}");
                    statuses.push(failed_status(configuration, exam.questions.len(), e.to_string()));
                }
                Err(e) => return Err(e),
            }
        }
        let table: Vec<ExamMetrics> = runs.iter().filter_map(|r| r.metrics.clone()).collect();
        if !table.is_empty() {
            write_file(&out_dir.join("exam_metrics.csv"), &export_exam_table(&table, TableFormat::Csv))?;
            write_file(&out_dir.join("exam_metrics.md"), &export_exam_table(&table, TableFormat::Markdown))?;
        }
        let metadata = self.metadata("compare", Some(exam), statuses);
        write_file(&out_dir.join("run_metadata.json"), &to_json(&metadata))?;
        Ok(CompareRun { runs, metadata, table })
    }

    /// `ingest` command: builds the RAG index from `corpus_dir` and writes
    /// its snapshot.
    pub fn run_ingest(&self, corpus_dir: &Path, snapshot: &Path) -> Result<VectorIndex, PipelineError> {
        let to_err = |e: RetrievalError| PipelineError::ConfigurationUnavailable {
            configuration: Configuration::Rag,
            reason: e.to_string(),
        };
        let docs = load_corpus_dir(corpus_dir).map_err(to_err)?;
        let index = VectorIndex::build(&docs, &self.config.retrieval, self.embedder.as_ref()).map_err(to_err)?;
        index.save(snapshot).map_err(to_err)?;
        Ok(index)
    }

    /// Where `ingest` writes when no snapshot path is configured.
    pub fn default_index_path(&self) -> PathBuf {
        self.config
            .retrieval
            .index_path
            .clone()
            .unwrap_or_else(|| self.config.output_dir.join("index.json"))
    }
}

fn truncated(outcomes: &[QuestionOutcome]) -> Vec<String> {
    outcomes
        .iter()
        .filter(|o| o.report.run_metadata.truncation.truncated)
        .map(|o| o.report.question_id.clone())
        .collect()
}

fn failed_status(configuration: Configuration, questions_total: usize, error: String) -> ConfigurationStatus {
    ConfigurationStatus {
        configuration,
        status: RunStatus::Failed,
        error: Some(error),
        questions_total,
        questions_succeeded: 0,
        failures: vec![],
        truncated_context: vec![],
        live_responses: 0,
        replayed_responses: 0,
    }
}
