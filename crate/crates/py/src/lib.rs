//! Python bindings: flow extraction, prompt ablation, divergence scoring,
//! retrieval helpers and the exam pipeline.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use mathtrace_core::ablation::{self, PromptElement};
use mathtrace_core::config::RunConfig;
use mathtrace_core::divergence;
use mathtrace_core::exam::ExamFile;
use mathtrace_core::flow::{self, AnnotatedStep};
use mathtrace_core::lexicon::Lexicon;
use mathtrace_core::metrics::Configuration;
use mathtrace_core::pipeline::{Pipeline, RunStatus};
use mathtrace_core::report;
use mathtrace_core::retrieval::{self, CorpusDoc, HashEmbedder, PromptContext};

create_exception!(mathtrace, MathtraceError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    MathtraceError::new_err(e.to_string())
}

/// One annotated step of a reasoning flow.
#[pyclass(frozen, get_all, skip_from_py_object, module = "mathtrace")]
#[derive(Clone)]
struct Step {
    index: usize,
    text: String,
    /// Byte offsets into the source text.
    span: (usize, usize),
    operations: Vec<String>,
    concepts: Vec<String>,
    dominant_operation: String,
    level: String,
    weight: u32,
    score: u32,
}

impl From<&AnnotatedStep> for Step {
    fn from(s: &AnnotatedStep) -> Self {
        Self {
            index: s.raw.index,
            text: s.raw.text.clone(),
            span: s.raw.char_span,
            operations: s.operations.iter().map(|o| o.name.as_str().to_string()).collect(),
            concepts: s.concepts.iter().map(|c| c.name.clone()).collect(),
            dominant_operation: s.dominant_operation().as_str().to_string(),
            level: s.complexity.level.as_str().to_string(),
            weight: s.complexity.weight,
            score: s.complexity.features.score(),
        }
    }
}

#[pymethods]
impl Step {
    fn __repr__(&self) -> String {
        format!("Step({}, {}, {})", self.index, self.dominant_operation, self.level)
    }
}

/// Steps, dependency edges and summary of a solution.
#[pyclass(frozen, module = "mathtrace")]
struct ReasoningFlow(flow::ReasoningFlow);

#[pymethods]
impl ReasoningFlow {
    #[getter]
    fn steps(&self) -> Vec<Step> {
        self.0.steps.iter().map(Step::from).collect()
    }

    /// `(from, to, kind)` triples.
    #[getter]
    fn edges(&self) -> Vec<(usize, usize, String)> {
        self.0
            .edges
            .iter()
            .map(|e| {
                let kind = serde_json::to_value(e.kind).ok().and_then(|v| v.as_str().map(str::to_string));
                (e.from, e.to, kind.unwrap_or_default())
            })
            .collect()
    }

    #[getter]
    fn pattern_trace(&self) -> Vec<String> {
        self.0.summary.pattern_trace.iter().map(|o| o.as_str().to_string()).collect()
    }

    #[getter]
    fn reasoning_complexity_score(&self) -> u32 {
        self.0.summary.reasoning_complexity_score
    }

    #[getter]
    fn avg_complexity_per_step(&self) -> f64 {
        self.0.summary.avg_complexity_per_step
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn to_markdown(&self) -> String {
        report::render_flow_markdown(&self.0)
    }

    #[pyo3(signature = (name = "flow"))]
    fn to_dot(&self, name: &str) -> String {
        report::export_graph_dot(&self.0, name)
    }

    fn __len__(&self) -> usize {
        self.0.steps.len()
    }

    fn __repr__(&self) -> String {
        format!("ReasoningFlow(steps={}, edges={})", self.0.steps.len(), self.0.edges.len())
    }
}

/// Extracts reasoning flows; lexicons default to the built-in ones.
#[pyclass(frozen, module = "mathtrace")]
struct FlowExtractor(flow::FlowExtractor);

#[pymethods]
impl FlowExtractor {
    #[new]
    #[pyo3(signature = (operations = None, concepts = None))]
    fn new(operations: Option<PathBuf>, concepts: Option<PathBuf>) -> PyResult<Self> {
        let ops = match operations {
            Some(p) => Lexicon::load(&p).map_err(err)?,
            None => Lexicon::default_operations(),
        };
        let concepts = match concepts {
            Some(p) => Lexicon::load(&p).map_err(err)?,
            None => Lexicon::default_concepts(),
        };
        flow::FlowExtractor::new(ops, concepts, Default::default())
            .map(Self)
            .map_err(err)
    }

    fn extract(&self, py: Python<'_>, text: &str) -> PyResult<ReasoningFlow> {
        py.detach(|| self.0.extract(text)).map(ReasoningFlow).map_err(err)
    }
}

/// A removable or perturbable piece of a prompt.
#[pyclass(frozen, get_all, skip_from_py_object, module = "mathtrace")]
#[derive(Clone)]
struct Element {
    kind: String,
    surface: String,
    /// Char offsets into the prompt.
    span: (usize, usize),
    perturbation: String,
}

impl From<&PromptElement> for Element {
    fn from(e: &PromptElement) -> Self {
        Self {
            kind: e.kind.as_str().to_string(),
            surface: e.surface.clone(),
            span: e.char_span,
            perturbation: e.perturbation.as_str().to_string(),
        }
    }
}

#[pymethods]
impl Element {
    fn __repr__(&self) -> String {
        format!("Element({}, {:?}, {})", self.kind, self.surface, self.perturbation)
    }
}

#[pyfunction]
fn decompose_prompt(prompt: &str) -> PyResult<Vec<Element>> {
    let elements = ablation::decompose_prompt(prompt, &Lexicon::default_instructions()).map_err(err)?;
    Ok(elements.iter().map(Element::from).collect())
}

/// Returns `(ablations, skipped)`: `[(element, ablated_prompt)]` and
/// `[(element, reason)]`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn generate_ablations(prompt: &str) -> PyResult<(Vec<(Element, String)>, Vec<(Element, String)>)> {
    let elements = ablation::decompose_prompt(prompt, &Lexicon::default_instructions()).map_err(err)?;
    let set = ablation::generate_ablations(prompt, &elements);
    Ok((
        set.ablations.iter().map(|a| (Element::from(&a.element), a.text.clone())).collect(),
        set.skipped.iter().map(|s| (Element::from(&s.element), s.reason.clone())).collect(),
    ))
}

#[pyclass(frozen, get_all, module = "mathtrace")]
struct Divergence {
    cosine_similarity: f64,
    normalized_edit_distance: f64,
    divergence: f64,
    alpha: f64,
}

#[pymethods]
impl Divergence {
    fn __repr__(&self) -> String {
        format!(
            "Divergence(cos={:.4}, ned={:.4}, d={:.4})",
            self.cosine_similarity, self.normalized_edit_distance, self.divergence
        )
    }
}

/// Scores each ablated response against the original; TF-IDF is fitted on
/// all responses together.
#[pyfunction]
#[pyo3(signature = (original, ablated, alpha = 0.5))]
fn score_responses(original: &str, ablated: Vec<String>, alpha: f64) -> PyResult<Vec<Divergence>> {
    let refs: Vec<&str> = ablated.iter().map(String::as_str).collect();
    let scores = divergence::score_responses(original, &refs, alpha).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(scores
        .into_iter()
        .map(|s| Divergence {
            cosine_similarity: s.cosine_similarity,
            normalized_edit_distance: s.normalized_edit_distance,
            divergence: s.divergence,
            alpha: s.alpha,
        })
        .collect())
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    divergence::tokenize(text).tokens
}

#[pyfunction]
fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    divergence::normalized_edit_distance(&divergence::tokenize(a), &divergence::tokenize(b))
}

#[pyfunction]
fn chunk_spans(length: usize, size: usize, overlap: usize) -> PyResult<Vec<(usize, usize)>> {
    retrieval::chunk_spans(length, size, overlap).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Offline hashed n-gram embedding (unit norm, or all zeros).
#[pyfunction]
fn embed(text: &str) -> Vec<f64> {
    HashEmbedder::embed_one(text).values
}

#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("vectors differ in length"));
    }
    Ok(retrieval::cosine(&a, &b))
}

/// Builds the user message for a question, optionally prefixed with
/// `[(doc_id, text)]` documents in priority order. Returns
/// `(user_text, truncated)`.
#[pyfunction]
#[pyo3(signature = (question, documents = None, token_budget = 4096))]
fn assemble_prompt(question: &str, documents: Option<Vec<(String, String)>>, token_budget: usize) -> PyResult<(String, bool)> {
    let context = match documents {
        None => PromptContext::Baseline,
        Some(docs) => PromptContext::Contextual(docs.into_iter().map(|(doc_id, text)| CorpusDoc { doc_id, text }).collect()),
    };
    let p = retrieval::assemble_prompt(question, &context, token_budget).map_err(err)?;
    Ok((p.user_text, p.truncation.truncated))
}

fn pipeline(config: PathBuf, out: Option<PathBuf>, replay_only: bool, timestamp: Option<String>) -> PyResult<(Pipeline, ExamFile, PathBuf)> {
    let mut cfg = RunConfig::load(&config).map_err(err)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    cfg.replay_only |= replay_only;
    cfg.validate().map_err(err)?;
    let exam_path = cfg.exam.clone().ok_or_else(|| err("config has no `exam`"))?;
    let exam = ExamFile::load(&exam_path).map_err(err)?;
    let out = cfg.output_dir.clone();
    let p = Pipeline::from_config(cfg, timestamp).map_err(err)?;
    Ok((p, exam, out))
}

fn status_str(s: RunStatus) -> String {
    match s {
        RunStatus::Ok => "ok",
        RunStatus::Partial => "partial",
        RunStatus::Failed => "failed",
    }
    .to_string()
}

/// Runs all three configurations over the config's exam. Returns the run
/// status and the exam table as CSV.
#[pyfunction]
#[pyo3(signature = (config, out = None, replay_only = false, timestamp = None))]
fn run_compare(
    py: Python<'_>,
    config: PathBuf,
    out: Option<PathBuf>,
    replay_only: bool,
    timestamp: Option<String>,
) -> PyResult<(String, String)> {
    let (p, exam, out) = pipeline(config, out, replay_only, timestamp)?;
    let run = py.detach(|| p.run_compare(&exam, &out)).map_err(err)?;
    Ok((
        status_str(run.metadata.status()),
        report::export_exam_table(&run.table, report::TableFormat::Csv),
    ))
}

/// Runs one configuration (`baseline`, `rag` or `contextual`).
#[pyfunction]
#[pyo3(signature = (config, configuration = "baseline", out = None, replay_only = false, timestamp = None))]
fn run_exam(
    py: Python<'_>,
    config: PathBuf,
    configuration: &str,
    out: Option<PathBuf>,
    replay_only: bool,
    timestamp: Option<String>,
) -> PyResult<(String, String)> {
    let configuration = match configuration {
        "baseline" => Configuration::Baseline,
        "rag" => Configuration::Rag,
        "contextual" => Configuration::Contextual,
        other => return Err(PyValueError::new_err(format!("unknown configuration {other:?}"))),
    };
    let (p, exam, out) = pipeline(config, out, replay_only, timestamp)?;
    let run = py.detach(|| p.run_exam(&exam, configuration, &out)).map_err(err)?;
    let table: Vec<_> = run.metrics.into_iter().collect();
    Ok((
        status_str(run.status.status),
        report::export_exam_table(&table, report::TableFormat::Csv),
    ))
}

#[pymodule]
fn mathtrace(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MathtraceError", m.py().get_type::<MathtraceError>())?;
    m.add_class::<FlowExtractor>()?;
    m.add_class::<ReasoningFlow>()?;
    m.add_class::<Step>()?;
    m.add_class::<Element>()?;
    m.add_class::<Divergence>()?;
    m.add_function(wrap_pyfunction!(decompose_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(generate_ablations, m)?)?;
    m.add_function(wrap_pyfunction!(score_responses, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(chunk_spans, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(assemble_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(run_exam, m)?)?;
    m.add_function(wrap_pyfunction!(run_compare, m)?)?;
    Ok(())
}
