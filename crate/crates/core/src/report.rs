//! Per-question reports, reasoning-graph DOT export and exam metric tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::flow::{AnnotatedStep, EdgeKind, FlowSummary, Operation, ReasoningFlow};
use crate::metrics::{ElementImpact, ExamMetrics};
use crate::retrieval::Truncation;

pub const ABLATION_HEADER: &str = "Ablation Analysis Results";
pub const FLOW_HEADER: &str = "Reasoning Flow Analysis";
pub const STEPS_HEADER: &str = "Detailed Reasoning Steps";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Markdown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDetail {
    pub text: String,
    pub operations: Vec<String>,
    pub concepts: Vec<String>,
    pub complexity: String,
}

impl From<&AnnotatedStep> for StepDetail {
    fn from(step: &AnnotatedStep) -> Self {
        Self {
            text: step.raw.text.clone(),
            operations: step.operations.iter().map(|o| o.name.as_str().to_string()).collect(),
            concepts: step.concepts.iter().map(|c| c.name.clone()).collect(),
            complexity: step.complexity.level.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub configuration: String,
    pub alpha: f64,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub truncation: Truncation,
    /// Ablations skipped as degenerate, with reasons.
    pub skipped_ablations: Vec<String>,
    /// Trials whose query failed, with reasons.
    pub failed_trials: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricCriterion {
    pub name: String,
    pub weight_percent: u32,
    pub description: String,
}

/// Grading rubric attached to reports for human graders; never auto-applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricSchema {
    pub criteria: Vec<RubricCriterion>,
}

impl RubricSchema {
    pub fn total(&self) -> u32 {
        self.criteria.iter().map(|c| c.weight_percent).sum()
    }

    pub fn is_valid(&self) -> bool {
        self.total() == 100
    }
}

impl Default for RubricSchema {
    fn default() -> Self {
        let c = |name: &str, weight_percent, description: &str| RubricCriterion {
            name: name.to_string(),
            weight_percent,
            description: description.to_string(),
        };
        Self {
            criteria: vec![
                c("Correct Method / Setup", 30, "Choice of technique, bounds and parameterization."),
                c("Execution/Computation", 40, "Algebra, arithmetic and calculus carried out correctly and in order."),
                c("Correct Final Answer", 10, "Final value or expression, suitably simplified."),
                c("Mathematical Notation & Units", 10, "Notation used correctly; units given where relevant."),
                c("Clarity/Explanation", 10, "Work is legible and the reasoning is stated."),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    /// UTC, `YYYYMMDD_HHMMSS`.
    pub timestamp: String,
    pub model_name: String,
    pub question_id: String,
    pub question_text: String,
    pub robustness: f64,
    pub phrase_sensitivity: f64,
    /// Ranked, most influential first.
    pub impacts: Vec<ElementImpact>,
    pub flow_summary: FlowSummary,
    pub detailed_steps: Vec<StepDetail>,
    pub run_metadata: ReportMetadata,
    pub rubric: RubricSchema,
}

fn join_or_none<S: AsRef<str>>(items: &[S]) -> String {
    if items.is_empty() {
        "none".to_string()
    } else {
        items.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(", ")
    }
}

fn pattern_names(trace: &[Operation]) -> Vec<&'static str> {
    trace.iter().map(|o| o.as_str()).collect()
}

fn write_flow_sections(out: &mut String, s: &FlowSummary, steps: &[StepDetail]) {
    let _ = writeln!(out, "## {FLOW_HEADER}\n");
    let _ = writeln!(out, "Total steps: {}\n", s.total_steps);
    let _ = writeln!(out, "Complexity score: {}\n", s.reasoning_complexity_score);
    let _ = writeln!(out, "Reasoning patterns: {}\n", join_or_none(&pattern_names(&s.pattern_trace)));
    let _ = writeln!(out, "Total operations: {}\n", s.total_operation_count);
    let _ = writeln!(out, "Unique concepts: {}\n", s.unique_concepts);
    let _ = writeln!(out, "Average complexity per step: {:.2}\n", s.avg_complexity_per_step);

    let _ = writeln!(out, "## {STEPS_HEADER}\n");
    if steps.is_empty() {
        out.push_str("none\n\n");
    }
    for (i, step) in steps.iter().enumerate() {
        let _ = writeln!(out, "{}. {}", i + 1, step.text.split_whitespace().collect::<Vec<_>>().join(" "));
        let _ = writeln!(out, "   - Operations: {}", join_or_none(&step.operations));
        let _ = writeln!(out, "   - Concepts: {}", join_or_none(&step.concepts));
        let _ = writeln!(out, "   - Complexity: {}\n", step.complexity);
    }
}

/// Flow summary and step details of a saved response, without ablation.
pub fn render_flow_markdown(flow: &ReasoningFlow) -> String {
    let steps: Vec<StepDetail> = flow.steps.iter().map(StepDetail::from).collect();
    let mut out = String::new();
    write_flow_sections(&mut out, &flow.summary, &steps);
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}

pub fn render_markdown(report: &AnalysisReport) -> String {
    let mut out = String::new();
    let m = &report.run_metadata;
    let _ = writeln!(out, "# Attention Analysis Report: {}\n", report.question_id);
    let _ = writeln!(out, "Timestamp: {}\n", report.timestamp);
    let _ = writeln!(out, "Model: {}\n", report.model_name);
    let _ = writeln!(out, "Configuration: {}\n", m.configuration);
    let _ = writeln!(out, "Alpha: {}\n", m.alpha);
    let _ = writeln!(out, "## Question Analyzed\n\n{}\n", report.question_text.trim());

    let _ = writeln!(out, "## {ABLATION_HEADER}\n");
    if report.impacts.is_empty() {
        out.push_str("none\n\n");
    }
    for impact in &report.impacts {
        let _ = writeln!(out, "Important phrase: {}  Impact: {:.3}\n", impact.element_surface, impact.impact);
    }
    let _ = writeln!(out, "Robustness: {:.3}\n", report.robustness);
    let _ = writeln!(out, "Phrase sensitivity: {:.3}\n", report.phrase_sensitivity);
    if !m.skipped_ablations.is_empty() {
        let _ = writeln!(out, "Skipped ablations: {}\n", m.skipped_ablations.join("; "));
    }
    if !m.failed_trials.is_empty() {
        let _ = writeln!(out, "Failed trials: {}\n", m.failed_trials.join("; "));
    }

    write_flow_sections(&mut out, &report.flow_summary, &report.detailed_steps);

    if m.truncation.truncated {
        let _ = writeln!(
            out,
            "Context truncated: shortened {}, dropped {}\n",
            m.truncation.shortened.as_deref().unwrap_or("none"),
            join_or_none(&m.truncation.dropped)
        );
    }
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}

pub fn render_json(report: &AnalysisReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn render_question_report(report: &AnalysisReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Json => render_json(report),
    }
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// DOT digraph: one box per step labelled `S<n>: <dominant op>` (1-based),
/// solid sequential edges and dashed reference edges.
pub fn export_graph_dot(flow: &ReasoningFlow, name: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", dot_quote(name));
    out.push_str("  rankdir=TB;\n  node [shape=box];\n");
    for (i, step) in flow.steps.iter().enumerate() {
        let label = format!("S{}: {}", i + 1, step.dominant_operation().as_str());
        let _ = writeln!(out, "  s{} [label={}];", i + 1, dot_quote(&label));
    }
    for e in &flow.edges {
        let style = match e.kind {
            EdgeKind::Sequential => "solid",
            EdgeKind::Reference => "dashed",
        };
        let _ = writeln!(out, "  s{} -> s{} [style={style}];", e.from + 1, e.to + 1);
    }
    out.push_str("}\n");
    out
}

pub const TABLE_COLUMNS: [&str; 7] = [
    "Course",
    "Exam",
    "Model",
    "Robustness",
    "Complexity",
    "Step Count",
    "Phrase Sensitivity",
];

/// Rows ordered by course, exam, then configuration (B < R < C).
pub fn sorted_rows(metrics: &[ExamMetrics]) -> Vec<&ExamMetrics> {
    let mut rows: Vec<&ExamMetrics> = metrics.iter().collect();
    rows.sort_by(|a, b| {
        (a.course.as_str(), a.exam_id.as_str(), a.configuration).cmp(&(b.course.as_str(), b.exam_id.as_str(), b.configuration))
    });
    rows
}

fn row_cells(m: &ExamMetrics) -> [String; 7] {
    [
        m.course.clone(),
        m.exam_id.clone(),
        m.configuration.code().to_string(),
        format!("{:.3}", m.robustness.mean),
        format!("{:.1}", m.complexity.mean),
        format!("{:.1}", m.step_count.mean),
        format!("{:.3}", m.phrase_sensitivity.mean),
    ]
}

pub fn export_exam_table(metrics: &[ExamMetrics], format: TableFormat) -> String {
    let rows = sorted_rows(metrics);
    match format {
        TableFormat::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            w.write_record(TABLE_COLUMNS).expect("write to memory");
            for m in rows {
                w.write_record(row_cells(m)).expect("write to memory");
            }
            String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 cells")
        }
        TableFormat::Markdown => {
            let mut out = format!("| {} |\n", TABLE_COLUMNS.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(TABLE_COLUMNS.len()));
            for m in rows {
                let cells = row_cells(m).map(|c| c.replace('|', "\\|"));
                let _ = writeln!(out, "| {} |", cells.join(" | "));
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ablation::ElementKind;
    use crate::flow::FlowExtractor;
    use crate::metrics::{Configuration, MetricStats};

    fn impact(surface: &str, value: f64) -> ElementImpact {
        ElementImpact {
            element_surface: surface.into(),
            element_kind: ElementKind::MathExpression,
            impact: value,
        }
    }

    fn report(impacts: Vec<ElementImpact>, flow: &ReasoningFlow) -> AnalysisReport {
        AnalysisReport {
            timestamp: "20250724_182112".into(),
            model_name: "gemma3:latest".into(),
            question_id: "grad_q1".into(),
            question_text: "Find the gradient ∇f of f(x, y) = x^2y at point (-1, 4)".into(),
            robustness: 0.5,
            phrase_sensitivity: 0.63,
            impacts,
            flow_summary: flow.summary.clone(),
            detailed_steps: flow.steps.iter().map(StepDetail::from).collect(),
            run_metadata: ReportMetadata {
                configuration: "baseline".into(),
                alpha: 0.5,
                temperature: 0.0,
                max_tokens: None,
                truncation: Truncation::default(),
                skipped_ablations: vec![],
                failed_trials: vec![],
            },
            rubric: RubricSchema::default(),
        }
    }

    fn flow() -> ReasoningFlow {
        FlowExtractor::default()
            .extract("1. Differentiate f to get f' = 2x.\n2. Evaluate f' at x = 3.\n3. Using step 1, compute the limit.")
            .unwrap()
    }

    #[test]
    fn markdown_sections_and_impact_lines() {
        let r = report(vec![impact("(-1, 4)", 0.630), impact("∇f", 0.5624)], &flow());
        let md = render_markdown(&r);
        let a = md.find(ABLATION_HEADER).unwrap();
        let f = md.find(FLOW_HEADER).unwrap();
        let s = md.find(STEPS_HEADER).unwrap();
        assert!(a < f && f < s);
        assert!(md.lines().any(|l| l == "Important phrase: (-1, 4)  Impact: 0.630"));
        assert!(md.lines().any(|l| l == "Important phrase: ∇f  Impact: 0.562"));
        assert!(md.contains("Total steps: 3"));
        assert!(md.contains("Complexity score: "));
        assert!(md.contains("Reasoning patterns: differentiation, evaluation"));
    }

    #[test]
    fn empty_sections_say_none() {
        let mut empty = flow();
        empty.steps.clear();
        empty.summary.pattern_trace.clear();
        let md = render_markdown(&report(vec![], &empty));
        let section = &md[md.find(ABLATION_HEADER).unwrap()..md.find(FLOW_HEADER).unwrap()];
        assert!(section.contains("\nnone\n"));
        assert!(md.contains("Reasoning patterns: none"));
        assert!(md[md.find(STEPS_HEADER).unwrap()..].contains("none"));
    }

    #[test]
    fn flow_only_rendering() {
        let md = render_flow_markdown(&flow());
        assert!(md.starts_with("## Reasoning Flow Analysis"));
        assert!(md.contains("Total steps: 3"));
        assert!(!md.contains(ABLATION_HEADER));
    }

    #[test]
    fn json_roundtrip_is_byte_identical() {
        let r = report(vec![impact("(-1, 4)", 0.1 + 0.2)], &flow());
        let json = render_json(&r);
        let back: AnalysisReport = serde_json::from_str(&json).unwrap();
        assert_eq!(render_json(&back), json);
        assert_eq!(render_markdown(&back), render_markdown(&r));
    }

    #[test]
    fn dot_export_counts() {
        let one = FlowExtractor::default().extract("Differentiate x^2.").unwrap();
        let dot = export_graph_dot(&one, "q");
        assert_eq!(dot.matches("[label=").count(), 1);
        assert_eq!(dot.matches("->").count(), 0);
        let three = flow();
        let dot = export_graph_dot(&three, "q");
        assert_eq!(dot.matches("style=solid").count(), 2);
        assert_eq!(dot.matches("style=dashed").count(), 1);
        assert!(dot.contains("s1 [label=\"S1: differentiation\"]"));
        assert!(dot.contains("s1 -> s3 [style=dashed]"));
    }

    fn exam(course: &str, exam_id: &str, configuration: Configuration, robustness: f64) -> ExamMetrics {
        let s = |mean| MetricStats { mean, std_dev: 0.0, n: 8 };
        ExamMetrics {
            course: course.into(),
            exam_id: exam_id.into(),
            configuration,
            robustness: s(robustness),
            complexity: s(19.25),
            step_count: s(6.375),
            phrase_sensitivity: s(0.4449),
        }
    }

    #[test]
    fn table_precision_and_order() {
        let rows = vec![
            exam("Calc I", "Exam II", Configuration::Baseline, 0.7),
            exam("Calc I", "Exam I", Configuration::Contextual, 0.7519),
            exam("Calc I", "Exam I", Configuration::Baseline, 0.7),
            exam("Calc I", "Exam I", Configuration::Rag, 0.7),
        ];
        let csv = export_exam_table(&rows, TableFormat::Csv);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "Course,Exam,Model,Robustness,Complexity,Step Count,Phrase Sensitivity");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("Calc I,Exam I,B,"));
        assert!(lines[2].starts_with("Calc I,Exam I,R,"));
        assert_eq!(lines[3], "Calc I,Exam I,C,0.752,19.2,6.4,0.445");
        assert!(lines[4].starts_with("Calc I,Exam II,B,"));

        let md = export_exam_table(&rows, TableFormat::Markdown);
        assert!(md.starts_with("| Course | Exam | Model | Robustness | Complexity | Step Count | Phrase Sensitivity |"));
        assert_eq!(md.lines().count(), 6);
    }

    #[test]
    fn csv_quotes_awkward_names() {
        let csv = export_exam_table(&[exam("Calc, Honors", "E\"1", Configuration::Rag, 0.5)], TableFormat::Csv);
        assert!(csv.lines().nth(1).unwrap().starts_with("\"Calc, Honors\",\"E\"\"1\",R,"));
    }

    #[test]
    fn default_rubric_sums_to_100() {
        let r = RubricSchema::default();
        assert!(r.is_valid());
        let weights: Vec<u32> = r.criteria.iter().map(|c| c.weight_percent).collect();
        assert_eq!(weights, vec![30, 40, 10, 10, 10]);
    }
}
