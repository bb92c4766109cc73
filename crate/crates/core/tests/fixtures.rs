//! End-to-end checks against the committed fixtures.

mod common;

use std::sync::Arc;

use mathtrace_core::exam::ExamFile;
use mathtrace_core::flow::FlowExtractor;
use mathtrace_core::gateway::{ChatBackend, CompletionRequest, Gateway, GatewayError, ReplayCache};
use mathtrace_core::metrics::Configuration;
use mathtrace_core::pipeline::{Pipeline, PipelineError, QuestionError, RunStatus};
use mathtrace_core::report::export_graph_dot;
use mathtrace_core::retrieval::{
    assemble_prompt, count_tokens, cosine, filter_segments, load_corpus_dir, load_manifest, HashEmbedder,
    PromptContext, RetrievalConfig, RetrievalError,
};

use common::{fixture_config, fixtures, FixtureModel, TIMESTAMP};

fn exam() -> ExamFile {
    ExamFile::load(&fixtures().join("exam/calc3_exam1.md")).unwrap()
}

fn replay_pipeline() -> Pipeline {
    let mut config = fixture_config();
    config.replay_only = true;
    Pipeline::from_config(config, Some(TIMESTAMP.into())).unwrap()
}

#[test]
fn exam_fixture_shape() {
    let exam = exam();
    assert_eq!(exam.exam_id, "Exam I");
    assert_eq!(exam.course.as_deref(), Some("Calc III"));
    assert_eq!(exam.questions.len(), 8);
    assert_eq!(exam.question("grad_q1").unwrap().parts.len(), 4);
}

#[test]
fn keyword_filter_keeps_hand_counted_paragraphs() {
    let docs = load_corpus_dir(&fixtures().join("corpus")).unwrap();
    let total: usize = docs.iter().map(|d| mathtrace_core::retrieval::paragraphs(&d.text).len()).sum();
    assert_eq!(total, 12);
    let segments = filter_segments(&docs, &RetrievalConfig::default().keywords).unwrap();
    let kept: Vec<(&str, usize)> = segments.iter().map(|s| (s.doc_id.as_str(), s.paragraph)).collect();
    // singular "derivative"/"integral", "integration" and "optimizations"
    // are not whole-word keyword hits
    assert_eq!(
        kept,
        vec![
            ("ch1_derivatives.md", 1),
            ("ch1_derivatives.md", 3),
            ("ch1_derivatives.md", 4),
            ("ch2_integrals.md", 0),
            ("ch2_integrals.md", 2),
            ("ch2_integrals.md", 3),
            ("ch2_integrals.md", 4),
        ]
    );
}

#[test]
fn ingest_snapshot_has_hand_counted_chunks_and_is_reproducible() {
    let pipeline = replay_pipeline();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let index = pipeline.run_ingest(&fixtures().join("corpus"), &a).unwrap();
    // retained paragraph lengths 170, 178, 171, 99, 100, 166, 122 chars with
    // size 120 / stride 90 give 2 + 2 + 2 + 1 + 1 + 2 + 2 chunks
    assert_eq!(index.len(), 12);
    pipeline.run_ingest(&fixtures().join("corpus"), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let empty = tempfile::tempdir().unwrap();
    let err = pipeline.run_ingest(empty.path(), &dir.path().join("c.json")).unwrap_err();
    assert!(err.to_string().contains("empty"), "{err}");
}

#[test]
fn fallback_embedder_prefers_near_duplicates() {
    let triples = [
        (
            "the derivative of a function measures its rate of change",
            "the derivative of a fucntion measures its rate of change",
            "geometric series converge when the ratio is below one",
        ),
        (
            "integrate by substitution and add the constant",
            "integrate by substitution and add the constnat",
            "the gradient points in the direction of steepest ascent",
        ),
        (
            "set the derivative to zero and solve for critical points",
            "set the derivative to zero then solve for critical points",
            "lagrange multipliers handle constrained problems",
        ),
    ];
    for (a, typo, unrelated) in triples {
        let va = HashEmbedder::embed_one(a);
        let near = cosine(&va.values, &HashEmbedder::embed_one(typo).values);
        let far = cosine(&va.values, &HashEmbedder::embed_one(unrelated).values);
        assert!(near > far, "{a:?}: {near} <= {far}");
    }
}

#[test]
fn contextual_budget_truncates_lowest_priority_document() {
    let docs = load_manifest(&fixtures().join("contextual/manifest.txt")).unwrap();
    assert_eq!(docs.len(), 3);
    let exam = exam();
    let question = &exam.question("grad_q1").unwrap().prompt;
    assert_eq!(count_tokens(question), 48);
    // 48 + 3 overhead, then 68 and 42 tokens of documents, leaving 39 for
    // the last document's citation and 38 of its words
    let p = assemble_prompt(question, &PromptContext::Contextual(docs.clone()), 200).unwrap();
    assert!(p.truncation.truncated);
    assert_eq!(p.truncation.shortened.as_deref(), Some("[integration_notes.md]"));
    assert!(p.truncation.dropped.is_empty());
    assert_eq!(count_tokens(&p.user_text), 200);
    assert!(p.user_text.contains("[gradient_notes.md] Gradient notes."));

    let short = &exam.question("chain_q3").unwrap().prompt;
    let p = assemble_prompt(short, &PromptContext::Contextual(docs), 200).unwrap();
    assert!(!p.truncation.truncated);
}

#[test]
fn gradient_solution_step_five_concepts() {
    let text = std::fs::read_to_string(fixtures().join("solutions/grad_q1.txt")).unwrap();
    let flow = FlowExtractor::default().extract(&text).unwrap();
    let concepts: Vec<&str> = flow.steps[4].concepts.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(concepts, ["gradient", "directional derivative"]);
}

#[test]
fn analyze_in_replay_ranks_impacts() {
    let pipeline = replay_pipeline();
    let out = tempfile::tempdir().unwrap();
    let q = exam().question("grad_q1").unwrap().clone();
    let outcome = pipeline.run_analyze(&q, Configuration::Baseline, out.path()).unwrap();
    assert!(outcome.report.impacts.len() >= 4);
    assert!(outcome.report.impacts.windows(2).all(|w| w[0].impact >= w[1].impact));
    assert_eq!(outcome.live_responses, 0);
}

#[test]
fn replay_miss_names_the_question() {
    let mut config = fixture_config();
    config.replay_only = true;
    let empty = tempfile::tempdir().unwrap();
    config.cache_dir = empty.path().to_path_buf();
    let pipeline = Pipeline::from_config(config, Some(TIMESTAMP.into())).unwrap();
    let q = exam().question("limit_q2").unwrap().clone();
    let err = pipeline.run_analyze(&q, Configuration::Baseline, &empty.path().join("out")).unwrap_err();
    match err {
        PipelineError::Question { question_id, source } => {
            assert_eq!(question_id, "limit_q2");
            assert!(matches!(source, QuestionError::Original(GatewayError::ReplayMiss { .. })), "{source}");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn baseline_exam_in_replay_gives_one_row_of_eight() {
    let out = tempfile::tempdir().unwrap();
    let run = replay_pipeline().run_exam(&exam(), Configuration::Baseline, out.path()).unwrap();
    assert_eq!(run.status.status, RunStatus::Ok);
    assert_eq!(run.metrics.as_ref().unwrap().robustness.n, 8);
    let csv = std::fs::read_to_string(out.path().join("exam_metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("Calc III,Exam I,B,"));
}

/// Refuses the series question, answers everything else like the fixture model.
struct RefuseSeries;

impl ChatBackend for RefuseSeries {
    fn chat(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        if request.user_text.contains("n/2^n") {
            return Err(GatewayError::HttpError {
                status: 400,
                body: "refused".into(),
            });
        }
        FixtureModel.chat(request)
    }
}

#[test]
fn failed_question_reduces_n_and_is_recorded() {
    let config = fixture_config();
    let gateway = Gateway::new(Some(Arc::new(RefuseSeries)), None::<ReplayCache>);
    let pipeline = Pipeline::with_gateway(config, gateway, Some(TIMESTAMP.into())).unwrap();
    let out = tempfile::tempdir().unwrap();
    let run = pipeline.run_exam(&exam(), Configuration::Baseline, out.path()).unwrap();
    assert_eq!(run.status.status, RunStatus::Partial);
    assert_eq!(run.metrics.as_ref().unwrap().robustness.n, 7);
    assert_eq!(run.status.failures.len(), 1);
    assert_eq!(run.status.failures[0].question_id, "series_q7");
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("run_metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["configurations"][0]["questions_succeeded"], 7);
}

#[test]
fn missing_corpus_isolates_rag_configuration() {
    let mut config = fixture_config();
    config.replay_only = true;
    config.retrieval.corpus_dir = Some(fixtures().join("no_such_corpus"));
    let pipeline = Pipeline::from_config(config, Some(TIMESTAMP.into())).unwrap();
    let out = tempfile::tempdir().unwrap();
    let run = pipeline.run_compare(&exam(), out.path()).unwrap();
    assert_eq!(run.metadata.status(), RunStatus::Partial);
    let codes: Vec<&str> = run.table.iter().map(|m| m.configuration.code()).collect();
    assert_eq!(codes, ["B", "C"]);
    let rag = run.metadata.configurations.iter().find(|c| c.configuration == Configuration::Rag).unwrap();
    assert_eq!(rag.status, RunStatus::Failed);
    assert!(rag.error.as_deref().unwrap().contains("no_such_corpus"));
    let csv = std::fs::read_to_string(out.path().join("exam_metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn empty_corpus_is_an_error() {
    let empty = tempfile::tempdir().unwrap();
    let docs = load_corpus_dir(empty.path()).unwrap_or_default();
    assert!(matches!(filter_segments(&docs, &["x".into()]), Err(RetrievalError::EmptyCorpus)));
}

// ---------------------------------------------------------------------------
// DOT grammar

/// Recursive-descent checker for the DOT language (graph, node, edge and
/// attribute statements, subgraphs, all four ID forms, comments).
mod dot {
    #[derive(Debug, Clone, PartialEq)]
    enum Tok {
        Id(String),
        Punct(char),
        Arrow(&'static str),
    }

    fn lex(src: &str) -> Result<Vec<Tok>, String> {
        let chars: Vec<char> = src.chars().collect();
        let mut i = 0;
        let mut out = Vec::new();
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c == '/' && chars.get(i + 1) == Some(&'/') || c == '#' {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            } else if c == '/' && chars.get(i + 1) == Some(&'*') {
                i += 2;
                while i + 1 < chars.len() && !(chars[i] == '*' && chars[i + 1] == '/') {
                    i += 1;
                }
                i += 2;
            } else if c == '-' && matches!(chars.get(i + 1), Some('>') | Some('-')) {
                out.push(Tok::Arrow(if chars[i + 1] == '>' { "->" } else { "--" }));
                i += 2;
            } else if "{}[];,=:".contains(c) {
                out.push(Tok::Punct(c));
                i += 1;
            } else if c == '"' {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err("unterminated string".into()),
                        Some('"') => break,
                        Some('\\') if chars.get(i + 1).is_some() => {
                            s.push(chars[i + 1]);
                            i += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                i += 1;
                out.push(Tok::Id(s));
            } else if c.is_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Tok::Id(chars[start..i].iter().collect()));
            } else if c.is_ascii_digit() || c == '.' || c == '-' {
                let start = i;
                i += 1;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                out.push(Tok::Id(chars[start..i].iter().collect()));
            } else {
                return Err(format!("unexpected character {c:?}"));
            }
        }
        Ok(out)
    }

    struct Parser {
        toks: Vec<Tok>,
        pos: usize,
        directed: bool,
        nodes: usize,
        edges: usize,
    }

    impl Parser {
        fn peek(&self) -> Option<&Tok> {
            self.toks.get(self.pos)
        }

        fn punct(&mut self, c: char) -> bool {
            if self.peek() == Some(&Tok::Punct(c)) {
                self.pos += 1;
                true
            } else {
                false
            }
        }

        fn expect(&mut self, c: char) -> Result<(), String> {
            if self.punct(c) {
                Ok(())
            } else {
                Err(format!("expected {c:?} at token {}, found {:?}", self.pos, self.peek()))
            }
        }

        fn id(&mut self) -> Result<String, String> {
            match self.peek().cloned() {
                Some(Tok::Id(s)) => {
                    self.pos += 1;
                    Ok(s)
                }
                other => Err(format!("expected ID at token {}, found {other:?}", self.pos)),
            }
        }

        fn keyword(&mut self, kw: &str) -> bool {
            if matches!(self.peek(), Some(Tok::Id(s)) if s.eq_ignore_ascii_case(kw)) {
                self.pos += 1;
                true
            } else {
                false
            }
        }

        fn graph(&mut self) -> Result<(), String> {
            self.keyword("strict");
            if self.keyword("digraph") {
                self.directed = true;
            } else if !self.keyword("graph") {
                return Err("expected graph or digraph".into());
            }
            if matches!(self.peek(), Some(Tok::Id(_))) {
                self.id()?;
            }
            self.expect('{')?;
            self.stmt_list()?;
            self.expect('}')?;
            if self.pos != self.toks.len() {
                return Err("trailing tokens".into());
            }
            Ok(())
        }

        fn stmt_list(&mut self) -> Result<(), String> {
            while !matches!(self.peek(), Some(Tok::Punct('}')) | None) {
                self.stmt()?;
                self.punct(';');
            }
            Ok(())
        }

        fn attr_list(&mut self) -> Result<(), String> {
            while self.punct('[') {
                while !self.punct(']') {
                    self.id()?;
                    self.expect('=')?;
                    self.id()?;
                    if !self.punct(',') {
                        self.punct(';');
                    }
                }
            }
            Ok(())
        }

        fn node_or_subgraph(&mut self) -> Result<(), String> {
            if self.keyword("subgraph") || matches!(self.peek(), Some(Tok::Punct('{'))) {
                if matches!(self.peek(), Some(Tok::Id(_))) {
                    self.id()?;
                }
                self.expect('{')?;
                self.stmt_list()?;
                return self.expect('}');
            }
            self.id()?;
            if self.punct(':') {
                self.id()?;
                if self.punct(':') {
                    self.id()?;
                }
            }
            Ok(())
        }

        fn stmt(&mut self) -> Result<(), String> {
            if self.keyword("graph") || self.keyword("node") || self.keyword("edge") {
                return self.attr_list();
            }
            let start = self.pos;
            self.node_or_subgraph()?;
            if self.punct('=') {
                return self.id().map(|_| ());
            }
            let mut is_edge = false;
            while let Some(Tok::Arrow(op)) = self.peek().cloned() {
                if (op == "->") != self.directed {
                    return Err(format!("edge operator {op} in the wrong graph kind"));
                }
                self.pos += 1;
                self.node_or_subgraph()?;
                is_edge = true;
            }
            if is_edge {
                self.edges += 1;
            } else if matches!(self.toks[start], Tok::Id(_)) {
                self.nodes += 1;
            }
            self.attr_list()
        }
    }

    /// Parses `src`, returning (node statements, edge statements).
    pub fn check(src: &str) -> Result<(usize, usize), String> {
        let mut p = Parser {
            toks: lex(src)?,
            pos: 0,
            directed: false,
            nodes: 0,
            edges: 0,
        };
        p.graph()?;
        Ok((p.nodes, p.edges))
    }

    #[test]
    fn rejects_malformed_graphs() {
        assert!(check("digraph { a -> }").is_err());
        assert!(check("graph { a -> b }").is_err());
        assert!(check("digraph \"x { a }").is_err());
        assert!(check("digraph { a [label=] }").is_err());
        assert_eq!(check("strict digraph g { node [shape=box]; a -> b -> c [style=dashed]; c }"), Ok((1, 1)));
    }
}

#[test]
fn exported_graphs_parse_as_dot() {
    let labels: std::collections::BTreeMap<String, Vec<String>> = serde_json::from_str(
        &std::fs::read_to_string(fixtures().join("solutions/labels.json")).unwrap(),
    )
    .unwrap();
    let extractor = FlowExtractor::default();
    for file in labels.keys() {
        let text = std::fs::read_to_string(fixtures().join("solutions").join(file)).unwrap();
        let flow = extractor.extract(&text).unwrap();
        let src = export_graph_dot(&flow, file);
        let (nodes, edges) = dot::check(&src).unwrap_or_else(|e| panic!("{file}: {e}\n{src}"));
        assert_eq!(nodes, flow.steps.len(), "{file}");
        assert_eq!(edges, flow.edges.len(), "{file}");
    }
    // names needing escapes
    let flow = extractor.extract("Differentiate x^2.").unwrap();
    assert!(dot::check(&export_graph_dot(&flow, "q \"1\" \\ x")).is_ok());
}
