//! Shared fixtures for integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mathtrace_core::config::RunConfig;
use mathtrace_core::gateway::{ChatBackend, CompletionRequest, GatewayError};
use mathtrace_core::retrieval::CONTEXT_FOOTER;
use sha2::{Digest, Sha256};

pub const TIMESTAMP: &str = "20250101_120000";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture_config() -> RunConfig {
    RunConfig::load(&fixtures().join("run.toml")).expect("fixture config loads")
}

/// Reference solution per exam question, keyed by a distinctive fragment.
const SOLUTIONS: [(&str, &str); 8] = [
    ("x^2y", "grad_q1.txt"),
    ("(x^2-9)/(x-3)", "limit_factor.txt"),
    ("sin(x^2 + 1)", "chain_rule.txt"),
    ("2x(x^2 + 1)^3", "integral_substitution.txt"),
    ("A(x) = x(100 - 2x)", "optimization.txt"),
    ("y = x^3", "tangent_line.txt"),
    ("n/2^n", "ratio_test.txt"),
    ("x^2 + y^2 = 25", "implicit_differentiation.txt"),
];

/// Deterministic stand-in for a model. It answers with the fixture
/// solution of whichever question it recognises, dropping steps according
/// to a hash of the full request so each ablated prompt gets its own
/// answer. Used once to regenerate the frozen cache.
pub struct FixtureModel;

impl ChatBackend for FixtureModel {
    fn chat(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let user = &request.user_text;
        let question = user.rsplit(&format!("{CONTEXT_FOOTER}\n")).next().unwrap_or(user);
        let file = SOLUTIONS
            .iter()
            .find(|(key, _)| question.contains(key))
            .map(|(_, f)| *f)
            .unwrap_or("chain_rule.txt");
        let text = std::fs::read_to_string(fixtures().join("solutions").join(file)).expect("solution fixture");
        let digest = Sha256::digest(format!("{}\n{}", request.system_text, user).as_bytes());
        let mut lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        // a third of prompts get the full answer, the rest lose some steps
        if digest[0] % 3 != 0 {
            lines = lines
                .into_iter()
                .enumerate()
                .filter(|(i, _)| *i == 0 || digest[*i] % 4 != 0)
                .map(|(_, l)| l)
                .collect();
        }
        let mut answer = lines.join("\n");
        if user.starts_with("Reference material:") {
            answer.push_str("\n\nThis agrees with the reference material.");
        }
        Ok(answer)
    }
}

/// Answers every request with the same text.
pub struct ConstantModel(pub String);

impl ChatBackend for ConstantModel {
    fn chat(&self, _: &CompletionRequest) -> Result<String, GatewayError> {
        Ok(self.0.clone())
    }
}

/// Every file under `root`, relative path → bytes, sorted.
pub fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
