//! Exam files.
//!
//! ```text
//! # calc3_exam1
//! Course: Calc III
//!
//! ## grad_q1
//! For f(x, y) = x^2y,
//! (a) Find ∇f
//! (b) Find the maximum rate of change at (-1, 4)
//! ```
//!
//! The `#` line names the exam; an optional `Course:` line may follow.
//! Each `##` section is one question whose body is the prompt. Lines that
//! start with `(a)`, `(b)`, ... are also listed as sub-parts.

use std::collections::HashSet;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExamError {
    #[error("line {0}: expected `# <exam_id>` before anything else")]
    MissingHeader(usize),
    #[error("line {line}: unexpected text outside a question section")]
    StrayText { line: usize },
    #[error("question id {0:?} is used twice")]
    DuplicateId(String),
    #[error("line {0}: question section has no id")]
    MissingId(usize),
    #[error("question {0:?} has an empty prompt")]
    EmptyPrompt(String),
    #[error("exam has no questions")]
    NoQuestions,
    #[error("reading exam {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamQuestion {
    pub id: String,
    pub prompt: String,
    pub parts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamFile {
    pub exam_id: String,
    pub course: Option<String>,
    pub questions: Vec<ExamQuestion>,
}

static PART_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\([a-z]\)\s").unwrap());

impl ExamFile {
    pub fn parse(text: &str) -> Result<Self, ExamError> {
        let mut exam_id: Option<String> = None;
        let mut course = None;
        let mut sections: Vec<(String, Vec<&str>)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let trimmed = line.trim();
            if let Some(id) = trimmed.strip_prefix("## ") {
                if exam_id.is_none() {
                    return Err(ExamError::MissingHeader(n));
                }
                let id = id.trim();
                if id.is_empty() {
                    return Err(ExamError::MissingId(n));
                }
                sections.push((id.to_string(), Vec::new()));
            } else if let Some((_, body)) = sections.last_mut() {
                body.push(line);
            } else if exam_id.is_none() {
                if trimmed.is_empty() {
                    continue;
                }
                match trimmed.strip_prefix("# ") {
                    Some(id) if !id.trim().is_empty() => exam_id = Some(id.trim().to_string()),
                    _ => return Err(ExamError::MissingHeader(n)),
                }
            } else if let Some(name) = trimmed.strip_prefix("Course:") {
                course = Some(name.trim().to_string());
            } else if !trimmed.is_empty() {
                return Err(ExamError::StrayText { line: n });
            }
        }
        let exam_id = exam_id.ok_or(ExamError::MissingHeader(1))?;
        if sections.is_empty() {
            return Err(ExamError::NoQuestions);
        }
        let mut seen = HashSet::new();
        let mut questions = Vec::with_capacity(sections.len());
        for (id, body) in sections {
            if !seen.insert(id.clone()) {
                return Err(ExamError::DuplicateId(id));
            }
            let prompt = body.join("\n").trim().to_string();
            if prompt.is_empty() {
                return Err(ExamError::EmptyPrompt(id));
            }
            let parts = body
                .iter()
                .map(|l| l.trim())
                .filter(|l| PART_RE.is_match(l))
                .map(str::to_string)
                .collect();
            questions.push(ExamQuestion { id, prompt, parts });
        }
        Ok(Self {
            exam_id,
            course,
            questions,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ExamError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExamError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn question(&self, id: &str) -> Option<&ExamQuestion> {
        self.questions.iter().find(|q| q.id == id)
    }
}
