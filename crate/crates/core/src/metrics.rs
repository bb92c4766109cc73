//! Question-level and exam-level interpretability metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ablation::{ElementKind, PromptElement};
use crate::divergence::DivergenceScore;
use crate::flow::{Operation, ReasoningFlow};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("question {0:?} has no ablation trials")]
    NoTrials(String),
    #[error("reasoning flow for question {0:?} has no steps")]
    EmptyFlow(String),
    #[error("exam {0:?} has no scored questions")]
    NoQuestions(String),
    #[error("unknown configuration {0:?} (expected baseline, rag or contextual)")]
    UnknownConfiguration(String),
}

/// Prompting configuration a run was made under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Configuration {
    Baseline,
    Rag,
    Contextual,
}

impl Configuration {
    pub const ALL: [Configuration; 3] = [Configuration::Baseline, Configuration::Rag, Configuration::Contextual];

    pub fn as_str(self) -> &'static str {
        match self {
            Configuration::Baseline => "baseline",
            Configuration::Rag => "rag",
            Configuration::Contextual => "contextual",
        }
    }

    /// One-letter table code: B, R or C.
    pub fn code(self) -> &'static str {
        match self {
            Configuration::Baseline => "B",
            Configuration::Rag => "R",
            Configuration::Contextual => "C",
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Configuration {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" | "b" => Ok(Configuration::Baseline),
            "rag" | "r" => Ok(Configuration::Rag),
            "contextual" | "c" => Ok(Configuration::Contextual),
            other => Err(MetricsError::UnknownConfiguration(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTrial {
    pub element: PromptElement,
    pub ablated_prompt: String,
    pub ablated_response: String,
    pub score: DivergenceScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementImpact {
    pub element_surface: String,
    pub element_kind: ElementKind,
    pub impact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionMetrics {
    pub question_id: String,
    /// Mean TF-IDF cosine similarity over trials.
    pub robustness: f64,
    /// Maximum divergence over trials.
    pub phrase_sensitivity: f64,
    /// Impacts ranked from most to least influential.
    pub impacts: Vec<ElementImpact>,
    pub step_count: usize,
    pub complexity: u32,
    pub pattern_trace: Vec<Operation>,
}

pub fn question_metrics(
    question_id: &str,
    trials: &[AblationTrial],
    flow: &ReasoningFlow,
) -> Result<QuestionMetrics, MetricsError> {
    if trials.is_empty() {
        return Err(MetricsError::NoTrials(question_id.to_string()));
    }
    if flow.steps.is_empty() {
        return Err(MetricsError::EmptyFlow(question_id.to_string()));
    }
    let robustness = trials.iter().map(|t| t.score.cosine_similarity).sum::<f64>() / trials.len() as f64;
    let phrase_sensitivity = trials.iter().map(|t| t.score.divergence).fold(f64::NEG_INFINITY, f64::max);

    let mut impacts: Vec<ElementImpact> = trials
        .iter()
        .map(|t| ElementImpact {
            element_surface: t.element.surface.clone(),
            element_kind: t.element.kind,
            impact: t.score.divergence,
        })
        .collect();
    // stable: equal impacts keep trial order
    impacts.sort_by(|a, b| b.impact.total_cmp(&a.impact));

    Ok(QuestionMetrics {
        question_id: question_id.to_string(),
        robustness,
        phrase_sensitivity,
        impacts,
        step_count: flow.summary.total_steps,
        complexity: flow.summary.reasoning_complexity_score,
        pattern_trace: flow.summary.pattern_trace.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
    pub n: usize,
}

impl MetricStats {
    /// Values are summed in sorted order so the result does not depend on
    /// input order.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
        sq.sort_by(f64::total_cmp);
        let std_dev = (sq.iter().sum::<f64>() / n).sqrt();
        Some(Self { mean, std_dev, n: v.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamMetrics {
    pub course: String,
    pub exam_id: String,
    pub configuration: Configuration,
    pub robustness: MetricStats,
    pub complexity: MetricStats,
    pub step_count: MetricStats,
    pub phrase_sensitivity: MetricStats,
}

pub fn exam_aggregate(
    questions: &[QuestionMetrics],
    course: &str,
    exam_id: &str,
    configuration: Configuration,
) -> Result<ExamMetrics, MetricsError> {
    let stats = |f: fn(&QuestionMetrics) -> f64| {
        MetricStats::of(questions.iter().map(f)).ok_or_else(|| MetricsError::NoQuestions(exam_id.to_string()))
    };
    Ok(ExamMetrics {
        course: course.to_string(),
        exam_id: exam_id.to_string(),
        configuration,
        robustness: stats(|q| q.robustness)?,
        complexity: stats(|q| f64::from(q.complexity))?,
        step_count: stats(|q| q.step_count as f64)?,
        phrase_sensitivity: stats(|q| q.phrase_sensitivity)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ablation::Perturbation;
    use crate::flow::FlowExtractor;

    fn trial(surface: &str, cos: f64, ned: f64) -> AblationTrial {
        AblationTrial {
            element: PromptElement {
                kind: ElementKind::MathExpression,
                surface: surface.to_string(),
                char_span: (0, 1),
                perturbation: Perturbation::Mask,
            },
            ablated_prompt: String::new(),
            ablated_response: String::new(),
            score: DivergenceScore::combine(cos, ned, 0.5).unwrap(),
        }
    }

    fn flow() -> ReasoningFlow {
        FlowExtractor::default().extract("1. Differentiate f. 2. Evaluate at x=2.").unwrap()
    }

    fn question(id: &str, robustness: f64, sensitivity: f64, steps: usize, complexity: u32) -> QuestionMetrics {
        QuestionMetrics {
            question_id: id.to_string(),
            robustness,
            phrase_sensitivity: sensitivity,
            impacts: Vec::new(),
            step_count: steps,
            complexity,
            pattern_trace: Vec::new(),
        }
    }

    #[test]
    fn identical_responses() {
        let trials = vec![trial("a", 1.0, 0.0), trial("b", 1.0, 0.0)];
        let q = question_metrics("q", &trials, &flow()).unwrap();
        assert_eq!(q.robustness, 1.0);
        assert_eq!(q.phrase_sensitivity, 0.0);
        assert_eq!(q.step_count, 2);
    }

    #[test]
    fn one_disjoint_trial_among_k() {
        for k in 1..=6usize {
            let mut trials: Vec<_> = (0..k - 1).map(|i| trial(&i.to_string(), 1.0, 0.0)).collect();
            trials.push(trial("odd", 0.0, 1.0));
            let q = question_metrics("q", &trials, &flow()).unwrap();
            assert_eq!(q.phrase_sensitivity, 1.0);
            assert!((q.robustness - (k as f64 - 1.0) / k as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn impacts_are_ranked() {
        let divergences = [0.48, 0.63, 0.37, 0.56, 0.38];
        // alpha = 0.5 with cos = 1 gives divergence = ned / 2
        let trials: Vec<_> = divergences.iter().map(|d| trial(&d.to_string(), 1.0, d * 2.0)).collect();
        let q = question_metrics("q", &trials, &flow()).unwrap();
        let ranked: Vec<f64> = q.impacts.iter().map(|i| i.impact).collect();
        let expected = [0.63, 0.56, 0.48, 0.38, 0.37];
        for (got, want) in ranked.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(q.impacts[0].element_surface, "0.63");
    }

    #[test]
    fn no_trials() {
        assert_eq!(question_metrics("q7", &[], &flow()), Err(MetricsError::NoTrials("q7".into())));
    }

    #[test]
    fn single_question_exam() {
        let q = question("q1", 0.7, 0.4, 6, 19);
        let e = exam_aggregate(&[q], "Calc I", "exam1", Configuration::Baseline).unwrap();
        assert_eq!(e.robustness, MetricStats { mean: 0.7, std_dev: 0.0, n: 1 });
        assert_eq!(e.complexity.mean, 19.0);
        assert_eq!(e.step_count.mean, 6.0);
    }

    #[test]
    fn two_question_stats() {
        let qs = [question("a", 0.7, 0.1, 5, 10), question("b", 0.8, 0.3, 7, 20)];
        let e = exam_aggregate(&qs, "", "x", Configuration::Rag).unwrap();
        assert!((e.robustness.mean - 0.75).abs() < 1e-12);
        assert!((e.robustness.std_dev - 0.05).abs() < 1e-12);
        assert_eq!(e.step_count.std_dev, 1.0);
        assert_eq!(e.complexity.std_dev, 5.0);
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let qs: Vec<_> = (0..9)
            .map(|i| question(&format!("q{i}"), 0.1 * i as f64 + 0.013, 0.07 * i as f64, i + 1, 3 * i as u32))
            .collect();
        let a = exam_aggregate(&qs, "c", "e", Configuration::Contextual).unwrap();
        let mut rev = qs.clone();
        rev.reverse();
        rev.swap(1, 5);
        let b = exam_aggregate(&rev, "c", "e", Configuration::Contextual).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_exam() {
        assert_eq!(exam_aggregate(&[], "", "e", Configuration::Baseline), Err(MetricsError::NoQuestions("e".into())));
    }

    #[test]
    fn configuration_codes() {
        assert_eq!("RAG".parse::<Configuration>().unwrap(), Configuration::Rag);
        assert_eq!(Configuration::Contextual.code(), "C");
        assert!("zero-shot".parse::<Configuration>().is_err());
    }
}
