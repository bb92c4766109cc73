//! TOML run configuration.
//!
//! ```toml
//! alpha = 0.5
//! output_dir = "out"
//! cache_dir = "cache"
//! exam = "exams/calc1_exam1.md"
//!
//! [endpoint]
//! url = "http://localhost:11434"
//! model = "gemma3:latest"
//! auth_env = "MATHTRACE_API_KEY"
//!
//! [embedding]
//! provider = "hash"
//!
//! [retrieval]
//! corpus_dir = "corpus"
//! manifest = "corpus/manifest.txt"
//! ```
//!
//! Relative paths resolve against the config file's directory. Paths used
//! by every run (lexicons, exam) must exist at load time; retrieval paths
//! are checked when a retrieval configuration is actually run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{ComplexityThresholds, FlowError, FlowExtractor};
use crate::gateway::EndpointConfig;
use crate::lexicon::{Lexicon, LexiconError};
use crate::retrieval::{EmbeddingConfig, RetrievalConfig, RetrievalError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("{key} points to {path}, which does not exist")]
    MissingPath { key: String, path: String },
    #[error("endpoint.parallelism must be at least 1")]
    BadParallelism,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Optional lexicon overrides; bundled lexicons are used when absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconPaths {
    pub operations: Option<PathBuf>,
    pub concepts: Option<PathBuf>,
    pub instructions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub exam: Option<PathBuf>,
    pub replay_only: bool,
    /// Questions analysed concurrently; each still bounds its own trials
    /// by `endpoint.parallelism`.
    pub question_parallelism: usize,
    pub endpoint: EndpointConfig,
    pub embedding: EmbeddingConfig,
    pub retrieval: RetrievalConfig,
    pub lexicons: LexiconPaths,
    pub complexity: ComplexityThresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            output_dir: PathBuf::from("out"),
            cache_dir: PathBuf::from("cache"),
            exam: None,
            replay_only: false,
            question_parallelism: 1,
            endpoint: EndpointConfig::default(),
            embedding: EmbeddingConfig::default(),
            retrieval: RetrievalConfig::default(),
            lexicons: LexiconPaths::default(),
            complexity: ComplexityThresholds::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        resolve(base, p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })
    }

    /// Parses, resolves relative paths and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::from_toml(&text, &path.display().to_string())?;
        config.resolve_paths(path.parent().unwrap_or(Path::new("")));
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        resolve(base, &mut self.cache_dir);
        resolve_opt(base, &mut self.exam);
        resolve_opt(base, &mut self.lexicons.operations);
        resolve_opt(base, &mut self.lexicons.concepts);
        resolve_opt(base, &mut self.lexicons.instructions);
        resolve_opt(base, &mut self.retrieval.corpus_dir);
        resolve_opt(base, &mut self.retrieval.index_path);
        resolve_opt(base, &mut self.retrieval.manifest);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ConfigError::InvalidAlpha(self.alpha));
        }
        if self.endpoint.parallelism == 0 || self.question_parallelism == 0 {
            return Err(ConfigError::BadParallelism);
        }
        self.retrieval.validate()?;
        let required = [
            ("exam", &self.exam),
            ("lexicons.operations", &self.lexicons.operations),
            ("lexicons.concepts", &self.lexicons.concepts),
            ("lexicons.instructions", &self.lexicons.instructions),
        ];
        for (key, path) in required {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(ConfigError::MissingPath {
                        key: key.to_string(),
                        path: p.display().to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn instruction_lexicon(&self) -> Result<Lexicon, ConfigError> {
        Ok(match &self.lexicons.instructions {
            Some(p) => Lexicon::load(p)?,
            None => Lexicon::default_instructions(),
        })
    }

    pub fn flow_extractor(&self) -> Result<FlowExtractor, ConfigError> {
        let operations = match &self.lexicons.operations {
            Some(p) => Lexicon::load(p)?,
            None => Lexicon::default_operations(),
        };
        let concepts = match &self.lexicons.concepts {
            Some(p) => Lexicon::load(p)?,
            None => Lexicon::default_concepts(),
        };
        Ok(FlowExtractor::new(operations, concepts, self.complexity)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("", "t").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.retrieval.chunk_size, 800);
        assert_eq!(c.retrieval.overlap, 200);
        assert_eq!(c.retrieval.top_k, 4);
    }

    #[test]
    fn nested_tables() {
        let c = RunConfig::from_toml(
            "alpha = 0.25\n[endpoint]\nmodel = \"m\"\nparallelism = 2\n[retrieval]\ntop_k = 2\nmode = \"contextual\"\n[embedding]\nprovider = \"http\"\n",
            "t",
        )
        .unwrap();
        assert_eq!(c.alpha, 0.25);
        assert_eq!(c.endpoint.model, "m");
        assert_eq!(c.retrieval.top_k, 2);
        assert_eq!(c.embedding.provider, crate::retrieval::EmbeddingProvider::Http);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("[endpoint]\nmodle = \"x\"\n", "t"), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn validation() {
        let bad_alpha = RunConfig {
            alpha: 1.5,
            ..RunConfig::default()
        };
        assert!(matches!(bad_alpha.validate(), Err(ConfigError::InvalidAlpha(_))));
        let missing = RunConfig {
            exam: Some("/nonexistent/exam.md".into()),
            ..RunConfig::default()
        };
        assert!(matches!(missing.validate(), Err(ConfigError::MissingPath { .. })));
        let mut bad_chunks = RunConfig::default();
        bad_chunks.retrieval.overlap = 800;
        assert!(matches!(bad_chunks.validate(), Err(ConfigError::Retrieval(_))));
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("exam.md"), "# e\n## q1\nFind x.\n").unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "exam = \"exam.md\"\noutput_dir = \"out\"\n[retrieval]\ncorpus_dir = \"missing\"\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.exam.unwrap(), dir.path().join("exam.md"));
        assert_eq!(c.output_dir, dir.path().join("out"));
        // retrieval paths are checked lazily
        assert_eq!(c.retrieval.corpus_dir.unwrap(), dir.path().join("missing"));
    }
}
