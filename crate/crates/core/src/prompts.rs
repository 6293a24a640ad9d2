//! Prompt templates for the imagination and reasoning stages.
//!
//! Templates are plain UTF-8 text with a single placeholder, `{TASK}`. The
//! built-in bodies ship under `templates/` in this crate; overrides are
//! loaded from files and validated when loaded.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TASK_PLACEHOLDER: &str = "{TASK}";
pub const BUILTIN_VERSION: &str = "v1";

const DREAMER_BUILTIN: &str = include_str!("../templates/dreamer.txt");
const THINKER_BUILTIN: &str = include_str!("../templates/thinker.txt");

const DREAMER_REQUIRED: &[&str] = &[
    "Imagination-driven Image-Editing Prompt Writer",
    "keep others unchanged",
];
const THINKER_REQUIRED: &[&str] = &["object_name", "object_part"];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("template {id} is missing required text {missing:?}")]
    InvalidTemplate { id: TemplateId, missing: String },
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Dreamer,
    Thinker,
}

impl std::fmt::Display for TemplateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dreamer => "dreamer",
            Self::Thinker => "thinker",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: TemplateId,
    body: String,
    version: String,
}

impl PromptTemplate {
    /// Validates a template body: it must contain the placeholder and the
    /// literal lines the downstream parsers depend on.
    pub fn new(
        id: TemplateId,
        body: impl Into<String>,
        version: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let body = body.into();
        let required = match id {
            TemplateId::Dreamer => DREAMER_REQUIRED,
            TemplateId::Thinker => THINKER_REQUIRED,
        };
        for needle in std::iter::once(&TASK_PLACEHOLDER).chain(required) {
            if !body.contains(needle) {
                return Err(PromptError::InvalidTemplate {
                    id,
                    missing: (*needle).to_string(),
                });
            }
        }
        Ok(Self {
            id,
            body,
            version: version.into(),
        })
    }

    pub fn builtin(id: TemplateId) -> Self {
        let body = match id {
            TemplateId::Dreamer => DREAMER_BUILTIN,
            TemplateId::Thinker => THINKER_BUILTIN,
        };
        Self::new(id, body, BUILTIN_VERSION).expect("built-in templates are valid")
    }

    pub fn from_file(
        id: TemplateId,
        path: impl AsRef<Path>,
        version: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::new(id, body, version)
    }

    pub fn id(&self) -> TemplateId {
        self.id
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Substitutes the trimmed task verbatim; no escaping is applied.
    pub fn render(&self, task: &str) -> Result<RenderedPrompt, PromptError> {
        let task = task.trim();
        if task.is_empty() {
            return Err(PromptError::InvalidArgument("task text is empty".into()));
        }
        Ok(RenderedPrompt {
            text: self.body.replace(TASK_PLACEHOLDER, task),
            template_id: self.id,
            template_version: self.version.clone(),
            task: task.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub template_id: TemplateId,
    pub template_version: String,
    pub task: String,
}

/// The pair of templates a pipeline renders from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub dreamer: PromptTemplate,
    pub thinker: PromptTemplate,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            dreamer: PromptTemplate::builtin(TemplateId::Dreamer),
            thinker: PromptTemplate::builtin(TemplateId::Thinker),
        }
    }
}

pub fn render_dreamer_prompt(task: &str) -> Result<RenderedPrompt, PromptError> {
    PromptTemplate::builtin(TemplateId::Dreamer).render(task)
}

pub fn render_thinker_prompt(task: &str) -> Result<RenderedPrompt, PromptError> {
    PromptTemplate::builtin(TemplateId::Thinker).render(task)
}
