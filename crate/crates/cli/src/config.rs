//! The run configuration file and flag overrides.

use std::path::{Path, PathBuf};

use afford_core::backends::{BackendMode, BackendsConfig, Capability};
use afford_core::pipeline::{Mode, PipelineConfig};
use afford_core::prompts::{PromptSet, PromptTemplate, TemplateId, BUILTIN_VERSION};
use afford_core::DecodeParams;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

fn default_parallelism() -> usize {
    1
}

fn default_max_regions() -> usize {
    1
}

fn default_reprompt_budget() -> u32 {
    2
}

fn default_true() -> bool {
    true
}

/// Optional template overrides; unset entries use the built-in text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatesConfig {
    #[serde(default)]
    pub dreamer: Option<PathBuf>,
    #[serde(default)]
    pub thinker: Option<PathBuf>,
    /// Recorded in every rendered prompt.
    #[serde(default)]
    pub version: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub out: PathBuf,
    #[serde(default)]
    pub backends: BackendsConfig,
    #[serde(default)]
    pub templates: TemplatesConfig,
    #[serde(default = "default_max_regions")]
    pub max_regions: usize,
    #[serde(default = "default_reprompt_budget")]
    pub reprompt_budget: u32,
    #[serde(default)]
    pub score_threshold: f64,
    #[serde(default)]
    pub decode: DecodeParams,
    #[serde(default = "default_true")]
    pub record_timings: bool,
}

fn default_mode() -> Mode {
    Mode::Full
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub parallelism: Option<usize>,
    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl RunConfig {
    /// Reads the file, resolves relative paths against its directory and
    /// applies overrides. Paths that must already exist are checked.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if let Some(mode) = overrides.mode {
            cfg.mode = mode;
        }
        if let Some(p) = overrides.parallelism {
            cfg.parallelism = p;
        }
        if let Some(out) = &overrides.out {
            cfg.out = out.clone();
        }
        if let Some(manifest) = &overrides.manifest {
            cfg.manifest = manifest.clone();
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.manifest);
        join(&mut self.out);
        for p in [&mut self.templates.dreamer, &mut self.templates.thinker]
            .into_iter()
            .flatten()
        {
            join(p);
        }
        for cap in Capability::ALL {
            if let Some(b) = self.backends.get_mut(cap) {
                if let Some(f) = &mut b.fixtures {
                    join(f);
                }
            }
        }
    }

    fn check(&self) -> Result<()> {
        if self.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        if !self.manifest.is_file() {
            bail!("manifest {} does not exist", self.manifest.display());
        }
        for p in [&self.templates.dreamer, &self.templates.thinker]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                bail!("template {} does not exist", p.display());
            }
        }
        for cap in Capability::ALL {
            let Some(b) = self.backends.get(cap) else {
                continue;
            };
            b.validate(cap)?;
            if b.mode == BackendMode::Replay {
                let dir = b.fixtures.as_deref().unwrap_or(Path::new(""));
                if !dir.is_dir() {
                    bail!("{cap} fixture directory {} does not exist", dir.display());
                }
            }
        }
        Ok(())
    }

    pub fn pipeline_config(&self, mode: Mode) -> PipelineConfig {
        PipelineConfig {
            mode,
            max_regions: self.max_regions,
            reprompt_budget: self.reprompt_budget,
            score_threshold: self.score_threshold,
            decode: self.decode,
            record_timings: self.record_timings,
        }
    }

    pub fn prompts(&self) -> Result<PromptSet> {
        let version = self
            .templates
            .version
            .clone()
            .unwrap_or_else(|| BUILTIN_VERSION.to_string());
        let load = |id: TemplateId, path: &Option<PathBuf>| -> Result<PromptTemplate> {
            Ok(match path {
                Some(p) => PromptTemplate::from_file(id, p, version.clone())?,
                None => PromptTemplate::builtin(id),
            })
        };
        Ok(PromptSet {
            dreamer: load(TemplateId::Dreamer, &self.templates.dreamer)?,
            thinker: load(TemplateId::Thinker, &self.templates.thinker)?,
        })
    }

    /// Switches every configured backend to record mode.
    pub fn into_recording(mut self) -> Result<Self> {
        for cap in Capability::ALL {
            if let Some(b) = self.backends.get_mut(cap) {
                b.mode = BackendMode::Record;
                b.validate(cap)?;
            }
        }
        Ok(self)
    }
}
