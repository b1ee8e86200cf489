//! The single run configuration file. Relative paths resolve against the
//! directory containing the file; secrets come only from the environment.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use normalign_core::prompting::{InferenceParams, PromptVariant, DEFAULT_MAX_OUTPUT_TOKENS};
use normalign_gateway::Mode;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub rots: PathBuf,
    pub annotations: PathBuf,
    /// Demographic profiles; without them only all-annotator results exist.
    pub profiles: Option<PathBuf>,
    /// Binning file; the built-in default when absent.
    pub binning: Option<PathBuf>,
    #[serde(default)]
    pub strict_binning: bool,
    #[serde(default = "default_expected")]
    pub expected_annotations_per_rot: usize,
}

fn default_expected() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    pub endpoint: String,
    /// Environment variable holding the API key.
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub fail_fast: bool,
    pub cache_dir: Option<PathBuf>,
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_OUTPUT_TOKENS
}

fn default_mode() -> Mode {
    Mode::Record
}

fn default_parallelism() -> usize {
    4
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            mode: default_mode(),
            parallelism: default_parallelism(),
            fail_fast: false,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementGroup {
    pub name: String,
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default = "all_variants")]
    pub variants: Vec<PromptVariant>,
    #[serde(default)]
    pub inference: InferenceConfig,
    pub output_dir: PathBuf,
    /// Extra refusal cues on top of the built-in list.
    #[serde(default)]
    pub refusal_cues: Vec<String>,
    /// Model groups for agreement; all models together when empty.
    #[serde(default)]
    pub agreement_groups: Vec<AgreementGroup>,
    #[serde(skip)]
    pub digest: String,
}

fn all_variants() -> Vec<PromptVariant> {
    vec![
        PromptVariant::ZeroShot,
        PromptVariant::ZeroShotDescription,
        PromptVariant::ZeroShotTable,
    ]
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| CliError::validation(format!("{}: not UTF-8", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|m| CliError::validation(format!("{}: {m}", path.display())))?;
        cfg.digest = hex::encode(Sha256::digest(&bytes));
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Parses and checks internal consistency; paths stay as written.
    pub fn parse(text: &str) -> Result<RunConfig, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.corpus.rots);
        resolve(base, &mut self.corpus.annotations);
        if let Some(p) = &mut self.corpus.profiles {
            resolve(base, p);
        }
        if let Some(p) = &mut self.corpus.binning {
            resolve(base, p);
        }
        if let Some(p) = &mut self.inference.cache_dir {
            resolve(base, p);
        }
        resolve(base, &mut self.output_dir);
    }

    fn check(&self) -> Result<(), String> {
        let mut ids = BTreeSet::new();
        for m in &self.models {
            if m.id.is_empty() {
                return Err("model id must not be empty".into());
            }
            if !ids.insert(m.id.as_str()) {
                return Err(format!("duplicate model id {:?}", m.id));
            }
        }
        let mut variants = BTreeSet::new();
        for v in &self.variants {
            if !variants.insert(*v) {
                return Err(format!("variant {v} listed twice"));
            }
        }
        if self.variants.is_empty() {
            return Err("at least one variant is required".into());
        }
        if self.inference.parallelism == 0 {
            return Err("inference.parallelism must be at least 1".into());
        }
        if !self.inference.temperature.is_finite() || self.inference.temperature < 0.0 {
            return Err("inference.temperature must be >= 0".into());
        }
        if self.inference.max_output_tokens == 0 {
            return Err("inference.max_output_tokens must be positive".into());
        }
        if self.inference.mode != Mode::Live && self.inference.cache_dir.is_none() {
            return Err(format!("inference.cache_dir is required in {} mode", self.inference.mode));
        }
        for g in &self.agreement_groups {
            for m in &g.models {
                if !ids.contains(m.as_str()) {
                    return Err(format!("agreement group {:?} names unknown model {m:?}", g.name));
                }
            }
        }
        Ok(())
    }

    pub fn params_for(&self, model: &ModelConfig) -> InferenceParams {
        InferenceParams {
            temperature: self.inference.temperature,
            max_output_tokens: self.inference.max_output_tokens,
            endpoint_url: model.endpoint.clone(),
            model_id: model.id.clone(),
            api_key_ref: model.api_key_env.clone(),
            extra: model.extra.clone(),
        }
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.id.clone()).collect()
    }

    pub fn groups(&self) -> Vec<(String, Vec<String>)> {
        if self.agreement_groups.is_empty() {
            if self.models.len() >= 2 {
                vec![("LMs(all)".to_owned(), self.model_ids())]
            } else {
                Vec::new()
            }
        } else {
            self.agreement_groups
                .iter()
                .map(|g| (g.name.clone(), g.models.clone()))
                .collect()
        }
    }

    pub fn responses_path(&self) -> PathBuf {
        self.output_dir.join("responses.tsv")
    }

    pub fn extractions_path(&self) -> PathBuf {
        self.output_dir.join("extractions.tsv")
    }

    pub fn scores_path(&self) -> PathBuf {
        self.output_dir.join("scores.tsv")
    }
}
