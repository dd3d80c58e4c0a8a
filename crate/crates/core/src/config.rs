//! Engine configuration (TOML) and the wiring from configuration to backends.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{run_case, AgentConfig, CaseRun, ClockMode, Query, ToolContext, ToolRegistry};
use crate::gateway::{
    BackendPolicy, ChatBackend, EmbeddingBackend, FileSegmentationStore, Gateway, HashEmbedder, HttpChat,
    HttpEmbedder, HttpEndpoint, HttpVision, ScriptedBackend, SegmentationBackend, VisionBackend,
};
use crate::templates::{default_keywords, load_templates, DeriveOptions, Template};
use crate::tools::{default_registry, AnalysisCatalog, ToolSettings, VisionInputMode};
use crate::volume::{Volume, Window};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("{0}")]
    Invalid(String),
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error("{what} {path} does not exist")]
    MissingPath { what: &'static str, path: PathBuf },
    #[error("loading {what}: {reason}")]
    Load { what: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Http,
    Scripted,
}

/// A chat or vision backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub model: String,
    pub base_url: Option<String>,
    pub path: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    /// Scripted transcript (JSON), for `kind = "scripted"`.
    pub script: Option<PathBuf>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_s() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    500
}

impl ModelConfig {
    pub fn scripted(script: impl Into<PathBuf>) -> Self {
        Self {
            kind: ModelKind::Scripted,
            model: "scripted".into(),
            base_url: None,
            path: None,
            token_env: None,
            script: Some(script.into()),
            timeout_s: default_timeout_s(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }

    fn policy(&self) -> BackendPolicy {
        BackendPolicy {
            request_timeout: Duration::from_secs_f64(self.timeout_s),
            max_retries: self.max_retries,
            retry_backoff: Duration::from_millis(self.backoff_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Http,
    Hash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    #[serde(default)]
    pub model: String,
    pub base_url: Option<String>,
    pub path: Option<String>,
    pub token_env: Option<String>,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_dimension() -> usize {
    64
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            kind: EmbeddingKind::Hash,
            model: String::new(),
            base_url: None,
            path: None,
            token_env: None,
            dimension: default_dimension(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationConfig {
    /// Directory holding `<case_id>/organ.nii.gz` and friends.
    pub store: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub max_steps: usize,
    pub time_budget_s: f64,
    pub clock: ClockMode,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self { max_steps: 10, time_budget_s: 500.0, clock: ClockMode::System }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolsSection {
    pub qc_max_rounds: usize,
    pub roi_margin: usize,
    pub vision_input: VisionInputMode,
    pub window_center: f32,
    pub window_width: f32,
    pub catalog: Option<PathBuf>,
    pub templates: Option<PathBuf>,
}

impl Default for ToolsSection {
    fn default() -> Self {
        let w = Window::default();
        Self {
            qc_max_rounds: 3,
            roi_margin: 4,
            vision_input: VisionInputMode::Slices,
            window_center: w.center,
            window_width: w.width,
            catalog: None,
            templates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringSection {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub keywords: Option<Vec<String>>,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        Self { k: 6, seed: 0, max_iters: 100, keywords: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub chat: ModelConfig,
    pub vision: ModelConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    pub segmentation: SegmentationConfig,
    #[serde(default)]
    pub agent: AgentSection,
    #[serde(default)]
    pub tools: ToolsSection,
    #[serde(default)]
    pub clustering: ClusteringSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl EngineConfig {
    /// Parses TOML; relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: EngineConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        for m in [&mut cfg.chat, &mut cfg.vision] {
            if let Some(p) = m.script.as_mut() {
                resolve(base_dir, p);
            }
        }
        resolve(base_dir, &mut cfg.segmentation.store);
        resolve(base_dir, &mut cfg.output.dir);
        for p in [cfg.tools.catalog.as_mut(), cfg.tools.templates.as_mut()].into_iter().flatten() {
            resolve(base_dir, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.agent.max_steps == 0 {
            return Err(ConfigError::Invalid("agent.max_steps must be positive".into()));
        }
        if !(self.agent.time_budget_s > 0.0 && self.agent.time_budget_s.is_finite()) {
            return Err(ConfigError::Invalid("agent.time_budget_s must be positive".into()));
        }
        if self.tools.qc_max_rounds == 0 {
            return Err(ConfigError::Invalid("tools.qc_max_rounds must be positive".into()));
        }
        if self.tools.window_width <= 0.0 {
            return Err(ConfigError::Invalid("tools.window_width must be positive".into()));
        }
        if self.clustering.k == 0 {
            return Err(ConfigError::Invalid("clustering.k must be positive".into()));
        }
        for (role, m) in [("chat", &self.chat), ("vision", &self.vision)] {
            if !(m.timeout_s > 0.0 && m.timeout_s.is_finite()) {
                return Err(ConfigError::Invalid(format!("{role}.timeout_s must be positive")));
            }
            match m.kind {
                ModelKind::Scripted if m.script.is_none() => {
                    return Err(ConfigError::Invalid(format!("{role}: scripted backend needs `script`")));
                }
                ModelKind::Http if m.base_url.is_none() => {
                    return Err(ConfigError::Invalid(format!("{role}: http backend needs `base_url`")));
                }
                _ => {}
            }
        }
        if self.embedding.kind == EmbeddingKind::Http && self.embedding.base_url.is_none() {
            return Err(ConfigError::Invalid("embedding: http backend needs `base_url`".into()));
        }
        Ok(())
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            max_steps: self.agent.max_steps,
            time_budget: Duration::from_secs_f64(self.agent.time_budget_s),
            clock: self.agent.clock,
        }
    }

    pub fn derive_options(&self, organ: &str) -> DeriveOptions {
        DeriveOptions {
            organ: organ.to_string(),
            keywords: self.clustering.keywords.clone().unwrap_or_else(|| default_keywords(organ)),
            k: self.clustering.k,
            seed: self.clustering.seed,
            max_iters: self.clustering.max_iters,
        }
    }

    /// Short hash over run-relevant settings. Paths, URLs, and token variable
    /// names are left out so the digest is stable across machines.
    pub fn digest(&self) -> String {
        let model = |m: &ModelConfig| {
            serde_json::json!({
                "kind": m.kind, "model": m.model, "timeout_s": m.timeout_s,
                "max_retries": m.max_retries, "backoff_ms": m.backoff_ms,
            })
        };
        let t = &self.tools;
        let summary = serde_json::json!({
            "chat": model(&self.chat),
            "vision": model(&self.vision),
            "embedding": {"kind": self.embedding.kind, "model": self.embedding.model,
                          "dimension": self.embedding.dimension, "seed": self.embedding.seed},
            "agent": self.agent,
            "tools": {"qc_max_rounds": t.qc_max_rounds, "roi_margin": t.roi_margin, "vision_input": t.vision_input,
                      "window_center": t.window_center, "window_width": t.window_width},
            "clustering": {"k": self.clustering.k, "seed": self.clustering.seed, "max_iters": self.clustering.max_iters},
        });
        let bytes = serde_json::to_vec(&summary).expect("digest input serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

fn token(env: &Option<String>) -> Result<Option<String>, ConfigError> {
    match env {
        None => Ok(None),
        Some(name) => std::env::var(name).map(Some).map_err(|_| ConfigError::MissingEnv(name.clone())),
    }
}

fn endpoint(base_url: &Option<String>, path: &Option<String>, default_path: &str, token_env: &Option<String>) -> Result<HttpEndpoint, ConfigError> {
    Ok(HttpEndpoint {
        base_url: base_url.clone().expect("validated"),
        path: path.clone().unwrap_or_else(|| default_path.to_string()),
        token: token(token_env)?,
    })
}

enum ModelSource<T: ?Sized> {
    Http(Arc<T>),
    Scripted(ScriptedBackend),
}

fn load_script(m: &ModelConfig, role: &'static str) -> Result<ScriptedBackend, ConfigError> {
    let path = m.script.as_ref().expect("validated");
    if !path.exists() {
        return Err(ConfigError::MissingPath { what: role, path: path.clone() });
    }
    ScriptedBackend::load(path).map_err(|e| ConfigError::Load { what: role, reason: format!("{}: {e}", path.display()) })
}

/// Everything a case run needs, built once from a config.
///
/// Scripted backends are re-created for each case so concurrent or repeated
/// runs see the transcript from its start.
pub struct Engine {
    pub config: EngineConfig,
    chat: ModelSource<dyn ChatBackend>,
    vision: ModelSource<dyn VisionBackend>,
    embedding: Arc<dyn EmbeddingBackend>,
    segmentation: Arc<dyn SegmentationBackend>,
    settings: Arc<ToolSettings>,
    registry: Arc<ToolRegistry>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let client = reqwest::Client::new();
        let chat = match config.chat.kind {
            ModelKind::Scripted => ModelSource::Scripted(load_script(&config.chat, "chat script")?),
            ModelKind::Http => {
                let c = &config.chat;
                ModelSource::Http(Arc::new(HttpChat::new(
                    client.clone(),
                    endpoint(&c.base_url, &c.path, "/v1/chat/completions", &c.token_env)?,
                )) as Arc<dyn ChatBackend>)
            }
        };
        let vision = match config.vision.kind {
            ModelKind::Scripted => ModelSource::Scripted(load_script(&config.vision, "vision script")?),
            ModelKind::Http => {
                let c = &config.vision;
                ModelSource::Http(Arc::new(HttpVision::new(
                    client.clone(),
                    endpoint(&c.base_url, &c.path, "/v1/chat/completions", &c.token_env)?,
                )) as Arc<dyn VisionBackend>)
            }
        };
        let e = &config.embedding;
        let embedding: Arc<dyn EmbeddingBackend> = match e.kind {
            EmbeddingKind::Hash => Arc::new(HashEmbedder { dimension: e.dimension, seed: e.seed }),
            EmbeddingKind::Http => Arc::new(HttpEmbedder::new(
                client,
                endpoint(&e.base_url, &e.path, "/v1/embeddings", &e.token_env)?,
                e.model.clone(),
            )),
        };
        let store = &config.segmentation.store;
        if !store.is_dir() {
            return Err(ConfigError::MissingPath { what: "segmentation store", path: store.clone() });
        }
        let segmentation: Arc<dyn SegmentationBackend> = Arc::new(FileSegmentationStore::new(store.clone()));

        let t = &config.tools;
        let catalog = match &t.catalog {
            None => AnalysisCatalog::default(),
            Some(p) => AnalysisCatalog::load(p).map_err(|e| ConfigError::Load { what: "catalog", reason: e.to_string() })?,
        };
        let templates: Vec<Template> = match &t.templates {
            None => Vec::new(),
            Some(p) => load_templates(p).map_err(|e| ConfigError::Load { what: "templates", reason: e.to_string() })?,
        };
        let settings = Arc::new(ToolSettings {
            catalog,
            templates,
            window: Window { center: t.window_center, width: t.window_width },
            roi_margin: t.roi_margin,
            qc_max_rounds: t.qc_max_rounds,
            vision_input: t.vision_input,
        });
        Ok(Self { config, chat, vision, embedding, segmentation, settings, registry: Arc::new(default_registry()) })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::new(EngineConfig::load(path)?)
    }

    pub fn settings(&self) -> &Arc<ToolSettings> {
        &self.settings
    }

    pub fn registry(&self) -> &Arc<ToolRegistry> {
        &self.registry
    }

    pub fn has_case(&self, case_id: &str) -> bool {
        self.segmentation.has_case(case_id)
    }

    /// A gateway for one case; scripted transcripts start from the top.
    pub fn gateway(&self) -> Gateway {
        let chat: Arc<dyn ChatBackend> = match &self.chat {
            ModelSource::Http(h) => h.clone(),
            ModelSource::Scripted(s) => Arc::new(s.fresh()),
        };
        let vision: Arc<dyn VisionBackend> = match &self.vision {
            ModelSource::Http(h) => h.clone(),
            ModelSource::Scripted(s) => Arc::new(s.fresh()),
        };
        Gateway {
            chat,
            vision,
            embedding: self.embedding.clone(),
            segmentation: self.segmentation.clone(),
            chat_model: self.config.chat.model.clone(),
            vision_model: self.config.vision.model.clone(),
            chat_policy: self.config.chat.policy(),
            vision_policy: self.config.vision.policy(),
        }
    }

    pub async fn run(&self, query: Query, volume: Arc<Volume>, volume_ref: String) -> CaseRun {
        let ctx = ToolContext { query, volume, volume_ref, gateway: self.gateway(), settings: self.settings.clone() };
        run_case(ctx, self.registry.clone(), &self.config.agent_config(), self.config.digest()).await
    }
}
