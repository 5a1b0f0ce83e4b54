use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Backend, Gateway, HttpBackend, HttpConfig, MockBackend, ResponseCache, RetryPolicy};
use crate::retrieval::Bm25Params;
use crate::util::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Script for the mock backend.
    pub mock_script: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub retry_attempts: u32,
    pub retry_backoff_ms: u64,
    /// Persistent response cache; in-memory when unset.
    pub cache_dir: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            mock_script: None,
            endpoint: None,
            api_key_env: None,
            timeout_secs: 120,
            max_in_flight: 8,
            retry_attempts: 3,
            retry_backoff_ms: 500,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub curation: String,
    pub generation: String,
    /// Scores both sides of every belief shift.
    pub scoring: String,
    pub cognitive: String,
    pub entailment: String,
    /// Models benchmarked on QA.
    pub qa: Vec<String>,
    /// External embedding models benchmarked on retrieval.
    pub embedding: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            curation: "curator".into(),
            generation: "generator".into(),
            scoring: "scorer".into(),
            cognitive: "classifier".into(),
            entailment: "entailment".into(),
            qa: vec!["reader".into()],
            embedding: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    /// Holds `datasets.jsonl` and `papers.jsonl`.
    pub input_dir: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
    /// Overrides for the bundled prompt templates.
    pub template_dir: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    /// JSON Lines of `{"pair_id", "label"}` human judgements.
    pub filter_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_regenerations: u32,
    pub relevance_max_chars: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 0.7,
            max_regenerations: 2,
            relevance_max_chars: 24_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k1: f64,
    pub b: f64,
    pub top_k: Vec<usize>,
    pub mrr_cutoff: usize,
    pub chunk_size: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k1: 1.2,
            b: 0.75,
            top_k: vec![1, 5, 20, 100],
            mrr_cutoff: 100,
            chunk_size: 100,
        }
    }
}

impl RetrievalConfig {
    pub fn bm25(&self) -> Bm25Params {
        Bm25Params { k1: self.k1, b: self.b }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaConfig {
    /// Passages given to the reader; 0 means closed-book.
    pub rag_k: Vec<usize>,
}

impl Default for QaConfig {
    fn default() -> Self {
        QaConfig { rag_k: vec![0, 1, 5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [u32; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: [80, 15, 5],
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backend: BackendConfig,
    pub models: ModelConfig,
    pub paths: PathConfig,
    pub generation: GenerationConfig,
    pub retrieval: RetrievalConfig,
    pub qa: QaConfig,
    pub split: SplitConfig,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    /// Load a TOML file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Config::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.backend.mock_script);
        resolve(base, &mut self.backend.cache_dir);
        resolve(base, &mut self.paths.input_dir);
        resolve(base, &mut self.paths.run_dir);
        resolve(base, &mut self.paths.template_dir);
        resolve(base, &mut self.paths.taxonomy);
        resolve(base, &mut self.paths.filter_labels);
    }

    fn check(&self) -> Result<()> {
        let b = &self.backend;
        match b.kind {
            BackendKind::Mock if b.mock_script.is_none() => {
                return Err(Error::Config(
                    "backend.kind = \"mock\" needs backend.mock_script".into(),
                ))
            }
            BackendKind::Http if b.endpoint.is_none() => {
                return Err(Error::Config("backend.kind = \"http\" needs backend.endpoint".into()))
            }
            _ => {}
        }
        if b.max_in_flight == 0 || b.retry_attempts == 0 {
            return Err(Error::Config(
                "max_in_flight and retry_attempts must be at least 1".into(),
            ));
        }
        if self.split.ratios.iter().sum::<u32>() != 100 {
            return Err(Error::Config("split.ratios must sum to 100".into()));
        }
        let r = &self.retrieval;
        if r.chunk_size == 0 || r.mrr_cutoff == 0 || r.top_k.is_empty() || r.top_k.contains(&0) {
            return Err(Error::Config("retrieval sizes must be at least 1".into()));
        }
        if self.models.qa.is_empty() {
            return Err(Error::Config("models.qa lists no model".into()));
        }
        Ok(())
    }

    /// Digest of everything that shapes stage outputs: the settings without
    /// file locations, plus the contents of the mock script, templates and
    /// taxonomy.
    pub fn digest(&self) -> Result<String> {
        let mut c = self.clone();
        c.paths = PathConfig::default();
        c.backend.mock_script = None;
        c.backend.cache_dir = None;
        let mut material = serde_json::to_string(&c)?;
        let mut add_file = |label: &str, p: &Path| -> Result<()> {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            material.push_str(&format!("\n{label}:{}", sha256_hex(&bytes)));
            Ok(())
        };
        if let Some(p) = &self.backend.mock_script {
            add_file("mock_script", p)?;
        }
        if let Some(p) = &self.paths.taxonomy {
            add_file("taxonomy", p)?;
        }
        if let Some(dir) = &self.paths.template_dir {
            let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            names.sort();
            for p in names {
                let label = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
                add_file(&label, &p)?;
            }
        }
        Ok(sha256_hex(material.as_bytes()))
    }

    pub fn gateway(&self) -> Result<Gateway> {
        let b = &self.backend;
        let backend: Box<dyn Backend> = match b.kind {
            BackendKind::Mock => Box::new(MockBackend::from_file(b.mock_script.as_deref().expect("checked"))?),
            BackendKind::Http => Box::new(HttpBackend::new(&HttpConfig {
                endpoint: b.endpoint.clone().expect("checked"),
                api_key_env: b.api_key_env.clone(),
                timeout_secs: b.timeout_secs,
            })?),
        };
        let cache = match &b.cache_dir {
            Some(dir) => ResponseCache::on_disk(dir)?,
            None => ResponseCache::in_memory(),
        };
        let retry = RetryPolicy {
            max_attempts: b.retry_attempts,
            backoff_ms: b.retry_backoff_ms,
        };
        Gateway::new(backend, cache, b.max_in_flight, retry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_sections() {
        let c = Config::parse("[backend]\nmock_script = \"m.json\"\n").unwrap();
        assert_eq!(c.split.ratios, [80, 15, 5]);
        assert_eq!(c.retrieval.top_k, vec![1, 5, 20, 100]);
        assert_eq!(c.qa.rag_k, vec![0, 1, 5]);
        assert_eq!(c.generation.temperature, 0.7);
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(Config::parse("[backend]\nkind = \"mock\"\n").is_err());
        assert!(Config::parse("[backend]\nkind = \"http\"\n").is_err());
        assert!(Config::parse("[backend]\nmock_script = \"m\"\n[split]\nratios = [80, 15, 10]\n").is_err());
        assert!(Config::parse("[backend]\nmock_script = \"m\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn digest_ignores_run_location() {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("m.json");
        std::fs::write(&script, "{}").unwrap();
        let mut a = Config::parse("[backend]\nmock_script = \"m.json\"\n").unwrap();
        a.resolve_paths(dir.path());
        let mut b = a.clone();
        b.paths.run_dir = Some("elsewhere".into());
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        b.generation.temperature = 0.2;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
        let before = a.digest().unwrap();
        std::fs::write(&script, "{\"rules\": []}").unwrap();
        assert_ne!(before, a.digest().unwrap());
    }
}
