//! Resumable stage pipeline over a run directory.
//!
//! Each stage declares the files it reads and writes. A stage runs only when
//! its upstream stages are done; rerunning a done stage whose inputs and
//! outputs are unchanged is a no-op. Outputs are written atomically and the
//! manifest records the digest of every input and output.

mod config;
mod manifest;
mod stages;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

pub use config::{
    BackendConfig, BackendKind, Config, GenerationConfig, ModelConfig, PathConfig, QaConfig, RetrievalConfig,
    SplitConfig,
};
pub use manifest::{RunManifest, StageRecord, StageStatus};
pub use stages::LabelRecord;
pub use validate::{validate_corpus, ValidationReport, Violation};

use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::util::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Match,
    Parse,
    Generate,
    Filter,
    Index,
    BenchRetrieval,
    BenchQa,
    Stats,
    Split,
}

impl Stage {
    /// Topological order.
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Match,
        Stage::Parse,
        Stage::Generate,
        Stage::Filter,
        Stage::Index,
        Stage::BenchRetrieval,
        Stage::BenchQa,
        Stage::Stats,
        Stage::Split,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Match => "match",
            Stage::Parse => "parse",
            Stage::Generate => "generate",
            Stage::Filter => "filter",
            Stage::Index => "index",
            Stage::BenchRetrieval => "bench-retrieval",
            Stage::BenchQa => "bench-qa",
            Stage::Stats => "stats",
            Stage::Split => "split",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Match => &[Stage::Ingest],
            Stage::Parse => &[Stage::Match],
            Stage::Generate => &[Stage::Parse],
            Stage::Filter => &[Stage::Generate],
            Stage::Index => &[Stage::Parse],
            Stage::BenchRetrieval | Stage::BenchQa => &[Stage::Index, Stage::Filter],
            Stage::Stats | Stage::Split => &[Stage::Filter],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    /// Inputs and outputs matched the manifest; nothing was done.
    Unchanged,
}

/// A file a stage produces, relative to the run directory.
pub(crate) struct Output {
    pub path: String,
    pub bytes: Vec<u8>,
}

pub(crate) fn digest_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub struct Runner {
    pub config: Config,
    pub input_dir: PathBuf,
    pub run_dir: PathBuf,
    config_digest: String,
    gateway: OnceLock<Gateway>,
}

impl Runner {
    pub fn new(config: Config) -> Result<Self> {
        let input_dir = config
            .paths
            .input_dir
            .clone()
            .ok_or_else(|| Error::Config("no input directory (paths.input_dir or --input)".into()))?;
        let run_dir = config
            .paths
            .run_dir
            .clone()
            .ok_or_else(|| Error::Config("no run directory (paths.run_dir or --output)".into()))?;
        let config_digest = config.digest()?;
        Ok(Runner {
            config,
            input_dir,
            run_dir,
            config_digest,
            gateway: OnceLock::new(),
        })
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.run_dir.join("manifest.json")
    }

    pub fn manifest(&self) -> Result<Option<RunManifest>> {
        RunManifest::load(&self.manifest_path())
    }

    pub(crate) fn gateway(&self) -> Result<&Gateway> {
        if let Some(g) = self.gateway.get() {
            return Ok(g);
        }
        let g = self.config.gateway()?;
        Ok(self.gateway.get_or_init(|| g))
    }

    pub(crate) fn run_path(&self, rel: &str) -> PathBuf {
        self.run_dir.join(rel)
    }

    fn load_or_create_manifest(&self) -> Result<RunManifest> {
        match self.manifest()? {
            Some(m) if m.config_digest != self.config_digest => Err(Error::Pipeline(format!(
                "config digest {} does not match run {} (digest {}); use a fresh output directory",
                &self.config_digest[..12],
                m.run_id,
                &m.config_digest[..12.min(m.config_digest.len())]
            ))),
            Some(m) => Ok(m),
            None => Ok(RunManifest::new(&self.config_digest)),
        }
    }

    fn input_digests(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for p in self.declared_inputs(stage) {
            if !p.exists() {
                return Err(Error::Pipeline(format!(
                    "stage `{stage}` is missing input {}",
                    p.display()
                )));
            }
            let key = p
                .strip_prefix(&self.run_dir)
                .map(|r| r.to_string_lossy().into_owned())
                .unwrap_or_else(|_| p.to_string_lossy().into_owned());
            out.insert(key, digest_file(&p)?);
        }
        Ok(out)
    }

    fn outputs_intact(&self, record: &StageRecord) -> bool {
        record
            .outputs
            .iter()
            .all(|(rel, digest)| digest_file(&self.run_path(rel)).is_ok_and(|d| &d == digest))
    }

    /// Run one stage if it is out of date.
    pub fn run(&self, stage: Stage) -> Result<Outcome> {
        let mut manifest = self.load_or_create_manifest()?;
        for up in stage.upstream() {
            if manifest.status(up.name()) != StageStatus::Done {
                return Err(Error::Pipeline(format!(
                    "stage `{stage}` needs `{up}` to be done first"
                )));
            }
        }
        let inputs = self.input_digests(stage)?;
        if let Some(rec) = manifest.stages.get(stage.name()) {
            if rec.status == StageStatus::Done && rec.inputs == inputs && self.outputs_intact(rec) {
                log::info!("{stage}: unchanged");
                return Ok(Outcome::Unchanged);
            }
        }
        let started_at = manifest::now();
        log::info!("{stage}: running");
        match self.execute(stage) {
            Ok(outputs) => {
                let mut digests = BTreeMap::new();
                for o in &outputs {
                    crate::jsonl::write_atomic(&self.run_path(&o.path), &o.bytes)?;
                    digests.insert(o.path.clone(), sha256_hex(&o.bytes));
                }
                manifest.stages.insert(
                    stage.name().to_string(),
                    StageRecord {
                        status: StageStatus::Done,
                        inputs,
                        outputs: digests,
                        started_at,
                        finished_at: Some(manifest::now()),
                        error: None,
                    },
                );
                manifest.save(&self.manifest_path())?;
                Ok(Outcome::Ran)
            }
            Err(e) => {
                manifest.stages.insert(
                    stage.name().to_string(),
                    StageRecord {
                        status: StageStatus::Failed,
                        inputs,
                        outputs: BTreeMap::new(),
                        started_at,
                        finished_at: None,
                        error: Some(e.to_string()),
                    },
                );
                manifest.save(&self.manifest_path())?;
                Err(e)
            }
        }
    }

    /// Run every stage in order, stopping at the first failure.
    pub fn run_all(&self) -> Result<Vec<(Stage, Outcome)>> {
        Stage::ALL.into_iter().map(|s| Ok((s, self.run(s)?))).collect()
    }
}
