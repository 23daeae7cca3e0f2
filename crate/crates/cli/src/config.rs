//! Workspace configuration and the on-disk artifact store.
//!
//! Every corpus a command produces is written to
//! `<workspace_dir>/corpora/<id>.jsonl` and is addressable by id from then
//! on. Materialized artifacts shadow configured corpora of the same id.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mtpipe_core::corpus::{load_corpus, moses_side_path, save_corpus, Corpus, Format, LoadOptions};
use mtpipe_core::mixer::{standard_chain, CleanReport, MixtureSpec, Workspace};
use mtpipe_core::synth::MTBackendRef;
use mtpipe_core::trainpipe::{CommandTemplate, DEV_SET_ID};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub id: String,
    /// File path, or the file prefix for `moses_pair`.
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: Format,
    pub src_lang: String,
    #[serde(default)]
    pub tgt_lang: Option<String>,
    #[serde(default = "default_domain")]
    pub domain: String,
}

fn default_format() -> Format {
    Format::Tsv
}

fn default_domain() -> String {
    "general".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DevConfig {
    #[serde(default = "default_dev_from")]
    pub from: String,
    pub n: usize,
    #[serde(default = "default_dev_id")]
    pub id: String,
}

fn default_dev_from() -> String {
    "mix.in".to_string()
}

fn default_dev_id() -> String {
    DEV_SET_ID.to_string()
}

/// Adds the five standard mixes, each with these exclusion sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    #[serde(default)]
    pub exclusions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceConfig {
    pub workspace_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub corpora: Vec<CorpusManifest>,
    #[serde(default)]
    pub mixtures: Vec<MixtureSpec>,
    #[serde(default)]
    pub standard_chain: Option<ChainConfig>,
    #[serde(default)]
    pub dev: Option<DevConfig>,
    #[serde(default)]
    pub backends: Vec<MTBackendRef>,
    #[serde(default)]
    pub trainer: Option<CommandTemplate>,
}

impl WorkspaceConfig {
    /// Parse and validate; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: WorkspaceConfig = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.workspace_dir);
        for c in &mut cfg.corpora {
            rebase(&mut c.path);
        }
        for b in &mut cfg.backends {
            if let Some(model) = b.endpoint.strip_prefix("toy:") {
                let mut path = PathBuf::from(model);
                rebase(&mut path);
                b.endpoint = format!("toy:{}", path.display());
            }
        }
        if let Some(t) = &mut cfg.trainer {
            rebase(&mut t.workdir);
        }
        if let Some(chain) = &cfg.standard_chain {
            let ex: Vec<&str> = chain.exclusions.iter().map(String::as_str).collect();
            for spec in standard_chain(&ex) {
                if !cfg.mixtures.iter().any(|m| m.id == spec.id) {
                    cfg.mixtures.push(spec);
                }
            }
        }
        cfg.validate().with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let all = self
            .corpora
            .iter()
            .map(|c| &c.id)
            .chain(self.mixtures.iter().map(|m| &m.id))
            .chain(self.backends.iter().map(|b| &b.id));
        for id in all {
            if !ids.insert(id.as_str()) {
                bail!("id `{id}` is defined more than once");
            }
        }
        for c in &self.corpora {
            let files = match c.format {
                Format::MosesPair => {
                    let tgt = c
                        .tgt_lang
                        .as_deref()
                        .ok_or_else(|| anyhow!("corpus `{}`: moses_pair needs tgt_lang", c.id))?;
                    vec![moses_side_path(&c.path, &c.src_lang), moses_side_path(&c.path, tgt)]
                }
                _ => vec![c.path.clone()],
            };
            for f in files {
                if !f.exists() {
                    bail!("corpus `{}`: file {} does not exist", c.id, f.display());
                }
            }
        }
        for b in &self.backends {
            b.validate().map_err(|e| anyhow!("backend `{}`: {e}", b.id))?;
        }
        Ok(())
    }

    pub fn backend(&self, id: &str) -> Result<&MTBackendRef> {
        self.backends
            .iter()
            .find(|b| b.id == id)
            .ok_or_else(|| anyhow!("unknown backend `{id}`"))
    }

    pub fn corpora_dir(&self) -> PathBuf {
        self.workspace_dir.join("corpora")
    }

    pub fn artifact_path(&self, id: &str) -> PathBuf {
        self.corpora_dir().join(format!("{id}.jsonl"))
    }

    pub fn report_path(&self, id: &str) -> PathBuf {
        self.corpora_dir().join(format!("{id}.report.json"))
    }

    pub fn load_manifest_corpus(&self, m: &CorpusManifest) -> Result<Corpus> {
        let opts = LoadOptions::new(&m.src_lang, m.tgt_lang.as_deref(), &m.id, &m.domain);
        load_corpus(&m.path, m.format, &opts).with_context(|| format!("corpus `{}`", m.id))
    }

    /// Stored artifacts by id.
    pub fn artifacts(&self) -> Result<BTreeMap<String, PathBuf>> {
        let mut out = BTreeMap::new();
        let dir = self.corpora_dir();
        if !dir.exists() {
            return Ok(out);
        }
        for entry in fs::read_dir(&dir).with_context(|| format!("cannot list {}", dir.display()))? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(id) = name.strip_suffix(".jsonl") {
                out.insert(id.to_string(), path.clone());
            }
        }
        Ok(out)
    }

    /// Configured corpora, mixture specs and stored artifacts.
    /// `with_mixture_artifacts = false` skips stored copies of mixtures so
    /// they are rebuilt from their specs.
    pub fn workspace(&self, with_mixture_artifacts: bool) -> Result<Workspace> {
        let mut ws = Workspace::new();
        for m in &self.corpora {
            ws.add_corpus(self.load_manifest_corpus(m)?);
        }
        for spec in &self.mixtures {
            ws.add_mixture(spec.clone());
        }
        for (id, path) in self.artifacts()? {
            let is_mixture = self.mixtures.iter().any(|m| m.id == id);
            if is_mixture && !with_mixture_artifacts {
                continue;
            }
            ws.add_corpus(load_artifact(&id, &path)?);
        }
        Ok(ws)
    }

    pub fn store(&self, corpus: &Corpus) -> Result<PathBuf> {
        let path = self.artifact_path(&corpus.id);
        save_corpus(corpus, &path, Format::Jsonl).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    pub fn store_report(&self, id: &str, report: &CleanReport) -> Result<()> {
        let path = self.report_path(id);
        fs::write(&path, serde_json::to_string_pretty(report)?).with_context(|| format!("cannot write {}", path.display()))
    }
}

pub fn load_artifact(id: &str, path: &Path) -> Result<Corpus> {
    let opts = LoadOptions::new("und", None, id, "general");
    let mut c = load_corpus(path, Format::Jsonl, &opts).with_context(|| format!("artifact `{id}`"))?;
    c.id = id.to_string();
    Ok(c)
}
