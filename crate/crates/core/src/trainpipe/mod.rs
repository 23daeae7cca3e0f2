//! Staged training orchestration over an abstract trainer backend.
//!
//! A procedure is an ordered list of stages, each training on one mixture
//! and initializing from the previous stage's best checkpoint. Within a
//! stage the orchestrator consumes validation events and stops the backend
//! once `patience` consecutive validations fail to beat the global best dev
//! perplexity (strictly lower), or once `max_steps` is reached.

mod command;
mod toy;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{normalize_text, Corpus};
use crate::mixer::{MixError, Workspace};

pub use command::{CommandBackend, CommandTemplate};
pub use toy::{ToyBackend, ToyModel, ToyTranslator};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("stage {stage}: {count} dev sources also occur in the training data, e.g. `{sample}`")]
    DevOverlap { stage: usize, count: usize, sample: String },
    #[error("stage {stage}: backend failed ({cause}) after {} validations; last checkpoint: {}", events.len(), last_checkpoint.as_ref().map_or("none", |c| c.0.as_str()))]
    BackendCrashed {
        stage: usize,
        cause: String,
        last_checkpoint: Option<CheckpointHandle>,
        events: Vec<ValidationEvent>,
    },
    #[error("stage {stage}: backend finished without reporting a validation")]
    NoValidations { stage: usize },
    #[error("stage {stage}: invalid dev perplexity {value} at step {step}")]
    InvalidPerplexity { stage: usize, step: u64, value: f64 },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

/// Failure reported by a trainer backend.
#[derive(Debug, Clone, Error)]
#[error("{0}")]
pub struct BackendFailure(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperParams {
    pub layers: u32,
    pub heads: u32,
    pub hidden_size: u32,
    pub token_batch: u32,
    pub warmup_steps: u32,
    pub optimizer: Optimizer,
    pub validation_interval: u64,
    pub patience: u32,
    /// Hard bound on training steps within one stage.
    pub max_steps: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            layers: 6,
            heads: 8,
            hidden_size: 512,
            token_batch: 2048,
            warmup_steps: 4000,
            optimizer: Optimizer::Adam,
            validation_interval: 1000,
            patience: 5,
            max_steps: 200_000,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), TrainError> {
        let counts = [
            ("layers", self.layers as u64),
            ("heads", self.heads as u64),
            ("hidden_size", self.hidden_size as u64),
            ("token_batch", self.token_batch as u64),
            ("warmup_steps", self.warmup_steps as u64),
            ("validation_interval", self.validation_interval),
            ("patience", self.patience as u64),
            ("max_steps", self.max_steps),
        ];
        match counts.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(TrainError::InvalidHyperParams(format!("{name} must be at least 1"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProcedureId {
    A,
    B,
    C,
    D,
}

impl ProcedureId {
    pub const ALL: [ProcedureId; 4] = [ProcedureId::A, ProcedureId::B, ProcedureId::C, ProcedureId::D];
}

impl fmt::Display for ProcedureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ProcedureId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(ProcedureId::A),
            "B" => Ok(ProcedureId::B),
            "C" => Ok(ProcedureId::C),
            "D" => Ok(ProcedureId::D),
            _ => Err(format!("unknown procedure `{s}` (expected A, B, C or D)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Direction {
    #[default]
    #[serde(rename = "swc-fra")]
    SwcFra,
    #[serde(rename = "fra-swc")]
    FraSwc,
}

impl Direction {
    pub fn langs(&self) -> (&'static str, &'static str) {
        match self {
            Direction::SwcFra => ("swc", "fra"),
            Direction::FraSwc => ("fra", "swc"),
        }
    }

    /// Orient a swc-fra corpus for this direction.
    pub fn orient(&self, corpus: &Corpus) -> Corpus {
        match self {
            Direction::SwcFra => corpus.clone(),
            Direction::FraSwc => {
                let mut c = Corpus::new(corpus.id.clone(), corpus.pairs.iter().map(|p| p.reversed()).collect());
                c.metadata = corpus.metadata.clone();
                c
            }
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (s, t) = self.langs();
        write!(f, "{s}-{t}")
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('→', "-").replace("->", "-").as_str() {
            "swc-fra" => Ok(Direction::SwcFra),
            "fra-swc" => Ok(Direction::FraSwc),
            _ => Err(format!("unknown direction `{s}` (expected swc-fra or fra-swc)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub mixture_id: String,
    pub hyperparams: HyperParams,
    /// Index of the stage whose best checkpoint initializes this one.
    pub init_from: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcedureSpec {
    pub id: ProcedureId,
    pub stages: Vec<StageSpec>,
    pub dev_set: String,
    pub direction: Direction,
}

impl ProcedureSpec {
    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    /// Apply `f` to every stage's hyperparameters.
    pub fn map_hyperparams(mut self, f: impl Fn(&mut HyperParams)) -> Self {
        for s in &mut self.stages {
            f(&mut s.hyperparams);
        }
        self
    }
}

pub const DEV_SET_ID: &str = "mix.in.dev";

/// Procedures A-D. Every stage after the first initializes from its
/// predecessor; the final mix.in stage uses a 512-token batch.
pub fn standard_procedures() -> BTreeMap<ProcedureId, ProcedureSpec> {
    let plans: [(ProcedureId, &[&str]); 4] = [
        (ProcedureId::A, &["mix.swc", "mix.in"]),
        (ProcedureId::B, &["mix.sw", "mix.swc", "mix.in"]),
        (ProcedureId::C, &["mix.mted", "mix.swc", "mix.in"]),
        (ProcedureId::D, &["mix.mono", "mix.swc", "mix.in"]),
    ];
    plans
        .into_iter()
        .map(|(id, mixes)| {
            let last = mixes.len() - 1;
            let stages = mixes
                .iter()
                .enumerate()
                .map(|(k, m)| StageSpec {
                    mixture_id: m.to_string(),
                    hyperparams: HyperParams {
                        token_batch: if k == last { 512 } else { 2048 },
                        ..HyperParams::default()
                    },
                    init_from: k.checked_sub(1),
                })
                .collect();
            let spec = ProcedureSpec {
                id,
                stages,
                dev_set: DEV_SET_ID.to_string(),
                direction: Direction::SwcFra,
            };
            (id, spec)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationEvent {
    pub step: u64,
    pub dev_perplexity: f64,
}

/// Backend-defined checkpoint reference.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CheckpointHandle(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    PatienceExhausted,
    MaxSteps,
    BackendDone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub mixture_id: String,
    pub best_checkpoint: CheckpointHandle,
    pub best_perplexity: f64,
    /// 1-based index of the validation that produced the best checkpoint.
    pub best_validation: usize,
    pub n_validations: usize,
    pub stop_reason: StopReason,
    pub init_from: Option<CheckpointHandle>,
    pub events: Vec<ValidationEvent>,
}

/// What a backend needs to know about the stage it is asked to train.
#[derive(Debug, Clone)]
pub struct StageContext<'a> {
    pub procedure: ProcedureId,
    pub direction: Direction,
    pub stage_index: usize,
    pub mixture_id: &'a str,
    pub hyperparams: &'a HyperParams,
    pub seed: u64,
}

/// Contract between the orchestrator and a training toolkit.
pub trait TrainerBackend {
    fn id(&self) -> &str;

    /// Set up (and typically start) training of one stage.
    fn prepare(
        &mut self,
        stage: &StageContext<'_>,
        train: &Corpus,
        dev: &Corpus,
        init_from: Option<&CheckpointHandle>,
    ) -> Result<(), BackendFailure>;

    /// Block until the next validation; `None` once training ended on its own.
    fn next_validation(&mut self) -> Result<Option<ValidationEvent>, BackendFailure>;

    /// Handle to the model as of the latest validation.
    fn checkpoint(&mut self) -> Result<CheckpointHandle, BackendFailure>;

    fn stop(&mut self);

    /// Decode `texts` with a checkpoint produced by this backend.
    fn translate(&self, checkpoint: &CheckpointHandle, texts: &[String]) -> Result<Vec<String>, BackendFailure>;
}

/// Patience on the global best: stop after `patience` consecutive
/// observations that are not strictly below the best seen so far.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: u32,
    best: Option<f64>,
    since_best: u32,
}

impl EarlyStopper {
    pub fn new(patience: u32) -> Self {
        EarlyStopper {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Record a value; true when it is a new global best.
    pub fn observe(&mut self, value: f64) -> bool {
        if self.best.map_or(true, |b| value < b) {
            self.best = Some(value);
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn exhausted(&self) -> bool {
        self.since_best >= self.patience
    }
}

fn check_disjoint(stage: usize, train: &Corpus, dev: &Corpus) -> Result<(), TrainError> {
    let sources: HashSet<String> = train.pairs.iter().map(|p| normalize_text(&p.source)).collect();
    let overlapping: Vec<&str> = dev
        .pairs
        .iter()
        .filter(|p| sources.contains(&normalize_text(&p.source)))
        .map(|p| p.source.as_str())
        .collect();
    match overlapping.first() {
        Some(sample) => Err(TrainError::DevOverlap {
            stage,
            count: overlapping.len(),
            sample: sample.to_string(),
        }),
        None => Ok(()),
    }
}

/// Train one stage to completion under the early-stopping rule.
pub fn run_stage(
    ctx: &StageContext<'_>,
    backend: &mut dyn TrainerBackend,
    train: &Corpus,
    dev: &Corpus,
    init_from: Option<&CheckpointHandle>,
) -> Result<StageResult, TrainError> {
    let stage = ctx.stage_index;
    ctx.hyperparams.validate()?;
    check_disjoint(stage, train, dev)?;
    let crashed = |cause: BackendFailure, best: &Option<CheckpointHandle>, events: &[ValidationEvent]| {
        TrainError::BackendCrashed {
            stage,
            cause: cause.0,
            last_checkpoint: best.clone(),
            events: events.to_vec(),
        }
    };

    backend
        .prepare(ctx, train, dev, init_from)
        .map_err(|e| crashed(e, &None, &[]))?;
    let mut stopper = EarlyStopper::new(ctx.hyperparams.patience);
    let mut events = Vec::new();
    let mut best: Option<CheckpointHandle> = None;
    let mut best_validation = 0;
    let stop_reason = loop {
        let event = match backend.next_validation() {
            Ok(Some(ev)) => ev,
            Ok(None) => break StopReason::BackendDone,
            Err(e) => {
                backend.stop();
                return Err(crashed(e, &best, &events));
            }
        };
        if !(event.dev_perplexity.is_finite() && event.dev_perplexity > 0.0) {
            backend.stop();
            return Err(TrainError::InvalidPerplexity {
                stage,
                step: event.step,
                value: event.dev_perplexity,
            });
        }
        events.push(event);
        if stopper.observe(event.dev_perplexity) {
            best = Some(backend.checkpoint().map_err(|e| crashed(e, &best, &events))?);
            best_validation = events.len();
        }
        if stopper.exhausted() {
            break StopReason::PatienceExhausted;
        }
        if event.step >= ctx.hyperparams.max_steps {
            break StopReason::MaxSteps;
        }
    };
    backend.stop();
    let (Some(best_checkpoint), Some(best_perplexity)) = (best, stopper.best()) else {
        return Err(TrainError::NoValidations { stage });
    };
    Ok(StageResult {
        mixture_id: ctx.mixture_id.to_string(),
        best_checkpoint,
        best_perplexity,
        best_validation,
        n_validations: events.len(),
        stop_reason,
        init_from: init_from.cloned(),
        events,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub mixture_id: String,
    pub mixture_hash: String,
    pub n_train: usize,
    pub hyperparams: HyperParams,
    pub result: StageResult,
}

/// Reproducibility record of one procedure run. `hash` covers every other
/// field; the manifest carries no timestamps so reruns compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub procedure: ProcedureId,
    pub direction: Direction,
    pub backend: String,
    pub seed: u64,
    pub dev_set: String,
    pub dev_hash: String,
    pub stages: Vec<StageRecord>,
    pub hash: String,
}

impl RunManifest {
    pub fn compute_hash(&self) -> String {
        let mut unhashed = self.clone();
        unhashed.hash = String::new();
        hex::encode(Sha256::digest(serde_json::to_vec(&unhashed).expect("manifest serializes")))
    }

    pub fn final_checkpoint(&self) -> Option<&CheckpointHandle> {
        self.stages.last().map(|s| &s.result.best_checkpoint)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let io = |e: std::io::Error| TrainError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(io)
    }
}

/// Run every stage of `spec` in order, threading best checkpoints.
/// All mixtures and the dev set are resolved before training starts.
pub fn run_procedure(
    spec: &ProcedureSpec,
    backend: &mut dyn TrainerBackend,
    workspace: &Workspace,
    seed: u64,
) -> Result<RunManifest, TrainError> {
    let dev = spec.direction.orient(&workspace.resolve(&spec.dev_set)?);
    let mut corpora = Vec::with_capacity(spec.stages.len());
    for stage in &spec.stages {
        stage.hyperparams.validate()?;
        corpora.push(spec.direction.orient(&workspace.resolve(&stage.mixture_id)?));
    }

    let mut records: Vec<StageRecord> = Vec::with_capacity(spec.stages.len());
    for (k, (stage, train)) in spec.stages.iter().zip(&corpora).enumerate() {
        let init = stage.init_from.and_then(|i| records.get(i)).map(|r| r.result.best_checkpoint.clone());
        let ctx = StageContext {
            procedure: spec.id,
            direction: spec.direction,
            stage_index: k,
            mixture_id: &stage.mixture_id,
            hyperparams: &stage.hyperparams,
            seed: seed.wrapping_add(k as u64),
        };
        log::info!("procedure {} stage {}: training on {} ({} pairs)", spec.id, k + 1, stage.mixture_id, train.len());
        let result = run_stage(&ctx, backend, train, &dev, init.as_ref())?;
        records.push(StageRecord {
            mixture_id: stage.mixture_id.clone(),
            mixture_hash: train.content_hash(),
            n_train: train.len(),
            hyperparams: stage.hyperparams.clone(),
            result,
        });
    }
    let mut manifest = RunManifest {
        procedure: spec.id,
        direction: spec.direction,
        backend: backend.id().to_string(),
        seed,
        dev_set: spec.dev_set.clone(),
        dev_hash: dev.content_hash(),
        stages: records,
        hash: String::new(),
    };
    manifest.hash = manifest.compute_hash();
    Ok(manifest)
}
