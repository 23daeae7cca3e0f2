//! Deterministic desk-scale trainer backend.
//!
//! "Training" fits a word dictionary by positional alignment: in a pair with
//! `n` source and `m` target tokens, source token `i` is aligned to target
//! token `i * m / n`. Each source token maps to its most frequently aligned
//! target token (ties to the lexicographically smallest). A stage
//! initialized from a checkpoint starts from that checkpoint's dictionary
//! and overrides it with its own entries. Dev perplexity follows a seeded
//! schedule that decays exponentially towards a floor and then plateaus in
//! noise.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{BackendFailure, CheckpointHandle, StageContext, TrainerBackend, ValidationEvent};
use crate::corpus::Corpus;
use crate::rng;
use crate::synth::{BackendError as SynthBackendError, TranslationBackend};

/// Validations after which the toy trainer reports itself done.
const MAX_VALIDATIONS: u64 = 10_000;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyModel {
    pub dictionary: BTreeMap<String, String>,
}

impl ToyModel {
    pub fn fit(corpus: &Corpus) -> Self {
        let mut counts: HashMap<&str, HashMap<&str, u64>> = HashMap::new();
        for p in &corpus.pairs {
            let src: Vec<&str> = p.source.split_whitespace().collect();
            let tgt: Vec<&str> = p.target.split_whitespace().collect();
            if tgt.is_empty() {
                continue;
            }
            for (i, s) in src.iter().enumerate() {
                let t = tgt[i * tgt.len() / src.len()];
                *counts.entry(s).or_default().entry(t).or_default() += 1;
            }
        }
        let dictionary = counts
            .into_iter()
            .map(|(s, ts)| {
                let (best, _) = ts
                    .into_iter()
                    .max_by(|(a, ca), (b, cb)| ca.cmp(cb).then_with(|| b.cmp(a)))
                    .expect("aligned token has a count");
                (s.to_string(), best.to_string())
            })
            .collect();
        ToyModel { dictionary }
    }

    /// `self` extended with `finer`, whose entries win.
    pub fn overridden_by(&self, finer: ToyModel) -> ToyModel {
        let mut dictionary = self.dictionary.clone();
        dictionary.extend(finer.dictionary);
        ToyModel { dictionary }
    }

    /// Word-by-word lookup; unknown tokens are copied through.
    pub fn translate(&self, text: &str) -> String {
        text.split_whitespace()
            .map(|w| self.dictionary.get(w).map_or(w, String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<(), String> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
        }
        std::fs::write(path, serde_json::to_vec_pretty(self).expect("model serializes"))
            .map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// A fitted toy model served as an MT backend.
pub struct ToyTranslator {
    pub id: String,
    pub model: ToyModel,
}

impl TranslationBackend for ToyTranslator {
    fn id(&self) -> &str {
        &self.id
    }

    fn translate_batch(&self, texts: &[String], _src: &str, _tgt: &str) -> Result<Vec<Option<String>>, SynthBackendError> {
        Ok(texts.iter().map(|t| Some(self.model.translate(t))).collect())
    }
}

struct Run {
    tag: String,
    model: Arc<ToyModel>,
    rng: ChaCha20Rng,
    start: f64,
    floor: f64,
    interval: u64,
    validations: u64,
    stopped: bool,
}

pub struct ToyBackend {
    checkpoints: BTreeMap<CheckpointHandle, Arc<ToyModel>>,
    run: Option<Run>,
}

impl Default for ToyBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl ToyBackend {
    pub fn new() -> Self {
        ToyBackend {
            checkpoints: BTreeMap::new(),
            run: None,
        }
    }

    pub fn model(&self, checkpoint: &CheckpointHandle) -> Option<Arc<ToyModel>> {
        self.checkpoints.get(checkpoint).cloned()
    }
}

/// Perplexity of validation `k` (1-based) before noise.
fn schedule(start: f64, floor: f64, k: u64) -> f64 {
    floor + (start - floor) * (-(k as f64) / 4.0).exp()
}

impl TrainerBackend for ToyBackend {
    fn id(&self) -> &str {
        "toy"
    }

    fn prepare(
        &mut self,
        stage: &StageContext<'_>,
        train: &Corpus,
        _dev: &Corpus,
        init_from: Option<&CheckpointHandle>,
    ) -> Result<(), BackendFailure> {
        let fitted = ToyModel::fit(train);
        let model = match init_from {
            Some(h) => self
                .checkpoints
                .get(h)
                .ok_or_else(|| BackendFailure(format!("unknown checkpoint `{}`", h.0)))?
                .overridden_by(fitted),
            None => fitted,
        };
        let floor = 3.0 + 40.0 / (1.0 + train.len() as f64).sqrt();
        self.run = Some(Run {
            tag: format!("toy:{}:{}:{}", stage.procedure, stage.direction, stage.stage_index + 1),
            model: Arc::new(model),
            rng: rng::seeded(stage.seed),
            start: if init_from.is_some() { 4.0 * floor } else { 40.0 * floor },
            floor,
            interval: stage.hyperparams.validation_interval,
            validations: 0,
            stopped: false,
        });
        Ok(())
    }

    fn next_validation(&mut self) -> Result<Option<ValidationEvent>, BackendFailure> {
        let run = self.run.as_mut().ok_or_else(|| BackendFailure("no stage prepared".into()))?;
        if run.stopped || run.validations >= MAX_VALIDATIONS {
            return Ok(None);
        }
        run.validations += 1;
        let clean = schedule(run.start, run.floor, run.validations);
        let noise: f64 = run.rng.gen_range(-0.03..0.03);
        Ok(Some(ValidationEvent {
            step: run.validations * run.interval,
            dev_perplexity: clean * (1.0 + noise),
        }))
    }

    fn checkpoint(&mut self) -> Result<CheckpointHandle, BackendFailure> {
        let run = self.run.as_ref().ok_or_else(|| BackendFailure("no stage prepared".into()))?;
        let handle = CheckpointHandle(format!("{}:v{}", run.tag, run.validations));
        self.checkpoints.insert(handle.clone(), run.model.clone());
        Ok(handle)
    }

    fn stop(&mut self) {
        if let Some(run) = self.run.as_mut() {
            run.stopped = true;
        }
    }

    fn translate(&self, checkpoint: &CheckpointHandle, texts: &[String]) -> Result<Vec<String>, BackendFailure> {
        let model = self
            .checkpoints
            .get(checkpoint)
            .ok_or_else(|| BackendFailure(format!("unknown checkpoint `{}`", checkpoint.0)))?;
        Ok(texts.iter().map(|t| model.translate(t)).collect())
    }
}
