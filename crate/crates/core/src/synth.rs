//! Synthetic parallel data: pivot conversion and back-translation.
//!
//! Both operations push one side of a corpus through an MT backend in
//! batches. A batch that fails at the transport level is retried with
//! exponential backoff; once `max_retries` is exhausted the run aborts and
//! leaves a checkpoint that a later call resumes from. Individual segments
//! the backend returns as missing or blank are dropped and counted in the
//! output metadata under `failed_segments`.
//!
//! Checkpoint layout: `<path>` holds a small JSON header (input hash, backend
//! id, next input index, counts) and `<path>.pairs.jsonl` the output pairs
//! produced so far. The header is replaced atomically after each committed
//! window, so on resume the pairs file is truncated to the header's count.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, Provenance, SegmentPair};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("backend `{backend}` unreachable after {attempts} attempts ({cause}); {completed} segments completed, checkpoint: {}", checkpoint.as_ref().map_or("none".to_string(), |p| p.display().to_string()))]
    BackendUnreachable {
        backend: String,
        attempts: u32,
        cause: String,
        completed: usize,
        checkpoint: Option<PathBuf>,
    },
    #[error("corpus language `{corpus}` does not match backend source language `{backend}`")]
    LanguageMismatch { corpus: String, backend: String },
    #[error("pair {index} has a non-empty target; back-translation expects monolingual input")]
    NotMonolingual { index: usize },
    #[error("checkpoint {} belongs to a different run ({reason})", path.display())]
    StaleCheckpoint { path: PathBuf, reason: String },
    #[error("invalid backend reference: {0}")]
    InvalidBackend(String),
    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
}

/// Transport-level failure of a whole batch.
#[derive(Debug, Clone, Error)]
#[error("{0}")]
pub struct BackendError(pub String);

/// Identity and client settings of an MT backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MTBackendRef {
    pub id: String,
    pub endpoint: String,
    pub src_lang: String,
    pub tgt_lang: String,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_batch() -> usize {
    32
}

fn default_retries() -> u32 {
    3
}

fn default_timeout() -> u64 {
    30_000
}

impl MTBackendRef {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.id.is_empty() {
            return Err(SynthError::InvalidBackend("empty backend id".into()));
        }
        if self.batch_size == 0 {
            return Err(SynthError::InvalidBackend(format!("{}: batch_size must be at least 1", self.id)));
        }
        Ok(())
    }
}

/// Batched text translation. `None` marks a segment the backend could not
/// translate; `Err` means the whole batch failed and may be retried.
pub trait TranslationBackend: Send + Sync {
    fn id(&self) -> &str;

    fn translate_batch(&self, texts: &[String], src: &str, tgt: &str) -> Result<Vec<Option<String>>, BackendError>;
}

/// Backend driven by a closure, for tests and quick experiments.
pub struct FnBackend<F> {
    id: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&str) -> Option<String> + Send + Sync,
{
    pub fn new(id: &str, f: F) -> Self {
        FnBackend { id: id.to_string(), f }
    }
}

impl<F> TranslationBackend for FnBackend<F>
where
    F: Fn(&str) -> Option<String> + Send + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn translate_batch(&self, texts: &[String], _src: &str, _tgt: &str) -> Result<Vec<Option<String>>, BackendError> {
        Ok(texts.iter().map(|t| (self.f)(t)).collect())
    }
}

#[derive(Serialize)]
struct HttpRequest<'a> {
    texts: &'a [String],
    src: &'a str,
    tgt: &'a str,
}

#[derive(Deserialize)]
struct HttpResponse {
    translations: Vec<Option<String>>,
}

/// JSON-over-HTTP backend: `POST {"texts": [...], "src": .., "tgt": ..}`
/// answered by `{"translations": [...]}` (null for failed segments).
pub struct HttpBackend {
    id: String,
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(r: &MTBackendRef) -> Result<Self, SynthError> {
        r.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(r.timeout_ms))
            .build()
            .map_err(|e| SynthError::InvalidBackend(e.to_string()))?;
        Ok(HttpBackend {
            id: r.id.clone(),
            endpoint: r.endpoint.clone(),
            client,
        })
    }
}

impl TranslationBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn translate_batch(&self, texts: &[String], src: &str, tgt: &str) -> Result<Vec<Option<String>>, BackendError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&HttpRequest { texts, src, tgt })
            .send()
            .map_err(|e| BackendError(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(BackendError(format!("HTTP {}", resp.status())));
        }
        let body: HttpResponse = resp.json().map_err(|e| BackendError(e.to_string()))?;
        if body.translations.len() != texts.len() {
            return Err(BackendError(format!(
                "sent {} texts, received {} translations",
                texts.len(),
                body.translations.len()
            )));
        }
        Ok(body.translations)
    }
}

/// Batching, retry and checkpoint settings for one synthesis run.
#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub src_lang: String,
    pub tgt_lang: String,
    pub batch_size: usize,
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further attempt.
    pub backoff: Duration,
    /// Batches sent concurrently; results are committed in input order.
    pub in_flight: usize,
    pub checkpoint: Option<PathBuf>,
}

impl SynthOptions {
    pub fn from_ref(r: &MTBackendRef) -> Self {
        SynthOptions {
            src_lang: r.src_lang.clone(),
            tgt_lang: r.tgt_lang.clone(),
            batch_size: r.batch_size.max(1),
            max_retries: r.max_retries,
            backoff: Duration::from_millis(200),
            in_flight: 1,
            checkpoint: None,
        }
    }

    pub fn with_checkpoint(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint = Some(path.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    backend: String,
    input_hash: String,
    next_index: usize,
    n_output: usize,
    n_failed: usize,
}

fn pairs_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".pairs.jsonl");
    PathBuf::from(name)
}

fn ckpt_err(path: &Path, e: impl ToString) -> SynthError {
    SynthError::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

struct CheckpointState {
    header: CheckpointHeader,
    pairs: Vec<SegmentPair>,
}

fn load_checkpoint(path: &Path, expected: &CheckpointHeader) -> Result<Option<CheckpointState>, SynthError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| ckpt_err(path, e))?;
    let header: CheckpointHeader = serde_json::from_str(&text).map_err(|e| ckpt_err(path, e))?;
    for (what, a, b) in [
        ("kind", &header.kind, &expected.kind),
        ("backend", &header.backend, &expected.backend),
        ("input", &header.input_hash, &expected.input_hash),
    ] {
        if a != b {
            return Err(SynthError::StaleCheckpoint {
                path: path.to_path_buf(),
                reason: format!("{what} differs"),
            });
        }
    }
    let pp = pairs_path(path);
    let mut pairs = Vec::with_capacity(header.n_output);
    if header.n_output > 0 {
        let file = fs::File::open(&pp).map_err(|e| ckpt_err(&pp, e))?;
        for line in BufReader::new(file).lines().take(header.n_output) {
            let line = line.map_err(|e| ckpt_err(&pp, e))?;
            pairs.push(serde_json::from_str(&line).map_err(|e| ckpt_err(&pp, e))?);
        }
        if pairs.len() != header.n_output {
            return Err(ckpt_err(&pp, format!("expected {} pairs, found {}", header.n_output, pairs.len())));
        }
    }
    // drop anything appended after the last committed header
    let mut file = fs::File::create(&pp).map_err(|e| ckpt_err(&pp, e))?;
    for p in &pairs {
        writeln!(file, "{}", serde_json::to_string(p).expect("pair serializes")).map_err(|e| ckpt_err(&pp, e))?;
    }
    Ok(Some(CheckpointState { header, pairs }))
}

fn commit_checkpoint(path: &Path, header: &CheckpointHeader, new_pairs: &[SegmentPair]) -> Result<(), SynthError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| ckpt_err(parent, e))?;
    }
    let pp = pairs_path(path);
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&pp)
        .map_err(|e| ckpt_err(&pp, e))?;
    for p in new_pairs {
        writeln!(file, "{}", serde_json::to_string(p).expect("pair serializes")).map_err(|e| ckpt_err(&pp, e))?;
    }
    file.sync_data().map_err(|e| ckpt_err(&pp, e))?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec(header).expect("header serializes")).map_err(|e| ckpt_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ckpt_err(path, e))
}

fn clear_checkpoint(path: &Path) {
    let _ = fs::remove_file(path);
    let _ = fs::remove_file(pairs_path(path));
}

fn translate_with_retry(
    backend: &dyn TranslationBackend,
    texts: &[String],
    opts: &SynthOptions,
) -> Result<Vec<Option<String>>, (u32, BackendError)> {
    let mut attempt = 0;
    loop {
        match backend.translate_batch(texts, &opts.src_lang, &opts.tgt_lang) {
            Ok(out) if out.len() == texts.len() => return Ok(out),
            Ok(out) => {
                let err = BackendError(format!("sent {} texts, received {}", texts.len(), out.len()));
                if attempt >= opts.max_retries {
                    return Err((attempt + 1, err));
                }
            }
            Err(e) if attempt >= opts.max_retries => return Err((attempt + 1, e)),
            Err(e) => log::warn!("backend {} batch failed (attempt {}): {e}", backend.id(), attempt + 1),
        }
        if !opts.backoff.is_zero() {
            thread::sleep(opts.backoff * 2u32.saturating_pow(attempt));
        }
        attempt += 1;
    }
}

fn input_hash(kind: &str, inputs: &[SegmentPair]) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    for p in inputs {
        h.update(serde_json::to_vec(p).expect("pair serializes"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Shared driver: translate `text_of(pair)` for every input pair and build
/// output pairs with `make`. Returns the outputs and the failure count.
fn run<T, M>(
    kind: &str,
    inputs: &[SegmentPair],
    backend: &dyn TranslationBackend,
    opts: &SynthOptions,
    text_of: T,
    make: M,
) -> Result<(Vec<SegmentPair>, usize), SynthError>
where
    T: Fn(&SegmentPair) -> &str,
    M: Fn(&SegmentPair, String) -> SegmentPair,
{
    let batch = opts.batch_size.max(1);
    let window = batch * opts.in_flight.max(1);
    let mut header = CheckpointHeader {
        kind: kind.to_string(),
        backend: backend.id().to_string(),
        input_hash: input_hash(kind, inputs),
        next_index: 0,
        n_output: 0,
        n_failed: 0,
    };
    let mut output = Vec::with_capacity(inputs.len());
    if let Some(path) = &opts.checkpoint {
        if let Some(state) = load_checkpoint(path, &header)? {
            log::info!("resuming {kind} from input {} ({})", state.header.next_index, path.display());
            header = state.header;
            output = state.pairs;
        }
    }

    while header.next_index < inputs.len() {
        let end = (header.next_index + window).min(inputs.len());
        let chunk = &inputs[header.next_index..end];
        let texts: Vec<Vec<String>> = chunk
            .chunks(batch)
            .map(|c| c.iter().map(|p| text_of(p).to_string()).collect())
            .collect();
        let results: Vec<_> = if texts.len() == 1 {
            vec![translate_with_retry(backend, &texts[0], opts)]
        } else {
            thread::scope(|s| {
                let handles: Vec<_> = texts
                    .iter()
                    .map(|t| s.spawn(move || translate_with_retry(backend, t, opts)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("batch thread panicked")).collect()
            })
        };

        let mut new_pairs = Vec::new();
        let mut offset = header.next_index;
        let mut failure = None;
        for (texts, result) in texts.iter().zip(results) {
            match result {
                Ok(translations) => {
                    for (i, t) in translations.into_iter().enumerate() {
                        match t.filter(|s| !s.trim().is_empty()) {
                            Some(t) => new_pairs.push(make(&inputs[offset + i], t)),
                            None => header.n_failed += 1,
                        }
                    }
                    offset += texts.len();
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        header.next_index = offset;
        header.n_output += new_pairs.len();
        if let Some(path) = &opts.checkpoint {
            commit_checkpoint(path, &header, &new_pairs)?;
        }
        output.extend(new_pairs);
        if let Some((attempts, cause)) = failure {
            return Err(SynthError::BackendUnreachable {
                backend: backend.id().to_string(),
                attempts,
                cause: cause.0,
                completed: header.next_index,
                checkpoint: opts.checkpoint.clone(),
            });
        }
    }
    if let Some(path) = &opts.checkpoint {
        clear_checkpoint(path);
    }
    Ok((output, header.n_failed))
}

fn finish(id: String, pairs: Vec<SegmentPair>, failed: usize, backend: &dyn TranslationBackend) -> Corpus {
    let mut c = Corpus::new(id, pairs);
    c.metadata.insert("backend".into(), backend.id().to_string());
    c.metadata.insert("failed_segments".into(), failed.to_string());
    c
}

fn synthetic_origin(origin: &str, backend: &str) -> String {
    format!("{origin}+{backend}")
}

/// Replace the (English) target side of every pair with its translation.
pub fn pivot_convert(corpus: &Corpus, backend: &dyn TranslationBackend, opts: &SynthOptions) -> Result<Corpus, SynthError> {
    if let Some(p) = corpus.pairs.iter().find(|p| p.tgt_lang.as_deref() != Some(opts.src_lang.as_str())) {
        return Err(SynthError::LanguageMismatch {
            corpus: p.tgt_lang.clone().unwrap_or_else(|| "none".into()),
            backend: opts.src_lang.clone(),
        });
    }
    let (pairs, failed) = run(
        "pivot",
        &corpus.pairs,
        backend,
        opts,
        |p| p.target.as_str(),
        |p, mt| SegmentPair {
            source: p.source.clone(),
            target: mt,
            src_lang: p.src_lang.clone(),
            tgt_lang: Some(opts.tgt_lang.clone()),
            origin: synthetic_origin(&p.origin, backend.id()),
            domain: p.domain.clone(),
            provenance: Provenance::Pivot,
        },
    )?;
    Ok(finish(format!("{}.pivot", corpus.id), pairs, failed, backend))
}

/// Pair each monolingual sentence with its machine translation.
pub fn back_translate(mono: &Corpus, backend: &dyn TranslationBackend, opts: &SynthOptions) -> Result<Corpus, SynthError> {
    if let Some(index) = mono.pairs.iter().position(|p| !p.target.is_empty()) {
        return Err(SynthError::NotMonolingual { index });
    }
    if let Some(p) = mono.pairs.iter().find(|p| p.src_lang != opts.src_lang) {
        return Err(SynthError::LanguageMismatch {
            corpus: p.src_lang.clone(),
            backend: opts.src_lang.clone(),
        });
    }
    let (pairs, failed) = run(
        "backtranslate",
        &mono.pairs,
        backend,
        opts,
        |p| p.source.as_str(),
        |p, mt| SegmentPair {
            source: p.source.clone(),
            target: mt,
            src_lang: p.src_lang.clone(),
            tgt_lang: Some(opts.tgt_lang.clone()),
            origin: synthetic_origin(&p.origin, backend.id()),
            domain: p.domain.clone(),
            provenance: Provenance::Backtranslated,
        },
    )?;
    Ok(finish(format!("{}.bt", mono.id), pairs, failed, backend))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LoadOptions;

    fn opts(src: &str, tgt: &str) -> SynthOptions {
        SynthOptions {
            src_lang: src.into(),
            tgt_lang: tgt.into(),
            batch_size: 2,
            max_retries: 2,
            backoff: Duration::ZERO,
            in_flight: 1,
            checkpoint: None,
        }
    }

    fn sw_en(rows: &[(&str, &str)]) -> Corpus {
        let o = LoadOptions::new("sw", Some("eng"), "TWBkits.sw", "general");
        Corpus::new("TWBkits.sw", rows.iter().map(|(s, t)| SegmentPair::new(*s, *t, &o)).collect())
    }

    fn mono(rows: &[&str]) -> Corpus {
        let o = LoadOptions::new("sw", None, "Wikipedia.sw", "general");
        Corpus::new("Wikipedia.sw", rows.iter().map(|s| SegmentPair::new(*s, "", &o)).collect())
    }

    #[test]
    fn pivot_with_prefix_mock() {
        let b = FnBackend::new("mock", |t: &str| Some(format!("FR:{t}")));
        let out = pivot_convert(&sw_en(&[("habari", "hello")]), &b, &opts("eng", "fra")).unwrap();
        let p = &out.pairs[0];
        assert_eq!((p.source.as_str(), p.target.as_str()), ("habari", "FR:hello"));
        assert_eq!(p.provenance, Provenance::Pivot);
        assert_eq!(p.tgt_lang.as_deref(), Some("fra"));
        assert_eq!(p.origin, "TWBkits.sw+mock");
        p.validate().unwrap();
    }

    #[test]
    fn empty_inputs() {
        let b = FnBackend::new("mock", |t: &str| Some(t.to_string()));
        assert!(pivot_convert(&sw_en(&[]), &b, &opts("eng", "fra")).unwrap().is_empty());
        assert!(back_translate(&mono(&[]), &b, &opts("sw", "fra")).unwrap().is_empty());
    }

    #[test]
    fn back_translation_identity_mock() {
        let b = FnBackend::new("id", |t: &str| Some(t.to_string()));
        let out = back_translate(&mono(&["habari"]), &b, &opts("sw", "fra")).unwrap();
        assert_eq!(out.pairs[0].source, "habari");
        assert_eq!(out.pairs[0].target, "habari");
        assert_eq!(out.pairs[0].provenance, Provenance::Backtranslated);
    }

    #[test]
    fn failed_segments_dropped_and_counted() {
        let b = FnBackend::new("flaky", |t: &str| (!t.contains("x")).then(|| t.to_uppercase()));
        let out = back_translate(&mono(&["a", "x", "b", "xx", "c"]), &b, &opts("sw", "fra")).unwrap();
        let sources: Vec<_> = out.pairs.iter().map(|p| p.source.as_str()).collect();
        assert_eq!(sources, ["a", "b", "c"]);
        assert_eq!(out.metadata["failed_segments"], "2");
    }

    #[test]
    fn preconditions() {
        let b = FnBackend::new("m", |t: &str| Some(t.to_string()));
        assert!(matches!(
            pivot_convert(&sw_en(&[("a", "b")]), &b, &opts("fra", "eng")),
            Err(SynthError::LanguageMismatch { .. })
        ));
        assert!(matches!(
            back_translate(&sw_en(&[("a", "b")]), &b, &opts("sw", "fra")),
            Err(SynthError::NotMonolingual { index: 0 })
        ));
    }

    #[test]
    fn backend_ref_validation() {
        let mut r = MTBackendRef {
            id: "opus-mt-en-fr".into(),
            endpoint: "http://localhost:1".into(),
            src_lang: "eng".into(),
            tgt_lang: "fra".into(),
            batch_size: 0,
            max_retries: 0,
            timeout_ms: 100,
        };
        assert!(r.validate().is_err());
        r.batch_size = 1;
        assert!(r.validate().is_ok());
    }
}
