//! Append-only JSONL annotation store.
//!
//! One file per record kind (`da_responses.jsonl`, `pe_segments.jsonl`).
//! Sequence numbers are global to the store and strictly increasing in
//! each file. The in-memory indexes are rebuilt by replaying both files, so
//! every report derived from them depends only on the file contents.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mtpipe_core::humaneval::DAResponse;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DA_FILE: &str = "da_responses.jsonl";
pub const PE_FILE: &str = "pe_segments.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{}:{line}: {message}", path.display())]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("duplicate response for string `{string_id}` by rater `{rater_id}`")]
    Duplicate { string_id: String, rater_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Payload {
    DaResponse {
        batch_id: String,
        survey_id: String,
        response: DAResponse,
    },
    PeSegment {
        task_id: String,
        segment_index: usize,
        post_edited_text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sequence: u64,
    pub timestamp_ms: u64,
    pub rater_id: String,
    #[serde(flatten)]
    pub payload: Payload,
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    next_sequence: u64,
    da: Vec<AnnotationRecord>,
    da_keys: HashSet<(String, String, String)>,
    /// task -> segment -> latest post-edit
    pe: BTreeMap<String, BTreeMap<usize, String>>,
    n_pe_records: usize,
}

fn io_err(path: &Path, e: impl ToString) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn replay(path: &Path) -> Result<Vec<AnnotationRecord>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path, e)),
    };
    let mut records: Vec<AnnotationRecord> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        if records.last().is_some_and(|prev| prev.sequence >= rec.sequence) {
            return Err(corrupt(format!("sequence {} is not increasing", rec.sequence)));
        }
        records.push(rec);
    }
    Ok(records)
}

impl Store {
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut store = Store {
            dir: dir.to_path_buf(),
            next_sequence: 1,
            da: Vec::new(),
            da_keys: HashSet::new(),
            pe: BTreeMap::new(),
            n_pe_records: 0,
        };
        let mut all = replay(&dir.join(DA_FILE))?;
        all.extend(replay(&dir.join(PE_FILE))?);
        all.sort_by_key(|r| r.sequence);
        for rec in all {
            store.apply(rec)?;
        }
        Ok(store)
    }

    fn apply(&mut self, rec: AnnotationRecord) -> Result<(), StoreError> {
        self.next_sequence = self.next_sequence.max(rec.sequence + 1);
        match &rec.payload {
            Payload::DaResponse { batch_id, response, .. } => {
                let key = (batch_id.clone(), response.string_id.clone(), response.rater_id.clone());
                if !self.da_keys.insert(key) {
                    return Err(StoreError::Duplicate {
                        string_id: response.string_id.clone(),
                        rater_id: response.rater_id.clone(),
                    });
                }
                self.da.push(rec);
            }
            Payload::PeSegment {
                task_id,
                segment_index,
                post_edited_text,
            } => {
                self.pe
                    .entry(task_id.clone())
                    .or_default()
                    .insert(*segment_index, post_edited_text.clone());
                self.n_pe_records += 1;
            }
        }
        Ok(())
    }

    pub fn has_da(&self, batch_id: &str, string_id: &str, rater_id: &str) -> bool {
        self.da_keys
            .contains(&(batch_id.to_string(), string_id.to_string(), rater_id.to_string()))
    }

    /// Append one record; returns its sequence number.
    pub fn append(&mut self, rater_id: &str, payload: Payload) -> Result<u64, StoreError> {
        if let Payload::DaResponse { batch_id, response, .. } = &payload {
            if self.has_da(batch_id, &response.string_id, &response.rater_id) {
                return Err(StoreError::Duplicate {
                    string_id: response.string_id.clone(),
                    rater_id: response.rater_id.clone(),
                });
            }
        }
        let file = match payload {
            Payload::DaResponse { .. } => DA_FILE,
            Payload::PeSegment { .. } => PE_FILE,
        };
        let rec = AnnotationRecord {
            sequence: self.next_sequence,
            timestamp_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
            rater_id: rater_id.to_string(),
            payload,
        };
        let path = self.dir.join(file);
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        // one write call per record keeps appends whole
        f.write_all(line.as_bytes()).map_err(|e| io_err(&path, e))?;
        f.sync_data().map_err(|e| io_err(&path, e))?;
        let sequence = rec.sequence;
        self.apply(rec)?;
        Ok(sequence)
    }

    /// DA responses of one batch in submission order.
    pub fn da_responses(&self, batch_id: &str) -> Vec<DAResponse> {
        self.da
            .iter()
            .filter_map(|r| match &r.payload {
                Payload::DaResponse { batch_id: b, response, .. } if b == batch_id => Some(response.clone()),
                _ => None,
            })
            .collect()
    }

    /// Latest post-edit per segment of one task, by segment index.
    pub fn post_edits(&self, task_id: &str) -> BTreeMap<usize, String> {
        self.pe.get(task_id).cloned().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.da.len() + self.n_pe_records
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
