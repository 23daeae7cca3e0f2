//! Corpus-level MT metrics: BLEU, ChrF, TER and HTER.
//!
//! Scores follow the conventions of the sacreBLEU and pyter reference
//! scorers: BLEU and ChrF on a 0-100 scale, TER as a ratio. All metrics are
//! case-sensitive unless the `lowercase` option is set, and use a single
//! reference per segment.

pub mod bleu;
pub mod chrf;
pub mod ter;
pub mod tokenize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{bleu, bleu_with, BleuConfig, BleuStats, Smoothing};
pub use chrf::{chrf, chrf_with, ChrfConfig, ChrfStats};
pub use ter::{hter, ter, ter_with, EditCounts, TerAggregation, TerConfig, TerStats};
pub use tokenize::{tokenize, TokenizationMode};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("reference segment {index} is empty")]
    EmptyReference { index: usize },
}

pub(crate) fn check_lengths(hypotheses: usize, references: usize) -> Result<(), MetricError> {
    if hypotheses != references {
        return Err(MetricError::LengthMismatch { hypotheses, references });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Bleu,
    Chrf,
    Ter,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Bleu => "bleu",
            Metric::Chrf => "chrf",
            Metric::Ter => "ter",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bleu" => Ok(Metric::Bleu),
            "chrf" => Ok(Metric::Chrf),
            "ter" | "hter" => Ok(Metric::Ter),
            other => Err(format!("unknown metric `{other}` (expected bleu, chrf or ter)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Components {
    Bleu(BleuStats),
    Chrf(ChrfStats),
    Ter(TerStats),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    pub score: f64,
    pub components: Components,
}
