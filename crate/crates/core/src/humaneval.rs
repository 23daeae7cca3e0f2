//! Direct-assessment surveys and post-editing evaluation.
//!
//! Each DA item is rated by two raters: Q1 "is the main meaning conveyed"
//! (no / kind of / yes), Q2 a 0-10 quality score, and Q3 a free-text
//! explanation that is mandatory for Q2 scores of 4 or less. Per string the
//! two answers are averaged; Q1 answers are mapped to no=0, kind_of=2,
//! yes=4 before averaging so a split decision lands between the tiers.
//!
//! A string is excluded from the report, with the first matching reason in
//! this order, when it is flagged as containing Lingala, when it has fewer
//! than two responses, or when the raters' Q2 scores differ by more than the
//! gap threshold.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, tokenize::split_whitespace, EditCounts, MetricError, MetricReport, TokenizationMode};
use crate::rng;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need {required} strings for the surveys, have {available}")]
    InsufficientStrings { required: usize, available: usize },
    #[error("need {required} raters for the surveys, have {available}")]
    InsufficientRaters { required: usize, available: usize },
    #[error("duplicate rater id `{0}` in the rater pool")]
    DuplicateRater(String),
    #[error("response references unknown string `{0}`")]
    UnknownString(String),
    #[error("duplicate response from rater `{rater_id}` for string `{string_id}`")]
    DuplicateResponse { string_id: String, rater_id: String },
    #[error("q2 score {q2} out of range 0-10 (string `{string_id}`, rater `{rater_id}`)")]
    Q2OutOfRange { string_id: String, rater_id: String, q2: u8 },
    #[error("q3 explanation required for q2 score {q2} (string `{string_id}`, rater `{rater_id}`)")]
    MissingExplanation { string_id: String, rater_id: String, q2: u8 },
    #[error("{raw} raw segments, {post_edited} post-edited, {sources} source")]
    LengthMismatch { raw: usize, post_edited: usize, sources: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalString {
    pub id: String,
    pub source: String,
    pub mt_output: String,
    #[serde(default)]
    pub lingala_flag: bool,
    #[serde(default)]
    pub char_len: usize,
    #[serde(default)]
    pub word_len: usize,
}

impl EvalString {
    pub fn new(id: &str, source: &str, mt_output: &str, lingala_flag: bool) -> Self {
        EvalString {
            id: id.to_string(),
            source: source.to_string(),
            mt_output: mt_output.to_string(),
            lingala_flag,
            char_len: 0,
            word_len: 0,
        }
        .with_lengths()
    }

    /// Recompute `char_len` and `word_len` from the source text.
    pub fn with_lengths(mut self) -> Self {
        self.char_len = self.source.chars().count();
        self.word_len = split_whitespace(&self.source).len();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Q1 {
    No,
    KindOf,
    Yes,
}

impl Q1 {
    pub fn points(self) -> u8 {
        match self {
            Q1::No => 0,
            Q1::KindOf => 2,
            Q1::Yes => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DAResponse {
    pub string_id: String,
    pub rater_id: String,
    pub q1: Q1,
    pub q2: u8,
    #[serde(default)]
    pub q3: Option<String>,
}

impl DAResponse {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.q2 > 10 {
            return Err(EvalError::Q2OutOfRange {
                string_id: self.string_id.clone(),
                rater_id: self.rater_id.clone(),
                q2: self.q2,
            });
        }
        let explained = self.q3.as_deref().is_some_and(|t| !t.trim().is_empty());
        if self.q2 <= 4 && !explained {
            return Err(EvalError::MissingExplanation {
                string_id: self.string_id.clone(),
                rater_id: self.rater_id.clone(),
                q2: self.q2,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    Lingala,
    MissingRater,
    ScoreGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DAStringResult {
    pub string_id: String,
    pub n_responses: usize,
    pub q2_avg: Option<f64>,
    pub q2_gap: Option<u8>,
    pub q1_score: Option<f64>,
    pub q1_agree: Option<bool>,
    pub included: bool,
    pub exclusion_reason: Option<ExclusionReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StdDevKind {
    /// n - 1 denominator.
    #[default]
    Sample,
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DAConfig {
    pub gap_threshold: u8,
    pub stddev: StdDevKind,
}

impl Default for DAConfig {
    fn default() -> Self {
        DAConfig {
            gap_threshold: 3,
            stddev: StdDevKind::Sample,
        }
    }
}

/// Summary statistics over the included strings. Percentages are 0-100
/// and computed over `n_included`; they are `None` when nothing is included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DAReport {
    pub n_total: usize,
    pub n_included: usize,
    pub n_excluded_lingala: usize,
    pub n_excluded_missing: usize,
    pub n_excluded_gap: usize,
    pub q2_mean: Option<f64>,
    pub q2_stddev: Option<f64>,
    pub q2_median_rater_gap: Option<f64>,
    /// Share of strings with averaged Q1 score above 0.
    pub pct_main_message_conveyed: Option<f64>,
    /// Share of strings where both raters answered yes (Q1 score 4).
    pub pct_both_yes: Option<f64>,
    /// Share of strings where the raters gave different Q1 answers.
    pub q1_disagreement_pct: Option<f64>,
    /// Count of strings per averaged Q1 score 0, 1, 2, 3, 4.
    pub q1_distribution: [usize; 5],
    pub config: DAConfig,
}

impl DAReport {
    /// Plain-text summary table.
    pub fn summary_table(&self) -> String {
        fn num(v: Option<f64>, suffix: &str) -> String {
            v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}{suffix}"))
        }
        let mut out = String::new();
        let rows: [(&str, String); 10] = [
            ("strings", self.n_total.to_string()),
            ("included", self.n_included.to_string()),
            (
                "excluded (lingala/missing/gap)",
                format!("{}/{}/{}", self.n_excluded_lingala, self.n_excluded_missing, self.n_excluded_gap),
            ),
            ("q2 mean (0-10)", num(self.q2_mean, "")),
            ("q2 std dev", num(self.q2_stddev, "")),
            ("median rater gap", num(self.q2_median_rater_gap, "")),
            ("main message conveyed", num(self.pct_main_message_conveyed, "%")),
            ("both raters yes", num(self.pct_both_yes, "%")),
            ("q1 disagreement", num(self.q1_disagreement_pct, "%")),
            (
                "q1 score histogram 0..4",
                self.q1_distribution
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<32} {v:>12}");
        }
        out
    }
}

impl fmt::Display for DAReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.summary_table())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Survey {
    pub id: String,
    pub string_ids: Vec<String>,
    pub raters: Vec<String>,
}

/// A set of disjoint surveys over one pool of strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyBatch {
    pub batch_id: String,
    pub seed: u64,
    pub surveys: Vec<Survey>,
    pub strings: Vec<EvalString>,
}

impl SurveyBatch {
    pub fn survey(&self, id: &str) -> Option<&Survey> {
        self.surveys.iter().find(|s| s.id == id)
    }

    pub fn string(&self, id: &str) -> Option<&EvalString> {
        self.strings.iter().find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SurveyShape {
    pub n_surveys: usize,
    pub per_survey: usize,
    pub raters_per_survey: usize,
}

/// Randomly partition strings into disjoint surveys and give each survey
/// its own raters; every rater answers exactly one survey.
pub fn build_surveys(
    batch_id: &str,
    strings: &[EvalString],
    raters: &[String],
    shape: SurveyShape,
    seed: u64,
) -> Result<SurveyBatch, EvalError> {
    let need_strings = shape.n_surveys * shape.per_survey;
    if need_strings > strings.len() {
        return Err(EvalError::InsufficientStrings {
            required: need_strings,
            available: strings.len(),
        });
    }
    let need_raters = shape.n_surveys * shape.raters_per_survey;
    if need_raters > raters.len() {
        return Err(EvalError::InsufficientRaters {
            required: need_raters,
            available: raters.len(),
        });
    }
    let mut seen = HashSet::new();
    if let Some(dup) = raters.iter().find(|r| !seen.insert(r.as_str())) {
        return Err(EvalError::DuplicateRater(dup.clone()));
    }

    let string_order = rng::shuffled_prefix(strings.len(), need_strings, seed);
    // raters get their own stream so growing the pool leaves the string partition intact
    let rater_order = rng::shuffled_prefix(raters.len(), need_raters, seed.wrapping_add(1));
    let surveys = (0..shape.n_surveys)
        .map(|k| Survey {
            id: format!("survey-{}", k + 1),
            string_ids: string_order[k * shape.per_survey..(k + 1) * shape.per_survey]
                .iter()
                .map(|&i| strings[i].id.clone())
                .collect(),
            raters: rater_order[k * shape.raters_per_survey..(k + 1) * shape.raters_per_survey]
                .iter()
                .map(|&i| raters[i].clone())
                .collect(),
        })
        .collect();
    Ok(SurveyBatch {
        batch_id: batch_id.to_string(),
        seed,
        surveys,
        strings: strings.to_vec(),
    })
}

fn median(sorted: &[f64]) -> Option<f64> {
    match sorted.len() {
        0 => None,
        n if n % 2 == 1 => Some(sorted[n / 2]),
        n => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

fn pct(count: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * count as f64 / total as f64)
}

/// Aggregate DA responses per string and summarize the included strings.
///
/// With more than two responses per string the gap is `max - min` of the
/// Q2 scores and averages run over all responses.
pub fn aggregate_da(
    responses: &[DAResponse],
    strings: &[EvalString],
    config: DAConfig,
) -> Result<(Vec<DAStringResult>, DAReport), EvalError> {
    let known: HashSet<&str> = strings.iter().map(|s| s.id.as_str()).collect();
    let mut by_string: HashMap<&str, Vec<&DAResponse>> = HashMap::new();
    let mut pairs = HashSet::new();
    for r in responses {
        r.validate()?;
        if !known.contains(r.string_id.as_str()) {
            return Err(EvalError::UnknownString(r.string_id.clone()));
        }
        if !pairs.insert((r.string_id.as_str(), r.rater_id.as_str())) {
            return Err(EvalError::DuplicateResponse {
                string_id: r.string_id.clone(),
                rater_id: r.rater_id.clone(),
            });
        }
        by_string.entry(r.string_id.as_str()).or_default().push(r);
    }

    let mut results = Vec::with_capacity(strings.len());
    for s in strings {
        let rs = by_string.get(s.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let n = rs.len();
        let (q2_avg, q2_gap, q1_score, q1_agree) = if n == 0 {
            (None, None, None, None)
        } else {
            let q2_sum: u32 = rs.iter().map(|r| u32::from(r.q2)).sum();
            let q1_sum: u32 = rs.iter().map(|r| u32::from(r.q1.points())).sum();
            let hi = rs.iter().map(|r| r.q2).max().unwrap_or(0);
            let lo = rs.iter().map(|r| r.q2).min().unwrap_or(0);
            (
                Some(q2_sum as f64 / n as f64),
                Some(hi - lo),
                Some(q1_sum as f64 / n as f64),
                Some(rs.iter().all(|r| r.q1 == rs[0].q1)),
            )
        };
        let exclusion_reason = if s.lingala_flag {
            Some(ExclusionReason::Lingala)
        } else if n < 2 {
            Some(ExclusionReason::MissingRater)
        } else if q2_gap.is_some_and(|g| g > config.gap_threshold) {
            Some(ExclusionReason::ScoreGap)
        } else {
            None
        };
        results.push(DAStringResult {
            string_id: s.id.clone(),
            n_responses: n,
            q2_avg,
            q2_gap,
            q1_score,
            q1_agree,
            included: exclusion_reason.is_none(),
            exclusion_reason,
        });
    }
    let report = summarize(&results, config);
    Ok((results, report))
}

fn summarize(results: &[DAStringResult], config: DAConfig) -> DAReport {
    let included: Vec<&DAStringResult> = results.iter().filter(|r| r.included).collect();
    let n = included.len();
    let count_reason = |reason| results.iter().filter(|r| r.exclusion_reason == Some(reason)).count();

    let q2: Vec<f64> = included.iter().filter_map(|r| r.q2_avg).collect();
    let q2_mean = (n > 0).then(|| q2.iter().sum::<f64>() / n as f64);
    let q2_stddev = q2_mean.and_then(|mean| {
        let ss: f64 = q2.iter().map(|x| (x - mean).powi(2)).sum();
        match config.stddev {
            StdDevKind::Sample if n >= 2 => Some((ss / (n - 1) as f64).sqrt()),
            StdDevKind::Sample => None,
            StdDevKind::Population => Some((ss / n as f64).sqrt()),
        }
    });
    let mut gaps: Vec<f64> = included.iter().filter_map(|r| r.q2_gap.map(f64::from)).collect();
    gaps.sort_by(f64::total_cmp);

    let q1: Vec<f64> = included.iter().filter_map(|r| r.q1_score).collect();
    let mut q1_distribution = [0usize; 5];
    for &s in &q1 {
        // with two raters the score is an integer; larger panels round to the nearest bin
        q1_distribution[(s.round() as usize).min(4)] += 1;
    }
    DAReport {
        n_total: results.len(),
        n_included: n,
        n_excluded_lingala: count_reason(ExclusionReason::Lingala),
        n_excluded_missing: count_reason(ExclusionReason::MissingRater),
        n_excluded_gap: count_reason(ExclusionReason::ScoreGap),
        q2_mean,
        q2_stddev,
        q2_median_rater_gap: median(&gaps),
        pct_main_message_conveyed: pct(q1.iter().filter(|&&s| s > 0.0).count(), n),
        pct_both_yes: pct(q1.iter().filter(|&&s| s == 4.0).count(), n),
        q1_disagreement_pct: pct(included.iter().filter(|r| r.q1_agree == Some(false)).count(), n),
        q1_distribution,
        config,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PESegmentStats {
    pub index: usize,
    pub edits: EditCounts,
    pub ter: f64,
    pub raw_words: usize,
    pub post_edited_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PEReport {
    pub n_segments: usize,
    pub bleu: MetricReport,
    pub chrf: MetricReport,
    pub ter: MetricReport,
    pub segments: Vec<PESegmentStats>,
    pub avg_source_sentences: f64,
    pub avg_source_words: f64,
}

/// Rough sentence count: runs of text ended by `.`, `!`, `?` or `…`
/// followed by whitespace or the end of the segment.
pub fn count_sentences(text: &str) -> usize {
    static SPLIT: OnceLock<Regex> = OnceLock::new();
    let re = SPLIT.get_or_init(|| Regex::new(r"[.!?…]+(\s+|$)").unwrap());
    re.split(text).filter(|s| !s.trim().is_empty()).count()
}

/// BLEU (no tokenization), ChrF and HTER of raw MT against post-edits, with
/// per-segment edit statistics and average source segment length.
pub fn pe_report(raw_mt: &[String], post_edited: &[String], source: &[String]) -> Result<PEReport, EvalError> {
    if raw_mt.len() != post_edited.len() || raw_mt.len() != source.len() {
        return Err(EvalError::LengthMismatch {
            raw: raw_mt.len(),
            post_edited: post_edited.len(),
            sources: source.len(),
        });
    }
    let bleu = metrics::bleu(raw_mt, post_edited, TokenizationMode::None)?;
    let chrf = metrics::chrf(raw_mt, post_edited)?;
    let ter = metrics::hter(raw_mt, post_edited)?;
    let segments = raw_mt
        .iter()
        .zip(post_edited)
        .enumerate()
        .map(|(index, (raw, pe))| {
            let rw = split_whitespace(raw);
            let pw = split_whitespace(pe);
            let edits = metrics::ter::segment_edits(&rw, &pw);
            PESegmentStats {
                index,
                edits,
                ter: edits.total() as f64 / pw.len() as f64,
                raw_words: rw.len(),
                post_edited_words: pw.len(),
            }
        })
        .collect();
    let n = raw_mt.len() as f64;
    Ok(PEReport {
        n_segments: raw_mt.len(),
        bleu,
        chrf,
        ter,
        segments,
        avg_source_sentences: source.iter().map(|s| count_sentences(s)).sum::<usize>() as f64 / n,
        avg_source_words: source.iter().map(|s| split_whitespace(s).len()).sum::<usize>() as f64 / n,
    })
}

fn io_err(path: &Path, e: impl ToString) -> EvalError {
    EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Deserialize)]
struct CsvResponse {
    string_id: String,
    rater_id: String,
    q1: Q1,
    q2: u8,
    #[serde(default)]
    q3: Option<String>,
}

/// Read DA responses from `.csv` (header `string_id,rater_id,q1,q2,q3`) or
/// JSON lines (any other extension).
pub fn read_responses(path: &Path) -> Result<Vec<DAResponse>, EvalError> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
        reader
            .deserialize::<CsvResponse>()
            .map(|row| {
                let r = row.map_err(|e| io_err(path, e))?;
                Ok(DAResponse {
                    string_id: r.string_id,
                    rater_id: r.rater_id,
                    q1: r.q1,
                    q2: r.q2,
                    q3: r.q3.filter(|s| !s.is_empty()),
                })
            })
            .collect()
    } else {
        read_jsonl(path)
    }
}

pub fn write_responses_csv(path: &Path, responses: &[DAResponse]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["string_id", "rater_id", "q1", "q2", "q3"])
        .map_err(|e| io_err(path, e))?;
    for r in responses {
        let q1 = match r.q1 {
            Q1::No => "no",
            Q1::KindOf => "kind_of",
            Q1::Yes => "yes",
        };
        w.write_record([
            r.string_id.as_str(),
            r.rater_id.as_str(),
            q1,
            &r.q2.to_string(),
            r.q3.as_deref().unwrap_or(""),
        ])
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Read one JSON value per non-blank line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| io_err(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// Read evaluation strings from JSON lines, recomputing their lengths.
pub fn read_strings(path: &Path) -> Result<Vec<EvalString>, EvalError> {
    Ok(read_jsonl::<EvalString>(path)?
        .into_iter()
        .map(EvalString::with_lengths)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(s: &str, r: &str, q1: Q1, q2: u8) -> DAResponse {
        DAResponse {
            string_id: s.into(),
            rater_id: r.into(),
            q1,
            q2,
            q3: (q2 <= 4).then(|| "unclear".to_string()),
        }
    }

    fn strings(n: usize) -> Vec<EvalString> {
        (1..=n)
            .map(|i| EvalString::new(&format!("s{i}"), &format!("swali {i}"), &format!("question {i}"), false))
            .collect()
    }

    #[test]
    fn gap_of_four_excluded() {
        let s = strings(1);
        let (res, report) = aggregate_da(
            &[resp("s1", "a", Q1::Yes, 3), resp("s1", "b", Q1::Yes, 7)],
            &s,
            DAConfig::default(),
        )
        .unwrap();
        assert_eq!(res[0].exclusion_reason, Some(ExclusionReason::ScoreGap));
        assert!(!res[0].included);
        assert_eq!(report.n_included, 0);
        assert_eq!(report.q2_mean, None);
    }

    #[test]
    fn kind_of_and_yes_average_to_three() {
        let (res, _) = aggregate_da(
            &[resp("s1", "a", Q1::KindOf, 6), resp("s1", "b", Q1::Yes, 7)],
            &strings(1),
            DAConfig::default(),
        )
        .unwrap();
        assert_eq!(res[0].q1_score, Some(3.0));
        assert_eq!(res[0].q1_agree, Some(false));
    }

    #[test]
    fn perfect_pair() {
        let (res, report) = aggregate_da(
            &[resp("s1", "a", Q1::Yes, 10), resp("s1", "b", Q1::Yes, 10)],
            &strings(1),
            DAConfig::default(),
        )
        .unwrap();
        assert!(res[0].included);
        assert_eq!(res[0].q2_avg, Some(10.0));
        assert_eq!(res[0].q1_score, Some(4.0));
        assert_eq!(report.pct_both_yes, Some(100.0));
        // one included string has no sample deviation
        assert_eq!(report.q2_stddev, None);
    }

    #[test]
    fn exclusion_priority() {
        let mut s = strings(3);
        s[0].lingala_flag = true;
        let responses = [
            resp("s1", "a", Q1::Yes, 0),
            resp("s1", "b", Q1::Yes, 10),
            resp("s2", "a", Q1::Yes, 9),
            resp("s3", "a", Q1::No, 0),
            resp("s3", "b", Q1::Yes, 10),
        ];
        let (res, report) = aggregate_da(&responses, &s, DAConfig::default()).unwrap();
        let reasons: Vec<_> = res.iter().map(|r| r.exclusion_reason).collect();
        assert_eq!(
            reasons,
            [
                Some(ExclusionReason::Lingala),
                Some(ExclusionReason::MissingRater),
                Some(ExclusionReason::ScoreGap)
            ]
        );
        assert_eq!((report.n_excluded_lingala, report.n_excluded_missing, report.n_excluded_gap), (1, 1, 1));
    }

    #[test]
    fn response_errors() {
        let s = strings(1);
        let dup = [resp("s1", "a", Q1::Yes, 8), resp("s1", "a", Q1::No, 9)];
        assert!(matches!(
            aggregate_da(&dup, &s, DAConfig::default()),
            Err(EvalError::DuplicateResponse { .. })
        ));
        let mut high = resp("s1", "a", Q1::Yes, 11);
        high.q3 = None;
        assert!(matches!(
            aggregate_da(&[high], &s, DAConfig::default()),
            Err(EvalError::Q2OutOfRange { q2: 11, .. })
        ));
        let mut unexplained = resp("s1", "a", Q1::No, 2);
        unexplained.q3 = Some("  ".into());
        assert!(matches!(unexplained.validate(), Err(EvalError::MissingExplanation { .. })));
        assert!(matches!(
            aggregate_da(&[resp("zz", "a", Q1::Yes, 8)], &s, DAConfig::default()),
            Err(EvalError::UnknownString(_))
        ));
    }

    #[test]
    fn surveys_partition() {
        let s = strings(100);
        let raters: Vec<String> = (1..=8).map(|i| format!("r{i}")).collect();
        let shape = SurveyShape {
            n_surveys: 4,
            per_survey: 25,
            raters_per_survey: 2,
        };
        let batch = build_surveys("uji", &s, &raters, shape, 5).unwrap();
        assert_eq!(batch.surveys.len(), 4);
        let mut all_strings = HashSet::new();
        let mut all_raters = HashSet::new();
        for sv in &batch.surveys {
            assert_eq!(sv.string_ids.len(), 25);
            assert_eq!(sv.raters.len(), 2);
            all_strings.extend(sv.string_ids.iter().cloned());
            all_raters.extend(sv.raters.iter().cloned());
        }
        assert_eq!(all_strings.len(), 100);
        assert_eq!(all_raters.len(), 8);
        assert_eq!(batch, build_surveys("uji", &s, &raters, shape, 5).unwrap());
        assert_ne!(batch.surveys, build_surveys("uji", &s, &raters, shape, 6).unwrap().surveys);
    }

    #[test]
    fn surveys_insufficient() {
        let raters: Vec<String> = (1..=8).map(|i| format!("r{i}")).collect();
        let shape = SurveyShape {
            n_surveys: 4,
            per_survey: 25,
            raters_per_survey: 2,
        };
        let err = build_surveys("b", &strings(10), &raters, shape, 1).unwrap_err();
        assert!(matches!(err, EvalError::InsufficientStrings { required: 100, available: 10 }));
        let err = build_surveys("b", &strings(100), &raters[..7], shape, 1).unwrap_err();
        assert!(matches!(err, EvalError::InsufficientRaters { required: 8, available: 7 }));
    }

    #[test]
    fn pe_identity_and_one_substitution() {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let raw = v(&["a b c d e f"]);
        let r = pe_report(&raw, &raw, &v(&["x. y."])).unwrap();
        assert!((r.bleu.score - 100.0).abs() < 1e-9);
        assert!((r.chrf.score - 100.0).abs() < 1e-9);
        assert_eq!(r.ter.score, 0.0);
        assert_eq!(r.avg_source_sentences, 2.0);

        let r = pe_report(&v(&["a b c"]), &v(&["a b d"]), &v(&["src"])).unwrap();
        assert!((r.ter.score - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.segments[0].edits.substitutions, 1);
        assert!(pe_report(&v(&["a"]), &v(&[]), &v(&[])).is_err());
    }

    #[test]
    fn sentence_counting() {
        assert_eq!(count_sentences("Des cas. En général, oui! Sur la base?"), 3);
        assert_eq!(count_sentences("Le prix est 3.5 euros"), 1);
        assert_eq!(count_sentences(""), 0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rs = vec![resp("s1", "a", Q1::KindOf, 3), resp("s2", "b", Q1::Yes, 9)];
        write_responses_csv(&path, &rs).unwrap();
        assert_eq!(read_responses(&path).unwrap(), rs);
    }
}
