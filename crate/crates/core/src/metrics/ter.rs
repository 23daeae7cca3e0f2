//! Translation edit rate with greedy block shifts.
//!
//! The shift search follows the pyter reference implementation: candidate
//! shifts are maximal runs where `hyp[i..i+k] == ref[j..j+k]` with `i != j`;
//! the candidate block is removed from the hypothesis and reinserted at
//! index `j`. Each round applies the candidate with the largest reduction in
//! word edit distance (ties go to the lexicographically greatest resulting
//! word sequence) until no candidate reduces it. The segment cost is the
//! number of shifts plus the final Levenshtein distance.

use serde::{Deserialize, Serialize};

use super::tokenize::split_whitespace;
use super::{check_lengths, Components, Metric, MetricError, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TerAggregation {
    /// Sum of edits over sum of reference lengths.
    #[default]
    Corpus,
    /// Mean of per-segment TER.
    SentenceAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TerConfig {
    pub aggregation: TerAggregation,
    pub lowercase: bool,
}

/// Edit operations turning a hypothesis into its reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct EditCounts {
    pub insertions: u64,
    pub deletions: u64,
    pub substitutions: u64,
    pub shifts: u64,
}

impl EditCounts {
    pub fn total(&self) -> u64 {
        self.insertions + self.deletions + self.substitutions + self.shifts
    }

    fn add(&mut self, other: &EditCounts) {
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.substitutions += other.substitutions;
        self.shifts += other.shifts;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerStats {
    pub edits: EditCounts,
    pub ref_len: u64,
    pub segment_scores: Vec<f64>,
    pub config: TerConfig,
}

/// Word-level Levenshtein distance, unit costs.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

/// Insertions, deletions and substitutions of one minimal alignment.
pub fn edit_operations<T: PartialEq>(hyp: &[T], reference: &[T]) -> EditCounts {
    let (n, m) = (hyp.len(), reference.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]) {
            if hyp[i - 1] != reference[j - 1] {
                counts.substitutions += 1;
            }
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// Candidate shifts `(hyp_start, ref_start, len)`.
fn shift_candidates<'a>(hyp: &'a [&'a str], reference: &'a [&'a str]) -> impl Iterator<Item = (usize, usize, usize)> + 'a {
    (0..hyp.len()).flat_map(move |i| {
        (0..reference.len()).filter_map(move |j| {
            if i == j || hyp[i] != reference[j] {
                return None;
            }
            let len = hyp[i..]
                .iter()
                .zip(&reference[j..])
                .take_while(|(a, b)| a == b)
                .count();
            Some((i, j, len))
        })
    })
}

fn apply_shift<'a>(hyp: &[&'a str], start: usize, dest: usize, len: usize) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::with_capacity(hyp.len());
    out.extend_from_slice(&hyp[..start]);
    out.extend_from_slice(&hyp[start + len..]);
    let at = dest.min(out.len());
    out.splice(at..at, hyp[start..start + len].iter().copied());
    out
}

/// Greedy shift search; returns the shifted hypothesis and the shift count.
pub fn greedy_shifts<'a>(hyp: &[&'a str], reference: &[&'a str]) -> (Vec<&'a str>, u64) {
    let mut cur = hyp.to_vec();
    let mut shifts = 0;
    loop {
        let before = edit_distance(&cur, reference);
        if before == 0 {
            break;
        }
        let mut best: Option<(isize, Vec<&str>)> = None;
        for (start, dest, len) in shift_candidates(&cur, reference) {
            let shifted = apply_shift(&cur, start, dest, len);
            let gain = before as isize - edit_distance(&shifted, reference) as isize;
            let better = match &best {
                None => true,
                Some((g, words)) => gain > *g || (gain == *g && shifted > *words),
            };
            if better {
                best = Some((gain, shifted));
            }
        }
        match best {
            Some((gain, shifted)) if gain > 0 => {
                cur = shifted;
                shifts += 1;
            }
            _ => break,
        }
    }
    (cur, shifts)
}

/// Edit counts for one tokenized segment.
pub fn segment_edits(hyp: &[&str], reference: &[&str]) -> EditCounts {
    let (shifted, shifts) = greedy_shifts(hyp, reference);
    let mut counts = edit_operations(&shifted, reference);
    counts.shifts = shifts;
    counts
}

pub fn ter_with(hypotheses: &[String], references: &[String], config: TerConfig) -> Result<MetricReport, MetricError> {
    check_lengths(hypotheses.len(), references.len())?;
    if hypotheses.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut edits = EditCounts::default();
    let mut ref_len = 0u64;
    let mut segment_scores = Vec::with_capacity(hypotheses.len());
    for (index, (h, r)) in hypotheses.iter().zip(references).enumerate() {
        let (h, r) = if config.lowercase {
            (h.to_lowercase(), r.to_lowercase())
        } else {
            (h.clone(), r.clone())
        };
        let hw = split_whitespace(&h);
        let rw = split_whitespace(&r);
        if rw.is_empty() {
            return Err(MetricError::EmptyReference { index });
        }
        let seg = segment_edits(&hw, &rw);
        segment_scores.push(seg.total() as f64 / rw.len() as f64);
        edits.add(&seg);
        ref_len += rw.len() as u64;
    }
    let score = match config.aggregation {
        TerAggregation::Corpus => edits.total() as f64 / ref_len as f64,
        TerAggregation::SentenceAverage => segment_scores.iter().sum::<f64>() / segment_scores.len() as f64,
    };
    Ok(MetricReport {
        metric: Metric::Ter,
        score,
        components: Components::Ter(TerStats {
            edits,
            ref_len,
            segment_scores,
            config,
        }),
    })
}

pub fn ter(hypotheses: &[String], references: &[String]) -> Result<MetricReport, MetricError> {
    ter_with(hypotheses, references, TerConfig::default())
}

/// TER of raw MT output against its human post-edited version.
pub fn hter(raw_mt: &[String], post_edited: &[String]) -> Result<MetricReport, MetricError> {
    ter(raw_mt, post_edited)
}
