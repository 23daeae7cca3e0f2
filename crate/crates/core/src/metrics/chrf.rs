use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tokenize::strip_whitespace;
use super::{check_lengths, Components, Metric, MetricError, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChrfConfig {
    pub max_order: usize,
    pub beta: f64,
    pub remove_whitespace: bool,
    pub lowercase: bool,
}

impl Default for ChrfConfig {
    fn default() -> Self {
        ChrfConfig {
            max_order: 6,
            beta: 2.0,
            remove_whitespace: true,
            lowercase: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChrfStats {
    /// Hypothesis n-gram count, reference n-gram count, and matches per order.
    pub hyp_counts: Vec<u64>,
    pub ref_counts: Vec<u64>,
    pub matches: Vec<u64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Orders with n-grams on both sides; only these enter the average.
    pub effective_order: usize,
    pub config: ChrfConfig,
}

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], u64> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for g in chars.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

fn prepare(text: &str, config: &ChrfConfig) -> Vec<char> {
    let text = if config.lowercase { text.to_lowercase() } else { text.to_string() };
    if config.remove_whitespace {
        strip_whitespace(&text).chars().collect()
    } else {
        text.chars().collect()
    }
}

/// Corpus-level character n-gram F-score.
///
/// Counts are summed over segments per order, then precision and recall
/// are averaged over the orders that have n-grams on both the hypothesis
/// and the reference side, and combined as
/// `(1 + beta^2) P R / (beta^2 P + R)`.
pub fn chrf_with(hypotheses: &[String], references: &[String], config: ChrfConfig) -> Result<MetricReport, MetricError> {
    check_lengths(hypotheses.len(), references.len())?;
    let orders = config.max_order;
    let mut hyp_counts = vec![0u64; orders];
    let mut ref_counts = vec![0u64; orders];
    let mut matches = vec![0u64; orders];
    for (h, r) in hypotheses.iter().zip(references) {
        let hc = prepare(h, &config);
        let rc = prepare(r, &config);
        for n in 1..=orders {
            let hg = char_ngrams(&hc, n);
            let rg = char_ngrams(&rc, n);
            hyp_counts[n - 1] += hg.values().sum::<u64>();
            ref_counts[n - 1] += rg.values().sum::<u64>();
            matches[n - 1] += hg
                .iter()
                .map(|(g, &c)| c.min(rg.get(g).copied().unwrap_or(0)))
                .sum::<u64>();
        }
    }

    let mut precision = vec![0.0; orders];
    let mut recall = vec![0.0; orders];
    let (mut avg_p, mut avg_r, mut effective) = (0.0, 0.0, 0usize);
    for n in 0..orders {
        if hyp_counts[n] > 0 {
            precision[n] = matches[n] as f64 / hyp_counts[n] as f64;
        }
        if ref_counts[n] > 0 {
            recall[n] = matches[n] as f64 / ref_counts[n] as f64;
        }
        if hyp_counts[n] > 0 && ref_counts[n] > 0 {
            avg_p += precision[n];
            avg_r += recall[n];
            effective += 1;
        }
    }
    if effective > 0 {
        avg_p /= effective as f64;
        avg_r /= effective as f64;
    }
    let factor = config.beta * config.beta;
    let score = if avg_p + avg_r > 0.0 {
        100.0 * ((1.0 + factor) * avg_p * avg_r / (factor * avg_p + avg_r))
    } else {
        0.0
    };
    Ok(MetricReport {
        metric: Metric::Chrf,
        score,
        components: Components::Chrf(ChrfStats {
            hyp_counts,
            ref_counts,
            matches,
            precision,
            recall,
            effective_order: effective,
            config,
        }),
    })
}

pub fn chrf(hypotheses: &[String], references: &[String]) -> Result<MetricReport, MetricError> {
    chrf_with(hypotheses, references, ChrfConfig::default())
}
