use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tokenize::{tokenize, TokenizationMode};
use super::{check_lengths, Components, Metric, MetricError, MetricReport};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    /// Any order without matches makes the corpus score 0.
    #[default]
    None,
    /// Exponential decay for zero-match orders: the k-th such order gets
    /// precision `1 / (2^k * total)`.
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct BleuConfig {
    pub tokenize: TokenizationMode,
    pub smoothing: Smoothing,
    pub lowercase: bool,
}

impl BleuConfig {
    pub fn with_tokenize(tokenize: TokenizationMode) -> Self {
        BleuConfig {
            tokenize,
            ..Default::default()
        }
    }
}

/// Sufficient statistics of corpus BLEU plus the derived quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    /// Percent precisions after smoothing.
    pub precisions: [f64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
    pub brevity_penalty: f64,
    /// Set when some order has no hypothesis n-grams or no matches.
    pub zero_order: bool,
    pub config: BleuConfig,
}

impl BleuStats {
    fn new(matches: [u64; MAX_ORDER], totals: [u64; MAX_ORDER], hyp_len: u64, ref_len: u64, config: BleuConfig) -> Self {
        let brevity_penalty = brevity_penalty(hyp_len, ref_len);
        let mut precisions = [0.0; MAX_ORDER];
        let mut decay = 1.0;
        if matches.iter().any(|&m| m > 0) {
            for n in 0..MAX_ORDER {
                if totals[n] == 0 {
                    break;
                }
                if matches[n] == 0 {
                    if config.smoothing == Smoothing::Exp {
                        decay *= 2.0;
                        precisions[n] = 100.0 / (decay * totals[n] as f64);
                    }
                } else {
                    precisions[n] = 100.0 * matches[n] as f64 / totals[n] as f64;
                }
            }
        }
        let zero_order = (0..MAX_ORDER).any(|n| matches[n] == 0 || totals[n] == 0);
        BleuStats {
            matches,
            totals,
            precisions,
            hyp_len,
            ref_len,
            brevity_penalty,
            zero_order,
            config,
        }
    }

    /// Corpus BLEU on the 0-100 scale from the stored components.
    pub fn score(&self) -> f64 {
        if self.precisions.iter().any(|&p| p <= 0.0) {
            return 0.0;
        }
        let log_sum: f64 = self.precisions.iter().map(|p| p.ln()).sum();
        self.brevity_penalty * (log_sum / MAX_ORDER as f64).exp()
    }
}

/// `min(1, exp(1 - ref/hyp))`, and 0 for an empty hypothesis side.
pub fn brevity_penalty(hyp_len: u64, ref_len: u64) -> f64 {
    if hyp_len >= ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn prepare(text: &str, config: &BleuConfig) -> Vec<String> {
    let text = text.trim_end();
    if config.lowercase {
        tokenize(&text.to_lowercase(), config.tokenize)
    } else {
        tokenize(text, config.tokenize)
    }
}

/// Per-order clipped matches and totals plus lengths for one segment.
pub fn segment_stats(hyp: &str, reference: &str, config: &BleuConfig) -> ([u64; MAX_ORDER], [u64; MAX_ORDER], u64, u64) {
    let h = prepare(hyp, config);
    let r = prepare(reference, config);
    let mut matches = [0; MAX_ORDER];
    let mut totals = [0; MAX_ORDER];
    for n in 1..=MAX_ORDER {
        let hc = ngram_counts(&h, n);
        let rc = ngram_counts(&r, n);
        totals[n - 1] = h.len().saturating_sub(n - 1) as u64;
        matches[n - 1] = hc
            .iter()
            .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
            .sum();
    }
    (matches, totals, h.len() as u64, r.len() as u64)
}

/// Corpus-level BLEU over orders 1-4 with a single reference per segment.
pub fn bleu_with(hypotheses: &[String], references: &[String], config: BleuConfig) -> Result<MetricReport, MetricError> {
    check_lengths(hypotheses.len(), references.len())?;
    if hypotheses.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0u64, 0u64);
    for (h, r) in hypotheses.iter().zip(references) {
        let (m, t, hl, rl) = segment_stats(h, r, &config);
        for n in 0..MAX_ORDER {
            matches[n] += m[n];
            totals[n] += t[n];
        }
        hyp_len += hl;
        ref_len += rl;
    }
    let stats = BleuStats::new(matches, totals, hyp_len, ref_len, config);
    Ok(MetricReport {
        metric: Metric::Bleu,
        score: stats.score(),
        components: Components::Bleu(stats),
    })
}

pub fn bleu(hypotheses: &[String], references: &[String], mode: TokenizationMode) -> Result<MetricReport, MetricError> {
    bleu_with(hypotheses, references, BleuConfig::with_tokenize(mode))
}
