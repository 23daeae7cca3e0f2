//! Training mixture construction, cleaning, and dev/test allocation.
//!
//! A mixture is an ordered list of components, each either a corpus or
//! another mixture, plus exclusion sets (held-out test and dev corpora).
//! Building one concatenates the resolved components, normalizes every
//! pair, and drops in this order:
//!
//! 1. exact duplicates: normalized source and target both equal to an
//!    earlier pair (first occurrence kept),
//! 2. pairs whose normalized source or target is empty,
//! 3. pairs whose normalized source or target equals any side of any
//!    segment in the exclusion sets.
//!
//! Each dropped pair is counted under the first rule that matches it.
//! Duplicate detection is a single sequential pass so the first-occurrence
//! rule fixes output order.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize, normalize_text, Corpus};
use crate::rng;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MixError {
    #[error("unresolved reference `{id}` in mixture `{referenced_by}`")]
    Unresolved { id: String, referenced_by: String },
    #[error("cyclic mixture reference: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("cannot sample {requested} segments from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub id: String,
    #[serde(default)]
    pub components: Vec<String>,
    #[serde(default)]
    pub exclusion_sets: Vec<String>,
}

impl MixtureSpec {
    pub fn new(id: &str, components: &[&str], exclusion_sets: &[&str]) -> Self {
        MixtureSpec {
            id: id.to_string(),
            components: components.iter().map(|s| s.to_string()).collect(),
            exclusion_sets: exclusion_sets.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CleanReport {
    pub n_input: usize,
    pub n_duplicates_removed: usize,
    pub n_empty_removed: usize,
    pub n_overlap_removed: usize,
    pub n_output: usize,
}

impl CleanReport {
    /// `n_output = n_input - duplicates - empty - overlap`.
    pub fn is_consistent(&self) -> bool {
        self.n_input
            == self.n_output + self.n_duplicates_removed + self.n_empty_removed + self.n_overlap_removed
    }
}

/// Corpora and mixture specs addressable by id.
///
/// When an id names both a corpus and a mixture, the corpus wins: a
/// materialized mixture saved back into the workspace shadows its spec.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    corpora: BTreeMap<String, Corpus>,
    mixtures: BTreeMap<String, MixtureSpec>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_corpus(&mut self, corpus: Corpus) {
        self.corpora.insert(corpus.id.clone(), corpus);
    }

    pub fn add_mixture(&mut self, spec: MixtureSpec) {
        self.mixtures.insert(spec.id.clone(), spec);
    }

    pub fn corpus(&self, id: &str) -> Option<&Corpus> {
        self.corpora.get(id)
    }

    pub fn mixture(&self, id: &str) -> Option<&MixtureSpec> {
        self.mixtures.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.corpora.contains_key(id) || self.mixtures.contains_key(id)
    }

    pub fn corpus_ids(&self) -> impl Iterator<Item = &str> {
        self.corpora.keys().map(String::as_str)
    }

    pub fn mixture_ids(&self) -> impl Iterator<Item = &str> {
        self.mixtures.keys().map(String::as_str)
    }

    /// Sample `n` pairs of `from` as corpus `dev_id` and add `dev_id` to the
    /// exclusion sets of every mixture, so no mixture can leak into it.
    /// `from` is built without that exclusion.
    pub fn register_dev_set(&mut self, from: &str, dev_id: &str, n: usize, seed: u64) -> Result<Corpus, MixError> {
        for spec in self.mixtures.values_mut() {
            spec.exclusion_sets.retain(|e| e != dev_id);
        }
        self.corpora.remove(dev_id);
        let (mut dev, _) = allocate_dev_set(&self.resolve(from)?, n, seed)?;
        dev.id = dev_id.to_string();
        self.add_corpus(dev.clone());
        for spec in self.mixtures.values_mut() {
            spec.exclusion_sets.push(dev_id.to_string());
        }
        Ok(dev)
    }

    /// Resolve an id to its pairs, building (and cleaning) mixtures on demand.
    pub fn resolve(&self, id: &str) -> Result<Corpus, MixError> {
        let mut stack = Vec::new();
        self.resolve_inner(id, "<root>", &mut stack)
    }

    fn resolve_inner(&self, id: &str, parent: &str, stack: &mut Vec<String>) -> Result<Corpus, MixError> {
        if let Some(c) = self.corpora.get(id) {
            return Ok(c.clone());
        }
        let Some(spec) = self.mixtures.get(id) else {
            return Err(MixError::Unresolved {
                id: id.to_string(),
                referenced_by: parent.to_string(),
            });
        };
        Ok(self.build_inner(spec, stack)?.0)
    }

    fn build_inner(&self, spec: &MixtureSpec, stack: &mut Vec<String>) -> Result<(Corpus, CleanReport), MixError> {
        if let Some(pos) = stack.iter().position(|s| s == &spec.id) {
            let mut cycle = stack[pos..].to_vec();
            cycle.push(spec.id.clone());
            return Err(MixError::Cycle(cycle));
        }
        stack.push(spec.id.clone());

        let mut joined = Corpus::new(spec.id.clone(), Vec::new());
        for component in &spec.components {
            let part = self.resolve_inner(component, &spec.id, stack)?;
            joined.pairs.extend(part.pairs);
        }
        let mut excluded = HashSet::new();
        for ex in &spec.exclusion_sets {
            let held_out = self.resolve_inner(ex, &spec.id, stack)?;
            for p in &held_out.pairs {
                for side in [&p.source, &p.target] {
                    let norm = normalize_text(side);
                    if !norm.is_empty() {
                        excluded.insert(norm);
                    }
                }
            }
        }
        stack.pop();
        Ok(clean(joined, &excluded))
    }
}

fn clean(corpus: Corpus, excluded: &HashSet<String>) -> (Corpus, CleanReport) {
    let mut report = CleanReport {
        n_input: corpus.len(),
        ..CleanReport::default()
    };
    let mut seen: HashSet<(String, String)> = HashSet::with_capacity(corpus.len());
    let mut kept = Vec::with_capacity(corpus.len());
    for pair in &corpus.pairs {
        let norm = normalize(pair);
        if !seen.insert((norm.source.clone(), norm.target.clone())) {
            report.n_duplicates_removed += 1;
        } else if norm.source.is_empty() || norm.target.is_empty() {
            report.n_empty_removed += 1;
        } else if excluded.contains(&norm.source) || excluded.contains(&norm.target) {
            report.n_overlap_removed += 1;
        } else {
            kept.push(norm);
        }
    }
    report.n_output = kept.len();
    let mut out = Corpus::new(corpus.id, kept);
    out.metadata = corpus.metadata;
    (out, report)
}

pub fn build_mixture(spec: &MixtureSpec, workspace: &Workspace) -> Result<(Corpus, CleanReport), MixError> {
    workspace.build_inner(spec, &mut Vec::new())
}

fn split_by_indices(corpus: &Corpus, chosen: &[usize]) -> (Vec<crate::SegmentPair>, Vec<crate::SegmentPair>) {
    let mut picked = vec![false; corpus.len()];
    for &i in chosen {
        picked[i] = true;
    }
    let mut sample = Vec::with_capacity(chosen.len());
    let mut rest = Vec::with_capacity(corpus.len() - chosen.len());
    for (p, keep) in corpus.pairs.iter().zip(picked) {
        if keep {
            sample.push(p.clone());
        } else {
            rest.push(p.clone());
        }
    }
    (sample, rest)
}

fn check_size(corpus: &Corpus, n: usize) -> Result<(), MixError> {
    if n > corpus.len() {
        return Err(MixError::SampleTooLarge {
            requested: n,
            available: corpus.len(),
        });
    }
    Ok(())
}

/// Split off a seeded uniform sample of `n` pairs as a dev set. Both
/// outputs keep the corpus order; the dev corpus id is `<id>.dev`.
pub fn allocate_dev_set(corpus: &Corpus, n: usize, seed: u64) -> Result<(Corpus, Corpus), MixError> {
    check_size(corpus, n)?;
    let (dev, rest) = split_by_indices(corpus, &rng::sample_indices(corpus.len(), n, seed));
    let mut remainder = Corpus::new(corpus.id.clone(), rest);
    remainder.metadata = corpus.metadata.clone();
    Ok((Corpus::new(format!("{}.dev", corpus.id), dev), remainder))
}

/// Seeded uniform sample of `n` pairs, id `<id>.test`.
pub fn sample_test_set(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus, MixError> {
    check_size(corpus, n)?;
    let (test, _) = split_by_indices(corpus, &rng::sample_indices(corpus.len(), n, seed));
    Ok(Corpus::new(format!("{}.test", corpus.id), test))
}

/// The five nested training mixtures, each extending the previous one.
/// `exclusions` is applied to every mix. The monolingual sources enter
/// `mix.mono` through their back-translated corpora (`<id>.bt`).
pub fn standard_chain(exclusions: &[&str]) -> Vec<MixtureSpec> {
    vec![
        MixtureSpec::new("mix.in", &["TWBkits.swc", "TWBinTM.swc", "TICO19.swc"], exclusions),
        MixtureSpec::new("mix.swc", &["mix.in", "JW300.swc"], exclusions),
        MixtureSpec::new(
            "mix.sw",
            &[
                "mix.swc",
                "GlobalVoices",
                "Multiparacrawl",
                "JW300.sw",
                "Tanzil",
                "TWBinTM.sw",
                "TED2020",
                "Wikimatrix",
                "TICO19.sw",
            ],
            exclusions,
        ),
        MixtureSpec::new("mix.mted", &["mix.sw", "ELRC", "TWBkits.sw", "GoURMET"], exclusions),
        MixtureSpec::new("mix.mono", &["mix.mted", "WMT-News.bt", "Wikipedia.sw.bt"], exclusions),
    ]
}
