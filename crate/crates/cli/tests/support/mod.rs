//! Workspace fixtures and a runner for the `mtpipe` binary.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::Value;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    /// The `result` member of a `--json` document.
    pub fn result(&self) -> Value {
        assert_eq!(self.code, 0, "mtpipe failed: {}", self.stderr);
        let doc: Value = serde_json::from_str(self.stdout.trim()).expect("stdout is one JSON document");
        doc["result"].clone()
    }
}

pub fn mtpipe(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_mtpipe"))
        .current_dir(dir)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("mtpipe runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn write_tsv(path: &Path, rows: &[(&str, &str)]) {
    let mut text = String::new();
    for (s, t) in rows {
        let _ = writeln!(text, "{s}\t{t}");
    }
    fs::write(path, text).unwrap();
}

/// The 10-pair fixture: 2 duplicates (one differing only in whitespace),
/// 1 empty target, 1 source also present in the held-out set.
pub const PLANTED: [(&str, &str); 10] = [
    ("habari", "bonjour"),
    ("asante", "merci"),
    ("habari", "bonjour"),
    ("ndiyo", ""),
    ("mimi ni mgonjwa", "je suis malade"),
    ("maji", "eau"),
    ("  asante ", "merci"),
    ("chakula", "nourriture"),
    ("nyumba", "maison"),
    ("kesho", "demain"),
];

pub fn planted_workspace(dir: &Path) -> PathBuf {
    write_tsv(&dir.join("twbkits.tsv"), &PLANTED);
    write_tsv(&dir.join("test.tsv"), &[("mimi ni mgonjwa", "je me sens malade")]);
    let config = dir.join("mtpipe.toml");
    fs::write(
        &config,
        r#"
workspace_dir = "ws"
seed = 7

[[corpora]]
id = "TWBkits.swc"
path = "twbkits.tsv"
src_lang = "swc"
tgt_lang = "fra"

[[corpora]]
id = "test"
path = "test.tsv"
src_lang = "swc"
tgt_lang = "fra"

[[mixtures]]
id = "mix.in"
components = ["TWBkits.swc"]
exclusion_sets = ["test"]
"#,
    )
    .unwrap();
    config
}

fn word(rng: &mut ChaCha20Rng, syllables: &[&str]) -> String {
    let n = rng.gen_range(2..=3);
    (0..n).map(|_| *syllables.choose(rng).unwrap()).collect()
}

/// `n` pairs whose targets are word-by-word dictionary translations of
/// their sources, same length, so a positional word model can learn them.
pub fn synthetic_pairs(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let swc = ["ka", "li", "mo", "na", "pe", "tu", "wa", "zi", "ba", "ku"];
    let fra = ["le", "ra", "son", "du", "mi", "té", "vo", "ché", "pa", "on"];
    let mut lexicon = Vec::new();
    let mut seen = std::collections::HashSet::new();
    while lexicon.len() < 60 {
        let s = word(&mut rng, &swc);
        if seen.insert(s.clone()) {
            lexicon.push((s, word(&mut rng, &fra)));
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut sentences = std::collections::HashSet::new();
    while out.len() < n {
        let len = rng.gen_range(4..=9);
        let idx: Vec<usize> = (0..len).map(|_| rng.gen_range(0..lexicon.len())).collect();
        let src = idx.iter().map(|&i| lexicon[i].0.as_str()).collect::<Vec<_>>().join(" ");
        if !sentences.insert(src.clone()) {
            continue;
        }
        let tgt = idx.iter().map(|&i| lexicon[i].1.as_str()).collect::<Vec<_>>().join(" ");
        out.push((src, tgt));
    }
    out
}

/// 200 synthetic pairs split over three corpora with three nested mixes,
/// a 20-pair dev set from `mix.in` and a mock translation backend.
pub fn synthetic_workspace(dir: &Path) -> PathBuf {
    let pairs = synthetic_pairs(200, 11);
    let rows: Vec<(&str, &str)> = pairs.iter().map(|(s, t)| (s.as_str(), t.as_str())).collect();
    write_tsv(&dir.join("in.tsv"), &rows[..80]);
    write_tsv(&dir.join("jw.tsv"), &rows[80..140]);
    write_tsv(&dir.join("gv.tsv"), &rows[140..]);
    let config = dir.join("mtpipe.toml");
    fs::write(
        &config,
        r#"
workspace_dir = "ws"
seed = 2021

[[corpora]]
id = "TWBkits.swc"
path = "in.tsv"
src_lang = "swc"
tgt_lang = "fra"

[[corpora]]
id = "JW300.swc"
path = "jw.tsv"
src_lang = "swc"
tgt_lang = "fra"

[[corpora]]
id = "GlobalVoices"
path = "gv.tsv"
src_lang = "swc"
tgt_lang = "fra"

[[mixtures]]
id = "mix.in"
components = ["TWBkits.swc"]

[[mixtures]]
id = "mix.swc"
components = ["mix.in", "JW300.swc"]

[[mixtures]]
id = "mix.sw"
components = ["mix.swc", "GlobalVoices"]

[dev]
from = "mix.in"
n = 20
"#,
    )
    .unwrap();
    config
}
