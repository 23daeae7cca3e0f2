//! Trainer backend that drives an external toolkit through shell commands.
//!
//! For each stage the backend writes `train.src`, `train.tgt`, `dev.src` and
//! `dev.tgt` (one segment per line) into a stage directory, then runs the
//! `train` template. The training process reports progress on stdout with
//! lines of the form
//!
//! ```text
//! VALIDATION step=<int> ppl=<float> checkpoint=<handle>
//! ```
//!
//! and any other output is logged. Exit status 0 ends the stage normally.
//! The `translate` template reads segments on stdin, one per line, and must
//! print exactly one translation line per input line.
//!
//! Placeholders (values are shell-quoted on substitution): `{stage_dir}`,
//! `{train_src}`, `{train_tgt}`, `{dev_src}`, `{dev_tgt}`, `{src_lang}`,
//! `{tgt_lang}`, `{init_from}` (empty when none), `{layers}`, `{heads}`,
//! `{hidden_size}`, `{token_batch}`, `{warmup_steps}`, `{optimizer}`,
//! `{validation_interval}`, `{patience}`, `{max_steps}`, `{seed}`, and for
//! `translate` only `{checkpoint}`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver};
use std::thread;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BackendFailure, CheckpointHandle, StageContext, TrainerBackend, ValidationEvent};
use crate::corpus::Corpus;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandTemplate {
    pub train: String,
    pub translate: String,
    /// Root under which per-stage directories are created.
    pub workdir: PathBuf,
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn render(template: &str, vars: &BTreeMap<&str, String>) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), &shell_quote(v));
    }
    out
}

fn write_side(path: &Path, corpus: &Corpus, target: bool) -> Result<(), BackendFailure> {
    let mut text = String::new();
    for p in &corpus.pairs {
        let side = if target { &p.target } else { &p.source };
        text.push_str(&side.replace(['\n', '\r'], " "));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| BackendFailure(format!("{}: {e}", path.display())))
}

pub struct CommandBackend {
    template: CommandTemplate,
    pattern: Regex,
    child: Option<Child>,
    lines: Option<Receiver<String>>,
    last_checkpoint: Option<CheckpointHandle>,
}

impl CommandBackend {
    pub fn new(template: CommandTemplate) -> Self {
        CommandBackend {
            template,
            pattern: Regex::new(r"^VALIDATION\s+step=(\d+)\s+ppl=(\S+)\s+checkpoint=(.+?)\s*$").expect("valid regex"),
            child: None,
            lines: None,
            last_checkpoint: None,
        }
    }

    fn kill(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
        self.lines = None;
    }
}

impl Drop for CommandBackend {
    fn drop(&mut self) {
        self.kill();
    }
}

impl TrainerBackend for CommandBackend {
    fn id(&self) -> &str {
        "command"
    }

    fn prepare(
        &mut self,
        stage: &StageContext<'_>,
        train: &Corpus,
        dev: &Corpus,
        init_from: Option<&CheckpointHandle>,
    ) -> Result<(), BackendFailure> {
        self.kill();
        self.last_checkpoint = None;
        let dir = self.template.workdir.join(format!(
            "{}-{}-stage{}",
            stage.procedure,
            stage.direction,
            stage.stage_index + 1
        ));
        std::fs::create_dir_all(&dir).map_err(|e| BackendFailure(format!("{}: {e}", dir.display())))?;
        let files = [
            ("train_src", "train.src", train, false),
            ("train_tgt", "train.tgt", train, true),
            ("dev_src", "dev.src", dev, false),
            ("dev_tgt", "dev.tgt", dev, true),
        ];
        let (src, tgt) = stage.direction.langs();
        let h = stage.hyperparams;
        let mut vars: BTreeMap<&str, String> = BTreeMap::from([
            ("stage_dir", dir.display().to_string()),
            ("src_lang", src.to_string()),
            ("tgt_lang", tgt.to_string()),
            ("init_from", init_from.map(|c| c.0.clone()).unwrap_or_default()),
            ("layers", h.layers.to_string()),
            ("heads", h.heads.to_string()),
            ("hidden_size", h.hidden_size.to_string()),
            ("token_batch", h.token_batch.to_string()),
            ("warmup_steps", h.warmup_steps.to_string()),
            ("optimizer", "adam".to_string()),
            ("validation_interval", h.validation_interval.to_string()),
            ("patience", h.patience.to_string()),
            ("max_steps", h.max_steps.to_string()),
            ("seed", stage.seed.to_string()),
        ]);
        for (key, name, corpus, target) in files {
            let path = dir.join(name);
            write_side(&path, corpus, target)?;
            vars.insert(key, path.display().to_string());
        }

        let cmd = render(&self.template.train, &vars);
        log::info!("spawning trainer: {cmd}");
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| BackendFailure(format!("cannot spawn trainer: {e}")))?;
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines().map_while(Result::ok) {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        self.child = Some(child);
        self.lines = Some(rx);
        Ok(())
    }

    fn next_validation(&mut self) -> Result<Option<ValidationEvent>, BackendFailure> {
        let Some(lines) = &self.lines else {
            return Ok(None);
        };
        while let Ok(line) = lines.recv() {
            let Some(c) = self.pattern.captures(&line) else {
                log::debug!("trainer: {line}");
                continue;
            };
            let step = c[1].parse().map_err(|_| BackendFailure(format!("bad step in `{line}`")))?;
            let dev_perplexity = c[2].parse().map_err(|_| BackendFailure(format!("bad perplexity in `{line}`")))?;
            self.last_checkpoint = Some(CheckpointHandle(c[3].to_string()));
            return Ok(Some(ValidationEvent { step, dev_perplexity }));
        }
        self.lines = None;
        let status = match self.child.take() {
            Some(mut child) => child.wait().map_err(|e| BackendFailure(e.to_string()))?,
            None => return Ok(None),
        };
        if status.success() {
            Ok(None)
        } else {
            Err(BackendFailure(format!("trainer exited with {status}")))
        }
    }

    fn checkpoint(&mut self) -> Result<CheckpointHandle, BackendFailure> {
        self.last_checkpoint
            .clone()
            .ok_or_else(|| BackendFailure("no checkpoint reported yet".into()))
    }

    fn stop(&mut self) {
        self.kill();
    }

    fn translate(&self, checkpoint: &CheckpointHandle, texts: &[String]) -> Result<Vec<String>, BackendFailure> {
        let vars = BTreeMap::from([("checkpoint", checkpoint.0.clone())]);
        let cmd = render(&self.template.translate, &vars);
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| BackendFailure(format!("cannot spawn translator: {e}")))?;
        let mut stdin = child.stdin.take().expect("stdin piped");
        let input: String = texts.iter().map(|t| format!("{}\n", t.replace(['\n', '\r'], " "))).collect();
        let writer = thread::spawn(move || stdin.write_all(input.as_bytes()));
        let output = child.wait_with_output().map_err(|e| BackendFailure(e.to_string()))?;
        let _ = writer.join();
        if !output.status.success() {
            return Err(BackendFailure(format!("translator exited with {}", output.status)));
        }
        let lines: Vec<String> = String::from_utf8_lossy(&output.stdout).lines().map(str::to_string).collect();
        if lines.len() != texts.len() {
            return Err(BackendFailure(format!("sent {} segments, translator returned {}", texts.len(), lines.len())));
        }
        Ok(lines)
    }
}
