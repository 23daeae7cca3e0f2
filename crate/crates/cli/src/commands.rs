//! Subcommand bodies. Each one loads its inputs, makes the library call and
//! renders the result; no command computes anything the library does not.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mtpipe_core::corpus::{stats, Corpus, CorpusStats};
use mtpipe_core::humaneval::{self, build_surveys, DAConfig, StdDevKind, SurveyBatch, SurveyShape};
use mtpipe_core::metrics::{
    bleu, bleu_with, chrf_with, ter_with, BleuConfig, ChrfConfig, Components, Metric, MetricReport, Smoothing,
    TerAggregation, TerConfig, TokenizationMode,
};
use mtpipe_core::mixer::{build_mixture, sample_test_set, MixtureSpec};
use mtpipe_core::rng;
use mtpipe_core::synth::{
    back_translate, pivot_convert, FnBackend, HttpBackend, MTBackendRef, SynthError, SynthOptions, TranslationBackend,
};
use mtpipe_core::trainpipe::{
    run_procedure, standard_procedures, CommandBackend, Direction, ProcedureId, RunManifest, ToyBackend, ToyModel,
    ToyTranslator, TrainerBackend,
};
use mtpipe_serve::store::Store;
use mtpipe_serve::{batch_report, task_report, PETask, ServeConfig};
use serde_json::{json, Value};

use crate::config::WorkspaceConfig;
use crate::{
    Cli, Command, DaBuildArgs, DaReportArgs, DirectionArg, MetricArg, Output, PeReportArgs, ScoreArgs, SmoothArg,
    SynthArgs, TokenizeArg, TrainArgs, TrainerKind, UsageError,
};

/// Training pairs translated to measure how well a model memorized its data.
const MEMORIZED_SUBSET: usize = 100;

pub fn dispatch(cli: &Cli) -> Result<Output> {
    match &cli.command {
        Command::Stats { ids } => cmd_stats(&load(cli)?, ids),
        Command::Clean { id, exclude } => cmd_clean(&load(cli)?, id, exclude),
        Command::Mix { ids } => cmd_mix(&load(cli)?, ids),
        Command::SampleTest { id, n, seed } => cmd_sample_test(&load(cli)?, id, *n, *seed),
        Command::Pivot(args) => cmd_synth(&load(cli)?, args, SynthKind::Pivot),
        Command::Backtranslate(args) => cmd_synth(&load(cli)?, args, SynthKind::BackTranslate),
        Command::Train(args) => cmd_train(&load(cli)?, args),
        Command::Score(args) => cmd_score(args),
        Command::DaBuild(args) => cmd_da_build(args),
        Command::DaReport(args) => cmd_da_report(args),
        Command::PeReport(args) => cmd_pe_report(args),
        Command::Serve { config } => cmd_serve(config),
    }
}

fn load(cli: &Cli) -> Result<WorkspaceConfig> {
    WorkspaceConfig::load(&cli.config)
}

fn output(command: &'static str, result: impl serde::Serialize, human: String) -> Result<Output> {
    Ok(Output {
        command,
        result: serde_json::to_value(result)?,
        human,
    })
}

fn stats_row(out: &mut String, id: &str, s: &CorpusStats) {
    let _ = writeln!(
        out,
        "{id:<28} {:>10} {:>12} {:>12} {:>12}",
        s.n_sentences, s.n_tokens_source, s.n_tokens_target, s.n_tokens_total
    );
}

fn cmd_stats(cfg: &WorkspaceConfig, ids: &[String]) -> Result<Output> {
    let ws = cfg.workspace(true)?;
    let ids: Vec<String> = if ids.is_empty() {
        cfg.corpora.iter().map(|c| c.id.clone()).collect()
    } else {
        ids.to_vec()
    };
    let mut rows = Vec::with_capacity(ids.len());
    let mut total = CorpusStats::default();
    let mut human = format!("{:<28} {:>10} {:>12} {:>12} {:>12}\n", "corpus", "sentences", "src tokens", "tgt tokens", "tokens");
    for id in &ids {
        let s = stats(&ws.resolve(id)?);
        stats_row(&mut human, id, &s);
        total = total + s;
        rows.push(json!({ "id": id, "stats": s }));
    }
    stats_row(&mut human, "total", &total);
    output("stats", json!({ "corpora": rows, "total": total }), human)
}

fn report_line(id: &str, r: &mtpipe_core::CleanReport) -> String {
    format!(
        "{id:<20} input {:>8}  duplicates {:>7}  empty {:>7}  overlap {:>7}  output {:>8}\n",
        r.n_input, r.n_duplicates_removed, r.n_empty_removed, r.n_overlap_removed, r.n_output
    )
}

fn cmd_clean(cfg: &WorkspaceConfig, id: &str, exclude: &[String]) -> Result<Output> {
    let ws = cfg.workspace(true)?;
    let spec = MixtureSpec {
        id: format!("{id}.clean"),
        components: vec![id.to_string()],
        exclusion_sets: exclude.to_vec(),
    };
    let (corpus, report) = build_mixture(&spec, &ws)?;
    let path = cfg.store(&corpus)?;
    cfg.store_report(&corpus.id, &report)?;
    let human = report_line(&corpus.id, &report);
    output("clean", json!({ "id": corpus.id, "report": report, "path": path }), human)
}

fn cmd_mix(cfg: &WorkspaceConfig, ids: &[String]) -> Result<Output> {
    // stored copies of mixtures are ignored so every mix is rebuilt from its spec
    let mut ws = cfg.workspace(false)?;
    let mut human = String::new();
    let dev = match &cfg.dev {
        Some(d) => {
            let dev = ws.register_dev_set(&d.from, &d.id, d.n, cfg.seed)?;
            cfg.store(&dev)?;
            let _ = writeln!(human, "dev set {} ({} pairs from {})", d.id, dev.len(), d.from);
            Some(json!({ "id": d.id, "from": d.from, "n": dev.len() }))
        }
        None => None,
    };
    let ids: Vec<String> = if ids.is_empty() {
        cfg.mixtures.iter().map(|m| m.id.clone()).collect()
    } else {
        ids.to_vec()
    };
    let mut mixtures = Vec::with_capacity(ids.len());
    for id in &ids {
        let spec = ws
            .mixture(id)
            .cloned()
            .ok_or_else(|| anyhow!("`{id}` is not a configured mixture"))?;
        let (corpus, report) = build_mixture(&spec, &ws).with_context(|| format!("mixture `{id}`"))?;
        let path = cfg.store(&corpus)?;
        cfg.store_report(id, &report)?;
        human.push_str(&report_line(id, &report));
        mixtures.push(json!({ "id": id, "report": report, "path": path }));
    }
    output("mix", json!({ "dev": dev, "mixtures": mixtures }), human)
}

fn cmd_sample_test(cfg: &WorkspaceConfig, id: &str, n: usize, seed: Option<u64>) -> Result<Output> {
    let ws = cfg.workspace(true)?;
    let test = sample_test_set(&ws.resolve(id)?, n, seed.unwrap_or(cfg.seed))?;
    let path = cfg.store(&test)?;
    let human = format!("{} ({} pairs) -> {}\n", test.id, test.len(), path.display());
    output("sample-test", json!({ "id": test.id, "n": test.len(), "path": path }), human)
}

/// Backend for an MT backend reference, chosen by endpoint scheme:
/// `http(s)://...`, `mock:identity`, `mock:prefix:<text>` or `toy:<model.json>`.
pub fn translation_backend(r: &MTBackendRef) -> Result<Box<dyn TranslationBackend>> {
    let e = r.endpoint.as_str();
    if e.starts_with("http://") || e.starts_with("https://") {
        return Ok(Box::new(HttpBackend::new(r)?));
    }
    if e == "mock:identity" {
        return Ok(Box::new(FnBackend::new(&r.id, |t: &str| Some(t.to_string()))));
    }
    if let Some(prefix) = e.strip_prefix("mock:prefix:") {
        let prefix = prefix.to_string();
        return Ok(Box::new(FnBackend::new(&r.id, move |t: &str| Some(format!("{prefix}{t}")))));
    }
    if let Some(path) = e.strip_prefix("toy:") {
        let model = ToyModel::load(Path::new(path)).map_err(|m| SynthError::InvalidBackend(format!("{}: {m}", r.id)))?;
        return Ok(Box::new(ToyTranslator { id: r.id.clone(), model }));
    }
    Err(SynthError::InvalidBackend(format!("{}: unsupported endpoint `{e}`", r.id)).into())
}

#[derive(Clone, Copy)]
enum SynthKind {
    Pivot,
    BackTranslate,
}

fn cmd_synth(cfg: &WorkspaceConfig, args: &SynthArgs, kind: SynthKind) -> Result<Output> {
    if args.jobs == 0 {
        return Err(UsageError("--jobs must be at least 1".into()).into());
    }
    let r = cfg.backend(&args.backend)?;
    let backend = translation_backend(r)?;
    let ws = cfg.workspace(true)?;
    let input = ws.resolve(&args.id)?;
    let (suffix, command) = match kind {
        SynthKind::Pivot => ("pivot", "pivot"),
        SynthKind::BackTranslate => ("bt", "backtranslate"),
    };
    let checkpoint = cfg.workspace_dir.join("checkpoints").join(format!("{}.{suffix}.json", args.id));
    if let Some(dir) = checkpoint.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let mut opts = SynthOptions::from_ref(r).with_checkpoint(&checkpoint);
    opts.in_flight = args.jobs;
    let out = match kind {
        SynthKind::Pivot => pivot_convert(&input, backend.as_ref(), &opts)?,
        SynthKind::BackTranslate => back_translate(&input, backend.as_ref(), &opts)?,
    };
    let path = cfg.store(&out)?;
    let failed: usize = out
        .metadata
        .get("failed_segments")
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    let human = format!(
        "{} -> {}: {} of {} segments translated by {}, {} failed\n",
        input.id,
        out.id,
        out.len(),
        input.len(),
        r.id,
        failed
    );
    let result = json!({
        "input": input.id,
        "id": out.id,
        "backend": r.id,
        "n_input": input.len(),
        "n_output": out.len(),
        "failed_segments": failed,
        "path": path,
    });
    output(command, result, human)
}

fn parse_procedures(arg: &str) -> Result<Vec<ProcedureId>> {
    if arg.eq_ignore_ascii_case("all") {
        return Ok(ProcedureId::ALL.to_vec());
    }
    arg.split(',')
        .map(|p| p.trim().parse::<ProcedureId>().map_err(|e| UsageError(e).into()))
        .collect()
}

enum Trainer {
    Toy(ToyBackend),
    Command(CommandBackend),
}

impl Trainer {
    fn backend(&mut self) -> &mut dyn TrainerBackend {
        match self {
            Trainer::Toy(b) => b,
            Trainer::Command(b) => b,
        }
    }
}

/// Evaluation and artifacts of one finished run.
#[derive(serde::Serialize)]
struct TrainRun {
    procedure: ProcedureId,
    direction: Direction,
    manifest_path: PathBuf,
    manifest_hash: String,
    stages: Vec<Value>,
    final_checkpoint: String,
    dev_bleu: f64,
    memorized_bleu: f64,
    memorized_n: usize,
    model_path: Option<PathBuf>,
}

fn translate(trainer: &Trainer, manifest: &RunManifest, texts: &[String]) -> Result<Vec<String>> {
    let ckpt = manifest.final_checkpoint().ok_or_else(|| anyhow!("run has no stages"))?;
    let out = match trainer {
        Trainer::Toy(b) => b.translate(ckpt, texts),
        Trainer::Command(b) => b.translate(ckpt, texts),
    };
    Ok(out?)
}

fn train_one(
    cfg: &WorkspaceConfig,
    ws: &mtpipe_core::Workspace,
    kind: TrainerKind,
    procedure: ProcedureId,
    direction: Direction,
    seed: u64,
) -> Result<TrainRun> {
    let spec = standard_procedures()[&procedure].clone().with_direction(direction);
    let mut trainer = match kind {
        TrainerKind::Toy => Trainer::Toy(ToyBackend::new()),
        TrainerKind::Command => {
            let template = cfg
                .trainer
                .clone()
                .ok_or_else(|| UsageError("--backend command needs a [trainer] section in the config".into()))?;
            Trainer::Command(CommandBackend::new(template))
        }
    };
    let manifest = run_procedure(&spec, trainer.backend(), ws, seed)?;
    let tag = format!("{procedure}-{direction}");
    let manifest_path = cfg.workspace_dir.join("runs").join(format!("{tag}.json"));
    manifest.save(&manifest_path)?;

    let dev = direction.orient(&ws.resolve(&spec.dev_set)?);
    let (dev_src, dev_ref) = sides(&dev, None);
    let dev_bleu = bleu(&translate(&trainer, &manifest, &dev_src)?, &dev_ref, TokenizationMode::Intl)?.score;

    let last = spec.stages.last().expect("procedures have stages");
    let train = direction.orient(&ws.resolve(&last.mixture_id)?);
    let n = train.len().min(MEMORIZED_SUBSET);
    let (mem_src, mem_ref) = sides(&train, Some(&rng::sample_indices(train.len(), n, seed)));
    let memorized_bleu = if n == 0 {
        0.0
    } else {
        bleu(&translate(&trainer, &manifest, &mem_src)?, &mem_ref, TokenizationMode::Intl)?.score
    };

    let model_path = match &trainer {
        Trainer::Toy(b) => {
            let ckpt = manifest.final_checkpoint().expect("procedures have stages");
            let model = b.model(ckpt).ok_or_else(|| anyhow!("toy checkpoint {} is missing", ckpt.0))?;
            let path = cfg.workspace_dir.join("models").join(format!("{tag}.json"));
            model.save(&path).map_err(|m| anyhow!(m))?;
            Some(path)
        }
        Trainer::Command(_) => None,
    };
    let stages = manifest
        .stages
        .iter()
        .map(|s| {
            json!({
                "mixture_id": s.mixture_id,
                "n_train": s.n_train,
                "best_checkpoint": s.result.best_checkpoint.0,
                "best_perplexity": s.result.best_perplexity,
                "best_validation": s.result.best_validation,
                "n_validations": s.result.n_validations,
                "stop_reason": s.result.stop_reason,
            })
        })
        .collect();
    Ok(TrainRun {
        procedure,
        direction,
        manifest_path,
        manifest_hash: manifest.hash.clone(),
        stages,
        final_checkpoint: manifest.final_checkpoint().map(|c| c.0.clone()).unwrap_or_default(),
        dev_bleu,
        memorized_bleu,
        memorized_n: n,
        model_path,
    })
}

fn sides(corpus: &Corpus, indices: Option<&[usize]>) -> (Vec<String>, Vec<String>) {
    let pick: Vec<usize> = indices.map_or_else(|| (0..corpus.len()).collect(), <[usize]>::to_vec);
    pick.iter()
        .map(|&i| (corpus.pairs[i].source.clone(), corpus.pairs[i].target.clone()))
        .unzip()
}

fn cmd_train(cfg: &WorkspaceConfig, args: &TrainArgs) -> Result<Output> {
    if args.jobs == 0 {
        return Err(UsageError("--jobs must be at least 1".into()).into());
    }
    let procedures = parse_procedures(&args.procedure)?;
    let directions = match args.direction {
        DirectionArg::SwcFra => vec![Direction::SwcFra],
        DirectionArg::FraSwc => vec![Direction::FraSwc],
        DirectionArg::Both => vec![Direction::SwcFra, Direction::FraSwc],
    };
    let seed = args.seed.unwrap_or(cfg.seed);
    let catalog = standard_procedures();
    let artifacts = cfg.artifacts()?;
    for p in &procedures {
        let spec = &catalog[p];
        let needed = spec.stages.iter().map(|s| &s.mixture_id).chain(std::iter::once(&spec.dev_set));
        for id in needed {
            if !artifacts.contains_key(id) {
                bail!("procedure {p}: `{id}` is not materialized in {}; run `mtpipe mix` first", cfg.corpora_dir().display());
            }
        }
    }
    let ws = cfg.workspace(true)?;

    let jobs: Vec<(ProcedureId, Direction)> = procedures
        .iter()
        .flat_map(|&p| directions.iter().map(move |&d| (p, d)))
        .collect();
    let mut runs = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(args.jobs) {
        let results: Vec<Result<TrainRun>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&(p, d)| {
                    let ws = &ws;
                    s.spawn(move || train_one(cfg, ws, args.backend, p, d, seed).with_context(|| format!("procedure {p} {d}")))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
        });
        for r in results {
            runs.push(r?);
        }
    }

    let mut human = String::new();
    for r in &runs {
        let _ = writeln!(human, "procedure {} {}: manifest {}", r.procedure, r.direction, r.manifest_path.display());
        for (k, s) in r.stages.iter().enumerate() {
            let _ = writeln!(
                human,
                "  stage {} {:<12} best ppl {:>8.3} at validation {} of {} ({})",
                k + 1,
                s["mixture_id"].as_str().unwrap_or_default(),
                s["best_perplexity"].as_f64().unwrap_or(f64::NAN),
                s["best_validation"],
                s["n_validations"],
                s["stop_reason"].as_str().unwrap_or_default(),
            );
        }
        let _ = writeln!(
            human,
            "  dev BLEU {:.2}, memorized subset BLEU {:.2} ({} pairs)",
            r.dev_bleu, r.memorized_bleu, r.memorized_n
        );
    }
    output("train", json!({ "runs": runs }), human)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn score_report(args: &ScoreArgs, hyps: &[String], refs: &[String]) -> Result<MetricReport> {
    let report = match args.metric {
        MetricArg::Bleu => bleu_with(
            hyps,
            refs,
            BleuConfig {
                tokenize: match args.tokenize {
                    TokenizeArg::Intl => TokenizationMode::Intl,
                    TokenizeArg::None => TokenizationMode::None,
                },
                smoothing: match args.smooth {
                    SmoothArg::None => Smoothing::None,
                    SmoothArg::Exp => Smoothing::Exp,
                },
                lowercase: args.lowercase,
            },
        )?,
        MetricArg::Chrf => chrf_with(
            hyps,
            refs,
            ChrfConfig {
                lowercase: args.lowercase,
                ..ChrfConfig::default()
            },
        )?,
        MetricArg::Ter => ter_with(
            hyps,
            refs,
            TerConfig {
                aggregation: if args.ter_average {
                    TerAggregation::SentenceAverage
                } else {
                    TerAggregation::Corpus
                },
                lowercase: args.lowercase,
            },
        )?,
    };
    Ok(report)
}

fn cmd_score(args: &ScoreArgs) -> Result<Output> {
    let hyps = read_lines(&args.hyp)?;
    let refs = read_lines(&args.reference)?;
    let report = score_report(args, &hyps, &refs)
        .with_context(|| format!("scoring {} against {}", args.hyp.display(), args.reference.display()))?;
    let detail = match &report.components {
        Components::Bleu(b) => format!(
            " (precisions {:.1}/{:.1}/{:.1}/{:.1}, BP {:.3}, hyp_len {}, ref_len {})",
            b.precisions[0], b.precisions[1], b.precisions[2], b.precisions[3], b.brevity_penalty, b.hyp_len, b.ref_len
        ),
        Components::Ter(t) => format!(" (edits {}, reference words {})", t.edits.total(), t.ref_len),
        Components::Chrf(_) => String::new(),
    };
    let name = match report.metric {
        Metric::Bleu => "BLEU",
        Metric::Chrf => "chrF2",
        Metric::Ter => "TER",
    };
    let human = format!("{name} = {:.2}{detail}\n", report.score);
    output("score", report, human)
}

fn cmd_da_build(args: &DaBuildArgs) -> Result<Output> {
    let strings = humaneval::read_strings(&args.strings)?;
    let raters: Vec<String> = read_lines(&args.raters)?
        .into_iter()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    let shape = SurveyShape {
        n_surveys: args.surveys,
        per_survey: args.per_survey,
        raters_per_survey: args.raters_per_survey,
    };
    let batch = build_surveys(&args.batch_id, &strings, &raters, shape, args.seed)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(&args.out, serde_json::to_string_pretty(&batch)? + "\n")
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    let mut human = String::new();
    for s in &batch.surveys {
        let _ = writeln!(human, "{:<12} {:>3} strings  raters {}", s.id, s.string_ids.len(), s.raters.join(", "));
    }
    let _ = writeln!(human, "batch {} -> {}", batch.batch_id, args.out.display());
    let surveys: Vec<Value> = batch
        .surveys
        .iter()
        .map(|s| json!({ "id": s.id, "n_strings": s.string_ids.len(), "raters": s.raters }))
        .collect();
    output("da-build", json!({ "batch_id": batch.batch_id, "surveys": surveys, "path": args.out }), human)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))
}

fn cmd_da_report(args: &DaReportArgs) -> Result<Output> {
    let batch: SurveyBatch = read_json(&args.batch)?;
    let responses = match (&args.responses, &args.store) {
        (Some(path), _) => humaneval::read_responses(path)?,
        (None, Some(dir)) => Store::open(dir)?.da_responses(&batch.batch_id),
        (None, None) => return Err(UsageError("one of --responses or --store is required".into()).into()),
    };
    let config = DAConfig {
        gap_threshold: args.gap_threshold,
        stddev: if args.population_sd {
            StdDevKind::Population
        } else {
            StdDevKind::Sample
        },
    };
    let report = batch_report(&batch, &responses, config)?;
    let human = format!(
        "batch {}: {} responses\n{}",
        report.batch_id,
        report.n_responses,
        report.report.summary_table()
    );
    output("da-report", report, human)
}

fn cmd_pe_report(args: &PeReportArgs) -> Result<Output> {
    let report = match (&args.task, &args.store) {
        (Some(task), Some(store)) => {
            let task: PETask = read_json(task)?;
            let edits = Store::open(store)?.post_edits(&task.id);
            if edits.is_empty() {
                bail!("task `{}` has no post-edits in {}", task.id, store.display());
            }
            serde_json::to_value(task_report(&task, &edits)?)?
        }
        _ => {
            let (Some(mt), Some(pe), Some(src)) = (&args.mt, &args.post_edited, &args.source) else {
                return Err(UsageError("give --mt, --post-edited and --source, or --task with --store".into()).into());
            };
            let report = humaneval::pe_report(&read_lines(mt)?, &read_lines(pe)?, &read_lines(src)?)?;
            serde_json::to_value(report)?
        }
    };
    let core = report.get("report").unwrap_or(&report);
    let score = |k: &str| core[k]["score"].as_f64().unwrap_or(f64::NAN);
    let human = format!(
        "segments {}\nBLEU  {:>8.2}\nchrF2 {:>8.2}\nHTER  {:>8.2}\navg source sentences {:.2}, words {:.2}\n",
        core["n_segments"],
        score("bleu"),
        score("chrf"),
        score("ter"),
        core["avg_source_sentences"].as_f64().unwrap_or(f64::NAN),
        core["avg_source_words"].as_f64().unwrap_or(f64::NAN),
    );
    Ok(Output {
        command: "pe-report",
        result: report,
        human,
    })
}

fn cmd_serve(config: &Path) -> Result<Output> {
    let cfg = ServeConfig::load(config)?.with_env_overrides();
    let runtime = tokio::runtime::Runtime::new().context("cannot start the async runtime")?;
    runtime.block_on(mtpipe_serve::run(cfg))?;
    output("serve", BTreeMap::<String, String>::new(), String::new())
}
