mod config;
mod data;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use ctner::corpus::{gen_synthetic, CorpusBundle, Document};
use ctner::embedder::{
    build_embedding_sets, EmbeddingMode, EmbeddingProvider, EmbeddingSetsFile, TemplateSet,
};
use ctner::model::TaggerModel;
use ctner::pipeline::{
    distractor_db_index, distractor_false_positives, evaluate, extract_pseudo, finetune_target,
    gold_spans, pretrain_source, pseudo_db_index, run_experiment, score_spans, stage_seed,
    EvalReport, ExperimentData, PseudoSet, StageOutcome, TargetSplit, Variant,
};
use ctner::similarity::KappaCache;

use config::RunConfig;

const SNAPSHOT: &str = "resolved_config.json";

#[derive(Parser, Debug)]
#[command(
    name = "ctner",
    version,
    about = "Contrastive transfer NER experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command. Flags override values from `--config`.
#[derive(Args, Debug, Default)]
struct Common {
    /// JSON run configuration; a resolved-config snapshot is accepted as is.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for all randomness of the command (run-all: repeat for several).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
}

#[derive(Args, Debug, Default)]
struct Corpora {
    /// Source corpus directory (`train/` standoff, `train.conll`, `valid.conll`).
    #[arg(long)]
    source: Option<PathBuf>,
    /// Target corpus directory (`train.conll`, `valid.conll`, `test.conll`).
    #[arg(long)]
    target: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct Auxiliary {
    /// Precomputed embedding sets written by `embed-events`.
    #[arg(long)]
    event_sets: Option<PathBuf>,
    /// JSON map of event type to template.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// word2vec text vectors for the auxiliary encoder.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic source and target corpora.
    GenSynth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build auxiliary event embedding sets for the source corpus.
    EmbedEvents {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<EmbeddingMode>,
        #[arg(long)]
        source: Option<PathBuf>,
        /// Output JSON file; the config snapshot goes next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Fail on event types without a template.
        #[arg(long)]
        no_fallback: bool,
    },
    /// Pretrain on the source corpus.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpora: Corpora,
        #[command(flatten)]
        aux: Auxiliary,
        /// Pretraining variant; grouping variants add the contrastive term.
        #[arg(long, default_value = "eg_only")]
        variant: Variant,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract pseudo entities from the seed's few-shot target training split.
    PseudoLabel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finetune on the few-shot target split.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpora: Corpora,
        /// Pretrained checkpoint; without one a fresh model is built from both corpora.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Pseudo entities from `pseudo-label`; enables discrimination.
        #[arg(long)]
        pseudo: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint or a CoNLL predictions file on target test.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Davies-Bouldin index of gold entities against distractors, or
    /// against pseudo entities with `--pseudo`.
    DbIndex {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        pseudo: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every (variant, seed) run with a summary table.
    RunAll {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpora: Corpora,
        #[command(flatten)]
        aux: Auxiliary,
        /// Variants to run (repeatable); defaults to all.
        #[arg(long = "variant")]
        variants: Vec<Variant>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Validation errors exit with 1, everything else with 2.
#[derive(Debug)]
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Invalid inputs reported by the library count as validation errors.
impl From<ctner::Error> for Failure {
    fn from(e: ctner::Error) -> Self {
        match e {
            ctner::Error::InvalidInput(_) => Failure::Invalid(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

fn invalid(e: anyhow::Error) -> Failure {
    Failure::Invalid(e)
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(value) = std::env::var("CTS_THREADS") {
        let n: usize =
            value.parse().ok().filter(|&n| n > 0).with_context(|| {
                format!("CTS_THREADS must be a positive integer, got `{value}`")
            })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

/// Loads `--config`, applies the common flags and records the command name.
fn base_config(name: &str, common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(invalid)?,
        None => RunConfig::default(),
    };
    cfg.command = Some(name.to_string());
    if !common.seeds.is_empty() {
        cfg.seeds = common.seeds.clone();
    }
    Ok(cfg)
}

fn set<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn finish_config(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    cfg.validate().map_err(invalid)?;
    let out = cfg
        .require("output_dir (--out)", &cfg.output_dir)
        .map_err(invalid)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out.to_path_buf())
}

/// The snapshot lives in the output directory, so that path is left out;
/// identical inputs then give identical output trees wherever they land.
fn write_snapshot(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    let snapshot = RunConfig {
        output_dir: None,
        ..cfg.clone()
    };
    write_json(&dir.join(SNAPSHOT), &snapshot)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn dispatch(command: Command) -> CmdResult {
    match command {
        Command::GenSynth { common, out } => {
            let mut cfg = base_config("gen-synth", &common)?;
            set(&mut cfg.output_dir, out);
            gen_synth(cfg)
        }
        Command::EmbedEvents {
            common,
            mode,
            source,
            out,
            templates,
            embeddings,
            no_fallback,
        } => {
            let mut cfg = base_config("embed-events", &common)?;
            if let Some(mode) = mode {
                cfg.train.embedding_mode = mode;
            }
            if no_fallback {
                cfg.train.template_fallback = false;
            }
            set(&mut cfg.source_dir, source);
            set(&mut cfg.templates, templates);
            set(&mut cfg.embeddings, embeddings);
            embed_events(cfg, out)
        }
        Command::Pretrain {
            common,
            corpora,
            aux,
            variant,
            out,
        } => {
            let mut cfg = base_config("pretrain", &common)?;
            apply_corpora(&mut cfg, corpora);
            apply_aux(&mut cfg, aux);
            cfg.variants = vec![variant];
            set(&mut cfg.output_dir, out);
            pretrain(cfg)
        }
        Command::PseudoLabel {
            common,
            target,
            checkpoint,
            out,
        } => {
            let mut cfg = base_config("pseudo-label", &common)?;
            set(&mut cfg.target_dir, target);
            set(&mut cfg.checkpoint, checkpoint);
            set(&mut cfg.output_dir, out);
            pseudo_label(cfg)
        }
        Command::Finetune {
            common,
            corpora,
            checkpoint,
            pseudo,
            out,
        } => {
            let mut cfg = base_config("finetune", &common)?;
            apply_corpora(&mut cfg, corpora);
            set(&mut cfg.checkpoint, checkpoint);
            set(&mut cfg.pseudo, pseudo);
            set(&mut cfg.output_dir, out);
            finetune(cfg)
        }
        Command::Evaluate {
            common,
            target,
            checkpoint,
            predictions,
            out,
        } => {
            let mut cfg = base_config("evaluate", &common)?;
            set(&mut cfg.target_dir, target);
            set(&mut cfg.checkpoint, checkpoint);
            set(&mut cfg.predictions, predictions);
            set(&mut cfg.output_dir, out);
            evaluate_cmd(cfg)
        }
        Command::DbIndex {
            common,
            target,
            checkpoint,
            pseudo,
            out,
        } => {
            let mut cfg = base_config("db-index", &common)?;
            set(&mut cfg.target_dir, target);
            set(&mut cfg.checkpoint, checkpoint);
            set(&mut cfg.pseudo, pseudo);
            set(&mut cfg.output_dir, out);
            db_index(cfg)
        }
        Command::RunAll {
            common,
            corpora,
            aux,
            variants,
            out,
        } => {
            let mut cfg = base_config("run-all", &common)?;
            apply_corpora(&mut cfg, corpora);
            apply_aux(&mut cfg, aux);
            if !variants.is_empty() {
                cfg.variants = variants;
            }
            set(&mut cfg.output_dir, out);
            run_all(cfg)
        }
    }
}

fn apply_corpora(cfg: &mut RunConfig, corpora: Corpora) {
    set(&mut cfg.source_dir, corpora.source);
    set(&mut cfg.target_dir, corpora.target);
}

fn apply_aux(cfg: &mut RunConfig, aux: Auxiliary) {
    set(&mut cfg.event_sets, aux.event_sets);
    set(&mut cfg.templates, aux.templates);
    set(&mut cfg.embeddings, aux.embeddings);
}

fn gen_synth(cfg: RunConfig) -> CmdResult {
    let out = finish_config(&cfg)?;
    let corpora = gen_synthetic(&cfg.synth, cfg.seed()).context("generating corpora")?;
    data::write_synthetic(&out, &corpora)?;
    write_snapshot(&out, &cfg)?;
    info!(
        "wrote {} source and {} target test documents to {}",
        corpora.source.documents().len(),
        corpora.target_test.documents().len(),
        out.display()
    );
    Ok(())
}

fn provider(cfg: &RunConfig) -> anyhow::Result<EmbeddingProvider> {
    Ok(match &cfg.embeddings {
        Some(path) => EmbeddingProvider::from_word2vec_file(path, cfg.train.aux_seed)
            .with_context(|| format!("loading {}", path.display()))?,
        None => EmbeddingProvider::hash(cfg.train.aux_dim, cfg.train.aux_seed),
    })
}

fn templates(cfg: &RunConfig) -> anyhow::Result<TemplateSet> {
    let set = match &cfg.templates {
        Some(path) => {
            TemplateSet::from_file(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => TemplateSet::builtin(),
    };
    Ok(set.with_fallback(cfg.train.template_fallback))
}

fn embed_events(mut cfg: RunConfig, out: Option<PathBuf>) -> CmdResult {
    let out = out.ok_or_else(|| invalid(anyhow::anyhow!("`--out FILE` is required")))?;
    cfg.output_dir = Some(match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    });
    let dir = finish_config(&cfg)?;
    let source = cfg
        .require("source_dir (--source)", &cfg.source_dir)
        .map_err(invalid)?;
    let bundle = data::load_source_train(source)?;
    let provider = provider(&cfg)?;
    let sets = build_embedding_sets(
        &bundle,
        cfg.train.embedding_mode,
        &provider,
        &templates(&cfg)?,
        cfg.train.aux_seed,
    )?;
    let file = EmbeddingSetsFile::new(cfg.train.embedding_mode, provider.dim(), sets)?;
    if bundle.events().is_empty() {
        warn!("the source corpus has no events; every embedding set is empty");
    }
    info!(
        "{} entity keys, {} with empty event sets, {} events",
        file.sets.len(),
        file.empty_keys(),
        bundle.events().len()
    );
    file.save(&out)
        .with_context(|| format!("writing {}", out.display()))?;
    write_snapshot(&dir, &cfg)?;
    Ok(())
}

/// κ from precomputed sets when given, otherwise built from the source
/// bundle with the configured provider and templates.
fn kappa_for(cfg: &RunConfig, source: &CorpusBundle) -> anyhow::Result<KappaCache> {
    match &cfg.event_sets {
        Some(path) => {
            let file = EmbeddingSetsFile::load(path)
                .with_context(|| format!("loading {}", path.display()))?;
            Ok(KappaCache::from_embedding_sets(&file.sets)?)
        }
        None => {
            let sets = build_embedding_sets(
                source,
                cfg.train.embedding_mode,
                &provider(cfg)?,
                &templates(cfg)?,
                cfg.train.aux_seed,
            )?;
            Ok(KappaCache::from_embedding_sets(&sets)?)
        }
    }
}

fn load_data(cfg: &RunConfig) -> Result<ExperimentData, Failure> {
    let source = cfg
        .require("source_dir (--source)", &cfg.source_dir)
        .map_err(invalid)?;
    let target = cfg
        .require("target_dir (--target)", &cfg.target_dir)
        .map_err(invalid)?;
    Ok(data::load_experiment(source, target)?)
}

/// Few-shot split of the target pools; the same one `run-all` uses for the
/// seed.
fn target_split(cfg: &RunConfig) -> Result<TargetSplit, Failure> {
    let target = cfg
        .require("target_dir (--target)", &cfg.target_dir)
        .map_err(invalid)?;
    let data = ExperimentData {
        source_train: CorpusBundle::from_documents(Vec::new()),
        source_valid: Vec::new(),
        target_train: data::read_conll(&target.join("train.conll"))?,
        target_valid: data::read_conll(&target.join("valid.conll"))?,
        target_test: CorpusBundle::from_documents(Vec::new()),
    };
    Ok(data.split(&cfg.train, cfg.seed())?)
}

fn load_model(cfg: &RunConfig) -> Result<TaggerModel, Failure> {
    let path = cfg
        .require("checkpoint (--checkpoint)", &cfg.checkpoint)
        .map_err(invalid)?;
    Ok(
        TaggerModel::load_checkpoint(path)
            .with_context(|| format!("loading {}", path.display()))?,
    )
}

fn write_stage(out: &Path, outcome: &StageOutcome) -> anyhow::Result<()> {
    outcome
        .model
        .save_checkpoint(&out.join("checkpoint.json"))?;
    write_json(&out.join("history.json"), &outcome.history)?;
    info!(
        "best validation F1 {:.4} at epoch {}",
        outcome.best_valid_f1, outcome.best_epoch
    );
    Ok(())
}

fn pretrain(cfg: RunConfig) -> CmdResult {
    let out = finish_config(&cfg)?;
    let variant = cfg.variants[0];
    if !variant.pretrains() {
        return Err(invalid(anyhow::anyhow!(
            "variant `{variant}` has no pretraining stage"
        )));
    }
    let data = load_data(&cfg)?;
    let seed = cfg.seed();
    let split = data.split(&cfg.train, seed)?;
    let kappa = if variant.groups() {
        Some(kappa_for(&cfg, &data.source_train)?)
    } else {
        None
    };
    let model = TaggerModel::new(
        cfg.train.model,
        data.vocab(&split),
        data.tags(),
        stage_seed(seed, "init"),
    )?;
    let outcome = pretrain_source(
        model,
        data.source_train.documents(),
        &data.source_valid,
        kappa.as_ref(),
        &cfg.train,
        seed,
    )?;
    write_stage(&out, &outcome)?;
    write_snapshot(&out, &cfg)?;
    Ok(())
}

fn pseudo_label(cfg: RunConfig) -> CmdResult {
    let out = finish_config(&cfg)?;
    let model = load_model(&cfg)?;
    let split = target_split(&cfg)?;
    let pseudo = extract_pseudo(&model, &split.train);
    info!(
        "{} pseudo entities over {} documents",
        pseudo.len(),
        split.train.len()
    );
    pseudo.save(&out.join("pseudo.json"))?;
    write_snapshot(&out, &cfg)?;
    Ok(())
}

fn finetune(cfg: RunConfig) -> CmdResult {
    let out = finish_config(&cfg)?;
    let seed = cfg.seed();
    let (model, split) = match &cfg.checkpoint {
        Some(_) => (load_model(&cfg)?, target_split(&cfg)?),
        None => {
            let data = load_data(&cfg)?;
            let split = data.split(&cfg.train, seed)?;
            let model = TaggerModel::new(
                cfg.train.model,
                data.vocab(&split),
                data.tags(),
                stage_seed(seed, "init"),
            )?;
            (model, split)
        }
    };
    let pseudo = match &cfg.pseudo {
        Some(path) => {
            Some(PseudoSet::load(path).with_context(|| format!("loading {}", path.display()))?)
        }
        None => None,
    };
    let outcome = finetune_target(
        model,
        &split.train,
        &split.valid,
        pseudo.as_ref(),
        &cfg.train,
        seed,
    )?;
    write_stage(&out, &outcome)?;
    write_snapshot(&out, &cfg)?;
    Ok(())
}

#[derive(Serialize)]
struct Metrics {
    documents: usize,
    #[serde(flatten)]
    report: EvalReport,
    /// Only with a checkpoint and recorded distractors.
    false_positives: Option<usize>,
    db_index: Option<f64>,
}

fn evaluate_cmd(cfg: RunConfig) -> CmdResult {
    let out = finish_config(&cfg)?;
    let target = cfg
        .require("target_dir (--target)", &cfg.target_dir)
        .map_err(invalid)?;
    let test = data::load_target_test(target)?;
    let docs = test.documents();
    let metrics = match (&cfg.checkpoint, &cfg.predictions) {
        (Some(_), Some(_)) => {
            return Err(invalid(anyhow::anyhow!(
                "give either --checkpoint or --predictions, not both"
            )))
        }
        (None, None) => {
            return Err(invalid(anyhow::anyhow!(
                "--checkpoint or --predictions is required"
            )))
        }
        (Some(_), None) => {
            let model = load_model(&cfg)?;
            let has_distractors = !test.distractors().is_empty();
            Metrics {
                documents: docs.len(),
                report: evaluate(&model, docs),
                false_positives: has_distractors.then(|| distractor_false_positives(&model, &test)),
                db_index: distractor_db_index(&model, &test)?,
            }
        }
        (None, Some(path)) => Metrics {
            documents: docs.len(),
            report: score_predictions(docs, &data::read_conll(path)?)?,
            false_positives: None,
            db_index: None,
        },
    };
    println!("macro F1 {:.4}", metrics.report.macro_f1);
    write_json(&out.join("metrics.json"), &metrics)?;
    let csv_path = out.join("metrics.csv");
    fs::write(&csv_path, metrics_csv(&metrics.report))
        .with_context(|| format!("writing {}", csv_path.display()))?;
    write_snapshot(&out, &cfg)?;
    Ok(())
}

/// Scores predicted documents against gold, matched by document id.
fn score_predictions(gold: &[Document], predicted: &[Document]) -> anyhow::Result<EvalReport> {
    let by_id: BTreeMap<&str, &Document> = predicted.iter().map(|d| (d.id.as_str(), d)).collect();
    anyhow::ensure!(
        by_id.len() == predicted.len(),
        "duplicate document ids in predictions"
    );
    let mut gold_sets = Vec::with_capacity(gold.len());
    let mut pred_sets = Vec::with_capacity(gold.len());
    for doc in gold {
        let pred = by_id
            .get(doc.id.as_str())
            .with_context(|| format!("no prediction for document `{}`", doc.id))?;
        anyhow::ensure!(
            pred.tokens == doc.tokens,
            "tokens of document `{}` differ between gold and predictions",
            doc.id
        );
        gold_sets.push(gold_spans(doc));
        pred_sets.push(gold_spans(pred));
    }
    anyhow::ensure!(
        by_id.len() == gold.len(),
        "predictions contain documents missing from gold"
    );
    Ok(score_spans(&gold_sets, &pred_sets)?)
}

fn metrics_csv(report: &EvalReport) -> String {
    let mut csv = String::from("type,tp,fp,fn,precision,recall,f1\n");
    for (ty, s) in &report.per_type {
        csv.push_str(&format!(
            "{ty},{},{},{},{},{},{}\n",
            s.tp, s.fp, s.fn_, s.precision, s.recall, s.f1
        ));
    }
    csv.push_str(&format!(
        "macro,,,,{},{},{}\n",
        report.macro_precision, report.macro_recall, report.macro_f1
    ));
    csv
}

#[derive(Serialize)]
struct DbReport {
    against: &'static str,
    db_index: Option<f64>,
    /// Test-set predictions overlapping distractors; distractor mode only.
    false_positives: Option<usize>,
}

fn db_index(cfg: RunConfig) -> CmdResult {
    let out = finish_config(&cfg)?;
    let model = load_model(&cfg)?;
    let report = match &cfg.pseudo {
        Some(path) => {
            let pseudo =
                PseudoSet::load(path).with_context(|| format!("loading {}", path.display()))?;
            let split = target_split(&cfg)?;
            DbReport {
                against: "pseudo",
                db_index: pseudo_db_index(&model, &split.train, &pseudo)?,
                false_positives: None,
            }
        }
        None => {
            let target = cfg
                .require("target_dir (--target)", &cfg.target_dir)
                .map_err(invalid)?;
            let test = data::load_target_test(target)?;
            DbReport {
                against: "distractors",
                db_index: distractor_db_index(&model, &test)?,
                false_positives: Some(distractor_false_positives(&model, &test)),
            }
        }
    };
    match report.db_index {
        Some(db) => println!("DB index {db:.4} (gold vs {})", report.against),
        None => println!("DB index undefined: no {} entities", report.against),
    }
    write_json(&out.join("db_index.json"), &report)?;
    write_snapshot(&out, &cfg)?;
    Ok(())
}

fn run_all(cfg: RunConfig) -> CmdResult {
    let out = finish_config(&cfg)?;
    let data = load_data(&cfg)?;
    let kappa = if cfg.variants.iter().any(|v| v.groups()) {
        Some(kappa_for(&cfg, &data.source_train)?)
    } else {
        None
    };
    let report = run_experiment(&data, &cfg.variants, &cfg.seeds, &cfg.train, kappa.as_ref())?;
    write_json(&out.join("report.json"), &report)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let csv_path = out.join("report.csv");
    fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    for (variant, s) in &report.summary {
        println!(
            "{variant:<16} F1 {:.4} ± {:.4}  false positives {:.1}  DB {}",
            s.f1.mean,
            s.f1.std,
            s.false_positives.mean,
            s.db_index
                .as_ref()
                .map_or("n/a".to_string(), |d| format!("{:.3}", d.mean))
        );
    }
    write_snapshot(&out, &cfg)?;
    Ok(())
}
