use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{davies_bouldin, evaluate, predicted_spans, EvalReport};
use super::train::{
    extract_pseudo, finetune_target, pretrain_source, stage_seed, PseudoSet, TrainConfig,
};
use crate::corpus::{downsample_fewshot, CorpusBundle, Document, SyntheticCorpora};
use crate::embedder::{build_embedding_sets, EmbeddingProvider, TemplateSet};
use crate::model::{entity_repr, tag_inventory, TaggerModel, Vocab};
use crate::similarity::KappaCache;
use crate::{Error, Result};

/// Experiment arms: which stages run and which contrastive terms they use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    TargetOnly,
    DirectTransfer,
    EgOnly,
    EdOnly,
    EgEd,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::TargetOnly,
        Variant::DirectTransfer,
        Variant::EgOnly,
        Variant::EdOnly,
        Variant::EgEd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::TargetOnly => "target_only",
            Variant::DirectTransfer => "direct_transfer",
            Variant::EgOnly => "eg_only",
            Variant::EdOnly => "ed_only",
            Variant::EgEd => "eg_ed",
        }
    }

    pub fn pretrains(self) -> bool {
        self != Variant::TargetOnly
    }

    /// Entity grouping in pretraining.
    pub fn groups(self) -> bool {
        matches!(self, Variant::EgOnly | Variant::EgEd)
    }

    /// Entity discrimination in finetuning.
    pub fn discriminates(self) -> bool {
        matches!(self, Variant::EdOnly | Variant::EgEd)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}

/// Corpora for an experiment. Target train and validation are pools that
/// each run downsamples with its own seed; only the test bundle's
/// distractors are used, and only for diagnostics.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub source_train: CorpusBundle,
    pub source_valid: Vec<Document>,
    pub target_train: Vec<Document>,
    pub target_valid: Vec<Document>,
    pub target_test: CorpusBundle,
}

impl From<SyntheticCorpora> for ExperimentData {
    fn from(c: SyntheticCorpora) -> Self {
        ExperimentData {
            source_train: c.source,
            source_valid: c.source_valid,
            target_train: c.target.documents().to_vec(),
            target_valid: c.target_valid.documents().to_vec(),
            target_test: c.target_test,
        }
    }
}

/// Seed-specific few-shot target splits.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSplit {
    pub train: Vec<Document>,
    pub valid: Vec<Document>,
}

const VALID_SPLIT_SALT: u64 = 0x5eed_0000_7a11_d000;

impl ExperimentData {
    pub fn split(&self, cfg: &TrainConfig, seed: u64) -> Result<TargetSplit> {
        let (lo, hi) = (cfg.fewshot_lo, cfg.fewshot_hi);
        Ok(TargetSplit {
            train: downsample_fewshot(&self.target_train, seed, lo, hi)?,
            valid: downsample_fewshot(&self.target_valid, seed ^ VALID_SPLIT_SALT, lo, hi)?,
        })
    }

    /// Vocabulary over source training text and the run's target training
    /// text.
    pub fn vocab(&self, split: &TargetSplit) -> Vocab {
        Vocab::from_documents(self.source_train.documents().iter().chain(&split.train))
    }

    /// BIO inventory over every entity type seen in the training pools.
    pub fn tags(&self) -> Vec<crate::corpus::BioTag> {
        let types: BTreeSet<String> = self
            .source_train
            .documents()
            .iter()
            .chain(&self.target_train)
            .flat_map(|d| d.entities().into_iter().map(|e| e.entity_type))
            .collect();
        tag_inventory(types.iter().map(String::as_str))
    }
}

/// κ cache over the source bundle's events under the configured embedding
/// mode.
pub fn build_kappa(source: &CorpusBundle, cfg: &TrainConfig) -> Result<KappaCache> {
    let provider = EmbeddingProvider::hash(cfg.aux_dim, cfg.aux_seed);
    let templates = TemplateSet::builtin().with_fallback(cfg.template_fallback);
    build_kappa_with(source, cfg, &provider, &templates)
}

/// [`build_kappa`] with an explicit provider and template set.
pub fn build_kappa_with(
    source: &CorpusBundle,
    cfg: &TrainConfig,
    provider: &EmbeddingProvider,
    templates: &TemplateSet,
) -> Result<KappaCache> {
    let sets = build_embedding_sets(
        source,
        cfg.embedding_mode,
        provider,
        templates,
        cfg.aux_seed,
    )?;
    KappaCache::from_embedding_sets(&sets)
}

/// Metrics of one (variant, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub seed: u64,
    pub target_train_docs: usize,
    pub target_valid_docs: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub valid_f1: f64,
    pub pseudo_count: usize,
    pub test: EvalReport,
    /// Test predictions that overlap an untagged source-domain mention.
    pub false_positives: usize,
    /// Davies-Bouldin index of gold target entities against untagged
    /// source-domain mentions in the test documents.
    pub db_index: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub model: TaggerModel,
}

/// Runs one variant on one seed.
pub fn run_single(
    data: &ExperimentData,
    kappa: Option<&KappaCache>,
    variant: Variant,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let split = data.split(cfg, seed)?;
    let model = TaggerModel::new(
        cfg.model,
        data.vocab(&split),
        data.tags(),
        stage_seed(seed, "init"),
    )?;

    let (model, pretrain_epochs) = if variant.pretrains() {
        let kappa = if variant.groups() {
            Some(kappa.ok_or_else(|| Error::invalid("entity grouping needs a kappa cache"))?)
        } else {
            None
        };
        let out = pretrain_source(
            model,
            data.source_train.documents(),
            &data.source_valid,
            kappa,
            cfg,
            seed,
        )?;
        let epochs = out.history.len();
        (out.model, epochs)
    } else {
        (model, 0)
    };

    let pseudo = variant
        .discriminates()
        .then(|| extract_pseudo(&model, &split.train));
    let pseudo_count = pseudo.as_ref().map_or(0, |q| q.len());
    let out = finetune_target(
        model,
        &split.train,
        &split.valid,
        pseudo.as_ref(),
        cfg,
        seed,
    )?;

    let test_docs = data.target_test.documents();
    let report = RunReport {
        variant,
        seed,
        target_train_docs: split.train.len(),
        target_valid_docs: split.valid.len(),
        pretrain_epochs,
        finetune_epochs: out.history.len(),
        valid_f1: out.best_valid_f1,
        pseudo_count,
        test: evaluate(&out.model, test_docs),
        false_positives: distractor_false_positives(&out.model, &data.target_test),
        db_index: distractor_db_index(&out.model, &data.target_test)?,
    };
    info!(
        "{variant} seed {seed}: test F1 {:.4}, false positives {}, DB {:?}",
        report.test.macro_f1, report.false_positives, report.db_index
    );
    Ok(RunOutcome {
        report,
        model: out.model,
    })
}

/// Predicted spans that share a token with a recorded distractor.
pub fn distractor_false_positives(model: &TaggerModel, bundle: &CorpusBundle) -> usize {
    let mut by_doc: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    for d in bundle.distractors() {
        by_doc.entry(&d.doc_id).or_default().push((d.start, d.end));
    }
    bundle
        .documents()
        .iter()
        .filter_map(|doc| by_doc.get(doc.id.as_str()).map(|spans| (doc, spans)))
        .map(|(doc, spans)| {
            predicted_spans(model, doc)
                .iter()
                .filter(|(s, e, _)| spans.iter().any(|&(a, b)| *s < b && a < *e))
                .count()
        })
        .sum()
}

/// DB index between gold-entity and distractor representations; `None` when
/// either group is empty.
pub fn distractor_db_index(model: &TaggerModel, bundle: &CorpusBundle) -> Result<Option<f64>> {
    let mut spans: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    for d in bundle.distractors() {
        spans.entry(&d.doc_id).or_default().push((d.start, d.end));
    }
    gold_vs_spans_db(model, bundle.documents(), &spans)
}

/// DB index between gold-entity and pseudo-entity representations.
pub fn pseudo_db_index(
    model: &TaggerModel,
    docs: &[Document],
    pseudo: &PseudoSet,
) -> Result<Option<f64>> {
    let spans: BTreeMap<&str, Vec<(usize, usize)>> = pseudo
        .entities
        .iter()
        .map(|(doc, ms)| (doc.as_str(), ms.iter().map(|m| (m.start, m.end)).collect()))
        .collect();
    gold_vs_spans_db(model, docs, &spans)
}

fn gold_vs_spans_db(
    model: &TaggerModel,
    docs: &[Document],
    others: &BTreeMap<&str, Vec<(usize, usize)>>,
) -> Result<Option<f64>> {
    let mut points = Vec::new();
    let (mut gold, mut other) = (0, 0);
    for doc in docs {
        let fwd = model.forward(doc);
        for e in doc.entities() {
            points.push((entity_repr(&fwd.hidden, e.start, e.end)?, 0));
            gold += 1;
        }
        for &(s, e) in others.get(doc.id.as_str()).into_iter().flatten() {
            if e > doc.len() {
                return Err(Error::invalid(format!(
                    "span {s}..{e} exceeds document {}",
                    doc.id
                )));
            }
            points.push((entity_repr(&fwd.hidden, s, e)?, 1));
            other += 1;
        }
    }
    if gold == 0 || other == 0 {
        return Ok(None);
    }
    davies_bouldin(&points).map(Some)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return MeanStd::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub runs: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub false_positives: MeanStd,
    /// Over the runs that have a DB index.
    pub db_index: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunReport>,
    pub summary: BTreeMap<Variant, VariantSummary>,
}

impl ExperimentReport {
    pub fn from_runs(config: TrainConfig, seeds: Vec<u64>, runs: Vec<RunReport>) -> Self {
        let mut grouped: BTreeMap<Variant, Vec<&RunReport>> = BTreeMap::new();
        for r in &runs {
            grouped.entry(r.variant).or_default().push(r);
        }
        let summary = grouped
            .into_iter()
            .map(|(v, rs)| {
                let col = |f: &dyn Fn(&RunReport) -> f64| {
                    MeanStd::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>())
                };
                let dbs: Vec<f64> = rs.iter().filter_map(|r| r.db_index).collect();
                let s = VariantSummary {
                    runs: rs.len(),
                    precision: col(&|r| r.test.macro_precision),
                    recall: col(&|r| r.test.macro_recall),
                    f1: col(&|r| r.test.macro_f1),
                    false_positives: col(&|r| r.false_positives as f64),
                    db_index: (!dbs.is_empty()).then(|| MeanStd::of(&dbs)),
                };
                (v, s)
            })
            .collect();
        ExperimentReport {
            config,
            seeds,
            runs,
            summary,
        }
    }

    /// `variant,seed,split,type,precision,recall,f1,db`: one row per entity
    /// type and a `macro` row carrying the DB index.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "variant,seed,split,type,precision,recall,f1,db")?;
        for r in &self.runs {
            for (ty, s) in &r.test.per_type {
                writeln!(
                    out,
                    "{},{},test,{},{},{},{},",
                    r.variant, r.seed, ty, s.precision, s.recall, s.f1
                )?;
            }
            let db = r.db_index.map(|d| d.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},test,macro,{},{},{},{}",
                r.variant, r.seed, r.test.macro_precision, r.test.macro_recall, r.test.macro_f1, db
            )?;
        }
        Ok(())
    }
}

/// Runs every (variant, seed) combination. Runs are independent and execute
/// in parallel; results come back in variant-then-seed order. Without a
/// supplied κ cache, grouping variants build one with [`build_kappa`].
pub fn run_experiment(
    data: &ExperimentData,
    variants: &[Variant],
    seeds: &[u64],
    cfg: &TrainConfig,
    kappa: Option<&KappaCache>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("need at least one variant and one seed"));
    }
    let built;
    let kappa = match kappa {
        Some(k) => Some(k),
        None if variants.iter().any(|v| v.groups()) => {
            built = build_kappa(&data.source_train, cfg)?;
            Some(&built)
        }
        None => None,
    };
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(v, s)| run_single(data, kappa, v, cfg, s).map(|o| o.report))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport::from_runs(
        cfg.clone(),
        seeds.to_vec(),
        runs,
    ))
}
