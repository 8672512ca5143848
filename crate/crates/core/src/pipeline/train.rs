use std::collections::BTreeMap;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use crate::corpus::{Document, EntityMention};
use crate::embedder::{seeded_hash, EmbeddingMode};
use crate::losses::{
    backprop_similarities, combined_loss, mine_pairs, ms_loss, ner_loss, rms_loss, MsParams,
};
use crate::model::{
    clip_global_norm, entity_repr, entity_repr_backward, AdamW, ModelConfig, OptimConfig, Params,
    TaggerModel, PAD_ID, UNK_ID,
};
use crate::similarity::KappaCache;
use crate::{Error, Result};

/// Settings shared by both training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub source_batch_size: usize,
    pub target_batch_size: usize,
    pub max_epochs: usize,
    /// Stop once this many epochs pass without a new best validation F1.
    pub patience: usize,
    pub ms: MsParams,
    pub embedding_mode: EmbeddingMode,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    /// Probability of replacing a training token with `<UNK>`.
    pub word_dropout: f64,
    pub fewshot_lo: usize,
    pub fewshot_hi: usize,
    /// Re-extract pseudo labels from the current model before every
    /// finetuning epoch instead of once up front.
    pub refresh_pseudo: bool,
    /// Dimension of the hash embeddings behind the auxiliary similarity.
    pub aux_dim: usize,
    pub aux_seed: u64,
    pub template_fallback: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            source_batch_size: 64,
            target_batch_size: 16,
            max_epochs: 80,
            patience: 20,
            ms: MsParams::default(),
            embedding_mode: EmbeddingMode::default(),
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            word_dropout: 0.05,
            fewshot_lo: 70,
            fewshot_hi: 100,
            refresh_pseudo: false,
            aux_dim: 64,
            aux_seed: 13,
            template_fallback: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.ms.validate()?;
        self.model.validate()?;
        self.optim.validate()?;
        if self.source_batch_size == 0 || self.target_batch_size == 0 {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be positive"));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::invalid(format!(
                "patience {} must be smaller than max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.word_dropout) {
            return Err(Error::invalid("word_dropout must lie in [0, 1)"));
        }
        if self.fewshot_lo > self.fewshot_hi {
            return Err(Error::invalid("fewshot_lo exceeds fewshot_hi"));
        }
        if self.aux_dim == 0 {
            return Err(Error::invalid("aux_dim must be positive"));
        }
        Ok(())
    }
}

/// Pseudo-labeled target entities per document: predicted spans that share
/// no token with any gold entity. Their predicted types are dropped.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PseudoSet {
    pub entities: BTreeMap<String, Vec<EntityMention>>,
}

impl PseudoSet {
    pub fn len(&self) -> usize {
        self.entities.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn of(&self, doc_id: &str) -> &[EntityMention] {
        self.entities.get(doc_id).map_or(&[], Vec::as_slice)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn extract_pseudo(model: &TaggerModel, docs: &[Document]) -> PseudoSet {
    let mut entities = BTreeMap::new();
    for doc in docs {
        let gold = doc.entities();
        let mut pred = Document {
            id: doc.id.clone(),
            tokens: doc.tokens.clone(),
            tags: model.predict(doc),
        }
        .entities();
        pred.retain(|p| !gold.iter().any(|g| g.overlaps(p.start, p.end)));
        for (n, p) in pred.iter_mut().enumerate() {
            p.id = format!("{}:q{n}", doc.id);
            p.entity_type = PSEUDO_TYPE.to_string();
        }
        if !pred.is_empty() {
            entities.insert(doc.id.clone(), pred);
        }
    }
    PseudoSet { entities }
}

const PSEUDO_TYPE: &str = "pseudo";

/// Which contrastive term accompanies the tagging loss.
#[derive(Debug, Clone, Copy)]
pub enum Contrast<'a> {
    None,
    /// RMS over gold entities labelled by type, κ looked up by entity key.
    Grouping(&'a KappaCache),
    /// MS over gold entities (label 1) against pseudo entities (label 0).
    Discrimination(&'a PseudoSet),
}

/// Objective value and gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchGrad {
    pub loss: f64,
    pub ner: f64,
    pub contrastive: f64,
    pub n_entities: usize,
    pub n_pairs: usize,
    pub grads: Params,
}

/// `L_NER + λ·L_contrastive` over a batch of documents. The tagging loss is
/// the mean over all tokens of the batch.
pub fn batch_objective(
    model: &TaggerModel,
    docs: &[&Document],
    contrast: Contrast<'_>,
    lambda: f64,
    ms: &MsParams,
) -> Result<BatchGrad> {
    let ids: Vec<Vec<usize>> = docs.iter().map(|d| model.encode(&d.tokens)).collect();
    objective_with_ids(model, docs, &ids, contrast, lambda, ms)
}

struct BatchEntity {
    doc: usize,
    start: usize,
    end: usize,
    key: String,
}

fn objective_with_ids(
    model: &TaggerModel,
    docs: &[&Document],
    ids: &[Vec<usize>],
    contrast: Contrast<'_>,
    lambda: f64,
    ms: &MsParams,
) -> Result<BatchGrad> {
    let total: usize = docs.iter().map(|d| d.len()).sum();
    let mut grads = Params::zeros_like(&model.params);
    if total == 0 {
        return Ok(BatchGrad {
            loss: 0.0,
            ner: 0.0,
            contrastive: 0.0,
            n_entities: 0,
            n_pairs: 0,
            grads,
        });
    }
    let forwards: Vec<_> = ids.iter().map(|i| model.forward_ids(i)).collect();

    let mut ner = 0.0;
    let mut d_logits = Vec::with_capacity(docs.len());
    for (doc, fwd) in docs.iter().zip(&forwards) {
        let gold = model.gold_indices(doc)?;
        let (l, mut d) = ner_loss(&fwd.logits, &gold)?;
        let share = doc.len() as f64 / total as f64;
        ner += l * share;
        d.iter_mut().flatten().for_each(|x| *x *= share);
        d_logits.push(d);
    }

    // Entity batch and labels.
    let mut ents = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut push = |doc, m: &EntityMention, label: String| {
        ents.push(BatchEntity {
            doc,
            start: m.start,
            end: m.end,
            key: m.key.clone(),
        });
        labels.push(label);
    };
    match contrast {
        Contrast::None => {}
        Contrast::Grouping(_) => {
            for (n, doc) in docs.iter().enumerate() {
                for m in doc.entities() {
                    push(n, &m, m.entity_type.clone());
                }
            }
        }
        Contrast::Discrimination(pseudo) => {
            for (n, doc) in docs.iter().enumerate() {
                for m in doc.entities() {
                    push(n, &m, "1".into());
                }
                for m in pseudo.of(&doc.id) {
                    if m.end > doc.len() {
                        return Err(Error::invalid(format!(
                            "pseudo entity {} exceeds document {}",
                            m.id, doc.id
                        )));
                    }
                    push(n, m, "0".into());
                }
            }
        }
    }

    let mut contrastive = 0.0;
    let mut n_pairs = 0;
    let mut d_hidden: Option<Vec<Vec<Vec<f64>>>> = None;
    if ents.len() >= 2 {
        let reps = ents
            .iter()
            .map(|e| entity_repr(&forwards[e.doc].hidden, e.start, e.end))
            .collect::<Result<Vec<_>>>()?;
        let mut pairs = mine_pairs(&reps, &labels, ms)?;
        n_pairs = pairs.n_pairs();
        let loss = match contrast {
            Contrast::Grouping(cache) => {
                pairs.set_kappa(|a, o| cache.kappa(&ents[a].key, &ents[o].key));
                rms_loss(&pairs, ms)
            }
            _ => ms_loss(&pairs, ms),
        };
        let d_reps = backprop_similarities(&reps, &pairs, &loss.d_sim);
        let combined = combined_loss((ner, Vec::new()), (loss.value, d_reps), lambda);
        contrastive = combined.contrastive;
        if lambda != 0.0 {
            let mut dh: Vec<Vec<Vec<f64>>> = forwards
                .iter()
                .map(|f| vec![vec![0.0; model.config().hidden_dim]; f.hidden.len()])
                .collect();
            for (e, d) in ents.iter().zip(&combined.d_reps) {
                entity_repr_backward(&mut dh[e.doc], e.start, e.end, d);
            }
            d_hidden = Some(dh);
        }
    }

    for (n, fwd) in forwards.iter().enumerate() {
        let extra = d_hidden.as_ref().map(|dh| dh[n].as_slice());
        model.backward(fwd, &d_logits[n], extra, &mut grads);
    }
    Ok(BatchGrad {
        loss: ner + lambda * contrastive,
        ner,
        contrastive,
        n_entities: ents.len(),
        n_pairs,
        grads,
    })
}

/// One training stage: what to train on and with which objective.
#[derive(Debug, Clone, Copy)]
pub struct Stage<'a> {
    pub name: &'a str,
    pub train: &'a [Document],
    pub valid: &'a [Document],
    pub contrast: Contrast<'a>,
    pub lambda: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub contrastive: f64,
    pub valid_f1: f64,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    /// Parameters from the epoch with the best validation macro F1.
    pub model: TaggerModel,
    pub best_epoch: usize,
    pub best_valid_f1: f64,
    pub history: Vec<EpochLog>,
}

/// Minibatch AdamW with early stopping on validation macro F1. The earliest
/// epoch wins ties. `seed` drives shuffling and word dropout only.
pub fn train_stage(
    mut model: TaggerModel,
    stage: Stage<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<StageOutcome> {
    cfg.validate()?;
    if stage.train.is_empty() {
        return Err(Error::invalid(format!(
            "{} stage has no training documents",
            stage.name
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = AdamW::new(cfg.optim, &model.params);
    let mut order: Vec<usize> = (0..stage.train.len()).collect();
    let mut refreshed: Option<PseudoSet> = None;
    let mut best: Option<(usize, f64, Params)> = None;
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        if cfg.refresh_pseudo && epoch > 1 {
            if let Contrast::Discrimination(_) = stage.contrast {
                refreshed = Some(extract_pseudo(&model, stage.train));
            }
        }
        let contrast = match (&refreshed, stage.contrast) {
            (Some(q), Contrast::Discrimination(_)) => Contrast::Discrimination(q),
            (_, c) => c,
        };
        order.shuffle(&mut rng);
        let (mut loss_sum, mut con_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(stage.batch_size) {
            let docs: Vec<&Document> = chunk.iter().map(|&i| &stage.train[i]).collect();
            let ids: Vec<Vec<usize>> = docs
                .iter()
                .map(|d| {
                    let mut ids = model.encode(&d.tokens);
                    if cfg.word_dropout > 0.0 {
                        for id in ids.iter_mut().filter(|i| **i != PAD_ID) {
                            if rng.random_bool(cfg.word_dropout) {
                                *id = UNK_ID;
                            }
                        }
                    }
                    ids
                })
                .collect();
            let mut g = objective_with_ids(&model, &docs, &ids, contrast, stage.lambda, &cfg.ms)?;
            clip_global_norm(&mut g.grads, cfg.optim.clip_norm);
            opt.step(&mut model.params, &g.grads)?;
            loss_sum += g.loss;
            con_sum += g.contrastive;
            batches += 1;
        }
        let f1 = evaluate(&model, stage.valid).macro_f1;
        let log = EpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            contrastive: con_sum / batches as f64,
            valid_f1: f1,
        };
        debug!(
            "{} epoch {epoch}: loss {:.4} contrastive {:.4} valid F1 {:.4}",
            stage.name, log.loss, log.contrastive, f1
        );
        history.push(log);
        if best.as_ref().is_none_or(|b| f1 > b.1) {
            best = Some((epoch, f1, model.params.clone()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_valid_f1, params) = best.expect("at least one epoch ran");
    info!(
        "{}: best valid F1 {best_valid_f1:.4} at epoch {best_epoch} of {}",
        stage.name,
        history.len()
    );
    model.params = params;
    Ok(StageOutcome {
        model,
        best_epoch,
        best_valid_f1,
        history,
    })
}

/// Stage seed derived from a run seed.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    seeded_hash(stage.as_bytes(), seed)
}

/// Source pretraining on `L_NER + λ_S·L_RMS`; `kappa = None` trains on the
/// tagging loss alone.
pub fn pretrain_source(
    model: TaggerModel,
    train: &[Document],
    valid: &[Document],
    kappa: Option<&KappaCache>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<StageOutcome> {
    let (contrast, lambda) = match kappa {
        Some(k) => (Contrast::Grouping(k), cfg.ms.lambda_s),
        None => (Contrast::None, 0.0),
    };
    train_stage(
        model,
        Stage {
            name: "pretrain",
            train,
            valid,
            contrast,
            lambda,
            batch_size: cfg.source_batch_size,
        },
        cfg,
        stage_seed(seed, "pretrain"),
    )
}

/// Target finetuning on `L_NER + λ_T·L_MS`; `pseudo = None` trains on the
/// tagging loss alone.
pub fn finetune_target(
    model: TaggerModel,
    train: &[Document],
    valid: &[Document],
    pseudo: Option<&PseudoSet>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<StageOutcome> {
    let (contrast, lambda) = match pseudo {
        Some(q) => (Contrast::Discrimination(q), cfg.ms.lambda_t),
        None => (Contrast::None, 0.0),
    };
    train_stage(
        model,
        Stage {
            name: "finetune",
            train,
            valid,
            contrast,
            lambda,
            batch_size: cfg.target_batch_size,
        },
        cfg,
        stage_seed(seed, "finetune"),
    )
}
