//! Two-stage training: source pretraining with entity grouping, pseudo
//! labeling of target text, target finetuning with entity discrimination,
//! plus evaluation and experiment orchestration.

mod eval;
mod experiment;
mod train;

pub use eval::{
    davies_bouldin, evaluate, gold_spans, predicted_spans, score_spans, EvalReport, Span,
    TypeScores,
};
pub use experiment::{
    build_kappa, build_kappa_with, distractor_db_index, distractor_false_positives,
    pseudo_db_index, run_experiment, run_single, ExperimentData, ExperimentReport, MeanStd,
    RunOutcome, RunReport, TargetSplit, Variant, VariantSummary,
};
pub use train::{
    batch_objective, extract_pseudo, finetune_target, pretrain_source, stage_seed, train_stage,
    BatchGrad, Contrast, EpochLog, PseudoSet, Stage, StageOutcome, TrainConfig,
};
