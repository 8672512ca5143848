use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{decode_spans, Document};
use crate::model::TaggerModel;
use crate::{Error, Result};

/// Half-open token span with its entity type.
pub type Span = (usize, usize, String);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TypeScores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TypeScores {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        TypeScores {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// Strict entity-level scores. Macro averages run over the entity types that
/// occur in the gold annotation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_type: BTreeMap<String, TypeScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Scores predicted spans against gold spans document by document. A
/// prediction counts only with exact boundaries and type.
pub fn score_spans(gold: &[Vec<Span>], predicted: &[Vec<Span>]) -> Result<EvalReport> {
    if gold.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} gold documents but {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let mut gold_types = BTreeSet::new();
    for (g, p) in gold.iter().zip(predicted) {
        let gs: BTreeSet<&Span> = g.iter().collect();
        let ps: BTreeSet<&Span> = p.iter().collect();
        for s in &gs {
            gold_types.insert(s.2.clone());
            let c = counts.entry(s.2.clone()).or_default();
            if ps.contains(s) {
                c.0 += 1;
            } else {
                c.2 += 1;
            }
        }
        for s in ps.difference(&gs) {
            counts.entry(s.2.clone()).or_default().1 += 1;
        }
    }
    let per_type: BTreeMap<String, TypeScores> = counts
        .into_iter()
        .map(|(t, (tp, fp, fn_))| (t, TypeScores::from_counts(tp, fp, fn_)))
        .collect();
    let k = gold_types.len();
    let mean = |f: fn(&TypeScores) -> f64| {
        if k == 0 {
            0.0
        } else {
            gold_types.iter().map(|t| f(&per_type[t])).sum::<f64>() / k as f64
        }
    };
    Ok(EvalReport {
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        per_type,
    })
}

pub fn gold_spans(doc: &Document) -> Vec<Span> {
    decode_spans(&doc.tags)
}

pub fn predicted_spans(model: &TaggerModel, doc: &Document) -> Vec<Span> {
    decode_spans(&model.predict(doc))
}

/// Strict entity-level evaluation of the model on `docs`.
pub fn evaluate(model: &TaggerModel, docs: &[Document]) -> EvalReport {
    let gold: Vec<Vec<Span>> = docs.iter().map(gold_spans).collect();
    let pred: Vec<Vec<Span>> = docs.iter().map(|d| predicted_spans(model, d)).collect();
    score_spans(&gold, &pred).expect("one prediction list per document")
}

/// Davies-Bouldin index of labelled points; lower means tighter, better
/// separated clusters.
pub fn davies_bouldin(points: &[(Vec<f64>, usize)]) -> Result<f64> {
    let mut clusters: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for (v, c) in points {
        clusters.entry(*c).or_default().push(v);
    }
    if clusters.len() < 2 {
        return Err(Error::invalid(
            "Davies-Bouldin index needs at least two clusters",
        ));
    }
    let dim = points[0].0.len();
    if points.iter().any(|(v, _)| v.len() != dim) {
        return Err(Error::Shape("points differ in dimension".into()));
    }
    let stats: Vec<(Vec<f64>, f64)> = clusters
        .values()
        .map(|members| {
            let n = members.len() as f64;
            let mut c = vec![0.0; dim];
            for m in members {
                for (a, x) in c.iter_mut().zip(m.iter()) {
                    *a += x / n;
                }
            }
            let sigma = members.iter().map(|m| euclid(m, &c)).sum::<f64>() / n;
            (c, sigma)
        })
        .collect();
    let k = stats.len();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = euclid(&stats[i].0, &stats[j].0);
            if d == 0.0 {
                return Err(Error::invalid("coincident cluster centroids"));
            }
            worst = worst.max((stats[i].1 + stats[j].1) / d);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
