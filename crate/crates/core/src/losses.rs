//! Token cross-entropy and the multi-similarity family of contrastive losses.
//!
//! Pair mining keeps, for every anchor, the positives that are less similar
//! than its hardest negative (plus a margin) and the negatives that are more
//! similar than its hardest positive (minus a margin). The MS loss then scores
//! each side with a soft-plus of exponentiated similarities. The refined
//! variant shifts each exponent by the pair's auxiliary similarity κ, scaled by
//! ρ for positives and τ for negatives.
//!
//! All exponentials go through a log-sum-exp with the implicit `1` term
//! included, so large ρκ or α·S values never overflow.

use serde::{Deserialize, Serialize};

use crate::similarity::cosine_unchecked;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub tau: f64,
    /// Weight of the contrastive term during source pretraining.
    pub lambda_s: f64,
    /// Weight of the contrastive term during target finetuning.
    pub lambda_t: f64,
}

impl Default for MsParams {
    fn default() -> Self {
        MsParams {
            alpha: 4.0,
            beta: 3.0,
            gamma: 0.5,
            epsilon: 0.1,
            rho: 8.0,
            tau: 6.0,
            lambda_s: 0.2,
            lambda_t: 1.0,
        }
    }
}

impl MsParams {
    /// Grid searched for the pretraining weight.
    pub const LAMBDA_S_GRID: [f64; 5] = [0.10, 0.15, 0.20, 0.25, 0.30];
    /// Grid searched for the finetuning weight.
    pub const LAMBDA_T_GRID: [f64; 5] = [0.6, 0.8, 1.0, 1.2, 1.4];

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha,
            self.beta,
            self.gamma,
            self.epsilon,
            self.rho,
            self.tau,
            self.lambda_s,
            self.lambda_t,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("loss parameters must be finite"));
        }
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(Error::invalid("alpha and beta must be positive"));
        }
        if self.epsilon < 0.0 || self.rho < 0.0 || self.tau < 0.0 {
            return Err(Error::invalid("epsilon, rho and tau must be non-negative"));
        }
        if self.lambda_s < 0.0 || self.lambda_t < 0.0 {
            return Err(Error::invalid("lambda weights must be non-negative"));
        }
        Ok(())
    }
}

/// Mean token cross-entropy of softmax(logits) against `gold`, and its
/// gradient `(softmax − onehot) / N`.
pub fn ner_loss(logits: &[Vec<f64>], gold: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} gold tags",
            logits.len(),
            gold.len()
        )));
    }
    if logits.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &g) in logits.iter().zip(gold) {
        if g >= row.len() {
            return Err(Error::invalid(format!(
                "gold tag index {g} out of range for {} tags",
                row.len()
            )));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite logit"));
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
        let lse = m + z.ln();
        loss += lse - row[g];
        let mut d: Vec<f64> = row.iter().map(|x| (x - lse).exp() / n).collect();
        d[g] -= 1.0 / n;
        grad.push(d);
    }
    Ok((loss / n, grad))
}

/// One mined pair seen from its anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub other: usize,
    pub sim: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnchorPairs {
    pub anchor: usize,
    pub positives: Vec<Pair>,
    pub negatives: Vec<Pair>,
}

/// Mined pairs for one loss evaluation. Every entity of the batch is an
/// anchor, so `anchors.len()` is the loss denominator.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairBatch {
    pub anchors: Vec<AnchorPairs>,
}

impl PairBatch {
    pub fn n_pairs(&self) -> usize {
        self.anchors
            .iter()
            .map(|a| a.positives.len() + a.negatives.len())
            .sum()
    }

    /// Sets κ for every pair from `(anchor, other)`.
    pub fn set_kappa(&mut self, mut kappa: impl FnMut(usize, usize) -> f64) {
        for a in &mut self.anchors {
            for p in a.positives.iter_mut().chain(a.negatives.iter_mut()) {
                p.kappa = kappa(a.anchor, p.other);
            }
        }
    }
}

/// Values attached to each mined pair, laid out like the batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerPair {
    pub positive: Vec<Vec<f64>>,
    pub negative: Vec<Vec<f64>>,
}

/// Full cosine similarity matrix of the representations.
pub fn similarity_matrix(reps: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if let Some(first) = reps.first() {
        if reps.iter().any(|r| r.len() != first.len()) {
            return Err(Error::Shape("representations differ in length".into()));
        }
    }
    let n = reps.len();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let c = cosine_unchecked(&reps[i], &reps[j]);
            s[i][j] = c;
            s[j][i] = c;
        }
    }
    Ok(s)
}

/// Mines positive and negative sets for every anchor from a precomputed
/// similarity matrix. A missing comparison class makes its threshold vacuous,
/// so all candidates on the other side are kept. κ is left at 0.
pub fn mine_from_similarities<L: PartialEq>(
    sims: &[Vec<f64>],
    labels: &[L],
    epsilon: f64,
) -> Result<PairBatch> {
    let n = labels.len();
    if sims.len() != n || sims.iter().any(|r| r.len() != n) {
        return Err(Error::Shape(format!(
            "similarity matrix does not match {n} labels"
        )));
    }
    let mut anchors = Vec::with_capacity(n);
    for i in 0..n {
        let mut hardest_neg: Option<f64> = None;
        let mut hardest_pos: Option<f64> = None;
        for k in 0..n {
            if labels[k] != labels[i] {
                hardest_neg = Some(hardest_neg.map_or(sims[i][k], |m| m.max(sims[i][k])));
            } else if k != i {
                hardest_pos = Some(hardest_pos.map_or(sims[i][k], |m| m.min(sims[i][k])));
            }
        }
        let pos_threshold = hardest_neg.map_or(f64::INFINITY, |m| m + epsilon);
        let neg_threshold = hardest_pos.map_or(f64::NEG_INFINITY, |m| m - epsilon);
        let mut a = AnchorPairs {
            anchor: i,
            ..Default::default()
        };
        for j in 0..n {
            let pair = Pair {
                other: j,
                sim: sims[i][j],
                kappa: 0.0,
            };
            if labels[j] == labels[i] {
                if j != i && sims[i][j] < pos_threshold {
                    a.positives.push(pair);
                }
            } else if sims[i][j] > neg_threshold {
                a.negatives.push(pair);
            }
        }
        anchors.push(a);
    }
    Ok(PairBatch { anchors })
}

/// Cosine similarities of `reps` followed by [`mine_from_similarities`].
pub fn mine_pairs<L: PartialEq>(
    reps: &[Vec<f64>],
    labels: &[L],
    params: &MsParams,
) -> Result<PairBatch> {
    if reps.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} representations for {} labels",
            reps.len(),
            labels.len()
        )));
    }
    mine_from_similarities(&similarity_matrix(reps)?, labels, params.epsilon)
}

/// `ln(1 + Σ e^{x_k})` and the weights `e^{x_k} / (1 + Σ e^{x})`.
fn soft_plus_terms(x: &[f64]) -> (f64, Vec<f64>) {
    let m = x.iter().cloned().fold(0.0, f64::max);
    let s: f64 = (-m).exp() + x.iter().map(|v| (v - m).exp()).sum::<f64>();
    let lse = m + s.ln();
    (lse, x.iter().map(|v| (v - lse).exp()).collect())
}

fn positive_logit(p: &Pair, params: &MsParams, refined: bool) -> f64 {
    let base = -params.alpha * (p.sim - params.gamma);
    if refined {
        base + params.rho * p.kappa
    } else {
        base
    }
}

fn negative_logit(p: &Pair, params: &MsParams, refined: bool) -> f64 {
    let base = params.beta * (p.sim - params.gamma);
    if refined {
        base - params.tau * p.kappa
    } else {
        base
    }
}

/// Loss value with its gradients with respect to every pair similarity and
/// every pair κ.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContrastiveLoss {
    pub value: f64,
    pub weights: PerPair,
    pub d_sim: PerPair,
    pub d_kappa: PerPair,
}

fn evaluate(batch: &PairBatch, params: &MsParams, refined: bool) -> ContrastiveLoss {
    let n_e = batch.anchors.len();
    let mut out = ContrastiveLoss::default();
    if n_e == 0 {
        return out;
    }
    let inv_n = 1.0 / n_e as f64;
    for a in &batch.anchors {
        let xp: Vec<f64> = a
            .positives
            .iter()
            .map(|p| positive_logit(p, params, refined))
            .collect();
        let xn: Vec<f64> = a
            .negatives
            .iter()
            .map(|p| negative_logit(p, params, refined))
            .collect();
        let (lp, wp) = soft_plus_terms(&xp);
        let (ln, wn) = soft_plus_terms(&xn);
        out.value += lp / params.alpha + ln / params.beta;

        let kp = if refined {
            params.rho / params.alpha
        } else {
            0.0
        };
        let kn = if refined {
            params.tau / params.beta
        } else {
            0.0
        };
        out.d_sim
            .positive
            .push(wp.iter().map(|w| -w * inv_n).collect());
        out.d_sim
            .negative
            .push(wn.iter().map(|w| w * inv_n).collect());
        out.d_kappa
            .positive
            .push(wp.iter().map(|w| kp * w * inv_n).collect());
        out.d_kappa
            .negative
            .push(wn.iter().map(|w| -kn * w * inv_n).collect());
        out.weights.positive.push(wp);
        out.weights.negative.push(wn);
    }
    out.value *= inv_n;
    out
}

/// Soft weights `w⁺`, `w⁻` of every mined pair.
pub fn ms_weights(batch: &PairBatch, params: &MsParams) -> PerPair {
    evaluate(batch, params, false).weights
}

/// Multi-similarity loss averaged over anchors. κ is ignored.
pub fn ms_loss(batch: &PairBatch, params: &MsParams) -> ContrastiveLoss {
    evaluate(batch, params, false)
}

/// κ-adjusted weights `ŵ⁺`, `ŵ⁻`.
pub fn rms_weights(batch: &PairBatch, params: &MsParams) -> PerPair {
    evaluate(batch, params, true).weights
}

/// Refined multi-similarity loss averaged over anchors.
pub fn rms_loss(batch: &PairBatch, params: &MsParams) -> ContrastiveLoss {
    evaluate(batch, params, true)
}

/// Similarity and its gradients with respect to both inputs.
pub fn cosine_backward(u: &[f64], v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu < 1e-12 || nv < 1e-12 {
        return (0.0, vec![0.0; u.len()], vec![0.0; v.len()]);
    }
    let s = cosine_unchecked(u, v);
    let du = u
        .iter()
        .zip(v)
        .map(|(a, b)| b / (nu * nv) - s * a / (nu * nu))
        .collect();
    let dv = u
        .iter()
        .zip(v)
        .map(|(a, b)| a / (nu * nv) - s * b / (nv * nv))
        .collect();
    (s, du, dv)
}

/// Pushes per-pair similarity gradients back onto the representations.
pub fn backprop_similarities(
    reps: &[Vec<f64>],
    batch: &PairBatch,
    d_sim: &PerPair,
) -> Vec<Vec<f64>> {
    let dim = reps.first().map_or(0, Vec::len);
    let mut grads = vec![vec![0.0; dim]; reps.len()];
    for (n, a) in batch.anchors.iter().enumerate() {
        let sides = [
            (&a.positives, &d_sim.positive[n]),
            (&a.negatives, &d_sim.negative[n]),
        ];
        for (pairs, ds) in sides {
            for (p, &g) in pairs.iter().zip(ds) {
                if g == 0.0 {
                    continue;
                }
                let (_, du, dv) = cosine_backward(&reps[a.anchor], &reps[p.other]);
                for (acc, d) in grads[a.anchor].iter_mut().zip(du) {
                    *acc += g * d;
                }
                for (acc, d) in grads[p.other].iter_mut().zip(dv) {
                    *acc += g * d;
                }
            }
        }
    }
    grads
}

/// `L_NER + λ·L_contrastive` with both gradient parts.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub value: f64,
    pub ner: f64,
    pub contrastive: f64,
    pub d_logits: Vec<Vec<f64>>,
    /// Gradient with respect to the entity representations, already scaled by λ.
    pub d_reps: Vec<Vec<f64>>,
}

pub fn combined_loss(
    ner: (f64, Vec<Vec<f64>>),
    contrastive: (f64, Vec<Vec<f64>>),
    lambda: f64,
) -> CombinedLoss {
    let (c, mut d_reps) = contrastive;
    if lambda == 0.0 {
        d_reps
            .iter_mut()
            .for_each(|r| r.iter_mut().for_each(|x| *x = 0.0));
    } else {
        d_reps
            .iter_mut()
            .for_each(|r| r.iter_mut().for_each(|x| *x *= lambda));
    }
    CombinedLoss {
        value: ner.0 + lambda * c,
        ner: ner.0,
        contrastive: c,
        d_logits: ner.1,
        d_reps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> MsParams {
        MsParams::default()
    }

    fn single(sim: f64, kappa: f64, positive: bool) -> PairBatch {
        let pair = Pair {
            other: 1,
            sim,
            kappa,
        };
        let mut a = AnchorPairs {
            anchor: 0,
            ..Default::default()
        };
        if positive {
            a.positives.push(pair);
        } else {
            a.negatives.push(pair);
        }
        PairBatch { anchors: vec![a] }
    }

    /// Independent oracle for the RMS weights: the reciprocal form with the
    /// I and J terms evaluated literally.
    fn oracle_rms_weights(batch: &PairBatch, p: &MsParams) -> PerPair {
        let mut out = PerPair::default();
        for a in &batch.anchors {
            let jp = |q: &Pair| p.alpha * q.sim - p.rho * q.kappa;
            let jn = |q: &Pair| p.beta * q.sim - p.tau * q.kappa;
            out.positive.push(
                a.positives
                    .iter()
                    .map(|q| {
                        let i = p.alpha * (p.gamma - q.sim) + p.rho * q.kappa;
                        let s: f64 = a.positives.iter().map(|k| (-jp(k) + jp(q)).exp()).sum();
                        1.0 / ((-i).exp() + s)
                    })
                    .collect(),
            );
            out.negative.push(
                a.negatives
                    .iter()
                    .map(|q| {
                        let i = p.beta * (p.gamma - q.sim) + p.tau * q.kappa;
                        let s: f64 = a.negatives.iter().map(|k| (jn(k) - jn(q)).exp()).sum();
                        1.0 / (i.exp() + s)
                    })
                    .collect(),
            );
        }
        out
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> PairBatch {
        let anchors = (0..n)
            .map(|i| {
                let np = rng.random_range(0..4);
                let nn = rng.random_range(0..4);
                let mut mk = |count: usize| {
                    (0..count)
                        .map(|j| Pair {
                            other: j,
                            sim: rng.random_range(-1.0..1.0),
                            kappa: rng.random_range(-1.0..1.0),
                        })
                        .collect::<Vec<_>>()
                };
                AnchorPairs {
                    anchor: i,
                    positives: mk(np),
                    negatives: mk(nn),
                }
            })
            .collect();
        PairBatch { anchors }
    }

    fn loss_value(batch: &PairBatch, p: &MsParams, refined: bool) -> f64 {
        if refined {
            rms_loss(batch, p).value
        } else {
            ms_loss(batch, p).value
        }
    }

    #[test]
    fn defaults() {
        let p = params();
        assert_eq!(
            (p.alpha, p.beta, p.gamma, p.epsilon, p.rho, p.tau),
            (4.0, 3.0, 0.5, 0.1, 8.0, 6.0)
        );
        assert_eq!((p.lambda_s, p.lambda_t), (0.2, 1.0));
        p.validate().unwrap();
        assert!(MsParams { alpha: 0.0, ..p }.validate().is_err());
        assert!(MsParams { epsilon: -0.1, ..p }.validate().is_err());
        assert!(MsParams {
            lambda_t: -1.0,
            ..p
        }
        .validate()
        .is_err());
        let parsed: MsParams = serde_json::from_str(r#"{"rho": 2.0}"#).unwrap();
        assert_eq!(parsed, MsParams { rho: 2.0, ..p });
        assert!(serde_json::from_str::<MsParams>(r#"{"rh0": 2.0}"#).is_err());
    }

    #[test]
    fn ner_uniform_and_saturated() {
        let (l, _) = ner_loss(&[vec![0.0; 7], vec![0.0; 7]], &[3, 0]).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-12);
        let (l, _) = ner_loss(&[vec![30.0, 0.0, 0.0]], &[0]).unwrap();
        assert!(l < 1e-9);
        assert!(ner_loss(&[vec![0.0; 3]], &[3]).is_err());
        assert_eq!(ner_loss(&[], &[]).unwrap().0, 0.0);
    }

    #[test]
    fn ner_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let gold = [0, 2, 1, 2];
        let (_, g) = ner_loss(&logits, &gold).unwrap();
        let h = 1e-6;
        for r in 0..4 {
            for c in 0..3 {
                let mut up = logits.clone();
                up[r][c] += h;
                let mut dn = logits.clone();
                dn[r][c] -= h;
                let fd =
                    (ner_loss(&up, &gold).unwrap().0 - ner_loss(&dn, &gold).unwrap().0) / (2.0 * h);
                assert!(
                    (fd - g[r][c]).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "{fd} vs {}",
                    g[r][c]
                );
            }
        }
    }

    #[test]
    fn mining_example() {
        // S_01 = 0.6, S_02 = 0.7, S_12 chosen freely.
        let sims = vec![
            vec![1.0, 0.6, 0.7],
            vec![0.6, 1.0, 0.2],
            vec![0.7, 0.2, 1.0],
        ];
        let b = mine_from_similarities(&sims, &["A", "A", "B"], 0.1).unwrap();
        let p0: Vec<usize> = b.anchors[0].positives.iter().map(|p| p.other).collect();
        let n0: Vec<usize> = b.anchors[0].negatives.iter().map(|p| p.other).collect();
        assert_eq!((p0, n0), (vec![1], vec![2]));
    }

    #[test]
    fn single_class_keeps_all_positives() {
        let sims = vec![
            vec![1.0, 0.9, 0.1],
            vec![0.9, 1.0, 0.3],
            vec![0.1, 0.3, 1.0],
        ];
        let b = mine_from_similarities(&sims, &[1, 1, 1], 0.1).unwrap();
        for a in &b.anchors {
            assert!(a.negatives.is_empty());
            assert_eq!(a.positives.len(), 2);
        }
    }

    #[test]
    fn separated_classes_with_zero_margin_mine_nothing() {
        let sims = vec![
            vec![1.0, 0.9, 0.1, 0.0],
            vec![0.9, 1.0, 0.2, 0.1],
            vec![0.1, 0.2, 1.0, 0.8],
            vec![0.0, 0.1, 0.8, 1.0],
        ];
        let b = mine_from_similarities(&sims, &[0, 0, 1, 1], 0.0).unwrap();
        assert_eq!(b.n_pairs(), 0);
    }

    #[test]
    fn weight_examples() {
        let p = params();
        assert!((ms_weights(&single(0.5, 0.0, true), &p).positive[0][0] - 0.5).abs() < 1e-15);
        assert!((ms_weights(&single(0.5, 0.0, false), &p).negative[0][0] - 0.5).abs() < 1e-15);
        assert!((rms_weights(&single(0.5, 0.0, true), &p).positive[0][0] - 0.5).abs() < 1e-15);

        let a = AnchorPairs {
            anchor: 0,
            positives: [0.2, 0.5, 0.8]
                .iter()
                .enumerate()
                .map(|(j, &s)| Pair {
                    other: j + 1,
                    sim: s,
                    kappa: 0.0,
                })
                .collect(),
            negatives: vec![],
        };
        let w = ms_weights(&PairBatch { anchors: vec![a] }, &p);
        let e: Vec<f64> = [0.2f64, 0.5, 0.8]
            .iter()
            .map(|s| (-4.0 * (s - 0.5)).exp())
            .collect();
        let denom = 1.0 + e.iter().sum::<f64>();
        for (k, ek) in e.iter().enumerate() {
            assert!((w.positive[0][k] - ek / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_closed_forms() {
        let p = params();
        assert_eq!(ms_loss(&PairBatch::default(), &p).value, 0.0);
        let empty = PairBatch {
            anchors: vec![AnchorPairs::default(); 3],
        };
        assert_eq!(ms_loss(&empty, &p).value, 0.0);
        assert!((ms_loss(&single(0.5, 0.0, true), &p).value - 0.17328679513998632).abs() < 1e-12);
        // (1/4) ln(1 + e^8)
        assert!((rms_loss(&single(0.5, 1.0, true), &p).value - 2.000083851593224).abs() < 1e-12);
    }

    #[test]
    fn rms_weights_match_reciprocal_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = params();
        for _ in 0..50 {
            let b = random_batch(&mut rng, 4);
            let fast = rms_weights(&b, &p);
            let slow = oracle_rms_weights(&b, &p);
            for (x, y) in fast
                .positive
                .iter()
                .flatten()
                .zip(slow.positive.iter().flatten())
            {
                assert!((x - y).abs() < 1e-12 * y.abs().max(1.0));
            }
            for (x, y) in fast
                .negative
                .iter()
                .flatten()
                .zip(slow.negative.iter().flatten())
            {
                assert!((x - y).abs() < 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn kappa_sweep_moves_weights() {
        let p = params();
        let sweep = [0.0, 0.25, 0.5, 0.75, 1.0];
        let wp: Vec<f64> = sweep
            .iter()
            .map(|&k| rms_weights(&single(0.3, k, true), &p).positive[0][0])
            .collect();
        let wn: Vec<f64> = sweep
            .iter()
            .map(|&k| rms_weights(&single(0.3, k, false), &p).negative[0][0])
            .collect();
        assert!(wp.windows(2).all(|w| w[1] > w[0]), "{wp:?}");
        assert!(wn.windows(2).all(|w| w[1] < w[0]), "{wn:?}");
    }

    #[test]
    fn no_overflow_at_extremes() {
        let p = MsParams {
            rho: 500.0,
            tau: 500.0,
            ..params()
        };
        for positive in [true, false] {
            for k in [-1.0, 1.0] {
                let l = rms_loss(&single(-1.0, k, positive), &p);
                assert!(l.value.is_finite());
                assert!(l
                    .d_sim
                    .positive
                    .iter()
                    .chain(&l.d_sim.negative)
                    .flatten()
                    .all(|x| x.is_finite()));
            }
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = params();
        let h = 1e-6;
        for refined in [false, true] {
            for _ in 0..20 {
                let b = random_batch(&mut rng, 3);
                let l = if refined {
                    rms_loss(&b, &p)
                } else {
                    ms_loss(&b, &p)
                };
                for (n, a) in b.anchors.iter().enumerate() {
                    for side in 0..2 {
                        let len = if side == 0 {
                            a.positives.len()
                        } else {
                            a.negatives.len()
                        };
                        for k in 0..len {
                            for field in 0..2 {
                                let bump = |d: f64| {
                                    let mut c = b.clone();
                                    let pair = if side == 0 {
                                        &mut c.anchors[n].positives[k]
                                    } else {
                                        &mut c.anchors[n].negatives[k]
                                    };
                                    if field == 0 {
                                        pair.sim += d
                                    } else {
                                        pair.kappa += d
                                    }
                                    loss_value(&c, &p, refined)
                                };
                                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                                let grads = if field == 0 { &l.d_sim } else { &l.d_kappa };
                                let an = if side == 0 {
                                    grads.positive[n][k]
                                } else {
                                    grads.negative[n][k]
                                };
                                assert!(
                                    (fd - an).abs() <= 1e-5 * an.abs().max(1e-4),
                                    "{fd} vs {an}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn cosine_backward_matches_finite_differences() {
        let u = vec![0.3, -1.2, 0.7];
        let v = vec![1.1, 0.4, -0.2];
        let (_, du, dv) = cosine_backward(&u, &v);
        let h = 1e-6;
        for k in 0..3 {
            let mut a = u.clone();
            a[k] += h;
            let mut b = u.clone();
            b[k] -= h;
            let fd = (cosine_unchecked(&a, &v) - cosine_unchecked(&b, &v)) / (2.0 * h);
            assert!((fd - du[k]).abs() < 1e-8);
            let mut a = v.clone();
            a[k] += h;
            let mut b = v.clone();
            b[k] -= h;
            let fd = (cosine_unchecked(&u, &a) - cosine_unchecked(&u, &b)) / (2.0 * h);
            assert!((fd - dv[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn representation_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = params();
        let labels = [0, 0, 1, 1, 2];
        let reps: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let kappa = |i: usize, j: usize| ((i * 7 + j * 7) % 5) as f64 / 5.0 - 0.4;
        let total = |r: &[Vec<f64>]| {
            // Mining is held fixed at the unperturbed representations.
            let mut b = mine_pairs(&reps, &labels, &p).unwrap();
            let s = similarity_matrix(r).unwrap();
            for a in &mut b.anchors {
                for q in a.positives.iter_mut().chain(a.negatives.iter_mut()) {
                    q.sim = s[a.anchor][q.other];
                }
            }
            b.set_kappa(kappa);
            rms_loss(&b, &p).value
        };
        let mut b = mine_pairs(&reps, &labels, &p).unwrap();
        b.set_kappa(kappa);
        let l = rms_loss(&b, &p);
        let g = backprop_similarities(&reps, &b, &l.d_sim);
        let h = 1e-6;
        for i in 0..5 {
            for k in 0..4 {
                let mut up = reps.clone();
                up[i][k] += h;
                let mut dn = reps.clone();
                dn[i][k] -= h;
                let fd = (total(&up) - total(&dn)) / (2.0 * h);
                assert!(
                    (fd - g[i][k]).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "{fd} vs {}",
                    g[i][k]
                );
            }
        }
    }

    #[test]
    fn combined_examples() {
        let c = combined_loss((0.3, vec![vec![0.1]]), (0.2, vec![vec![1.0, 2.0]]), 1.0);
        assert!((c.value - 0.5).abs() < 1e-15);
        let c = combined_loss((0.3, vec![vec![0.1]]), (0.2, vec![vec![1.0, 2.0]]), 0.0);
        assert_eq!(c.value, 0.3);
        assert_eq!(c.d_reps, vec![vec![0.0, 0.0]]);
        assert_eq!(c.d_logits, vec![vec![0.1]]);
    }

    fn brute_force(sims: &[Vec<f64>], labels: &[u8], eps: f64) -> Vec<(Vec<usize>, Vec<usize>)> {
        let n = labels.len();
        (0..n)
            .map(|i| {
                let max_neg = (0..n)
                    .filter(|&k| labels[k] != labels[i])
                    .map(|k| sims[i][k])
                    .reduce(f64::max);
                let min_pos = (0..n)
                    .filter(|&k| labels[k] == labels[i] && k != i)
                    .map(|k| sims[i][k])
                    .reduce(f64::min);
                let p = (0..n)
                    .filter(|&j| labels[j] == labels[i] && j != i)
                    .filter(|&j| max_neg.is_none_or(|m| sims[i][j] < m + eps))
                    .collect();
                let q = (0..n)
                    .filter(|&j| labels[j] != labels[i])
                    .filter(|&j| min_pos.is_none_or(|m| sims[i][j] > m - eps))
                    .collect();
                (p, q)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn mining_matches_brute_force(
            reps in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..20),
            seed: u64,
            eps in 0.0f64..0.3,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<u8> = reps.iter().map(|_| rng.random_range(0..3)).collect();
            let p = MsParams { epsilon: eps, ..params() };
            let b = mine_pairs(&reps, &labels, &p).unwrap();
            let sims = similarity_matrix(&reps).unwrap();
            let oracle = brute_force(&sims, &labels, eps);
            for (a, (pos, neg)) in b.anchors.iter().zip(oracle) {
                let got_p: Vec<usize> = a.positives.iter().map(|q| q.other).collect();
                let got_n: Vec<usize> = a.negatives.iter().map(|q| q.other).collect();
                prop_assert_eq!(got_p, pos);
                prop_assert_eq!(got_n, neg);
            }
        }

        #[test]
        fn gradient_weight_identity(seed: u64, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_batch(&mut rng, n);
            let p = params();
            for l in [ms_loss(&b, &p), rms_loss(&b, &p)] {
                for (g, w) in l.d_sim.positive.iter().flatten().zip(l.weights.positive.iter().flatten()) {
                    prop_assert!((g + w / n as f64).abs() < 1e-12);
                }
                for (g, w) in l.d_sim.negative.iter().flatten().zip(l.weights.negative.iter().flatten()) {
                    prop_assert!((g - w / n as f64).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn rms_reduces_to_ms(seed: u64, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_batch(&mut rng, n);
            let p = MsParams { rho: 0.0, tau: 0.0, ..params() };
            prop_assert!((rms_loss(&b, &p).value - ms_loss(&b, &p).value).abs() < 1e-12);
        }

        #[test]
        fn losses_non_negative_and_kappa_monotone(seed: u64, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_batch(&mut rng, n);
            let p = params();
            let l = rms_loss(&b, &p);
            prop_assert!(l.value >= 0.0);
            prop_assert!(ms_loss(&b, &p).value >= 0.0);
            prop_assert!(l.d_kappa.positive.iter().flatten().all(|g| *g >= 0.0));
            prop_assert!(l.d_kappa.negative.iter().flatten().all(|g| *g <= 0.0));
        }
    }
}
