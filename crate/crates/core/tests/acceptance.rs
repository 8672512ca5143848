//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctner::corpus::{downsample_fewshot, gen_synthetic, Document, SynthConfig};
use ctner::embedder::{compress, PadState, Slot};
use ctner::losses::{
    mine_pairs, ms_loss, rms_loss, similarity_matrix, AnchorPairs, MsParams, Pair, PairBatch,
};
use ctner::model::{tag_inventory, ModelConfig, OptimConfig, TaggerModel, Vocab};
use ctner::pipeline::{
    batch_objective, build_kappa, run_experiment, run_single, score_spans, Contrast,
    ExperimentData, Span, TrainConfig, Variant,
};
use ctner::similarity::KappaCache;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_batch(rng: &mut ChaCha8Rng) -> PairBatch {
    let n = rng.random_range(1..=12);
    let anchors = (0..n)
        .map(|i| {
            let np = rng.random_range(0..n);
            let nn = rng.random_range(0..n);
            let mut mk = |count: usize| {
                (0..count)
                    .map(|j| Pair {
                        other: j,
                        sim: rng.random_range(-1.0..=1.0),
                        kappa: rng.random_range(-1.0..=1.0),
                    })
                    .collect::<Vec<_>>()
            };
            let positives = mk(np);
            let negatives = mk(nn);
            AnchorPairs {
                anchor: i,
                positives,
                negatives,
            }
        })
        .collect();
    PairBatch { anchors }
}

/// Soft weight of pair `q` among `pairs`, written as the reciprocal of a sum
/// of exponentials of logit differences.
fn oracle_weight(q: &Pair, pairs: &[Pair], logit: impl Fn(&Pair) -> f64) -> f64 {
    let own = logit(q);
    let denom = (-own).exp() + pairs.iter().map(|k| (logit(k) - own).exp()).sum::<f64>();
    1.0 / denom
}

fn c1_gradient_weight_identity() -> Result<String, String> {
    let start = Instant::now();
    let p = MsParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let b = random_batch(&mut rng);
        let n_e = b.anchors.len() as f64;
        for refined in [true, false] {
            let l = if refined {
                rms_loss(&b, &p)
            } else {
                ms_loss(&b, &p)
            };
            let (rho, tau) = if refined { (p.rho, p.tau) } else { (0.0, 0.0) };
            for (n, a) in b.anchors.iter().enumerate() {
                let lp = |q: &Pair| -p.alpha * (q.sim - p.gamma) + rho * q.kappa;
                let ln = |q: &Pair| p.beta * (q.sim - p.gamma) - tau * q.kappa;
                for (q, g) in a.positives.iter().zip(&l.d_sim.positive[n]) {
                    let w = oracle_weight(q, &a.positives, lp);
                    worst = worst.max((g.abs() * n_e - w).abs());
                    ensure(*g <= 0.0, || {
                        "positive-pair gradient must be non-positive".into()
                    })?;
                }
                for (q, g) in a.negatives.iter().zip(&l.d_sim.negative[n]) {
                    let w = oracle_weight(q, &a.negatives, ln);
                    worst = worst.max((g.abs() * n_e - w).abs());
                    ensure(*g >= 0.0, || {
                        "negative-pair gradient must be non-negative".into()
                    })?;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-10, || format!("max deviation {worst:e}"))?;
    ensure(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("max deviation {worst:.1e} in {secs:.3}s"))
}

fn c2_rms_reduces_to_ms() -> Result<String, String> {
    let p = MsParams {
        rho: 0.0,
        tau: 0.0,
        ..MsParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let b = random_batch(&mut rng);
        worst = worst.max((rms_loss(&b, &p).value - ms_loss(&b, &p).value).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e} over 1000 batches"))
}

fn c3_mining_oracle() -> Result<String, String> {
    let p = MsParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pairs = 0;
    for case in 0..500 {
        let n = rng.random_range(1..=20);
        let dim = rng.random_range(2..=6);
        let reps: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let classes = rng.random_range(1..=4);
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let got = mine_pairs(&reps, &labels, &p).map_err(|e| e.to_string())?;
        let sims = similarity_matrix(&reps).map_err(|e| e.to_string())?;
        for i in 0..n {
            let neg_sims: Vec<f64> = (0..n)
                .filter(|&k| labels[k] != labels[i])
                .map(|k| sims[i][k])
                .collect();
            let pos_sims: Vec<f64> = (0..n)
                .filter(|&k| labels[k] == labels[i] && k != i)
                .map(|k| sims[i][k])
                .collect();
            let want_p: Vec<usize> = (0..n)
                .filter(|&j| labels[j] == labels[i] && j != i)
                .filter(|&j| {
                    neg_sims.is_empty()
                        || sims[i][j]
                            < neg_sims.iter().cloned().fold(f64::MIN, f64::max) + p.epsilon
                })
                .collect();
            let want_n: Vec<usize> = (0..n)
                .filter(|&j| labels[j] != labels[i])
                .filter(|&j| {
                    pos_sims.is_empty()
                        || sims[i][j]
                            > pos_sims.iter().cloned().fold(f64::MAX, f64::min) - p.epsilon
                })
                .collect();
            let a = &got.anchors[i];
            let got_p: Vec<usize> = a.positives.iter().map(|q| q.other).collect();
            let got_n: Vec<usize> = a.negatives.iter().map(|q| q.other).collect();
            ensure(got_p == want_p && got_n == want_n, || {
                format!("case {case}, anchor {i}: positives {got_p:?} vs {want_p:?}, negatives {got_n:?} vs {want_n:?}")
            })?;
            pairs += got_p.len() + got_n.len();
        }
    }
    Ok(format!("500 instances, {pairs} mined pairs, exact match"))
}

fn c4_kappa_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut empty_cases = 0;
    for case in 0..500 {
        let dim = rng.random_range(1..=32);
        let set = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            let n = rng.random_range(0..=10);
            (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let a = set(&mut rng);
        let b = set(&mut rng);
        let cache = KappaCache::new(BTreeMap::from([
            ("a".to_string(), a.clone()),
            ("b".to_string(), b.clone()),
        ]))
        .map_err(|e| e.to_string())?;
        let k = cache.kappa("a", "b");
        if a.is_empty() || b.is_empty() {
            empty_cases += 1;
            ensure(k == 0.0, || format!("case {case}: empty set gave {k}"))?;
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for u in &a {
            for v in &b {
                let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
                let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                best = best.max(dot / (nu * nv));
            }
        }
        worst = worst.max((k - best).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!(
        "max deviation {worst:.1e}, {empty_cases} empty-set cases exactly 0"
    ))
}

fn c5_full_model_finite_differences() -> Result<String, String> {
    let ms = MsParams::default();
    let train_cfg = TrainConfig {
        aux_dim: 16,
        ..TrainConfig::default()
    };
    let mut checked = 0;
    let mut pairs = 0;
    let (mut worst_abs, mut worst_rel): (f64, f64) = (0.0, 0.0);
    for fixture in 0..5u64 {
        let synth = SynthConfig {
            source_train_docs: 4,
            source_valid_docs: 1,
            target_train_docs: 1,
            target_valid_docs: 1,
            target_test_docs: 1,
            ..SynthConfig::default()
        };
        let corpora = gen_synthetic(&synth, 100 + fixture).map_err(|e| e.to_string())?;
        let kappa = build_kappa(&corpora.source, &train_cfg).map_err(|e| e.to_string())?;
        let docs: Vec<Document> = corpora.source.documents()[..3].to_vec();
        let types: Vec<String> = corpora.source.entity_types().into_iter().collect();
        let mcfg = ModelConfig {
            embed_dim: 6,
            hidden_dim: 10,
            window: 2,
        };
        let mut model = TaggerModel::new(
            mcfg,
            Vocab::from_documents(&docs),
            tag_inventory(types.iter().map(String::as_str)),
            fixture,
        )
        .map_err(|e| e.to_string())?;
        let refs: Vec<&Document> = docs.iter().collect();
        let objective = |m: &TaggerModel| {
            batch_objective(m, &refs, Contrast::Grouping(&kappa), ms.lambda_s, &ms).unwrap()
        };
        let base = objective(&model);
        pairs += base.n_pairs;
        let mut rng = ChaCha8Rng::seed_from_u64(50 + fixture);
        let h = 1e-4;
        for b in 0..5 {
            let len = base.grads.blocks()[b].1.len();
            for _ in 0..10 {
                let i = rng.random_range(0..len);
                let analytic = base.grads.blocks()[b].1[i];
                let orig = model.params.blocks_mut()[b].1[i];
                model.params.blocks_mut()[b].1[i] = orig + h;
                let up = objective(&model).loss;
                model.params.blocks_mut()[b].1[i] = orig - h;
                let down = objective(&model).loss;
                model.params.blocks_mut()[b].1[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let err = (numeric - analytic).abs();
                let rel = err / analytic.abs().max(numeric.abs());
                let name = base.grads.blocks()[b].0;
                ensure(err <= 1e-7 || rel <= 1e-3, || {
                    format!("fixture {fixture}, {name}[{i}]: analytic {analytic:e}, numeric {numeric:e}")
                })?;
                worst_abs = worst_abs.max(err);
                if analytic.abs() > 1e-6 {
                    worst_rel = worst_rel.max(rel);
                }
                checked += 1;
            }
        }
    }
    ensure(pairs > 0, || "no contrastive pairs were mined".into())?;
    Ok(format!("{checked} parameters, {pairs} mined pairs, max error {worst_abs:.1e} absolute, {worst_rel:.1e} relative on gradients above 1e-6"))
}

fn c6_compression_and_padding() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(1..=40);
        let x: Vec<f64> = (0..5 * d).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..5 * d).map(|_| rng.random_range(-10.0..10.0)).collect();
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let lhs = compress(&mix, 5).map_err(|e| e.to_string())?;
        let cx = compress(&x, 5).map_err(|e| e.to_string())?;
        let cy = compress(&y, 5).map_err(|e| e.to_string())?;
        for ((l, u), v) in lhs.iter().zip(&cx).zip(&cy) {
            worst = worst.max((l - (a * u + b * v)).abs());
        }
    }
    ensure(worst <= 1e-12, || {
        format!("compress linearity deviation {worst:e}")
    })?;

    let dim = 8;
    let observed: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..3.0)).collect())
        .collect();
    let pad = PadState::from_vectors(dim, 17, observed.iter().map(Vec::as_slice));
    let draws = 10_000;
    let mut sum = vec![0.0; dim];
    for n in 0..draws {
        let s = pad.sample_for(&format!("E{n}"), Slot::ALL[n % 5]);
        for (acc, v) in sum.iter_mut().zip(s) {
            *acc += v;
        }
    }
    let var = pad.variance();
    let mut worst_z: f64 = 0.0;
    for c in 0..dim {
        let mean = sum[c] / draws as f64;
        let tol = 5.0 * var[c].sqrt() / (draws as f64).sqrt();
        let z = (mean - pad.mean()[c]).abs() / tol;
        worst_z = worst_z.max(z);
        ensure(z <= 1.0, || {
            format!("component {c}: sample mean {mean} vs {}", pad.mean()[c])
        })?;
    }
    let empty = PadState::new(dim, 1).sample_for("E1", Slot::Theme);
    ensure(empty.iter().all(|&v| v == 0.0), || {
        "empty state must pad with zeros".into()
    })?;
    Ok(format!(
        "linearity deviation {worst:.1e}; pad means within {:.0}% of the 5σ/100 band",
        worst_z * 100.0
    ))
}

fn small_transfer_setup() -> (ExperimentData, TrainConfig) {
    let synth = SynthConfig {
        source_train_docs: 20,
        source_valid_docs: 8,
        target_train_docs: 20,
        target_valid_docs: 20,
        target_test_docs: 10,
        ..SynthConfig::default()
    };
    let cfg = TrainConfig {
        max_epochs: 6,
        patience: 3,
        fewshot_lo: 12,
        fewshot_hi: 16,
        model: ModelConfig {
            embed_dim: 16,
            hidden_dim: 24,
            window: 2,
        },
        optim: OptimConfig {
            lr: 0.01,
            ..OptimConfig::default()
        },
        aux_dim: 32,
        ..TrainConfig::default()
    };
    (gen_synthetic(&synth, 21).unwrap().into(), cfg)
}

fn c7_direct_transfer_collapse() -> Result<String, String> {
    let (data, mut cfg) = small_transfer_setup();
    cfg.ms.lambda_s = 0.0;
    cfg.ms.lambda_t = 0.0;
    let kappa = build_kappa(&data.source_train, &cfg).map_err(|e| e.to_string())?;
    let mut identical = 0;
    for seed in [1, 2] {
        let full = run_single(&data, Some(&kappa), Variant::EgEd, &cfg, seed)
            .map_err(|e| e.to_string())?;
        let plain = run_single(&data, None, Variant::DirectTransfer, &cfg, seed)
            .map_err(|e| e.to_string())?;
        ensure(full.report.pseudo_count > 0, || {
            format!("seed {seed}: no pseudo entities, contrastive path not exercised")
        })?;
        let a = full.model.to_json().map_err(|e| e.to_string())?;
        let b = plain.model.to_json().map_err(|e| e.to_string())?;
        ensure(a == b, || format!("seed {seed}: checkpoints differ"))?;
        ensure(full.report.test == plain.report.test, || {
            format!("seed {seed}: metrics differ")
        })?;
        identical += 1;
    }
    Ok(format!("{identical} seeds, checkpoints byte-identical"))
}

fn c8_synthetic_transfer_direction() -> Result<String, String> {
    let start = Instant::now();
    let data: ExperimentData = gen_synthetic(&SynthConfig::default(), 7)
        .map_err(|e| e.to_string())?
        .into();
    let cfg = TrainConfig::default();
    let report = run_experiment(
        &data,
        &[Variant::DirectTransfer, Variant::EgEd],
        &[1, 2, 3],
        &cfg,
        None,
    )
    .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let dt = &report.summary[&Variant::DirectTransfer];
    let eg = &report.summary[&Variant::EgEd];
    let (dt_db, eg_db) = match (dt.db_index, eg.db_index) {
        (Some(a), Some(b)) => (a.mean, b.mean),
        _ => return Err("DB index unavailable".into()),
    };
    let detail = format!(
        "false positives {:.2} vs {:.2}; DB {:.3} vs {:.3}; F1 {:.4} vs {:.4}; {secs:.0}s",
        eg.false_positives.mean, dt.false_positives.mean, eg_db, dt_db, eg.f1.mean, dt.f1.mean
    );
    ensure(eg.false_positives.mean < dt.false_positives.mean, || {
        format!("(a) fails: {detail}")
    })?;
    ensure(eg_db < dt_db, || format!("(b) fails: {detail}"))?;
    ensure(eg.f1.mean >= dt.f1.mean - 0.005, || {
        format!("(c) fails: {detail}")
    })?;
    ensure(secs < 600.0, || format!("too slow: {detail}"))?;
    Ok(detail)
}

fn c9_fewshot_sizes() -> Result<String, String> {
    let pool: Vec<usize> = (0..500).collect();
    let (mut lo, mut hi) = (usize::MAX, 0);
    for seed in 0..1000 {
        let n = downsample_fewshot(&pool, seed, 70, 100)
            .map_err(|e| e.to_string())?
            .len();
        ensure((70..=100).contains(&n), || format!("seed {seed}: size {n}"))?;
        lo = lo.min(n);
        hi = hi.max(n);
    }
    Ok(format!("1000 draws, sizes spanning [{lo}, {hi}]"))
}

fn c10_strict_scorer() -> Result<String, String> {
    fn s(a: usize, b: usize, t: &str) -> Span {
        (a, b, t.to_string())
    }
    // (gold per doc, predictions per doc, hand-counted (type, tp, fp, fn)).
    type Fixture = (
        Vec<Vec<Span>>,
        Vec<Vec<Span>>,
        Vec<(&'static str, usize, usize, usize)>,
    );
    let fixtures: Vec<Fixture> = vec![
        (
            vec![vec![s(0, 1, "A")]],
            vec![vec![s(0, 1, "A")]],
            vec![("A", 1, 0, 0)],
        ),
        (vec![vec![s(0, 1, "A")]], vec![vec![]], vec![("A", 0, 0, 1)]),
        (vec![vec![]], vec![vec![s(2, 3, "A")]], vec![("A", 0, 1, 0)]),
        // Boundary off by one on either side.
        (
            vec![vec![s(1, 3, "A")]],
            vec![vec![s(1, 2, "A"), s(0, 3, "A")]],
            vec![("A", 0, 2, 1)],
        ),
        // Right span, wrong type.
        (
            vec![vec![s(0, 2, "A")]],
            vec![vec![s(0, 2, "B")]],
            vec![("A", 0, 0, 1), ("B", 0, 1, 0)],
        ),
        (
            vec![vec![s(0, 1, "A"), s(3, 5, "A")]],
            vec![vec![s(0, 1, "A"), s(3, 4, "A")]],
            vec![("A", 1, 1, 1)],
        ),
        // Same span in two documents counted separately.
        (
            vec![vec![s(0, 1, "A")], vec![s(0, 1, "A")]],
            vec![vec![s(0, 1, "A")], vec![]],
            vec![("A", 1, 0, 1)],
        ),
        (
            vec![vec![s(0, 1, "A"), s(2, 3, "B"), s(4, 6, "B")]],
            vec![vec![s(0, 1, "A"), s(2, 3, "B"), s(4, 6, "A")]],
            vec![("A", 1, 1, 0), ("B", 1, 0, 1)],
        ),
        // Duplicate predictions count once.
        (
            vec![vec![s(0, 1, "A")]],
            vec![vec![s(0, 1, "A"), s(0, 1, "A")]],
            vec![("A", 1, 0, 0)],
        ),
        (
            vec![vec![s(0, 1, "A"), s(1, 2, "A")], vec![s(5, 7, "B")], vec![]],
            vec![
                vec![s(0, 2, "A")],
                vec![s(5, 7, "B"), s(8, 9, "B")],
                vec![s(0, 1, "C")],
            ],
            vec![("A", 0, 1, 2), ("B", 1, 1, 0), ("C", 0, 1, 0)],
        ),
    ];
    for (n, (gold, pred, want)) in fixtures.iter().enumerate() {
        let r = score_spans(gold, pred).map_err(|e| e.to_string())?;
        ensure(r.per_type.len() == want.len(), || {
            format!("fixture {n}: types {:?}", r.per_type.keys())
        })?;
        for &(ty, tp, fp, fn_) in want {
            let got = r
                .per_type
                .get(ty)
                .ok_or_else(|| format!("fixture {n}: type {ty} missing"))?;
            ensure((got.tp, got.fp, got.fn_) == (tp, fp, fn_), || {
                format!(
                    "fixture {n}, {ty}: got {:?}, want {:?}",
                    (got.tp, got.fp, got.fn_),
                    (tp, fp, fn_)
                )
            })?;
        }
    }
    Ok(format!("{} fixtures, exact counts", fixtures.len()))
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("gradient-weight identity", c1_gradient_weight_identity),
        ("RMS reduces to MS", c2_rms_reduces_to_ms),
        ("mining oracle", c3_mining_oracle),
        ("kappa oracle", c4_kappa_oracle),
        (
            "full-model finite differences",
            c5_full_model_finite_differences,
        ),
        ("compression and padding", c6_compression_and_padding),
        ("direct-transfer collapse", c7_direct_transfer_collapse),
        (
            "synthetic transfer direction",
            c8_synthetic_transfer_direction,
        ),
        ("few-shot sizes", c9_fewshot_sizes),
        ("strict scorer", c10_strict_scorer),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let id = format!("{}", n + 1);
        if filter
            .as_ref()
            .is_some_and(|f| *f != id && !name.contains(f.as_str()))
        {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
