//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! `PASS`/`FAIL` line per check; exits non-zero if any check fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use masr::annotation::io::{
    read_annotations_from, read_vocabulary_from, write_annotations_to, write_vocabulary_to,
    MiningConfig,
};
use masr::annotation::{
    AttributeAnnotation, AttributeVocabulary, CollisionPolicy, Detection, DetectionRecord,
    DetectorSource,
};
use masr::dataset::{Dataset, Sample};
use masr::eval::{attribute_precision, evaluate, topk_accuracy};
use masr::gradcheck::{run_suite, SuiteBounds, TOLERANCE};
use masr::model::{
    arl_cascade, attribute_loss, masr_loss, Architecture, ArlLayer, BetaTerm, LossSettings,
    MasrParams, ModelDims, Objective, RegularizerTable,
};
use masr::numerics::{sigmoid_scalar, DenseMatrix, DenseVector};
use masr::synth::{generate, SynthSpec};
use masr::trainer::{lr_at, TrainConfig, TrainState, Trainer};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;
/// Image id -> (category, released scores).
type Released = BTreeMap<String, (String, Vec<f64>)>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- gradients

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let report = run_suite(2024, 100, SuiteBounds::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = report
        .results
        .iter()
        .map(|r| r.max_error())
        .fold(0.0, f64::max);
    let groups: usize = report.results.iter().map(|r| r.groups.len()).sum();
    ensure(report.passed(), || {
        format!(
            "{} of 100 configurations exceed {TOLERANCE:e}\n{}",
            report.failures(),
            report.render()
        )
    })?;
    ensure(elapsed < Duration::from_secs(60), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "100 configs, {groups} parameter groups, worst relative error {worst:.2e} < {TOLERANCE:e}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

// ------------------------------------------------------------------- mining

struct RandomCorpus {
    sources: Vec<DetectorSource>,
    records: Vec<DetectionRecord>,
}

const SCORE_GRID: [f64; 6] = [0.0, 0.5, 0.8, 0.99, 1.0, f64::NAN];

fn random_corpus(rng: &mut ChaCha8Rng) -> RandomCorpus {
    let n_sources = rng.random_range(1..=3);
    let mut next = 0;
    let sources: Vec<DetectorSource> = (0..n_sources)
        .map(|s| {
            let n = rng.random_range(1..=5);
            let labels: Vec<String> = (0..n)
                .map(|_| {
                    next += 1;
                    format!("label{next}")
                })
                .collect();
            DetectorSource::new(format!("source{s}"), labels)
        })
        .collect();
    let n_categories = rng.random_range(1..=6);
    let mut records = Vec::new();
    let mut image = 0;
    for c in 0..n_categories {
        let size = rng.random_range(1..=45);
        // Per-category presence rates so some counts land on the thresholds.
        let rates: Vec<f64> = (0..next).map(|_| rng.random_range(0.0..1.0)).collect();
        for _ in 0..size {
            image += 1;
            for src in &sources {
                let mut detections = Vec::new();
                for label in &src.labels {
                    let j: usize = label[5..].parse::<usize>().unwrap() - 1;
                    let copies = if rng.random_bool(rates[j]) {
                        rng.random_range(1..=2)
                    } else {
                        0
                    };
                    for _ in 0..copies {
                        let mut score = SCORE_GRID[rng.random_range(0..SCORE_GRID.len())];
                        if score.is_nan() {
                            score = rng.random_range(0.0..=1.0);
                        }
                        detections.push(Detection {
                            label: label.clone(),
                            score,
                        });
                    }
                }
                // Images may lack a record from some source.
                if !detections.is_empty() || rng.random_bool(0.7) {
                    records.push(DetectionRecord {
                        image_id: format!("im{image:05}"),
                        category: Some(format!("cat{c}")),
                        source_id: src.source_id.clone(),
                        detections,
                    });
                }
            }
        }
    }
    RandomCorpus { sources, records }
}

/// Direct enumeration: best score per (image, label), keep `> xi`, then keep
/// labels whose kept-image count in the category is `>= beta`.
fn brute_force(corpus: &RandomCorpus, xi: f64, beta: usize) -> (Vec<String>, Released) {
    let labels: Vec<String> = corpus
        .sources
        .iter()
        .flat_map(|s| s.labels.clone())
        .collect();
    let m = labels.len();
    let mut images = Released::new();
    for r in &corpus.records {
        let entry = images
            .entry(r.image_id.clone())
            .or_insert_with(|| (r.category.clone().unwrap(), vec![0.0; m]));
        for d in &r.detections {
            let j = labels.iter().position(|l| *l == d.label).unwrap();
            if d.score > entry.1[j] {
                entry.1[j] = d.score;
            }
        }
    }
    for (_, scores) in images.values_mut() {
        for s in scores.iter_mut() {
            if *s <= xi {
                *s = 0.0;
            }
        }
    }
    let mut counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (cat, scores) in images.values() {
        let row = counts.entry(cat.clone()).or_insert_with(|| vec![0; m]);
        for j in 0..m {
            if scores[j] > 0.0 {
                row[j] += 1;
            }
        }
    }
    for (cat, scores) in images.values_mut() {
        for j in 0..m {
            if counts[cat.as_str()][j] < beta {
                scores[j] = 0.0;
            }
        }
    }
    (labels, images)
}

fn mining_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut compared = 0usize;
    let mut score_ties = 0usize;
    let mut count_ties = 0usize;
    let mut max_images = 0usize;
    for trial in 0..40 {
        let corpus = random_corpus(&mut rng);
        for xi in [0.0, 0.5, 0.8, 0.99] {
            for beta in [0, 1, 20] {
                let config = MiningConfig {
                    xi,
                    beta,
                    collision_policy: CollisionPolicy::Error,
                    sources: corpus.sources.clone(),
                };
                let (vocab, outcome) = config.run(&corpus.records).map_err(|e| e.to_string())?;
                let (labels, expected) = brute_force(&corpus, xi, beta);
                let got: Vec<String> = vocab.attributes().iter().map(|a| a.label.clone()).collect();
                ensure(got == labels, || {
                    format!("trial {trial}: vocabulary order differs")
                })?;
                let released = outcome.released();
                ensure(released.len() == expected.len(), || {
                    format!("trial {trial}: image count differs")
                })?;
                max_images = max_images.max(released.len());
                for (ann, (id, (cat, scores))) in released.iter().zip(&expected) {
                    ensure(ann.image_id == *id && ann.category == *cat, || {
                        format!("trial {trial}: image order differs at {id}")
                    })?;
                    let same = ann
                        .scores
                        .iter()
                        .zip(scores)
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                    ensure(same, || {
                        format!(
                            "trial {trial} xi={xi} beta={beta} image {id}: {:?} vs {scores:?}",
                            ann.scores.as_slice()
                        )
                    })?;
                }
                // Boundary bookkeeping: raw scores exactly at xi, category counts exactly at beta.
                score_ties += outcome
                    .stages
                    .raw
                    .iter()
                    .flat_map(|a| a.scores.iter())
                    .filter(|&&s| s == xi && xi > 0.0)
                    .count();
                for profile in outcome.profiles.values() {
                    count_ties += profile
                        .count_nonzero
                        .iter()
                        .filter(|&&c| c == beta && beta > 0)
                        .count();
                }
                compared += 1;
            }
        }
    }
    ensure(score_ties > 0 && count_ties > 0, || {
        format!("boundary cases not exercised (score ties {score_ties}, count ties {count_ties})")
    })?;
    ensure(max_images <= 1000, || {
        format!("corpus of {max_images} images")
    })?;
    Ok(format!(
        "{compared} (corpus, xi, beta) runs identical; {score_ties} scores at xi, {count_ties} counts at beta"
    ))
}

// ------------------------------------------------------------------- losses

fn loss_degeneration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_plain = 0.0f64;
    let mut worst_sum = 0.0f64;
    for i in 0..1000 {
        let m = rng.random_range(1..=16);
        let k = rng.random_range(2..=5);
        let d = rng.random_range(1..=8);
        let probs: Vec<f64> = (0..m)
            .map(|_| {
                if rng.random_bool(0.05) {
                    rng.random_range(0.0..1e-8)
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        let targets: Vec<f64> = (0..m)
            .map(|_| f64::from(u8::from(rng.random_bool(0.5))))
            .collect();
        let category = rng.random_range(0..k);
        let plain: f64 = -probs
            .iter()
            .zip(&targets)
            .map(|(&p, &t)| {
                let p = p.clamp(1e-7, 1.0 - 1e-7);
                t * p.ln() + (1.0 - t) * (1.0 - p).ln()
            })
            .sum::<f64>()
            / m as f64;
        let unit = RegularizerTable::uniform(m, k, 1.0);
        for term in [BetaTerm::Positive, BetaTerm::Negative] {
            let settings = LossSettings {
                beta_term: term,
                mean_over_attributes: true,
            };
            let weighted = attribute_loss(&probs, &targets, category, &unit, &settings)
                .map_err(|e| e.to_string())?;
            ensure(weighted >= 0.0, || {
                format!("input {i}: negative attribute loss {weighted}")
            })?;
            worst_plain = worst_plain.max((weighted - plain).abs());
        }

        let dims = ModelDims {
            feature_dim: d,
            attributes: m,
            categories: k,
            cascade_depth: rng.random_range(1..=3),
        };
        let params =
            MasrParams::init(dims, Architecture::Masr, &mut rng).map_err(|e| e.to_string())?;
        let scores: Vec<f64> = (0..m)
            .map(|_| {
                if rng.random_bool(0.4) {
                    0.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        let sample = Sample {
            image_id: String::new(),
            feature: DenseVector::new((0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
                .unwrap(),
            category,
            scores: DenseVector::new(scores).unwrap(),
            targets: DenseVector::new(targets).unwrap(),
        };
        let beta: Vec<f64> = (0..m * k).map(|_| rng.random_range(0.0..4.0)).collect();
        let reg =
            RegularizerTable::from_matrix(DenseMatrix::from_vec(m, k, beta).unwrap()).unwrap();
        let objective = Objective::new(reg, LossSettings::default());
        let l = masr_loss(&sample, &params, &objective).map_err(|e| e.to_string())?;
        ensure(
            l.classification >= 0.0 && l.attribute >= 0.0 && l.total >= 0.0,
            || format!("input {i}: negative loss {l:?}"),
        )?;
        worst_sum = worst_sum.max((l.total - (l.classification + l.attribute)).abs());
    }
    ensure(worst_plain <= 1e-12, || {
        format!("unit-weight loss deviates from plain mean by {worst_plain:e}")
    })?;
    ensure(worst_sum <= 1e-12, || {
        format!("total deviates from the sum by {worst_sum:e}")
    })?;
    Ok(format!(
        "1000 inputs: |unit-weighted - plain mean| <= {worst_plain:.1e}, |total - (cls + att)| <= {worst_sum:.1e}"
    ))
}

// ---------------------------------------------------------------- ARL bound

fn random_layer(m: usize, scale: f64, rng: &mut ChaCha8Rng) -> ArlLayer {
    let mut layer = ArlLayer::zeros(m);
    let mut fill = |v: &mut [f64]| {
        v.iter_mut()
            .for_each(|x| *x = rng.random_range(-scale..scale))
    };
    fill(layer.score_weights.as_mut_slice());
    fill(layer.prediction_weights.as_mut_slice());
    fill(layer.gate_bias.as_mut_slice());
    fill(layer.bias.as_mut_slice());
    layer
}

fn arl_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0usize;
    let mut by_depth = [0usize; 3];
    for draw in 0..10_000 {
        let m = rng.random_range(1..=16);
        let depth = rng.random_range(1..=3);
        let scale = [0.1, 1.0, 10.0, 100.0][rng.random_range(0..4)];
        let layers: Vec<ArlLayer> = (0..depth)
            .map(|_| random_layer(m, scale, &mut rng))
            .collect();
        let a: Vec<f64> = (0..m)
            .map(|_| match rng.random_range(0..4) {
                0 => 0.0,
                1 => rng.random_range(1e-300..1e-6),
                _ => rng.random_range(0.0..=1.0),
            })
            .collect();
        let predictions: Vec<f64> = (0..m).map(|_| rng.random_range(-20.0..20.0)).collect();
        let v = arl_cascade(&a, &predictions, &layers).map_err(|e| e.to_string())?;
        for j in 0..m {
            let ok = if a[j] > 0.0 {
                v[j] >= 0.0 && v[j] < a[j]
            } else {
                v[j] == 0.0
            };
            ensure(ok, || {
                format!("draw {draw} depth {depth}: a={} v={}", a[j], v[j])
            })?;
            checked += 1;
        }
        by_depth[depth - 1] += 1;
    }
    // The gate never reaches one, even for saturating inputs.
    ensure(
        sigmoid_scalar(1e6) < 1.0 && sigmoid_scalar(-1e6) > 0.0,
        || "sigmoid saturates".into(),
    )?;
    Ok(format!(
        "10000 draws (depth 1/2/3: {}/{}/{}), {checked} coordinates within bounds",
        by_depth[0], by_depth[1], by_depth[2]
    ))
}

// --------------------------------------------------------- attribute gain

fn gain_config(architecture: Architecture, seed: u64) -> TrainConfig {
    TrainConfig {
        architecture,
        seed,
        batch_size: 16,
        lr_classifier: 0.1,
        lr_base: 0.01,
        ..TrainConfig::default()
    }
}

fn top1_at_epoch(
    train: &Dataset,
    test: &Dataset,
    config: TrainConfig,
    epoch: usize,
) -> Result<f64, String> {
    let trainer = Trainer::new(config, train).map_err(|e| e.to_string())?;
    let state = trainer.init_state().map_err(|e| e.to_string())?;
    let state = trainer.run_until(state, epoch).map_err(|e| e.to_string())?;
    let report = evaluate(&state.params, test).map_err(|e| e.to_string())?;
    Ok(report.topk[&1])
}

fn attribute_gain() -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec {
        categories: 5,
        attributes: 12,
        feature_dim: 16,
        feature_separation: 0.0,
        ..SynthSpec::default()
    };
    let mut lines = Vec::new();
    let mut wins = 0;
    for seed in [1u64, 2, 3] {
        let corpus = generate(&spec, seed).map_err(|e| e.to_string())?;
        let (train, test) = corpus.datasets().map_err(|e| e.to_string())?;
        let joint = top1_at_epoch(&train, &test, gain_config(Architecture::Masr, seed), 50)?;
        let scene = top1_at_epoch(&train, &test, gain_config(Architecture::Baseline, seed), 50)?;
        let gap = (joint - scene) * 100.0;
        if gap >= 15.0 {
            wins += 1;
        }
        lines.push(format!(
            "seed {seed}: {:.1}% vs {:.1}% (+{gap:.1} pp)",
            joint * 100.0,
            scene * 100.0
        ));
    }
    let elapsed = start.elapsed();
    let detail = lines.join("; ");
    ensure(wins == 3, || {
        format!("{wins}/3 seeds reach +15 pp: {detail}")
    })?;
    ensure(elapsed < Duration::from_secs(120), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "top@1 at epoch 50, joint vs scene-only: {detail}; {:.1}s",
        elapsed.as_secs_f64()
    ))
}

// ------------------------------------------------------------------ protocol

fn protocol_fidelity() -> Outcome {
    let defaults = TrainConfig::default();
    let expected = [
        (0, 0.01, 0.001),
        (19, 0.01, 0.001),
        (20, 0.001, 0.0001),
        (40, 0.0001, 0.00001),
        (99, 0.000001, 0.0000001),
    ];
    for (epoch, cls, base) in expected {
        let lr = lr_at(epoch, &defaults);
        ensure(
            (lr.classifier - cls).abs() <= 1e-15 * cls && (lr.base - base).abs() <= 1e-15 * base,
            || format!("lr_at({epoch}) = {lr:?}"),
        )?;
    }

    let spec = SynthSpec {
        train_per_category: 20,
        test_per_category: 2,
        ..SynthSpec::default()
    };
    let (train, _) = generate(&spec, 9)
        .and_then(|c| c.datasets())
        .map_err(|e| e.to_string())?;
    let config = TrainConfig {
        epochs_total: 60,
        batch_size: 32,
        lr_classifier: 0.05,
        seed: 4,
        ..defaults
    };
    let trainer = Trainer::new(config.clone(), &train).map_err(|e| e.to_string())?;
    let straight = trainer
        .run_from(trainer.init_state().unwrap())
        .map_err(|e| e.to_string())?;
    for h in &straight.history {
        if h.epoch < 15 {
            ensure(h.total == h.classification, || {
                format!("epoch {}: attribute loss weighted in warm-up", h.epoch)
            })?;
        } else {
            ensure(
                h.attribute > 0.0 && h.total == h.classification + h.attribute,
                || format!("epoch {}: attribute loss inactive", h.epoch),
            )?;
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("state.bin");
    let partial = trainer
        .run_until(trainer.init_state().unwrap(), 40)
        .map_err(|e| e.to_string())?;
    partial.save(&path).map_err(|e| e.to_string())?;
    let resumed = trainer
        .run_from(TrainState::load(&path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let bits = |p: &MasrParams| p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(bits(&straight.params) == bits(&resumed.params), || {
        "resumed parameters differ".into()
    })?;
    ensure(straight.history == resumed.history, || {
        "resumed loss history differs".into()
    })?;
    Ok(format!(
        "phase switch at epoch 15 over {} epochs; lr schedule matches; restore at epoch 40 replays {} parameters bit-exactly",
        straight.history.len(),
        straight.params.num_params()
    ))
}

// ------------------------------------------------------------------ metrics

fn sort_oracle_hit(logits: &[f64], truth: usize, k: usize) -> bool {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
    order[..k].contains(&truth)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for round in 0..50 {
        let k_classes = rng.random_range(2..=8);
        let coarse = rng.random_bool(0.5);
        let logits: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                (0..k_classes)
                    .map(|_| {
                        if coarse {
                            rng.random_range(-2..=2) as f64
                        } else {
                            rng.random_range(-5.0..5.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let truths: Vec<usize> = (0..200).map(|_| rng.random_range(0..k_classes)).collect();
        for k in 1..=k_classes {
            let got = topk_accuracy(&logits, &truths, k).map_err(|e| e.to_string())?;
            let hits = logits
                .iter()
                .zip(&truths)
                .filter(|(l, &t)| sort_oracle_hit(l, t, k))
                .count();
            ensure(got == hits as f64 / 200.0, || {
                format!("round {round} k={k}: {got} vs oracle {hits}/200")
            })?;
        }

        let m = rng.random_range(1..=10);
        let probs: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let truth_attr: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                (0..m)
                    .map(|_| f64::from(u8::from(rng.random_bool(0.3))))
                    .collect()
            })
            .collect();
        let got = attribute_precision(&probs, &truth_attr).map_err(|e| e.to_string())?;
        for j in 0..m {
            let mut confusion = [[0usize; 2]; 2];
            for (p, t) in probs.iter().zip(&truth_attr) {
                confusion[usize::from(p[j] >= 0.5)][t[j] as usize] += 1;
            }
            let (tp, fp) = (confusion[1][1], confusion[1][0]);
            let want = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
            ensure(got[j] == want, || {
                format!("round {round} attribute {j}: {:?} vs {want:?}", got[j])
            })?;
        }
    }

    let spec = SynthSpec {
        train_per_category: 10,
        test_per_category: 10,
        ..SynthSpec::default()
    };
    let (_, test) = generate(&spec, 2)
        .and_then(|c| c.datasets())
        .map_err(|e| e.to_string())?;
    for seed in 0..20 {
        let params = MasrParams::init(
            test.dims(2),
            Architecture::Masr,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap();
        let report = evaluate(&params, &test).map_err(|e| e.to_string())?;
        let (t1, t2, t5) = (report.topk[&1], report.topk[&2], report.topk[&5]);
        ensure(t1 <= t2 && t2 <= t5, || {
            format!("report {seed}: {t1} {t2} {t5}")
        })?;
        ensure(
            report
                .per_attribute
                .iter()
                .all(|(_, p)| p.is_none_or(|p| (0.0..=1.0).contains(&p))),
            || format!("report {seed}: precision outside [0, 1]"),
        )?;
    }
    Ok("top@k equals the sort oracle on 50x200 samples; precision equals the confusion recount; 20 reports monotone".into())
}

// --------------------------------------------------------------- round trips

fn random_annotations(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<AttributeAnnotation> {
    (0..n)
        .map(|i| AttributeAnnotation {
            image_id: format!("img{i:04}"),
            category: format!("cat{}", rng.random_range(0..4)),
            scores: DenseVector::new(
                (0..m)
                    .map(|_| match rng.random_range(0..3) {
                        0 => 0.0,
                        1 => rng.random_range(0.0..=1.0),
                        _ => f64::from_bits(rng.random_range(0.5f64.to_bits()..=1.0f64.to_bits())),
                    })
                    .collect(),
            )
            .unwrap(),
        })
        .collect()
}

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = 9;
    let vocab = AttributeVocabulary::from_sources(
        &[
            DetectorSource::new("stuff", ["sky", "sea", "grass", "wall"]),
            DetectorSource::new("things", ["person", "chair", "tv", "car", "dog"]),
        ],
        CollisionPolicy::Error,
    )
    .map_err(|e| e.to_string())?;
    let mut values = 0usize;
    for _ in 0..20 {
        let corpus = random_annotations(&mut rng, 50, m);
        let mut buf = Vec::new();
        write_annotations_to(&mut buf, &corpus, m).map_err(|e| e.to_string())?;
        let back = read_annotations_from(buf.as_slice(), m, "mem").map_err(|e| e.to_string())?;
        ensure(back.len() == corpus.len(), || {
            "annotation count changed".into()
        })?;
        for (a, b) in corpus.iter().zip(&back) {
            let same = a.image_id == b.image_id
                && a.category == b.category
                && a.scores
                    .iter()
                    .zip(b.scores.iter())
                    .all(|(x, y)| x.to_bits() == y.to_bits());
            ensure(same, || format!("annotation {} changed", a.image_id))?;
            values += m;
        }
    }
    let mut vbuf = Vec::new();
    write_vocabulary_to(&mut vbuf, &vocab).map_err(|e| e.to_string())?;
    ensure(
        read_vocabulary_from(vbuf.as_slice(), "mem").map_err(|e| e.to_string())? == vocab,
        || "vocabulary changed".into(),
    )?;

    for arch in [Architecture::Masr, Architecture::Baseline] {
        let dims = ModelDims {
            feature_dim: 7,
            attributes: m,
            categories: 4,
            cascade_depth: 3,
        };
        let params = MasrParams::init(dims, arch, &mut rng).unwrap();
        let mut buf = Vec::new();
        params.write_to(&mut buf).map_err(|e| e.to_string())?;
        let back = MasrParams::read_from(&mut buf.as_slice()).map_err(|e| e.to_string())?;
        ensure(back == params, || "parameter checkpoint changed".into())?;
        let state = TrainState {
            epoch: 0,
            params,
            rng_seed: 3,
            history: Vec::new(),
        };
        let mut sbuf = Vec::new();
        state.write_to(&mut sbuf).map_err(|e| e.to_string())?;
        ensure(
            TrainState::read_from(&mut sbuf.as_slice()).map_err(|e| e.to_string())? == state,
            || "state checkpoint changed".into(),
        )?;
        let err = MasrParams::read_from(&mut &buf[..buf.len() - 1]).err();
        ensure(
            err.as_ref()
                .is_some_and(|e| e.to_string().contains("truncated")),
            || format!("truncated checkpoint: {err:?}"),
        )?;
    }

    let malformed: [(&str, &str); 5] = [
        ("img1\tcat\t0:0.9\t0:0.95\n", "line 1"),
        ("img1\tcat\t0:0.9\nimg2\tcat\t99:0.9\n", "line 2"),
        ("img1\tcat\t1:1.5\n", "line 1"),
        ("img1\tcat\tx:0.9\n", "line 1"),
        ("img1\n", "line 1"),
    ];
    for (text, where_) in malformed {
        let err = read_annotations_from(text.as_bytes(), m, "bad.tsv").err();
        let msg = err.map(|e| e.to_string()).unwrap_or_default();
        let line = where_.trim_start_matches("line ");
        ensure(msg.contains(&format!("bad.tsv:{line}")), || {
            format!("malformed {text:?} gave {msg:?}")
        })?;
    }
    Ok(format!("{values} scores and 4 checkpoints bit-exact; 5 malformed annotation files and truncated checkpoints rejected"))
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 8] = [
        ("gradient suite", gradient_suite),
        ("mining oracle", mining_oracle),
        ("loss degeneration", loss_degeneration),
        ("re-weighting bound", arl_bound),
        ("attribute gain", attribute_gain),
        ("protocol fidelity", protocol_fidelity),
        ("metric oracles", metric_oracles),
        ("round trips", round_trips),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        match check() {
            Ok(detail) => println!("[{}] {name:<20} PASS  {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[{}] {name:<20} FAIL  {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} acceptance checks passed",
        checks.len() - failed,
        checks.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
