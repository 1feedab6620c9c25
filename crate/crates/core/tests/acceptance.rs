//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured values, then asserts.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use helm_core::classification::{bce_loss, classify, BatchLabels};
use helm_core::data::{generate_synthetic, make_split, make_split_with_test, Sample, SplitPlan, SyntheticSpec};
use helm_core::encoder;
use helm_core::metrics::{auprc, micro_pr_curve, nmi, ranking_loss, MetricRecord};
use helm_core::numerics::{Tape, Tensor};
use helm_core::ssl::{byol_loss, ema_update, AugmentationPolicy};
use helm_core::training::gradcheck::{check_losses, tiny_setup};
use helm_core::training::{evaluate, fit, steps_per_epoch, to_jsonl, ModelConfig, StepInputs, TrainConfig, Variant};
use helm_core::training::{Model, TARGET_PREFIX};
use helm_core::LabelHierarchy;
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria time themselves; run them one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: usize, pass: bool, detail: &str) {
    println!("criterion {n}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
}

fn hierarchy(name: &str) -> LabelHierarchy {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join(name);
    LabelHierarchy::from_file(&path).unwrap()
}

fn subset(samples: &[Sample], ids: &[usize]) -> Vec<Sample> {
    ids.iter().map(|&i| samples[i].clone()).collect()
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_gradient_correctness() {
    let _g = serial();
    let start = Instant::now();
    let checks = check_losses(0, 1e-6).unwrap();
    let elapsed = start.elapsed();
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let detail: Vec<String> = checks.iter().map(|c| format!("{} {:.2e}", c.loss, c.max_rel_error)).collect();
    let pass = checks.len() == 4 && worst < 1e-3 && elapsed < Duration::from_secs(60);
    verdict(1, pass, &format!("{} (tol 1e-3), {:.1?} (limit 60 s)", detail.join(", "), elapsed));
    assert!(pass);
}

// ---------------------------------------------------------------- 2

fn brute_ranking_loss(n: usize, m: usize, scores: &[f64], targets: &[bool]) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        let (mut bad, mut pairs) = (0usize, 0usize);
        for p in 0..m {
            for q in 0..m {
                if targets[i * m + p] && !targets[i * m + q] {
                    pairs += 1;
                    if scores[i * m + p] <= scores[i * m + q] {
                        bad += 1;
                    }
                }
            }
        }
        if pairs > 0 {
            total += bad as f64 / pairs as f64;
        }
    }
    total / n as f64
}

/// Precision and recall counted from scratch at every distinct threshold,
/// from the highest down to the first one reaching full recall.
fn threshold_auprc(scores: &[f64], targets: &[bool]) -> f64 {
    let positives = targets.iter().filter(|&&t| t).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut points = vec![(0.0, 1.0)];
    for t in thresholds {
        let predicted: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = predicted.iter().filter(|&&i| targets[i]).count() as f64;
        let recall = tp / positives;
        points.push((recall, tp / predicted.len() as f64));
        if recall == 1.0 {
            break;
        }
    }
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

fn random_instance(rng: &mut ChaCha8Rng, need_positive: bool) -> (usize, usize, Vec<f64>, Vec<bool>) {
    loop {
        let (n, m) = (rng.gen_range(1..7), rng.gen_range(2..9));
        let levels = rng.gen_range(2..12);
        let scores: Vec<f64> = (0..n * m).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let p = rng.gen_range(0.1..0.7);
        let targets: Vec<bool> = (0..n * m).map(|_| rng.gen_bool(p)).collect();
        if !need_positive || targets.iter().any(|&t| t) {
            return (n, m, scores, targets);
        }
    }
}

#[test]
fn criterion_2_metric_oracles() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rl_mismatch = 0;
    for _ in 0..500 {
        let (n, m, s, t) = random_instance(&mut rng, false);
        let got = ranking_loss(&MetricRecord::new(n, m, s.clone(), t.clone()).unwrap());
        if got != brute_ranking_loss(n, m, &s, &t) {
            rl_mismatch += 1;
        }
    }
    let mut ap_worst: f64 = 0.0;
    for _ in 0..200 {
        let (n, m, s, t) = random_instance(&mut rng, true);
        let record = MetricRecord::new(n, m, s.clone(), t.clone()).unwrap();
        let got = auprc(&micro_pr_curve(&record).unwrap()).unwrap();
        ap_worst = ap_worst.max((got - threshold_auprc(&s, &t)).abs());
    }

    let one = |s: &[f64], pos: &[usize]| {
        let t = (0..s.len()).map(|i| pos.contains(&i)).collect();
        ranking_loss(&MetricRecord::new(1, s.len(), s.to_vec(), t).unwrap())
    };
    let hand_rl = one(&[0.9, 0.2, 0.7], &[0]) == 0.0
        && one(&[0.3, 0.8, 0.5], &[0]) == 1.0
        && one(&[0.6, 0.8, 0.1], &[0]) == 0.5;
    let two = MetricRecord::new(1, 2, vec![0.9, 0.1], vec![true, false]).unwrap();
    let curve = micro_pr_curve(&two).unwrap();
    let hand_pr = curve == vec![(0.0, 1.0), (1.0, 1.0)] && auprc(&curve).unwrap() == 1.0;
    let flat = MetricRecord::new(2, 2, vec![0.4; 4], vec![true, false, false, false]).unwrap();
    let hand_flat = micro_pr_curve(&flat).unwrap() == vec![(0.0, 1.0), (1.0, 0.25)];

    let (a, b) = ([0, 0, 1, 1, 2, 2], [0, 0, 1, 1, 1, 2]);
    let joint = [(0, 0, 2.0), (1, 1, 2.0), (2, 1, 1.0), (2, 2, 1.0)];
    let (pa, pb) = ([2.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0], [2.0 / 6.0, 3.0 / 6.0, 1.0 / 6.0]);
    let mi: f64 = joint
        .iter()
        .map(|&(x, y, c): &(usize, usize, f64)| (c / 6.0) * ((c / 6.0) / (pa[x] * pb[y])).ln())
        .sum();
    let h = |p: &[f64]| -p.iter().map(|v| v * v.ln()).sum::<f64>();
    let hand_nmi = (nmi(&a, &b).unwrap() - mi / (h(&pa) * h(&pb)).sqrt()).abs() < 1e-12;

    let elapsed = start.elapsed();
    let pass = rl_mismatch == 0
        && ap_worst < 1e-9
        && hand_rl
        && hand_pr
        && hand_flat
        && hand_nmi
        && elapsed < Duration::from_secs(30);
    verdict(
        2,
        pass,
        &format!(
            "ranking-loss mismatches {rl_mismatch}/500, worst AUPRC gap {ap_worst:.1e} over 200 (tol 1e-9), hand cases {}, {elapsed:.1?}",
            hand_rl && hand_pr && hand_flat && hand_nmi
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

fn byol_value(p: &[f64], t: &[f64]) -> f64 {
    let mut tape = Tape::<f64>::new();
    let pv = tape.constant(Tensor::from_f64(&[1, p.len()], p).unwrap());
    let tv = tape.constant(Tensor::from_f64(&[1, t.len()], t).unwrap());
    let l = byol_loss(&mut tape, pv, tv).unwrap();
    tape.value(l).data()[0]
}

fn distance(a: &helm_core::numerics::ParameterStore<f64>, b: &helm_core::numerics::ParameterStore<f64>) -> f64 {
    a.iter()
        .map(|(name, t)| {
            let o = b.get(name).unwrap();
            t.data().iter().zip(o.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

#[test]
fn criterion_3_byol_algebra() {
    let _g = serial();
    let v = [0.3, -1.2, 0.8, 2.0];
    let identical = byol_value(&v, &v);
    let orthogonal = byol_value(&[1.0, 2.0, 0.0, 0.0], &[0.0, 0.0, -3.0, 0.5]);
    let antiparallel = byol_value(&v, &v.map(|x| -2.5 * x));
    let loss_ok = identical.abs() < 1e-6 && (orthogonal - 2.0).abs() < 1e-6 && (antiparallel - 4.0).abs() < 1e-6;

    let (model, inputs) = tiny_setup(5).unwrap();
    let tau = model.config.model.ema_tau;
    let mut target = model.target.clone().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (_, t) in target.iter_mut() {
        for x in t.data_mut() {
            *x += rng.gen_range(-1.0..1.0);
        }
    }
    let online = model.online.subset(&["encoder.", "byol.projector."], helm_core::numerics::Role::Online);
    let gap0 = distance(&target, &online);
    let mut ema_worst: f64 = 0.0;
    for k in 1..=10 {
        ema_update(&model.online, &mut target, tau).unwrap();
        let expected = tau.powi(k) * gap0;
        ema_worst = ema_worst.max((distance(&target, &online) - expected).abs());
    }

    let mut tape = Tape::new();
    let bindings = model.bind(&mut tape, true);
    let losses = model.compose_loss(&mut tape, &bindings, &inputs, 0).unwrap();
    let grads = tape.backward(losses.total).unwrap();
    let (mut target_max, mut target_seen, mut online_max) = (0.0f64, 0, 0.0f64);
    for (name, g) in grads.iter() {
        let m = g.data().iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        if name.starts_with(TARGET_PREFIX) {
            target_seen += 1;
            target_max = target_max.max(m);
        } else {
            online_max = online_max.max(m);
        }
    }
    let no_leak = target_max == 0.0 && online_max > 0.0;

    let pass = loss_ok && ema_worst < 1e-6 && no_leak;
    verdict(
        3,
        pass,
        &format!(
            "L_b = {identical:.1e} / {orthogonal:.6} / {antiparallel:.6}, EMA worst gap {ema_worst:.1e} (tol 1e-6, tau {tau}), \
             max |grad| on {target_seen} target tensors {target_max:.1e}"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_4_hierarchy_invariants() {
    let _g = serial();
    let h = hierarchy("ucm.yaml");
    let again = LabelHierarchy::parse(&h.to_yaml().unwrap()).unwrap();
    let round_trip = again.labels() == h.labels()
        && (0..h.len()).all(|i| again.parent(i) == h.parent(i))
        && again.len() == 30
        && again.level_sizes() == [4, 9, 17]
        && again.leaf_ids().len() == 17;

    let leaves: Vec<usize> = h.leaf_ids().to_vec();
    let strategy = proptest::sample::subsequence(leaves.clone(), 1..=leaves.len());
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 1000,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    let cases = std::cell::Cell::new(0usize);
    let closure = runner.run(&strategy, |picked| {
        cases.set(cases.get() + 1);
        let names: Vec<&str> = picked.iter().map(|&l| h.name(l)).collect();
        let v = h.ancestor_closure(&names).unwrap();
        let mut expected = BTreeSet::new();
        for &l in &picked {
            let mut node = Some(l);
            while let Some(x) = node {
                expected.insert(x);
                node = h.parent(x);
            }
        }
        let active: BTreeSet<usize> = v.active().collect();
        prop_assert_eq!(&active, &expected);
        prop_assert!(v.is_closed(&h));
        let active_leaves: BTreeSet<usize> = active.iter().copied().filter(|&i| h.is_leaf(i)).collect();
        prop_assert_eq!(active_leaves, picked.iter().copied().collect::<BTreeSet<_>>());
        Ok(())
    });
    let pass = round_trip && closure.is_ok() && cases.get() >= 1000;
    verdict(
        4,
        pass,
        &format!(
            "round trip M = {}, levels {:?}, leaves {}; closure property {} on {} leaf subsets",
            again.len(),
            again.level_sizes(),
            again.leaf_ids().len(),
            if closure.is_ok() { "held" } else { "failed" },
            cases.get()
        ),
    );
    assert!(pass, "{closure:?}");
}

// ---------------------------------------------------------------- 5

fn small_config(variant: Variant, seed: u64) -> TrainConfig {
    TrainConfig {
        variant,
        seed,
        model: ModelConfig {
            pixel_mean: Some(0.2),
            pixel_std: Some(0.15),
            embed_dim: 8,
            depth: 1,
            heads: 2,
            mlp_ratio: 2,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn batch_inputs(model: &Model<f64>, samples: &[Sample], labeled: &[bool]) -> StepInputs<f64> {
    let m = model.num_labels();
    let mut targets = Vec::new();
    for (s, &l) in samples.iter().zip(labeled) {
        if l {
            targets.extend(s.labels.project(&model.label_map));
        } else {
            targets.extend(std::iter::repeat(0.0).take(m));
        }
    }
    let stack = |shift: f64| {
        let imgs: Vec<Tensor<f64>> = samples
            .iter()
            .map(|s| {
                let img: Tensor<f64> = s.image.cast();
                model.config.model.normalize(&img.map(|v| (v + shift).min(1.0)))
            })
            .collect();
        Tensor::stack(&imgs).unwrap()
    };
    let byol = model.variant.use_byol();
    StepInputs {
        images: stack(0.0),
        labels: BatchLabels::new(Tensor::from_f64(&[samples.len(), m], &targets).unwrap(), labeled.to_vec()).unwrap(),
        view1: byol.then(|| stack(0.05)),
        view2: byol.then(|| stack(0.1)),
    }
}

#[test]
fn criterion_5_ablation_matrix() {
    let _g = serial();
    let h = hierarchy("toy.yaml");
    let samples = generate_synthetic(&h, &SyntheticSpec::default(), 4, 3).unwrap();
    let labeled = [true, false, true, false];
    let mut rows = Vec::new();
    let mut all_ok = true;
    for variant in Variant::ALL {
        let model = Model::<f64>::new(&h, &small_config(variant, 1), 32, 3).unwrap();
        let inputs = batch_inputs(&model, &samples, &labeled);
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, false);
        let l = model.compose_loss(&mut tape, &b, &inputs, 0).unwrap();
        let ran = (l.supervised.is_some(), l.graph.is_some(), l.byol.is_some());
        let expected = (true, variant.use_graph(), variant.use_byol());
        let counts = model.param_counts();
        let params_ok = (counts.graph > 0) == variant.use_graph()
            && (counts.byol > 0) == variant.use_byol()
            && (counts.target > 0) == variant.use_byol();
        let width_ok = model.num_labels() == if variant.use_hierarchy() { h.len() } else { h.leaf_ids().len() };
        let ok = ran == expected && params_ok && width_ok;
        all_ok &= ok;
        rows.push(format!(
            "{variant}: L_s {} L_g {} L_b {} M {}",
            ran.0 as u8,
            ran.1 as u8,
            ran.2 as u8,
            model.num_labels()
        ));
    }

    let model = Model::<f64>::new(&h, &small_config(Variant::Hmlc, 1), 32, 3).unwrap();
    let inputs = batch_inputs(&model, &samples, &labeled);
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, false);
    let composite = model.compose_loss(&mut tape, &b, &inputs, 0).unwrap().total;
    let composite = tape.value(composite).data()[0];
    let mut tape = Tape::new();
    let b = tape.bind(&model.online, true);
    let out = encoder::forward(&mut tape, &b, &model.encoder, &inputs.images).unwrap();
    let logits = classify(&mut tape, &b, out.pooled_cls).unwrap();
    let ls = bce_loss(&mut tape, logits, &inputs.labels).unwrap();
    let ls = tape.value(ls).data()[0];
    let bitwise = composite.to_bits() == ls.to_bits();

    let pass = all_ok && bitwise;
    verdict(
        5,
        pass,
        &format!("{}; HMLC L = {composite:e} vs L_s-only {ls:e} bit-identical {bitwise}", rows.join(", ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_overfit() {
    let _g = serial();
    let h = hierarchy("toy.yaml");
    let samples = generate_synthetic(&h, &SyntheticSpec::default(), 64, 0).unwrap();
    let plan = make_split(64, 1.0, 0).unwrap();
    let cfg = TrainConfig {
        variant: Variant::Hmlc,
        epochs: 200,
        ratio: 1.0,
        augment_supervised: false,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = fit::<f32>(&h, &cfg, &samples, plan, |_| {}).unwrap();
    let elapsed = start.elapsed();
    let score = evaluate(&out.model, &h, &samples, false).unwrap().auprc;
    let m = &out.model.config.model;
    let shape_ok = m.embed_dim == 32 && m.depth == 2 && m.heads == 4 && m.patch_size == 8 && out.model.encoder.image_size == 32;
    let pass = shape_ok && score >= 0.99 && elapsed < Duration::from_secs(600);
    verdict(
        6,
        pass,
        &format!("train leaf AUPRC {score:.4} after {} epochs (need >= 0.99), {elapsed:.1?} (limit 600 s)", cfg.epochs),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7

const TREND_SAMPLES: usize = 1000;
const TREND_TEST: usize = 200;
const TREND_SEEDS: [u64; 3] = [0, 1, 2];
const TREND_HELM_EPOCHS: usize = 30;
const TREND_LABELED_PER_BATCH: usize = 8;

/// Synthetic labels are tied to motif positions, so flips are dropped from
/// both policies for every variant.
fn without_flips(mut p: AugmentationPolicy) -> AugmentationPolicy {
    p.hflip_p = 0.0;
    p.vflip_p = 0.0;
    p
}

/// Test AUPRC of HELM and of HMLC given the same number of optimizer steps.
fn trend_pair(h: &LabelHierarchy, samples: &[Sample], test: &[Sample], plan: &SplitPlan, seed: u64) -> (f64, f64) {
    let helm = TrainConfig {
        variant: Variant::Helm,
        epochs: TREND_HELM_EPOCHS,
        ratio: plan.ratio,
        seed,
        labeled_per_batch: Some(TREND_LABELED_PER_BATCH),
        weak: without_flips(AugmentationPolicy::weak()),
        strong: without_flips(AugmentationPolicy::strong()),
        ..TrainConfig::default()
    };
    let helm_steps = TREND_HELM_EPOCHS * steps_per_epoch(plan, helm.batch_size, true);
    let hmlc = TrainConfig {
        variant: Variant::Hmlc,
        epochs: helm_steps.div_ceil(steps_per_epoch(plan, helm.batch_size, false)),
        labeled_per_batch: None,
        ..helm.clone()
    };
    let score = |cfg: &TrainConfig| {
        let out = fit::<f32>(h, cfg, samples, plan.clone(), |_| {}).unwrap();
        evaluate(&out.model, h, test, false).unwrap().auprc
    };
    (score(&helm), score(&hmlc))
}

#[test]
fn criterion_7_semi_supervised_trend() {
    let _g = serial();
    let start = Instant::now();
    let h = hierarchy("toy.yaml");
    let samples = generate_synthetic(&h, &SyntheticSpec::default(), TREND_SAMPLES, 0).unwrap();
    let fixed = make_split_with_test(TREND_SAMPLES, TREND_TEST, 1.0, 0).unwrap();
    let test = subset(&samples, &fixed.test);
    let mut gaps = Vec::new();
    let mut detail = Vec::new();
    for ratio in [0.05, 0.25] {
        let (mut helm, mut hmlc) = (Vec::new(), Vec::new());
        for seed in TREND_SEEDS {
            let mut plan = make_split(fixed.labeled.len(), ratio, seed).unwrap();
            for ids in [&mut plan.labeled, &mut plan.unlabeled] {
                ids.iter_mut().for_each(|i| *i = fixed.labeled[*i]);
            }
            let (a, b) = trend_pair(&h, &samples, &test, &plan, seed);
            helm.push(a);
            hmlc.push(b);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let gap = mean(&helm) - mean(&hmlc);
        detail.push(format!(
            "{:.0}%: HELM {:.4} HMLC {:.4} gap {gap:+.4}",
            ratio * 100.0,
            mean(&helm),
            mean(&hmlc)
        ));
        gaps.push(gap);
    }
    let elapsed = start.elapsed();
    let pass = gaps[0] >= 0.02 && gaps[0] >= gaps[1] && elapsed < Duration::from_secs(7200);
    verdict(
        7,
        pass,
        &format!("{} (need 5% gap >= 0.02 and >= 25% gap), {elapsed:.0?}", detail.join(", ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_determinism() {
    let _g = serial();
    let h = hierarchy("toy.yaml");
    let samples = generate_synthetic(&h, &SyntheticSpec::default(), 96, 4).unwrap();
    let plan = make_split_with_test(96, 32, 0.25, 4).unwrap();
    let test = subset(&samples, &plan.test);
    let cfg = TrainConfig {
        variant: Variant::Helm,
        epochs: 2,
        batch_size: 8,
        seed: 4,
        ..TrainConfig::default()
    };
    let run = || {
        let out = fit::<f32>(&h, &cfg, &samples, plan.clone(), |_| {}).unwrap();
        let metrics = evaluate(&out.model, &h, &test, true).unwrap();
        (to_jsonl(&out.steps).unwrap(), to_jsonl(&out.epochs).unwrap(), out.steps.len(), metrics)
    };
    let (steps_a, epochs_a, n, metrics_a) = run();
    let (steps_b, epochs_b, _, metrics_b) = run();
    let pass = n >= 5 && steps_a == steps_b && epochs_a == epochs_b && metrics_a == metrics_b;
    verdict(
        8,
        pass,
        &format!(
            "{n} steps, step logs identical {}, epoch logs identical {}, metrics identical {} (AUPRC {:.6})",
            steps_a == steps_b,
            epochs_a == epochs_b,
            metrics_a == metrics_b,
            metrics_a.auprc
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_efficiency() {
    let _g = serial();
    let h = hierarchy("toy.yaml");
    let samples = generate_synthetic(&h, &SyntheticSpec::default(), 240, 5).unwrap();
    let plan = make_split_with_test(240, 40, 0.05, 5).unwrap();
    let seconds = |variant: Variant| {
        let cfg = TrainConfig {
            variant,
            epochs: 2,
            ratio: 0.05,
            ..TrainConfig::default()
        };
        let out = fit::<f32>(&h, &cfg, &samples, plan.clone(), |_| {}).unwrap();
        let s = out.epoch_seconds.iter().sum::<f64>() / out.epoch_seconds.len() as f64;
        (s, out.params)
    };
    let (hmlc, _) = seconds(Variant::Hmlc);
    let (helm_b, _) = seconds(Variant::HelmB);
    let (helm, params) = seconds(Variant::Helm);
    let share = params.graph as f64 / params.encoder as f64;
    let pass = share < 0.05 && helm_b > hmlc && helm > hmlc;
    verdict(
        9,
        pass,
        &format!(
            "graph {} / encoder {} params = {:.2}% (limit 5%), seconds per epoch HMLC {hmlc:.3}, HELM-B {helm_b:.3}, HELM {helm:.3}",
            params.graph,
            params.encoder,
            share * 100.0
        ),
    );
    assert!(pass);
}
