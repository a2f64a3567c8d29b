use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eval::accumulate_alignment;
use super::*;
use crate::error::Error;
use crate::infotheory::enumerate_joint;
use crate::losses::{TextRepr, WeightScheme};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

fn small_model() -> ModelConfig {
    ModelConfig {
        vocab_size: 5,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        n_image_tokens: 2,
        max_text_len: 4,
        d_image_feat: 3,
        seed: 1,
    }
}

fn small_task(seed: u64) -> TaskSpec {
    let params = TaskParams { latent_size: 3, ..TaskParams::for_model(&small_model(), seed) };
    TaskSpec::generate(params).unwrap()
}

fn small_config(variant: Variant, scheme: WeightScheme) -> TrainConfig {
    TrainConfig {
        model: small_model(),
        scheme,
        variant,
        steps: 12,
        batch_size: 4,
        learning_rate: 0.01,
        eval_interval: 5,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn noiseless_features_take_one_row_per_latent() {
    let params = TaskParams { latent_size: 2, noise_std: 0.0, ..TaskParams::for_model(&small_model(), 9) };
    let task = TaskSpec::generate(params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = synth_batch(&task, &mut rng, 64).unwrap();
    let block = 2 * 3;
    let mut distinct: Vec<&[f64]> = s.batch.image_features().chunks(block).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    assert_eq!(distinct.len(), 2);
    for (b, &z) in s.latents.iter().enumerate() {
        assert_eq!(&s.batch.image_features()[b * block..(b + 1) * block], task.clean_features(z));
    }
    assert!(s.batch.loss_mask().iter().all(|&b| b));
}

#[test]
fn batches_are_reproducible() {
    let task = small_task(4);
    assert_eq!(task, small_task(4));
    assert_ne!(task.caption_model, small_task(5).caption_model);
    let draw = || synth_batch(&task, &mut ChaCha8Rng::seed_from_u64(17), 8).unwrap();
    assert_eq!(draw(), draw());
}

#[test]
fn token_frequencies_match_the_caption_model() {
    let task = small_task(2);
    let (v, m) = (5, 4);
    let joint = enumerate_joint(&task.caption_model, m).unwrap();
    let samples = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut counts = vec![vec![0usize; v]; m];
    let mut left = samples;
    while left > 0 {
        let n = left.min(5000);
        let s = synth_batch(&task, &mut rng, n).unwrap();
        for row in s.batch.text_ids().chunks(m) {
            for (t, &x) in row.iter().enumerate() {
                counts[t][x] += 1;
            }
        }
        left -= n;
    }
    for t in 1..=m {
        let zx = joint.latent_token_joint(t);
        for x in 0..v {
            let p: f64 = (0..3).map(|z| zx[z * v + x]).sum();
            let sd = (samples as f64 * p * (1.0 - p)).sqrt();
            let diff = (counts[t - 1][x] as f64 - samples as f64 * p).abs();
            assert!(diff <= 3.0 * sd + 1.0, "t={t} x={x}: {} vs {}", counts[t - 1][x], samples as f64 * p);
        }
    }
}

#[test]
fn task_validation() {
    let bad = TaskParams { noise_std: -1.0, ..TaskParams::default() };
    assert!(matches!(TaskSpec::generate(bad), Err(Error::Parameter(_))));
    let bad = TaskParams { latent_size: 0, ..TaskParams::default() };
    assert!(matches!(TaskSpec::generate(bad), Err(Error::Parameter(_))));
    let wide = TaskParams { vocab_size: 6, ..TaskParams::for_model(&small_model(), 0) };
    assert!(matches!(wide.check_model(&small_model()), Err(Error::Mismatch(_))));
    let short = TaskParams { text_len: 2, ..TaskParams::for_model(&small_model(), 0) };
    assert!(short.check_model(&small_model()).is_ok());
}

#[test]
fn sgd_examples() {
    let mut p = vec![1.0, -2.0];
    let mut v = vec![0.0; 2];
    sgd_update(&mut p, &[0.5, 1.0], &mut v, 0.1, 0.0).unwrap();
    assert_eq!(p, vec![1.0 - 0.1 * 0.5, -2.0 - 0.1]);

    let mut p = vec![3.0, 4.0];
    let mut v = vec![0.0; 2];
    sgd_update(&mut p, &[0.0, 0.0], &mut v, 0.5, 0.9).unwrap();
    assert_eq!(p, vec![3.0, 4.0]);

    // Two steps with momentum against the unrolled recurrence.
    let (lr, mu, p0, g1, g2) = (0.1, 0.9, 1.0, 2.0, -1.0);
    let mut p = vec![p0];
    let mut v = vec![0.0];
    sgd_update(&mut p, &[g1], &mut v, lr, mu).unwrap();
    sgd_update(&mut p, &[g2], &mut v, lr, mu).unwrap();
    let v1 = g1;
    let v2 = mu * v1 + g2;
    assert_eq!(v[0], v2);
    assert_eq!(p[0], p0 - lr * v1 - lr * v2);
    assert!((p[0] - 0.72).abs() < 1e-12);

    assert!(matches!(sgd_update(&mut p, &[1.0, 2.0], &mut v, lr, mu), Err(Error::Dimension(_))));
}

#[test]
fn sgd_step_checks_arguments() {
    let mut params = ModelParams::init(&small_model()).unwrap();
    let mut state = MomentumState::zeros(&params);
    let grads: Vec<Vec<f64>> = state.velocity().iter().map(|v| vec![1.0; v.len()]).collect();
    let before = params.flatten();
    sgd_step(&mut params, &grads, &mut state, 0.5, 0.0).unwrap();
    assert!(params.flatten().iter().zip(&before).all(|(a, b)| *a == b - 0.5));
    assert!(matches!(sgd_step(&mut params, &grads, &mut state, -1.0, 0.0), Err(Error::Parameter(_))));
    assert!(matches!(sgd_step(&mut params, &grads, &mut state, 0.1, 1.0), Err(Error::Parameter(_))));
    assert!(matches!(sgd_step(&mut params, &grads[1..], &mut state, 0.1, 0.0), Err(Error::Dimension(_))));
}

#[test]
fn training_is_deterministic_and_logs_the_schedule() {
    let task = small_task(0);
    let config = small_config(Variant::L2, WeightScheme::Normalized);
    let a = train(&task, &config).unwrap();
    let b = train(&task, &config).unwrap();
    assert_eq!(a.trace.to_jsonl(), b.trace.to_jsonl());
    assert_eq!(a.params.flatten(), b.params.flatten());
    let steps: Vec<usize> = a.trace.records.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![0, 5, 10, 12]);
    for r in &a.trace.records {
        assert_eq!(r.total, r.ce + r.vista);
        assert!(r.vista >= 0.0);
    }
    let parsed = MetricsTrace::from_jsonl(&format!("# header\n{}\n", a.trace.to_jsonl())).unwrap();
    assert_eq!(parsed, a.trace);
    assert!(matches!(MetricsTrace::from_jsonl("{not json"), Err(Error::Parse(_))));
}

#[test]
fn disabled_alignment_matches_plain_cross_entropy() {
    let task = small_task(1);
    let none = train(&task, &small_config(Variant::None, WeightScheme::Normalized)).unwrap();
    let zero = train(&task, &small_config(Variant::L2, WeightScheme::Uniform(0.0))).unwrap();
    let zero_cos = train(&task, &small_config(Variant::Cosine, WeightScheme::Uniform(0.0))).unwrap();
    assert!(none.trace.records.iter().all(|r| r.vista == 0.0));
    assert_eq!(none.trace.to_jsonl(), zero.trace.to_jsonl());
    assert_eq!(none.trace.to_jsonl(), zero_cos.trace.to_jsonl());
    assert_eq!(none.params.flatten(), zero.params.flatten());
    let on = train(&task, &small_config(Variant::L2, WeightScheme::Normalized)).unwrap();
    assert_ne!(on.params.flatten(), none.params.flatten());
}

#[test]
fn zero_learning_rate_freezes_metrics() {
    let config = TrainConfig { learning_rate: 0.0, ..small_config(Variant::L2, WeightScheme::Linear) };
    let out = train(&small_task(0), &config).unwrap();
    let first = out.trace.first().unwrap();
    for r in &out.trace.records {
        assert_eq!(
            (r.ce, r.vista, r.mean_alignment, r.holdout_ce),
            (first.ce, first.vista, first.mean_alignment, first.holdout_ce)
        );
    }
    assert_eq!(out.params, ModelParams::init(&config.model).unwrap());
}

#[test]
fn divergence_reports_the_last_good_step() {
    let config = TrainConfig { learning_rate: 1e12, steps: 30, ..small_config(Variant::L2, WeightScheme::Linear) };
    match train(&small_task(0), &config) {
        Err(Error::Divergence { step, last_good }) => {
            assert!(step >= 1);
            assert_eq!(last_good, Some(step - 1));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn config_validation() {
    let base = small_config(Variant::L2, WeightScheme::Normalized);
    assert!(base.validate().is_ok());
    for bad in [
        TrainConfig { steps: 0, ..base.clone() },
        TrainConfig { batch_size: 0, ..base.clone() },
        TrainConfig { eval_interval: 0, ..base.clone() },
        TrainConfig { learning_rate: f64::NAN, ..base.clone() },
        TrainConfig { momentum: 1.0, ..base.clone() },
        TrainConfig { scheme: WeightScheme::Uniform(-0.1), ..base.clone() },
    ] {
        assert!(train(&small_task(0), &bad).is_err());
    }
    let mismatch = TrainConfig { model: ModelConfig { vocab_size: 6, ..small_model() }, ..base };
    assert!(matches!(train(&small_task(0), &mismatch), Err(Error::Mismatch(_))));
}

#[test]
fn eval_shapes_and_errors() {
    let task = small_task(0);
    let params = ModelParams::init(&small_model()).unwrap();
    let holdout = holdout_batches(&task).unwrap();
    assert_eq!(holdout.iter().map(|b| b.batch_size()).sum::<usize>(), HOLDOUT_SIZE);
    let report = eval_alignment(&small_model(), &params, &holdout[..2], TextRepr::Embedding).unwrap();
    assert_eq!(report.per_position.len(), 4);
    assert_eq!(report.supervised_count, 2 * 128 * 4);
    assert!(report.mean_alignment.abs() <= 1.0 && report.ce > 0.0);
    let hidden = eval_alignment(&small_model(), &params, &holdout[..2], TextRepr::Hidden).unwrap();
    assert_eq!(hidden.ce, report.ce);
    assert!(matches!(eval_alignment(&small_model(), &params, &[], TextRepr::Embedding), Err(Error::Contract(_))));
}

#[test]
fn forced_alignment_scores_one() {
    let summary = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.0, 4.0]).unwrap();
    let mut text = Vec::new();
    for b in 0..2 {
        for _ in 0..3 {
            text.extend_from_slice(&summary.data()[b * 3..(b + 1) * 3]);
        }
    }
    let text = Tensor::matrix(6, 3, text).unwrap();
    let (mut sums, mut counts) = (vec![0.0; 3], vec![0; 3]);
    let mask = [true, true, false, true, true, true];
    accumulate_alignment(&text, &summary, &mask, 3, &mut sums, &mut counts);
    assert_eq!(counts, vec![2, 2, 1]);
    for (s, c) in sums.iter().zip(&counts) {
        assert!((s / *c as f64 - 1.0).abs() < 1e-15);
    }
    assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
    assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
}
