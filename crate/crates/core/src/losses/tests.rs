use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{forward, ModelConfig, ModelParams};
use crate::tensor::grad_check;

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::matrix(rows, cols, data).unwrap()
}

#[test]
fn weight_examples() {
    assert_eq!(vista_weight(4, 4, WeightScheme::Normalized).unwrap(), 1.0);
    assert_eq!(vista_weight(1, 4, WeightScheme::Normalized).unwrap(), 0.25);
    assert_eq!(vista_weight(3, 9, WeightScheme::Linear).unwrap(), 3.0);
    assert_eq!(vista_weight(3, 9, WeightScheme::Uniform(0.4)).unwrap(), 0.4);
    assert_eq!(mean_weight(7, WeightScheme::Linear).unwrap(), 4.0);
    assert!(matches!(vista_weight(0, 4, WeightScheme::Linear), Err(Error::Contract(_))));
    assert!(matches!(vista_weight(5, 4, WeightScheme::Linear), Err(Error::Contract(_))));
    assert!(WeightScheme::Uniform(-1.0).validate().is_err());
    assert!(WeightScheme::Uniform(f64::NAN).validate().is_err());
    assert!(WeightScheme::Uniform(0.0).is_off());
    assert!(!WeightScheme::Uniform(1e-300).is_off());
}

#[test]
fn mean_weights_are_exact() {
    for m in 1..=64usize {
        assert_eq!(mean_weight(m, WeightScheme::Linear).unwrap(), (m as f64 + 1.0) / 2.0, "linear m={m}");
        assert_eq!(
            mean_weight(m, WeightScheme::Normalized).unwrap(),
            (m as f64 + 1.0) / (2.0 * m as f64),
            "normalized m={m}"
        );
        let w = vista_weights(m, WeightScheme::Normalized).unwrap();
        assert!(w.iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!(w.windows(2).all(|p| p[1] > p[0]));
    }
}

#[test]
fn exact_sum_is_correctly_rounded() {
    assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
    assert_eq!(exact_sum([0.1; 10]), 1.0);
    assert_eq!(exact_sum(Vec::<f64>::new()), 0.0);
    // Naive left-to-right summation misses here.
    let w = vista_weights(20, WeightScheme::Normalized).unwrap();
    assert_ne!(w.iter().sum::<f64>() / 20.0, 21.0 / 40.0);
    assert_eq!(exact_sum(w) / 20.0, 21.0 / 40.0);
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::new();
    let logits = g.constant(matrix(2, 4, vec![0.0; 8]));
    let ce = cross_entropy(&mut g, logits, &[1, 3], &[true, true]).unwrap();
    assert!((g.value(ce).item().unwrap() - 4f64.ln()).abs() < 1e-15);

    let mut prev = f64::INFINITY;
    for margin in [1.0, 5.0, 20.0, 40.0] {
        let logits = g.constant(matrix(1, 3, vec![0.0, margin, 0.0]));
        let ce = cross_entropy(&mut g, logits, &[1], &[true]).unwrap();
        let v = g.value(ce).item().unwrap();
        assert!(v < prev && v >= 0.0);
        prev = v;
    }
    assert!(prev < 1e-16);

    assert!(matches!(cross_entropy(&mut g, logits, &[1, 3], &[false, false]), Err(Error::Contract(_))));
    assert!(matches!(cross_entropy(&mut g, logits, &[1, 4], &[true, true]), Err(Error::Index(_))));
}

#[test]
fn cross_entropy_matches_log_sum_exp_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (rows, v) = (9, 7);
    let data: Vec<f64> = (0..rows * v).map(|_| rng.random_range(-4.0..4.0)).collect();
    let targets: Vec<usize> = (0..rows).map(|_| rng.random_range(0..v)).collect();
    let mask: Vec<bool> = (0..rows).map(|r| r % 3 != 1).collect();
    let mut sum = 0.0;
    for r in 0..rows {
        if mask[r] {
            let row = &data[r * v..(r + 1) * v];
            let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
            sum += lse - row[targets[r]];
        }
    }
    let want = sum / mask.iter().filter(|&&b| b).count() as f64;
    let mut g = Graph::new();
    let logits = g.constant(matrix(rows, v, data));
    let ce = cross_entropy(&mut g, logits, &targets, &mask).unwrap();
    assert!((g.value(ce).item().unwrap() - want).abs() < 1e-13);
}

#[test]
fn l2_examples() {
    let s = matrix(1, 1, vec![2.0]);
    let x = matrix(2, 1, vec![1.0, 3.0]);
    let v = vista_l2_value(&x, &s, &[true, true], WeightScheme::Normalized).unwrap();
    assert_eq!(v, 0.75);

    let same = matrix(2, 1, vec![2.0, 2.0]);
    assert_eq!(vista_l2_value(&same, &s, &[true, true], WeightScheme::Linear).unwrap(), 0.0);

    // uniform(1) reduces to the unweighted mean distance.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = matrix(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect());
    let s = matrix(2, 3, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut want = 0.0;
    for r in 0..6 {
        let b = r / 3;
        want += (0..3).map(|j| (x.row(r)[j] - s.row(b)[j]).powi(2)).sum::<f64>();
    }
    want /= 6.0;
    let got = vista_l2_value(&x, &s, &[true; 6], WeightScheme::Uniform(1.0)).unwrap();
    assert!((got - want).abs() < 1e-14);
    assert!(matches!(vista_l2_value(&x, &s, &[false; 6], WeightScheme::Linear), Err(Error::Contract(_))));
}

#[test]
fn masked_positions_are_reindexed() {
    // Row 0 supervises positions 2 and 3 only, row 1 is fully masked out.
    let x = matrix(6, 1, vec![9.0, 1.0, 3.0, 0.0, 0.0, 0.0]);
    let s = matrix(2, 1, vec![2.0, 5.0]);
    let mask = [false, true, true, false, false, false];
    let w = alignment_row_weights(&mask, 3, WeightScheme::Normalized).unwrap();
    assert_eq!(w, vec![0.0, 0.25, 0.5, 0.0, 0.0, 0.0]);
    assert_eq!(vista_l2_value(&x, &s, &mask, WeightScheme::Normalized).unwrap(), 0.75);
}

#[test]
fn cosine_examples() {
    let s = matrix(1, 2, vec![1.0, 2.0]);
    let par = matrix(1, 2, vec![3.0, 6.0]);
    assert!((vista_cosine_value(&par, &s, &[true], WeightScheme::Normalized).unwrap() + 1.0).abs() < 1e-15);
    let orth = matrix(2, 2, vec![2.0, -1.0, -4.0, 2.0]);
    assert_eq!(vista_cosine_value(&orth, &s, &[true, true], WeightScheme::Linear).unwrap(), 0.0);
    let anti = matrix(2, 2, vec![-1.0, -2.0, -1.0, -2.0]);
    let v = vista_cosine_value(&anti, &s, &[true, true], WeightScheme::Normalized).unwrap();
    assert!((v - 0.75).abs() < 1e-15);
}

#[test]
fn homogeneity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = matrix(8, 4, (0..32).map(|_| rng.random_range(-1.0..1.0)).collect());
    let s = matrix(2, 4, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
    let scaled = |t: &Tensor, k: f64| matrix(t.rows(), t.last_dim(), t.data().iter().map(|v| v * k).collect());
    let mask = [true; 8];
    for gamma in [0.5, 3.0] {
        let l2 = vista_l2_value(&x, &s, &mask, WeightScheme::Normalized).unwrap();
        let l2s = vista_l2_value(&scaled(&x, gamma), &scaled(&s, gamma), &mask, WeightScheme::Normalized).unwrap();
        assert!((l2s - gamma * gamma * l2).abs() < 1e-13);
        let c = vista_cosine_value(&x, &s, &mask, WeightScheme::Normalized).unwrap();
        let cs = vista_cosine_value(&scaled(&x, gamma), &scaled(&s, gamma), &mask, WeightScheme::Normalized).unwrap();
        assert!((cs - c).abs() < 1e-14);
    }
}

fn tiny() -> (ModelConfig, ModelParams, MultimodalBatch) {
    let config = ModelConfig {
        vocab_size: 7,
        d_model: 4,
        n_layers: 1,
        n_heads: 2,
        n_image_tokens: 2,
        max_text_len: 3,
        d_image_feat: 3,
        seed: 5,
    };
    let params = ModelParams::init(&config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let feats = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch =
        MultimodalBatch::new(2, 2, 3, 3, feats, vec![1, 6, 0, 2, 2, 5], vec![true, true, false, true, true, true])
            .unwrap();
    (config, params, batch)
}

fn report_for(loss: &LossConfig) -> LossReport {
    let (config, params, batch) = tiny();
    let mut g = Graph::new();
    let w = params.load(&mut g, true);
    let out = forward(&mut g, &config, &w, &batch).unwrap();
    total_loss(&mut g, &out, &batch, loss).unwrap().1
}

#[test]
fn total_is_the_sum_of_its_parts() {
    for surrogate in [None, Some(Surrogate::L2), Some(Surrogate::Cosine)] {
        for scheme in
            [WeightScheme::Normalized, WeightScheme::Linear, WeightScheme::Uniform(0.3), WeightScheme::Uniform(0.0)]
        {
            for text_repr in [TextRepr::Embedding, TextRepr::Hidden] {
                let r = report_for(&LossConfig { scheme, surrogate, text_repr, vista_scale: 1.0 });
                assert_eq!(r.total, r.ce + r.vista);
                assert_eq!(r.weights.len(), 3);
                assert_eq!(r.supervised_count, 5);
                if surrogate == Some(Surrogate::L2) {
                    assert!(r.vista >= 0.0);
                }
                if surrogate.is_none() || scheme.is_off() {
                    assert_eq!(r.total.to_bits(), r.ce.to_bits());
                }
            }
        }
    }
}

#[test]
fn vista_scale_multiplies_the_term() {
    let base = report_for(&LossConfig::default());
    let doubled = report_for(&LossConfig { vista_scale: 2.0, ..LossConfig::default() });
    assert_eq!(doubled.ce, base.ce);
    assert!((doubled.vista - 2.0 * base.vista).abs() < 1e-14);
}

#[test]
fn summary_receives_gradient_from_the_alignment_term() {
    let (_, _, batch) = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let text = matrix(6, 4, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect());
    let summary = matrix(2, 4, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
    for surrogate in [Surrogate::L2, Surrogate::Cosine] {
        let f = |g: &mut Graph, s: Var| {
            let t = g.constant(text.clone());
            match surrogate {
                Surrogate::L2 => vista_l2_loss(g, t, s, batch.loss_mask(), WeightScheme::Normalized),
                Surrogate::Cosine => vista_cosine_loss(g, t, s, batch.loss_mask(), WeightScheme::Normalized),
            }
        };
        let report = grad_check(f, &summary, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-7);
        assert!(report.analytic.iter().any(|&v| v.abs() > 1e-3));
    }
}
