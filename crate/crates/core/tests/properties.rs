use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vista::infotheory::{
    info_curve, lambda_from_rho, mutual_information, rho_lower_bound_check, rho_vista, DiscreteSequenceModel,
};
use vista::losses::{mean_weight, vista_cosine_value, vista_l2_value, vista_weights, WeightScheme};
use vista::model::{checkpoint, ModelConfig, ModelParams};
use vista::tensor::{grad_check, Graph, Tensor};
use vista::training::sgd_update;

fn scheme() -> impl Strategy<Value = WeightScheme> {
    prop_oneof![
        Just(WeightScheme::Normalized),
        Just(WeightScheme::Linear),
        (0.0f64..4.0).prop_map(WeightScheme::Uniform),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn weights_are_positive_and_monotone(m in 1usize..200) {
        let w = vista_weights(m, WeightScheme::Normalized).unwrap();
        prop_assert!(w.iter().all(|&v| v > 0.0 && v <= 1.0));
        prop_assert!(w.windows(2).all(|p| p[1] > p[0]));
        prop_assert_eq!(w[m - 1], 1.0);
        prop_assert_eq!(mean_weight(m, WeightScheme::Linear).unwrap(), (m as f64 + 1.0) / 2.0);
    }

    #[test]
    fn surrogates_are_bounded(
        seed in any::<u64>(),
        scheme in scheme(),
        (batch, m, d) in (1usize..4, 1usize..6, 1usize..5),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect() };
        let text = Tensor::matrix(batch * m, d, draw(batch * m * d)).unwrap();
        let summary = Tensor::matrix(batch, d, draw(batch * d)).unwrap();
        let mask = vec![true; batch * m];
        let l2 = vista_l2_value(&text, &summary, &mask, scheme).unwrap();
        prop_assert!(l2 >= 0.0);
        let cos = vista_cosine_value(&text, &summary, &mask, scheme).unwrap();
        let wmax = vista_weights(m, scheme).unwrap().into_iter().fold(0.0, f64::max);
        prop_assert!(cos.abs() <= wmax * (1.0 + 1e-12));
    }

    #[test]
    fn rho_is_monotone_and_bounded(iv in 0.001f64..5.0, ic in 0.001f64..5.0, l1 in 0.0f64..50.0, dl in 0.001f64..50.0) {
        let a = rho_vista(iv, ic, l1).unwrap();
        let b = rho_vista(iv, ic, l1 + dl).unwrap();
        prop_assert!(a < b);
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(rho_lower_bound_check(iv, ic, l1 + dl).unwrap().holds);
    }

    #[test]
    fn lambda_round_trips(iv in 0.01f64..2.0, ic in 0.01f64..5.0, target in 0.01f64..0.99) {
        let s = lambda_from_rho(target, iv, ic).unwrap();
        prop_assert_eq!(s.boost_needed, s.lambda > 0.0);
        if s.boost_needed {
            prop_assert!((rho_vista(iv, ic, s.lambda).unwrap() - target).abs() < 1e-12);
        }
    }

    #[test]
    fn mutual_information_is_nonnegative(raw in prop::collection::vec(0.0f64..1.0, 12)) {
        let s: f64 = raw.iter().sum();
        prop_assume!(s > 1e-3);
        let joint: Vec<f64> = raw.iter().map(|v| v / s).collect();
        prop_assert!(mutual_information(&joint, 3, 4).unwrap() >= -1e-12);
    }

    #[test]
    fn sgd_momentum_zero_is_plain_descent(p in prop::collection::vec(-10.0f64..10.0, 1..8), lr in 0.0f64..1.0) {
        let g: Vec<f64> = p.iter().map(|x| x * 0.5 - 1.0).collect();
        let mut q = p.clone();
        let mut v = vec![0.0; p.len()];
        sgd_update(&mut q, &g, &mut v, lr, 0.0).unwrap();
        for i in 0..p.len() {
            prop_assert_eq!(q[i], p[i] - lr * g[i]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn information_identities(seed in any::<u64>(), zs in 1usize..4, v in 2usize..5, horizon in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DiscreteSequenceModel::random(&mut rng, zs, v, horizon, 0.02).unwrap();
        let curve = info_curve(&m, horizon, 0.01, |t| t as f64 / horizon as f64).unwrap();
        prop_assert!(curve.chain_rules_hold());
        prop_assert!(curve.visual_mi_bound_holds());
        prop_assert_eq!(curve.entropy_growth_holds(), Some(true));
        prop_assert!(curve.ratio_envelope_holds());
        prop_assert!(curve.rho_bound_holds().unwrap());
        for p in &curve.points {
            if let Some(rho0) = rho_vista(p.i_vis.max(0.0), p.i_cond.max(0.0), 0.0).ok().filter(|_| !p.ratio_undefined) {
                prop_assert!((rho0 - p.ratio).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), layers in 1usize..3, heads in 1usize..3) {
        let config = ModelConfig {
            vocab_size: 5,
            d_model: 4 * heads,
            n_layers: layers,
            n_heads: heads,
            n_image_tokens: 2,
            max_text_len: 3,
            d_image_feat: 3,
            seed,
        };
        let params = ModelParams::init(&config).unwrap();
        let bytes = checkpoint::to_bytes(&config, &params).unwrap();
        let (c2, p2) = checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&c2, &config);
        let bits = |p: &ModelParams| p.flatten().into_iter().map(f64::to_bits).collect::<Vec<_>>();
        prop_assert_eq!(bits(&p2), bits(&params));
        prop_assert_eq!(checkpoint::to_bytes(&c2, &p2).unwrap(), bytes);
    }

    #[test]
    fn softmax_gradients_match_differences(data in prop::collection::vec(-3.0f64..3.0, 6)) {
        let x = Tensor::matrix(2, 3, data).unwrap();
        let report = grad_check(
            |g: &mut Graph, v| {
                let s = g.log_softmax(v)?;
                let w = g.weighted_sum(s, vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4])?;
                Ok(w)
            },
            &x,
            1e-5,
        )
        .unwrap();
        prop_assert!(report.max_rel_err < 1e-6);
    }
}
