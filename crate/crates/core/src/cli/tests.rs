use super::*;
use crate::error::Error;
use crate::losses::{TextRepr, WeightScheme};
use crate::tensor::Tensor;
use crate::training::Variant;

#[test]
fn grey_levels() {
    assert_eq!(grey_level(1.0), 255);
    assert_eq!(grey_level(-1.0), 0);
    assert_eq!(grey_level(0.0), 128);
    assert_eq!(grey_level(1.0 + 1e-9), 255);
    assert_eq!(grey_level(-1.0 - 1e-9), 0);
    // 255·(s+1)/2 = 63.5 exactly rounds up.
    assert_eq!(grey_level(-0.501_960_784_313_725_5), 64);
}

#[test]
fn pgm_layout() {
    let h = Heatmap::new(2, 3, vec![1.0, 0.0, -1.0, 0.5, -0.5, 0.25]).unwrap();
    let pgm = h.to_pgm();
    let header = b"P5\n3 2\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(&pgm[header.len()..], &[255, 128, 0, 191, 64, 159]);
    assert!(Heatmap::new(2, 2, vec![0.0; 3]).is_err());
}

#[test]
fn heatmap_from_states_and_csv() {
    let text = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
    let image = Tensor::matrix(3, 2, vec![3.0, 0.0, 0.0, -1.0, 1.0, 1.0]).unwrap();
    let h = Heatmap::from_states(&text, &image).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let want = [1.0, 0.0, s, 0.0, -1.0, s];
    for (a, b) in h.values.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    let means = h.column_means();
    assert!((means[0] - 0.5).abs() < 1e-15 && (means[1] + 0.5).abs() < 1e-15 && (means[2] - s).abs() < 1e-15);

    let csv = h.to_csv(&["seed=3".into()]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# seed=3");
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1].split(',').count(), 3);
    let mean_lines: Vec<String> = h.means_csv(&[]).lines().map(String::from).collect();
    assert_eq!(mean_lines.len(), 1);
    let parsed: Vec<f64> = mean_lines[0].split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(parsed, means);

    let narrow = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
    assert!(matches!(Heatmap::from_states(&narrow, &image), Err(Error::Dimension(_))));
}

#[test]
fn config_defaults_and_sections() {
    let cfg = ExperimentConfig::parse("").unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    let text = r#"
[task]
latent_size = 4
seed = 9

[model]
vocab_size = 12
d_model = 16
n_heads = 4
max_text_len = 6

[train]
steps = 40
learning_rate = 0.01

[loss]
scheme = { uniform = 0.5 }
variant = "cosine"
text_repr = "hidden"
"#;
    let cfg = ExperimentConfig::parse(text).unwrap();
    let task = cfg.task_params();
    assert_eq!((task.latent_size, task.vocab_size, task.text_len, task.seed), (4, 12, 6, 9));
    let train = cfg.train_config();
    assert_eq!(train.steps, 40);
    assert_eq!(train.scheme, WeightScheme::Uniform(0.5));
    assert_eq!(train.variant, Variant::Cosine);
    assert_eq!(train.text_repr, TextRepr::Hidden);
    assert_eq!(train.model.d_model, 16);
    let linear = ExperimentConfig::parse("[loss]\nscheme = \"linear\"\n").unwrap();
    assert_eq!(linear.loss.scheme, WeightScheme::Linear);
}

#[test]
fn config_errors_are_parse_errors_with_lines() {
    let unknown = "[train]\nsteps = 10\nbogus = 1\n";
    match ExperimentConfig::parse(unknown) {
        Err(Error::Parse(msg)) => assert!(msg.contains("line 3") && msg.contains("bogus"), "{msg}"),
        other => panic!("{other:?}"),
    }
    match ExperimentConfig::parse("[model]\nd_model = \"wide\"\n") {
        Err(Error::Parse(msg)) => assert!(msg.contains("line 2"), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(ExperimentConfig::parse("[nope]\n"), Err(Error::Parse(_))));
    assert!(matches!(ExperimentConfig::parse("[train]\nsteps = 0\n"), Err(Error::Parse(_))));
    assert!(matches!(ExperimentConfig::parse("[model]\nd_model = 30\nn_heads = 4\n"), Err(Error::Parse(_))));
    assert!(matches!(ExperimentConfig::parse("[task]\ntext_len = 99\n"), Err(Error::Parse(_))));
    assert!(matches!(ExperimentConfig::parse("[loss]\nscheme = { uniform = -1.0 }\n"), Err(Error::Parse(_))));
}

#[test]
fn sha256_known_answer() {
    assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

#[test]
fn exit_codes() {
    assert_eq!(exit_code(&Error::Parse("x".into())), EXIT_PARSE);
    assert_eq!(exit_code(&Error::Divergence { step: 3, last_good: Some(2) }), EXIT_DIVERGENCE);
    assert_eq!(exit_code(&Error::Capacity("x".into())), EXIT_BUDGET);
    assert_eq!(exit_code(&Error::Mismatch("x".into())), EXIT_MISMATCH);
    assert_eq!(exit_code(&Error::Oversize("x".into())), EXIT_OVERSIZE);
    assert_eq!(exit_code(&Error::Dimension("x".into())), EXIT_PARSE);
    assert_eq!(run(["vista", "--version"]), EXIT_OK);
    assert_eq!(run(["vista", "frobnicate"]), EXIT_PARSE);
    assert_eq!(run(["vista", "train", "--config", "/nonexistent/x.toml", "--out", "/tmp/none"]), EXIT_PARSE);
}
