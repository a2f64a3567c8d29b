use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{sha256_hex, ExperimentConfig};
use super::heatmap::Heatmap;
use crate::error::{Error, Result};
use crate::infotheory::{info_curve, DiscreteSequenceModel};
use crate::losses::{total_loss, LossConfig, Surrogate, TextRepr, WeightScheme};
use crate::model::{checkpoint, forward, infer, ModelConfig, ModelParams, MultimodalBatch};
use crate::tensor::{grad_check, Tensor};
use crate::training::{synth_batch, train, TaskParams, TaskSpec};
use crate::VERSION;

/// Largest model `gradcheck` accepts.
pub const GRADCHECK_MAX_PARAMS: usize = 50_000;
pub const GRADCHECK_TOL: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Stream the heatmap example is drawn from.
const HEATMAP_STREAM: u64 = 0x6865_6174;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))
}

fn read_config(path: &Path) -> Result<(ExperimentConfig, String)> {
    let bytes = read(path)?;
    let hash = sha256_hex(&bytes);
    let text = String::from_utf8(bytes).map_err(|_| Error::Parse(format!("{} is not UTF-8", path.display())))?;
    let cfg = ExperimentConfig::parse(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    Ok((cfg, hash))
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    config_sha256: &'a str,
    task_seed: u64,
    model_seed: u64,
    train_seed: u64,
    steps: usize,
    records: usize,
    checkpoint_sha256: String,
}

/// Writes `metrics.jsonl`, `final.ckpt` and `manifest.json` into `out_dir`.
pub fn cmd_train(config_path: &Path, out_dir: &Path) -> Result<()> {
    let (cfg, hash) = read_config(config_path)?;
    let task = cfg.task()?;
    let tc = cfg.train_config();
    let outcome = train(&task, &tc)?;
    fs::create_dir_all(out_dir)?;

    let mut metrics = format!("# vista {VERSION} config_sha256={hash}\n");
    metrics.push_str(&outcome.trace.to_jsonl());
    fs::write(out_dir.join("metrics.jsonl"), metrics)?;

    let ckpt = checkpoint::to_bytes(&tc.model, &outcome.params)?;
    fs::write(out_dir.join("final.ckpt"), &ckpt)?;

    let manifest = Manifest {
        version: VERSION,
        config_sha256: &hash,
        task_seed: cfg.task.seed,
        model_seed: cfg.model.seed,
        train_seed: cfg.train.seed,
        steps: tc.steps,
        records: outcome.trace.records.len(),
        checkpoint_sha256: sha256_hex(&ckpt),
    };
    let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    json.push('\n');
    fs::write(out_dir.join("manifest.json"), json)?;
    if let Some(last) = outcome.trace.last() {
        println!(
            "step {} ce {:.6} vista {:.6} mean_alignment {:.6} holdout_ce {:.6}",
            last.step, last.ce, last.vista, last.mean_alignment, last.holdout_ce
        );
    }
    Ok(())
}

/// Result line of a diagnostic or gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: String,
    /// `None` for a skipped check.
    pub pass: Option<bool>,
    pub detail: String,
}

impl CheckLine {
    fn new(name: impl Into<String>, pass: Option<bool>, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }

    pub fn render(&self) -> String {
        let tag = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        if self.detail.is_empty() {
            format!("{tag} {}", self.name)
        } else {
            format!("{tag} {} {}", self.name, self.detail)
        }
    }
}

fn all_pass(lines: &[CheckLine]) -> bool {
    lines.iter().all(|l| l.pass != Some(false))
}

/// Loads a builtin by name or a TOML model file, truncated or extended to
/// `horizon`.
pub fn load_discrete_model(spec: &str, horizon: usize) -> Result<(DiscreteSequenceModel, String)> {
    if DiscreteSequenceModel::BUILTINS.contains(&spec) {
        return Ok((DiscreteSequenceModel::builtin(spec, horizon)?, format!("builtin:{spec}")));
    }
    let bytes = read(Path::new(spec))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::Parse(format!("{spec} is not UTF-8")))?;
    let model = DiscreteSequenceModel::from_toml(&text)
        .map_err(|e| Error::Parse(format!("{spec}: {e}")))?
        .with_horizon(horizon)?;
    Ok((model, format!("sha256:{}", sha256_hex(&bytes))))
}

/// Writes the information curve CSV and returns the check lines.
pub fn cmd_diagnose(model_spec: &str, horizon: usize, epsilon: f64, out: &Path) -> Result<Vec<CheckLine>> {
    if horizon == 0 {
        return Err(Error::Parse("horizon must be at least 1".into()));
    }
    let (model, id) = load_discrete_model(model_spec, horizon)?;
    let curve = info_curve(&model, horizon, epsilon, |t| t as f64 / horizon as f64)?;

    let mut csv = format!("# vista {VERSION}\n# model={id} horizon={horizon} epsilon={epsilon:?} lambda=t/T\n");
    csv.push_str(&curve.to_csv());
    fs::write(out, csv)?;

    let mut lines = vec![CheckLine::new(
        "chain-rule",
        Some(curve.chain_rules_hold()),
        format!("entropy_residual={:e} mi_residual={:e}", curve.entropy_chain_residual, curve.mi_chain_residual),
    )];
    lines.push(match curve.entropy_growth_holds() {
        Some(ok) => CheckLine::new("entropy-growth", Some(ok), format!("delta_h={:e}", curve.delta_h)),
        None => CheckLine::new("entropy-growth", None, "degenerate model (some step has zero entropy)"),
    });
    lines.push(CheckLine::new(
        "visual-mi-bound",
        Some(curve.visual_mi_bound_holds()),
        format!("capacity={:e}", curve.capacity),
    ));
    lines.push(CheckLine::new("ratio-envelope", Some(curve.ratio_envelope_holds()), ""));
    lines.push(CheckLine::new("rho-lower-bound", Some(curve.rho_bound_holds()?), "lambda=t/T"));
    Ok(lines)
}

/// Writes `<prefix>.csv`, `<prefix>.mean.csv` and `<prefix>.pgm` for one
/// example drawn from the task with seed `task_seed`.
pub fn cmd_heatmap(ckpt: &Path, task_seed: u64, prefix: &Path, config: Option<&Path>) -> Result<Heatmap> {
    let bytes = read(ckpt)?;
    let (model, params) = checkpoint::from_bytes(&bytes)?;
    let ckpt_hash = sha256_hex(&bytes);
    let (task_params, text_repr, cfg_hash) = match config {
        Some(path) => {
            let (cfg, hash) = read_config(path)?;
            if cfg.model != model {
                return Err(Error::Mismatch(format!(
                    "checkpoint {} was not trained with the model in {}",
                    ckpt.display(),
                    path.display()
                )));
            }
            (TaskParams { seed: task_seed, ..cfg.task_params() }, cfg.loss.text_repr, Some(hash))
        }
        None => (TaskParams::for_model(&model, task_seed), TextRepr::Embedding, None),
    };
    let (map, latent) = sample_heatmap(&model, &params, task_params, text_repr)?;

    let mut meta = vec![
        format!("vista {VERSION}"),
        format!("checkpoint_sha256={ckpt_hash} task_seed={task_seed} latent={latent}"),
    ];
    if let Some(h) = cfg_hash {
        meta.push(format!("config_sha256={h}"));
    }
    let with_ext = |ext: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(ext);
        std::path::PathBuf::from(s)
    };
    meta.push(format!("rows=text positions ({}) cols=image positions ({})", map.rows, map.cols));
    fs::write(with_ext(".csv"), map.to_csv(&meta))?;
    meta.pop();
    meta.push(format!("mean over {} text positions, one value per image position", map.rows));
    fs::write(with_ext(".mean.csv"), map.means_csv(&meta))?;
    fs::write(with_ext(".pgm"), map.to_pgm())?;
    Ok(map)
}

/// Similarity map of one example drawn from the task described by
/// `task_params`; also returns the example's latent class.
pub fn sample_heatmap(
    model: &ModelConfig,
    params: &ModelParams,
    task_params: TaskParams,
    text_repr: TextRepr,
) -> Result<(Heatmap, usize)> {
    task_params.check_model(model)?;
    params.check_layout(model)?;
    let seed = task_params.seed;
    let task = TaskSpec::generate(task_params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(HEATMAP_STREAM);
    let example = synth_batch(&task, &mut rng, 1)?;
    let values = infer(model, params, &example.batch)?;
    let text = match text_repr {
        TextRepr::Embedding => &values.text_embeddings,
        TextRepr::Hidden => &values.text_hidden,
    };
    Ok((Heatmap::from_states(text, &values.image_hidden)?, example.latents[0]))
}

/// Small deterministic batch with one unsupervised token.
fn gradcheck_batch(cfg: &ExperimentConfig) -> Result<MultimodalBatch> {
    let task = cfg.task()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut batch = synth_batch(&task, &mut rng, 2)?.batch;
    let m = batch.text_len();
    if m > 1 {
        batch.loss_mask_mut()[2 * m - 1] = false;
    }
    Ok(batch)
}

/// Checks the total-loss gradient of every parameter for both surrogates
/// and each weighting scheme.
pub fn cmd_gradcheck(config_path: &Path, corrupt_backward: bool) -> Result<Vec<CheckLine>> {
    let (cfg, _) = read_config(config_path)?;
    let params = ModelParams::init(&cfg.model)?;
    if params.num_params() > GRADCHECK_MAX_PARAMS {
        return Err(Error::Oversize(format!(
            "{} parameters exceeds the gradient-check limit of {GRADCHECK_MAX_PARAMS}",
            params.num_params()
        )));
    }
    let batch = gradcheck_batch(&cfg)?;
    let tensors: Vec<Tensor> = params.ordered().into_iter().cloned().collect();
    let schemes =
        [WeightScheme::Normalized, WeightScheme::Linear, WeightScheme::Uniform(0.5), WeightScheme::Uniform(0.0)];
    let mut lines = Vec::new();
    for surrogate in [Surrogate::L2, Surrogate::Cosine] {
        for scheme in schemes {
            let name = format!("{surrogate:?}/{scheme:?}").to_lowercase();
            if scheme.is_off() {
                lines.push(CheckLine::new(name, None, "alignment term is identically zero"));
                continue;
            }
            let loss =
                LossConfig { scheme, surrogate: Some(surrogate), text_repr: cfg.loss.text_repr, vista_scale: 1.0 };
            let mut worst = 0.0_f64;
            for k in 0..tensors.len() {
                let report = grad_check(
                    |g, x| {
                        if corrupt_backward {
                            g.corrupt_backward(1.5);
                        }
                        let mut w = params.load(g, false);
                        *w.ordered_mut()[k] = x;
                        let out = forward(g, &cfg.model, &w, &batch)?;
                        Ok(total_loss(g, &out, &batch, &loss)?.0.total)
                    },
                    &tensors[k],
                    GRADCHECK_STEP,
                )?;
                worst = worst.max(report.max_rel_err);
            }
            lines.push(CheckLine::new(name, Some(worst < GRADCHECK_TOL), format!("max_rel_err={worst:e}")));
        }
    }
    Ok(lines)
}

pub(crate) fn report(lines: &[CheckLine]) -> bool {
    for l in lines {
        println!("{}", l.render());
    }
    all_pass(lines)
}
