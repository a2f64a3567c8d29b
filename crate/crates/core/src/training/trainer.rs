use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::eval_alignment;
use super::optim::{sgd_step, MomentumState};
use super::task::{synth_batch, TaskSpec};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossConfig, Surrogate, TextRepr, WeightScheme};
use crate::model::{forward, ModelConfig, ModelParams, MultimodalBatch};
use crate::tensor::Graph;

/// Size of the fixed held-out evaluation set.
pub const HOLDOUT_SIZE: usize = 1024;

/// Held-out examples are evaluated in slices of this many rows.
const EVAL_CHUNK: usize = 128;

/// Stream offsets of the reserved probe and held-out seeds.
const PROBE_STREAM: u64 = 0x7072_6f62;
const HOLDOUT_STREAM: u64 = 0x686f_6c64;

/// Alignment term used during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    L2,
    Cosine,
    None,
}

impl Variant {
    pub fn surrogate(self) -> Option<Surrogate> {
        match self {
            Variant::L2 => Some(Surrogate::L2),
            Variant::Cosine => Some(Surrogate::Cosine),
            Variant::None => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub scheme: WeightScheme,
    pub variant: Variant,
    pub text_repr: TextRepr,
    pub vista_scale: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub eval_interval: usize,
    /// Seeds the training data stream and the probe batch.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            scheme: WeightScheme::Normalized,
            variant: Variant::L2,
            text_repr: TextRepr::Embedding,
            vista_scale: 1.0,
            steps: 5000,
            batch_size: 32,
            learning_rate: 3e-3,
            momentum: 0.9,
            eval_interval: 250,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            scheme: self.scheme,
            surrogate: self.variant.surrogate(),
            text_repr: self.text_repr,
            vista_scale: self.vista_scale,
        }
    }

    /// `learning_rate = 0` is accepted so frozen runs can be traced.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.scheme.validate()?;
        if self.steps == 0 || self.batch_size == 0 || self.eval_interval == 0 {
            return Err(Error::Parameter("steps, batch_size and eval_interval must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !self.vista_scale.is_finite() {
            return Err(Error::Parameter("vista_scale must be finite".into()));
        }
        Ok(())
    }
}

/// One eval point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub ce: f64,
    pub vista: f64,
    pub total: f64,
    pub mean_alignment: f64,
    pub holdout_ce: f64,
}

impl MetricsRecord {
    fn is_finite(&self) -> bool {
        [self.ce, self.vista, self.total, self.mean_alignment, self.holdout_ce].iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsTrace {
    pub records: Vec<MetricsRecord>,
}

impl MetricsTrace {
    pub fn first(&self) -> Option<&MetricsRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("metrics serialize"));
            out.push('\n');
        }
        out
    }

    /// Blank lines and `#` comment lines are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Parse(e.to_string())))
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trace: MetricsTrace,
    pub params: ModelParams,
}

/// The fixed held-out set of a task.
pub fn holdout_batches(task: &TaskSpec) -> Result<Vec<MultimodalBatch>> {
    let mut rng = ChaCha8Rng::seed_from_u64(task.params.seed);
    rng.set_stream(HOLDOUT_STREAM);
    let mut out = Vec::with_capacity(HOLDOUT_SIZE.div_ceil(EVAL_CHUNK));
    let mut left = HOLDOUT_SIZE;
    while left > 0 {
        let n = left.min(EVAL_CHUNK);
        out.push(synth_batch(task, &mut rng, n)?.batch);
        left -= n;
    }
    Ok(out)
}

fn record(
    step: usize,
    config: &TrainConfig,
    params: &ModelParams,
    probe: &MultimodalBatch,
    holdout: &[MultimodalBatch],
) -> Result<MetricsRecord> {
    let mut graph = Graph::new();
    let weights = params.load(&mut graph, false);
    let out = forward(&mut graph, &config.model, &weights, probe)?;
    let (_, report) = total_loss(&mut graph, &out, probe, &config.loss_config())?;
    let eval = eval_alignment(&config.model, params, holdout, config.text_repr)?;
    Ok(MetricsRecord {
        step,
        ce: report.ce,
        vista: report.vista,
        total: report.total,
        mean_alignment: eval.mean_alignment,
        holdout_ce: eval.ce,
    })
}

fn diverged(step: usize) -> Error {
    Error::Divergence { step, last_good: step.checked_sub(1) }
}

/// Trains from the seeded initialization. Metrics are taken at step 0,
/// every `eval_interval` steps and after the last update, on a fixed probe
/// batch and the held-out set.
pub fn train(task: &TaskSpec, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    task.params.check_model(&config.model)?;
    let mut params = ModelParams::init(&config.model)?;
    let mut state = MomentumState::zeros(&params);

    let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(config.seed);
    probe_rng.set_stream(PROBE_STREAM);
    let probe = synth_batch(task, &mut probe_rng, config.batch_size)?.batch;
    let holdout = holdout_batches(task)?;
    let loss_config = config.loss_config();

    let mut trace = MetricsTrace::default();
    let log = |step: usize, params: &ModelParams, trace: &mut MetricsTrace| -> Result<()> {
        let rec = match record(step, config, params, &probe, &holdout) {
            Err(Error::NonFinite(_)) => return Err(diverged(step)),
            other => other?,
        };
        if !rec.is_finite() {
            return Err(diverged(step));
        }
        trace.records.push(rec);
        Ok(())
    };

    for step in 0..config.steps {
        if step % config.eval_interval == 0 {
            log(step, &params, &mut trace)?;
        }
        let batch = synth_batch(task, &mut data_rng, config.batch_size)?.batch;
        let mut graph = Graph::new();
        let weights = params.load(&mut graph, true);
        let grads = (|| -> Result<Vec<Vec<f64>>> {
            let out = forward(&mut graph, &config.model, &weights, &batch)?;
            let (nodes, _) = total_loss(&mut graph, &out, &batch, &loss_config)?;
            graph.backward(nodes.total)?;
            Ok(weights
                .ordered()
                .into_iter()
                .map(|&v| match graph.grad(v) {
                    Some(g) => g.to_vec(),
                    None => vec![0.0; graph.value(v).numel()],
                })
                .collect())
        })();
        let grads = match grads {
            Err(Error::NonFinite(_)) => return Err(diverged(step)),
            other => other?,
        };
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(diverged(step));
        }
        sgd_step(&mut params, &grads, &mut state, config.learning_rate, config.momentum)?;
        if params.ordered().iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
            return Err(diverged(step));
        }
    }
    log(config.steps, &params, &mut trace)?;
    Ok(TrainOutcome { trace, params })
}
