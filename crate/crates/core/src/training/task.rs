use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infotheory::DiscreteSequenceModel;
use crate::model::{ModelConfig, MultimodalBatch};

/// Knobs of the synthetic captioning task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskParams {
    pub latent_size: usize,
    pub vocab_size: usize,
    pub text_len: usize,
    pub n_image_tokens: usize,
    pub d_image_feat: usize,
    pub noise_std: f64,
    /// Temperature-like scale of the random caption logits; larger values
    /// give peakier (lower-entropy) captions.
    pub caption_sharpness: f64,
    pub seed: u64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            latent_size: 8,
            vocab_size: 32,
            text_len: 16,
            n_image_tokens: 8,
            d_image_feat: 16,
            noise_std: 0.1,
            caption_sharpness: 2.0,
            seed: 0,
        }
    }
}

impl TaskParams {
    /// Task extents matching a model configuration.
    pub fn for_model(model: &ModelConfig, seed: u64) -> Self {
        Self {
            vocab_size: model.vocab_size,
            text_len: model.max_text_len,
            n_image_tokens: model.n_image_tokens,
            d_image_feat: model.d_image_feat,
            seed,
            ..Self::default()
        }
    }

    pub fn check_model(&self, model: &ModelConfig) -> Result<()> {
        if self.vocab_size != model.vocab_size
            || self.n_image_tokens != model.n_image_tokens
            || self.d_image_feat != model.d_image_feat
            || self.text_len > model.max_text_len
        {
            return Err(Error::Mismatch(format!(
                "task (V={}, n={}, feat={}, m={}) does not fit model (V={}, n={}, feat={}, m_max={})",
                self.vocab_size,
                self.n_image_tokens,
                self.d_image_feat,
                self.text_len,
                model.vocab_size,
                model.n_image_tokens,
                model.d_image_feat,
                model.max_text_len
            )));
        }
        Ok(())
    }
}

/// A concrete task: caption model keyed by the latent class plus the frozen
/// feature projection standing in for a vision encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub params: TaskParams,
    pub caption_model: DiscreteSequenceModel,
    /// `latent_size × n_image_tokens × d_image_feat`.
    projection: Vec<f64>,
}

fn softmax(logits: Vec<f64>) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    let mut p: Vec<f64> = e.into_iter().map(|v| v / z).collect();
    // Put the rounding residue on the largest entry so rows sum to 1.
    let residue = 1.0 - p.iter().sum::<f64>();
    if let Some(i) = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])) {
        p[i] += residue;
    }
    p
}

impl TaskSpec {
    pub fn generate(params: TaskParams) -> Result<Self> {
        if params.latent_size == 0
            || params.vocab_size < 2
            || params.text_len == 0
            || params.n_image_tokens == 0
            || params.d_image_feat == 0
        {
            return Err(Error::Parameter(
                "task needs latent_size, text_len, n_image_tokens, d_image_feat >= 1 and vocab_size >= 2".into(),
            ));
        }
        if !(params.noise_std >= 0.0 && params.noise_std.is_finite()) {
            return Err(Error::Parameter(format!("noise_std must be finite and >= 0, got {}", params.noise_std)));
        }
        if !(params.caption_sharpness >= 0.0 && params.caption_sharpness.is_finite()) {
            return Err(Error::Parameter("caption_sharpness must be finite and >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let (zs, v) = (params.latent_size, params.vocab_size);
        let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
        let dist =
            |gauss: &mut dyn FnMut() -> f64| softmax((0..v).map(|_| params.caption_sharpness * gauss()).collect());
        let prior = vec![1.0 / zs as f64; zs];
        let initial: Vec<Vec<f64>> = (0..zs).map(|_| dist(&mut gauss)).collect();
        let transition: Vec<Vec<Vec<f64>>> = (0..zs).map(|_| (0..v).map(|_| dist(&mut gauss)).collect()).collect();
        let caption_model = DiscreteSequenceModel::new(prior, initial, transition, params.text_len)?;
        let projection = (0..zs * params.n_image_tokens * params.d_image_feat).map(|_| gauss()).collect();
        Ok(Self { params, caption_model, projection })
    }

    /// Noise-free features of latent class `z`, `n × d_image_feat`.
    pub fn clean_features(&self, z: usize) -> &[f64] {
        let block = self.params.n_image_tokens * self.params.d_image_feat;
        &self.projection[z * block..(z + 1) * block]
    }
}

/// A batch plus the latent class of every row.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBatch {
    pub batch: MultimodalBatch,
    pub latents: Vec<usize>,
}

/// Draws `count` examples: `z` from the prior, features from the fixed
/// projection plus Gaussian noise, captions from the caption model. Every
/// text position is supervised.
pub fn synth_batch(task: &TaskSpec, rng: &mut ChaCha8Rng, count: usize) -> Result<SyntheticBatch> {
    let p = &task.params;
    let mut feats = Vec::with_capacity(count * p.n_image_tokens * p.d_image_feat);
    let mut ids = Vec::with_capacity(count * p.text_len);
    let mut latents = Vec::with_capacity(count);
    for _ in 0..count {
        let (z, text) = task.caption_model.sample(rng, p.text_len);
        for &base in task.clean_features(z) {
            let noise: f64 = if p.noise_std > 0.0 {
                let e: f64 = StandardNormal.sample(rng);
                p.noise_std * e
            } else {
                0.0
            };
            feats.push(base + noise);
        }
        ids.extend(text);
        latents.push(z);
    }
    let batch = MultimodalBatch::new(
        count,
        p.n_image_tokens,
        p.d_image_feat,
        p.text_len,
        feats,
        ids,
        vec![true; count * p.text_len],
    )?;
    Ok(SyntheticBatch { batch, latents })
}
