use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Per-layer weights of a pre-norm decoder block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights<T> {
    pub ln1_gain: T,
    pub ln1_bias: T,
    pub wq: T,
    pub wk: T,
    pub wv: T,
    pub wo: T,
    pub ln2_gain: T,
    pub ln2_bias: T,
    pub mlp_in: T,
    pub mlp_in_bias: T,
    pub mlp_out: T,
    pub mlp_out_bias: T,
}

/// Every weight of the model. `T` is [`Tensor`] for storage and [`Var`]
/// once loaded into a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    pub connector_w1: T,
    pub connector_b1: T,
    pub connector_w2: T,
    pub connector_b2: T,
    pub token_embedding: T,
    pub position_embedding: T,
    pub blocks: Vec<BlockWeights<T>>,
    pub final_gain: T,
    pub final_bias: T,
    pub head: T,
}

pub type ModelParams = Weights<Tensor>;

const BLOCK_FIELDS: [&str; 12] = [
    "ln1.gain",
    "ln1.bias",
    "attn.wq",
    "attn.wk",
    "attn.wv",
    "attn.wo",
    "ln2.gain",
    "ln2.bias",
    "mlp.w_in",
    "mlp.b_in",
    "mlp.w_out",
    "mlp.b_out",
];

impl<T> Weights<T> {
    /// References in canonical order (the order of [`param_layout`]).
    pub fn ordered(&self) -> Vec<&T> {
        let mut out = vec![
            &self.connector_w1,
            &self.connector_b1,
            &self.connector_w2,
            &self.connector_b2,
            &self.token_embedding,
            &self.position_embedding,
        ];
        for b in &self.blocks {
            out.extend([
                &b.ln1_gain,
                &b.ln1_bias,
                &b.wq,
                &b.wk,
                &b.wv,
                &b.wo,
                &b.ln2_gain,
                &b.ln2_bias,
                &b.mlp_in,
                &b.mlp_in_bias,
                &b.mlp_out,
                &b.mlp_out_bias,
            ]);
        }
        out.extend([&self.final_gain, &self.final_bias, &self.head]);
        out
    }

    pub fn ordered_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![
            &mut self.connector_w1,
            &mut self.connector_b1,
            &mut self.connector_w2,
            &mut self.connector_b2,
            &mut self.token_embedding,
            &mut self.position_embedding,
        ];
        for b in &mut self.blocks {
            out.extend([
                &mut b.ln1_gain,
                &mut b.ln1_bias,
                &mut b.wq,
                &mut b.wk,
                &mut b.wv,
                &mut b.wo,
                &mut b.ln2_gain,
                &mut b.ln2_bias,
                &mut b.mlp_in,
                &mut b.mlp_in_bias,
                &mut b.mlp_out,
                &mut b.mlp_out_bias,
            ]);
        }
        out.extend([&mut self.final_gain, &mut self.final_bias, &mut self.head]);
        out
    }

    /// Rebuilds from values in canonical order.
    pub fn from_ordered(n_layers: usize, items: impl IntoIterator<Item = T>) -> Result<Self> {
        let mut it = items.into_iter();
        let mut next = || it.next().ok_or_else(|| Error::Dimension("too few parameter values".into()));
        let connector_w1 = next()?;
        let connector_b1 = next()?;
        let connector_w2 = next()?;
        let connector_b2 = next()?;
        let token_embedding = next()?;
        let position_embedding = next()?;
        let mut blocks = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            blocks.push(BlockWeights {
                ln1_gain: next()?,
                ln1_bias: next()?,
                wq: next()?,
                wk: next()?,
                wv: next()?,
                wo: next()?,
                ln2_gain: next()?,
                ln2_bias: next()?,
                mlp_in: next()?,
                mlp_in_bias: next()?,
                mlp_out: next()?,
                mlp_out_bias: next()?,
            });
        }
        let final_gain = next()?;
        let final_bias = next()?;
        let head = next()?;
        if it.next().is_some() {
            return Err(Error::Dimension("too many parameter values".into()));
        }
        Ok(Self {
            connector_w1,
            connector_b1,
            connector_w2,
            connector_b2,
            token_embedding,
            position_embedding,
            blocks,
            final_gain,
            final_bias,
            head,
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Weights<U> {
        let n_layers = self.blocks.len();
        Weights::from_ordered(n_layers, self.ordered().into_iter().map(&mut f)).expect("same layout")
    }
}

/// How a tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal { std: f64 },
}

/// One entry of the canonical parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Canonical parameter list for a configuration.
///
/// Matrices are Gaussian with std `1/sqrt(fan_in)`; the two residual
/// output projections of every block are further scaled by
/// `1/sqrt(2·n_layers)`. Embedding tables use std `1/sqrt(d_model)`.
pub fn param_layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let (d, f, v) = (config.d_model, config.d_image_feat, config.vocab_size);
    let ff = config.d_ff();
    let residual = 1.0 / ((2 * config.n_layers) as f64).sqrt();
    let spec = |name: String, shape: Vec<usize>, init: Init| ParamSpec { name, shape, init };
    let dense = |fan_in: usize| Init::Normal { std: 1.0 / (fan_in as f64).sqrt() };
    let embed = Init::Normal { std: 1.0 / (d as f64).sqrt() };

    let mut out = vec![
        spec("connector.w1".into(), vec![f, d], dense(f)),
        spec("connector.b1".into(), vec![d], Init::Zeros),
        spec("connector.w2".into(), vec![d, d], dense(d)),
        spec("connector.b2".into(), vec![d], Init::Zeros),
        spec("embed.tokens".into(), vec![v, d], embed),
        spec("embed.positions".into(), vec![config.max_seq_len(), d], embed),
    ];
    let block = [
        (vec![d], Init::Ones),
        (vec![d], Init::Zeros),
        (vec![d, d], dense(d)),
        (vec![d, d], dense(d)),
        (vec![d, d], dense(d)),
        (vec![d, d], Init::Normal { std: residual / (d as f64).sqrt() }),
        (vec![d], Init::Ones),
        (vec![d], Init::Zeros),
        (vec![d, ff], dense(d)),
        (vec![ff], Init::Zeros),
        (vec![ff, d], Init::Normal { std: residual / (ff as f64).sqrt() }),
        (vec![d], Init::Zeros),
    ];
    for l in 0..config.n_layers {
        for (field, (shape, init)) in BLOCK_FIELDS.iter().zip(&block) {
            out.push(spec(format!("blocks.{l}.{field}"), shape.clone(), *init));
        }
    }
    out.push(spec("final_norm.gain".into(), vec![d], Init::Ones));
    out.push(spec("final_norm.bias".into(), vec![d], Init::Zeros));
    out.push(spec("head.weight".into(), vec![d, v], dense(d)));
    out
}

impl ModelParams {
    /// Seeded initialization following [`param_layout`].
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tensors = param_layout(config).into_iter().map(|p| {
            let n: usize = p.shape.iter().product();
            let data = match p.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Normal { std } => (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * std
                    })
                    .collect(),
            };
            Tensor::from_parts(p.shape, data)
        });
        Self::from_ordered(config.n_layers, tensors)
    }

    pub fn num_params(&self) -> usize {
        self.ordered().iter().map(|t| t.numel()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.ordered() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`ModelParams::flatten`] using this instance's shapes.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension(format!("{} values for {} parameters", flat.len(), self.num_params())));
        }
        let mut offset = 0;
        Ok(self.map(|t| {
            let n = t.numel();
            let out = Tensor::from_parts(t.shape().to_vec(), flat[offset..offset + n].to_vec());
            offset += n;
            out
        }))
    }

    /// Checks every tensor against the layout implied by `config`.
    pub fn check_layout(&self, config: &ModelConfig) -> Result<()> {
        let layout = param_layout(config);
        let tensors = self.ordered();
        if layout.len() != tensors.len() {
            return Err(Error::Mismatch(format!("{} tensors, config implies {}", tensors.len(), layout.len())));
        }
        for (p, t) in layout.iter().zip(tensors) {
            if t.shape() != p.shape.as_slice() {
                return Err(Error::Mismatch(format!(
                    "{}: shape {:?}, config implies {:?}",
                    p.name,
                    t.shape(),
                    p.shape
                )));
            }
        }
        Ok(())
    }

    /// Places every tensor in `graph`, as trainable leaves or constants.
    pub fn load(&self, graph: &mut Graph, trainable: bool) -> Weights<Var> {
        self.map(|t| graph.leaf(t.clone(), trainable))
    }
}
