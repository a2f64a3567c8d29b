use super::{ModelConfig, ModelParams, Weights};
use crate::error::{Error, Result};
use crate::tensor::{AttentionShape, Graph, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// A batch of image-feature prefixes and text sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalBatch {
    batch: usize,
    n_image_tokens: usize,
    d_image_feat: usize,
    text_len: usize,
    /// `batch × n × d_image_feat`, row-major.
    image_features: Vec<f64>,
    /// `batch × m`, row-major.
    text_ids: Vec<usize>,
    /// `batch × m`; true where the token is supervised.
    loss_mask: Vec<bool>,
}

impl MultimodalBatch {
    pub fn new(
        batch: usize,
        n_image_tokens: usize,
        d_image_feat: usize,
        text_len: usize,
        image_features: Vec<f64>,
        text_ids: Vec<usize>,
        loss_mask: Vec<bool>,
    ) -> Result<Self> {
        if batch == 0 || n_image_tokens == 0 || d_image_feat == 0 || text_len == 0 {
            return Err(Error::Dimension("batch extents must all be at least 1".into()));
        }
        if image_features.len() != batch * n_image_tokens * d_image_feat {
            return Err(Error::Dimension(format!(
                "{} image feature values for {batch}×{n_image_tokens}×{d_image_feat}",
                image_features.len()
            )));
        }
        if text_ids.len() != batch * text_len || loss_mask.len() != batch * text_len {
            return Err(Error::Dimension(format!(
                "text ids/mask lengths {}/{} for {batch}×{text_len}",
                text_ids.len(),
                loss_mask.len()
            )));
        }
        if image_features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MultimodalBatch::new"));
        }
        Ok(Self { batch, n_image_tokens, d_image_feat, text_len, image_features, text_ids, loss_mask })
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn n_image_tokens(&self) -> usize {
        self.n_image_tokens
    }

    pub fn d_image_feat(&self) -> usize {
        self.d_image_feat
    }

    pub fn text_len(&self) -> usize {
        self.text_len
    }

    pub fn image_features(&self) -> &[f64] {
        &self.image_features
    }

    pub fn text_ids(&self) -> &[usize] {
        &self.text_ids
    }

    pub fn loss_mask(&self) -> &[bool] {
        &self.loss_mask
    }

    pub fn text_ids_mut(&mut self) -> &mut [usize] {
        &mut self.text_ids
    }

    pub fn image_features_mut(&mut self) -> &mut [f64] {
        &mut self.image_features
    }

    pub fn loss_mask_mut(&mut self) -> &mut [bool] {
        &mut self.loss_mask
    }

    /// Concatenates batches with identical per-row extents.
    pub fn concat(parts: &[MultimodalBatch]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Dimension("no batches to concat".into()))?;
        let mut out = first.clone();
        for p in &parts[1..] {
            if (p.n_image_tokens, p.d_image_feat, p.text_len)
                != (first.n_image_tokens, first.d_image_feat, first.text_len)
            {
                return Err(Error::Dimension("batch extents differ".into()));
            }
            out.batch += p.batch;
            out.image_features.extend_from_slice(&p.image_features);
            out.text_ids.extend_from_slice(&p.text_ids);
            out.loss_mask.extend_from_slice(&p.loss_mask);
        }
        Ok(out)
    }

    /// Rows `start..end` as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.batch {
            return Err(Error::Index(format!("slice {start}..{end} of {} rows", self.batch)));
        }
        let f = self.n_image_tokens * self.d_image_feat;
        let m = self.text_len;
        Self::new(
            end - start,
            self.n_image_tokens,
            self.d_image_feat,
            m,
            self.image_features[start * f..end * f].to_vec(),
            self.text_ids[start * m..end * m].to_vec(),
            self.loss_mask[start * m..end * m].to_vec(),
        )
    }
}

/// Graph handles produced by [`forward`]. All are 2-D with row index
/// `b·rows_per_example + position`.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `[batch·m, V]`; row `t` predicts text token `t`.
    pub logits: Var,
    /// `[batch·n, d]`, last decoder layer at image positions.
    pub image_hidden: Var,
    /// `[batch, d]`, the last image position of `image_hidden`.
    pub image_summary: Var,
    /// `[batch·m, d]`, token-embedding table output.
    pub text_embeddings: Var,
    /// `[batch·m, d]`, last decoder layer at text positions.
    pub text_hidden: Var,
    pub batch: usize,
    pub n_image_tokens: usize,
    pub text_len: usize,
}

/// Projector nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Identity,
}

/// Attention visibility for `n` image positions followed by `m` text
/// positions: causal, except that the image prefix sees itself entirely.
pub fn build_causal_mask(n: usize, m: usize) -> Vec<Vec<bool>> {
    let size = n + m;
    (0..size).map(|i| (0..size).map(|j| j <= i || (i < n && j < n)).collect()).collect()
}

/// Two-layer connector `act(x·W1 + b1)·W2 + b2` over `[rows, d_image_feat]`.
pub fn project_image(graph: &mut Graph, features: Var, weights: &Weights<Var>, activation: Activation) -> Result<Var> {
    let h = graph.matmul(features, weights.connector_w1)?;
    let h = graph.add_bias(h, weights.connector_b1)?;
    let h = match activation {
        Activation::Gelu => graph.gelu(h)?,
        Activation::Identity => h,
    };
    let h = graph.matmul(h, weights.connector_w2)?;
    graph.add_bias(h, weights.connector_b2)
}

fn check_batch(config: &ModelConfig, batch: &MultimodalBatch) -> Result<()> {
    if batch.n_image_tokens != config.n_image_tokens || batch.d_image_feat != config.d_image_feat {
        return Err(Error::Dimension(format!(
            "batch image extents {}×{} but model expects {}×{}",
            batch.n_image_tokens, batch.d_image_feat, config.n_image_tokens, config.d_image_feat
        )));
    }
    if batch.text_len > config.max_text_len {
        return Err(Error::Dimension(format!(
            "text length {} exceeds max_text_len {}",
            batch.text_len, config.max_text_len
        )));
    }
    if let Some(&bad) = batch.text_ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(Error::Index(format!("token id {bad} outside vocabulary of {}", config.vocab_size)));
    }
    Ok(())
}

/// Runs the decoder over `[image prefix; text]` for every row of `batch`.
pub fn forward(
    graph: &mut Graph,
    config: &ModelConfig,
    weights: &Weights<Var>,
    batch: &MultimodalBatch,
) -> Result<ForwardOutput> {
    check_batch(config, batch)?;
    let (bsz, n, m) = (batch.batch, batch.n_image_tokens, batch.text_len);
    let seq = n + m;
    let d = config.d_model;

    let feats = graph.constant(Tensor::new(vec![bsz * n, batch.d_image_feat], batch.image_features.clone())?);
    let image_tokens = project_image(graph, feats, weights, Activation::Gelu)?;
    let text_embeddings = graph.gather_rows(weights.token_embedding, &batch.text_ids)?;

    // Interleave per example: [image rows of b; text rows of b].
    let stacked = graph.concat_rows(image_tokens, text_embeddings)?;
    let order: Vec<usize> =
        (0..bsz).flat_map(|b| (0..n).map(move |i| b * n + i).chain((0..m).map(move |t| bsz * n + b * m + t))).collect();
    let tokens = graph.gather_rows(stacked, &order)?;
    let positions: Vec<usize> = (0..bsz).flat_map(|_| 0..seq).collect();
    let pos = graph.gather_rows(weights.position_embedding, &positions)?;
    let mut h = graph.add(tokens, pos)?;

    let visible: Vec<bool> = build_causal_mask(n, m).into_iter().flatten().collect();
    let shape = AttentionShape { batch: bsz, seq, heads: config.n_heads, visible };
    for block in &weights.blocks {
        let a = graph.layer_norm(h, block.ln1_gain, block.ln1_bias, LN_EPS)?;
        let q = graph.matmul(a, block.wq)?;
        let k = graph.matmul(a, block.wk)?;
        let v = graph.matmul(a, block.wv)?;
        let att = graph.attention(q, k, v, shape.clone())?;
        let o = graph.matmul(att, block.wo)?;
        h = graph.add(h, o)?;

        let a = graph.layer_norm(h, block.ln2_gain, block.ln2_bias, LN_EPS)?;
        let f = graph.matmul(a, block.mlp_in)?;
        let f = graph.add_bias(f, block.mlp_in_bias)?;
        let f = graph.gelu(f)?;
        let f = graph.matmul(f, block.mlp_out)?;
        let f = graph.add_bias(f, block.mlp_out_bias)?;
        h = graph.add(h, f)?;
    }
    debug_assert_eq!(graph.value(h).shape(), &[bsz * seq, d]);

    let rows = |f: &dyn Fn(usize) -> Vec<usize>| -> Vec<usize> { (0..bsz).flat_map(f).collect() };
    let image_hidden = graph.gather_rows(h, &rows(&|b| (0..n).map(|i| b * seq + i).collect()))?;
    let image_summary = graph.gather_rows(h, &rows(&|b| vec![b * seq + n - 1]))?;
    let text_hidden = graph.gather_rows(h, &rows(&|b| (0..m).map(|t| b * seq + n + t).collect()))?;

    // Token t is predicted from the state one position before it; for the
    // first token that is the last image position.
    let predictors = graph.gather_rows(h, &rows(&|b| (0..m).map(|t| b * seq + n - 1 + t).collect()))?;
    let z = graph.layer_norm(predictors, weights.final_gain, weights.final_bias, LN_EPS)?;
    let logits = graph.matmul(z, weights.head)?;

    Ok(ForwardOutput {
        logits,
        image_hidden,
        image_summary,
        text_embeddings,
        text_hidden,
        batch: bsz,
        n_image_tokens: n,
        text_len: m,
    })
}

/// Plain values of a forward pass, detached from any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardValues {
    pub logits: Tensor,
    pub image_hidden: Tensor,
    pub image_summary: Tensor,
    pub text_embeddings: Tensor,
    pub text_hidden: Tensor,
}

impl ForwardOutput {
    pub fn values(&self, graph: &Graph) -> ForwardValues {
        ForwardValues {
            logits: graph.value(self.logits).clone(),
            image_hidden: graph.value(self.image_hidden).clone(),
            image_summary: graph.value(self.image_summary).clone(),
            text_embeddings: graph.value(self.text_embeddings).clone(),
            text_hidden: graph.value(self.text_hidden).clone(),
        }
    }
}

/// Forward pass without differentiation.
pub fn infer(config: &ModelConfig, params: &ModelParams, batch: &MultimodalBatch) -> Result<ForwardValues> {
    let mut graph = Graph::new();
    let weights = params.load(&mut graph, false);
    let out = forward(&mut graph, config, &weights, batch)?;
    Ok(out.values(&graph))
}
