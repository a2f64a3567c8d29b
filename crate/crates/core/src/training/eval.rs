use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{cross_entropy, TextRepr};
use crate::model::{forward, ModelConfig, ModelParams, MultimodalBatch};
use crate::tensor::{Graph, Tensor};

/// Alignment and held-out cross-entropy over a set of batches.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignmentReport {
    /// Mean over supervised tokens of `cos(x_t, s)`.
    pub mean_alignment: f64,
    /// Mean per text position; `NaN` where nothing is supervised.
    pub per_position: Vec<f64>,
    /// Token-weighted mean cross-entropy.
    pub ce: f64,
    pub supervised_count: usize,
}

/// `a·b / (max(‖a‖, eps) · max(‖b‖, eps))`.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(crate::losses::COSINE_EPS);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(crate::losses::COSINE_EPS);
    dot / (na * nb)
}

/// Per-token cosine between text representations `[batch·m, d]` and the
/// per-example summary `[batch, d]`, accumulated into position sums.
pub(crate) fn accumulate_alignment(
    text: &Tensor,
    summary: &Tensor,
    mask: &[bool],
    text_len: usize,
    sums: &mut [f64],
    counts: &mut [usize],
) {
    let d = summary.last_dim();
    for (row, &on) in mask.iter().enumerate() {
        if on {
            let b = row / text_len;
            let c = cosine(text.row(row), &summary.data()[b * d..(b + 1) * d]);
            sums[row % text_len] += c;
            counts[row % text_len] += 1;
        }
    }
}

/// Evaluates `params` on `batches` without building gradients.
pub fn eval_alignment(
    config: &ModelConfig,
    params: &ModelParams,
    batches: &[MultimodalBatch],
    text_repr: TextRepr,
) -> Result<AlignmentReport> {
    let first = batches.first().ok_or_else(|| Error::Contract("eval_alignment needs a batch".into()))?;
    let m = first.text_len();
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    let mut ce_sum = 0.0;
    for batch in batches {
        if batch.text_len() != m {
            return Err(Error::Dimension(format!("text length {} after {m}", batch.text_len())));
        }
        let mut graph = Graph::new();
        let weights = params.load(&mut graph, false);
        let out = forward(&mut graph, config, &weights, batch)?;
        let supervised = batch.loss_mask().iter().filter(|&&b| b).count();
        if supervised > 0 {
            let ce = cross_entropy(&mut graph, out.logits, batch.text_ids(), batch.loss_mask())?;
            ce_sum += graph.value(ce).item()? * supervised as f64;
        }
        let text = match text_repr {
            TextRepr::Embedding => out.text_embeddings,
            TextRepr::Hidden => out.text_hidden,
        };
        accumulate_alignment(
            graph.value(text),
            graph.value(out.image_summary),
            batch.loss_mask(),
            m,
            &mut sums,
            &mut counts,
        );
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Contract("no supervised tokens to evaluate".into()));
    }
    Ok(AlignmentReport {
        mean_alignment: sums.iter().sum::<f64>() / total as f64,
        per_position: sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN }).collect(),
        ce: ce_sum / total as f64,
        supervised_count: total,
    })
}
