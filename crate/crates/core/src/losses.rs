//! Training objective: token cross-entropy plus the position-weighted
//! text-to-image alignment term.
//!
//! For each sequence with `m_eff` supervised tokens (re-indexed
//! `1..=m_eff`), the alignment term is
//!
//! ```text
//! (1/m_eff) · Σ_t f(t) · ‖x_t − s‖²          (L2 surrogate)
//! −(1/m_eff) · Σ_t f(t) · cos(x_t, s)        (cosine surrogate)
//! ```
//!
//! where `s` is the last image position's final hidden state and `f` is a
//! [`WeightScheme`]. Batch values are the mean over sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardOutput, MultimodalBatch};
use crate::tensor::{Graph, Tensor, Var};

/// Norm floor used by the cosine surrogate.
pub const COSINE_EPS: f64 = 1e-12;

/// Position weighting `f(t)` over supervised tokens `1..=m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    /// `f(t) = t/m`.
    Normalized,
    /// `f(t) = t`.
    Linear,
    /// `f(t) = c`; `c = 0` switches the alignment term off.
    Uniform(f64),
}

impl WeightScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightScheme::Uniform(c) if !(c >= 0.0 && c.is_finite()) => {
                Err(Error::Parameter(format!("uniform weight must be finite and >= 0, got {c}")))
            }
            _ => Ok(()),
        }
    }

    /// True when every weight is zero.
    pub fn is_off(&self) -> bool {
        matches!(self, WeightScheme::Uniform(c) if *c == 0.0)
    }
}

/// Surrogate used for the alignment term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surrogate {
    L2,
    Cosine,
}

/// Which text representation is pulled toward the image summary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextRepr {
    /// Token-embedding table output.
    #[default]
    Embedding,
    /// Last decoder layer at the token's own position.
    Hidden,
}

/// `f(t)` for 1-based position `t` of `m`.
pub fn vista_weight(t: usize, m: usize, scheme: WeightScheme) -> Result<f64> {
    if t == 0 || t > m {
        return Err(Error::Contract(format!("position {t} outside 1..={m}")));
    }
    Ok(match scheme {
        WeightScheme::Normalized => t as f64 / m as f64,
        WeightScheme::Linear => t as f64,
        WeightScheme::Uniform(c) => c,
    })
}

/// `[f(1), …, f(m)]`.
pub fn vista_weights(m: usize, scheme: WeightScheme) -> Result<Vec<f64>> {
    (1..=m).map(|t| vista_weight(t, m, scheme)).collect()
}

/// Correctly rounded sum (Shewchuk's partials).
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    // Round the partials to nearest, fixing the half-way case.
    let Some(mut hi) = partials.pop() else { return 0.0 };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

/// Mean of `f(1..=m)`, summed exactly.
pub fn mean_weight(m: usize, scheme: WeightScheme) -> Result<f64> {
    Ok(exact_sum(vista_weights(m, scheme)?) / m as f64)
}

/// Scalar summary of one loss evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub ce: f64,
    pub vista: f64,
    pub total: f64,
    /// `f(1..=m)` over the full text length.
    pub weights: Vec<f64>,
    pub supervised_count: usize,
}

/// Graph nodes of a composite loss.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub ce: Var,
    pub vista: Option<Var>,
    pub total: Var,
}

/// Options of [`total_loss`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub scheme: WeightScheme,
    /// `None` trains with cross-entropy only.
    pub surrogate: Option<Surrogate>,
    pub text_repr: TextRepr,
    /// Extra multiplier on the alignment term, for ablations only.
    pub vista_scale: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            scheme: WeightScheme::Normalized,
            surrogate: Some(Surrogate::L2),
            text_repr: TextRepr::Embedding,
            vista_scale: 1.0,
        }
    }
}

fn check_mask(mask: &[bool], rows: usize, width: usize) -> Result<()> {
    if mask.len() != rows * width {
        return Err(Error::Dimension(format!("mask of {} for {rows}×{width}", mask.len())));
    }
    if !mask.iter().any(|&b| b) {
        return Err(Error::Contract("loss mask selects no tokens".into()));
    }
    Ok(())
}

/// Mean over supervised positions of `−log softmax(logits)[target]`.
///
/// `logits` is `[batch·m, V]`; `targets` and `mask` are `batch·m` long.
pub fn cross_entropy(graph: &mut Graph, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
    let (rows, vocab) = {
        let t = graph.value(logits);
        (t.rows(), t.last_dim())
    };
    if targets.len() != rows {
        return Err(Error::Dimension(format!("{} targets for {rows} logit rows", targets.len())));
    }
    check_mask(mask, rows, 1)?;
    let mut flat = Vec::new();
    for (r, (&tgt, &keep)) in targets.iter().zip(mask).enumerate() {
        if tgt >= vocab {
            return Err(Error::Index(format!("target {tgt} outside vocabulary of {vocab}")));
        }
        if keep {
            flat.push(r * vocab + tgt);
        }
    }
    let k = flat.len() as f64;
    let logp = graph.log_softmax(logits)?;
    let picked = graph.pick(logp, flat)?;
    let n = graph.value(picked).numel();
    graph.weighted_sum(picked, vec![-1.0 / k; n])
}

/// Per-row weights `f(t_eff)/(m_eff·B_eff)` for a `[batch, m]` mask, zero on
/// unsupervised positions. `B_eff` counts rows with a supervised token.
pub fn alignment_row_weights(mask: &[bool], text_len: usize, scheme: WeightScheme) -> Result<Vec<f64>> {
    scheme.validate()?;
    if text_len == 0 || !mask.len().is_multiple_of(text_len) {
        return Err(Error::Dimension(format!("mask of {} for text length {text_len}", mask.len())));
    }
    let rows_used = mask.chunks(text_len).filter(|r| r.iter().any(|&b| b)).count();
    if rows_used == 0 {
        return Err(Error::Contract("loss mask selects no tokens".into()));
    }
    let mut out = vec![0.0; mask.len()];
    for (row, w) in mask.chunks(text_len).zip(out.chunks_mut(text_len)) {
        let m_eff = row.iter().filter(|&&b| b).count();
        let mut t_eff = 0;
        for (keep, slot) in row.iter().zip(w.iter_mut()) {
            if *keep {
                t_eff += 1;
                *slot = vista_weight(t_eff, m_eff, scheme)? / (m_eff * rows_used) as f64;
            }
        }
    }
    Ok(out)
}

fn broadcast_summary(graph: &mut Graph, image_summary: Var, batch: usize, text_len: usize) -> Result<Var> {
    let ids: Vec<usize> = (0..batch).flat_map(|b| std::iter::repeat_n(b, text_len)).collect();
    graph.gather_rows(image_summary, &ids)
}

fn alignment_dims(graph: &Graph, text_repr: Var, image_summary: Var, mask: &[bool]) -> Result<(usize, usize)> {
    let (tr, s) = (graph.value(text_repr), graph.value(image_summary));
    if tr.last_dim() != s.last_dim() {
        return Err(Error::Dimension(format!("text width {} vs image summary width {}", tr.last_dim(), s.last_dim())));
    }
    let batch = s.rows();
    if tr.rows() % batch != 0 || mask.len() != tr.rows() {
        return Err(Error::Dimension(format!(
            "{} text rows / {} mask entries for batch {batch}",
            tr.rows(),
            mask.len()
        )));
    }
    Ok((batch, tr.rows() / batch))
}

/// L2 alignment term over `text_repr` `[batch·m, d]` and `image_summary`
/// `[batch, d]`.
pub fn vista_l2_loss(
    graph: &mut Graph,
    text_repr: Var,
    image_summary: Var,
    mask: &[bool],
    scheme: WeightScheme,
) -> Result<Var> {
    let (batch, m) = alignment_dims(graph, text_repr, image_summary, mask)?;
    let weights = alignment_row_weights(mask, m, scheme)?;
    let s = broadcast_summary(graph, image_summary, batch, m)?;
    let dist = graph.row_squared_l2(text_repr, s)?;
    graph.weighted_sum(dist, weights)
}

/// Cosine alignment term; same layout as [`vista_l2_loss`].
pub fn vista_cosine_loss(
    graph: &mut Graph,
    text_repr: Var,
    image_summary: Var,
    mask: &[bool],
    scheme: WeightScheme,
) -> Result<Var> {
    let (batch, m) = alignment_dims(graph, text_repr, image_summary, mask)?;
    let weights = alignment_row_weights(mask, m, scheme)?.into_iter().map(|w| -w).collect();
    let s = broadcast_summary(graph, image_summary, batch, m)?;
    let cos = graph.row_cosine(text_repr, s, COSINE_EPS)?;
    graph.weighted_sum(cos, weights)
}

/// Cross-entropy plus alignment term; `total` is a single sum node.
pub fn total_loss(
    graph: &mut Graph,
    forward: &ForwardOutput,
    batch: &MultimodalBatch,
    config: &LossConfig,
) -> Result<(LossNodes, LossReport)> {
    config.scheme.validate()?;
    let ce = cross_entropy(graph, forward.logits, batch.text_ids(), batch.loss_mask())?;
    let vista = match config.surrogate {
        None => None,
        Some(surrogate) => {
            let text = match config.text_repr {
                TextRepr::Embedding => forward.text_embeddings,
                TextRepr::Hidden => forward.text_hidden,
            };
            let mask = batch.loss_mask();
            let v = match surrogate {
                Surrogate::L2 => vista_l2_loss(graph, text, forward.image_summary, mask, config.scheme)?,
                Surrogate::Cosine => vista_cosine_loss(graph, text, forward.image_summary, mask, config.scheme)?,
            };
            Some(if config.vista_scale == 1.0 { v } else { graph.scale(v, config.vista_scale)? })
        }
    };
    let total = match vista {
        Some(v) => graph.add(ce, v)?,
        None => ce,
    };
    let ce_value = graph.value(ce).item()?;
    let vista_value = match vista {
        Some(v) => graph.value(v).item()?,
        None => 0.0,
    };
    let report = LossReport {
        ce: ce_value,
        vista: vista_value,
        total: graph.value(total).item()?,
        weights: vista_weights(forward.text_len, config.scheme)?,
        supervised_count: batch.loss_mask().iter().filter(|&&b| b).count(),
    };
    Ok((LossNodes { ce, vista, total }, report))
}

/// Value-only L2 alignment term on plain tensors (`[batch·m, d]`, `[batch, d]`).
pub fn vista_l2_value(text_repr: &Tensor, image_summary: &Tensor, mask: &[bool], scheme: WeightScheme) -> Result<f64> {
    let mut g = Graph::new();
    let t = g.constant(text_repr.clone());
    let s = g.constant(image_summary.clone());
    let out = vista_l2_loss(&mut g, t, s, mask, scheme)?;
    g.value(out).item()
}

/// Value-only cosine alignment term.
pub fn vista_cosine_value(
    text_repr: &Tensor,
    image_summary: &Tensor,
    mask: &[bool],
    scheme: WeightScheme,
) -> Result<f64> {
    let mut g = Graph::new();
    let t = g.constant(text_repr.clone());
    let s = g.constant(image_summary.clone());
    let out = vista_cosine_loss(&mut g, t, s, mask, scheme)?;
    g.value(out).item()
}

#[cfg(test)]
mod tests;
