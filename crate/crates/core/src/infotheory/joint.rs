use super::DiscreteSequenceModel;
use crate::error::{Error, Result};

/// Largest `|Z|·|V|^t` table [`enumerate_joint`] will build.
pub const ENUMERATION_BUDGET: usize = 10_000_000;

/// Exact joint probabilities `p(z, x_1..x_t)` for every prefix length
/// `t = 1..=len`.
///
/// Table `t` is indexed `z·V^t + code`, where `code` reads `x_1..x_t` as a
/// base-`V` number with `x_1` most significant.
#[derive(Clone, Debug)]
pub struct JointTable {
    latent_size: usize,
    vocab_size: usize,
    tables: Vec<Vec<f64>>,
}

/// Number of cells `|Z|·|V|^t`, or `None` on overflow.
pub fn table_cells(latent_size: usize, vocab_size: usize, t: usize) -> Option<usize> {
    u32::try_from(t).ok().and_then(|t| vocab_size.checked_pow(t)).and_then(|v| v.checked_mul(latent_size))
}

pub fn enumerate_joint(model: &DiscreteSequenceModel, t: usize) -> Result<JointTable> {
    let (zs, v) = (model.latent_size(), model.vocab_size());
    if t == 0 {
        return Err(Error::Parameter("prefix length must be at least 1".into()));
    }
    match table_cells(zs, v, t) {
        Some(n) if n <= ENUMERATION_BUDGET => {}
        _ => return Err(Error::Capacity(format!("|Z|·|V|^t = {zs}·{v}^{t} exceeds {ENUMERATION_BUDGET} cells"))),
    }

    let mut tables = Vec::with_capacity(t);
    let mut first = vec![0.0; zs * v];
    for z in 0..zs {
        for x in 0..v {
            first[z * v + x] = model.prior()[z] * model.initial(z)[x];
        }
    }
    tables.push(first);
    for len in 1..t {
        let prev = &tables[len - 1];
        let width = prev.len() / zs;
        let mut next = vec![0.0; prev.len() * v];
        for z in 0..zs {
            for code in 0..width {
                let p = prev[z * width + code];
                let row = model.transition(z, code % v);
                let base = z * width * v + code * v;
                for (x, &q) in row.iter().enumerate() {
                    next[base + x] = p * q;
                }
            }
        }
        tables.push(next);
    }
    Ok(JointTable { latent_size: zs, vocab_size: v, tables })
}

impl JointTable {
    pub fn max_len(&self) -> usize {
        self.tables.len()
    }

    pub fn latent_size(&self) -> usize {
        self.latent_size
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// `p(z, x_1..x_t)`; see the type docs for indexing.
    pub fn table(&self, t: usize) -> &[f64] {
        &self.tables[t - 1]
    }

    /// `p(x_1..x_t)`, summing out `z`.
    pub fn text_marginal(&self, t: usize) -> Vec<f64> {
        let tab = self.table(t);
        let width = tab.len() / self.latent_size;
        let mut out = vec![0.0; width];
        for chunk in tab.chunks(width) {
            for (o, p) in out.iter_mut().zip(chunk) {
                *o += p;
            }
        }
        out
    }

    /// `p(z, x_t)` as a row-major `|Z| × |V|` matrix.
    pub fn latent_token_joint(&self, t: usize) -> Vec<f64> {
        let v = self.vocab_size;
        let tab = self.table(t);
        let width = tab.len() / self.latent_size;
        let mut out = vec![0.0; self.latent_size * v];
        for z in 0..self.latent_size {
            for code in 0..width {
                out[z * v + code % v] += tab[z * width + code];
            }
        }
        out
    }
}
