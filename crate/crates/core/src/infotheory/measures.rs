use crate::error::{Error, Result};

const DIST_TOL: f64 = 1e-9;

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    if let Some(v) = dist.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::Contract(format!("probability entry {v} is negative or non-finite")));
    }
    let s: f64 = dist.iter().sum();
    if (s - 1.0).abs() > DIST_TOL {
        return Err(Error::Contract(format!("distribution sums to {s}")));
    }
    Ok(entropy_unchecked(dist))
}

pub(crate) fn entropy_unchecked(dist: &[f64]) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// `I(A;B) = H(A) + H(B) − H(A,B)` for a row-major `rows × cols` joint.
pub fn mutual_information(joint: &[f64], rows: usize, cols: usize) -> Result<f64> {
    if rows * cols != joint.len() || rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!("joint of {} for {rows}×{cols}", joint.len())));
    }
    let h_joint = entropy(joint)?;
    let (pa, pb) = marginals(joint, rows, cols);
    Ok(entropy_unchecked(&pa) + entropy_unchecked(&pb) - h_joint)
}

pub(crate) fn marginals(joint: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pa = vec![0.0; rows];
    let mut pb = vec![0.0; cols];
    for (r, row) in joint.chunks(cols).enumerate() {
        for (c, &p) in row.iter().enumerate() {
            pa[r] += p;
            pb[c] += p;
        }
    }
    (pa, pb)
}
