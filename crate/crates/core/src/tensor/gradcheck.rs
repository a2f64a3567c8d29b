use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − numeric| / max(1, |analytic|).
    pub max_rel_err: f64,
    /// Coordinate where the maximum was attained.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = f(&mut g, xv)?;
    g.value(out).item()
}

/// Compares reverse-mode gradients of the scalar function `f` at `x`
/// against central differences with step `h`.
///
/// `f` receives a fresh graph and the leaf holding `x`, and returns the
/// scalar output node.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Parameter(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }

    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let out = f(&mut g, xv)?;
    let base = g.value(out).item()?;
    g.backward(out)?;
    let analytic = g.grad(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);

    let again = eval(&f, x)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Contract(format!("function is not deterministic: {base} then {again}")));
    }

    let mut numeric = Vec::with_capacity(x.numel());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((plus - minus) / (2.0 * h));
    }

    let (worst_index, max_rel_err) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .enumerate()
        .fold((0, 0.0_f64), |best, (i, e)| if e > best.1 { (i, e) } else { best });

    Ok(GradCheckReport { max_rel_err, worst_index, analytic, numeric })
}
