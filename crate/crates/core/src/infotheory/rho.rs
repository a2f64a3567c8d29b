use crate::error::{Error, Result};

fn check_mi(i_vis: f64, i_cond: f64) -> Result<()> {
    if !(i_vis >= 0.0 && i_cond >= 0.0 && i_vis.is_finite() && i_cond.is_finite()) {
        return Err(Error::Contract(format!(
            "information terms must be finite and non-negative, got {i_vis}, {i_cond}"
        )));
    }
    Ok(())
}

/// Visual share of information after boosting the visual term by `1+λ`:
/// `(1+λ)·I_vis / ((1+λ)·I_vis + I_cond)`.
pub fn rho_vista(i_vis: f64, i_cond: f64, lambda: f64) -> Result<f64> {
    check_mi(i_vis, i_cond)?;
    if !(lambda >= 0.0) {
        return Err(Error::Contract(format!("lambda must be >= 0, got {lambda}")));
    }
    if i_vis == 0.0 && i_cond == 0.0 {
        return Err(Error::Undefined("both information terms are zero".into()));
    }
    if lambda.is_infinite() {
        return Ok(if i_vis > 0.0 { 1.0 } else { 0.0 });
    }
    let boosted = (1.0 + lambda) * i_vis;
    Ok(boosted / (boosted + i_cond))
}

/// Both sides of the lower bound `ρ(λ = f) ≥ 1 / (1 + I_cond/(f·I_vis))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RhoBound {
    pub rho: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Slack allowed when comparing `ρ` against its bound.
pub const RHO_BOUND_SLACK: f64 = 1e-12;

pub fn rho_lower_bound_check(i_vis: f64, i_cond: f64, f_t: f64) -> Result<RhoBound> {
    check_mi(i_vis, i_cond)?;
    if !(f_t > 0.0) || !(i_vis > 0.0) {
        return Err(Error::Contract(format!("need f(t) > 0 and I_vis > 0, got {f_t}, {i_vis}")));
    }
    let rho = rho_vista(i_vis, i_cond, f_t)?;
    let bound = 1.0 / (1.0 + i_cond / (f_t * i_vis));
    Ok(RhoBound { rho, bound, holds: rho >= bound - RHO_BOUND_SLACK })
}

/// Result of inverting [`rho_vista`] for `λ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaSolution {
    pub lambda: f64,
    /// False when the unboosted share already reaches the target
    /// (`λ ≤ 0`).
    pub boost_needed: bool,
}

/// `λ = I_cond / ((1/ρ − 1)·I_vis) − 1`.
pub fn lambda_from_rho(rho_target: f64, i_vis: f64, i_cond: f64) -> Result<LambdaSolution> {
    check_mi(i_vis, i_cond)?;
    if !(rho_target > 0.0 && rho_target < 1.0) {
        return Err(Error::Contract(format!("target share must lie in (0,1), got {rho_target}")));
    }
    if !(i_vis > 0.0) {
        return Err(Error::Contract("I_vis must be positive".into()));
    }
    let lambda = i_cond / ((1.0 / rho_target - 1.0) * i_vis) - 1.0;
    Ok(LambdaSolution { lambda, boost_needed: lambda > 0.0 })
}
