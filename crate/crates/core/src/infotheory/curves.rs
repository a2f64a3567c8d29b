use super::measures::{entropy_unchecked, mutual_information};
use super::rho::{rho_lower_bound_check, rho_vista};
use super::{enumerate_joint, DiscreteSequenceModel, JointTable};
use crate::error::{Error, Result};

/// Default slack `ε` in the ratio envelope `C / (t·Δ_H − ε − C)`.
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Entropy below which a conditional step counts as deterministic.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Tolerance of the entropy and mutual-information chain rules.
pub const CHAIN_RULE_TOL: f64 = 1e-10;

/// Information quantities at one position `t` (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct InfoPoint {
    pub t: usize,
    /// `H(x_<t)`, entropy of the tokens before `t`.
    pub h_prefix: f64,
    /// `H(x_t | x_<t)`.
    pub h_step: f64,
    /// `I(x_t; z)`.
    pub i_vis: f64,
    /// `I(x_t; x_<t | z)`.
    pub i_cond: f64,
    /// `I(x_t; z, x_<t)`, computed on its own.
    pub i_total: f64,
    /// `I_vis / (I_vis + I_cond)`.
    pub ratio: f64,
    /// Both information terms were numerically zero; `ratio` is reported as 0.
    pub ratio_undefined: bool,
    /// Boosted share at the supplied `λ_t`; `None` when undefined.
    pub rho: Option<f64>,
    pub lambda: f64,
    /// `C / (t·Δ_H − ε − C)` once the denominator is positive.
    pub bound: Option<f64>,
}

/// Exact information curve of a discrete model over `t = 1..=T`.
#[derive(Clone, Debug)]
pub struct InfoCurve {
    pub points: Vec<InfoPoint>,
    /// `min_k H(x_k | x_<k)`.
    pub delta_h: f64,
    /// `C = ln |V|`.
    pub capacity: f64,
    pub epsilon: f64,
    /// `H(x_1..x_T)`.
    pub h_full: f64,
    /// max over t of `|H(x_≤t) − Σ_{k≤t} H(x_k|x_<k)|`.
    pub entropy_chain_residual: f64,
    /// max over t of `|I_total − (I_vis + I_cond)|`.
    pub mi_chain_residual: f64,
}

fn point_terms(joint: &JointTable, t: usize) -> Result<(f64, f64, f64, f64)> {
    let (zs, v) = (joint.latent_size(), joint.vocab_size());
    let tab = joint.table(t);
    let width = tab.len() / zs;

    // H(x_t | x_<t) from the text marginal, grouped by prefix.
    let marginal = joint.text_marginal(t);
    let mut h_step = 0.0;
    for chunk in marginal.chunks(v) {
        let s: f64 = chunk.iter().sum();
        h_step -= chunk.iter().filter(|&&p| p > 0.0).map(|&p| p * (p / s).ln()).sum::<f64>();
    }

    let zx = joint.latent_token_joint(t);
    let i_vis = mutual_information(&zx, zs, v)?;
    let mut p_x = vec![0.0; v];
    let mut p_z = vec![0.0; zs];
    for z in 0..zs {
        for x in 0..v {
            p_x[x] += zx[z * v + x];
            p_z[z] += zx[z * v + x];
        }
    }

    // Both terms as Σ p·ln(p(x_t | z, x_<t) / q) with q = p(x_t | z) or p(x_t).
    let (mut i_cond, mut i_total) = (0.0, 0.0);
    for z in 0..zs {
        for chunk in tab[z * width..(z + 1) * width].chunks(v) {
            let prefix_mass: f64 = chunk.iter().sum();
            if prefix_mass <= 0.0 {
                continue;
            }
            for (x, &p) in chunk.iter().enumerate() {
                if p > 0.0 {
                    let cond = p / prefix_mass;
                    if t > 1 {
                        i_cond += p * (cond / (zx[z * v + x] / p_z[z])).ln();
                    }
                    i_total += p * (cond / p_x[x]).ln();
                }
            }
        }
    }
    Ok((h_step, i_vis, i_cond, i_total))
}

/// Enumerates the model up to `horizon` and evaluates every quantity.
/// `lambda(t)` supplies the boost used for the `rho` column.
pub fn info_curve(
    model: &DiscreteSequenceModel,
    horizon: usize,
    epsilon: f64,
    lambda: impl Fn(usize) -> f64,
) -> Result<InfoCurve> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Parameter(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }
    let joint = enumerate_joint(model, horizon)?;
    let capacity = (model.vocab_size() as f64).ln();

    let mut h_full = vec![0.0; horizon + 1];
    for t in 1..=horizon {
        h_full[t] = entropy_unchecked(&joint.text_marginal(t));
    }

    let mut raw = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        raw.push(point_terms(&joint, t)?);
    }
    let delta_h = raw.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);

    let mut points = Vec::with_capacity(horizon);
    let (mut entropy_chain_residual, mut mi_chain_residual) = (0.0_f64, 0.0_f64);
    let mut cumulative = 0.0;
    for (idx, &(h_step, i_vis, i_cond, i_total)) in raw.iter().enumerate() {
        let t = idx + 1;
        cumulative += h_step;
        entropy_chain_residual = entropy_chain_residual.max((h_full[t] - cumulative).abs());
        mi_chain_residual = mi_chain_residual.max((i_total - (i_vis + i_cond)).abs());

        let (iv, ic) = (i_vis.max(0.0), i_cond.max(0.0));
        let denom = iv + ic;
        let (ratio, ratio_undefined) = if denom > DEGENERACY_TOL { (iv / denom, false) } else { (0.0, true) };
        let lam = lambda(t);
        let rho = if ratio_undefined { None } else { rho_vista(iv, ic, lam).ok() };
        let env_denom = t as f64 * delta_h - epsilon - capacity;
        let bound = (env_denom > 0.0).then(|| capacity / env_denom);
        points.push(InfoPoint {
            t,
            h_prefix: h_full[t - 1],
            h_step,
            i_vis,
            i_cond,
            i_total,
            ratio,
            ratio_undefined,
            rho,
            lambda: lam,
            bound,
        });
    }

    Ok(InfoCurve {
        points,
        delta_h,
        capacity,
        epsilon,
        h_full: h_full[horizon],
        entropy_chain_residual,
        mi_chain_residual,
    })
}

impl InfoCurve {
    pub fn horizon(&self) -> usize {
        self.points.len()
    }

    /// Every conditional step keeps positive entropy.
    pub fn non_degenerate(&self) -> bool {
        self.delta_h > DEGENERACY_TOL
    }

    pub fn chain_rules_hold(&self) -> bool {
        self.entropy_chain_residual <= CHAIN_RULE_TOL && self.mi_chain_residual <= CHAIN_RULE_TOL
    }

    /// `H(x_<t) ≥ (t−1)·Δ_H − 1e-9` for all t; `None` for degenerate models.
    pub fn entropy_growth_holds(&self) -> Option<bool> {
        self.non_degenerate().then(|| self.points.iter().all(|p| p.h_prefix >= (p.t - 1) as f64 * self.delta_h - 1e-9))
    }

    /// `−1e-12 ≤ I(x_t; z) ≤ ln|V| + 1e-9` for all t.
    pub fn visual_mi_bound_holds(&self) -> bool {
        self.points.iter().all(|p| p.i_vis >= -1e-12 && p.i_vis <= self.capacity + 1e-9)
    }

    /// `ratio(t) ≤ C / I_total(t) + 1e-9` wherever `I_total(t) ≥ C`.
    pub fn ratio_envelope_holds(&self) -> bool {
        self.points.iter().filter(|p| p.i_total >= self.capacity).all(|p| p.ratio <= self.capacity / p.i_total + 1e-9)
    }

    /// The boosted share clears its lower bound at every position where
    /// the bound is defined (`I_vis > 0`, `λ_t > 0`).
    pub fn rho_bound_holds(&self) -> Result<bool> {
        for p in &self.points {
            if p.i_vis > 0.0 && p.lambda > 0.0 && !rho_lower_bound_check(p.i_vis, p.i_cond.max(0.0), p.lambda)?.holds {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Whether textual dependence given the latent keeps growing over
    /// `t ≥ 2`, the premise under which the ratio must vanish.
    pub fn memory_grows(&self) -> bool {
        let tail: Vec<f64> = self.points.iter().skip(1).map(|p| p.i_cond).collect();
        tail.len() >= 2
            && tail.windows(2).all(|w| w[1] >= w[0] - 1e-12)
            && tail[tail.len() - 1] > tail[0] + DEGENERACY_TOL
    }
}

/// Cumulative and per-step text entropies.
#[derive(Clone, Debug)]
pub struct PrefixEntropyCurve {
    /// `H(x_<t)` for `t = 1..=T`.
    pub cumulative: Vec<f64>,
    /// `H(x_t | x_<t)` for `t = 1..=T`.
    pub per_step: Vec<f64>,
    pub delta_h: f64,
    /// False when some step is deterministic (`Δ_H ≈ 0`).
    pub non_degenerate: bool,
}

pub fn prefix_entropy_curve(model: &DiscreteSequenceModel, horizon: usize) -> Result<PrefixEntropyCurve> {
    let curve = info_curve(model, horizon, DEFAULT_EPSILON, |_| 0.0)?;
    if curve.entropy_chain_residual > CHAIN_RULE_TOL {
        return Err(Error::Contract(format!("entropy chain rule off by {}", curve.entropy_chain_residual)));
    }
    Ok(PrefixEntropyCurve {
        cumulative: curve.points.iter().map(|p| p.h_prefix).collect(),
        per_step: curve.points.iter().map(|p| p.h_step).collect(),
        delta_h: curve.delta_h,
        non_degenerate: curve.non_degenerate(),
    })
}

/// `I(x_t; z)` for `t = 1..=T`.
pub fn visual_mi_curve(model: &DiscreteSequenceModel, horizon: usize) -> Result<Vec<f64>> {
    Ok(info_curve(model, horizon, DEFAULT_EPSILON, |_| 0.0)?.points.into_iter().map(|p| p.i_vis).collect())
}

/// Alignment ratio per position with its analytic envelope.
#[derive(Clone, Debug)]
pub struct RatioCurve {
    pub ratio: Vec<f64>,
    /// Positions (1-based) where both information terms vanish.
    pub undefined_at: Vec<usize>,
    /// `C / (t·Δ_H − ε − C)` where the denominator is positive.
    pub envelope: Vec<Option<f64>>,
    /// False when conditional textual information does not grow with t,
    /// e.g. for memoryless chains; the vanishing-ratio premise fails then.
    pub memory_grows: bool,
}

pub fn alignment_ratio_curve(model: &DiscreteSequenceModel, horizon: usize, epsilon: f64) -> Result<RatioCurve> {
    let curve = info_curve(model, horizon, epsilon, |_| 0.0)?;
    Ok(RatioCurve {
        ratio: curve.points.iter().map(|p| p.ratio).collect(),
        undefined_at: curve.points.iter().filter(|p| p.ratio_undefined).map(|p| p.t).collect(),
        envelope: curve.points.iter().map(|p| p.bound).collect(),
        memory_grows: curve.memory_grows(),
    })
}
