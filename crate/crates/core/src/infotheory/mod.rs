//! Exact information-theoretic oracle on small latent-conditioned Markov
//! text models.
//!
//! The latent `z` plays the part of the visual state. Every quantity is
//! computed by enumerating the full joint `p(z, x_1..x_t)`, so the entropy
//! and mutual-information identities can be checked to round-off.

mod curves;
mod discrete;
mod joint;
mod measures;
mod rho;

pub use curves::{
    alignment_ratio_curve, info_curve, prefix_entropy_curve, visual_mi_curve, InfoCurve, InfoPoint, PrefixEntropyCurve,
    RatioCurve, CHAIN_RULE_TOL, DEFAULT_EPSILON, DEGENERACY_TOL,
};
pub use discrete::DiscreteSequenceModel;
pub use joint::{enumerate_joint, table_cells, JointTable, ENUMERATION_BUDGET};
pub use measures::{entropy, mutual_information};
pub use rho::{lambda_from_rho, rho_lower_bound_check, rho_vista, LambdaSolution, RhoBound, RHO_BOUND_SLACK};

/// Column header of the curve CSV.
pub const CURVE_CSV_HEADER: &str = "t,H_prefix,H_step,I_vis,I_cond,ratio,rho,bound";

/// 17 significant digits; `NaN` marks an undefined cell.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

impl InfoCurve {
    /// CSV rows (header included, no metadata).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            let cells = [
                p.t.to_string(),
                fmt_f64(p.h_prefix),
                fmt_f64(p.h_step),
                fmt_f64(p.i_vis),
                fmt_f64(p.i_cond),
                fmt_f64(p.ratio),
                fmt_f64(p.rho.unwrap_or(f64::NAN)),
                fmt_f64(p.bound.unwrap_or(f64::NAN)),
            ];
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}
