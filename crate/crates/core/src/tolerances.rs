//! Numerical thresholds shared by every module.
//!
//! All defaults live here so that a run can be reproduced from one record of
//! the configuration. The CLI fills this from a TOML tolerance file and
//! `KEY=VAL` overrides.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpecError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Target relative local error of the matrix ODE integrator.
    pub ode_rel_tol: f64,
    /// Condition number of V(phi) above which the Weyl matrix is refused.
    pub near_singular_cond: f64,
    /// |lambda - mu| below which the D kernel switches to its integral form.
    pub d_kernel_coincidence: f64,
    /// Off-diagonal mass of omega tolerated before it is flagged.
    pub omega_diag_tol: f64,
    /// Relative tolerance grouping omega values into one channel group.
    pub omega_group_tol: f64,
    /// |Delta(lambda)| / max |Delta| on the refinement contour.
    pub refine_residual: f64,
    /// Agreement of successive contour quadratures under node doubling.
    pub contour_agree: f64,
    /// Smallest radius of a residue contour.
    pub contour_min_radius: f64,
    /// Number of trapezoid nodes before the first doubling.
    pub contour_start_nodes: usize,
    /// Doubling steps before a residue contour is declared divergent.
    pub contour_max_doublings: usize,
    /// Relative tolerance under which eigenvalue estimates form one cluster.
    pub cluster_tol: f64,
    /// Singular values above `rank_rel * ||alpha||` count towards the rank.
    pub rank_rel: f64,
    /// Reality, Hermiticity and positivity slack for condition (S).
    pub selfadjoint_tol: f64,
    /// Smallest admissible Gram singular value for condition (C).
    pub gram_sigma_min: f64,
    /// Allowed ratio of upper-half to lower-half residual tails for (A).
    pub tail_growth_factor: f64,
    /// Relative residual required from the dense main-equation solve.
    pub main_residual: f64,
    /// Condition estimate above which the main equation is declared singular.
    pub main_cond: f64,
    /// Last-band share of ||eps0|| that triggers the tail warning.
    pub tail_warn: f64,
    /// Relative distance under which two spectral parameters are merged as one unknown.
    pub merge_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ode_rel_tol: 1e-10,
            near_singular_cond: 1e12,
            d_kernel_coincidence: 1e-8,
            omega_diag_tol: 1e-8,
            omega_group_tol: 1e-6,
            refine_residual: 1e-8,
            contour_agree: 1e-8,
            contour_min_radius: 1e-6,
            contour_start_nodes: 64,
            contour_max_doublings: 6,
            cluster_tol: 1e-7,
            rank_rel: 1e-7,
            selfadjoint_tol: 1e-8,
            gram_sigma_min: 1e-6,
            tail_growth_factor: 1.0,
            main_residual: 1e-10,
            main_cond: 1e12,
            tail_warn: 1e-3,
            merge_tol: 1e-12,
        }
    }
}

impl Tolerances {
    /// Applies a single `KEY=VAL` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |k: &str| SpecError::ParseError {
            line: 0,
            path: k.to_string(),
            msg: format!("cannot parse {value:?}"),
        };
        macro_rules! float {
            ($field:ident) => {{
                self.$field = value.trim().parse::<f64>().map_err(|_| bad(key))?;
            }};
        }
        match key.trim() {
            "ode_rel_tol" => float!(ode_rel_tol),
            "near_singular_cond" => float!(near_singular_cond),
            "d_kernel_coincidence" => float!(d_kernel_coincidence),
            "omega_diag_tol" => float!(omega_diag_tol),
            "omega_group_tol" => float!(omega_group_tol),
            "refine_residual" => float!(refine_residual),
            "contour_agree" => float!(contour_agree),
            "contour_min_radius" => float!(contour_min_radius),
            "cluster_tol" => float!(cluster_tol),
            "rank_rel" => float!(rank_rel),
            "selfadjoint_tol" => float!(selfadjoint_tol),
            "gram_sigma_min" => float!(gram_sigma_min),
            "tail_growth_factor" => float!(tail_growth_factor),
            "main_residual" => float!(main_residual),
            "main_cond" => float!(main_cond),
            "tail_warn" => float!(tail_warn),
            "merge_tol" => float!(merge_tol),
            "contour_start_nodes" => {
                self.contour_start_nodes = value.trim().parse().map_err(|_| bad(key))?
            }
            "contour_max_doublings" => {
                self.contour_max_doublings = value.trim().parse().map_err(|_| bad(key))?
            }
            other => {
                return Err(SpecError::ParseError {
                    line: 0,
                    path: other.to_string(),
                    msg: "unknown tolerance key".into(),
                })
            }
        }
        Ok(())
    }
}
