//! Spatial interaction baselines: doubly constrained gravity, Huff, and
//! Poisson / negative binomial regression.
//!
//! Gravity and Huff need node margins, which are unknown for interest
//! nodes. A [`MassModel`] regresses `log(1 + margin)` on node features over
//! the regular nodes and supplies the missing margins.

pub mod dcgm;
pub mod glm;
pub mod huff;
pub mod ipf;
pub mod mass;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guard::FlowView;
use crate::network::FlowNetwork;

pub use dcgm::{fit_dcgm, DcgmParams, GravityProblem};
pub use glm::{fit_negbin, fit_poisson, predict_glm, GlmFamily, GlmFit, GlmParams};
pub use huff::{fit_huff, HuffParams, HuffProblem};
pub use ipf::{balanced_matrix, ipf_balance, Balancing};
pub use mass::MassModel;

/// Inclusive arithmetic grid `start, start + step, …, stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl ParamGrid {
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.start + k as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialOptions {
    /// Edge feature holding the pair distance.
    pub distance_feature: String,
    pub gravity_beta_min: f64,
    pub gravity_beta_max: f64,
    pub huff_alpha: ParamGrid,
    pub huff_beta: ParamGrid,
}

impl Default for SpatialOptions {
    fn default() -> Self {
        let grid = ParamGrid {
            start: 0.25,
            stop: 3.0,
            step: 0.25,
        };
        SpatialOptions {
            distance_feature: "distance".into(),
            gravity_beta_min: 0.1,
            gravity_beta_max: 5.0,
            huff_alpha: grid,
            huff_beta: grid,
        }
    }
}

/// Sum of training flows incident to each node. Flows are symmetric, so
/// this is both the outflow and the inflow total.
pub fn training_margins(view: &FlowView<'_>, train_edges: &[usize]) -> Result<Vec<f64>> {
    let net = view.network();
    let mut margins = vec![0.0; net.n()];
    for &e in train_edges {
        let w = view.edge_flow(e).ok_or(Error::Leakage(1))?;
        let (i, j) = net.edge(e);
        margins[i] += w;
        margins[j] += w;
    }
    Ok(margins)
}

/// Dense pair distances from the designated edge feature, divided by the
/// smallest distance (returned alongside). Pairs without an edge and the
/// diagonal hold `NaN` and contribute nothing to any kernel.
pub(crate) fn scaled_distances(net: &FlowNetwork, feature: &str) -> Result<(Array2<f64>, f64)> {
    let col = net
        .edge_feature_index(feature)
        .ok_or_else(|| Error::Config(format!("edge feature `{feature}` not found")))?;
    let n = net.n();
    let mut d = Array2::from_elem((n, n), f64::NAN);
    let mut min_pos = f64::INFINITY;
    for (e, &(i, j)) in net.edges().iter().enumerate() {
        let v = net.edge_features()[[e, col]];
        if !(v > 0.0) {
            return Err(Error::Degenerate(format!(
                "distance {v} between nodes {i} and {j} must be positive"
            )));
        }
        min_pos = min_pos.min(v);
        d[[i, j]] = v;
        d[[j, i]] = v;
    }
    if !min_pos.is_finite() {
        return Err(Error::Degenerate("network has no edges with a distance".into()));
    }
    d.mapv_inplace(|v| v / min_pos);
    Ok((d, min_pos))
}

/// `d^(-beta)`, zero where the distance is missing.
pub(crate) fn power_kernel(dist: &Array2<f64>, beta: f64) -> Array2<f64> {
    dist.mapv(|d| if d.is_nan() { 0.0 } else { d.powf(-beta) })
}

/// Poisson deviance `2 Σ [y ln(y/μ) − (y − μ)]`.
pub fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| {
            let m = m.max(1e-300);
            let t = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
            t - (y - m)
        })
        .sum::<f64>()
}
