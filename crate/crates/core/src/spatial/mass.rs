//! Node margins predicted from node features.

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::FlowNetwork;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassModel {
    /// Intercept first, then one coefficient per node feature.
    pub out_coef: Vec<f64>,
    pub in_coef: Vec<f64>,
}

/// Least squares `log(1 + margin) ~ 1 + features` over `nodes`, solved by
/// SVD so collinear feature copies do not break the fit.
fn regress(net: &FlowNetwork, nodes: &[usize], margins: &[f64]) -> Result<Vec<f64>> {
    let p = net.p();
    if nodes.is_empty() {
        return Err(Error::Degenerate("mass model needs at least one regular node".into()));
    }
    let x = DMatrix::from_fn(nodes.len(), p + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            net.node_features()[[nodes[r], c - 1]]
        }
    });
    let y = DVector::from_iterator(nodes.len(), nodes.iter().map(|&i| margins[i].ln_1p()));
    let coef = x
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Degenerate(format!("mass model: {e}")))?;
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("mass model coefficients"));
    }
    Ok(coef.iter().copied().collect())
}

fn evaluate(coef: &[f64], x: ArrayView1<'_, f64>) -> f64 {
    let eta = coef[0] + coef[1..].iter().zip(x.iter()).map(|(c, v)| c * v).sum::<f64>();
    eta.min(700.0).exp_m1().max(0.0)
}

impl MassModel {
    pub fn fit(net: &FlowNetwork, nodes: &[usize], out_margins: &[f64], in_margins: &[f64]) -> Result<Self> {
        Ok(MassModel {
            out_coef: regress(net, nodes, out_margins)?,
            in_coef: regress(net, nodes, in_margins)?,
        })
    }

    pub fn outflow(&self, net: &FlowNetwork, i: usize) -> f64 {
        evaluate(&self.out_coef, net.node_feature_row(i))
    }

    pub fn inflow(&self, net: &FlowNetwork, i: usize) -> f64 {
        evaluate(&self.in_coef, net.node_feature_row(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::network::NodeTable;
    use ndarray::array;

    #[test]
    fn exact_linear_relation_is_recovered() {
        let grid = GridSpec::new(0.0, 0.0, 1.0, 1, 4).unwrap();
        let nodes = NodeTable {
            ids: vec![0, 1, 2, 3],
            cells: vec![0, 1, 2, 3],
            feature_names: vec!["a".into(), "a_copy".into()],
            features: array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [0.5, 0.5]],
        };
        let net = FlowNetwork::from_parts(grid, nodes, vec![], vec![]).unwrap();
        // log(1 + m) = 1 + 2 a on nodes 0..3, node 3 held out
        let margins: Vec<f64> = [0.0, 1.0, 2.0, 0.5].iter().map(|a: &f64| (1.0 + 2.0 * a).exp_m1()).collect();
        let model = MassModel::fit(&net, &[0, 1, 2], &margins, &margins).unwrap();
        assert!((model.outflow(&net, 3) - margins[3]).abs() < 1e-8 * margins[3]);
        assert!((model.inflow(&net, 0) - margins[0]).abs() < 1e-8 * margins[0]);
    }
}
