//! Huff destination choice: `P_ij = A_j^α d_ij^(-β) / Σ_k A_k^α d_ik^(-β)`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::mass::MassModel;
use super::{scaled_distances, training_margins, SpatialOptions};
use crate::error::{Error, Result};
use crate::guard::FlowView;
use crate::network::FlowNetwork;

/// Choice probabilities of one origin over its destinations.
pub fn huff_probabilities(attractiveness: &[f64], distance: &[f64], alpha: f64, beta: f64) -> Result<Vec<f64>> {
    if attractiveness.len() != distance.len() {
        return Err(Error::Length(attractiveness.len(), distance.len()));
    }
    let logs: Vec<f64> = attractiveness
        .iter()
        .zip(distance)
        .map(|(&a, &d)| if a > 0.0 { alpha * a.ln() - beta * d.ln() } else { f64::NEG_INFINITY })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::Degenerate("every destination has zero attractiveness".into()));
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / s).collect())
}

/// Everything the grid search needs, in log space.
#[derive(Debug, Clone)]
pub struct HuffProblem {
    /// `ln(A_j / max A)`, `-inf` for zero attractiveness.
    log_attr: Vec<f64>,
    /// `ln(d_ij / min d)`, `NaN` where no edge exists.
    log_dist: Array2<f64>,
    margins: Vec<f64>,
    pairs: Vec<(usize, usize, f64)>,
    attractiveness: Vec<f64>,
    distance_scale: f64,
    mass_model: MassModel,
    interest: Vec<bool>,
}

impl HuffProblem {
    pub fn new(view: &FlowView<'_>, train_edges: &[usize], distance_feature: &str) -> Result<Self> {
        let net = view.network();
        let mut margins = training_margins(view, train_edges)?;
        let regular: Vec<usize> = view.regular_nodes().collect();
        let mass_model = MassModel::fit(net, &regular, &margins, &margins)?;
        let interest: Vec<bool> = (0..net.n()).map(|i| view.is_masked(i)).collect();
        for i in (0..net.n()).filter(|&i| interest[i]) {
            margins[i] = mass_model.outflow(net, i);
        }
        let attractiveness: Vec<f64> = (0..net.n()).map(|j| mass_model.inflow(net, j)).collect();
        let top = attractiveness.iter().copied().fold(0.0, f64::max);
        if !(top > 0.0) {
            return Err(Error::Degenerate("every node has zero attractiveness".into()));
        }
        let log_attr = attractiveness
            .iter()
            .map(|&a| if a > 0.0 { (a / top).ln() } else { f64::NEG_INFINITY })
            .collect();
        let (dist, distance_scale) = scaled_distances(net, distance_feature)?;
        let mut pairs = Vec::with_capacity(train_edges.len());
        for &e in train_edges {
            let (i, j) = net.edge(e);
            pairs.push((i, j, view.edge_flow(e).ok_or(Error::Leakage(1))?));
        }
        Ok(HuffProblem {
            log_attr,
            log_dist: dist.mapv(f64::ln),
            margins,
            pairs,
            attractiveness,
            distance_scale,
            mass_model,
            interest,
        })
    }

    /// `ln Σ_k A_k^α d_ik^(-β)` per origin; `-inf` if no destination is
    /// reachable.
    fn log_denominators(&self, alpha: f64, beta: f64) -> Vec<f64> {
        let n = self.log_attr.len();
        (0..n)
            .map(|i| {
                let terms = (0..n).filter_map(|k| {
                    let ld = self.log_dist[[i, k]];
                    (k != i && !ld.is_nan() && self.log_attr[k] > f64::NEG_INFINITY)
                        .then(|| alpha * self.log_attr[k] - beta * ld)
                });
                let v: Vec<f64> = terms.collect();
                let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if top == f64::NEG_INFINITY {
                    return top;
                }
                top + v.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
            })
            .collect()
    }

    fn probability(&self, log_den: &[f64], alpha: f64, beta: f64, i: usize, j: usize) -> f64 {
        if log_den[i] == f64::NEG_INFINITY || self.log_attr[j] == f64::NEG_INFINITY {
            return 0.0;
        }
        (alpha * self.log_attr[j] - beta * self.log_dist[[i, j]] - log_den[i]).exp()
    }

    fn pair_estimate(&self, log_den: &[f64], alpha: f64, beta: f64, i: usize, j: usize) -> f64 {
        0.5 * (self.margins[i] * self.probability(log_den, alpha, beta, i, j)
            + self.margins[j] * self.probability(log_den, alpha, beta, j, i))
    }

    /// Squared error over the training edges.
    pub fn loss(&self, alpha: f64, beta: f64) -> f64 {
        let log_den = self.log_denominators(alpha, beta);
        self.pairs
            .iter()
            .map(|&(i, j, w)| (w - self.pair_estimate(&log_den, alpha, beta, i, j)).powi(2))
            .sum()
    }

    /// Full choice matrix (rows are origins), zero where no edge exists.
    pub fn probability_matrix(&self, alpha: f64, beta: f64) -> Array2<f64> {
        let log_den = self.log_denominators(alpha, beta);
        let n = self.log_attr.len();
        Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j || self.log_dist[[i, j]].is_nan() {
                0.0
            } else {
                self.probability(&log_den, alpha, beta, i, j)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HuffParams {
    pub alpha: f64,
    pub beta: f64,
    pub attractiveness: Vec<f64>,
    /// Origin totals: training margins for regular nodes, mass-model
    /// outflows for interest nodes.
    pub margins: Vec<f64>,
    pub interest: Vec<bool>,
    pub distance_feature: String,
    pub distance_scale: f64,
    log_attr: Vec<f64>,
    log_denominators: Vec<f64>,
    pub training_loss: f64,
    pub mass_model: MassModel,
}

pub fn fit_huff(view: &FlowView<'_>, train_edges: &[usize], opts: &SpatialOptions) -> Result<HuffParams> {
    let problem = HuffProblem::new(view, train_edges, &opts.distance_feature)?;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &alpha in &opts.huff_alpha.values() {
        for &beta in &opts.huff_beta.values() {
            let loss = problem.loss(alpha, beta);
            if loss < best.0 {
                best = (loss, alpha, beta);
            }
        }
    }
    let (training_loss, alpha, beta) = best;
    if !training_loss.is_finite() {
        return Err(Error::NonFinite("Huff training loss"));
    }
    Ok(HuffParams {
        alpha,
        beta,
        log_denominators: problem.log_denominators(alpha, beta),
        attractiveness: problem.attractiveness,
        margins: problem.margins,
        interest: problem.interest,
        distance_feature: opts.distance_feature.clone(),
        distance_scale: problem.distance_scale,
        log_attr: problem.log_attr,
        training_loss,
        mass_model: problem.mass_model,
    })
}

impl HuffParams {
    /// Symmetric estimate `(O_i P_ij + O_j P_ji) / 2`.
    pub fn predict(&self, net: &FlowNetwork, i: usize, j: usize) -> Result<f64> {
        if self.margins.len() != net.n() {
            return Err(Error::Length(self.margins.len(), net.n()));
        }
        let e = net.edge_id(i, j).ok_or(Error::MissingEdge(i, j))?;
        let col = net
            .edge_feature_index(&self.distance_feature)
            .ok_or_else(|| Error::Config(format!("edge feature `{}` not found", self.distance_feature)))?;
        let ld = (net.edge_features()[[e, col]] / self.distance_scale).ln();
        let p = |x: usize, y: usize| {
            if self.log_denominators[x] == f64::NEG_INFINITY || self.log_attr[y] == f64::NEG_INFINITY {
                0.0
            } else {
                (self.alpha * self.log_attr[y] - self.beta * ld - self.log_denominators[x]).exp()
            }
        };
        Ok(0.5 * (self.margins[i] * p(i, j) + self.margins[j] * p(j, i)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::ParamGrid;
    use crate::split::{make_split, SplitFractions};
    use crate::metrics::BinSpec;
    use crate::synth::{generate_synthetic_city, SynthConfig};

    #[test]
    fn single_destination_takes_everything() {
        assert_eq!(huff_probabilities(&[3.0], &[7.0], 1.3, 0.4).unwrap(), vec![1.0]);
    }

    #[test]
    fn two_destination_arithmetic() {
        let p = huff_probabilities(&[4.0, 1.0], &[2.0, 1.0], 1.0, 2.0).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert!(huff_probabilities(&[0.0, 0.0], &[1.0, 2.0], 1.0, 1.0).is_err());
    }

    fn city() -> FlowNetwork {
        let cfg = SynthConfig {
            n_rows: 8,
            n_cols: 8,
            seed: 4,
            ..SynthConfig::default()
        };
        generate_synthetic_city(&cfg).unwrap().0
    }

    #[test]
    fn rows_sum_to_one_and_are_scale_free() {
        let net = city();
        let split = make_split(&net, SplitFractions::default(), &BinSpec::default(), 0).unwrap();
        let view = FlowView::masked(&net, split.interest_nodes());
        let mut problem = HuffProblem::new(&view, &split.train_edges, "distance").unwrap();
        assert_eq!(view.violations(), 0);
        let p = problem.probability_matrix(1.5, 2.25);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        problem.log_attr.iter_mut().for_each(|l| *l += 7.0f64.ln());
        let q = problem.probability_matrix(1.5, 2.25);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn coarse_grid_is_close_to_fine_grid() {
        let net = city();
        let view = FlowView::unmasked(&net);
        let train: Vec<usize> = (0..net.m()).collect();
        let fit = fit_huff(&view, &train, &SpatialOptions::default()).unwrap();
        let problem = HuffProblem::new(&view, &train, "distance").unwrap();
        let fine = ParamGrid { start: 0.25, stop: 3.0, step: 0.05 }.values();
        let mut best = f64::INFINITY;
        for &a in &fine {
            for &b in &fine {
                best = best.min(problem.loss(a, b));
            }
        }
        assert!(fit.training_loss <= 1.05 * best, "{} vs {best}", fit.training_loss);
        let e = net.edge_id(3, 9).unwrap();
        let pred = fit.predict(&net, 3, 9).unwrap();
        assert!(pred > 0.0 && pred.is_finite(), "edge {e}");
    }
}
