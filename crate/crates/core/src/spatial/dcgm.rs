//! Doubly constrained gravity model `T_ij = A_i O_i B_j D_j d_ij^(-β)`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ipf::{ipf_balance, Balancing};
use super::mass::MassModel;
use super::{poisson_deviance, power_kernel, scaled_distances, training_margins, SpatialOptions};
use crate::error::{Error, Result};
use crate::guard::FlowView;
use crate::network::FlowNetwork;

const GOLDEN_TOL: f64 = 1e-6;

/// Training-side gravity fit: margins, distances and observed pair flows of
/// the regular nodes.
#[derive(Debug, Clone)]
pub struct GravityProblem {
    /// Network indices of the regular nodes, in local order.
    nodes: Vec<usize>,
    margins: Vec<f64>,
    /// Local scaled distances (`NaN` where no edge exists).
    dist: Array2<f64>,
    /// Local `(a, b, flow)` for every training edge.
    pairs: Vec<(usize, usize, f64)>,
}

impl GravityProblem {
    pub fn new(view: &FlowView<'_>, train_edges: &[usize], distance_feature: &str) -> Result<Self> {
        let net = view.network();
        let all_margins = training_margins(view, train_edges)?;
        let (all_dist, _) = scaled_distances(net, distance_feature)?;
        let nodes: Vec<usize> = view.regular_nodes().collect();
        let mut local = vec![usize::MAX; net.n()];
        for (a, &i) in nodes.iter().enumerate() {
            local[i] = a;
        }
        let dist = Array2::from_shape_fn((nodes.len(), nodes.len()), |(a, b)| all_dist[[nodes[a], nodes[b]]]);
        let mut pairs = Vec::with_capacity(train_edges.len());
        for &e in train_edges {
            let (i, j) = net.edge(e);
            let w = view.edge_flow(e).ok_or(Error::Leakage(1))?;
            pairs.push((local[i], local[j], w));
        }
        if pairs.is_empty() {
            return Err(Error::Degenerate("gravity model needs training edges".into()));
        }
        Ok(GravityProblem {
            margins: nodes.iter().map(|&i| all_margins[i]).collect(),
            nodes,
            dist,
            pairs,
        })
    }

    fn balance(&self, beta: f64) -> Result<(Array2<f64>, Balancing)> {
        let k = power_kernel(&self.dist, beta);
        let bal = ipf_balance(&self.margins, &self.margins, &k)?;
        Ok((k, bal))
    }

    /// Poisson deviance of the balanced model against the training flows.
    pub fn deviance(&self, beta: f64) -> Result<f64> {
        let (k, bal) = self.balance(beta)?;
        let o = &self.margins;
        let t = |a: usize, b: usize| bal.a[a] * o[a] * bal.b[b] * o[b] * bal.d_rescale * k[[a, b]];
        let (y, mu): (Vec<f64>, Vec<f64>) = self
            .pairs
            .iter()
            .map(|&(a, b, w)| (w, 0.5 * (t(a, b) + t(b, a))))
            .unzip();
        Ok(poisson_deviance(&y, &mu))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcgmParams {
    pub beta: f64,
    /// Set when the deviance does not depend on β and the lower bound was
    /// returned.
    pub degenerate: bool,
    pub distance_feature: String,
    /// Distances are divided by this before the power law is applied.
    pub distance_scale: f64,
    /// Per node of the network. Interest nodes carry mass-model margins and
    /// factors from a single rebalancing step.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub o: Vec<f64>,
    pub d: Vec<f64>,
    pub interest: Vec<bool>,
    pub mass_model: MassModel,
}

fn golden_section(f: impl Fn(f64) -> Result<f64>, lo: f64, hi: f64) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > GOLDEN_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, f(x)?))
}

pub fn fit_dcgm(view: &FlowView<'_>, train_edges: &[usize], opts: &SpatialOptions) -> Result<DcgmParams> {
    let net = view.network();
    let problem = GravityProblem::new(view, train_edges, &opts.distance_feature)?;
    let (lo, hi) = (opts.gravity_beta_min, opts.gravity_beta_max);
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Config(format!("gravity β range [{lo}, {hi}] is invalid")));
    }

    let f_lo = problem.deviance(lo)?;
    let f_hi = problem.deviance(hi)?;
    let f_mid = problem.deviance(0.5 * (lo + hi))?;
    let spread = f_lo.max(f_hi).max(f_mid) - f_lo.min(f_hi).min(f_mid);
    let degenerate = spread <= 1e-12 * (1.0 + f_lo.abs());
    let beta = if degenerate {
        log::warn!("gravity deviance does not depend on β; using the lower bound {lo}");
        lo
    } else {
        let (b, f) = golden_section(|b| problem.deviance(b), lo, hi)?;
        // the search assumes unimodality; fall back to a bound if it wins
        [(b, f), (lo, f_lo), (hi, f_hi)]
            .into_iter()
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .map(|(b, _)| b)
            .unwrap()
    };

    let (_, bal) = problem.balance(beta)?;
    let n = net.n();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut o = vec![0.0; n];
    for (l, &i) in problem.nodes.iter().enumerate() {
        a[i] = bal.a[l];
        b[i] = bal.b[l] * bal.d_rescale;
        o[i] = problem.margins[l];
    }
    let mass_model = MassModel::fit(net, &problem.nodes, &o, &o)?;
    let interest: Vec<bool> = (0..n).map(|i| view.is_masked(i)).collect();
    let mut d = o.clone();
    for i in (0..n).filter(|&i| interest[i]) {
        o[i] = mass_model.outflow(net, i);
        d[i] = mass_model.inflow(net, i);
    }

    // one rebalancing pass for the interest rows and columns against the
    // regular factors
    let (dist, distance_scale) = scaled_distances(net, &opts.distance_feature)?;
    let k = power_kernel(&dist, beta);
    for i in (0..n).filter(|&i| interest[i]) {
        let row: f64 = problem.nodes.iter().map(|&j| b[j] * d[j] * k[[i, j]]).sum();
        let col: f64 = problem.nodes.iter().map(|&j| a[j] * o[j] * k[[j, i]]).sum();
        a[i] = if o[i] > 0.0 && row > 0.0 { 1.0 / row } else { 0.0 };
        b[i] = if d[i] > 0.0 && col > 0.0 { 1.0 / col } else { 0.0 };
    }

    Ok(DcgmParams {
        beta,
        degenerate,
        distance_feature: opts.distance_feature.clone(),
        distance_scale,
        a,
        b,
        o,
        d,
        interest,
        mass_model,
    })
}

impl DcgmParams {
    /// Symmetric estimate `(T_ij + T_ji) / 2`.
    pub fn predict(&self, net: &FlowNetwork, i: usize, j: usize) -> Result<f64> {
        if self.a.len() != net.n() {
            return Err(Error::Length(self.a.len(), net.n()));
        }
        let e = net.edge_id(i, j).ok_or(Error::MissingEdge(i, j))?;
        let col = net
            .edge_feature_index(&self.distance_feature)
            .ok_or_else(|| Error::Config(format!("edge feature `{}` not found", self.distance_feature)))?;
        let k = (net.edge_features()[[e, col]] / self.distance_scale).powf(-self.beta);
        let t = |x: usize, y: usize| self.a[x] * self.o[x] * self.b[y] * self.d[y] * k;
        Ok((0.5 * (t(i, j) + t(j, i))).max(0.0))
    }
}
