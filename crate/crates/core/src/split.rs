//! Node-of-interest train/validation/test split with per-bin capacity.
//!
//! Test and validation sets are built by drawing whole nodes: every edge of
//! a drawn node joins the subset unless the flow bin of that edge is already
//! full, in which case the edge is discarded. Discarded edges never return
//! to training because one of their ends is an interest node. Training is
//! every edge between two regular nodes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{BinSpec, N_BINS};
use crate::network::FlowNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Regular,
    ValInterest,
    TestInterest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|f| !(0.0..=1.0).contains(f)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {:?} must lie in [0, 1] and sum to 1",
                all
            )));
        }
        if self.test <= 0.0 {
            return Err(Error::Config("test fraction must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub fractions: SplitFractions,
    pub roles: Vec<NodeRole>,
    pub train_edges: Vec<usize>,
    pub val_edges: Vec<usize>,
    pub test_edges: Vec<usize>,
    pub discarded_edges: Vec<usize>,
    /// Per-bin edge counts (overflow folded into the top bin).
    pub train_bins: [usize; N_BINS],
    pub val_bins: [usize; N_BINS],
    pub test_bins: [usize; N_BINS],
    pub val_capacity: usize,
    pub test_capacity: usize,
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    pub fn test_interest(&self) -> Vec<usize> {
        self.nodes_with(NodeRole::TestInterest)
    }

    pub fn val_interest(&self) -> Vec<usize> {
        self.nodes_with(NodeRole::ValInterest)
    }

    /// Validation and test interest nodes, i.e. every masked node.
    pub fn interest_nodes(&self) -> Vec<usize> {
        (0..self.roles.len()).filter(|&i| self.roles[i] != NodeRole::Regular).collect()
    }

    fn nodes_with(&self, role: NodeRole) -> Vec<usize> {
        (0..self.roles.len()).filter(|&i| self.roles[i] == role).collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum EdgeState {
    Open,
    Val,
    Test,
    Discarded,
}

struct Filler<'a> {
    net: &'a FlowNetwork,
    bins: &'a BinSpec,
    states: Vec<EdgeState>,
    roles: Vec<NodeRole>,
}

impl Filler<'_> {
    /// Draws nodes from `order` into one subset; returns the bin counts and
    /// the per-bin capacity.
    fn fill(
        &mut self,
        order: &mut impl Iterator<Item = usize>,
        fraction: f64,
        role: NodeRole,
        state: EdgeState,
    ) -> ([usize; N_BINS], usize) {
        let m = self.net.m() as f64;
        let capacity = (fraction * m / N_BINS as f64).ceil() as usize;
        let target = fraction * m;
        let mut counts = [0usize; N_BINS];
        let mut consumed = 0usize;
        if fraction <= 0.0 {
            return (counts, 0);
        }
        while (consumed as f64) < target && counts.iter().any(|&c| c < capacity) {
            let Some(node) = order.next() else { break };
            self.roles[node] = role;
            for &e in self.net.incident_edges(node) {
                if self.states[e] != EdgeState::Open {
                    continue;
                }
                consumed += 1;
                let bin = self.bins.capped_bin_of(self.net.flows_unguarded()[e]);
                if counts[bin] < capacity {
                    counts[bin] += 1;
                    self.states[e] = state;
                } else {
                    self.states[e] = EdgeState::Discarded;
                }
            }
        }
        (counts, capacity)
    }
}

pub fn make_split(net: &FlowNetwork, fractions: SplitFractions, bins: &BinSpec, seed: u64) -> Result<SplitAssignment> {
    let split = assign(net, fractions, bins, seed)?;
    if split.train_edges.is_empty() {
        return Err(Error::Split("no training edges remain between regular nodes".into()));
    }
    Ok(split)
}

fn assign(net: &FlowNetwork, fractions: SplitFractions, bins: &BinSpec, seed: u64) -> Result<SplitAssignment> {
    fractions.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..net.n()).collect();
    order.shuffle(&mut rng);
    let mut order = order.into_iter();

    let mut filler = Filler {
        net,
        bins,
        states: vec![EdgeState::Open; net.m()],
        roles: vec![NodeRole::Regular; net.n()],
    };
    let (test_bins, test_capacity) = filler.fill(&mut order, fractions.test, NodeRole::TestInterest, EdgeState::Test);
    let (val_bins, val_capacity) = filler.fill(&mut order, fractions.val, NodeRole::ValInterest, EdgeState::Val);

    let mut all_bins = [0usize; N_BINS];
    for &f in net.flows_unguarded() {
        all_bins[bins.capped_bin_of(f)] += 1;
    }
    if test_bins.iter().all(|&c| c == 0) {
        return Err(Error::Split(format!(
            "no test edge could be assigned; edges per bin {all_bins:?}"
        )));
    }
    if fractions.val > 0.0 && val_bins.iter().all(|&c| c == 0) {
        return Err(Error::Split(format!(
            "no validation edge could be assigned; edges per bin {all_bins:?}"
        )));
    }
    let mut warnings = Vec::new();
    for (name, counts) in [("test", &test_bins), ("validation", &val_bins)] {
        for b in 0..N_BINS {
            if counts[b] == 0 && !(name == "validation" && fractions.val <= 0.0) {
                let msg = format!("{name} bin {} is empty", bins.label(b));
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }

    let mut split = SplitAssignment {
        seed,
        fractions,
        roles: filler.roles,
        train_edges: Vec::new(),
        val_edges: Vec::new(),
        test_edges: Vec::new(),
        discarded_edges: Vec::new(),
        train_bins: [0; N_BINS],
        val_bins,
        test_bins,
        val_capacity,
        test_capacity,
        warnings,
    };
    for (e, s) in filler.states.iter().enumerate() {
        match s {
            EdgeState::Open => {
                split.train_edges.push(e);
                split.train_bins[bins.capped_bin_of(net.flows_unguarded()[e])] += 1;
            }
            EdgeState::Val => split.val_edges.push(e),
            EdgeState::Test => split.test_edges.push(e),
            EdgeState::Discarded => split.discarded_edges.push(e),
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::network::{EdgeRecord, NodeTable};
    use crate::synth::{generate_synthetic_city, SynthConfig};
    use ndarray::Array2;
    use std::collections::HashSet;

    fn line_graph(flows: [f64; 3]) -> FlowNetwork {
        let grid = GridSpec::new(0.0, 0.0, 500.0, 1, 4).unwrap();
        let nodes = NodeTable {
            ids: vec![0, 1, 2, 3],
            cells: vec![0, 1, 2, 3],
            feature_names: vec![],
            features: Array2::zeros((4, 0)),
        };
        let edges = (0..3)
            .map(|i| EdgeRecord { src: i, dst: i + 1, flow: flows[i], features: vec![] })
            .collect();
        FlowNetwork::from_parts(grid, nodes, vec![], edges).unwrap()
    }

    #[test]
    fn line_graph_matches_hand_enumeration() {
        // e0=(0,1) flow 5 [bin 0], e1=(1,2) flow 6 [bin 0], e2=(2,3) flow 50 [bin 1].
        // Fractions (0.5, 0.25, 0.25) with m = 3: capacity ceil(0.1875) = 1 edge per
        // bin, and a subset stops drawing once it has touched >= 0.75 edges.
        // Keyed by (test node, first validation node that still has open edges):
        // (test edges, validation edges, discarded edges).
        let table: [((usize, usize), (&[usize], &[usize], &[usize])); 10] = [
            ((0, 1), (&[0], &[1], &[])),
            ((0, 2), (&[0], &[1, 2], &[])),
            ((0, 3), (&[0], &[2], &[])),
            ((1, 2), (&[0], &[2], &[1])),
            ((1, 3), (&[0], &[2], &[1])),
            ((2, 0), (&[1, 2], &[0], &[])),
            ((2, 1), (&[1, 2], &[0], &[])),
            ((3, 0), (&[2], &[0], &[])),
            ((3, 1), (&[2], &[0], &[1])),
            ((3, 2), (&[2], &[1], &[])),
        ];
        // validation nodes that find every incident edge already taken
        let exhausted = |a: usize, v: usize| (a, v) == (1, 0) || (a, v) == (2, 3);

        let net = line_graph([5.0, 6.0, 50.0]);
        let fr = SplitFractions { train: 0.5, val: 0.25, test: 0.25 };
        let mut seen = HashSet::new();
        for seed in 0..200 {
            let s = assign(&net, fr, &BinSpec::default(), seed).unwrap();
            let t = s.test_interest();
            assert_eq!(t.len(), 1, "seed {seed}");
            let a = t[0];
            let productive: Vec<usize> = s.val_interest().into_iter().filter(|&v| !exhausted(a, v)).collect();
            assert_eq!(productive.len(), 1, "seed {seed}");
            let key = (a, productive[0]);
            let (_, (test, val, discarded)) = table.iter().find(|(k, _)| *k == key).expect("enumerated case");
            assert_eq!(s.test_edges, *test, "seed {seed}");
            assert_eq!(s.val_edges, *val, "seed {seed}");
            assert_eq!(s.discarded_edges, *discarded, "seed {seed}");
            let train: Vec<usize> =
                (0..3).filter(|e| !test.contains(e) && !val.contains(e) && !discarded.contains(e)).collect();
            assert_eq!(s.train_edges, train, "seed {seed}");
            assert_eq!(make_split(&net, fr, &BinSpec::default(), seed).is_ok(), !train.is_empty());
            seen.insert(key);
        }
        assert_eq!(seen.len(), table.len());
    }

    #[test]
    fn same_seed_same_split() {
        let (net, _) = generate_synthetic_city(&SynthConfig { n_rows: 8, n_cols: 8, ..Default::default() }).unwrap();
        let a = make_split(&net, SplitFractions::default(), &BinSpec::default(), 5).unwrap();
        let b = make_split(&net, SplitFractions::default(), &BinSpec::default(), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subsets_partition_edges_and_respect_roles() {
        let (net, _) = generate_synthetic_city(&SynthConfig { n_rows: 10, n_cols: 10, ..Default::default() }).unwrap();
        let s = make_split(&net, SplitFractions::default(), &BinSpec::default(), 1).unwrap();
        let mut all: Vec<usize> = s
            .train_edges
            .iter()
            .chain(&s.val_edges)
            .chain(&s.test_edges)
            .chain(&s.discarded_edges)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..net.m()).collect::<Vec<_>>());
        let interest = |i: usize| s.roles[i] != NodeRole::Regular;
        for &e in &s.train_edges {
            let (i, j) = net.edge(e);
            assert!(!interest(i) && !interest(j));
        }
        for &e in s.test_edges.iter().chain(&s.val_edges) {
            let (i, j) = net.edge(e);
            assert!(interest(i) || interest(j));
        }
        for b in 0..N_BINS {
            assert!(s.test_bins[b] <= s.test_capacity);
            assert!(s.val_bins[b] <= s.val_capacity);
        }
        let frac = s.train_edges.len() as f64 / net.m() as f64;
        assert!((0.6..0.8).contains(&frac), "train fraction {frac}");
    }

    #[test]
    fn single_bin_distribution_warns_and_caps() {
        let grid = GridSpec::new(0.0, 0.0, 500.0, 4, 4).unwrap();
        let n = 16;
        let nodes = NodeTable {
            ids: (0..n as u64).collect(),
            cells: (0..n).collect(),
            feature_names: vec![],
            features: Array2::zeros((n, 0)),
        };
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push(EdgeRecord { src: i, dst: j, flow: 3.0, features: vec![] });
            }
        }
        let net = FlowNetwork::from_parts(grid, nodes, vec![], edges).unwrap();
        let s = make_split(&net, SplitFractions::default(), &BinSpec::default(), 3).unwrap();
        let cap = (0.2 * 120.0 / 4.0f64).ceil() as usize;
        assert_eq!(s.test_capacity, cap);
        assert_eq!(s.test_bins, [cap, 0, 0, 0]);
        assert!(s.warnings.iter().any(|w| w.contains("test bin [10; 100)")));
    }

    #[test]
    fn impossible_split_is_an_error() {
        let net = line_graph([5.0, 50.0, 7.0]);
        let bad = SplitFractions { train: 0.5, val: 0.5, test: 0.5 };
        assert!(make_split(&net, bad, &BinSpec::default(), 0).is_err());
        // everything consumed by test and validation: no training edges left
        let fr = SplitFractions { train: 0.0, val: 0.5, test: 0.5 };
        assert!(make_split(&net, fr, &BinSpec::default(), 0).is_err());
    }
}
