//! Leakage guard around ground-truth flows.
//!
//! Every model fits through a [`FlowView`]. Flows incident to a masked
//! (interest) node are withheld: the accessor returns `None` and bumps a
//! counter, so a run can assert afterwards that nothing peeked.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::network::FlowNetwork;

#[derive(Debug)]
pub struct FlowView<'a> {
    net: &'a FlowNetwork,
    masked: Vec<bool>,
    violations: AtomicUsize,
}

impl<'a> FlowView<'a> {
    pub fn unmasked(net: &'a FlowNetwork) -> Self {
        FlowView {
            net,
            masked: vec![false; net.n()],
            violations: AtomicUsize::new(0),
        }
    }

    pub fn masked(net: &'a FlowNetwork, interest: impl IntoIterator<Item = usize>) -> Self {
        let mut masked = vec![false; net.n()];
        for i in interest {
            masked[i] = true;
        }
        FlowView {
            net,
            masked,
            violations: AtomicUsize::new(0),
        }
    }

    /// Features, geometry and edge structure. Flows must be read through
    /// [`FlowView::flow`].
    pub fn network(&self) -> &'a FlowNetwork {
        self.net
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked[i]
    }

    pub fn masked_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.masked.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }

    pub fn regular_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.masked.iter().enumerate().filter(|(_, &m)| !m).map(|(i, _)| i)
    }

    /// `W_ij`, or `None` (recorded as a violation) if either end is masked.
    pub fn flow(&self, i: usize, j: usize) -> Option<f64> {
        if self.masked[i] || self.masked[j] {
            self.violations.fetch_add(1, Ordering::Relaxed);
            return None;
        }
        Some(self.net.flow_unguarded(i, j))
    }

    pub fn edge_flow(&self, e: usize) -> Option<f64> {
        let (i, j) = self.net.edge(e);
        if self.masked[i] || self.masked[j] {
            self.violations.fetch_add(1, Ordering::Relaxed);
            return None;
        }
        Some(self.net.flows_unguarded()[e])
    }

    pub fn violations(&self) -> usize {
        self.violations.load(Ordering::Relaxed)
    }
}
