//! Origin-destination flow prediction between nodes of interest and the rest
//! of a city grid.
//!
//! The crate is organised around a [`FlowNetwork`](network::FlowNetwork):
//! grid cells as nodes with feature vectors, symmetric annual flows as edge
//! weights, and per-pair edge features. On top of it sit
//!
//! * spatial interaction baselines ([`spatial`]): doubly constrained gravity,
//!   Huff, Poisson and negative binomial regression,
//! * a small reverse-mode differentiation engine and three neural
//!   architectures ([`neural`]): FCNN, GNN-geo and GNN-flow,
//! * the evaluation suite ([`metrics`]) and the node-of-interest experiment
//!   protocol ([`experiment`]).
//!
//! Every model fits through a [`FlowView`](guard::FlowView), which withholds
//! the flows of interest nodes and counts any attempt to read them.

pub mod adjacency;
pub mod config;
pub mod error;
pub mod experiment;
pub mod features;
pub mod grid;
pub mod guard;
pub mod ingest;
pub mod io;
pub mod metrics;
pub mod network;
pub mod neural;
pub mod spatial;
pub mod split;
pub mod synth;

pub use error::{Error, Result};
