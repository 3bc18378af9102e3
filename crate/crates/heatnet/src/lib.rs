//! District heating network topology optimization.
//!
//! Two optimizers over one shared physics engine:
//!
//! - [`pnlp`]: a relaxed, penalized NLP with continuous diameters, adjoint
//!   gradients and a sigmoid-continuation that drives designs near-discrete.
//! - [`fminlp`]: a combinatorial formulation with binary pipe-existence
//!   variables, big-M couplings, a staged MIP/NLP initialization and
//!   branch-and-bound over the binaries.
//!
//! Plus [`casegen`] for scalable benchmark cases, [`sim`] for the
//! steady-state thermo-hydraulic solves both optimizers share, [`costing`]
//! for the net-present-value objective, and [`bench`] for wall-time scaling
//! fits and optimality-gap cross-evaluation.
//!
//! The `examples/` directory holds one runnable example per capability; the
//! `heatnet` binary exposes the same functionality as subcommands.

pub mod bench;
pub mod casegen;
pub mod costing;
pub mod design;
pub mod error;
pub mod fminlp;
pub mod lbfgsb;
pub mod network;
pub mod pnlp;
pub mod sim;

pub use design::{uniform_design, DesignFile, DesignVector, StateVector};
pub use error::{HeatNetError, Result};
pub use network::{
    build_network, CaseFile, ConsumerSpec, Edge, EdgeKind, GlobalParams, Network, Node, NodeKind,
    ProducerSpec,
};
pub use sim::{solve_state, SimConfig, SimResult};
