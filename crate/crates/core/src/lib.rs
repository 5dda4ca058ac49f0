//! Formal verification and controller synthesis for discrete-time stochastic
//! control systems.
//!
//! The crate is organized around the usual abstraction pipeline:
//!
//! * [`model`] holds linear/affine systems with diagonal Gaussian noise,
//! * [`grid`] and [`abstraction`] turn such a system into a sparse finite MDP
//!   with an absorbing out-of-domain state,
//! * [`synthesis`] runs bounded-horizon dynamic programming over the MDP (and
//!   its product with a DFA) and refines the resulting policy back to the
//!   concrete system,
//! * [`bounds`] computes the closeness guarantees that relate the two,
//! * [`barrier`] provides a discretization-free alternative based on control
//!   barrier certificates,
//! * [`network`] composes subsystems and checks small-gain conditions,
//! * [`sim`] validates every bound against Monte Carlo simulation.

// `!(x > 0.0)` style guards deliberately reject NaN along with bad values
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod abstraction;
pub mod barrier;
pub mod bounds;
pub mod error;
pub mod gaussian;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod network;
pub mod rng;
pub mod sim;
pub mod spec;
pub mod synthesis;

pub use abstraction::{abstract_system, transition_row, AbstractionOptions, FiniteMdp, TruncationPolicy};
pub use barrier::{BarrierCertificate, CbcReport, KushnerBound, Polynomial};
pub use bounds::{ClosenessReport, LipschitzData, QuadraticSsf, SsfParams};
pub use error::{Error, Result};
pub use grid::{Grid, InputSet};
pub use model::{HyperRect, InputGain, LinearDtScs, Region};
pub use network::{Interconnection, Subsystem};
pub use sim::{EstimateCI, TrajectoryBatch};
pub use spec::{Dfa, HorizonSpec, LabelMap};
pub use synthesis::{ConcreteController, ProductPolicy, ValueFunction};
