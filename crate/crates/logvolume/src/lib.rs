//! Finite-blocklength coding bounds for discrete memoryless channels.
//!
//! This crate computes two-sided constants bounding the log-volume of
//! optimal channel codes beyond the Gaussian approximation, together with
//! the machinery those constants are built from:
//!
//! - [`channel`] — channel matrices, probability vectors, named channel
//!   families, lattice detection of log-likelihood ratios.
//! - [`info`] — divergence and information moments, Rényi divergence, the
//!   quantile correction `F_eps`, and the `zeta_n` payoff functions.
//! - [`capacity`] — capacity, the capacity-achieving output distribution,
//!   the polytopes of capacity- and dispersion-achieving inputs.
//! - [`geometry`] — Fisher information matrices, the constrained
//!   pseudo-inverse, variance gradient vectors, the quadratic game
//!   saddlepoint, and the `O(n^{-1/2})` correction distributions.
//! - [`bounds`] — the fourth-order constants, the dedicated binary
//!   symmetric channel (lattice) constants, log-volume brackets, and
//!   parameter sweeps.
//! - [`tail`] — exponential tilting, large-deviations functions,
//!   Edgeworth/Cornish-Fisher expansions, and sharp tail prefactors.
//! - [`np`] — exact randomized Neyman-Pearson tests between product
//!   distributions, their sharp asymptotics, and baseline bounds.
//! - [`sim`] — random-coding simulation with maximum-likelihood decoding
//!   and union-bound term estimation.
//! - [`cli`] — the command-line surface used by the `logvolume` binary.
//!
//! All logarithmic quantities are in nats.
//!
//! Run `cargo run --example channel_bounds` (or any other example in
//! `examples/`) for a guided tour of the main entry points.

pub mod bounds;
pub mod capacity;
pub mod channel;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod info;
pub mod normal;
pub mod np;
pub(crate) mod numerics;
pub mod sim;
pub mod tail;

pub use bounds::{a_eps_bounds, bsc_constants, log_volume_bracket, sweep, BoundsResult};
pub use capacity::{capacity_sets, solve_capacity, CapacityAnalysis};
pub use channel::{Dmc, LatticeStructure, Pmf};
pub use error::{Error, Result};
pub use geometry::{fisher_matrix, gradient_vectors, FisherMatrices, GradientVectors};
pub use info::{channel_moments, divergence_moments, ChannelMoments, DivergenceMoments};
pub use np::{np_beta_asymptotic, np_beta_exact, NpResult, ProductTest};
pub use sim::{achievable_rate, simulate_random_code, CodeEnsembleSpec, SimResult};
pub use tail::CgfModel;
