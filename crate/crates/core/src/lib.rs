//! Monte Carlo simulation of Brownian motions on metric graphs with
//! non-local Feller-Wentzell vertex conditions.
//!
//! The crate provides two interchangeable simulation backends:
//!
//! * a *direct* sampler ([`sampler::DirectGenerator`]) that resolves every
//!   vertex visit through an epsilon-shell scheme calibrated to the
//!   Feller-Wentzell boundary weights, and
//! * a *pipeline* backend ([`pipeline::construct_paper_pipeline`]) that
//!   assembles the same process literally: decompose the graph into star
//!   graphs, simulate local solutions, glue them back together via transfer
//!   kernels, and convert killing weights into jumps onto auxiliary
//!   absorbing points and back.
//!
//! An exact symbolic calculus for the boundary-data bookkeeping lives in
//! [`fw`], and [`stats`] holds the statistical harness used to verify both
//! backends against closed-form first-passage laws.

pub mod config;
pub mod fw;
pub mod graph;
pub mod interval;
pub mod pipeline;
pub mod presets;
pub mod sampler;
pub mod stats;
pub mod stream;

pub use fw::{FwAssignment, FwData, JumpMeasure};
pub use graph::{GraphPoint, MetricGraph, SubgraphDecomposition};
pub use sampler::{DirectGenerator, Trajectory};
pub use stream::RandomStream;
