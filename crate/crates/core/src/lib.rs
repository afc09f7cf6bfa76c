//! Decoding as regularised optimisation over the probability simplex.
//!
//! Every decoder here returns a distribution `q` maximising
//! `<q, s> - lambda * Omega(q)` for some regulariser `Omega`, optionally on a
//! restricted support. Closed forms cover greedy, softmax, Top-K, Top-P and
//! sparsemax; [`solvers`] provides projected-gradient and mirror ascent for
//! general concave objectives; [`bok`] adds the Best-of-K coverage decoder.
//! [`kkt`] certifies any candidate against the optimality conditions.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bok;
pub mod decoders;
pub mod error;
pub mod flat;
pub mod harness;
pub mod kkt;
pub mod sampling;
pub mod solvers;
pub mod step;
pub mod types;

pub use bok::{bok_decode, coverage_utility, hit_probability, make_weights, BokConfig, WeightScheme, WeightVector};
pub use decoders::{decode_closed_form, DecoderConfig, DecoderKind};
pub use error::{Error, Result};
pub use kkt::{kkt_residual, KktReport, RegularizerSpec};
pub use sampling::{estimate_coverage, sample_k, sample_token, CoverageEstimate, RngStream};
pub use solvers::{mirror_solve, pga_solve, SolveDiagnostics, SolverConfig};
pub use types::{ReferenceDistribution, ScoreVector, SimplexDistribution, SupportMask};
