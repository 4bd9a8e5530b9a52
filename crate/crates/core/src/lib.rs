//! Thompson-metric contraction analysis of order-preserving flows on the cone
//! of positive definite matrices.

// Guards of the form `!(x > 0.0)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cone;
pub mod discrete;
pub mod error;
pub mod flow;
pub mod gare;
pub mod gauge;
pub mod json;
pub mod par;
pub mod random;
pub mod rates;
pub mod vfield;

pub use cone::{loewner_leq, max_ratio, min_ratio, thompson_distance, OrderInterval, SpdMat, SymMat};
pub use discrete::{lipschitz_report, DiscreteParams, LipschitzReport};
pub use error::{Error, Result};
pub use flow::{flow_map, integrate, ExitReason, IntegrationConfig, Trajectory};
pub use gare::{solve_gare, solve_std_are, verify_gare, GareOptions, GareSolution};
pub use gauge::GaugeFunction;
pub use par::Execution;
pub use rates::{DomainSampler, RateCertificate, RateMethod, Rigor};
pub use vfield::{GrdeParams, StdRiccatiParams, VectorField};
