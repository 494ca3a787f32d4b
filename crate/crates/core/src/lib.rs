//! Simulation and analysis toolkit for privacy-preserving, Byzantine-robust
//! decentralized SGD.
//!
//! Honest agents take noisy local SGD steps, exchange models with their graph
//! neighbours and combine what they receive with a robust aggregation rule,
//! while Byzantine agents inject crafted messages. Next to the simulator the
//! crate computes the analytical quantities that govern the
//! privacy/robustness tradeoff: virtual mixing matrices, spectral gap,
//! skewness, contraction-constant bounds and Rényi-DP privacy budgets.
//!
//! Every random draw is addressed by a keyed stream (see [`rng`]), so a run is
//! a pure function of its configuration, including under parallel execution.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod attacks;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod mixing;
pub mod privacy;
pub mod rng;
pub mod schedule;
pub mod tasks;
pub mod topology;
mod vector;

pub use aggregation::{Inbound, InboundSet, Rule, RuleKind};
pub use attacks::Attack;
pub use engine::{AgentState, Engine, Init, RoundMessages, RunConfig};
pub use error::{Error, Result};
pub use metrics::{MetricsLog, MetricsRow};
pub use mixing::{MixingAnalysis, MixingMatrix};
pub use privacy::{PrivacyParams, PrivacyReport};
pub use schedule::StepSchedule;
pub use tasks::{Objective, Partition, QuadraticTask, SoftmaxTask};
pub use topology::{Topology, TrustWeights};
