//! Proposal programs: probabilistic programs whose marginal distribution
//! over a set of output choices is used as a proposal inside importance
//! sampling and Metropolis-Hastings, with the intractable marginal replaced
//! by an unbiased estimate.
//!
//! Module map:
//! - [`trace`]: addresses, values, traces, choice maps.
//! - [`dist`]: primitive distributions with score functions.
//! - [`runtime`]: program execution, `simulate` and `assess`.
//! - [`samplers`]: importance sampling and Metropolis-Hastings.
//! - [`trainer`]: gradient estimator and offline parameter optimization.
//! - [`nnet`]: single-hidden-layer network with manual backpropagation.
//! - [`oracle`]: exhaustive enumeration and exact reference quantities.
//! - [`linreg`]: linear regression with outliers and its proposals.

pub mod dist;
pub mod linreg;
pub mod nnet;
pub mod oracle;
pub mod parallel;
pub mod params;
pub mod runtime;
pub mod samplers;
pub mod seed;
pub mod special;
pub mod trace;
pub mod trainer;

pub use dist::{DistError, Distribution, ParamGrad};
pub use params::{Gradients, ParamStore, Tensor};
pub use runtime::{
    assess, program_fn, run_constrained, run_forward, simulate, ExecError, ExecutionContext,
    ProbEstimate, ProposalProgram,
};
pub use seed::Seed;
pub use trace::{agrees, restrict, split_log_prob, Address, ChoiceMap, OutputSelection, Trace, Value};
