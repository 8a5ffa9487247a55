//! Policy iteration for infinite-horizon DEC-POMDPs.
//!
//! Joint policies are stochastic finite-state controllers, one per agent,
//! optionally coordinated by a correlation device. The crate provides the
//! model layer, exact controller evaluation, exhaustive backups, LP-based
//! controller reductions and bounded backups, a point-based heuristic
//! variant and brute-force oracles used for verification.

pub mod error;
pub mod joint;
pub mod linalg;
pub mod lp;
pub mod controller;
pub mod heuristic;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod solver;
pub mod transform;

pub use error::{Error, Result};
pub use model::{
    belief_update, observation_likelihood, parse_dpomdp, write_dpomdp, BeliefState, DecPomdp, FixedAgentPolicy,
    ModelBuilder,
};
pub use scalar::Scalar;

/// `f64` instantiations of the generic types.
pub type Model = DecPomdp<f64>;
pub type Controller = controller::JointController<f64>;
pub type Values = controller::ValueTable<f64>;
pub type Belief = BeliefState<f64>;
pub type TeammatePolicy = FixedAgentPolicy<f64>;
pub type BeliefPoints = heuristic::BeliefPointSet<f64>;
