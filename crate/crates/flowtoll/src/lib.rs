//! Mediated atomic unsplittable routing games.
//!
//! A weak mediator for congestion games: players report source/destination
//! demands, the mediator computes a near-optimal flow under joint
//! differential privacy by running no-regret dynamics on a Lagrangian
//! zero-sum game, releases noisy edge congestion, derives anonymous
//! marginal-cost tolls from it, reroutes the few players left unsatisfied,
//! and hands each player a suggested path plus the shared toll vector.
//!
//! The crate is organized around six modules:
//!
//! - [`game_core`]: the routing-game data model: instances, flows,
//!   congestion, tolls, costs, the exact potential, and unsatisfaction.
//! - [`dp_mech`]: Laplace and exponential mechanisms plus privacy-budget
//!   accounting (basic and advanced composition).
//! - [`private_opt`]: the convex relaxation, projected gradient descent on
//!   the restricted Lagrangian game, the private solver, and randomized
//!   rounding by path stripping.
//! - [`mediator`]: the end-to-end pipeline: private optimization, private
//!   congestion release, tolls, and best-response repair.
//! - [`oracles`]: exact ground-truth solvers (brute force, fractional
//!   relaxation) and the deviation-gain measurement harness.
//! - [`cli_io`]: instance/result text formats, instance generators, the
//!   experiment runner behind the `flowtoll` binary.
//!
//! Everything is deterministic given a master seed; randomness flows through
//! explicitly seeded generators with per-purpose substreams.

pub mod cli_io;
pub mod dp_mech;
pub mod game_core;
pub mod mediator;
pub mod oracles;
pub mod private_opt;

pub use game_core::{
    Congestion, FractionalFlow, GameError, IntegralFlow, Latency, RoutingInstance, TollSchedule,
    TollVector,
};
