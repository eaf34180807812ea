//! Generalized Benders decomposition workbench with a learned master-step
//! agent.
//!
//! The crate splits along the algorithm's moving parts:
//!
//! - [`problem`]: the parameterized convex MINLP family, instance sampling
//!   and the admissible binary action space.
//! - [`solver`]: log-barrier Newton solver for the fixed-assignment
//!   subproblem and its slack feasibility variant, with dual recovery.
//! - [`cuts`]: affine optimality/feasibility cuts built from subproblem
//!   duals, plus the cut-store queries the master and the policy rely on.
//! - [`master`]: exact master solves by enumeration and a budgeted
//!   branch-and-bound that certifies a valid best bound.
//! - [`graph`]: bipartite variable/cut graph encoding of a master state and
//!   the serialized dataset sample.
//! - [`policy`]: edge-conditioned graph network with exact reverse-mode
//!   gradients, Adam, and both output heads.
//! - [`training`]: two-stage training procedure and policy metrics.
//! - [`driver`]: classical and agent-based decomposition loops, budget
//!   schedule and the enumeration oracle.
//! - [`cli`]: the `gbd-agent` command-line workbench.

pub mod cli;
pub mod cuts;
pub mod driver;
pub mod graph;
pub mod master;
pub mod policy;
pub mod problem;
pub mod solver;
pub mod training;

pub use problem::{Assignment, ProblemInstance, PureBinaryConstraints};
