//! Operator splitting for convex constrained Markov decision processes.
//!
//! A constrained MDP is solved over occupancy measures: minimize `cᵀd` over
//! the flow polytope `𝒟` intersected with a convex set `𝒞`. The
//! [`oscmdp::Solver`] runs Douglas-Rachford splitting between the two, using
//! quadratically regularized policy iteration ([`qrpi`]) for the MDP part and
//! a Euclidean projection ([`constraints`]) for `𝒞`. Infeasible problems are
//! detected and come with an estimate of the minimal displacement between the
//! two sets.
//!
//! ```
//! use oscmdp::{bench, Halfspace, SolverConfig, Status};
//!
//! let mdp: oscmdp::Mdp64 = bench::garnet(&bench::GarnetSpec::new(10, 3, 0.3, 1)).unwrap();
//! let slack = Halfspace::new(vec![1.0; mdp.num_pairs()], 2.0).unwrap();
//! let cfg = SolverConfig { sigma: 1.0, ..SolverConfig::default() };
//! let res = oscmdp::solve(&mdp, &slack, cfg).unwrap();
//! assert_eq!(res.status, Status::Optimal);
//! ```
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the `*64` and
//! `*32` aliases below fix the precision.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bench;
pub mod constraints;
mod error;
pub mod io;
pub mod linalg;
pub mod mdp;
pub mod oscmdp;
pub mod qrpi;
mod scalar;

pub use constraints::{ConstraintSet, ConvexSet, Halfspace, L2Ball, Polyhedron};
pub use error::{Error, Result};
pub use mdp::{Mdp, OccupancyMeasure, Policy};
pub use oscmdp::{solve, SolveResult, Solver, SolverConfig, Status};
pub use qrpi::{EvalMode, InnerStop, RegEvalBackend};
pub use scalar::Scalar;

pub type Mdp64 = Mdp<f64>;
pub type Mdp32 = Mdp<f32>;
pub type Occupancy64 = OccupancyMeasure<f64>;
pub type Occupancy32 = OccupancyMeasure<f32>;
pub type Policy64 = Policy<f64>;
pub type Policy32 = Policy<f32>;
pub type ConstraintSet64 = ConstraintSet<f64>;
pub type ConstraintSet32 = ConstraintSet<f32>;
pub type SolveResult64 = SolveResult<f64>;
pub type SolveResult32 = SolveResult<f32>;
