//! Inductive synthesis of deterministic finite-state controllers (FSCs)
//! for POMDPs under indefinite-horizon specifications.
//!
//! The synthesizer runs a nested loop: an inner search over a family of
//! FSCs (quotient-MDP abstraction refinement, counterexample-guided
//! pruning, or a hybrid of both) and an outer loop that injects memory
//! nodes into selected observations and applies symmetry reduction.

pub mod checker;
pub mod enumerate;
pub mod family;
pub mod inner;
pub mod model;
pub mod outer;
pub mod parse;
