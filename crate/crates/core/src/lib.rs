//! Probabilistic shared control for assistive navigation through crowds.
//!
//! Gaussian trajectory models for the operator, robot and crowd,
//! interaction potentials, five arbitration strategies behind one trait,
//! and a closed-loop 2-D simulator.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arbitration;
pub mod checks;
pub mod gaussian;
pub mod interaction;
pub mod serde_float;
pub mod simulator;
pub mod trajectory;
