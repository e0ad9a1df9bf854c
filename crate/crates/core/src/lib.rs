#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod constants;
pub mod expr;
pub mod fk_solver;
pub mod grid;
pub mod mc_oracle;
pub mod model;
pub mod strategy;
