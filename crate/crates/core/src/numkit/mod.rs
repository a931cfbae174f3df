//! Dense numerics, reverse-mode gradients, optimizers and seeded randomness.

pub mod gradcheck;
pub mod matrix;
pub mod optim;
pub mod rng;
pub mod tape;

pub use matrix::{bce, clamp_prob, relu, sigmoid, sigmoid_scalar, softmax_rows, tanh, Matrix, PROB_EPS};
pub use optim::{Optimizer, OptimizerKind};
pub use rng::{derive_seed, RngState};
pub use tape::{NodeId, ParamId, ParamStore, SparseRow, Tape};
