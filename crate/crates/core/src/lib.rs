//! Knowledge tracing with hierarchical exercise features.
//!
//! Three subsystems turn exercise embeddings into features: [`kdes`] predicts
//! a knowledge distribution, [`sfes`] clusters exercises semantically, and
//! [`dfes`] estimates difficulty. [`tracer`] feeds those features into an LSTM
//! that traces mastery per semantic cluster. [`bkt`] and the DKT/ablation
//! variants of the tracer serve as baselines, [`syngen`] produces synthetic
//! data with known ground truth, and [`evalkit`] scores everything by AUC.

pub mod bkt;
pub mod cli;
pub mod dataio;
pub mod dfes;
pub mod error;
pub mod evalkit;
pub mod kdes;
pub mod numkit;
pub mod sfes;
pub mod syngen;
pub mod tracer;

pub use error::{Error, Result};
