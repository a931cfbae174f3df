//! LSTM knowledge tracer over assembled exercise features, with the DKT
//! baseline and the single-subsystem ablations as layout variants.
//!
//! At step `t` the LSTM consumes `x_t`; its output `y_t = σ(W_yh·h_t + b_y)`
//! holds one mastery estimate per output unit, and the unit matching the next
//! exercise (its cluster for EHFKT, its question for DKT and the ablations,
//! its dominant tag for EHFKT_T) scores that answer.

mod features;
mod model;
mod train;

pub use features::{
    assemble_features, encode_sequence, readout_for, EncodedSeq, ExerciseFeatures, FeatureTable, Layout, Readout,
    Variant,
};
pub use model::{sequence_loss, TracerParams};
pub use train::{
    encode_logs, evaluate_tracer, predict_next, train_tracer, TracerConfig, TracerTrained, MODEL_KIND,
};

#[cfg(test)]
mod tests;
