//! File formats, checkpoints and train/test splitting.

pub mod checkpoint;
pub mod corpus;
pub mod embeddings;
pub mod jsonl;
pub mod responses;
pub mod split;

pub use checkpoint::{fingerprint, load_checkpoint, save_checkpoint, sha256_file, Checkpoint, NamedParam};
pub use corpus::{load_corpus, save_corpus, Corpus, ExerciseLine, ExerciseRecord};
pub use embeddings::{load_embeddings, save_embeddings, Embeddings};
pub use jsonl::{read_json, read_jsonl, write_json, write_jsonl, write_text};
pub use responses::{check_exercise_ids, event_count, load_responses, save_responses, ResponseEvent, ResponseLog};
pub use split::split_train_test;
