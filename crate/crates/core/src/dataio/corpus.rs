use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embeddings::{load_embeddings, save_embeddings, Embeddings};
use super::jsonl::{read_jsonl, write_jsonl};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// One exercise: its token-level embedding sequence plus optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ExerciseRecord {
    pub exercise_id: String,
    /// L × d token embeddings.
    pub tokens: Matrix,
    pub knowledge_tag: Option<usize>,
    pub text: Option<String>,
}

impl ExerciseRecord {
    /// Mean over token rows.
    pub fn pooled(&self) -> Vec<f64> {
        let (l, d) = self.tokens.shape();
        let mut out = vec![0.0; d];
        for r in 0..l {
            for (o, v) in out.iter_mut().zip(self.tokens.row(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= l as f64);
        out
    }
}

/// Line schema of `exercises.jsonl`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExerciseLine {
    pub exercise_id: String,
    #[serde(default)]
    pub knowledge_tag: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// Ordered exercise collection with id lookup.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    records: Vec<ExerciseRecord>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(records: Vec<ExerciseRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        let dim = records.first().map(|r| r.tokens.cols());
        for (i, r) in records.iter().enumerate() {
            if Some(r.tokens.cols()) != dim {
                return Err(Error::format(
                    format!("exercise '{}'", r.exercise_id),
                    "token dimension differs from the rest of the corpus",
                ));
            }
            if r.tokens.rows() == 0 {
                return Err(Error::format(format!("exercise '{}'", r.exercise_id), "no tokens"));
            }
            if index.insert(r.exercise_id.clone(), i).is_some() {
                return Err(Error::format("corpus", format!("duplicate exercise id '{}'", r.exercise_id)));
            }
        }
        Ok(Corpus { records, index })
    }

    pub fn records(&self) -> &[ExerciseRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.tokens.cols())
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&ExerciseRecord> {
        self.position(id).map(|i| &self.records[i])
    }

    /// One more than the largest knowledge tag present.
    pub fn num_tags(&self) -> usize {
        self.records
            .iter()
            .filter_map(|r| r.knowledge_tag)
            .max()
            .map_or(0, |m| m + 1)
    }

    pub fn embeddings(&self) -> Embeddings {
        let mut e = Embeddings::new(self.dim());
        for r in &self.records {
            e.insert(r.exercise_id.clone(), r.tokens.clone())
                .expect("corpus dims validated at construction");
        }
        e
    }
}

pub fn load_corpus(exercises: &Path, embeddings: &Path) -> Result<Corpus> {
    let lines: Vec<ExerciseLine> = read_jsonl(exercises)?;
    let mut emb = load_embeddings(embeddings)?;
    let mut records = Vec::with_capacity(lines.len());
    for line in lines {
        let tokens = emb.tokens.shift_remove(&line.exercise_id).ok_or_else(|| {
            Error::format(
                embeddings.display().to_string(),
                format!("no embedding for exercise '{}'", line.exercise_id),
            )
        })?;
        records.push(ExerciseRecord {
            exercise_id: line.exercise_id,
            tokens,
            knowledge_tag: line.knowledge_tag,
            text: line.text,
        });
    }
    Corpus::new(records)
}

pub fn save_corpus(corpus: &Corpus, exercises: &Path, embeddings: &Path) -> Result<()> {
    let lines: Vec<ExerciseLine> = corpus
        .records()
        .iter()
        .map(|r| ExerciseLine {
            exercise_id: r.exercise_id.clone(),
            knowledge_tag: r.knowledge_tag,
            text: r.text.clone(),
        })
        .collect();
    write_jsonl(exercises, &lines)?;
    save_embeddings(embeddings, &corpus.embeddings())
}
