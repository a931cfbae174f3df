use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::jsonl::{read_jsonl, write_jsonl};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseEvent {
    pub exercise_id: String,
    /// 1 = correct, 0 = incorrect.
    pub correct: u8,
    pub step: u64,
}

/// One student's chronological attempts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseLog {
    pub student_id: String,
    pub events: Vec<ResponseEvent>,
}

impl ResponseLog {
    pub fn validate(&self) -> Result<()> {
        let loc = || format!("student '{}'", self.student_id);
        for (i, e) in self.events.iter().enumerate() {
            if e.correct > 1 {
                return Err(Error::format(
                    loc(),
                    format!("event {i}: correctness {} is not 0 or 1", e.correct),
                ));
            }
            if i > 0 && e.step <= self.events[i - 1].step {
                return Err(Error::format(
                    loc(),
                    format!(
                        "event {i}: step {} does not follow step {} (steps must strictly increase)",
                        e.step,
                        self.events[i - 1].step
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Deserialize)]
struct RawEvent {
    exercise_id: String,
    correct: serde_json::Number,
    step: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLog {
    student_id: String,
    events: Vec<RawEvent>,
}

pub fn load_responses(path: &Path) -> Result<Vec<ResponseLog>> {
    let raw: Vec<RawLog> = read_jsonl(path)?;
    let mut logs = Vec::with_capacity(raw.len());
    for (line, r) in raw.into_iter().enumerate() {
        let loc = || format!("{}:{} student '{}'", path.display(), line + 1, r.student_id);
        let mut events = Vec::with_capacity(r.events.len());
        for (i, e) in r.events.into_iter().enumerate() {
            let correct = match e.correct.as_u64() {
                Some(0) => 0,
                Some(1) => 1,
                _ => {
                    return Err(Error::format(
                        loc(),
                        format!("event {i}: correctness {} is not 0 or 1", e.correct),
                    ))
                }
            };
            events.push(ResponseEvent {
                exercise_id: e.exercise_id,
                correct,
                step: e.step,
            });
        }
        let log = ResponseLog {
            student_id: r.student_id.clone(),
            events,
        };
        log.validate().map_err(|e| match e {
            Error::Format { message, .. } => Error::format(loc(), message),
            other => other,
        })?;
        logs.push(log);
    }
    Ok(logs)
}

pub fn save_responses(path: &Path, logs: &[ResponseLog]) -> Result<()> {
    write_jsonl(path, logs)
}

/// Every exercise id referenced by `logs` must exist in `corpus`.
pub fn check_exercise_ids(logs: &[ResponseLog], corpus: &Corpus) -> Result<()> {
    let unknown: BTreeSet<&str> = logs
        .iter()
        .flat_map(|l| &l.events)
        .filter(|e| corpus.position(&e.exercise_id).is_none())
        .map(|e| e.exercise_id.as_str())
        .collect();
    if unknown.is_empty() {
        Ok(())
    } else {
        let shown: Vec<&str> = unknown.iter().take(10).copied().collect();
        Err(Error::format(
            "responses",
            format!("{} unknown exercise ids: {}", unknown.len(), shown.join(", ")),
        ))
    }
}

pub fn event_count(logs: &[ResponseLog]) -> usize {
    logs.iter().map(ResponseLog::len).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_student() {
        let f = write(
            r#"{"student_id":"s1","events":[{"exercise_id":"Q1","correct":1,"step":0},{"exercise_id":"Q2","correct":0,"step":1}]}"#,
        );
        let logs = load_responses(f.path()).unwrap();
        assert_eq!(logs.len(), 1);
        assert_eq!(logs[0].len(), 2);
        assert_eq!(logs[0].events[1].correct, 0);
    }

    #[test]
    fn duplicate_step_rejected() {
        let f = write(
            r#"{"student_id":"s1","events":[{"exercise_id":"Q1","correct":1,"step":3},{"exercise_id":"Q2","correct":0,"step":3}]}"#,
        );
        let err = load_responses(f.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("strictly increase"), "{err}");
    }

    #[test]
    fn out_of_order_rejected() {
        let f = write(
            r#"{"student_id":"s1","events":[{"exercise_id":"Q1","correct":1,"step":5},{"exercise_id":"Q2","correct":0,"step":2}]}"#,
        );
        assert!(load_responses(f.path()).is_err());
    }

    #[test]
    fn bad_correctness_rejected() {
        for bad in ["2", "-1", "0.5"] {
            let f = write(&format!(
                r#"{{"student_id":"s1","events":[{{"exercise_id":"Q1","correct":{bad},"step":0}}]}}"#
            ));
            let err = load_responses(f.path()).unwrap_err();
            assert!(err.to_string().contains("not 0 or 1"), "{bad}: {err}");
        }
    }
}
