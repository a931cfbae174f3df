use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, auc, mean_group_auc};
use super::report::EvalReport;
use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AucMode {
    /// One AUC over all events of all students.
    #[default]
    Pooled,
    /// Mean of per-student AUCs; students with a single class are skipped.
    PerStudent,
}

/// (probability, observed answer) pairs grouped by student.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredEvents {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    /// Start offset of each student's events.
    pub starts: Vec<usize>,
}

impl ScoredEvents {
    pub fn begin_student(&mut self) {
        self.starts.push(self.scores.len());
    }

    pub fn push(&mut self, score: f64, label: u8) {
        self.scores.push(score);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn groups(&self) -> Vec<(Vec<f64>, Vec<u8>)> {
        let mut ends: Vec<usize> = self.starts.iter().skip(1).copied().collect();
        ends.push(self.scores.len());
        self.starts
            .iter()
            .zip(ends)
            .map(|(&a, b)| (self.scores[a..b].to_vec(), self.labels[a..b].to_vec()))
            .collect()
    }

    pub fn auc(&self, mode: AucMode) -> Result<f64> {
        match mode {
            AucMode::Pooled => auc(&self.scores, &self.labels),
            AucMode::PerStudent => mean_group_auc(&self.groups()),
        }
    }

    pub fn accuracy(&self) -> f64 {
        accuracy(&self.scores, &self.labels)
    }

    pub fn report(&self, run_id: &str, variant: &str, fingerprint: &str, seed: u64, mode: AucMode) -> Result<EvalReport> {
        let r = EvalReport {
            run_id: run_id.to_string(),
            variant: variant.to_string(),
            auc: self.auc(mode)?,
            accuracy: self.accuracy(),
            event_count: self.len(),
            config_fingerprint: fingerprint.to_string(),
            seed,
            curve_path: None,
        };
        r.validate()?;
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_and_per_student() {
        let mut s = ScoredEvents::default();
        s.begin_student();
        s.push(0.9, 1);
        s.push(0.1, 0);
        s.begin_student();
        s.push(0.2, 1);
        s.push(0.8, 0);
        s.begin_student();
        s.push(0.5, 1);
        assert_eq!(s.auc(AucMode::PerStudent).unwrap(), 0.5);
        assert!((s.auc(AucMode::Pooled).unwrap() - 4.0 / 6.0).abs() < 1e-12);
        let r = s.report("r", "DKT", "fp", 0, AucMode::Pooled).unwrap();
        assert_eq!(r.event_count, 5);
    }
}
