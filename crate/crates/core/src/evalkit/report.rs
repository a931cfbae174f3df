use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::mean_std;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub run_id: String,
    pub variant: String,
    pub auc: f64,
    pub accuracy: f64,
    pub event_count: usize,
    pub config_fingerprint: String,
    pub seed: u64,
    #[serde(default)]
    pub curve_path: Option<String>,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.auc) {
            return Err(Error::format(&self.run_id, format!("AUC {} outside [0, 1]", self.auc)));
        }
        if self.event_count == 0 {
            return Err(Error::format(&self.run_id, "report covers no events"));
        }
        Ok(())
    }
}

/// Published AUCs for the model families this toolkit reimplements, shown next
/// to measured rows for orientation only.
pub const PUBLISHED_AUC: &[(&str, f64)] = &[
    ("BKT", 0.6325),
    ("DKT", 0.8324),
    ("EHFKT_S", 0.8407),
    ("EHFKT_K", 0.8371),
    ("EHFKT_D", 0.8382),
    ("EHFKT_T", 0.8445),
    ("EHFKT", 0.8505),
];

pub fn published_auc(variant: &str) -> Option<f64> {
    PUBLISHED_AUC.iter().find(|(v, _)| *v == variant).map(|&(_, a)| a)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub runs: usize,
    pub mean_auc: f64,
    /// Sample standard deviation across runs (seeds).
    pub std_auc: f64,
    pub mean_accuracy: f64,
    pub published_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, variant: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>4} {:>18} {:>9} {:>10}",
            "variant", "runs", "AUC (mean ± std)", "accuracy", "published"
        );
        for r in &self.rows {
            let published = r
                .published_auc
                .map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(
                s,
                "{:<10} {:>4} {:>9.4} ± {:<6.4} {:>9.4} {:>10}",
                r.variant, r.runs, r.mean_auc, r.std_auc, r.mean_accuracy, published
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,runs,mean_auc,std_auc,mean_accuracy,published_auc\n");
        for r in &self.rows {
            let published = r.published_auc.map_or_else(String::new, |a| a.to_string());
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.variant, r.runs, r.mean_auc, r.std_auc, r.mean_accuracy, published
            );
        }
        s
    }
}

/// Group reports by variant and sort rows by mean AUC, best first.
pub fn compare_runs(reports: &[EvalReport]) -> Result<Comparison> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("compare needs at least one report".into()));
    }
    let mut groups: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.variant.as_str()).or_default().push(r);
    }
    let mut rows: Vec<ComparisonRow> = groups
        .into_iter()
        .map(|(variant, rs)| {
            let aucs: Vec<f64> = rs.iter().map(|r| r.auc).collect();
            let accs: Vec<f64> = rs.iter().map(|r| r.accuracy).collect();
            let (mean_auc, std_auc) = mean_std(&aucs);
            ComparisonRow {
                variant: variant.to_string(),
                runs: rs.len(),
                mean_auc,
                std_auc,
                mean_accuracy: mean_std(&accs).0,
                published_auc: published_auc(variant),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.mean_auc.total_cmp(&a.mean_auc).then_with(|| a.variant.cmp(&b.variant)));
    Ok(Comparison { rows })
}
