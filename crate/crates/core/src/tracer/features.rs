use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::Corpus;
use crate::dfes::DifficultyLine;
use crate::error::{Error, Result};
use crate::kdes::{argmax, KnowledgeLine};
use crate::numkit::SparseRow;
use crate::sfes::ClusterAssignment;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "DKT")]
    Dkt,
    #[serde(rename = "EHFKT_K")]
    EhfktK,
    #[serde(rename = "EHFKT_S")]
    EhfktS,
    #[serde(rename = "EHFKT_D")]
    EhfktD,
    #[serde(rename = "EHFKT_T")]
    EhfktT,
    #[serde(rename = "EHFKT")]
    Ehfkt,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Dkt,
        Variant::EhfktK,
        Variant::EhfktS,
        Variant::EhfktD,
        Variant::EhfktT,
        Variant::Ehfkt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dkt => "DKT",
            Variant::EhfktK => "EHFKT_K",
            Variant::EhfktS => "EHFKT_S",
            Variant::EhfktD => "EHFKT_D",
            Variant::EhfktT => "EHFKT_T",
            Variant::Ehfkt => "EHFKT",
        }
    }

    pub fn needs_knowledge(self) -> bool {
        matches!(self, Variant::EhfktK | Variant::EhfktT | Variant::Ehfkt)
    }

    pub fn needs_clusters(self) -> bool {
        matches!(self, Variant::EhfktS | Variant::EhfktT | Variant::Ehfkt)
    }

    pub fn needs_difficulty(self) -> bool {
        matches!(self, Variant::EhfktD | Variant::EhfktT | Variant::Ehfkt)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown variant '{s}' (expected one of DKT, EHFKT_K, EHFKT_S, EHFKT_D, EHFKT_T, EHFKT)"
                ))
            })
    }
}

/// Subsystem outputs per exercise, indexed by question number.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    knowledge: Option<Vec<Vec<f64>>>,
    clusters: Option<Vec<usize>>,
    num_clusters: usize,
    difficulty: Option<Vec<f64>>,
}

/// Everything known about one exercise.
#[derive(Clone, Debug, PartialEq)]
pub struct ExerciseFeatures {
    pub question: usize,
    pub knowledge: Option<Vec<f64>>,
    pub cluster: Option<usize>,
    pub difficulty: Option<f64>,
}

impl FeatureTable {
    pub fn new(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::format("feature table", format!("duplicate exercise '{id}'")));
            }
        }
        Ok(FeatureTable {
            ids,
            index,
            knowledge: None,
            clusters: None,
            num_clusters: 0,
            difficulty: None,
        })
    }

    /// Question numbering follows corpus order.
    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        Self::new(corpus.records().iter().map(|r| r.exercise_id.clone()).collect())
    }

    fn align<T: Clone>(&self, what: &str, items: impl Iterator<Item = (String, T)>) -> Result<Vec<T>> {
        let mut out: Vec<Option<T>> = vec![None; self.ids.len()];
        for (id, v) in items {
            if let Some(&i) = self.index.get(&id) {
                out[i] = Some(v);
            }
        }
        let missing: Vec<&str> = self
            .ids
            .iter()
            .zip(&out)
            .filter(|(_, v)| v.is_none())
            .map(|(id, _)| id.as_str())
            .take(5)
            .collect();
        if !missing.is_empty() {
            return Err(Error::format(what, format!("no entry for exercise(s) {}", missing.join(", "))));
        }
        Ok(out.into_iter().map(|v| v.expect("checked")).collect())
    }

    pub fn with_knowledge(mut self, lines: &[KnowledgeLine]) -> Result<Self> {
        let v = self.align("knowledge distributions", lines.iter().map(|l| (l.exercise_id.clone(), l.v.clone())))?;
        let k = v.first().map_or(0, Vec::len);
        if k < 2 || v.iter().any(|x| x.len() != k) {
            return Err(Error::format("knowledge distributions", "vectors must share one length >= 2"));
        }
        self.knowledge = Some(v);
        Ok(self)
    }

    pub fn with_clusters(mut self, a: &ClusterAssignment) -> Result<Self> {
        let c = self.align(
            "cluster assignment",
            a.ids().iter().cloned().zip(a.labels().iter().copied()),
        )?;
        self.num_clusters = a.num_clusters();
        self.clusters = Some(c);
        Ok(self)
    }

    pub fn with_difficulty(mut self, lines: &[DifficultyLine]) -> Result<Self> {
        let d = self.align("difficulty estimates", lines.iter().map(|l| (l.exercise_id.clone(), l.d)))?;
        self.difficulty = Some(d);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn question(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::format("feature table", format!("unknown exercise '{id}'")))
    }

    pub fn num_tags(&self) -> usize {
        self.knowledge.as_ref().and_then(|v| v.first()).map_or(0, Vec::len)
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn features(&self, id: &str) -> Result<ExerciseFeatures> {
        let q = self.question(id)?;
        Ok(ExerciseFeatures {
            question: q,
            knowledge: self.knowledge.as_ref().map(|k| k[q].clone()),
            cluster: self.clusters.as_ref().map(|c| c[q]),
            difficulty: self.difficulty.as_ref().map(|d| d[q]),
        })
    }

    fn knowledge_of(&self, q: usize) -> &[f64] {
        &self.knowledge.as_ref().expect("layout checked")[q]
    }

    fn cluster_of(&self, q: usize) -> usize {
        self.clusters.as_ref().expect("layout checked")[q]
    }

    fn difficulty_of(&self, q: usize) -> f64 {
        self.difficulty.as_ref().expect("layout checked")[q]
    }

    /// Short hash of the question numbering, stored with checkpoints.
    pub fn questions_fingerprint(&self) -> String {
        crate::dataio::fingerprint(&self.ids)
    }
}

/// Block sizes of a variant's input and output spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub variant: Variant,
    pub questions: usize,
    pub tags: usize,
    pub clusters: usize,
    /// EHFKT_T only: read out `y · v_{t+1}` instead of `y · onehot(argmax v_{t+1})`.
    pub soft_readout: bool,
}

impl Layout {
    pub fn new(variant: Variant, table: &FeatureTable, soft_readout: bool) -> Result<Self> {
        let need = |ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("variant {variant} requires {what}")))
            }
        };
        if variant.needs_knowledge() {
            need(table.knowledge.is_some(), "knowledge distributions (kdes)")?;
        }
        if variant.needs_clusters() {
            need(table.clusters.is_some(), "a cluster assignment (sfes)")?;
        }
        if variant.needs_difficulty() {
            need(table.difficulty.is_some(), "difficulty estimates (dfes)")?;
        }
        if soft_readout && variant != Variant::EhfktT {
            return Err(Error::Config(format!("soft readout applies to EHFKT_T only, not {variant}")));
        }
        if table.is_empty() {
            return Err(Error::Config("feature table has no exercises".into()));
        }
        Ok(Layout {
            variant,
            questions: table.len(),
            tags: table.num_tags(),
            clusters: table.num_clusters(),
            soft_readout,
        })
    }

    pub fn input_dim(&self) -> usize {
        let (q, k, c) = (self.questions, self.tags, self.clusters);
        match self.variant {
            Variant::Dkt => 2 * q,
            Variant::EhfktK => q + k + 1,
            Variant::EhfktS => q + c + 1,
            Variant::EhfktD => q + 2,
            Variant::EhfktT | Variant::Ehfkt => k + c + 2,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.variant {
            Variant::EhfktT => self.tags,
            Variant::Ehfkt => self.clusters,
            _ => self.questions,
        }
    }
}

/// Which output component scores the next answer.
#[derive(Clone, Debug, PartialEq)]
pub enum Readout {
    Index(usize),
    /// Weights over all outputs; the score is `y · w`.
    Soft(Vec<f64>),
}

/// Input row `x_t` for answering question `q` with `r`.
///
/// * DKT: one-hot of `q + r·Q` in 2Q.
/// * EHFKT_K/S/D: `[onehot(q) | v or φ or d | r]`.
/// * EHFKT_T, EHFKT: `[v | φ | d | r]`.
pub fn assemble_features(layout: &Layout, table: &FeatureTable, q: usize, r: u8) -> SparseRow {
    let mut x = SparseRow::new(layout.input_dim());
    let rv = r as f64;
    let qn = layout.questions;
    match layout.variant {
        Variant::Dkt => x.push(q + r as usize * qn, 1.0),
        Variant::EhfktK => {
            x.push(q, 1.0);
            for (k, &v) in table.knowledge_of(q).iter().enumerate() {
                x.push(qn + k, v);
            }
            x.push(qn + layout.tags, rv);
        }
        Variant::EhfktS => {
            x.push(q, 1.0);
            x.push(qn + table.cluster_of(q), 1.0);
            x.push(qn + layout.clusters, rv);
        }
        Variant::EhfktD => {
            x.push(q, 1.0);
            x.push(qn, table.difficulty_of(q));
            x.push(qn + 1, rv);
        }
        Variant::EhfktT | Variant::Ehfkt => {
            let (k, c) = (layout.tags, layout.clusters);
            for (i, &v) in table.knowledge_of(q).iter().enumerate() {
                x.push(i, v);
            }
            x.push(k + table.cluster_of(q), 1.0);
            x.push(k + c, table.difficulty_of(q));
            x.push(k + c + 1, rv);
        }
    }
    x
}

/// Output component for predicting an answer to question `q`.
pub fn readout_for(layout: &Layout, table: &FeatureTable, q: usize) -> Readout {
    match layout.variant {
        Variant::Ehfkt => Readout::Index(table.cluster_of(q)),
        Variant::EhfktT if layout.soft_readout => Readout::Soft(table.knowledge_of(q).to_vec()),
        Variant::EhfktT => Readout::Index(argmax(table.knowledge_of(q))),
        _ => Readout::Index(q),
    }
}

/// One student's sequence in model space. `readouts[t]` and `labels[t]`
/// describe event `t + 1`, predicted from inputs `0..=t`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSeq {
    pub inputs: Vec<SparseRow>,
    pub readouts: Vec<Readout>,
    pub labels: Vec<f64>,
}

impl EncodedSeq {
    pub fn transitions(&self) -> usize {
        self.labels.len()
    }
}

/// Encode `(exercise id, answer)` pairs, keeping the first `max_len`.
pub fn encode_sequence(layout: &Layout, table: &FeatureTable, events: &[(&str, u8)], max_len: usize) -> Result<EncodedSeq> {
    let events = &events[..events.len().min(max_len)];
    let mut inputs = Vec::with_capacity(events.len());
    let mut readouts = Vec::with_capacity(events.len().saturating_sub(1));
    let mut labels = Vec::with_capacity(events.len().saturating_sub(1));
    for (t, &(id, r)) in events.iter().enumerate() {
        let q = table.question(id)?;
        if t > 0 {
            readouts.push(readout_for(layout, table, q));
            labels.push(r as f64);
        }
        inputs.push(assemble_features(layout, table, q, r));
    }
    Ok(EncodedSeq { inputs, readouts, labels })
}
