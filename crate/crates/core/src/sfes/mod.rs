//! Semantic features: average-linkage agglomerative clustering of exercise
//! vectors under cosine distance, and dendrogram cuts that define each
//! exercise's cluster one-hot.
//!
//! Each exercise is represented by the mean of its token embeddings. Ties
//! between equal-distance candidate merges go to the pair with the smallest
//! `(min node id, max node id)`; leaves are nodes `0..n` and the k-th merge
//! creates node `n + k`.

mod dendrogram;
mod export;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use dendrogram::{agglomerate, distance_matrix, Dendrogram, Merge};
pub use export::{export_dendrogram, format_merge_list, parse_merge_list, dendrogram_svg};

use crate::dataio::{read_jsonl, write_jsonl, Corpus};
use crate::error::{Error, Result};

/// `1 − cos(u, v)`, in [0, 2].
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            op: "cosine_distance",
            left: (1, u.len()),
            right: (1, v.len()),
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::InvalidArgument(
            "cosine distance is undefined for a zero vector".into(),
        ));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((1.0 - dot / (nu * nv)).clamp(0.0, 2.0))
}

/// Cluster index per exercise after a cut.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    num_clusters: usize,
    ids: Vec<String>,
    labels: Vec<usize>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterLine {
    pub exercise_id: String,
    pub cluster: usize,
}

impl ClusterAssignment {
    pub fn new(ids: Vec<String>, labels: Vec<usize>) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(Error::InvalidArgument("ids and labels differ in length".into()));
        }
        let num_clusters = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; num_clusters];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::format("cluster assignment", format!("cluster {empty} is empty")));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::format("cluster assignment", format!("duplicate id '{id}'")));
            }
        }
        Ok(ClusterAssignment {
            num_clusters,
            ids,
            labels,
            index,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn cluster_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).map(|&i| self.labels[i])
    }

    pub fn one_hot(&self, id: &str) -> Result<Vec<f64>> {
        let c = self
            .cluster_of(id)
            .ok_or_else(|| Error::InvalidArgument(format!("exercise '{id}' has no cluster")))?;
        let mut v = vec![0.0; self.num_clusters];
        v[c] = 1.0;
        Ok(v)
    }

    pub fn lines(&self) -> Vec<ClusterLine> {
        self.ids
            .iter()
            .zip(&self.labels)
            .map(|(id, &c)| ClusterLine {
                exercise_id: id.clone(),
                cluster: c,
            })
            .collect()
    }
}

/// Free-function form of [`ClusterAssignment::one_hot`].
pub fn one_hot(assignment: &ClusterAssignment, exercise_id: &str) -> Result<Vec<f64>> {
    assignment.one_hot(exercise_id)
}

/// Undo the last `k − 1` merges. Cluster indices follow each cluster's smallest leaf.
pub fn cut(dendrogram: &Dendrogram, k: usize) -> Result<ClusterAssignment> {
    let labels = cut_labels(dendrogram, k)?;
    ClusterAssignment::new(dendrogram.leaf_ids.clone(), labels)
}

pub fn cut_labels(dendrogram: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let n = dendrogram.n();
    if k < 1 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cluster count {k} outside [1, {n}]"
        )));
    }
    let mut parent: Vec<usize> = (0..n + dendrogram.merges.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for m in &dendrogram.merges[..n - k] {
        parent[m.left] = m.id;
        parent[m.right] = m.id;
    }
    let mut label_of_root: HashMap<usize, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(n);
    for leaf in 0..n {
        let root = find(&mut parent, leaf);
        let next = label_of_root.len();
        labels.push(*label_of_root.entry(root).or_insert(next));
    }
    Ok(labels)
}

/// Mean-pooled vector per exercise, in corpus order.
pub fn pooled_vectors(corpus: &Corpus) -> Vec<Vec<f64>> {
    corpus.records().iter().map(|r| r.pooled()).collect()
}

pub fn cluster_corpus(corpus: &Corpus, k: usize) -> Result<(Dendrogram, ClusterAssignment)> {
    let ids = corpus.records().iter().map(|r| r.exercise_id.clone()).collect();
    let dend = agglomerate(ids, &pooled_vectors(corpus))?;
    let assign = cut(&dend, k)?;
    Ok((dend, assign))
}

pub fn save_assignment(path: &Path, a: &ClusterAssignment) -> Result<()> {
    write_jsonl(path, &a.lines())
}

pub fn load_assignment(path: &Path) -> Result<ClusterAssignment> {
    let lines: Vec<ClusterLine> = read_jsonl(path)?;
    let (ids, labels) = lines.into_iter().map(|l| (l.exercise_id, l.cluster)).unzip();
    ClusterAssignment::new(ids, labels)
}
