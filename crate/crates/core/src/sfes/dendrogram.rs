use super::cosine_distance;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    /// Smaller of the two merged node ids.
    pub left: usize,
    pub right: usize,
    /// Average-linkage cosine distance between the merged clusters.
    pub height: f64,
    /// Node id of the new cluster (`n + merge index`).
    pub id: usize,
}

/// Full merge history over `n` leaves.
#[derive(Clone, Debug, PartialEq)]
pub struct Dendrogram {
    pub leaf_ids: Vec<String>,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn n(&self) -> usize {
        self.leaf_ids.len()
    }

    /// Check the structural invariants: n−1 merges, each node consumed once,
    /// children created before parents.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::format("dendrogram", "no leaves"));
        }
        if self.merges.len() != n - 1 {
            return Err(Error::format(
                "dendrogram",
                format!("{} merges for {n} leaves", self.merges.len()),
            ));
        }
        let mut used = vec![false; 2 * n - 1];
        for (k, m) in self.merges.iter().enumerate() {
            if m.id != n + k || m.left >= m.id || m.right >= m.id || m.left >= m.right {
                return Err(Error::format("dendrogram", format!("malformed merge {k}: {m:?}")));
            }
            for c in [m.left, m.right] {
                if used[c] {
                    return Err(Error::format("dendrogram", format!("node {c} merged twice")));
                }
                used[c] = true;
            }
            if !m.height.is_finite() {
                return Err(Error::format("dendrogram", format!("merge {k} has non-finite height")));
            }
        }
        Ok(())
    }
}

/// Full pairwise cosine distance matrix, row-major n×n.
pub fn distance_matrix(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = vectors.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = cosine_distance(&vectors[i], &vectors[j])
                .map_err(|e| Error::InvalidArgument(format!("vectors {i} and {j}: {e}")))?;
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    Ok(d)
}

#[derive(Clone, Copy)]
struct Candidate {
    dist: f64,
    lo: usize,
    hi: usize,
    slot: usize,
}

impl Candidate {
    fn new(dist: f64, a: usize, b: usize, slot: usize) -> Self {
        Candidate {
            dist,
            lo: a.min(b),
            hi: a.max(b),
            slot,
        }
    }

    fn better_than(&self, other: &Candidate) -> bool {
        (self.dist, self.lo, self.hi) < (other.dist, other.lo, other.hi)
    }
}

/// Average-linkage agglomeration under cosine distance.
///
/// Keeps each active cluster's best partner cached, so a merge only rescans
/// the rows whose partner disappeared.
pub fn agglomerate(leaf_ids: Vec<String>, vectors: &[Vec<f64>]) -> Result<Dendrogram> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot cluster zero exercises".into()));
    }
    if leaf_ids.len() != n {
        return Err(Error::InvalidArgument("one id per vector required".into()));
    }
    if let Some(i) = vectors.iter().position(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidArgument(format!("vector {} ({}) has a non-finite entry", i, leaf_ids[i])));
    }
    let mut d = distance_matrix(vectors)?;
    let mut active = vec![true; n];
    let mut node = (0..n).collect::<Vec<usize>>();
    let mut size = vec![1usize; n];

    let scan = |d: &[f64], active: &[bool], node: &[usize], i: usize| -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        for j in 0..n {
            if j == i || !active[j] {
                continue;
            }
            let c = Candidate::new(d[i * n + j], node[i], node[j], j);
            if best.is_none_or(|b| c.better_than(&b)) {
                best = Some(c);
            }
        }
        best
    };

    let mut nn: Vec<Option<Candidate>> = (0..n).map(|i| scan(&d, &active, &node, i)).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(usize, Candidate)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if let Some(c) = nn[i] {
                if best.is_none_or(|(_, b)| c.better_than(&b)) {
                    best = Some((i, c));
                }
            }
        }
        let (a, cand) = best.expect("at least two active clusters remain");
        let b = cand.slot;
        let new_id = n + step;
        merges.push(Merge {
            left: cand.lo,
            right: cand.hi,
            height: cand.dist,
            id: new_id,
        });

        // merged cluster takes slot `a`
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let v = (sa * d[a * n + k] + sb * d[b * n + k]) / (sa + sb);
            d[a * n + k] = v;
            d[k * n + a] = v;
        }
        active[b] = false;
        nn[b] = None;
        size[a] += size[b];
        node[a] = new_id;

        nn[a] = scan(&d, &active, &node, a);
        for k in 0..n {
            if !active[k] || k == a {
                continue;
            }
            match nn[k] {
                Some(c) if c.slot == a || c.slot == b => {
                    nn[k] = scan(&d, &active, &node, k);
                }
                Some(c) => {
                    let cand = Candidate::new(d[k * n + a], node[k], new_id, a);
                    if cand.better_than(&c) {
                        nn[k] = Some(cand);
                    }
                }
                None => nn[k] = scan(&d, &active, &node, k),
            }
        }
    }
    Ok(Dendrogram { leaf_ids, merges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngState;

    /// Cubic reference: recompute every cluster-pair average from leaf distances.
    fn naive(vectors: &[Vec<f64>]) -> Vec<Merge> {
        let n = vectors.len();
        let d = distance_matrix(vectors).unwrap();
        let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
        let mut out = Vec::new();
        for step in 0..n - 1 {
            let mut best: Option<(f64, usize, usize, usize, usize)> = None;
            for i in 0..clusters.len() {
                for j in i + 1..clusters.len() {
                    let (ci, cj) = (&clusters[i], &clusters[j]);
                    let mut s = 0.0;
                    for &a in &ci.1 {
                        for &b in &cj.1 {
                            s += d[a * n + b];
                        }
                    }
                    let avg = s / (ci.1.len() * cj.1.len()) as f64;
                    let (lo, hi) = (ci.0.min(cj.0), ci.0.max(cj.0));
                    let key = (avg, lo, hi, i, j);
                    let better = match best {
                        None => true,
                        Some(b) => {
                            // heights can differ by rounding between the two methods
                            avg < b.0 - 1e-12 || ((avg - b.0).abs() <= 1e-12 && (lo, hi) < (b.1, b.2))
                        }
                    };
                    if better {
                        best = Some(key);
                    }
                }
            }
            let (h, lo, hi, i, j) = best.unwrap();
            out.push(Merge { left: lo, right: hi, height: h, id: n + step });
            let mut members = clusters[i].1.clone();
            members.extend_from_slice(&clusters[j].1);
            clusters.remove(j);
            clusters[i] = (n + step, members);
        }
        out
    }

    #[test]
    fn matches_naive_reference() {
        for seed in 0..20u64 {
            let mut rng = RngState::new(seed);
            let n = 2 + rng.below(49);
            let dim = 2 + rng.below(6);
            let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();
            let ids = (0..n).map(|i| i.to_string()).collect();
            let fast = agglomerate(ids, &pts).unwrap();
            fast.validate().unwrap();
            let slow = naive(&pts);
            for (k, (a, b)) in fast.merges.iter().zip(&slow).enumerate() {
                assert_eq!((a.left, a.right, a.id), (b.left, b.right, b.id), "seed {seed} merge {k}");
                assert!((a.height - b.height).abs() < 1e-12, "seed {seed} merge {k}");
            }
        }
    }

    #[test]
    fn heights_non_decreasing() {
        let mut rng = RngState::new(77);
        let pts: Vec<Vec<f64>> = (0..200).map(|_| (0..6).map(|_| rng.normal()).collect()).collect();
        let d = agglomerate((0..200).map(|i| i.to_string()).collect(), &pts).unwrap();
        assert!(d.merges.windows(2).all(|w| w[1].height >= w[0].height - 1e-12));
    }

    #[test]
    fn duplicate_points_tie_break_by_node_id() {
        let pts = vec![vec![1.0, 0.0]; 4];
        let d = agglomerate((0..4).map(|i| i.to_string()).collect(), &pts).unwrap();
        let pairs: Vec<(usize, usize)> = d.merges.iter().map(|m| (m.left, m.right)).collect();
        assert_eq!(pairs, vec![(0, 1), (2, 3), (4, 5)]);
    }

    #[test]
    fn non_finite_vectors_rejected() {
        for bad in [f64::NAN, f64::INFINITY] {
            let v = vec![vec![1.0, 0.0], vec![bad, 1.0]];
            assert!(agglomerate(vec!["a".into(), "b".into()], &v).is_err());
            assert!(agglomerate(vec!["a".into()], &v[1..]).is_err());
        }
    }

    #[test]
    fn single_leaf_has_no_merges() {
        let d = agglomerate(vec!["a".into()], &[vec![1.0]]).unwrap();
        assert!(d.merges.is_empty());
        assert!(agglomerate(vec![], &[]).is_err());
    }
}
