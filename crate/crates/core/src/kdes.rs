//! Knowledge distribution extraction: a TextCNN over token-embedding
//! sequences whose softmax output `v` is the exercise's distribution over
//! knowledge tags.
//!
//! Inputs shorter than the widest filter are zero-padded at the end.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{read_jsonl, write_jsonl, Checkpoint, Corpus, ExerciseRecord};
use crate::error::{Error, Result};
use crate::evalkit::Curve;
use crate::numkit::gradcheck::{check_gradients, GradCheckReport};
use crate::numkit::{softmax_rows, Matrix, NodeId, Optimizer, ParamId, ParamStore, RngState, Tape};

pub const MODEL_KIND: &str = "kdes-textcnn";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdesConfig {
    pub widths: Vec<usize>,
    pub filters: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Fraction of exercises held out for accuracy.
    pub holdout: f64,
    pub clip_norm: f64,
}

impl Default for KdesConfig {
    fn default() -> Self {
        KdesConfig {
            widths: vec![2, 3, 4],
            filters: 16,
            epochs: 30,
            lr: 0.005,
            batch_size: 32,
            holdout: 0.2,
            clip_norm: 5.0,
        }
    }
}

impl KdesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("kdes.widths must be non-empty and positive".into()));
        }
        if self.filters == 0 || self.batch_size == 0 {
            return Err(Error::Config("kdes.filters and kdes.batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Config("kdes.lr must be positive and kdes.holdout in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Trained TextCNN: per-width conv kernels (width·d × F), dense (nF × K).
#[derive(Clone, Debug)]
pub struct TextCnnParams {
    pub widths: Vec<usize>,
    pub filters: usize,
    pub dim: usize,
    pub num_tags: usize,
    pub store: ParamStore,
    ids: Ids,
}

#[derive(Clone, Debug)]
struct Ids {
    conv_w: Vec<ParamId>,
    conv_b: Vec<ParamId>,
    dense_w: ParamId,
    dense_b: ParamId,
}

fn lookup(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .find(name)
        .ok_or_else(|| Error::format("kdes params", format!("missing '{name}'")))
}

impl Ids {
    fn resolve(store: &ParamStore, widths: &[usize]) -> Result<Ids> {
        Ok(Ids {
            conv_w: widths.iter().map(|w| lookup(store, &format!("kdes.conv{w}.w"))).collect::<Result<_>>()?,
            conv_b: widths.iter().map(|w| lookup(store, &format!("kdes.conv{w}.b"))).collect::<Result<_>>()?,
            dense_w: lookup(store, "kdes.dense.w")?,
            dense_b: lookup(store, "kdes.dense.b")?,
        })
    }
}

impl TextCnnParams {
    /// He-initialised kernels, zero biases.
    pub fn init(widths: &[usize], filters: usize, dim: usize, num_tags: usize, rng: &mut RngState) -> Result<Self> {
        if num_tags < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 tags, got {num_tags}")));
        }
        let mut store = ParamStore::new();
        for &w in widths {
            store.add(
                format!("kdes.conv{w}.w"),
                rng.normal_matrix(w * dim, filters, (2.0 / (w * dim) as f64).sqrt()),
            );
            store.add(format!("kdes.conv{w}.b"), Matrix::zeros(1, filters));
        }
        let pooled = widths.len() * filters;
        store.add("kdes.dense.w", rng.normal_matrix(pooled, num_tags, (1.0 / pooled as f64).sqrt()));
        store.add("kdes.dense.b", Matrix::zeros(1, num_tags));
        Self::from_store(widths.to_vec(), filters, dim, num_tags, store)
    }

    pub fn from_store(widths: Vec<usize>, filters: usize, dim: usize, num_tags: usize, store: ParamStore) -> Result<Self> {
        let ids = Ids::resolve(&store, &widths)?;
        for (i, &w) in widths.iter().enumerate() {
            check_shape(&store, ids.conv_w[i], (w * dim, filters))?;
            check_shape(&store, ids.conv_b[i], (1, filters))?;
        }
        check_shape(&store, ids.dense_w, (widths.len() * filters, num_tags))?;
        check_shape(&store, ids.dense_b, (1, num_tags))?;
        Ok(TextCnnParams {
            widths,
            filters,
            dim,
            num_tags,
            store,
            ids,
        })
    }

    fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }

    fn windows(&self, tokens: &Matrix) -> Result<Vec<Matrix>> {
        if tokens.cols() != self.dim {
            return Err(Error::Dimension {
                op: "kdes_forward",
                left: tokens.shape(),
                right: (self.max_width(), self.dim),
            });
        }
        Ok(self.widths.iter().map(|&w| unfold(tokens, w, self.max_width())).collect())
    }

    /// Finite-difference check of the summed cross-entropy over
    /// `(tokens, tag)` examples.
    pub fn gradient_check(&mut self, examples: &[(Matrix, usize)]) -> Result<GradCheckReport> {
        let inputs = examples
            .iter()
            .map(|(t, y)| Ok((self.windows(t)?, *y)))
            .collect::<Result<Vec<_>>>()?;
        let ids = self.ids.clone();
        check_gradients(&mut self.store, |tape| {
            let mut losses = Vec::new();
            for (w, y) in &inputs {
                let z = logits_on_tape(&ids, tape, w)?;
                losses.push(tape.softmax_ce(z, *y)?);
            }
            tape.sum(&losses)
        })
    }

    /// Pre-softmax scores, tape-free.
    pub fn logits(&self, tokens: &Matrix) -> Result<Vec<f64>> {
        let windows = self.windows(tokens)?;
        let mut pooled = Vec::with_capacity(self.widths.len() * self.filters);
        for (i, win) in windows.iter().enumerate() {
            let mut conv = win.matmul(self.store.value(self.ids.conv_w[i]))?;
            conv.add_assign(self.store.value(self.ids.conv_b[i]))?;
            for f in 0..self.filters {
                let m = (0..conv.rows()).map(|r| conv.get(r, f).max(0.0)).fold(f64::NEG_INFINITY, f64::max);
                pooled.push(m);
            }
        }
        let mut out = Matrix::row_vector(pooled).matmul(self.store.value(self.ids.dense_w))?;
        out.add_assign(self.store.value(self.ids.dense_b))?;
        Ok(out.into_data())
    }

    pub fn to_checkpoint(&self, fingerprint: &str) -> Checkpoint {
        let meta = serde_json::json!({
            "widths": self.widths,
            "filters": self.filters,
            "dim": self.dim,
            "num_tags": self.num_tags,
        });
        Checkpoint::from_store(MODEL_KIND, fingerprint, meta, &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(MODEL_KIND)?;
        #[derive(Deserialize)]
        struct Meta {
            widths: Vec<usize>,
            filters: usize,
            dim: usize,
            num_tags: usize,
        }
        let m: Meta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| Error::format("kdes checkpoint meta", e.to_string()))?;
        Self::from_store(m.widths, m.filters, m.dim, m.num_tags, ck.to_store()?)
    }
}

fn check_shape(store: &ParamStore, p: ParamId, want: (usize, usize)) -> Result<()> {
    let got = store.value(p).shape();
    if got != want {
        return Err(Error::Dimension {
            op: "kdes params",
            left: got,
            right: want,
        });
    }
    Ok(())
}

/// Rows are the flattened `width`-token windows, after zero-padding to `min_len`.
fn unfold(tokens: &Matrix, width: usize, min_len: usize) -> Matrix {
    let d = tokens.cols();
    let len = tokens.rows().max(min_len);
    let n = len - width + 1;
    let mut out = Matrix::zeros(n, width * d);
    for r in 0..n {
        let row = out.row_mut(r);
        for k in 0..width {
            if r + k < tokens.rows() {
                row[k * d..(k + 1) * d].copy_from_slice(tokens.row(r + k));
            }
        }
    }
    out
}

/// Knowledge distribution `v` for one exercise; sums to 1.
pub fn kdes_forward(params: &TextCnnParams, tokens: &Matrix) -> Result<Vec<f64>> {
    let logits = params.logits(tokens)?;
    Ok(softmax_rows(&Matrix::row_vector(logits)).into_data())
}

/// Logits node for one exercise given pre-unfolded windows.
fn logits_on_tape(ids: &Ids, tape: &mut Tape, windows: &[Matrix]) -> Result<NodeId> {
    let mut pooled = Vec::with_capacity(windows.len());
    for (i, win) in windows.iter().enumerate() {
        let x = tape.constant(win.clone());
        let w = tape.param(ids.conv_w[i]);
        let b = tape.param(ids.conv_b[i]);
        let conv = tape.matmul(x, w)?;
        let conv = tape.add(conv, b)?;
        let act = tape.relu(conv);
        pooled.push(tape.max_rows(act)?);
    }
    let h = tape.concat(&pooled)?;
    let w = tape.param(ids.dense_w);
    let b = tape.param(ids.dense_b);
    let z = tape.matmul(h, w)?;
    tape.add(z, b)
}

#[derive(Clone, Debug)]
pub struct KdesTrained {
    pub params: TextCnnParams,
    /// Columns `train_loss`, `heldout_accuracy`; epoch 0 is before training.
    pub curve: Curve,
    pub heldout_accuracy: f64,
    pub heldout_ids: Vec<String>,
}

fn tagged<'a>(corpus: &'a Corpus) -> Result<Vec<(&'a ExerciseRecord, usize)>> {
    let missing: Vec<&str> = corpus
        .records()
        .iter()
        .filter(|r| r.knowledge_tag.is_none())
        .map(|r| r.exercise_id.as_str())
        .collect();
    if !missing.is_empty() {
        let shown = missing.iter().take(10).copied().collect::<Vec<_>>().join(", ");
        let more = if missing.len() > 10 { format!(" and {} more", missing.len() - 10) } else { String::new() };
        return Err(Error::format("kdes training data", format!("exercises without a knowledge tag: {shown}{more}")));
    }
    Ok(corpus.records().iter().map(|r| (r, r.knowledge_tag.unwrap_or(0))).collect())
}

/// Train on tagged exercises; a seeded fraction is held out for accuracy.
pub fn train_kdes(corpus: &Corpus, cfg: &KdesConfig, seed: u64) -> Result<KdesTrained> {
    cfg.validate()?;
    let data = tagged(corpus)?;
    let num_tags = corpus.num_tags().max(2);
    let mut init_rng = RngState::derived(seed, "kdes/init");
    let mut params = TextCnnParams::init(&cfg.widths, cfg.filters, corpus.dim(), num_tags, &mut init_rng)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    RngState::derived(seed, "kdes/split").shuffle(&mut order);
    let n_hold = if data.len() >= 2 { ((cfg.holdout * data.len() as f64).round() as usize).min(data.len() - 1) } else { 0 };
    let (hold, train) = order.split_at(n_hold);
    let mut train = train.to_vec();
    let hold = hold.to_vec();

    let windows: Vec<Vec<Matrix>> = data
        .iter()
        .map(|(r, _)| params.windows(&r.tokens))
        .collect::<Result<_>>()?;

    let mut opt = Optimizer::adam(&params.store, cfg.lr);
    let mut shuffle = RngState::derived(seed, "kdes/shuffle");
    let mut curve = Curve::new(&["train_loss", "heldout_accuracy"]);

    let eval = |params: &TextCnnParams, train: &[usize]| -> Result<(f64, f64)> {
        let mut loss = 0.0;
        for &i in train {
            let v = kdes_forward(params, &data[i].0.tokens)?;
            loss -= v[data[i].1].max(f64::MIN_POSITIVE).ln();
        }
        Ok((loss / train.len().max(1) as f64, accuracy_on(params, &data, &hold)?))
    };
    let (l0, a0) = eval(&params, &train)?;
    curve.push(0, vec![l0, a0]);

    for epoch in 1..=cfg.epochs {
        shuffle.shuffle(&mut train);
        for (b, batch) in train.chunks(cfg.batch_size).enumerate() {
            params.store.zero_grads();
            let ids = params.ids.clone();
            let (vals, grads) = params.store.split_mut();
            for &i in batch {
                let mut tape = Tape::new(vals);
                let z = logits_on_tape(&ids, &mut tape, &windows[i])?;
                let loss = tape.softmax_ce(z, data[i].1)?;
                if !tape.scalar(loss).is_finite() {
                    return Err(Error::Numerical(format!("kdes: non-finite loss at epoch {epoch}, batch {b}")));
                }
                tape.backward(loss, grads)?;
            }
            params.store.clip_grad_norm(cfg.clip_norm);
            opt.step(&mut params.store)?;
        }
        let (l, a) = eval(&params, &train)?;
        log::debug!("kdes epoch {epoch}: train loss {l:.4}, held-out accuracy {a:.4}");
        curve.push(epoch, vec![l, a]);
    }
    let heldout_accuracy = curve.rows.last().map_or(f64::NAN, |r| r.1[1]);
    Ok(KdesTrained {
        params,
        curve,
        heldout_accuracy,
        heldout_ids: hold.iter().map(|&i| data[i].0.exercise_id.clone()).collect(),
    })
}

fn accuracy_on(params: &TextCnnParams, data: &[(&ExerciseRecord, usize)], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(f64::NAN);
    }
    let mut hits = 0;
    for &i in idx {
        if argmax(&params.logits(&data[i].0.tokens)?) == data[i].1 {
            hits += 1;
        }
    }
    Ok(hits as f64 / idx.len() as f64)
}

/// Index of the largest entry; first wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One line of `predict-kdes` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeLine {
    pub exercise_id: String,
    pub v: Vec<f64>,
}

pub fn predict_corpus(params: &TextCnnParams, corpus: &Corpus) -> Result<Vec<KnowledgeLine>> {
    corpus
        .records()
        .iter()
        .map(|r| {
            Ok(KnowledgeLine {
                exercise_id: r.exercise_id.clone(),
                v: kdes_forward(params, &r.tokens)?,
            })
        })
        .collect()
}

pub fn save_knowledge(path: &Path, lines: &[KnowledgeLine]) -> Result<()> {
    write_jsonl(path, lines)
}

pub fn load_knowledge(path: &Path) -> Result<Vec<KnowledgeLine>> {
    let lines: Vec<KnowledgeLine> = read_jsonl(path)?;
    for l in &lines {
        let s: f64 = l.v.iter().sum();
        if l.v.iter().any(|x| !(0.0..=1.0).contains(x)) || (s - 1.0).abs() > 1e-6 {
            return Err(Error::format(
                path.display().to_string(),
                format!("'{}' is not a probability vector", l.exercise_id),
            ));
        }
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syngen::{gen_corpus, GenConfig};

    fn tiny(dim: usize, k: usize, seed: u64) -> TextCnnParams {
        TextCnnParams::init(&[2, 3, 4], 3, dim, k, &mut RngState::new(seed)).unwrap()
    }

    #[test]
    fn zero_weights_uniform() {
        let mut p = tiny(5, 4, 0);
        let ids: Vec<ParamId> = p.store.ids().map(|(i, _)| i).collect();
        for i in ids {
            p.store.value_mut(i).fill(0.0);
        }
        let v = kdes_forward(&p, &RngState::new(1).normal_matrix(6, 5, 1.0)).unwrap();
        assert!(v.iter().all(|x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn outputs_are_distributions() {
        let p = tiny(4, 6, 2);
        let mut rng = RngState::new(3);
        for _ in 0..100 {
            let len = 1 + rng.below(9);
            let v = kdes_forward(&p, &rng.normal_matrix(len, 4, 2.0)).unwrap();
            assert!(v.iter().all(|&x| x >= 0.0));
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = tiny(4, 3, 0);
        assert!(matches!(kdes_forward(&p, &Matrix::zeros(5, 3)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn short_input_equals_explicit_padding() {
        let p = tiny(3, 3, 4);
        let short = RngState::new(9).normal_matrix(2, 3, 1.0);
        let mut padded = Matrix::zeros(4, 3);
        for r in 0..2 {
            padded.row_mut(r).copy_from_slice(short.row(r));
        }
        assert_eq!(kdes_forward(&p, &short).unwrap(), kdes_forward(&p, &padded).unwrap());
    }

    /// Appending a copy of each filter's argmax window leaves the pooled
    /// features, and so the logits, unchanged.
    #[test]
    fn duplicated_argmax_window_keeps_pooling() {
        let p = tiny(3, 4, 5);
        let tokens = RngState::new(6).normal_matrix(7, 3, 1.0);
        let windows = p.windows(&tokens).unwrap();
        let mut extended = Vec::new();
        for (i, win) in windows.iter().enumerate() {
            let w = p.store.value(p.ids.conv_w[i]);
            let b = p.store.value(p.ids.conv_b[i]);
            let mut rows: Vec<Vec<f64>> = (0..win.rows()).map(|r| win.row(r).to_vec()).collect();
            for f in 0..p.filters {
                let score = |r: usize| -> f64 {
                    b.get(0, f) + (0..win.cols()).map(|c| win.get(r, c) * w.get(c, f)).sum::<f64>()
                };
                let best = (0..win.rows()).max_by(|&x, &y| score(x).total_cmp(&score(y))).unwrap();
                rows.push(win.row(best).to_vec());
            }
            extended.push(Matrix::from_rows(&rows).unwrap());
        }
        let run = |ws: &[Matrix]| {
            let mut tape = Tape::new(p.store.values());
            let z = logits_on_tape(&p.ids, &mut tape, ws).unwrap();
            tape.value(z).clone()
        };
        assert_eq!(run(&windows), run(&extended));
    }

    #[test]
    fn gradient_check_one_filter() {
        for seed in 0..20 {
            let mut p = TextCnnParams::init(&[2, 3, 4], 1, 3, 3, &mut RngState::new(seed)).unwrap();
            let mut rng = RngState::new(100 + seed);
            let inputs: Vec<(Vec<Matrix>, usize)> = (0..3)
                .map(|_| {
                    let len = 3 + rng.below(4);
                    let t = rng.normal_matrix(len, 3, 1.0);
                    (p.windows(&t).unwrap(), rng.below(3))
                })
                .collect();
            let ids = p.ids.clone();
            let report = check_gradients(&mut p.store, |tape| {
                let mut losses = Vec::new();
                for (w, y) in &inputs {
                    let z = logits_on_tape(&ids, tape, w)?;
                    losses.push(tape.softmax_ce(z, *y)?);
                }
                tape.sum(&losses)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn tape_and_direct_forward_agree() {
        let p = tiny(4, 5, 11);
        let t = RngState::new(12).normal_matrix(6, 4, 1.0);
        let mut tape = Tape::new(p.store.values());
        let z = logits_on_tape(&p.ids, &mut tape, &p.windows(&t).unwrap()).unwrap();
        let direct = p.logits(&t).unwrap();
        for (a, b) in tape.value(z).data().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_tags_listed() {
        let cfg = GenConfig {
            num_exercises: 30,
            num_clusters: 3,
            num_tags: 3,
            ..GenConfig::default()
        };
        let (corpus, _) = gen_corpus(&cfg).unwrap();
        let mut recs = corpus.records().to_vec();
        recs[4].knowledge_tag = None;
        recs[7].knowledge_tag = None;
        let err = train_kdes(&Corpus::new(recs).unwrap(), &KdesConfig::default(), 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("E00004") && msg.contains("E00007"), "{msg}");
    }

    #[test]
    fn single_class_corpus() {
        let cfg = GenConfig {
            num_exercises: 40,
            num_clusters: 2,
            num_tags: 1,
            ..GenConfig::default()
        };
        let (corpus, _) = gen_corpus(&cfg).unwrap();
        let kc = KdesConfig {
            epochs: 60,
            batch_size: 4,
            lr: 0.01,
            ..KdesConfig::default()
        };
        let t = train_kdes(&corpus, &kc, 0).unwrap();
        assert_eq!(t.heldout_accuracy, 1.0);
        let loss = t.curve.column("train_loss").unwrap();
        assert!(*loss.last().unwrap() < 1e-3, "{loss:?}");
    }

    #[test]
    fn separable_synthetic_and_deterministic() {
        let cfg = GenConfig {
            num_exercises: 400,
            ..GenConfig::default()
        };
        let (corpus, _) = gen_corpus(&cfg).unwrap();
        let kc = KdesConfig {
            epochs: 10,
            ..KdesConfig::default()
        };
        let a = train_kdes(&corpus, &kc, 7).unwrap();
        assert!(a.heldout_accuracy >= 0.95, "accuracy {}", a.heldout_accuracy);
        let loss = a.curve.column("train_loss").unwrap();
        assert!(loss.iter().all(|l| l.is_finite()) && loss.last() < loss.first());
        let b = train_kdes(&corpus, &kc, 7).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.params.store.values(), b.params.store.values());
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = tiny(4, 3, 1);
        let back = TextCnnParams::from_checkpoint(&p.to_checkpoint("fp")).unwrap();
        let t = RngState::new(2).normal_matrix(5, 4, 1.0);
        assert_eq!(kdes_forward(&p, &t).unwrap(), kdes_forward(&back, &t).unwrap());
    }
}
