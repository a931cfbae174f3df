//! Difficulty features: empirical correct rates as targets, and a small
//! perceptron from the mean-pooled exercise embedding to a predicted correct
//! rate `d` in (0, 1), so exercises nobody has answered still get one.
//!
//! Orientation: `d` is a correct rate, so higher means easier.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{read_jsonl, write_jsonl, Checkpoint, Corpus, ResponseLog};
use crate::error::{Error, Result};
use crate::evalkit::{rmse, Curve};
use crate::numkit::gradcheck::{check_gradients, GradCheckReport};
use crate::numkit::{sigmoid_scalar, softmax_rows, Matrix, NodeId, Optimizer, ParamId, ParamStore, RngState, Tape};

pub const MODEL_KIND: &str = "dfes-mlp";
pub const DEFAULT_MIN_ATTEMPTS: u64 = 5;
/// Fewest confidently-rated exercises `train_dfes` accepts.
pub const MIN_LABELED: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub attempts: u64,
    pub corrects: u64,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DifficultyTable {
    pub min_attempts: u64,
    entries: BTreeMap<String, RateEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateLine {
    pub exercise_id: String,
    pub attempts: u64,
    pub corrects: u64,
    pub rate: f64,
    pub low_confidence: bool,
}

impl DifficultyTable {
    pub fn get(&self, id: &str) -> Option<&RateEntry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_confident(&self, id: &str) -> bool {
        self.entries.get(id).is_some_and(|e| e.attempts >= self.min_attempts)
    }

    pub fn total_attempts(&self) -> u64 {
        self.entries.values().map(|e| e.attempts).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RateEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn lines(&self) -> Vec<RateLine> {
        self.entries
            .iter()
            .map(|(id, e)| RateLine {
                exercise_id: id.clone(),
                attempts: e.attempts,
                corrects: e.corrects,
                rate: e.rate,
                low_confidence: e.attempts < self.min_attempts,
            })
            .collect()
    }

    pub fn from_lines(lines: Vec<RateLine>, min_attempts: u64) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for l in lines {
            if l.corrects > l.attempts || l.attempts == 0 {
                return Err(Error::format("rate table", format!("'{}' has inconsistent counts", l.exercise_id)));
            }
            let e = RateEntry {
                attempts: l.attempts,
                corrects: l.corrects,
                rate: l.corrects as f64 / l.attempts as f64,
            };
            if entries.insert(l.exercise_id.clone(), e).is_some() {
                return Err(Error::format("rate table", format!("duplicate '{}'", l.exercise_id)));
            }
        }
        Ok(DifficultyTable { min_attempts, entries })
    }
}

/// Exact attempt/correct counts per exercise. Unattempted exercises are absent.
pub fn compute_correct_rates(logs: &[ResponseLog], min_attempts: u64) -> DifficultyTable {
    let mut counts: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for log in logs {
        for e in &log.events {
            let c = counts.entry(e.exercise_id.clone()).or_default();
            c.0 += 1;
            c.1 += e.correct as u64;
        }
    }
    let entries = counts
        .into_iter()
        .map(|(id, (a, c))| {
            (
                id,
                RateEntry {
                    attempts: a,
                    corrects: c,
                    rate: c as f64 / a as f64,
                },
            )
        })
        .collect();
    DifficultyTable { min_attempts, entries }
}

pub fn save_rates(path: &Path, t: &DifficultyTable) -> Result<()> {
    write_jsonl(path, &t.lines())
}

pub fn load_rates(path: &Path, min_attempts: u64) -> Result<DifficultyTable> {
    DifficultyTable::from_lines(read_jsonl(path)?, min_attempts)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DfesMode {
    /// Sigmoid output, squared error against the rate.
    #[default]
    Regression,
    /// Softmax over equal-width rate buckets; `d` is the expected bucket center.
    Bucketed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DfesConfig {
    pub mode: DfesMode,
    pub buckets: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub holdout: f64,
    pub min_attempts: u64,
    pub clip_norm: f64,
}

impl Default for DfesConfig {
    fn default() -> Self {
        DfesConfig {
            mode: DfesMode::Regression,
            buckets: 10,
            hidden: 32,
            epochs: 60,
            lr: 0.01,
            batch_size: 32,
            holdout: 0.2,
            min_attempts: DEFAULT_MIN_ATTEMPTS,
            clip_norm: 5.0,
        }
    }
}

impl DfesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("dfes.hidden and dfes.batch_size must be positive".into()));
        }
        if self.mode == DfesMode::Bucketed && self.buckets < 2 {
            return Err(Error::Config("dfes.buckets must be at least 2".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Config("dfes.lr must be positive and dfes.holdout in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DfesParams {
    pub mode: DfesMode,
    pub dim: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub store: ParamStore,
    ids: Ids,
}

impl DfesParams {
    pub fn init(mode: DfesMode, dim: usize, hidden: usize, buckets: usize, rng: &mut RngState) -> Self {
        let outputs = match mode {
            DfesMode::Regression => 1,
            DfesMode::Bucketed => buckets,
        };
        let mut store = ParamStore::new();
        store.add("dfes.w1", rng.normal_matrix(dim, hidden, (1.0 / dim as f64).sqrt()));
        store.add("dfes.b1", Matrix::zeros(1, hidden));
        store.add("dfes.w2", rng.normal_matrix(hidden, outputs, (1.0 / hidden as f64).sqrt()));
        store.add("dfes.b2", Matrix::zeros(1, outputs));
        Self::from_store(mode, dim, hidden, outputs, store).expect("fresh params are well formed")
    }

    pub fn from_store(mode: DfesMode, dim: usize, hidden: usize, outputs: usize, store: ParamStore) -> Result<Self> {
        let get = |name: &str, shape: (usize, usize)| -> Result<ParamId> {
            let p = store
                .find(name)
                .ok_or_else(|| Error::format("dfes params", format!("missing '{name}'")))?;
            if store.value(p).shape() != shape {
                return Err(Error::Dimension {
                    op: "dfes params",
                    left: store.value(p).shape(),
                    right: shape,
                });
            }
            Ok(p)
        };
        let (w1, b1) = (get("dfes.w1", (dim, hidden))?, get("dfes.b1", (1, hidden))?);
        let (w2, b2) = (get("dfes.w2", (hidden, outputs))?, get("dfes.b2", (1, outputs))?);
        Ok(DfesParams {
            mode,
            dim,
            hidden,
            outputs,
            store,
            ids: Ids {
                mode,
                outputs,
                w1,
                b1,
                w2,
                b2,
            },
        })
    }

    fn output_from_scores(&self, scores: &[f64]) -> f64 {
        match self.mode {
            DfesMode::Regression => sigmoid_scalar(scores[0]),
            DfesMode::Bucketed => {
                let p = softmax_rows(&Matrix::row_vector(scores.to_vec()));
                let b = self.outputs as f64;
                p.data().iter().enumerate().map(|(i, q)| q * (i as f64 + 0.5) / b).sum()
            }
        }
    }

    /// Predicted correct rate for a mean-pooled embedding.
    pub fn predict_pooled(&self, pooled: &[f64]) -> Result<f64> {
        if pooled.len() != self.dim {
            return Err(Error::Dimension {
                op: "predict_difficulty",
                left: (1, pooled.len()),
                right: (1, self.dim),
            });
        }
        let x = Matrix::row_vector(pooled.to_vec());
        let mut h = x.matmul(self.store.value(self.ids.w1))?;
        h.add_assign(self.store.value(self.ids.b1))?;
        let h = h.map(f64::tanh);
        let mut z = h.matmul(self.store.value(self.ids.w2))?;
        z.add_assign(self.store.value(self.ids.b2))?;
        Ok(self.output_from_scores(z.data()))
    }

    /// Finite-difference check of the summed training loss over
    /// `(pooled embedding, correct rate)` pairs.
    pub fn gradient_check(&mut self, data: &[(Vec<f64>, f64)]) -> Result<GradCheckReport> {
        let ids = self.ids;
        check_gradients(&mut self.store, |tape| {
            let ls = data
                .iter()
                .map(|(x, r)| ids.loss_on_tape(tape, x, *r))
                .collect::<Result<Vec<_>>>()?;
            tape.sum(&ls)
        })
    }

    pub fn to_checkpoint(&self, fingerprint: &str) -> Checkpoint {
        let meta = serde_json::json!({
            "mode": self.mode,
            "dim": self.dim,
            "hidden": self.hidden,
            "outputs": self.outputs,
        });
        Checkpoint::from_store(MODEL_KIND, fingerprint, meta, &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(MODEL_KIND)?;
        #[derive(Deserialize)]
        struct Meta {
            mode: DfesMode,
            dim: usize,
            hidden: usize,
            outputs: usize,
        }
        let m: Meta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| Error::format("dfes checkpoint meta", e.to_string()))?;
        Self::from_store(m.mode, m.dim, m.hidden, m.outputs, ck.to_store()?)
    }
}

/// Predicted correct rate in (0, 1) from an exercise's token matrix.
pub fn predict_difficulty(params: &DfesParams, tokens: &Matrix) -> Result<f64> {
    if tokens.cols() != params.dim || tokens.rows() == 0 {
        return Err(Error::Dimension {
            op: "predict_difficulty",
            left: tokens.shape(),
            right: (1, params.dim),
        });
    }
    let mut pooled = vec![0.0; params.dim];
    for r in 0..tokens.rows() {
        for (p, x) in pooled.iter_mut().zip(tokens.row(r)) {
            *p += x;
        }
    }
    for p in &mut pooled {
        *p /= tokens.rows() as f64;
    }
    params.predict_pooled(&pooled)
}

#[derive(Clone, Debug)]
pub struct DfesTrained {
    pub params: DfesParams,
    /// Columns `train_loss`, `heldout_rmse`; epoch 0 is before training.
    pub curve: Curve,
    pub heldout_rmse: f64,
    pub heldout_ids: Vec<String>,
}

/// Fit the regressor on every corpus exercise with at least `min_attempts`
/// attempts in `table`; a seeded fraction of those is held out for RMSE.
pub fn train_dfes(corpus: &Corpus, table: &DifficultyTable, cfg: &DfesConfig, seed: u64) -> Result<DfesTrained> {
    cfg.validate()?;
    let labeled: Vec<(Vec<f64>, f64, &str)> = corpus
        .records()
        .iter()
        .filter_map(|r| {
            let e = table.get(&r.exercise_id)?;
            (e.attempts >= cfg.min_attempts).then(|| (r.pooled(), e.rate, r.exercise_id.as_str()))
        })
        .collect();
    if labeled.len() < MIN_LABELED {
        return Err(Error::InvalidArgument(format!(
            "dfes needs at least {MIN_LABELED} exercises with >= {} attempts, found {}",
            cfg.min_attempts,
            labeled.len()
        )));
    }
    let mut params = DfesParams::init(cfg.mode, corpus.dim(), cfg.hidden, cfg.buckets, &mut RngState::derived(seed, "dfes/init"));
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    RngState::derived(seed, "dfes/split").shuffle(&mut order);
    let n_hold = (cfg.holdout * labeled.len() as f64).round() as usize;
    let (hold, train) = order.split_at(n_hold);
    let (hold, mut train) = (hold.to_vec(), train.to_vec());

    let eval = |p: &DfesParams, train: &[usize]| -> Result<(f64, f64)> {
        let mut loss = 0.0;
        for &i in train {
            let mut tape = Tape::new(p.store.values());
            let l = p.ids.loss_on_tape(&mut tape, &labeled[i].0, labeled[i].1)?;
            loss += tape.scalar(l);
        }
        let pred = hold.iter().map(|&i| p.predict_pooled(&labeled[i].0)).collect::<Result<Vec<_>>>()?;
        let truth: Vec<f64> = hold.iter().map(|&i| labeled[i].1).collect();
        let r = if hold.is_empty() { f64::NAN } else { rmse(&pred, &truth) };
        Ok((loss / train.len().max(1) as f64, r))
    };

    let mut curve = Curve::new(&["train_loss", "heldout_rmse"]);
    let (l0, r0) = eval(&params, &train)?;
    curve.push(0, vec![l0, r0]);
    let mut opt = Optimizer::adam(&params.store, cfg.lr);
    let mut shuffle = RngState::derived(seed, "dfes/shuffle");
    for epoch in 1..=cfg.epochs {
        shuffle.shuffle(&mut train);
        for (b, batch) in train.chunks(cfg.batch_size).enumerate() {
            params.store.zero_grads();
            let ids = params.ids;
            let (vals, grads) = params.store.split_mut();
            for &i in batch {
                let mut tape = Tape::new(vals);
                let l = ids.loss_on_tape(&mut tape, &labeled[i].0, labeled[i].1)?;
                if !tape.scalar(l).is_finite() {
                    return Err(Error::Numerical(format!("dfes: non-finite loss at epoch {epoch}, batch {b}")));
                }
                tape.backward(l, grads)?;
            }
            params.store.clip_grad_norm(cfg.clip_norm);
            opt.step(&mut params.store)?;
        }
        let (l, r) = eval(&params, &train)?;
        log::debug!("dfes epoch {epoch}: train loss {l:.5}, held-out rmse {r:.4}");
        curve.push(epoch, vec![l, r]);
    }
    let heldout_rmse = curve.rows.last().map_or(f64::NAN, |r| r.1[1]);
    Ok(DfesTrained {
        params,
        curve,
        heldout_rmse,
        heldout_ids: hold.iter().map(|&i| labeled[i].2.to_string()).collect(),
    })
}

#[derive(Clone, Copy, Debug)]
struct Ids {
    mode: DfesMode,
    outputs: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Ids {
    fn loss_on_tape(&self, tape: &mut Tape, pooled: &[f64], rate: f64) -> Result<NodeId> {
        let x = tape.constant(Matrix::row_vector(pooled.to_vec()));
        let (w1, b1) = (tape.param(self.w1), tape.param(self.b1));
        let (w2, b2) = (tape.param(self.w2), tape.param(self.b2));
        let h = tape.matmul(x, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.tanh(h);
        let z = tape.matmul(h, w2)?;
        let z = tape.add(z, b2)?;
        match self.mode {
            DfesMode::Regression => {
                let p = tape.sigmoid(z);
                tape.sq_err(p, &[rate])
            }
            DfesMode::Bucketed => {
                let bucket = ((rate * self.outputs as f64) as usize).min(self.outputs - 1);
                tape.softmax_ce(z, bucket)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifficultyLine {
    pub exercise_id: String,
    pub d: f64,
}

pub fn predict_corpus(params: &DfesParams, corpus: &Corpus) -> Result<Vec<DifficultyLine>> {
    corpus
        .records()
        .iter()
        .map(|r| {
            Ok(DifficultyLine {
                exercise_id: r.exercise_id.clone(),
                d: params.predict_pooled(&r.pooled())?,
            })
        })
        .collect()
}

pub fn save_difficulty(path: &Path, lines: &[DifficultyLine]) -> Result<()> {
    write_jsonl(path, lines)
}

pub fn load_difficulty(path: &Path) -> Result<Vec<DifficultyLine>> {
    let lines: Vec<DifficultyLine> = read_jsonl(path)?;
    if let Some(bad) = lines.iter().find(|l| !(l.d > 0.0 && l.d < 1.0)) {
        return Err(Error::format(
            path.display().to_string(),
            format!("difficulty of '{}' is {} (must be in (0, 1))", bad.exercise_id, bad.d),
        ));
    }
    Ok(lines)
}
