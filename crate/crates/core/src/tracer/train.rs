use serde::{Deserialize, Serialize};

use crate::dataio::{split_train_test, Checkpoint, ResponseLog};
use crate::error::{Error, Result};
use crate::evalkit::{AucMode, Curve, ScoredEvents};
use crate::numkit::{derive_seed, Optimizer, RngState, Tape};

use super::features::{encode_sequence, readout_for, EncodedSeq, FeatureTable, Layout, Variant};
use super::model::{loss_on_tape, TracerParams};

pub const MODEL_KIND: &str = "tracer-lstm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TracerConfig {
    pub variant: Variant,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Students per optimizer step; their losses are summed.
    pub batch_size: usize,
    pub max_len: usize,
    pub clip_norm: f64,
    /// EHFKT_T only: score with `y · v_{t+1}` rather than the argmax tag.
    pub soft_readout: bool,
    pub auc_mode: AucMode,
    /// Share of training students held out to pick the best epoch; 0 keeps
    /// the last epoch.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TracerConfig {
    fn default() -> Self {
        TracerConfig {
            variant: Variant::Ehfkt,
            hidden: 32,
            lr: 0.005,
            epochs: 10,
            batch_size: 16,
            max_len: 200,
            clip_norm: 5.0,
            soft_readout: false,
            auc_mode: AucMode::Pooled,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TracerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 || self.max_len < 2 {
            return Err(Error::Config(
                "tracer.hidden and tracer.batch_size must be positive, tracer.max_len at least 2".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("tracer.lr and tracer.clip_norm must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.val_fraction) {
            return Err(Error::Config("tracer.val_fraction must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Encode every log with at least two events.
pub fn encode_logs(layout: &Layout, table: &FeatureTable, logs: &[ResponseLog], max_len: usize) -> Result<Vec<EncodedSeq>> {
    logs.iter()
        .filter(|l| l.events.len() >= 2)
        .map(|l| {
            let ev: Vec<(&str, u8)> = l.events.iter().map(|e| (e.exercise_id.as_str(), e.correct)).collect();
            encode_sequence(layout, table, &ev, max_len)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TracerTrained {
    pub params: TracerParams,
    /// Columns `train_loss` (mean per transition), `val_auc`, `test_auc`.
    /// Epoch 0 is the untrained model.
    pub curve: Curve,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    /// Test events scored by the kept parameters.
    pub test: Option<ScoredEvents>,
}

impl TracerTrained {
    pub fn test_auc(&self, mode: AucMode) -> Option<f64> {
        self.test.as_ref().and_then(|s| s.auc(mode).ok())
    }
}

fn score_all(params: &TracerParams, seqs: &[EncodedSeq]) -> Result<ScoredEvents> {
    let mut out = ScoredEvents::default();
    for s in seqs {
        out.begin_student();
        for (p, &l) in params.run(s)?.into_iter().zip(&s.labels) {
            out.push(p, l as u8);
        }
    }
    Ok(out)
}

/// Score every (t → t+1) transition of every log.
pub fn evaluate_tracer(params: &TracerParams, table: &FeatureTable, logs: &[ResponseLog], max_len: usize) -> Result<ScoredEvents> {
    check_table(params, table)?;
    score_all(params, &encode_logs(&params.layout, table, logs, max_len)?)
}

fn check_table(params: &TracerParams, table: &FeatureTable) -> Result<()> {
    let fresh = Layout::new(params.layout.variant, table, params.layout.soft_readout)?;
    if fresh != params.layout {
        return Err(Error::format(
            "tracer",
            format!("feature table layout {fresh:?} does not match the model's {:?}", params.layout),
        ));
    }
    Ok(())
}

/// Probability that the answer to `next` is correct after `history`.
pub fn predict_next(params: &TracerParams, table: &FeatureTable, history: &[(&str, u8)], next: &str) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::InvalidArgument("predict_next needs at least one past event".into()));
    }
    check_table(params, table)?;
    let seq = encode_sequence(&params.layout, table, history, usize::MAX)?;
    let (h, _) = params.final_state(&seq.inputs)?;
    let q = table.question(next)?;
    Ok(params.score(&h, &readout_for(&params.layout, table, q)))
}

fn mean_loss(params: &TracerParams, seqs: &[EncodedSeq]) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for s in seqs {
        total += super::model::sequence_loss(params, s)?;
        n += s.transitions();
    }
    Ok(total / n.max(1) as f64)
}

/// Adam over minibatches of students, reshuffled each epoch from the seed.
/// With `val_fraction > 0` the epoch with the best validation AUC is kept.
pub fn train_tracer(
    cfg: &TracerConfig,
    table: &FeatureTable,
    train_logs: &[ResponseLog],
    test_logs: Option<&[ResponseLog]>,
) -> Result<TracerTrained> {
    cfg.validate()?;
    let layout = Layout::new(cfg.variant, table, cfg.soft_readout)?;
    // the validation students depend on the seed only, so every variant
    // selects its epoch on the same held-out students
    let (fit_logs, val_logs) = if cfg.val_fraction > 0.0 && train_logs.len() >= 10 {
        let (a, b) = split_train_test(train_logs, 1.0 - cfg.val_fraction, derive_seed(cfg.seed, "tracer/val"))?;
        (a, Some(b))
    } else {
        (train_logs.to_vec(), None)
    };
    let train = encode_logs(&layout, table, &fit_logs, cfg.max_len)?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training sequence has two or more events".into()));
    }
    let val = match &val_logs {
        Some(v) => Some(encode_logs(&layout, table, v, cfg.max_len)?),
        None => None,
    };
    let test = match test_logs {
        Some(t) => Some(encode_logs(&layout, table, t, cfg.max_len)?),
        None => None,
    };
    let tag = cfg.variant.name();
    let mut params = TracerParams::init(layout, cfg.hidden, &mut RngState::derived(cfg.seed, &format!("tracer/{tag}/init")))?;
    let mut shuffle = RngState::derived(cfg.seed, &format!("tracer/{tag}/shuffle"));
    let mut opt = Optimizer::adam(&params.store, cfg.lr);

    let auc_on = |p: &TracerParams, seqs: &Option<Vec<EncodedSeq>>| -> Result<(f64, Option<ScoredEvents>)> {
        match seqs {
            None => Ok((f64::NAN, None)),
            Some(t) => {
                let s = score_all(p, t)?;
                Ok((s.auc(cfg.auc_mode).unwrap_or(f64::NAN), Some(s)))
            }
        }
    };

    let mut curve = Curve::new(&["train_loss", "val_auc", "test_auc"]);
    let (v0, _) = auc_on(&params, &val)?;
    let (a0, scored0) = auc_on(&params, &test)?;
    curve.push(0, vec![mean_loss(&params, &train)?, v0, a0]);
    let mut best = (0usize, v0, params.store.clone(), scored0);

    let transitions: usize = train.iter().map(EncodedSeq::transitions).sum();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        shuffle.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            params.store.zero_grads();
            let ids = params.ids;
            let (vals, grads) = params.store.split_mut();
            for &i in batch {
                let mut tape = Tape::new(vals);
                let loss = loss_on_tape(&ids, &mut tape, &train[i])?;
                let l = tape.scalar(loss);
                if !l.is_finite() {
                    return Err(Error::Numerical(format!(
                        "{tag}: non-finite loss at epoch {epoch}, step {step} (student {i})"
                    )));
                }
                epoch_loss += l;
                tape.backward(loss, grads)?;
            }
            let norm = params.store.clip_grad_norm(cfg.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Numerical(format!("{tag}: non-finite gradient at epoch {epoch}, step {step}")));
            }
            opt.step(&mut params.store)?;
        }
        let (vauc, _) = auc_on(&params, &val)?;
        let (auc, s) = auc_on(&params, &test)?;
        let mean = epoch_loss / transitions as f64;
        log::info!("{tag} epoch {epoch}: train loss {mean:.5}, val auc {vauc:.4}, test auc {auc:.4}");
        curve.push(epoch, vec![mean, vauc, auc]);
        // without validation data the last epoch wins
        if val.is_none() || vauc > best.1 || best.1.is_nan() {
            best = (epoch, vauc, params.store.clone(), s);
        }
    }
    let (best_epoch, _, store, test) = best;
    params.store = store;
    Ok(TracerTrained {
        params,
        curve,
        best_epoch,
        test,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    layout: Layout,
    hidden: usize,
    questions_fingerprint: String,
}

impl TracerParams {
    pub fn to_checkpoint(&self, fingerprint: &str, table: &FeatureTable) -> Checkpoint {
        let meta = Meta {
            layout: self.layout,
            hidden: self.hidden,
            questions_fingerprint: table.questions_fingerprint(),
        };
        Checkpoint::from_store(
            MODEL_KIND,
            fingerprint,
            serde_json::to_value(meta).expect("meta serializes"),
            &self.store,
        )
    }

    /// Rebuild from a checkpoint, checking it was trained on `table`'s questions.
    pub fn from_checkpoint(ck: &Checkpoint, table: &FeatureTable) -> Result<Self> {
        ck.expect_kind(MODEL_KIND)?;
        let meta: Meta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| Error::format("tracer checkpoint meta", e.to_string()))?;
        if meta.questions_fingerprint != table.questions_fingerprint() {
            return Err(Error::format(
                "tracer checkpoint",
                "exercise list differs from the one the model was trained on",
            ));
        }
        let p = Self::from_store(meta.layout, meta.hidden, ck.to_store()?)?;
        check_table(&p, table)?;
        Ok(p)
    }
}
