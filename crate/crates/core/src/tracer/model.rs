use crate::error::{Error, Result};
use crate::numkit::gradcheck::{check_gradients, GradCheckReport};
use crate::numkit::{bce, sigmoid_scalar, Matrix, NodeId, ParamId, ParamStore, RngState, SparseRow, Tape};

use super::features::{EncodedSeq, Layout, Readout};

/// LSTM gates in row convention: `z = x·W_x + h·W_h + b`, split as
/// `[input | forget | candidate | output]`, each `H` wide.
#[derive(Clone, Debug)]
pub struct TracerParams {
    pub layout: Layout,
    pub hidden: usize,
    pub store: ParamStore,
    pub(crate) ids: LstmIds,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmIds {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub wy: ParamId,
    pub by: ParamId,
    pub hidden: usize,
}

impl TracerParams {
    /// Uniform(±1/√H) weights, forget-gate bias 1, zero output bias.
    pub fn init(layout: Layout, hidden: usize, rng: &mut RngState) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("tracer.hidden must be positive".into()));
        }
        let bound = 1.0 / (hidden as f64).sqrt();
        let (din, dout) = (layout.input_dim(), layout.output_dim());
        if dout == 0 {
            return Err(Error::Config(format!("variant {} has an empty output space", layout.variant)));
        }
        let mut store = ParamStore::new();
        store.add("lstm.w_x", rng.uniform_matrix(din, 4 * hidden, bound));
        store.add("lstm.w_h", rng.uniform_matrix(hidden, 4 * hidden, bound));
        let mut b = Matrix::zeros(1, 4 * hidden);
        for j in hidden..2 * hidden {
            b.set(0, j, 1.0);
        }
        store.add("lstm.b", b);
        store.add("out.w_yh", rng.uniform_matrix(hidden, dout, bound));
        store.add("out.b_y", Matrix::zeros(1, dout));
        Self::from_store(layout, hidden, store)
    }

    pub fn from_store(layout: Layout, hidden: usize, store: ParamStore) -> Result<Self> {
        let (din, dout) = (layout.input_dim(), layout.output_dim());
        let get = |name: &str, shape: (usize, usize)| -> Result<ParamId> {
            let p = store
                .find(name)
                .ok_or_else(|| Error::format("tracer params", format!("missing '{name}'")))?;
            if store.value(p).shape() != shape {
                return Err(Error::Dimension {
                    op: "tracer params",
                    left: store.value(p).shape(),
                    right: shape,
                });
            }
            Ok(p)
        };
        let ids = LstmIds {
            wx: get("lstm.w_x", (din, 4 * hidden))?,
            wh: get("lstm.w_h", (hidden, 4 * hidden))?,
            b: get("lstm.b", (1, 4 * hidden))?,
            wy: get("out.w_yh", (hidden, dout))?,
            by: get("out.b_y", (1, dout))?,
            hidden,
        };
        Ok(TracerParams {
            layout,
            hidden,
            store,
            ids,
        })
    }

    fn v(&self, p: ParamId) -> &Matrix {
        self.store.value(p)
    }

    /// One LSTM step. `h_prev` and `c_prev` are `H` long.
    pub fn lstm_step(&self, x: &SparseRow, h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let hn = self.hidden;
        if x.dim != self.layout.input_dim() || h_prev.len() != hn || c_prev.len() != hn {
            return Err(Error::Dimension {
                op: "lstm_step",
                left: (1, x.dim),
                right: (self.layout.input_dim(), hn),
            });
        }
        let mut z = self.v(self.ids.b).data().to_vec();
        let wx = self.v(self.ids.wx);
        for &(i, val) in &x.entries {
            for (zj, w) in z.iter_mut().zip(wx.row(i)) {
                *zj += val * w;
            }
        }
        let wh = self.v(self.ids.wh);
        for (k, &hk) in h_prev.iter().enumerate() {
            if hk != 0.0 {
                for (zj, w) in z.iter_mut().zip(wh.row(k)) {
                    *zj += hk * w;
                }
            }
        }
        let mut h = vec![0.0; hn];
        let mut c = vec![0.0; hn];
        for j in 0..hn {
            let i = sigmoid_scalar(z[j]);
            let f = sigmoid_scalar(z[hn + j]);
            let g = z[2 * hn + j].tanh();
            let o = sigmoid_scalar(z[3 * hn + j]);
            c[j] = f * c_prev[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        Ok((h, c))
    }

    /// `y = σ(h·W_yh + b_y)`, componentwise; not normalised.
    pub fn predict(&self, h: &[f64]) -> Vec<f64> {
        let wy = self.v(self.ids.wy);
        let mut y = self.v(self.ids.by).data().to_vec();
        for (k, &hk) in h.iter().enumerate() {
            for (yj, w) in y.iter_mut().zip(wy.row(k)) {
                *yj += hk * w;
            }
        }
        y.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
        y
    }

    /// The single output the readout selects, without forming all of `y`.
    pub fn score(&self, h: &[f64], readout: &Readout) -> f64 {
        match readout {
            Readout::Index(j) => {
                let wy = self.v(self.ids.wy);
                let z = self.v(self.ids.by).get(0, *j) + h.iter().enumerate().map(|(k, hk)| hk * wy.get(k, *j)).sum::<f64>();
                sigmoid_scalar(z)
            }
            Readout::Soft(w) => self.predict(h).iter().zip(w).map(|(y, w)| y * w).sum(),
        }
    }

    /// Prediction for each transition of the sequence, tape-free.
    pub fn run(&self, seq: &EncodedSeq) -> Result<Vec<f64>> {
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut out = Vec::with_capacity(seq.transitions());
        for (x, r) in seq.inputs.iter().zip(&seq.readouts) {
            (h, c) = self.lstm_step(x, &h, &c)?;
            out.push(self.score(&h, r));
        }
        Ok(out)
    }

    /// [`sequence_loss`] as the training loop computes it, on a tape.
    pub fn training_loss(&self, seq: &EncodedSeq) -> Result<f64> {
        let mut tape = Tape::new(self.store.values());
        let node = loss_on_tape(&self.ids, &mut tape, seq)?;
        Ok(tape.scalar(node))
    }

    /// Finite-difference check of the sequence loss over every parameter.
    pub fn gradient_check(&mut self, seq: &EncodedSeq) -> Result<GradCheckReport> {
        let ids = self.ids;
        check_gradients(&mut self.store, |tape| loss_on_tape(&ids, tape, seq))
    }

    /// Final hidden and cell state after feeding every input.
    pub fn final_state(&self, inputs: &[SparseRow]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        for x in inputs {
            (h, c) = self.lstm_step(x, &h, &c)?;
        }
        Ok((h, c))
    }
}

/// Summed clamped BCE of each transition's prediction against the next answer.
pub fn sequence_loss(params: &TracerParams, seq: &EncodedSeq) -> Result<f64> {
    if seq.inputs.len() < 2 {
        return Err(Error::InvalidArgument("sequence_loss needs at least two events".into()));
    }
    let preds = params.run(seq)?;
    Ok(preds.iter().zip(&seq.labels).map(|(&p, &r)| bce(p, r)).sum())
}

/// The same loss built on a tape, for training and gradient checks.
pub(crate) fn loss_on_tape(ids: &LstmIds, tape: &mut Tape, seq: &EncodedSeq) -> Result<NodeId> {
    let hn = ids.hidden;
    if seq.inputs.len() < 2 {
        return Err(Error::InvalidArgument("sequence_loss needs at least two events".into()));
    }
    let (wx, wh, b) = (tape.param(ids.wx), tape.param(ids.wh), tape.param(ids.b));
    let (wy, by) = (tape.param(ids.wy), tape.param(ids.by));
    let mut state: Option<(NodeId, NodeId)> = None;
    let mut preds = Vec::with_capacity(seq.transitions());
    for (x, readout) in seq.inputs.iter().zip(&seq.readouts) {
        let zx = tape.sparse_matmul(x.clone(), wx)?;
        let mut z = tape.add(zx, b)?;
        if let Some((h, _)) = state {
            let zh = tape.matmul(h, wh)?;
            z = tape.add(z, zh)?;
        }
        let i = tape.slice_cols(z, 0, hn)?;
        let i = tape.sigmoid(i);
        let f = tape.slice_cols(z, hn, hn)?;
        let f = tape.sigmoid(f);
        let g = tape.slice_cols(z, 2 * hn, hn)?;
        let g = tape.tanh(g);
        let o = tape.slice_cols(z, 3 * hn, hn)?;
        let o = tape.sigmoid(o);
        let ig = tape.mul(i, g)?;
        let c = match state {
            Some((_, c_prev)) => {
                let fc = tape.mul(f, c_prev)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        state = Some((h, c));

        let p = match readout {
            Readout::Index(j) => {
                let wcol = tape.slice_cols(wy, *j, 1)?;
                let bj = tape.slice_cols(by, *j, 1)?;
                let z = tape.matmul(h, wcol)?;
                let z = tape.add(z, bj)?;
                tape.sigmoid(z)
            }
            Readout::Soft(w) => {
                let z = tape.matmul(h, wy)?;
                let z = tape.add(z, by)?;
                let y = tape.sigmoid(z);
                let wcol = tape.constant(Matrix::new(w.len(), 1, w.clone())?);
                tape.matmul(y, wcol)?
            }
        };
        preds.push(p);
    }
    let all = tape.concat(&preds)?;
    tape.bce(all, &seq.labels)
}
