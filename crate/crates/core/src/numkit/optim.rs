use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tape::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Adam with bias-corrected moments, or plain SGD.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Optimizer {
    pub fn adam(store: &ParamStore, lr: f64) -> Self {
        Optimizer::new(OptimizerKind::Adam, store, lr)
    }

    pub fn sgd(store: &ParamStore, lr: f64) -> Self {
        Optimizer::new(OptimizerKind::Sgd, store, lr)
    }

    pub fn new(kind: OptimizerKind, store: &ParamStore, lr: f64) -> Self {
        let zeros = |s: &ParamStore| {
            s.values()
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect::<Vec<_>>()
        };
        let (m, v) = match kind {
            OptimizerKind::Adam => (zeros(store), zeros(store)),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update from the store's current gradients. Gradients are left
    /// untouched; callers zero them between steps.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.kind == OptimizerKind::Adam && self.m.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer state has {} slots, store has {} params",
                self.m.len(),
                store.len()
            )));
        }
        let (ids, values, grads) = store.parts_mut();
        for (i, g) in grads.iter().enumerate() {
            if let Some(pos) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient {} in param '{}' at flat index {pos} (step {})",
                    g.data()[pos],
                    ids[i],
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, g) in values.iter_mut().zip(grads) {
                    for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
                        *wv -= self.lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for (((w, g), m), v) in values
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    let it = w
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
                    for ((wv, &gv), (mv, vv)) in it {
                        *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                        *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *wv -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
