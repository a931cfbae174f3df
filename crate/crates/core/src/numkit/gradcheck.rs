//! Central finite-difference checks of tape gradients.

use super::tape::{NodeId, ParamStore, Tape};
use crate::error::Result;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Magnitudes below this are compared absolutely rather than relatively;
/// central differences at h=1e-5 carry ~1e-10 of rounding noise.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare the tape gradient of the scalar built by `build` against central
/// finite differences over every parameter entry in `store`.
pub fn check_gradients<F>(store: &mut ParamStore, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<NodeId>,
{
    store.zero_grads();
    {
        let (vals, grads) = store.split_mut();
        let mut tape = Tape::new(vals);
        let loss = build(&mut tape)?;
        tape.backward(loss, grads)?;
    }
    let analytic: Vec<Vec<f64>> = store.grads().iter().map(|g| g.data().to_vec()).collect();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store.values());
        let loss = build(&mut tape)?;
        Ok(tape.scalar(loss))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        checked: 0,
    };
    let pids: Vec<_> = store.ids().map(|(p, _)| p).collect();
    for p in pids {
        for idx in 0..store.value(p).len() {
            let orig = store.value(p).data()[idx];
            store.value_mut(p).data_mut()[idx] = orig + FD_STEP;
            let plus = eval(store)?;
            store.value_mut(p).data_mut()[idx] = orig - FD_STEP;
            let minus = eval(store)?;
            store.value_mut(p).data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(analytic[p.index()][idx], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_none() {
                report.max_rel_error = err;
                report.worst_param = Some(store.id(p).to_string());
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::matrix::Matrix;
    use crate::numkit::rng::RngState;
    use crate::numkit::tape::SparseRow;

    #[test]
    fn scalar_sigmoid_matches_fd() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::scalar(0.7));
        let x = 1.3;
        let r = check_gradients(&mut store, |t| {
            let wn = t.param(w);
            let xn = t.constant(Matrix::scalar(x));
            let z = t.matmul(xn, wn)?;
            let s = t.sigmoid(z);
            t.sum(&[s])
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn constant_loss_has_zero_grads() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::row_vector(vec![1.0, 2.0]));
        store.zero_grads();
        let (vals, grads) = store.split_mut();
        let mut tape = Tape::new(vals);
        let _ = tape.param(w);
        let c = tape.constant(Matrix::scalar(4.0));
        tape.backward(c, grads).unwrap();
        assert!(store.grad(w).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_before_forward_is_usage_error() {
        let mut store = ParamStore::new();
        store.add("w", Matrix::scalar(1.0));
        let (vals, grads) = store.split_mut();
        let mut other = Tape::new(vals);
        let ghost = other.constant(Matrix::scalar(0.0));
        let empty = Tape::new(vals);
        let err = empty.backward(ghost, grads).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    /// Two-layer net touching every primitive, over 20 seeds and shapes.
    #[test]
    fn every_primitive_passes_fd_sweep() {
        for seed in 0..20u64 {
            let mut rng = RngState::new(seed);
            let din = 2 + rng.below(4);
            let hid = 2 + rng.below(4);
            let rows = 2 + rng.below(3);
            let mut store = ParamStore::new();
            let w1 = store.add("w1", rng.normal_matrix(din, hid, 0.5));
            let b1 = store.add("b1", rng.normal_matrix(1, hid, 0.5));
            let w2 = store.add("w2", rng.normal_matrix(2 * hid, 3, 0.5));
            let emb = store.add("emb", rng.normal_matrix(5, 2 * hid, 0.5));
            let x = rng.normal_matrix(rows, din, 1.0);
            let mut sparse = SparseRow::new(5);
            sparse.push(rng.below(5), 1.0);
            sparse.push(4, 0.3);
            let target = rng.below(3);
            let reg = rng.normal_matrix(1, 2 * hid, 1.0).data().to_vec();
            let r = check_gradients(&mut store, |t| {
                let xn = t.constant(x.clone());
                let w1n = t.param(w1);
                let b1n = t.param(b1);
                let z = t.matmul(xn, w1n)?;
                let z = t.add(z, b1n)?;
                let a = t.tanh(z);
                let s = t.sigmoid(z);
                let mixed = t.mul(a, s)?;
                let pooled = t.max_rows(mixed)?;
                let rl = t.relu(z);
                let pooled2 = t.max_rows(rl)?;
                let feat = t.concat(&[pooled, pooled2])?;
                let embn = t.param(emb);
                let e = t.sparse_matmul(sparse.clone(), embn)?;
                let feat = t.add(feat, e)?;
                let w2n = t.param(w2);
                let logits = t.matmul(feat, w2n)?;
                let ce = t.softmax_ce(logits, target)?;
                let first = t.slice_cols(logits, 0, 1)?;
                let p = t.sigmoid(first);
                let b = t.bce(p, &[1.0])?;
                let sq = t.sq_err(feat, &reg)?;
                t.sum(&[ce, b, sq])
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
        }
    }
}
