use super::responses::ResponseLog;
use crate::error::{Error, Result};
use crate::numkit::RngState;

/// Partition logs by student into (train, test). Each side keeps input order.
pub fn split_train_test(
    logs: &[ResponseLog],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<ResponseLog>, Vec<ResponseLog>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train ratio must be in (0, 1), got {ratio}"
        )));
    }
    let n = logs.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 students to split, got {n}"
        )));
    }
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    RngState::new(seed).shuffle(&mut order);
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (log, t) in logs.iter().zip(is_train) {
        if t {
            train.push(log.clone());
        } else {
            test.push(log.clone());
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn logs(n: usize) -> Vec<ResponseLog> {
        (0..n)
            .map(|i| ResponseLog {
                student_id: format!("s{i}"),
                events: vec![],
            })
            .collect()
    }

    #[test]
    fn ten_students() {
        let (a, b) = split_train_test(&logs(10), 0.8, 1).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
    }

    #[test]
    fn reported_sizes_are_an_eighty_twenty_split() {
        let ratio: f64 = 105_744.0 / (105_744.0 + 26_435.0);
        assert!((ratio - 0.8).abs() < 1e-3);
    }

    #[test]
    fn deterministic_and_disjoint() {
        let all = logs(97);
        let (a1, b1) = split_train_test(&all, 0.8, 7).unwrap();
        let (a2, b2) = split_train_test(&all, 0.8, 7).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        let ta: HashSet<_> = a1.iter().map(|l| &l.student_id).collect();
        let tb: HashSet<_> = b1.iter().map(|l| &l.student_id).collect();
        assert!(ta.is_disjoint(&tb));
        assert_eq!(ta.len() + tb.len(), 97);
        assert!((a1.len() as f64 - 0.8 * 97.0).abs() <= 1.0);
    }

    #[test]
    fn errors() {
        assert!(split_train_test(&logs(1), 0.8, 0).is_err());
        assert!(split_train_test(&logs(5), 1.0, 0).is_err());
        assert!(split_train_test(&logs(5), 0.0, 0).is_err());
    }
}
