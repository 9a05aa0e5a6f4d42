//! Misclassification statistics: overall rate, per-class conditional
//! rates, and set errors between equivalence classes of labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetError {
    pub s: Vec<usize>,
    pub t: Vec<usize>,
    /// `max(P(pred in S | truth in T), P(pred in T | truth in S))`
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrStats {
    pub evaluated: usize,
    pub errors: usize,
    pub overall: f64,
    /// `P(pred != l | truth = l)`; `None` when class `l` was not evaluated.
    pub per_class: Vec<Option<f64>>,
    /// Largest per-class rate.
    pub worst_class: f64,
    pub set_errors: Vec<SetError>,
    /// `confusion[truth][pred]` counts.
    pub confusion: Vec<Vec<usize>>,
}

impl ErrStats {
    /// `P(pred in S | truth in T)`, 0 when no evaluated node has truth in `T`.
    pub fn conditional(&self, pred_in: &[usize], truth_in: &[usize]) -> f64 {
        let hits: usize = truth_in
            .iter()
            .map(|&t| pred_in.iter().map(|&s| self.confusion[t][s]).sum::<usize>())
            .sum();
        let total: usize = truth_in
            .iter()
            .map(|&t| self.confusion[t].iter().sum::<usize>())
            .sum();
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    }

    /// Fraction of nodes with truth in `set` whose prediction is a
    /// different member of `set`.
    pub fn within_set_swap_rate(&self, set: &[usize]) -> f64 {
        let swapped: usize = set
            .iter()
            .map(|&t| {
                set.iter()
                    .filter(|&&s| s != t)
                    .map(|&s| self.confusion[t][s])
                    .sum::<usize>()
            })
            .sum();
        let total: usize = set
            .iter()
            .map(|&t| self.confusion[t].iter().sum::<usize>())
            .sum();
        if total == 0 {
            0.0
        } else {
            swapped as f64 / total as f64
        }
    }

    pub fn set_error(&self, s: &[usize], t: &[usize]) -> f64 {
        self.conditional(s, t).max(self.conditional(t, s))
    }
}

/// Error statistics over the nodes selected by `mask` (all when `None`).
/// `equiv_sets` partitions the labels; a set error is reported for every
/// pair of distinct sets.
pub fn misclassification_stats(
    pred: &[usize],
    truth: &[usize],
    k: usize,
    equiv_sets: &[Vec<usize>],
    mask: Option<&[bool]>,
) -> Result<ErrStats> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if let Some(m) = mask {
        if m.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                got: m.len(),
            });
        }
    }
    let mut confusion = vec![vec![0usize; k]; k];
    let mut evaluated = 0;
    for (v, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if mask.is_some_and(|m| !m[v]) {
            continue;
        }
        if p >= k || t >= k {
            return Err(Error::InvalidParams(format!(
                "label out of range at node {v}"
            )));
        }
        confusion[t][p] += 1;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::EmptyEvaluationSet);
    }
    let errors = evaluated - (0..k).map(|l| confusion[l][l]).sum::<usize>();
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|l| {
            let total: usize = confusion[l].iter().sum();
            (total > 0).then(|| (total - confusion[l][l]) as f64 / total as f64)
        })
        .collect();
    let worst_class = per_class.iter().flatten().copied().fold(0.0, f64::max);
    let mut stats = ErrStats {
        evaluated,
        errors,
        overall: errors as f64 / evaluated as f64,
        per_class,
        worst_class,
        set_errors: Vec::new(),
        confusion,
    };
    for (i, s) in equiv_sets.iter().enumerate() {
        for t in &equiv_sets[i + 1..] {
            let rate = stats.set_error(s, t);
            stats.set_errors.push(SetError {
                s: s.clone(),
                t: t.clone(),
                rate,
            });
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn singletons(k: usize) -> Vec<Vec<usize>> {
        (0..k).map(|i| vec![i]).collect()
    }

    #[test]
    fn perfect_prediction() {
        let truth = [0, 1, 1, 0, 2];
        let s = misclassification_stats(&truth, &truth, 3, &singletons(3), None).unwrap();
        assert_eq!(s.overall, 0.0);
        assert_eq!(s.worst_class, 0.0);
        assert!(s.set_errors.iter().all(|e| e.rate == 0.0));
    }

    #[test]
    fn constant_prediction_worst_class() {
        let truth = [0, 1, 0, 1];
        let s = misclassification_stats(&[0; 4], &truth, 2, &singletons(2), None).unwrap();
        assert_eq!(s.overall, 0.5);
        assert_eq!(s.per_class, vec![Some(0.0), Some(1.0)]);
        assert_eq!(s.worst_class, 1.0);
    }

    #[test]
    fn set_error_ignores_within_set_confusion() {
        let truth = [0, 0, 1, 1, 2, 2];
        let pred = [1, 0, 0, 0, 2, 2];
        let sets = vec![vec![0, 1], vec![2]];
        let s = misclassification_stats(&pred, &truth, 3, &sets, None).unwrap();
        assert!(s.overall > 0.0);
        assert_eq!(s.set_errors.len(), 1);
        assert_eq!(s.set_errors[0].rate, 0.0);
        assert_eq!(s.within_set_swap_rate(&[0, 1]), 0.75);
    }

    #[test]
    fn mask_and_errors() {
        let truth = [0, 1];
        let s = misclassification_stats(&[1, 1], &truth, 2, &singletons(2), Some(&[false, true]))
            .unwrap();
        assert_eq!(s.evaluated, 1);
        assert_eq!(s.overall, 0.0);
        assert!(matches!(
            misclassification_stats(&[1, 1], &truth, 2, &singletons(2), Some(&[false, false])),
            Err(Error::EmptyEvaluationSet)
        ));
        assert!(misclassification_stats(&[1], &truth, 2, &singletons(2), None).is_err());
    }
}
