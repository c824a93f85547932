use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Binary classification metrics at threshold 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// `None` when the split holds a single class.
    pub auc: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Mann-Whitney AUC of positive-class scores; tied pairs count one half.
pub fn auc(scores: &[f64], labels: &[usize]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Metrics from positive-class probabilities and `{0, 1}` labels.
pub fn metrics_from_scores(scores: &[f64], labels: &[usize]) -> Result<Metrics> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(invalid(format!("label {l} is not binary")));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > 0.5, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { None } else { Some(a as f64 / (a + b) as f64) };
    Ok(Metrics {
        accuracy: (tp + tn) as f64 / labels.len() as f64,
        precision: ratio(tp, fp),
        recall: ratio(tp, fn_),
        auc: auc(scores, labels),
        tp,
        fp,
        tn,
        fn_,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]), Some(0.75));
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]), Some(1.0));
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]), Some(0.0));
        assert_eq!(auc(&[0.5, 0.5], &[0, 1]), Some(0.5));
        assert_eq!(auc(&[0.1, 0.2], &[1, 1]), None);
    }

    #[test]
    fn confusion_counts() {
        let m = metrics_from_scores(&[0.9, 0.2, 0.7, 0.4, 0.6], &[1, 0, 0, 1, 1]).unwrap();
        assert_eq!((m.tp, m.fp, m.tn, m.fn_), (2, 1, 1, 1));
        assert_eq!(m.accuracy, 3.0 / 5.0);
        assert_eq!(m.precision, Some(2.0 / 3.0));
        assert_eq!(m.recall, Some(2.0 / 3.0));
        let perfect = metrics_from_scores(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!((perfect.accuracy, perfect.auc), (1.0, Some(1.0)));
        let none = metrics_from_scores(&[0.1, 0.2], &[0, 0]).unwrap();
        assert_eq!((none.precision, none.recall, none.auc), (None, None, None));
        assert!(metrics_from_scores(&[0.1], &[2]).is_err());
    }

    proptest! {
        #[test]
        fn auc_rank_invariant(scores in proptest::collection::vec(0.0f64..1.0, 2..40), seed in 0u64..1000) {
            let labels: Vec<usize> = (0..scores.len()).map(|i| (i as u64 * 7 + seed).is_multiple_of(3) as usize).collect();
            let a = auc(&scores, &labels);
            let b = auc(&scores.iter().map(|s| 2.0 * s + 1.0).collect::<Vec<_>>(), &labels);
            let c = auc(&scores.iter().map(|s| s.tanh()).collect::<Vec<_>>(), &labels);
            prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
            prop_assert_eq!(a.map(f64::to_bits), c.map(f64::to_bits));
        }

        #[test]
        fn accuracy_is_confusion_ratio(scores in proptest::collection::vec(0.0f64..1.0, 1..40)) {
            let labels: Vec<usize> = (0..scores.len()).map(|i| i % 2).collect();
            let m = metrics_from_scores(&scores, &labels).unwrap();
            prop_assert_eq!(m.accuracy, (m.tp + m.tn) as f64 / scores.len() as f64);
            if let Some(p) = m.precision { prop_assert_eq!(p, m.tp as f64 / (m.tp + m.fp) as f64); }
            if let Some(r) = m.recall { prop_assert_eq!(r, m.tp as f64 / (m.tp + m.fn_) as f64); }
        }
    }
}
