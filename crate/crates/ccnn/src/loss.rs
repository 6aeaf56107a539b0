//! Multi-class logistic loss over real class scores, with its initial
//! backward delta and a 0/1 accuracy helper.

use crate::error::{Error, Result};

/// Real class scores for a batch: `scores[class * batch + item]`, i.e. a
/// classes x batch row-major matrix, with one label per item.
#[derive(Debug, Clone)]
pub struct ScoredBatch {
    pub classes: usize,
    pub batch: usize,
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
}

impl ScoredBatch {
    pub fn new(classes: usize, batch: usize, scores: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if scores.len() != classes * batch || labels.len() != batch {
            return Err(Error::shape(
                &[classes * batch, batch],
                &[scores.len(), labels.len()],
                "scored batch",
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {classes})"
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("scores must be finite".into()));
        }
        Ok(ScoredBatch {
            classes,
            batch,
            scores,
            labels,
        })
    }

    fn score(&self, class: usize, item: usize) -> f64 {
        self.scores[class * self.batch + item]
    }
}

/// Mean over the batch of -log softmax(scores)[label], with max-shift
/// stabilization. Returns the loss and its gradient with respect to every
/// score: (softmax - onehot) / batch_size.
pub fn logistic_loss(batch: &ScoredBatch) -> (f64, Vec<f64>) {
    let (k, n) = (batch.classes, batch.batch);
    let mut delta = vec![0.0; k * n];
    let mut total = 0.0;
    for item in 0..n {
        let max = (0..k)
            .map(|c| batch.score(c, item))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for c in 0..k {
            denom += (batch.score(c, item) - max).exp();
        }
        let label = batch.labels[item];
        // -log(e^{s_y - max} / denom) = log(denom) - (s_y - max)
        total += denom.ln() - (batch.score(label, item) - max);
        for c in 0..k {
            let p = (batch.score(c, item) - max).exp() / denom;
            let onehot = if c == label { 1.0 } else { 0.0 };
            delta[c * n + item] = (p - onehot) / n as f64;
        }
    }
    (total / n as f64, delta)
}

/// Fraction of items whose argmax score equals the label; argmax ties break
/// to the lowest class index.
pub fn accuracy(batch: &ScoredBatch) -> f64 {
    let (k, n) = (batch.classes, batch.batch);
    let mut correct = 0usize;
    for item in 0..n {
        let mut best = 0usize;
        for c in 1..k {
            if batch.score(c, item) > batch.score(best, item) {
                best = c;
            }
        }
        if best == batch.labels[item] {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_two_class_loss_is_ln2() {
        // Two identical items with scores [0, 0], label 0: loss ln 2 and
        // per-item delta column [-0.25, 0.25] after the 1/batch scaling.
        let batch = ScoredBatch::new(2, 2, vec![0.0, 0.0, 0.0, 0.0], vec![0, 0]).unwrap();
        let (loss, delta) = logistic_loss(&batch);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        for item in 0..2 {
            assert!((delta[item] - -0.25).abs() < 1e-12);
            assert!((delta[2 + item] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_score_has_tiny_loss() {
        let batch = ScoredBatch::new(2, 1, vec![10.0, -10.0], vec![0]).unwrap();
        let (loss, _) = logistic_loss(&batch);
        // -log(e^10 / (e^10 + e^-10)) = log(1 + e^-20)
        assert!((loss - (1.0 + (-20.0f64).exp()).ln()).abs() < 1e-15);
        assert!((loss - 2.061e-9).abs() < 1e-11);
    }

    #[test]
    fn delta_columns_sum_to_zero() {
        let batch = ScoredBatch::new(
            3,
            2,
            vec![0.5, -1.0, 2.0, 0.3, -0.5, 1.1],
            vec![2, 0],
        )
        .unwrap();
        let (_, delta) = logistic_loss(&batch);
        for item in 0..2 {
            let col: f64 = (0..3).map(|c| delta[c * 2 + item]).sum();
            assert!(col.abs() < 1e-15);
        }
    }

    #[test]
    fn loss_at_uniform_scores_is_ln_classes() {
        let batch = ScoredBatch::new(4, 3, vec![1.5; 12], vec![0, 1, 3]).unwrap();
        let (loss, _) = logistic_loss(&batch);
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn per_item_shift_invariance() {
        let scores = vec![0.5, -1.0, 2.0, 0.3, -0.5, 1.1];
        let batch = ScoredBatch::new(3, 2, scores.clone(), vec![2, 0]).unwrap();
        let (loss_a, delta_a) = logistic_loss(&batch);

        // Add a constant to every class score of item 0 only.
        let mut shifted = scores;
        for c in 0..3 {
            shifted[c * 2] += 7.5;
        }
        let batch_b = ScoredBatch::new(3, 2, shifted, vec![2, 0]).unwrap();
        let (loss_b, delta_b) = logistic_loss(&batch_b);
        assert!((loss_a - loss_b).abs() < 1e-12);
        for (a, b) in delta_a.iter().zip(&delta_b) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_matches_finite_differences() {
        let scores = vec![0.5, -1.0, 2.0, 0.3, -0.5, 1.1];
        let labels = vec![2usize, 0];
        let batch = ScoredBatch::new(3, 2, scores.clone(), labels.clone()).unwrap();
        let (_, delta) = logistic_loss(&batch);
        let h = 1e-6;
        for i in 0..scores.len() {
            let mut plus = scores.clone();
            let mut minus = scores.clone();
            plus[i] += h;
            minus[i] -= h;
            let lp = logistic_loss(&ScoredBatch::new(3, 2, plus, labels.clone()).unwrap()).0;
            let lm = logistic_loss(&ScoredBatch::new(3, 2, minus, labels.clone()).unwrap()).0;
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(delta[i].abs()).max(1e-12);
            assert!((fd - delta[i]).abs() / denom < 1e-8, "coord {i}");
        }
    }

    #[test]
    fn loss_is_nonnegative_and_stable_for_extreme_scores() {
        let batch = ScoredBatch::new(2, 1, vec![1000.0, -1000.0], vec![1]).unwrap();
        let (loss, delta) = logistic_loss(&batch);
        assert!(loss.is_finite() && loss > 0.0);
        assert!(delta.iter().all(|d| d.is_finite()));
    }

    #[test]
    fn accuracy_counting() {
        let batch = ScoredBatch::new(
            2,
            4,
            vec![1.0, 0.0, 3.0, 0.2, 0.0, 1.0, 1.0, 0.1],
            vec![0, 1, 0, 0],
        )
        .unwrap();
        // items: argmax = 0, 1, 0, 0 vs labels 0, 1, 0, 0 except item 1:
        // scores item1: class0 = 0.0, class1 = 1.0 -> argmax 1 == label 1.
        assert_eq!(accuracy(&batch), 1.0);

        let all_wrong =
            ScoredBatch::new(2, 2, vec![0.0, 0.0, 1.0, 1.0], vec![0, 0]).unwrap();
        assert_eq!(accuracy(&all_wrong), 0.0);

        let three_of_four = ScoredBatch::new(
            2,
            4,
            vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            vec![0, 0, 0, 0],
        )
        .unwrap();
        assert_eq!(accuracy(&three_of_four), 0.75);
    }

    #[test]
    fn accuracy_tie_breaks_to_lowest_class() {
        let batch = ScoredBatch::new(2, 1, vec![1.0, 1.0], vec![0]).unwrap();
        assert_eq!(accuracy(&batch), 1.0);
        let batch = ScoredBatch::new(2, 1, vec![1.0, 1.0], vec![1]).unwrap();
        assert_eq!(accuracy(&batch), 0.0);
    }

    #[test]
    fn rejects_out_of_range_labels() {
        assert!(ScoredBatch::new(2, 1, vec![0.0, 0.0], vec![2]).is_err());
    }
}
