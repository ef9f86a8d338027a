//! Cross-entropy loss, both on probabilities (clamped) and fused with
//! softmax on raw scores for the numerically stable training path.

use crate::error::{Error, Result};
use crate::nn::grid::Grid;
use crate::nn::layers::dims2;

/// Probabilities below this are clamped before the log to keep the loss
/// finite when a predicted probability collapses to zero.
pub const PROB_FLOOR: f64 = 1e-15;

fn check_labels(batch: usize, k: usize, labels: &[u8]) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            expected: format!("{batch} labels"),
            got: format!("{}", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= k) {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            expected: format!("labels < {k}"),
            got: format!("label {bad}"),
        });
    }
    Ok(())
}

/// Mean negative log-likelihood of the true class, `probs` being softmax
/// outputs: [batch, classes].
pub fn cross_entropy(probs: &Grid, labels: &[u8]) -> Result<f64> {
    let (batch, k) = dims2(probs, "cross_entropy probs")?;
    check_labels(batch, k, labels)?;
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let p = probs.data()[b * k + label as usize].max(PROB_FLOOR);
        total -= p.ln();
    }
    Ok(total / batch as f64)
}

/// Softmax + cross-entropy fused on raw scores. Returns the mean loss and
/// its gradient w.r.t. the scores, `(p - onehot) / batch`.
pub fn log_softmax_loss(scores: &Grid, labels: &[u8]) -> Result<(f64, Grid)> {
    let (batch, k) = dims2(scores, "log_softmax_loss scores")?;
    check_labels(batch, k, labels)?;
    let mut dscores = scores.clone();
    let mut total = 0.0;
    let dd = dscores.data_mut();
    for (b, &label) in labels.iter().enumerate() {
        let row = &mut dd[b * k..(b + 1) * k];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v -= max;
            sum += v.exp();
        }
        let log_sum = sum.ln();
        total -= row[label as usize] - log_sum;
        for v in row.iter_mut() {
            *v = (*v - log_sum).exp();
        }
        row[label as usize] -= 1.0;
        for v in row.iter_mut() {
            *v /= batch as f64;
        }
    }
    Ok((total / batch as f64, dscores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::softmax;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_two_class_loss_is_ln2() {
        let probs = Grid::from_vec(&[3, 2], vec![0.5; 6]).unwrap();
        let loss = cross_entropy(&probs, &[0, 1, 0]).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_batch_loss() {
        // rows (0.9, 0.1) label 0 and (0.5, 0.5) label 1:
        // (-ln 0.9 - ln 0.5) / 2
        let probs = Grid::from_vec(&[2, 2], vec![0.9, 0.1, 0.5, 0.5]).unwrap();
        let loss = cross_entropy(&probs, &[0, 1]).unwrap();
        let expected = (-(0.9f64.ln()) - 0.5f64.ln()) / 2.0;
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.399_253_848_108_885_8).abs() < 1e-10);
    }

    #[test]
    fn zero_probability_is_clamped_finite() {
        let probs = Grid::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap();
        let loss = cross_entropy(&probs, &[0]).unwrap();
        assert!(loss.is_finite());
        assert!((loss - -(PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn perfect_prediction_loss_is_zero() {
        let probs = Grid::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let loss = cross_entropy(&probs, &[0, 1]).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range_is_error() {
        let probs = Grid::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
        assert!(cross_entropy(&probs, &[2]).is_err());
        assert!(log_softmax_loss(&probs, &[5]).is_err());
    }

    #[test]
    fn fused_loss_matches_softmax_then_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let scores = Grid::from_vec(
            &[5, 2],
            (0..10).map(|_| rng.random_range(-4.0..4.0)).collect(),
        )
        .unwrap();
        let labels = [0u8, 1, 1, 0, 1];
        let (fused, _) = log_softmax_loss(&scores, &labels).unwrap();
        let unfused = cross_entropy(&softmax(&scores).unwrap(), &labels).unwrap();
        assert!((fused - unfused).abs() < 1e-12);
    }

    #[test]
    fn fused_loss_survives_huge_scores() {
        let scores = Grid::from_vec(&[1, 2], vec![1000.0, -1000.0]).unwrap();
        let (loss, _) = log_softmax_loss(&scores, &[0]).unwrap();
        assert!(loss.is_finite());
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut scores = Grid::from_vec(
            &[4, 2],
            (0..8).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let labels = [1u8, 0, 1, 1];
        let (_, dscores) = log_softmax_loss(&scores, &labels).unwrap();
        let eps = 1e-6;
        for i in 0..scores.len() {
            let orig = scores.data()[i];
            scores.data_mut()[i] = orig + eps;
            let (up, _) = log_softmax_loss(&scores, &labels).unwrap();
            scores.data_mut()[i] = orig - eps;
            let (down, _) = log_softmax_loss(&scores, &labels).unwrap();
            scores.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = dscores.data()[i];
            assert!(
                (numeric - a).abs() / (numeric.abs() + a.abs()).max(1e-8) < 1e-6,
                "score[{i}]: numeric {numeric} vs analytic {a}"
            );
        }
    }

    #[test]
    fn score_gradient_rows_sum_to_zero() {
        let scores = Grid::from_vec(&[2, 2], vec![0.3, -1.2, 2.0, 0.1]).unwrap();
        let (_, d) = log_softmax_loss(&scores, &[0, 1]).unwrap();
        for b in 0..2 {
            let s: f64 = d.row(b).iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }
}
