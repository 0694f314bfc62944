//! Closed-form training losses. The trainer builds the same expressions on
//! the tape; these scalar forms are the quotable definitions and the targets
//! of the closed-form acceptance suite.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean squared error over all T*F entries.
pub fn reconstruction_loss(predicted: &Tensor, target: &Tensor) -> Result<f64> {
    if predicted.shape() != target.shape() {
        return Err(Error::input(format!(
            "reconstruction loss shape mismatch: {:?} vs {:?}",
            predicted.shape(),
            target.shape()
        )));
    }
    let sum: f64 = predicted
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / predicted.numel() as f64)
}

/// Hinge discriminator loss for one (teacher-forced, free-running) score
/// pair: -min(0, -1 + score_t) - min(0, -1 - score_f).
pub fn disc_loss(score_t: f64, score_f: f64) -> f64 {
    -f64::min(0.0, -1.0 + score_t) - f64::min(0.0, -1.0 - score_f)
}

/// Batch-mean hinge loss.
pub fn disc_loss_batch(pairs: &[(f64, f64)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|&(t, f)| disc_loss(t, f)).sum::<f64>() / pairs.len() as f64
}

/// Generator criterion: L_G = L_T - alpha * (score_f - score_t). The
/// adversarial term pushes free-running scores up and teacher-forced scores
/// down, equalizing the two behavior distributions.
pub fn gen_loss(l_t: f64, score_t: f64, score_f: f64, alpha: f64) -> f64 {
    l_t - alpha * (score_f - score_t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstruction_examples() {
        let a = Tensor::new(vec![2, 2], vec![0.5; 4]).unwrap();
        assert_eq!(reconstruction_loss(&a, &a).unwrap(), 0.0);

        let b = Tensor::new(vec![2, 2], vec![0.6; 4]).unwrap();
        assert!((reconstruction_loss(&b, &a).unwrap() - 0.01).abs() < 1e-15);

        let pred = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let target = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        assert_eq!(reconstruction_loss(&pred, &target).unwrap(), 0.5);

        let bad = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(reconstruction_loss(&pred, &bad).is_err());
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(disc_loss(1.0, -1.0), 0.0);
        assert_eq!(disc_loss(0.0, 0.0), 2.0);
        assert_eq!(disc_loss(0.5, -2.0), 0.5);
        assert_eq!(disc_loss_batch(&[(1.0, -1.0), (0.0, 0.0)]), 1.0);
    }

    #[test]
    fn hinge_is_nonnegative_and_zero_iff_margins_met() {
        for &(t, f) in &[(2.0, -3.0), (1.0, -1.0), (0.9, -1.0), (1.0, -0.9), (-5.0, 5.0)] {
            let l = disc_loss(t, f);
            assert!(l >= 0.0);
            assert_eq!(l == 0.0, t >= 1.0 && f <= -1.0, "scores ({t}, {f})");
        }
    }

    #[test]
    fn generator_loss_examples() {
        assert_eq!(gen_loss(0.7, 0.3, 0.9, 0.0), 0.7);
        assert!((gen_loss(0.5, 0.8, 0.2, 1e-3) - 0.5006).abs() < 1e-15);
        assert_eq!(gen_loss(0.25, 0.4, 0.4, 123.0), 0.25);
    }

    #[test]
    fn generator_loss_is_affine_in_alpha() {
        let (l_t, s_t, s_f) = (0.31, 0.75, -0.4);
        let slope = -(s_f - s_t);
        for &alpha in &[0.0, 1e-3, 2e-3] {
            let expect = l_t + alpha * slope;
            assert!((gen_loss(l_t, s_t, s_f, alpha) - expect).abs() < 1e-12);
        }
    }
}
