use crate::error::{Error, Result};
use crate::retrieve::cosine_score;
use crate::types::EmbeddingVector;

/// Index and value of the largest logit.
fn argmax(logits: &[f64]) -> (usize, f64) {
    logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, l)| if l > best.1 { (i, l) } else { best })
}

/// Cross-entropy of class 0 under `softmax(logits)`.
///
/// Evaluated as `(m - l0) + ln_1p(sum_{k != argmax} e^(l_k - m))` so that a
/// confident positive gives a loss near zero without cancellation, and large
/// logits never overflow.
pub(crate) fn cross_entropy_first(logits: &[f64]) -> f64 {
    let (top, m) = argmax(logits);
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != top)
        .map(|(_, &l)| (l - m).exp())
        .sum();
    (m - logits[0]) + rest.ln_1p()
}

/// `softmax(logits)` with max subtraction.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let (_, m) = argmax(logits);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("temperature must be a positive number, got {tau}")))
    }
}

/// InfoNCE loss of one query against its positive and negatives, with cosine
/// scores divided by `tau`.
pub fn infonce_loss(
    query: &EmbeddingVector,
    positive: &EmbeddingVector,
    negatives: &[EmbeddingVector],
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    if negatives.is_empty() {
        return Err(Error::Invalid("InfoNCE needs at least one negative".into()));
    }
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    logits.push(cosine_score(query, positive)? / tau);
    for n in negatives {
        logits.push(cosine_score(query, n)? / tau);
    }
    Ok(cross_entropy_first(&logits))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn equal_scores_give_ln_of_candidates() {
        let q = v(&[1.0, 0.0]);
        let negs = vec![v(&[1.0, 0.0]); 7];
        let l = infonce_loss(&q, &v(&[2.0, 0.0]), &negs, 0.02).unwrap();
        assert!((l - 8f64.ln()).abs() < 1e-12);
        assert!((l - 2.079442).abs() < 1e-6);
    }

    #[test]
    fn one_negative_hand_value() {
        // s+ = 1, s- = 0, tau = 1: ln(1 + e^-1)
        let l = infonce_loss(&v(&[1.0, 0.0]), &v(&[1.0, 0.0]), &[v(&[0.0, 1.0])], 1.0).unwrap();
        assert!((l - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn confident_positive_is_tiny_not_overflowing() {
        let l = infonce_loss(&v(&[1.0, 0.0]), &v(&[1.0, 0.0]), &vec![v(&[-1.0, 0.0]); 3], 0.02).unwrap();
        assert!(l.is_finite());
        assert!((0.0..=1e-40).contains(&l));
    }

    #[test]
    fn confident_wrong_answer_is_large_and_finite() {
        let l = infonce_loss(&v(&[1.0, 0.0]), &v(&[-1.0, 0.0]), &[v(&[1.0, 0.0])], 0.001).unwrap();
        assert!((l - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_tau_and_empty_negatives() {
        let q = v(&[1.0]);
        assert!(infonce_loss(&q, &q, std::slice::from_ref(&q), 0.0).is_err());
        assert!(infonce_loss(&q, &q, std::slice::from_ref(&q), -1.0).is_err());
        assert!(infonce_loss(&q, &q, &[], 0.1).is_err());
    }

    #[test]
    fn softmax_sums_to_one_at_extremes() {
        let p = softmax(&[1e4, -1e4, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(p[0], 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn loss_is_nonnegative(
                logits in proptest::collection::vec(-500.0f64..500.0, 1..20),
            ) {
                let l = cross_entropy_first(&logits);
                prop_assert!(l >= 0.0 && l.is_finite());
            }

            #[test]
            fn coinciding_scores_give_ln_1p_m(s in -1.0f64..1.0, m in 1usize..64, tau in 0.001f64..5.0) {
                let logits = vec![s / tau; m + 1];
                prop_assert!((cross_entropy_first(&logits) - (m as f64).ln_1p()).abs() < 1e-12);
            }
        }
    }
}
