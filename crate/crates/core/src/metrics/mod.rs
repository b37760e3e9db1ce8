//! Accuracy, average precision, dataset reports and spectrum maps.

pub mod report;
pub mod spectrum;

pub use report::{evaluate, robustness_eval, EvalReport, KindScore, PerturbationBlock, Scorer, SubsetScore};
pub use spectrum::{spectrum_average, spectrum_average_images, spectrum_map};

use crate::data::FAKE_LABEL;
use crate::error::{Error, Result};

/// Scores at or above this are called fake.
pub const THRESHOLD: f64 = 0.5;

fn check_pairs(op: &'static str, scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::contract(op, format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::contract(op, "no scores"));
    }
    if let Some(l) = labels.iter().find(|&&l| l > FAKE_LABEL) {
        return Err(Error::contract(op, format!("label {l} is neither 0 nor 1")));
    }
    Ok(())
}

/// Percent of scores on the right side of [`THRESHOLD`].
pub fn accuracy(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_pairs("accuracy", scores, labels)?;
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| (**s >= THRESHOLD) == (**l == FAKE_LABEL))
        .count();
    Ok(100.0 * correct as f64 / scores.len() as f64)
}

/// Mean precision over the ranks of the positives, in percent. Ranking is a
/// stable descending sort, so tied scores keep their input order.
///
/// The sum is carried in double-double arithmetic and rounded once, so the
/// result is the correctly rounded value of the exact rational.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_pairs("average_precision", scores, labels)?;
    let positives = labels.iter().filter(|&&l| l == FAKE_LABEL).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("average precision needs at least one fake sample".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = Dd::ZERO;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == FAKE_LABEL {
            hits += 1;
            sum = sum.add(Dd::quotient(hits as f64, (rank + 1) as f64));
        }
    }
    Ok(sum.scale(100.0).div(positives as f64))
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    fn norm(a: f64, b: f64) -> Dd {
        let s = a + b;
        Dd { hi: s, lo: b - (s - a) }
    }

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    /// `n / d` for integers below 2^53; the fma residual is exact.
    fn quotient(n: f64, d: f64) -> Dd {
        let q = n / d;
        let r = (-q).mul_add(d, n);
        Dd::norm(q, r / d)
    }

    fn add(self, o: Dd) -> Dd {
        let (s, e) = Dd::two_sum(self.hi, o.hi);
        Dd::norm(s, e + self.lo + o.lo)
    }

    fn scale(self, k: f64) -> Dd {
        let p = self.hi * k;
        let e = self.hi.mul_add(k, -p);
        Dd::norm(p, e + self.lo * k)
    }

    /// Rounded `self / d`.
    fn div(self, d: f64) -> f64 {
        let q = self.hi / d;
        let r = (-q).mul_add(d, self.hi) + self.lo;
        q + r / d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0.7, 0.4], &[1, 0]).unwrap(), 100.0);
        assert_eq!(accuracy(&[0.5], &[1]).unwrap(), 100.0);
        assert_eq!(accuracy(&[0.9, 0.9, 0.1, 0.9], &[1, 0, 0, 1]).unwrap(), 75.0);
        assert!(matches!(accuracy(&[], &[]), Err(Error::Contract { .. })));
        assert!(accuracy(&[0.1], &[0, 1]).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0]).unwrap(), 100.0);
        assert_eq!(average_precision(&[0.9, 0.6, 0.8, 0.4], &[1, 0, 0, 1]).unwrap(), 75.0);
        assert!(matches!(
            average_precision(&[0.3, 0.2], &[0, 0]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn ap_is_correctly_rounded() {
        // 1/1 + 2/3 + 3/7 = 44/21 over three positives: 4400/63 percent
        let labels = [1, 0, 1, 0, 0, 0, 1];
        let scores = [7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(average_precision(&scores, &labels).unwrap(), 4400.0 / 63.0);
    }

    #[test]
    fn ties_keep_input_order() {
        // positive first among equals ranks it first
        assert_eq!(average_precision(&[0.5, 0.5], &[1, 0]).unwrap(), 100.0);
        assert_eq!(average_precision(&[0.5, 0.5], &[0, 1]).unwrap(), 50.0);
    }

    proptest! {
        #[test]
        fn ap_is_invariant_under_monotone_maps(
            scores in prop::collection::vec(-5.0f64..5.0, 1..30),
            seed in any::<u64>(),
        ) {
            let labels: Vec<u8> = scores.iter().enumerate().map(|(i, _)| ((seed >> (i % 64)) & 1) as u8).collect();
            prop_assume!(labels.contains(&1));
            let a = average_precision(&scores, &labels).unwrap();
            let mapped: Vec<f64> = scores.iter().map(|s| (s * 0.5).exp() + 3.0).collect();
            prop_assert_eq!(a, average_precision(&mapped, &labels).unwrap());
            prop_assert!((0.0..=100.0).contains(&a));
        }

        #[test]
        fn accuracy_is_invariant_under_maps_fixing_the_threshold(
            scores in prop::collection::vec(0.0f64..1.0, 1..30),
            seed in any::<u64>(),
        ) {
            let labels: Vec<u8> = scores.iter().enumerate().map(|(i, _)| ((seed >> (i % 64)) & 1) as u8).collect();
            // stretch about the threshold; exact enough that no score crosses it
            let mapped: Vec<f64> = scores.iter().map(|s| 0.5 + 2.0 * (s - 0.5)).collect();
            prop_assert_eq!(accuracy(&scores, &labels).unwrap(), accuracy(&mapped, &labels).unwrap());
        }
    }
}
