//! Aggregation arithmetic, generic over the scalar type.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("{name} must be in [0, 1], got {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("{0} has no items")]
    Empty(&'static str),
}

pub fn check_unit<S: Scalar>(name: &'static str, value: S) -> Result<S, MetricError> {
    if value >= S::zero() && value <= S::one() {
        Ok(value)
    } else {
        Err(MetricError::OutOfRange { name, value: value.to_f64_lossy() })
    }
}

/// `correct / total`; an empty set is an error rather than 0 or NaN.
pub fn accuracy<S: Scalar>(name: &'static str, correct: usize, total: usize) -> Result<S, MetricError> {
    if total == 0 {
        return Err(MetricError::Empty(name));
    }
    Ok(S::from_counts(correct, total))
}

/// Macro mean of positive and negative accuracy.
pub fn weighted_accuracy<S: Scalar>(pos_acc: S, neg_acc: S) -> S {
    (pos_acc + neg_acc) / S::two()
}

/// Mean of the three general-capability benchmarks.
pub fn retention_average<S: Scalar>(pope: S, mme: S, textvqa: S) -> S {
    (pope + mme + textvqa) / (S::two() + S::one())
}

/// `average / base_average`, or `None` for a zero base.
pub fn retention_ratio<S: Scalar>(average: S, base_average: S) -> Option<S> {
    (base_average != S::zero()).then(|| average / base_average)
}

/// True when `value` rounds to `published` at a half-unit tolerance.
pub fn within<S: Scalar>(value: S, published: S, tolerance: S) -> bool {
    value.abs_diff(published) <= tolerance
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::parse_decimal;
    use crate::Rational;
    use proptest::prelude::*;

    fn r(s: &str) -> Rational {
        parse_decimal(s).unwrap()
    }

    #[test]
    fn exact_weighted_rows() {
        assert_eq!(weighted_accuracy(r("0.851"), r("0.998")), r("0.9245"));
        assert!(within(weighted_accuracy(r("0.851"), r("0.998")), r("0.925"), r("0.0005")));
        assert_eq!(weighted_accuracy(0.0, 1.0), 0.5);
    }

    #[test]
    fn retention_and_ratio() {
        assert!(within(retention_average(r("0.878"), r("0.608"), r("0.649")), r("0.712"), r("0.0005")));
        assert_eq!(retention_ratio(0.5, 0.0), None);
        assert_eq!(retention_ratio(r("0.5"), r("0.25")), Some(Rational::from_integer(2)));
    }

    #[test]
    fn accuracy_rejects_empty() {
        assert_eq!(accuracy::<f64>("positives", 0, 0), Err(MetricError::Empty("positives")));
        assert_eq!(accuracy::<Rational>("positives", 9, 10).unwrap(), Rational::new(9, 10));
        assert!(check_unit("pope", 1.2).is_err());
    }

    proptest! {
        #[test]
        fn weighted_properties(a in 0.0f64..=1.0, b in 0.0f64..=1.0, d in 0.0f64..0.5) {
            let w = weighted_accuracy(a, b);
            prop_assert_eq!(w, weighted_accuracy(b, a));
            prop_assert!(w >= a.min(b) - 1e-15 && w <= a.max(b) + 1e-15);
            prop_assert!(weighted_accuracy((a + d).min(1.0), b) >= w);
            prop_assert!((weighted_accuracy(a, a) - a).abs() < 1e-15);
        }

        #[test]
        fn retention_properties(a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0) {
            let m = retention_average(a, b, c);
            prop_assert!((m - retention_average(c, a, b)).abs() < 1e-15);
            prop_assert!((m - retention_average(b, c, a)).abs() < 1e-15);
            prop_assert!(m >= a.min(b).min(c) - 1e-15 && m <= a.max(b).max(c) + 1e-15);
        }

        #[test]
        fn exact_retention_of_equal_inputs(n in 0i64..=1000) {
            let x = Rational::new(n, 1000);
            prop_assert_eq!(retention_average(x, x, x), x);
            prop_assert_eq!(weighted_accuracy(x, x), x);
        }
    }
}
