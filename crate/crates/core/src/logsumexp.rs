//! Max-shifted log-sum-exp accumulation.

/// Streaming `log(sum exp(v))` that never exponentiates a positive number.
///
/// Values are folded in the order they are pushed, so the result is a
/// deterministic function of the input sequence.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSumExp {
    pub fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    #[inline]
    pub fn push(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.sum += (v - self.max).exp();
        }
    }

    /// `-inf` for an empty (or all `-inf`) sequence.
    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Two-pass log-sum-exp over a slice: shift by the maximum, then sum.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn huge_exponents_do_not_overflow() {
        assert!((log_sum_exp(&[1e6, 1e6]) - (1e6 + 2f64.ln())).abs() < 1e-9);
        assert!((log_sum_exp(&[-1e6, -1e6]) - (-1e6 + 2f64.ln())).abs() < 1e-9);
        let mut acc = LogSumExp::new();
        acc.push(-1e6);
        acc.push(1e6);
        assert_eq!(acc.value(), 1e6);
    }

    #[test]
    fn single_term_is_exact() {
        let mut acc = LogSumExp::new();
        acc.push(-3.25);
        assert_eq!(acc.value(), -3.25);
        assert_eq!(log_sum_exp(&[-3.25]), -3.25);
        assert_eq!(LogSumExp::new().value(), f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn streaming_matches_two_pass(v in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            let mut acc = LogSumExp::new();
            for &x in &v {
                acc.push(x);
            }
            let naive = v.iter().map(|x| x.exp()).sum::<f64>().ln();
            prop_assert!((acc.value() - log_sum_exp(&v)).abs() < 1e-12 * (1.0 + naive.abs()));
            prop_assert!((acc.value() - naive).abs() < 1e-10 * (1.0 + naive.abs()));
        }
    }
}
