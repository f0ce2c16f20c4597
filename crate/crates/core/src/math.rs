//! Log-domain helpers shared by the lattice recursions.

pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Log-softmax of one row, max-subtracted.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let norm = log_sum_exp(row);
    row.iter().map(|v| v - norm).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).into_iter().map(f64::exp).collect()
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_matches_naive_in_range() {
        let (a, b) = (0.5f64, 2.0f64);
        let naive = (a.exp() + b.exp()).ln();
        assert!((log_add(a, b) - naive).abs() < 1e-14);
    }

    #[test]
    fn log_add_large_arguments() {
        // 1232 + ln(e^2 + 1)
        let expected = 1232.0 + (2f64.exp() + 1.0).ln();
        assert!((log_add(1234.0, 1232.0) - expected).abs() < 1e-9);
    }

    #[test]
    fn log_zero_is_identity() {
        assert_eq!(log_add(LOG_ZERO, 3.0), 3.0);
        assert_eq!(log_add(LOG_ZERO, LOG_ZERO), LOG_ZERO);
        assert_eq!(log_sum_exp(&[LOG_ZERO, LOG_ZERO]), LOG_ZERO);
    }

    #[test]
    fn softmax_rows_sum_to_one_for_extreme_logits() {
        let p = softmax(&[50.0, -50.0, 0.0, 49.0]);
        let s: f64 = p.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }
}
