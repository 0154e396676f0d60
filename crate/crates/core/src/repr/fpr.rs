//! Closed-form false-positive rates.

/// FPR of storing each entry as an `(epsilon + log2 n)`-bit value:
/// `1 - (1 - 1/(n 2^epsilon))^n`.
pub fn fpr_naive(n: u64, epsilon: u32) -> f64 {
    let p = 1.0 / (n as f64 * (epsilon as f64).exp2());
    -(n as f64 * (-p).ln_1p()).exp_m1()
}

/// Exact Bloom filter FPR `(1 - (1 - 1/N)^(n l))^l` for `n` items, `bits`
/// bits and `l` hash functions.
pub fn fpr_bloom(n: u64, bits: u64, l: u32) -> f64 {
    let fill = -((n as f64 * l as f64) * (-1.0 / bits as f64).ln_1p()).exp_m1();
    fill.powi(l as i32)
}

/// Cuckoo table FPR: four probes against `(epsilon+2)`-bit fingerprints at
/// the given load factor.
pub fn fpr_cuckoo(epsilon: u32, load: f64) -> f64 {
    1.0 - (1.0 - load * (-(epsilon as f64 + 2.0)).exp2()).powi(4)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn degenerate_cases() {
        assert_eq!(fpr_naive(1, 0), 1.0);
        assert_eq!(fpr_bloom(1, 1, 1), 1.0);
    }

    #[test]
    fn naive_approaches_two_to_minus_epsilon() {
        assert!(rel(fpr_naive(1 << 26, 10), 2f64.powi(-10)) < 0.01);
    }

    #[test]
    fn bloom_optimum_is_about_two_to_minus_epsilon() {
        let n = 100_000u64;
        let bits = (n as f64 * 10.0 / 0.694).round() as u64;
        let f = fpr_bloom(n, bits, 10);
        assert!(rel(f, 2f64.powi(-10)) < 0.02, "{f}");
    }

    // Reference values evaluated at 50 significant digits with mpmath.
    #[test]
    fn matches_high_precision_reference() {
        let cases_naive = [
            (1_000_000u64, 14u32, 0.000061033293644608334849),
            (1 << 26, 10, 0.00097608581803143625714),
            (3, 2, 0.22974537037037037037),
        ];
        for (n, e, want) in cases_naive {
            assert!(rel(fpr_naive(n, e), want) < 1e-9, "naive {n} {e}");
        }
        let cases_bloom = [
            (1000u64, 14_400u64, 10u32, 0.00098953495621289909773),
            (65_536, 943_718, 10, 0.00098930352917288046426),
            (12_345, 100_000, 7, 0.021707416500340203616),
            (5, 3, 2, 0.96561766882815649031),
        ];
        for (n, bits, l, want) in cases_bloom {
            assert!(rel(fpr_bloom(n, bits, l), want) < 1e-9, "bloom {n} {bits} {l}");
        }
    }

    #[test]
    fn cuckoo_fpr_near_target() {
        let f = fpr_cuckoo(10, 0.971);
        assert!(rel(f, 0.971 * 2f64.powi(-10)) < 0.01);
    }
}
