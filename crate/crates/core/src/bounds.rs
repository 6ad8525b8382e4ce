//! Scalar generalisation bounds.
//!
//! Everything here is a pure function of its arguments and uses natural
//! logarithms throughout.
//!
//! * `binary_kl` / `kl_inverse`: the Bernoulli KL divergence and its upper
//!   inverse `sup { p >= q : kl(q || p) <= c }`, found by bisection.
//! * PAC-Bayes-kl: with probability `1 - delta` over an i.i.d. sample of size
//!   `n`, `kl(emp || L(Q)) <= (KL(Q || Q0) + ln(2 sqrt(n) / delta)) / n`, so the
//!   risk bound is the kl-inverse of the empirical risk at that budget.
//! * PAC-Bayes-quadratic: relaxing the kl bound with
//!   `kl(q || p) >= (p - q)^2 / (2p)` and solving the quadratic in `sqrt(p)`
//!   gives `(sqrt(emp + B) + sqrt(B))^2` with `B = budget / 2`. It is never
//!   tighter than the kl form.
//! * Monte Carlo inflation: the empirical risk of a randomised predictor is
//!   itself estimated from `m` weight draws. Each draw's 0-1 average lies in
//!   `[0, 1]`, so the kl Chernoff bound gives, with probability `1 - delta'`,
//!   `kl(mc_avg || emp) <= ln(2 / delta') / m`.
//! * Chernoff test-set bound: Hoeffding's inequality for `n` i.i.d. test
//!   points, `P(L - err >= eps) <= exp(-2 n eps^2)`; setting the right side to
//!   `delta` gives `err + sqrt(ln(1 / delta) / (2n))`.
//! * Binomial tail inversion: the number of test errors is `Binomial(n, L)`,
//!   so the largest `p` with `P(K <= k | p) >= delta` upper-bounds `L` with
//!   probability `1 - delta`. This is exact and never looser than Chernoff.
//!
//! Bounds above 1 are clamped to 1 and flagged vacuous instead of erroring.

use serde::{Deserialize, Serialize};

/// Cap on bisection steps. Bisection stops earlier once the bracket collapses
/// to adjacent floating-point values, which happens well within this budget.
pub const MAX_BISECTION_ITERS: usize = 200;

/// Largest float strictly below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Confidence levels used for certification and test-set bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    /// PAC-Bayes-kl bound.
    pub delta: f64,
    /// Monte Carlo sampling bound.
    pub delta_prime: f64,
    /// Chernoff and binomial test-set bounds.
    pub delta_test: f64,
}

impl Default for ConfidenceParams {
    fn default() -> Self {
        Self {
            delta: 0.025,
            delta_prime: 0.01,
            delta_test: 0.035,
        }
    }
}

impl ConfidenceParams {
    pub fn validate(&self) -> crate::Result<()> {
        for (name, v) in [
            ("delta", self.delta),
            ("delta_prime", self.delta_prime),
            ("delta_test", self.delta_test),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(crate::Error::InvalidConfig(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundKind {
    PacBayesKl,
    PacBayesQuad,
    Chernoff,
    BinomialTail,
    McSampling,
}

/// An upper bound on a probability of error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub value: f64,
    pub kind: BoundKind,
    /// Set when the bound carries no information (value reached 1).
    pub vacuous: bool,
}

impl BoundValue {
    fn clamped(raw: f64, kind: BoundKind) -> Self {
        let value = raw.clamp(0.0, 1.0);
        Self {
            value,
            kind,
            vacuous: raw >= 1.0,
        }
    }
}

/// Bernoulli KL divergence `kl(q || p)` in nats, with `0 ln 0 = 0`.
///
/// Returns `+inf` when `p` is 0 or 1 and differs from `q`.
pub fn binary_kl(q: f64, p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&q), "q = {q} outside [0, 1]");
    assert!((0.0..=1.0).contains(&p), "p = {p} outside [0, 1]");
    if q == p {
        return 0.0;
    }
    if p == 0.0 || p == 1.0 {
        return f64::INFINITY;
    }
    let head = if q == 0.0 { 0.0 } else { q * (q / p).ln() };
    let tail = if q == 1.0 {
        0.0
    } else if q == 0.0 {
        -(-p).ln_1p()
    } else {
        (1.0 - q) * ((1.0 - q) / (1.0 - p)).ln()
    };
    (head + tail).max(0.0)
}

/// Largest `p` in `[q, 1]` with `binary_kl(q, p) <= c`.
///
/// Bisection on `[q, 1)`, where the divergence is strictly increasing in `p`.
/// Returns 1 when even the largest float below 1 stays within budget.
pub fn kl_inverse(q: f64, c: f64) -> f64 {
    assert!((0.0..=1.0).contains(&q), "q = {q} outside [0, 1]");
    assert!(c >= 0.0, "kl budget must be nonnegative, got {c}");
    if c == 0.0 || q == 1.0 {
        return q;
    }
    if binary_kl(q, BELOW_ONE) <= c {
        return 1.0;
    }
    let (mut lo, mut hi) = (q, 1.0_f64);
    for _ in 0..MAX_BISECTION_ITERS {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if binary_kl(q, mid) <= c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn log_confidence_term(n: usize, delta: f64) -> f64 {
    (2.0 * (n as f64).sqrt() / delta).ln()
}

/// PAC-Bayes-kl risk bound.
pub fn pac_bayes_kl_bound(emp_risk: f64, kl_div: f64, n: usize, delta: f64) -> BoundValue {
    assert!(n >= 1, "sample size must be positive");
    assert!(delta > 0.0 && delta < 1.0, "delta = {delta} outside (0, 1)");
    let budget = (kl_div + log_confidence_term(n, delta)) / n as f64;
    BoundValue::clamped(kl_inverse(emp_risk, budget), BoundKind::PacBayesKl)
}

/// The `B` term shared by the quadratic bound and the training objective.
pub fn quadratic_budget(kl_div: f64, n: usize, delta: f64) -> f64 {
    (kl_div + log_confidence_term(n, delta)) / (2.0 * n as f64)
}

/// PAC-Bayes-quadratic bound `(sqrt(emp + B) + sqrt(B))^2`.
pub fn pac_bayes_quadratic_bound(emp_risk: f64, kl_div: f64, n: usize, delta: f64) -> BoundValue {
    assert!(n >= 1, "sample size must be positive");
    assert!(delta > 0.0 && delta < 1.0, "delta = {delta} outside (0, 1)");
    let b = quadratic_budget(kl_div, n, delta);
    let root = (emp_risk + b).sqrt() + b.sqrt();
    BoundValue::clamped(root * root, BoundKind::PacBayesQuad)
}

/// Upper bound on the expected empirical risk of a randomised predictor from
/// its `m`-sample Monte Carlo average.
pub fn mc_sample_bound(mc_avg: f64, m: usize, delta_prime: f64) -> f64 {
    assert!(m >= 1, "number of Monte Carlo samples must be positive");
    assert!(
        delta_prime > 0.0 && delta_prime < 1.0,
        "delta' = {delta_prime} outside (0, 1)"
    );
    kl_inverse(mc_avg, (2.0 / delta_prime).ln() / m as f64)
}

/// Chernoff (Hoeffding) test-set bound.
pub fn chernoff_test_bound(test_err: f64, n_test: usize, delta: f64) -> BoundValue {
    assert!(n_test >= 1, "test set must be nonempty");
    assert!(delta > 0.0 && delta <= 1.0, "delta = {delta} outside (0, 1]");
    let slack = ((1.0 / delta).ln() / (2.0 * n_test as f64)).sqrt();
    BoundValue::clamped(test_err + slack, BoundKind::Chernoff)
}

/// `ln P(K <= k)` for `K ~ Binomial(m, p)`.
///
/// Terms are accumulated in log space with `ln C(m, i)` updated incrementally,
/// which stays finite for `m` in the millions.
pub fn binomial_log_cdf(k: usize, m: usize, p: f64) -> f64 {
    assert!(k <= m, "k = {k} exceeds m = {m}");
    if k == m || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return f64::NEG_INFINITY;
    }
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let mut ln_choose = 0.0_f64;
    let mut terms = Vec::with_capacity(k + 1);
    for i in 0..=k {
        if i > 0 {
            ln_choose += ((m - i + 1) as f64).ln() - (i as f64).ln();
        }
        terms.push(ln_choose + i as f64 * ln_p + (m - i) as f64 * ln_q);
    }
    let peak = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return peak;
    }
    let sum: f64 = terms.iter().map(|t| (t - peak).exp()).sum();
    (peak + sum.ln()).min(0.0)
}

/// Binomial tail inversion test-set bound for `k` errors out of `m`.
pub fn binomial_test_bound(k: usize, m: usize, delta: f64) -> BoundValue {
    assert!(m >= 1, "test set must be nonempty");
    assert!(k <= m, "k = {k} exceeds m = {m}");
    assert!(delta > 0.0 && delta < 1.0, "delta = {delta} outside (0, 1)");
    if k == m {
        return BoundValue::clamped(1.0, BoundKind::BinomialTail);
    }
    let ln_delta = delta.ln();
    let mut lo = k as f64 / m as f64;
    if binomial_log_cdf(k, m, lo) < ln_delta {
        // Even the empirical rate leaves less than delta in the lower tail.
        return BoundValue::clamped(lo, BoundKind::BinomialTail);
    }
    let mut hi = 1.0_f64;
    for _ in 0..MAX_BISECTION_ITERS {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if binomial_log_cdf(k, m, mid) >= ln_delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    BoundValue::clamped(lo, BoundKind::BinomialTail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn binary_kl_basics() {
        assert_eq!(binary_kl(0.3, 0.3), 0.0);
        let p: f64 = 0.37;
        assert_abs_diff_eq!(binary_kl(0.0, p), -(1.0 - p).ln(), epsilon = 1e-15);
        // 50-digit reference evaluation of the definition.
        assert_abs_diff_eq!(binary_kl(0.1, 0.5), 0.368_064_207_168_497_07, epsilon = 1e-15);
        assert_eq!(binary_kl(0.2, 0.0), f64::INFINITY);
        assert_eq!(binary_kl(0.2, 1.0), f64::INFINITY);
        assert_eq!(binary_kl(1.0, 1.0), 0.0);
        assert_abs_diff_eq!(binary_kl(1.0, 0.5), 2.0_f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn kl_inverse_closed_forms() {
        assert_eq!(kl_inverse(0.42, 0.0), 0.42);
        for c in [1e-6, 0.01, 0.3, 2.0, 10.0] {
            assert_abs_diff_eq!(kl_inverse(0.0, c), -(-c as f64).exp_m1(), epsilon = 1e-12);
        }
        // kl(0.9 || p) stays below 50 for every p < 1 representable in f64.
        assert_eq!(kl_inverse(0.9, 50.0), 1.0);
        assert_eq!(kl_inverse(1.0, 0.7), 1.0);
    }

    #[test]
    fn kl_inverse_reference_value() {
        // 50-digit bisection on the definition.
        assert_abs_diff_eq!(kl_inverse(0.1, 0.05), 0.220_078_601_106_924_6, epsilon = 1e-12);
    }

    #[test]
    fn pac_bayes_bounds_reference_values() {
        let kl = pac_bayes_kl_bound(0.05, 10.0, 1000, 0.025);
        assert_abs_diff_eq!(kl.value, 0.102_010_698_847_435_34, epsilon = 1e-12);
        assert!(!kl.vacuous);
        let quad = pac_bayes_quadratic_bound(0.1, 5.0, 2000, 0.025);
        assert_abs_diff_eq!(quad.value, 0.143_492_352_968_334_4, epsilon = 1e-14);
        assert!(pac_bayes_kl_bound(0.0, 0.0, 100_000_000, 0.025).value < 1e-6);
        assert!(pac_bayes_quadratic_bound(0.0, 0.0, 100_000_000, 0.025).value < 1e-6);
    }

    #[test]
    fn quadratic_bound_clamps() {
        let b = pac_bayes_quadratic_bound(0.9, 1e4, 10, 0.025);
        assert_eq!(b.value, 1.0);
        assert!(b.vacuous);
    }

    #[test]
    fn mc_bound_values() {
        let closed = -(-(200.0_f64).ln() / 150_000.0).exp_m1();
        assert_abs_diff_eq!(mc_sample_bound(0.0, 150_000, 0.01), closed, epsilon = 1e-14);
        assert_abs_diff_eq!(mc_sample_bound(0.08, 10_000, 0.01), 0.089_127_995_342_821_94, epsilon = 1e-12);
        assert_abs_diff_eq!(mc_sample_bound(0.08, usize::MAX, 0.01), 0.08, epsilon = 1e-9);
    }

    #[test]
    fn chernoff_values() {
        assert_eq!(chernoff_test_bound(0.1, 100, 1.0).value, 0.1);
        assert_abs_diff_eq!(
            chernoff_test_bound(0.1, 100, 0.035).value,
            0.229_468_282_167_732_56,
            epsilon = 1e-15
        );
        let slack = chernoff_test_bound(0.0, 9, 0.035).value;
        assert_abs_diff_eq!(slack, 0.431_560_940_559_108_53, epsilon = 1e-15);
        assert!(slack > 0.4);
        let v = chernoff_test_bound(0.8, 9, 0.035);
        assert!(v.vacuous && v.value == 1.0);
    }

    #[test]
    fn binomial_values() {
        let full = binomial_test_bound(7, 7, 0.035);
        assert_eq!(full.value, 1.0);
        assert!(full.vacuous);
        assert_abs_diff_eq!(
            binomial_test_bound(0, 10, 0.05).value,
            1.0 - 0.05_f64.powf(0.1),
            epsilon = 1e-12
        );
        // Exact bisection on the rational CDF at 50 digits.
        assert_abs_diff_eq!(
            binomial_test_bound(3, 25, 0.035).value,
            0.297_745_691_763_236,
            epsilon = 1e-12
        );
    }

    #[test]
    fn binomial_log_cdf_edges() {
        assert_eq!(binomial_log_cdf(3, 3, 0.4), 0.0);
        assert_eq!(binomial_log_cdf(0, 3, 0.0), 0.0);
        assert_eq!(binomial_log_cdf(2, 3, 1.0), f64::NEG_INFINITY);
        assert_abs_diff_eq!(binomial_log_cdf(0, 4, 0.5), 4.0 * 0.5_f64.ln(), epsilon = 1e-14);
        // Large m stays finite.
        let v = binomial_log_cdf(4_000, 1_000_000, 0.005);
        assert!(v.is_finite() && v < 0.0);
    }

    #[test]
    fn confidence_defaults() {
        let cp = ConfidenceParams::default();
        assert_eq!((cp.delta, cp.delta_prime, cp.delta_test), (0.025, 0.01, 0.035));
        assert!(cp.validate().is_ok());
        assert!(ConfidenceParams { delta: 1.0, ..cp }.validate().is_err());
    }
}
