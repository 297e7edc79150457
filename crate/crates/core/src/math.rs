//! Small numeric helpers shared across the crate.

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe softplus `ln(1 + e^x)`.
///
/// Beyond |x| ~ 30 the correction term is below f64 resolution, so the raw
/// argument (or `e^x`) is returned directly.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]: `ln(e^y - 1)` for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inv requires a positive argument");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Deterministic pairwise summation.
///
/// Fixed reduction order regardless of thread count, and error growth
/// O(eps * log n) instead of the O(eps * n) of naive accumulation, which the
/// quadrature exactness tolerances rely on.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 32;
    if xs.len() <= BASE {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        s
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_at_zero_is_ln_two() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softplus_saturates_to_identity() {
        assert!((softplus(50.0) - 50.0).abs() < 1e-9);
        assert!(softplus(-50.0) > 0.0);
        assert!(softplus(-50.0) < 1e-20);
    }

    #[test]
    fn softplus_inv_round_trips() {
        for &x in &[-20.0, -3.0, -0.5, 0.0, 0.7, 4.0, 35.0] {
            let y = softplus(x);
            assert!((softplus_inv(y) - x).abs() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pairwise_sum_matches_exact_on_constant_input() {
        let xs = vec![0.1; 100_000];
        let s = pairwise_sum(&xs);
        assert!((s - 10_000.0).abs() / 10_000.0 < 1e-13);
    }
}
