use super::matrix::{dot, norm};

/// Norm below which [`squash`] returns the zero vector.
pub const SQUASH_EPS: f64 = 1e-12;

/// Capsule squash: `(‖z‖²/(1+‖z‖²)) · z/‖z‖`.
///
/// The output keeps the direction of `z` and has norm strictly below one.
/// Inputs with `‖z‖ < SQUASH_EPS` map to the zero vector.
pub fn squash(z: &[f64]) -> Vec<f64> {
    let r = norm(z);
    if r < SQUASH_EPS {
        return vec![0.0; z.len()];
    }
    let scale = r / (1.0 + r * r);
    z.iter().map(|x| x * scale).collect()
}

/// Vector-Jacobian product of [`squash`] at `z` with upstream gradient `grad_out`.
pub fn squash_backward(z: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let r = norm(z);
    if r < SQUASH_EPS {
        return vec![0.0; z.len()];
    }
    // squash(z) = s(r)·z with s(r) = r/(1+r²)
    let r2 = r * r;
    let s = r / (1.0 + r2);
    let ds = (1.0 - r2) / ((1.0 + r2) * (1.0 + r2));
    let coef = ds / r * dot(z, grad_out);
    z.iter()
        .zip(grad_out)
        .map(|(zi, gi)| s * gi + coef * zi)
        .collect()
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Gradient w.r.t. the logits given the softmax output `p` and the upstream
/// gradient w.r.t. `p`.
pub fn softmax_backward(p: &[f64], grad_p: &[f64]) -> Vec<f64> {
    let inner = dot(p, grad_p);
    p.iter().zip(grad_p).map(|(pi, gi)| pi * (gi - inner)).collect()
}

/// `ln Σ exp(x)` computed stably.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn squash_zero_branch() {
        assert_eq!(squash(&[0.0, 0.0, 0.0]), vec![0.0; 3]);
        assert_eq!(squash(&[1e-13, 0.0]), vec![0.0; 2]);
    }

    #[test]
    fn squash_unit_norm_halves() {
        let z = [0.6, 0.8];
        let v = squash(&z);
        assert!((v[0] - 0.3).abs() < 1e-15);
        assert!((v[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn squash_norm_three_gives_nine_tenths() {
        let z = [3.0, 0.0, 0.0];
        let v = squash(&z);
        assert!((norm(&v) - 0.9).abs() < 1e-15);
        assert!(v[1] == 0.0 && v[2] == 0.0 && v[0] > 0.0);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[2.0; 4]);
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));

        let p = softmax(&[0.0, 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-15);
        assert!((p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!(p[2] >= 0.0 && p[2] < 1e-300);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_shift_invariant(
            logits in prop::collection::vec(-30.0f64..30.0, 1..12),
            shift in -50i32..50,
        ) {
            let p = softmax(&logits);
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            let shifted: Vec<f64> = logits.iter().map(|x| x + shift as f64).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn squash_norm_below_one_and_monotone(
            dir in prop::collection::vec(-1.0f64..1.0, 2..8),
            r1 in 1e-6f64..50.0,
            r2 in 1e-6f64..50.0,
        ) {
            let n = norm(&dir);
            prop_assume!(n > 1e-3);
            let at = |r: f64| {
                let z: Vec<f64> = dir.iter().map(|x| x / n * r).collect();
                norm(&squash(&z))
            };
            let (a, b) = (at(r1), at(r2));
            prop_assert!(a < 1.0 && b < 1.0);
            if r1 < r2 {
                prop_assert!(a <= b);
            }
        }

        #[test]
        fn squash_backward_matches_finite_differences(
            z in prop::collection::vec(-3.0f64..3.0, 4),
            g in prop::collection::vec(-1.0f64..1.0, 4),
        ) {
            prop_assume!(norm(&z) > 1e-2);
            let analytic = squash_backward(&z, &g);
            let h = 1e-6;
            for k in 0..4 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[k] += h;
                zm[k] -= h;
                let fd = (dot(&squash(&zp), &g) - dot(&squash(&zm), &g)) / (2.0 * h);
                prop_assert!((fd - analytic[k]).abs() < 1e-7);
            }
        }
    }
}
