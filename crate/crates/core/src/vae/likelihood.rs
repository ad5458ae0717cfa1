use alloc::vec::Vec;

use crate::{Error, Result};

/// Clamp applied to decoder outputs before any log is taken.
pub const LAMBDA_MIN: f64 = 1e-6;
/// Clamp applied to encoder standard deviations.
pub const SIGMA_MIN: f64 = 1e-6;

const SERIES_SWITCH: f64 = 1e-3;

fn clamp_lambda(l: f64) -> f64 {
    l.clamp(LAMBDA_MIN, 1.0 - LAMBDA_MIN)
}

/// Log normalizer `log C(λ)` of the Continuous Bernoulli, with
/// `C(λ) = 2·atanh(1−2λ)/(1−2λ)` and `C(½) = 2`.
pub fn cb_log_normalizer(lambda: f64) -> f64 {
    let t = 1.0 - 2.0 * clamp_lambda(lambda);
    if t.abs() < SERIES_SWITCH {
        let t2 = t * t;
        core::f64::consts::LN_2 + t2 / 3.0 + 13.0 * t2 * t2 / 90.0
    } else {
        libm::log(2.0 * libm::atanh(t) / t)
    }
}

/// `d log C / dλ`.
fn cb_log_normalizer_deriv(lambda: f64) -> f64 {
    let t = 1.0 - 2.0 * lambda;
    let dt = if t.abs() < SERIES_SWITCH {
        2.0 * t / 3.0 + 52.0 * t * t * t / 90.0
    } else {
        1.0 / ((1.0 - t * t) * libm::atanh(t)) - 1.0 / t
    };
    -2.0 * dt
}

fn check_pixels(x: &[f64], lambda: &[f64]) -> Result<()> {
    if x.len() != lambda.len() {
        return Err(Error::ShapeMismatch {
            context: "cb_log_likelihood",
            expected: x.len(),
            actual: lambda.len(),
        });
    }
    for (index, &value) in x.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange { index, value });
        }
    }
    Ok(())
}

/// Continuous Bernoulli log-density of `x` under parameters `lambda`,
/// summed over pixels.
pub fn cb_log_likelihood(x: &[f64], lambda: &[f64]) -> Result<f64> {
    check_pixels(x, lambda)?;
    Ok(x.iter()
        .zip(lambda)
        .map(|(&xi, &li)| {
            let l = clamp_lambda(li);
            cb_log_normalizer(l) + xi * libm::log(l) + (1.0 - xi) * libm::log1p(-l)
        })
        .sum())
}

/// Gradient of [`cb_log_likelihood`] with respect to `lambda`, taken at the
/// clamped values (the clamp itself is handled by the caller).
pub(crate) fn cb_log_likelihood_grad(x: &[f64], lambda: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(lambda)
        .map(|(&xi, &li)| {
            let l = clamp_lambda(li);
            cb_log_normalizer_deriv(l) + xi / l - (1.0 - xi) / (1.0 - l)
        })
        .collect()
}

/// `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn kl_to_std_normal(mu: &[f64], sigma: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| m * m + s * s - 1.0 - 2.0 * libm::log(s))
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn cb_density(x: f64, l: f64) -> f64 {
        libm::exp(cb_log_likelihood(&[x], &[l]).unwrap())
    }

    #[test]
    fn half_is_uniform() {
        for x in [0.0, 0.3, 1.0] {
            assert!(cb_log_likelihood(&[x], &[0.5]).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn worked_value_at_point_nine() {
        // log(2 atanh(0.8)/0.8) + log 0.9
        let v = cb_log_likelihood(&[1.0], &[0.9]).unwrap();
        assert!((v - 0.904_978_043_833).abs() < 1e-5, "{v}");
    }

    #[test]
    fn density_integrates_to_one() {
        let n = 20_000;
        let h = 1.0 / n as f64;
        for l in [0.01, 0.3, 0.5, 0.7, 0.99] {
            let mut s = cb_density(0.0, l) + cb_density(1.0, l);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * cb_density(i as f64 * h, l);
            }
            let integral = s * h / 3.0;
            assert!((integral - 1.0).abs() < 1e-3, "λ={l}: {integral}");
        }
    }

    #[test]
    fn continuous_across_series_switch() {
        let a = cb_log_normalizer(0.5 - 1e-4);
        let b = cb_log_normalizer(0.5 + 1e-4);
        assert!((a - b).abs() < 1e-6);
        for t in [SERIES_SWITCH * (1.0 - 1e-9), SERIES_SWITCH * (1.0 + 1e-9)] {
            let l = (1.0 - t) / 2.0;
            let direct = libm::log(2.0 * libm::atanh(t) / t);
            assert!((cb_log_normalizer(l) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn normalizer_derivative_matches_finite_differences() {
        for l in [0.02, 0.2, 0.4999, 0.5, 0.5004, 0.7, 0.97] {
            let h = 1e-6;
            let fd = (cb_log_normalizer(l + h) - cb_log_normalizer(l - h)) / (2.0 * h);
            let an = cb_log_normalizer_deriv(l);
            assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "λ={l}: {fd} vs {an}");
        }
    }

    #[test]
    fn out_of_range_pixels_rejected() {
        assert!(matches!(
            cb_log_likelihood(&[0.2, 1.5], &[0.5, 0.5]),
            Err(Error::OutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_to_std_normal(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
        assert!((kl_to_std_normal(&[1.0, 0.0], &[1.0, 1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut rng = SeededRng::new(11);
        let mu = [0.4, -1.1, 0.2];
        let sigma = [0.7, 1.3, 0.5];
        let n = 100_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            // log q(z) − log p(z) at z ~ q
            let mut v = 0.0;
            for j in 0..3 {
                let e = rng.normal();
                let z = mu[j] + sigma[j] * e;
                v += -libm::log(sigma[j]) - 0.5 * e * e + 0.5 * z * z;
            }
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let se = libm::sqrt((sum_sq / n as f64 - mean * mean) / n as f64);
        let exact = kl_to_std_normal(&mu, &sigma);
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    proptest::proptest! {
        #[test]
        fn kl_nonnegative(mu in proptest::collection::vec(-3.0f64..3.0, 1..6), s in 0.05f64..3.0) {
            let sigma = alloc::vec![s; mu.len()];
            proptest::prop_assert!(kl_to_std_normal(&mu, &sigma) >= 0.0);
        }
    }
}
