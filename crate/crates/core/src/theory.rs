//! Population quantities of a factor with known linear-process
//! coefficients, and the CLT standardization of a spiked eigenvalue.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// γ(τ) = Σ_l φ_l φ_{l+|τ|}.
pub fn pop_gamma(phi: &[f64], tau: i64) -> f64 {
    let lag = tau.unsigned_abs() as usize;
    if lag >= phi.len() {
        return 0.0;
    }
    phi.iter().zip(&phi[lag..]).map(|(a, b)| a * b).sum()
}

/// μ = σ⁴γ², the spiked population eigenvalue.
pub fn pop_mu(sigma2: f64, gamma: f64) -> f64 {
    sigma2 * sigma2 * gamma * gamma
}

/// Variance of the normalized lag-τ sample autocovariance of the factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltVariance {
    /// Σ_{|k|<T−τ} (1 − |k|/(T−τ)) u_k.
    pub v2_t: f64,
    /// T → ∞ limit at fixed τ.
    pub v2_limit: f64,
}

fn coef(phi: &[f64], idx: i64) -> f64 {
    if idx < 0 {
        0.0
    } else {
        phi.get(idx as usize).copied().unwrap_or(0.0)
    }
}

/// Fourth-cumulant weight Σ_l φ_l φ_{l+τ} φ_{l+k} φ_{l+k+τ}.
fn fourth_moment_term(phi: &[f64], tau: i64, k: i64) -> f64 {
    (0..phi.len() as i64)
        .map(|l| coef(phi, l) * coef(phi, l + tau) * coef(phi, l + k) * coef(phi, l + k + tau))
        .sum()
}

/// u_k = γ(k)² + γ(k+τ)γ(k−τ) + (E z⁴ − 3)·Σ_l φ_l φ_{l+τ} φ_{l+k} φ_{l+k+τ}.
pub fn u_k(phi: &[f64], tau: usize, k: i64, kurtosis: f64) -> f64 {
    let t = tau as i64;
    let g = |lag: i64| pop_gamma(phi, lag);
    let base = g(k).powi(2) + g(k + t) * g(k - t);
    if kurtosis == 3.0 {
        base
    } else {
        base + (kurtosis - 3.0) * fourth_moment_term(phi, t, k)
    }
}

pub fn clt_variance(phi: &[f64], tau: usize, t_len: usize, kurtosis: f64) -> Result<CltVariance> {
    if tau < 1 || t_len <= tau {
        return domain(format!("need 1 <= tau < T, got tau = {tau}, T = {t_len}"));
    }
    if !(kurtosis >= 1.0) {
        return domain(format!("kurtosis must be >= 1, got {kurtosis}"));
    }
    if phi.is_empty() {
        return domain("empty coefficient sequence");
    }
    let n = (t_len - tau) as i64;
    // u_k vanishes once |k| exceeds the support of φ plus τ
    let support = (phi.len() + tau) as i64;

    let window = n - 1;
    let mut v2_t = u_k(phi, tau, 0, kurtosis);
    for k in 1..=window.min(support) {
        let w = 1.0 - k as f64 / n as f64;
        v2_t += 2.0 * w * u_k(phi, tau, k, kurtosis);
    }

    let g = |lag: i64| pop_gamma(phi, lag);
    let t = tau as i64;
    let mut second = g(0).powi(2) + g(t) * g(-t);
    for k in 1..=support {
        second += 2.0 * (g(k).powi(2) + g(k + t) * g(k - t));
    }
    let v2_limit = (kurtosis - 3.0) * g(t).powi(2) + second;
    Ok(CltVariance { v2_t, v2_limit })
}

/// μ·[1 − ε, 1 + ε], the interval known to contain the exact centering θ.
pub fn theta_bracket(sigma2: f64, gamma: f64, eps: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < 1.0) {
        return domain(format!("bracket half-width must lie in (0, 1), got {eps}"));
    }
    let mu = pop_mu(sigma2, gamma);
    Ok((mu * (1.0 - eps), mu * (1.0 + eps)))
}

/// z = √T · γ/(2v) · (λ − θ)/θ.
pub fn clt_standardize(lambda: f64, theta: f64, gamma: f64, v: f64, t_len: usize) -> Result<f64> {
    if !(theta > 0.0) {
        return domain(format!("centering must be positive, got {theta}"));
    }
    if !(v > 0.0) {
        return domain(format!("scale must be positive, got {v}"));
    }
    Ok((t_len as f64).sqrt() * gamma / (2.0 * v) * (lambda - theta) / theta)
}

/// Bundle of population quantities for one factor at one lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationQuantities {
    pub gamma_tau: f64,
    pub mu_tau: f64,
    pub v2_t: f64,
    pub v2_limit: f64,
    pub kurtosis: f64,
}

impl PopulationQuantities {
    pub fn compute(phi: &[f64], sigma2: f64, tau: usize, t_len: usize, kurtosis: f64) -> Result<Self> {
        let gamma_tau = pop_gamma(phi, tau as i64);
        let v = clt_variance(phi, tau, t_len, kurtosis)?;
        Ok(Self { gamma_tau, mu_tau: pop_mu(sigma2, gamma_tau), v2_t: v.v2_t, v2_limit: v.v2_limit, kurtosis })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::LinearProcessSpec;

    fn ar1(phi: f64) -> Vec<f64> {
        LinearProcessSpec::ar1(phi).ma_coefficients().unwrap()
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(pop_gamma(&[1.0], 1), 0.0);
        let a = ar1(0.5);
        assert!((pop_gamma(&a, 1) - 0.5).abs() < 1e-12);
        assert!((pop_gamma(&a, 3) - 0.125).abs() < 1e-12);
        assert!((pop_gamma(&a, -3) - 0.125).abs() < 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((pop_gamma(&[s, s], 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gamma_zero_is_one_for_normalized() {
        for p in [-0.9, -0.3, 0.0, 0.4, 0.95] {
            assert!((pop_gamma(&ar1(p), 0) - 1.0).abs() < 1e-10);
        }
        let ma = LinearProcessSpec::ma(vec![0.3, -1.0, 2.0]).ma_coefficients().unwrap();
        assert!((pop_gamma(&ma, 0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn mu_examples() {
        assert_eq!(pop_mu(100.0, 0.5), 2500.0);
        assert_eq!(pop_mu(100.0, 0.0), 0.0);
        assert_eq!(pop_mu(1.0, 1.0), 1.0);
    }

    #[test]
    fn white_noise_variance_is_one() {
        for tau in 1..4 {
            for t in [10, 100, 1000] {
                let v = clt_variance(&[1.0], tau, t, 3.0).unwrap();
                assert!((v.v2_t - 1.0).abs() < 1e-15 && (v.v2_limit - 1.0).abs() < 1e-15);
            }
        }
        let v = clt_variance(&[1.0], 1, 500, 1.0).unwrap();
        assert!((v.v2_limit - 1.0).abs() < 1e-15 && (v.v2_t - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ar1_limit_against_truncated_series() {
        // oracle: closed-form γ(k) = 0.5^|k| summed over |k| <= 200
        let g = |k: i64| 0.5f64.powi(k.unsigned_abs() as i32);
        let oracle: f64 = (-200i64..=200).map(|k| g(k) * g(k) + g(k + 1) * g(k - 1)).sum();
        assert!((oracle - 31.0 / 12.0).abs() < 1e-12);
        let v = clt_variance(&ar1(0.5), 1, 100_000, 3.0).unwrap();
        assert!((v.v2_limit - oracle).abs() < 1e-6, "{}", v.v2_limit);
    }

    #[test]
    fn gaussian_kurtosis_drops_fourth_moment_term() {
        let phi = ar1(0.7);
        let a = clt_variance(&phi, 2, 300, 3.0).unwrap();
        let mut manual = u_k(&phi, 2, 0, 3.0);
        for k in 1..298i64 {
            let g = |l: i64| pop_gamma(&phi, l);
            manual += 2.0 * (1.0 - k as f64 / 298.0) * (g(k).powi(2) + g(k + 2) * g(k - 2));
        }
        assert!((a.v2_t - manual).abs() < 1e-12);
    }

    #[test]
    fn fourth_moment_sums_to_gamma_squared() {
        let phi = LinearProcessSpec::ma(vec![1.0, 0.6, -0.2]).ma_coefficients().unwrap();
        let total: f64 = (-10i64..=10).map(|k| fourth_moment_term(&phi, 1, k)).sum();
        assert!((total - pop_gamma(&phi, 1).powi(2)).abs() < 1e-14);
        let t_heavy = clt_variance(&phi, 1, 10_000, 9.0).unwrap();
        let gauss = clt_variance(&phi, 1, 10_000, 3.0).unwrap();
        assert!((t_heavy.v2_limit - gauss.v2_limit - 6.0 * pop_gamma(&phi, 1).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn finite_t_variance_approaches_limit_monotonically() {
        for i in 1..=9 {
            let phi = ar1(i as f64 / 10.0);
            let ts = [50usize, 100, 200, 500, 1000, 2000, 5000];
            let gaps: Vec<f64> = ts
                .iter()
                .map(|&t| {
                    let v = clt_variance(&phi, 1, t, 3.0).unwrap();
                    (v.v2_limit - v.v2_t).abs()
                })
                .collect();
            for w in gaps.windows(2) {
                assert!(w[1] - w[0] < 1e-12, "phi {}: {:?}", i, gaps);
            }
        }
    }

    #[test]
    fn bracket_and_standardize() {
        assert_eq!(theta_bracket(100.0, 0.5, 0.1).unwrap(), (2250.0, 2750.0));
        let (lo, hi) = theta_bracket(100.0, 0.5, 1e-12).unwrap();
        assert!((hi - lo) < 1e-8);
        assert!(theta_bracket(1.0, 1.0, 1.0).is_err());

        assert_eq!(clt_standardize(5.0, 5.0, 0.5, 1.2, 400).unwrap(), 0.0);
        let (theta, gamma, v, t) = (7.0, 0.4, 1.3, 900usize);
        let lambda = theta * (1.0 + 2.0 * v / (gamma * (t as f64).sqrt()));
        assert!((clt_standardize(lambda, theta, gamma, v, t).unwrap() - 1.0).abs() < 1e-12);
        assert!(clt_standardize(1.0, 0.0, 0.5, 1.0, 10).is_err());
    }
}
