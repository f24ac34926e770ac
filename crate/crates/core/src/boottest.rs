//! AR-sieve bootstrap of the standardized factors and the feasible
//! two-sample autocovariance test.
//!
//! For each population the unit-variance factors are fitted by an AR(p)
//! sieve; B bootstrap paths are regenerated by recursing the fit with
//! residuals resampled i.i.d. From those paths come
//!
//! * `θ*`: mean top eigenvalues of the noiseless reconstruction `L̃ f^b`,
//! * `v*`: spread of `Σ_t f^b_t f^b_{t+τ}` scaled by `(T − τ)^{-1/2}`,
//! * `γ*`: mean demeaned lag-τ autocovariance of `f^b`.
//!
//! Two populations are compared through
//! `Z̃ = (λ₁ − λ₂)·√(T₁T₂/(T₁+T₂))·γ*/(2v*θ*)` with T-weighted pooled
//! bootstrap quantities.
//!
//! Bootstrap streams are keyed by the content of the standardized factors,
//! so a population draws the same paths whichever side of a comparison it
//! sits on. This makes `Z̃(a, b) = −Z̃(b, a)` hold bit for bit.

use nalgebra::{DMatrix, DVector, Schur};
use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{domain, Error, Result, Warning};
use crate::factorest::{block_eigenvalues, CanonicalEstimate};
use crate::io::{factor_map, float_value, ToResultJson};
use crate::rng::{content_key, stream, sub_seed};

/// Minimum number of bootstrap replicates.
pub const MIN_BOOT: usize = 50;

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile, polished with one Newton step against
/// [`normal_cdf`].
pub fn normal_quantile(p: f64) -> f64 {
    let x = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    x - (normal_cdf(x) - p) / density
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderCriterion {
    Aic,
    Fixed(usize),
}

/// Default sieve order cap ⌊10·log₁₀ T⌋, reduced so that T ≥ 2·p_max + 10.
pub fn default_p_max(t_len: usize) -> usize {
    let cap = (10.0 * (t_len as f64).log10()).floor().max(0.0) as usize;
    cap.min(t_len.saturating_sub(10) / 2)
}

/// A fitted zero-mean autoregression.
#[derive(Debug, Clone, PartialEq)]
pub struct ArFit {
    pub order: usize,
    pub coeffs: Vec<f64>,
    /// Centered residuals.
    pub residuals: Vec<f64>,
    pub intercept_removed: bool,
    pub warnings: Vec<Warning>,
}

/// Least squares of `x_t` on its first `p` lags, over `t = start..n`.
fn ols_lags(x: &[f64], p: usize, start: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = x.len();
    let rows = n - start;
    if p == 0 {
        return Some((Vec::new(), x[start..].to_vec()));
    }
    let design = DMatrix::from_fn(rows, p, |r, l| x[start + r - l - 1]);
    let target = DVector::from_iterator(rows, x[start..].iter().copied());
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * &target;
    let beta = match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => xtx.svd(true, true).solve(&xty, 1e-12).ok()?,
    };
    let fitted = &design * &beta;
    let resid = (target - fitted).iter().copied().collect();
    Some((beta.iter().copied().collect(), resid))
}

/// Spectral radius of the AR companion matrix.
pub fn companion_spectral_radius(coeffs: &[f64]) -> Option<f64> {
    let p = coeffs.len();
    if p == 0 {
        return Some(0.0);
    }
    if p == 1 {
        return Some(coeffs[0].abs());
    }
    let mut c = DMatrix::<f64>::zeros(p, p);
    for (j, a) in coeffs.iter().enumerate() {
        c[(0, j)] = *a;
    }
    for i in 1..p {
        c[(i, i - 1)] = 1.0;
    }
    let schur = Schur::try_new(c, f64::EPSILON, 10_000)?;
    Some(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Gaussian AIC of each order 0..=p_max on the common sample `t ≥ p_max`.
fn aic_by_order(x: &[f64], p_max: usize) -> Vec<f64> {
    let rows = x.len() - p_max;
    let target = DVector::from_iterator(rows, x[p_max..].iter().copied());
    let total: f64 = target.norm_squared();
    let mut aic = vec![rows as f64 * (total / rows as f64).ln()];
    if p_max == 0 {
        return aic;
    }
    // nested regressions share one QR: RSS_p = ‖y‖² − Σ_{i<p} (Qᵀy)_i²
    let design = DMatrix::from_fn(rows, p_max, |r, l| x[p_max + r - l - 1]);
    let qr = design.qr();
    let qty = qr.q().transpose() * &target;
    let mut explained = 0.0;
    for p in 1..=p_max {
        explained += qty[p - 1] * qty[p - 1];
        let rss = (total - explained).max(f64::MIN_POSITIVE);
        aic.push(rows as f64 * (rss / rows as f64).ln() + 2.0 * p as f64);
    }
    aic
}

/// Fit an AR sieve to a series (demeaned internally).
///
/// With [`OrderCriterion::Aic`] every order `0..=p_max` is scored on the
/// same effective sample and the minimum wins (ties to the lower order).
/// The chosen order is refit on all available observations. A
/// nonstationary fit is replaced by the largest lower order that is
/// stationary, with a [`Warning::NonstationaryFallback`].
pub fn fit_ar_sieve(series: &[f64], p_max: usize, criterion: OrderCriterion) -> Result<ArFit> {
    let n = series.len();
    let cap = match criterion {
        OrderCriterion::Aic => p_max,
        OrderCriterion::Fixed(p) => p,
    };
    if n < 2 * cap + 10 {
        return domain(format!("AR sieve with order cap {cap} needs at least {} observations, got {n}", 2 * cap + 10));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return domain("series contains non-finite values");
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = series.iter().map(|v| v - mean).collect();

    let requested = match criterion {
        OrderCriterion::Fixed(p) => p,
        OrderCriterion::Aic => {
            let aic = aic_by_order(&x, p_max);
            let mut best = 0;
            for (p, a) in aic.iter().enumerate() {
                if *a < aic[best] {
                    best = p;
                }
            }
            best
        }
    };

    let mut warnings = Vec::new();
    for order in (0..=requested).rev() {
        let Some((coeffs, resid)) = ols_lags(&x, order, order) else { continue };
        let radius = companion_spectral_radius(&coeffs).unwrap_or(f64::INFINITY);
        if radius < 1.0 {
            if order != requested {
                warnings.push(Warning::NonstationaryFallback { requested, used: order });
            }
            let rm = resid.iter().sum::<f64>() / resid.len() as f64;
            let residuals = resid.iter().map(|r| r - rm).collect();
            return Ok(ArFit { order, coeffs, residuals, intercept_removed: true, warnings });
        }
    }
    Err(Error::Numerical("no stationary autoregression found".into()))
}

impl ArFit {
    /// Burn-in discarded before a bootstrap path is kept.
    pub fn burn_in(&self) -> usize {
        100 + 10 * self.order
    }

    /// One bootstrap path of length `t_len`, started at zero.
    pub fn simulate<R: Rng + ?Sized>(&self, t_len: usize, rng: &mut R) -> Vec<f64> {
        let p = self.order;
        let burn = self.burn_in();
        let mut buf = vec![0.0; p + burn + t_len];
        let m = self.residuals.len();
        for t in p..buf.len() {
            let mut v = self.residuals[rng.random_range(0..m)];
            for (l, a) in self.coeffs.iter().enumerate() {
                v += a * buf[t - l - 1];
            }
            buf[t] = v;
        }
        buf.split_off(p + burn)
    }
}

/// Bootstrap estimates of (θ, v, γ) for each factor of one population.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapEstimates {
    pub theta_star: Vec<f64>,
    pub v_star: Vec<f64>,
    pub gamma_star: Vec<f64>,
    pub ar_orders: Vec<usize>,
    pub b_boot: usize,
    pub seed: u64,
    pub warnings: Vec<Warning>,
}

impl ToResultJson for BootstrapEstimates {
    fn to_result_json(&self) -> Value {
        json!({
            "kind": "bootstrap",
            "theta_star": factor_map(&self.theta_star),
            "v_star": factor_map(&self.v_star),
            "gamma_star": factor_map(&self.gamma_star),
            "ar_orders": self.ar_orders,
            "b_boot": self.b_boot,
            "seed": self.seed,
        })
    }
}

fn lag_product(f: &[f64], tau: usize) -> f64 {
    f.iter().zip(&f[tau..]).map(|(a, b)| a * b).sum()
}

fn centered_autocov(f: &[f64], tau: usize) -> f64 {
    let n = f.len();
    let m = f.iter().sum::<f64>() / n as f64;
    f.iter().zip(&f[tau..]).map(|(a, b)| (a - m) * (b - m)).sum::<f64>() / (n - tau - 1) as f64
}

/// Stream key of a population: the base seed mixed with a hash of its
/// standardized factors.
pub fn population_key(canon: &CanonicalEstimate, seed: u64) -> u64 {
    sub_seed(seed, content_key(canon.factors_std.iter().copied()))
}

/// AR-sieve bootstrap of every standardized factor.
pub fn bootstrap_estimates(canon: &CanonicalEstimate, tau: usize, b_boot: usize, seed: u64) -> Result<BootstrapEstimates> {
    if b_boot < MIN_BOOT {
        return domain(format!("need at least {MIN_BOOT} bootstrap replicates, got {b_boot}"));
    }
    let t_len = canon.t_len();
    if tau < 1 || tau + 3 > t_len {
        return domain(format!("lag {tau} needs T >= tau + 3, got T = {t_len}"));
    }
    let k = canon.k_hat;
    let p_max = default_p_max(t_len);
    let mut fits = Vec::with_capacity(k);
    let mut warnings = Vec::new();
    for i in 0..k {
        let f = canon.factors_std.column(i);
        if f.iter().all(|v| *v == 0.0) || canon.sigma_hat[i] == 0.0 {
            return Err(Error::DegenerateFactor { factor: i + 1 });
        }
        let fit = fit_ar_sieve(f.as_slice(), p_max, OrderCriterion::Aic)?;
        warnings.extend(fit.warnings.iter().cloned());
        fits.push(fit);
    }
    let key = population_key(canon, seed);
    let sigma_hat = &canon.sigma_hat;

    // (Σ f f_{+τ}, γ^b, λ^b) for each factor, in replicate order
    let draws: Vec<Result<(Vec<f64>, Vec<f64>, Vec<f64>)>> = (0..b_boot)
        .into_par_iter()
        .map(|b| {
            let paths: Vec<Vec<f64>> = fits
                .iter()
                .enumerate()
                .map(|(i, fit)| fit.simulate(t_len, &mut stream(key, &[i as u64, b as u64])))
                .collect();
            let sums = paths.iter().map(|f| lag_product(f, tau)).collect();
            let gammas: Vec<f64> = paths.iter().map(|f| centered_autocov(f, tau)).collect();
            let lambdas = if k == 1 {
                let g = sigma_hat[0] * sigma_hat[0] * gammas[0];
                vec![g * g]
            } else {
                let block = DMatrix::from_fn(t_len, k, |t, i| sigma_hat[i] * paths[i][t]);
                block_eigenvalues(&block, tau)?
            };
            Ok((sums, gammas, lambdas))
        })
        .collect();

    let mut sums = vec![Vec::with_capacity(b_boot); k];
    let mut theta = vec![0.0; k];
    let mut gamma = vec![0.0; k];
    for d in draws {
        let (s, g, l) = d?;
        for i in 0..k {
            sums[i].push(s[i]);
            gamma[i] += g[i];
            theta[i] += l[i];
        }
    }
    let bf = b_boot as f64;
    let v_star = sums
        .iter()
        .map(|s| {
            let m = s.iter().sum::<f64>() / bf;
            let var = s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (bf - 1.0);
            (var / (t_len - tau) as f64).sqrt()
        })
        .collect();
    Ok(BootstrapEstimates {
        theta_star: theta.iter().map(|t| t / bf).collect(),
        v_star,
        gamma_star: gamma.iter().map(|g| g / bf).collect(),
        ar_orders: fits.iter().map(|f| f.order).collect(),
        b_boot,
        seed,
        warnings,
    })
}

/// Everything the test needs from one population.
#[derive(Debug, Clone)]
pub struct PopulationFit {
    pub tau: usize,
    pub t_len: usize,
    pub k_hat: usize,
    /// Top K̂ eigenvalues of the standardized panel.
    pub lambdas: Vec<f64>,
    pub boot: BootstrapEstimates,
}

impl PopulationFit {
    pub fn new(canon: &CanonicalEstimate, b_boot: usize, seed: u64) -> Result<Self> {
        let boot = bootstrap_estimates(canon, canon.tau, b_boot, seed)?;
        Ok(Self {
            tau: canon.tau,
            t_len: canon.t_len(),
            k_hat: canon.k_hat,
            lambdas: canon.standardized_eigenvalues()?,
            boot,
        })
    }
}

/// Result of a two-sample autocovariance test.
#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub tau: usize,
    pub z: Vec<f64>,
    pub p_two_sided: Vec<f64>,
    pub p_less: Vec<f64>,
    pub p_greater: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub v_star: Vec<f64>,
    pub gamma_star: Vec<f64>,
    pub lambda_a: Vec<f64>,
    pub lambda_b: Vec<f64>,
    pub k_hat_a: usize,
    pub k_hat_b: usize,
    pub t1: usize,
    pub t2: usize,
    pub b_boot: usize,
    pub seed: u64,
}

impl ToResultJson for TestOutcome {
    fn to_result_json(&self) -> Value {
        json!({
            "kind": "test",
            "tau": self.tau,
            "eigenvalues_a": self.lambda_a.iter().copied().map(float_value).collect::<Vec<_>>(),
            "eigenvalues_b": self.lambda_b.iter().copied().map(float_value).collect::<Vec<_>>(),
            "z": factor_map(&self.z),
            "p_two_sided": factor_map(&self.p_two_sided),
            "p_less": factor_map(&self.p_less),
            "p_greater": factor_map(&self.p_greater),
            "theta_star": factor_map(&self.theta_star),
            "v_star": factor_map(&self.v_star),
            "gamma_star": factor_map(&self.gamma_star),
            "k_hat": [self.k_hat_a, self.k_hat_b],
            "t": [self.t1, self.t2],
            "seed": self.seed,
            "b_boot": self.b_boot,
        })
    }
}

/// Compare two fitted populations factor by factor.
pub fn compare_fits(a: &PopulationFit, b: &PopulationFit, k_common: Option<usize>) -> Result<TestOutcome> {
    if a.tau != b.tau {
        return Err(Error::Config(format!("populations were fitted at different lags ({} vs {})", a.tau, b.tau)));
    }
    if a.boot.b_boot != b.boot.b_boot || a.boot.seed != b.boot.seed {
        return Err(Error::Config("populations were bootstrapped with different settings".into()));
    }
    let k = match k_common {
        Some(k) if k >= 1 && k <= a.k_hat.min(b.k_hat) => k,
        Some(k) => {
            return Err(Error::Config(format!(
                "k_common = {k} must lie in 1..={} (estimated {} and {})",
                a.k_hat.min(b.k_hat),
                a.k_hat,
                b.k_hat
            )))
        }
        None if a.k_hat == b.k_hat => a.k_hat,
        None => {
            return Err(Error::Config(format!(
                "estimated factor counts differ ({} vs {}); pass k_common to compare leading factors",
                a.k_hat, b.k_hat
            )))
        }
    };
    let (t1, t2) = (a.t_len as f64, b.t_len as f64);
    let pool = |x: f64, y: f64| (t1 * x + t2 * y) / (t1 + t2);
    let scale = (t1 * t2 / (t1 + t2)).sqrt();

    let mut out = TestOutcome {
        tau: a.tau,
        z: Vec::with_capacity(k),
        p_two_sided: Vec::with_capacity(k),
        p_less: Vec::with_capacity(k),
        p_greater: Vec::with_capacity(k),
        theta_star: Vec::with_capacity(k),
        v_star: Vec::with_capacity(k),
        gamma_star: Vec::with_capacity(k),
        lambda_a: a.lambdas[..k].to_vec(),
        lambda_b: b.lambdas[..k].to_vec(),
        k_hat_a: a.k_hat,
        k_hat_b: b.k_hat,
        t1: a.t_len,
        t2: b.t_len,
        b_boot: a.boot.b_boot,
        seed: a.boot.seed,
    };
    for i in 0..k {
        let theta = pool(a.boot.theta_star[i], b.boot.theta_star[i]);
        let v = pool(a.boot.v_star[i], b.boot.v_star[i]);
        let gamma = pool(a.boot.gamma_star[i], b.boot.gamma_star[i]);
        if !(theta > 0.0) || !(v > 0.0) {
            return Err(Error::Numerical(format!("factor {}: pooled theta* = {theta}, v* = {v}", i + 1)));
        }
        let z = (a.lambdas[i] - b.lambdas[i]) * scale * gamma / (2.0 * v * theta);
        out.z.push(z);
        out.p_two_sided.push(2.0 * normal_cdf(-z.abs()));
        out.p_less.push(normal_cdf(z));
        out.p_greater.push(normal_cdf(-z));
        out.theta_star.push(theta);
        out.v_star.push(v);
        out.gamma_star.push(gamma);
    }
    Ok(out)
}

/// Feasible two-sample test on two canonical estimates.
pub fn two_sample_test(
    canon_a: &CanonicalEstimate,
    canon_b: &CanonicalEstimate,
    tau: usize,
    b_boot: usize,
    seed: u64,
    k_common: Option<usize>,
) -> Result<TestOutcome> {
    if canon_a.tau != tau || canon_b.tau != tau {
        return Err(Error::Config(format!(
            "test lag {tau} does not match estimation lags ({}, {})",
            canon_a.tau, canon_b.tau
        )));
    }
    if k_common.is_none() && canon_a.k_hat != canon_b.k_hat {
        return Err(Error::Config(format!(
            "estimated factor counts differ ({} vs {}); pass k_common to compare leading factors",
            canon_a.k_hat, canon_b.k_hat
        )));
    }
    let fa = PopulationFit::new(canon_a, b_boot, seed)?;
    let fb = PopulationFit::new(canon_b, b_boot, seed)?;
    compare_fits(&fa, &fb, k_common)
}

/// Infeasible statistic with known (θ, v, γ) shared by both samples of
/// common length T: `√T·γ/(2√2·v)·(λ₁ − λ₂)/θ`.
pub fn oracle_statistic(lambda_a: f64, lambda_b: f64, theta: f64, v: f64, gamma: f64, t_len: usize) -> f64 {
    (t_len as f64).sqrt() * gamma / (2.0 * std::f64::consts::SQRT_2 * v) * (lambda_a - lambda_b) / theta
}
