//! Synthetic factor-model panels in canonical form.
//!
//! A panel row is `(σ₁f₁ₜ, …, σ_K f_Kₜ, 0, …, 0) + εₜ` where each factor is a
//! unit-variance linear process `fₜ = Σ φ_l z_{t−l}` and `εₜ` is i.i.d.
//! Gaussian noise.
//!
//! Stream layout for a panel seed `s`: factor `i` draws from sub-stream
//! `(s, i)`, noise column `j` from sub-stream `(s, NOISE_STREAM_BASE + j)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::io::Panel;
use crate::rng::{stream, StreamRng};

const NOISE_STREAM_BASE: u64 = 1 << 40;

/// Tail mass (ℓ₁) below which an AR expansion is truncated.
pub const MA_TRUNCATION_TAIL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Innovation {
    Gaussian,
    /// Student t with `df` degrees of freedom, rescaled to unit variance.
    StudentT(f64),
    Rademacher,
}

impl Innovation {
    /// E[z⁴] of the unit-variance innovation.
    pub fn kurtosis(&self) -> f64 {
        match *self {
            Innovation::Gaussian => 3.0,
            Innovation::StudentT(df) => 3.0 + 6.0 / (df - 4.0),
            Innovation::Rademacher => 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Innovation::StudentT(df) if !(df > 4.0) => {
                domain(format!("student t innovations need df > 4, got {df}"))
            }
            _ => Ok(()),
        }
    }

    fn sampler(&self) -> Result<InnovationSampler> {
        self.validate()?;
        Ok(match *self {
            Innovation::Gaussian => InnovationSampler::Gaussian,
            Innovation::StudentT(df) => InnovationSampler::StudentT {
                dist: StudentT::new(df).map_err(|e| crate::Error::Domain(e.to_string()))?,
                scale: ((df - 2.0) / df).sqrt(),
            },
            Innovation::Rademacher => InnovationSampler::Rademacher,
        })
    }
}

enum InnovationSampler {
    Gaussian,
    StudentT { dist: StudentT<f64>, scale: f64 },
    Rademacher,
}

impl InnovationSampler {
    fn draw(&self, rng: &mut StreamRng) -> f64 {
        match self {
            InnovationSampler::Gaussian => StandardNormal.sample(rng),
            InnovationSampler::StudentT { dist, scale } => scale * dist.sample(rng),
            InnovationSampler::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficients {
    /// Finite moving average (φ₀, …, φ_L).
    Ma(Vec<f64>),
    /// AR(1) shorthand.
    Ar1(f64),
}

/// A stationary linear process driven by i.i.d. innovations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProcessSpec {
    pub phi: Coefficients,
    pub innovation: Innovation,
    pub normalize_unit_variance: bool,
}

impl LinearProcessSpec {
    pub fn ar1(phi: f64) -> Self {
        Self { phi: Coefficients::Ar1(phi), innovation: Innovation::Gaussian, normalize_unit_variance: true }
    }

    pub fn ma(phi: Vec<f64>) -> Self {
        Self { phi: Coefficients::Ma(phi), innovation: Innovation::Gaussian, normalize_unit_variance: true }
    }

    pub fn white_noise() -> Self {
        Self::ma(vec![1.0])
    }

    pub fn with_innovation(mut self, innovation: Innovation) -> Self {
        self.innovation = innovation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.innovation.validate()?;
        match &self.phi {
            Coefficients::Ar1(p) if !(p.abs() < 1.0) => {
                domain(format!("AR(1) coefficient must satisfy |phi| < 1, got {p}"))
            }
            Coefficients::Ma(c) if c.is_empty() => domain("empty MA coefficient list"),
            Coefficients::Ma(c) if c.iter().any(|v| !v.is_finite()) => domain("non-finite MA coefficient"),
            Coefficients::Ma(c) if c.iter().all(|&v| v == 0.0) => domain("MA coefficients are all zero"),
            _ => Ok(()),
        }
    }

    /// MA(∞) coefficients of the generated process, truncated once the ℓ₁
    /// tail of an AR expansion drops below [`MA_TRUNCATION_TAIL`].
    pub fn ma_coefficients(&self) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(match &self.phi {
            Coefficients::Ma(c) => {
                if self.normalize_unit_variance {
                    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                    c.iter().map(|v| v / norm).collect()
                } else {
                    c.clone()
                }
            }
            &Coefficients::Ar1(p) => {
                let scale = if self.normalize_unit_variance { (1.0 - p * p).sqrt() } else { 1.0 };
                let a = p.abs();
                let mut out = vec![scale];
                let mut coef = scale;
                // remaining tail after index l is scale·|p|^{l+1}/(1−|p|)
                while a > 0.0 && coef.abs() * a / (1.0 - a) >= MA_TRUNCATION_TAIL {
                    coef *= p;
                    out.push(coef);
                }
                out
            }
        })
    }
}

/// Burn-in length for the AR(1) recursion started at zero.
pub fn ar1_burn_in(phi: f64) -> usize {
    100 + 50 * (1.0 / (1.0 - phi.abs())).ceil() as usize
}

/// Draw `t_len` consecutive values of the process.
pub fn gen_linear_process(spec: &LinearProcessSpec, t_len: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = stream(seed, &[]);
    gen_linear_process_with(spec, t_len, &mut rng)
}

pub(crate) fn gen_linear_process_with(
    spec: &LinearProcessSpec,
    t_len: usize,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if t_len == 0 {
        return domain("series length must be positive");
    }
    let sampler = spec.innovation.sampler()?;
    match &spec.phi {
        Coefficients::Ma(_) => {
            let phi = spec.ma_coefficients()?;
            let lags = phi.len() - 1;
            let z: Vec<f64> = (0..t_len + lags).map(|_| sampler.draw(rng)).collect();
            Ok((0..t_len)
                .map(|t| phi.iter().enumerate().map(|(l, c)| c * z[t + lags - l]).sum())
                .collect())
        }
        &Coefficients::Ar1(p) => {
            let scale = if spec.normalize_unit_variance { (1.0 - p * p).sqrt() } else { 1.0 };
            let burn = ar1_burn_in(p);
            let mut f = 0.0;
            let mut out = Vec::with_capacity(t_len);
            for step in 0..burn + t_len {
                f = p * f + scale * sampler.draw(rng);
                if step >= burn {
                    out.push(f);
                }
            }
            Ok(out)
        }
    }
}

/// A canonical-form factor model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelSpec {
    pub k: usize,
    /// Factor strengths σᵢ² (loading on coordinate i is σᵢ).
    pub sigma2: Vec<f64>,
    pub processes: Vec<LinearProcessSpec>,
    pub n_dim: usize,
    pub noise_sd: f64,
}

impl FactorModelSpec {
    /// One AR(1) factor with strength `sigma2` and unit noise.
    pub fn one_factor_ar1(sigma2: f64, phi: f64, n_dim: usize) -> Self {
        Self {
            k: 1,
            sigma2: vec![sigma2],
            processes: vec![LinearProcessSpec::ar1(phi)],
            n_dim,
            noise_sd: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return domain("factor model needs k >= 1");
        }
        if self.n_dim <= self.k {
            return domain(format!("dimension {} must exceed factor count {}", self.n_dim, self.k));
        }
        if self.sigma2.len() != self.k || self.processes.len() != self.k {
            return domain("sigma2 and processes must have one entry per factor");
        }
        if self.sigma2.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return domain("factor strengths must be finite and nonnegative");
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return domain("noise sd must be finite and nonnegative");
        }
        self.processes.iter().try_for_each(LinearProcessSpec::validate)
    }
}

/// Generate a T×N panel from the canonical factor model.
pub fn gen_factor_panel(model: &FactorModelSpec, t_len: usize, seed: u64) -> Result<Panel> {
    model.validate()?;
    if t_len < 2 {
        return domain("panel needs at least 2 time points");
    }
    let n = model.n_dim;
    let mut data = DMatrix::<f64>::zeros(t_len, n);
    if model.noise_sd > 0.0 {
        for j in 0..n {
            let mut rng = stream(seed, &[NOISE_STREAM_BASE + j as u64]);
            for t in 0..t_len {
                let z: f64 = StandardNormal.sample(&mut rng);
                data[(t, j)] = model.noise_sd * z;
            }
        }
    }
    for (i, (s2, proc_)) in model.sigma2.iter().zip(&model.processes).enumerate() {
        let mut rng = stream(seed, &[i as u64]);
        let f = gen_linear_process_with(proc_, t_len, &mut rng)?;
        let sigma = s2.sqrt();
        for (t, v) in f.into_iter().enumerate() {
            data[(t, i)] += sigma * v;
        }
    }
    Panel::new(data, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    fn lag1_corr(x: &[f64]) -> f64 {
        let (m, v) = mean_var(x);
        let c: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / (x.len() as f64 - 1.0);
        c / v
    }

    #[test]
    fn white_noise_moments() {
        let x = gen_linear_process(&LinearProcessSpec::white_noise(), 100_000, 11).unwrap();
        let (m, v) = mean_var(&x);
        assert!(m.abs() < 0.02, "mean {m}");
        assert!((v - 1.0).abs() < 0.03, "var {v}");
    }

    #[test]
    fn ar1_lag_one_correlation() {
        let x = gen_linear_process(&LinearProcessSpec::ar1(0.5), 100_000, 12).unwrap();
        assert!((lag1_corr(&x) - 0.5).abs() < 0.02);
        let (_, v) = mean_var(&x);
        assert!((v - 1.0).abs() < 0.03, "var {v}");
    }

    #[test]
    fn ar1_is_deterministic() {
        let spec = LinearProcessSpec::ar1(0.5);
        assert_eq!(gen_linear_process(&spec, 500, 3).unwrap(), gen_linear_process(&spec, 500, 3).unwrap());
        assert_ne!(gen_linear_process(&spec, 500, 3).unwrap(), gen_linear_process(&spec, 500, 4).unwrap());
    }

    #[test]
    fn invalid_processes() {
        assert!(gen_linear_process(&LinearProcessSpec::ar1(1.0), 10, 0).is_err());
        assert!(gen_linear_process(&LinearProcessSpec::ar1(-1.2), 10, 0).is_err());
        let t4 = LinearProcessSpec::white_noise().with_innovation(Innovation::StudentT(4.0));
        assert!(gen_linear_process(&t4, 10, 0).is_err());
    }

    #[test]
    fn normalized_ma_has_unit_norm() {
        let phi = LinearProcessSpec::ma(vec![1.0, 2.0, -0.5]).ma_coefficients().unwrap();
        let norm2: f64 = phi.iter().map(|v| v * v).sum();
        assert!((norm2 - 1.0).abs() < 1e-10);
        let ar = LinearProcessSpec::ar1(0.9).ma_coefficients().unwrap();
        let norm2: f64 = ar.iter().map(|v| v * v).sum();
        assert!((norm2 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn unit_variance_innovations() {
        for inn in [Innovation::StudentT(8.0), Innovation::Rademacher] {
            let spec = LinearProcessSpec::white_noise().with_innovation(inn);
            let (m, v) = mean_var(&gen_linear_process(&spec, 100_000, 5).unwrap());
            assert!(m.abs() < 0.02 && (v - 1.0).abs() < 0.05, "{inn:?}: {m} {v}");
        }
    }

    #[test]
    fn degenerate_factor_is_pure_noise() {
        let model = FactorModelSpec::one_factor_ar1(0.0, 0.5, 5);
        let p = gen_factor_panel(&model, 10_000, 1).unwrap();
        for j in 0..5 {
            let (_, v) = mean_var(p.data().column(j).as_slice());
            assert!((v - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn variance_additivity() {
        let model = FactorModelSpec::one_factor_ar1(100.0, 0.5, 100);
        let p = gen_factor_panel(&model, 10_000, 2).unwrap();
        let (_, v) = mean_var(p.data().column(0).as_slice());
        assert!((v / 101.0 - 1.0).abs() < 0.1, "var {v}");
    }

    #[test]
    fn noiseless_panel_has_zero_complement() {
        let mut model = FactorModelSpec::one_factor_ar1(4.0, 0.5, 6);
        model.noise_sd = 0.0;
        let p = gen_factor_panel(&model, 50, 3).unwrap();
        assert!(p.data().columns(1, 5).iter().all(|&v| v == 0.0));
        assert!(p.data().column(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn different_seeds_give_uncorrelated_factors() {
        let model = FactorModelSpec::one_factor_ar1(1.0, 0.5, 2);
        let a = gen_factor_panel(&model, 10_000, 100).unwrap();
        let b = gen_factor_panel(&model, 10_000, 101).unwrap();
        let (x, y) = (a.data().column(0), b.data().column(0));
        let (mx, vx) = mean_var(x.as_slice());
        let (my, vy) = mean_var(y.as_slice());
        let c: f64 = x.iter().zip(y.iter()).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / 9_999.0;
        assert!((c / (vx * vy).sqrt()).abs() < 0.05);
    }
}
