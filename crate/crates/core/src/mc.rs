//! Monte Carlo harness: empirical size and power of the two-sample test,
//! and a normality check of the spiked-eigenvalue CLT.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::boottest::{normal_cdf, normal_quantile, oracle_statistic, two_sample_test};
use crate::error::{Error, Result};
use crate::factorest::canonical_from_panel;
use crate::io::{float_value, ToResultJson};
use crate::rng::path_seed;
use crate::simulate::{gen_factor_panel, FactorModelSpec, LinearProcessSpec};
use crate::spectra::{symmetrized_spectrum, AutocovMode};
use crate::theory;

#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    Size,
    /// Variance ratios of the second population's factor.
    PowerVariance(Vec<f64>),
    /// Multipliers applied to the second population's AR coefficient.
    PowerAutocorr(Vec<f64>),
    Clt,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Size => "size",
            Self::PowerVariance(_) => "power_variance",
            Self::PowerAutocorr(_) => "power_autocorr",
            Self::Clt => "clt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub t_len: Vec<usize>,
    pub n_dim: Vec<usize>,
    /// Factor strength exponents; σ² = N^(1−δ).
    pub delta: Vec<f64>,
    pub phi1: f64,
    pub alpha: f64,
    pub m_reps: usize,
    pub b_boot: usize,
    pub base_seed: u64,
    pub tau: usize,
    pub scenario: Scenario,
}

impl McConfig {
    pub fn new(scenario: Scenario, base_seed: u64) -> Self {
        Self {
            t_len: vec![400],
            n_dim: vec![100],
            delta: vec![0.0],
            phi1: 0.5,
            alpha: 0.1,
            m_reps: 200,
            b_boot: 200,
            base_seed,
            tau: 1,
            scenario,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.t_len.is_empty() || self.n_dim.is_empty() || self.delta.is_empty() {
            return bad("T, N and delta grids must be nonempty".into());
        }
        if let Some(d) = self.delta.iter().find(|d| !(0.0..1.0).contains(*d)) {
            return bad(format!("delta = {d} outside [0, 1)"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} outside (0, 1)", self.alpha));
        }
        if self.m_reps < 1 {
            return bad("need at least one replicate".into());
        }
        if !(self.phi1.abs() < 1.0) {
            return bad(format!("phi1 = {} is not stationary", self.phi1));
        }
        if self.tau < 1 {
            return bad("tau must be >= 1".into());
        }
        if let Some(n) = self.n_dim.iter().find(|n| **n < 2) {
            return bad(format!("N = {n} is too small"));
        }
        if let Some(t) = self.t_len.iter().find(|t| **t < self.tau + 10) {
            return bad(format!("T = {t} is too short"));
        }
        match &self.scenario {
            Scenario::PowerVariance(r) => {
                if r.is_empty() {
                    return bad("empty ratio grid".into());
                }
                if let Some(x) = r.iter().find(|x| !(**x >= 1.0 && x.is_finite())) {
                    return bad(format!("variance ratio {x} must be >= 1"));
                }
            }
            Scenario::PowerAutocorr(f) => {
                if f.is_empty() {
                    return bad("empty fraction grid".into());
                }
                if let Some(x) = f.iter().find(|x| !(**x > 0.0 && **x <= 1.0)) {
                    return bad(format!("fraction {x} outside (0, 1]"));
                }
            }
            Scenario::Size | Scenario::Clt => {}
        }
        Ok(())
    }

    /// Every (T, N, δ) combination in grid order.
    pub fn grid(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for &t in &self.t_len {
            for &n in &self.n_dim {
                for &d in &self.delta {
                    out.push((t, n, d));
                }
            }
        }
        out
    }
}

/// Normality diagnostics of a standardized sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalityDiagnostics {
    pub m: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks_statistic: f64,
    pub ks_pvalue: f64,
}

/// One line of the tidy output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub scenario: String,
    #[serde(rename = "T")]
    pub t_len: usize,
    #[serde(rename = "N")]
    pub n_dim: usize,
    pub delta: f64,
    pub param: String,
    pub rate: f64,
    pub se: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub scenario: String,
    pub seed: u64,
    pub m_reps: usize,
    pub b_boot: usize,
    pub alpha: f64,
    pub rows: Vec<McRow>,
    /// Per grid point, for the CLT scenario.
    pub diagnostics: Vec<NormalityDiagnostics>,
    /// Raw statistics per grid point (and per parameter value).
    pub statistics: Vec<Vec<f64>>,
}

impl McResult {
    /// Rows without wall-clock time, for reproducibility comparisons.
    pub fn timeless_rows(&self) -> Vec<McRow> {
        self.rows.iter().cloned().map(|mut r| {
            r.seconds = 0.0;
            r
        }).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

impl ToResultJson for McResult {
    fn to_result_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                json!({
                    "scenario": r.scenario, "T": r.t_len, "N": r.n_dim, "delta": float_value(r.delta),
                    "param": r.param, "rate": float_value(r.rate),
                    "se": r.se.map(float_value), "seconds": float_value(r.seconds),
                })
            })
            .collect();
        let mut v = json!({
            "kind": "mc",
            "scenario": self.scenario,
            "seed": self.seed,
            "m_reps": self.m_reps,
            "b_boot": self.b_boot,
            "alpha": float_value(self.alpha),
            "rows": rows,
        });
        if !self.diagnostics.is_empty() {
            v["diagnostics"] = serde_json::to_value(&self.diagnostics).unwrap_or(Value::Null);
        }
        v
    }
}

/// Binomial standard error √(r(1−r)/M).
pub fn binomial_se(rate: f64, m: usize) -> f64 {
    (rate * (1.0 - rate) / m as f64).sqrt()
}

fn sigma2_for(n: usize, delta: f64) -> f64 {
    (n as f64).powf(1.0 - delta)
}

/// Z̃ for one replicate pair of simulated populations.
fn replicate_z(
    cfg: &McConfig,
    t: usize,
    model_a: &FactorModelSpec,
    model_b: &FactorModelSpec,
    path: [u64; 2],
) -> Result<f64> {
    let seed = cfg.base_seed;
    let pa = gen_factor_panel(model_a, t, path_seed(seed, &[path[0], path[1], 0]))?;
    let pb = gen_factor_panel(model_b, t, path_seed(seed, &[path[0], path[1], 1]))?;
    let ca = canonical_from_panel(&pa, cfg.tau, None, Some(1))?;
    let cb = canonical_from_panel(&pb, cfg.tau, None, Some(1))?;
    let out = two_sample_test(&ca, &cb, cfg.tau, cfg.b_boot, path_seed(seed, &[path[0], path[1], 2]), None)?;
    Ok(out.z[0])
}

fn replicate_zs(
    cfg: &McConfig,
    t: usize,
    model_a: &FactorModelSpec,
    model_b: &FactorModelSpec,
    config_index: u64,
) -> Result<Vec<f64>> {
    (0..cfg.m_reps)
        .into_par_iter()
        .map(|r| replicate_z(cfg, t, model_a, model_b, [config_index, r as u64]))
        .collect()
}

fn rate(zs: &[f64], reject: impl Fn(f64) -> bool) -> f64 {
    zs.iter().filter(|z| reject(**z)).count() as f64 / zs.len() as f64
}

/// Rejection rates of Z̃ under the null of identical populations, in both
/// tails (rows with param `lower` and `upper`).
pub fn empirical_size(cfg: &McConfig) -> Result<McResult> {
    if cfg.scenario != Scenario::Size {
        return Err(Error::Config(format!("empirical_size needs the size scenario, got {}", cfg.scenario.name())));
    }
    cfg.validate()?;
    let (lo, hi) = (normal_quantile(cfg.alpha), normal_quantile(1.0 - cfg.alpha));
    let mut result = empty_result(cfg);
    for (c, (t, n, delta)) in cfg.grid().into_iter().enumerate() {
        let start = Instant::now();
        let model = FactorModelSpec::one_factor_ar1(sigma2_for(n, delta), cfg.phi1, n);
        let zs = replicate_zs(cfg, t, &model, &model, c as u64)?;
        let seconds = start.elapsed().as_secs_f64();
        for (tail, r) in [("lower", rate(&zs, |z| z < lo)), ("upper", rate(&zs, |z| z > hi))] {
            result.rows.push(row(cfg, t, n, delta, tail.into(), r, seconds));
        }
        result.statistics.push(zs);
    }
    Ok(result)
}

/// Rejection rates under a variance-ratio or AR-coefficient alternative.
///
/// Variance ratios reject when Z̃ < z_α; autocorrelation fractions reject
/// when Z̃ > z_{1−α}.
pub fn empirical_power(cfg: &McConfig) -> Result<McResult> {
    let (grid, lower) = match &cfg.scenario {
        Scenario::PowerVariance(r) => (r.clone(), true),
        Scenario::PowerAutocorr(f) => (f.clone(), false),
        other => return Err(Error::Config(format!("empirical_power needs a power scenario, got {}", other.name()))),
    };
    cfg.validate()?;
    let crit = if lower { normal_quantile(cfg.alpha) } else { normal_quantile(1.0 - cfg.alpha) };
    let mut result = empty_result(cfg);
    let mut c = 0u64;
    for (t, n, delta) in cfg.grid() {
        let sigma2 = sigma2_for(n, delta);
        for &param in &grid {
            let start = Instant::now();
            let base = FactorModelSpec::one_factor_ar1(sigma2, cfg.phi1, n);
            let alt = if lower {
                FactorModelSpec::one_factor_ar1(sigma2 * param, cfg.phi1, n)
            } else {
                FactorModelSpec::one_factor_ar1(sigma2, cfg.phi1 * param, n)
            };
            let zs = replicate_zs(cfg, t, &base, &alt, c)?;
            let r = if lower { rate(&zs, |z| z < crit) } else { rate(&zs, |z| z > crit) };
            result.rows.push(row(cfg, t, n, delta, format!("{param}"), r, start.elapsed().as_secs_f64()));
            result.statistics.push(zs);
            c += 1;
        }
    }
    Ok(result)
}

/// Normality of the oracle difference statistic built from pairs of
/// raw-mode top eigenvalues of independent panels.
///
/// γ and v come from the known AR(1) factor; θ̄ is the Monte Carlo mean of
/// all simulated eigenvalues at the grid point.
pub fn clt_diagnostic(cfg: &McConfig) -> Result<McResult> {
    if cfg.scenario != Scenario::Clt {
        return Err(Error::Config(format!("clt_diagnostic needs the clt scenario, got {}", cfg.scenario.name())));
    }
    cfg.validate()?;
    let phi = LinearProcessSpec::ar1(cfg.phi1).ma_coefficients()?;
    let gamma = theory::pop_gamma(&phi, cfg.tau as i64);
    let mut result = empty_result(cfg);
    for (c, (t, n, delta)) in cfg.grid().into_iter().enumerate() {
        let start = Instant::now();
        let v = theory::clt_variance(&phi, cfg.tau, t, 3.0)?.v2_t.sqrt();
        let model = FactorModelSpec::one_factor_ar1(sigma2_for(n, delta), cfg.phi1, n);
        let pairs: Vec<(f64, f64)> = (0..cfg.m_reps)
            .into_par_iter()
            .map(|r| {
                let top = |side: u64| -> Result<f64> {
                    let p = gen_factor_panel(&model, t, path_seed(cfg.base_seed, &[c as u64, r as u64, side]))?;
                    Ok(symmetrized_spectrum(&p, cfg.tau, 1, AutocovMode::Raw)?.eigenvalues[0])
                };
                Ok((top(0)?, top(1)?))
            })
            .collect::<Result<_>>()?;
        let theta = pairs.iter().map(|(a, b)| a + b).sum::<f64>() / (2 * pairs.len()) as f64;
        let stats: Vec<f64> = pairs.iter().map(|&(a, b)| oracle_statistic(a, b, theta, v, gamma, t)).collect();
        let diag = normality_diagnostics(&stats);
        let seconds = start.elapsed().as_secs_f64();
        for (name, value) in [
            ("ks_pvalue", diag.ks_pvalue),
            ("ks_statistic", diag.ks_statistic),
            ("mean", diag.mean),
            ("variance", diag.variance),
            ("skewness", diag.skewness),
            ("excess_kurtosis", diag.excess_kurtosis),
        ] {
            let mut r = row(cfg, t, n, delta, name.into(), value, seconds);
            r.se = None;
            result.rows.push(r);
        }
        result.diagnostics.push(diag);
        result.statistics.push(stats);
    }
    Ok(result)
}

fn empty_result(cfg: &McConfig) -> McResult {
    McResult {
        scenario: cfg.scenario.name().into(),
        seed: cfg.base_seed,
        m_reps: cfg.m_reps,
        b_boot: cfg.b_boot,
        alpha: cfg.alpha,
        rows: Vec::new(),
        diagnostics: Vec::new(),
        statistics: Vec::new(),
    }
}

fn row(cfg: &McConfig, t: usize, n: usize, delta: f64, param: String, rate: f64, seconds: f64) -> McRow {
    McRow {
        scenario: cfg.scenario.name().into(),
        t_len: t,
        n_dim: n,
        delta,
        param,
        rate,
        se: Some(binomial_se(rate, cfg.m_reps)),
        seconds,
    }
}

/// Kolmogorov distribution tail Q(λ) = 2 Σ (−1)^{k−1} exp(−2k²λ²).
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test against N(0, 1).
///
/// The p-value uses the asymptotic distribution with Stephens' small-sample
/// correction of the argument.
pub fn ks_normal(sample: &[f64]) -> (f64, f64) {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let f = normal_cdf(*v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    (d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d))
}

pub fn normality_diagnostics(x: &[f64]) -> NormalityDiagnostics {
    let m = x.len();
    let mf = m as f64;
    let mean = x.iter().sum::<f64>() / mf;
    let central = |p: i32| x.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / mf;
    let (m2, m3, m4) = (central(2), central(3), central(4));
    let variance = if m > 1 { m2 * mf / (mf - 1.0) } else { 0.0 };
    let (ks_statistic, ks_pvalue) = ks_normal(x);
    NormalityDiagnostics {
        m,
        mean,
        variance,
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        ks_statistic,
        ks_pvalue,
    }
}
