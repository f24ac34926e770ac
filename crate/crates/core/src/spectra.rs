//! Lag-τ sample autocovariance matrices and the spectrum of their
//! symmetrization `Σ̂(τ)Σ̂(τ)ᵀ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{domain, Error, Result};
use crate::io::{float_value, Panel, ToResultJson};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutocovMode {
    /// `(1/T) Σ_{t=1}^{T−τ} y_{t+τ} y_tᵀ`, no centering.
    Raw,
    /// `(1/(T−τ−1)) Σ (y_t − ȳ)(y_{t+τ} − ȳ)ᵀ` with the full-sample mean.
    CenteredUnbiased,
}

impl AutocovMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AutocovMode::Raw => "raw",
            AutocovMode::CenteredUnbiased => "centered",
        }
    }
}

impl std::str::FromStr for AutocovMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" | "raw_1overT" => Ok(Self::Raw),
            "centered" | "centered_unbiased" => Ok(Self::CenteredUnbiased),
            other => Err(Error::Config(format!("unknown autocovariance mode '{other}'"))),
        }
    }
}

/// Top eigenpairs of a symmetrized autocovariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    pub tau: usize,
    /// Descending, nonnegative.
    pub eigenvalues: Vec<f64>,
    /// N×r, orthonormal columns; each column's largest-magnitude entry is positive.
    pub eigenvectors: DMatrix<f64>,
    pub mode: AutocovMode,
}

impl ToResultJson for SpectralSummary {
    fn to_result_json(&self) -> Value {
        let vectors: Vec<Vec<Value>> = self
            .eigenvectors
            .column_iter()
            .map(|c| c.iter().copied().map(float_value).collect())
            .collect();
        json!({
            "kind": "spectrum",
            "tau": self.tau,
            "mode": self.mode.as_str(),
            "eigenvalues": self.eigenvalues.iter().copied().map(float_value).collect::<Vec<_>>(),
            "eigenvectors": vectors,
        })
    }
}

fn check_tau(t_len: usize, tau: usize) -> Result<()> {
    if tau < 1 || tau + 2 > t_len {
        return domain(format!("lag {tau} outside 1..={} for T = {t_len}", t_len.saturating_sub(2)));
    }
    Ok(())
}

/// N×N lag-τ sample autocovariance matrix.
pub fn sample_autocov(panel: &Panel, tau: usize, mode: AutocovMode) -> Result<DMatrix<f64>> {
    check_tau(panel.t_len(), tau)?;
    Ok(match mode {
        AutocovMode::Raw => autocov_raw(panel.data(), tau),
        AutocovMode::CenteredUnbiased => autocov_centered(&panel.demeaned(), tau),
    })
}

pub(crate) fn autocov_raw(y: &DMatrix<f64>, tau: usize) -> DMatrix<f64> {
    let t = y.nrows();
    let lead = y.rows(tau, t - tau);
    let lag = y.rows(0, t - tau);
    (lead.transpose() * lag) / t as f64
}

/// Centered autocovariance of an already demeaned matrix.
pub(crate) fn autocov_centered(yc: &DMatrix<f64>, tau: usize) -> DMatrix<f64> {
    let t = yc.nrows();
    let lead = yc.rows(tau, t - tau);
    let lag = yc.rows(0, t - tau);
    (lag.transpose() * lead) / (t - tau - 1) as f64
}

/// Top `r` eigenpairs of `Σ̂(τ)Σ̂(τ)ᵀ` for the panel.
pub fn symmetrized_spectrum(panel: &Panel, tau: usize, r: usize, mode: AutocovMode) -> Result<SpectralSummary> {
    let sigma = sample_autocov(panel, tau, mode)?;
    let (eigenvalues, eigenvectors) = spectrum_of_autocov(&sigma, r)?;
    Ok(SpectralSummary { tau, eigenvalues, eigenvectors, mode })
}

/// Top `r` eigenpairs of `ΣΣᵀ` for a given square autocovariance matrix.
pub fn spectrum_of_autocov(sigma: &DMatrix<f64>, r: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = sigma.nrows();
    if sigma.ncols() != n {
        return domain("autocovariance matrix must be square");
    }
    if r < 1 || r > n {
        return domain(format!("requested {r} eigenpairs of an {n}x{n} matrix"));
    }
    let m = sigma * sigma.transpose();
    top_eigenpairs(m, r)
}

/// Top `r` eigenpairs of a symmetric positive semidefinite matrix, sorted
/// descending, negatives clamped to zero, signs normalized.
pub fn top_eigenpairs(mut m: DMatrix<f64>, r: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    // exact symmetry before the solver
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in symmetrized autocovariance".into()));
    }
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order[..r].iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut vectors = DMatrix::<f64>::zeros(n, r);
    for (c, &i) in order[..r].iter().enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(i).into_owned();
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(c, &v);
    }
    Ok((values, vectors))
}

/// Relative floor applied to eigenvalues before taking ratios.
pub const RATIO_FLOOR: f64 = 1e-12;

/// Default search bound for the ratio estimator: ⌊N/2⌋ capped at 20, and
/// kept inside `1..N`.
pub fn default_r_max(n_dim: usize) -> usize {
    (n_dim / 2).clamp(1, 20).min(n_dim.saturating_sub(1)).max(1)
}

/// Ratio estimator `argmin_{1≤j≤R} λ_{j+1}/λ_j` (ties to the smallest j).
pub fn estimate_num_factors(eigenvalues: &[f64], r_max: usize) -> Result<usize> {
    if eigenvalues.len() < 2 {
        return domain("ratio estimator needs at least two eigenvalues");
    }
    if r_max < 1 || r_max + 1 > eigenvalues.len() {
        return domain(format!("r_max = {r_max} needs {} eigenvalues, got {}", r_max + 1, eigenvalues.len()));
    }
    let top = eigenvalues[0];
    if !(top > 0.0) {
        return domain("leading eigenvalue is not positive");
    }
    let floor = RATIO_FLOOR * top;
    let lam = |j: usize| eigenvalues[j].max(floor);
    let mut best = (1, f64::INFINITY);
    for j in 1..=r_max {
        let ratio = lam(j) / lam(j - 1);
        if ratio < best.1 {
            best = (j, ratio);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{gen_factor_panel, FactorModelSpec};

    fn series(v: &[f64]) -> Panel {
        Panel::new(DMatrix::from_column_slice(v.len(), 1, v), None).unwrap()
    }

    #[test]
    fn zero_panel_gives_zero_matrix() {
        let p = Panel::new(DMatrix::zeros(6, 3), None).unwrap();
        for mode in [AutocovMode::Raw, AutocovMode::CenteredUnbiased] {
            assert!(sample_autocov(&p, 1, mode).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn raw_autocov_by_hand() {
        let s = sample_autocov(&series(&[1.0, 2.0, 3.0]), 1, AutocovMode::Raw).unwrap();
        assert!((s[(0, 0)] - 8.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn centered_autocov_by_hand() {
        // direct sum written out independently of the matrix routine
        let y = [1.0, 2.0, 3.0, 4.0];
        let mean = 2.5;
        let oracle = (0..3).map(|t| (y[t] - mean) * (y[t + 1] - mean)).sum::<f64>() / 2.0;
        assert!((oracle - 0.625).abs() < 1e-15);
        let s = sample_autocov(&series(&y), 1, AutocovMode::CenteredUnbiased).unwrap();
        assert!((s[(0, 0)] - 0.625).abs() < 1e-15);
    }

    #[test]
    fn lag_out_of_range() {
        let p = series(&[1.0, 2.0, 3.0, 4.0]);
        assert!(sample_autocov(&p, 0, AutocovMode::Raw).is_err());
        assert!(sample_autocov(&p, 3, AutocovMode::Raw).is_err());
        assert!(sample_autocov(&p, 2, AutocovMode::Raw).is_ok());
    }

    #[test]
    fn noiseless_rank_one() {
        let mut model = FactorModelSpec::one_factor_ar1(9.0, 0.5, 5);
        model.noise_sd = 0.0;
        let p = gen_factor_panel(&model, 200, 4).unwrap();
        let s = symmetrized_spectrum(&p, 1, 5, AutocovMode::Raw).unwrap();
        assert!(s.eigenvalues[0] > 0.0);
        assert!(s.eigenvalues[1..].iter().all(|&v| v == 0.0));
        assert!((s.eigenvectors[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_seam() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let (vals, vecs) = spectrum_of_autocov(&d, 2).unwrap();
        assert!((vals[0] - 9.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
        assert!((vecs[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction() {
        let model = FactorModelSpec::one_factor_ar1(20.0, 0.5, 12);
        let p = gen_factor_panel(&model, 150, 9).unwrap();
        let sigma = sample_autocov(&p, 1, AutocovMode::CenteredUnbiased).unwrap();
        let (vals, vecs) = spectrum_of_autocov(&sigma, 12).unwrap();
        let m = &sigma * sigma.transpose();
        let rec = &vecs * DMatrix::from_diagonal(&DVector::from_vec(vals)) * vecs.transpose();
        assert!((rec - &m).norm() / m.norm() < 1e-8);
    }

    #[test]
    fn ratio_estimator_examples() {
        assert_eq!(estimate_num_factors(&[100.0, 1.0, 0.9, 0.8], 3).unwrap(), 1);
        assert_eq!(estimate_num_factors(&[100.0, 90.0, 1.0, 0.9], 3).unwrap(), 2);
        // exact tie between j = 1 and j = 2 resolves to 1
        assert_eq!(estimate_num_factors(&[16.0, 4.0, 1.0, 0.9], 3).unwrap(), 1);
        assert!(estimate_num_factors(&[1.0], 1).is_err());
        assert!(estimate_num_factors(&[1.0, 0.5], 2).is_err());
        // zeros are floored, not divided
        assert_eq!(estimate_num_factors(&[5.0, 0.0, 0.0, 0.0], 3).unwrap(), 1);
    }

    #[test]
    fn default_r_max_bounds() {
        assert_eq!(default_r_max(100), 20);
        assert_eq!(default_r_max(10), 5);
        assert_eq!(default_r_max(2), 1);
    }

    #[test]
    fn spiked_eigenvalue_located_at_mu() {
        // K = 1, σ² = N = T = 400, AR(0.5), raw mode: μ = σ⁴·0.25
        let model = FactorModelSpec::one_factor_ar1(400.0, 0.5, 400);
        let mu = 400.0f64 * 400.0 * 0.25;
        let reps = 24;
        let mean: f64 = (0..reps)
            .map(|r| {
                let p = gen_factor_panel(&model, 400, 9_000 + r).unwrap();
                symmetrized_spectrum(&p, 1, 1, AutocovMode::Raw).unwrap().eigenvalues[0] / mu
            })
            .sum::<f64>()
            / reps as f64;
        // single-draw relative sd is about 0.32, so the mean of 24 has sd about 0.065
        assert!((mean - 1.0).abs() < 0.2, "mean lambda/mu = {mean}");
    }
}
