//! Factor estimation from data and standardization to canonical form.
//!
//! Loadings are the top eigenvectors of the centered symmetrized lag-τ
//! autocovariance; factors are the projections `f̂ₜ = L̂ᵀyₜ` of the demeaned
//! panel. Standardization keeps the first K̂ rotated coordinates (the padding
//! matrix `(L̂, 0)` zeroes the rest) and rescales them by the estimated noise
//! level.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result, Warning};
use crate::io::Panel;
use crate::spectra;

/// Lower bound on residual variances.
pub const RESID_VAR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct RawFactorEstimate {
    pub tau: usize,
    pub k_hat: usize,
    /// N×K̂ orthonormal loadings.
    pub loadings: DMatrix<f64>,
    /// T×K̂ factor estimates.
    pub factors: DMatrix<f64>,
    /// T×N residuals of the demeaned panel.
    pub residuals: DMatrix<f64>,
    /// The K̂ spiked eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// All eigenvalues used by the ratio estimator (R + 1 of them).
    pub ratio_eigenvalues: Vec<f64>,
    pub r_max: usize,
    pub warnings: Vec<Warning>,
}

/// Estimate loadings, factors and residuals.
///
/// `r_max` defaults to [`spectra::default_r_max`]; `k_override` fixes the
/// factor count instead of estimating it.
pub fn estimate_factor_model(
    panel: &Panel,
    tau: usize,
    r_max: Option<usize>,
    k_override: Option<usize>,
) -> Result<RawFactorEstimate> {
    let (t_len, n) = (panel.t_len(), panel.n_dim());
    if tau < 1 || tau + 3 > t_len {
        return domain(format!("lag {tau} needs T >= tau + 3, got T = {t_len}"));
    }
    let r_max = r_max.unwrap_or_else(|| spectra::default_r_max(n));
    if let Some(k) = k_override {
        if k < 1 || k > n {
            return domain(format!("factor count {k} outside 1..={n}"));
        }
    } else if r_max < 1 || r_max >= n {
        return domain(format!("r_max = {r_max} must satisfy 1 <= r_max < N = {n}"));
    }

    let yc = panel.demeaned();
    let sigma = spectra::autocov_centered(&yc, tau);
    let need = match k_override {
        Some(k) => k.max((r_max + 1).min(n)),
        None => r_max + 1,
    };
    let (values, vectors) = spectra::spectrum_of_autocov(&sigma, need)?;

    let mut warnings = Vec::new();
    let k_hat = match k_override {
        Some(k) => k,
        None => {
            let k = spectra::estimate_num_factors(&values, r_max)?;
            if k == r_max {
                warnings.push(Warning::AmbiguousFactorCount { k_hat: k, r_max });
            }
            k
        }
    };

    let loadings = vectors.columns(0, k_hat).into_owned();
    let factors = &yc * &loadings;
    let residuals = &yc - &factors * loadings.transpose();
    Ok(RawFactorEstimate {
        tau,
        k_hat,
        eigenvalues: values[..k_hat].to_vec(),
        ratio_eigenvalues: values,
        loadings,
        factors,
        residuals,
        r_max,
        warnings,
    })
}

/// Factor model rescaled to canonical form.
#[derive(Debug, Clone)]
pub struct CanonicalEstimate {
    pub tau: usize,
    pub k_hat: usize,
    /// Standard deviations of the standardized factor coordinates.
    pub sigma_hat: Vec<f64>,
    /// T×N standardized panel; columns beyond K̂ are zero.
    pub panel_std: DMatrix<f64>,
    /// T×K̂ unit-variance factors.
    pub factors_std: DMatrix<f64>,
    /// Per-column residual variances (denominator T − 1), floored.
    pub resid_var: Vec<f64>,
    /// Noise variance used to rescale the factor coordinates.
    pub noise_var: f64,
    /// N×K̂, diag(σ̂₁, …, σ̂_K̂) over zeros.
    pub loadings_canonical: DMatrix<f64>,
    pub warnings: Vec<Warning>,
}

impl CanonicalEstimate {
    pub fn t_len(&self) -> usize {
        self.panel_std.nrows()
    }

    pub fn n_dim(&self) -> usize {
        self.panel_std.ncols()
    }

    /// The nonzero block of the standardized panel (T×K̂).
    pub fn factor_block(&self) -> DMatrix<f64> {
        self.panel_std.columns(0, self.k_hat).into_owned()
    }

    /// Descending eigenvalues of the centered symmetrized lag-τ
    /// autocovariance of the standardized panel, top K̂ only. The remaining
    /// N − K̂ eigenvalues are exactly zero because the panel is zero there.
    pub fn standardized_eigenvalues(&self) -> Result<Vec<f64>> {
        block_eigenvalues(&self.factor_block(), self.tau)
    }
}

/// Eigenvalues of the centered symmetrized autocovariance of a T×K block.
pub(crate) fn block_eigenvalues(block: &DMatrix<f64>, tau: usize) -> Result<Vec<f64>> {
    let mut yc = block.clone();
    for mut col in yc.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let sigma = spectra::autocov_centered(&yc, tau);
    if sigma.nrows() == 1 {
        return Ok(vec![sigma[(0, 0)] * sigma[(0, 0)]]);
    }
    Ok(spectra::spectrum_of_autocov(&sigma, sigma.nrows())?.0)
}

fn sample_var(x: impl ExactSizeIterator<Item = f64> + Clone) -> f64 {
    let n = x.len() as f64;
    let m = x.clone().sum::<f64>() / n;
    x.map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
}

/// Rescale a raw estimate to canonical form.
///
/// The standardized panel is `ỹₜ = s⁻¹ (f̂ₜ, 0, …, 0)` where `s²` is the
/// noise variance: the per-column residual variances summed and divided by
/// the N − K̂ residual degrees of freedom. Standardized factors have unit
/// sample variance and `ỹₜ = L̃ f̃ₜ` holds exactly on the first K̂ coordinates.
pub fn standardize_canonical(raw: &RawFactorEstimate, panel: &Panel) -> Result<CanonicalEstimate> {
    let (t_len, n) = (panel.t_len(), panel.n_dim());
    if raw.residuals.shape() != (t_len, n) || raw.factors.nrows() != t_len {
        return domain("factor estimate does not match the panel");
    }
    let k = raw.k_hat;
    let mut warnings = raw.warnings.clone();

    let mut floored = 0;
    let resid_var: Vec<f64> = raw
        .residuals
        .column_iter()
        .map(|c| {
            let v = sample_var(c.iter().copied());
            if v < RESID_VAR_FLOOR {
                floored += 1;
                RESID_VAR_FLOOR
            } else {
                v
            }
        })
        .collect();
    if floored > 0 {
        warnings.push(Warning::FlooredVariance { columns: floored, floor: RESID_VAR_FLOOR });
    }
    let dof = (n - k).max(1) as f64;
    let noise_var = resid_var.iter().sum::<f64>() / dof;
    let inv_sd = noise_var.sqrt().recip();

    let mut panel_std = DMatrix::<f64>::zeros(t_len, n);
    let mut factors_std = DMatrix::<f64>::zeros(t_len, k);
    let mut sigma_hat = Vec::with_capacity(k);
    for i in 0..k {
        let col: Vec<f64> = raw.factors.column(i).iter().map(|v| v * inv_sd).collect();
        let sd = sample_var(col.iter().copied()).sqrt();
        for (t, v) in col.iter().enumerate() {
            panel_std[(t, i)] = *v;
            factors_std[(t, i)] = if sd > 0.0 { v / sd } else { 0.0 };
        }
        sigma_hat.push(sd);
    }
    let mut loadings_canonical = DMatrix::<f64>::zeros(n, k);
    for (i, s) in sigma_hat.iter().enumerate() {
        loadings_canonical[(i, i)] = *s;
    }
    Ok(CanonicalEstimate {
        tau: raw.tau,
        k_hat: k,
        sigma_hat,
        panel_std,
        factors_std,
        resid_var,
        noise_var,
        loadings_canonical,
        warnings,
    })
}

/// Steps 1 and 2 in one call.
pub fn canonical_from_panel(
    panel: &Panel,
    tau: usize,
    r_max: Option<usize>,
    k_override: Option<usize>,
) -> Result<CanonicalEstimate> {
    let raw = estimate_factor_model(panel, tau, r_max, k_override)?;
    standardize_canonical(&raw, panel)
}

/// Serializable digest of a canonical estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanonicalDigest {
    pub tau: usize,
    pub k_hat: usize,
    pub sigma_hat: Vec<f64>,
    pub noise_var: f64,
}

impl From<&CanonicalEstimate> for CanonicalDigest {
    fn from(c: &CanonicalEstimate) -> Self {
        Self { tau: c.tau, k_hat: c.k_hat, sigma_hat: c.sigma_hat.clone(), noise_var: c.noise_var }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{gen_factor_panel, FactorModelSpec, LinearProcessSpec};

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let c: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        c / (va * vb).sqrt()
    }

    #[test]
    fn noiseless_one_factor() {
        let mut model = FactorModelSpec::one_factor_ar1(25.0, 0.5, 8);
        model.noise_sd = 0.0;
        let p = gen_factor_panel(&model, 300, 1).unwrap();
        let raw = estimate_factor_model(&p, 1, None, None).unwrap();
        assert_eq!(raw.k_hat, 1);
        assert!((raw.loadings[(0, 0)].abs() - 1.0).abs() < 1e-10);
        assert!(raw.residuals.iter().all(|v| v.abs() < 1e-10));
        let canon = standardize_canonical(&raw, &p).unwrap();
        assert!(canon.warnings.iter().any(|w| matches!(w, Warning::FlooredVariance { .. })));
        assert!(canon.resid_var.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn loadings_orthonormal_and_reconstruct() {
        let model = FactorModelSpec {
            k: 2,
            sigma2: vec![60.0, 30.0],
            processes: vec![LinearProcessSpec::ar1(0.6), LinearProcessSpec::ar1(-0.5)],
            n_dim: 40,
            noise_sd: 1.0,
        };
        let p = gen_factor_panel(&model, 400, 2).unwrap();
        let raw = estimate_factor_model(&p, 1, None, Some(2)).unwrap();
        let gram = raw.loadings.transpose() * &raw.loadings;
        assert!((gram - DMatrix::<f64>::identity(2, 2)).amax() < 1e-8);
        let rebuilt = &raw.residuals + &raw.factors * raw.loadings.transpose();
        assert!((rebuilt - p.demeaned()).amax() < 1e-10);
    }

    #[test]
    fn recovers_strong_factor() {
        let model = FactorModelSpec::one_factor_ar1(100.0, 0.5, 100);
        let p = gen_factor_panel(&model, 400, 3).unwrap();
        let raw = estimate_factor_model(&p, 1, None, None).unwrap();
        assert_eq!(raw.k_hat, 1);
        // the generated factor column times σ, without noise
        let truth = crate::simulate::gen_linear_process_with(
            &model.processes[0],
            400,
            &mut crate::rng::stream(3, &[0]),
        )
        .unwrap();
        let c = corr(raw.factors.column(0).as_slice(), &truth);
        assert!(c.abs() > 0.99, "corr {c}");
    }

    #[test]
    fn three_factor_override() {
        let model = FactorModelSpec {
            k: 3,
            sigma2: vec![90.0, 60.0, 30.0],
            processes: vec![LinearProcessSpec::ar1(0.7), LinearProcessSpec::ar1(0.5), LinearProcessSpec::ar1(0.3)],
            n_dim: 60,
            noise_sd: 1.0,
        };
        let p = gen_factor_panel(&model, 600, 4).unwrap();
        let raw = estimate_factor_model(&p, 1, None, Some(3)).unwrap();
        assert_eq!(raw.factors.ncols(), 3);
        for i in 0..3 {
            for j in 0..i {
                let c = corr(raw.factors.column(i).as_slice(), raw.factors.column(j).as_slice());
                assert!(c.abs() < 0.1, "factors {i},{j}: {c}");
            }
        }
    }

    #[test]
    fn standardized_factors_have_unit_variance() {
        let model = FactorModelSpec::one_factor_ar1(100.0, 0.5, 100);
        let p = gen_factor_panel(&model, 500, 5).unwrap();
        let canon = canonical_from_panel(&p, 1, None, Some(2)).unwrap();
        for c in canon.factors_std.column_iter() {
            assert!((sample_var(c.iter().copied()) - 1.0).abs() < 1e-6);
        }
        // block-diagonal canonical loadings
        for i in 0..canon.n_dim() {
            for j in 0..canon.k_hat {
                if i != j {
                    assert_eq!(canon.loadings_canonical[(i, j)], 0.0);
                }
            }
        }
        // ỹ = L̃ f̃ on the factor block
        let rebuilt = &canon.factors_std * canon.loadings_canonical.transpose();
        assert!((rebuilt - &canon.panel_std).amax() < 1e-10);
    }

    #[test]
    fn near_identity_on_canonical_input() {
        // with N = 2 the zeroed complement carries little of the norm
        let model = FactorModelSpec::one_factor_ar1(400.0, 0.5, 2);
        let p = gen_factor_panel(&model, 10_000, 6).unwrap();
        let canon = canonical_from_panel(&p, 1, None, Some(1)).unwrap();
        let y = p.demeaned();
        let rel = (&canon.panel_std - &y).norm() / y.norm();
        assert!(rel < 0.1, "relative gap {rel}");
    }

    #[test]
    fn one_factor_strength_and_positive_eigenvalue() {
        let model = FactorModelSpec::one_factor_ar1(100.0, 0.5, 100);
        let p = gen_factor_panel(&model, 2_000, 7).unwrap();
        let canon = canonical_from_panel(&p, 1, None, None).unwrap();
        assert_eq!(canon.k_hat, 1);
        let s2 = canon.sigma_hat[0].powi(2);
        assert!((s2 / 101.0 - 1.0).abs() < 0.15, "sigma_hat^2 = {s2}");
        let lam = canon.standardized_eigenvalues().unwrap();
        assert!(lam[0].is_finite() && lam[0] > 0.0);
    }

    #[test]
    fn scale_and_sign_invariance() {
        let model = FactorModelSpec::one_factor_ar1(50.0, 0.5, 30);
        let p = gen_factor_panel(&model, 300, 8).unwrap();
        let base = estimate_factor_model(&p, 1, None, None).unwrap();

        let scaled = Panel::new(p.data() * 3.0, None).unwrap();
        let s = estimate_factor_model(&scaled, 1, None, None).unwrap();
        assert_eq!(s.k_hat, base.k_hat);
        for (a, b) in s.ratio_eigenvalues.iter().zip(&base.ratio_eigenvalues) {
            assert!((a / 81.0 - b).abs() <= 1e-9 * base.ratio_eigenvalues[0]);
        }

        let mut flipped = p.data().clone();
        flipped.column_mut(4).neg_mut();
        let f = estimate_factor_model(&Panel::new(flipped, None).unwrap(), 1, None, None).unwrap();
        for (a, b) in f.ratio_eigenvalues.iter().zip(&base.ratio_eigenvalues) {
            assert!((a - b).abs() <= 1e-9 * base.ratio_eigenvalues[0]);
        }
    }

    #[test]
    fn rejects_bad_lag() {
        let p = gen_factor_panel(&FactorModelSpec::one_factor_ar1(1.0, 0.5, 3), 4, 0).unwrap();
        assert!(estimate_factor_model(&p, 2, None, None).is_err());
    }
}
